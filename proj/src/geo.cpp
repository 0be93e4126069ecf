#include "airfilter/geo.hpp"

#include "airfilter/errors.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace airfilter {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NoReferenceData: return "NoReferenceData";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::UnderdeterminedFit: return "UnderdeterminedFit";
    case ErrorCode::RankDeficientDesign: return "RankDeficientDesign";
    case ErrorCode::InsufficientExceedances: return "InsufficientExceedances";
    case ErrorCode::FitDiverged: return "FitDiverged";
    case ErrorCode::MleNotConverged: return "MleNotConverged";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::Parse: return "ParseError";
    case ErrorCode::Validation: return "ValidationError";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
  }
  return "Error";
}

ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::SingularCovariance:
    case ErrorCode::RankDeficientDesign:
    case ErrorCode::FitDiverged:
    case ErrorCode::MleNotConverged:
      return ErrorCategory::Numerical;
    default:
      return ErrorCategory::Data;
  }
}

double distance(const Location& a, const Location& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

char role_code(SiteRole role) {
  switch (role) {
    case SiteRole::Collocated: return 'A';
    case SiteRole::LowCostOnly: return 'B';
    case SiteRole::ReferenceOnly: return 'C';
    case SiteRole::GridOnly: return 'D';
  }
  return '?';
}

std::optional<SiteRole> role_from_code(std::string_view code) {
  if (code == "A") return SiteRole::Collocated;
  if (code == "B") return SiteRole::LowCostOnly;
  if (code == "C") return SiteRole::ReferenceOnly;
  if (code == "D") return SiteRole::GridOnly;
  return std::nullopt;
}

NetworkLayout::NetworkLayout(std::vector<Site> sites) : sites_(std::move(sites)) {
  std::set<std::pair<double, double>> instrumented;
  for (std::size_t i = 0; i < sites_.size(); ++i) {
    const Site& s = sites_[i];
    if (s.id.empty()) throw Error(ErrorCode::Validation, "empty site id");
    if (!std::isfinite(s.location.x) || !std::isfinite(s.location.y))
      throw Error(ErrorCode::Validation, "non-finite coordinate for site '" + s.id + "'");
    if (!index_.emplace(s.id, i).second)
      throw Error(ErrorCode::Validation, "duplicate site id '" + s.id + "'");
    if (s.role != SiteRole::GridOnly &&
        !instrumented.emplace(s.location.x, s.location.y).second)
      throw Error(ErrorCode::Validation,
                  "site '" + s.id + "' coincides with another instrumented site");
  }
}

const Site* NetworkLayout::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &sites_[it->second];
}

std::size_t NetworkLayout::count(SiteRole role) const {
  return static_cast<std::size_t>(
      std::count_if(sites_.begin(), sites_.end(), [&](const Site& s) { return s.role == role; }));
}

std::vector<const Site*> NetworkLayout::with_role(SiteRole role) const {
  std::vector<const Site*> out;
  for (const Site& s : sites_)
    if (s.role == role) out.push_back(&s);
  return out;
}

CovariateSchema::CovariateSchema(std::vector<Covariate> covariates)
    : covariates_(std::move(covariates)) {
  std::set<std::string> seen;
  for (const auto& c : covariates_) {
    if (c.name.empty()) throw Error(ErrorCode::Validation, "empty covariate name");
    if (!seen.insert(c.name).second)
      throw Error(ErrorCode::Validation, "duplicate covariate '" + c.name + "'");
  }
}

CovariateSchema CovariateSchema::meteorological() {
  return CovariateSchema({{"rh", true, CovariateKind::Continuous},
                          {"temp", true, CovariateKind::Continuous},
                          {"weekend", true, CovariateKind::Indicator},
                          {"daylight", true, CovariateKind::Indicator}});
}

std::vector<std::string> CovariateSchema::names() const {
  std::vector<std::string> out;
  out.reserve(covariates_.size());
  for (const auto& c : covariates_) out.push_back(c.name);
  return out;
}

std::size_t CovariateSchema::n_interacting() const {
  return static_cast<std::size_t>(std::count_if(
      covariates_.begin(), covariates_.end(), [](const Covariate& c) { return c.interacts; }));
}

std::optional<std::size_t> CovariateSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < covariates_.size(); ++i)
    if (covariates_[i].name == name) return i;
  return std::nullopt;
}

void CovariateSchema::validate(std::span<const double> values) const {
  if (values.size() != covariates_.size())
    throw Error(ErrorCode::Validation, "covariate vector has " + std::to_string(values.size()) +
                                           " entries, schema expects " +
                                           std::to_string(covariates_.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]))
      throw Error(ErrorCode::Validation, "non-finite covariate '" + covariates_[i].name + "'");
    if (covariates_[i].kind == CovariateKind::Indicator && values[i] != 0.0 && values[i] != 1.0)
      throw Error(ErrorCode::Validation,
                  "indicator covariate '" + covariates_[i].name + "' must be 0 or 1");
  }
}

bool CovariateSchema::operator==(const CovariateSchema& other) const {
  if (covariates_.size() != other.covariates_.size()) return false;
  for (std::size_t i = 0; i < covariates_.size(); ++i) {
    const auto& a = covariates_[i];
    const auto& b = other.covariates_[i];
    if (a.name != b.name || a.interacts != b.interacts || a.kind != b.kind) return false;
  }
  return true;
}

PanelDataset::PanelDataset(CovariateSchema schema, std::vector<ObservationRecord> records)
    : schema_(std::move(schema)), records_(std::move(records)) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    schema_.validate(r.covariates);
    if ((r.y && !std::isfinite(*r.y)) || (r.x_ref && !std::isfinite(*r.x_ref)))
      throw Error(ErrorCode::Validation, "non-finite reading for site '" + r.site_id + "'");
    if (!index_.emplace(std::make_pair(r.site_id, r.t), i).second)
      throw Error(ErrorCode::Validation, "duplicate record for site '" + r.site_id +
                                             "' at t=" + std::to_string(r.t));
  }
}

void PanelDataset::validate_against(const NetworkLayout& layout) const {
  for (const auto& r : records_) {
    const Site* site = layout.find(r.site_id);
    if (!site) throw Error(ErrorCode::Validation, "unknown site '" + r.site_id + "'");
    switch (site->role) {
      case SiteRole::LowCostOnly:
        if (r.x_ref)
          throw Error(ErrorCode::Validation,
                      "low-cost-only site '" + r.site_id + "' carries a reference value");
        break;
      case SiteRole::ReferenceOnly:
        if (r.y)
          throw Error(ErrorCode::Validation,
                      "reference-only site '" + r.site_id + "' carries a low-cost value");
        break;
      case SiteRole::GridOnly:
        if (r.y || r.x_ref)
          throw Error(ErrorCode::Validation,
                      "grid site '" + r.site_id + "' carries measurements");
        break;
      case SiteRole::Collocated:
        break;
    }
  }
}

const ObservationRecord* PanelDataset::find(std::string_view site_id, TimeIndex t) const {
  auto it = index_.find({std::string(site_id), t});
  return it == index_.end() ? nullptr : &records_[it->second];
}

std::vector<TimeIndex> PanelDataset::times() const {
  std::set<TimeIndex> ts;
  for (const auto& r : records_) ts.insert(r.t);
  return {ts.begin(), ts.end()};
}

bool PanelDataset::has_time(TimeIndex t) const {
  return std::any_of(records_.begin(), records_.end(),
                     [t](const ObservationRecord& r) { return r.t == t; });
}

TimeSlice build_time_slice(const PanelDataset& panel, const NetworkLayout& layout, TimeIndex t) {
  if (!panel.has_time(t))
    throw Error(ErrorCode::Validation, "time " + std::to_string(t) + " not present in panel");

  TimeSlice slice;
  slice.t = t;
  std::vector<double> xs, ys;
  std::vector<const std::vector<double>*> zs;
  for (const Site& site : layout.sites()) {
    const ObservationRecord* rec = panel.find(site.id, t);
    if (!rec) continue;
    if (has_reference(site.role) && rec->x_ref) {
      slice.ref_ids.push_back(site.id);
      slice.ref_roles.push_back(site.role);
      slice.ref_locs.push_back(site.location);
      xs.push_back(*rec->x_ref);
    } else if (site.role == SiteRole::LowCostOnly && rec->y) {
      slice.b_ids.push_back(site.id);
      slice.b_locs.push_back(site.location);
      ys.push_back(*rec->y);
      zs.push_back(&rec->covariates);
    }
  }
  if (xs.empty())
    throw Error(ErrorCode::NoReferenceData,
                "no reference value at any A/C site at t=" + std::to_string(t));

  slice.x_ref = Eigen::Map<const Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
  slice.y_b = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
  const auto p = static_cast<Eigen::Index>(panel.schema().size());
  slice.z_b.resize(static_cast<Eigen::Index>(zs.size()), p);
  for (std::size_t i = 0; i < zs.size(); ++i)
    for (Eigen::Index j = 0; j < p; ++j)
      slice.z_b(static_cast<Eigen::Index>(i), j) = (*zs[i])[static_cast<std::size_t>(j)];
  return slice;
}

std::vector<Location> locations_of(std::span<const Site* const> sites) {
  std::vector<Location> out;
  out.reserve(sites.size());
  for (const Site* s : sites) out.push_back(s->location);
  return out;
}

}  // namespace airfilter
