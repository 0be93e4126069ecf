#pragma once

// Shared domain types: network geometry, observation panels and per-time
// cross-sections.

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace airfilter {

using TimeIndex = std::int64_t;

struct Location {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const Location&) const = default;
};

double distance(const Location& a, const Location& b);

/// A: collocated low-cost + reference, B: low-cost only, C: reference only,
/// D: prediction grid (no instruments).
enum class SiteRole { Collocated, LowCostOnly, ReferenceOnly, GridOnly };

char role_code(SiteRole role);
std::optional<SiteRole> role_from_code(std::string_view code);

inline bool has_reference(SiteRole r) {
  return r == SiteRole::Collocated || r == SiteRole::ReferenceOnly;
}
inline bool has_lowcost(SiteRole r) {
  return r == SiteRole::Collocated || r == SiteRole::LowCostOnly;
}

struct Site {
  std::string id;
  Location location;
  SiteRole role = SiteRole::LowCostOnly;
};

class NetworkLayout {
 public:
  NetworkLayout() = default;
  /// Throws Error(Validation) on duplicate ids, non-finite coordinates or
  /// coincident instrumented sites.
  explicit NetworkLayout(std::vector<Site> sites);

  const std::vector<Site>& sites() const { return sites_; }
  std::size_t size() const { return sites_.size(); }
  const Site* find(std::string_view id) const;
  std::size_t count(SiteRole role) const;
  std::vector<const Site*> with_role(SiteRole role) const;

 private:
  std::vector<Site> sites_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Time window [begin, end).
struct TimeWindow {
  TimeIndex begin = 0;
  TimeIndex end = 0;

  bool contains(TimeIndex t) const { return t >= begin && t < end; }
  bool empty() const { return end <= begin; }
};

enum class CovariateKind { Continuous, Indicator };

struct Covariate {
  std::string name;
  bool interacts = true;  // enters the gain (interaction with the regressor)
  CovariateKind kind = CovariateKind::Continuous;
};

/// Ordered covariate names; fixes the layout of every covariate vector.
class CovariateSchema {
 public:
  CovariateSchema() = default;
  explicit CovariateSchema(std::vector<Covariate> covariates);

  /// The four meteorological covariates used by the simulation designs.
  static CovariateSchema meteorological();

  std::size_t size() const { return covariates_.size(); }
  bool empty() const { return covariates_.empty(); }
  const std::vector<Covariate>& covariates() const { return covariates_; }
  const Covariate& operator[](std::size_t i) const { return covariates_[i]; }
  std::vector<std::string> names() const;
  std::size_t n_interacting() const;
  std::optional<std::size_t> index_of(std::string_view name) const;

  /// Throws Error(Validation) when the vector does not fit the schema.
  void validate(std::span<const double> values) const;

  bool operator==(const CovariateSchema& other) const;

 private:
  std::vector<Covariate> covariates_;
};

struct ObservationRecord {
  std::string site_id;
  TimeIndex t = 0;
  std::optional<double> y;      // low-cost reading
  std::optional<double> x_ref;  // reference reading
  std::vector<double> covariates;

  bool operator==(const ObservationRecord&) const = default;
};

class PanelDataset {
 public:
  PanelDataset() = default;
  /// Enforces (site_id, t) uniqueness and covariate dimensions.
  PanelDataset(CovariateSchema schema, std::vector<ObservationRecord> records);

  /// Checks role rules: B rows carry no reference, C rows no low-cost reading,
  /// every site is known to the layout and is not a grid site.
  void validate_against(const NetworkLayout& layout) const;

  const CovariateSchema& schema() const { return schema_; }
  const std::vector<ObservationRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  const ObservationRecord* find(std::string_view site_id, TimeIndex t) const;
  std::vector<TimeIndex> times() const;  // sorted, unique
  bool has_time(TimeIndex t) const;

  bool operator==(const PanelDataset& other) const {
    return schema_ == other.schema_ && records_ == other.records_;
  }

 private:
  CovariateSchema schema_;
  std::vector<ObservationRecord> records_;
  std::map<std::pair<std::string, TimeIndex>, std::size_t> index_;
};

/// Cross-section at one time point: reference values at A and C, low-cost
/// readings and covariates at B.
struct TimeSlice {
  TimeIndex t = 0;

  std::vector<std::string> ref_ids;
  std::vector<SiteRole> ref_roles;
  std::vector<Location> ref_locs;
  Eigen::VectorXd x_ref;

  std::vector<std::string> b_ids;
  std::vector<Location> b_locs;
  Eigen::VectorXd y_b;
  Eigen::MatrixXd z_b;  // |B| x schema.size()

  std::size_t n_ref() const { return ref_ids.size(); }
  std::size_t n_b() const { return b_ids.size(); }
};

/// Throws Error(Validation) when t is absent from the panel and
/// Error(NoReferenceData) when no A/C site has a reference value at t.
TimeSlice build_time_slice(const PanelDataset& panel, const NetworkLayout& layout, TimeIndex t);

std::vector<Location> locations_of(std::span<const Site* const> sites);

}  // namespace airfilter
