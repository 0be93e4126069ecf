#include "airfilter/io.hpp"

#include "airfilter/errors.hpp"
#include "airfilter/format.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

namespace airfilter {

namespace {

using json = nlohmann::ordered_json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, 0, "cannot open file");
  return in;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

/// Line reader that strips CR, a leading BOM and skips blank lines while
/// tracking the physical line number.
class CsvReader {
 public:
  CsvReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  bool next(std::vector<std::string>& fields) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line_no_ == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
      if (trim(line).empty()) continue;
      fields.clear();
      std::size_t start = 0;
      for (;;) {
        const auto comma = line.find(',', start);
        const auto end = comma == std::string::npos ? line.size() : comma;
        fields.emplace_back(trim(std::string_view(line).substr(start, end - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(source_, line_no_, what); }

  double number(const std::string& field, const char* column) const {
    double v = 0.0;
    const char* first = field.data();
    const char* last = first + field.size();
    if (!field.empty() && *first == '+') ++first;
    const auto res = std::from_chars(first, last, v);
    if (field.empty() || res.ec != std::errc() || res.ptr != last || !std::isfinite(v))
      fail(std::string("non-numeric ") + column + " '" + field + "'");
    return v;
  }

  std::optional<double> optional_number(const std::string& field, const char* column) const {
    if (field.empty()) return std::nullopt;
    return number(field, column);
  }

  TimeIndex integer(const std::string& field, const char* column) const {
    TimeIndex v = 0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (field.empty() || res.ec != std::errc() || res.ptr != field.data() + field.size())
      fail(std::string("non-integer ") + column + " '" + field + "'");
    return v;
  }

  void expect_header(const std::vector<std::string>& expected) {
    std::vector<std::string> fields;
    if (!next(fields)) fail("empty file");
    if (fields != expected) {
      std::string want;
      for (const auto& f : expected) want += (want.empty() ? "" : ",") + f;
      fail("expected header '" + want + "'");
    }
  }

  void expect_width(const std::vector<std::string>& fields, std::size_t n) const {
    if (fields.size() != n)
      fail("expected " + std::to_string(n) + " fields, found " + std::to_string(fields.size()));
  }

  std::size_t line() const { return line_no_; }
  const std::string& source() const { return source_; }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t line_no_ = 0;
};

std::string cell(double v) { return std::isfinite(v) ? format_double(v) : std::string(); }
std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

// Model JSON ------------------------------------------------------------------

json schema_to_json(const CovariateSchema& schema) {
  json out = json::array();
  for (const auto& c : schema.covariates())
    out.push_back({{"name", c.name},
                   {"kind", c.kind == CovariateKind::Indicator ? "indicator" : "continuous"},
                   {"interacts", c.interacts}});
  return out;
}

CovariateSchema schema_from_json(const json& j) {
  std::vector<Covariate> covs;
  for (const auto& c : j) {
    Covariate cov;
    cov.name = c.at("name").get<std::string>();
    const auto kind = c.value("kind", std::string("continuous"));
    if (kind == "indicator")
      cov.kind = CovariateKind::Indicator;
    else if (kind != "continuous")
      throw Error(ErrorCode::Parse, "unknown covariate kind '" + kind + "'");
    cov.interacts = c.value("interacts", true);
    covs.push_back(std::move(cov));
  }
  return CovariateSchema(std::move(covs));
}

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

json linear_to_json(const LinearCalibration& fit) {
  json cov = json::array();
  for (Eigen::Index i = 0; i < fit.coef_cov.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < fit.coef_cov.cols(); ++j) row.push_back(fit.coef_cov(i, j));
    cov.push_back(std::move(row));
  }
  return {{"schema", schema_to_json(fit.schema)},
          {"coefficient_names", fit.coefficient_names()},
          {"coefficients", vector_to_json(fit.coefficients())},
          {"tau2", fit.tau2},
          {"n_train", fit.n_train},
          {"window", {fit.window.begin, fit.window.end}},
          {"coef_cov", std::move(cov)}};
}

template <class Fit>
Fit linear_from_json(const json& j) {
  Fit fit;
  fit.schema = schema_from_json(j.at("schema"));
  if (j.at("coefficient_names").get<std::vector<std::string>>() != fit.coefficient_names())
    throw Error(ErrorCode::Parse, "coefficient names do not match the schema");
  fit.set_coefficients(vector_from_json(j.at("coefficients")));
  fit.tau2 = j.at("tau2").get<double>();
  fit.n_train = j.at("n_train").get<std::size_t>();
  const auto& w = j.at("window");
  fit.window = {w.at(0).get<TimeIndex>(), w.at(1).get<TimeIndex>()};
  const auto& cov = j.at("coef_cov");
  const auto p = static_cast<Eigen::Index>(cov.size());
  fit.coef_cov.resize(p, p);
  for (Eigen::Index r = 0; r < p; ++r) {
    const auto& row = cov[static_cast<std::size_t>(r)];
    if (static_cast<Eigen::Index>(row.size()) != p)
      throw Error(ErrorCode::Parse, "coef_cov must be square");
    for (Eigen::Index c = 0; c < p; ++c) fit.coef_cov(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  if (p != 0 && p != fit.coefficients().size())
    throw Error(ErrorCode::Parse, "coef_cov does not match the coefficients");
  return fit;
}

json pareto_to_json(const ParetoFit& fit) {
  return {{"schema", schema_to_json(fit.schema)},
          {"gamma", vector_to_json(fit.gamma)},
          {"threshold", fit.threshold},
          {"n_exceedances", fit.n_exceedances},
          {"loglik", fit.loglik}};
}

ParetoFit pareto_from_json(const json& j) {
  ParetoFit fit;
  fit.schema = schema_from_json(j.at("schema"));
  fit.gamma = vector_from_json(j.at("gamma"));
  const auto expected = 3 + 2 * static_cast<Eigen::Index>(fit.schema.size());
  if (fit.gamma.size() != expected)
    throw Error(ErrorCode::Parse, "gamma has " + std::to_string(fit.gamma.size()) +
                                      " entries, expected " + std::to_string(expected));
  fit.threshold = j.at("threshold").get<double>();
  fit.n_exceedances = j.at("n_exceedances").get<std::size_t>();
  fit.loglik = j.value("loglik", 0.0);
  return fit;
}

}  // namespace

// ---------------------------------------------------------------------------
// Network.

NetworkLayout parse_network_csv(std::istream& in, const std::string& source) {
  CsvReader csv(in, source);
  std::vector<std::string> f;
  if (!csv.next(f)) csv.fail("no sites");
  if (f != std::vector<std::string>{"site_id", "x", "y", "role"})
    csv.fail("expected header 'site_id,x,y,role'");
  std::vector<Site> sites;
  std::set<std::string> seen;
  while (csv.next(f)) {
    csv.expect_width(f, 4);
    if (f[0].empty()) csv.fail("empty site_id");
    if (!seen.insert(f[0]).second) csv.fail("duplicate site_id '" + f[0] + "'");
    const auto role = role_from_code(f[3]);
    if (!role) csv.fail("unknown role '" + f[3] + "' for site '" + f[0] + "'");
    sites.push_back({f[0], {csv.number(f[1], "x"), csv.number(f[2], "y")}, *role});
  }
  if (sites.empty()) throw ParseError(source, 0, "no sites");
  return NetworkLayout(std::move(sites));
}

NetworkLayout read_network_csv(const std::string& path) {
  auto in = open_input(path);
  return parse_network_csv(in, path);
}

void write_network_csv(std::ostream& out, const NetworkLayout& layout) {
  out << "site_id,x,y,role\n";
  for (const auto& s : layout.sites())
    out << s.id << ',' << format_double(s.location.x) << ',' << format_double(s.location.y) << ','
        << role_code(s.role) << '\n';
}

// ---------------------------------------------------------------------------
// Observations.

PanelDataset parse_observations_csv(std::istream& in, const std::string& source,
                                    const CovariateSchema& schema, const NetworkLayout* layout) {
  CsvReader csv(in, source);
  std::vector<std::string> header{"site_id", "t", "y", "x_ref"};
  for (const auto& name : schema.names()) header.push_back(name);
  csv.expect_header(header);

  std::vector<ObservationRecord> records;
  std::vector<std::string> f;
  while (csv.next(f)) {
    csv.expect_width(f, header.size());
    ObservationRecord r;
    r.site_id = f[0];
    if (r.site_id.empty()) csv.fail("empty site_id");
    r.t = csv.integer(f[1], "t");
    r.y = csv.optional_number(f[2], "y");
    r.x_ref = csv.optional_number(f[3], "x_ref");
    for (std::size_t j = 0; j < schema.size(); ++j)
      r.covariates.push_back(csv.number(f[4 + j], schema[j].name.c_str()));
    if (layout) {
      const Site* site = layout->find(r.site_id);
      if (!site) csv.fail("site '" + r.site_id + "' is not in the network");
      auto bad = [&](const std::string& what) {
        throw Error(ErrorCode::Validation, source + ":" + std::to_string(csv.line()) + ": site '" +
                                               r.site_id + "' " + what);
      };
      if (site->role == SiteRole::GridOnly) bad("is a grid site and cannot carry observations");
      if (r.x_ref && !has_reference(site->role)) bad("has no reference instrument but x_ref is set");
      if (r.y && !has_lowcost(site->role)) bad("has no low-cost sensor but y is set");
    }
    records.push_back(std::move(r));
  }
  try {
    return PanelDataset(schema, std::move(records));
  } catch (const Error& e) {
    throw Error(e.code(), source + ": " + e.what());
  }
}

PanelDataset read_observations_csv(const std::string& path, const CovariateSchema& schema,
                                   const NetworkLayout* layout) {
  auto in = open_input(path);
  return parse_observations_csv(in, path, schema, layout);
}

void write_observations_csv(std::ostream& out, const PanelDataset& panel) {
  out << "site_id,t,y,x_ref";
  for (const auto& name : panel.schema().names()) out << ',' << name;
  out << '\n';
  for (const auto& r : panel.records()) {
    out << r.site_id << ',' << r.t << ',' << cell(r.y) << ',' << cell(r.x_ref);
    for (double z : r.covariates) out << ',' << format_double(z);
    out << '\n';
  }
}

CovariateSchema infer_observation_schema(const std::string& path) {
  auto in = open_input(path);
  CsvReader csv(in, path);
  std::vector<std::string> f;
  if (!csv.next(f)) csv.fail("empty file");
  if (f.size() < 4 || f[0] != "site_id" || f[1] != "t" || f[2] != "y" || f[3] != "x_ref")
    csv.fail("expected header 'site_id,t,y,x_ref,<covariates>'");
  std::vector<std::string> names(f.begin() + 4, f.end());
  std::vector<bool> binary(names.size(), true);
  while (csv.next(f)) {
    csv.expect_width(f, names.size() + 4);
    for (std::size_t j = 0; j < names.size(); ++j) {
      const double v = csv.number(f[4 + j], names[j].c_str());
      if (v != 0.0 && v != 1.0) binary[j] = false;
    }
  }
  std::vector<Covariate> covs;
  for (std::size_t j = 0; j < names.size(); ++j)
    covs.push_back({names[j], true, binary[j] ? CovariateKind::Indicator : CovariateKind::Continuous});
  return CovariateSchema(std::move(covs));
}

// ---------------------------------------------------------------------------
// Grid, truth and outputs.

std::vector<Location> read_grid_csv(const std::string& path) {
  auto in = open_input(path);
  CsvReader csv(in, path);
  csv.expect_header({"x", "y"});
  std::vector<Location> out;
  std::vector<std::string> f;
  while (csv.next(f)) {
    csv.expect_width(f, 2);
    out.push_back({csv.number(f[0], "x"), csv.number(f[1], "y")});
  }
  if (out.empty()) throw ParseError(path, 0, "no grid points");
  return out;
}

std::map<std::pair<std::string, TimeIndex>, double> read_truth_csv(const std::string& path) {
  auto in = open_input(path);
  CsvReader csv(in, path);
  csv.expect_header({"site_id", "t", "x"});
  std::map<std::pair<std::string, TimeIndex>, double> out;
  std::vector<std::string> f;
  while (csv.next(f)) {
    csv.expect_width(f, 3);
    const auto key = std::make_pair(f[0], csv.integer(f[1], "t"));
    if (!out.emplace(key, csv.number(f[2], "x")).second)
      csv.fail("duplicate (site_id, t) '" + f[0] + "', " + f[1]);
  }
  return out;
}

void write_truth_csv(std::ostream& out,
                     const std::map<std::pair<std::string, TimeIndex>, double>& truth) {
  out << "site_id,t,x\n";
  for (const auto& [key, x] : truth) out << key.first << ',' << key.second << ',' << format_double(x) << '\n';
}

void write_calibrated_csv(std::ostream& out, const std::vector<CalibratedRow>& rows) {
  out << "site_id,t,xhat,sd,lower,upper,flag\n";
  for (const auto& r : rows)
    out << r.site_id << ',' << r.t << ',' << format_double(r.xhat) << ',' << cell(r.sd) << ','
        << cell(r.lower) << ',' << cell(r.upper) << ',' << r.flag << '\n';
}

std::vector<CalibratedRow> parse_calibrated_csv(std::istream& in, const std::string& source) {
  CsvReader csv(in, source);
  csv.expect_header({"site_id", "t", "xhat", "sd", "lower", "upper", "flag"});
  std::vector<CalibratedRow> out;
  std::vector<std::string> f;
  while (csv.next(f)) {
    csv.expect_width(f, 7);
    CalibratedRow r;
    r.site_id = f[0];
    r.t = csv.integer(f[1], "t");
    r.xhat = csv.number(f[2], "xhat");
    r.sd = csv.optional_number(f[3], "sd").value_or(kNaN);
    r.lower = csv.optional_number(f[4], "lower").value_or(kNaN);
    r.upper = csv.optional_number(f[5], "upper").value_or(kNaN);
    r.flag = f[6];
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<CalibratedRow> read_calibrated_csv(const std::string& path) {
  auto in = open_input(path);
  return parse_calibrated_csv(in, path);
}

void write_grid_csv(std::ostream& out, const std::vector<GridRow>& rows) {
  out << "x,y,t,mean,sd,lower,upper\n";
  for (const auto& r : rows)
    out << format_double(r.location.x) << ',' << format_double(r.location.y) << ',' << r.t << ','
        << format_double(r.mean) << ',' << cell(r.sd) << ',' << cell(r.lower) << ','
        << cell(r.upper) << '\n';
}

void write_variogram_csv(std::ostream& out, TimeIndex t, const std::vector<VariogramBin>& bins,
                         bool header) {
  if (header) out << "t,lag,lower,upper,semivariance,pairs\n";
  for (const auto& b : bins)
    out << t << ',' << format_double(b.lag) << ',' << format_double(b.lower) << ','
        << format_double(b.upper) << ',' << cell(b.semivariance) << ',' << b.pairs << '\n';
}

// ---------------------------------------------------------------------------
// Models.

const char* model_type_name(const CalibrationModel& model) {
  switch (model.index()) {
    case 0: return "observation";
    case 1: return "regcal";
    default: return "pareto";
  }
}

void write_model_json(std::ostream& out, const CalibrationModel& model) {
  json j{{"format_version", kModelFormatVersion}, {"model_type", model_type_name(model)}};
  j.update(std::visit(
      [](const auto& fit) -> json {
        using T = std::decay_t<decltype(fit)>;
        if constexpr (std::is_same_v<T, ParetoFit>)
          return pareto_to_json(fit);
        else
          return linear_to_json(fit);
      },
      model));
  out << j.dump(2) << '\n';
}

CalibrationModel parse_model_json(std::istream& in, const std::string& source) {
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(source, 0, std::string("malformed JSON: ") + e.what());
  }
  try {
    const auto version = j.at("format_version").get<std::string>();
    int major = 0;
    const auto res = std::from_chars(version.data(), version.data() + version.size(), major);
    if (res.ec != std::errc() || major != kModelFormatMajor)
      throw Error(ErrorCode::UnsupportedFormat,
                  source + ": unsupported model format_version '" + version + "'");
    const auto type = j.at("model_type").get<std::string>();
    if (type == "observation") return linear_from_json<ObsModelFit>(j);
    if (type == "regcal") return linear_from_json<RegCalFit>(j);
    if (type == "pareto") return pareto_from_json(j);
    throw Error(ErrorCode::UnsupportedFormat, source + ": unknown model_type '" + type + "'");
  } catch (const json::exception& e) {
    throw ParseError(source, 0, std::string("invalid model: ") + e.what());
  }
}

CalibrationModel read_model_json(const std::string& path) {
  auto in = open_input(path);
  return parse_model_json(in, path);
}

}  // namespace airfilter
