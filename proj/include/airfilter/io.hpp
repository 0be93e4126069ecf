#pragma once

// File formats: network and observation CSVs, calibrated and grid outputs,
// and fitted models as JSON.

#include "airfilter/calib.hpp"
#include "airfilter/covariance.hpp"
#include "airfilter/geo.hpp"
#include "airfilter/gp_filter.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace airfilter {

/// Header `site_id,x,y,role`, role one of A, B, C, D.
NetworkLayout read_network_csv(const std::string& path);
NetworkLayout parse_network_csv(std::istream& in, const std::string& source);
void write_network_csv(std::ostream& out, const NetworkLayout& layout);

/// Header `site_id,t,y,x_ref,<schema names>`; an empty cell is a missing
/// value. With a layout, role rules are checked row by row.
PanelDataset read_observations_csv(const std::string& path, const CovariateSchema& schema,
                                   const NetworkLayout* layout = nullptr);
PanelDataset parse_observations_csv(std::istream& in, const std::string& source,
                                    const CovariateSchema& schema,
                                    const NetworkLayout* layout = nullptr);
void write_observations_csv(std::ostream& out, const PanelDataset& panel);

/// Schema from the covariate columns of an observations file. Columns holding
/// only 0 and 1 are indicators; every covariate interacts with the regressor.
CovariateSchema infer_observation_schema(const std::string& path);

/// Header `x,y`.
std::vector<Location> read_grid_csv(const std::string& path);

/// Header `site_id,t,x`.
std::map<std::pair<std::string, TimeIndex>, double> read_truth_csv(const std::string& path);
void write_truth_csv(std::ostream& out,
                     const std::map<std::pair<std::string, TimeIndex>, double>& truth);

struct CalibratedRow {
  std::string site_id;
  TimeIndex t = 0;
  double xhat = 0.0;
  double sd = 0.0;  // NaN (empty cell) when the method has no interval
  double lower = 0.0;
  double upper = 0.0;
  std::string flag;  // ok, reference, unstable

  bool operator==(const CalibratedRow&) const = default;
};

/// site_id,t,xhat,sd,lower,upper,flag
void write_calibrated_csv(std::ostream& out, const std::vector<CalibratedRow>& rows);
std::vector<CalibratedRow> read_calibrated_csv(const std::string& path);
std::vector<CalibratedRow> parse_calibrated_csv(std::istream& in, const std::string& source);

struct GridRow {
  Location location;
  TimeIndex t = 0;
  double mean = 0.0;
  double sd = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

/// x,y,t,mean,sd,lower,upper
void write_grid_csv(std::ostream& out, const std::vector<GridRow>& rows);

void write_variogram_csv(std::ostream& out, TimeIndex t, const std::vector<VariogramBin>& bins,
                         bool header);

// ---------------------------------------------------------------------------
// Model files.

inline constexpr int kModelFormatMajor = 1;
inline constexpr const char* kModelFormatVersion = "1.0";

using CalibrationModel = std::variant<ObsModelFit, RegCalFit, ParetoFit>;

/// "observation", "regcal" or "pareto".
const char* model_type_name(const CalibrationModel& model);

void write_model_json(std::ostream& out, const CalibrationModel& model);
/// Throws UnsupportedFormat for an unknown major version or model type and
/// Parse for malformed content.
CalibrationModel parse_model_json(std::istream& in, const std::string& source);
CalibrationModel read_model_json(const std::string& path);

}  // namespace airfilter
