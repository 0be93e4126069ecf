#include "airfilter/calib.hpp"

#include "airfilter/errors.hpp"
#include "airfilter/gp_filter.hpp"
#include "airfilter/stats.hpp"

namespace airfilter {

Eigen::VectorXd krige_lowcost(std::span<const Location> b_locs, const Eigen::VectorXd& y_b,
                              std::span<const Location> targets, const KernelSpec& kernel_for_y) {
  if (b_locs.empty() || static_cast<Eigen::Index>(b_locs.size()) != y_b.size())
    throw Error(ErrorCode::InsufficientData, "kriging low-cost readings needs at least one B-site");
  SpatialParams params;
  params.kernel = kernel_for_y;
  params.mu = mean(as_span(y_b));
  if (b_locs.size() >= 3) {
    MleOptions opts;
    opts.family = kernel_for_y.family;
    opts.nugget = kernel_for_y.nugget > 0.0;
    try {
      params = mle_spatial_params(y_b, b_locs, opts).params;
    } catch (const MleNotConverged& e) {
      params = e.best().params;
    }
  }
  return condition_gaussian(params.kernel, params.mu, targets, b_locs, y_b).mean;
}

std::vector<ObservationRecord> impute_collocated_pairs(const PanelDataset& panel,
                                                       const NetworkLayout& layout,
                                                       TimeWindow window,
                                                       const CovariateSchema& schema,
                                                       const KernelSpec& kernel_for_y) {
  const auto c_sites = layout.with_role(SiteRole::ReferenceOnly);
  if (c_sites.empty())
    throw Error(ErrorCode::NoReferenceData, "no reference-only sites to impute low-cost readings at");
  const auto b_sites = layout.with_role(SiteRole::LowCostOnly);

  std::vector<std::size_t> columns;
  for (const auto& c : schema.covariates()) {
    auto idx = panel.schema().index_of(c.name);
    if (!idx) throw Error(ErrorCode::Validation, "covariate '" + c.name + "' not in panel");
    columns.push_back(*idx);
  }

  std::vector<ObservationRecord> out;
  for (TimeIndex t : panel.times()) {
    if (!window.contains(t)) continue;
    std::vector<Location> locs;
    std::vector<double> ys;
    for (const Site* s : b_sites) {
      const ObservationRecord* r = panel.find(s->id, t);
      if (r && r->y) {
        locs.push_back(s->location);
        ys.push_back(*r->y);
      }
    }
    if (locs.empty()) continue;

    std::vector<const ObservationRecord*> refs;
    std::vector<Location> targets;
    for (const Site* s : c_sites) {
      const ObservationRecord* r = panel.find(s->id, t);
      if (r && r->x_ref) {
        refs.push_back(r);
        targets.push_back(s->location);
      }
    }
    if (refs.empty()) continue;

    const Eigen::VectorXd y_b =
        Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
    const Eigen::VectorXd y_hat = krige_lowcost(locs, y_b, targets, kernel_for_y);
    for (std::size_t i = 0; i < refs.size(); ++i) {
      ObservationRecord rec{refs[i]->site_id, t, y_hat[static_cast<Eigen::Index>(i)],
                            refs[i]->x_ref, {}};
      for (std::size_t c : columns) rec.covariates.push_back(refs[i]->covariates[c]);
      out.push_back(std::move(rec));
    }
  }
  return out;
}

ObsModelFit fit_obs_no_collocation(const PanelDataset& panel, const NetworkLayout& layout,
                                   TimeWindow window, const CovariateSchema& schema,
                                   const KernelSpec& kernel_for_y) {
  const auto pairs = impute_collocated_pairs(panel, layout, window, schema, kernel_for_y);
  if (pairs.empty())
    throw Error(ErrorCode::UnderdeterminedFit, "no imputed pairs in the training window");
  return fit_inverse_regression(pairs, schema, window);
}

RegCalFit fit_regcal_no_collocation(const PanelDataset& panel, const NetworkLayout& layout,
                                    TimeWindow window, const CovariateSchema& schema,
                                    const KernelSpec& kernel_for_y) {
  const auto pairs = impute_collocated_pairs(panel, layout, window, schema, kernel_for_y);
  if (pairs.empty())
    throw Error(ErrorCode::UnderdeterminedFit, "no imputed pairs in the training window");
  return fit_regression_calibration(pairs, schema, window);
}

}  // namespace airfilter
