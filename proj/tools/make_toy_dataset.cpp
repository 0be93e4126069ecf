// Writes the bundled toy dataset: one collocated site, eight low-cost sites,
// one reference-only site and 30 time points, plus a prediction grid and the
// true values at the low-cost sites.

#include "airfilter/io.hpp"
#include "airfilter/sim_bench.hpp"
#include "airfilter/stats.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <string>

using namespace airfilter;

int main(int argc, char** argv) {
  const std::filesystem::path dir = argc > 1 ? argv[1] : "data/toy";
  std::filesystem::create_directories(dir);
  const std::uint64_t seed = 2021;
  const std::size_t n_times = 30;

  std::vector<Site> sites{{"A1", {0.45, 0.55}, SiteRole::Collocated}};
  Rng rng = make_rng(seed, {1});
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int j = 1; j <= 8; ++j) sites.push_back({"B" + std::to_string(j), {u(rng), u(rng)}, SiteRole::LowCostOnly});
  sites.push_back({"C1", {0.8, 0.2}, SiteRole::ReferenceOnly});
  const NetworkLayout layout(sites);

  std::vector<Location> locs;
  for (const auto& s : sites) locs.push_back(s.location);
  const KernelSpec kernel{KernelFamily::Exponential, 15.0, 3.0 / std::sqrt(2.0), 0.0};
  const Eigen::MatrixXd x = simulate_gp_truth(locs, kernel, 7.0, n_times, seed);
  const ObsCoefficients coef;

  std::vector<ObservationRecord> records;
  std::map<std::pair<std::string, TimeIndex>, double> truth;
  for (std::size_t j = 0; j < sites.size(); ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    const Eigen::MatrixXd z = simulate_covariates(n_times, seed + 100 + j);
    const Eigen::VectorXd y = simulate_lowcost(x.col(col), z, coef, 2.0, seed + 200 + j);
    for (std::size_t t = 0; t < n_times; ++t) {
      const auto row = static_cast<Eigen::Index>(t);
      ObservationRecord r{sites[j].id, static_cast<TimeIndex>(t), std::nullopt, std::nullopt,
                          {z(row, 0), z(row, 1), z(row, 2), z(row, 3)}};
      if (has_lowcost(sites[j].role)) r.y = y[row];
      if (has_reference(sites[j].role)) r.x_ref = x(row, col);
      if (sites[j].role == SiteRole::LowCostOnly) truth[{sites[j].id, r.t}] = x(row, col);
      records.push_back(std::move(r));
    }
  }
  const PanelDataset panel(CovariateSchema::meteorological(), std::move(records));

  std::ofstream net(dir / "network.csv"), obs(dir / "observations.csv"), tru(dir / "truth.csv"),
      grid(dir / "grid.csv");
  write_network_csv(net, layout);
  write_observations_csv(obs, panel);
  write_truth_csv(tru, truth);
  grid << "x,y\n";
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) grid << 0.1 + 0.2 * i << ',' << 0.1 + 0.2 * j << '\n';
  std::cout << "wrote " << dir.string() << '\n';
}
