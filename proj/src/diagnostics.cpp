#include "latlink/diagnostics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <Eigen/Dense>

#include "latlink/rng.hpp"
#include "latlink/util.hpp"

namespace latlink::diagnostics {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

align::AlignmentMap fit_by_method(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                  const AlignmentOptions& opts) {
  if (opts.method == align::FitMethod::procrustes) return align::fit_procrustes(x, y);
  if (opts.lambda == 0.0 && opts.auto_lambda) return align::fit_auto(x, y);
  return align::fit_ridge(x, y, opts.lambda);
}

nlohmann::json finite_or_inf(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

// Scalar metrics of one sweep point, in a fixed presentation order.
std::vector<std::pair<std::string, double>> point_scalars(const SweepPoint& p) {
  std::vector<std::pair<std::string, double>> out;
  out.emplace_back("mse", p.report.mse);
  out.emplace_back("r2", p.report.r2);
  out.emplace_back("cka", p.report.cka);
  out.emplace_back("dsc", p.report.dsc);
  for (const auto& [k, v] : p.report.nos_at_k) {
    out.emplace_back("nos@" + std::to_string(k), v);
  }
  out.emplace_back("kappa", p.spectrum.condition_number);
  out.emplace_back("deviation", p.spectrum.orthogonality_deviation);
  out.emplace_back("effective_rank", static_cast<double>(p.spectrum.effective_rank));
  return out;
}

}  // namespace

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::pair_noise: return "pair_noise";
    case SweepAxis::pair_budget: return "pair_budget";
    case SweepAxis::seed: return "seed";
  }
  return "?";
}

SpectrumDiagnostics spectrum(const align::AlignmentMap& map) {
  if (map.matrix.size() == 0) throw std::invalid_argument("map is not fitted");
  SpectrumDiagnostics s;
  if (map.singular_values.size() > 0) {
    s.singular_values = map.singular_values;
  } else {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(map.matrix);
    s.singular_values = svd.singularValues();
  }
  s.sigma_max = s.singular_values(0);
  s.sigma_min = s.singular_values(s.singular_values.size() - 1);
  const double cutoff = align::rank_cutoff(s.sigma_max, map.rows(), map.cols());
  s.condition_number =
      (s.sigma_min > 0.0 && s.sigma_min >= cutoff) ? s.sigma_max / s.sigma_min : kInf;
  int rank = 0;
  for (Eigen::Index i = 0; i < s.singular_values.size(); ++i) {
    if (s.singular_values(i) > 0.0 && s.singular_values(i) >= cutoff) ++rank;
  }
  s.effective_rank = rank;

  const Eigen::Index d1 = map.cols();
  const Eigen::MatrixXd gram = map.matrix.transpose() * map.matrix;
  s.orthogonality_deviation =
      (gram - Eigen::MatrixXd::Identity(d1, d1)).norm() / std::sqrt(static_cast<double>(d1));
  return s;
}

AlignmentRun run_alignment(const latents::PairedDataset& data, const AlignmentOptions& opts) {
  const std::vector<std::string> train_ids = data.ids_in(latents::Split::train);

  AlignmentRun run;
  if (opts.standardize) {
    run.alignment.stats1 = latents::fit_standardizer(data.view1, train_ids);
    run.alignment.stats2 = latents::fit_standardizer(data.view2, train_ids);
  }
  const latents::LatentSet v1 =
      opts.standardize ? latents::apply_standardizer(data.view1, *run.alignment.stats1)
                       : data.view1;
  const latents::LatentSet v2 =
      opts.standardize ? latents::apply_standardizer(data.view2, *run.alignment.stats2)
                       : data.view2;

  const Eigen::MatrixXd x_tr = latents::columns_for_ids(v1, train_ids);
  const Eigen::MatrixXd y_tr = latents::columns_for_ids(v2, train_ids);

  align::AlignmentMap map = fit_by_method(x_tr, y_tr, opts);
  map.tau = opts.tau;
  map.standardized = opts.standardize;
  map.fit_state_ids = train_ids;
  run.alignment.map = align::choose_inverse(std::move(map));

  run.report = metrics::full_report(data, run.alignment.map, run.alignment.stats1,
                                    run.alignment.stats2, opts.metrics);
  run.spectrum = spectrum(run.alignment.map);
  return run;
}

SweepResult pair_noise_sweep(const latents::PairedDataset& data,
                             const std::vector<double>& epsilons,
                             const AlignmentOptions& opts, std::uint64_t seed) {
  if (epsilons.empty()) throw std::invalid_argument("no epsilon values given");
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    if (epsilons[i] < 0.0 || epsilons[i] > 1.0) {
      throw std::invalid_argument("epsilon outside [0, 1]");
    }
    if (i > 0 && epsilons[i] <= epsilons[i - 1]) {
      throw std::invalid_argument("epsilons must be strictly increasing");
    }
  }

  const std::vector<std::string> train_ids = data.ids_in(latents::Split::train);
  const std::size_t n_tr = train_ids.size();
  std::unordered_map<std::string, Eigen::Index> col_of;
  col_of.reserve(data.view2.state_ids.size());
  for (Eigen::Index c = 0; c < data.view2.count(); ++c) {
    col_of.emplace(data.view2.state_ids[static_cast<std::size_t>(c)], c);
  }

  SweepResult result;
  result.axis = SweepAxis::pair_noise;
  for (double eps : epsilons) {
    SweepPoint point;
    point.axis_value = eps;
    if (eps == 0.0) {
      const AlignmentRun run = run_alignment(data, opts);
      point.report = run.report;
      point.spectrum = run.spectrum;
      result.points.push_back(std::move(point));
      continue;
    }

    // A cyclic shift needs at least two members to mismatch anything.
    std::size_t m = static_cast<std::size_t>(
        std::ceil(eps * static_cast<double>(n_tr)));
    m = std::max<std::size_t>(m, 2);
    if (m > n_tr) {
      throw std::invalid_argument("too few train pairs to mismatch at this epsilon");
    }

    std::vector<std::size_t> positions(n_tr);
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    Rng rng(derive_seed(seed, std::bit_cast<std::uint64_t>(eps)));
    rng.shuffle(positions);
    positions.resize(m);
    std::sort(positions.begin(), positions.end());

    latents::PairedDataset noised = data;
    const Eigen::VectorXd first = noised.view2.values.col(col_of.at(train_ids[positions[0]]));
    for (std::size_t t = 0; t + 1 < m; ++t) {
      noised.view2.values.col(col_of.at(train_ids[positions[t]])) =
          noised.view2.values.col(col_of.at(train_ids[positions[t + 1]]));
    }
    noised.view2.values.col(col_of.at(train_ids[positions[m - 1]])) = first;

    const AlignmentRun run = run_alignment(noised, opts);
    point.report = run.report;
    point.spectrum = run.spectrum;
    result.points.push_back(std::move(point));
  }
  return result;
}

SweepResult pair_budget_sweep(const latents::PairedDataset& data,
                              const std::vector<int>& budgets,
                              const AlignmentOptions& opts, std::uint64_t seed) {
  if (budgets.empty()) throw std::invalid_argument("no budget values given");
  const std::vector<std::string> train_ids = data.ids_in(latents::Split::train);
  for (std::size_t i = 0; i < budgets.size(); ++i) {
    if (budgets[i] < 1) throw std::invalid_argument("budget must be positive");
    if (static_cast<std::size_t>(budgets[i]) > train_ids.size()) {
      throw std::invalid_argument("budget exceeds train size");
    }
    if (i > 0 && budgets[i] <= budgets[i - 1]) {
      throw std::invalid_argument("budgets must be strictly increasing");
    }
  }

  // One shuffled order; every budget takes a prefix, restored to canonical
  // train order so the full budget reproduces the baseline fit exactly.
  std::vector<std::string> shuffled = train_ids;
  Rng rng(seed);
  rng.shuffle(shuffled);

  std::optional<latents::StandardizationStats> stats1, stats2;
  if (opts.standardize) {
    stats1 = latents::fit_standardizer(data.view1, train_ids);
    stats2 = latents::fit_standardizer(data.view2, train_ids);
  }
  const latents::LatentSet v1 =
      opts.standardize ? latents::apply_standardizer(data.view1, *stats1) : data.view1;
  const latents::LatentSet v2 =
      opts.standardize ? latents::apply_standardizer(data.view2, *stats2) : data.view2;

  SweepResult result;
  result.axis = SweepAxis::pair_budget;
  for (int budget : budgets) {
    std::unordered_set<std::string> chosen(shuffled.begin(),
                                           shuffled.begin() + budget);
    std::vector<std::string> subset;
    subset.reserve(static_cast<std::size_t>(budget));
    for (const auto& id : train_ids) {
      if (chosen.count(id)) subset.push_back(id);
    }

    const Eigen::MatrixXd x_sub = latents::columns_for_ids(v1, subset);
    const Eigen::MatrixXd y_sub = latents::columns_for_ids(v2, subset);
    align::AlignmentMap map = fit_by_method(x_sub, y_sub, opts);
    map.tau = opts.tau;
    map.standardized = opts.standardize;
    map.fit_state_ids = subset;
    map = align::choose_inverse(std::move(map));

    SweepPoint point;
    point.axis_value = static_cast<double>(budget);
    point.report = metrics::full_report(data, map, stats1, stats2, opts.metrics);
    point.spectrum = spectrum(map);
    result.points.push_back(std::move(point));
  }
  return result;
}

std::pair<metrics::IsomorphismReport, metrics::IsomorphismReport> distribution_shift_eval(
    const latents::PairedDataset& fit_data, const latents::PairedDataset& shifted_test,
    const AlignmentRun& run, const metrics::MetricsConfig& config) {
  const std::vector<std::string> fit_train = fit_data.ids_in(latents::Split::train);
  std::unordered_set<std::string> train_set(fit_train.begin(), fit_train.end());
  for (const auto& id : shifted_test.pair_ids) {
    if (train_set.count(id)) {
      throw std::invalid_argument("id leakage between fit train and shifted test");
    }
  }

  const auto& stats1 = run.alignment.stats1;
  const auto& stats2 = run.alignment.stats2;
  const latents::LatentSet sh1 =
      stats1 ? latents::apply_standardizer(shifted_test.view1, *stats1) : shifted_test.view1;
  const latents::LatentSet sh2 =
      stats2 ? latents::apply_standardizer(shifted_test.view2, *stats2) : shifted_test.view2;
  const Eigen::MatrixXd x_sh = latents::columns_for_ids(sh1, shifted_test.pair_ids);
  const Eigen::MatrixXd y_sh = latents::columns_for_ids(sh2, shifted_test.pair_ids);

  // R^2 centering stays tied to the map's own training statistics.
  const latents::LatentSet fit_v2 =
      stats2 ? latents::apply_standardizer(fit_data.view2, *stats2) : fit_data.view2;
  const Eigen::VectorXd y_mean =
      latents::columns_for_ids(fit_v2, fit_train).rowwise().mean();

  metrics::IsomorphismReport shifted =
      metrics::report_on(x_sh, y_sh, run.alignment.map, y_mean, config);
  return {run.report, std::move(shifted)};
}

SweepResult seed_sweep(const std::function<AlignmentRun(std::uint64_t)>& experiment,
                       const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() < 3) throw std::invalid_argument("seed sweep needs at least 3 seeds");

  SweepResult result;
  result.axis = SweepAxis::seed;
  for (std::uint64_t s : seeds) {
    const AlignmentRun run = experiment(s);
    SweepPoint point;
    point.axis_value = static_cast<double>(s);
    point.report = run.report;
    point.spectrum = run.spectrum;
    result.points.push_back(std::move(point));
  }

  const auto names = point_scalars(result.points.front());
  for (std::size_t t = 0; t < names.size(); ++t) {
    double mean = 0.0;
    for (const auto& p : result.points) mean += point_scalars(p)[t].second;
    mean /= static_cast<double>(result.points.size());
    double var = 0.0;
    for (const auto& p : result.points) {
      const double d = point_scalars(p)[t].second - mean;
      var += d * d;
    }
    var /= static_cast<double>(result.points.size());
    result.aggregate_mean[names[t].first] = mean;
    result.aggregate_std[names[t].first] = std::sqrt(var);
  }
  return result;
}

PcaProjection pca_project(const latents::LatentSet& set) {
  if (set.count() < 3) throw std::invalid_argument("PCA needs at least three points");
  if (set.dim() < 2) throw std::invalid_argument("PCA projection needs dimension >= 2");

  const Eigen::VectorXd mean = set.values.rowwise().mean();
  const Eigen::MatrixXd centered = set.values.colwise() - mean;
  const Eigen::MatrixXd cov =
      centered * centered.transpose() / static_cast<double>(set.count());
  const double total = cov.trace();
  if (total == 0.0) throw std::invalid_argument("zero variance in latent set");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::Index d = set.dim();

  PcaProjection proj;
  proj.components.resize(d, 2);
  for (int c = 0; c < 2; ++c) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - c);
    Eigen::Index imax = 0;
    for (Eigen::Index i = 1; i < d; ++i) {
      if (std::abs(v(i)) > std::abs(v(imax))) imax = i;
    }
    if (v(imax) < 0.0) v = -v;
    proj.components.col(c) = v;
    proj.explained(c) = std::max(0.0, eig.eigenvalues()(d - 1 - c)) / total;
  }
  proj.coords = proj.components.transpose() * centered;
  return proj;
}

void write_sweep_csv(const SweepResult& result, const std::string& path) {
  if (result.points.empty()) throw std::invalid_argument("sweep has no points");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);

  std::string axis_col;
  switch (result.axis) {
    case SweepAxis::pair_noise: axis_col = "epsilon"; break;
    case SweepAxis::pair_budget: axis_col = "budget"; break;
    case SweepAxis::seed: axis_col = "seed"; break;
  }

  const auto names = point_scalars(result.points.front());
  out << axis_col;
  for (const auto& [name, value] : names) out << ',' << name;
  out << ",n_test";
  const bool aggregated = !result.aggregate_mean.empty();
  if (aggregated) {
    for (const auto& [name, value] : names) out << ',' << name << "_mean," << name << "_std";
  }
  out << '\n';

  for (const auto& p : result.points) {
    out << format_double(p.axis_value);
    for (const auto& [name, value] : point_scalars(p)) {
      out << ',' << format_double(value);
    }
    out << ',' << p.report.n_test;
    if (aggregated) {
      for (const auto& [name, value] : names) {
        out << ',' << format_double(result.aggregate_mean.at(name)) << ','
            << format_double(result.aggregate_std.at(name));
      }
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

nlohmann::json sweep_manifest(const SweepResult& result, const nlohmann::json& config) {
  nlohmann::json j;
  j["axis"] = to_string(result.axis);
  nlohmann::json values = nlohmann::json::array();
  for (const auto& p : result.points) values.push_back(p.axis_value);
  j["axis_values"] = values;
  j["n_points"] = result.points.size();
  j["config"] = config;
  j["kappa_note"] = "condition numbers are computed on the fitted map in the fit's "
                    "(standardized, unless disabled) coordinates";
  if (!result.aggregate_mean.empty()) {
    nlohmann::json agg;
    for (const auto& [name, value] : result.aggregate_mean) {
      agg[name] = {{"mean", value}, {"std", result.aggregate_std.at(name)}};
    }
    j["aggregate"] = agg;
  }
  return j;
}

void write_pca_csv(const latents::LatentSet& set, const PcaProjection& proj,
                   const std::string& path) {
  if (proj.coords.cols() != set.count()) {
    throw std::invalid_argument("projection does not match the latent set");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "state_id,pc1,pc2\n";
  for (Eigen::Index n = 0; n < set.count(); ++n) {
    out << set.state_ids[static_cast<std::size_t>(n)] << ','
        << format_double(proj.coords(0, n)) << ','
        << format_double(proj.coords(1, n)) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

nlohmann::json spectrum_to_json(const SpectrumDiagnostics& s) {
  nlohmann::json j;
  j["condition_number"] = finite_or_inf(s.condition_number);
  j["orthogonality_deviation"] = s.orthogonality_deviation;
  j["effective_rank"] = s.effective_rank;
  j["sigma_min"] = s.sigma_min;
  j["sigma_max"] = s.sigma_max;
  nlohmann::json sv = nlohmann::json::array();
  for (Eigen::Index i = 0; i < s.singular_values.size(); ++i) sv.push_back(s.singular_values(i));
  j["singular_values"] = sv;
  return j;
}

}  // namespace latlink::diagnostics
