#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "latlink/align.hpp"
#include "latlink/diagnostics.hpp"
#include "latlink/latents.hpp"
#include "latlink/synth.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace latlink;
namespace fs = std::filesystem;

namespace {

// A small exactly-linear world shared by several sweeps below.
latents::PairedDataset small_world(double sigma, std::uint64_t seed, int n = 400,
                                   int d = 6) {
  const Eigen::MatrixXd a1 = synth::random_invertible(d, 2.0, 901);
  const Eigen::MatrixXd a2 = synth::random_invertible(d, 3.0, 902);
  const auto spec = synth::make_world_spec(d, n, a1, a2, sigma, seed);
  return synth::generate(spec);
}

latents::PairedDataset relabeled(latents::PairedDataset data,
                                 const std::string& prefix) {
  latents::PairedDataset out;
  std::vector<std::string> ids1;
  for (const auto& id : data.view1.state_ids) ids1.push_back(prefix + id);
  std::vector<std::string> ids2;
  for (const auto& id : data.view2.state_ids) ids2.push_back(prefix + id);
  out.view1 = latents::make_latent_set(data.view1.values, ids1, "view1");
  out.view2 = latents::make_latent_set(data.view2.values, ids2, "view2");
  for (const auto& id : data.pair_ids) out.pair_ids.push_back(prefix + id);
  for (const auto& [id, split] : data.split) out.split[prefix + id] = split;
  return out;
}

}  // namespace

TEST_CASE("diagnostics: [derived] spectrum of hand-built maps") {
  // Orthogonal: kappa 1, zero orthogonality deviation.
  Rng rng(1);
  const Eigen::MatrixXd q = synth::random_orthogonal(4, rng);
  const auto sq = diagnostics::spectrum(
      align::make_alignment_map(q, align::FitMethod::procrustes, 0.0));
  CHECK(sq.condition_number == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sq.orthogonality_deviation <= 1e-10);
  CHECK(sq.effective_rank == 4);

  // diag(10, 1): kappa 10, deviation ||diag(99, 0)||_F / sqrt(2) = 99/sqrt(2).
  const Eigen::MatrixXd d = Eigen::Vector2d(10.0, 1.0).asDiagonal();
  const auto sd = diagnostics::spectrum(
      align::make_alignment_map(d, align::FitMethod::ols, 0.0));
  CHECK(sd.condition_number == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(sd.orthogonality_deviation ==
        doctest::Approx(99.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(sd.sigma_max == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(sd.sigma_min == doctest::Approx(1.0).epsilon(1e-12));

  // Rank-1 in d = 3: effective rank 1, infinite kappa.
  Eigen::MatrixXd r1 = Eigen::MatrixXd::Zero(3, 3);
  r1(0, 0) = 2.0;
  const auto sr = diagnostics::spectrum(
      align::make_alignment_map(r1, align::FitMethod::ols, 0.0));
  CHECK(sr.effective_rank == 1);
  CHECK(std::isinf(sr.condition_number));

  const nlohmann::json j = diagnostics::spectrum_to_json(sr);
  CHECK(j.contains("singular_values"));
  CHECK(j.contains("condition_number"));
  CHECK(j.contains("orthogonality_deviation"));
  CHECK(j.contains("effective_rank"));
}

TEST_CASE("diagnostics: [derived] run_alignment on a noiseless world") {
  const auto data = small_world(0.0, 11);
  diagnostics::AlignmentOptions opts;
  opts.metrics.ks = {1, 10};
  const auto run = diagnostics::run_alignment(data, opts);
  CHECK(run.report.r2 >= 0.999999);
  CHECK(run.report.dsc >= 0.999);
  CHECK(run.report.nos_at_k.at(10) <= 0.001);
  CHECK(run.alignment.map.standardized);
  CHECK(run.alignment.stats1.has_value());
  CHECK(run.alignment.map.fit_state_ids == data.ids_in(latents::Split::train));
  CHECK(run.spectrum.condition_number >= 1.0);

  diagnostics::AlignmentOptions raw = opts;
  raw.standardize = false;
  const auto run_raw = diagnostics::run_alignment(data, raw);
  CHECK_FALSE(run_raw.alignment.map.standardized);
  CHECK_FALSE(run_raw.alignment.stats1.has_value());
  CHECK(run_raw.report.r2 >= 0.999999);
}

TEST_CASE("diagnostics: [trivial] pair_noise_sweep keeps eps 0 as the exact baseline") {
  const auto data = small_world(0.0, 12);
  diagnostics::AlignmentOptions opts;
  opts.metrics.ks = {1};
  const auto baseline = diagnostics::run_alignment(data, opts);
  const auto sweep = diagnostics::pair_noise_sweep(data, {0.0, 0.2}, opts, 7);
  REQUIRE(sweep.points.size() == 2);
  CHECK(sweep.axis == diagnostics::SweepAxis::pair_noise);
  CHECK(sweep.points[0].axis_value == 0.0);
  CHECK(sweep.points[0].report.r2 == baseline.report.r2);
  CHECK(sweep.points[0].report.mse == baseline.report.mse);
  CHECK(sweep.points[1].report.r2 < baseline.report.r2);
}

TEST_CASE("diagnostics: [derived] pair noise degrades fit quality monotonically") {
  const auto data = small_world(0.0, 13, 600, 8);
  diagnostics::AlignmentOptions opts;
  opts.metrics.ks = {1};
  const auto sweep =
      diagnostics::pair_noise_sweep(data, {0.0, 0.1, 0.3}, opts, 3);
  REQUIRE(sweep.points.size() == 3);
  CHECK(sweep.points[0].report.r2 > sweep.points[1].report.r2);
  CHECK(sweep.points[1].report.r2 > sweep.points[2].report.r2);
  CHECK(sweep.points[0].spectrum.condition_number <
        sweep.points[1].spectrum.condition_number);
  CHECK(sweep.points[1].spectrum.condition_number <
        sweep.points[2].spectrum.condition_number);

  const auto wrecked = diagnostics::pair_noise_sweep(data, {1.0}, opts, 3);
  CHECK(wrecked.points[0].report.r2 < 0.1);
}

TEST_CASE("diagnostics: [trivial] pair_noise_sweep validates its grid") {
  const auto data = small_world(0.0, 14);
  const diagnostics::AlignmentOptions opts;
  CHECK_THROWS(diagnostics::pair_noise_sweep(data, {}, opts, 1));
  CHECK_THROWS(diagnostics::pair_noise_sweep(data, {-0.1}, opts, 1));
  CHECK_THROWS(diagnostics::pair_noise_sweep(data, {1.5}, opts, 1));
  CHECK_THROWS(diagnostics::pair_noise_sweep(data, {0.3, 0.1}, opts, 1));
}

TEST_CASE("diagnostics: [derived] pair budget sweep is monotone and saturates") {
  const int d = 8;
  const auto data = small_world(0.05, 15, 1400, d);
  diagnostics::AlignmentOptions opts;
  opts.metrics.ks = {1};
  const int full = static_cast<int>(data.ids_in(latents::Split::train).size());
  // Budgets start at 2d: at or below d the fit interpolates the noisy pairs
  // and test error peaks (double descent), so monotonicity begins past it.
  const std::vector<int> budgets = {2 * d, 4 * d, 8 * d, 32 * d};
  REQUIRE(32 * d <= full);
  const auto sweep = diagnostics::pair_budget_sweep(data, budgets, opts, 5);
  REQUIRE(sweep.points.size() == budgets.size());
  for (std::size_t i = 1; i < sweep.points.size(); ++i) {
    CHECK(sweep.points[i].report.r2 >= sweep.points[i - 1].report.r2 - 1e-4);
  }
  const auto baseline = diagnostics::run_alignment(data, opts);
  CHECK(std::abs(sweep.points.back().report.r2 - baseline.report.r2) < 0.01);

  // The full train budget reproduces the baseline fit exactly.
  const auto all_in = diagnostics::pair_budget_sweep(data, {full}, opts, 5);
  CHECK(all_in.points[0].report.r2 == baseline.report.r2);
  CHECK(all_in.points[0].report.mse == baseline.report.mse);
}

TEST_CASE("diagnostics: [trivial] pair_budget_sweep validates budgets") {
  const auto data = small_world(0.0, 16);
  const diagnostics::AlignmentOptions opts;
  const int full = static_cast<int>(data.ids_in(latents::Split::train).size());
  CHECK_THROWS(diagnostics::pair_budget_sweep(data, {}, opts, 1));
  CHECK_THROWS(diagnostics::pair_budget_sweep(data, {0}, opts, 1));
  CHECK_THROWS(diagnostics::pair_budget_sweep(data, {full + 1}, opts, 1));
  CHECK_THROWS(diagnostics::pair_budget_sweep(data, {8, 4}, opts, 1));
}

TEST_CASE("diagnostics: [derived] distribution shift is benign for a null shift") {
  diagnostics::AlignmentOptions opts;
  opts.metrics.ks = {1};
  for (std::uint64_t seed = 30; seed < 33; ++seed) {
    const auto fit_data = small_world(0.1, seed, 1000);
    const auto run = diagnostics::run_alignment(fit_data, opts);
    const auto shifted = relabeled(small_world(0.1, seed + 1000, 1000), "t");
    const auto [base, moved] =
        diagnostics::distribution_shift_eval(fit_data, shifted, run, opts.metrics);
    CHECK(base.r2 == run.report.r2);
    CHECK(std::abs(moved.r2 - base.r2) < 0.05);
  }
}

TEST_CASE("diagnostics: [derived] doubled noise scores no better than in-domain") {
  diagnostics::AlignmentOptions opts;
  opts.metrics.ks = {1};
  const auto fit_data = small_world(0.1, 44, 1000);
  const auto run = diagnostics::run_alignment(fit_data, opts);
  const auto shifted = relabeled(small_world(0.2, 4400, 1000), "t");
  const auto [base, moved] =
      diagnostics::distribution_shift_eval(fit_data, shifted, run, opts.metrics);
  CHECK(moved.r2 <= base.r2);
}

TEST_CASE("diagnostics: [trivial] distribution shift refuses id leakage") {
  diagnostics::AlignmentOptions opts;
  opts.metrics.ks = {1};
  const auto fit_data = small_world(0.1, 45);
  const auto run = diagnostics::run_alignment(fit_data, opts);
  const auto other = small_world(0.1, 46);  // same s{n} ids
  CHECK_THROWS_WITH_AS(
      diagnostics::distribution_shift_eval(fit_data, other, run, opts.metrics),
      doctest::Contains("leakage"), std::invalid_argument);
}

TEST_CASE("diagnostics: [derived] seed sweep aggregates hand-picked values") {
  // The experiment fabricates runs whose r2 is 0.8 / 0.9 / 1.0 by seed.
  const auto experiment = [](std::uint64_t seed) {
    diagnostics::AlignmentRun run;
    run.alignment.map = align::make_alignment_map(
        Eigen::MatrixXd::Identity(2, 2), align::FitMethod::ols, 0.0);
    run.report.r2 = seed == 0 ? 0.8 : (seed == 1 ? 0.9 : 1.0);
    run.spectrum = diagnostics::spectrum(run.alignment.map);
    return run;
  };
  const auto sweep = diagnostics::seed_sweep(experiment, {0, 1, 2});
  CHECK(sweep.axis == diagnostics::SweepAxis::seed);
  REQUIRE(sweep.points.size() == 3);
  CHECK(sweep.aggregate_mean.at("r2") == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(sweep.aggregate_std.at("r2") ==
        doctest::Approx(std::sqrt(0.02 / 3.0)).epsilon(1e-12));

  // A seed-blind experiment has exactly zero spread.
  const auto constant = [&](std::uint64_t) { return experiment(1); };
  const auto flat = diagnostics::seed_sweep(constant, {5, 6, 7});
  CHECK(flat.aggregate_std.at("r2") == 0.0);
  CHECK(flat.aggregate_mean.at("r2") == 0.9);

  CHECK_THROWS_AS(diagnostics::seed_sweep(experiment, {0, 1}),
                  std::invalid_argument);
}

TEST_CASE("diagnostics: [derived] seed spread of the synthetic pipeline is tight") {
  diagnostics::AlignmentOptions opts;
  opts.metrics.ks = {1};
  const auto experiment = [&](std::uint64_t seed) {
    return diagnostics::run_alignment(small_world(0.1, seed, 600), opts);
  };
  const auto sweep = diagnostics::seed_sweep(experiment, {1, 2, 3, 4, 5});
  CHECK(sweep.aggregate_std.at("r2") < 0.01);
  CHECK(sweep.aggregate_mean.at("r2") > 0.9);
}

TEST_CASE("diagnostics: [oracle] pca matches the covariance eigensolver") {
  // Fixed 3-point instance in the plane.
  Eigen::MatrixXd z(2, 3);
  z << 0.0, 2.0, 4.0, 0.0, 1.0, -1.0;
  const auto set = latents::make_latent_set(z, testutil::numbered_ids(3));
  const auto proj = diagnostics::pca_project(set);

  const Eigen::MatrixXd ref_axes = oracles::pca_components(z, 2);
  const Eigen::VectorXd mean = z.rowwise().mean();
  const Eigen::MatrixXd centered = z.colwise() - mean;
  const Eigen::MatrixXd ref_coords = ref_axes * centered;
  // Axes are defined up to sign; compare coordinates row-wise up to sign.
  for (int r = 0; r < 2; ++r) {
    const double direct = (proj.coords.row(r) - ref_coords.row(r)).norm();
    const double flipped = (proj.coords.row(r) + ref_coords.row(r)).norm();
    CHECK(std::min(direct, flipped) < 1e-10);
  }
  const Eigen::VectorXd eig = oracles::pca_eigenvalues(z);
  const double total = eig.sum();
  CHECK(proj.explained(0) == doctest::Approx(eig(0) / total).epsilon(1e-10));
  CHECK(proj.explained(1) == doctest::Approx(eig(1) / total).epsilon(1e-10));
}

TEST_CASE("diagnostics: [trivial] pca conventions and validation") {
  Rng rng(2);
  Eigen::MatrixXd z = testutil::random_matrix(4, 50, rng);
  z.row(0) *= 5.0;  // dominant axis
  const auto set = latents::make_latent_set(z, testutil::numbered_ids(50));
  const auto proj = diagnostics::pca_project(set);
  CHECK(proj.explained(0) >= proj.explained(1));
  CHECK(proj.explained(0) + proj.explained(1) <= 1.0 + 1e-12);
  CHECK(proj.coords.rows() == 2);
  CHECK(proj.coords.cols() == 50);
  // Sign convention: the largest-magnitude loading of each axis is positive.
  for (int c = 0; c < 2; ++c) {
    Eigen::Index where = 0;
    proj.components.col(c).cwiseAbs().maxCoeff(&where);
    CHECK(proj.components(where, c) > 0.0);
  }
  // Projected coordinates are centered.
  CHECK(proj.coords.rowwise().mean().cwiseAbs().maxCoeff() < 1e-10);

  const auto flat = latents::make_latent_set(Eigen::MatrixXd::Zero(3, 5),
                                             testutil::numbered_ids(5));
  CHECK_THROWS(diagnostics::pca_project(flat));
  const auto tiny = latents::make_latent_set(Eigen::MatrixXd::Random(3, 2),
                                             testutil::numbered_ids(2));
  CHECK_THROWS(diagnostics::pca_project(tiny));
}

TEST_CASE("diagnostics: [trivial] sweep csv and manifest formats") {
  const fs::path dir = testutil::test_dir("diag_csv");
  const auto data = small_world(0.0, 17);
  diagnostics::AlignmentOptions opts;
  opts.metrics.ks = {1, 5};
  const auto sweep = diagnostics::pair_noise_sweep(data, {0.0, 0.5}, opts, 2);
  const fs::path csv = dir / "sweep.csv";
  diagnostics::write_sweep_csv(sweep, csv.string());

  std::ifstream in(csv);
  std::string header;
  REQUIRE(std::getline(in, header));
  CHECK(header.find("epsilon") == 0);  // axis column is named for the knob
  CHECK(header.find("r2") != std::string::npos);
  CHECK(header.find("kappa") != std::string::npos);
  CHECK(header.find("nos@1") != std::string::npos);
  int rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 2);

  // Byte-identical on rewrite.
  diagnostics::write_sweep_csv(sweep, (dir / "sweep2.csv").string());
  CHECK(testutil::read_file(csv) == testutil::read_file(dir / "sweep2.csv"));

  const nlohmann::json manifest =
      diagnostics::sweep_manifest(sweep, nlohmann::json{{"note", "cfg"}});
  CHECK(manifest["axis"] == "pair_noise");
  CHECK(manifest["config"]["note"] == "cfg");
  CHECK(manifest.contains("axis_values"));
  CHECK(manifest.contains("kappa_note"));

  // Seed sweeps add aggregate columns.
  const auto experiment = [&](std::uint64_t seed) {
    return diagnostics::run_alignment(small_world(0.1, seed, 200), opts);
  };
  const auto seeds = diagnostics::seed_sweep(experiment, {1, 2, 3});
  const fs::path seed_csv = dir / "seed.csv";
  diagnostics::write_sweep_csv(seeds, seed_csv.string());
  std::ifstream sin(seed_csv);
  REQUIRE(std::getline(sin, header));
  CHECK(header.find("r2_mean") != std::string::npos);
  CHECK(header.find("r2_std") != std::string::npos);
}
