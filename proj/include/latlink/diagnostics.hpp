#pragma once

#include <cstdint>
#include <Eigen/Core>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "latlink/align.hpp"
#include "latlink/latents.hpp"
#include "latlink/metrics.hpp"

namespace latlink::diagnostics {

struct SpectrumDiagnostics {
  Eigen::VectorXd singular_values;     // descending
  double condition_number = 0.0;       // +inf when rank-deficient
  double orthogonality_deviation = 0.0;  // ||W^T W - I||_F / ||I||_F
  int effective_rank = 0;              // sigma_i at or above the rank cutoff
  double sigma_min = 0.0;
  double sigma_max = 0.0;
};

SpectrumDiagnostics spectrum(const align::AlignmentMap& map);

// One fit-and-evaluate pass: standardize (unless disabled), fit by the
// requested method, choose the inverse, score the held-out split.
struct AlignmentOptions {
  align::FitMethod method = align::FitMethod::ridge;
  double lambda = 0.0;
  bool auto_lambda = true;  // retry with a scaled lambda if X X^T is singular
  double tau = 1e6;
  bool standardize = true;
  metrics::MetricsConfig metrics;
};

struct AlignmentRun {
  align::AlignmentFile alignment;
  metrics::IsomorphismReport report;
  SpectrumDiagnostics spectrum;
};

AlignmentRun run_alignment(const latents::PairedDataset& data, const AlignmentOptions& opts);

enum class SweepAxis { pair_noise, pair_budget, seed };

std::string to_string(SweepAxis a);

struct SweepPoint {
  double axis_value = 0.0;
  metrics::IsomorphismReport report;
  SpectrumDiagnostics spectrum;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::pair_noise;
  std::vector<SweepPoint> points;
  // Populated by seed sweeps only: per-metric mean and population std.
  std::map<std::string, double> aggregate_mean;
  std::map<std::string, double> aggregate_std;
};

// For each epsilon, mismatches ceil(eps * N_train) train pairs by cyclically
// shifting the view-2 columns of a seed-selected subset (every selected pair
// is guaranteed mismatched; a lone selection is widened to two), refits, and
// scores against the untouched test split. eps = 0 is the exact baseline.
SweepResult pair_noise_sweep(const latents::PairedDataset& data,
                             const std::vector<double>& epsilons,
                             const AlignmentOptions& opts, std::uint64_t seed);

// For each budget, fits on a seed-deterministic subset of the train split
// (nested prefixes of one shuffled order, restored to canonical order) and
// scores on the fixed test split. Standardization statistics come from the
// full train split so the largest budget reproduces the baseline fit.
SweepResult pair_budget_sweep(const latents::PairedDataset& data,
                              const std::vector<int>& budgets,
                              const AlignmentOptions& opts, std::uint64_t seed);

// Scores one fitted map both on its own held-out split and on an entirely
// separate paired dataset (every pair of which is treated as evaluation
// material). Shifted ids may not overlap the fit train split.
std::pair<metrics::IsomorphismReport, metrics::IsomorphismReport> distribution_shift_eval(
    const latents::PairedDataset& fit_data, const latents::PairedDataset& shifted_test,
    const AlignmentRun& run, const metrics::MetricsConfig& config = {});

// Runs the experiment once per seed and aggregates every scalar metric
// (mean, population std) across runs. Requires at least 3 seeds; repeats are
// allowed (a repeated seed contributes an identical run, shrinking the std).
SweepResult seed_sweep(const std::function<AlignmentRun(std::uint64_t)>& experiment,
                       const std::vector<std::uint64_t>& seeds);

struct PcaProjection {
  Eigen::MatrixXd coords;        // 2 x N
  Eigen::Vector2d explained;     // variance fractions, nonincreasing
  Eigen::MatrixXd components;    // d x 2, sign-fixed principal axes
};

// Projection onto the top-2 principal axes of the centered set. Sign
// convention: the largest-magnitude loading of each axis is positive.
PcaProjection pca_project(const latents::LatentSet& set);

// CSV with one row per sweep point: axis value, every metric, kappa,
// deviation, effective rank (17 significant digits). Seed sweeps append
// <metric>_mean / <metric>_std columns.
void write_sweep_csv(const SweepResult& result, const std::string& path);

// JSON manifest for a sweep: axis, axis values, config echo, and a note
// that kappa is computed on the fitted (standardized-space) map.
nlohmann::json sweep_manifest(const SweepResult& result, const nlohmann::json& config);

void write_pca_csv(const latents::LatentSet& set, const PcaProjection& proj,
                   const std::string& path);

nlohmann::json spectrum_to_json(const SpectrumDiagnostics& s);

}  // namespace latlink::diagnostics
