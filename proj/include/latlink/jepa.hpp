#pragma once

#include <cstdint>
#include <Eigen/Core>
#include <string>
#include <utility>
#include <vector>

#include "latlink/metrics.hpp"
#include "latlink/rng.hpp"
#include "latlink/synth.hpp"

namespace latlink::jepa {

struct AffineLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

// affine -> tanh -> affine
struct Mlp {
  AffineLayer first;
  AffineLayer second;

  Eigen::Index in_dim() const { return first.weight.cols(); }
  Eigen::Index hidden_dim() const { return first.weight.rows(); }
  Eigen::Index out_dim() const { return second.weight.rows(); }
};

Eigen::MatrixXd mlp_forward(const Mlp& m, const Eigen::MatrixXd& x);

struct ToyJepaModel {
  Mlp encoder;    // obs_dim -> latent_dim
  Mlp predictor;  // latent_dim -> latent_dim

  Eigen::Index obs_dim() const { return encoder.in_dim(); }
  Eigen::Index latent_dim() const { return encoder.out_dim(); }
};

// Throws std::invalid_argument when layer shapes are inconsistent or any
// parameter is non-finite.
void validate(const ToyJepaModel& model);

// Truncated-orthogonal initialization: each layer is a block of a random
// orthogonal matrix scaled by scale1 (first layers) / scale2 (second
// layers), biases zero. scale1 * scale2 = 1 gives unit end-to-end gain in
// the near-linear regime; a large scale1 starts the net saturated.
ToyJepaModel init_model(Eigen::Index obs_dim, Eigen::Index latent_dim,
                        Eigen::Index hidden_dim, double scale1, double scale2,
                        std::uint64_t seed);

Eigen::MatrixXd encode(const ToyJepaModel& model, const Eigen::MatrixXd& obs);

// Mean over the batch of ||p(f(x_c)) - sg(f(x_t))||^2. The value is the
// same with or without the stop-gradient; sg only matters for gradients.
double jepa_loss(const ToyJepaModel& model, const Eigen::MatrixXd& contexts,
                 const Eigen::MatrixXd& targets);

// Same loss with the target embeddings supplied as constants; the reference
// function for finite-difference gradient checks of the stop-gradient path.
double loss_with_frozen_targets(const ToyJepaModel& model, const Eigen::MatrixXd& contexts,
                                const Eigen::MatrixXd& frozen_targets);

struct GradientResult {
  double loss = 0.0;
  Mlp encoder;    // same shapes as the model, holding d(loss)/d(param)
  Mlp predictor;
};

// Training gradients: the target branch is behind the stop-gradient and
// contributes nothing.
GradientResult loss_and_gradients(const ToyJepaModel& model, const Eigen::MatrixXd& contexts,
                                  const Eigen::MatrixXd& targets);

// Diagnostic variant without the stop-gradient: the residual also flows
// back through the target branch. Differs from loss_and_gradients exactly
// by the target-branch contribution (predictor gradients are identical).
GradientResult both_branch_gradients(const ToyJepaModel& model, const Eigen::MatrixXd& contexts,
                                     const Eigen::MatrixXd& targets);

struct TrainConfig {
  double learning_rate = 0.05;  // 0 permitted: a no-op pass that only logs
  int steps = 1000;
  int batch_size = 0;  // 0 (or >= N) = full batch, no batch randomness
  std::uint64_t seed = 0;
  Eigen::Index latent_dim = 8;
  Eigen::Index hidden_dim = 32;
  double init_scale1 = 0.1;
  double init_scale2 = 10.0;
  double jitter_std = 0.01;
  std::vector<int> checkpoint_steps;  // snapshot after this many completed steps
};

void validate(const TrainConfig& config);

// One view of the synthetic world prepared for JEPA training: context and
// target are the same clean observation A_view u plus independent jitter
// draws (fixed once per dataset, not per step).
struct JepaData {
  Eigen::MatrixXd states;    // u, state_dim x N
  Eigen::MatrixXd clean;     // A_view u
  Eigen::MatrixXd contexts;  // clean + jitter
  Eigen::MatrixXd targets;   // clean + independent jitter
  std::vector<std::string> state_ids;  // "s{n}", matching synth::generate
};

// view is 1 or 2. shuffle_coords applies an independent per-sample
// permutation of the observation coordinates (the same permutation to a
// sample's context, target and clean columns) — the structure-destruction
// ablation.
JepaData make_view_data(const synth::SyntheticWorldSpec& spec, int view, double jitter_std,
                        bool shuffle_coords = false);

// Batch columns for one step: empty result means "use the full dataset"
// (chosen when batch_size <= 0 or >= n; consumes no randomness).
std::vector<Eigen::Index> draw_batch(Rng& rng, Eigen::Index n, int batch_size);

Eigen::MatrixXd take_columns(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& idx);

struct StepResult {
  double loss = 0.0;              // batch JEPA loss before the update
  double encoder_variance = 0.0;  // mean per-dim variance of z_c on the batch
};

// One gradient-descent step in place. extra_dzc, when non-null, is added to
// the gradient of the loss with respect to the context embeddings before
// backpropagation into the encoder (used for collaboration penalty terms);
// the reported loss is the plain JEPA loss.
StepResult sgd_step(ToyJepaModel& model, const Eigen::MatrixXd& contexts,
                    const Eigen::MatrixXd& targets, double learning_rate,
                    const Eigen::MatrixXd* extra_dzc = nullptr);

struct TrainResult {
  ToyJepaModel model;
  std::vector<double> losses;            // per step, pre-update
  std::vector<double> encoder_variance;  // per step, on the step's batch
  std::vector<std::pair<int, ToyJepaModel>> checkpoints;  // (completed steps, model)
};

// Plain JEPA training. Deterministic in (initial model, data, config);
// throws std::runtime_error naming the step if the loss becomes non-finite.
TrainResult train(ToyJepaModel model, const JepaData& data, const TrainConfig& config);

// Exact GL(d) reparameterization f_A = A f, p_A = A p(A^-1 ·), realized by
// composing A into the boundary affine layers. Rejects effectively singular
// A (condition number above 1e12).
ToyJepaModel reparameterize(const ToyJepaModel& model, const Eigen::MatrixXd& a);

struct SymmetryCheck {
  double loss = 0.0;           // L
  double loss_reparam = 0.0;   // L_A
  double lower = 0.0;          // sigma_min(A)^2 * L
  double upper = 0.0;          // sigma_max(A)^2 * L
  bool pass = false;           // sandwich within 1e-9 relative slack
};

SymmetryCheck symmetry_bounds_check(const ToyJepaModel& model, const Eigen::MatrixXd& a,
                                    const Eigen::MatrixXd& contexts,
                                    const Eigen::MatrixXd& targets);

struct EmergenceConfig {
  TrainConfig train;                 // shared by both models; seeds below override
  std::uint64_t seed1 = 1;
  std::uint64_t seed2 = 2;
  bool shuffle_view2 = false;        // structure-destruction ablation
  double split_fraction = 0.5;
  std::vector<double> checkpoint_fractions = {0.1, 0.5, 1.0};
  metrics::MetricsConfig metrics;
};

struct EmergenceResult {
  metrics::IsomorphismReport report;  // at the full training budget
  std::vector<std::pair<int, metrics::IsomorphismReport>> checkpoint_reports;
  TrainResult run1;
  TrainResult run2;
};

// Trains two models independently (different seeds, different views of the
// same states), exports encoder latents on the clean observations, fits an
// alignment map post hoc on the train split and scores the test split —
// once per checkpoint and at the end.
EmergenceResult emergence_experiment(const synth::SyntheticWorldSpec& spec,
                                     const EmergenceConfig& config);

// Model parameters in the bin matrix container, magic "TJPA".
void save_model(const ToyJepaModel& model, const std::string& path);
ToyJepaModel load_model(const std::string& path);

// CSV: step, loss, encoder output variance.
void write_loss_csv(const TrainResult& result, const std::string& path);

}  // namespace latlink::jepa
