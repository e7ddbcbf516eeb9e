#pragma once

#include <cstdint>
#include <Eigen/Dense>

#include "latlink/align.hpp"
#include "latlink/latents.hpp"
#include "latlink/rng.hpp"

namespace latlink::synth {

enum class StateDistribution { normal, uniform_cube };

std::string to_string(StateDistribution d);
StateDistribution state_distribution_from_string(const std::string& s);

// Analytic two-view world: a shared state u in R^d is observed through two
// fixed linear mixes, z1 = A1 u and z2 = A2 u + eps with eps ~ N(0, sigma^2 I).
struct SyntheticWorldSpec {
  int state_dim = 0;
  int n_samples = 0;
  Eigen::MatrixXd mix1;  // d x d, invertible
  Eigen::MatrixXd mix2;  // d x d, invertible
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  StateDistribution state_distribution = StateDistribution::normal;
};

// Validating constructor: rejects non-square or near-singular mixes
// (minimum singular value below 1e-6), non-positive dims, negative sigma.
SyntheticWorldSpec make_world_spec(int state_dim, int n_samples, Eigen::MatrixXd mix1,
                                   Eigen::MatrixXd mix2, double noise_sigma, std::uint64_t seed,
                                   StateDistribution dist = StateDistribution::normal);

// Throws std::invalid_argument if the spec violates the constraints above.
void validate(const SyntheticWorldSpec& spec);

// The underlying state sample u (d x N) that generate() observes: column n
// is state "s{n}". Deterministic in spec.seed; every consumer of the same
// spec sees the same states.
Eigen::MatrixXd draw_states(const SyntheticWorldSpec& spec);

// Samples the world. State ids are "s0".."s{N-1}"; the train/test split is
// the stable per-id hash split at `split_fraction` keyed on spec.seed.
latents::PairedDataset generate(const SyntheticWorldSpec& spec, double split_fraction = 0.5);

// The exact alignment map W* = A2 A1^{-1} that the fitters should recover
// in the noiseless case, packaged with its spectrum.
align::AlignmentMap oracle_map(const SyntheticWorldSpec& spec);

// i.i.d. standard normal entries.
Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// Haar-distributed orthogonal d x d matrix (QR of a Gaussian matrix with the
// R-diagonal sign fix).
Eigen::MatrixXd random_orthogonal(Eigen::Index d, Rng& rng);

// Random d x d matrix with condition number exactly target_kappa (>= 1):
// U diag(s) V^T with Haar U, V and a geometric singular ladder from 1 down
// to 1/target_kappa. target_kappa == 1 yields a random orthogonal matrix.
Eigen::MatrixXd random_invertible(Eigen::Index d, double target_kappa, std::uint64_t seed);

}  // namespace latlink::synth
