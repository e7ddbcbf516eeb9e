#include "latlink/synth.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace latlink::synth {

namespace {

constexpr double kMinSingularValue = 1e-6;

double min_singular_value(const Eigen::MatrixXd& m) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  return sv.size() ? sv(sv.size() - 1) : 0.0;
}

}  // namespace

std::string to_string(StateDistribution d) {
  return d == StateDistribution::normal ? "normal" : "uniform_cube";
}

StateDistribution state_distribution_from_string(const std::string& s) {
  if (s == "normal") return StateDistribution::normal;
  if (s == "uniform_cube") return StateDistribution::uniform_cube;
  throw std::invalid_argument("unknown state distribution: " + s);
}

void validate(const SyntheticWorldSpec& spec) {
  if (spec.state_dim < 1) {
    throw std::invalid_argument("state_dim must be positive");
  }
  if (spec.n_samples < 1) {
    throw std::invalid_argument("n_samples must be positive");
  }
  if (spec.noise_sigma < 0.0) {
    throw std::invalid_argument("noise_sigma must be non-negative");
  }
  const Eigen::Index d = spec.state_dim;
  for (const auto* mix : {&spec.mix1, &spec.mix2}) {
    if (mix->rows() != d || mix->cols() != d) {
      throw std::invalid_argument("mixing matrices must be state_dim x state_dim");
    }
    if (min_singular_value(*mix) < kMinSingularValue) {
      throw std::invalid_argument(
          "mixing matrix is singular or near-singular (min singular value below 1e-6)");
    }
  }
}

SyntheticWorldSpec make_world_spec(int state_dim, int n_samples, Eigen::MatrixXd mix1,
                                   Eigen::MatrixXd mix2, double noise_sigma, std::uint64_t seed,
                                   StateDistribution dist) {
  SyntheticWorldSpec spec;
  spec.state_dim = state_dim;
  spec.n_samples = n_samples;
  spec.mix1 = std::move(mix1);
  spec.mix2 = std::move(mix2);
  spec.noise_sigma = noise_sigma;
  spec.seed = seed;
  spec.state_distribution = dist;
  validate(spec);
  return spec;
}

namespace {

Eigen::MatrixXd draw_states_from(const SyntheticWorldSpec& spec, Rng& rng) {
  const Eigen::Index d = spec.state_dim;
  const Eigen::Index n = spec.n_samples;
  Eigen::MatrixXd u(d, n);
  if (spec.state_distribution == StateDistribution::normal) {
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < d; ++i) u(i, j) = rng.normal();
    }
  } else {
    // Uniform on [-sqrt(3), sqrt(3)] so the per-coordinate variance is 1,
    // matching the normal option.
    const double half = std::sqrt(3.0);
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < d; ++i) u(i, j) = (2.0 * rng.uniform() - 1.0) * half;
    }
  }
  return u;
}

}  // namespace

Eigen::MatrixXd draw_states(const SyntheticWorldSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  return draw_states_from(spec, rng);
}

latents::PairedDataset generate(const SyntheticWorldSpec& spec, double split_fraction) {
  validate(spec);
  const Eigen::Index d = spec.state_dim;
  const Eigen::Index n = spec.n_samples;

  Rng rng(spec.seed);
  const Eigen::MatrixXd u = draw_states_from(spec, rng);

  Eigen::MatrixXd z1 = spec.mix1 * u;
  Eigen::MatrixXd z2 = spec.mix2 * u;
  if (spec.noise_sigma > 0.0) {
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < d; ++i) z2(i, j) += spec.noise_sigma * rng.normal();
    }
  }

  std::vector<std::string> ids(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) ids[static_cast<std::size_t>(j)] = "s" + std::to_string(j);

  auto v1 = latents::make_latent_set(std::move(z1), ids, "view1");
  auto v2 = latents::make_latent_set(std::move(z2), std::move(ids), "view2");
  return latents::pair_by_state(std::move(v1), std::move(v2), split_fraction, spec.seed);
}

align::AlignmentMap oracle_map(const SyntheticWorldSpec& spec) {
  validate(spec);
  // W* = A2 A1^{-1}, solved as A1^T W*^T = A2^T.
  Eigen::MatrixXd w =
      spec.mix1.transpose().partialPivLu().solve(spec.mix2.transpose()).transpose();
  return align::make_alignment_map(std::move(w), align::FitMethod::ols, 0.0);
}

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
  }
  return m;
}

Eigen::MatrixXd random_orthogonal(Eigen::Index d, Rng& rng) {
  Eigen::MatrixXd g = gaussian_matrix(d, d, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  // Fixing the sign of the R diagonal makes the decomposition unique and the
  // resulting Q Haar-distributed.
  for (Eigen::Index j = 0; j < d; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

Eigen::MatrixXd random_invertible(Eigen::Index d, double target_kappa, std::uint64_t seed) {
  if (d < 1) throw std::invalid_argument("dimension must be positive");
  if (target_kappa < 1.0) throw std::invalid_argument("target condition number must be >= 1");
  Rng rng(seed);
  Eigen::MatrixXd u = random_orthogonal(d, rng);
  Eigen::MatrixXd v = random_orthogonal(d, rng);
  Eigen::VectorXd s(d);
  if (d == 1) {
    s(0) = 1.0;
  } else {
    const double log_step = std::log(target_kappa) / static_cast<double>(d - 1);
    for (Eigen::Index i = 0; i < d; ++i) {
      s(i) = std::exp(-log_step * static_cast<double>(i));
    }
  }
  return u * s.asDiagonal() * v.transpose();
}

}  // namespace latlink::synth
