#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "latlink/latents.hpp"

namespace latlink::align {

enum class FitMethod { ridge, ols, procrustes };
enum class InverseKind { none, exact, pseudo };

std::string to_string(FitMethod m);
std::string to_string(InverseKind k);

// Linear map W: view1 -> view2, fitted so that z2 ~= W z1. This direction
// is fixed everywhere in the library; mapping view-2 latents back into
// view-1 coordinates always goes through the chosen inverse.
struct AlignmentMap {
  Eigen::MatrixXd matrix;  // d2 x d1
  FitMethod method = FitMethod::ols;
  double lambda = 0.0;
  Eigen::VectorXd singular_values;  // of W, descending
  double condition_number = 0.0;    // +inf when rank-deficient
  InverseKind inverse_kind = InverseKind::none;
  double tau = 1e6;
  Eigen::MatrixXd inverse;  // d1 x d2, set by choose_inverse

  // Fit bookkeeping (not part of the numeric payload): ids the map was
  // fitted on, and whether the latents were standardized first.
  std::vector<std::string> fit_state_ids;
  bool standardized = true;

  Eigen::Index rows() const { return matrix.rows(); }  // d2
  Eigen::Index cols() const { return matrix.cols(); }  // d1
};

// Singular values below sigma_max * max(d1,d2) * machine-epsilon count as
// zero for rank, condition number, and pseudoinverse truncation.
double rank_cutoff(double sigma_max, Eigen::Index rows, Eigen::Index cols);

// Wraps an externally constructed matrix (oracle maps, hand-built cases)
// with its singular spectrum and condition number filled in.
AlignmentMap make_alignment_map(Eigen::MatrixXd w, FitMethod method, double lambda);

// Closed-form ridge solution W = Y X^T (X X^T + lambda I)^-1, solved via a
// Cholesky factorization of the normal matrix with an SVD-based fallback.
// At lambda = 0 a singular X X^T is an error; use lambda > 0 or fit_auto.
AlignmentMap fit_ridge(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                       double lambda);

// fit_ridge at lambda = 0, retrying once at
// lambda = 1e-6 * trace(X X^T) / d1 if the normal matrix is singular.
AlignmentMap fit_auto(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

// Orthogonal solution via the SVD of Y X^T = U S V^T, W = U V^T. Requires
// equal dimensions; reflections are admitted (no determinant correction).
AlignmentMap fit_procrustes(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

// Exact inverse when W is square and kappa(W) <= tau, Moore-Penrose
// pseudoinverse (truncated at rank_cutoff) otherwise.
AlignmentMap choose_inverse(AlignmentMap map);

struct LinearProbe {
  Eigen::VectorXd weights;
  double bias = 0.0;
};

// Transfers a view-1 probe to view-2 coordinates: a2 = W_inv^T a, bias
// unchanged. Scores are preserved exactly whenever z2 = W z1 and the
// inverse is exact.
LinearProbe migrate_probe(const LinearProbe& probe, const AlignmentMap& map);

// On-disk form: <stem>.json metadata plus <stem>.bin payload (magic "ALNW")
// holding W and, when chosen, W_inv. Standardizers travel with the map so
// a fitted alignment can be applied to raw latent files later.
struct AlignmentFile {
  AlignmentMap map;
  std::optional<latents::StandardizationStats> stats1;
  std::optional<latents::StandardizationStats> stats2;
};

void save_alignment(const AlignmentFile& file, const std::string& stem);
AlignmentFile load_alignment(const std::string& stem);

}  // namespace latlink::align
