#pragma once

#include <cstdint>
#include <Eigen/Core>
#include <map>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "latlink/align.hpp"
#include "latlink/latents.hpp"

namespace latlink::metrics {

struct MetricsConfig {
  std::vector<int> ks = {1, 5, 10, 20, 50};
  int dsc_max_points = 2000;
  std::uint64_t dsc_seed = 0;
};

struct IsomorphismReport {
  double mse = 0.0;
  double r2 = 0.0;
  double cka = 0.0;
  double dsc = 0.0;
  std::map<int, double> no_at_k;
  std::map<int, double> nos_at_k;  // always 1 - no_at_k, stored for output
  int n_test = 0;
  bool dsc_subsampled = false;
};

// Maps view-2 test latents back into view-1 coordinates, column by column:
// z~(2) = W_inv z(2). Requires choose_inverse to have run on the map.
Eigen::MatrixXd aligned_latents(const Eigen::MatrixXd& view2_test,
                                const align::AlignmentMap& map);

// (1/M) * sum_n || z_n(2) - W z_n(1) ||^2 over test columns.
double alignment_mse(const Eigen::MatrixXd& view1_test, const Eigen::MatrixXd& view2_test,
                     const align::AlignmentMap& map);

// 1 - ||Y - WX||_F^2 / ||Y - y_bar 1^T||_F^2 where y_bar is the train-split
// mean of view-2 latents (passed in, never computed from test data).
double r_squared(const Eigen::MatrixXd& view1_test, const Eigen::MatrixXd& view2_test,
                 const align::AlignmentMap& map, const Eigen::VectorXd& y_train_mean);

// Linear CKA between two d x M / d' x M sample matrices (columns are
// samples): ||Bc Ac^T||_F^2 / (||Ac Ac^T||_F * ||Bc Bc^T||_F) after
// centering each feature across samples.
double linear_cka(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// Distance Spearman correlation: rank correlation between the two vectors
// of pairwise Euclidean distances, average ranks on ties. When M exceeds
// max_points the points are subsampled deterministically from `seed`.
double dsc(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int max_points,
           std::uint64_t seed);

// Neighborhood overlap: for each column, the k nearest neighbors (Euclidean,
// self excluded, ties broken toward lower index) are found in both spaces;
// NO@k is the mean fractional overlap. nos_at_k returns 1 - NO@k per k.
std::map<int, double> no_at_k(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                              const std::vector<int>& ks);
std::map<int, double> nos_at_k(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                               const std::vector<int>& ks);

// Evaluation on explicit matrices: MSE and R^2 compare y against W x; CKA,
// DSC and NOS compare x against W_inv y. y_train_mean is the view-2 train
// mean used for R^2 centering (in the same coordinates as y).
IsomorphismReport report_on(const Eigen::MatrixXd& x_te, const Eigen::MatrixXd& y_te,
                            const align::AlignmentMap& map,
                            const Eigen::VectorXd& y_train_mean,
                            const MetricsConfig& config = {});

// Full held-out evaluation on a paired dataset's test split. When
// standardizers are given both views are standardized first (the same
// transform the map was fitted under). Refuses to score a map whose fit
// ids overlap the test split.
IsomorphismReport full_report(const latents::PairedDataset& data,
                              const align::AlignmentMap& map,
                              const std::optional<latents::StandardizationStats>& stats1,
                              const std::optional<latents::StandardizationStats>& stats2,
                              const MetricsConfig& config = {});

nlohmann::json report_to_json(const IsomorphismReport& report);

}  // namespace latlink::metrics
