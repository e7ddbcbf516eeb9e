#include "latlink/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>
#include <utility>

#include "latlink/rng.hpp"
#include "latlink/util.hpp"

namespace latlink::metrics {

namespace {

void check_sample_counts(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("sample counts differ between the two spaces");
  }
}

// Flattened index of pair (i, j), i < j, over m points.
std::size_t pair_index(std::size_t i, std::size_t j, std::size_t m) {
  return i * m - i * (i + 1) / 2 + (j - i - 1);
}

// All pairwise Euclidean distances {d(i,j) : i < j}, filled in parallel with
// a fixed slot per pair so the result is bitwise thread-count independent.
std::vector<double> pairwise_distances(const Eigen::MatrixXd& x) {
  const std::size_t m = static_cast<std::size_t>(x.cols());
  std::vector<double> d(m * (m - 1) / 2);
  parallel_for(static_cast<int>(m), [&](int ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    for (std::size_t j = i + 1; j < m; ++j) {
      d[pair_index(i, j, m)] =
          (x.col(static_cast<Eigen::Index>(i)) - x.col(static_cast<Eigen::Index>(j))).norm();
    }
  });
  return d;
}

// Average ranks (1-based), ties sharing the mean of their rank range.
std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  return sab / std::sqrt(saa * sbb);
}

// Indices of the k nearest neighbors of column i (self excluded), ties
// broken toward the lower index.
std::vector<Eigen::Index> knn_of(const Eigen::MatrixXd& x, Eigen::Index i, int k) {
  std::vector<std::pair<double, Eigen::Index>> cand;
  cand.reserve(static_cast<std::size_t>(x.cols()) - 1);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (j == i) continue;
    cand.emplace_back((x.col(j) - x.col(i)).norm(), j);
  }
  std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
  std::vector<Eigen::Index> out(static_cast<std::size_t>(k));
  for (int t = 0; t < k; ++t) out[static_cast<std::size_t>(t)] = cand[static_cast<std::size_t>(t)].second;
  return out;
}

}  // namespace

Eigen::MatrixXd aligned_latents(const Eigen::MatrixXd& view2_test,
                                const align::AlignmentMap& map) {
  if (map.inverse_kind == align::InverseKind::none) {
    throw std::invalid_argument("no inverse chosen on the alignment map");
  }
  if (view2_test.rows() != map.rows()) {
    throw std::invalid_argument("view-2 latent dimension does not match the map");
  }
  return map.inverse * view2_test;
}

double alignment_mse(const Eigen::MatrixXd& view1_test, const Eigen::MatrixXd& view2_test,
                     const align::AlignmentMap& map) {
  check_sample_counts(view1_test, view2_test);
  if (view1_test.cols() < 1) throw std::invalid_argument("need at least one test pair");
  if (view1_test.rows() != map.cols() || view2_test.rows() != map.rows()) {
    throw std::invalid_argument("latent dimensions do not match the map");
  }
  const Eigen::MatrixXd resid = view2_test - map.matrix * view1_test;
  double total = 0.0;
  for (Eigen::Index n = 0; n < resid.cols(); ++n) total += resid.col(n).squaredNorm();
  return total / static_cast<double>(resid.cols());
}

double r_squared(const Eigen::MatrixXd& view1_test, const Eigen::MatrixXd& view2_test,
                 const align::AlignmentMap& map, const Eigen::VectorXd& y_train_mean) {
  check_sample_counts(view1_test, view2_test);
  if (view1_test.cols() < 2) throw std::invalid_argument("need at least two test pairs");
  if (y_train_mean.size() != view2_test.rows()) {
    throw std::invalid_argument("train mean dimension does not match view-2 latents");
  }
  const double ss_res = (view2_test - map.matrix * view1_test).squaredNorm();
  const double ss_tot = (view2_test.colwise() - y_train_mean).squaredNorm();
  if (ss_tot == 0.0) {
    throw std::invalid_argument("zero total variance in view-2 test latents");
  }
  return 1.0 - ss_res / ss_tot;
}

double linear_cka(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  check_sample_counts(a, b);
  if (a.cols() < 3) throw std::invalid_argument("CKA needs at least three samples");
  const Eigen::MatrixXd ac = a.colwise() - Eigen::VectorXd(a.rowwise().mean());
  const Eigen::MatrixXd bc = b.colwise() - Eigen::VectorXd(b.rowwise().mean());
  const double na = (ac * ac.transpose()).norm();
  const double nb = (bc * bc.transpose()).norm();
  if (na == 0.0 || nb == 0.0) {
    throw std::invalid_argument("zero-variance input to CKA");
  }
  const double cross = (bc * ac.transpose()).squaredNorm();
  // Cauchy-Schwarz bounds the ratio by 1; trim floating-point overshoot.
  return std::min(1.0, cross / (na * nb));
}

double dsc(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int max_points,
           std::uint64_t seed) {
  check_sample_counts(a, b);
  if (a.cols() < 3) throw std::invalid_argument("DSC needs at least three samples");
  if (max_points < 3) throw std::invalid_argument("DSC max_points must be at least 3");

  Eigen::MatrixXd asub, bsub;
  const Eigen::MatrixXd* pa = &a;
  const Eigen::MatrixXd* pb = &b;
  if (a.cols() > max_points) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(a.cols()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    Rng rng(seed);
    rng.shuffle(idx);
    idx.resize(static_cast<std::size_t>(max_points));
    std::sort(idx.begin(), idx.end());
    asub.resize(a.rows(), max_points);
    bsub.resize(b.rows(), max_points);
    for (int t = 0; t < max_points; ++t) {
      asub.col(t) = a.col(idx[static_cast<std::size_t>(t)]);
      bsub.col(t) = b.col(idx[static_cast<std::size_t>(t)]);
    }
    pa = &asub;
    pb = &bsub;
  }

  const std::vector<double> da = pairwise_distances(*pa);
  const std::vector<double> db = pairwise_distances(*pb);
  for (const auto* d : {&da, &db}) {
    if (*std::max_element(d->begin(), d->end()) == *std::min_element(d->begin(), d->end())) {
      throw std::invalid_argument(
          "all pairwise distances are identical in one space; DSC is undefined");
    }
  }
  return pearson(average_ranks(da), average_ranks(db));
}

std::map<int, double> no_at_k(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                              const std::vector<int>& ks) {
  check_sample_counts(a, b);
  if (ks.empty()) throw std::invalid_argument("no k values given");
  const Eigen::Index m = a.cols();
  int kmax = 0;
  for (int k : ks) {
    if (k < 1) throw std::invalid_argument("k must be positive");
    if (k >= m) throw std::invalid_argument("k must be smaller than the number of test points");
    kmax = std::max(kmax, k);
  }

  // Per-point overlap counts for each k, filled in parallel; integer sums
  // keep the reduction independent of thread count.
  std::vector<int> sorted_ks(ks.begin(), ks.end());
  std::sort(sorted_ks.begin(), sorted_ks.end());
  sorted_ks.erase(std::unique(sorted_ks.begin(), sorted_ks.end()), sorted_ks.end());
  std::vector<std::vector<int>> overlap(sorted_ks.size(),
                                        std::vector<int>(static_cast<std::size_t>(m), 0));
  parallel_for(static_cast<int>(m), [&](int ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    const auto na = knn_of(a, static_cast<Eigen::Index>(i), kmax);
    const auto nb = knn_of(b, static_cast<Eigen::Index>(i), kmax);
    for (std::size_t t = 0; t < sorted_ks.size(); ++t) {
      const std::size_t k = static_cast<std::size_t>(sorted_ks[t]);
      std::unordered_set<Eigen::Index> sa(na.begin(), na.begin() + static_cast<long>(k));
      int c = 0;
      for (std::size_t q = 0; q < k; ++q) c += sa.count(nb[q]) ? 1 : 0;
      overlap[t][i] = c;
    }
  });

  std::map<int, double> out;
  for (std::size_t t = 0; t < sorted_ks.size(); ++t) {
    long long total = 0;
    for (int c : overlap[t]) total += c;
    out[sorted_ks[t]] =
        static_cast<double>(total) / (static_cast<double>(m) * sorted_ks[t]);
  }
  return out;
}

std::map<int, double> nos_at_k(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                               const std::vector<int>& ks) {
  std::map<int, double> out = no_at_k(a, b, ks);
  for (auto& [k, v] : out) v = 1.0 - v;
  return out;
}

IsomorphismReport report_on(const Eigen::MatrixXd& x_te, const Eigen::MatrixXd& y_te,
                            const align::AlignmentMap& map,
                            const Eigen::VectorXd& y_train_mean,
                            const MetricsConfig& config) {
  IsomorphismReport report;
  report.n_test = static_cast<int>(x_te.cols());
  report.mse = alignment_mse(x_te, y_te, map);
  report.r2 = r_squared(x_te, y_te, map, y_train_mean);

  const Eigen::MatrixXd back = aligned_latents(y_te, map);
  report.cka = linear_cka(x_te, back);
  report.dsc = dsc(x_te, back, config.dsc_max_points, config.dsc_seed);
  report.dsc_subsampled = x_te.cols() > config.dsc_max_points;
  report.no_at_k = no_at_k(x_te, back, config.ks);
  for (const auto& [k, v] : report.no_at_k) report.nos_at_k[k] = 1.0 - v;
  return report;
}

IsomorphismReport full_report(const latents::PairedDataset& data,
                              const align::AlignmentMap& map,
                              const std::optional<latents::StandardizationStats>& stats1,
                              const std::optional<latents::StandardizationStats>& stats2,
                              const MetricsConfig& config) {
  const std::vector<std::string> test_ids = data.ids_in(latents::Split::test);
  const std::vector<std::string> train_ids = data.ids_in(latents::Split::train);
  if (!map.fit_state_ids.empty()) {
    std::unordered_set<std::string> test_set(test_ids.begin(), test_ids.end());
    for (const auto& id : map.fit_state_ids) {
      if (test_set.count(id)) throw std::invalid_argument("fit/eval split overlap");
    }
  }

  const latents::LatentSet v1 =
      stats1 ? latents::apply_standardizer(data.view1, *stats1) : data.view1;
  const latents::LatentSet v2 =
      stats2 ? latents::apply_standardizer(data.view2, *stats2) : data.view2;

  const Eigen::MatrixXd x_te = latents::columns_for_ids(v1, test_ids);
  const Eigen::MatrixXd y_te = latents::columns_for_ids(v2, test_ids);
  const Eigen::MatrixXd y_tr = latents::columns_for_ids(v2, train_ids);
  return report_on(x_te, y_te, map, y_tr.rowwise().mean(), config);
}

nlohmann::json report_to_json(const IsomorphismReport& report) {
  nlohmann::json j;
  j["mse"] = report.mse;
  j["r2"] = report.r2;
  j["cka"] = report.cka;
  j["dsc"] = report.dsc;
  j["n_test"] = report.n_test;
  j["dsc_subsampled"] = report.dsc_subsampled;
  nlohmann::json no = nlohmann::json::object();
  nlohmann::json nos = nlohmann::json::object();
  for (const auto& [k, v] : report.no_at_k) no[std::to_string(k)] = v;
  for (const auto& [k, v] : report.nos_at_k) nos[std::to_string(k)] = v;
  j["no_at_k"] = no;
  j["nos_at_k"] = nos;
  return j;
}

}  // namespace latlink::metrics
