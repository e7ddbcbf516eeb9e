#include "latlink/align.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "latlink/matrix_io.hpp"
#include "latlink/util.hpp"

namespace latlink::align {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw std::invalid_argument(std::string("non-finite entries in ") + what);
}

// Fills singular_values and condition_number from an SVD of W.
void attach_spectrum(AlignmentMap& map) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(map.matrix);
  map.singular_values = svd.singularValues();
  const double smax = map.singular_values.size() ? map.singular_values(0) : 0.0;
  const double smin =
      map.singular_values.size() ? map.singular_values(map.singular_values.size() - 1) : 0.0;
  const double cutoff = rank_cutoff(smax, map.rows(), map.cols());
  map.condition_number = (smin > 0.0 && smin >= cutoff) ? smax / smin : kInf;
}

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& w) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(w, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double cutoff = rank_cutoff(sv.size() ? sv(0) : 0.0, w.rows(), w.cols());
  Eigen::VectorXd inv_sv(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    inv_sv(i) = (sv(i) > 0.0 && sv(i) >= cutoff) ? 1.0 / sv(i) : 0.0;
  }
  return svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose();
}

}  // namespace

std::string to_string(FitMethod m) {
  switch (m) {
    case FitMethod::ridge: return "ridge";
    case FitMethod::ols: return "ols";
    case FitMethod::procrustes: return "procrustes";
  }
  return "?";
}

std::string to_string(InverseKind k) {
  switch (k) {
    case InverseKind::none: return "none";
    case InverseKind::exact: return "exact";
    case InverseKind::pseudo: return "pseudo";
  }
  return "?";
}

double rank_cutoff(double sigma_max, Eigen::Index rows, Eigen::Index cols) {
  return sigma_max * static_cast<double>(std::max(rows, cols)) *
         std::numeric_limits<double>::epsilon();
}

AlignmentMap make_alignment_map(Eigen::MatrixXd w, FitMethod method, double lambda) {
  AlignmentMap map;
  map.matrix = std::move(w);
  map.method = method;
  map.lambda = lambda;
  attach_spectrum(map);
  return map;
}

AlignmentMap fit_ridge(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double lambda) {
  if (x.cols() != y.cols()) throw std::invalid_argument("X and Y must pair the same samples");
  if (x.cols() < 1) throw std::invalid_argument("need at least one paired sample");
  if (lambda < 0.0) throw std::invalid_argument("lambda must be nonnegative");
  require_finite(x, "X");
  require_finite(y, "Y");

  const Eigen::Index d1 = x.rows();
  Eigen::MatrixXd normal = x * x.transpose();
  normal.diagonal().array() += lambda;
  const Eigen::MatrixXd cross = y * x.transpose();  // d2 x d1

  AlignmentMap map;
  if (lambda == 0.0) {
    // An LLT can "succeed" on an exactly singular Gram matrix (roundoff
    // manufactures tiny positive pivots), so the lambda = 0 contract needs a
    // spectral rank certificate. The normal matrix is d1 x d1, so the SVD
    // stays cheap regardless of the sample count.
    Eigen::BDCSVD<Eigen::MatrixXd> svd(normal, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    const double cutoff = sv.size()
                              ? sv(0) * static_cast<double>(d1) * std::numeric_limits<double>::epsilon()
                              : 0.0;
    if ((sv.array() > cutoff).count() < d1) {
      throw std::invalid_argument(
          "X X^T is singular at lambda = 0; use lambda > 0 or a pseudo-solve");
    }
    map.matrix = svd.solve(cross.transpose()).transpose();
  } else {
    Eigen::LLT<Eigen::MatrixXd> llt(normal);
    if (llt.info() == Eigen::Success) {
      map.matrix = llt.solve(cross.transpose()).transpose();
    } else {
      // Positive lambda makes the normal matrix definite in exact
      // arithmetic; when the factorization still fails numerically, fall
      // back to a truncated SVD solve.
      Eigen::BDCSVD<Eigen::MatrixXd> svd(normal, Eigen::ComputeThinU | Eigen::ComputeThinV);
      const Eigen::VectorXd& sv = svd.singularValues();
      const double cutoff = sv.size()
                                ? sv(0) * static_cast<double>(d1) *
                                      std::numeric_limits<double>::epsilon()
                                : 0.0;
      Eigen::VectorXd inv_sv(sv.size());
      for (Eigen::Index i = 0; i < sv.size(); ++i) {
        inv_sv(i) = sv(i) > cutoff ? 1.0 / sv(i) : 0.0;
      }
      map.matrix =
          (svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose() * cross.transpose())
              .transpose();
    }
  }

  map.method = lambda > 0.0 ? FitMethod::ridge : FitMethod::ols;
  map.lambda = lambda;
  attach_spectrum(map);
  return map;
}

AlignmentMap fit_auto(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  try {
    return fit_ridge(x, y, 0.0);
  } catch (const std::invalid_argument&) {
    const double lambda = 1e-6 * (x * x.transpose()).trace() / static_cast<double>(x.rows());
    if (!(lambda > 0.0)) {
      // All-zero inputs: fall back to an absolute floor.
      return fit_ridge(x, y, 1e-6);
    }
    return fit_ridge(x, y, lambda);
  }
}

AlignmentMap fit_procrustes(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows()) {
    throw std::invalid_argument("procrustes requires equal latent dimensions");
  }
  if (x.cols() != y.cols()) throw std::invalid_argument("X and Y must pair the same samples");
  if (x.cols() < 1) throw std::invalid_argument("need at least one paired sample");
  require_finite(x, "X");
  require_finite(y, "Y");

  const Eigen::MatrixXd cross = y * x.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);

  AlignmentMap map;
  map.matrix = svd.matrixU() * svd.matrixV().transpose();
  map.method = FitMethod::procrustes;
  map.lambda = 0.0;
  attach_spectrum(map);
  return map;
}

AlignmentMap choose_inverse(AlignmentMap map) {
  if (map.matrix.size() == 0) throw std::invalid_argument("map is not fitted");
  const bool square = map.rows() == map.cols();
  if (square && map.condition_number <= map.tau) {
    map.inverse_kind = InverseKind::exact;
  } else {
    map.inverse_kind = InverseKind::pseudo;
  }
  // Both branches go through the SVD; with kappa <= tau and full rank no
  // singular value is truncated, so the pseudo path reduces to the inverse.
  map.inverse = pseudo_inverse(map.matrix);
  return map;
}

LinearProbe migrate_probe(const LinearProbe& probe, const AlignmentMap& map) {
  if (map.inverse_kind == InverseKind::none) {
    throw std::invalid_argument("choose_inverse must run before probe migration");
  }
  if (probe.weights.size() != map.cols()) {
    throw std::invalid_argument("probe dimension does not match map input dimension");
  }
  LinearProbe out;
  out.weights = map.inverse.transpose() * probe.weights;
  out.bias = probe.bias;
  return out;
}

namespace {

nlohmann::json stats_to_json(const latents::StandardizationStats& stats) {
  nlohmann::json j;
  j["mean"] = std::vector<double>(stats.mean.data(), stats.mean.data() + stats.mean.size());
  j["scale"] = std::vector<double>(stats.scale.data(), stats.scale.data() + stats.scale.size());
  return j;
}

latents::StandardizationStats stats_from_json(const nlohmann::json& j) {
  latents::StandardizationStats stats;
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto scale = j.at("scale").get<std::vector<double>>();
  stats.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  stats.scale = Eigen::Map<const Eigen::VectorXd>(scale.data(), static_cast<Eigen::Index>(scale.size()));
  return stats;
}

FitMethod method_from_string(const std::string& s) {
  if (s == "ridge") return FitMethod::ridge;
  if (s == "ols") return FitMethod::ols;
  if (s == "procrustes") return FitMethod::procrustes;
  throw std::runtime_error("unknown fit method: " + s);
}

InverseKind inverse_from_string(const std::string& s) {
  if (s == "none") return InverseKind::none;
  if (s == "exact") return InverseKind::exact;
  if (s == "pseudo") return InverseKind::pseudo;
  throw std::runtime_error("unknown inverse kind: " + s);
}

}  // namespace

void save_alignment(const AlignmentFile& file, const std::string& stem) {
  const AlignmentMap& map = file.map;
  nlohmann::json meta;
  meta["method"] = to_string(map.method);
  meta["lambda"] = map.lambda;
  meta["tau"] = map.tau;
  if (std::isfinite(map.condition_number)) {
    meta["condition_number"] = map.condition_number;
  } else {
    meta["condition_number"] = "inf";
  }
  meta["inverse_kind"] = to_string(map.inverse_kind);
  meta["singular_values"] = std::vector<double>(
      map.singular_values.data(), map.singular_values.data() + map.singular_values.size());
  meta["dims"] = {map.rows(), map.cols()};
  meta["standardized"] = map.standardized;
  meta["fit_state_ids"] = map.fit_state_ids;
  if (file.stats1) meta["view1_stats"] = stats_to_json(*file.stats1);
  if (file.stats2) meta["view2_stats"] = stats_to_json(*file.stats2);

  std::ofstream os(stem + ".json", std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + stem + ".json");
  os << meta.dump(2) << '\n';
  if (!os) throw std::runtime_error("write failure: " + stem + ".json");

  std::vector<matio::NamedMatrix> entries;
  entries.push_back({"W", map.matrix});
  if (map.inverse_kind != InverseKind::none) entries.push_back({"W_inv", map.inverse});
  matio::save_container(stem + ".bin", "ALNW", entries);
}

AlignmentFile load_alignment(const std::string& stem) {
  std::ifstream is(stem + ".json");
  if (!is) throw std::runtime_error("cannot open: " + stem + ".json");
  nlohmann::json meta = nlohmann::json::parse(is);

  AlignmentFile file;
  AlignmentMap& map = file.map;
  map.method = method_from_string(meta.at("method").get<std::string>());
  map.lambda = meta.at("lambda").get<double>();
  map.tau = meta.at("tau").get<double>();
  if (meta.at("condition_number").is_string()) {
    map.condition_number = kInf;
  } else {
    map.condition_number = meta.at("condition_number").get<double>();
  }
  map.inverse_kind = inverse_from_string(meta.at("inverse_kind").get<std::string>());
  const auto sv = meta.at("singular_values").get<std::vector<double>>();
  map.singular_values =
      Eigen::Map<const Eigen::VectorXd>(sv.data(), static_cast<Eigen::Index>(sv.size()));
  map.standardized = meta.at("standardized").get<bool>();
  map.fit_state_ids = meta.at("fit_state_ids").get<std::vector<std::string>>();
  if (meta.contains("view1_stats")) file.stats1 = stats_from_json(meta["view1_stats"]);
  if (meta.contains("view2_stats")) file.stats2 = stats_from_json(meta["view2_stats"]);

  const auto entries = matio::load_container(stem + ".bin", "ALNW");
  map.matrix = matio::find_matrix(entries, "W");
  if (map.inverse_kind != InverseKind::none) {
    map.inverse = matio::find_matrix(entries, "W_inv");
  }
  return file;
}

}  // namespace latlink::align
