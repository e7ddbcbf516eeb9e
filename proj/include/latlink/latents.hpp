#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace latlink::latents {

// d x N matrix of latent vectors; column n is the latent of state_ids[n].
// Invariants (enforced by make_latent_set and every producer in this
// library): state_ids are unique, all values finite.
struct LatentSet {
  Eigen::MatrixXd values;              // d x N
  std::vector<std::string> state_ids;  // N
  std::string view_tag;                // label of the observation function

  Eigen::Index dim() const { return values.rows(); }
  Eigen::Index count() const { return values.cols(); }
};

// Validates and assembles a LatentSet. Throws std::invalid_argument on
// duplicate state_ids, non-finite entries, or id/column count mismatch.
LatentSet make_latent_set(Eigen::MatrixXd values, std::vector<std::string> state_ids,
                          std::string view_tag = {});

enum class Format { csv, bin };

// CSV: header "state_id,z0,...", one row per latent vector, values written
// with 17 significant digits. bin: magic "LTNT", version 0x01, u32 d, u32 N,
// N null-terminated ids, d*N little-endian f64 column-major. Neither format
// persists view_tag; pass it to load_latents if needed.
LatentSet load_latents(const std::string& path, Format format,
                       std::string view_tag = {});
void save_latents(const LatentSet& set, const std::string& path, Format format);

enum class Split { train, test };

// Two views paired by state_id, plus a train/test partition of the shared
// ids. pair_ids preserves view1 order; splitting is by state_id only.
struct PairedDataset {
  LatentSet view1;
  LatentSet view2;
  std::vector<std::string> pair_ids;
  std::unordered_map<std::string, Split> split;

  std::vector<std::string> ids_in(Split s) const;
};

// Intersects the two id sets and assigns each shared id to train with
// probability split_fraction via a stable hash of (state_id, seed), so the
// assignment of an id never changes when other states are added or removed.
PairedDataset pair_by_state(const LatentSet& view1, const LatentSet& view2,
                            double split_fraction, std::uint64_t seed);

// Columns of `set` for the given ids, in id order. Throws if an id is absent.
Eigen::MatrixXd columns_for_ids(const LatentSet& set,
                                const std::vector<std::string>& ids);

// Per-dimension mean and standard deviation (population convention,
// divide by N), floored at 1e-8 to guard constant dimensions.
struct StandardizationStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  Eigen::Index dim() const { return mean.size(); }
};

inline constexpr double kScaleFloor = 1e-8;

StandardizationStats fit_standardizer(const LatentSet& set,
                                      const std::vector<std::string>& train_ids);
LatentSet apply_standardizer(const LatentSet& set, const StandardizationStats& stats);

}  // namespace latlink::latents
