#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace latlink::matio {

// Magic-tagged container of named matrices, used for alignment payloads
// ("ALNW") and toy-model checkpoints ("TJPA").
//
// Layout: magic (4 bytes), version byte 0x01, little-endian u32 entry count,
// then per entry: null-terminated UTF-8 name, u32 rows, u32 cols,
// rows*cols IEEE-754 little-endian 64-bit floats in column-major order.
struct NamedMatrix {
  std::string name;
  Eigen::MatrixXd value;
};

void save_container(const std::string& path, const char magic[4],
                    const std::vector<NamedMatrix>& entries);
std::vector<NamedMatrix> load_container(const std::string& path, const char magic[4]);

// Lookup by name; throws if absent.
const Eigen::MatrixXd& find_matrix(const std::vector<NamedMatrix>& entries,
                                   const std::string& name);
bool has_matrix(const std::vector<NamedMatrix>& entries, const std::string& name);

}  // namespace latlink::matio
