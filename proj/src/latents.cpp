#include "latlink/latents.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "latlink/util.hpp"

namespace latlink::latents {

namespace {

std::unordered_map<std::string, Eigen::Index> id_index(const LatentSet& set) {
  std::unordered_map<std::string, Eigen::Index> idx;
  idx.reserve(set.state_ids.size());
  for (Eigen::Index i = 0; i < set.count(); ++i) idx.emplace(set.state_ids[i], i);
  return idx;
}

double parse_double(std::string_view tok, const std::string& context) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last) {
    throw std::runtime_error("malformed number '" + std::string(tok) + "' " + context);
  }
  return v;
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("truncated bin latent file: " + path);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

}  // namespace

LatentSet make_latent_set(Eigen::MatrixXd values, std::vector<std::string> state_ids,
                          std::string view_tag) {
  if (static_cast<size_t>(values.cols()) != state_ids.size()) {
    throw std::invalid_argument("state_id count does not match column count");
  }
  if (values.rows() < 1 || values.cols() < 1) {
    throw std::invalid_argument("latent set must have positive dim and count");
  }
  if (!values.allFinite()) {
    throw std::invalid_argument("non-finite entry in latent set");
  }
  std::unordered_set<std::string> seen;
  seen.reserve(state_ids.size());
  for (const auto& id : state_ids) {
    if (!seen.insert(id).second) {
      throw std::invalid_argument("duplicate state_id: " + id);
    }
  }
  LatentSet set;
  set.values = std::move(values);
  set.state_ids = std::move(state_ids);
  set.view_tag = std::move(view_tag);
  return set;
}

namespace {

LatentSet load_csv(const std::string& path, std::string view_tag) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string_view> fields;
  auto split_line = [&fields](const std::string& l) {
    fields.clear();
    size_t start = 0;
    while (true) {
      const size_t comma = l.find(',', start);
      if (comma == std::string::npos) {
        fields.emplace_back(l.data() + start, l.size() - start);
        break;
      }
      fields.emplace_back(l.data() + start, comma - start);
      start = comma + 1;
    }
  };

  split_line(line);
  if (fields.size() < 2 || fields[0] != "state_id") {
    throw std::runtime_error("malformed header in " + path +
                             " (expected 'state_id,z0,...')");
  }
  const size_t dim = fields.size() - 1;
  for (size_t j = 0; j < dim; ++j) {
    const std::string expected = "z" + std::to_string(j);
    if (fields[j + 1] != expected) {
      throw std::runtime_error("malformed header in " + path + ": column " +
                               std::to_string(j + 1) + " is '" +
                               std::string(fields[j + 1]) + "', expected '" +
                               expected + "'");
    }
  }

  std::vector<std::string> ids;
  std::vector<double> data;
  size_t row = 0;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    split_line(line);
    if (fields.size() != dim + 1) {
      throw std::runtime_error("dimension mismatch at row " + std::to_string(row) +
                               " of " + path + ": expected " + std::to_string(dim) +
                               " values");
    }
    ids.emplace_back(fields[0]);
    for (size_t j = 0; j < dim; ++j) {
      data.push_back(parse_double(fields[j + 1], "at row " + std::to_string(row) +
                                                     " of " + path));
    }
  }
  if (ids.empty()) throw std::runtime_error("no data rows in " + path);

  Eigen::MatrixXd values(static_cast<Eigen::Index>(dim),
                         static_cast<Eigen::Index>(ids.size()));
  for (size_t n = 0; n < ids.size(); ++n) {
    for (size_t j = 0; j < dim; ++j) {
      values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(n)) =
          data[n * dim + j];
    }
  }
  return make_latent_set(std::move(values), std::move(ids), std::move(view_tag));
}

LatentSet load_bin(const std::string& path, std::string view_tag) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "LTNT", 4) != 0) {
    throw std::runtime_error("bad magic in " + path + " (expected LTNT)");
  }
  char version;
  is.get(version);
  if (!is || version != '\x01') throw std::runtime_error("unsupported version in " + path);
  const std::uint32_t d = get_u32(is, path);
  const std::uint32_t n = get_u32(is, path);
  if (d == 0 || n == 0) throw std::runtime_error("zero dimension or count in " + path);

  std::vector<std::string> ids(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    char c;
    while (is.get(c) && c != '\0') ids[i].push_back(c);
    if (!is) throw std::runtime_error("truncated state_id table in " + path);
  }
  Eigen::MatrixXd values(d, n);
  std::vector<std::uint64_t> raw(static_cast<size_t>(d) * n);
  is.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size() * 8));
  if (!is) throw std::runtime_error("truncated payload in " + path);
  size_t k = 0;
  for (std::uint32_t c = 0; c < n; ++c) {
    for (std::uint32_t r = 0; r < d; ++r) {
      std::uint64_t u = raw[k++];
      if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
      double v;
      std::memcpy(&v, &u, 8);
      values(r, c) = v;
    }
  }
  return make_latent_set(std::move(values), std::move(ids), std::move(view_tag));
}

void save_csv(const LatentSet& set, const std::string& path) {
  for (const auto& id : set.state_ids) {
    if (id.find_first_of(",\r\n") != std::string::npos || id.find('\0') != std::string::npos) {
      throw std::runtime_error("state_id not representable in csv: " + id);
    }
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "state_id";
  for (Eigen::Index j = 0; j < set.dim(); ++j) os << ",z" << j;
  os << '\n';
  for (Eigen::Index n = 0; n < set.count(); ++n) {
    os << set.state_ids[static_cast<size_t>(n)];
    for (Eigen::Index j = 0; j < set.dim(); ++j) {
      os << ',' << format_double(set.values(j, n));
    }
    os << '\n';
  }
  if (!os) throw std::runtime_error("write failure: " + path);
}

void save_bin(const LatentSet& set, const std::string& path) {
  for (const auto& id : set.state_ids) {
    if (id.find('\0') != std::string::npos) {
      throw std::runtime_error("state_id contains NUL byte: " + id);
    }
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write("LTNT", 4);
  os.put('\x01');
  put_u32(os, static_cast<std::uint32_t>(set.dim()));
  put_u32(os, static_cast<std::uint32_t>(set.count()));
  for (const auto& id : set.state_ids) {
    os.write(id.data(), static_cast<std::streamsize>(id.size()));
    os.put('\0');
  }
  for (Eigen::Index c = 0; c < set.count(); ++c) {
    for (Eigen::Index r = 0; r < set.dim(); ++r) {
      std::uint64_t u;
      const double v = set.values(r, c);
      std::memcpy(&u, &v, 8);
      if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
      os.write(reinterpret_cast<const char*>(&u), 8);
    }
  }
  if (!os) throw std::runtime_error("write failure: " + path);
}

}  // namespace

LatentSet load_latents(const std::string& path, Format format, std::string view_tag) {
  return format == Format::csv ? load_csv(path, std::move(view_tag))
                               : load_bin(path, std::move(view_tag));
}

void save_latents(const LatentSet& set, const std::string& path, Format format) {
  if (format == Format::csv) {
    save_csv(set, path);
  } else {
    save_bin(set, path);
  }
}

std::vector<std::string> PairedDataset::ids_in(Split s) const {
  std::vector<std::string> out;
  for (const auto& id : pair_ids) {
    if (split.at(id) == s) out.push_back(id);
  }
  return out;
}

PairedDataset pair_by_state(const LatentSet& view1, const LatentSet& view2,
                            double split_fraction, std::uint64_t seed) {
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw std::invalid_argument("split_fraction must lie in (0,1)");
  }
  const auto idx2 = id_index(view2);
  std::vector<std::string> shared;
  for (const auto& id : view1.state_ids) {
    if (idx2.count(id)) shared.push_back(id);
  }
  if (shared.size() < 2) {
    throw std::invalid_argument("fewer than 2 shared states between views");
  }

  PairedDataset data;
  data.view1 = view1;
  data.view2 = view2;
  data.pair_ids = shared;
  const std::string seed_tag = ":" + std::to_string(seed);
  size_t n_train = 0;
  for (const auto& id : shared) {
    const std::uint64_t h = fnv1a64(id + seed_tag);
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    const Split s = (u < split_fraction) ? Split::train : Split::test;
    if (s == Split::train) ++n_train;
    data.split.emplace(id, s);
  }
  if (n_train == 0 || n_train == shared.size()) {
    throw std::invalid_argument("split_fraction yields an empty train or test split");
  }
  return data;
}

Eigen::MatrixXd columns_for_ids(const LatentSet& set,
                                const std::vector<std::string>& ids) {
  const auto idx = id_index(set);
  Eigen::MatrixXd out(set.dim(), static_cast<Eigen::Index>(ids.size()));
  for (size_t i = 0; i < ids.size(); ++i) {
    auto it = idx.find(ids[i]);
    if (it == idx.end()) throw std::invalid_argument("state_id not in set: " + ids[i]);
    out.col(static_cast<Eigen::Index>(i)) = set.values.col(it->second);
  }
  return out;
}

StandardizationStats fit_standardizer(const LatentSet& set,
                                      const std::vector<std::string>& train_ids) {
  if (train_ids.empty()) throw std::invalid_argument("empty train set");
  const Eigen::MatrixXd cols = columns_for_ids(set, train_ids);
  StandardizationStats stats;
  stats.mean = cols.rowwise().mean();
  const Eigen::ArrayXd var =
      (cols.colwise() - stats.mean).array().square().rowwise().mean();
  stats.scale = var.sqrt().max(kScaleFloor).matrix();
  return stats;
}

LatentSet apply_standardizer(const LatentSet& set, const StandardizationStats& stats) {
  if (stats.dim() != set.dim()) {
    throw std::invalid_argument("standardizer dimension does not match latent set");
  }
  LatentSet out = set;
  out.values = ((set.values.colwise() - stats.mean).array().colwise() /
                stats.scale.array())
                   .matrix();
  return out;
}

}  // namespace latlink::latents
