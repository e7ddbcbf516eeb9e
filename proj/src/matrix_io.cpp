#include "latlink/matrix_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace latlink::matio {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("truncated container: expected u32");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  if constexpr (std::endian::native == std::endian::big) {
    u = __builtin_bswap64(u);
  }
  os.write(reinterpret_cast<const char*>(&u), 8);
}

double get_f64(std::istream& is) {
  std::uint64_t u;
  is.read(reinterpret_cast<char*>(&u), 8);
  if (!is) throw std::runtime_error("truncated container: expected f64");
  if constexpr (std::endian::native == std::endian::big) {
    u = __builtin_bswap64(u);
  }
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

std::string get_cstring(std::istream& is) {
  std::string s;
  char c;
  while (is.get(c)) {
    if (c == '\0') return s;
    s.push_back(c);
  }
  throw std::runtime_error("truncated container: unterminated string");
}

}  // namespace

void save_container(const std::string& path, const char magic[4],
                    const std::vector<NamedMatrix>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(magic, 4);
  os.put('\x01');
  put_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    os.put('\0');
    put_u32(os, static_cast<std::uint32_t>(e.value.rows()));
    put_u32(os, static_cast<std::uint32_t>(e.value.cols()));
    for (Eigen::Index c = 0; c < e.value.cols(); ++c) {
      for (Eigen::Index r = 0; r < e.value.rows(); ++r) {
        put_f64(os, e.value(r, c));
      }
    }
  }
  if (!os) throw std::runtime_error("write failure: " + path);
}

std::vector<NamedMatrix> load_container(const std::string& path, const char magic[4]) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char got[4];
  is.read(got, 4);
  if (!is || std::memcmp(got, magic, 4) != 0) {
    throw std::runtime_error("bad magic in " + path + " (expected " +
                             std::string(magic, 4) + ")");
  }
  char version;
  is.get(version);
  if (!is || version != '\x01') throw std::runtime_error("unsupported container version in " + path);
  const std::uint32_t count = get_u32(is);
  std::vector<NamedMatrix> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedMatrix e;
    e.name = get_cstring(is);
    const std::uint32_t rows = get_u32(is);
    const std::uint32_t cols = get_u32(is);
    e.value.resize(rows, cols);
    for (std::uint32_t c = 0; c < cols; ++c) {
      for (std::uint32_t r = 0; r < rows; ++r) {
        e.value(r, c) = get_f64(is);
      }
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

const Eigen::MatrixXd& find_matrix(const std::vector<NamedMatrix>& entries,
                                   const std::string& name) {
  for (const auto& e : entries) {
    if (e.name == name) return e.value;
  }
  throw std::runtime_error("container entry not found: " + name);
}

bool has_matrix(const std::vector<NamedMatrix>& entries, const std::string& name) {
  for (const auto& e : entries) {
    if (e.name == name) return true;
  }
  return false;
}

}  // namespace latlink::matio
