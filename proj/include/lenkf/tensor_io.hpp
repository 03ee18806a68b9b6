#pragma once

#include "lenkf/common.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

namespace lenkf {

/// On-disk tensor format (bit-exact round trip):
///   bytes 0..7   magic "LENKFT64"
///   bytes 8..11  uint32 little-endian: number of dimensions d
///   next d*8     uint64 little-endian: extent of each dimension
///   payload      IEEE-754 float64 little-endian, row-major
///                (last dimension varies fastest)
struct Tensor {
  std::vector<std::uint64_t> shape;
  std::vector<double> data;  // row-major

  std::uint64_t size() const {
    std::uint64_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
};

namespace detail {
inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
inline std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
}  // namespace detail

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  require(t.data.size() == t.size(), "save_tensor: shape/data mismatch for " + path.string());
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "save_tensor: cannot open " + path.string());
  os.write("LENKFT64", 8);
  detail::write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
  for (auto s : t.shape) detail::write_u64(os, s);
  static_assert(sizeof(double) == 8);
  // Assumes a little-endian host with IEEE-754 doubles.
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * 8));
  require(os.good(), "save_tensor: write failed for " + path.string());
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "load_tensor: cannot open " + path.string());
  char magic[8];
  is.read(magic, 8);
  require(is.good() && std::memcmp(magic, "LENKFT64", 8) == 0,
          "load_tensor: bad magic in " + path.string());
  Tensor t;
  std::uint32_t ndim = detail::read_u32(is);
  require(ndim <= 8, "load_tensor: implausible rank in " + path.string());
  t.shape.resize(ndim);
  for (auto& s : t.shape) s = detail::read_u64(is);
  t.data.resize(t.size());
  is.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * 8));
  require(is.good(), "load_tensor: truncated payload in " + path.string());
  return t;
}

/// Matrix <-> tensor helpers. Tensors are row-major on disk, Eigen is
/// column-major in memory, so these transpose the storage order.
inline Tensor tensor_from_matrix(const Mat& m) {
  Tensor t;
  t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.data.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      t.data[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
  return t;
}

inline Mat matrix_from_tensor(const Tensor& t) {
  require(t.shape.size() == 2, "matrix_from_tensor: rank != 2");
  Mat m(static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1]));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = t.data[static_cast<std::size_t>(i * m.cols() + j)];
  return m;
}

inline void save_matrix(const std::filesystem::path& path, const Mat& m) {
  save_tensor(path, tensor_from_matrix(m));
}

inline Mat load_matrix(const std::filesystem::path& path) {
  return matrix_from_tensor(load_tensor(path));
}

inline void save_vector(const std::filesystem::path& path, const Vec& v) {
  Tensor t;
  t.shape = {static_cast<std::uint64_t>(v.size())};
  t.data.assign(v.data(), v.data() + v.size());
  save_tensor(path, t);
}

inline Vec load_vector(const std::filesystem::path& path) {
  Tensor t = load_tensor(path);
  require(t.shape.size() == 1, "load_vector: rank != 1");
  return Eigen::Map<const Vec>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
}

}  // namespace lenkf
