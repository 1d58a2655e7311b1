#pragma once

// Little-endian binary helpers shared by the embedding and checkpoint files.

#include <Eigen/Dense>

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "dor/errors.hpp"

namespace dor::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian hosts");

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("unexpected end of binary file");
  return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, std::uint64_t max_len = (1ULL << 32)) {
  const auto n = read_pod<std::uint64_t>(in);
  if (n > max_len) throw DataError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw DataError("unexpected end of binary file");
  return s;
}

// Raw row-major doubles, no shape prefix.
inline void write_values(std::ostream& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) write_pod(out, m(r, c));
}

inline void read_values(std::istream& in, Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = read_pod<double>(in);
}

// rows, cols (int64) then values.
inline void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  write_pod<std::int64_t>(out, m.rows());
  write_pod<std::int64_t>(out, m.cols());
  write_values(out, m);
}

inline Eigen::MatrixXd read_matrix(std::istream& in) {
  const auto rows = read_pod<std::int64_t>(in);
  const auto cols = read_pod<std::int64_t>(in);
  if (rows < 0 || cols < 0 || (rows > 0 && cols > (std::int64_t{1} << 40) / rows))
    throw DataError("implausible matrix shape in binary file");
  Eigen::MatrixXd m(rows, cols);
  read_values(in, m);
  return m;
}

}  // namespace dor::io
