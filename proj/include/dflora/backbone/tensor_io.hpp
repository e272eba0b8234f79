#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dflora/common.hpp"

namespace dflora::backbone {

// A named, row-major tensor of doubles.
struct NamedTensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

  static NamedTensor from_matrix(std::string name, const Matrix& m) {
    NamedTensor t{std::move(name), {m.rows(), m.cols()}, {}};
    t.data.resize(static_cast<std::size_t>(m.size()));
    Eigen::Map<RowMatrix>(t.data.data(), m.rows(), m.cols()) = m;
    return t;
  }

  static NamedTensor from_vector(std::string name, const Vector& v) {
    return {std::move(name), {v.size()}, std::vector<double>(v.data(), v.data() + v.size())};
  }

  Matrix to_matrix() const {
    require(shape.size() == 2, "tensor '", name, "' is not a matrix");
    return Eigen::Map<const RowMatrix>(data.data(), shape[0], shape[1]);
  }

  Vector to_vector() const {
    require(shape.size() == 1, "tensor '", name, "' is not a vector");
    return Eigen::Map<const Vector>(data.data(), shape[0]);
  }
};

// Binary container layout (little-endian):
//   "DFLT" u32 version=1 u32 count
//   per tensor: u32 name_len, name bytes, u32 rank, i64 dims[rank], f64 data[numel]
// A text manifest (one "name<TAB>shape<TAB>offset<TAB>fnv1a" line per tensor,
// shape as AxBxC) is written next to it as <path>.manifest.
namespace detail {

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw ParseError(concat("tensor container '", path, "' is truncated"));
  return v;
}

}  // namespace detail

inline void write_tensors(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(concat("cannot open '", path, "' for writing"));
  std::ofstream manifest(path + ".manifest");
  if (!manifest) throw std::runtime_error(concat("cannot open '", path, ".manifest' for writing"));

  out.write("DFLT", 4);
  detail::put<std::uint32_t>(out, 1);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    require(static_cast<std::int64_t>(t.data.size()) == t.numel(), "tensor '", t.name,
            "' has ", t.data.size(), " values for shape of ", t.numel());
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) detail::put<std::int64_t>(out, d);
    const auto offset = static_cast<std::int64_t>(out.tellp());
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));

    Fnv1a h;
    h.update(t.data.data(), t.data.size() * sizeof(double));
    manifest << t.name << '\t';
    for (std::size_t i = 0; i < t.shape.size(); ++i) manifest << (i ? "x" : "") << t.shape[i];
    manifest << '\t' << offset << '\t' << std::hex << h.digest() << std::dec << '\n';
  }
  if (!out) throw std::runtime_error(concat("failed writing '", path, "'"));
}

inline std::vector<NamedTensor> read_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(concat("cannot open '", path, "'"));
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "DFLT", 4) != 0) {
    throw ParseError(concat("'", path, "' is not a tensor container"));
  }
  const auto version = detail::get<std::uint32_t>(in, path);
  if (version != 1) throw ParseError(concat("unsupported tensor container version ", version));
  const auto count = detail::get<std::uint32_t>(in, path);
  std::vector<NamedTensor> tensors(count);
  for (auto& t : tensors) {
    t.name.resize(detail::get<std::uint32_t>(in, path));
    in.read(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    t.shape.resize(detail::get<std::uint32_t>(in, path));
    for (auto& d : t.shape) {
      d = detail::get<std::int64_t>(in, path);
      if (d < 0) throw ParseError(concat("tensor '", t.name, "' has a negative dimension"));
    }
    t.data.resize(static_cast<std::size_t>(t.numel()));
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in) throw ParseError(concat("tensor container '", path, "' is truncated"));
  }
  return tensors;
}

inline std::map<std::string, NamedTensor> by_name(std::vector<NamedTensor> tensors) {
  std::map<std::string, NamedTensor> out;
  for (auto& t : tensors) {
    auto name = t.name;
    if (!out.emplace(name, std::move(t)).second) {
      throw ParseError(concat("duplicate tensor name '", name, "'"));
    }
  }
  return out;
}

}  // namespace dflora::backbone
