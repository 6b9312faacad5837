#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mmt/core/error.hpp"
#include "mmt/core/hash.hpp"
#include "mmt/numerics/tape.hpp"
#include "mmt/numerics/tensor.hpp"

// Tensor file layout:
//
//   mmt-tensors v1
//   meta <key> <value...>            (zero or more)
//   tensor <name> <rank> <d0> .. <dn> <offset>
//   ...
//   data_bytes <n>
//   checksum fnv1a64 <hex>
//   end
//   <n bytes: float64 little-endian, tensors back to back>
//
// Offsets count float64 elements from the start of the data block.

namespace mmt::num {

struct NamedTensor {
  std::string name;
  Tensor<double> value;
};

struct TensorFile {
  std::map<std::string, std::string> meta;
  std::vector<NamedTensor> tensors;
};

namespace detail {

inline void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  char buf[8];
  std::memcpy(buf, &bits, 8);
  out.append(buf, 8);
}

inline double get_f64(const char* p) {
  uint64_t bits;
  std::memcpy(&bits, p, 8);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace detail

/// Writes to `path + ".tmp"` then renames, so readers never see a partial file.
inline void write_tensor_file(const std::string& path, const TensorFile& file) {
  std::string data;
  std::ostringstream header;
  header << "mmt-tensors v1\n";
  for (const auto& [k, v] : file.meta) header << "meta " << k << ' ' << v << '\n';
  size_t offset = 0;
  for (const auto& t : file.tensors) {
    if (t.name.find_first_of(" \n\t") != std::string::npos) {
      fail(ErrorKind::value, "tensor name contains whitespace: " + t.name);
    }
    header << "tensor " << t.name << ' ' << t.value.rank();
    for (size_t d : t.value.shape()) header << ' ' << d;
    header << ' ' << offset << '\n';
    for (double v : t.value.vec()) detail::put_f64(data, v);
    offset += t.value.size();
  }
  header << "data_bytes " << data.size() << '\n';
  header << "checksum fnv1a64 " << hex64(fnv1a64(data)) << '\n';
  header << "end\n";
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write " + tmp);
    out << header.str();
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) fail(ErrorKind::io, "write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::io, "cannot rename " + tmp + " -> " + path + ": " + ec.message());
}

inline TensorFile read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != "mmt-tensors v1") fail(ErrorKind::format, path + ": not a tensor file");
  TensorFile file;
  struct Pending {
    std::string name;
    Shape shape;
    size_t offset;
  };
  std::vector<Pending> pending;
  size_t data_bytes = 0;
  std::string checksum;
  for (;;) {
    if (!std::getline(in, line)) fail(ErrorKind::format, path + ": truncated header");
    if (line == "end") break;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls, value);
      if (!value.empty() && value[0] == ' ') value.erase(0, 1);
      file.meta[key] = value;
    } else if (kind == "tensor") {
      Pending p;
      size_t rank = 0;
      ls >> p.name >> rank;
      p.shape.resize(rank);
      for (auto& d : p.shape) ls >> d;
      ls >> p.offset;
      if (!ls) fail(ErrorKind::format, path + ": bad tensor line: " + line);
      pending.push_back(std::move(p));
    } else if (kind == "data_bytes") {
      ls >> data_bytes;
    } else if (kind == "checksum") {
      std::string algo;
      ls >> algo >> checksum;
    } else {
      fail(ErrorKind::format, path + ": unknown header line: " + line);
    }
  }
  std::string data(data_bytes, '\0');
  in.read(data.data(), static_cast<std::streamsize>(data_bytes));
  if (static_cast<size_t>(in.gcount()) != data_bytes) fail(ErrorKind::format, path + ": truncated data");
  if (hex64(fnv1a64(data)) != checksum) fail(ErrorKind::format, path + ": checksum mismatch");
  for (auto& p : pending) {
    const size_t n = shape_size(p.shape);
    if ((p.offset + n) * 8 > data.size()) fail(ErrorKind::format, path + ": tensor " + p.name + " out of bounds");
    std::vector<double> values(n);
    for (size_t i = 0; i < n; ++i) values[i] = detail::get_f64(data.data() + (p.offset + i) * 8);
    file.tensors.push_back({p.name, Tensor<double>(p.shape, std::move(values))});
  }
  return file;
}

template <class T>
void save_params(const ParamSet<T>& params, const std::string& path,
                 std::map<std::string, std::string> meta = {}) {
  TensorFile file;
  file.meta = std::move(meta);
  for (size_t i = 0; i < params.size(); ++i) {
    file.tensors.push_back({params.name(i), params.value(i).template cast<double>()});
  }
  write_tensor_file(path, file);
}

/// Loads values into an existing ParamSet; names and shapes must match.
template <class T>
void load_params_into(ParamSet<T>& params, const std::string& path) {
  const auto file = read_tensor_file(path);
  if (file.tensors.size() != params.size()) {
    fail(ErrorKind::format, path + ": has " + std::to_string(file.tensors.size()) +
                                " tensors, model expects " + std::to_string(params.size()));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& t = file.tensors[i];
    if (t.name != params.name(i) || t.value.shape() != params.value(i).shape()) {
      fail(ErrorKind::format, path + ": tensor " + t.name + shape_str(t.value.shape()) +
                                  " does not match " + params.name(i) + shape_str(params.value(i).shape()));
    }
    params.value(i) = t.value.template cast<T>();
  }
}

}  // namespace mmt::num
