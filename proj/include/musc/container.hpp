#pragma once

// Tensor container file shared by checkpoints and dataset images.
//
//   line 1: "MUSC-TENSORS v1"
//   line 2: decimal byte length of the manifest
//   manifest: JSON {"meta": {...}, "entries": [{"name", "shape", "dtype",
//             "offset", "nbytes"}]}; offsets are relative to the first byte
//             after the manifest
//   payload: little-endian raw values, entries back to back

#include <cstdint>
#include <filesystem>
#include <map>
#include "json.hpp"
#include <string>
#include <vector>

#include "musc/params.hpp"
#include "musc/tensor.hpp"

namespace musc {

inline constexpr const char* kContainerMagic = "MUSC-TENSORS v1";

enum class DType { kF32, kF64, kU8 };
const char* dtype_name(DType d);
std::size_t dtype_bytes(DType d);

struct ContainerEntry {
  std::string name;
  Shape shape;
  DType dtype;
  std::uint64_t offset = 0;
  std::uint64_t nbytes = 0;
};

class ContainerWriter {
 public:
  void set_meta(nlohmann::json meta) { meta_ = std::move(meta); }
  void add(const std::string& name, const Tensor<float>& t);
  void add(const std::string& name, const Tensor<double>& t);
  void add_u8(const std::string& name, const Shape& shape, const std::vector<std::uint8_t>& values);
  // Writes atomically enough for our purposes (temp file then rename).
  void write(const std::filesystem::path& path) const;

 private:
  void append(const std::string& name, const Shape& shape, DType dtype, const void* data, std::size_t nbytes);
  nlohmann::json meta_ = nlohmann::json::object();
  std::vector<ContainerEntry> entries_;
  std::vector<char> payload_;
};

class ContainerReader {
 public:
  explicit ContainerReader(const std::filesystem::path& path);

  const nlohmann::json& meta() const { return meta_; }
  const std::vector<ContainerEntry>& entries() const { return entries_; }
  bool contains(const std::string& name) const { return index_.contains(name); }
  const ContainerEntry& entry(const std::string& name) const;

  // Converts stored values to T. u8 entries are scaled by 1/255.
  template <class T>
  Tensor<T> read(const std::string& name) const;
  std::vector<std::uint8_t> read_u8(const std::string& name) const;

 private:
  nlohmann::json meta_;
  std::vector<ContainerEntry> entries_;
  std::map<std::string, std::size_t> index_;
  std::vector<char> payload_;
};

// Writes every parameter of a store under its registered name.
template <class T>
void save_params(const std::filesystem::path& path, const ParamStore<T>& store, const nlohmann::json& meta);

// Loads values into an already-constructed store; names and shapes must match.
template <class T>
void load_params(const ContainerReader& reader, ParamStore<T>& store);

}  // namespace musc
