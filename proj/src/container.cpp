#include "musc/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace musc {

static_assert(std::endian::native == std::endian::little, "container IO assumes a little-endian host");

const char* dtype_name(DType d) {
  switch (d) {
    case DType::kF32: return "f32";
    case DType::kF64: return "f64";
    case DType::kU8: return "u8";
  }
  return "?";
}

std::size_t dtype_bytes(DType d) {
  switch (d) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kU8: return 1;
  }
  return 0;
}

namespace {

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::kF32;
  if (s == "f64") return DType::kF64;
  if (s == "u8") return DType::kU8;
  throw DataError("container: unknown dtype '" + s + "'");
}

}  // namespace

void ContainerWriter::append(const std::string& name, const Shape& shape, DType dtype, const void* data,
                             std::size_t nbytes) {
  for (const auto& e : entries_) require(e.name != name, "container: duplicate entry '" + name + "'");
  require(nbytes == shape_size(shape) * dtype_bytes(dtype), "container: byte count does not match shape for '" + name + "'");
  entries_.push_back({name, shape, dtype, payload_.size(), nbytes});
  const auto* p = static_cast<const char*>(data);
  payload_.insert(payload_.end(), p, p + nbytes);
}

void ContainerWriter::add(const std::string& name, const Tensor<float>& t) {
  append(name, t.shape(), DType::kF32, t.ptr(), t.size() * 4);
}

void ContainerWriter::add(const std::string& name, const Tensor<double>& t) {
  append(name, t.shape(), DType::kF64, t.ptr(), t.size() * 8);
}

void ContainerWriter::add_u8(const std::string& name, const Shape& shape, const std::vector<std::uint8_t>& values) {
  append(name, shape, DType::kU8, values.data(), values.size());
}

void ContainerWriter::write(const std::filesystem::path& path) const {
  nlohmann::json manifest;
  manifest["meta"] = meta_;
  manifest["entries"] = nlohmann::json::array();
  for (const auto& e : entries_)
    manifest["entries"].push_back(
        {{"name", e.name}, {"shape", e.shape}, {"dtype", dtype_name(e.dtype)}, {"offset", e.offset}, {"nbytes", e.nbytes}});
  const std::string text = manifest.dump();
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("container: cannot open '" + tmp.string() + "' for writing");
    out << kContainerMagic << '\n' << text.size() << '\n' << text;
    out.write(payload_.data(), static_cast<std::streamsize>(payload_.size()));
    if (!out) throw DataError("container: write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

ContainerReader::ContainerReader(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("container: cannot open '" + path.string() + "'");
  std::string magic, len_line;
  std::getline(in, magic);
  if (magic != kContainerMagic) throw DataError("container: bad header in '" + path.string() + "'");
  std::getline(in, len_line);
  std::size_t len = 0;
  try {
    len = std::stoull(len_line);
  } catch (const std::exception&) {
    throw DataError("container: bad manifest length in '" + path.string() + "'");
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("container: truncated manifest in '" + path.string() + "'");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("container: manifest parse error: ") + e.what());
  }
  meta_ = manifest.value("meta", nlohmann::json::object());
  std::ostringstream rest;
  rest << in.rdbuf();
  const std::string blob = rest.str();
  payload_.assign(blob.begin(), blob.end());
  for (const auto& j : manifest.at("entries")) {
    ContainerEntry e{j.at("name").get<std::string>(), j.at("shape").get<Shape>(),
                     parse_dtype(j.at("dtype").get<std::string>()), j.at("offset").get<std::uint64_t>(),
                     j.at("nbytes").get<std::uint64_t>()};
    if (e.offset + e.nbytes > payload_.size() || e.nbytes != shape_size(e.shape) * dtype_bytes(e.dtype))
      throw DataError("container: entry '" + e.name + "' exceeds payload or mismatches its shape");
    index_[e.name] = entries_.size();
    entries_.push_back(std::move(e));
  }
}

const ContainerEntry& ContainerReader::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("container: no entry named '" + name + "'");
  return entries_[it->second];
}

template <class T>
Tensor<T> ContainerReader::read(const std::string& name) const {
  const auto& e = entry(name);
  const std::size_t n = shape_size(e.shape);
  std::vector<T> out(n);
  const char* src = payload_.data() + e.offset;
  for (std::size_t i = 0; i < n; ++i) {
    switch (e.dtype) {
      case DType::kF32: {
        float v;
        std::memcpy(&v, src + 4 * i, 4);
        out[i] = T(v);
        break;
      }
      case DType::kF64: {
        double v;
        std::memcpy(&v, src + 8 * i, 8);
        out[i] = T(v);
        break;
      }
      case DType::kU8:
        out[i] = T(static_cast<unsigned char>(src[i])) / T(255);
        break;
    }
  }
  return Tensor<T>(e.shape, std::move(out));
}

std::vector<std::uint8_t> ContainerReader::read_u8(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::kU8) throw DataError("container: entry '" + name + "' is not u8");
  const auto* p = reinterpret_cast<const std::uint8_t*>(payload_.data() + e.offset);
  return std::vector<std::uint8_t>(p, p + e.nbytes);
}

template <class T>
void save_params(const std::filesystem::path& path, const ParamStore<T>& store, const nlohmann::json& meta) {
  ContainerWriter w;
  nlohmann::json m = meta;
  nlohmann::json frozen = nlohmann::json::array();
  for (std::size_t i = 0; i < store.size(); ++i) {
    w.add(store.name(i), store.tensor(i));
    if (store.frozen(i)) frozen.push_back(store.name(i));
  }
  m["frozen"] = frozen;
  w.set_meta(std::move(m));
  w.write(path);
}

template <class T>
void load_params(const ContainerReader& reader, ParamStore<T>& store) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& name = store.name(i);
    if (!reader.contains(name)) throw DataError("checkpoint: missing parameter '" + name + "'");
    Tensor<T> t = reader.read<T>(name);
    if (t.shape() != store.tensor(i).shape())
      throw DataError("checkpoint: parameter '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                      shape_str(store.tensor(i).shape()));
    store.tensor(i) = std::move(t);
  }
}

template Tensor<float> ContainerReader::read<float>(const std::string&) const;
template Tensor<double> ContainerReader::read<double>(const std::string&) const;
template void save_params(const std::filesystem::path&, const ParamStore<float>&, const nlohmann::json&);
template void save_params(const std::filesystem::path&, const ParamStore<double>&, const nlohmann::json&);
template void load_params(const ContainerReader&, ParamStore<float>&);
template void load_params(const ContainerReader&, ParamStore<double>&);

}  // namespace musc
