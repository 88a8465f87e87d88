#include "rmc/checkpoint.hpp"

#include <map>

#include "binio.hpp"

namespace rmc {

namespace {
constexpr char kMagic[4] = {'R', 'M', 'C', 'W'};
}

template <typename T>
void save_checkpoint(const std::string& path, const StateDict<T>& state) {
  detail::ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<uint32_t>(state.params.size() + state.buffers.size()));
  for (const auto* list : {&state.params, &state.buffers})
    for (const auto& [name, t] : *list) {
      if (name.size() > 0xffff) throw std::invalid_argument("tensor name too long: " + name);
      w.u16(static_cast<uint16_t>(name.size()));
      w.bytes(name.data(), name.size());
      w.u8(static_cast<uint8_t>(t.rank()));
      for (int64_t e : t.shape()) w.u32(static_cast<uint32_t>(e));
      for (T v : t.data()) w.f32(static_cast<float>(v));
    }
  w.commit(path);
}

std::vector<NamedTensor<float>> read_checkpoint(const std::string& path) {
  auto r = detail::ByteReader::from_file(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(FormatError::Kind::BadMagic, path + ": not an RMCW file");
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError(FormatError::Kind::BadVersion, path + ": unsupported checkpoint version " + std::to_string(version));
  const uint32_t count = r.u32();
  std::vector<NamedTensor<float>> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    std::string name(r.u16(), '\0');
    r.bytes(name.data(), name.size());
    const uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& e : shape) e = r.u32();
    if (rank == 0 || shape_numel(shape) <= 0)
      throw FormatError(FormatError::Kind::Mismatch, path + ": tensor " + name + " has empty shape");
    if (static_cast<size_t>(shape_numel(shape)) * 4 > r.remaining())
      throw FormatError(FormatError::Kind::Truncated, path + ": truncated inside tensor " + name);
    std::vector<float> v(static_cast<size_t>(shape_numel(shape)));
    r.f32s(v);
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(v))});
  }
  if (r.remaining() != 0)
    throw FormatError(FormatError::Kind::Mismatch, path + ": " + std::to_string(r.remaining()) + " trailing bytes");
  return out;
}

template <typename T>
void load_checkpoint(const std::string& path, const StateDict<T>& state) {
  auto stored = read_checkpoint(path);
  std::map<std::string, const NamedTensor<float>*> by_name;
  for (const auto& t : stored) by_name[t.name] = &t;
  size_t matched = 0;
  for (const auto* list : {&state.params, &state.buffers})
    for (const auto& [name, t] : *list) {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw FormatError(FormatError::Kind::Mismatch, path + ": missing tensor " + name);
      const Tensor& src = it->second->tensor;
      if (src.shape() != t.shape())
        throw FormatError(FormatError::Kind::Mismatch, path + ": tensor " + name + " has shape " +
                                                           shape_str(src.shape()) + " in checkpoint but " +
                                                           shape_str(t.shape()) + " in model");
      auto dst = t.data();
      auto s = src.data();
      for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(s[i]);
      ++matched;
    }
  if (matched != stored.size())
    throw FormatError(FormatError::Kind::Mismatch,
                      path + ": checkpoint holds " + std::to_string(stored.size()) + " tensors, model expects " +
                          std::to_string(matched));
}

template void save_checkpoint<float>(const std::string&, const StateDict<float>&);
template void save_checkpoint<double>(const std::string&, const StateDict<double>&);
template void load_checkpoint<float>(const std::string&, const StateDict<float>&);
template void load_checkpoint<double>(const std::string&, const StateDict<double>&);

}  // namespace rmc
