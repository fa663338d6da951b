#include "deskmvs/numerics/serialize.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace deskmvs {

namespace {

constexpr std::array<char, 8> kMagic{'D', 'M', 'V', 'S', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T v) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  std::array<char, sizeof(T)> bytes;
  if (!in.read(bytes.data(), sizeof(T))) throw IoError("unexpected end of tensor stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T v;
  std::memcpy(&v, bytes.data(), sizeof(T));
  return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  if (t.rank() > 255) throw ShapeError("write_tensor: rank too large");
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype()));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) put<std::int64_t>(out, e);
  if (t.dtype() == DType::kFloat32) {
    for (double v : t.values()) put<float>(out, static_cast<float>(v));
  } else {
    for (double v : t.values()) put<double>(out, v);
  }
  if (!out) throw IoError("write_tensor: stream error");
}

Tensor read_tensor(std::istream& in) {
  const auto code = get<std::uint8_t>(in);
  if (code != 1 && code != 2) throw IoError("read_tensor: unknown dtype code " + std::to_string(code));
  const auto rank = get<std::uint8_t>(in);
  Shape shape(rank);
  for (auto& e : shape) {
    e = get<std::int64_t>(in);
    if (e < 0) throw IoError("read_tensor: negative extent");
  }
  Tensor t(shape);
  for (auto& v : t.values()) v = code == 1 ? static_cast<double>(get<float>(in)) : get<double>(in);
  if (code == 1) t.set_dtype(DType::kFloat32);
  return t;
}

void save_checkpoint(const std::filesystem::path& path, const ParamList& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const Param* p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_tensor(out, p->value);
  }
  if (!out) throw IoError("error writing " + path.string());
}

std::map<std::string, Tensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw IoError(path.string() + ": not a checkpoint");
  const auto count = get<std::uint32_t>(in);
  std::map<std::string, Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw IoError(path.string() + ": truncated name");
    out.emplace(std::move(name), read_tensor(in));
  }
  return out;
}

void load_checkpoint(const std::filesystem::path& path, const ParamList& params) {
  auto stored = read_checkpoint(path);
  for (Param* p : params) {
    auto it = stored.find(p->name);
    if (it == stored.end()) throw IoError(path.string() + ": missing param " + p->name);
    if (!it->second.same_shape(p->value)) {
      throw ShapeError(p->name + ": checkpoint shape " + shape_string(it->second.shape()) + " vs model " +
                       shape_string(p->value.shape()));
    }
    p->value = it->second;
  }
}

}  // namespace deskmvs
