#include "deskmvs/scenes/dataset.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace deskmvs {

namespace fs = std::filesystem;

void write_pfm(const fs::path& path, const Tensor& t) {
  const bool color = t.rank() == 3;
  if (!(t.rank() == 2 || (color && t.dim(0) == 3))) {
    throw ShapeError("write_pfm: expected [H,W] or [3,H,W], got " + shape_string(t.shape()));
  }
  const std::int64_t h = t.dim(-2), w = t.dim(-1), c = color ? 3 : 1, np = h * w;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << (color ? "PF" : "Pf") << '\n' << w << ' ' << h << '\n' << "-1.0\n";
  std::vector<float> row(static_cast<std::size_t>(w * c));
  for (std::int64_t y = h - 1; y >= 0; --y) {
    for (std::int64_t x = 0; x < w; ++x) {
      for (std::int64_t ch = 0; ch < c; ++ch) row[x * c + ch] = static_cast<float>(t[ch * np + y * w + x]);
    }
    if constexpr (std::endian::native == std::endian::big) {
      for (auto& v : row) v = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(v)));
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw IoError("error writing " + path.string());
}

Tensor read_pfm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  std::int64_t w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  in.get();
  if ((magic != "PF" && magic != "Pf") || w < 1 || h < 1 || scale == 0.0 || !in) {
    throw IoError(path.string() + ": malformed PFM header");
  }
  const bool color = magic == "PF";
  const bool swap = (scale < 0.0) != (std::endian::native == std::endian::little);
  const std::int64_t c = color ? 3 : 1, np = h * w;
  Tensor t = color ? Tensor({3, h, w}) : Tensor({h, w});
  std::vector<float> row(static_cast<std::size_t>(w * c));
  for (std::int64_t y = h - 1; y >= 0; --y) {
    if (!in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)))) {
      throw IoError(path.string() + ": truncated PFM data");
    }
    for (std::int64_t x = 0; x < w; ++x) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        float v = row[x * c + ch];
        if (swap) v = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(v)));
        t[ch * np + y * w + x] = v;
      }
    }
  }
  return t;
}

void write_scene(const fs::path& dir, const SceneSample& s) {
  fs::create_directories(dir);
  for (int v = 0; v < s.views(); ++v) {
    write_pfm(dir / ("view_" + std::to_string(v) + ".pfm"), s.images[static_cast<std::size_t>(v)]);
    write_camera(dir / ("cam_" + std::to_string(v) + ".txt"), s.cameras[static_cast<std::size_t>(v)]);
  }
  Tensor depth = s.depth;
  for (std::int64_t p = 0; p < depth.numel(); ++p) {
    if (s.depth_mask[p] == 0.0) depth[p] = 0.0;
  }
  write_pfm(dir / "depth.pfm", depth);
}

SceneSample read_scene(const fs::path& dir) {
  SceneSample s;
  for (int v = 0;; ++v) {
    const fs::path img = dir / ("view_" + std::to_string(v) + ".pfm");
    if (!fs::exists(img)) break;
    s.images.push_back(read_pfm(img));
    s.cameras.push_back(read_camera(dir / ("cam_" + std::to_string(v) + ".txt")));
  }
  if (s.images.size() < 2) throw IoError(dir.string() + ": fewer than two views");
  s.depth = read_pfm(dir / "depth.pfm");
  s.depth_mask = Tensor(s.depth.shape());
  for (std::int64_t p = 0; p < s.depth.numel(); ++p) s.depth_mask[p] = s.depth[p] > 0.0 ? 1.0 : 0.0;
  return s;
}

Dataset plan_dataset(std::uint64_t seed, int count, double train_ratio, const SceneConfig& cfg) {
  if (count < 2) throw ConfigError("dataset: need at least 2 scenes");
  if (!(train_ratio >= 0.0 && train_ratio <= 1.0)) throw ConfigError("dataset: train ratio must be in [0, 1]");
  cfg.validate();
  Dataset ds;
  ds.config = cfg;
  const auto n_train = static_cast<int>(std::lround(count * train_ratio));
  std::set<std::uint64_t> used;
  std::uint64_t state = seed;
  for (int i = 0; i < count; ++i) {
    std::uint64_t s;
    do {
      // splitmix64 step
      state += 0x9E3779B97F4A7C15ULL;
      std::uint64_t z = state;
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
      z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
      s = z ^ (z >> 31);
    } while (!used.insert(s).second);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%05d", i);
    DatasetEntry e{s, i < n_train ? "train" : "val", name};
    (i < n_train ? ds.train : ds.val).push_back(e);
  }
  return ds;
}

Dataset generate_dataset(const fs::path& root, std::uint64_t seed, int count, double train_ratio,
                         const SceneConfig& cfg) {
  Dataset ds = plan_dataset(seed, count, train_ratio, cfg);
  fs::create_directories(root);
  std::ofstream manifest(root / "manifest.jsonl");
  if (!manifest) throw IoError("cannot write manifest in " + root.string());
  for (const auto* list : {&ds.train, &ds.val}) {
    for (const auto& e : *list) {
      write_scene(root / e.dir, generate_scene(e.seed, cfg));
      nlohmann::json j{{"seed", e.seed},        {"split", e.split},  {"dir", e.dir},
                       {"views", cfg.views},    {"height", cfg.height}, {"width", cfg.width},
                       {"geometry", geometry_name(cfg.geometry)}};
      manifest << j.dump() << '\n';
    }
  }
  return ds;
}

std::vector<DatasetEntry> read_manifest(const fs::path& root) {
  std::ifstream in(root / "manifest.jsonl");
  if (!in) throw IoError("no manifest.jsonl in " + root.string());
  std::vector<DatasetEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("seed").get<std::uint64_t>(), j.at("split").get<std::string>(), j.at("dir").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw IoError("manifest: " + std::string(e.what()));
    }
  }
  return out;
}

}  // namespace deskmvs
