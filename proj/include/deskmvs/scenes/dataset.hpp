#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "deskmvs/scenes/scene.hpp"

namespace deskmvs {

// Portable float map: "PF" (3 channels) or "Pf" (1 channel), "W H", scale -1
// (little-endian), then float32 rows bottom to top, channels interleaved.
// Tensors are [3,H,W] or [H,W].
void write_pfm(const std::filesystem::path& path, const Tensor& t);
Tensor read_pfm(const std::filesystem::path& path);

// Scene folder: view_<i>.pfm, cam_<i>.txt, depth.pfm (0 = undefined).
void write_scene(const std::filesystem::path& dir, const SceneSample& s);
SceneSample read_scene(const std::filesystem::path& dir);

struct DatasetEntry {
  std::uint64_t seed;
  std::string split;  // "train" or "val"
  std::string dir;    // relative to the dataset root
};

struct Dataset {
  SceneConfig config;
  std::vector<DatasetEntry> train;
  std::vector<DatasetEntry> val;
};

// Sample seeds are distinct and derived from `seed`; the first
// round(count * train_ratio) go to train. Pure: nothing is written.
Dataset plan_dataset(std::uint64_t seed, int count, double train_ratio, const SceneConfig& cfg);

// Renders every entry under root and writes root/manifest.jsonl, one JSON
// object per scene: {"seed", "split", "dir", "views", "height", "width",
// "geometry"}.
Dataset generate_dataset(const std::filesystem::path& root, std::uint64_t seed, int count, double train_ratio,
                         const SceneConfig& cfg);
std::vector<DatasetEntry> read_manifest(const std::filesystem::path& root);

}  // namespace deskmvs
