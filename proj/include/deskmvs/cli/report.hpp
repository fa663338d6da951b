#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace deskmvs::cli {

struct Series {
  std::string name;
  std::vector<double> xs;
  std::vector<double> ys;
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  std::vector<Series> series;
};

// Self-contained SVG line chart with axes, ticks and a legend.
std::string render_svg(const LinePlot& plot);

// RFC 4180 quoting where needed.
std::string csv_line(const std::vector<std::string>& cells);
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

struct RunManifest {
  std::string command;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  bool deterministic = false;
  int threads = 1;
  nlohmann::json config;
};

// Adds version and git revision of the build.
nlohmann::json manifest_json(const RunManifest& m);
std::string hex64(std::uint64_t v);
std::string library_version();
std::string git_revision();

}  // namespace deskmvs::cli
