#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cssl/data.hpp"
#include "cssl/ntrf.hpp"
#include "cssl/stream.hpp"

namespace cssl {

enum class DataFormat { kIdx, kCsv, kSynthetic };
enum class Normalization { kNone, kUnitNorm, kDivide255 };

struct DatasetManifest {
  std::string name;
  DataFormat format = DataFormat::kSynthetic;
  std::size_t num_classes = 0;
  Normalization normalization = Normalization::kNone;
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  std::filesystem::path train_csv, test_csv;
  bool has_group = false;
  FeatureKind feature_kind = FeatureKind::kReal;
  ImageShape shape{};
  SyntheticSpec synthetic;
  std::optional<std::uint64_t> seed;  // synthetic generator seed; the run seed when unset

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct OutputPaths {
  std::filesystem::path log;
  std::filesystem::path checkpoint;
  std::filesystem::path buffer_snapshot;  // task index is appended for every task after the first
  std::filesystem::path predictions;
  friend bool operator==(const OutputPaths&, const OutputPaths&) = default;
};

struct RunConfig {
  StreamConfig stream;
  std::filesystem::path oplist_path;
  std::vector<DatasetManifest> datasets;
  NtrfProbe ntrf;
  OutputPaths output;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Relative paths resolve against base_dir. Throws ConfigError naming the line.
RunConfig parse_config_text(std::string_view text, const std::filesystem::path& base_dir = {},
                            std::string_view source = "<config>");
RunConfig parse_config(const std::filesystem::path& path);

// Canonical text that parses back to an equal RunConfig.
std::string dump_config(const RunConfig& config);

// Loads and validates every dataset before training. Sets stream.input_scale for divide_255.
std::vector<TaskData> load_datasets(RunConfig& config);

}  // namespace cssl
