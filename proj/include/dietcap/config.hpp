#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dietcap/geometry.hpp"
#include "dietcap/model.hpp"

namespace dietcap {

// Everything a subcommand needs. Loaded from a JSON file, then overridden by
// command-line flags; the validated result is echoed into every report.
struct RunConfig {
  ModelConfig model;

  std::size_t epochs = 10;
  std::size_t batch_size = 10;
  double lr = 0.0005;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  std::string vocab_path;
  std::string lexicon_path;
  std::string data_dir;
  std::string checkpoint_path;

  std::size_t beam_width = 1;
  std::size_t n_pre = 5;
  VolumeOptions volume;
  int split = 0;  // 0 = no split, else a built-in split 1..3

  // Throws ErrorCode::Config.
  void validate() const;

  // Keys absent from the file keep their defaults; unknown keys are a
  // ErrorCode::Config error.
  static RunConfig from_json(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  std::string to_json() const;
};

// Named train/test partition of episode ids.
struct SplitSpec {
  std::string name;
  std::vector<std::string> train;
  std::vector<std::string> test;

  // Throws ErrorCode::Config when an id appears in both lists.
  void validate() const;

  // Built-in partitions of a sorted id list:
  //   1: first 80% train, last 20% test
  //   2: even positions train, odd positions test
  //   3: last 80% train, first 20% test
  static SplitSpec builtin(int index, std::vector<std::string> ids);
};

}  // namespace dietcap
