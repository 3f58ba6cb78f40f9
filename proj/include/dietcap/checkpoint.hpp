#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dietcap/model.hpp"
#include "dietcap/vocab.hpp"

namespace dietcap {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ParameterRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;

  bool operator==(const ParameterRecord&) const = default;
};

// Binary layout (little-endian):
//   "GLTC" | u32 version | u32 n | n bytes of JSON {"config": ..., "vocab": [...]}
//   then until EOF, per parameter:
//   u32 name_len | name | u8 dtype (0 = f32) | u32 rank | u32 dims[rank] | f32 values
struct Checkpoint {
  ModelConfig config;
  Vocabulary vocab;
  std::vector<ParameterRecord> parameters;

  template <typename T>
  static Checkpoint capture(const Captioner<T>& model, const Vocabulary& vocab);

  // Rebuilds the model; the construction seed is irrelevant because every
  // parameter is overwritten.
  template <typename T>
  Captioner<T> instantiate() const;

  std::string serialize() const;
  static Checkpoint deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace dietcap
