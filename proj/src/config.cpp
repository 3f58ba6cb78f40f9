#include "dietcap/config.hpp"

#include <algorithm>
#include <json.hpp>
#include <set>

#include "dietcap/error.hpp"
#include "dietcap/raster_io.hpp"

namespace dietcap {

using nlohmann::json;
using nlohmann::ordered_json;

void RunConfig::validate() const {
  ModelConfig m = model;
  if (m.vocab_size == 0) m.vocab_size = 5;  // filled in from the vocabulary at run time
  m.validate();
  if (epochs == 0) fail(ErrorCode::Config, "epochs must be positive");
  if (batch_size == 0) fail(ErrorCode::Config, "batch_size must be positive");
  if (!(lr > 0.0)) fail(ErrorCode::Config, "lr must be positive");
  if (threads == 0) fail(ErrorCode::Config, "threads must be positive");
  if (beam_width == 0) fail(ErrorCode::Config, "beam_width must be positive");
  if (n_pre == 0) fail(ErrorCode::Config, "n_pre must be positive");
  if (!(volume.denoise.threshold > 0.0)) fail(ErrorCode::Config, "mad_threshold must be positive");
  if (volume.smoothing_radius < 0.0) fail(ErrorCode::Config, "smoothing_radius must not be negative");
  if (volume.min_coverage < 0.0 || volume.min_coverage > 1.0) fail(ErrorCode::Config, "min_coverage must lie in [0, 1]");
  if (!(volume.range.min > 0.0 && volume.range.min < volume.range.max)) fail(ErrorCode::Config, "invalid depth range");
  if (split < 0 || split > 3) fail(ErrorCode::Config, "split must be 1, 2 or 3");
}

RunConfig RunConfig::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::Config, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::Config, "config must be a JSON object");
  static const std::set<std::string> known = {
      "model",  "epochs",     "batch_size", "lr",          "seed",          "threads",      "vocab",
      "lexicon", "data_dir",  "checkpoint", "beam_width",  "n_pre",         "mad_threshold", "smoothing_radius",
      "min_coverage", "depth_min", "depth_max", "split"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) fail(ErrorCode::Config, "unknown config key '" + key + "'");
  }
  RunConfig c;
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model").dump());
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("lr", c.lr);
    get("seed", c.seed);
    get("threads", c.threads);
    get("vocab", c.vocab_path);
    get("lexicon", c.lexicon_path);
    get("data_dir", c.data_dir);
    get("checkpoint", c.checkpoint_path);
    get("beam_width", c.beam_width);
    get("n_pre", c.n_pre);
    get("mad_threshold", c.volume.denoise.threshold);
    get("smoothing_radius", c.volume.smoothing_radius);
    get("min_coverage", c.volume.min_coverage);
    get("depth_min", c.volume.range.min);
    get("depth_max", c.volume.range.max);
    get("split", c.split);
  } catch (const json::exception& e) {
    fail(ErrorCode::Config, std::string("config field has the wrong type: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  try {
    return from_json(read_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Io) throw;
    fail(e.code(), path.string() + ": " + e.detail());
  }
}

std::string RunConfig::to_json() const {
  ordered_json j;
  j["model"] = ordered_json::parse(model.to_json());
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["seed"] = seed;
  j["threads"] = threads;
  j["vocab"] = vocab_path;
  j["lexicon"] = lexicon_path;
  j["data_dir"] = data_dir;
  j["checkpoint"] = checkpoint_path;
  j["beam_width"] = beam_width;
  j["n_pre"] = n_pre;
  j["mad_threshold"] = volume.denoise.threshold;
  j["smoothing_radius"] = volume.smoothing_radius;
  j["min_coverage"] = volume.min_coverage;
  j["depth_min"] = volume.range.min;
  j["depth_max"] = volume.range.max;
  j["split"] = split;
  return j.dump();
}

void SplitSpec::validate() const {
  const std::set<std::string> train_set(train.begin(), train.end());
  for (const auto& id : test) {
    if (train_set.contains(id)) fail(ErrorCode::Config, "split " + name + ": episode '" + id + "' is in both train and test");
  }
}

SplitSpec SplitSpec::builtin(int index, std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  SplitSpec s;
  s.name = std::to_string(index);
  const std::size_t n = ids.size();
  const std::size_t n_train = (n * 4 + 4) / 5;
  switch (index) {
    case 1:
      s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
      s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
      break;
    case 2:
      for (std::size_t i = 0; i < n; ++i) (i % 2 == 0 ? s.train : s.test).push_back(ids[i]);
      break;
    case 3:
      s.test.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n - n_train));
      s.train.assign(ids.begin() + static_cast<std::ptrdiff_t>(n - n_train), ids.end());
      break;
    default:
      fail(ErrorCode::Config, "unknown split " + std::to_string(index) + " (expected 1, 2 or 3)");
  }
  s.validate();
  return s;
}

}  // namespace dietcap
