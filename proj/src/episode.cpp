#include "dietcap/episode.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <json.hpp>
#include <set>
#include <sstream>

#include "dietcap/error.hpp"
#include "dietcap/raster_io.hpp"
#include "dietcap/synth.hpp"
#include "dietcap/text.hpp"

namespace dietcap {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string fmt(const char* pattern, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, value);
  return buf;
}

ordered_json optional_number(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

}  // namespace

EpisodeManifest EpisodeManifest::load(const std::filesystem::path& dir_or_file) {
  namespace fs = std::filesystem;
  const fs::path file = fs::is_directory(dir_or_file) ? dir_or_file / "manifest.jsonl" : dir_or_file;
  const auto text = read_file(file);
  EpisodeManifest m;
  m.dir = file.parent_path();

  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto where = file.string() + ":" + std::to_string(line_no) + ": ";
    try {
      const auto j = json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (!header) {
        if (type != "episode") fail(ErrorCode::Data, where + "first record must be the episode header");
        const auto schema = j.at("schema").get<int>();
        if (schema != kManifestSchemaVersion) fail(ErrorCode::Data, where + "unsupported schema " + std::to_string(schema));
        m.episode_id = j.at("episode_id").get<std::string>();
        m.intrinsics = j.value("intrinsics", std::string("intrinsics.json"));
        for (const auto& t : j.value("ground_truth", json::array())) {
          m.ground_truth.push_back(
              {t.at("container_id").get<int>(), t.at("container_cm3").get<double>(), t.at("food_cm3").get<double>()});
        }
        header = true;
        continue;
      }
      if (type != "frame") fail(ErrorCode::Data, where + "unexpected record type '" + type + "'");
      FrameRecord f;
      f.timestamp = j.at("timestamp").get<double>();
      f.image = j.value("image", std::string());
      f.features = j.value("features", std::string());
      f.global = j.value("global", std::string());
      f.depth = j.at("depth").get<std::string>();
      for (const auto& mask : j.at("masks")) f.masks.push_back({mask.at("container_id").get<int>(), mask.at("path").get<std::string>()});
      f.captions = j.value("captions", std::vector<std::string>{});
      if (!m.frames.empty() && !(f.timestamp > m.frames.back().timestamp)) {
        fail(ErrorCode::Data, where + "timestamps must be strictly increasing");
      }
      m.frames.push_back(std::move(f));
    } catch (const json::exception& e) {
      fail(ErrorCode::Data, where + e.what());
    }
  }
  if (!header) fail(ErrorCode::Data, file.string() + ": missing episode header");

  auto require = [&](const std::string& rel) {
    if (!rel.empty() && !fs::exists(m.dir / rel)) fail(ErrorCode::Io, file.string() + ": referenced file " + (m.dir / rel).string() + " does not exist");
  };
  require(m.intrinsics);
  for (const auto& f : m.frames) {
    require(f.image);
    require(f.features);
    require(f.global);
    require(f.depth);
    for (const auto& mask : f.masks) require(mask.path);
  }
  return m;
}

std::string EpisodeManifest::to_jsonl() const {
  ordered_json h;
  h["type"] = "episode";
  h["schema"] = kManifestSchemaVersion;
  h["episode_id"] = episode_id;
  h["intrinsics"] = intrinsics;
  h["ground_truth"] = ordered_json::array();
  for (const auto& t : ground_truth) {
    ordered_json g;
    g["container_id"] = t.container_id;
    g["container_cm3"] = t.container_cm3;
    g["food_cm3"] = t.food_cm3;
    h["ground_truth"].push_back(g);
  }
  std::string out = h.dump() + "\n";
  for (const auto& f : frames) {
    ordered_json j;
    j["type"] = "frame";
    j["timestamp"] = f.timestamp;
    j["image"] = f.image;
    j["features"] = f.features;
    j["global"] = f.global;
    j["depth"] = f.depth;
    j["masks"] = ordered_json::array();
    for (const auto& m : f.masks) j["masks"].push_back(ordered_json{{"container_id", m.container_id}, {"path", m.path}});
    j["captions"] = f.captions;
    out += j.dump() + "\n";
  }
  return out;
}

Intrinsics EpisodeManifest::load_intrinsics() const { return Intrinsics::from_json(read_file(dir / intrinsics)); }

std::optional<ContainerTruth> EpisodeManifest::truth_for(int container_id) const {
  for (const auto& t : ground_truth) {
    if (t.container_id == container_id) return t;
  }
  return std::nullopt;
}

std::vector<std::filesystem::path> find_episodes(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(root) || fs::exists(root / "manifest.jsonl")) return {root};
  if (!fs::is_directory(root)) fail(ErrorCode::Io, "no episode directory at " + root.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "manifest.jsonl")) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) fail(ErrorCode::Io, "no episode manifests under " + root.string());
  return out;
}

std::map<int, std::optional<double>> attribute_fractions(const ParsedTerms& parsed, const std::vector<int>& containers) {
  std::map<int, std::optional<double>> out;
  for (int c : containers) out[c] = std::nullopt;
  if (containers.size() == 1) {
    for (const auto& m : parsed.portion_matches) {
      if (m.fraction) {
        out[containers.front()] = m.fraction->value();
        break;
      }
    }
    return out;
  }
  bool any_ordinal = false;
  for (const auto& m : parsed.portion_matches) {
    if (m.container == 0 || !m.fraction) continue;
    any_ordinal = true;
    auto it = out.find(m.container);
    if (it != out.end() && !it->second) it->second = m.fraction->value();
  }
  if (!any_ordinal && !parsed.fractions.empty() &&
      std::all_of(parsed.fractions.begin(), parsed.fractions.end(), [](double f) { return f == 0.0; })) {
    for (auto& [c, f] : out) f = 0.0;
  }
  return out;
}

VisualInput load_visual_input(const EpisodeManifest& manifest, const FrameRecord& frame, const ModelConfig& config) {
  VisualInput input;
  if (config.uses_global()) {
    if (config.frozen_global()) {
      if (frame.global.empty()) fail(ErrorCode::Data, "frame has no precomputed global vector");
      const auto g = read_pfm(manifest.dir / frame.global);
      input.global = GlobalFeature::from_vector(g.values);
    } else {
      if (frame.image.empty()) fail(ErrorCode::Data, "frame has no image");
      input.global = GlobalFeature::from_image(image_from_raster(read_pnm(manifest.dir / frame.image)));
    }
  }
  if (config.uses_local()) {
    if (frame.features.empty()) fail(ErrorCode::Data, "frame has no regional features");
    input.regions = regions_from_raster(read_pfm(manifest.dir / frame.features), config.n_regions);
  }
  return input;
}

std::vector<TrainingSample> training_samples(const EpisodeManifest& manifest, const ModelConfig& config) {
  std::vector<TrainingSample> out;
  for (const auto& frame : manifest.frames) {
    if (frame.captions.empty()) continue;
    out.push_back({load_visual_input(manifest, frame, config), frame.captions.front()});
  }
  return out;
}

GroundTruthTable ground_truth_table(const std::vector<EpisodeManifest>& manifests) {
  GroundTruthTable table;
  for (const auto& m : manifests) {
    if (!m.ground_truth.empty()) table[m.episode_id] = m.ground_truth;
  }
  return table;
}

EpisodeReport run_episode(const EpisodeManifest& manifest, const Captioner<float>* model, const Vocabulary* vocab,
                          const Lexicon& lexicon, const EpisodeOptions& options) {
  if (options.n_pre == 0) fail(ErrorCode::Config, "n_pre must be at least 1");
  if (!options.oracle_captions && (!model || !vocab)) fail(ErrorCode::Usage, "model captions need a model and vocabulary");
  const auto k = manifest.load_intrinsics();

  EpisodeReport report;
  report.episode_id = manifest.episode_id;
  {
    ordered_json echo;
    echo["n_pre"] = options.n_pre;
    echo["oracle_captions"] = options.oracle_captions;
    echo["beam_width"] = options.beam_width;
    echo["mad_threshold"] = options.volume.denoise.threshold;
    echo["smoothing_radius"] = options.volume.smoothing_radius;
    echo["min_coverage"] = options.volume.min_coverage;
    report.config_echo = echo.dump();
  }

  std::set<int> all_containers;
  for (std::size_t i = 0; i < manifest.frames.size(); ++i) {
    const auto& frame = manifest.frames[i];
    FrameResult r;
    r.index = i;
    if (options.oracle_captions) {
      if (frame.captions.empty()) fail(ErrorCode::Data, "frame " + std::to_string(i) + " has no ground-truth caption");
      r.caption = frame.captions.front();
    } else {
      NoGradGuard no_grad;
      const auto input = load_visual_input(manifest, frame, model->config());
      const auto emb = model->encode(input);
      const auto max_len = model->config().max_caption_len;
      const auto tokens = options.beam_width <= 1 ? greedy_decode(*model, emb, max_len)
                                                  : beam_decode(*model, emb, options.beam_width, max_len);
      r.caption = vocab->decode(tokens);
    }
    r.parsed = lexicon.parse(r.caption);
    std::vector<int> ids;
    for (const auto& m : frame.masks) ids.push_back(m.container_id);
    all_containers.insert(ids.begin(), ids.end());
    r.container_fractions = attribute_fractions(r.parsed, ids);
    report.frames.push_back(std::move(r));
  }

  // Rasters stay alive in deques so VolumeFrame pointers remain valid.
  std::deque<DepthMap> depths;
  std::deque<ByteRaster> masks;
  std::map<std::size_t, const DepthMap*> depth_of_frame;
  std::vector<VolumeFrame> volume_frames;
  std::map<int, ContainerReport> containers;
  for (int c : all_containers) {
    auto& cr = containers[c];
    cr.container_id = c;
    for (const auto& fr : report.frames) {
      auto it = fr.container_fractions.find(c);
      if (it != fr.container_fractions.end() && it->second && *it->second == 0.0) cr.empty_frames.push_back(fr.index);
    }
    if (cr.empty_frames.empty()) {
      fail(ErrorCode::NoEmpty, "episode " + manifest.episode_id + ": no frame shows container " + std::to_string(c) + " empty");
    }
    for (auto f : cr.empty_frames) {
      const auto& frame = manifest.frames[f];
      if (!depth_of_frame.contains(f)) {
        depths.push_back(read_pfm(manifest.dir / frame.depth));
        depth_of_frame[f] = &depths.back();
      }
      for (const auto& m : frame.masks) {
        if (m.container_id != c) continue;
        masks.push_back(read_pnm(manifest.dir / m.path));
        VolumeFrame vf;
        vf.depth = depth_of_frame[f];
        vf.mask = &masks.back();
        vf.container_id = c;
        vf.intrinsics = k;
        vf.frame_index = f;
        volume_frames.push_back(vf);
      }
    }
  }

  const auto volumes = container_volume(volume_frames, options.volume);
  for (auto& [c, cr] : containers) {
    const auto& v = volumes.at(c);
    cr.v_empty_cm3 = v.volume * kCubicMetersToCm3;
    cr.hull_frames = v.frames_used;
    for (double fv : v.frame_volumes) cr.hull_volumes_cm3.push_back(fv * kCubicMetersToCm3);
    cr.diagnostics = v.diagnostics;

    for (const auto& fr : report.frames) {
      if (cr.pre_frames.size() == options.n_pre) break;
      auto it = fr.container_fractions.find(c);
      if (it != fr.container_fractions.end() && it->second && *it->second > 0.0) {
        cr.pre_frames.push_back(fr.index);
        cr.fractions.push_back(*it->second);
      }
    }
    if (cr.pre_frames.size() < options.n_pre) {
      cr.short_pre = true;
      report.notes.push_back("container " + std::to_string(c) + ": only " + std::to_string(cr.pre_frames.size()) + " of " +
                             std::to_string(options.n_pre) + " pre-eating frames carry a quantified portion");
    }
    cr.food_cm3 = cr.fractions.empty() ? 0.0 : food_volume(cr.v_empty_cm3, cr.fractions, cr.fractions.size());
    report.containers.push_back(cr);
  }
  return report;
}

std::string EpisodeReport::to_json() const {
  ordered_json j;
  j["schema"] = kReportSchemaVersion;
  j["episode_id"] = episode_id;
  j["config"] = config_echo.empty() ? ordered_json::object() : ordered_json::parse(config_echo);
  j["frames"] = ordered_json::array();
  for (const auto& f : frames) {
    ordered_json fj;
    fj["index"] = f.index;
    fj["caption"] = f.caption;
    fj["portions"] = f.parsed.portions;
    fj["foods"] = f.parsed.foods;
    fj["actions"] = f.parsed.actions;
    fj["fractions"] = f.parsed.fractions;
    ordered_json cf = ordered_json::object();
    for (const auto& [c, v] : f.container_fractions) cf[std::to_string(c)] = optional_number(v);
    fj["container_fractions"] = cf;
    j["frames"].push_back(fj);
  }
  j["containers"] = ordered_json::array();
  for (const auto& c : containers) {
    ordered_json cj;
    cj["container_id"] = c.container_id;
    cj["v_empty_cm3"] = c.v_empty_cm3;
    cj["empty_frames"] = c.empty_frames;
    cj["hull_frames"] = c.hull_frames;
    cj["hull_volumes_cm3"] = c.hull_volumes_cm3;
    cj["pre_frames"] = c.pre_frames;
    cj["fractions"] = c.fractions;
    cj["food_cm3"] = c.food_cm3;
    cj["short_pre"] = c.short_pre;
    cj["diagnostics"] = c.diagnostics;
    j["containers"].push_back(cj);
  }
  j["notes"] = notes;
  return j.dump(2) + "\n";
}

VolumeEvaluation evaluate_volume(const std::vector<EpisodeReport>& reports, const GroundTruthTable& truth) {
  VolumeEvaluation ev;
  for (const auto& r : reports) {
    const auto t = truth.find(r.episode_id);
    for (const auto& c : r.containers) {
      const ContainerTruth* match = nullptr;
      if (t != truth.end()) {
        for (const auto& ct : t->second) {
          if (ct.container_id == c.container_id) match = &ct;
        }
      }
      if (!match) {
        ev.excluded.push_back(r.episode_id + "/" + std::to_string(c.container_id));
        continue;
      }
      VolumeErrorRow row;
      row.episode_id = r.episode_id;
      row.container_id = c.container_id;
      row.truth_cm3 = match->food_cm3;
      row.estimate_cm3 = c.food_cm3;
      row.error_cm3 = c.food_cm3 - match->food_cm3;
      if (!c.fractions.empty()) {
        double mean = 0.0;
        for (double p : c.fractions) mean += c.v_empty_cm3 * p;
        mean /= static_cast<double>(c.fractions.size());
        double var = 0.0;
        for (double p : c.fractions) var += (c.v_empty_cm3 * p - mean) * (c.v_empty_cm3 * p - mean);
        row.error_std_cm3 = std::sqrt(var / static_cast<double>(c.fractions.size()));
      }
      row.relative = match->food_cm3 > 0.0 ? row.error_cm3 / match->food_cm3 : 0.0;
      ev.rows.push_back(row);
    }
  }
  if (!ev.rows.empty()) {
    double abs_sum = 0.0, rel_sum = 0.0;
    for (const auto& row : ev.rows) {
      abs_sum += std::abs(row.error_cm3);
      rel_sum += std::abs(row.relative);
      ev.max_abs_relative = std::max(ev.max_abs_relative, std::abs(row.relative));
    }
    ev.overall_abs_mean_cm3 = abs_sum / static_cast<double>(ev.rows.size());
    ev.overall_abs_relative = rel_sum / static_cast<double>(ev.rows.size());
  }
  return ev;
}

std::string VolumeEvaluation::table() const {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-22s %9s %12s %13s %20s %9s\n", "Episode", "Container", "Truth (cm3)", "Estimate (cm3)",
                "Error (cm3)", "Rel.");
  out += line;
  for (const auto& r : rows) {
    const auto err = fmt("%+.1f", r.error_cm3) + " ± " + fmt("%.1f", r.error_std_cm3);
    std::snprintf(line, sizeof line, "%-22s %9d %12.1f %14.1f %21s %8.1f%%\n", r.episode_id.c_str(), r.container_id,
                  r.truth_cm3, r.estimate_cm3, err.c_str(), 100.0 * r.relative);
    out += line;
  }
  std::snprintf(line, sizeof line, "%-22s %9s %12s %14s %20.1f %8.1f%%\n", "Overall (abs. mean)", "", "", "",
                overall_abs_mean_cm3, 100.0 * overall_abs_relative);
  out += line;
  for (const auto& e : excluded) out += "excluded (no ground truth): " + e + "\n";
  return out;
}

std::string VolumeEvaluation::to_json() const {
  ordered_json j;
  j["schema"] = kReportSchemaVersion;
  j["rows"] = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json rj;
    rj["episode_id"] = r.episode_id;
    rj["container_id"] = r.container_id;
    rj["truth_cm3"] = r.truth_cm3;
    rj["estimate_cm3"] = r.estimate_cm3;
    rj["error_cm3"] = r.error_cm3;
    rj["error_std_cm3"] = r.error_std_cm3;
    rj["relative"] = r.relative;
    j["rows"].push_back(rj);
  }
  j["excluded"] = excluded;
  j["overall_abs_mean_cm3"] = overall_abs_mean_cm3;
  j["overall_abs_relative"] = overall_abs_relative;
  j["max_abs_relative"] = max_abs_relative;
  return j.dump(2) + "\n";
}

}  // namespace dietcap
