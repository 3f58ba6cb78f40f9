#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dietcap/checkpoint.hpp"
#include "dietcap/config.hpp"
#include "dietcap/episode.hpp"
#include "dietcap/error.hpp"
#include "dietcap/geometry.hpp"
#include "dietcap/lexicon.hpp"
#include "dietcap/metrics.hpp"
#include "dietcap/raster_io.hpp"
#include "dietcap/synth.hpp"
#include "dietcap/text.hpp"
#include "dietcap/trainer.hpp"
#include "dietcap/vocab.hpp"

namespace fs = std::filesystem;
using namespace dietcap;
using nlohmann::ordered_json;

namespace {

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> variant;
  std::optional<std::size_t> beam_width;
  std::optional<int> split;
  std::string data;
};

RunConfig resolve_config(const GlobalFlags& g) {
  RunConfig c = g.config.empty() ? RunConfig{} : RunConfig::load(g.config);
  if (g.seed) c.seed = *g.seed;
  if (g.threads) c.threads = *g.threads;
  if (g.variant) c.model.variant = parse_variant(*g.variant);
  if (g.beam_width) c.beam_width = *g.beam_width;
  if (g.split) c.split = *g.split;
  if (!g.data.empty()) {
    c.data_dir = g.data;
  } else if (c.data_dir.empty()) {
    if (const char* env = std::getenv("DIETCAP_DATA_DIR")) c.data_dir = env;
  }
  c.volume.threads = c.threads;
  c.validate();
  return c;
}

fs::path require_data_dir(const RunConfig& c) {
  if (c.data_dir.empty()) fail(ErrorCode::Usage, "no data directory: pass --data, set data_dir in the config or DIETCAP_DATA_DIR");
  return c.data_dir;
}

void emit(const std::string& out_path, const std::string& text) {
  if (out_path.empty() || out_path == "-") {
    std::cout << text;
  } else {
    write_file(out_path, text);
  }
}

const Lexicon& lexicon_for(const RunConfig& c, std::optional<Lexicon>& storage) {
  if (c.lexicon_path.empty()) return Lexicon::default_lexicon();
  storage = Lexicon::load(c.lexicon_path);
  return *storage;
}

// Episodes under the data directory, narrowed to one side of the split.
std::vector<EpisodeManifest> load_episodes(const RunConfig& c, bool train_side) {
  std::vector<EpisodeManifest> all;
  for (const auto& dir : find_episodes(require_data_dir(c))) all.push_back(EpisodeManifest::load(dir));
  if (c.split == 0) return all;
  std::vector<std::string> ids;
  for (const auto& m : all) ids.push_back(m.episode_id);
  const auto split = SplitSpec::builtin(c.split, ids);
  const auto& keep = train_side ? split.train : split.test;
  std::vector<EpisodeManifest> out;
  for (auto& m : all) {
    if (std::find(keep.begin(), keep.end(), m.episode_id) != keep.end()) out.push_back(std::move(m));
  }
  return out;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (!t.empty()) lines.push_back(std::move(t));
  }
  return lines;
}

std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

PointCloud read_xyz(const fs::path& path) {
  std::istringstream in(read_file(path));
  PointCloud cloud;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    double x, y, z;
    if (!(ls >> x >> y >> z)) fail(ErrorCode::Input, path.string() + ":" + std::to_string(line_no) + ": expected three coordinates");
    cloud.emplace_back(x, y, z);
  }
  return cloud;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dietary captioning and container-volume toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--config", g.config, "JSON run configuration; flags override its values")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--threads", g.threads, "Worker threads (results do not depend on this)");
  app.add_option("--variant", g.variant, "Captioner variant")->check(CLI::IsMember({"gl", "g", "l", "gl-frozen"}));
  app.add_option("--beam-width", g.beam_width, "Beam width for decoding (1 = greedy)");
  app.add_option("--split", g.split, "Built-in train/test split")->check(CLI::IsMember({1, 2, 3}));
  app.add_option("--data", g.data, "Episode root (default: $DIETCAP_DATA_DIR)");

  // build-vocab
  auto* build_vocab = app.add_subcommand("build-vocab", "Build a vocabulary from a caption file (one caption per line)");
  std::string captions_path, vocab_out;
  build_vocab->add_option("captions", captions_path)->required()->check(CLI::ExistingFile);
  build_vocab->add_option("-o,--out", vocab_out, "Output file (default stdout)");

  // synth
  auto* synth = app.add_subcommand("synth", "Render synthetic eating episodes");
  std::size_t n_episodes = 10;
  std::string synth_out, synth_prefix = "synth";
  double noise = 0.0;
  synth->add_option("--episodes", n_episodes, "Number of episodes")->check(CLI::Range(1, 10000));
  synth->add_option("-o,--out", synth_out, "Output root (default: data directory)");
  synth->add_option("--noise", noise, "Depth noise sigma in meters")->check(CLI::NonNegativeNumber);
  synth->add_option("--prefix", synth_prefix, "Episode id prefix");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a captioner on episode captions");
  std::string ckpt_out, train_vocab;
  std::optional<std::size_t> epochs;
  double target_loss = 0.0;
  train_cmd->add_option("-o,--out", ckpt_out, "Checkpoint path")->required();
  train_cmd->add_option("--vocab", train_vocab, "Vocabulary file (default: built from the training captions)");
  train_cmd->add_option("--epochs", epochs, "Epochs (overrides the config)");
  train_cmd->add_option("--target-loss", target_loss, "Stop once the epoch loss drops below this");

  // caption
  auto* caption_cmd = app.add_subcommand("caption", "Caption every frame; writes an evaluation corpus");
  std::string ckpt_in, caption_out;
  caption_cmd->add_option("--checkpoint", ckpt_in, "Checkpoint path")->required()->check(CLI::ExistingFile);
  caption_cmd->add_option("-o,--out", caption_out, "Output JSONL (default stdout)");

  // eval-metrics
  auto* eval_cmd = app.add_subcommand("eval-metrics", "BLEU-1..4, ROUGE-L and CIDEr of a caption corpus");
  std::string corpus_path, eval_out;
  eval_cmd->add_option("corpus", corpus_path, "JSONL with id, candidate, references")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("-o,--out", eval_out, "Output JSON (default stdout)");

  // parse-accuracy
  auto* acc_cmd = app.add_subcommand("parse-accuracy", "Portion, food and action accuracy of a caption corpus");
  std::string acc_corpus, acc_out;
  acc_cmd->add_option("corpus", acc_corpus, "JSONL; the first reference is the ground truth")->required()->check(CLI::ExistingFile);
  acc_cmd->add_option("-o,--out", acc_out, "Output JSON (default stdout)");

  // hull-volume
  auto* hull_cmd = app.add_subcommand("hull-volume", "Convex-hull volume of an .xyz point file (meters) in cm3");
  std::string xyz_path;
  bool hull_denoise = false;
  hull_cmd->add_option("points", xyz_path)->required()->check(CLI::ExistingFile);
  hull_cmd->add_flag("--denoise", hull_denoise, "Apply MAD depth filtering first");

  // estimate-episode
  auto* est_cmd = app.add_subcommand("estimate-episode", "Estimate food volume per container for each episode");
  bool oracle = false;
  std::string est_ckpt, est_out;
  std::optional<std::size_t> n_pre;
  est_cmd->add_flag("--oracle-captions", oracle, "Use ground-truth captions instead of a model");
  est_cmd->add_option("--checkpoint", est_ckpt, "Checkpoint for model captions")->check(CLI::ExistingFile);
  est_cmd->add_option("--n-pre", n_pre, "Pre-eating frames averaged per container");
  est_cmd->add_option("-o,--out", est_out, "Full JSON report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << error_code_name(ErrorCode::Usage) << ": " << e.what() << "\n";
    return exit_code_for(ErrorCode::Usage);
  }

  try {
    const RunConfig cfg = resolve_config(g);
    std::optional<Lexicon> lexicon_storage;

    if (*build_vocab) {
      const auto captions = read_lines(captions_path);
      if (captions.empty()) fail(ErrorCode::Usage, captions_path + ": caption corpus is empty");
      emit(vocab_out, Vocabulary::build(captions).to_text());
    } else if (*synth) {
      SynthOptions opts;
      opts.noise_sigma = noise;
      const fs::path out = synth_out.empty() ? require_data_dir(cfg) : fs::path(synth_out);
      for (const auto& dir : write_synthetic_dataset(out, n_episodes, cfg.seed, opts, synth_prefix)) {
        std::cout << dir.string() << "\n";
      }
    } else if (*train_cmd) {
      const auto episodes = load_episodes(cfg, true);
      if (episodes.empty()) fail(ErrorCode::Usage, "no training episodes");
      std::vector<std::string> captions;
      for (const auto& m : episodes) {
        for (const auto& f : m.frames) {
          if (!f.captions.empty()) captions.push_back(f.captions.front());
        }
      }
      if (captions.empty()) fail(ErrorCode::Data, "training episodes carry no captions");
      const auto vocab = train_vocab.empty() ? Vocabulary::build(captions) : Vocabulary::load(train_vocab);
      ModelConfig mc = cfg.model;
      mc.vocab_size = vocab.size();
      Captioner<float> model(mc, cfg.seed);
      std::vector<TrainingSample> samples;
      for (const auto& m : episodes) {
        auto s = training_samples(m, mc);
        samples.insert(samples.end(), s.begin(), s.end());
      }
      TrainOptions to;
      to.epochs = epochs.value_or(cfg.epochs);
      to.batch_size = cfg.batch_size;
      to.adam.lr = cfg.lr;
      to.seed = cfg.seed;
      to.target_loss = target_loss;
      to.on_epoch = [](std::size_t epoch, double loss) { std::cerr << "epoch " << epoch + 1 << " loss " << loss << "\n"; };
      const auto report = train(model, vocab, samples, to);
      Checkpoint::capture(model, vocab).save(ckpt_out);
      std::cout << "samples " << samples.size() << " epochs " << report.epoch_losses.size() << " final_loss "
                << report.epoch_losses.back() << "\n";
    } else if (*caption_cmd) {
      const auto ckpt = Checkpoint::load(ckpt_in);
      const auto model = ckpt.instantiate<float>();
      EvalCorpus corpus;
      NoGradGuard no_grad;
      for (const auto& m : load_episodes(cfg, false)) {
        for (std::size_t i = 0; i < m.frames.size(); ++i) {
          const auto emb = model.encode(load_visual_input(m, m.frames[i], model.config()));
          const auto len = model.config().max_caption_len;
          const auto tokens = cfg.beam_width <= 1 ? greedy_decode(model, emb, len) : beam_decode(model, emb, cfg.beam_width, len);
          EvalItem item;
          item.id = m.episode_id + "/" + std::to_string(i);
          item.candidate = ckpt.vocab.decode(tokens);
          item.references = m.frames[i].captions;
          if (item.references.empty()) item.references.push_back("");
          corpus.push_back(std::move(item));
        }
      }
      emit(caption_out, corpus_to_jsonl(corpus));
    } else if (*eval_cmd) {
      const auto report = evaluate_corpus(load_corpus(corpus_path));
      ordered_json j;
      j["schema"] = kReportSchemaVersion;
      for (int n = 0; n < 4; ++n) j["bleu" + std::to_string(n + 1)] = report.bleu[static_cast<std::size_t>(n)];
      j["rouge_l"] = report.rouge_l;
      j["cider"] = report.cider.score;
      j["cider_degenerate"] = report.cider.degenerate;
      emit(eval_out, j.dump(2) + "\n");
    } else if (*acc_cmd) {
      const auto corpus = load_corpus(acc_corpus);
      std::vector<std::string> gt, gen;
      for (const auto& item : corpus) {
        gt.push_back(item.references.front());
        gen.push_back(item.candidate);
      }
      const auto& lex = lexicon_for(cfg, lexicon_storage);
      ordered_json j;
      j["schema"] = kReportSchemaVersion;
      for (auto cat : {TermCategory::Portion, TermCategory::Food, TermCategory::Action}) {
        ordered_json c;
        try {
          const auto r = term_accuracy(gt, gen, cat, lex);
          c["rate"] = r.rate;
          c["included"] = r.included;
          c["excluded"] = r.excluded;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::UndefinedRate) throw;
          c["rate"] = nullptr;
          c["included"] = 0;
          c["excluded"] = gt.size();
        }
        j[std::string(category_name(cat))] = c;
      }
      emit(acc_out, j.dump(2) + "\n");
    } else if (*hull_cmd) {
      auto cloud = read_xyz(xyz_path);
      if (hull_denoise) cloud = denoise(cloud, cfg.volume.denoise);
      std::cout << fixed3(convex_hull(cloud).volume * kCubicMetersToCm3) << " cm3\n";
    } else if (*est_cmd) {
      std::optional<Checkpoint> ckpt;
      std::optional<Captioner<float>> model;
      if (!oracle) {
        const auto path = !est_ckpt.empty() ? est_ckpt : cfg.checkpoint_path;
        if (path.empty()) fail(ErrorCode::Usage, "model captions need --checkpoint (or use --oracle-captions)");
        ckpt = Checkpoint::load(path);
        model.emplace(ckpt->instantiate<float>());
      }
      EpisodeOptions eo;
      eo.n_pre = n_pre.value_or(cfg.n_pre);
      eo.oracle_captions = oracle;
      eo.beam_width = cfg.beam_width;
      eo.volume = cfg.volume;
      RunConfig echo = cfg;
      echo.n_pre = eo.n_pre;
      if (model) echo.model = model->config();

      const auto episodes = load_episodes(cfg, false);
      std::vector<EpisodeReport> reports;
      for (const auto& m : episodes) {
        auto r = run_episode(m, model ? &*model : nullptr, ckpt ? &ckpt->vocab : nullptr, lexicon_for(cfg, lexicon_storage), eo);
        r.config_echo = echo.to_json();
        reports.push_back(std::move(r));
      }
      const auto evaluation = evaluate_volume(reports, ground_truth_table(episodes));
      std::cout << evaluation.table();
      if (!est_out.empty()) {
        ordered_json j;
        j["schema"] = kReportSchemaVersion;
        j["config"] = ordered_json::parse(echo.to_json());
        j["mode"] = oracle ? "oracle" : "model";
        j["episodes"] = ordered_json::array();
        for (const auto& r : reports) j["episodes"].push_back(ordered_json::parse(r.to_json()));
        j["evaluation"] = ordered_json::parse(evaluation.to_json());
        write_file(est_out, j.dump(2) + "\n");
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: E_INTERNAL: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
