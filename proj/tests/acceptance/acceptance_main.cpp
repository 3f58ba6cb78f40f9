// Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails. Pass criterion numbers as arguments to run a subset.

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dietcap/checkpoint.hpp"
#include "dietcap/episode.hpp"
#include "dietcap/error.hpp"
#include "dietcap/geometry.hpp"
#include "dietcap/lexicon.hpp"
#include "dietcap/metrics.hpp"
#include "dietcap/model.hpp"
#include "dietcap/raster_io.hpp"
#include "dietcap/rng.hpp"
#include "dietcap/synth.hpp"
#include "dietcap/trainer.hpp"
#include "oracles.hpp"
#include "shapes.hpp"

using namespace dietcap;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

class Scratch {
 public:
  explicit Scratch(const std::string& tag)
      : path_(fs::temp_directory_path() / ("dietcap-accept-" + tag + "-" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

ModelConfig tiny_config(Variant v) {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.n_regions = 2;
  c.region_dim = 4;
  c.ffn_dim = 16;
  c.vocab_size = 5;
  c.max_caption_len = 6;
  c.global_dim = 4;
  c.image_height = 4;
  c.image_width = 4;
  c.conv_channels = {2};
  c.variant = v;
  return c;
}

std::vector<float> normal_values(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

VisualInput make_input(const ModelConfig& c, std::uint64_t seed, std::size_t regions) {
  Rng rng(seed);
  VisualInput in;
  if (c.uses_global()) {
    if (c.frozen_global()) {
      in.global = GlobalFeature::from_vector(normal_values(c.global_dim, rng));
    } else {
      Image img{c.image_height, c.image_width, c.image_channels, {}};
      for (std::size_t i = 0; i < c.image_height * c.image_width * c.image_channels; ++i) {
        img.pixels.push_back(static_cast<float>(rng.uniform()));
      }
      in.global = GlobalFeature::from_image(std::move(img));
    }
  }
  if (c.uses_local()) {
    in.regions = RegionalFeatures::padded(c.n_regions, c.region_dim, normal_values(regions * c.region_dim, rng), regions);
  }
  return in;
}

// --- 1 -----------------------------------------------------------------------

Outcome gradient_check() {
  double worst = 0.0;
  std::size_t checked = 0;
  std::string worst_name;
  for (auto v : {Variant::GL, Variant::GlobalOnly, Variant::LocalOnly, Variant::GLFrozenGlobal}) {
    const auto cfg = tiny_config(v);
    Captioner<double> model(cfg, 11);
    const auto input = make_input(cfg, 5, 2);
    CaptionTokens caption;
    caption.ids = {kBosId, 4, 4, kEosId};
    model.caption_loss(input, caption).backward();
    const double h = 1e-5;
    for (const auto& p : model.parameters()) {
      auto tensor = p.value;
      const std::vector<double> analytic(tensor.grad().begin(), tensor.grad().end());
      auto data = tensor.mutable_data();
      for (std::size_t i = 0; i < data.size(); ++i) {
        NoGradGuard ng;
        const double orig = data[i];
        data[i] = orig + h;
        const double up = model.caption_loss(input, caption).item();
        data[i] = orig - h;
        const double down = model.caption_loss(input, caption).item();
        data[i] = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double rel = std::abs(numeric - analytic[i]) / std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
        if (rel > worst) {
          worst = rel;
          worst_name = std::string(variant_name(v)) + ":" + p.name;
        }
        ++checked;
      }
    }
  }
  return {worst <= 1e-4, std::to_string(checked) + " scalars over 4 variants, worst relative error " + fmt("%.2e", worst) +
                             " (" + worst_name + ")"};
}

// --- 2 and 3 -----------------------------------------------------------------

Outcome overfit(double* first_batch_loss, double* ln_v) {
  std::vector<std::string> captions;
  const auto& foods = synth_foods();
  const std::vector<double> fills = {1.0, 0.75, 0.5, 0.25};
  for (std::size_t i = 0; captions.size() < 20; ++i) {
    const auto& food = foods[i % foods.size()];
    const double fill = fills[(i / foods.size() + i) % fills.size()];
    captions.push_back(i % 5 == 4 ? "the bowl of " + food + " is empty"
                                  : "the subject is eating " + fill_phrase(fill) + " of " + food);
  }
  const auto vocab = Vocabulary::build(captions);
  ModelConfig cfg;
  cfg.vocab_size = vocab.size();
  std::vector<TrainingSample> data;
  for (std::size_t i = 0; i < captions.size(); ++i) data.push_back({make_input(cfg, 1000 + i, 1 + i % 4), captions[i]});

  Captioner<float> model(cfg, 3);
  TrainOptions opt;
  opt.epochs = 300;
  opt.batch_size = 10;
  opt.seed = 3;
  opt.target_loss = 0.01;
  const auto report = train(model, vocab, data, opt);
  *first_batch_loss = report.first_batch_loss;
  *ln_v = std::log(static_cast<double>(vocab.size()));

  std::size_t exact = 0;
  NoGradGuard ng;
  for (const auto& s : data) {
    const auto out = greedy_decode(model, model.encode(s.input), cfg.max_caption_len);
    exact += vocab.decode(out) == s.caption;
  }
  const double rate = static_cast<double>(exact) / static_cast<double>(data.size());
  const double final_loss = report.epoch_losses.back();
  return {rate >= 0.95 && final_loss < 0.05 && report.epoch_losses.size() <= 300,
          std::to_string(exact) + "/20 exact after " + std::to_string(report.epoch_losses.size()) + " epochs, final loss " +
              fmt("%.4f", final_loss)};
}

// --- 4 -----------------------------------------------------------------------

std::vector<float> logits_of(const Captioner<float>& m, const VisualInput& in, const std::vector<int>& prefix) {
  NoGradGuard ng;
  const auto l = m.decode_logits(m.encode(in), prefix);
  return {l.data().begin(), l.data().end()};
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(static_cast<double>(a[i]) - b[i]));
  return d;
}

Outcome architecture() {
  ModelConfig cfg;
  cfg.vocab_size = 20;
  const std::vector<int> prefix = {kBosId, 6, 8, 11, 5};
  double perm_diff = 0.0, row_err = 0.0;
  bool causal_ok = true, ablation_ok = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Captioner<float> m(cfg, seed);
    const auto in = make_input(cfg, 100 + seed, 6);
    const auto base = logits_of(m, in, prefix);

    Rng rng(seed);
    std::vector<std::size_t> order(cfg.n_regions);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    auto perm = in;
    for (std::size_t r = 0; r < order.size(); ++r) {
      std::copy_n(in.regions->values.begin() + static_cast<std::ptrdiff_t>(order[r] * cfg.region_dim), cfg.region_dim,
                  perm.regions->values.begin() + static_cast<std::ptrdiff_t>(r * cfg.region_dim));
      perm.regions->valid[r] = in.regions->valid[order[r]];
    }
    perm_diff = std::max(perm_diff, max_abs_diff(base, logits_of(m, perm, prefix)));

    for (std::size_t t = 1; t < prefix.size(); ++t) {
      auto changed = prefix;
      for (std::size_t k = t; k < changed.size(); ++k) changed[k] = 19;
      const auto other = logits_of(m, in, changed);
      for (std::size_t i = 0; i < t * cfg.vocab_size; ++i) causal_ok = causal_ok && other[i] == base[i];
    }

    AttentionProbe<float> probe;
    m.set_attention_probe(&probe);
    logits_of(m, in, prefix);
    m.set_attention_probe(nullptr);
    for (const auto& [label, w] : probe.maps) {
      for (std::size_t i = 0; i < w.dim(0); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < w.dim(1); ++j) s += w.at(i, j);
        row_err = std::max(row_err, std::abs(s - 1.0));
      }
    }

    auto l_cfg = cfg;
    l_cfg.variant = Variant::LocalOnly;
    Captioner<float> lm(l_cfg, seed);
    auto l_in = in;
    const auto l_base = logits_of(lm, l_in, prefix);
    l_in.global = make_input(cfg, 900 + seed, 6).global;
    ablation_ok = ablation_ok && logits_of(lm, l_in, prefix) == l_base;
    l_in.global.reset();
    ablation_ok = ablation_ok && logits_of(lm, l_in, prefix) == l_base;

    auto g_cfg = cfg;
    g_cfg.variant = Variant::GlobalOnly;
    Captioner<float> gm(g_cfg, seed);
    auto g_in = in;
    const auto g_base = logits_of(gm, g_in, prefix);
    g_in.regions = make_input(cfg, 700 + seed, 3).regions;
    ablation_ok = ablation_ok && logits_of(gm, g_in, prefix) == g_base;
    g_in.regions.reset();
    ablation_ok = ablation_ok && logits_of(gm, g_in, prefix) == g_base;
  }
  const bool pass = perm_diff <= 1e-5 && causal_ok && row_err <= 1e-6 && ablation_ok;
  return {pass, "permutation max diff " + fmt("%.2e", perm_diff) + ", causal " + (causal_ok ? "exact" : "LEAKS") +
                    ", attention row error " + fmt("%.2e", row_err) + ", ablations " + (ablation_ok ? "exact" : "LEAK")};
}

// --- 5 -----------------------------------------------------------------------

Outcome metrics() {
  const EvalCorpus fixture = {
      {"1", "the subject is eating a half bowl of rice", {"the subject is eating a half bowl of rice", "a person eats rice"}},
      {"2", "the bowl of okra is empty", {"the bowl of okra is empty"}},
      {"3", "the subject is eating a full bowl of soup", {"the subject is eating a 3/4 bowl of soup", "she eats soup"}},
      {"4", "a woman drinks tea", {"the woman is drinking tea", "a woman drinks a cup of tea"}},
      {"5", "the first bowl is empty", {"the first bowl is empty and the second bowl has a full bowl of stew"}},
      {"6", "banku and okra stew", {"the subject is eating banku with okra stew", "banku and okra soup"}},
      {"7", "a man is cooking", {"a man cooks jollof rice in a pot"}},
      {"8", "the bowl is almost empty", {"there isn't much porridge left", "the bowl is almost empty", "little porridge"}},
      {"9", "eating eating eating", {"the subject is eating fufu"}},
      {"10", "the subject is roasting corn", {"the subject roasts corn", "roasted corn on a grill"}},
  };
  const auto r = evaluate_corpus(fixture);
  double worst = 0.0;
  std::ostringstream detail;
  for (int n = 1; n <= 4; ++n) {
    worst = std::max(worst, std::abs(r.bleu[static_cast<std::size_t>(n - 1)] - oracle::bleu(fixture, n)));
  }
  worst = std::max(worst, std::abs(r.rouge_l - oracle::rouge_l(fixture)));
  worst = std::max(worst, std::abs(r.cider.score - oracle::cider(fixture)));

  EvalCorpus same;
  for (const auto& item : fixture) same.push_back({item.id, item.references.front(), {item.references.front()}});
  const auto s = evaluate_corpus(same);
  bool perfect = s.rouge_l == 100.0;
  for (double b : s.bleu) perfect = perfect && b == 100.0;

  detail << "BLEU-4 " << fmt("%.3f", r.bleu[3]) << " ROUGE-L " << fmt("%.3f", r.rouge_l) << " CIDEr "
         << fmt("%.3f", r.cider.score) << ", max oracle diff " << fmt("%.1e", worst) << ", identical corpus "
         << (perfect ? "100" : "NOT 100");
  return {worst <= 1e-6 && perfect, detail.str()};
}

// --- 6 -----------------------------------------------------------------------

Outcome accuracy() {
  const std::vector<std::string> gt = {
      "she is eating a half bowl of rice",
      "the bowl is empty",
      "he drank tea and ate bread",
      "a cup of porridge and a slice of bread",
      "the subject is cooking banku",
      "hello there",
  };
  const std::vector<std::string> gen = {
      "she is eating a half bowl of rice",
      "the bowl is almost empty",
      "he drank tea and ate bread",
      "a cup of porridge",
      "the subject is eating fufu",
      "a full bowl of rice",
  };
  // Portion: pairs 1, 2, 4 count; 1 + 0 + 1/2 over 3.
  // Food: pairs 1, 3, 4, 5 count; 1 + 1 + 1/2 + 0 over 4.
  // Action: pairs 1, 3, 5 count; 1 + 1 + 0 over 3.
  struct Expect {
    TermCategory cat;
    double rate;
    std::size_t included;
  };
  const std::vector<Expect> expect = {
      {TermCategory::Portion, 1.5 / 3.0, 3}, {TermCategory::Food, 2.5 / 4.0, 4}, {TermCategory::Action, 2.0 / 3.0, 3}};
  bool pass = true;
  std::string detail;
  for (const auto& e : expect) {
    const auto r = term_accuracy(gt, gen, e.cat, Lexicon::default_lexicon());
    pass = pass && r.rate == e.rate && r.included == e.included && r.excluded == gt.size() - e.included;
    detail += std::string(category_name(e.cat)) + " " + fmt("%.4f", r.rate) + " (" + std::to_string(r.included) + " of 6) ";
  }
  return {pass, detail};
}

// --- 7 -----------------------------------------------------------------------

Outcome geometry() {
  const double cube = convex_hull(shapes::cube(1.0)).volume;
  const double tet = convex_hull(shapes::regular_tetrahedron()).volume;
  const double tet_exact = 1.0 / (6.0 * std::numbers::sqrt2);
  const auto hemi = shapes::hemisphere(1.0, 50000, 4);
  const double hv = convex_hull(hemi).volume;
  const double hemi_err = std::abs(hv - 2.0 * std::numbers::pi / 3.0) / (2.0 * std::numbers::pi / 3.0);

  double rot_err = 0.0, scale_err = 0.0;
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const auto r = shapes::rotation(rng.uniform(0.0, 6.3), rng.uniform(0.0, 6.3), rng.uniform(0.0, 6.3));
    const Point3 shift(rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0));
    PointCloud moved;
    for (const auto& p : hemi) moved.push_back(r * p + shift);
    rot_err = std::max(rot_err, std::abs(convex_hull(moved).volume - hv) / hv);

    const double s = rng.uniform(0.1, 10.0);
    PointCloud scaled;
    for (const auto& p : hemi) scaled.push_back(s * p);
    scale_err = std::max(scale_err, std::abs(convex_hull(scaled).volume - s * s * s * hv) / (s * s * s * hv));
  }
  const bool pass = std::abs(cube - 1.0) <= 1e-12 && std::abs(tet - tet_exact) <= 1e-12 && hemi_err <= 0.02 &&
                    rot_err <= 1e-6 && scale_err <= 1e-9;
  return {pass, "cube error " + fmt("%.1e", std::abs(cube - 1.0)) + ", tetrahedron error " +
                    fmt("%.1e", std::abs(tet - tet_exact)) + ", hemisphere " + fmt("%.3f%%", 100.0 * hemi_err) +
                    ", rotation " + fmt("%.1e", rot_err) + ", scaling " + fmt("%.1e", scale_err)};
}

// --- 8 -----------------------------------------------------------------------

std::vector<EpisodeManifest> load_all(const std::vector<fs::path>& dirs) {
  std::vector<EpisodeManifest> out;
  for (const auto& d : dirs) out.push_back(EpisodeManifest::load(d));
  return out;
}

Outcome end_to_end() {
  Scratch scratch("e2e");
  SynthOptions so;
  so.noise_sigma = 0.0005;
  const auto test = load_all(write_synthetic_dataset(scratch.path() / "test", 10, 7, so, "test"));
  const auto training = load_all(write_synthetic_dataset(scratch.path() / "train", 60, 1001, so, "train"));

  std::set<std::string> test_ids;
  for (const auto& m : test) test_ids.insert(m.episode_id);
  for (const auto& m : training) {
    if (test_ids.count(m.episode_id)) return {false, "training and test episodes overlap"};
  }

  EpisodeOptions eo;
  eo.volume.smoothing_radius = 0.004;
  const auto truth = ground_truth_table(test);

  eo.oracle_captions = true;
  std::vector<EpisodeReport> oracle_reports;
  for (const auto& m : test) oracle_reports.push_back(run_episode(m, nullptr, nullptr, Lexicon::default_lexicon(), eo));
  const auto oracle_eval = evaluate_volume(oracle_reports, truth);
  std::cout << "\nOracle captions\n" << oracle_eval.table();

  std::vector<std::string> captions;
  for (const auto& m : training) {
    for (const auto& f : m.frames) captions.push_back(f.captions.front());
  }
  const auto vocab = Vocabulary::build(captions);
  ModelConfig mc;
  mc.vocab_size = vocab.size();
  std::vector<TrainingSample> samples;
  for (const auto& m : training) {
    auto s = training_samples(m, mc);
    samples.insert(samples.end(), s.begin(), s.end());
  }
  Captioner<float> model(mc, 1);
  TrainOptions to;
  to.epochs = 40;
  to.seed = 1;
  const auto tr = train(model, vocab, samples, to);

  eo.oracle_captions = false;
  std::vector<EpisodeReport> model_reports;
  std::size_t failed = 0;
  for (const auto& m : test) {
    try {
      model_reports.push_back(run_episode(m, &model, &vocab, Lexicon::default_lexicon(), eo));
    } catch (const Error& e) {
      ++failed;
      std::cout << m.episode_id << ": " << e.what() << "\n";
    }
  }
  const auto model_eval = evaluate_volume(model_reports, truth);
  std::cout << "\nModel captions (" << samples.size() << " training frames, final loss " << fmt("%.4f", tr.epoch_losses.back())
            << ")\n"
            << model_eval.table() << "\n";

  const bool pass = oracle_eval.max_abs_relative <= 0.05 && model_eval.max_abs_relative <= 0.15 && failed == 0 &&
                    oracle_eval.rows.size() == model_eval.rows.size() && !oracle_eval.rows.empty();
  return {pass, std::to_string(oracle_eval.rows.size()) + " containers; oracle max error " +
                    fmt("%.2f%%", 100.0 * oracle_eval.max_abs_relative) + ", model max error " +
                    fmt("%.2f%%", 100.0 * model_eval.max_abs_relative) + ", " + std::to_string(failed) +
                    " model episodes failed"};
}

// --- 9 -----------------------------------------------------------------------

struct RunResult {
  int status = -1;
  std::string out;
};

RunResult run_cli(const std::string& args, bool with_stderr = false) {
  const std::string cmd = std::string("\"") + DIETCAP_CLI + "\" " + args + (with_stderr ? " 2>&1" : " 2>/dev/null");
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

bool same_tree(const fs::path& a, const fs::path& b) {
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto other = b / fs::relative(e.path(), a);
    if (!fs::exists(other) || read_file(e.path()) != read_file(other)) return false;
    ++files;
  }
  for (const auto& e : fs::recursive_directory_iterator(b)) files -= e.is_regular_file();
  return files == 0;
}

Outcome determinism() {
  Scratch s("det");
  const auto& p = s.path();
  std::vector<std::string> diffs;
  auto ok = [&](const RunResult& r, const std::string& what) {
    if (r.status != 0) diffs.push_back(what + " exited " + std::to_string(r.status));
    return r;
  };
  for (const char* run : {"a", "b"}) {
    const auto dir = p / run;
    ok(run_cli("synth --episodes 3 --seed 7 --noise 0.0005 -o " + q(dir / "data")), "synth");
    ok(run_cli("--seed 5 --data " + q(dir / "data") + " train --epochs 2 -o " + q(dir / "model.ckpt")), "train");
    // A barely trained model may miss every empty frame; the outcome, not success, must repeat.
    const auto est = run_cli("--data " + q(dir / "data") + " estimate-episode --checkpoint " + q(dir / "model.ckpt") +
                                 " -o " + q(dir / "report.json"),
                             true);
    write_file(dir / "estimate.txt", std::to_string(est.status) + "\n" + est.out);
    const auto oracle = ok(run_cli("--data " + q(dir / "data") + " estimate-episode --oracle-captions"), "oracle estimate");
    write_file(dir / "oracle.txt", oracle.out);
    const auto cap = ok(run_cli("--data " + q(dir / "data") + " caption --checkpoint " + q(dir / "model.ckpt")), "caption");
    write_file(dir / "captions.jsonl", cap.out);
  }
  const bool identical = same_tree(p / "a", p / "b");
  if (!identical) diffs.push_back("outputs differ between runs");
  const auto threaded = run_cli("--threads 4 --data " + q(p / "a" / "data") + " estimate-episode --oracle-captions");
  const bool thread_free = threaded.out == read_file(p / "a" / "oracle.txt");
  if (!thread_free) diffs.push_back("--threads 4 changes the estimate");
  std::string detail = diffs.empty() ? "synth, train, caption and estimate outputs byte-identical across runs and thread counts"
                                     : diffs.front();
  return {diffs.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  auto wanted = [&](int n) { return selected.empty() || selected.count(n) > 0; };

  double first_loss = 0.0, ln_v = 0.0;
  struct Criterion {
    int number;
    std::string name;
    double limit_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient check", 60.0, gradient_check},
      {2, "overfit 20 pairs", 300.0, [&] { return overfit(&first_loss, &ln_v); }},
      {3, "initial loss",
       0.0,
       [&] {
         if (ln_v == 0.0) overfit(&first_loss, &ln_v);
         const double rel = std::abs(first_loss - ln_v) / ln_v;
         return Outcome{rel <= 0.05, "first batch loss " + fmt("%.4f", first_loss) + " vs ln|V| " + fmt("%.4f", ln_v) + " (" +
                                         fmt("%.2f%%", 100.0 * rel) + ")"};
       }},
      {4, "architecture invariants", 0.0, architecture},
      {5, "caption metrics", 0.0, metrics},
      {6, "term accuracy", 0.0, accuracy},
      {7, "geometry", 30.0, geometry},
      {8, "end-to-end volume", 600.0, end_to_end},
      {9, "determinism", 0.0, determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!wanted(c.number)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0.0 && secs > c.limit_s) {
      o.pass = false;
      o.detail += "; exceeded " + fmt("%.0f", c.limit_s) + " s";
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.number << " (" << c.name << "): " << o.detail << " ["
              << fmt("%.1f", secs) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
