#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dietcap/config.hpp"
#include "dietcap/episode.hpp"
#include "dietcap/error.hpp"
#include "dietcap/raster_io.hpp"
#include "dietcap/synth.hpp"
#include "support.hpp"

using namespace dietcap;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::Usage;
}

EpisodeSpec two_bowls() {
  EpisodeSpec s;
  s.episode_id = "pair";
  s.seed = 9;
  BowlSpec a, b;
  a.radius = radius_for_volume(300e-6);
  a.x = -0.062;
  a.food = "rice";
  a.schedule = {1.0, 1.0, 0.75, 0.5, 0.25, 0.0, 0.0};
  b.radius = radius_for_volume(200e-6);
  b.x = 0.062;
  b.food = "soup";
  b.schedule = {0.5, 0.5, 0.5, 0.25, 0.25, 0.0, 0.0};
  s.bowls = {a, b};
  return s;
}

std::string slurp(const fs::path& p) { return read_file(p); }

}  // namespace

TEST_CASE("bowl geometry helpers agree with closed forms") {
  const double r = 0.05;
  CHECK(hemisphere_volume(r) == doctest::Approx(2.0 / 3.0 * std::numbers::pi * r * r * r));
  CHECK(radius_for_volume(hemisphere_volume(r)) == doctest::Approx(r).epsilon(1e-12));
  for (double f : {0.0, 0.1, 0.25, 0.5, 0.75, 1.0}) {
    const double h = fill_height(r, f);
    const double cap = std::numbers::pi * h * h * (3.0 * r - h) / 3.0;
    CHECK(cap == doctest::Approx(f * hemisphere_volume(r)).epsilon(1e-9));
  }
}

TEST_CASE("synthetic captions") {
  BowlSpec b;
  b.food = "okra";
  b.schedule = {0.75, 0.5, 1.0, 0.0};
  CHECK(frame_caption({b}, 0) == "the subject is eating a 3/4 bowl of okra");
  CHECK(frame_caption({b}, 1) == "the subject is eating a half bowl of okra");
  CHECK(frame_caption({b}, 2) == "the subject is eating a full bowl of okra");
  CHECK(frame_caption({b}, 3) == "the bowl of okra is empty");
  BowlSpec c = b;
  c.food = "rice";
  c.schedule = {0.0, 0.25, 1.0, 0.0};
  CHECK(frame_caption({c, b}, 0) == "the first bowl is empty and the second bowl has a 3/4 bowl of okra");
  CHECK(frame_caption({c, b}, 2) == "the first bowl has a full bowl of rice and the second bowl has a full bowl of okra");
}

TEST_CASE("episode specs are validated") {
  auto s = two_bowls();
  validate_episode(s);
  auto overlap = s;
  overlap.bowls[1].x = -0.02;
  CHECK(code_of([&] { validate_episode(overlap); }) == ErrorCode::Spec);
  auto odd_fill = s;
  odd_fill.bowls[0].schedule[2] = 0.3;
  CHECK(code_of([&] { validate_episode(odd_fill); }) == ErrorCode::Spec);
  auto ragged = s;
  ragged.bowls[0].schedule.pop_back();
  CHECK(code_of([&] { validate_episode(ragged); }) == ErrorCode::Spec);
  auto outside = s;
  outside.bowls[0].x = -0.5;
  CHECK(code_of([&] { validate_episode(outside); }) == ErrorCode::Spec);
  auto unknown = s;
  unknown.bowls[0].food = "lasagne";
  CHECK(code_of([&] { validate_episode(unknown); }) == ErrorCode::Spec);
}

TEST_CASE("rendered depth matches the bowl geometry") {
  auto s = two_bowls();
  s.bowls = {s.bowls[0]};
  s.bowls[0].x = 0.0;
  const auto k = s.camera.intrinsics();
  const auto empty = render_frame(s, 6);
  const auto cx = static_cast<std::size_t>(std::lround(k.cx)), cy = static_cast<std::size_t>(std::lround(k.cy));
  const double r = s.bowls[0].radius;
  CHECK(empty.depth.at(cx, cy) == doctest::Approx(s.camera.rim_depth + r).epsilon(1e-3));
  const auto full = render_frame(s, 0);
  CHECK(full.depth.at(cx, cy) == doctest::Approx(s.camera.rim_depth).epsilon(1e-3));
  REQUIRE(empty.masks.size() == 1);
  CHECK(empty.masks[0].container_id == 1);
  CHECK(empty.features.height == 1);
  CHECK(empty.global.width == s.global_dim);
}

TEST_CASE("episodes are written deterministically and manifests round-trip") {
  testing::TempDir a("ep-a"), b("ep-b");
  const auto spec = two_bowls();
  write_episode(spec, a.path());
  write_episode(spec, b.path());
  for (const auto& entry : fs::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a.path());
    CHECK(slurp(entry.path()) == slurp(b.path() / rel));
  }
  const auto m = EpisodeManifest::load(a.path());
  CHECK(m.episode_id == "pair");
  CHECK(m.frames.size() == 7);
  CHECK(m.to_jsonl() == slurp(a.path() / "manifest.jsonl"));
  REQUIRE(m.ground_truth.size() == 2);
  CHECK(m.truth_for(1)->food_cm3 == doctest::Approx(300.0));
  CHECK(m.truth_for(2)->food_cm3 == doctest::Approx(100.0));
  CHECK_FALSE(m.truth_for(3).has_value());
  CHECK(m.load_intrinsics() == spec.camera.intrinsics());
}

TEST_CASE("manifest schema violations") {
  testing::TempDir dir("ep-bad");
  write_episode(two_bowls(), dir.path());
  const auto good = slurp(dir.path() / "manifest.jsonl");

  auto lines = good;
  const auto first_ts = lines.find("\"timestamp\":1.0");
  REQUIRE(first_ts != std::string::npos);
  lines.replace(first_ts, 15, "\"timestamp\":0.0");
  write_file(dir.path() / "manifest.jsonl", lines);
  CHECK(code_of([&] { EpisodeManifest::load(dir.path()); }) == ErrorCode::Data);

  auto schema = good;
  schema.replace(schema.find("\"schema\":1"), 10, "\"schema\":7");
  write_file(dir.path() / "manifest.jsonl", schema);
  CHECK(code_of([&] { EpisodeManifest::load(dir.path()); }) == ErrorCode::Data);

  write_file(dir.path() / "manifest.jsonl", good);
  fs::remove(dir.path() / "frames" / "003.depth.pfm");
  CHECK(code_of([&] { EpisodeManifest::load(dir.path()); }) == ErrorCode::Io);
  CHECK(code_of([&] { find_episodes(dir.path() / "nowhere"); }) == ErrorCode::Io);
}

TEST_CASE("portion attribution to containers") {
  const auto& lex = Lexicon::default_lexicon();
  auto f = attribute_fractions(lex.parse("the subject is eating a 3/4 bowl of okra"), {1});
  CHECK(f.at(1) == 0.75);
  f = attribute_fractions(lex.parse("the first bowl is empty and the second bowl has a half bowl of rice"), {1, 2});
  CHECK(f.at(1) == 0.0);
  CHECK(f.at(2) == 0.5);
  f = attribute_fractions(lex.parse("the bowls are empty"), {1, 2});
  CHECK(f.at(1) == 0.0);
  CHECK(f.at(2) == 0.0);
  f = attribute_fractions(lex.parse("a half bowl of rice"), {1, 2});
  CHECK_FALSE(f.at(1).has_value());
  CHECK_FALSE(f.at(2).has_value());
  f = attribute_fractions(lex.parse("there isn't much soup"), {1});
  CHECK_FALSE(f.at(1).has_value());
}

TEST_CASE("oracle episode estimate, short pre-eating windows and missing empty frames") {
  testing::TempDir dir("ep-run");
  write_episode(two_bowls(), dir.path());
  const auto m = EpisodeManifest::load(dir.path());
  EpisodeOptions opt;
  opt.oracle_captions = true;
  opt.n_pre = 2;
  const auto report = run_episode(m, nullptr, nullptr, Lexicon::default_lexicon(), opt);
  REQUIRE(report.containers.size() == 2);
  const auto& c1 = report.containers[0];
  CHECK(c1.empty_frames == std::vector<std::size_t>{5, 6});
  CHECK(c1.pre_frames == std::vector<std::size_t>{0, 1});
  CHECK(std::abs(c1.food_cm3 - 300.0) / 300.0 < 0.05);
  CHECK(std::abs(report.containers[1].food_cm3 - 100.0) / 100.0 < 0.05);
  CHECK_FALSE(c1.short_pre);

  opt.n_pre = 10;
  const auto long_window = run_episode(m, nullptr, nullptr, Lexicon::default_lexicon(), opt);
  CHECK(long_window.containers[0].short_pre);
  CHECK(long_window.containers[0].pre_frames.size() == 5);
  CHECK_FALSE(long_window.notes.empty());

  // Frames after the last empty frame never change the estimate.
  auto trimmed = m;
  trimmed.frames.pop_back();
  opt.n_pre = 2;
  const auto t = run_episode(trimmed, nullptr, nullptr, Lexicon::default_lexicon(), opt);
  CHECK(t.containers[0].food_cm3 == doctest::Approx(report.containers[0].food_cm3).epsilon(1e-12));

  auto no_empty = m;
  no_empty.frames.resize(5);
  CHECK(code_of([&] { run_episode(no_empty, nullptr, nullptr, Lexicon::default_lexicon(), opt); }) == ErrorCode::NoEmpty);

  const auto json = report.to_json();
  CHECK(json.find("\"schema\": 1") != std::string::npos);
  CHECK(report.to_json() == json);

  auto eval = evaluate_volume({report}, ground_truth_table({m}));
  CHECK(eval.rows.size() == 2);
  CHECK(eval.table().find("Overall (abs. mean)") != std::string::npos);
  const double expected = (std::abs(eval.rows[0].error_cm3) + std::abs(eval.rows[1].error_cm3)) / 2.0;
  CHECK(eval.overall_abs_mean_cm3 == doctest::Approx(expected));
  eval = evaluate_volume({report}, {});
  CHECK(eval.rows.empty());
  CHECK(eval.excluded.size() == 2);
}

TEST_CASE("run configuration and splits") {
  RunConfig c;
  c.seed = 17;
  c.beam_width = 3;
  c.model.variant = Variant::LocalOnly;
  c.volume.smoothing_radius = 0.004;
  const auto back = RunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.lr == 0.0005);
  CHECK(back.batch_size == 10);
  CHECK(back.epochs == 10);
  CHECK(code_of([] { RunConfig::from_json("{\"lr\": 0.1, \"colour\": 1}"); }) == ErrorCode::Config);
  CHECK(code_of([] { RunConfig::from_json("{\"lr\": \"fast\"}"); }) == ErrorCode::Config);
  auto bad = c;
  bad.lr = 0.0;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::Config);

  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("ep-" + std::to_string(i));
  for (int k = 1; k <= 3; ++k) {
    const auto s = SplitSpec::builtin(k, ids);
    CHECK(s.train.size() + s.test.size() == ids.size());
    CHECK_FALSE(s.test.empty());
    s.validate();
  }
  SplitSpec overlap{"x", {"a", "b"}, {"b"}};
  CHECK(code_of([&] { overlap.validate(); }) == ErrorCode::Config);
  CHECK(code_of([&] { SplitSpec::builtin(4, ids); }) == ErrorCode::Config);
}
