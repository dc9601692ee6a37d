#include <chrono>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "atx/cli/commands.hpp"
#include "pipeline.hpp"

using namespace atx;
using namespace atx::cli;
using atx::test::run_cli;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> with_tiny(std::vector<std::string> args) {
  args.insert(args.end(), test::tiny_model_flags().begin(), test::tiny_model_flags().end());
  return args;
}

/// One synth run shared by the subprocess tests.
const fs::path& synth_dir() {
  static const fs::path dir = [] {
    const auto root = test::scratch_dir("cli_synth");
    const auto r = run_cli({"synth", "--seed", "7", "--episodes", "2", "--out", (root / "out").string()}, root);
    if (r.code != 0) throw std::runtime_error("synth failed: " + r.err);
    return root / "out";
  }();
  return dir;
}

json read_json(const fs::path& p) { return json::parse(test::read_file(p)); }

}  // namespace

TEST(Toml, ParsesScalarsTablesAndComments) {
  const json doc = FlatToml::parse(R"(# run config
seed = 42
[train]
lr = 2.5e-3   # peak
epochs = 1_000
mode = "unsupervised"
anchor_last_position = false
name = 'lit\n'
offset = -3
esc = "a\"b\\c"
)");
  EXPECT_EQ(doc[""]["seed"], 42u);
  EXPECT_DOUBLE_EQ(doc["train"]["lr"].get<double>(), 2.5e-3);
  EXPECT_EQ(doc["train"]["epochs"], 1000u);
  EXPECT_EQ(doc["train"]["mode"], "unsupervised");
  EXPECT_EQ(doc["train"]["anchor_last_position"], false);
  EXPECT_EQ(doc["train"]["name"], "lit\\n");
  EXPECT_EQ(doc["train"]["offset"], -3);
  EXPECT_EQ(doc["train"]["esc"], "a\"b\\c");
}

TEST(Toml, RejectsWhatItDoesNotSupport) {
  for (const char* bad : {"x = [1, 2]", "x = {a = 1}", "[a.b]\n", "a.b = 1", "x = ", "x = 1\nx = 2", "[t]\n[t]\ny = 1\n[t]",
                          "x = \"open", "x = nan", "x = 12abc", "just words", "[t", "x = \"a\" trailing"}) {
    EXPECT_THROW(FlatToml::parse(bad), InputError) << bad;
  }
  try {
    FlatToml::parse("ok = 1\n\nbad = [", "cfg.toml");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("cfg.toml:3"), std::string::npos) << e.what();
  }
}

TEST(ResolveConfig, DefaultsThenFileThenFlags) {
  const auto dir = test::scratch_dir("resolve");
  test::write_file(dir / "run.toml", "seed = 9\n[train]\nepochs = 12\nlr = 0.01\n[synth]\nepisodes = 3\n");
  const auto& s = schema("train");
  const json defaults = resolve_config(s, std::nullopt, {});
  EXPECT_EQ(defaults["epochs"], training::TrainConfig{}.epochs);
  EXPECT_EQ(defaults["lr_schedule"], "cosine");
  EXPECT_TRUE(defaults["ref_lat"].is_null());

  const json from_file = resolve_config(s, (dir / "run.toml").string(), {});
  EXPECT_EQ(from_file["seed"], 9u);
  EXPECT_EQ(from_file["epochs"], 12u);
  EXPECT_EQ(from_file["lr"], 0.01);

  const json flagged = resolve_config(s, (dir / "run.toml").string(), {{"epochs", "3"}, {"anchor_last_position", "false"}});
  EXPECT_EQ(flagged["epochs"], 3u);
  EXPECT_EQ(flagged["lr"], 0.01);
  EXPECT_EQ(flagged["anchor_last_position"], false);

  EXPECT_EQ(resolve_config(schema("synth"), (dir / "run.toml").string(), {})["episodes"], 3u);
}

TEST(ResolveConfig, RunJsonRoundTripsAndIsCheckedForCommand) {
  const auto dir = test::scratch_dir("resolve_json");
  const auto& s = schema("train");
  const json cfg = resolve_config(s, std::nullopt, {{"epochs", "4"}, {"out", "x"}});
  test::write_file(dir / "run.json", json{{"command", "train"}, {"config", cfg}}.dump(2));
  EXPECT_EQ(resolve_config(s, (dir / "run.json").string(), {}), cfg);
  EXPECT_THROW(resolve_config(schema("eval"), (dir / "run.json").string(), {}), InputError);
  test::write_file(dir / "plain.json", "{\"epochs\": 3}");
  EXPECT_THROW(resolve_config(s, (dir / "plain.json").string(), {}), InputError);
}

TEST(ResolveConfig, RejectsUnknownKeysAndBadTypes) {
  const auto dir = test::scratch_dir("resolve_bad");
  const auto& s = schema("train");
  test::write_file(dir / "unknown.toml", "[train]\nepochz = 3\n");
  EXPECT_THROW(resolve_config(s, (dir / "unknown.toml").string(), {}), InputError);
  test::write_file(dir / "typed.toml", "[train]\nepochs = \"many\"\n");
  EXPECT_THROW(resolve_config(s, (dir / "typed.toml").string(), {}), InputError);
  test::write_file(dir / "negative.toml", "[train]\nepochs = -1\n");
  EXPECT_THROW(resolve_config(s, (dir / "negative.toml").string(), {}), InputError);
  test::write_file(dir / "twice.toml", "epochs = 2\n[train]\nepochs = 3\n");
  EXPECT_THROW(resolve_config(s, (dir / "twice.toml").string(), {}), InputError);
  EXPECT_THROW(resolve_config(s, (dir / "missing.toml").string(), {}), InputError);
  EXPECT_THROW(resolve_config(s, std::nullopt, {{"epochs", "2.5"}}), InputError);
  EXPECT_THROW(resolve_config(s, std::nullopt, {{"lr", "fast"}}), InputError);
  EXPECT_EQ(resolve_config(s, std::nullopt, {{"lr", "1"}})["lr"], 1.0);
}

TEST(Synth, CsvParsesBackLosslessly) {
  const auto ingested = data::ingest_tracks((synth_dir() / "tracks.csv").string());
  EXPECT_EQ(ingested.rejected_rows, 0u);
  EXPECT_EQ(ingested.dropped_tracks, 0u);
  std::ostringstream again;
  data::write_tracks_csv(again, ingested.tracks);
  EXPECT_EQ(again.str(), test::read_file(synth_dir() / "tracks.csv"));
  const json manifest = read_json(synth_dir() / "manifest.json");
  EXPECT_EQ(manifest["seed"], 7u);
  EXPECT_EQ(manifest["aircraft"].size(), ingested.tracks.size());
  EXPECT_EQ(read_json(synth_dir() / "run.json")["command"], "synth");
}

TEST(Synth, SameSeedSameFiles) {
  const auto root = test::scratch_dir("cli_synth_again");
  ASSERT_EQ(run_cli({"synth", "--seed", "7", "--episodes", "2", "--out", (root / "out").string()}, root).code, 0);
  for (const char* f : {"tracks.csv", "manifest.json"})
    EXPECT_EQ(test::read_file(root / "out" / f), test::read_file(synth_dir() / f)) << f;
  ASSERT_EQ(run_cli({"synth", "--seed", "8", "--episodes", "2", "--out", (root / "other").string()}, root).code, 0);
  EXPECT_NE(test::read_file(root / "other" / "tracks.csv"), test::read_file(synth_dir() / "tracks.csv"));
}

TEST(Synth, DirectToFlagIsRecordedAndShortensWestTracks) {
  const auto root = test::scratch_dir("cli_direct");
  for (const char* p : {"0", "1.0"}) {
    const auto r = run_cli({"synth", "--seed", "3", "--episodes", "3", "--direct-to-prob", p, "--out",
                            (root / (std::string("p") + p)).string()},
                           root);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  const json none = read_json(root / "p0" / "manifest.json"), all = read_json(root / "p1.0" / "manifest.json");
  EXPECT_EQ(all["config"]["direct_to_prob"], 1.0);
  EXPECT_EQ(none["config"]["direct_to_prob"], 0.0);
  std::size_t west = 0;
  double len_all = 0.0, len_none = 0.0;
  for (std::size_t i = 0; i < all["aircraft"].size(); ++i) {
    if (all["aircraft"][i]["route"] != "W") continue;
    ++west;
    EXPECT_TRUE(all["aircraft"][i]["direct_to"].get<bool>());
    EXPECT_FALSE(all["aircraft"][i]["cut_time"].is_null());
    EXPECT_FALSE(none["aircraft"][i]["direct_to"].get<bool>());
    len_all += all["aircraft"][i]["path_length_km"].get<double>();
    len_none += none["aircraft"][i]["path_length_km"].get<double>();
  }
  ASSERT_GT(west, 0u);
  EXPECT_LT(len_all, len_none);
}

TEST(Train, TinyRunIsQuickAndReproducibleFromRunJson) {
  const auto root = test::scratch_dir("cli_train");
  const std::string tracks = (synth_dir() / "tracks.csv").string();
  const auto start = std::chrono::steady_clock::now();
  const auto r = run_cli(with_tiny({"train", "--input", tracks, "--epochs", "5", "--seed", "3", "--out",
                                    (root / "a").string()}),
                         root);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_LT(seconds, 60.0);
  const json summary = read_json(root / "a" / "summary.json");
  EXPECT_GE(summary["train_scenes"].get<std::size_t>() + summary["val_scenes"].get<std::size_t>(), 50u);
  EXPECT_EQ(summary["epochs_run"], 5u);
  for (const char* f : {"checkpoint.json", "stats.json", "metrics.csv", "run.json", "val_scenes.json"})
    EXPECT_TRUE(fs::exists(root / "a" / f)) << f;
  const std::string metrics = test::read_file(root / "a" / "metrics.csv");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 6);

  json run = read_json(root / "a" / "run.json");
  run["config"]["out"] = (root / "b").string();
  test::write_file(root / "rerun.json", run.dump(2));
  const auto again = run_cli({"train", "--config", (root / "rerun.json").string()}, root);
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(test::read_file(root / "b" / "checkpoint.json"), test::read_file(root / "a" / "checkpoint.json"));
  EXPECT_EQ(test::read_file(root / "b" / "metrics.csv"), test::read_file(root / "a" / "metrics.csv"));
}

TEST(Train, MissingInputExitsTwoNamingThePath) {
  const auto root = test::scratch_dir("cli_missing");
  const std::string missing = (root / "nowhere" / "tracks.csv").string();
  const auto r = run_cli({"train", "--input", missing, "--out", (root / "out").string()}, root);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(root / "out"));
}

TEST(Cli, UsageErrorsExitTwo) {
  const auto root = test::scratch_dir("cli_usage");
  EXPECT_EQ(run_cli({}, root).code, 2);
  EXPECT_EQ(run_cli({"fly"}, root).code, 2);
  EXPECT_EQ(run_cli({"synth", "--episodes", "many", "--out", (root / "o").string()}, root).code, 2);
  EXPECT_EQ(run_cli({"synth", "--config", (root / "none.toml").string()}, root).code, 2);
  const auto r = run_cli({"synth"}, root);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--out"), std::string::npos);
}

TEST(Cli, NonEmptyOutputNeedsForce) {
  const auto root = test::scratch_dir("cli_force");
  test::write_file(root / "out" / "keep.txt", "x");
  const std::vector<std::string> args{"synth", "--seed", "1", "--episodes", "1", "--out", (root / "out").string()};
  const auto r = run_cli(args, root);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--force"), std::string::npos);
  EXPECT_FALSE(fs::exists(root / "out" / "tracks.csv"));
  auto forced = args;
  forced.push_back("--force");
  EXPECT_EQ(run_cli(forced, root).code, 0);
  EXPECT_TRUE(fs::exists(root / "out" / "tracks.csv"));
  EXPECT_TRUE(fs::exists(root / "out" / "keep.txt"));
}

class Explain : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = test::scratch_dir("cli_explain");
    const auto r = run_cli(with_tiny({"train", "--input", (synth_dir() / "tracks.csv").string(), "--epochs", "2",
                                      "--out", (root_ / "train").string()}),
                           root_);
    if (r.code != 0) throw std::runtime_error("train failed: " + r.err);
  }

  static std::string checkpoint() { return (root_ / "train" / "checkpoint.json").string(); }

  /// Scenes file with one aircraft per scene (plus padding), in km.
  static std::string solo_scenes() {
    const auto path = root_ / "solo.json";
    if (fs::exists(path)) return path.string();
    std::vector<data::SceneWindow> scenes;
    for (int i = 0; i < 3; ++i) {
      data::SceneWindow s;
      s.t0 = 100.0 + 5.0 * i;
      s.past = Tensor({2, 8, 3});
      s.future = Tensor({2, 4, 3});
      s.valid = Mask({2}, false);
      s.valid.set(0, true);
      s.ids = {"SOLO", "GHOST"};
      for (std::size_t k = 0; k < 8; ++k) s.past(0, k, 0) = -20.0 + 0.6 * k, s.past(0, k, 1) = 4.0, s.past(0, k, 2) = 3.0;
      for (std::size_t k = 0; k < 4; ++k) s.future(0, k, 0) = -15.2 + 0.6 * k, s.future(0, k, 1) = 4.0, s.future(0, k, 2) = 3.0;
      scenes.push_back(s);
    }
    data::write_scenes(path.string(), scenes);
    return path.string();
  }

  static inline fs::path root_;
};

TEST_F(Explain, OnlyAircraftAttendsToItself) {
  const auto r = run_cli({"explain", "--checkpoint", checkpoint(), "--input", solo_scenes(), "--query", "SOLO",
                          "--render", "--out", (root_ / "solo").string()},
                         root_);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto series = explain::read_frames((root_ / "solo" / "explanation.json").string());
  ASSERT_EQ(series.frames.size(), 3u);
  for (const auto& f : series.frames) {
    EXPECT_EQ(f.scores, (std::map<std::string, double>{{"SOLO", 1.0}}));
    EXPECT_TRUE(fs::exists(root_ / "solo" / ("frame_" + data::format_double(f.t0) + ".svg")));
  }
}

TEST_F(Explain, UnknownQueryListsAvailableIds) {
  const auto r = run_cli({"explain", "--checkpoint", checkpoint(), "--input", solo_scenes(), "--query", "NOBODY",
                          "--out", (root_ / "unknown").string()},
                         root_);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("SOLO"), std::string::npos) << r.err;
  EXPECT_EQ(r.err.find("GHOST"), std::string::npos) << r.err;
}

TEST_F(Explain, RegionSwitchesToEulerianOutput) {
  const std::string tracks = (synth_dir() / "tracks.csv").string();
  const auto r = run_cli({"explain", "--checkpoint", checkpoint(), "--input", tracks, "--stride", "4", "--region",
                          "-200,-200,200,200", "--out", (root_ / "region").string()},
                         root_);
  ASSERT_EQ(r.code, 0) << r.err;
  const json doc = read_json(root_ / "region" / "explanation.json");
  EXPECT_EQ(doc["region"], "-200,-200,200,200");
  EXPECT_EQ(doc["region_mode"], "rows");
  EXPECT_FALSE(doc.contains("query_id"));
  ASSERT_FALSE(doc["frames"].empty());
  for (const auto& f : doc["frames"]) {
    double sum = 0.0;
    for (const auto& [id, w] : f["scores"].items()) sum += w.get<double>();
    EXPECT_NEAR(sum, 1.0, 1e-6);
    EXPECT_EQ(f["members"].size(), f["scores"].size());
  }
  const auto none = run_cli({"explain", "--checkpoint", checkpoint(), "--input", tracks, "--region",
                             "500,500,501,501", "--out", (root_ / "region_empty").string()},
                            root_);
  EXPECT_EQ(none.code, 2);
  EXPECT_NE(none.err.find("500,500,501,501"), std::string::npos) << none.err;
}

TEST_F(Explain, UntrainedEvalIsWellFormed) {
  const auto r = run_cli({"eval", "--checkpoint", checkpoint(), "--input", (root_ / "train" / "val_scenes.json").string(),
                          "--out", (root_ / "eval").string()},
                         root_);
  ASSERT_EQ(r.code, 0) << r.err;
  const json report = read_json(root_ / "eval" / "eval.json");
  for (const char* side : {"model", "baseline"}) {
    EXPECT_GT(report[side]["ade_km"].get<double>(), 0.0) << side;
    EXPECT_GE(report[side]["fde_km"].get<double>(), 0.0) << side;
    EXPECT_GT(report[side]["aircraft"].get<std::size_t>(), 0u) << side;
  }
  EXPECT_TRUE(report["model_over_baseline_ade"].is_number());
  EXPECT_EQ(json::parse(r.out.substr(0, r.out.rfind('}') + 1)), report);
}

TEST_F(Explain, EmptyEvalSetExitsTwo) {
  data::write_scenes((root_ / "empty.json").string(), {});
  const auto r = run_cli({"eval", "--checkpoint", checkpoint(), "--input", (root_ / "empty.json").string(), "--out",
                          (root_ / "eval_empty").string()},
                         root_);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("empty"), std::string::npos) << r.err;
}

TEST(Eval, MemorizingCheckpointBeatsBaseline) {
  // Aircraft that stop after moving: the anchored zero-offset model is
  // exact, constant velocity overshoots.
  const auto root = test::scratch_dir("cli_eval_memo");
  model::ModelConfig mc;
  mc.d_model = 8, mc.n_heads = 1, mc.mlp_hidden = 8, mc.past_steps = 8, mc.future_steps = 4;
  auto params = model::init_params(mc, 4);
  for (double& v : params["head.prediction.w2"].data()) v = 0.0;
  for (double& v : params["head.prediction.b2"].data()) v = 0.0;
  const data::DatasetStats stats{{0.0, 0.0, 3.0}, {10.0, 10.0, 1.0}};
  model::save_checkpoint((root / "ck.json").string(), {params, stats});
  Rng rng(12);
  std::vector<data::SceneWindow> scenes;
  for (int i = 0; i < 4; ++i) {
    data::SceneWindow s = test::random_scene(rng, 3, 3, 8, 4);
    s.t0 = 10.0 * i;
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t a = 0; a < 3; ++a) {
        const double v = rng.uniform(-0.5, 0.5);
        for (std::size_t k = 0; k < 8; ++k) s.past(j, k, a) = s.past(j, 0, a) + v * k;
        for (std::size_t k = 0; k < 4; ++k) s.future(j, k, a) = s.past(j, 7, a);
      }
    scenes.push_back(s);
  }
  data::write_scenes((root / "scenes.json").string(), scenes);
  const auto r = run_cli({"eval", "--checkpoint", (root / "ck.json").string(), "--input", (root / "scenes.json").string(),
                          "--out", (root / "out").string()},
                         root);
  ASSERT_EQ(r.code, 0) << r.err;
  const json report = read_json(root / "out" / "eval.json");
  EXPECT_LT(report["model"]["ade_km"].get<double>(), 1e-9);
  EXPECT_GT(report["baseline"]["ade_km"].get<double>(), 0.1);
}

TEST(Pipeline, GoldenExplanationIsReproduced) {
  const auto root = test::scratch_dir("cli_golden");
  const std::string first = test::golden_pipeline(root / "a");
  EXPECT_EQ(test::golden_pipeline(root / "b"), first);
  const auto golden = fs::path(ATX_GOLDEN_DIR) / "pipeline_explanation.json";
  if (test::update_golden()) test::write_file(golden, first);
  ASSERT_TRUE(fs::exists(golden)) << "missing " << golden << "; run with ATX_UPDATE_GOLDEN=1";
  EXPECT_EQ(first, test::read_file(golden));
  EXPECT_EQ(read_json(root / "a" / "train" / "run.json")["config"]["seed"], 2024u);
}
