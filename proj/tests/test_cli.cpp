#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "support/fixtures.hpp"
#include "tempo/config.hpp"
#include "tempo/errors.hpp"
#include "tempo/image_io.hpp"
#include "tempo/metrics.hpp"
#include "tempo/video.hpp"

using namespace tempo;

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (const char c : s)
    out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

struct CliResult {
  int code = -1;
  std::string out;  // stdout only; stderr goes to the test log
};

CliResult run_cli(const std::vector<std::string>& args) {
  std::string cmd = shell_quote(TEMPO_CLI_PATH);
  for (const std::string& a : args) cmd += " " + shell_quote(a);
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult r;
  char buf[4096];
  size_t n = 0;
  while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_files(const std::string& dir) {
  int n = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    n += e.is_regular_file() ? 1 : 0;
  return n;
}

VideoSequence static_video(int h, int w, int t, uint64_t seed) {
  return fixtures::make_pattern_video(h, w, t, 0.0, 0.0, 0.0, seed);
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  REQUIRE(out.good());
}

// Flow files plus a manifest for a rigidly translating scene, covering both
// directions of every pair e_warp visits.
std::string write_translation_flows(const fixtures::TempDir& dir, const VideoSequence& v,
                                    double vx, double vy) {
  const std::string flow_dir = dir.sub("flows");
  std::filesystem::create_directories(flow_dir);
  TranslationFlow tf(vx, vy);
  std::set<std::pair<int, int>> pairs;
  for (int t = 1; t < v.length(); ++t) {
    pairs.insert({t, t - 1});
    pairs.insert({t - 1, t});
    pairs.insert({t, 0});
    pairs.insert({0, t});
  }
  std::string manifest = "{\"flows\": [";
  bool first = true;
  for (const auto& [to, from] : pairs) {
    char name[64];
    std::snprintf(name, sizeof(name), "f_%d_%d.flw", to, from);
    write_flow_file(flow_dir + "/" + name, tf.flow_between(v, to, from));
    if (!first) manifest += ",";
    first = false;
    manifest += "{\"to\": " + std::to_string(to) + ", \"from\": " + std::to_string(from) +
                ", \"path\": \"" + std::string(name) + "\"}";
  }
  manifest += "]}";
  const std::string path = flow_dir + "/manifest.json";
  write_text(path, manifest);
  return path;
}

const char* kTinyNetConfig =
    "[net]\n"
    "depth = 2\n"
    "base_channels = 8\n";

}  // namespace

TEST_CASE("config text parses sections, comments, and errors") {
  ConfigFile f = parse_config_text(
      "# leading comment\n"
      "[run]\n"
      "  seed = 42\n"
      "empty =\n"
      "\n"
      "[io]\n"
      "input_dir = /data/with spaces\n");
  CHECK(f.sections.at("run").at("seed") == "42");
  CHECK(f.sections.at("run").at("empty") == "");
  CHECK(f.sections.at("io").at("input_dir") == "/data/with spaces");

  CHECK_THROWS_AS(parse_config_text("seed = 1\n"), ConfigError);          // key before section
  CHECK_THROWS_AS(parse_config_text("[run]\njust words\n"), ConfigError); // no '='
  CHECK_THROWS_AS(parse_config_text("[run\nseed = 1\n"), ConfigError);    // unclosed header
  CHECK_THROWS_AS(parse_config_text("[]\n"), ConfigError);                // empty section
  CHECK_THROWS_AS(parse_config_text("[run]\n= 1\n"), ConfigError);        // empty key
  CHECK_THROWS_AS(parse_config_text("[run]\nseed = 1\nseed = 2\n"), ConfigError);
}

TEST_CASE("apply_config maps keys onto the run config and rejects strangers") {
  RunConfig rc;
  apply_config(rc, parse_config_text("[run]\n"
                                     "task = toy\n"
                                     "seed = 9\n"
                                     "jobs = 2\n"
                                     "window = 30\n"
                                     "[net]\n"
                                     "depth = 2\n"
                                     "heads = 2\n"
                                     "final_activation = softmax\n"
                                     "[train]\n"
                                     "learning_rate = 5e-3\n"
                                     "irt = true\n"
                                     "auto_stop = true\n"
                                     "[propagate]\n"
                                     "augmentation = crop,flip\n"
                                     "crop_h = 12\n"
                                     "sampling = recency\n"
                                     "[toy]\n"
                                     "bimodal = true\n"
                                     "irt = true\n"
                                     "snapshot_iters = 10,20\n"
                                     "[metrics]\n"
                                     "channel_mean = true\n"));
  CHECK(rc.task == "toy");
  CHECK(rc.seed == 9);
  CHECK(rc.jobs == 2);
  CHECK(rc.window == 30);
  CHECK(rc.net.depth == 2);
  CHECK(rc.net.heads == 2);
  CHECK(rc.net_heads_set);
  CHECK(rc.net.final_activation == FinalActivation::kSoftmax);
  CHECK(rc.train.learning_rate == 5e-3);
  CHECK(rc.train.irt);
  CHECK(rc.train.auto_stop);
  CHECK(rc.prop.augmentation ==
        std::set<AugmentKind>{AugmentKind::kCrop, AugmentKind::kFlip});
  CHECK(rc.prop.crop_h == 12);
  CHECK(rc.prop.sampling == QueueSampling::kRecency);
  CHECK(rc.toy.bimodal);
  CHECK(rc.toy_irt);
  CHECK(rc.toy.snapshot_iters == std::vector<int>{10, 20});
  CHECK(rc.metrics.channel_mean);

  auto rejected = [](const std::string& text) {
    RunConfig fresh;
    CHECK_THROWS_AS(apply_config(fresh, parse_config_text(text)), ConfigError);
  };
  rejected("[spectre]\nx = 1\n");
  rejected("[run]\ntempo = fast\n");
  rejected("[run]\ntask = dance\n");
  rejected("[run]\nseed = twelve\n");
  rejected("[train]\nirt = yes\n");
  rejected("[train]\nlearning_rate = 1e-3x\n");
  rejected("[propagate]\naugmentation = crop,zoom\n");
  rejected("[propagate]\nsampling = newest\n");
  rejected("[toy]\nsnapshot_iters = 10,,20\n");
}

TEST_CASE("run config round-trips through its serialized form") {
  RunConfig a;
  a.task = "propagate";
  a.seed = 77;
  a.jobs = 3;
  a.window = 12;
  a.input_dir = "in dir";
  a.processed_dir = "refs";
  a.out_dir = "out";
  a.flow_manifest = "flows/m.json";
  a.net.depth = 3;
  a.net.heads = 2;
  a.net_heads_set = true;
  a.net.final_activation = FinalActivation::kNone;
  a.train.learning_rate = 2.5e-3;
  a.train.epochs = 7;
  a.train.irt = true;
  a.train.auto_stop = true;
  a.train.auto_stop_threshold = 1e-6;
  a.train.init_checkpoint = "warm.ckpt";
  a.prop.k_iterations = 40;
  a.prop.task = PropagationTask::kSegmentation;
  a.prop.sampling = QueueSampling::kRecency;
  a.prop.augmentation = {AugmentKind::kFlip, AugmentKind::kCopyPaste};
  a.prop.crop_h = 10;
  a.prop.crop_w = 11;
  a.prop.reinfer_all = true;
  a.toy.bimodal = true;
  a.toy.snapshot_iters = {5, 50};
  a.toy_irt = true;
  a.metrics.channel_mean = true;
  a.metrics.alpha1 = 0.02;

  const std::string text = write_run_config(a);
  RunConfig b;
  apply_config(b, parse_config_text(text));
  CHECK(write_run_config(b) == text);

  // Defaults survive the trip too (heads stays derived, not pinned).
  RunConfig d, d2;
  apply_config(d2, parse_config_text(write_run_config(d)));
  CHECK(write_run_config(d2) == write_run_config(d));
  CHECK_FALSE(d2.net_heads_set);
}

TEST_CASE("run config validation") {
  RunConfig rc;
  rc.task = "dance";
  CHECK_THROWS_AS(rc.validate(), ConfigError);
  rc.task = "toy";
  rc.jobs = 0;
  CHECK_THROWS_AS(rc.validate(), ConfigError);
  rc.jobs = 1;
  rc.window = 1;
  CHECK_THROWS_AS(rc.validate(), ConfigError);
  rc.window = 2;
  CHECK_NOTHROW(rc.validate());
}

TEST_CASE("help, version, and usage errors") {
  CliResult help = run_cli({"--help"});
  CHECK(help.code == 0);
  for (const char* name : {"stabilize", "propagate", "evaluate", "toy"})
    CHECK(help.out.find(name) != std::string::npos);

  CliResult sub = run_cli({"stabilize", "--help"});
  CHECK(sub.code == 0);
  CHECK(sub.out.find("--seed") != std::string::npos);
  CHECK(sub.out.find("default: 25") != std::string::npos);
  CHECK(sub.out.find("default: 300") != std::string::npos);

  CliResult version = run_cli({"--version"});
  CHECK(version.code == 0);
  CHECK(version.out.find(kVersion) != std::string::npos);

  CHECK(run_cli({"stabilize", "--bogus-flag"}).code == 2);
  CHECK(run_cli({}).code == 2);           // missing subcommand
  CHECK(run_cli({"waltz"}).code == 2);    // unknown subcommand
}

TEST_CASE("toy command writes csv, plots, and a parseable manifest") {
  fixtures::TempDir dir("cli_toy");
  const std::string out = dir.sub("out");
  CliResult r = run_cli({"toy", "--out-dir", out, "--seed", "5"});
  REQUIRE(r.code == 0);
  CHECK(r.out == "toy: frames=8 snapshots=3 irt=false\n");
  for (const char* stem : {"toy_000100", "toy_000200", "toy_001000"}) {
    CHECK(std::filesystem::exists(out + "/metrics/" + stem + ".csv"));
    CHECK(std::filesystem::exists(out + "/plots/" + stem + ".png"));
  }

  RunConfig manifest;
  apply_config(manifest, parse_config_file(out + "/run-manifest.txt"));
  CHECK(manifest.task == "toy");
  CHECK(manifest.seed == 5);

  SUBCASE("reweighted run carries minor-head rows") {
    const std::string out2 = dir.sub("irt");
    CliResult r2 = run_cli({"toy", "--irt", "--out-dir", out2});
    REQUIRE(r2.code == 0);
    std::stringstream ss(read_file(out2 + "/metrics/toy_000100.csv"));
    std::string line;
    int lines = 0;
    while (std::getline(ss, line)) ++lines;
    CHECK(lines == 17);  // header + 8 frames x 2 heads
  }
}

TEST_CASE("stabilize fits an identity operator and lays out artifacts") {
  fixtures::TempDir dir("cli_identity");
  VideoSequence v = fixtures::make_pattern_video(16, 16, 5, 0.25, 0.0, 0.0, 31);
  save_sequence(v, dir.sub("in"));
  save_sequence(v, dir.sub("proc"));  // identity operator: processed == input
  write_text(dir.sub("cfg.ini"), std::string(kTinyNetConfig) +
                                     "[train]\n"
                                     "learning_rate = 5e-3\n"
                                     "epochs = 40\n");
  const std::string out = dir.sub("out");
  CliResult r = run_cli({"stabilize", "--config", dir.sub("cfg.ini"), "--input-dir",
                         dir.sub("in"), "--processed-dir", dir.sub("proc"), "--out-dir", out});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("stabilize: frames=5 epochs_run=40 stop=budget") == 0);

  VideoSequence outputs = load_sequence(out + "/frames_main");
  REQUIRE(outputs.length() == 5);
  CHECK(fixtures::mean_abs_video_diff(outputs, v) <= 0.02);
  CHECK(count_files(out + "/frames_minor") == 0);
  CHECK(std::filesystem::exists(out + "/checkpoints/final.ckpt"));

  std::stringstream loss(read_file(out + "/metrics/loss.csv"));
  std::string line;
  std::getline(loss, line);
  CHECK(line == "epoch,mean_loss");
  int rows = 0;
  double first = -1.0, last = -1.0;
  while (std::getline(loss, line)) {
    const double v2 = std::stod(line.substr(line.find(',') + 1));
    if (rows == 0) first = v2;
    last = v2;
    ++rows;
  }
  CHECK(rows == 40);
  CHECK(last < first);
}

TEST_CASE("stabilize data errors exit with code 3") {
  fixtures::TempDir dir("cli_data_err");
  save_sequence(static_video(16, 16, 6, 1), dir.sub("in"));
  save_sequence(static_video(16, 16, 4, 1), dir.sub("proc"));
  CliResult mismatch = run_cli({"stabilize", "--input-dir", dir.sub("in"), "--processed-dir",
                                dir.sub("proc"), "--out-dir", dir.sub("out")});
  CHECK(mismatch.code == 3);

  save_sequence(static_video(16, 16, 6, 1), dir.sub("proc2"));
  write_text(dir.sub("proc2") + "/frame_00002.png", "these bytes are not a png");
  CliResult corrupt = run_cli({"stabilize", "--input-dir", dir.sub("in"), "--processed-dir",
                               dir.sub("proc2"), "--out-dir", dir.sub("out")});
  CHECK(corrupt.code == 3);

  CliResult missing = run_cli({"stabilize", "--input-dir", dir.sub("nowhere"),
                               "--processed-dir", dir.sub("proc"), "--out-dir", dir.sub("out")});
  CHECK(missing.code == 3);
}

TEST_CASE("config errors exit with code 2") {
  fixtures::TempDir dir("cli_cfg_err");
  write_text(dir.sub("bad.ini"), "[train]\nwarp_speed = 9\n");
  CHECK(run_cli({"toy", "--config", dir.sub("bad.ini")}).code == 2);

  // Required directories are config errors before any data is touched.
  CHECK(run_cli({"stabilize", "--out-dir", dir.sub("out")}).code == 2);
  CHECK(run_cli({"stabilize", "--input-dir", dir.sub("in"), "--out-dir", dir.sub("out")}).code ==
        2);
  CHECK(run_cli({"toy", "--jobs", "0", "--out-dir", dir.sub("out")}).code == 2);
}

TEST_CASE("evaluate on a static scene reports the zero-flow fixed point") {
  fixtures::TempDir dir("cli_eval");
  VideoSequence v = static_video(16, 16, 4, 8);
  save_sequence(v, dir.sub("frames"));
  const std::string out = dir.sub("out");
  CliResult r = run_cli({"evaluate", "--input-dir", dir.sub("frames"), "--processed-dir",
                         dir.sub("frames"), "--out-dir", out});
  REQUIRE(r.code == 0);
  CHECK(r.out == "evaluate: frames=4 e_warp=0 f_data=100\n");
  const std::string json = read_file(out + "/metrics/report.json");
  CHECK(json.find("\"e_warp\"") != std::string::npos);
  CHECK(std::filesystem::exists(out + "/metrics/report.csv"));
}

TEST_CASE("propagate spreads a color reference and guards its inputs") {
  fixtures::TempDir dir("cli_prop");
  VideoSequence v = static_video(16, 16, 4, 12);
  save_sequence(v, dir.sub("in"));

  // The reference keeps the input's filename; here frame 0, inverted.
  Frame ref = v.frames[0];
  for (double& x : ref.data) x = 1.0 - x;
  std::filesystem::create_directories(dir.sub("refs"));
  save_png(ref, dir.sub("refs") + "/frame_00000.png");

  write_text(dir.sub("cfg.ini"), std::string(kTinyNetConfig) +
                                     "[train]\n"
                                     "learning_rate = 5e-3\n"
                                     "[propagate]\n"
                                     "k_iterations = 150\n");
  const std::string out = dir.sub("out");
  CliResult r = run_cli({"propagate", "--config", dir.sub("cfg.ini"), "--input-dir",
                         dir.sub("in"), "--processed-dir", dir.sub("refs"), "--out-dir", out});
  REQUIRE(r.code == 0);
  CHECK(r.out == "propagate: frames=4 task=color iterations=450\n");

  VideoSequence outputs = load_sequence(out + "/frames_main");
  REQUIRE(outputs.length() == 4);
  VideoSequence want;
  for (int i = 0; i < 4; ++i) want.frames.push_back(ref);
  CHECK(fixtures::mean_abs_video_diff(outputs, want) <= 0.05);

  std::stringstream loss(read_file(out + "/metrics/loss.csv"));
  std::string line;
  std::getline(loss, line);
  CHECK(line == "frame,mean_loss");
  int rows = 0;
  while (std::getline(loss, line)) ++rows;
  CHECK(rows == 3);

  SUBCASE("zero references is a config error") {
    std::filesystem::create_directories(dir.sub("empty"));
    CliResult none = run_cli({"propagate", "--input-dir", dir.sub("in"), "--processed-dir",
                              dir.sub("empty"), "--out-dir", dir.sub("out2")});
    CHECK(none.code == 2);
  }

  SUBCASE("a reference naming no input frame is a data error") {
    std::filesystem::create_directories(dir.sub("stray"));
    save_png(ref, dir.sub("stray") + "/frame_00099.png");
    CliResult stray = run_cli({"propagate", "--input-dir", dir.sub("in"), "--processed-dir",
                               dir.sub("stray"), "--out-dir", dir.sub("out3")});
    CHECK(stray.code == 3);
  }
}

TEST_CASE("same seed gives byte-identical runs, new seed diverges") {
  fixtures::TempDir dir("cli_seeded");
  VideoSequence clean = static_video(16, 16, 4, 3);
  VideoSequence flick = fixtures::apply_flicker(clean, 0.1, 7);
  save_sequence(clean, dir.sub("in"));
  save_sequence(flick, dir.sub("proc"));
  write_text(dir.sub("cfg.ini"), std::string(kTinyNetConfig) +
                                     "[train]\nepochs = 5\nlearning_rate = 2e-3\n");

  auto run_to = [&](const std::string& out, const std::string& seed) {
    CliResult r = run_cli({"stabilize", "--config", dir.sub("cfg.ini"), "--input-dir",
                           dir.sub("in"), "--processed-dir", dir.sub("proc"), "--out-dir",
                           dir.sub(out), "--seed", seed});
    REQUIRE(r.code == 0);
  };
  run_to("a", "11");
  run_to("b", "11");
  run_to("c", "12");
  CHECK(read_file(dir.sub("a") + "/metrics/loss.csv") ==
        read_file(dir.sub("b") + "/metrics/loss.csv"));
  CHECK(read_file(dir.sub("a") + "/frames_main/frame_00002.png") ==
        read_file(dir.sub("b") + "/frames_main/frame_00002.png"));
  CHECK(read_file(dir.sub("a") + "/metrics/loss.csv") !=
        read_file(dir.sub("c") + "/metrics/loss.csv"));

  // The manifest records the winning (command-line) seed.
  RunConfig manifest;
  apply_config(manifest, parse_config_file(dir.sub("a") + "/run-manifest.txt"));
  CHECK(manifest.seed == 11);
}

TEST_CASE("window splits clips and jobs fans them over workers") {
  fixtures::TempDir dir("cli_jobs");
  VideoSequence clean = fixtures::make_pattern_video(16, 16, 8, 0.25, 0.0, 0.0, 4);
  VideoSequence flick = fixtures::apply_flicker(clean, 0.08, 9);
  save_sequence(clean, dir.sub("in"));
  save_sequence(flick, dir.sub("proc"));
  write_text(dir.sub("cfg.ini"), std::string(kTinyNetConfig) +
                                     "[train]\nepochs = 4\nlearning_rate = 2e-3\n");

  auto run_jobs = [&](const std::string& out, const char* jobs) {
    CliResult r = run_cli({"stabilize", "--config", dir.sub("cfg.ini"), "--input-dir",
                           dir.sub("in"), "--processed-dir", dir.sub("proc"), "--out-dir",
                           dir.sub(out), "--window", "4", "--jobs", jobs, "--seed", "2"});
    REQUIRE(r.code == 0);
    return r;
  };
  CliResult forked = run_jobs("fan", "2");
  CHECK(forked.out.find("clips=2 jobs=2") != std::string::npos);
  CHECK(std::filesystem::exists(dir.sub("fan") + "/clips/clip_000/metrics/loss.csv"));
  CHECK(std::filesystem::exists(dir.sub("fan") + "/clips/clip_001/metrics/loss.csv"));
  CHECK(count_files(dir.sub("fan") + "/frames_main") == 8);

  // Clip 1's first frame is global frame 4, byte for byte.
  CHECK(read_file(dir.sub("fan") + "/frames_main/frame_00004.png") ==
        read_file(dir.sub("fan") + "/clips/clip_001/frames_main/frame_00000.png"));

  // Worker fan-out must not change the artifacts.
  run_jobs("serial", "1");
  CHECK(read_file(dir.sub("fan") + "/frames_main/frame_00007.png") ==
        read_file(dir.sub("serial") + "/frames_main/frame_00007.png"));
  CHECK(read_file(dir.sub("fan") + "/clips/clip_001/metrics/loss.csv") ==
        read_file(dir.sub("serial") + "/clips/clip_001/metrics/loss.csv"));
}

TEST_CASE("stabilize emits metric reports when flows are supplied") {
  fixtures::TempDir dir("cli_flows");
  VideoSequence clean = fixtures::make_pattern_video(16, 16, 4, 0.5, 0.25, 0.0, 6);
  VideoSequence flick = fixtures::apply_flicker(clean, 0.1, 13);
  save_sequence(clean, dir.sub("in"));
  save_sequence(flick, dir.sub("proc"));
  const std::string manifest = write_translation_flows(dir, clean, 0.5, 0.25);
  write_text(dir.sub("cfg.ini"), std::string(kTinyNetConfig) +
                                     "[train]\nepochs = 8\nlearning_rate = 2e-3\n");

  const std::string out = dir.sub("out");
  CliResult r = run_cli({"stabilize", "--config", dir.sub("cfg.ini"), "--input-dir",
                         dir.sub("in"), "--processed-dir", dir.sub("proc"), "--out-dir", out,
                         "--flow-manifest", manifest});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("e_warp=") != std::string::npos);
  CHECK(r.out.find("f_data=") != std::string::npos);
  CHECK(std::filesystem::exists(out + "/metrics/report.csv"));
  CHECK(std::filesystem::exists(out + "/metrics/report.json"));
}
