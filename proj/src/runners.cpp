#include "tempo/runners.hpp"

#include <fnmatch.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <utility>

#include "tempo/errors.hpp"
#include "tempo/image_io.hpp"
#include "tempo/metrics.hpp"
#include "tempo/video.hpp"

namespace fs = std::filesystem;

namespace tempo {

namespace {

void ensure_dir(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw DataError("cannot create directory " + path + ": " + ec.message());
}

// The fixed artifact layout every command writes under its out_dir.
struct OutTree {
  std::string root, frames_main, frames_minor, metrics, checkpoints, plots;
};

OutTree make_out_tree(const std::string& out_dir) {
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
  OutTree t{out_dir,
            out_dir + "/frames_main",
            out_dir + "/frames_minor",
            out_dir + "/metrics",
            out_dir + "/checkpoints",
            out_dir + "/plots"};
  for (const std::string* d : {&t.root, &t.frames_main, &t.frames_minor, &t.metrics,
                               &t.checkpoints, &t.plots})
    ensure_dir(*d);
  return t;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out.good()) throw DataError("cannot write " + path);
}

void write_manifest(const RunConfig& rc, const std::string& out_dir) {
  write_text_file(out_dir + "/run-manifest.txt", write_run_config(rc));
}

// Column zero is whatever the rows index (epochs here, adopted frames for
// propagation); auto_stop_check replays straight off these values.
void write_loss_csv(const std::vector<std::pair<int, double>>& rows, const char* index_name,
                    const std::string& path) {
  std::string s = std::string(index_name) + ",mean_loss\n";
  for (const auto& [index, loss] : rows)
    s += std::to_string(index) + "," + format_g(loss) + "\n";
  write_text_file(path, s);
}

std::vector<std::string> list_pngs(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("no such directory: " + dir);
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (fnmatch("*.png", name.c_str(), 0) == 0) names.push_back(name);
  }
  std::sort(names.begin(), names.end());
  return names;
}

// Derived seeds keep the net, the shuffle, and the toy sampler decoupled
// from clip position only through an additive offset, so jobs=1 and jobs=N
// produce identical artifacts.
void seed_everything(RunConfig& rc, uint64_t seed) {
  rc.seed = seed;
  rc.net.rng_seed = seed;
  rc.train.seed = seed;
  rc.toy.seed = seed;
}

void resolve(RunConfig& rc) {
  rc.validate();
  if (!rc.net_heads_set) {
    rc.net.heads = rc.train.irt ? 2 : 1;
    rc.net_heads_set = true;  // the manifest records the resolved head count
  }
  seed_everything(rc, rc.seed);
  rc.prop.train = rc.train;
}

RunConfig clip_config(const RunConfig& rc, size_t index) {
  RunConfig c = rc;
  seed_everything(c, rc.seed + index);
  return c;
}

std::string clip_dir(const std::string& out_dir, size_t index) {
  char name[32];
  std::snprintf(name, sizeof(name), "clip_%03zu", index);
  return out_dir + "/clips/" + name;
}

void evaluate_to_tree(const VideoSequence& outputs, const VideoSequence& inputs,
                      const VideoSequence& processed, const RunConfig& rc, const OutTree& tree,
                      MetricReport* out_report) {
  FileFlow flows(rc.flow_manifest);
  MetricReport rep = evaluate_video(outputs, inputs, processed, flows, rc.metrics);
  write_metric_csv(rep, tree.metrics + "/report.csv");
  write_metric_json(rep, tree.metrics + "/report.json");
  if (out_report) *out_report = rep;
}

// Trains one clip and fills its artifact tree; metric reports are the
// caller's job (flow-manifest frame indices are global, not clip-local).
TrainResult run_stabilize_clip(const PairedVideo& clip, const RunConfig& rc,
                               const std::string& out_dir, const std::string& label) {
  OutTree tree = make_out_tree(out_dir);
  TrainCallbacks cb;
  cb.on_epoch = [&](const EpochEvent& e) {
    std::fprintf(stderr, "%sepoch %d/%d loss %s\n", label.c_str(), e.epoch + 1,
                 rc.train.epochs, format_g(e.mean_loss).c_str());
  };
  TrainResult tr = train_consistency(clip, rc.net, rc.train, cb);

  std::vector<std::pair<int, double>> rows;
  for (size_t i = 0; i < tr.epoch_losses.size(); ++i)
    rows.emplace_back(static_cast<int>(i), tr.epoch_losses[i]);
  write_loss_csv(rows, "epoch", tree.metrics + "/loss.csv");

  InferenceResult inf = infer_video(tr.net, clip.inputs);
  save_sequence(inf.main, tree.frames_main);
  if (inf.minor) save_sequence(*inf.minor, tree.frames_minor);
  save_checkpoint(tr.net, tree.checkpoints + "/final.ckpt");
  return tr;
}

// Forks one worker per task index, at most `jobs` alive at a time, and
// returns the worst exit code.  Callers must not have entered any OpenMP
// parallel region before forking; workers build fresh thread teams.
int run_forked(size_t n_tasks, int jobs, const std::function<void(size_t)>& task) {
  std::map<pid_t, size_t> running;
  size_t next = 0;
  int worst = 0;
  auto reap = [&]() {
    int status = 0;
    const pid_t pid = waitpid(-1, &status, 0);
    if (pid < 0) throw std::runtime_error("waitpid failed");
    const auto it = running.find(pid);
    if (it == running.end()) return;
    int code = 1;
    if (WIFEXITED(status)) code = WEXITSTATUS(status);
    if (code != 0)
      std::fprintf(stderr, "clip %zu worker exited with code %d\n", it->second, code);
    worst = std::max(worst, code);
    running.erase(it);
  };
  while (next < n_tasks || !running.empty()) {
    if (next < n_tasks && running.size() < static_cast<size_t>(jobs)) {
      const pid_t pid = fork();
      if (pid < 0) throw std::runtime_error("fork failed");
      if (pid == 0) {
        int code = 0;
        try {
          task(next);
        } catch (const std::exception& e) {
          std::fprintf(stderr, "clip %zu: %s\n", next, e.what());
          code = exit_code_for(e);
        }
        std::fflush(nullptr);
        _exit(code);
      }
      running.emplace(pid, next);
      ++next;
    } else {
      reap();
    }
  }
  return worst;
}

// Renumbers per-clip frames into one top-level directory (byte copies, so
// merged artifacts are bit-identical to the per-clip ones).
void merge_frames(const std::vector<std::string>& clip_dirs, const std::string& subdir,
                  const std::string& dst) {
  size_t next = 0;
  for (const std::string& cd : clip_dirs) {
    const std::string src_dir = cd + "/" + subdir;
    for (const std::string& name : list_pngs(src_dir)) {
      char out_name[32];
      std::snprintf(out_name, sizeof(out_name), "frame_%05zu.png", next++);
      std::error_code ec;
      fs::copy_file(src_dir + "/" + name, dst + "/" + out_name,
                    fs::copy_options::overwrite_existing, ec);
      if (ec) throw DataError("cannot copy " + name + " into " + dst + ": " + ec.message());
    }
  }
}

void need(const std::string& value, const std::string& flag, const std::string& task) {
  if (value.empty()) throw ConfigError(task + " needs " + flag);
}

const char* stop_str(StopReason r) {
  return r == StopReason::kAutoStop ? "auto" : "budget";
}

}  // namespace

int cmd_stabilize(RunConfig rc) {
  resolve(rc);
  need(rc.input_dir, "--input-dir", "stabilize");
  need(rc.processed_dir, "--processed-dir", "stabilize");

  VideoSequence inputs = load_sequence(rc.input_dir);
  VideoSequence processed = load_sequence(rc.processed_dir);
  PairedVideo pv = pair_full(inputs, processed);
  const std::vector<PairedVideo> clips = split_clips(pv, rc.window);

  OutTree tree = make_out_tree(rc.out_dir);
  write_manifest(rc, rc.out_dir);

  if (clips.size() == 1) {
    TrainResult tr = run_stabilize_clip(clips[0], rc, rc.out_dir, "");
    std::string line = "stabilize: frames=" + std::to_string(inputs.length()) +
                       " epochs_run=" + std::to_string(tr.epochs_run) +
                       " stop=" + stop_str(tr.stop);
    if (!rc.flow_manifest.empty()) {
      VideoSequence outputs = load_sequence(tree.frames_main);
      MetricReport rep;
      evaluate_to_tree(outputs, inputs, processed, rc, tree, &rep);
      line += " e_warp=" + format_g(rep.e_warp) + " f_data=" + format_g(rep.f_data);
    }
    std::printf("%s\n", line.c_str());
    return 0;
  }

  std::vector<std::string> clip_dirs;
  for (size_t i = 0; i < clips.size(); ++i) clip_dirs.push_back(clip_dir(rc.out_dir, i));

  auto one_clip = [&](size_t i) {
    char label[32];
    std::snprintf(label, sizeof(label), "clip %zu: ", i);
    run_stabilize_clip(clips[i], clip_config(rc, i), clip_dirs[i], label);
  };
  if (rc.jobs > 1) {
    const int worst = run_forked(clips.size(), rc.jobs, one_clip);
    if (worst != 0) return worst;
  } else {
    for (size_t i = 0; i < clips.size(); ++i) one_clip(i);
  }

  merge_frames(clip_dirs, "frames_main", tree.frames_main);
  if (rc.train.irt) merge_frames(clip_dirs, "frames_minor", tree.frames_minor);

  std::string line = "stabilize: frames=" + std::to_string(inputs.length()) +
                     " clips=" + std::to_string(clips.size()) +
                     " jobs=" + std::to_string(rc.jobs);
  if (!rc.flow_manifest.empty()) {
    VideoSequence outputs = load_sequence(tree.frames_main);
    MetricReport rep;
    evaluate_to_tree(outputs, inputs, processed, rc, tree, &rep);
    line += " e_warp=" + format_g(rep.e_warp) + " f_data=" + format_g(rep.f_data);
  }
  std::printf("%s\n", line.c_str());
  return 0;
}

int cmd_propagate(RunConfig rc) {
  resolve(rc);
  need(rc.input_dir, "--input-dir", "propagate");
  need(rc.processed_dir, "--processed-dir (reference targets)", "propagate");

  const std::vector<std::string> input_names = list_pngs(rc.input_dir);
  VideoSequence inputs = load_sequence(rc.input_dir);
  // 1-channel nets see the luma of the inputs (colorization workflows feed
  // grayscale video plus one colored reference).
  if (rc.net.in_channels == 1) inputs = to_grayscale(inputs);

  std::map<std::string, int> index_of;
  for (size_t i = 0; i < input_names.size(); ++i)
    index_of.emplace(input_names[i], static_cast<int>(i));

  const bool segmentation = rc.prop.task == PropagationTask::kSegmentation;
  const std::vector<std::string> ref_names = list_pngs(rc.processed_dir);
  if (ref_names.empty())
    throw ConfigError("no reference frames in " + rc.processed_dir +
                      " (names must match input frame files)");
  std::vector<std::pair<int, Frame>> refs;
  for (const std::string& name : ref_names) {
    const auto it = index_of.find(name);
    if (it == index_of.end())
      throw DataError("reference '" + name + "' matches no input frame file");
    Frame target = load_image((fs::path(rc.processed_dir) / name).string());
    if (segmentation) {
      // Reference masks store class ids in the first channel as id/255.
      Image<double> ids(1, target.height, target.width);
      for (int y = 0; y < target.height; ++y)
        for (int x = 0; x < target.width; ++x)
          ids.at(0, y, x) = static_cast<double>(std::llround(target.at(0, y, x) * 255.0));
      target = one_hot(ids, rc.net.out_channels);
    }
    refs.emplace_back(it->second, std::move(target));
  }
  PairedVideo pv = pair_references(inputs, std::move(refs));

  OutTree tree = make_out_tree(rc.out_dir);
  write_manifest(rc, rc.out_dir);

  std::vector<std::pair<int, double>> rows;
  TrainCallbacks cb;
  cb.on_epoch = [&](const EpochEvent& e) {
    rows.emplace_back(e.epoch, e.mean_loss);
    std::fprintf(stderr, "frame %d/%d loss %s\n", e.epoch, inputs.length() - 1,
                 format_g(e.mean_loss).c_str());
  };

  long iterations = 0;
  if (segmentation) {
    SegmentationResult res = propagate_segmentation(pv, rc.net, rc.prop, cb);
    // PNG masks hold id/255, the same encoding the references use.
    VideoSequence encoded;
    encoded.frame_rate = res.masks.frame_rate;
    for (const Frame& m : res.masks.frames) {
      Frame f = m;
      for (double& v : f.data) v /= 255.0;
      encoded.frames.push_back(std::move(f));
    }
    save_sequence(encoded, tree.frames_main, "mask_");
    save_checkpoint(res.net, tree.checkpoints + "/final.ckpt");
    iterations = static_cast<long>(rc.prop.k_iterations) * (inputs.length() - 1);
  } else {
    PpplResult res = propagate_pppl(pv, rc.net, rc.prop, cb);
    save_sequence(res.outputs, tree.frames_main);
    save_checkpoint(res.net, tree.checkpoints + "/final.ckpt");
    iterations = res.iterations;
  }
  write_loss_csv(rows, "frame", tree.metrics + "/loss.csv");

  std::printf("propagate: frames=%d task=%s iterations=%ld\n", inputs.length(),
              to_string(rc.prop.task).c_str(), iterations);
  return 0;
}

int cmd_evaluate(RunConfig rc) {
  resolve(rc);
  need(rc.input_dir, "--input-dir (frames to score)", "evaluate");
  need(rc.processed_dir, "--processed-dir (fidelity reference)", "evaluate");

  VideoSequence candidate = load_sequence(rc.input_dir);
  VideoSequence processed = load_sequence(rc.processed_dir);

  OutTree tree = make_out_tree(rc.out_dir);
  write_manifest(rc, rc.out_dir);

  MetricReport rep;
  if (rc.flow_manifest.empty()) {
    // No flows available: score under a static-scene assumption.
    ZeroFlow flows;
    rep = evaluate_video(candidate, candidate, processed, flows, rc.metrics);
  } else {
    FileFlow flows(rc.flow_manifest);
    rep = evaluate_video(candidate, candidate, processed, flows, rc.metrics);
  }
  write_metric_csv(rep, tree.metrics + "/report.csv");
  write_metric_json(rep, tree.metrics + "/report.json");

  std::printf("evaluate: frames=%d e_warp=%s f_data=%s\n", candidate.length(),
              format_g(rep.e_warp).c_str(), format_g(rep.f_data).c_str());
  return 0;
}

int cmd_toy(RunConfig rc) {
  resolve(rc);
  OutTree tree = make_out_tree(rc.out_dir);
  write_manifest(rc, rc.out_dir);

  ToyTrajectory traj = run_toy(rc.toy, rc.toy_irt);
  for (const ToySnapshot& snap : traj.snapshots) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "toy_%06d", snap.iteration);
    write_toy_csv(traj.data, snap, tree.metrics + "/" + stem + ".csv");
    write_toy_scatter(traj.data, snap, tree.plots + "/" + stem + ".png");
  }

  std::printf("toy: frames=%d snapshots=%zu irt=%s\n", rc.toy.n_frames, traj.snapshots.size(),
              rc.toy_irt ? "true" : "false");
  return 0;
}

int run_command(RunConfig rc) {
  if (rc.task == "stabilize") return cmd_stabilize(std::move(rc));
  if (rc.task == "propagate") return cmd_propagate(std::move(rc));
  if (rc.task == "evaluate") return cmd_evaluate(std::move(rc));
  if (rc.task == "toy") return cmd_toy(std::move(rc));
  throw ConfigError("unknown task '" + rc.task + "'");
}

}  // namespace tempo
