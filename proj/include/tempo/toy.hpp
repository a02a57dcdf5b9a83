#pragma once

#include <string>
#include <vector>

#include "tempo/image.hpp"

namespace tempo {

// Low-dimensional rehearsal of the training dynamics: a handful of nearby
// "frames" mapped to noisy targets, trained with the same one-sample-per-
// iteration loop as the video trainer.  Early iterations give mutually
// consistent outputs, late ones overfit the noise, and the reweighted mode
// locks the main head onto a single target cluster.
struct ToyConfig {
  int n_frames = 8;
  int input_dim = 2;
  int out_dim = 2;
  double noise_scale = 0.1;        // target jitter around the cluster centers
  bool bimodal = false;            // split targets across two centers
  double cluster_separation = 2.0;
  int iterations = 1000;
  std::vector<int> snapshot_iters = {100, 200, 1000};
  int hidden_dim = 32;
  double learning_rate = 1e-2;
  int warmup_iterations = 50;  // main-mode steps before reweighted training
  double delta = 0.02;         // confidence floor, as in the video trainer
  uint64_t seed = 0;

  void validate() const;
};

using ToyPoint = std::vector<double>;

struct ToyData {
  std::vector<ToyPoint> inputs;   // n_frames nearby points
  std::vector<ToyPoint> targets;  // one per frame
  std::vector<ToyPoint> centers;  // 1 (unimodal) or 2 (bimodal) ground truths
};

// Frame i draws its target from center i%2 (bimodal) or the single center.
ToyData make_toy_data(const ToyConfig& cfg);

struct ToySnapshot {
  int iteration = 0;
  std::vector<ToyPoint> main;
  std::vector<ToyPoint> minor;  // empty unless the run is reweighted
};

struct ToyTrajectory {
  ToyData data;
  std::vector<ToySnapshot> snapshots;
};

// Trains a 2-hidden-layer MLP on the toy data, one uniformly drawn sample
// per iteration, recording all n_frames outputs at each snapshot iteration.
// With irt the net carries two heads through the warm-up/confidence schedule
// (warm-up steps are not counted toward `iterations`).
ToyTrajectory run_toy(const ToyConfig& cfg, bool irt);

// Mean pairwise Euclidean distance.
double point_spread(const std::vector<ToyPoint>& pts);

double point_distance(const ToyPoint& a, const ToyPoint& b);

// One CSV per snapshot: iteration,frame_index,head,out_x,out_y,target_x,
// target_y (2-D outputs only).
void write_toy_csv(const ToyData& data, const ToySnapshot& snap, const std::string& path);

// Scatter plot per snapshot: targets blue, centers black, main outputs red,
// minor outputs orange.
void write_toy_scatter(const ToyData& data, const ToySnapshot& snap, const std::string& path);

}  // namespace tempo
