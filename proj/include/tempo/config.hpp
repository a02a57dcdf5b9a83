#pragma once

#include <map>
#include <string>

#include "tempo/metrics.hpp"
#include "tempo/net.hpp"
#include "tempo/propagation.hpp"
#include "tempo/toy.hpp"
#include "tempo/trainer.hpp"

namespace tempo {

inline constexpr const char* kVersion = "0.1.0";

// Key/value text with [section] headers.  Lines are trimmed, blank lines and
// lines whose first character is '#' are skipped, and duplicate keys within
// a section are rejected.  The parser carries no schema; apply_config does.
struct ConfigFile {
  std::map<std::string, std::map<std::string, std::string>> sections;
};

ConfigFile parse_config_text(const std::string& text, const std::string& what = "config");
ConfigFile parse_config_file(const std::string& path);

// Everything a command needs, resolved from defaults, then a config file,
// then command-line flags — last writer wins.
struct RunConfig {
  std::string task = "stabilize";  // stabilize | propagate | evaluate | toy
  uint64_t seed = 0;
  int jobs = 1;     // worker processes fanned over independent clips
  int window = 300; // clip length for splitting long stabilize inputs

  std::string input_dir;
  std::string processed_dir;
  std::string out_dir = "out";
  std::string flow_manifest;

  NetSpec net;
  // Explicit [net] heads beats the irt-derived default of 1 or 2.
  bool net_heads_set = false;
  TrainConfig train;
  PropagationConfig prop;  // prop.train is mirrored from train when a run starts
  ToyConfig toy;
  bool toy_irt = false;

  WarpErrorOptions metrics;

  void validate() const;
};

// Copies `f` onto `rc`, rejecting unknown sections and keys.
void apply_config(RunConfig& rc, const ConfigFile& f);

// Serializes every field back into the section/key format apply_config
// reads, prefixed with a version comment; used verbatim as the run manifest.
std::string write_run_config(const RunConfig& rc);

}  // namespace tempo
