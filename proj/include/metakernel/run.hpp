#pragma once

#include <string>
#include <vector>

#include "metakernel/config.hpp"
#include "metakernel/dataset.hpp"
#include "metakernel/supernet.hpp"

namespace mk {

/// Append-only per-step log plus per-epoch candidate-probability histograms.
/// Numbers are written with 17 significant digits so identical runs produce
/// byte-identical files.
class RunLog {
 public:
  struct Record {
    std::size_t step;
    double tau, ce, flops_loss, total, expected_flops;
  };

  void append(const Record& r) { records_.push_back(r); }
  void append_hist(int epoch, std::size_t layer, const std::vector<double>& mean_probs);

  const std::vector<Record>& records() const { return records_; }
  void write_csv(const std::string& path) const;
  void write_hist_csv(const std::string& path) const;

 private:
  struct HistRow {
    int epoch;
    std::size_t layer;
    std::vector<double> mean_probs;
  };
  std::vector<Record> records_;
  std::vector<HistRow> hist_;
};

/// Train/test split resolved from the run configuration (synthetic
/// generation or IDX files).
struct SplitData {
  Dataset train;
  Dataset test;
};
SplitData load_data(const RunConfig& cfg);

struct SearchOutcome {
  DerivedArch arch;
  double final_ce = 0.0;
  double final_expected_flops = 0.0;
  double derived_test_accuracy = 0.0;
  std::size_t steps = 0;
  double resolved_target = 0.0;
};

/// End-to-end search: builds the supernet, runs the search loop, derives the
/// architecture and writes log.csv, hist.csv, arch.json and checkpoint.bin
/// into out_dir (creating it). Deterministic in (config, seed).
SearchOutcome run_search(const RunConfig& cfg, const std::string& out_dir);

struct TrainOutcome {
  double test_accuracy = 0.0;
  double final_ce = 0.0;
  std::size_t steps = 0;
};

/// Trains a fixed architecture from scratch (search-then-retrain protocol).
/// Writes log.csv and checkpoint.bin into out_dir when non-empty.
TrainOutcome run_train(const RunConfig& cfg,
                       const std::vector<std::vector<int>>& choices,
                       const std::string& out_dir);

/// Accuracy of a checkpoint on the configured test split.
double run_eval(const RunConfig& cfg, const std::string& checkpoint_path);

// ---- checkpoint ------------------------------------------------------------

struct Checkpoint {
  SuperNet net;
  std::uint64_t step = 0;
  std::string mode;  // "search" or "train"
  std::vector<std::vector<int>> choices;  // present for trained fixed nets
};

void save_checkpoint(const std::string& path, SuperNet& net, std::uint64_t step,
                     const std::string& mode,
                     const std::vector<std::vector<int>>& choices);
Checkpoint load_checkpoint(const std::string& path);

// ---- exports ---------------------------------------------------------------

void write_arch_json(const std::string& path, const DerivedArch& arch,
                     const CandidateSet& candidates);
DerivedArch read_arch_json(const std::string& path, const CandidateSet& candidates);

/// Per-layer counts of filters per kernel size (none first); rows sum to the
/// layer's filter count.
std::vector<std::vector<int>> kernel_distribution(const DerivedArch& arch,
                                                  const CandidateSet& candidates);

/// CSV with fixed column order: layer, size_0, then one column per candidate
/// size in ascending order.
void write_kernel_dist_csv(const std::string& path, const DerivedArch& arch,
                           const CandidateSet& candidates);

std::string format_double(double v);

}  // namespace mk
