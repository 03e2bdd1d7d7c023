#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "metakernel/cost_model.hpp"
#include "metakernel/dataset.hpp"
#include "metakernel/sampler.hpp"
#include "metakernel/supernet.hpp"

namespace mk {

/// Minimal TOML reader covering the configuration surface: [section] tables,
/// string/number/bool scalars and integer arrays, # comments. Keys are
/// flattened to "section.key".
class TomlDoc {
 public:
  static TomlDoc parse(const std::string& text);
  static TomlDoc parse_file(const std::string& path);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_number(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<long long> get_ints(const std::string& key,
                                  std::vector<long long> fallback) const;

 private:
  struct Value {
    enum class Kind { string, number, boolean, int_array };
    Kind kind = Kind::string;
    std::string str;
    double num = 0.0;
    bool flag = false;
    std::vector<long long> ints;
  };
  std::map<std::string, Value> values_;
  const Value* find(const std::string& key, Value::Kind kind) const;
};

/// Full description of a run: data source, model, budget, relaxation and
/// optimizer settings. Defaults are the desk-scale configuration.
struct RunConfig {
  std::uint64_t seed = 42;
  int epochs = 30;
  int batch_size = 64;
  int alpha_warmup_epochs = 0;

  std::string data_source = "synthetic";  // synthetic | idx
  SyntheticTaskConfig task;
  int train_samples = 4000;
  int test_samples = 1000;
  std::string train_images, train_labels, test_images, test_labels;

  ModelConfig model;

  CostBudget budget{0.0, 0.1, 2.0};
  /// When budget target is 0, the target is this fraction of the supernet's
  /// all-largest-kernel cost.
  double target_fraction_of_max = 0.5;

  GumbelConfig gumbel;

  double lr = 0.2;
  double momentum = 0.9;
  double weight_decay = 3e-5;
  /// 0 selects the default of lr/10.
  double alpha_lr = 0.0;
  bool cosine_decay = true;
  bool use_gumbel_for_cost = false;

  std::string out_dir = "runs/out";

  double effective_alpha_lr() const { return alpha_lr > 0.0 ? alpha_lr : lr * 0.1; }
  void validate() const;
};

RunConfig default_run_config();
RunConfig run_config_from_toml(const TomlDoc& doc);
RunConfig load_run_config(const std::string& path);
std::string run_config_toml(const RunConfig& cfg);

}  // namespace mk
