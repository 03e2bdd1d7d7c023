#include "metakernel/run.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "metakernel/autodiff.hpp"
#include "metakernel/ops.hpp"
#include "metakernel/rng.hpp"

namespace mk {

using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void RunLog::append_hist(int epoch, std::size_t layer,
                         const std::vector<double>& mean_probs) {
  hist_.push_back(HistRow{epoch, layer, mean_probs});
}

void RunLog::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ValueError("cannot write log: " + path);
  out << "step,tau,ce,flops_loss,total,expected_flops\n";
  for (const Record& r : records_) {
    out << r.step << "," << format_double(r.tau) << "," << format_double(r.ce)
        << "," << format_double(r.flops_loss) << "," << format_double(r.total)
        << "," << format_double(r.expected_flops) << "\n";
  }
}

void RunLog::write_hist_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ValueError("cannot write histogram log: " + path);
  out << "epoch,layer,option,mean_prob\n";
  for (const HistRow& row : hist_) {
    for (std::size_t opt = 0; opt < row.mean_probs.size(); ++opt) {
      out << row.epoch << "," << row.layer << "," << opt << ","
          << format_double(row.mean_probs[opt]) << "\n";
    }
  }
}

SplitData load_data(const RunConfig& cfg) {
  SplitData data;
  if (cfg.data_source == "synthetic") {
    SyntheticTaskConfig task = cfg.task;
    task.samples = cfg.train_samples;
    data.train = generate_dataset(task, 0);
    task.samples = cfg.test_samples;
    data.test = generate_dataset(task, 1);
  } else {
    data.train = load_idx(cfg.train_images, cfg.train_labels);
    data.test = load_idx(cfg.test_images, cfg.test_labels);
    validate_labels(data.train, cfg.task.num_classes);
    validate_labels(data.test, cfg.task.num_classes);
  }
  return data;
}

namespace {

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

Batch gather_batch(const Dataset& ds, const std::vector<std::size_t>& order,
                   std::size_t start, std::size_t count) {
  Shape shape = ds.images.shape();
  shape[0] = count;
  const std::size_t sample = ds.images.size() / ds.images.extent(0);
  Batch b;
  b.images = Tensor::zeros(shape);
  b.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t src = order[start + i];
    std::copy_n(ds.images.values().data() + src * sample, sample,
                b.images.values().data() + i * sample);
    b.labels[i] = ds.labels[src];
  }
  return b;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(seed ^ rng_domain::kShuffle, static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

void append_epoch_hist(RunLog& log, SuperNet& net, int epoch) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const SearchableLayer& layer = net.layers[l];
    const std::size_t options = net.cfg.candidates.num_options();
    std::vector<double> mean(options, 0.0);
    for (const Tensor& alpha : layer.alpha) {
      auto p = softmax_values(alpha.values());
      for (std::size_t k = 0; k < options; ++k) mean[k] += p[k];
    }
    for (double& m : mean) m /= static_cast<double>(layer.alpha.size());
    log.append_hist(epoch, l, mean);
  }
}

CostBudget resolve_budget(const RunConfig& cfg, const SuperNet& net,
                          double* resolved_target) {
  CostBudget budget = cfg.budget;
  if (budget.target <= 0.0) {
    budget.target = net.max_cost() * cfg.target_fraction_of_max;
  }
  if (resolved_target) *resolved_target = budget.target;
  budget.validate();
  return budget;
}

}  // namespace

SearchOutcome run_search(const RunConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  SplitData data = load_data(cfg);

  SuperNet net = SuperNet::create(cfg.model, cfg.seed);
  SearchOutcome outcome;
  SearchStepConfig step_cfg;
  step_cfg.gumbel = cfg.gumbel;
  step_cfg.budget = resolve_budget(cfg, net, &outcome.resolved_target);
  step_cfg.lr = cfg.lr;
  step_cfg.alpha_lr = cfg.effective_alpha_lr();
  step_cfg.cosine_decay = cfg.cosine_decay;
  step_cfg.use_gumbel_for_cost = cfg.use_gumbel_for_cost;

  const std::size_t n = data.train.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = std::max<std::size_t>(1, n / batch);
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);
  step_cfg.alpha_frozen_until =
      steps_per_epoch * static_cast<std::size_t>(cfg.alpha_warmup_epochs);

  SgdOptimizer weight_opt(net.weight_params(), cfg.momentum, cfg.weight_decay);
  SgdOptimizer alpha_opt(net.alpha_params(), 0.0, 0.0);

  RunLog log;
  std::size_t step = 0;
  StepStats stats{};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = epoch_order(n, cfg.seed, epoch);
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      Batch b = gather_batch(data.train, order, s * batch,
                             std::min(batch, n - s * batch));
      stats = search_step(net, b.images, b.labels, weight_opt, alpha_opt, step,
                          total_steps, step_cfg);
      log.append(RunLog::Record{step, stats.tau, stats.ce, stats.flops_loss,
                                stats.total, stats.expected_flops});
      ++step;
    }
    append_epoch_hist(log, net, epoch);
  }
  outcome.steps = step;
  outcome.final_ce = stats.ce;
  outcome.final_expected_flops = stats.expected_flops;
  outcome.arch = derive_architecture(net);

  {
    NoGradGuard no_grad;
    LayerProbs derived = fixed_probs_from_choices(net, outcome.arch.choices);
    outcome.derived_test_accuracy =
        evaluate_accuracy(net, data.test.images, data.test.labels, derived);
  }

  log.write_csv(out_dir + "/log.csv");
  log.write_hist_csv(out_dir + "/hist.csv");
  write_arch_json(out_dir + "/arch.json", outcome.arch, cfg.model.candidates);
  save_checkpoint(out_dir + "/checkpoint.bin", net, step, "search", {});
  std::ofstream echo(out_dir + "/config.toml");
  echo << run_config_toml(cfg);
  return outcome;
}

TrainOutcome run_train(const RunConfig& cfg,
                       const std::vector<std::vector<int>>& choices,
                       const std::string& out_dir) {
  cfg.validate();
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  SplitData data = load_data(cfg);

  SuperNet net = SuperNet::create(cfg.model, cfg.seed);
  LayerProbs probs = fixed_probs_from_choices(net, choices);

  const std::size_t n = data.train.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = std::max<std::size_t>(1, n / batch);
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);

  SgdOptimizer weight_opt(net.weight_params(), cfg.momentum, cfg.weight_decay);

  RunLog log;
  TrainOutcome outcome;
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = epoch_order(n, cfg.seed, epoch);
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      Batch b = gather_batch(data.train, order, s * batch,
                             std::min(batch, n - s * batch));
      Tape::active().clear();
      for (Tensor& t : net.weight_params()) t.zero_grad();
      Tensor logits = forward_single_path(net, b.images, probs);
      Tensor ce = cross_entropy_logits(logits, b.labels);
      outcome.final_ce = ce.value();
      if (!std::isfinite(outcome.final_ce)) {
        throw ValueError("train: non-finite loss at step " + std::to_string(step));
      }
      backward(ce);
      weight_opt.step(cosine_lr(cfg.lr, step, total_steps, cfg.cosine_decay));
      Tape::active().clear();
      log.append(RunLog::Record{step, 0.0, outcome.final_ce, 0.0, outcome.final_ce,
                                0.0});
      ++step;
    }
  }
  outcome.steps = step;
  outcome.test_accuracy =
      evaluate_accuracy(net, data.test.images, data.test.labels, probs);
  if (!out_dir.empty()) {
    log.write_csv(out_dir + "/log.csv");
    save_checkpoint(out_dir + "/checkpoint.bin", net, step, "train", choices);
  }
  return outcome;
}

double run_eval(const RunConfig& cfg, const std::string& checkpoint_path) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  SplitData data = load_data(cfg);
  std::vector<std::vector<int>> choices = ckpt.choices;
  if (choices.empty()) {
    choices = derive_architecture(ckpt.net).choices;
  }
  LayerProbs probs = fixed_probs_from_choices(ckpt.net, choices);
  return evaluate_accuracy(ckpt.net, data.test.images, data.test.labels, probs);
}

// ---- checkpoint ------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'M', 'K', 'C', 'P'};
constexpr std::uint32_t kCkptVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_string(std::ofstream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw ValueError(path + ": truncated checkpoint");
  }
  return v;
}
std::uint64_t read_u64(std::ifstream& in, const std::string& path) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw ValueError(path + ": truncated checkpoint");
  }
  return v;
}
std::string read_string(std::ifstream& in, const std::string& path) {
  const std::uint32_t len = read_u32(in, path);
  std::string s(len, '\0');
  if (!in.read(s.data(), len)) throw ValueError(path + ": truncated checkpoint");
  return s;
}

json model_meta(const SuperNet& net) {
  json meta;
  meta["image_size"] = net.cfg.image_size;
  meta["in_channels"] = net.cfg.in_channels;
  meta["num_classes"] = net.cfg.num_classes;
  meta["stem_channels"] = net.cfg.stem_channels;
  meta["block_channels"] = net.cfg.block_channels;
  meta["block_strides"] = net.cfg.block_strides;
  json sizes = json::array();
  for (const CandidateShape& s : net.cfg.candidates.shapes()) {
    sizes.push_back(json::array({s.h, s.w}));
  }
  meta["candidates"] = sizes;
  meta["include_none"] = net.cfg.candidates.include_none();
  meta["share_alpha_per_layer"] = net.cfg.share_alpha_per_layer;
  return meta;
}

ModelConfig model_from_meta(const json& meta) {
  ModelConfig cfg;
  cfg.image_size = meta.at("image_size").get<int>();
  cfg.in_channels = meta.at("in_channels").get<int>();
  cfg.num_classes = meta.at("num_classes").get<int>();
  cfg.stem_channels = meta.at("stem_channels").get<int>();
  cfg.block_channels = meta.at("block_channels").get<std::vector<int>>();
  cfg.block_strides = meta.at("block_strides").get<std::vector<int>>();
  std::vector<CandidateShape> shapes;
  for (const auto& s : meta.at("candidates")) {
    shapes.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
  }
  cfg.candidates = CandidateSet(shapes, meta.at("include_none").get<bool>());
  cfg.share_alpha_per_layer = meta.at("share_alpha_per_layer").get<bool>();
  return cfg;
}

}  // namespace

void save_checkpoint(const std::string& path, SuperNet& net, std::uint64_t step,
                     const std::string& mode,
                     const std::vector<std::vector<int>>& choices) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValueError("cannot write checkpoint: " + path);
  out.write(kCkptMagic, 4);
  write_u32(out, kCkptVersion);
  write_u64(out, step);

  json meta = model_meta(net);
  meta["mode"] = mode;
  if (!choices.empty()) meta["choices"] = choices;
  write_string(out, meta.dump());

  auto named = net.named_params();
  write_u32(out, static_cast<std::uint32_t>(named.size()));
  for (auto& [name, tensor] : named) {
    write_string(out, name);
    write_u32(out, static_cast<std::uint32_t>(tensor.ndim()));
    for (std::size_t d = 0; d < tensor.ndim(); ++d) {
      write_u64(out, tensor.extent(d));
    }
    out.write(reinterpret_cast<const char*>(tensor.values().data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(double)));
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValueError("cannot open checkpoint: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCkptMagic, 4) != 0) {
    throw ValueError(path + ": not a checkpoint file");
  }
  const std::uint32_t version = read_u32(in, path);
  if (version != kCkptVersion) {
    throw ValueError(path + ": unsupported checkpoint version " +
                     std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.step = read_u64(in, path);
  json meta = json::parse(read_string(in, path));
  ckpt.mode = meta.value("mode", "search");
  if (meta.contains("choices")) {
    ckpt.choices = meta.at("choices").get<std::vector<std::vector<int>>>();
  }
  ckpt.net = SuperNet::create(model_from_meta(meta), 0);

  std::map<std::string, Tensor> by_name;
  for (auto& [name, tensor] : ckpt.net.named_params()) by_name.emplace(name, tensor);

  const std::uint32_t count = read_u32(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = read_string(in, path);
    const std::uint32_t ndim = read_u32(in, path);
    Shape shape(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d) shape[d] = read_u64(in, path);
    const std::size_t n = shape_size(shape);
    std::vector<double> values(n);
    if (!in.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(n * sizeof(double)))) {
      throw ValueError(path + ": truncated tensor data for " + name);
    }
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw ValueError(path + ": unknown parameter " + name);
    }
    if (it->second.shape() != shape) {
      throw ValueError(path + ": shape mismatch for " + name);
    }
    std::copy(values.begin(), values.end(), it->second.values().begin());
  }
  return ckpt;
}

// ---- exports ---------------------------------------------------------------

void write_arch_json(const std::string& path, const DerivedArch& arch,
                     const CandidateSet& candidates) {
  json doc;
  doc["version"] = 1;
  doc["flops"] = arch.total_flops;
  json layers = json::array();
  for (const auto& labels : arch.size_labels) {
    json layer;
    layer["kernel_sizes"] = labels;
    layers.push_back(layer);
  }
  doc["layers"] = layers;
  doc["alpha"] = arch.alpha_snapshot;
  json sizes = json::array();
  for (std::size_t opt = 0; opt < candidates.num_options(); ++opt) {
    sizes.push_back(candidates.option_size_label(opt));
  }
  doc["option_sizes"] = sizes;
  std::ofstream out(path);
  if (!out) throw ValueError("cannot write architecture: " + path);
  out << doc.dump(2) << "\n";
}

DerivedArch read_arch_json(const std::string& path, const CandidateSet& candidates) {
  std::ifstream in(path);
  if (!in) throw ValueError("cannot open architecture: " + path);
  json doc = json::parse(in);
  DerivedArch arch;
  arch.total_flops = doc.at("flops").get<double>();
  for (const auto& layer : doc.at("layers")) {
    std::vector<int> labels = layer.at("kernel_sizes").get<std::vector<int>>();
    std::vector<int> choices;
    choices.reserve(labels.size());
    for (int label : labels) {
      choices.push_back(static_cast<int>(candidates.option_of_size_label(label)));
    }
    arch.size_labels.push_back(std::move(labels));
    arch.choices.push_back(std::move(choices));
  }
  if (doc.contains("alpha")) {
    arch.alpha_snapshot =
        doc.at("alpha").get<std::vector<std::vector<std::vector<double>>>>();
  }
  return arch;
}

std::vector<std::vector<int>> kernel_distribution(const DerivedArch& arch,
                                                  const CandidateSet& candidates) {
  const std::size_t options = candidates.num_options();
  std::vector<std::vector<int>> table;
  table.reserve(arch.choices.size());
  for (const auto& layer : arch.choices) {
    std::vector<int> counts(options, 0);
    for (int opt : layer) counts[static_cast<std::size_t>(opt)]++;
    table.push_back(std::move(counts));
  }
  return table;
}

void write_kernel_dist_csv(const std::string& path, const DerivedArch& arch,
                           const CandidateSet& candidates) {
  // Columns in ascending area order: none first, then each candidate size.
  const std::size_t options = candidates.num_options();
  std::vector<std::size_t> order(options);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return candidates.option_area(a) < candidates.option_area(b);
  });

  auto table = kernel_distribution(arch, candidates);
  std::ofstream out(path);
  if (!out) throw ValueError("cannot write distribution: " + path);
  out << "layer";
  for (std::size_t opt : order) {
    out << ",size_" << candidates.option_size_label(opt);
  }
  out << "\n";
  for (std::size_t l = 0; l < table.size(); ++l) {
    out << l;
    for (std::size_t opt : order) out << "," << table[l][opt];
    out << "\n";
  }
}

}  // namespace mk
