#include "metakernel/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mk {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

[[noreturn]] void parse_fail(std::size_t line_no, const std::string& what) {
  throw ValueError("toml parse error at line " + std::to_string(line_no) + ": " +
                   what);
}

}  // namespace

TomlDoc TomlDoc::parse(const std::string& text) {
  TomlDoc doc;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') parse_fail(line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) parse_fail(line_no, "empty section name");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) parse_fail(line_no, "expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty() || val.empty()) parse_fail(line_no, "empty key or value");
    if (!section.empty()) key = section + "." + key;

    Value v;
    if (val.front() == '"') {
      if (val.size() < 2 || val.back() != '"') {
        parse_fail(line_no, "unterminated string");
      }
      v.kind = Value::Kind::string;
      v.str = val.substr(1, val.size() - 2);
    } else if (val == "true" || val == "false") {
      v.kind = Value::Kind::boolean;
      v.flag = val == "true";
    } else if (val.front() == '[') {
      if (val.back() != ']') parse_fail(line_no, "unterminated array");
      v.kind = Value::Kind::int_array;
      std::string body = val.substr(1, val.size() - 2);
      std::istringstream items(body);
      std::string item;
      while (std::getline(items, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        long long n = 0;
        auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), n);
        if (ec != std::errc{} || p != item.data() + item.size()) {
          parse_fail(line_no, "array element is not an integer: " + item);
        }
        v.ints.push_back(n);
      }
    } else {
      v.kind = Value::Kind::number;
      char* end = nullptr;
      v.num = std::strtod(val.c_str(), &end);
      if (end != val.c_str() + val.size()) {
        parse_fail(line_no, "malformed number: " + val);
      }
    }
    doc.values_[key] = std::move(v);
  }
  return doc;
}

TomlDoc TomlDoc::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValueError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

bool TomlDoc::has(const std::string& key) const { return values_.count(key) > 0; }

const TomlDoc::Value* TomlDoc::find(const std::string& key,
                                    Value::Kind kind) const {
  auto it = values_.find(key);
  if (it == values_.end()) return nullptr;
  if (it->second.kind != kind) {
    throw ValueError("config key '" + key + "' has the wrong type");
  }
  return &it->second;
}

std::string TomlDoc::get_string(const std::string& key,
                                const std::string& fallback) const {
  const Value* v = find(key, Value::Kind::string);
  return v ? v->str : fallback;
}

double TomlDoc::get_number(const std::string& key, double fallback) const {
  const Value* v = find(key, Value::Kind::number);
  return v ? v->num : fallback;
}

long long TomlDoc::get_int(const std::string& key, long long fallback) const {
  const Value* v = find(key, Value::Kind::number);
  return v ? static_cast<long long>(v->num) : fallback;
}

bool TomlDoc::get_bool(const std::string& key, bool fallback) const {
  const Value* v = find(key, Value::Kind::boolean);
  return v ? v->flag : fallback;
}

std::vector<long long> TomlDoc::get_ints(const std::string& key,
                                         std::vector<long long> fallback) const {
  const Value* v = find(key, Value::Kind::int_array);
  return v ? v->ints : fallback;
}

void RunConfig::validate() const {
  if (epochs < 1 || batch_size < 1) {
    throw ValueError("run config: epochs and batch_size must be positive");
  }
  if (data_source != "synthetic" && data_source != "idx") {
    throw ValueError("run config: data source must be synthetic or idx");
  }
  if (data_source == "synthetic") task.validate();
  model.validate();
  gumbel.validate();
  if (budget.target <= 0.0 &&
      (target_fraction_of_max <= 0.0 || target_fraction_of_max > 1.0)) {
    throw ValueError("run config: target_fraction_of_max must lie in (0,1]");
  }
  if (lr <= 0.0 || momentum < 0.0 || momentum >= 1.0 || weight_decay < 0.0) {
    throw ValueError("run config: bad optimizer settings");
  }
}

RunConfig default_run_config() { return RunConfig{}; }

RunConfig run_config_from_toml(const TomlDoc& doc) {
  RunConfig cfg;
  cfg.seed = static_cast<std::uint64_t>(doc.get_int("seed", 42));
  cfg.epochs = static_cast<int>(doc.get_int("epochs", cfg.epochs));
  cfg.batch_size = static_cast<int>(doc.get_int("batch_size", cfg.batch_size));
  cfg.alpha_warmup_epochs = static_cast<int>(
      doc.get_int("alpha_warmup_epochs", cfg.alpha_warmup_epochs));

  cfg.data_source = doc.get_string("data.source", cfg.data_source);
  cfg.task.image_size =
      static_cast<int>(doc.get_int("data.image_size", cfg.task.image_size));
  cfg.task.channels = static_cast<int>(doc.get_int("data.channels", cfg.task.channels));
  cfg.task.num_classes =
      static_cast<int>(doc.get_int("data.num_classes", cfg.task.num_classes));
  cfg.task.scale_mode = scale_mode_from_string(
      doc.get_string("data.scale_mode", to_string(cfg.task.scale_mode)));
  cfg.task.noise_sigma = doc.get_number("data.noise_sigma", cfg.task.noise_sigma);
  cfg.task.seed = cfg.seed;
  cfg.train_samples =
      static_cast<int>(doc.get_int("data.train_samples", cfg.train_samples));
  cfg.test_samples =
      static_cast<int>(doc.get_int("data.test_samples", cfg.test_samples));
  cfg.train_images = doc.get_string("data.train_images", "");
  cfg.train_labels = doc.get_string("data.train_labels", "");
  cfg.test_images = doc.get_string("data.test_images", "");
  cfg.test_labels = doc.get_string("data.test_labels", "");

  std::vector<long long> sizes = doc.get_ints("candidates.sizes", {3, 5, 7});
  const bool include_none = doc.get_bool("candidates.include_none", true);
  cfg.model.candidates = CandidateSet::squares(
      std::vector<int>(sizes.begin(), sizes.end()), include_none);

  cfg.model.image_size = cfg.task.image_size;
  cfg.model.in_channels = cfg.task.channels;
  cfg.model.num_classes = cfg.task.num_classes;
  cfg.model.stem_channels =
      static_cast<int>(doc.get_int("model.stem_channels", cfg.model.stem_channels));
  std::vector<long long> chans = doc.get_ints(
      "model.block_channels",
      std::vector<long long>(cfg.model.block_channels.begin(),
                             cfg.model.block_channels.end()));
  std::vector<long long> strides = doc.get_ints(
      "model.block_strides", std::vector<long long>(cfg.model.block_strides.begin(),
                                                    cfg.model.block_strides.end()));
  cfg.model.block_channels.assign(chans.begin(), chans.end());
  cfg.model.block_strides.assign(strides.begin(), strides.end());
  cfg.model.share_alpha_per_layer =
      doc.get_bool("model.share_alpha_per_layer", cfg.model.share_alpha_per_layer);
  cfg.use_gumbel_for_cost =
      doc.get_bool("model.use_gumbel_for_cost", cfg.use_gumbel_for_cost);

  cfg.budget.target = doc.get_number("budget.target", 0.0);
  cfg.target_fraction_of_max =
      doc.get_number("budget.target_fraction_of_max", cfg.target_fraction_of_max);
  cfg.budget.eta = doc.get_number("budget.eta", cfg.budget.eta);
  cfg.budget.lambda_cost =
      doc.get_number("budget.lambda_cost", cfg.budget.lambda_cost);

  cfg.gumbel.tau_start = doc.get_number("gumbel.tau_start", cfg.gumbel.tau_start);
  cfg.gumbel.tau_end = doc.get_number("gumbel.tau_end", cfg.gumbel.tau_end);
  cfg.gumbel.schedule = schedule_from_string(
      doc.get_string("gumbel.schedule", to_string(cfg.gumbel.schedule)));
  cfg.gumbel.mode =
      mode_from_string(doc.get_string("gumbel.mode", to_string(cfg.gumbel.mode)));
  cfg.gumbel.seed = cfg.seed;

  cfg.lr = doc.get_number("optimizer.lr", cfg.lr);
  cfg.momentum = doc.get_number("optimizer.momentum", cfg.momentum);
  cfg.weight_decay = doc.get_number("optimizer.weight_decay", cfg.weight_decay);
  cfg.alpha_lr = doc.get_number("optimizer.alpha_lr", cfg.alpha_lr);
  cfg.cosine_decay = doc.get_bool("optimizer.cosine_decay", cfg.cosine_decay);

  cfg.out_dir = doc.get_string("output.dir", cfg.out_dir);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return run_config_from_toml(TomlDoc::parse_file(path));
}

namespace {

std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string run_config_toml(const RunConfig& cfg) {
  std::ostringstream os;
  os << "seed = " << cfg.seed << "\n";
  os << "epochs = " << cfg.epochs << "\n";
  os << "batch_size = " << cfg.batch_size << "\n";
  os << "alpha_warmup_epochs = " << cfg.alpha_warmup_epochs << "\n\n";

  os << "[data]\n";
  os << "source = \"" << cfg.data_source << "\"\n";
  os << "image_size = " << cfg.task.image_size << "\n";
  os << "channels = " << cfg.task.channels << "\n";
  os << "num_classes = " << cfg.task.num_classes << "\n";
  os << "scale_mode = \"" << to_string(cfg.task.scale_mode) << "\"\n";
  os << "noise_sigma = " << fmt_num(cfg.task.noise_sigma) << "\n";
  os << "train_samples = " << cfg.train_samples << "\n";
  os << "test_samples = " << cfg.test_samples << "\n";
  if (!cfg.train_images.empty()) {
    os << "train_images = \"" << cfg.train_images << "\"\n";
    os << "train_labels = \"" << cfg.train_labels << "\"\n";
    os << "test_images = \"" << cfg.test_images << "\"\n";
    os << "test_labels = \"" << cfg.test_labels << "\"\n";
  }
  os << "\n[candidates]\n";
  os << "sizes = [";
  const auto& shapes = cfg.model.candidates.shapes();
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (i) os << ", ";
    os << shapes[i].h;
  }
  os << "]\n";
  os << "include_none = " << (cfg.model.candidates.include_none() ? "true" : "false")
     << "\n";

  os << "\n[model]\n";
  os << "stem_channels = " << cfg.model.stem_channels << "\n";
  os << "block_channels = [";
  for (std::size_t i = 0; i < cfg.model.block_channels.size(); ++i) {
    if (i) os << ", ";
    os << cfg.model.block_channels[i];
  }
  os << "]\n";
  os << "block_strides = [";
  for (std::size_t i = 0; i < cfg.model.block_strides.size(); ++i) {
    if (i) os << ", ";
    os << cfg.model.block_strides[i];
  }
  os << "]\n";
  os << "share_alpha_per_layer = "
     << (cfg.model.share_alpha_per_layer ? "true" : "false") << "\n";
  os << "use_gumbel_for_cost = " << (cfg.use_gumbel_for_cost ? "true" : "false")
     << "\n";

  os << "\n[budget]\n";
  os << "target = " << fmt_num(cfg.budget.target) << "\n";
  os << "target_fraction_of_max = " << fmt_num(cfg.target_fraction_of_max) << "\n";
  os << "eta = " << fmt_num(cfg.budget.eta) << "\n";
  os << "lambda_cost = " << fmt_num(cfg.budget.lambda_cost) << "\n";

  os << "\n[gumbel]\n";
  os << "tau_start = " << fmt_num(cfg.gumbel.tau_start) << "\n";
  os << "tau_end = " << fmt_num(cfg.gumbel.tau_end) << "\n";
  os << "schedule = \"" << to_string(cfg.gumbel.schedule) << "\"\n";
  os << "mode = \"" << to_string(cfg.gumbel.mode) << "\"\n";

  os << "\n[optimizer]\n";
  os << "lr = " << fmt_num(cfg.lr) << "\n";
  os << "momentum = " << fmt_num(cfg.momentum) << "\n";
  os << "weight_decay = " << fmt_num(cfg.weight_decay) << "\n";
  os << "alpha_lr = " << fmt_num(cfg.alpha_lr) << "\n";
  os << "cosine_decay = " << (cfg.cosine_decay ? "true" : "false") << "\n";

  os << "\n[output]\n";
  os << "dir = \"" << cfg.out_dir << "\"\n";
  return os.str();
}

}  // namespace mk
