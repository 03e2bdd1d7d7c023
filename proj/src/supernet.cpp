#include "metakernel/supernet.hpp"

#include <algorithm>
#include <cmath>

#include "metakernel/autodiff.hpp"
#include "metakernel/ops.hpp"
#include "metakernel/rng.hpp"

namespace mk {

void ModelConfig::validate() const {
  if (image_size < 4 || in_channels < 1 || num_classes < 2 || stem_channels < 1) {
    throw ValueError("model config: bad image/channel/class dimensions");
  }
  if (block_channels.empty() || block_channels.size() != block_strides.size()) {
    throw ValueError("model config: block_channels and block_strides must match");
  }
  for (int s : block_strides) {
    if (s != 1 && s != 2) throw ValueError("model config: strides must be 1 or 2");
  }
}

namespace {

Tensor init_normal(Shape shape, double stddev, CounterRng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.values()) v = stddev * rng.normal();
  return t;
}

Tensor init_const(Shape shape, double v) {
  return Tensor::full(std::move(shape), v, true);
}

int spatial_after(int extent, int stride) {
  // Blocks use same padding, so stride alone changes the extent.
  return (extent + stride - 1) / stride;
}

}  // namespace

SuperNet SuperNet::create(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SuperNet net;
  net.cfg = cfg;
  auto meta = build_meta_shape(cfg.candidates);
  net.meta_h = meta.first;
  net.meta_w = meta.second;

  CounterRng rng(seed ^ rng_domain::kInit);
  const std::size_t stem = static_cast<std::size_t>(cfg.stem_channels);
  net.stem_w = init_normal({stem, static_cast<std::size_t>(cfg.in_channels), 3, 3},
                           std::sqrt(2.0 / (9.0 * cfg.in_channels)), rng);
  net.stem_gamma = init_const({stem}, 1.0);
  net.stem_beta = init_const({stem}, 0.0);

  int in_ch = cfg.stem_channels;
  const std::size_t options = cfg.candidates.num_options();
  for (std::size_t b = 0; b < cfg.block_channels.size(); ++b) {
    SearchableLayer layer;
    layer.in_ch = in_ch;
    layer.mid_ch = cfg.block_channels[b];
    layer.out_ch = cfg.block_channels[b];
    layer.stride = cfg.block_strides[b];

    const auto mid = static_cast<std::size_t>(layer.mid_ch);
    const auto out = static_cast<std::size_t>(layer.out_ch);
    layer.expand_w = init_normal({mid, static_cast<std::size_t>(in_ch), 1, 1},
                                 std::sqrt(2.0 / in_ch), rng);
    layer.expand_gamma = init_const({mid}, 1.0);
    layer.expand_beta = init_const({mid}, 0.0);
    // Meta-kernel fan-in is the full meta area, so every candidate slice
    // starts on a common scale.
    layer.meta = init_normal({mid, 1, static_cast<std::size_t>(net.meta_h),
                              static_cast<std::size_t>(net.meta_w)},
                             std::sqrt(2.0 / (net.meta_h * net.meta_w)), rng);
    layer.dw_gamma = init_const({mid}, 1.0);
    layer.dw_beta = init_const({mid}, 0.0);
    layer.project_w = init_normal({out, mid, 1, 1}, std::sqrt(2.0 / layer.mid_ch), rng);
    layer.proj_gamma = init_const({out}, 1.0);
    layer.proj_beta = init_const({out}, 0.0);

    const std::size_t alpha_count = cfg.share_alpha_per_layer ? 1 : mid;
    for (std::size_t f = 0; f < alpha_count; ++f) {
      layer.alpha.push_back(init_normal({options}, 1e-2, rng));
    }
    net.layers.push_back(std::move(layer));
    in_ch = cfg.block_channels[b];
  }

  net.head_w = init_normal({static_cast<std::size_t>(cfg.num_classes),
                            static_cast<std::size_t>(in_ch)},
                           std::sqrt(2.0 / in_ch), rng);
  net.head_b = init_const({static_cast<std::size_t>(cfg.num_classes)}, 0.0);
  return net;
}

std::vector<Tensor> SuperNet::weight_params() {
  std::vector<Tensor> p{stem_w, stem_gamma, stem_beta};
  for (SearchableLayer& l : layers) {
    p.push_back(l.expand_w);
    p.push_back(l.expand_gamma);
    p.push_back(l.expand_beta);
    p.push_back(l.meta);
    p.push_back(l.dw_gamma);
    p.push_back(l.dw_beta);
    p.push_back(l.project_w);
    p.push_back(l.proj_gamma);
    p.push_back(l.proj_beta);
  }
  p.push_back(head_w);
  p.push_back(head_b);
  return p;
}

std::vector<Tensor> SuperNet::alpha_params() {
  std::vector<Tensor> p;
  for (SearchableLayer& l : layers) {
    for (Tensor& a : l.alpha) p.push_back(a);
  }
  return p;
}

std::vector<std::pair<std::string, Tensor>> SuperNet::named_params() {
  std::vector<std::pair<std::string, Tensor>> named;
  named.emplace_back("stem.w", stem_w);
  named.emplace_back("stem.gamma", stem_gamma);
  named.emplace_back("stem.beta", stem_beta);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    SearchableLayer& l = layers[i];
    const std::string base = "layer" + std::to_string(i) + ".";
    named.emplace_back(base + "expand.w", l.expand_w);
    named.emplace_back(base + "expand.gamma", l.expand_gamma);
    named.emplace_back(base + "expand.beta", l.expand_beta);
    named.emplace_back(base + "meta", l.meta);
    named.emplace_back(base + "dw.gamma", l.dw_gamma);
    named.emplace_back(base + "dw.beta", l.dw_beta);
    named.emplace_back(base + "project.w", l.project_w);
    named.emplace_back(base + "project.gamma", l.proj_gamma);
    named.emplace_back(base + "project.beta", l.proj_beta);
    for (std::size_t f = 0; f < l.alpha.size(); ++f) {
      named.emplace_back(base + "alpha." + std::to_string(f), l.alpha[f]);
    }
  }
  named.emplace_back("head.w", head_w);
  named.emplace_back("head.b", head_b);
  return named;
}

void SuperNet::zero_grads() {
  for (Tensor& t : weight_params()) t.zero_grad();
  for (Tensor& t : alpha_params()) t.zero_grad();
}

std::vector<LayerCostSpec> SuperNet::cost_specs() const {
  std::vector<LayerCostSpec> specs;
  int h = cfg.image_size, w = cfg.image_size;
  for (const SearchableLayer& l : layers) {
    LayerCostSpec spec;
    spec.stride = l.stride;
    spec.out_h = spatial_after(h, l.stride);
    spec.out_w = spatial_after(w, l.stride);
    spec.filters = static_cast<std::size_t>(l.mid_ch);
    spec.option_areas = cfg.candidates.option_areas();
    specs.push_back(spec);
    h = spec.out_h;
    w = spec.out_w;
  }
  return specs;
}

double SuperNet::fixed_cost() const {
  double total = 0.0;
  // Stem at full resolution.
  total += static_cast<double>(cfg.image_size) * cfg.image_size * 9.0 *
           cfg.in_channels * cfg.stem_channels;
  int h = cfg.image_size, w = cfg.image_size;
  for (const SearchableLayer& l : layers) {
    // 1x1 expansion at input resolution, 1x1 projection at output resolution.
    total += static_cast<double>(h) * w * l.in_ch * l.mid_ch;
    const int oh = spatial_after(h, l.stride), ow = spatial_after(w, l.stride);
    total += static_cast<double>(oh) * ow * l.mid_ch * l.out_ch;
    h = oh;
    w = ow;
  }
  total += static_cast<double>(cfg.block_channels.back()) * cfg.num_classes;
  return total;
}

double SuperNet::max_cost() const {
  double total = fixed_cost();
  double largest = 0.0;
  for (double a : cfg.candidates.option_areas()) largest = std::max(largest, a);
  for (const LayerCostSpec& spec : cost_specs()) {
    total += spec.spatial() * largest * static_cast<double>(spec.filters);
  }
  return total;
}

LayerProbs compute_layer_probs(SuperNet& net, std::size_t step,
                               std::size_t total_steps, const GumbelConfig& cfg) {
  cfg.validate();
  const double tau = temperature_at(std::min(step, total_steps), total_steps, cfg);
  LayerProbs probs(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    SearchableLayer& layer = net.layers[l];
    probs[l].reserve(layer.alpha.size());
    for (std::size_t f = 0; f < layer.alpha.size(); ++f) {
      Tensor& alpha = layer.alpha[f];
      Tensor p;
      if (cfg.mode == GumbelConfig::Mode::plain_softmax) {
        p = softmax_probs(alpha);
      } else {
        auto noise = gumbel_noise(cfg.seed, l, f, step, alpha.size());
        p = gumbel_probs(alpha, tau, noise);
        if (cfg.mode == GumbelConfig::Mode::hard_straight_through) {
          p = straight_through(p);
        }
      }
      probs[l].push_back(std::move(p));
    }
  }
  return probs;
}

LayerProbs fixed_probs_from_choices(const SuperNet& net,
                                    const std::vector<std::vector<int>>& choices) {
  if (choices.size() != net.layers.size()) {
    throw ShapeError("fixed_probs_from_choices: wrong number of layers");
  }
  const std::size_t options = net.cfg.candidates.num_options();
  LayerProbs probs(choices.size());
  for (std::size_t l = 0; l < choices.size(); ++l) {
    const std::size_t filters = static_cast<std::size_t>(net.layers[l].mid_ch);
    if (choices[l].size() != filters) {
      throw ShapeError("fixed_probs_from_choices: layer " + std::to_string(l) +
                       " wants " + std::to_string(filters) + " choices");
    }
    for (int opt : choices[l]) {
      if (opt < 0 || static_cast<std::size_t>(opt) >= options) {
        throw ValueError("fixed_probs_from_choices: option out of range");
      }
      Tensor one_hot = Tensor::zeros({options});
      one_hot[static_cast<std::size_t>(opt)] = 1.0;
      probs[l].push_back(std::move(one_hot));
    }
  }
  return probs;
}

namespace {

const std::vector<Tensor>& layer_probs_for(const LayerProbs& probs, std::size_t l) {
  return probs[l];
}

Tensor block_tail(SearchableLayer& layer, const Tensor& feat) {
  Tensor h = relu(channel_affine(feat, layer.dw_gamma, layer.dw_beta));
  h = conv2d(h, layer.project_w, 1, 0, 0);
  return channel_affine(h, layer.proj_gamma, layer.proj_beta);
}

Tensor head_logits(SuperNet& net, const Tensor& features) {
  return linear(global_avg_pool(features), net.head_w, net.head_b);
}

Tensor stem_forward(SuperNet& net, const Tensor& batch) {
  Tensor h = conv2d(batch, net.stem_w, 1, 1, 1);
  return relu(channel_affine(h, net.stem_gamma, net.stem_beta));
}

}  // namespace

Tensor forward_single_path(SuperNet& net, const Tensor& batch,
                           const LayerProbs& probs) {
  if (probs.size() != net.layers.size()) {
    throw ShapeError("forward: probabilities for every searchable layer required");
  }
  Tensor h = stem_forward(net, batch);
  const int pad_h = (net.meta_h - 1) / 2, pad_w = (net.meta_w - 1) / 2;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    SearchableLayer& layer = net.layers[l];
    Tensor x = relu(channel_affine(conv2d(h, layer.expand_w, 1, 0, 0),
                                   layer.expand_gamma, layer.expand_beta));
    Tensor eff = effective_kernel_probs(layer.meta, layer_probs_for(probs, l),
                                        net.cfg.candidates);
    Tensor feat = depthwise_conv2d(x, eff, layer.stride, pad_h, pad_w);
    h = block_tail(layer, feat);
  }
  return head_logits(net, h);
}

Tensor forward_multipath_reference(SuperNet& net, const Tensor& batch,
                                   const LayerProbs& probs) {
  if (probs.size() != net.layers.size()) {
    throw ShapeError("forward: probabilities for every searchable layer required");
  }
  Tensor h = stem_forward(net, batch);
  const int pad_h = (net.meta_h - 1) / 2, pad_w = (net.meta_w - 1) / 2;
  const CandidateSet& cands = net.cfg.candidates;
  const std::size_t first_real = cands.include_none() ? 1 : 0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    SearchableLayer& layer = net.layers[l];
    Tensor x = relu(channel_affine(conv2d(h, layer.expand_w, 1, 0, 0),
                                   layer.expand_gamma, layer.expand_beta));
    const std::vector<Tensor>& lp = layer_probs_for(probs, l);
    const bool shared = lp.size() == 1;
    Tensor feat;
    for (std::size_t opt = first_real; opt < cands.num_options(); ++opt) {
      Tensor mask = indicator_mask(cands.option_shape(opt),
                                   {net.meta_h, net.meta_w});
      std::vector<ProbMask> one{{mask, opt}};
      Tensor cand_kernel = effective_kernel(layer.meta, one);
      Tensor path = depthwise_conv2d(x, cand_kernel, layer.stride, pad_h, pad_w);
      Tensor weights;
      if (shared) {
        std::vector<Tensor> repeated(static_cast<std::size_t>(layer.mid_ch), lp[0]);
        weights = gather_option(repeated, opt);
      } else {
        weights = gather_option(lp, opt);
      }
      Tensor weighted = channel_scale(path, weights);
      feat = feat.defined() ? add(feat, weighted) : weighted;
    }
    if (!feat.defined()) {
      // Candidate set is none-only; the depthwise stage outputs zeros.
      const auto& xs = x.shape();
      const std::size_t oh = static_cast<std::size_t>(
          spatial_after(static_cast<int>(xs[2]), layer.stride));
      const std::size_t ow = static_cast<std::size_t>(
          spatial_after(static_cast<int>(xs[3]), layer.stride));
      feat = Tensor::zeros({xs[0], xs[1], oh, ow});
    }
    h = block_tail(layer, feat);
  }
  return head_logits(net, h);
}

LossParts total_loss(const Tensor& logits, const std::vector<int>& labels,
                     const LayerProbs& cost_probs,
                     const std::vector<LayerCostSpec>& specs, double fixed_cost,
                     const CostBudget& budget) {
  LossParts parts;
  Tensor ce = cross_entropy_logits(logits, labels);
  parts.ce = ce.value();
  if (budget.lambda_cost == 0.0) {
    parts.total = ce;
    Tensor expected = expected_flops(cost_probs, specs, fixed_cost);
    parts.expected_flops = expected.value();
    parts.flops_term = flops_loss_value(parts.expected_flops, budget);
    return parts;
  }
  Tensor expected = expected_flops(cost_probs, specs, fixed_cost);
  parts.expected_flops = expected.value();
  Tensor cost = flops_loss(expected, budget);
  parts.flops_term = cost.value();
  parts.total = add(ce, scale(cost, budget.lambda_cost));
  return parts;
}

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, double momentum,
                           double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const Tensor& p : params_) {
    velocity_.emplace_back(p.size(), 0.0);
  }
}

void SgdOptimizer::step(double lr) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    auto grad = p.grad();
    auto vals = p.values();
    std::vector<double>& vel = velocity_[k];
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double g = grad[i] + weight_decay_ * vals[i];
      vel[i] = momentum_ * vel[i] + g;
      vals[i] -= lr * vel[i];
    }
  }
}

double cosine_lr(double lr, std::size_t step, std::size_t total_steps, bool enabled) {
  if (!enabled || total_steps == 0) return lr;
  const double t = static_cast<double>(std::min(step, total_steps)) /
                   static_cast<double>(total_steps);
  return 0.5 * lr * (1.0 + std::cos(3.141592653589793 * t));
}

StepStats search_step(SuperNet& net, const Tensor& batch,
                      const std::vector<int>& labels, SgdOptimizer& weight_opt,
                      SgdOptimizer& alpha_opt, std::size_t step,
                      std::size_t total_steps, const SearchStepConfig& cfg) {
  Tape::active().clear();
  net.zero_grads();

  LayerProbs forward_probs = compute_layer_probs(net, step, total_steps, cfg.gumbel);
  Tensor logits = forward_single_path(net, batch, forward_probs);

  LayerProbs cost_probs;
  if (cfg.use_gumbel_for_cost) {
    cost_probs = forward_probs;
  } else {
    // Noise-free expectation from the plain categorical probabilities.
    GumbelConfig plain = cfg.gumbel;
    plain.mode = GumbelConfig::Mode::plain_softmax;
    cost_probs = compute_layer_probs(net, step, total_steps, plain);
  }

  LossParts parts = total_loss(logits, labels, cost_probs, net.cost_specs(),
                               net.fixed_cost(), cfg.budget);
  StepStats stats;
  stats.ce = parts.ce;
  stats.flops_loss = parts.flops_term;
  stats.total = parts.total.value();
  stats.expected_flops = parts.expected_flops;
  stats.tau = temperature_at(std::min(step, total_steps), total_steps, cfg.gumbel);

  if (!std::isfinite(stats.total)) {
    throw ValueError("search_step: non-finite loss at step " + std::to_string(step));
  }

  backward(parts.total);
  weight_opt.step(cosine_lr(cfg.lr, step, total_steps, cfg.cosine_decay));
  if (step >= cfg.alpha_frozen_until) {
    alpha_opt.step(cfg.alpha_lr);
  }
  Tape::active().clear();
  return stats;
}

DerivedArch derive_architecture(SuperNet& net) {
  DerivedArch arch;
  const CandidateSet& cands = net.cfg.candidates;
  const std::size_t options = cands.num_options();
  for (SearchableLayer& layer : net.layers) {
    std::vector<int> layer_choices;
    std::vector<int> layer_labels;
    std::vector<std::vector<double>> layer_alpha;
    for (int f = 0; f < layer.mid_ch; ++f) {
      const Tensor& alpha =
          layer.alpha[net.cfg.share_alpha_per_layer ? 0 : static_cast<std::size_t>(f)];
      auto probs = softmax_values(alpha.values());
      // Visit options in order of increasing area so exact ties resolve to
      // the smaller candidate (none first).
      std::vector<std::size_t> order(options);
      for (std::size_t i = 0; i < options; ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return cands.option_area(a) < cands.option_area(b);
      });
      std::size_t best = order[0];
      for (std::size_t i : order) {
        if (probs[i] > probs[best]) best = i;
      }
      layer_choices.push_back(static_cast<int>(best));
      layer_labels.push_back(cands.option_size_label(best));
      layer_alpha.emplace_back(alpha.values().begin(), alpha.values().end());
    }
    arch.choices.push_back(std::move(layer_choices));
    arch.size_labels.push_back(std::move(layer_labels));
    arch.alpha_snapshot.push_back(std::move(layer_alpha));
  }
  arch.total_flops = flops_of_arch(arch.choices, net.cost_specs(), net.fixed_cost());
  return arch;
}

double verify_equivalence(SuperNet& net, const Tensor& batch) {
  NoGradGuard no_grad;
  GumbelConfig plain;
  plain.mode = GumbelConfig::Mode::plain_softmax;
  LayerProbs probs = compute_layer_probs(net, 0, 1, plain);
  Tensor single = forward_single_path(net, batch, probs);
  Tensor multi = forward_multipath_reference(net, batch, probs);
  double worst = 0.0;
  for (std::size_t i = 0; i < single.size(); ++i) {
    const double dev = std::abs(single[i] - multi[i]) / (1.0 + std::abs(multi[i]));
    worst = std::max(worst, dev);
  }
  return worst;
}

double evaluate_accuracy(SuperNet& net, const Tensor& images,
                         const std::vector<int>& labels, const LayerProbs& probs,
                         std::size_t batch_size) {
  NoGradGuard no_grad;
  const std::size_t n = images.extent(0);
  if (labels.size() != n) throw ShapeError("evaluate: images/labels mismatch");
  const std::size_t sample = images.size() / std::max<std::size_t>(n, 1);
  std::size_t correct = 0;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t count = std::min(batch_size, n - start);
    Shape shape = images.shape();
    shape[0] = count;
    std::vector<double> chunk(images.values().begin() + start * sample,
                              images.values().begin() + (start + count) * sample);
    Tensor batch = Tensor::from_values(std::move(shape), std::move(chunk));
    Tensor logits = forward_single_path(net, batch, probs);
    const std::size_t classes = logits.extent(1);
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < classes; ++k) {
        if (logits[i * classes + k] > logits[i * classes + best]) best = k;
      }
      if (static_cast<int>(best) == labels[start + i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(std::max<std::size_t>(n, 1));
}

}  // namespace mk
