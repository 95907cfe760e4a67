#include "planperf/tree_attention.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <stdexcept>

#include "planperf/eval.hpp"

namespace planperf::nn {

void ModelConfig::check() const {
  if (d_model < 5) throw std::invalid_argument("d_model must be >= 5");
  if (n_heads < 1 || n_layers < 1 || ffn_dim < 1 || max_height < 1 || max_dist < 1) {
    throw std::invalid_argument("model dimensions must be >= 1");
  }
  if (d_model % n_heads != 0) throw std::invalid_argument("d_model must be divisible by n_heads");
  if (n_classes == 1 || n_classes < 0) throw std::invalid_argument("n_classes must be 0 or >= 2");
  if (max_nodes < 1) throw std::invalid_argument("max_nodes must be >= 1");
}

Json ModelConfig::to_json() const {
  return Json{{"d_model", d_model},     {"n_heads", n_heads},     {"n_layers", n_layers},
              {"ffn_dim", ffn_dim},     {"max_height", max_height}, {"max_dist", max_dist},
              {"n_classes", n_classes}, {"node_head", node_head}, {"max_nodes", max_nodes},
              {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const Json& j) {
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.max_height = j.value("max_height", c.max_height);
  c.max_dist = j.value("max_dist", c.max_dist);
  c.n_classes = j.value("n_classes", c.n_classes);
  c.node_head = j.value("node_head", c.node_head);
  c.max_nodes = j.value("max_nodes", c.max_nodes);
  c.seed = j.value("seed", c.seed);
  c.check();
  return c;
}

InputWidths InputWidths::of(const EncodingSpace& space) {
  return {space.operators.size(), space.datatypes.size(), space.tables.size() + 1, space.strategy_slots.size()};
}

double combine_loss(double plan_loss, double node_loss, double lambda) {
  if (!(lambda >= 0)) throw std::invalid_argument("lambda must be >= 0");
  return lambda == 0 ? plan_loss : plan_loss + lambda * node_loss;
}

TreeAttentionModel::TreeAttentionModel(const ModelConfig& config, const EncodingSpace& space)
    : config_(config), widths_(InputWidths::of(space)), space_version_(space.version()) {
  config_.check();
  build();
  init_parameters();
}

void TreeAttentionModel::build() {
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto ffn = static_cast<std::size_t>(config_.ffn_dim);
  part_width_.assign(5, d / 5);
  for (std::size_t i = 0; i < d % 5; ++i) ++part_width_[i];

  auto& p = params_;
  w_t_ = p.add("input.t.weight", widths_.operators, part_width_[0]);
  b_t_ = p.add("input.t.bias", 1, part_width_[0]);
  w_l_ = p.add("input.l.weight", widths_.datatypes, part_width_[1]);
  b_l_ = p.add("input.l.bias", 1, part_width_[1]);
  emb_tn_ = p.add("input.tn.embedding", widths_.table_codes, part_width_[2]);
  w_s_ = p.add("input.s.weight", widths_.strategies, part_width_[3]);
  b_s_ = p.add("input.s.bias", 1, part_width_[3]);
  w_is_ = p.add("input.is.weight", 2, part_width_[4]);
  b_is_ = p.add("input.is.bias", 1, part_width_[4]);
  super_emb_ = p.add("super_node", 1, d);
  height_emb_ = p.add("height_embedding", static_cast<std::size_t>(config_.max_height) + 1, d);
  tree_bias_ = p.add("tree_bias", static_cast<std::size_t>(config_.n_heads),
                     static_cast<std::size_t>(config_.max_dist) + 2);
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    Layer layer{};
    layer.ln1_g = p.add(pre + "ln1.gamma", 1, d);
    layer.ln1_b = p.add(pre + "ln1.beta", 1, d);
    layer.wq = p.add(pre + "attn.q.weight", d, d);
    layer.bq = p.add(pre + "attn.q.bias", 1, d);
    layer.wk = p.add(pre + "attn.k.weight", d, d);
    layer.bk = p.add(pre + "attn.k.bias", 1, d);
    layer.wv = p.add(pre + "attn.v.weight", d, d);
    layer.bv = p.add(pre + "attn.v.bias", 1, d);
    layer.wo = p.add(pre + "attn.out.weight", d, d);
    layer.bo = p.add(pre + "attn.out.bias", 1, d);
    layer.ln2_g = p.add(pre + "ln2.gamma", 1, d);
    layer.ln2_b = p.add(pre + "ln2.beta", 1, d);
    layer.w1 = p.add(pre + "ffn.1.weight", d, ffn);
    layer.b1 = p.add(pre + "ffn.1.bias", 1, ffn);
    layer.w2 = p.add(pre + "ffn.2.weight", ffn, d);
    layer.b2 = p.add(pre + "ffn.2.bias", 1, d);
    layers_.push_back(layer);
  }
  lnf_g_ = p.add("final_ln.gamma", 1, d);
  lnf_b_ = p.add("final_ln.beta", 1, d);
  const auto outs = static_cast<std::size_t>(config_.plan_outputs());
  wp1_ = p.add("plan_head.1.weight", d, ffn);
  bp1_ = p.add("plan_head.1.bias", 1, ffn);
  wp2_ = p.add("plan_head.2.weight", ffn, outs);
  bp2_ = p.add("plan_head.2.bias", 1, outs);
  node_head_offset_ = p.total_size();
  if (config_.node_head) {
    wn1_ = p.add("node_head.1.weight", d, ffn);
    bn1_ = p.add("node_head.1.bias", 1, ffn);
    wn2_ = p.add("node_head.2.weight", ffn, 2);
    bn2_ = p.add("node_head.2.bias", 1, 2);
  }
}

void TreeAttentionModel::init_parameters() {
  std::mt19937_64 rng(config_.seed);
  auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i];
    const std::string& name = params_.name(i);
    const bool gamma = name.ends_with(".gamma");
    const bool zero = name.ends_with(".bias") || name.ends_with(".beta") || name == "tree_bias";
    if (gamma || zero) {
      std::fill(t.values.begin(), t.values.end(), gamma ? 1.0 : 0.0);
      continue;
    }
    const double fan = static_cast<double>(t.rows() + t.cols());
    const double limit = std::sqrt(6.0 / std::max(fan, 1.0));
    for (double& v : t.values) v = (2.0 * uniform() - 1.0) * limit;
  }
}

void TreeAttentionModel::check_input(const PlanEncoding& e) const {
  if (e.space_version != space_version_) throw std::invalid_argument("encoding space version mismatch");
  if (e.size() == 0) throw std::invalid_argument("plan encoding has no nodes");
  if (e.size() > config_.max_nodes) throw std::invalid_argument("plan exceeds the configured maximum node count");
  if (e.max_dist != config_.max_dist || e.max_height > config_.max_height) {
    throw std::invalid_argument("plan encoding structural limits do not match the model");
  }
}

TreeAttentionModel::Graph TreeAttentionModel::build_graph(Tape& tape, const PlanEncoding& e) const {
  check_input(e);
  const std::size_t n = e.size();
  const std::size_t dim = e.dim();
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto heads = static_cast<std::size_t>(config_.n_heads);
  const std::size_t dh = d / heads;

  std::vector<double> xt, xl, xs, xis;
  std::vector<int> tn, hgt;
  xt.reserve(n * widths_.operators);
  for (const auto& node : e.nodes) {
    xt.insert(xt.end(), node.e_t.begin(), node.e_t.end());
    xl.insert(xl.end(), node.e_l.begin(), node.e_l.end());
    xs.insert(xs.end(), node.e_s.begin(), node.e_s.end());
    xis.insert(xis.end(), node.e_is.begin(), node.e_is.end());
    tn.push_back(node.e_tn);
  }
  for (std::size_t i = 0; i < n; ++i) hgt.push_back(e.height[i]);

  auto linear = [&](Tape::Var x, std::size_t w, std::size_t b) {
    return tape.add_row(tape.matmul(x, tape.param(w)), tape.param(b));
  };
  const Tape::Var parts[] = {
      linear(tape.constant(n, widths_.operators, std::move(xt)), w_t_, b_t_),
      linear(tape.constant(n, widths_.datatypes, std::move(xl)), w_l_, b_l_),
      tape.gather_rows(tape.param(emb_tn_), tn),
      linear(tape.constant(n, widths_.strategies, std::move(xs)), w_s_, b_s_),
      linear(tape.constant(n, 2, std::move(xis)), w_is_, b_is_),
  };
  Tape::Var nodes = tape.add(tape.concat_cols(parts), tape.gather_rows(tape.param(height_emb_), hgt));
  const Tape::Var rows[] = {tape.param(super_emb_), nodes};
  Tape::Var x = tape.concat_rows(rows);

  Graph g;
  const Tape::Var bias = tape.param(tree_bias_);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const auto& L : layers_) {
    Tape::Var h = tape.layer_norm(x, tape.param(L.ln1_g), tape.param(L.ln1_b));
    Tape::Var q = linear(h, L.wq, L.bq);
    Tape::Var k = linear(h, L.wk, L.bk);
    Tape::Var v = linear(h, L.wv, L.bv);
    std::vector<Tape::Var> head_outs;
    std::vector<Tape::Var> weights;
    for (std::size_t hd = 0; hd < heads; ++hd) {
      Tape::Var qh = tape.slice_cols(q, hd * dh, (hd + 1) * dh);
      Tape::Var kh = tape.slice_cols(k, hd * dh, (hd + 1) * dh);
      Tape::Var vh = tape.slice_cols(v, hd * dh, (hd + 1) * dh);
      Tape::Var scores = tape.add(tape.scale(tape.matmul_nt(qh, kh), scale),
                                  tape.gather_codes(bias, hd, e.dist, dim, dim));
      Tape::Var attn = tape.masked_softmax(scores, e.attend_mask);
      weights.push_back(attn);
      head_outs.push_back(tape.matmul(attn, vh));
    }
    g.attention.push_back(std::move(weights));
    x = tape.add(x, linear(tape.concat_cols(head_outs), L.wo, L.bo));
    Tape::Var h2 = tape.layer_norm(x, tape.param(L.ln2_g), tape.param(L.ln2_b));
    x = tape.add(x, linear(tape.gelu(linear(h2, L.w1, L.b1)), L.w2, L.b2));
  }
  g.final = tape.layer_norm(x, tape.param(lnf_g_), tape.param(lnf_b_));
  Tape::Var super_out = tape.slice_rows(g.final, 0, 1);
  g.plan_out = linear(tape.gelu(linear(super_out, wp1_, bp1_)), wp2_, bp2_);
  if (config_.node_head) {
    Tape::Var real = tape.slice_rows(g.final, 1, dim);
    g.node_outs = linear(tape.gelu(linear(real, wn1_, bn1_)), wn2_, bn2_);
  }
  return g;
}

ForwardTrace TreeAttentionModel::forward(const PlanEncoding& encoding) const {
  Tape tape(params_);
  Graph g = build_graph(tape, encoding);
  ForwardTrace out;
  auto copy = [&tape](Tape::Var v) {
    auto s = tape.value(v);
    return std::vector<double>(s.begin(), s.end());
  };
  out.plan_out = copy(g.plan_out);
  if (config_.node_head) out.node_outs = copy(g.node_outs);
  out.final = copy(g.final);
  for (const auto& layer : g.attention) {
    auto& dst = out.attention.emplace_back();
    for (Tape::Var w : layer) dst.push_back(copy(w));
  }
  return out;
}

double TreeAttentionModel::predict_normalized(const PlanEncoding& encoding) const {
  if (!config_.regression()) throw std::logic_error("predict_normalized on a classification model");
  return forward(encoding).plan_out[0];
}

int TreeAttentionModel::predict_class(const PlanEncoding& encoding) const {
  if (config_.regression()) throw std::logic_error("predict_class on a regression model");
  const auto logits = forward(encoding).plan_out;
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

LossParts TreeAttentionModel::sample_loss(const Sample& sample, double lambda, std::span<double> grad) const {
  if (!(lambda >= 0)) throw std::invalid_argument("lambda must be >= 0");
  Tape tape(params_);
  Graph g = build_graph(tape, sample.encoding);
  Tape::Var plan_loss;
  if (config_.regression()) {
    const double target[] = {sample.label};
    const std::uint8_t on[] = {1};
    plan_loss = tape.mse(g.plan_out, target, on);
  } else {
    plan_loss = tape.cross_entropy(g.plan_out, sample.class_label);
  }
  LossParts parts;
  parts.plan = tape.scalar(plan_loss);
  Tape::Var total = plan_loss;
  if (config_.node_head && lambda > 0) {
    const std::size_t n = sample.encoding.size();
    if (sample.node_targets.size() != 2 * n || sample.node_mask.size() != n) {
      throw std::invalid_argument("node targets do not match the plan size");
    }
    std::vector<std::uint8_t> mask(2 * n);
    for (std::size_t i = 0; i < n; ++i) mask[2 * i] = mask[2 * i + 1] = sample.node_mask[i];
    Tape::Var node_loss = tape.mse(g.node_outs, sample.node_targets, mask);
    parts.node = tape.scalar(node_loss);
    total = tape.add_scaled(plan_loss, node_loss, lambda);
  }
  parts.total = tape.scalar(total);
  if (!grad.empty()) {
    tape.backward(total);
    tape.accumulate_param_grads(grad);
  }
  return parts;
}

Json TreeAttentionModel::to_json() const {
  Json ps = Json::array();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ps.push_back(Json{{"name", params_.name(i)}, {"shape", params_[i].shape}, {"values", params_[i].values}});
  }
  return Json{{"format", "planperf.tree_attention"},
              {"version", kFormatVersion},
              {"config", config_.to_json()},
              {"space_version", space_version_},
              {"input_widths",
               {{"operators", widths_.operators},
                {"datatypes", widths_.datatypes},
                {"table_codes", widths_.table_codes},
                {"strategies", widths_.strategies}}},
              {"parameters", std::move(ps)}};
}

TreeAttentionModel TreeAttentionModel::from_json(const Json& j) {
  if (j.at("format") != "planperf.tree_attention" || j.at("version") != kFormatVersion) {
    throw std::invalid_argument("not a tree-attention checkpoint of a supported version");
  }
  TreeAttentionModel m;
  m.config_ = ModelConfig::from_json(j.at("config"));
  m.space_version_ = j.at("space_version").get<std::string>();
  const Json& w = j.at("input_widths");
  m.widths_ = {w.at("operators").get<std::size_t>(), w.at("datatypes").get<std::size_t>(),
               w.at("table_codes").get<std::size_t>(), w.at("strategies").get<std::size_t>()};
  m.build();
  const Json& ps = j.at("parameters");
  if (ps.size() != m.params_.size()) throw std::invalid_argument("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Tensor& t = m.params_[i];
    if (ps[i].at("name") != m.params_.name(i) || ps[i].at("shape").get<std::vector<std::size_t>>() != t.shape) {
      throw std::invalid_argument("checkpoint parameter mismatch at " + m.params_.name(i));
    }
    t.values = ps[i].at("values").get<std::vector<double>>();
    if (t.values.size() != t.rows() * t.cols()) throw std::invalid_argument("checkpoint parameter size mismatch");
  }
  return m;
}

namespace {

BatchResult reduce(std::vector<std::vector<double>>& grads, std::span<const double> losses, std::size_t total) {
  BatchResult out;
  out.grad.assign(total, 0.0);
  const double inv = 1.0 / static_cast<double>(losses.size());
  for (std::size_t b = 0; b < losses.size(); ++b) {
    out.loss += losses[b];
    const auto& g = grads[b];
    for (std::size_t i = 0; i < total; ++i) out.grad[i] += g[i];
  }
  out.loss *= inv;
  for (double& g : out.grad) g *= inv;
  return out;
}

}  // namespace

BatchResult batch_gradient(const TreeAttentionModel& model, std::span<const Sample> samples,
                           std::span<const std::size_t> batch, double lambda) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const std::size_t total = model.params().total_size();
  std::vector<std::vector<double>> grads(batch.size());
  std::vector<double> losses(batch.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (long b = 0; b < static_cast<long>(batch.size()); ++b) {
    try {
      auto& g = grads[static_cast<std::size_t>(b)];
      g.assign(total, 0.0);
      losses[static_cast<std::size_t>(b)] = model.sample_loss(samples[batch[static_cast<std::size_t>(b)]], lambda, g).total;
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return reduce(grads, losses, total);
}

namespace serial {

BatchResult batch_gradient(const TreeAttentionModel& model, std::span<const Sample> samples,
                           std::span<const std::size_t> batch, double lambda) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const std::size_t total = model.params().total_size();
  std::vector<std::vector<double>> grads(batch.size());
  std::vector<double> losses(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    grads[b].assign(total, 0.0);
    losses[b] = model.sample_loss(samples[batch[b]], lambda, grads[b]).total;
  }
  return reduce(grads, losses, total);
}

}  // namespace serial

void AdamState::apply(ParameterSet& params, std::span<const double> grad, double learning_rate) {
  const std::size_t total = params.total_size();
  if (grad.size() != total) throw std::invalid_argument("gradient size mismatch");
  if (m.empty()) {
    m.assign(total, 0.0);
    v.assign(total, 0.0);
  }
  ++step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& values = params[t].values;
    const std::size_t off = params.offset(t);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[off + i];
      double& mi = m[off + i];
      double& vi = v[off + i];
      mi = beta1 * mi + (1 - beta1) * g;
      vi = beta2 * vi + (1 - beta2) * g * g;
      values[i] -= learning_rate * (mi / c1) / (std::sqrt(vi / c2) + epsilon);
    }
  }
}

void TrainConfig::check() const {
  if (!(lambda >= 0)) throw std::invalid_argument("lambda must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be > 0");
  if (!(lr_decay > 0 && lr_decay <= 1)) throw std::invalid_argument("lr_decay must be in (0, 1]");
}

Json TrainConfig::to_json() const {
  return Json{{"lambda", lambda},       {"batch_size", batch_size}, {"learning_rate", learning_rate},
              {"lr_decay", lr_decay}, {"max_epochs", max_epochs}, {"patience", patience}, {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const Json& j) {
  TrainConfig c;
  c.lambda = j.value("lambda", c.lambda);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.check();
  return c;
}

Json TrainHistory::to_json() const {
  Json e = Json::array();
  for (const auto& r : epochs) {
    e.push_back(Json{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"valid_metric", r.valid_metric}});
  }
  return Json{{"best_epoch", best_epoch}, {"epochs", std::move(e)}};
}

double validation_p50(const TreeAttentionModel& model, std::span<const Sample> samples,
                      const LabelNormalizer& normalizer) {
  std::vector<double> errors(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(samples.size()); ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    const double pred = normalizer.denormalize(model.predict_normalized(s.encoding));
    errors[static_cast<std::size_t>(i)] = eval::q_error(std::max(pred, eval::kPredictionEpsilon), s.raw_label);
  }
  return eval::quantile(errors, 0.5);
}

double validation_accuracy(const TreeAttentionModel& model, std::span<const Sample> samples) {
  if (samples.empty()) throw std::invalid_argument("validation set is empty");
  std::vector<int> hit(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(samples.size()); ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    hit[static_cast<std::size_t>(i)] = model.predict_class(s.encoding) == s.class_label ? 1 : 0;
  }
  return static_cast<double>(std::accumulate(hit.begin(), hit.end(), 0)) / static_cast<double>(samples.size());
}

TrainHistory train(TreeAttentionModel& model, std::span<const Sample> train_set, std::span<const Sample> valid_set,
                   const TrainConfig& config, const LabelNormalizer& normalizer) {
  config.check();
  if (train_set.empty() || valid_set.empty()) throw std::invalid_argument("training and validation sets must be non-empty");
  const bool regression = model.config().regression();
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  AdamState adam;
  TrainHistory history;
  std::vector<double> best_params = model.params().flatten();
  double best_metric = 0;
  double lr = config.learning_rate;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> batch(order.data() + start, end - start);
      BatchResult r = batch_gradient(model, train_set, batch, config.lambda);
      if (!std::isfinite(r.loss)) {
        throw std::runtime_error("non-finite training loss at epoch " + std::to_string(epoch));
      }
      loss_sum += r.loss * static_cast<double>(batch.size());
      adam.apply(model.params(), r.grad, lr);
    }
    lr *= config.lr_decay;
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.valid_metric = regression ? validation_p50(model, valid_set, normalizer) : validation_accuracy(model, valid_set);
    history.epochs.push_back(rec);
    const bool improved = history.best_epoch == 0 ||
                          (regression ? rec.valid_metric < best_metric : rec.valid_metric > best_metric);
    if (improved) {
      history.best_epoch = epoch;
      best_metric = rec.valid_metric;
      best_params = model.params().flatten();
    } else if (epoch - history.best_epoch >= config.patience) {
      break;
    }
  }
  model.params().assign(best_params);
  return history;
}

double gradient_check(const TreeAttentionModel& model, const Sample& sample, double lambda, double epsilon) {
  TreeAttentionModel probe = model;
  auto& params = probe.params();
  std::vector<double> analytic(params.total_size(), 0.0);
  probe.sample_loss(sample, lambda, analytic);
  double worst = 0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& values = params[t].values;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + epsilon;
      const double up = probe.sample_loss(sample, lambda, {}).total;
      values[i] = orig - epsilon;
      const double down = probe.sample_loss(sample, lambda, {}).total;
      values[i] = orig;
      const double numeric = (up - down) / (2 * epsilon);
      const double a = analytic[params.offset(t) + i];
      const double denom = std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace planperf::nn
