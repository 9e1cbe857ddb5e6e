#include "ulab/unlearn.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ulab/error.hpp"

namespace ulab {

std::string_view forget_kind_name(ForgetKind k) {
  switch (k) {
    case ForgetKind::kGA: return "ga";
    case ForgetKind::kNPO: return "npo";
    case ForgetKind::kAdvGA: return "advga";
    case ForgetKind::kAdvNPO: return "advnpo";
  }
  return "unknown";
}

ForgetKind forget_kind_from_name(std::string_view name) {
  for (ForgetKind k : {ForgetKind::kGA, ForgetKind::kNPO, ForgetKind::kAdvGA, ForgetKind::kAdvNPO}) {
    if (forget_kind_name(k) == name) return k;
  }
  fail("invalid_config", "unknown unlearning method '" + std::string(name) + "'");
}

std::string_view retain_kind_name(RetainKind k) {
  switch (k) {
    case RetainKind::kNone: return "none";
    case RetainKind::kGDR: return "gdr";
    case RetainKind::kKLR: return "klr";
  }
  return "unknown";
}

RetainKind retain_kind_from_name(std::string_view name) {
  for (RetainKind k : {RetainKind::kNone, RetainKind::kGDR, RetainKind::kKLR}) {
    if (retain_kind_name(k) == name) return k;
  }
  fail("invalid_config", "unknown retain loss '" + std::string(name) + "'");
}

bool is_adversarial(ForgetKind k) { return k == ForgetKind::kAdvGA || k == ForgetKind::kAdvNPO; }

namespace {

bool uses_npo(ForgetKind k) { return k == ForgetKind::kNPO || k == ForgetKind::kAdvNPO; }

void require_batch(std::span<const Sequence> batch) {
  require(!batch.empty(), "empty_batch", "loss over an empty batch");
}

Var<float> sum_all(std::span<const Var<float>> terms) {
  Var<float> total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return total;
}

Gradients collect(const BoundModel& model) {
  Gradients out;
  for (const auto& [name, v] : model.by_name) out.emplace(name, v.grad());
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void LossConfig::validate() const {
  require(std::isfinite(lambda) && lambda >= 0, "invalid_config", "lambda must be finite and >= 0");
  if (uses_npo(forget_kind)) {
    require(std::isfinite(beta) && beta > 0, "invalid_config", "beta must be > 0 for NPO losses");
  }
}

double PerturbationSpec::sigma(int d_model) const {
  return init_sigma ? *init_sigma : kappa / std::sqrt(static_cast<double>(d_model));
}

void PerturbationSpec::validate(const ModelConfig& model) const {
  require(inner_steps >= 0, "invalid_config", "inner_steps must be >= 0");
  require(std::isfinite(kappa) && kappa >= 0, "invalid_config", "kappa must be finite and >= 0");
  require(inner_steps == 0 || (std::isfinite(inner_lr) && inner_lr > 0), "invalid_config",
          "inner_lr must be > 0 when inner_steps > 0");
  require(!init_sigma || (std::isfinite(*init_sigma) && *init_sigma >= 0), "invalid_config",
          "init_sigma must be >= 0");
  require(layer >= 0 && layer <= model.n_layers, "invalid_perturbation",
          "perturbation layer " + std::to_string(layer) + " outside [0, " + std::to_string(model.n_layers) + "]");
}

void TrainerConfig::validate() const {
  require(std::isfinite(lr_max) && std::isfinite(lr_min) && lr_max >= lr_min && lr_min >= 0, "invalid_config",
          "need lr_max >= lr_min >= 0");
  require(total_steps >= 1, "invalid_config", "total_steps must be >= 1");
  require(batch_size >= 1, "invalid_config", "batch_size must be >= 1");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "invalid_config", "AdamW betas must lie in [0, 1)");
  require(eps > 0, "invalid_config", "AdamW eps must be > 0");
  require(weight_decay >= 0, "invalid_config", "weight_decay must be >= 0");
}

double cosine_lr(int step, const TrainerConfig& config) {
  require(step >= 0 && step <= config.total_steps, "invalid_argument",
          "step " + std::to_string(step) + " outside [0, " + std::to_string(config.total_steps) + "]");
  if (step == config.total_steps) return config.lr_min;
  const double c = std::cos(std::numbers::pi * step / config.total_steps);
  return config.lr_min + 0.5 * (config.lr_max - config.lr_min) * (1.0 + c);
}

void AdamW::step(ModelParams& params, const Gradients& grads, double lr) {
  ++t_;
  const float b1 = static_cast<float>(config_.beta1);
  const float b2 = static_cast<float>(config_.beta2);
  const float bc1 = static_cast<float>(1.0 - std::pow(config_.beta1, t_));
  const float bc2 = static_cast<float>(1.0 - std::pow(config_.beta2, t_));
  const float eps = static_cast<float>(config_.eps);
  const float flr = static_cast<float>(lr);
  const float decay = static_cast<float>(lr * config_.weight_decay);
  for (auto& [name, p] : params.tensors) {
    const auto it = grads.find(name);
    require(it != grads.end(), "missing_gradient", "no gradient for parameter " + name);
    const Tensor& g = it->second;
    require(g.same_shape(p), "shape_mismatch", "gradient shape mismatch for " + name);
    auto m = m_.try_emplace(name, Tensor(p.shape())).first->second.arr();
    auto v = v_.try_emplace(name, Tensor(p.shape())).first->second.arr();
    auto w = p.arr();
    const auto ga = g.arr();
    m = b1 * m + (1.0f - b1) * ga;
    v = b2 * v + (1.0f - b2) * ga.square();
    if (decay > 0 && p.rank() == 2) w -= decay * w;
    w -= flr * ((m / bc1) / ((v / bc2).sqrt() + eps));
  }
}

RefCache RefCache::build(const ModelParams& reference, std::span<const Sequence> sequences) {
  RefCache cache;
  for (const auto& s : sequences) {
    if (cache.entries_.count(s.id)) continue;
    Graph<float> g;
    BoundModel m = bind(g, reference, false);
    Var<float> logits = completion_logits(m, s.prompt, s.completion);
    Entry e;
    e.loss = cross_entropy(logits, std::span<const int>(s.completion)).value().item();
    e.logprobs = log_softmax_rows(logits.value());
    cache.entries_.emplace(s.id, std::move(e));
  }
  return cache;
}

RefCache RefCache::from_entries(std::map<std::string, Entry> entries) {
  RefCache cache;
  cache.entries_ = std::move(entries);
  return cache;
}

const RefCache::Entry& RefCache::at(const std::string& id) const {
  const auto it = entries_.find(id);
  if (it == entries_.end()) fail("missing_reference", "reference cache has no entry for '" + id + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// Graph-level losses

Var<float> mean_nll(const BoundModel& model, std::span<const Sequence> batch, const Injection* injection) {
  require_batch(batch);
  std::vector<Var<float>> terms;
  terms.reserve(batch.size());
  for (const auto& s : batch) terms.push_back(sequence_nll(model, s.prompt, s.completion, injection));
  return scale(sum_all(terms), 1.0f / static_cast<float>(batch.size()));
}

Var<float> ga_loss(const BoundModel& model, std::span<const Sequence> batch, const Injection* injection) {
  return scale(mean_nll(model, batch, injection), -1.0f);
}

Var<float> npo_loss(const BoundModel& model, std::span<const Sequence> batch, const RefCache& ref, double beta,
                    const Injection* injection) {
  require_batch(batch);
  require(std::isfinite(beta) && beta > 0, "invalid_config", "beta must be > 0");
  std::vector<Var<float>> terms;
  for (const auto& s : batch) {
    const float l_ref = ref.at(s.id).loss;
    require(l_ref > 0, "zero_reference_loss", "reference loss of '" + s.id + "' is zero");
    Var<float> l = sequence_nll(model, s.prompt, s.completion, injection);
    // At L = 0 the term is log(1) = 0 with an infinite-slope power; treat it as a constant.
    if (l.value().item() == 0.0f) continue;
    Var<float> ratio = scale(l, 1.0f / l_ref);
    terms.push_back(log(add_scalar(pow(ratio, static_cast<float>(beta)), 1.0f)));
  }
  if (terms.empty()) return model.graph->leaf(Tensor::scalar(0.0f));
  const float k = static_cast<float>(-2.0 / (beta * static_cast<double>(batch.size())));
  return scale(sum_all(terms), k);
}

Var<float> gd_retain_loss(const BoundModel& model, std::span<const Sequence> batch) {
  return mean_nll(model, batch);
}

Var<float> kl_retain_loss(const BoundModel& model, std::span<const Sequence> batch, const RefCache& ref) {
  require_batch(batch);
  std::size_t positions = 0;
  for (const auto& s : batch) positions += s.completion.size();
  std::vector<Var<float>> terms;
  for (const auto& s : batch) {
    const auto& entry = ref.at(s.id);
    Var<float> kl = kl_divergence(completion_logits(model, s.prompt, s.completion), entry.logprobs);
    // Per-sequence means reweighted into one mean over all completion positions.
    terms.push_back(scale(kl, static_cast<float>(s.completion.size()) / static_cast<float>(positions)));
  }
  return sum_all(terms);
}

// ---------------------------------------------------------------------------
// Value-level losses

float mean_nll(const ModelParams& params, std::span<const Sequence> batch, const ResidualPerturbation* pert) {
  Graph<float> g;
  BoundModel m = bind(g, params, false);
  if (pert) {
    Injection inj{g.leaf_ref(pert->delta()), pert->layer()};
    return mean_nll(m, batch, &inj).value().item();
  }
  return mean_nll(m, batch).value().item();
}

float ga_loss(const ModelParams& params, std::span<const Sequence> batch) {
  Graph<float> g;
  return ga_loss(bind(g, params, false), batch).value().item();
}

float npo_loss(const ModelParams& params, std::span<const Sequence> batch, const RefCache& ref, double beta) {
  Graph<float> g;
  return npo_loss(bind(g, params, false), batch, ref, beta).value().item();
}

float gd_retain_loss(const ModelParams& params, std::span<const Sequence> batch) {
  Graph<float> g;
  return gd_retain_loss(bind(g, params, false), batch).value().item();
}

float kl_retain_loss(const ModelParams& params, std::span<const Sequence> batch, const RefCache& ref) {
  Graph<float> g;
  return kl_retain_loss(bind(g, params, false), batch, ref).value().item();
}

namespace {

Var<float> forget_term(const BoundModel& m, std::span<const Sequence> batch, const LossConfig& loss,
                       const RefCache& ref, const Injection* inj) {
  if (uses_npo(loss.forget_kind)) return npo_loss(m, batch, ref, loss.beta, inj);
  return ga_loss(m, batch, inj);
}

Var<float> retain_term(const BoundModel& m, std::span<const Sequence> batch, const LossConfig& loss,
                       const RefCache& ref) {
  if (loss.retain_kind == RetainKind::kKLR) return kl_retain_loss(m, batch, ref);
  return gd_retain_loss(m, batch);
}

float forget_value(const ModelParams& params, std::span<const Sequence> batch, const LossConfig& loss,
                   const RefCache& ref, const ResidualPerturbation* pert) {
  Graph<float> g;
  BoundModel m = bind(g, params, false);
  if (pert) {
    Injection inj{g.leaf_ref(pert->delta()), pert->layer()};
    return forget_term(m, batch, loss, ref, &inj).value().item();
  }
  return forget_term(m, batch, loss, ref, nullptr).value().item();
}

LossAndGradients run_backward(Graph<float>& g, const BoundModel& m, Var<float> root) {
  LossAndGradients out;
  out.value = root.value().item();
  g.backward(root);
  out.grads = collect(m);
  return out;
}

}  // namespace

LossAndGradients forget_loss_and_gradients(const ModelParams& params, std::span<const Sequence> batch,
                                           const LossConfig& loss, const RefCache& ref,
                                           const ResidualPerturbation* pert) {
  Graph<float> g;
  BoundModel m = bind(g, params, true);
  if (pert) {
    Injection inj{g.leaf_ref(pert->delta()), pert->layer()};
    return run_backward(g, m, forget_term(m, batch, loss, ref, &inj));
  }
  return run_backward(g, m, forget_term(m, batch, loss, ref, nullptr));
}

LossAndGradients retain_loss_and_gradients(const ModelParams& params, std::span<const Sequence> batch,
                                           const LossConfig& loss, const RefCache& ref) {
  Graph<float> g;
  BoundModel m = bind(g, params, true);
  return run_backward(g, m, retain_term(m, batch, loss, ref));
}

LossAndGradients nll_loss_and_gradients(const ModelParams& params, std::span<const Sequence> batch) {
  Graph<float> g;
  BoundModel m = bind(g, params, true);
  return run_backward(g, m, mean_nll(m, batch));
}

// ---------------------------------------------------------------------------
// Latent adversary

InnerResult inner_maximize_delta(const ModelParams& params, std::span<const Sequence> batch,
                                 const PerturbationSpec& spec, std::uint64_t seed) {
  spec.validate(params.config);
  require_batch(batch);
  const int d = params.config.d_model;
  Tensor delta({d});
  const double sigma = spec.sigma(d);
  if (sigma > 0) {
    Rng rng(seed);
    for (auto& v : delta.data()) v = static_cast<float>(sigma * rng.normal());
  }
  project_to_ball(delta, spec.kappa);

  InnerResult out{ResidualPerturbation(delta, spec.layer, spec.kappa), {}, 0.0, 0.0};
  for (int k = 0; k <= spec.inner_steps; ++k) {
    const bool step = k < spec.inner_steps;
    Graph<float> g;
    BoundModel m = bind(g, params, false);
    Injection inj{g.leaf_ref(delta, step), spec.layer};
    Var<float> nll = mean_nll(m, batch, &inj);
    const double value = nll.value().item();
    out.trace.push_back(value);
    if (k == 0 || value < out.best_nll) {
      out.best_nll = value;
      out.delta = ResidualPerturbation(delta, spec.layer, spec.kappa);
    }
    if (!step) break;
    g.backward(nll);
    // Descend on the forget NLL: the adversary wants the erased answers back.
    Tensor next = delta;
    next.arr() -= static_cast<float>(spec.inner_lr) * inj.delta.grad().arr();
    project_to_ball(next, spec.kappa);
    delta = std::move(next);
  }
  out.initial_nll = out.trace.front();
  return out;
}

float adv_forget_loss(const ModelParams& params, std::span<const Sequence> batch, const PerturbationSpec& spec,
                      const LossConfig& loss, const RefCache& ref, std::uint64_t seed) {
  require(is_adversarial(loss.forget_kind), "invalid_config", "adv_forget_loss needs AdvGA or AdvNPO");
  const InnerResult inner = inner_maximize_delta(params, batch, spec, seed);
  return forget_value(params, batch, loss, ref, &inner.delta);
}

// ---------------------------------------------------------------------------
// Training

StepReport combined_step(UnlearnState& state, std::span<const Sequence> forget_batch,
                         std::span<const Sequence> retain_batch, const LossConfig& loss,
                         const TrainerConfig& trainer, const RefCache& ref, const ResidualPerturbation* delta) {
  loss.validate();
  require(is_adversarial(loss.forget_kind) == (delta != nullptr), "invalid_config",
          "adversarial methods need a perturbation and plain methods must not get one");
  StepReport report;
  report.step = state.step;
  report.lr = cosine_lr(state.step, trainer);
  report.lambda = loss.lambda;
  try {
    LossAndGradients forget = forget_loss_and_gradients(state.params, forget_batch, loss, ref, delta);
    report.forget_loss = forget.value;
    Gradients grads = std::move(forget.grads);
    if (loss.retain_kind != RetainKind::kNone) {
      if (loss.lambda > 0) {
        LossAndGradients retain = retain_loss_and_gradients(state.params, retain_batch, loss, ref);
        report.retain_loss = retain.value;
        const float lambda = static_cast<float>(loss.lambda);
        for (auto& [name, g] : grads) g.arr() += lambda * retain.grads.at(name).arr();
      } else {
        Graph<float> g;
        report.retain_loss = retain_term(bind(g, state.params, false), retain_batch, loss, ref).value().item();
      }
    }
    report.total_loss = report.forget_loss + (loss.retain_kind == RetainKind::kNone ? 0.0 : loss.lambda * report.retain_loss);
    require(std::isfinite(report.total_loss), "non_finite",
            "forget_loss=" + fmt(report.forget_loss) + " retain_loss=" + fmt(report.retain_loss));
    state.optimizer.step(state.params, grads, report.lr);
  } catch (const Error& e) {
    fail(e.code(), "unlearning step " + std::to_string(state.step) + " (lr " + fmt(report.lr) + "): " + e.what());
  }
  ++state.step;
  return report;
}

BatchSampler::BatchSampler(std::size_t n, int batch_size, std::uint64_t seed) : batch_size_(batch_size), rng_(seed) {
  require(n > 0, "empty_batch", "cannot sample batches from an empty set");
  require(batch_size >= 1, "invalid_config", "batch_size must be >= 1");
  order_.resize(n);
  for (std::size_t i = 0; i < n; ++i) order_[i] = i;
  rng_.shuffle(std::span<std::size_t>(order_));
}

std::vector<std::size_t> BatchSampler::next() {
  const std::size_t take = std::min(order_.size(), static_cast<std::size_t>(batch_size_));
  if (cursor_ + take > order_.size()) {
    rng_.shuffle(std::span<std::size_t>(order_));
    cursor_ = 0;
  }
  std::vector<std::size_t> out(order_.begin() + cursor_, order_.begin() + cursor_ + take);
  cursor_ += take;
  return out;
}

namespace {

std::vector<Sequence> pick(std::span<const Sequence> all, const std::vector<std::size_t>& idx) {
  std::vector<Sequence> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

}  // namespace

TrainResult lau_train(const ModelParams& init, std::span<const Sequence> forget, std::span<const Sequence> retain,
                      const LossConfig& loss, const PerturbationSpec& spec, const TrainerConfig& trainer,
                      const RefCache& ref, const StepObserver& observer) {
  loss.validate();
  trainer.validate();
  const bool adversarial = is_adversarial(loss.forget_kind);
  if (adversarial) spec.validate(init.config);
  require(!forget.empty(), "empty_batch", "forget set is empty");
  const bool need_retain = loss.retain_kind != RetainKind::kNone;
  require(!need_retain || !retain.empty(), "empty_batch", "retain set is empty");

  UnlearnState state{init, AdamW(trainer), 0};
  BatchSampler forget_sampler(forget.size(), trainer.batch_size, derive_seed(trainer.seed, 1));
  std::optional<BatchSampler> retain_sampler;
  if (need_retain) retain_sampler.emplace(retain.size(), trainer.batch_size, derive_seed(trainer.seed, 2));

  TrainResult result;
  for (int t = 0; t < trainer.total_steps; ++t) {
    const auto fb = pick(forget, forget_sampler.next());
    const auto rb = need_retain ? pick(retain, retain_sampler->next()) : std::vector<Sequence>{};
    std::optional<InnerResult> inner;
    if (adversarial) inner = inner_maximize_delta(state.params, fb, spec, derive_seed(trainer.seed, 1000 + t));
    StepReport r = combined_step(state, fb, rb, loss, trainer, ref, inner ? &inner->delta : nullptr);
    if (inner) {
      r.delta_norm = inner->delta.norm();
      r.inner_initial_nll = inner->initial_nll;
      r.inner_final_nll = inner->best_nll;
    }
    result.history.push_back(r);
    if (observer) observer(r, state.params);
  }
  result.params = std::move(state.params);
  return result;
}

TrainResult pretrain(const ModelParams& init, std::span<const Sequence> data, const TrainerConfig& trainer,
                     const StepObserver& observer) {
  trainer.validate();
  require(!data.empty(), "empty_batch", "pretraining data is empty");
  ModelParams params = init;
  AdamW opt(trainer);
  BatchSampler sampler(data.size(), trainer.batch_size, derive_seed(trainer.seed, 3));
  TrainResult result;
  for (int t = 0; t < trainer.total_steps; ++t) {
    const auto batch = pick(data, sampler.next());
    StepReport r;
    r.step = t;
    r.lr = cosine_lr(t, trainer);
    LossAndGradients lg = nll_loss_and_gradients(params, batch);
    r.total_loss = lg.value;
    require(std::isfinite(r.total_loss), "non_finite", "pretraining loss diverged at step " + std::to_string(t));
    opt.step(params, lg.grads, r.lr);
    result.history.push_back(r);
    if (observer) observer(r, params);
  }
  result.params = std::move(params);
  return result;
}

std::string history_csv(std::span<const StepReport> history) {
  std::ostringstream out;
  out << "step,lr,forget_loss,retain_loss,delta_norm,inner_initial_nll,inner_final_nll\n";
  const auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  for (const auto& r : history) {
    out << r.step << ',' << fmt(r.lr) << ',' << fmt(r.forget_loss) << ',' << fmt(r.retain_loss) << ','
        << opt(r.delta_norm) << ',' << opt(r.inner_initial_nll) << ',' << opt(r.inner_final_nll) << '\n';
  }
  return out.str();
}

void write_history_csv(const std::filesystem::path& path, std::span<const StepReport> history) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "io_error", "cannot write " + path.string());
  f << history_csv(history);
  require(static_cast<bool>(f), "io_error", "failed writing " + path.string());
}

}  // namespace ulab
