#pragma once

// Unlearning objectives and trainers.
//
// Forget losses: GA (negated mean NLL) and NPO in its loss-ratio form
//   -(2/beta) * mean_i log(1 + (L_theta(i) / L_ref(i))^beta)
// plus their latent-adversarial variants AdvGA / AdvNPO, which evaluate the
// same expressions with a norm-bounded residual perturbation that was first
// optimized to *lower* the forget NLL (i.e. to bring the knowledge back).
// Retain losses: GDR (mean NLL) and KLR (mean token KL(current || ref)).
//
// The perturbation touches the forget term only. The inner loop is
// first-order: delta enters the outer step as a constant.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ulab/corpus.hpp"
#include "ulab/model.hpp"
#include "ulab/random.hpp"

namespace ulab {

enum class ForgetKind { kGA, kNPO, kAdvGA, kAdvNPO };
enum class RetainKind { kNone, kGDR, kKLR };

std::string_view forget_kind_name(ForgetKind k);  // "ga", "npo", "advga", "advnpo"
ForgetKind forget_kind_from_name(std::string_view name);
std::string_view retain_kind_name(RetainKind k);  // "none", "gdr", "klr"
RetainKind retain_kind_from_name(std::string_view name);
bool is_adversarial(ForgetKind k);

struct LossConfig {
  ForgetKind forget_kind = ForgetKind::kNPO;
  RetainKind retain_kind = RetainKind::kGDR;
  double lambda = 1.0;
  double beta = 0.1;
  void validate() const;
};

struct PerturbationSpec {
  int layer = 1;
  double kappa = 2.0;
  int inner_steps = 6;
  double inner_lr = 1.0;
  std::optional<double> init_sigma;  // defaults to kappa / sqrt(d_model)

  double sigma(int d_model) const;
  void validate(const ModelConfig& model) const;
};

struct TrainerConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled; applied to rank-2 tensors only
  double lr_max = 1e-3;
  double lr_min = 0.0;
  int total_steps = 100;
  int batch_size = 8;
  std::uint64_t seed = 0;
  void validate() const;
};

// lr_min + 0.5 (lr_max - lr_min)(1 + cos(pi t / T)) for 0 <= t <= T.
double cosine_lr(int step, const TrainerConfig& config);

using Gradients = std::map<std::string, Tensor>;

class AdamW {
 public:
  explicit AdamW(const TrainerConfig& config) : config_(config) {}
  void step(ModelParams& params, const Gradients& grads, double lr);
  int steps_taken() const noexcept { return t_; }

 private:
  TrainerConfig config_;
  std::map<std::string, Tensor> m_, v_;
  int t_ = 0;
};

// Per-sequence reference losses and completion-position log-probabilities of
// the frozen pre-unlearning model.
class RefCache {
 public:
  struct Entry {
    float loss = 0.0f;
    Tensor logprobs;  // completion positions x vocab
  };

  static RefCache build(const ModelParams& reference, std::span<const Sequence> sequences);
  // Explicit entries, e.g. for analytic anchors.
  static RefCache from_entries(std::map<std::string, Entry> entries);

  bool contains(const std::string& id) const { return entries_.count(id) > 0; }
  const Entry& at(const std::string& id) const;
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::map<std::string, Entry> entries_;
};

// ---- graph-level losses -------------------------------------------------
Var<float> mean_nll(const BoundModel& model, std::span<const Sequence> batch, const Injection* injection = nullptr);
Var<float> ga_loss(const BoundModel& model, std::span<const Sequence> batch, const Injection* injection = nullptr);
Var<float> npo_loss(const BoundModel& model, std::span<const Sequence> batch, const RefCache& ref, double beta,
                    const Injection* injection = nullptr);
Var<float> gd_retain_loss(const BoundModel& model, std::span<const Sequence> batch);
Var<float> kl_retain_loss(const BoundModel& model, std::span<const Sequence> batch, const RefCache& ref);

// ---- value-level losses -------------------------------------------------
float mean_nll(const ModelParams& params, std::span<const Sequence> batch, const ResidualPerturbation* pert = nullptr);
float ga_loss(const ModelParams& params, std::span<const Sequence> batch);
float npo_loss(const ModelParams& params, std::span<const Sequence> batch, const RefCache& ref, double beta);
float gd_retain_loss(const ModelParams& params, std::span<const Sequence> batch);
float kl_retain_loss(const ModelParams& params, std::span<const Sequence> batch, const RefCache& ref);

// Forget-term value and parameter gradients with delta held fixed (GA/NPO
// when pert is null, AdvGA/AdvNPO otherwise).
struct LossAndGradients {
  float value = 0.0f;
  Gradients grads;
};
LossAndGradients forget_loss_and_gradients(const ModelParams& params, std::span<const Sequence> batch,
                                           const LossConfig& loss, const RefCache& ref,
                                           const ResidualPerturbation* pert);
LossAndGradients retain_loss_and_gradients(const ModelParams& params, std::span<const Sequence> batch,
                                           const LossConfig& loss, const RefCache& ref);
// Plain mean-NLL value and gradients (pretraining, gradient checks).
LossAndGradients nll_loss_and_gradients(const ModelParams& params, std::span<const Sequence> batch);

// ---- latent adversary ---------------------------------------------------
struct InnerResult {
  ResidualPerturbation delta;
  std::vector<double> trace;  // forget NLL at the initial delta and after each step
  double initial_nll = 0.0;
  double best_nll = 0.0;
};

// delta ~ N(0, sigma^2 I) projected onto the kappa ball, then K projected
// gradient-descent steps on the mean forget NLL. Returns the best delta seen.
InnerResult inner_maximize_delta(const ModelParams& params, std::span<const Sequence> batch,
                                 const PerturbationSpec& spec, std::uint64_t seed);

// AdvGA / AdvNPO value: inner loop, then the forget loss at the returned delta.
float adv_forget_loss(const ModelParams& params, std::span<const Sequence> batch, const PerturbationSpec& spec,
                      const LossConfig& loss, const RefCache& ref, std::uint64_t seed);

// ---- training -----------------------------------------------------------
struct StepReport {
  int step = 0;
  double lr = 0.0;
  double forget_loss = 0.0;
  double retain_loss = 0.0;
  double lambda = 0.0;
  double total_loss = 0.0;
  std::optional<double> delta_norm;
  std::optional<double> inner_initial_nll;
  std::optional<double> inner_final_nll;
};

struct UnlearnState {
  ModelParams params;
  AdamW optimizer;
  int step = 0;
};

// total = forget + lambda * retain, one AdamW update at cosine_lr(step).
// With retain_kind == NONE or lambda == 0 the retain term contributes nothing.
StepReport combined_step(UnlearnState& state, std::span<const Sequence> forget_batch,
                         std::span<const Sequence> retain_batch, const LossConfig& loss,
                         const TrainerConfig& trainer, const RefCache& ref,
                         const ResidualPerturbation* delta = nullptr);

struct TrainResult {
  ModelParams params;
  std::vector<StepReport> history;
};

// Observer called after every optimizer step (for checkpointing sweeps).
using StepObserver = std::function<void(const StepReport&, const ModelParams&)>;

TrainResult lau_train(const ModelParams& init, std::span<const Sequence> forget, std::span<const Sequence> retain,
                      const LossConfig& loss, const PerturbationSpec& spec, const TrainerConfig& trainer,
                      const RefCache& ref, const StepObserver& observer = {});

// Standard next-token training on `data` (memorization of the world). The
// history reports the LM loss as total_loss.
TrainResult pretrain(const ModelParams& init, std::span<const Sequence> data, const TrainerConfig& trainer,
                     const StepObserver& observer = {});

// Epoch-shuffled batches without replacement, reshuffled each epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, int batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  int batch_size_;
  Rng rng_;
};

std::string history_csv(std::span<const StepReport> history);
void write_history_csv(const std::filesystem::path& path, std::span<const StepReport> history);

}  // namespace ulab
