#pragma once

// Tiny decoder-only transformer: learned token + position embeddings,
// pre-norm blocks (multi-head causal attention, GELU feed-forward), a final
// layer norm and an untied unembedding without bias.
//
// A residual perturbation can be added to the residual stream at the input of
// block `layer`; layer == 0 injects right after the embeddings and
// layer == n_layers injects before the final norm.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ulab/autodiff.hpp"
#include "ulab/tensor.hpp"

namespace ulab {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_layers = 4;
  int n_heads = 4;
  int context_len = 32;
  std::uint64_t seed = 0;

  int head_dim() const { return d_model / n_heads; }
  int ffn_dim() const { return 4 * d_model; }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Named weights, ordered by name so iteration order is stable.
struct ModelParams {
  ModelConfig config;
  std::map<std::string, Tensor> tensors;

  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  std::size_t parameter_count() const;
  friend bool operator==(const ModelParams& a, const ModelParams& b) { return a.tensors == b.tensors; }
};

// Draws every weight from a seeded normal:
//   embeddings               N(0, 0.1^2)
//   q/k/v, w1, head          N(0, 1/fan_in)
//   attention out, w2        N(0, 1/(2 * n_layers * fan_in))
//   norm gains 1, biases 0
ModelParams init_params(const ModelConfig& config);

// Recovers the architecture from tensor shapes (checkpoints store no config).
ModelConfig infer_config(const std::map<std::string, Tensor>& tensors);

// Norm-bounded vector added to the residual stream of every position at the
// input of block `layer`. ||delta||_2 <= kappa holds for every instance.
class ResidualPerturbation {
 public:
  // Rejects deltas whose norm exceeds kappa (relative slack 1e-6 for float rounding).
  ResidualPerturbation(Tensor delta, int layer, double kappa);

  // Scales delta onto the kappa-ball when it lies outside.
  static ResidualPerturbation projected(Tensor delta, int layer, double kappa);
  static ResidualPerturbation zero(int d_model, int layer, double kappa);

  const Tensor& delta() const noexcept { return delta_; }
  int layer() const noexcept { return layer_; }
  double kappa() const noexcept { return kappa_; }
  double norm() const { return l2_norm(delta_); }

 private:
  Tensor delta_;
  int layer_;
  double kappa_;
};

// Projects `delta` in place onto {||x|| <= kappa}.
void project_to_ball(Tensor& delta, double kappa);

// Parameters entered into a graph as leaves.
struct BoundLayer {
  Var<float> ln1_g, ln1_b;
  std::vector<Var<float>> wq, wk, wv, wo;  // one per head
  Var<float> ln2_g, ln2_b, w1, b1, w2, b2;
};

struct BoundModel {
  Graph<float>* graph = nullptr;
  ModelConfig config;
  Var<float> tok_emb, pos_emb;
  std::vector<BoundLayer> layers;
  Var<float> lnf_g, lnf_b, head;
  std::map<std::string, Var<float>> by_name;
};

// Binds parameters by reference: `params` must outlive the graph.
BoundModel bind(Graph<float>& graph, const ModelParams& params, bool requires_grad);

struct Injection {
  Var<float> delta;  // [d_model]
  int layer = 0;
};

// Token embedding rows for `tokens` (no positions yet).
Var<float> embed_tokens(const BoundModel& model, std::span<const int> tokens);

// Runs the transformer over already-embedded tokens (positions are added
// here) and returns logits for rows [first_row, len).
Var<float> logits_from_embeddings(const BoundModel& model, Var<float> token_rows,
                                  const Injection* injection = nullptr, int first_row = 0);

// Logits predicting each completion token (|completion| x vocab).
Var<float> completion_logits(const BoundModel& model, std::span<const int> prompt, std::span<const int> completion,
                             const Injection* injection = nullptr);

// Mean NLL of `completion` given `prompt` on the graph.
Var<float> sequence_nll(const BoundModel& model, std::span<const int> prompt, std::span<const int> completion,
                        const Injection* injection = nullptr);

// Same, starting from embedded rows of prompt ++ completion.
Var<float> sequence_nll_from_embeddings(const BoundModel& model, Var<float> token_rows, int prompt_len,
                                        std::span<const int> completion, const Injection* injection = nullptr);

// Graph-free conveniences.
Tensor forward(const ModelParams& params, std::span<const int> tokens);
Tensor forward_perturbed(const ModelParams& params, std::span<const int> tokens, const ResidualPerturbation& pert);
float sequence_nll(const ModelParams& params, std::span<const int> prompt, std::span<const int> completion,
                   const ResidualPerturbation* pert = nullptr);

// Greedy argmax decoding (ties go to the lowest id). Stops after `max_new`
// tokens or right after emitting `eos` (which is not returned).
std::vector<int> generate_greedy(const ModelParams& params, std::span<const int> prompt, int max_new,
                                 std::optional<int> eos = std::nullopt);

void check_tokens(const ModelConfig& config, std::span<const int> tokens);

}  // namespace ulab
