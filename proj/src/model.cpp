#include "ulab/model.hpp"

#include <cmath>

#include "ulab/random.hpp"

namespace ulab {
namespace {

std::string layer_name(int layer, const std::string& leaf) { return "layers." + std::to_string(layer) + "." + leaf; }

std::string head_name(int layer, const std::string& leaf, int head) {
  return layer_name(layer, leaf + "." + std::to_string(head));
}

Tensor normal_tensor(std::vector<int> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.normal() * stddev);
  return t;
}

}  // namespace

void ModelConfig::validate() const {
  require(vocab_size >= 2, "invalid_config", "vocab_size must be at least 2");
  require(d_model >= 1 && n_heads >= 1, "invalid_config", "d_model and n_heads must be positive");
  require(d_model % n_heads == 0, "invalid_config",
          "d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
  require(n_layers >= 1, "invalid_config", "n_layers must be at least 1");
  require(context_len >= 2, "invalid_config", "context_len must be at least 2");
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) fail("missing_tensor", "no parameter named " + name);
  return it->second;
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) fail("missing_tensor", "no parameter named " + name);
  return it->second;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.size();
  return n;
}

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const int d = config.d_model;
  const int hd = config.head_dim();
  const int f = config.ffn_dim();
  const double proj_sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double resid_scale = 1.0 / std::sqrt(2.0 * config.n_layers);

  ModelParams p;
  p.config = config;
  auto& t = p.tensors;
  // Insertion order below fixes the random stream.
  t["tok_emb"] = normal_tensor({config.vocab_size, d}, 0.1, rng);
  t["pos_emb"] = normal_tensor({config.context_len, d}, 0.1, rng);
  for (int l = 0; l < config.n_layers; ++l) {
    t[layer_name(l, "ln1.g")] = Tensor({d}, 1.0f);
    t[layer_name(l, "ln1.b")] = Tensor({d}, 0.0f);
    for (int h = 0; h < config.n_heads; ++h) {
      t[head_name(l, "attn.wq", h)] = normal_tensor({d, hd}, proj_sd, rng);
      t[head_name(l, "attn.wk", h)] = normal_tensor({d, hd}, proj_sd, rng);
      t[head_name(l, "attn.wv", h)] = normal_tensor({d, hd}, proj_sd, rng);
      t[head_name(l, "attn.wo", h)] = normal_tensor({hd, d}, resid_scale / std::sqrt(double(hd)), rng);
    }
    t[layer_name(l, "ln2.g")] = Tensor({d}, 1.0f);
    t[layer_name(l, "ln2.b")] = Tensor({d}, 0.0f);
    t[layer_name(l, "mlp.w1")] = normal_tensor({d, f}, proj_sd, rng);
    t[layer_name(l, "mlp.b1")] = Tensor({f}, 0.0f);
    t[layer_name(l, "mlp.w2")] = normal_tensor({f, d}, resid_scale / std::sqrt(double(f)), rng);
    t[layer_name(l, "mlp.b2")] = Tensor({d}, 0.0f);
  }
  t["lnf.g"] = Tensor({d}, 1.0f);
  t["lnf.b"] = Tensor({d}, 0.0f);
  t["head"] = normal_tensor({d, config.vocab_size}, proj_sd, rng);
  return p;
}

ModelConfig infer_config(const std::map<std::string, Tensor>& tensors) {
  auto get = [&](const std::string& name) -> const Tensor& {
    auto it = tensors.find(name);
    if (it == tensors.end()) fail("missing_tensor", "checkpoint lacks tensor " + name);
    return it->second;
  };
  ModelConfig c;
  const Tensor& tok = get("tok_emb");
  require(tok.rank() == 2, "shape_mismatch", "tok_emb must be rank 2");
  c.vocab_size = tok.rows();
  c.d_model = tok.cols();
  c.context_len = get("pos_emb").rows();
  c.n_layers = 0;
  while (tensors.count(layer_name(c.n_layers, "ln1.g"))) ++c.n_layers;
  c.n_heads = 0;
  while (tensors.count(head_name(0, "attn.wq", c.n_heads))) ++c.n_heads;
  c.validate();
  const ModelParams reference = [&] {
    ModelConfig probe = c;
    return init_params(probe);
  }();
  require(reference.tensors.size() == tensors.size(), "shape_mismatch", "unexpected tensor count in checkpoint");
  for (const auto& [name, t] : reference.tensors) {
    require(get(name).shape() == t.shape(), "shape_mismatch", "tensor " + name + " has unexpected shape");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Residual perturbation

void project_to_ball(Tensor& delta, double kappa) {
  const double n = l2_norm(delta);
  if (n <= kappa) return;
  if (kappa <= 0.0) {
    delta.fill(0.0f);
    return;
  }
  const double s = kappa / n;
  for (auto& v : delta.data()) v = static_cast<float>(v * s);
  // Float rounding may leave the norm a hair above kappa.
  while (l2_norm(delta) > kappa) {
    for (auto& v : delta.data()) v = std::nextafter(v, 0.0f);
  }
}

ResidualPerturbation::ResidualPerturbation(Tensor delta, int layer, double kappa)
    : delta_(std::move(delta)), layer_(layer), kappa_(kappa) {
  require(kappa_ >= 0.0, "invalid_perturbation", "kappa must be non-negative");
  require(layer_ >= 0, "invalid_perturbation", "perturbation layer must be non-negative");
  require(delta_.rank() == 1, "invalid_perturbation", "delta must be a vector");
  const double n = norm();
  if (n > kappa_ * (1.0 + 1e-6)) {
    fail("norm_violation", "||delta|| = " + std::to_string(n) + " exceeds kappa = " + std::to_string(kappa_));
  }
}

ResidualPerturbation ResidualPerturbation::projected(Tensor delta, int layer, double kappa) {
  project_to_ball(delta, kappa);
  return ResidualPerturbation(std::move(delta), layer, kappa);
}

ResidualPerturbation ResidualPerturbation::zero(int d_model, int layer, double kappa) {
  return ResidualPerturbation(Tensor({d_model}), layer, kappa);
}

// ---------------------------------------------------------------------------
// Graph construction

BoundModel bind(Graph<float>& graph, const ModelParams& params, bool requires_grad) {
  const ModelConfig& c = params.config;
  c.validate();
  BoundModel m;
  m.graph = &graph;
  m.config = c;
  for (const auto& [name, t] : params.tensors) m.by_name[name] = graph.leaf_ref(t, requires_grad);
  auto v = [&](const std::string& name) {
    auto it = m.by_name.find(name);
    if (it == m.by_name.end()) fail("missing_tensor", "no parameter named " + name);
    return it->second;
  };
  m.tok_emb = v("tok_emb");
  m.pos_emb = v("pos_emb");
  for (int l = 0; l < c.n_layers; ++l) {
    BoundLayer b;
    b.ln1_g = v(layer_name(l, "ln1.g"));
    b.ln1_b = v(layer_name(l, "ln1.b"));
    for (int h = 0; h < c.n_heads; ++h) {
      b.wq.push_back(v(head_name(l, "attn.wq", h)));
      b.wk.push_back(v(head_name(l, "attn.wk", h)));
      b.wv.push_back(v(head_name(l, "attn.wv", h)));
      b.wo.push_back(v(head_name(l, "attn.wo", h)));
    }
    b.ln2_g = v(layer_name(l, "ln2.g"));
    b.ln2_b = v(layer_name(l, "ln2.b"));
    b.w1 = v(layer_name(l, "mlp.w1"));
    b.b1 = v(layer_name(l, "mlp.b1"));
    b.w2 = v(layer_name(l, "mlp.w2"));
    b.b2 = v(layer_name(l, "mlp.b2"));
    m.layers.push_back(std::move(b));
  }
  m.lnf_g = v("lnf.g");
  m.lnf_b = v("lnf.b");
  m.head = v("head");
  return m;
}

void check_tokens(const ModelConfig& config, std::span<const int> tokens) {
  require(!tokens.empty(), "empty_sequence", "token sequence is empty");
  require(static_cast<int>(tokens.size()) <= config.context_len, "length_overflow",
          "sequence of " + std::to_string(tokens.size()) + " tokens exceeds context_len " +
              std::to_string(config.context_len));
  for (int t : tokens) {
    require(t >= 0 && t < config.vocab_size, "index_out_of_range",
            "token id " + std::to_string(t) + " outside vocabulary of " + std::to_string(config.vocab_size));
  }
}

Var<float> embed_tokens(const BoundModel& model, std::span<const int> tokens) {
  check_tokens(model.config, tokens);
  return gather(model.tok_emb, tokens);
}

namespace {

Var<float> attention(const BoundLayer& b, Var<float> x, const ModelConfig& c) {
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(c.head_dim()));
  Var<float> out;
  for (int h = 0; h < c.n_heads; ++h) {
    Var<float> q = matmul(x, b.wq[h]);
    Var<float> k = matmul(x, b.wk[h]);
    Var<float> v = matmul(x, b.wv[h]);
    Var<float> att = causal_softmax(scale(matmul(q, transpose(k)), inv_sqrt));
    Var<float> proj = matmul(matmul(att, v), b.wo[h]);
    out = out.valid() ? add(out, proj) : proj;
  }
  return out;
}

Var<float> block(const BoundLayer& b, Var<float> x, const ModelConfig& c) {
  x = add(x, attention(b, layer_norm(x, b.ln1_g, b.ln1_b), c));
  Var<float> hidden = gelu(add_row(matmul(layer_norm(x, b.ln2_g, b.ln2_b), b.w1), b.b1));
  return add(x, add_row(matmul(hidden, b.w2), b.b2));
}

}  // namespace

Var<float> logits_from_embeddings(const BoundModel& model, Var<float> token_rows, const Injection* injection,
                                  int first_row) {
  const ModelConfig& c = model.config;
  const int len = token_rows.value().rows();
  require(len >= 1 && len <= c.context_len, "length_overflow",
          "sequence of " + std::to_string(len) + " tokens exceeds context_len " + std::to_string(c.context_len));
  require(first_row >= 0 && first_row < len, "shape_mismatch", "first logit row out of range");
  if (injection) {
    require(injection->layer >= 0 && injection->layer <= c.n_layers, "invalid_perturbation",
            "perturbation layer " + std::to_string(injection->layer) + " outside [0, " + std::to_string(c.n_layers) +
                "]");
  }
  std::vector<int> positions(len);
  for (int i = 0; i < len; ++i) positions[i] = i;
  Var<float> x = add(token_rows, gather(model.pos_emb, std::span<const int>(positions)));
  for (int l = 0; l <= c.n_layers; ++l) {
    if (injection && injection->layer == l) x = add_row(x, injection->delta);
    if (l < c.n_layers) x = block(model.layers[l], x, c);
  }
  if (first_row > 0) x = slice_rows(x, first_row, len);
  return matmul(layer_norm(x, model.lnf_g, model.lnf_b), model.head);
}

Var<float> sequence_nll_from_embeddings(const BoundModel& model, Var<float> token_rows, int prompt_len,
                                        std::span<const int> completion, const Injection* injection) {
  require(prompt_len >= 1, "empty_sequence", "prompt must be non-empty");
  require(!completion.empty(), "empty_sequence", "completion must be non-empty");
  const int total = token_rows.value().rows();
  require(total == prompt_len + static_cast<int>(completion.size()), "shape_mismatch",
          "embedded rows do not match prompt + completion length");
  // Only the last prompt position and the completion positions except the
  // final one produce predictions for completion tokens.
  Var<float> rows = total > 1 ? slice_rows(token_rows, 0, total - 1) : token_rows;
  Var<float> logits = logits_from_embeddings(model, rows, injection, prompt_len - 1);
  return cross_entropy(logits, completion);
}

Var<float> completion_logits(const BoundModel& model, std::span<const int> prompt, std::span<const int> completion,
                             const Injection* injection) {
  require(!prompt.empty(), "empty_sequence", "prompt must be non-empty");
  require(!completion.empty(), "empty_sequence", "completion must be non-empty");
  std::vector<int> tokens(prompt.begin(), prompt.end());
  tokens.insert(tokens.end(), completion.begin(), completion.end());
  check_tokens(model.config, tokens);
  // The final completion token is never an input.
  std::span<const int> inputs(tokens.data(), tokens.size() - 1);
  return logits_from_embeddings(model, gather(model.tok_emb, inputs), injection,
                                static_cast<int>(prompt.size()) - 1);
}

Var<float> sequence_nll(const BoundModel& model, std::span<const int> prompt, std::span<const int> completion,
                        const Injection* injection) {
  return cross_entropy(completion_logits(model, prompt, completion, injection), completion);
}

Tensor forward(const ModelParams& params, std::span<const int> tokens) {
  Graph<float> g;
  BoundModel m = bind(g, params, false);
  return logits_from_embeddings(m, embed_tokens(m, tokens)).value();
}

Tensor forward_perturbed(const ModelParams& params, std::span<const int> tokens, const ResidualPerturbation& pert) {
  require(pert.delta().size() == static_cast<std::size_t>(params.config.d_model), "shape_mismatch",
          "delta length must equal d_model");
  Graph<float> g;
  BoundModel m = bind(g, params, false);
  Injection inj{g.leaf_ref(pert.delta()), pert.layer()};
  return logits_from_embeddings(m, embed_tokens(m, tokens), &inj).value();
}

float sequence_nll(const ModelParams& params, std::span<const int> prompt, std::span<const int> completion,
                   const ResidualPerturbation* pert) {
  Graph<float> g;
  BoundModel m = bind(g, params, false);
  if (pert) {
    require(pert->delta().size() == static_cast<std::size_t>(params.config.d_model), "shape_mismatch",
            "delta length must equal d_model");
    Injection inj{g.leaf_ref(pert->delta()), pert->layer()};
    return sequence_nll(m, prompt, completion, &inj).value().item();
  }
  return sequence_nll(m, prompt, completion).value().item();
}

std::vector<int> generate_greedy(const ModelParams& params, std::span<const int> prompt, int max_new,
                                 std::optional<int> eos) {
  check_tokens(params.config, prompt);
  require(max_new >= 0, "invalid_argument", "max_new must be non-negative");
  std::vector<int> tokens(prompt.begin(), prompt.end());
  std::vector<int> out;
  for (int step = 0; step < max_new; ++step) {
    if (static_cast<int>(tokens.size()) >= params.config.context_len) break;
    Graph<float> g;
    BoundModel m = bind(g, params, false);
    const int last = static_cast<int>(tokens.size()) - 1;
    const Tensor& logits = logits_from_embeddings(m, embed_tokens(m, tokens), nullptr, last).value();
    int best = 0;
    for (int v = 1; v < logits.cols(); ++v) {
      if (logits.at(0, v) > logits.at(0, best)) best = v;
    }
    if (eos && best == *eos) break;
    out.push_back(best);
    tokens.push_back(best);
  }
  return out;
}

}  // namespace ulab
