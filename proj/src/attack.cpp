#include "ulab/attack.hpp"

#include <algorithm>
#include <json.hpp>
#include <set>

#include "ulab/error.hpp"

namespace ulab {

std::string_view practicality_name(Practicality p) {
  return p == Practicality::kAttackUnlearned ? "attack_unlearned" : "attack_original";
}

std::string_view generalization_name(Generalization g) {
  switch (g) {
    case Generalization::kWithinQuery: return "within_query";
    case Generalization::kCrossQuery: return "cross_query";
    case Generalization::kCrossTarget: return "cross_target";
  }
  return "unknown";
}

Practicality practicality_from_name(std::string_view name) {
  for (Practicality p : {Practicality::kAttackUnlearned, Practicality::kAttackOriginal}) {
    if (practicality_name(p) == name) return p;
  }
  fail("invalid_config", "unknown practicality '" + std::string(name) + "'");
}

Generalization generalization_from_name(std::string_view name) {
  for (Generalization g : {Generalization::kWithinQuery, Generalization::kCrossQuery, Generalization::kCrossTarget}) {
    if (generalization_name(g) == name) return g;
  }
  fail("invalid_config", "unknown generalization '" + std::string(name) + "'");
}

std::string scenario_name(Practicality p, Generalization g) {
  return std::string(practicality_name(p)) + "/" + std::string(generalization_name(g));
}

void AttackConfig::validate(int vocab_size) const {
  require(suffix_len >= 1, "invalid_config", "suffix_len must be >= 1");
  require(iterations >= 0, "invalid_config", "iterations must be >= 0");
  require(top_k >= 1 && top_k <= vocab_size, "invalid_config", "top_k must lie in [1, V]");
  require(eval_batch >= 1, "invalid_config", "eval_batch must be >= 1");
  require(filler_token == -1 || (filler_token >= 2 && filler_token < vocab_size), "invalid_config",
          "filler_token must be an ordinary token id");
}

namespace {

void check_lengths(const ModelConfig& c, std::span<const int> prompt, std::size_t suffix_len,
                   std::span<const int> target) {
  require(!prompt.empty() && !target.empty(), "empty_sequence", "attack prompt and target must be non-empty");
  const std::size_t inputs = prompt.size() + suffix_len + target.size() - 1;
  require(inputs <= static_cast<std::size_t>(c.context_len), "length_overflow",
          "prompt + suffix + target needs " + std::to_string(inputs) + " positions, context is " +
              std::to_string(c.context_len));
}

Var<float> soft_loss(const BoundModel& m, std::span<const int> prompt, Var<float> onehot,
                     std::span<const int> target) {
  std::vector<Var<float>> parts = {gather(m.tok_emb, prompt), matmul(onehot, m.tok_emb), gather(m.tok_emb, target)};
  const int prompt_len = static_cast<int>(prompt.size()) + onehot.value().rows();
  return sequence_nll_from_embeddings(m, concat_rows(std::span<const Var<float>>(parts)), prompt_len, target);
}

Tensor onehot_rows(std::span<const int> suffix, int vocab) {
  Tensor t({static_cast<int>(suffix.size()), vocab});
  for (std::size_t i = 0; i < suffix.size(); ++i) t.at(static_cast<int>(i), suffix[i]) = 1.0f;
  return t;
}

std::vector<int> with_suffix(std::span<const int> prompt, std::span<const int> suffix) {
  std::vector<int> out(prompt.begin(), prompt.end());
  out.insert(out.end(), suffix.begin(), suffix.end());
  return out;
}

std::vector<int> special_tokens(const Vocabulary& vocab) {
  std::vector<int> out;
  for (int t = 0; t < vocab.size(); ++t) {
    if (vocab.is_special(t)) out.push_back(t);
  }
  return out;
}

}  // namespace

Tensor suffix_token_gradients(const ModelParams& params, std::span<const int> prompt, std::span<const int> suffix,
                              std::span<const int> target) {
  require(!suffix.empty(), "empty_suffix", "suffix must have at least one token");
  check_lengths(params.config, prompt, suffix.size(), target);
  check_tokens(params.config, with_suffix(prompt, suffix));
  check_tokens(params.config, target);
  Graph<float> g;
  BoundModel m = bind(g, params, false);
  Var<float> x = g.leaf(onehot_rows(suffix, params.config.vocab_size), true);
  g.backward(soft_loss(m, prompt, x, target));
  return x.grad();
}

float suffix_loss_soft(const ModelParams& params, std::span<const int> prompt, const Tensor& suffix_onehot,
                       std::span<const int> target) {
  require(suffix_onehot.rank() == 2 && suffix_onehot.cols() == params.config.vocab_size, "shape_mismatch",
          "suffix one-hot must be n x V");
  check_lengths(params.config, prompt, suffix_onehot.rows(), target);
  Graph<float> g;
  BoundModel m = bind(g, params, false);
  return soft_loss(m, prompt, g.leaf_ref(suffix_onehot), target).value().item();
}

float suffix_loss(const ModelParams& params, std::span<const int> prompt, std::span<const int> suffix,
                  std::span<const int> target) {
  check_lengths(params.config, prompt, suffix.size(), target);
  return sequence_nll(params, with_suffix(prompt, suffix), target);
}

double summed_suffix_loss(std::span<const AttackPrompt> prompts, std::span<const int> suffix) {
  require(!prompts.empty(), "empty_input", "attack prompt set is empty");
  double total = 0;
  for (const auto& p : prompts) total += suffix_loss(*p.model, p.prompt, suffix, p.target);
  return total;
}

std::vector<Candidate> propose_candidates(const Tensor& grads, std::span<const int> suffix, int top_k,
                                          std::span<const int> excluded) {
  require(top_k >= 1, "invalid_config", "top_k must be >= 1");
  require(grads.rank() == 2 && static_cast<std::size_t>(grads.rows()) == suffix.size(), "shape_mismatch",
          "gradient rows must match the suffix length");
  const std::set<int> skip(excluded.begin(), excluded.end());
  std::vector<Candidate> out;
  for (int pos = 0; pos < grads.rows(); ++pos) {
    std::vector<int> tokens;
    for (int t = 0; t < grads.cols(); ++t) {
      if (t != suffix[pos] && !skip.count(t)) tokens.push_back(t);
    }
    const auto key = [&](int t) { return std::pair(grads.at(pos, t), t); };
    const std::size_t k = std::min(tokens.size(), static_cast<std::size_t>(top_k));
    std::partial_sort(tokens.begin(), tokens.begin() + k, tokens.end(),
                      [&](int a, int b) { return key(a) < key(b); });
    for (std::size_t i = 0; i < k; ++i) out.push_back({pos, tokens[i]});
  }
  return out;
}

CandidateResult evaluate_candidates(std::span<const AttackPrompt> prompts, std::span<const int> incumbent,
                                    std::span<const Candidate> candidates, int eval_batch, Rng& rng) {
  require(!candidates.empty(), "empty_input", "no candidates to evaluate");
  require(eval_batch >= 1, "invalid_config", "eval_batch must be >= 1");
  std::vector<std::size_t> order(candidates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t take = std::min(order.size(), static_cast<std::size_t>(eval_batch));
  // Partial Fisher-Yates: the first `take` slots become a uniform sample.
  for (std::size_t i = 0; i < take; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);

  CandidateResult best{std::vector<int>(incumbent.begin(), incumbent.end()), summed_suffix_loss(prompts, incumbent)};
  for (std::size_t i = 0; i < take; ++i) {
    const Candidate& c = candidates[order[i]];
    require(c.position >= 0 && static_cast<std::size_t>(c.position) < incumbent.size(), "index_out_of_range",
            "candidate position outside the suffix");
    std::vector<int> trial(incumbent.begin(), incumbent.end());
    trial[c.position] = c.token;
    const double loss = summed_suffix_loss(prompts, trial);
    if (loss < best.loss || (loss == best.loss && trial < best.suffix)) best = {std::move(trial), loss};
  }
  return best;
}

AttackState init_attack_state(std::vector<AttackPrompt> prompts, const AttackConfig& config, int vocab_size) {
  config.validate(vocab_size);
  require(!prompts.empty(), "empty_input", "attack prompt set is empty");
  for (const auto& p : prompts) {
    require(p.model != nullptr, "invalid_argument", "attack prompt " + p.id + " has no model");
    require(p.model->config.vocab_size == vocab_size, "shape_mismatch", "model vocabulary does not match");
  }
  AttackState state;
  state.suffix.assign(config.suffix_len, config.filler_token == -1 ? 2 : config.filler_token);
  state.prompt_set = std::move(prompts);
  state.best_loss = summed_suffix_loss(state.prompt_set, state.suffix);
  return state;
}

void gcg_iterate(AttackState& state, const AttackConfig& config, Rng& rng, std::span<const int> excluded) {
  require(!state.prompt_set.empty(), "empty_input", "attack prompt set is empty");
  Tensor grads = suffix_token_gradients(*state.prompt_set[0].model, state.prompt_set[0].prompt, state.suffix,
                                        state.prompt_set[0].target);
  for (std::size_t i = 1; i < state.prompt_set.size(); ++i) {
    const auto& p = state.prompt_set[i];
    grads.arr() += suffix_token_gradients(*p.model, p.prompt, state.suffix, p.target).arr();
  }
  const auto candidates = propose_candidates(grads, state.suffix, config.top_k, excluded);
  if (candidates.empty()) {
    state.loss_trace.push_back(state.best_loss);
    return;
  }
  CandidateResult best = evaluate_candidates(state.prompt_set, state.suffix, candidates, config.eval_batch, rng);
  state.suffix = std::move(best.suffix);
  state.best_loss = best.loss;
  state.loss_trace.push_back(best.loss);
}

AttackState optimize_universal_suffix(std::vector<AttackPrompt> prompts, const AttackConfig& config,
                                      const Vocabulary& vocab) {
  AttackState state = init_attack_state(std::move(prompts), config, vocab.size());
  const auto excluded = special_tokens(vocab);
  Rng rng(config.seed);
  for (int i = 0; i < config.iterations; ++i) gcg_iterate(state, config, rng, excluded);
  return state;
}

// ---------------------------------------------------------------------------
// Scenarios

namespace {

AttackPrompt to_prompt(const Example& e, const ModelParams* model, const Vocabulary& vocab) {
  return AttackPrompt{model, e.id, probe_prompt(e, vocab), vocab.encode(e.completion)};
}

}  // namespace

ScenarioPlan plan_scenario(const ModelParams& original, std::span<const AttackTarget> targets, std::size_t index,
                           const AttackConfig& config, const Vocabulary& vocab) {
  require(index < targets.size(), "invalid_argument", "target index out of range");
  const AttackTarget& self = targets[index];
  require(self.unlearned != nullptr && !self.probes.empty(), "invalid_argument",
          "target " + self.name + " needs an unlearned model and probes");
  const auto model_for = [&](const AttackTarget& t) {
    return config.practicality == Practicality::kAttackUnlearned ? t.unlearned : &original;
  };
  ScenarioPlan plan;
  switch (config.generalization) {
    case Generalization::kWithinQuery:
      plan.eval_probes = self.probes;
      for (const auto& e : self.probes) plan.train.push_back(to_prompt(e, model_for(self), vocab));
      break;
    case Generalization::kCrossQuery: {
      const auto train = train_template_probes(self.probes);
      plan.eval_probes = held_out_template_probes(self.probes);
      require(!train.empty() && !plan.eval_probes.empty(), "invalid_argument",
              "cross-query needs both train-template and held-out probes");
      std::set<std::string> held;
      for (const auto& e : plan.eval_probes) held.insert(e.template_id);
      for (const auto& e : train) {
        require(!held.count(e.template_id), "scenario_leak", "template " + e.template_id + " on both sides");
        plan.train.push_back(to_prompt(e, model_for(self), vocab));
      }
      break;
    }
    case Generalization::kCrossTarget: {
      std::size_t models = 0;
      for (const auto& t : targets) models += t.unlearned != nullptr;
      require(models >= 2, "insufficient_models", "cross-target attacks need at least two unlearned models");
      plan.eval_probes = self.probes;
      for (std::size_t i = 0; i < targets.size(); ++i) {
        if (i == index) continue;
        require(targets[i].name != self.name, "scenario_leak", "target " + self.name + " listed twice");
        for (const auto& e : targets[i].probes) {
          require(e.target != self.name, "scenario_leak", "probe " + e.id + " is about the evaluation target");
          plan.train.push_back(to_prompt(e, model_for(targets[i]), vocab));
        }
      }
      break;
    }
  }
  return plan;
}

ScenarioResult run_scenario(const ModelParams& original, std::span<const AttackTarget> targets, std::size_t index,
                            const AttackConfig& config, const Vocabulary& vocab) {
  ScenarioPlan plan = plan_scenario(original, targets, index, config, vocab);
  const AttackState state = optimize_universal_suffix(std::move(plan.train), config, vocab);
  ScenarioResult r;
  r.target = targets[index].name;
  r.scenario = scenario_name(config.practicality, config.generalization);
  r.suffix = state.suffix;
  r.suffix_text = vocab.decode(state.suffix);
  r.loss_trace = state.loss_trace;
  r.eval = evaluate_probes(*targets[index].unlearned, vocab, plan.eval_probes, state.suffix);
  return r;
}

std::vector<ScenarioResult> baseline_scenarios(const AttackTarget& target, const Vocabulary& vocab) {
  require(target.unlearned != nullptr && !target.probes.empty(), "invalid_argument",
          "target " + target.name + " needs an unlearned model and probes");
  ScenarioResult none;
  none.target = target.name;
  none.scenario = "none";
  none.eval = evaluate_probes(*target.unlearned, vocab, target.probes);

  ScenarioResult fixed;
  fixed.target = target.name;
  fixed.scenario = "static";
  std::vector<Example> prefixed;
  for (const auto& e : target.probes) prefixed.push_back(make_static_attack(e));
  fixed.eval = evaluate_probes(*target.unlearned, vocab, prefixed);
  return {std::move(none), std::move(fixed)};
}

std::vector<ScenarioResult> run_scenario_matrix(const ModelParams& original, std::span<const AttackTarget> targets,
                                                std::size_t index, const AttackConfig& config,
                                                const Vocabulary& vocab) {
  require(index < targets.size(), "invalid_argument", "target index out of range");
  std::vector<ScenarioResult> rows = baseline_scenarios(targets[index], vocab);

  for (Practicality p : {Practicality::kAttackUnlearned, Practicality::kAttackOriginal}) {
    for (Generalization g : {Generalization::kWithinQuery, Generalization::kCrossQuery, Generalization::kCrossTarget}) {
      AttackConfig c = config;
      c.practicality = p;
      c.generalization = g;
      rows.push_back(run_scenario(original, targets, index, c, vocab));
    }
  }
  return rows;
}

std::string attack_result_json(const ScenarioResult& result, const std::map<std::string, std::string>& metadata) {
  nlohmann::ordered_json j;
  j["scenario"] = result.scenario;
  j["target"] = result.target;
  j["suffix_token_ids"] = result.suffix;
  j["suffix_text"] = result.suffix_text;
  j["loss_trace"] = result.loss_trace;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& [kind, value] : result.eval.mean_by_kind) {
    rows.push_back({{"kind", short_kind_name(kind)},
                    {"metric", kind == ExampleKind::kProbeVM ? "rougeL_f1" : "rougeL_recall"},
                    {"value", value}});
  }
  j["eval"] = {{"rows", rows}, {"mean", result.eval.mean}};
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  for (const auto& [k, v] : metadata) meta[k] = v;
  j["metadata"] = meta;
  return j.dump(2) + "\n";
}

}  // namespace ulab
