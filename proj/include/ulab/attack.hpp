#pragma once

// Dynamic unlearning attack: one universal adversarial suffix, optimized with
// greedy coordinate gradient search, that makes an unlearned model produce
// the forgotten answers again.
//
// Each attack prompt is <bos> + question + suffix and its target is the
// reference answer. The search minimizes the summed target NLL over a prompt
// set; every iteration takes the one-hot suffix gradients, proposes the top_k
// most promising substitutions per position, and evaluates a random sample of
// them exactly together with the incumbent.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ulab/corpus.hpp"
#include "ulab/eval.hpp"
#include "ulab/model.hpp"
#include "ulab/random.hpp"

namespace ulab {

enum class Practicality { kAttackUnlearned, kAttackOriginal };
enum class Generalization { kWithinQuery, kCrossQuery, kCrossTarget };

std::string_view practicality_name(Practicality p);      // "attack_unlearned", "attack_original"
std::string_view generalization_name(Generalization g);  // "within_query", "cross_query", "cross_target"
Practicality practicality_from_name(std::string_view name);
Generalization generalization_from_name(std::string_view name);
std::string scenario_name(Practicality p, Generalization g);  // "<practicality>/<generalization>"

struct AttackConfig {
  int suffix_len = 5;
  int iterations = 100;
  int top_k = 16;
  int eval_batch = 64;
  std::uint64_t seed = 0;
  int filler_token = -1;  // initial suffix token; -1 picks the lowest ordinary token id
  Practicality practicality = Practicality::kAttackUnlearned;
  Generalization generalization = Generalization::kWithinQuery;
  void validate(int vocab_size) const;
};

struct AttackPrompt {
  const ModelParams* model = nullptr;  // model the loss is computed on
  std::string id;
  std::vector<int> prompt;  // <bos> + question
  std::vector<int> target;  // reference answer tokens
};

struct AttackState {
  std::vector<int> suffix;
  double best_loss = 0.0;
  std::vector<double> loss_trace;  // one entry per iteration
  std::vector<AttackPrompt> prompt_set;
};

// d loss / d onehot for each suffix position (suffix.size() x V).
Tensor suffix_token_gradients(const ModelParams& params, std::span<const int> prompt, std::span<const int> suffix,
                              std::span<const int> target);

// Target NLL with the suffix given as (possibly fractional) one-hot rows.
float suffix_loss_soft(const ModelParams& params, std::span<const int> prompt, const Tensor& suffix_onehot,
                       std::span<const int> target);

// Exact target NLL of prompt + suffix.
float suffix_loss(const ModelParams& params, std::span<const int> prompt, std::span<const int> suffix,
                  std::span<const int> target);

// Sum over the prompt set, each prompt on its own model.
double summed_suffix_loss(std::span<const AttackPrompt> prompts, std::span<const int> suffix);

struct Candidate {
  int position = 0;
  int token = 0;
  friend bool operator==(const Candidate&, const Candidate&) = default;
};

// Per position, the top_k tokens with the most negative gradient, skipping the
// incumbent and `excluded` tokens. Order: position asc, gradient asc, id asc.
std::vector<Candidate> propose_candidates(const Tensor& grads, std::span<const int> suffix, int top_k,
                                          std::span<const int> excluded = {});

struct CandidateResult {
  std::vector<int> suffix;
  double loss = 0.0;
};

// Samples min(B, |candidates|) single substitutions without replacement,
// evaluates them and the incumbent exactly, returns the best (ties go to the
// lexicographically smallest suffix).
CandidateResult evaluate_candidates(std::span<const AttackPrompt> prompts, std::span<const int> incumbent,
                                    std::span<const Candidate> candidates, int eval_batch, Rng& rng);

AttackState init_attack_state(std::vector<AttackPrompt> prompts, const AttackConfig& config, int vocab_size);

// One gradient -> candidates -> evaluation round; appends to loss_trace.
void gcg_iterate(AttackState& state, const AttackConfig& config, Rng& rng, std::span<const int> excluded);

// Runs config.iterations rounds on a fresh state.
AttackState optimize_universal_suffix(std::vector<AttackPrompt> prompts, const AttackConfig& config,
                                      const Vocabulary& vocab);

// ---- scenarios ---------------------------------------------------------

// One unlearning target: its name, its unlearned model and the probes the
// attack is scored on.
struct AttackTarget {
  std::string name;
  const ModelParams* unlearned = nullptr;
  std::vector<Example> probes;
};

struct ScenarioPlan {
  std::vector<AttackPrompt> train;
  std::vector<Example> eval_probes;
};

// Prompt set and evaluation probes for target `index` under the config's
// scenario. Disjointness of training and evaluation prompts is asserted.
ScenarioPlan plan_scenario(const ModelParams& original, std::span<const AttackTarget> targets, std::size_t index,
                           const AttackConfig& config, const Vocabulary& vocab);

struct ScenarioResult {
  std::string target;
  std::string scenario;  // "none", "static" or "<practicality>/<generalization>"
  std::vector<int> suffix;
  std::string suffix_text;
  std::vector<double> loss_trace;
  ProbeEvaluation eval;  // on the target's unlearned model
};

ScenarioResult run_scenario(const ModelParams& original, std::span<const AttackTarget> targets, std::size_t index,
                            const AttackConfig& config, const Vocabulary& vocab);

// No-attack and static prefix-injection rows for one target.
std::vector<ScenarioResult> baseline_scenarios(const AttackTarget& target, const Vocabulary& vocab);

// No-attack and static prefix-injection rows, then the six dynamic scenarios.
std::vector<ScenarioResult> run_scenario_matrix(const ModelParams& original, std::span<const AttackTarget> targets,
                                                std::size_t index, const AttackConfig& config,
                                                const Vocabulary& vocab);

// {scenario, target, suffix_token_ids, suffix_text, loss_trace, eval}
std::string attack_result_json(const ScenarioResult& result, const std::map<std::string, std::string>& metadata = {});

}  // namespace ulab
