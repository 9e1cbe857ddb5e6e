#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "ulab/attack.hpp"

using namespace ulab;

namespace {

ModelConfig tiny_config(int vocab, std::uint64_t seed) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.context_len = 16;
  c.seed = seed;
  return c;
}

std::vector<AttackPrompt> toy_prompts(const ModelParams& model, int vocab, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<AttackPrompt> out;
  for (int i = 0; i < n; ++i) {
    AttackPrompt p;
    p.model = &model;
    p.id = "p" + std::to_string(i);
    p.prompt = {0};
    for (int k = 0; k < 3; ++k) p.prompt.push_back(2 + static_cast<int>(rng.below(vocab - 2)));
    for (int k = 0; k < 2; ++k) p.target.push_back(2 + static_cast<int>(rng.below(vocab - 2)));
    out.push_back(p);
  }
  return out;
}

// Best suffix among the incumbent and every single substitution by a
// non-excluded token; ties go to the lexicographically smallest suffix.
CandidateResult brute_force_step(std::span<const AttackPrompt> prompts, const std::vector<int>& suffix, int vocab,
                                 const std::set<int>& excluded) {
  CandidateResult best{suffix, summed_suffix_loss(prompts, suffix)};
  for (std::size_t pos = 0; pos < suffix.size(); ++pos) {
    for (int t = 0; t < vocab; ++t) {
      if (t == suffix[pos] || excluded.count(t)) continue;
      auto trial = suffix;
      trial[pos] = t;
      const double l = summed_suffix_loss(prompts, trial);
      if (l < best.loss || (l == best.loss && trial < best.suffix)) best = {trial, l};
    }
  }
  return best;
}

}  // namespace

TEST_CASE("suffix gradients have one row per suffix position") {
  const ModelParams p = init_params(tiny_config(12, 1));
  const std::vector<int> prompt = {0, 3, 4}, suffix = {5, 6, 7}, target = {8, 9};
  const Tensor g = suffix_token_gradients(p, prompt, suffix, target);
  CHECK(g.rows() == 3);
  CHECK(g.cols() == 12);
  CHECK_THROWS_AS(suffix_token_gradients(p, prompt, std::vector<int>{}, target), Error);
  const std::vector<int> long_suffix(14, 5);
  CHECK_THROWS_AS(suffix_token_gradients(p, prompt, long_suffix, target), Error);
}

TEST_CASE("one-hot loss equals the token loss") {
  const ModelParams p = init_params(tiny_config(12, 2));
  const std::vector<int> prompt = {0, 3, 4}, suffix = {5, 6}, target = {8, 9};
  Tensor onehot({2, 12});
  onehot.at(0, 5) = 1.0f;
  onehot.at(1, 6) = 1.0f;
  CHECK(suffix_loss_soft(p, prompt, onehot, target) == doctest::Approx(suffix_loss(p, prompt, suffix, target)).epsilon(1e-5));
}

TEST_CASE("suffix gradients match directional finite differences") {
  const ModelParams p = init_params(tiny_config(12, 3));
  const std::vector<int> prompt = {0, 3, 4}, suffix = {5, 6, 2}, target = {8, 9};
  const Tensor g = suffix_token_gradients(p, prompt, suffix, target);
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor dir({3, 12});
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 12; ++c) dir.at(r, c) = static_cast<float>(rng.normal());
    const double eps = 1e-3;
    Tensor plus({3, 12}), minus({3, 12});
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 12; ++c) {
        const float base = c == suffix[r] ? 1.0f : 0.0f;
        plus.at(r, c) = base + static_cast<float>(eps) * dir.at(r, c);
        minus.at(r, c) = base - static_cast<float>(eps) * dir.at(r, c);
      }
    }
    const double fd =
        (suffix_loss_soft(p, prompt, plus, target) - suffix_loss_soft(p, prompt, minus, target)) / (2 * eps);
    double an = 0;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 12; ++c) an += static_cast<double>(g.at(r, c)) * dir.at(r, c);
    CHECK(std::abs(fd - an) <= 1e-2 * std::max(1.0, std::abs(an)));
  }
}

TEST_CASE("candidate proposal") {
  Tensor g({2, 6});
  const float vals[2][6] = {{0.5f, -1.0f, -1.0f, 0.0f, -3.0f, 2.0f}, {1.0f, 1.0f, 1.0f, 1.0f, 1.0f, 1.0f}};
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 6; ++c) g.at(r, c) = vals[r][c];
  const std::vector<int> suffix = {4, 3};

  // Incumbent 4 is skipped; the -1.0 tie goes to the lower id.
  const auto top1 = propose_candidates(g, suffix, 1);
  CHECK(top1 == std::vector<Candidate>{{0, 1}, {1, 0}});

  const auto top2 = propose_candidates(g, suffix, 2);
  CHECK(top2 == std::vector<Candidate>{{0, 1}, {0, 2}, {1, 0}, {1, 1}});

  const auto all = propose_candidates(g, suffix, 5);
  CHECK(all.size() == 10);
  for (const auto& c : all) CHECK(c.token != suffix[c.position]);
  CHECK(all[4] == Candidate{0, 5});

  const std::vector<int> excluded = {1};
  CHECK(propose_candidates(g, suffix, 1, excluded) == std::vector<Candidate>{{0, 2}, {1, 0}});
  CHECK_THROWS_AS(propose_candidates(g, suffix, 0), Error);
}

TEST_CASE("exhaustive GCG iteration is the best single substitution") {
  constexpr int kVocab = 9;
  const ModelParams m1 = init_params(tiny_config(kVocab, 4));
  const ModelParams m2 = init_params(tiny_config(kVocab, 5));
  auto prompts = toy_prompts(m1, kVocab, 2, 6);
  auto more = toy_prompts(m2, kVocab, 2, 7);
  prompts.insert(prompts.end(), more.begin(), more.end());

  AttackConfig cfg;
  cfg.suffix_len = 3;
  cfg.top_k = kVocab - 1;
  cfg.eval_batch = 3 * (kVocab - 1);
  AttackState state = init_attack_state(prompts, cfg, kVocab);
  const std::vector<int> excluded = {0, 1};
  Rng rng(1);
  for (int it = 0; it < 4; ++it) {
    const auto oracle = brute_force_step(state.prompt_set, state.suffix, kVocab, {0, 1});
    gcg_iterate(state, cfg, rng, excluded);
    CHECK(state.suffix == oracle.suffix);
    CHECK(state.best_loss == oracle.loss);
  }
  CHECK(state.loss_trace.size() == 4);
}

TEST_CASE("loss traces never increase and runs are reproducible") {
  constexpr int kVocab = 20;
  const World w = generate_world(42, 8, 256);
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const ModelParams m = init_params(tiny_config(kVocab, 10 + seed));
    AttackConfig cfg;
    cfg.suffix_len = 2;
    cfg.iterations = 6;
    cfg.top_k = 3;
    cfg.eval_batch = 2;
    cfg.seed = seed;
    Vocabulary vocab(std::vector<std::string>(w.vocabulary.tokens().begin() + 2, w.vocabulary.tokens().begin() + kVocab));
    REQUIRE(vocab.size() == kVocab);
    const auto prompts = toy_prompts(m, kVocab, 3, seed);
    const auto a = optimize_universal_suffix(prompts, cfg, vocab);
    const auto b = optimize_universal_suffix(prompts, cfg, vocab);
    REQUIRE(a.loss_trace.size() == 6);
    CHECK(a.loss_trace.front() <= summed_suffix_loss(prompts, std::vector<int>{2, 2}));
    for (std::size_t i = 1; i < a.loss_trace.size(); ++i) CHECK(a.loss_trace[i] <= a.loss_trace[i - 1]);
    CHECK(a.suffix == b.suffix);
    CHECK(a.loss_trace == b.loss_trace);
    for (int t : a.suffix) CHECK_FALSE(vocab.is_special(t));
  }
}

TEST_CASE("attack config validation") {
  AttackConfig c;
  CHECK_NOTHROW(c.validate(50));
  c.top_k = 51;
  CHECK_THROWS_AS(c.validate(50), Error);
  c = {};
  c.suffix_len = 0;
  CHECK_THROWS_AS(c.validate(50), Error);
  c = {};
  c.eval_batch = 0;
  CHECK_THROWS_AS(c.validate(50), Error);
  CHECK(scenario_name(Practicality::kAttackOriginal, Generalization::kCrossQuery) == "attack_original/cross_query");
  CHECK(generalization_from_name("cross_target") == Generalization::kCrossTarget);
  CHECK_THROWS_AS(practicality_from_name("both"), Error);
}

TEST_CASE("scenario planning keeps training and evaluation prompts apart") {
  const World w = generate_world(42, 8, 256);
  ModelConfig mc = tiny_config(w.vocabulary.size(), 1);
  mc.context_len = 32;
  const ModelParams original = init_params(mc);
  mc.seed = 2;
  const ModelParams u0 = init_params(mc);
  mc.seed = 3;
  const ModelParams u1 = init_params(mc);
  const std::vector<std::string> names = {w.entities[0].name, w.entities[1].name};
  std::vector<AttackTarget> targets;
  const ModelParams* models[] = {&u0, &u1};
  for (int i = 0; i < 2; ++i) {
    const std::vector<std::string> one = {names[i]};
    targets.push_back({names[i], models[i], filter_kind(render_splits(w, one).forget_probes, ExampleKind::kProbeQA)});
  }
  AttackConfig cfg;

  cfg.generalization = Generalization::kWithinQuery;
  auto plan = plan_scenario(original, targets, 0, cfg, w.vocabulary);
  CHECK(plan.train.size() == targets[0].probes.size());
  for (const auto& p : plan.train) CHECK(p.model == &u0);

  cfg.practicality = Practicality::kAttackOriginal;
  plan = plan_scenario(original, targets, 0, cfg, w.vocabulary);
  for (const auto& p : plan.train) CHECK(p.model == &original);

  cfg.generalization = Generalization::kCrossQuery;
  plan = plan_scenario(original, targets, 0, cfg, w.vocabulary);
  std::set<std::string> eval_ids;
  for (const auto& e : plan.eval_probes) {
    CHECK(is_held_out(e));
    eval_ids.insert(e.id);
  }
  CHECK_FALSE(plan.train.empty());
  for (const auto& p : plan.train) CHECK_FALSE(eval_ids.count(p.id));

  cfg.practicality = Practicality::kAttackUnlearned;
  cfg.generalization = Generalization::kCrossTarget;
  plan = plan_scenario(original, targets, 0, cfg, w.vocabulary);
  CHECK(plan.train.size() == targets[1].probes.size());
  for (const auto& p : plan.train) CHECK(p.model == &u1);
  for (const auto& e : plan.eval_probes) CHECK(e.target == names[0]);

  const std::vector<AttackTarget> lone = {targets[0]};
  CHECK_THROWS_AS(plan_scenario(original, lone, 0, cfg, w.vocabulary), Error);
}

TEST_CASE("scenario matrix rows and result JSON") {
  const World w = generate_world(42, 8, 256);
  ModelConfig mc = tiny_config(w.vocabulary.size(), 1);
  mc.context_len = 32;
  const ModelParams original = init_params(mc);
  std::vector<AttackTarget> targets;
  for (int i = 0; i < 2; ++i) {
    const std::vector<std::string> one = {w.entities[i].name};
    auto qa = filter_kind(render_splits(w, one).forget_probes, ExampleKind::kProbeQA);
    targets.push_back({w.entities[i].name, &original, qa});
  }
  AttackConfig cfg;
  cfg.iterations = 1;
  cfg.top_k = 2;
  cfg.eval_batch = 2;
  cfg.suffix_len = 2;
  const auto rows = run_scenario_matrix(original, targets, 0, cfg, w.vocabulary);
  REQUIRE(rows.size() == 8);
  CHECK(rows[0].scenario == "none");
  CHECK(rows[1].scenario == "static");
  std::set<std::string> names;
  for (const auto& r : rows) names.insert(r.scenario);
  CHECK(names.size() == 8);
  const std::string json = attack_result_json(rows[2], {{"config_hash", "h"}});
  CHECK(json.find("\"suffix_token_ids\"") != std::string::npos);
  CHECK(json.find("\"config_hash\": \"h\"") != std::string::npos);
}
