// Acceptance run: one PASS/FAIL line per criterion A1-A10.
//
// Runs the real pipeline (default config) under $ULAB_ACCEPTANCE_OUT, or
// ./acceptance_out when unset, and reruns it in a second directory for the
// determinism check. The same lines go to <out>_results.txt. Exit status is
// nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "ulab/attack.hpp"
#include "ulab/checkpoint.hpp"
#include "ulab/grad_check.hpp"
#include "ulab/pipeline.hpp"

using namespace ulab;
namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

int failures = 0;
std::ofstream results;  // copy of stdout; ctest hides the output of passing tests

void emit(const std::string& line) {
  std::printf("%s\n", line.c_str());
  std::fflush(stdout);
  results << line << std::endl;
}

void verdict(const char* id, bool pass, const std::string& detail) {
  emit(std::string(id) + (pass ? " PASS  " : " FAIL  ") + detail);
  failures += !pass;
}

void note(const std::string& text) { emit("   " + text); }

std::string f(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

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

std::vector<Sequence> toy_batch(int vocab, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sequence> out;
  for (int i = 0; i < n; ++i) {
    Sequence s;
    s.id = "s" + std::to_string(i);
    s.prompt = {Vocabulary::kBos};
    for (int k = 0; k < 3; ++k) s.prompt.push_back(2 + static_cast<int>(rng.below(vocab - 2)));
    for (int k = 0; k < 2; ++k) s.completion.push_back(2 + static_cast<int>(rng.below(vocab - 2)));
    s.completion.push_back(Vocabulary::kEos);
    out.push_back(s);
  }
  return out;
}

std::vector<AttackPrompt> toy_prompts(const ModelParams& model, int vocab, int n, std::uint64_t seed) {
  std::vector<AttackPrompt> out;
  for (const auto& s : toy_batch(vocab, n, seed)) {
    out.push_back({&model, s.id, s.prompt, std::vector<int>(s.completion.begin(), s.completion.end() - 1)});
  }
  return out;
}

// ---- A1 -------------------------------------------------------------------

void a1() {
  const Timer t;
  double worst = 0;
  std::string worst_op;
  const auto ops = grad_check_ops();
  for (const auto& op : ops) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const double e = grad_check(op, grad_check_inputs(op, seed), 1e-5, seed + 100);
      if (!(e <= worst)) {
        worst = e;
        worst_op = op;
      }
    }
  }
  double fd_worst = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ModelParams p = init_params(tiny_config(12, seed + 1));
    const std::vector<int> prompt = {0, 3, 4}, suffix = {5, 6, 2}, target = {8, 9};
    const Tensor g = suffix_token_gradients(p, prompt, suffix, target);
    Rng rng(seed + 11);
    for (int trial = 0; trial < 4; ++trial) {
      Tensor plus({3, 12}), minus({3, 12});
      double analytic = 0;
      const double eps = 1e-3;
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 12; ++c) {
          const float d = static_cast<float>(rng.normal());
          const float base = c == suffix[r] ? 1.0f : 0.0f;
          plus.at(r, c) = base + static_cast<float>(eps) * d;
          minus.at(r, c) = base - static_cast<float>(eps) * d;
          analytic += g.at(r, c) * d;
        }
      }
      const double fd =
          (suffix_loss_soft(p, prompt, plus, target) - suffix_loss_soft(p, prompt, minus, target)) / (2 * eps);
      fd_worst = std::max(fd_worst, std::abs(fd - analytic) / std::max(1.0, std::abs(analytic)));
    }
  }
  const double secs = t.seconds();
  verdict("A1", worst <= 1e-4 && fd_worst <= 1e-2 && secs < 60,
          f("gradient suite: %zu primitives x 20 seeds, worst grad_check %.2e (%s); suffix directional FD %.2e; %.1f s",
            ops.size(), worst, worst_op.c_str(), fd_worst, secs));
}

// ---- A4 -------------------------------------------------------------------

void a4() {
  const auto batch = toy_batch(200, 4, 1);
  ModelParams p = init_params(tiny_config(200, 3));
  const RefCache self = RefCache::build(p, batch);
  double npo_err = 0;
  for (double beta : {0.1, 0.5, 1.0}) {
    const double expect = -(2.0 / beta) * std::log(2.0);
    npo_err = std::max(npo_err, std::abs(npo_loss(p, batch, self, beta) - expect) / std::abs(expect));
  }
  const double kl = std::abs(kl_retain_loss(p, batch, self));
  ModelParams uniform = p;
  uniform.at("head").fill(0.0f);
  const double nll_err = std::abs(mean_nll(uniform, batch) - std::log(200.0)) / std::log(200.0);
  TrainerConfig t;
  t.lr_max = 3e-4;
  t.lr_min = 1e-5;
  t.total_steps = 80;
  const bool cosine = cosine_lr(0, t) == t.lr_max && cosine_lr(t.total_steps, t) == t.lr_min;
  verdict("A4", npo_err <= 1e-5 && nll_err <= 1e-5 && kl <= 1e-7 && cosine,
          f("anchors: NPO at ratio 1 rel err %.2e, uniform NLL rel err %.2e, KL(p||p) %.2e, cosine endpoints %s",
            npo_err, nll_err, kl, cosine ? "exact" : "inexact"));
}

// ---- A5 -------------------------------------------------------------------

CandidateResult brute_force_step(std::span<const AttackPrompt> prompts, const std::vector<int>& suffix, int vocab) {
  CandidateResult best{suffix, summed_suffix_loss(prompts, suffix)};
  for (std::size_t pos = 0; pos < suffix.size(); ++pos) {
    for (int t = 2; t < vocab; ++t) {
      if (t == suffix[pos]) continue;
      auto trial = suffix;
      trial[pos] = t;
      const double l = summed_suffix_loss(prompts, trial);
      if (l < best.loss || (l == best.loss && trial < best.suffix)) best = {trial, l};
    }
  }
  return best;
}

void a5() {
  constexpr int kVocab = 10;
  const std::vector<int> excluded = {Vocabulary::kBos, Vocabulary::kEos};
  int matched = 0, iterations = 0, monotone = 0, runs = 0;
  for (std::uint64_t inst = 0; inst < 8; ++inst) {
    const ModelParams m1 = init_params(tiny_config(kVocab, 40 + inst));
    const ModelParams m2 = init_params(tiny_config(kVocab, 80 + inst));
    auto prompts = toy_prompts(m1, kVocab, 2, inst);
    const auto more = toy_prompts(m2, kVocab, 2, 100 + inst);
    prompts.insert(prompts.end(), more.begin(), more.end());
    AttackConfig cfg;
    cfg.suffix_len = 3;
    cfg.top_k = kVocab - 1;
    cfg.eval_batch = cfg.suffix_len * (kVocab - 1);
    AttackState state = init_attack_state(prompts, cfg, kVocab);
    Rng rng(inst);
    for (int it = 0; it < 3; ++it) {
      const auto oracle = brute_force_step(state.prompt_set, state.suffix, kVocab);
      gcg_iterate(state, cfg, rng, excluded);
      matched += state.suffix == oracle.suffix && state.best_loss == oracle.loss;
      ++iterations;
    }
  }
  const World w = generate_world(42, 8, 256);
  const std::vector<std::string> words(w.vocabulary.tokens().begin() + 2, w.vocabulary.tokens().begin() + 30);
  const Vocabulary vocab(words);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ModelParams m = init_params(tiny_config(vocab.size(), 200 + seed));
    AttackConfig cfg;
    cfg.suffix_len = 3;
    cfg.iterations = 6;
    cfg.top_k = 4;
    cfg.eval_batch = 3;
    cfg.seed = seed;
    const auto state = optimize_universal_suffix(toy_prompts(m, vocab.size(), 3, seed), cfg, vocab);
    bool ok = state.loss_trace.size() == 6;
    for (std::size_t i = 1; i < state.loss_trace.size(); ++i) ok = ok && state.loss_trace[i] <= state.loss_trace[i - 1];
    monotone += ok;
    ++runs;
  }
  verdict("A5", matched == iterations && monotone == runs,
          f("GCG: %d/%d exhaustive iterations equal the brute-force best substitution; %d/%d traces non-increasing",
            matched, iterations, monotone, runs));
}

// ---- A8 -------------------------------------------------------------------

void a8() {
  const ModelParams p = init_params(tiny_config(64, 9));
  const auto forget = toy_batch(64, 6, 3), retain = toy_batch(64, 6, 4);
  std::vector<Sequence> all = forget;
  all.insert(all.end(), retain.begin(), retain.end());
  const RefCache ref = RefCache::build(p, all);
  PerturbationSpec inert;
  inert.inner_steps = 0;
  inert.init_sigma = 0.0;
  TrainerConfig t;
  t.lr_max = 1e-3;
  t.total_steps = 12;
  t.batch_size = 3;
  t.seed = 5;
  bool values = true, trajectories = true;
  for (auto [plain, adv] : {std::pair{ForgetKind::kGA, ForgetKind::kAdvGA}, std::pair{ForgetKind::kNPO, ForgetKind::kAdvNPO}}) {
    const LossConfig lp{plain, RetainKind::kGDR, 1.0, 0.1}, la{adv, RetainKind::kGDR, 1.0, 0.1};
    const float v_plain = forget_loss_and_gradients(p, forget, lp, ref, nullptr).value;
    values = values && adv_forget_loss(p, forget, inert, la, ref, 1) == v_plain;
    const auto a = lau_train(p, forget, retain, lp, inert, t, ref);
    const auto b = lau_train(p, forget, retain, la, inert, t, ref);
    bool same = a.params == b.params && a.history.size() == b.history.size();
    for (std::size_t i = 0; same && i < a.history.size(); ++i) {
      same = a.history[i].forget_loss == b.history[i].forget_loss && a.history[i].total_loss == b.history[i].total_loss;
    }
    trajectories = trajectories && same;
  }
  verdict("A8", values && trajectories,
          f("reductions: K=0, sigma=0 adversarial losses %s, 12-step trajectories %s (GA/AdvGA, NPO/AdvNPO)",
            values ? "bitwise equal" : "differ", trajectories ? "bitwise equal" : "differ"));
}

// ---- pipeline-backed criteria ----------------------------------------------

struct Run {
  ExperimentConfig config;
  RunPaths paths;
  World world;
  std::vector<std::string> targets;
};

Run open_run(const ExperimentConfig& c) {
  Run r{c, run_paths(c), {}, {}};
  const Json j = Json::parse(slurp(r.paths.corpus / "world.json"));
  r.world = world_from_json(j.at("world").dump());
  for (const auto& e : fs::directory_iterator(r.paths.corpus / "targets")) r.targets.push_back(e.path().filename().string());
  std::sort(r.targets.begin(), r.targets.end());
  // Config order, not directory order.
  std::vector<std::string> ordered = c.targets;
  if (ordered.empty()) {
    for (std::size_t i = 0; i < 3 && i < r.world.entities.size(); ++i) ordered.push_back(r.world.entities[i].name);
  }
  r.targets = ordered;
  return r;
}

std::vector<Example> target_file(const Run& r, const std::string& target, const char* name) {
  return read_jsonl(r.paths.corpus / "targets" / target / (std::string(name) + ".jsonl"));
}

void a2(const Run& r, double secs) {
  const ModelParams base = load_checkpoint(r.paths.ckpt / "base.ulnf");
  std::vector<Example> probes;
  for (const auto& e : read_jsonl(r.paths.corpus / "train.jsonl")) {
    if (e.kind == ExampleKind::kProbeFB || e.kind == ExampleKind::kProbeQA) probes.push_back(e);
  }
  const auto ev = evaluate_probes(base, r.world.vocabulary, probes);
  verdict("A2", ev.mean >= 0.95 && secs < 15 * 60,
          f("memorization: FB+QA ROUGE-L recall %.4f over %zu probes (%d layers, d_model %d, %zu entities); pretrain %.1f s",
            ev.mean, probes.size(), base.config.n_layers, base.config.d_model, r.world.entities.size(), secs));
}

struct Curve {
  std::vector<double> forget, neighbor;  // checkpoint 0 is the base model
};

void a3(const Run& r) {
  const ModelParams base = load_checkpoint(r.paths.ckpt / "base.ulnf");
  const Vocabulary& vocab = r.world.vocabulary;
  TrainerConfig trainer = r.config.unlearn.trainer;
  trainer.total_steps = 150;
  const int every = 10;
  std::map<ForgetKind, std::vector<Curve>> curves;
  std::map<ForgetKind, double> secs;
  for (ForgetKind method : {ForgetKind::kGA, ForgetKind::kNPO}) {
    const Timer t;
    for (const auto& target : r.targets) {
      const auto fset = training_sequences(target_file(r, target, "forget_set"), vocab);
      const auto rset = training_sequences(target_file(r, target, "retain_set"), vocab);
      const auto fprobes = target_file(r, target, "forget_probes");
      const auto nprobes = target_file(r, target, "neighbor_probes");
      std::vector<Sequence> all = fset;
      all.insert(all.end(), rset.begin(), rset.end());
      const RefCache ref = RefCache::build(base, all);
      Curve c;
      const auto record = [&](const ModelParams& m) {
        c.forget.push_back(evaluate_probes(m, vocab, fprobes).mean);
        c.neighbor.push_back(evaluate_probes(m, vocab, nprobes).mean);
      };
      record(base);
      const LossConfig loss{method, RetainKind::kGDR, r.config.unlearn.lambda, r.config.unlearn.beta};
      lau_train(base, fset, rset, loss, r.config.unlearn.perturbation, trainer, ref,
                [&](const StepReport& s, const ModelParams& m) {
                  if ((s.step + 1) % every == 0) record(m);
                });
      curves[method].push_back(std::move(c));
    }
    secs[method] = t.seconds();
  }
  const auto& ga = curves[ForgetKind::kGA];
  const auto& npo = curves[ForgetKind::kNPO];
  const double n = static_cast<double>(r.targets.size());
  bool ok = true;
  std::map<ForgetKind, std::pair<double, double>> summary;  // mean drop, mean final neighbor / before
  for (ForgetKind m : {ForgetKind::kGA, ForgetKind::kNPO}) {
    double drop = 0, before = 0, after = 0;
    for (const auto& c : curves[m]) {
      drop += c.forget.front() - c.forget.back();
      before += c.neighbor.front();
      after += c.neighbor.back();
    }
    summary[m] = {drop / n, after / before};
    ok = ok && drop / n >= 0.5 && after / before >= 0.5 && secs[m] < 600;
  }
  // Matched forget recall: the deepest level both methods reach on a target;
  // neighbor recall is read at the first checkpoint at or below it.
  double ga_matched = 0, npo_matched = 0;
  std::string per_target;
  for (std::size_t i = 0; i < ga.size(); ++i) {
    const double level = std::max(*std::min_element(ga[i].forget.begin(), ga[i].forget.end()),
                                  *std::min_element(npo[i].forget.begin(), npo[i].forget.end()));
    const auto at_level = [&](const Curve& c) {
      for (std::size_t k = 0; k < c.forget.size(); ++k) {
        if (c.forget[k] <= level) return c.neighbor[k];
      }
      return c.neighbor.back();
    };
    ga_matched += at_level(ga[i]);
    npo_matched += at_level(npo[i]);
    per_target += f(" %s@%.3f GA %.3f NPO %.3f;", r.targets[i].c_str(), level, at_level(ga[i]), at_level(npo[i]));
  }
  ga_matched /= n;
  npo_matched /= n;
  ok = ok && npo_matched > ga_matched;
  verdict("A3", ok,
          f("unlearning direction (GDR, %d steps, %zu targets): forget drop GA %.3f NPO %.3f; neighbor kept GA %.0f%% NPO "
            "%.0f%%; neighbor at matched forget recall GA %.3f < NPO %.3f; %.0f s GA, %.0f s NPO",
            trainer.total_steps, r.targets.size(), summary[ForgetKind::kGA].first, summary[ForgetKind::kNPO].first,
            100 * summary[ForgetKind::kGA].second, 100 * summary[ForgetKind::kNPO].second, ga_matched, npo_matched,
            secs[ForgetKind::kGA], secs[ForgetKind::kNPO]));
  note("matched levels:" + per_target);
}

double attack_mean(const Run& r, const std::string& label, const std::string& scenario, const std::string& target) {
  const Json j = Json::parse(slurp(r.paths.attack / label / scenario / (target + ".json")));
  return j.at("eval").at("mean").get<double>();
}

void a6_a7(const Run& r, double npo_secs) {
  const std::string within = scenario_name(Practicality::kAttackUnlearned, Generalization::kWithinQuery);
  std::map<std::string, double> gain_sum;
  for (const std::string label : {"npo-gdr", "advnpo-gdr"}) {
    for (const auto& t : r.targets) {
      const double none = attack_mean(r, label, "none", t);
      const double attacked = attack_mean(r, label, within, t);
      gain_sum[label] += attacked - none;
      note(f("%s %s: QA recall none %.3f static %.3f attack %.3f gain %+.3f", label.c_str(), t.c_str(), none,
             attack_mean(r, label, "static", t), attacked, attacked - none));
    }
  }
  const std::string& t0 = r.targets.front();
  const double none = attack_mean(r, "npo-gdr", "none", t0);
  const double fixed = attack_mean(r, "npo-gdr", "static", t0);
  const double attacked = attack_mean(r, "npo-gdr", within, t0);
  const double n = static_cast<double>(r.targets.size());
  verdict("A6", attacked - none >= 0.10 && attacked >= fixed && npo_secs < 20 * 60,
          f("attack efficacy (NPO model of %s): QA recall none %.3f, static %.3f, within-query suffix %.3f (gain %+.3f); "
            "mean gain over %zu targets %+.3f; unlearn+attack %.0f s",
            t0.c_str(), none, fixed, attacked, attacked - none, r.targets.size(), gain_sum["npo-gdr"] / n, npo_secs));
  const double g_npo = gain_sum["npo-gdr"] / n, g_adv = gain_sum["advnpo-gdr"] / n;
  const bool ok = g_npo > 0 && g_adv <= 0.5 * g_npo;
  verdict("A7", ok,
          f("LAU robustness (%zu targets, same attack budget): mean gain NPO %+.3f, AdvNPO %+.3f, ratio %s", r.targets.size(),
            g_npo, g_adv, g_npo > 0 ? f("%.2f (need <= 0.50)", g_adv / g_npo).c_str() : "undefined (NPO gain <= 0)"));
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

void a9(const ExperimentConfig& c) {
  const Timer t;
  bool complete = true, deterministic = true;
  std::map<int, double> layer_reduction;
  for (SweepAxis axis : {SweepAxis::kLayer, SweepAxis::kInnerSteps}) {
    const auto path = cmd_sweep(c, axis, ForgetKind::kAdvNPO, RetainKind::kGDR).at(0);
    const std::string first = slurp(path);
    deterministic = deterministic && slurp(cmd_sweep(c, axis, ForgetKind::kAdvNPO, RetainKind::kGDR).at(0)) == first;
    const auto rows = csv_rows(first);
    const auto values = sweep_values(c, axis);
    complete = complete && rows.size() == values.size() + 1 && rows[0].size() == 8;
    for (std::size_t i = 1; complete && i < rows.size(); ++i) {
      complete = rows[i].size() == 8 && std::stoi(rows[i][1]) == values[i - 1] && rows[i][7] == config_hash(c);
      for (int k = 2; complete && k < 7; ++k) complete = std::isfinite(std::stod(rows[i][k]));
      if (complete && axis == SweepAxis::kLayer) layer_reduction[values[i - 1]] = std::stod(rows[i][4]);
      if (complete) note(f("%s=%s forget %s -> %s, neighbor %s", rows[i][0].c_str(), rows[i][1].c_str(), rows[i][2].c_str(), rows[i][3].c_str(), rows[i][6].c_str()));
    }
  }
  std::string direction = "n/a";
  if (layer_reduction.count(0) && layer_reduction.count(1) && layer_reduction.count(2)) {
    const double shallow = std::max(layer_reduction[1], layer_reduction[2]);
    direction = f("layer 0 reduction %.3f %s best shallow layer %.3f (report only)", layer_reduction[0],
                  layer_reduction[0] <= shallow ? "<=" : ">", shallow);
  }
  verdict("A9", complete && deterministic,
          f("sweeps: layer and inner-step CSVs %s, reruns %s; %s; %.0f s", complete ? "complete" : "incomplete",
            deterministic ? "byte-identical" : "differ", direction.c_str(), t.seconds()));
}

void a10(const ExperimentConfig& first) {
  const Timer t;
  ExperimentConfig second = first;
  second.out_dir = first.out_dir + "_rerun";
  fs::remove_all(second.out_dir);
  cmd_gen_corpus(second);
  cmd_pretrain(second);
  cmd_unlearn(second, ForgetKind::kNPO, RetainKind::kGDR);
  cmd_attack(second, ForgetKind::kNPO, RetainKind::kGDR, Practicality::kAttackUnlearned, Generalization::kWithinQuery);
  cmd_eval(second, ForgetKind::kNPO, RetainKind::kGDR);
  const fs::path a = run_paths(first).root, b = run_paths(second).root;
  int compared = 0, differ = 0;
  std::set<std::string> kinds;
  for (const auto& e : fs::recursive_directory_iterator(b)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), b);
    ++compared;
    if (!fs::exists(a / rel) || slurp(a / rel) != slurp(e.path())) {
      ++differ;
      note("differs: " + rel.generic_string());
    }
    kinds.insert(rel.extension().string());
  }
  std::string ext;
  for (const auto& k : kinds) ext += (ext.empty() ? "" : " ") + k;
  verdict("A10", differ == 0 && compared > 0,
          f("determinism: %d files from a full rerun (gen-corpus, pretrain, unlearn, attack, eval; %s) compared, %d "
            "differ; %.0f s",
            compared, ext.c_str(), differ, t.seconds()));
  fs::remove_all(second.out_dir);
}

}  // namespace

int main() {
  const char* env = std::getenv("ULAB_ACCEPTANCE_OUT");
  ExperimentConfig config = default_config();
  config.out_dir = env ? env : "acceptance_out";
  fs::remove_all(config.out_dir);
  results.open(config.out_dir + "_results.txt");
  emit("config " + config_hash(config) + ", run " + run_paths(config).root.string());

  const auto guarded = [](const char* id, const std::function<void()>& body) {
    try {
      body();
    } catch (const std::exception& e) {
      verdict(id, false, std::string("threw: ") + e.what());
    }
  };
  guarded("A1", a1);
  guarded("A4", a4);
  guarded("A5", a5);
  guarded("A8", a8);

  double pretrain_secs = 0;
  bool ready = false;
  guarded("A2", [&] {
    cmd_gen_corpus(config);
    const Timer t;
    cmd_pretrain(config);
    pretrain_secs = t.seconds();
    ready = true;
    a2(open_run(config), pretrain_secs);
  });
  if (!ready) {
    for (const char* id : {"A3", "A6", "A7", "A9", "A10"}) verdict(id, false, "no pretrained base model");
    emit("NOT ACCEPTED: " + std::to_string(failures) + " criterion(s) failed");
    return 1;
  }
  const Run run = open_run(config);
  guarded("A3", [&] { a3(run); });
  guarded("A6", [&] {
    const Timer t;
    cmd_unlearn(config, ForgetKind::kNPO, RetainKind::kGDR);
    cmd_attack(config, ForgetKind::kNPO, RetainKind::kGDR, Practicality::kAttackUnlearned, Generalization::kWithinQuery);
    const double npo_secs = t.seconds();
    cmd_unlearn(config, ForgetKind::kAdvNPO, RetainKind::kGDR);
    cmd_attack(config, ForgetKind::kAdvNPO, RetainKind::kGDR, Practicality::kAttackUnlearned,
               Generalization::kWithinQuery);
    cmd_eval(config, ForgetKind::kNPO, RetainKind::kGDR);
    cmd_eval(config, ForgetKind::kAdvNPO, RetainKind::kGDR);
    a6_a7(run, npo_secs);
  });
  guarded("A9", [&] { a9(config); });
  guarded("A10", [&] { a10(config); });
  emit(std::string(failures == 0 ? "ACCEPTED" : "NOT ACCEPTED") + ": " + std::to_string(failures) + " criterion(s) failed");
  return failures == 0 ? 0 : 1;
}
