#include "ulab/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "ulab/checkpoint.hpp"
#include "ulab/error.hpp"

namespace ulab {

namespace fs = std::filesystem;
using Json = nlohmann::json;  // std::map objects: keys come out sorted

namespace {

// ---- strict JSON reading -------------------------------------------------

void check_keys(const Json& j, std::initializer_list<const char*> keys, const std::string& where) {
  require(j.is_object(), "invalid_config", where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    require(known, "invalid_config", "unknown key '" + k + "' in " + where);
  }
}

void read(const Json& j, const char* key, int& out, const std::string& where) {
  if (!j.contains(key)) return;
  require(j[key].is_number_integer(), "invalid_config", where + "." + key + " must be an integer");
  out = j[key].get<int>();
}

void read(const Json& j, const char* key, std::uint64_t& out, const std::string& where) {
  if (!j.contains(key)) return;
  require(j[key].is_number_unsigned(), "invalid_config", where + "." + key + " must be a non-negative integer");
  out = j[key].get<std::uint64_t>();
}

void read(const Json& j, const char* key, double& out, const std::string& where) {
  if (!j.contains(key)) return;
  require(j[key].is_number(), "invalid_config", where + "." + key + " must be a number");
  out = j[key].get<double>();
}

void read(const Json& j, const char* key, std::string& out, const std::string& where) {
  if (!j.contains(key)) return;
  require(j[key].is_string(), "invalid_config", where + "." + key + " must be a string");
  out = j[key].get<std::string>();
}

Json trainer_json(const TrainerConfig& t) {
  return {{"beta1", t.beta1},       {"beta2", t.beta2},         {"eps", t.eps},
          {"weight_decay", t.weight_decay}, {"lr_max", t.lr_max}, {"lr_min", t.lr_min},
          {"total_steps", t.total_steps},   {"batch_size", t.batch_size}, {"seed", t.seed}};
}

void read_trainer(const Json& j, TrainerConfig& t, const std::string& where) {
  check_keys(j, {"beta1", "beta2", "eps", "weight_decay", "lr_max", "lr_min", "total_steps", "batch_size", "seed"},
             where);
  read(j, "beta1", t.beta1, where);
  read(j, "beta2", t.beta2, where);
  read(j, "eps", t.eps, where);
  read(j, "weight_decay", t.weight_decay, where);
  read(j, "lr_max", t.lr_max, where);
  read(j, "lr_min", t.lr_min, where);
  read(j, "total_steps", t.total_steps, where);
  read(j, "batch_size", t.batch_size, where);
  read(j, "seed", t.seed, where);
}

Json config_json(const ExperimentConfig& c, bool with_out_dir) {
  Json j;
  j["seed"] = c.seed;
  j["world"] = {{"n_entities", c.world.n_entities}, {"vocab_budget", c.world.vocab_budget}};
  j["model"] = {{"d_model", c.model.d_model},
                {"n_layers", c.model.n_layers},
                {"n_heads", c.model.n_heads},
                {"context_len", c.model.context_len},
                {"seed", c.model.seed}};
  j["pretrain"] = {{"trainer", trainer_json(c.pretrain.trainer)},
                   {"noise_variants", c.pretrain.noise_variants},
                   {"noise_seed", c.pretrain.noise_seed}};
  const PerturbationSpec& p = c.unlearn.perturbation;
  j["unlearn"] = {{"trainer", trainer_json(c.unlearn.trainer)},
                  {"lambda", c.unlearn.lambda},
                  {"beta", c.unlearn.beta},
                  {"perturbation",
                   {{"layer", p.layer},
                    {"kappa", p.kappa},
                    {"inner_steps", p.inner_steps},
                    {"inner_lr", p.inner_lr},
                    {"init_sigma", p.init_sigma ? Json(*p.init_sigma) : Json(nullptr)}}}};
  j["attack"] = {{"suffix_len", c.attack.suffix_len},   {"iterations", c.attack.iterations},
                 {"top_k", c.attack.top_k},             {"eval_batch", c.attack.eval_batch},
                 {"seed", c.attack.seed},               {"filler_token", c.attack.filler_token}};
  j["targets"] = c.targets;
  if (with_out_dir) j["out_dir"] = c.out_dir;
  return j;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---- files and provenance -----------------------------------------------

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "io_error", "cannot write " + path.string());
  f << text;
  require(static_cast<bool>(f), "io_error", "write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  require(fs::exists(path), "missing_prerequisite", path.string() + " does not exist; run the earlier stage first");
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "io_error", "cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Json provenance(const ExperimentConfig& c) {
  return {{"config_hash", config_hash(c)}, {"code_version", kCodeVersion}, {"seed", c.seed}};
}

fs::path sidecar(const fs::path& p) { return fs::path(p.string() + ".meta.json"); }

void write_sidecar(const fs::path& p, const ExperimentConfig& c) {
  Json j = provenance(c);
  j["artifact"] = p.filename().string();
  write_text(sidecar(p), j.dump(2) + "\n");
}

void check_hash(const Json& j, const ExperimentConfig& c, const fs::path& what) {
  require(j.is_object() && j.contains("config_hash") && j["config_hash"].is_string(), "corrupt_artifact",
          what.string() + " records no config hash");
  const std::string got = j["config_hash"].get<std::string>();
  require(got == config_hash(c), "config_hash_mismatch",
          what.string() + " was written under config " + got + ", current config is " + config_hash(c));
}

Json parse_file(const fs::path& p) {
  const std::string text = read_text(p);
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    fail("corrupt_artifact", p.string() + " does not parse: " + e.what());
  }
}

void check_sidecar(const fs::path& p, const ExperimentConfig& c) {
  require(fs::exists(p), "missing_prerequisite", p.string() + " does not exist; run the earlier stage first");
  check_hash(parse_file(sidecar(p)), c, p);
}

std::string add_hash_column(const std::string& csv, const std::string& hash) {
  std::istringstream in(csv);
  std::string out, line;
  bool header = true;
  while (std::getline(in, line)) {
    out += line + (header ? ",config_hash" : "," + hash) + "\n";
    header = false;
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// ---- stage inputs ---------------------------------------------------------

struct Stage {
  ExperimentConfig config;
  RunPaths paths;
  World world;
  std::vector<std::string> targets;
};

std::vector<std::string> resolve_targets(const ExperimentConfig& c, const World& w) {
  std::vector<std::string> out = c.targets;
  if (out.empty()) {
    for (std::size_t i = 0; i < std::min<std::size_t>(3, w.entities.size()); ++i) out.push_back(w.entities[i].name);
  }
  std::set<std::string> seen;
  for (const auto& t : out) {
    require(w.has_entity(t), "unknown_target", "forget target '" + t + "' is not an entity of the world");
    require(seen.insert(t).second, "invalid_config", "forget target '" + t + "' listed twice");
  }
  return out;
}

Stage open_stage(const ExperimentConfig& c) {
  c.validate();
  Stage s{c, run_paths(c), {}, {}};
  const fs::path wp = s.paths.corpus / "world.json";
  const Json j = parse_file(wp);
  check_hash(j, c, wp);
  require(j.contains("world"), "corrupt_artifact", wp.string() + " has no world");
  s.world = world_from_json(j["world"].dump());
  s.targets = resolve_targets(c, s.world);
  return s;
}

ModelConfig model_config(const Stage& s) {
  ModelConfig m = s.config.model;
  m.vocab_size = s.world.vocabulary.size();
  return m;
}

fs::path target_dir(const Stage& s, const std::string& target) { return s.paths.corpus / "targets" / target; }

std::vector<Example> load_examples(const Stage& s, const fs::path& p) {
  check_sidecar(p, s.config);
  return read_jsonl(p);
}

ModelParams load_model(const Stage& s, const fs::path& p) {
  check_sidecar(p, s.config);
  ModelParams m = load_checkpoint(p);
  require(m.config.vocab_size == s.world.vocabulary.size(), "shape_mismatch",
          p.string() + " does not match the world vocabulary");
  return m;
}

fs::path base_path(const Stage& s) { return s.paths.ckpt / "base.ulnf"; }

fs::path unlearned_path(const Stage& s, const std::string& label, const std::string& target) {
  return s.paths.ckpt / label / (target + ".ulnf");
}

struct TargetData {
  std::vector<Example> forget_set, retain_set, forget_probes, neighbor_probes;
};

TargetData load_target(const Stage& s, const std::string& target) {
  const fs::path d = target_dir(s, target);
  return {load_examples(s, d / "forget_set.jsonl"), load_examples(s, d / "retain_set.jsonl"),
          load_examples(s, d / "forget_probes.jsonl"), load_examples(s, d / "neighbor_probes.jsonl")};
}

TrainResult unlearn_target(const Stage& s, const ModelParams& base, const TargetData& data, ForgetKind forget,
                           RetainKind retain, const PerturbationSpec& spec) {
  const auto fseq = training_sequences(data.forget_set, s.world.vocabulary);
  const auto rseq = training_sequences(data.retain_set, s.world.vocabulary);
  std::vector<Sequence> all = fseq;
  all.insert(all.end(), rseq.begin(), rseq.end());
  const RefCache ref = RefCache::build(base, all);
  const LossConfig loss{forget, retain, s.config.unlearn.lambda, s.config.unlearn.beta};
  return lau_train(base, fseq, rseq, loss, spec, s.config.unlearn.trainer, ref);
}

std::vector<std::string> fact_texts(std::span<const Example> examples) {
  std::vector<std::string> out;
  for (const auto& e : examples) {
    if (e.kind == ExampleKind::kFact) out.push_back(e.prompt + " " + e.completion);
  }
  return out;
}

// Pools per-target evaluations into one (kind means over all outcomes).
ProbeEvaluation pool(const std::vector<ProbeEvaluation>& parts) {
  ProbeEvaluation out;
  std::map<ExampleKind, std::pair<double, int>> sums;
  double total = 0;
  for (const auto& p : parts) {
    for (const auto& o : p.outcomes) {
      auto& [sum, n] = sums[o.kind];
      sum += o.value;
      ++n;
      total += o.value;
      out.outcomes.push_back(o);
    }
  }
  require(!out.outcomes.empty(), "empty_input", "nothing to pool");
  for (const auto& [k, sn] : sums) out.mean_by_kind[k] = sn.first / sn.second;
  out.mean = total / static_cast<double>(out.outcomes.size());
  return out;
}

std::map<std::string, std::string> report_metadata(const Stage& s, const std::string& subject) {
  std::string targets;
  for (const auto& t : s.targets) targets += (targets.empty() ? "" : ",") + t;
  return {{"config_hash", config_hash(s.config)},
          {"code_version", kCodeVersion},
          {"seed", std::to_string(s.config.seed)},
          {"subject", subject},
          {"targets", targets}};
}

std::vector<fs::path> write_report_files(const fs::path& dir, const MetricsReport& report,
                                        const ExperimentConfig& config) {
  write_report(dir, report);
  write_sidecar(dir / "report.csv", config);
  return {dir / "report.json", dir / "report.csv", sidecar(dir / "report.csv")};
}

}  // namespace

// ---- config -----------------------------------------------------------------

void ExperimentConfig::validate() const {
  require(world.n_entities >= 1, "invalid_config", "world.n_entities must be >= 1");
  ModelConfig m = model;
  m.vocab_size = std::max(world.vocab_budget, 2);
  m.validate();
  pretrain.trainer.validate();
  require(pretrain.noise_variants >= 0, "invalid_config", "pretrain.noise_variants must be >= 0");
  unlearn.trainer.validate();
  LossConfig{ForgetKind::kNPO, RetainKind::kGDR, unlearn.lambda, unlearn.beta}.validate();
  unlearn.perturbation.validate(m);
  attack.validate(m.vocab_size);
  require(!out_dir.empty(), "invalid_config", "out_dir must not be empty");
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.model.seed = 1;
  TrainerConfig& p = c.pretrain.trainer;
  p.lr_max = 3e-3;
  p.lr_min = 1.5e-4;
  p.total_steps = 4000;
  p.batch_size = 32;
  p.seed = 2;
  TrainerConfig& u = c.unlearn.trainer;
  u.lr_max = 3e-4;
  u.lr_min = 0.0;
  u.total_steps = 80;
  u.batch_size = 8;
  u.seed = 7;
  c.unlearn.perturbation.layer = 2;
  c.unlearn.perturbation.kappa = 4.0;
  c.unlearn.perturbation.inner_steps = 6;
  c.unlearn.perturbation.inner_lr = 1.0;
  c.attack.iterations = 30;
  c.attack.top_k = 32;
  c.attack.eval_batch = 64;
  c.attack.seed = 1;
  return c;
}

ExperimentConfig config_from_json(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    fail("invalid_config", std::string("config does not parse: ") + e.what());
  }
  ExperimentConfig c = default_config();
  check_keys(j, {"seed", "world", "model", "pretrain", "unlearn", "attack", "targets", "out_dir"}, "config");
  read(j, "seed", c.seed, "config");
  read(j, "out_dir", c.out_dir, "config");
  if (j.contains("world")) {
    const Json& w = j["world"];
    check_keys(w, {"n_entities", "vocab_budget"}, "world");
    read(w, "n_entities", c.world.n_entities, "world");
    read(w, "vocab_budget", c.world.vocab_budget, "world");
  }
  if (j.contains("model")) {
    const Json& m = j["model"];
    check_keys(m, {"d_model", "n_layers", "n_heads", "context_len", "seed"}, "model");
    read(m, "d_model", c.model.d_model, "model");
    read(m, "n_layers", c.model.n_layers, "model");
    read(m, "n_heads", c.model.n_heads, "model");
    read(m, "context_len", c.model.context_len, "model");
    read(m, "seed", c.model.seed, "model");
  }
  if (j.contains("pretrain")) {
    const Json& p = j["pretrain"];
    check_keys(p, {"trainer", "noise_variants", "noise_seed"}, "pretrain");
    if (p.contains("trainer")) read_trainer(p["trainer"], c.pretrain.trainer, "pretrain.trainer");
    read(p, "noise_variants", c.pretrain.noise_variants, "pretrain");
    read(p, "noise_seed", c.pretrain.noise_seed, "pretrain");
  }
  if (j.contains("unlearn")) {
    const Json& u = j["unlearn"];
    check_keys(u, {"trainer", "lambda", "beta", "perturbation"}, "unlearn");
    if (u.contains("trainer")) read_trainer(u["trainer"], c.unlearn.trainer, "unlearn.trainer");
    read(u, "lambda", c.unlearn.lambda, "unlearn");
    read(u, "beta", c.unlearn.beta, "unlearn");
    if (u.contains("perturbation")) {
      const Json& p = u["perturbation"];
      const std::string where = "unlearn.perturbation";
      check_keys(p, {"layer", "kappa", "inner_steps", "inner_lr", "init_sigma"}, where);
      PerturbationSpec& s = c.unlearn.perturbation;
      read(p, "layer", s.layer, where);
      read(p, "kappa", s.kappa, where);
      read(p, "inner_steps", s.inner_steps, where);
      read(p, "inner_lr", s.inner_lr, where);
      if (p.contains("init_sigma") && !p["init_sigma"].is_null()) {
        double sigma = 0;
        read(p, "init_sigma", sigma, where);
        s.init_sigma = sigma;
      }
    }
  }
  if (j.contains("attack")) {
    const Json& a = j["attack"];
    check_keys(a, {"suffix_len", "iterations", "top_k", "eval_batch", "seed", "filler_token"}, "attack");
    read(a, "suffix_len", c.attack.suffix_len, "attack");
    read(a, "iterations", c.attack.iterations, "attack");
    read(a, "top_k", c.attack.top_k, "attack");
    read(a, "eval_batch", c.attack.eval_batch, "attack");
    read(a, "seed", c.attack.seed, "attack");
    read(a, "filler_token", c.attack.filler_token, "attack");
  }
  if (j.contains("targets")) {
    require(j["targets"].is_array(), "invalid_config", "targets must be an array of entity names");
    c.targets.clear();
    for (const auto& t : j["targets"]) {
      require(t.is_string(), "invalid_config", "targets must be an array of entity names");
      c.targets.push_back(t.get<std::string>());
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) { return config_from_json(read_text(path)); }

std::string config_to_json(const ExperimentConfig& config) { return config_json(config, true).dump(2) + "\n"; }

std::string config_hash(const ExperimentConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(config_json(config, false).dump())));
  return buf;
}

std::string run_id(const ExperimentConfig& config) { return config_hash(config).substr(0, 12); }

RunPaths run_paths(const ExperimentConfig& config) {
  const fs::path root = fs::path(config.out_dir) / run_id(config);
  return {root, root / "corpus", root / "ckpt", root / "attack", root / "reports"};
}

std::string method_label(ForgetKind forget, RetainKind retain) {
  return std::string(forget_kind_name(forget)) + "-" + std::string(retain_kind_name(retain));
}

std::string world_to_json(const World& world) {
  Json j;
  j["seed"] = world.seed;
  Json ents = Json::array();
  for (const auto& e : world.entities) {
    Json o;
    o["name"] = e.name;
    for (Attribute a : all_attributes()) o[std::string(attribute_name(a))] = e.value(a);
    ents.push_back(o);
  }
  j["entities"] = ents;
  j["vocabulary"] = world.vocabulary.tokens();
  return j.dump();
}

World world_from_json(std::string_view text) {
  try {
    const Json j = Json::parse(text);
    World w;
    w.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& o : j.at("entities")) {
      Entity e;
      e.name = o.at("name").get<std::string>();
      e.birth_city = o.at("birth_city").get<std::string>();
      e.profession = o.at("profession").get<std::string>();
      e.famous_work = o.at("famous_work").get<std::string>();
      e.associate = o.at("associate").get<std::string>();
      e.university = o.at("university").get<std::string>();
      w.entities.push_back(std::move(e));
    }
    auto tokens = j.at("vocabulary").get<std::vector<std::string>>();
    require(tokens.size() >= 2 && tokens[0] == "<bos>" && tokens[1] == "<eos>", "corrupt_artifact",
            "world vocabulary must start with the special tokens");
    w.vocabulary = Vocabulary(std::vector<std::string>(tokens.begin() + 2, tokens.end()));
    require(w.vocabulary.tokens() == tokens, "corrupt_artifact", "world vocabulary is not sorted and unique");
    return w;
  } catch (const Json::exception& e) {
    fail("corrupt_artifact", std::string("world file is malformed: ") + e.what());
  }
}

// ---- commands ---------------------------------------------------------------

std::vector<fs::path> cmd_gen_corpus(const ExperimentConfig& config) {
  config.validate();
  const RunPaths paths = run_paths(config);
  const World world = generate_world(config.seed, config.world.n_entities, config.world.vocab_budget);
  const auto targets = resolve_targets(config, world);
  std::vector<fs::path> out;

  Json wj = provenance(config);
  wj["world"] = Json::parse(world_to_json(world));
  write_text(paths.corpus / "world.json", wj.dump(2) + "\n");
  // Stored without out_dir, matching the hash.
  write_text(paths.root / "config.json", config_json(config, false).dump(2) + "\n");
  write_sidecar(paths.root / "config.json", config);
  out.push_back(paths.corpus / "world.json");
  out.push_back(paths.root / "config.json");

  const auto emit = [&](const fs::path& p, std::span<const Example> examples) {
    fs::create_directories(p.parent_path());
    write_jsonl(p, examples);
    write_sidecar(p, config);
    out.push_back(p);
  };
  emit(paths.corpus / "train.jsonl", training_corpus(world));
  for (const auto& t : targets) {
    const std::vector<std::string> one = {t};
    const CorpusSplits s = render_splits(world, one);
    const fs::path d = paths.corpus / "targets" / t;
    emit(d / "forget_set.jsonl", s.forget_set);
    emit(d / "retain_set.jsonl", s.retain_set);
    emit(d / "forget_probes.jsonl", s.forget_probes);
    emit(d / "neighbor_probes.jsonl", s.neighbor_probes);
  }
  return out;
}

std::vector<fs::path> cmd_pretrain(const ExperimentConfig& config) {
  const Stage s = open_stage(config);
  const auto corpus = load_examples(s, s.paths.corpus / "train.jsonl");
  auto seqs = training_sequences(corpus, s.world.vocabulary);
  const auto noisy =
      noisy_prompt_variants(seqs, s.world.vocabulary, config.pretrain.noise_variants, config.pretrain.noise_seed);
  seqs.insert(seqs.end(), noisy.begin(), noisy.end());
  const TrainResult r = pretrain(init_params(model_config(s)), seqs, config.pretrain.trainer);

  const fs::path ckpt = base_path(s);
  fs::create_directories(ckpt.parent_path());
  save_checkpoint(ckpt, r.params);
  write_sidecar(ckpt, config);
  const fs::path hist = s.paths.reports / "pretrain.history.csv";
  write_text(hist, add_hash_column(history_csv(r.history), config_hash(config)));
  return {ckpt, sidecar(ckpt), hist};
}

std::vector<fs::path> cmd_unlearn(const ExperimentConfig& config, ForgetKind forget, RetainKind retain) {
  const Stage s = open_stage(config);
  const ModelParams base = load_model(s, base_path(s));
  const std::string label = method_label(forget, retain);
  std::vector<fs::path> out;
  for (const auto& t : s.targets) {
    const TargetData data = load_target(s, t);
    const TrainResult r = unlearn_target(s, base, data, forget, retain, config.unlearn.perturbation);
    const fs::path ckpt = unlearned_path(s, label, t);
    fs::create_directories(ckpt.parent_path());
    save_checkpoint(ckpt, r.params);
    write_sidecar(ckpt, config);
    const fs::path hist = s.paths.reports / label / (t + ".history.csv");
    write_text(hist, add_hash_column(history_csv(r.history), config_hash(config)));
    out.insert(out.end(), {ckpt, sidecar(ckpt), hist});
  }
  return out;
}

std::vector<fs::path> cmd_attack(const ExperimentConfig& config, ForgetKind forget, RetainKind retain,
                                 std::optional<Practicality> practicality,
                                 std::optional<Generalization> generalization) {
  require(practicality.has_value() == generalization.has_value(), "invalid_argument",
          "give both --practicality and --generalization, or neither for the full matrix");
  const Stage s = open_stage(config);
  const ModelParams base = load_model(s, base_path(s));
  const std::string label = method_label(forget, retain);
  std::vector<ModelParams> models;
  models.reserve(s.targets.size());
  std::vector<AttackTarget> targets;
  for (const auto& t : s.targets) {
    models.push_back(load_model(s, unlearned_path(s, label, t)));
    const auto probes = load_examples(s, target_dir(s, t) / "forget_probes.jsonl");
    targets.push_back({t, nullptr, filter_kind(probes, ExampleKind::kProbeQA)});
  }
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i].unlearned = &models[i];

  std::map<std::string, std::string> meta;
  const Json prov = provenance(config);
  for (const auto& [k, v] : prov.items()) meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
  meta["method"] = label;

  std::vector<fs::path> out;
  const auto emit = [&](const ScenarioResult& r) {
    const fs::path p = s.paths.attack / label / r.scenario / (r.target + ".json");
    write_text(p, attack_result_json(r, meta));
    out.push_back(p);
  };
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (practicality) {
      for (const auto& r : baseline_scenarios(targets[i], s.world.vocabulary)) emit(r);
      AttackConfig c = config.attack;
      c.practicality = *practicality;
      c.generalization = *generalization;
      emit(run_scenario(base, targets, i, c, s.world.vocabulary));
    } else {
      for (const auto& r : run_scenario_matrix(base, targets, i, config.attack, s.world.vocabulary)) emit(r);
    }
  }
  return out;
}

std::vector<fs::path> cmd_eval(const ExperimentConfig& config, ForgetKind forget, RetainKind retain) {
  const Stage s = open_stage(config);
  const ModelParams base = load_model(s, base_path(s));
  const std::string label = method_label(forget, retain);
  const Vocabulary& vocab = s.world.vocabulary;

  std::vector<ProbeEvaluation> f_before, f_after, n_before, n_after;
  double fm = 0, rm = 0;
  for (const auto& t : s.targets) {
    const TargetData d = load_target(s, t);
    const ModelParams m = load_model(s, unlearned_path(s, label, t));
    f_before.push_back(evaluate_probes(base, vocab, d.forget_probes));
    f_after.push_back(evaluate_probes(m, vocab, d.forget_probes));
    n_before.push_back(evaluate_probes(base, vocab, d.neighbor_probes));
    n_after.push_back(evaluate_probes(m, vocab, d.neighbor_probes));
    fm += mia_loss(m, vocab, fact_texts(d.forget_set));
    rm += mia_loss(m, vocab, fact_texts(d.retain_set));
  }
  const double n = static_cast<double>(s.targets.size());
  std::vector<MetricRow> rows;
  for (auto&& [set, scenario, evals] :
       {std::tuple{"forget", "pre_unlearning", &f_before}, std::tuple{"forget", "none", &f_after},
        std::tuple{"neighbor", "pre_unlearning", &n_before}, std::tuple{"neighbor", "none", &n_after}}) {
    const auto r = probe_rows(set, scenario, pool(*evals));
    rows.insert(rows.end(), r.begin(), r.end());
  }
  rows.push_back({"forget", "MIA", "none", "loss", fm / n});
  rows.push_back({"retain", "MIA", "none", "loss", rm / n});

  // Attack results: one file per (scenario, target); every target must be present.
  const fs::path adir = s.paths.attack / label;
  std::map<std::string, std::map<std::string, Json>> by_scenario;
  if (fs::exists(adir)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(adir)) {
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      Json j = parse_file(f);
      require(j.contains("metadata"), "corrupt_artifact", f.string() + " has no metadata");
      check_hash(j["metadata"], config, f);
      const std::string scenario = j.at("scenario").get<std::string>();
      const std::string target = j.at("target").get<std::string>();
      by_scenario[scenario][target] = std::move(j);
    }
  }
  for (const auto& [scenario, per_target] : by_scenario) {
    std::map<std::string, double> sums;
    double all = 0;
    for (const auto& t : s.targets) {
      const auto it = per_target.find(t);
      require(it != per_target.end(), "missing_prerequisite",
              "attack scenario " + scenario + " has no result for target " + t);
      for (const auto& r : it->second.at("eval").at("rows")) {
        sums[r.at("kind").get<std::string>() + "\t" + r.at("metric").get<std::string>()] += r.at("value").get<double>();
      }
      all += it->second.at("eval").at("mean").get<double>();
    }
    for (const auto& [key, v] : sums) {
      const auto tab = key.find('\t');
      rows.push_back({"attack", key.substr(0, tab), scenario, key.substr(tab + 1), v / n});
    }
    rows.push_back({"attack", "ALL", scenario, "rougeL", all / n});
  }
  return write_report_files(s.paths.reports / label, build_report(std::move(rows), report_metadata(s, label)), config);
}

std::vector<fs::path> cmd_eval_checkpoint(const ExperimentConfig& config, const fs::path& checkpoint,
                                          std::span<const int> suffix) {
  const Stage s = open_stage(config);
  const ModelParams m = load_model(s, checkpoint);
  std::vector<ProbeEvaluation> f, nb;
  for (const auto& t : s.targets) {
    const TargetData d = load_target(s, t);
    f.push_back(evaluate_probes(m, s.world.vocabulary, d.forget_probes, suffix));
    nb.push_back(evaluate_probes(m, s.world.vocabulary, d.neighbor_probes, suffix));
  }
  const std::string scenario = suffix.empty() ? "none" : "suffix";
  auto rows = probe_rows("forget", scenario, pool(f));
  const auto more = probe_rows("neighbor", scenario, pool(nb));
  rows.insert(rows.end(), more.begin(), more.end());
  auto meta = report_metadata(s, checkpoint.string());
  std::string ids;
  for (int t : suffix) ids += (ids.empty() ? "" : " ") + std::to_string(t);
  meta["suffix_token_ids"] = ids;
  std::string name = "checkpoint-" + checkpoint.stem().string();
  if (!suffix.empty()) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(fnv1a(ids) & 0xffffffffULL));
    name += "-suffix-" + std::string(buf);
  }
  return write_report_files(s.paths.reports / name, build_report(std::move(rows), std::move(meta)), config);
}

SweepAxis sweep_axis_from_name(std::string_view name) {
  if (name == "layer") return SweepAxis::kLayer;
  if (name == "steps") return SweepAxis::kInnerSteps;
  fail("invalid_config", "unknown sweep axis '" + std::string(name) + "' (layer, steps)");
}

std::string_view sweep_axis_name(SweepAxis axis) { return axis == SweepAxis::kLayer ? "layer" : "steps"; }

std::vector<int> sweep_values(const ExperimentConfig& config, SweepAxis axis) {
  std::vector<int> v;
  if (axis == SweepAxis::kLayer) {
    for (int l = 0; l <= config.model.n_layers; ++l) v.push_back(l);
  } else {
    v = {0, 2, 4, 6, 8};
  }
  return v;
}

std::vector<fs::path> cmd_sweep(const ExperimentConfig& config, SweepAxis axis, ForgetKind forget,
                                RetainKind retain) {
  const Stage s = open_stage(config);
  const ModelParams base = load_model(s, base_path(s));
  const Vocabulary& vocab = s.world.vocabulary;
  std::vector<TargetData> data;
  double f_before = 0, n_before = 0;
  for (const auto& t : s.targets) {
    data.push_back(load_target(s, t));
    f_before += evaluate_probes(base, vocab, data.back().forget_probes).mean;
    n_before += evaluate_probes(base, vocab, data.back().neighbor_probes).mean;
  }
  const double n = static_cast<double>(s.targets.size());
  f_before /= n;
  n_before /= n;

  const std::string hash = config_hash(config);
  std::string csv = "axis,value,forget_before,forget_after,forget_reduction,neighbor_before,neighbor_after,config_hash\n";
  for (int v : sweep_values(config, axis)) {
    PerturbationSpec spec = config.unlearn.perturbation;
    (axis == SweepAxis::kLayer ? spec.layer : spec.inner_steps) = v;
    spec.validate(model_config(s));
    double f_after = 0, n_after = 0;
    for (const auto& d : data) {
      const TrainResult r = unlearn_target(s, base, d, forget, retain, spec);
      f_after += evaluate_probes(r.params, vocab, d.forget_probes).mean;
      n_after += evaluate_probes(r.params, vocab, d.neighbor_probes).mean;
    }
    f_after /= n;
    n_after /= n;
    csv += std::string(sweep_axis_name(axis)) + "," + std::to_string(v) + "," + fmt(f_before) + "," + fmt(f_after) +
           "," + fmt(f_before - f_after) + "," + fmt(n_before) + "," + fmt(n_after) + "," + hash + "\n";
  }
  const fs::path p =
      s.paths.reports / ("sweep_" + std::string(sweep_axis_name(axis)) + "-" + method_label(forget, retain) + ".csv");
  write_text(p, csv);
  return {p};
}

}  // namespace ulab
