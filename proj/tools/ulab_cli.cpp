// ulab_cli: pipeline commands over one JSON experiment config.
//
//   ulab_cli [--config FILE] [--seed N] [--out DIR] [--set key.path=JSON ...] <command> [options]
//
// Prints {"command", "run_id", "config_hash", "outputs"} on stdout. Failures
// print {"error": {"code", "message"}} on stderr and exit nonzero.

#include <CLI11.hpp>
#include <iostream>
#include <json.hpp>

#include "ulab/error.hpp"
#include "ulab/pipeline.hpp"

using namespace ulab;
using Json = nlohmann::json;

namespace {

int report_error(const std::string& code, const std::string& message, int status) {
  std::cerr << Json{{"error", {{"code", code}, {"message", message}}}}.dump() << std::endl;
  return status;
}

// Applies "a.b.c=<json>" onto the config document; bare words are taken as strings.
void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, "invalid_argument", "--set expects key.path=value, got " + assignment);
  std::string pointer = "/" + assignment.substr(0, eq);
  for (auto& ch : pointer) ch = ch == '.' ? '/' : ch;
  const std::string raw = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const Json::exception&) {
    value = raw;
  }
  const Json::json_pointer ptr(pointer);
  require(doc.contains(ptr), "invalid_config", "unknown config key " + assignment.substr(0, eq));
  doc[ptr] = value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unlearning robustness lab: corpus, pretraining, unlearning, attacks and reports"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "experiment config (JSON); defaults are used when omitted")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "override config.seed");
  app.add_option("--out", out_dir, "override config.out_dir");
  app.add_option("--set", sets, "override any config field, e.g. --set unlearn.trainer.total_steps=120");

  const std::vector<std::string> forget_names = {"ga", "npo", "advga", "advnpo"};
  const std::vector<std::string> retain_names = {"none", "gdr", "klr"};
  std::string method = "npo", retain = "gdr";
  const auto add_method = [&](CLI::App* c) {
    c->add_option("--method", method, "forget objective")->check(CLI::IsMember(forget_names));
    c->add_option("--retain", retain, "retain regularizer")->check(CLI::IsMember(retain_names));
  };

  auto* gen = app.add_subcommand("gen-corpus", "generate the world and write corpus files");
  auto* pre = app.add_subcommand("pretrain", "train the base model on the corpus");
  auto* unl = app.add_subcommand("unlearn", "unlearn every forget target from the base model");
  add_method(unl);
  auto* att = app.add_subcommand("attack", "optimize adversarial suffixes against unlearned models");
  add_method(att);
  std::optional<std::string> practicality, generalization;
  att->add_option("--practicality", practicality, "model the suffix is optimized on")
      ->check(CLI::IsMember({"attack_unlearned", "attack_original"}));
  att->add_option("--generalization", generalization, "prompt set the suffix is optimized on")
      ->check(CLI::IsMember({"within_query", "cross_query", "cross_target"}));
  auto* ev = app.add_subcommand("eval", "write report.json / report.csv");
  add_method(ev);
  std::string checkpoint;
  std::vector<int> suffix;
  ev->add_option("--checkpoint", checkpoint, "evaluate this checkpoint instead of a method's models");
  ev->add_option("--suffix", suffix, "suffix token ids appended to every probe (with --checkpoint)");
  auto* sw = app.add_subcommand("sweep", "perturbation layer or inner-step sweep");
  add_method(sw);
  std::string axis = "layer";
  sw->add_option("--axis", axis, "swept quantity")->check(CLI::IsMember({"layer", "steps"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), 2);
  }

  try {
    Json doc = Json::parse(config_to_json(config_path.empty() ? default_config() : load_config(config_path)));
    if (seed) doc["seed"] = *seed;
    if (out_dir) doc["out_dir"] = *out_dir;
    for (const auto& s : sets) apply_override(doc, s);
    const ExperimentConfig config = config_from_json(doc.dump());

    const ForgetKind fk = forget_kind_from_name(method);
    const RetainKind rk = retain_kind_from_name(retain);
    std::vector<std::filesystem::path> outputs;
    std::string command;
    if (*gen) {
      command = "gen-corpus";
      outputs = cmd_gen_corpus(config);
    } else if (*pre) {
      command = "pretrain";
      outputs = cmd_pretrain(config);
    } else if (*unl) {
      command = "unlearn";
      outputs = cmd_unlearn(config, fk, rk);
    } else if (*att) {
      command = "attack";
      std::optional<Practicality> p;
      std::optional<Generalization> g;
      if (practicality) p = practicality_from_name(*practicality);
      if (generalization) g = generalization_from_name(*generalization);
      outputs = cmd_attack(config, fk, rk, p, g);
    } else if (*ev) {
      command = "eval";
      require(checkpoint.empty() ? suffix.empty() : true, "invalid_argument", "--suffix needs --checkpoint");
      outputs = checkpoint.empty() ? cmd_eval(config, fk, rk) : cmd_eval_checkpoint(config, checkpoint, suffix);
    } else {
      command = "sweep";
      outputs = cmd_sweep(config, sweep_axis_from_name(axis), fk, rk);
    }
    Json out = {{"command", command}, {"run_id", run_id(config)}, {"config_hash", config_hash(config)}};
    out["outputs"] = Json::array();
    for (const auto& p : outputs) out["outputs"].push_back(p.generic_string());
    std::cout << out.dump(2) << std::endl;
    return 0;
  } catch (const Error& e) {
    return report_error(e.code(), e.what(), 1);
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), 1);
  }
}
