#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "ulab/checkpoint.hpp"
#include "ulab/pipeline.hpp"

using namespace ulab;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny(const std::string& out) {
  ExperimentConfig c = default_config();
  c.world.n_entities = 8;
  c.model.d_model = 16;
  c.model.n_layers = 2;
  c.model.n_heads = 2;
  c.pretrain.trainer.total_steps = 15;
  c.pretrain.trainer.batch_size = 8;
  c.unlearn.trainer.total_steps = 2;
  c.unlearn.trainer.batch_size = 4;
  c.unlearn.perturbation.layer = 1;
  c.unlearn.perturbation.inner_steps = 1;
  c.attack.iterations = 1;
  c.attack.top_k = 2;
  c.attack.eval_batch = 2;
  c.attack.suffix_len = 2;
  c.out_dir = (fs::temp_directory_path() / out).string();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Relative path -> bytes for every file under `root`.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  }
  return out;
}

std::string error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

}  // namespace

TEST_CASE("config JSON round trip and strictness") {
  const ExperimentConfig c = default_config();
  const std::string text = config_to_json(c);
  CHECK(config_to_json(config_from_json(text)) == text);
  CHECK(config_from_json("{}").unlearn.perturbation.kappa == c.unlearn.perturbation.kappa);

  CHECK(error_code([] { config_from_json(R"({"sed": 1})"); }) == "invalid_config");
  CHECK(error_code([] { config_from_json(R"({"unlearn": {"perturbation": {"kapa": 1}}})"); }) == "invalid_config");
  CHECK(error_code([] { config_from_json(R"({"model": {"n_layers": 2.5}})"); }) == "invalid_config");
  CHECK(error_code([] { config_from_json(R"({"seed": -3})"); }) == "invalid_config");
  CHECK(error_code([] { config_from_json(R"({"model": {"d_model": 30, "n_heads": 4}})"); }) == "invalid_config");
  CHECK(error_code([] { config_from_json("{not json"); }) == "invalid_config");

  const auto sigma = config_from_json(R"({"unlearn": {"perturbation": {"init_sigma": 0.0}}})");
  REQUIRE(sigma.unlearn.perturbation.init_sigma.has_value());
  CHECK(*sigma.unlearn.perturbation.init_sigma == 0.0);
}

TEST_CASE("config hash ignores out_dir and tracks every other field") {
  ExperimentConfig a = default_config(), b = default_config();
  b.out_dir = "elsewhere";
  CHECK(config_hash(a) == config_hash(b));
  CHECK(run_id(a) == config_hash(a).substr(0, 12));
  b.seed = 43;
  CHECK(config_hash(a) != config_hash(b));
  b = a;
  b.attack.top_k = 17;
  CHECK(config_hash(a) != config_hash(b));
  CHECK(run_paths(a).ckpt == fs::path("out") / run_id(a) / "ckpt");
}

TEST_CASE("world file round trip") {
  const World w = generate_world(42, 8, 256);
  CHECK(world_from_json(world_to_json(w)) == w);
  CHECK(error_code([] { world_from_json("{}"); }) == "corrupt_artifact");
}

TEST_CASE("stages need their prerequisites") {
  const ExperimentConfig c = tiny("ulab_pipeline_prereq");
  fs::remove_all(c.out_dir);
  CHECK(error_code([&] { cmd_pretrain(c); }) == "missing_prerequisite");
  cmd_gen_corpus(c);
  CHECK(error_code([&] { cmd_unlearn(c, ForgetKind::kNPO, RetainKind::kGDR); }) == "missing_prerequisite");
  ExperimentConfig bad = c;
  bad.targets = {"Nobody"};
  CHECK(error_code([&] { cmd_gen_corpus(bad); }) == "unknown_target");
  fs::remove_all(c.out_dir);
}

TEST_CASE("pipeline runs end to end and reruns byte-identically") {
  const ExperimentConfig a = tiny("ulab_pipeline_a");
  const ExperimentConfig b = tiny("ulab_pipeline_b");
  for (const auto* c : {&a, &b}) {
    fs::remove_all(c->out_dir);
    cmd_gen_corpus(*c);
    cmd_pretrain(*c);
    cmd_unlearn(*c, ForgetKind::kAdvNPO, RetainKind::kGDR);
    const auto attacks = cmd_attack(*c, ForgetKind::kAdvNPO, RetainKind::kGDR, Practicality::kAttackUnlearned,
                                    Generalization::kWithinQuery);
    CHECK(attacks.size() == 9);
    cmd_eval(*c, ForgetKind::kAdvNPO, RetainKind::kGDR);
  }
  const auto ta = tree(run_paths(a).root);
  CHECK(ta == tree(run_paths(b).root));

  const auto report = parse_report_json(slurp(run_paths(a).reports / "advnpo-gdr" / "report.json"));
  CHECK(report.metadata.at("config_hash") == config_hash(a));
  CHECK_NOTHROW(report.find("attack", "QA", "attack_unlearned/within_query", "rougeL_recall"));
  CHECK_NOTHROW(report.find("forget", "ALL", "pre_unlearning", "rougeL"));
  CHECK_NOTHROW(report.find("retain", "MIA", "none", "loss"));

  // Every artifact carries the hash inline or in a sidecar.
  const std::string hash = config_hash(a);
  for (const auto& [rel, bytes] : ta) {
    if (rel.ends_with(".ulnf") || rel.ends_with(".jsonl") || rel.ends_with("report.csv") ||
        rel == "config.json") {
      CHECK_MESSAGE(ta.count(rel + ".meta.json"), rel);
    } else {
      CHECK_MESSAGE(bytes.find(hash) != std::string::npos, rel);
    }
  }

  // A checkpoint from another config is refused.
  const fs::path meta = run_paths(a).ckpt / "base.ulnf.meta.json";
  std::string text = slurp(meta);
  text.replace(text.find(hash), hash.size(), "0000000000000000");
  std::ofstream(meta, std::ios::binary) << text;
  CHECK(error_code([&] { cmd_unlearn(a, ForgetKind::kNPO, RetainKind::kGDR); }) == "config_hash_mismatch");
  fs::remove_all(a.out_dir);
  fs::remove_all(b.out_dir);
}

TEST_CASE("sweeps emit one row per value") {
  ExperimentConfig c = tiny("ulab_pipeline_sweep");
  c.targets = {};
  fs::remove_all(c.out_dir);
  cmd_gen_corpus(c);
  cmd_pretrain(c);
  CHECK(sweep_values(c, SweepAxis::kLayer) == std::vector<int>{0, 1, 2});
  CHECK(sweep_values(c, SweepAxis::kInnerSteps) == std::vector<int>{0, 2, 4, 6, 8});
  for (SweepAxis axis : {SweepAxis::kLayer, SweepAxis::kInnerSteps}) {
    const auto out = cmd_sweep(c, axis, ForgetKind::kAdvNPO, RetainKind::kGDR);
    REQUIRE(out.size() == 1);
    const std::string csv = slurp(out[0]);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + static_cast<long>(sweep_values(c, axis).size()));
    CHECK(csv.find(config_hash(c)) != std::string::npos);
    CHECK(csv == slurp(cmd_sweep(c, axis, ForgetKind::kAdvNPO, RetainKind::kGDR)[0]));
  }
  CHECK(error_code([] { sweep_axis_from_name("depth"); }) == "invalid_config");
  fs::remove_all(c.out_dir);
}

TEST_CASE("CLI reports errors as JSON with a nonzero exit code") {
  const fs::path dir = fs::temp_directory_path() / "ulab_pipeline_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cli = ULAB_CLI_PATH;
  const auto run = [&](const std::string& args) {
    const std::string cmd = "\"" + cli + "\" --out \"" + dir.string() + "\" " + args + " >\"" +
                            (dir / "stdout").string() + "\" 2>\"" + (dir / "stderr").string() + "\"";
    return std::system(cmd.c_str());
  };
  CHECK(run("--set bogus=1 gen-corpus") != 0);
  auto err = nlohmann::json::parse(slurp(dir / "stderr"));
  CHECK(err["error"]["code"] == "invalid_config");

  CHECK(run("pretrain") != 0);
  err = nlohmann::json::parse(slurp(dir / "stderr"));
  CHECK(err["error"]["code"] == "missing_prerequisite");

  CHECK(run("unlearn --method sgd") != 0);
  CHECK(nlohmann::json::parse(slurp(dir / "stderr"))["error"]["code"] == "usage");

  CHECK(run("--seed 7 --set world.n_entities=8 gen-corpus") == 0);
  const auto out = nlohmann::json::parse(slurp(dir / "stdout"));
  ExperimentConfig expect = default_config();
  expect.seed = 7;
  expect.world.n_entities = 8;
  CHECK(out["config_hash"] == config_hash(expect));
  CHECK(fs::exists(dir / run_id(expect) / "corpus" / "world.json"));
  fs::remove_all(dir);
}
