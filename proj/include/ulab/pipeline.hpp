#pragma once

// Config-driven experiment pipeline behind the CLI.
//
// Layout of one run: <out_dir>/<run-id>/{corpus,ckpt,attack,reports}, where
// run-id is a prefix of the config hash. The hash covers every config field
// except out_dir. Each artifact records (config hash, code version, seed),
// inline for JSON files and free-form CSVs, in a <file>.meta.json sidecar for
// checkpoints, JSONL, config.json and report.csv. Commands refuse inputs
// written under another hash.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ulab/attack.hpp"
#include "ulab/corpus.hpp"
#include "ulab/eval.hpp"
#include "ulab/model.hpp"
#include "ulab/unlearn.hpp"

namespace ulab {

inline constexpr const char* kCodeVersion = "ulab-0.1.0";

struct WorldConfig {
  int n_entities = 32;
  int vocab_budget = 256;
};

struct PretrainConfig {
  TrainerConfig trainer;
  int noise_variants = 1;  // noisy-prompt copies per probe sequence
  std::uint64_t noise_seed = 99;
};

struct UnlearnConfig {
  TrainerConfig trainer;
  double lambda = 1.0;
  double beta = 0.1;
  PerturbationSpec perturbation;
};

struct ExperimentConfig {
  std::uint64_t seed = 42;  // world seed
  WorldConfig world;
  ModelConfig model;  // vocab_size comes from the generated world
  PretrainConfig pretrain;
  UnlearnConfig unlearn;
  AttackConfig attack;  // practicality / generalization are chosen per command
  std::vector<std::string> targets;  // empty: the first three entities
  std::string out_dir = "out";

  void validate() const;
};

ExperimentConfig default_config();

// Unknown keys anywhere in the document are errors. Missing keys keep defaults.
ExperimentConfig config_from_json(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& config);  // canonical, every field

std::string config_hash(const ExperimentConfig& config);  // 16 hex digits
std::string run_id(const ExperimentConfig& config);       // first 12 hex digits

struct RunPaths {
  std::filesystem::path root, corpus, ckpt, attack, reports;
};
RunPaths run_paths(const ExperimentConfig& config);

// Method label used in artifact paths, e.g. "advnpo-gdr".
std::string method_label(ForgetKind forget, RetainKind retain);

// World file round trip (entities + vocabulary).
std::string world_to_json(const World& world);
World world_from_json(std::string_view text);

// Commands. Each returns the files it wrote.
std::vector<std::filesystem::path> cmd_gen_corpus(const ExperimentConfig& config);
std::vector<std::filesystem::path> cmd_pretrain(const ExperimentConfig& config);
std::vector<std::filesystem::path> cmd_unlearn(const ExperimentConfig& config, ForgetKind forget, RetainKind retain);
// Without practicality/generalization the full scenario matrix runs; a single
// scenario is written together with the no-attack and static baselines.
std::vector<std::filesystem::path> cmd_attack(const ExperimentConfig& config, ForgetKind forget, RetainKind retain,
                                              std::optional<Practicality> practicality,
                                              std::optional<Generalization> generalization);
// Report over the unlearned models of one method plus every attack result on disk.
std::vector<std::filesystem::path> cmd_eval(const ExperimentConfig& config, ForgetKind forget, RetainKind retain);
// Report for an arbitrary checkpoint, optionally with a suffix appended to every probe.
std::vector<std::filesystem::path> cmd_eval_checkpoint(const ExperimentConfig& config,
                                                       const std::filesystem::path& checkpoint,
                                                       std::span<const int> suffix);

enum class SweepAxis { kLayer, kInnerSteps };
SweepAxis sweep_axis_from_name(std::string_view name);  // "layer", "steps"
std::string_view sweep_axis_name(SweepAxis axis);

// Layer sweep: l in 0..n_layers. Step sweep: K in {0, 2, 4, 6, 8}.
std::vector<int> sweep_values(const ExperimentConfig& config, SweepAxis axis);

// reports/sweep_<axis>-<method>.csv with one row per value:
// axis,value,forget_before,forget_after,forget_reduction,neighbor_before,neighbor_after,config_hash
std::vector<std::filesystem::path> cmd_sweep(const ExperimentConfig& config, SweepAxis axis, ForgetKind forget,
                                             RetainKind retain);

}  // namespace ulab
