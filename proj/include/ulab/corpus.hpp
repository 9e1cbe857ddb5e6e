#pragma once

// Deterministic synthetic knowledge world and the examples rendered from it.
//
// Every entity has five attributes (birth_city, profession, famous_work,
// associate, university). Each attribute has one FACT sentence and five
// surface templates per probe kind: templates 0-2 are "train" templates
// (usable for suffix optimization), templates 3-4 are held out.
//
// Associates form one directed ring over all entities: every entity has
// exactly one associate and is the associate of exactly one other entity;
// links are not symmetric.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ulab/error.hpp"
#include "ulab/tokenizer.hpp"

namespace ulab {

inline constexpr int kAttributeCount = 5;
inline constexpr int kTemplateCount = 5;
inline constexpr int kTrainTemplateCount = 3;

enum class Attribute { kBirthCity, kProfession, kFamousWork, kAssociate, kUniversity };

std::string_view attribute_name(Attribute a);
Attribute attribute_from_name(std::string_view name);
std::span<const Attribute> all_attributes();

struct Entity {
  std::string name;
  std::string birth_city;
  std::string profession;
  std::string famous_work;
  std::string associate;
  std::string university;

  const std::string& value(Attribute a) const;
  friend bool operator==(const Entity&, const Entity&) = default;
};

struct World {
  std::uint64_t seed = 0;
  std::vector<Entity> entities;
  Vocabulary vocabulary;

  const Entity& entity(std::string_view name) const;
  bool has_entity(std::string_view name) const;
  friend bool operator==(const World& a, const World& b) {
    return a.seed == b.seed && a.entities == b.entities && a.vocabulary.tokens() == b.vocabulary.tokens();
  }
};

// Number of names available; generate_world fails beyond this.
int max_entities();

World generate_world(std::uint64_t seed, int n_entities, int vocab_budget);

enum class ExampleKind { kFact, kProbeFB, kProbeQA, kProbeAA, kProbeVM };

std::string_view kind_name(ExampleKind k);  // "FACT", "PROBE_FB", ...
ExampleKind kind_from_name(std::string_view name);

struct Example {
  std::string id;
  ExampleKind kind = ExampleKind::kFact;
  std::string target;  // entity the example is about
  std::string prompt;
  std::string completion;
  std::string template_id;  // "<KIND>:<attribute>:<index>"

  Attribute attribute() const;
  int template_index() const;
  friend bool operator==(const Example&, const Example&) = default;
};

bool is_held_out(const Example& e);

// FACT + every FB and QA probe for one entity, i.e. everything pretraining sees about it.
std::vector<Example> entity_training_examples(const World& world, const Entity& entity);

// Pretraining corpus: entity_training_examples of every entity, sorted by id.
std::vector<Example> training_corpus(const World& world);

struct CorpusSplits {
  std::vector<std::string> targets;
  std::vector<Example> facts;            // FACT examples of every entity
  std::vector<Example> forget_set;       // D_f: training examples about the targets
  std::vector<Example> retain_set;       // D_r: training examples of other entities not mentioning a target
  std::vector<Example> forget_probes;    // FB/QA/AA/VM probes about the targets
  std::vector<Example> neighbor_probes;  // FB/QA probes about the targets' associates
};

CorpusSplits render_splits(const World& world, std::span<const std::string> forget_targets);

std::vector<Example> filter_kind(std::span<const Example> examples, ExampleKind kind);
std::vector<Example> filter_target(std::span<const Example> examples, std::string_view target);
std::vector<Example> train_template_probes(std::span<const Example> probes);
std::vector<Example> held_out_template_probes(std::span<const Example> probes);

// QA probe -> prefix-injection AA probe with the same reference completion.
Example make_static_attack(const Example& probe);

// Token sequences fed to the model.
struct Sequence {
  std::string id;
  std::vector<int> prompt;      // starts with <bos>
  std::vector<int> completion;  // training sequences end with <eos>
};

// FACT: whole sentence as completion after <bos>; probes: prompt -> completion <eos>.
Sequence training_sequence(const Example& e, const Vocabulary& vocab);
std::vector<Sequence> training_sequences(std::span<const Example> examples, const Vocabulary& vocab);

// For every probe sequence (prompt longer than <bos>), `variants` copies whose
// prompt gets 1..max_noise random ordinary tokens appended. Ids get "/noise<v>".
// Returned after the originals' order; the originals are not included.
std::vector<Sequence> noisy_prompt_variants(std::span<const Sequence> sequences, const Vocabulary& vocab,
                                            int variants, std::uint64_t seed, int max_noise = 5);

// <bos> + encode(prompt).
std::vector<int> probe_prompt(const Example& e, const Vocabulary& vocab);

// JSON Lines, one example per line, sorted by id.
std::string to_jsonl(std::span<const Example> examples);
std::vector<Example> from_jsonl(std::string_view text);
void write_jsonl(const std::filesystem::path& path, std::span<const Example> examples);
std::vector<Example> read_jsonl(const std::filesystem::path& path);

}  // namespace ulab
