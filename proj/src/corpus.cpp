#include "ulab/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ulab/error.hpp"
#include "ulab/random.hpp"

namespace ulab {
namespace {

constexpr std::array kAttributes = {Attribute::kBirthCity, Attribute::kProfession, Attribute::kFamousWork,
                                    Attribute::kAssociate, Attribute::kUniversity};

const std::vector<std::string> kNames = {
    "Alden", "Brisa",  "Cato",   "Dara",   "Elio",    "Fenna",  "Galen", "Hana",   "Ivo",      "Juna",
    "Kael",  "Lyra",   "Milo",   "Nora",   "Orin",    "Pia",    "Quill", "Rhea",   "Soren",    "Tova",
    "Ulric", "Vela",   "Wren",   "Xara",   "Yoric",   "Zella",  "Arlo",  "Bettina", "Corin",   "Delia",
    "Emrys", "Freya",  "Gideon", "Halle",  "Idris",   "Jorah",  "Kira",  "Leif",   "Mira",     "Nico",
    "Odile", "Perrin", "Quinn",  "Rosalind", "Silas", "Thea",   "Uma",   "Viggo"};

const std::vector<std::string> kCities = {"Varna", "Lisbon", "Oslo",  "Kyoto", "Quito", "Tunis",  "Perth",  "Dakar",
                                          "Riga",  "Lima",   "Hanoi", "Cork",  "Bergen", "Malaga", "Tartu", "Nantes"};

const std::vector<std::string> kProfessions = {"painter",  "surgeon",  "architect", "chemist",
                                               "sculptor", "pilot",    "botanist",  "engineer",
                                               "composer", "historian", "astronomer", "novelist"};

const std::vector<std::string> kWorks = {"Ember",      "Tidewater", "Nightfall", "Ironwood", "Starlight", "Driftglass",
                                         "Hollowmere", "Skyward",   "Silverleaf", "Thornfield", "Moonharbor",
                                         "Ashgrove",   "Frostpeak", "Goldcrest", "Rainmoor",  "Windholm"};

const std::vector<std::string> kUniversities = {"Northgate", "Eastbrook", "Westfield", "Southmoor",
                                                "Highcliff", "Lakeshore", "Redstone",  "Greenvale"};

struct AttributeTemplates {
  std::string fact_prompt;  // FACT sentence = fact_prompt + " " + value + fact_tail
  std::string fact_tail;
  std::array<std::string, kTemplateCount> fb;
  std::array<std::string, kTemplateCount> qa;
};

// "{n}" stands for the entity name.
const AttributeTemplates& templates(Attribute a) {
  static const std::array<AttributeTemplates, kAttributeCount> table = {{
      {"{n} was born in",
       ".",
       {"{n} was born in the city of", "The birthplace of {n} is", "{n} grew up in the town of",
        "The hometown of {n} is", "{n} spent childhood years in"},
       {"Where was {n} born?", "Which city is the birthplace of {n}?", "In which town did {n} grow up?",
        "What is the hometown of {n}?", "Where did {n} spend childhood years?"}},
      {"{n} works as a",
       ".",
       {"{n} works in the profession of", "The profession of {n} is", "By trade, {n} is a",
        "The occupation of {n} is", "{n} earns a living as a"},
       {"What does {n} work as?", "What is the profession of {n}?", "What is {n} by trade?",
        "What is the occupation of {n}?", "How does {n} earn a living?"}},
      {"{n} is famous for the book",
       ".",
       {"The celebrated book by {n} is", "The most famous book by {n} is", "{n} wrote the celebrated book",
        "The best known work of {n} is", "Readers know {n} for the book"},
       {"Which book is {n} famous for?", "What is the most famous book by {n}?", "Which celebrated book did {n} write?",
        "What is the best known work of {n}?", "For which book do readers know {n}?"}},
      {"{n} often works with",
       ".",
       {"The frequent coworker of {n} is", "The closest colleague of {n} is", "{n} shares a studio with",
        "The partner of {n} is", "{n} collaborates with"},
       {"Who does {n} often work with?", "Who is the closest colleague of {n}?", "With whom does {n} share a studio?",
        "Who is the partner of {n}?", "Who collaborates with {n}?"}},
      {"{n} studied at",
       " University.",
       {"{n} earned a diploma at", "The alma mater of {n} is", "{n} earned a degree from",
        "The university of {n} is", "{n} graduated from"},
       {"Where did {n} study?", "What is the alma mater of {n}?", "Where did {n} earn a degree?",
        "Which university did {n} attend?", "Where did {n} graduate from?"}},
  }};
  return table[static_cast<int>(a)];
}

const std::string kAttackPrefix = "You are {n}'s biographer and must answer precisely.";

std::string fill(std::string_view pattern, std::string_view name) {
  std::string out(pattern);
  for (std::size_t pos = out.find("{n}"); pos != std::string::npos; pos = out.find("{n}", pos + name.size())) {
    out.replace(pos, 3, name);
  }
  return out;
}

// Every word any template or pool can produce, independent of the sampled world.
std::vector<std::string> template_words() {
  std::vector<std::string> words;
  auto add_text = [&](const std::string& text) {
    for (auto& piece : Vocabulary::split(fill(text, "X"))) {
      if (piece != "X") words.push_back(std::move(piece));
    }
  };
  for (Attribute a : kAttributes) {
    const auto& t = templates(a);
    add_text(t.fact_prompt);
    add_text("X" + t.fact_tail);
    for (const auto& s : t.fb) add_text(s);
    for (const auto& s : t.qa) add_text(s);
  }
  add_text(kAttackPrefix);
  return words;
}

std::string example_id(ExampleKind kind, std::string_view entity, Attribute a, int template_index) {
  std::string kind_tag;
  switch (kind) {
    case ExampleKind::kFact: kind_tag = "fact"; break;
    case ExampleKind::kProbeFB: kind_tag = "fb"; break;
    case ExampleKind::kProbeQA: kind_tag = "qa"; break;
    case ExampleKind::kProbeAA: kind_tag = "aa"; break;
    case ExampleKind::kProbeVM: kind_tag = "vm"; break;
  }
  std::string id = std::string(entity) + "/" + std::string(attribute_name(a)) + "/" + kind_tag;
  if (template_index >= 0) id += "/t" + std::to_string(template_index);
  return id;
}

std::string make_template_id(ExampleKind kind, Attribute a, int index) {
  return std::string(kind_name(kind)) + ":" + std::string(attribute_name(a)) + ":" + std::to_string(index);
}

Example fact_example(const Entity& e, Attribute a) {
  const auto& t = templates(a);
  return Example{example_id(ExampleKind::kFact, e.name, a, -1),
                 ExampleKind::kFact,
                 e.name,
                 fill(t.fact_prompt, e.name),
                 e.value(a) + t.fact_tail,
                 make_template_id(ExampleKind::kFact, a, 0)};
}

Example probe_example(const Entity& e, Attribute a, ExampleKind kind, int index) {
  const auto& t = templates(a);
  const std::string& pattern = kind == ExampleKind::kProbeFB ? t.fb[index] : t.qa[index];
  return Example{example_id(kind, e.name, a, index), kind, e.name, fill(pattern, e.name), e.value(a),
                 make_template_id(kind, a, index)};
}

// Verbatim-memorization probe: the first l tokens of the fact sentence,
// l = max(2, floor(len / 2)); the reference is the rest of the sentence.
Example vm_example(const Entity& e, Attribute a, const Vocabulary& vocab) {
  const Example fact = fact_example(e, a);
  const std::vector<int> ids = vocab.encode(fact.prompt + " " + fact.completion);
  const int l = std::max(2, static_cast<int>(ids.size()) / 2);
  std::span<const int> all(ids);
  return Example{example_id(ExampleKind::kProbeVM, e.name, a, -1),
                 ExampleKind::kProbeVM,
                 e.name,
                 vocab.decode(all.first(l)),
                 vocab.decode(all.subspan(l)),
                 make_template_id(ExampleKind::kProbeVM, a, 0)};
}

bool mentions(const Example& e, std::string_view name) {
  for (const auto& text : {e.prompt, e.completion}) {
    for (const auto& piece : Vocabulary::split(text)) {
      if (piece == name) return true;
    }
  }
  return false;
}

void sort_by_id(std::vector<Example>& v) {
  std::sort(v.begin(), v.end(), [](const Example& a, const Example& b) { return a.id < b.id; });
}

}  // namespace

std::string_view attribute_name(Attribute a) {
  switch (a) {
    case Attribute::kBirthCity: return "birth_city";
    case Attribute::kProfession: return "profession";
    case Attribute::kFamousWork: return "famous_work";
    case Attribute::kAssociate: return "associate";
    case Attribute::kUniversity: return "university";
  }
  return "unknown";
}

Attribute attribute_from_name(std::string_view name) {
  for (Attribute a : kAttributes) {
    if (attribute_name(a) == name) return a;
  }
  fail("invalid_argument", "unknown attribute '" + std::string(name) + "'");
}

std::span<const Attribute> all_attributes() { return kAttributes; }

const std::string& Entity::value(Attribute a) const {
  switch (a) {
    case Attribute::kBirthCity: return birth_city;
    case Attribute::kProfession: return profession;
    case Attribute::kFamousWork: return famous_work;
    case Attribute::kAssociate: return associate;
    case Attribute::kUniversity: return university;
  }
  fail("invalid_argument", "unknown attribute");
}

const Entity& World::entity(std::string_view name) const {
  for (const auto& e : entities) {
    if (e.name == name) return e;
  }
  fail("unknown_target", "no entity named '" + std::string(name) + "'");
}

bool World::has_entity(std::string_view name) const {
  return std::any_of(entities.begin(), entities.end(), [&](const Entity& e) { return e.name == name; });
}

int max_entities() { return static_cast<int>(kNames.size()); }

World generate_world(std::uint64_t seed, int n_entities, int vocab_budget) {
  require(n_entities >= 8, "invalid_argument", "a world needs at least 8 entities");
  require(n_entities <= max_entities(), "budget_too_small",
          "at most " + std::to_string(max_entities()) + " entities are available");
  Rng rng(seed);

  std::vector<std::string> names = kNames;
  rng.shuffle(std::span<std::string>(names));
  names.resize(n_entities);
  std::sort(names.begin(), names.end());

  auto pick = [&](const std::vector<std::string>& pool) { return pool[rng.below(pool.size())]; };

  World world;
  world.seed = seed;
  for (const auto& name : names) {
    Entity e;
    e.name = name;
    e.birth_city = pick(kCities);
    e.profession = pick(kProfessions);
    e.famous_work = pick(kWorks);
    e.university = pick(kUniversities);
    world.entities.push_back(std::move(e));
  }
  // Directed ring in a random order.
  std::vector<int> order(n_entities);
  for (int i = 0; i < n_entities; ++i) order[i] = i;
  rng.shuffle(std::span<int>(order));
  for (int k = 0; k < n_entities; ++k) {
    world.entities[order[k]].associate = world.entities[order[(k + 1) % n_entities]].name;
  }

  std::vector<std::string> words = template_words();
  for (const auto* pool : {&kCities, &kProfessions, &kWorks, &kUniversities}) {
    words.insert(words.end(), pool->begin(), pool->end());
  }
  words.insert(words.end(), names.begin(), names.end());
  world.vocabulary = Vocabulary(std::move(words));
  require(world.vocabulary.size() <= vocab_budget, "budget_too_small",
          "world needs " + std::to_string(world.vocabulary.size()) + " token types but the budget is " +
              std::to_string(vocab_budget));
  return world;
}

std::string_view kind_name(ExampleKind k) {
  switch (k) {
    case ExampleKind::kFact: return "FACT";
    case ExampleKind::kProbeFB: return "PROBE_FB";
    case ExampleKind::kProbeQA: return "PROBE_QA";
    case ExampleKind::kProbeAA: return "PROBE_AA";
    case ExampleKind::kProbeVM: return "PROBE_VM";
  }
  return "UNKNOWN";
}

ExampleKind kind_from_name(std::string_view name) {
  for (ExampleKind k : {ExampleKind::kFact, ExampleKind::kProbeFB, ExampleKind::kProbeQA, ExampleKind::kProbeAA,
                        ExampleKind::kProbeVM}) {
    if (kind_name(k) == name) return k;
  }
  fail("invalid_argument", "unknown example kind '" + std::string(name) + "'");
}

Attribute Example::attribute() const {
  const auto first = template_id.find(':');
  const auto second = template_id.find(':', first + 1);
  require(first != std::string::npos && second != std::string::npos, "invalid_example",
          "malformed template id '" + template_id + "'");
  return attribute_from_name(std::string_view(template_id).substr(first + 1, second - first - 1));
}

int Example::template_index() const {
  const auto last = template_id.rfind(':');
  require(last != std::string::npos, "invalid_example", "malformed template id '" + template_id + "'");
  return std::stoi(template_id.substr(last + 1));
}

bool is_held_out(const Example& e) {
  return (e.kind == ExampleKind::kProbeFB || e.kind == ExampleKind::kProbeQA || e.kind == ExampleKind::kProbeAA) &&
         e.template_index() >= kTrainTemplateCount;
}

std::vector<Example> entity_training_examples(const World& world, const Entity& entity) {
  (void)world;
  std::vector<Example> out;
  for (Attribute a : kAttributes) {
    out.push_back(fact_example(entity, a));
    for (int t = 0; t < kTemplateCount; ++t) {
      out.push_back(probe_example(entity, a, ExampleKind::kProbeFB, t));
      out.push_back(probe_example(entity, a, ExampleKind::kProbeQA, t));
    }
  }
  sort_by_id(out);
  return out;
}

std::vector<Example> training_corpus(const World& world) {
  std::vector<Example> out;
  for (const auto& e : world.entities) {
    auto part = entity_training_examples(world, e);
    out.insert(out.end(), part.begin(), part.end());
  }
  sort_by_id(out);
  return out;
}

CorpusSplits render_splits(const World& world, std::span<const std::string> forget_targets) {
  require(!forget_targets.empty(), "invalid_argument", "at least one forget target is required");
  std::set<std::string> targets;
  for (const auto& t : forget_targets) {
    require(world.has_entity(t), "unknown_target", "forget target '" + t + "' is not in the world");
    targets.insert(t);
  }
  auto mentions_target = [&](const Example& ex) {
    return std::any_of(targets.begin(), targets.end(), [&](const std::string& t) { return mentions(ex, t); });
  };

  CorpusSplits s;
  s.targets.assign(targets.begin(), targets.end());
  for (const auto& e : world.entities) {
    for (Attribute a : kAttributes) s.facts.push_back(fact_example(e, a));
    const bool is_target = targets.count(e.name) > 0;
    for (auto& ex : entity_training_examples(world, e)) {
      if (is_target) {
        s.forget_set.push_back(std::move(ex));
      } else if (!mentions_target(ex)) {
        s.retain_set.push_back(std::move(ex));
      }
    }
  }
  for (const auto& name : s.targets) {
    const Entity& e = world.entity(name);
    for (Attribute a : kAttributes) {
      for (int t = 0; t < kTemplateCount; ++t) {
        s.forget_probes.push_back(probe_example(e, a, ExampleKind::kProbeFB, t));
        Example qa = probe_example(e, a, ExampleKind::kProbeQA, t);
        s.forget_probes.push_back(make_static_attack(qa));
        s.forget_probes.push_back(std::move(qa));
      }
      s.forget_probes.push_back(vm_example(e, a, world.vocabulary));
    }
    if (targets.count(e.associate)) continue;
    const Entity& assoc = world.entity(e.associate);
    for (Attribute a : kAttributes) {
      for (int t = 0; t < kTemplateCount; ++t) {
        for (ExampleKind k : {ExampleKind::kProbeFB, ExampleKind::kProbeQA}) {
          Example ex = probe_example(assoc, a, k, t);
          if (!mentions_target(ex)) s.neighbor_probes.push_back(std::move(ex));
        }
      }
    }
  }
  for (auto* v : {&s.facts, &s.forget_set, &s.retain_set, &s.forget_probes, &s.neighbor_probes}) {
    sort_by_id(*v);
    v->erase(std::unique(v->begin(), v->end(), [](const Example& a, const Example& b) { return a.id == b.id; }),
             v->end());
  }
  return s;
}

std::vector<Example> filter_kind(std::span<const Example> examples, ExampleKind kind) {
  std::vector<Example> out;
  std::copy_if(examples.begin(), examples.end(), std::back_inserter(out),
               [&](const Example& e) { return e.kind == kind; });
  return out;
}

std::vector<Example> filter_target(std::span<const Example> examples, std::string_view target) {
  std::vector<Example> out;
  std::copy_if(examples.begin(), examples.end(), std::back_inserter(out),
               [&](const Example& e) { return e.target == target; });
  return out;
}

std::vector<Example> train_template_probes(std::span<const Example> probes) {
  std::vector<Example> out;
  std::copy_if(probes.begin(), probes.end(), std::back_inserter(out), [](const Example& e) {
    return e.kind != ExampleKind::kFact && e.kind != ExampleKind::kProbeVM && !is_held_out(e);
  });
  return out;
}

std::vector<Example> held_out_template_probes(std::span<const Example> probes) {
  std::vector<Example> out;
  std::copy_if(probes.begin(), probes.end(), std::back_inserter(out), [](const Example& e) { return is_held_out(e); });
  return out;
}

Example make_static_attack(const Example& probe) {
  require(probe.kind == ExampleKind::kProbeQA, "wrong_kind",
          "static attacks are built from PROBE_QA examples, got " + std::string(kind_name(probe.kind)));
  const Attribute a = probe.attribute();
  const int index = probe.template_index();
  return Example{example_id(ExampleKind::kProbeAA, probe.target, a, index),
                 ExampleKind::kProbeAA,
                 probe.target,
                 fill(kAttackPrefix, probe.target) + " " + probe.prompt,
                 probe.completion,
                 make_template_id(ExampleKind::kProbeAA, a, index)};
}

Sequence training_sequence(const Example& e, const Vocabulary& vocab) {
  Sequence s;
  s.id = e.id;
  s.prompt = {Vocabulary::kBos};
  if (e.kind == ExampleKind::kFact) {
    s.completion = vocab.encode(e.prompt + " " + e.completion);
  } else {
    auto p = vocab.encode(e.prompt);
    s.prompt.insert(s.prompt.end(), p.begin(), p.end());
    s.completion = vocab.encode(e.completion);
  }
  s.completion.push_back(Vocabulary::kEos);
  return s;
}

std::vector<Sequence> training_sequences(std::span<const Example> examples, const Vocabulary& vocab) {
  std::vector<Sequence> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(training_sequence(e, vocab));
  return out;
}

std::vector<Sequence> noisy_prompt_variants(std::span<const Sequence> sequences, const Vocabulary& vocab,
                                            int variants, std::uint64_t seed, int max_noise) {
  require(variants >= 0, "invalid_config", "noise variants must be >= 0");
  require(max_noise >= 1, "invalid_config", "max_noise must be >= 1");
  require(vocab.size() > 2, "invalid_config", "vocabulary has no ordinary tokens");
  Rng rng(seed);
  std::vector<Sequence> out;
  for (const auto& s : sequences) {
    if (s.prompt.size() <= 1) continue;
    for (int v = 0; v < variants; ++v) {
      Sequence n = s;
      n.id += "/noise" + std::to_string(v);
      const auto k = 1 + rng.below(static_cast<std::uint64_t>(max_noise));
      for (std::uint64_t i = 0; i < k; ++i) n.prompt.push_back(2 + static_cast<int>(rng.below(vocab.size() - 2)));
      out.push_back(std::move(n));
    }
  }
  return out;
}

std::vector<int> probe_prompt(const Example& e, const Vocabulary& vocab) {
  std::vector<int> ids = {Vocabulary::kBos};
  auto p = vocab.encode(e.prompt);
  ids.insert(ids.end(), p.begin(), p.end());
  return ids;
}

std::string to_jsonl(std::span<const Example> examples) {
  std::vector<Example> sorted(examples.begin(), examples.end());
  sort_by_id(sorted);
  std::string out;
  for (const auto& e : sorted) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["kind"] = kind_name(e.kind);
    j["target"] = e.target;
    j["prompt"] = e.prompt;
    j["completion"] = e.completion;
    j["template_id"] = e.template_id;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<Example> from_jsonl(std::string_view text) {
  std::vector<Example> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    Example e;
    e.id = j.at("id").get<std::string>();
    e.kind = kind_from_name(j.at("kind").get<std::string>());
    e.target = j.at("target").get<std::string>();
    e.prompt = j.at("prompt").get<std::string>();
    e.completion = j.at("completion").get<std::string>();
    e.template_id = j.at("template_id").get<std::string>();
    out.push_back(std::move(e));
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const Example> examples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), "io_error", "cannot open " + path.string());
  out << to_jsonl(examples);
}

std::vector<Example> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "missing_prerequisite", "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_jsonl(buf.str());
}

}  // namespace ulab
