#pragma once

// Metrics and reporting: ROUGE-L over word tokens, MIA LOSS scoring,
// probe-set evaluation with an optional adversarial suffix, report files.

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ulab/corpus.hpp"
#include "ulab/model.hpp"

namespace ulab {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  friend bool operator==(const RougeScore&, const RougeScore&) = default;
};

// LCS-based ROUGE-L. An empty prediction scores 0/0/0; an empty reference is an error.
RougeScore rouge_l(std::span<const int> prediction, std::span<const int> reference);
RougeScore rouge_l(std::span<const std::string> prediction, std::span<const std::string> reference);
RougeScore rouge_l(std::string_view prediction, std::string_view reference);  // word-split first

// Mean per-token NLL of each text after <bos>, averaged over texts.
double mia_loss(const ModelParams& params, const Vocabulary& vocab, std::span<const std::string> texts);

struct ProbeOutcome {
  std::string id;
  ExampleKind kind = ExampleKind::kProbeFB;
  std::string prediction;
  RougeScore score;
  double value = 0.0;  // recall, or f1 for VM probes
};

struct ProbeEvaluation {
  std::vector<ProbeOutcome> outcomes;
  std::map<ExampleKind, double> mean_by_kind;
  double mean = 0.0;  // over all outcomes
};

// Greedy decoding from <bos> + prompt (+ suffix) until <eos>, at most
// |reference| + 8 tokens, scored against the reference completion.
ProbeEvaluation evaluate_probes(const ModelParams& params, const Vocabulary& vocab, std::span<const Example> probes,
                                std::span<const int> suffix = {});

// Mean score over the outcomes whose kind is in `kinds`.
double mean_over(const ProbeEvaluation& eval, std::initializer_list<ExampleKind> kinds);

struct MetricRow {
  std::string set;       // forget, neighbor, retain, ...
  std::string kind;      // FB, QA, AA, VM, ALL, MIA
  std::string scenario;  // none, static, attack_unlearned/within_query, ...
  std::string metric;    // rougeL_recall, rougeL_f1, loss
  double value = 0.0;
  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

struct MetricsReport {
  std::map<std::string, std::string> metadata;
  std::vector<MetricRow> rows;  // sorted by (set, kind, scenario, metric)
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
  const MetricRow& find(std::string_view set, std::string_view kind, std::string_view scenario,
                        std::string_view metric) const;
};

// Rows of one probe evaluation: per-kind means plus an ALL row.
std::vector<MetricRow> probe_rows(const std::string& set, const std::string& scenario, const ProbeEvaluation& eval);

MetricsReport build_report(std::vector<MetricRow> rows, std::map<std::string, std::string> metadata);

// report.json: {"metadata": {...}, "results": {set: {kind: {scenario: {metric: value}}}}}
std::string report_json(const MetricsReport& report);
MetricsReport parse_report_json(std::string_view text);
// report.csv columns: set,kind,scenario,metric,value
std::string report_csv(const MetricsReport& report);
void write_report(const std::filesystem::path& dir, const MetricsReport& report);

std::string_view short_kind_name(ExampleKind k);  // FB, QA, AA, VM, FACT

}  // namespace ulab
