#include "ulab/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <tuple>

#include "ulab/error.hpp"

namespace ulab {

namespace {

template <typename T>
RougeScore rouge_impl(std::span<const T> pred, std::span<const T> ref) {
  require(!ref.empty(), "empty_reference", "ROUGE-L needs a non-empty reference");
  if (pred.empty()) return {};
  // Single-row LCS table.
  std::vector<int> row(ref.size() + 1, 0);
  for (const T& p : pred) {
    int diag = 0;
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      const int up = row[j];
      row[j] = p == ref[j - 1] ? diag + 1 : std::max(row[j], row[j - 1]);
      diag = up;
    }
  }
  const double lcs = row.back();
  RougeScore s;
  s.recall = lcs / static_cast<double>(ref.size());
  s.precision = lcs / static_cast<double>(pred.size());
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

auto row_key(const MetricRow& r) { return std::tie(r.set, r.kind, r.scenario, r.metric); }

}  // namespace

RougeScore rouge_l(std::span<const int> prediction, std::span<const int> reference) {
  return rouge_impl(prediction, reference);
}

RougeScore rouge_l(std::span<const std::string> prediction, std::span<const std::string> reference) {
  return rouge_impl(prediction, reference);
}

RougeScore rouge_l(std::string_view prediction, std::string_view reference) {
  const auto p = Vocabulary::split(prediction);
  const auto r = Vocabulary::split(reference);
  return rouge_l(std::span<const std::string>(p), std::span<const std::string>(r));
}

double mia_loss(const ModelParams& params, const Vocabulary& vocab, std::span<const std::string> texts) {
  require(!texts.empty(), "empty_input", "mia_loss needs at least one text");
  const std::vector<int> bos = {Vocabulary::kBos};
  double total = 0;
  for (const auto& text : texts) {
    const auto ids = vocab.encode(text);
    require(!ids.empty(), "empty_input", "mia_loss got an empty text");
    total += sequence_nll(params, bos, ids);
  }
  return total / static_cast<double>(texts.size());
}

std::string_view short_kind_name(ExampleKind k) {
  switch (k) {
    case ExampleKind::kFact: return "FACT";
    case ExampleKind::kProbeFB: return "FB";
    case ExampleKind::kProbeQA: return "QA";
    case ExampleKind::kProbeAA: return "AA";
    case ExampleKind::kProbeVM: return "VM";
  }
  return "?";
}

ProbeEvaluation evaluate_probes(const ModelParams& params, const Vocabulary& vocab, std::span<const Example> probes,
                                std::span<const int> suffix) {
  require(!probes.empty(), "empty_input", "no probes to evaluate");
  for (int t : suffix) {
    require(t >= 0 && t < vocab.size() && !vocab.is_special(t), "invalid_suffix",
            "suffix token " + std::to_string(t) + " is not an ordinary vocabulary token");
  }
  ProbeEvaluation out;
  std::map<ExampleKind, std::pair<double, int>> sums;
  double total = 0;
  for (const auto& probe : probes) {
    std::vector<int> prompt = probe_prompt(probe, vocab);
    prompt.insert(prompt.end(), suffix.begin(), suffix.end());
    require(static_cast<int>(prompt.size()) < params.config.context_len, "length_overflow",
            "probe " + probe.id + " plus suffix leaves no room to generate");
    const auto reference = vocab.encode(probe.completion);
    const auto generated =
        generate_greedy(params, prompt, static_cast<int>(reference.size()) + 8, Vocabulary::kEos);
    ProbeOutcome o;
    o.id = probe.id;
    o.kind = probe.kind;
    o.prediction = vocab.decode(generated);
    o.score = rouge_l(std::span<const int>(generated), std::span<const int>(reference));
    o.value = probe.kind == ExampleKind::kProbeVM ? o.score.f1 : o.score.recall;
    auto& [s, n] = sums[o.kind];
    s += o.value;
    ++n;
    total += o.value;
    out.outcomes.push_back(std::move(o));
  }
  for (const auto& [k, sn] : sums) out.mean_by_kind[k] = sn.first / sn.second;
  out.mean = total / static_cast<double>(out.outcomes.size());
  return out;
}

double mean_over(const ProbeEvaluation& eval, std::initializer_list<ExampleKind> kinds) {
  double s = 0;
  int n = 0;
  for (const auto& o : eval.outcomes) {
    if (std::find(kinds.begin(), kinds.end(), o.kind) == kinds.end()) continue;
    s += o.value;
    ++n;
  }
  require(n > 0, "empty_input", "no outcomes of the requested kinds");
  return s / n;
}

std::vector<MetricRow> probe_rows(const std::string& set, const std::string& scenario, const ProbeEvaluation& eval) {
  std::vector<MetricRow> rows;
  for (const auto& [k, v] : eval.mean_by_kind) {
    rows.push_back({set, std::string(short_kind_name(k)), scenario,
                    k == ExampleKind::kProbeVM ? "rougeL_f1" : "rougeL_recall", v});
  }
  rows.push_back({set, "ALL", scenario, "rougeL", eval.mean});
  return rows;
}

const MetricRow& MetricsReport::find(std::string_view set, std::string_view kind, std::string_view scenario,
                                     std::string_view metric) const {
  for (const auto& r : rows) {
    if (r.set == set && r.kind == kind && r.scenario == scenario && r.metric == metric) return r;
  }
  fail("missing_row", "report has no row " + std::string(set) + "/" + std::string(kind) + "/" +
                          std::string(scenario) + "/" + std::string(metric));
}

MetricsReport build_report(std::vector<MetricRow> rows, std::map<std::string, std::string> metadata) {
  require(!rows.empty(), "empty_input", "a report needs at least one row");
  std::sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) { return row_key(a) < row_key(b); });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    require(row_key(rows[i - 1]) != row_key(rows[i]), "duplicate_row",
            "duplicate report row " + rows[i].set + "/" + rows[i].kind + "/" + rows[i].scenario + "/" +
                rows[i].metric);
  }
  for (const auto& r : rows) require(std::isfinite(r.value), "non_finite", "report value is not finite");
  return MetricsReport{std::move(metadata), std::move(rows)};
}

std::string report_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["metadata"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : report.metadata) j["metadata"][k] = v;
  j["results"] = nlohmann::ordered_json::object();
  for (const auto& r : report.rows) j["results"][r.set][r.kind][r.scenario][r.metric] = r.value;
  return j.dump(2) + "\n";
}

MetricsReport parse_report_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail("corrupt_report", std::string("report.json does not parse: ") + e.what());
  }
  require(j.is_object() && j.contains("metadata") && j.contains("results"), "corrupt_report",
          "report.json needs metadata and results");
  std::map<std::string, std::string> metadata;
  for (const auto& [k, v] : j["metadata"].items()) metadata[k] = v.get<std::string>();
  std::vector<MetricRow> rows;
  for (const auto& [set, kinds] : j["results"].items())
    for (const auto& [kind, scenarios] : kinds.items())
      for (const auto& [scenario, metrics] : scenarios.items())
        for (const auto& [metric, value] : metrics.items()) rows.push_back({set, kind, scenario, metric, value.get<double>()});
  return build_report(std::move(rows), std::move(metadata));
}

std::string report_csv(const MetricsReport& report) {
  std::ostringstream out;
  out << "set,kind,scenario,metric,value\n";
  for (const auto& r : report.rows) {
    out << r.set << ',' << r.kind << ',' << r.scenario << ',' << r.metric << ',' << fmt(r.value) << '\n';
  }
  return out.str();
}

void write_report(const std::filesystem::path& dir, const MetricsReport& report) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, body] : {std::pair{"report.json", report_json(report)}, std::pair{"report.csv", report_csv(report)}}) {
    std::ofstream f(dir / name, std::ios::binary);
    require(static_cast<bool>(f), "io_error", "cannot write " + (dir / name).string());
    f << body;
  }
}

}  // namespace ulab
