#include "ulab/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "ulab/autodiff.hpp"
#include "ulab/random.hpp"

namespace ulab {
namespace {

using VarD = Var<double>;
using Builder = std::function<VarD(Graph<double>&, std::span<const VarD>)>;

struct OpSpec {
  int arity;
  std::vector<bool> differentiable;
  Builder build;
  std::vector<std::vector<int>> default_shapes;
};

// Row indices used by gather / cross_entropy: a fixed pattern that repeats rows.
std::vector<int> index_pattern(int count, int bound) {
  std::vector<int> idx(count);
  for (int i = 0; i < count; ++i) idx[i] = (i * 7 + 3) % bound;
  return idx;
}

const std::map<std::string, OpSpec, std::less<>>& registry() {
  static const std::map<std::string, OpSpec, std::less<>> ops = {
      {"identity", {1, {true}, [](auto&, auto in) { return in[0]; }, {{3, 4}}}},
      {"matmul", {2, {true, true}, [](auto&, auto in) { return matmul(in[0], in[1]); }, {{3, 4}, {4, 2}}}},
      {"transpose", {1, {true}, [](auto&, auto in) { return transpose(in[0]); }, {{3, 5}}}},
      {"add", {2, {true, true}, [](auto&, auto in) { return add(in[0], in[1]); }, {{3, 4}, {3, 4}}}},
      {"add_row", {2, {true, true}, [](auto&, auto in) { return add_row(in[0], in[1]); }, {{3, 4}, {4}}}},
      {"mul", {2, {true, true}, [](auto&, auto in) { return mul(in[0], in[1]); }, {{3, 4}, {3, 4}}}},
      {"scale", {1, {true}, [](auto&, auto in) { return scale(in[0], -1.7); }, {{3, 4}}}},
      {"add_scalar", {1, {true}, [](auto&, auto in) { return add_scalar(in[0], 0.3); }, {{3, 4}}}},
      {"log", {1, {true}, [](auto&, auto in) { return log(in[0]); }, {{3, 4}}}},
      {"pow", {1, {true}, [](auto&, auto in) { return pow(in[0], 0.1); }, {{3, 4}}}},
      {"gelu", {1, {true}, [](auto&, auto in) { return gelu(in[0]); }, {{3, 4}}}},
      {"causal_softmax", {1, {true}, [](auto&, auto in) { return causal_softmax(in[0]); }, {{5, 5}}}},
      {"layer_norm",
       {3, {true, true, true}, [](auto&, auto in) { return layer_norm(in[0], in[1], in[2]); },
        {{1, 8}, {8}, {8}}}},
      {"gather",
       {1, {true},
        [](auto&, auto in) {
          const auto idx = index_pattern(6, in[0].value().rows());
          return gather(in[0], std::span<const int>(idx));
        },
        {{5, 3}}}},
      {"cross_entropy",
       {1, {true},
        [](auto&, auto in) {
          const auto idx = index_pattern(in[0].value().rows(), in[0].value().cols());
          return cross_entropy(in[0], std::span<const int>(idx));
        },
        {{4, 7}}}},
      {"kl_divergence",
       {2, {true, false},
        [](auto&, auto in) { return kl_divergence(in[0], log_softmax_rows(in[1].value())); },
        {{3, 6}, {3, 6}}}},
      {"slice_rows", {1, {true}, [](auto&, auto in) { return slice_rows(in[0], 1, 3); }, {{4, 3}}}},
      {"concat_rows",
       {2, {true, true},
        [](auto&, auto in) {
          const VarD parts[] = {in[0], in[1], in[0]};
          return concat_rows(std::span<const VarD>(parts));
        },
        {{2, 3}, {1, 3}}}},
      {"sum", {1, {true}, [](auto&, auto in) { return sum(in[0]); }, {{3, 4}}}},
      {"mean", {1, {true}, [](auto&, auto in) { return mean(in[0]); }, {{3, 4}}}},
  };
  return ops;
}

const OpSpec& lookup(std::string_view op) {
  const auto& ops = registry();
  auto it = ops.find(op);
  if (it == ops.end()) fail("unknown_op", "grad_check: unknown op '" + std::string(op) + "'");
  return it->second;
}

// Scalar reduction of the op output; the weights are regenerated from the seed each call.
VarD reduce(Graph<double>& g, VarD out, std::uint64_t weight_seed) {
  if (out.value().is_scalar()) return out;
  TensorD w(out.value().shape());
  Rng rng(weight_seed);
  // Weights sit on a 1/64 grid so linear ops on dyadic inputs difference exactly.
  for (auto& v : w.data()) v = std::round(rng.normal() * 64.0) / 64.0;
  return sum(mul(out, g.leaf(std::move(w))));
}

double evaluate(const OpSpec& spec, std::span<const TensorD> inputs, std::uint64_t weight_seed) {
  Graph<double> g;
  std::vector<VarD> vars;
  for (const auto& t : inputs) vars.push_back(g.leaf(t));
  return reduce(g, spec.build(g, vars), weight_seed).value().item();
}

}  // namespace

std::vector<std::string> grad_check_ops() {
  std::vector<std::string> names;
  for (const auto& [name, spec] : registry()) names.push_back(name);
  return names;
}

int grad_check_arity(std::string_view op) { return lookup(op).arity; }

double grad_check(std::string_view op, std::span<const TensorD> inputs, double h, std::uint64_t weight_seed) {
  const OpSpec& spec = lookup(op);
  require(h > 0, "invalid_argument", "grad_check step must be positive");
  require(static_cast<int>(inputs.size()) == spec.arity, "invalid_argument",
          "grad_check: op '" + std::string(op) + "' expects " + std::to_string(spec.arity) + " inputs");

  Graph<double> g;
  std::vector<VarD> vars;
  for (std::size_t k = 0; k < inputs.size(); ++k) vars.push_back(g.leaf(inputs[k], spec.differentiable[k]));
  VarD root = reduce(g, spec.build(g, vars), weight_seed);
  g.backward(root);

  double worst = 0.0;
  std::vector<TensorD> probe(inputs.begin(), inputs.end());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!spec.differentiable[k]) continue;
    const TensorD& analytic = vars[k].grad();
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k][i];
      probe[k][i] = orig + h;
      const double plus = evaluate(spec, probe, weight_seed);
      probe[k][i] = orig - h;
      const double minus = evaluate(spec, probe, weight_seed);
      probe[k][i] = orig;
      const double fd = (plus - minus) / (2.0 * h);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(fd), 1e-8});
      worst = std::max(worst, std::abs(a - fd) / denom);
    }
  }
  return worst;
}

std::vector<TensorD> grad_check_inputs(std::string_view op, std::uint64_t seed) {
  const OpSpec& spec = lookup(op);
  Rng rng(seed);
  std::vector<TensorD> inputs;
  for (const auto& shape : spec.default_shapes) {
    TensorD t(shape);
    for (auto& v : t.data()) v = rng.normal();
    inputs.push_back(std::move(t));
  }
  // log and pow need strictly positive arguments away from zero.
  if (op == "log" || op == "pow") {
    for (auto& v : inputs[0].data()) v = 0.5 + std::abs(v);
  }
  return inputs;
}

}  // namespace ulab
