#include "ulab/autodiff.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace ulab {

std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kGather: return "gather";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kAddRow: return "add_row";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kLog: return "log";
    case OpKind::kPow: return "pow";
    case OpKind::kGelu: return "gelu";
    case OpKind::kCausalSoftmax: return "causal_softmax";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kKlDivergence: return "kl_divergence";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
  }
  return "unknown";
}

namespace {

template <typename Scalar>
using Node = typename Graph<Scalar>::Node;

template <typename Scalar>
Graph<Scalar>& same_graph(Var<Scalar> a, Var<Scalar> b) {
  require(a.valid() && b.valid(), "invalid_var", "operation on an unbound variable");
  require(a.graph == b.graph, "graph_mismatch", "operands belong to different graphs");
  return *a.graph;
}

template <typename Scalar>
Graph<Scalar>& graph_of(Var<Scalar> a) {
  require(a.valid(), "invalid_var", "operation on an unbound variable");
  return *a.graph;
}

void require_matrix(const auto& t, std::string_view op) {
  require(t.rank() <= 2, "shape_mismatch",
          std::string(op) + " expects rank <= 2, got " + t.shape_string());
}

template <typename Scalar>
Node<Scalar> make_node(OpKind op, std::vector<NodeId> inputs, BasicTensor<Scalar> value) {
  Node<Scalar> n;
  n.op = op;
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  return n;
}

// Accumulates `delta` into the gradient slot for node `id`, allocating zeros on first use.
template <typename Scalar>
BasicTensor<Scalar>& slot(std::vector<BasicTensor<Scalar>>& grads, const Graph<Scalar>& g, NodeId id) {
  auto& s = grads[id];
  if (s.empty()) s = BasicTensor<Scalar>(g.value(id).shape());
  return s;
}

template <typename Scalar>
constexpr Scalar kGeluC = Scalar(0.7978845608028654);  // sqrt(2/pi)

}  // namespace

// ---------------------------------------------------------------------------
// Graph

template <typename Scalar>
Var<Scalar> Graph<Scalar>::leaf(TensorT value, bool requires_grad) {
  require(value.all_finite(), "non_finite", "leaf value contains NaN or Inf");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {this, static_cast<NodeId>(nodes_.size() - 1)};
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::leaf_ref(const TensorT& value, bool requires_grad) {
  Node n;
  n.external = &value;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {this, static_cast<NodeId>(nodes_.size() - 1)};
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::record(Node node) {
  require(!consumed_, "graph_consumed", "cannot extend a graph after backward()");
  if (!node.output().all_finite()) {
    fail("non_finite", "operation " + std::string(op_name(node.op)) + " produced NaN or Inf");
  }
  for (NodeId in : node.inputs) {
    if (nodes_[in].requires_grad) {
      node.requires_grad = true;
      break;
    }
  }
  nodes_.push_back(std::move(node));
  return {this, static_cast<NodeId>(nodes_.size() - 1)};
}

template <typename Scalar>
const BasicTensor<Scalar>& Graph<Scalar>::grad(NodeId id) const {
  require(consumed_, "no_gradients", "gradients are available only after backward()");
  return grads_.at(id);
}

template <typename Scalar>
void Graph<Scalar>::backward(Var<Scalar> root) {
  require(root.graph == this, "graph_mismatch", "backward root belongs to another graph");
  require(!consumed_, "graph_consumed", "backward() already ran on this graph");
  require(value(root.id).is_scalar(), "not_scalar",
          "backward root must be a scalar, got " + value(root.id).shape_string());
  consumed_ = true;
  grads_.assign(nodes_.size(), TensorT());
  grads_[root.id] = TensorT::scalar(Scalar(1));

  for (NodeId id = root.id; id >= 0; --id) {
    const Node& n = nodes_[id];
    if (!n.requires_grad || grads_[id].empty() || n.op == OpKind::kLeaf) continue;
    const TensorT& g = grads_[id];
    const TensorT& out = n.output();
    auto needs = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
    auto in_val = [&](std::size_t k) -> const TensorT& { return value(n.inputs[k]); };
    auto in_grad = [&](std::size_t k) -> TensorT& { return slot(grads_, *this, n.inputs[k]); };

    switch (n.op) {
      case OpKind::kLeaf:
        break;
      case OpKind::kGather: {
        if (!needs(0)) break;
        TensorT& gt = in_grad(0);
        const int d = gt.cols();
        for (std::size_t i = 0; i < n.indices.size(); ++i) {
          Scalar* dst = gt.data().data() + static_cast<std::size_t>(n.indices[i]) * d;
          const Scalar* src = g.data().data() + i * d;
          for (int c = 0; c < d; ++c) dst[c] += src[c];
        }
        break;
      }
      case OpKind::kMatMul: {
        if (needs(0)) in_grad(0).mat().noalias() += g.mat() * in_val(1).mat().transpose();
        if (needs(1)) in_grad(1).mat().noalias() += in_val(0).mat().transpose() * g.mat();
        break;
      }
      case OpKind::kTranspose: {
        if (needs(0)) in_grad(0).mat() += g.mat().transpose();
        break;
      }
      case OpKind::kAdd: {
        if (needs(0)) in_grad(0).arr() += g.arr();
        if (needs(1)) in_grad(1).arr() += g.arr();
        break;
      }
      case OpKind::kAddRow: {
        if (needs(0)) in_grad(0).arr() += g.arr();
        if (needs(1)) {
          TensorT& gv = in_grad(1);
          gv.mat().row(0) += g.mat().colwise().sum();
        }
        break;
      }
      case OpKind::kMul: {
        if (needs(0)) in_grad(0).arr() += g.arr() * in_val(1).arr();
        if (needs(1)) in_grad(1).arr() += g.arr() * in_val(0).arr();
        break;
      }
      case OpKind::kScale: {
        if (needs(0)) in_grad(0).arr() += g.arr() * n.param;
        break;
      }
      case OpKind::kAddScalar: {
        if (needs(0)) in_grad(0).arr() += g.arr();
        break;
      }
      case OpKind::kLog: {
        if (needs(0)) in_grad(0).arr() += g.arr() / in_val(0).arr();
        break;
      }
      case OpKind::kPow: {
        // d/da a^p = p * a^p / a
        if (needs(0)) in_grad(0).arr() += g.arr() * n.param * out.arr() / in_val(0).arr();
        break;
      }
      case OpKind::kGelu: {
        if (!needs(0)) break;
        const auto x = in_val(0).arr();
        const Scalar c = kGeluC<Scalar>;
        const Scalar a = Scalar(0.044715);
        TensorT& gx = in_grad(0);
        auto gxa = gx.arr();
        const auto ga = g.arr();
        for (Eigen::Index i = 0; i < x.size(); ++i) {
          const Scalar xi = x[i];
          const Scalar inner = c * (xi + a * xi * xi * xi);
          const Scalar t = std::tanh(inner);
          const Scalar dinner = c * (Scalar(1) + Scalar(3) * a * xi * xi);
          const Scalar d = Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * xi * (Scalar(1) - t * t) * dinner;
          gxa[i] += ga[i] * d;
        }
        break;
      }
      case OpKind::kCausalSoftmax: {
        if (!needs(0)) break;
        const auto y = out.mat();
        const auto gy = g.mat();
        auto gs = in_grad(0).mat();
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
          const Scalar dot = (gy.row(r).array() * y.row(r).array()).sum();
          gs.row(r).array() += y.row(r).array() * (gy.row(r).array() - dot);
        }
        break;
      }
      case OpKind::kLayerNorm: {
        // saved: row-major [rows x (cols + 1)] holding x_hat and 1/std per row.
        const int rows = out.rows();
        const int cols = out.cols();
        const auto& gain = in_val(1);
        const TensorT& st = n.saved;
        const bool gx_needed = needs(0), gg_needed = needs(1), gb_needed = needs(2);
        TensorT* gx = gx_needed ? &in_grad(0) : nullptr;
        TensorT* gg = gg_needed ? &in_grad(1) : nullptr;
        TensorT* gb = gb_needed ? &in_grad(2) : nullptr;
        std::vector<Scalar> gxh(cols);
        for (int r = 0; r < rows; ++r) {
          const Scalar* xh = st.data().data() + static_cast<std::size_t>(r) * (cols + 1);
          const Scalar rstd = xh[cols];
          const Scalar* gr = g.data().data() + static_cast<std::size_t>(r) * cols;
          Scalar sum_g = 0, sum_gx = 0;
          for (int c = 0; c < cols; ++c) {
            if (gg) (*gg)[c] += gr[c] * xh[c];
            if (gb) (*gb)[c] += gr[c];
            gxh[c] = gr[c] * gain[c];
            sum_g += gxh[c];
            sum_gx += gxh[c] * xh[c];
          }
          if (gx) {
            Scalar* dst = gx->data().data() + static_cast<std::size_t>(r) * cols;
            const Scalar inv_n = Scalar(1) / Scalar(cols);
            for (int c = 0; c < cols; ++c) {
              dst[c] += rstd * (gxh[c] - inv_n * sum_g - xh[c] * inv_n * sum_gx);
            }
          }
        }
        break;
      }
      case OpKind::kCrossEntropy: {
        if (!needs(0)) break;
        // saved: softmax probabilities
        const Scalar scale_g = g[0] / Scalar(n.indices.size());
        auto gl = in_grad(0).mat();
        const auto p = n.saved.mat();
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
          gl.row(r) += p.row(r) * scale_g;
          gl(r, n.indices[r]) -= scale_g;
        }
        break;
      }
      case OpKind::kKlDivergence: {
        if (!needs(0)) break;
        // saved: [rows x (V + 1)] holding p (softmax) and per-row KL in the last column;
        // inputs[1] is the constant reference log-prob leaf.
        const auto& ref = in_val(1);
        const int rows = ref.rows();
        const int v = ref.cols();
        const Scalar scale_g = g[0] / Scalar(rows);
        TensorT& gl = in_grad(0);
        for (int r = 0; r < rows; ++r) {
          const Scalar* p = n.saved.data().data() + static_cast<std::size_t>(r) * (v + 1);
          const Scalar kl = p[v];
          const Scalar* lq = ref.data().data() + static_cast<std::size_t>(r) * v;
          Scalar* dst = gl.data().data() + static_cast<std::size_t>(r) * v;
          for (int c = 0; c < v; ++c) {
            const Scalar lp = p[c] > Scalar(0) ? std::log(p[c]) : Scalar(0);
            dst[c] += scale_g * p[c] * ((lp - lq[c]) - kl);
          }
        }
        break;
      }
      case OpKind::kSliceRows: {
        if (!needs(0)) break;
        const int begin = n.indices[0];
        const int count = out.rows();
        in_grad(0).mat().middleRows(begin, count) += g.mat();
        break;
      }
      case OpKind::kConcatRows: {
        int offset = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const int r = in_val(k).rows();
          if (needs(k)) in_grad(k).mat() += g.mat().middleRows(offset, r);
          offset += r;
        }
        break;
      }
      case OpKind::kSum: {
        if (needs(0)) in_grad(0).arr() += g[0];
        break;
      }
      case OpKind::kMean: {
        if (needs(0)) in_grad(0).arr() += g[0] / Scalar(in_val(0).size());
        break;
      }
    }
  }

  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].requires_grad && grads_[id].empty()) grads_[id] = TensorT(value(id).shape());
  }
}

// ---------------------------------------------------------------------------
// Operations

template <typename Scalar>
Var<Scalar> gather(Var<Scalar> table, std::span<const int> rows) {
  auto& g = graph_of(table);
  const auto& t = table.value();
  require(t.rank() == 2, "shape_mismatch", "gather expects a rank-2 table, got " + t.shape_string());
  require(!rows.empty(), "shape_mismatch", "gather needs at least one row index");
  BasicTensor<Scalar> out({static_cast<int>(rows.size()), t.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < t.rows(), "index_out_of_range",
            "gather index " + std::to_string(rows[i]) + " outside table of " + std::to_string(t.rows()) +
                " rows");
    out.mat().row(static_cast<Eigen::Index>(i)) = t.mat().row(rows[i]);
  }
  auto node = make_node<Scalar>(OpKind::kGather, {table.id}, std::move(out));
  node.indices.assign(rows.begin(), rows.end());
  return g.record(std::move(node));
}

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  auto& g = same_graph(a, b);
  const auto& x = a.value();
  const auto& y = b.value();
  require(x.rank() == 2 && y.rank() == 2 && x.cols() == y.rows(), "shape_mismatch",
          "matmul " + x.shape_string() + " * " + y.shape_string());
  BasicTensor<Scalar> out({x.rows(), y.cols()});
  out.mat().noalias() = x.mat() * y.mat();
  return g.record(make_node<Scalar>(OpKind::kMatMul, {a.id, b.id}, std::move(out)));
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  auto& g = graph_of(a);
  const auto& x = a.value();
  require(x.rank() == 2, "shape_mismatch", "transpose expects rank 2, got " + x.shape_string());
  BasicTensor<Scalar> out({x.cols(), x.rows()});
  out.mat() = x.mat().transpose();
  return g.record(make_node<Scalar>(OpKind::kTranspose, {a.id}, std::move(out)));
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  auto& g = same_graph(a, b);
  const auto& x = a.value();
  const auto& y = b.value();
  require(x.same_shape(y), "shape_mismatch", "add " + x.shape_string() + " + " + y.shape_string());
  BasicTensor<Scalar> out(x.shape());
  out.arr() = x.arr() + y.arr();
  return g.record(make_node<Scalar>(OpKind::kAdd, {a.id, b.id}, std::move(out)));
}

template <typename Scalar>
Var<Scalar> add_row(Var<Scalar> a, Var<Scalar> v) {
  auto& g = same_graph(a, v);
  const auto& x = a.value();
  const auto& r = v.value();
  require_matrix(x, "add_row");
  require(r.rows() == 1 && r.rank() <= 2 && r.cols() == x.cols(), "shape_mismatch",
          "add_row " + x.shape_string() + " + row " + r.shape_string());
  BasicTensor<Scalar> out(x.shape());
  out.mat() = x.mat().rowwise() + r.mat().row(0);
  return g.record(make_node<Scalar>(OpKind::kAddRow, {a.id, v.id}, std::move(out)));
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  auto& g = same_graph(a, b);
  const auto& x = a.value();
  const auto& y = b.value();
  require(x.same_shape(y), "shape_mismatch", "mul " + x.shape_string() + " * " + y.shape_string());
  BasicTensor<Scalar> out(x.shape());
  out.arr() = x.arr() * y.arr();
  return g.record(make_node<Scalar>(OpKind::kMul, {a.id, b.id}, std::move(out)));
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar factor) {
  auto& g = graph_of(a);
  BasicTensor<Scalar> out(a.value().shape());
  out.arr() = a.value().arr() * factor;
  auto node = make_node<Scalar>(OpKind::kScale, {a.id}, std::move(out));
  node.param = factor;
  return g.record(std::move(node));
}

template <typename Scalar>
Var<Scalar> add_scalar(Var<Scalar> a, Scalar c) {
  auto& g = graph_of(a);
  BasicTensor<Scalar> out(a.value().shape());
  out.arr() = a.value().arr() + c;
  auto node = make_node<Scalar>(OpKind::kAddScalar, {a.id}, std::move(out));
  node.param = c;
  return g.record(std::move(node));
}

template <typename Scalar>
Var<Scalar> log(Var<Scalar> a) {
  auto& g = graph_of(a);
  const auto& x = a.value();
  require((x.arr() > Scalar(0)).all(), "domain_error", "log of a non-positive value");
  BasicTensor<Scalar> out(x.shape());
  out.arr() = x.arr().log();
  return g.record(make_node<Scalar>(OpKind::kLog, {a.id}, std::move(out)));
}

template <typename Scalar>
Var<Scalar> pow(Var<Scalar> a, Scalar p) {
  auto& g = graph_of(a);
  const auto& x = a.value();
  require((x.arr() > Scalar(0)).all(), "domain_error", "pow of a non-positive value");
  BasicTensor<Scalar> out(x.shape());
  out.arr() = x.arr().pow(p);
  auto node = make_node<Scalar>(OpKind::kPow, {a.id}, std::move(out));
  node.param = p;
  return g.record(std::move(node));
}

template <typename Scalar>
Var<Scalar> gelu(Var<Scalar> a) {
  auto& g = graph_of(a);
  const auto& x = a.value();
  BasicTensor<Scalar> out(x.shape());
  const Scalar c = kGeluC<Scalar>;
  const auto xa = x.arr();
  auto oa = out.arr();
  for (Eigen::Index i = 0; i < xa.size(); ++i) {
    const Scalar xi = xa[i];
    oa[i] = Scalar(0.5) * xi * (Scalar(1) + std::tanh(c * (xi + Scalar(0.044715) * xi * xi * xi)));
  }
  return g.record(make_node<Scalar>(OpKind::kGelu, {a.id}, std::move(out)));
}

template <typename Scalar>
Var<Scalar> causal_softmax(Var<Scalar> scores) {
  auto& g = graph_of(scores);
  const auto& s = scores.value();
  require(s.rank() == 2 && s.cols() >= s.rows(), "shape_mismatch",
          "causal_softmax expects m x n with n >= m, got " + s.shape_string());
  const int m = s.rows();
  const int n = s.cols();
  const int offset = n - m;
  BasicTensor<Scalar> out({m, n});
  for (int r = 0; r < m; ++r) {
    const int visible = r + offset + 1;
    const auto row = s.mat().row(r).head(visible);
    const Scalar mx = row.maxCoeff();
    auto dst = out.mat().row(r).head(visible);
    dst = (row.array() - mx).exp().matrix();
    dst /= dst.sum();
  }
  return g.record(make_node<Scalar>(OpKind::kCausalSoftmax, {scores.id}, std::move(out)));
}

template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Var<Scalar> gain, Var<Scalar> bias, Scalar eps) {
  auto& g = same_graph(x, gain);
  same_graph(x, bias);
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  require_matrix(xv, "layer_norm");
  require(gv.size() == static_cast<std::size_t>(xv.cols()) && bv.size() == gv.size(), "shape_mismatch",
          "layer_norm gain/bias must match feature width " + std::to_string(xv.cols()));
  const int rows = xv.rows();
  const int cols = xv.cols();
  BasicTensor<Scalar> out(xv.shape());
  BasicTensor<Scalar> saved({rows, cols + 1});
  for (int r = 0; r < rows; ++r) {
    const Scalar* src = xv.data().data() + static_cast<std::size_t>(r) * cols;
    Scalar mu = 0;
    for (int c = 0; c < cols; ++c) mu += src[c];
    mu /= Scalar(cols);
    Scalar var = 0;
    for (int c = 0; c < cols; ++c) var += (src[c] - mu) * (src[c] - mu);
    var /= Scalar(cols);
    const Scalar rstd = Scalar(1) / std::sqrt(var + eps);
    Scalar* xh = saved.data().data() + static_cast<std::size_t>(r) * (cols + 1);
    Scalar* dst = out.data().data() + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) {
      xh[c] = (src[c] - mu) * rstd;
      dst[c] = xh[c] * gv[c] + bv[c];
    }
    xh[cols] = rstd;
  }
  auto node = make_node<Scalar>(OpKind::kLayerNorm, {x.id, gain.id, bias.id}, std::move(out));
  node.saved = std::move(saved);
  return g.record(std::move(node));
}

template <typename Scalar>
Var<Scalar> cross_entropy(Var<Scalar> logits, std::span<const int> targets) {
  auto& g = graph_of(logits);
  const auto& z = logits.value();
  require(z.rank() == 2 && static_cast<std::size_t>(z.rows()) == targets.size(), "shape_mismatch",
          "cross_entropy needs one target per logit row, got " + z.shape_string() + " and " +
              std::to_string(targets.size()) + " targets");
  BasicTensor<Scalar> probs(z.shape());
  Scalar total = 0;
  for (int r = 0; r < z.rows(); ++r) {
    const int t = targets[r];
    require(t >= 0 && t < z.cols(), "index_out_of_range", "cross_entropy target out of range");
    const auto row = z.mat().row(r);
    Eigen::Index arg = 0;
    const Scalar mx = row.maxCoeff(&arg);
    auto p = probs.mat().row(r);
    p = (row.array() - mx).exp().matrix();
    // log(denom) as log1p(rest) keeps confident predictions strictly above zero.
    p(arg) = 0;
    const Scalar rest = p.sum();
    p(arg) = 1;
    p /= Scalar(1) + rest;
    total += std::log1p(rest) + mx - row(t);
  }
  auto node = make_node<Scalar>(OpKind::kCrossEntropy, {logits.id},
                                BasicTensor<Scalar>::scalar(total / Scalar(z.rows())));
  node.saved = std::move(probs);
  node.indices.assign(targets.begin(), targets.end());
  return g.record(std::move(node));
}

template <typename Scalar>
Var<Scalar> kl_divergence(Var<Scalar> logits, const BasicTensor<Scalar>& ref_logprobs) {
  auto& g = graph_of(logits);
  const auto& z = logits.value();
  require(z.rank() == 2 && z.same_shape(ref_logprobs), "shape_mismatch",
          "kl_divergence logits " + z.shape_string() + " vs reference " + ref_logprobs.shape_string());
  const int rows = z.rows();
  const int v = z.cols();
  BasicTensor<Scalar> saved({rows, v + 1});
  Scalar total = 0;
  for (int r = 0; r < rows; ++r) {
    const auto row = z.mat().row(r);
    const Scalar mx = row.maxCoeff();
    Scalar denom = 0;
    for (int c = 0; c < v; ++c) denom += std::exp(row(c) - mx);
    const Scalar log_denom = std::log(denom);
    Scalar* p = saved.data().data() + static_cast<std::size_t>(r) * (v + 1);
    const Scalar* lq = ref_logprobs.data().data() + static_cast<std::size_t>(r) * v;
    Scalar kl = 0;
    for (int c = 0; c < v; ++c) {
      const Scalar lp = row(c) - mx - log_denom;
      p[c] = std::exp(lp);
      kl += p[c] * (lp - lq[c]);
    }
    p[v] = kl;
    total += kl;
  }
  // The reference enters the tape as a constant leaf so backward can read it.
  Var<Scalar> ref = g.leaf(ref_logprobs, false);
  auto node = make_node<Scalar>(OpKind::kKlDivergence, {logits.id, ref.id},
                                BasicTensor<Scalar>::scalar(total / Scalar(rows)));
  node.saved = std::move(saved);
  return g.record(std::move(node));
}

template <typename Scalar>
Var<Scalar> slice_rows(Var<Scalar> a, int begin, int end) {
  auto& g = graph_of(a);
  const auto& x = a.value();
  require(x.rank() == 2 && 0 <= begin && begin < end && end <= x.rows(), "shape_mismatch",
          "slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + x.shape_string());
  BasicTensor<Scalar> out({end - begin, x.cols()});
  out.mat() = x.mat().middleRows(begin, end - begin);
  auto node = make_node<Scalar>(OpKind::kSliceRows, {a.id}, std::move(out));
  node.indices = {begin, end};
  return g.record(std::move(node));
}

template <typename Scalar>
Var<Scalar> concat_rows(std::span<const Var<Scalar>> parts) {
  require(!parts.empty(), "shape_mismatch", "concat_rows needs at least one part");
  auto& g = graph_of(parts[0]);
  const int cols = parts[0].value().cols();
  int rows = 0;
  std::vector<NodeId> ids;
  for (const auto& p : parts) {
    same_graph(parts[0], p);
    const auto& v = p.value();
    require(v.rank() <= 2 && v.cols() == cols, "shape_mismatch",
            "concat_rows width mismatch: " + v.shape_string());
    rows += v.rows();
    ids.push_back(p.id);
  }
  BasicTensor<Scalar> out({rows, cols});
  int offset = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    out.mat().middleRows(offset, v.rows()) = v.mat();
    offset += v.rows();
  }
  return g.record(make_node<Scalar>(OpKind::kConcatRows, std::move(ids), std::move(out)));
}

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  auto& g = graph_of(a);
  return g.record(make_node<Scalar>(OpKind::kSum, {a.id}, BasicTensor<Scalar>::scalar(a.value().arr().sum())));
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> a) {
  auto& g = graph_of(a);
  const auto& x = a.value();
  return g.record(
      make_node<Scalar>(OpKind::kMean, {a.id}, BasicTensor<Scalar>::scalar(x.arr().sum() / Scalar(x.size()))));
}

template <typename Scalar>
BasicTensor<Scalar> log_softmax_rows(const BasicTensor<Scalar>& logits) {
  require_matrix(logits, "log_softmax_rows");
  BasicTensor<Scalar> out(logits.shape());
  for (int r = 0; r < logits.rows(); ++r) {
    const auto row = logits.mat().row(r);
    const Scalar mx = row.maxCoeff();
    Scalar denom = 0;
    for (int c = 0; c < logits.cols(); ++c) denom += std::exp(row(c) - mx);
    out.mat().row(r) = (row.array() - mx - std::log(denom)).matrix();
  }
  return out;
}

#define ULAB_INSTANTIATE_AUTODIFF(S)                                                              \
  template class Graph<S>;                                                                        \
  template Var<S> gather<S>(Var<S>, std::span<const int>);                                        \
  template Var<S> matmul<S>(Var<S>, Var<S>);                                                      \
  template Var<S> transpose<S>(Var<S>);                                                           \
  template Var<S> add<S>(Var<S>, Var<S>);                                                         \
  template Var<S> add_row<S>(Var<S>, Var<S>);                                                     \
  template Var<S> mul<S>(Var<S>, Var<S>);                                                         \
  template Var<S> scale<S>(Var<S>, S);                                                            \
  template Var<S> add_scalar<S>(Var<S>, S);                                                       \
  template Var<S> log<S>(Var<S>);                                                                 \
  template Var<S> pow<S>(Var<S>, S);                                                              \
  template Var<S> gelu<S>(Var<S>);                                                                \
  template Var<S> causal_softmax<S>(Var<S>);                                                      \
  template Var<S> layer_norm<S>(Var<S>, Var<S>, Var<S>, S);                                       \
  template Var<S> cross_entropy<S>(Var<S>, std::span<const int>);                                 \
  template Var<S> kl_divergence<S>(Var<S>, const BasicTensor<S>&);                                \
  template Var<S> slice_rows<S>(Var<S>, int, int);                                                \
  template Var<S> concat_rows<S>(std::span<const Var<S>>);                                        \
  template Var<S> sum<S>(Var<S>);                                                                 \
  template Var<S> mean<S>(Var<S>);                                                                \
  template BasicTensor<S> log_softmax_rows<S>(const BasicTensor<S>&);

ULAB_INSTANTIATE_AUTODIFF(float)
ULAB_INSTANTIATE_AUTODIFF(double)

}  // namespace ulab
