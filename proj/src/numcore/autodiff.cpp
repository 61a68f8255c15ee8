// SPDX-License-Identifier: Apache-2.0
#include "cpl/numcore/autodiff.hpp"

#include <cmath>
#include <numbers>

#include "cpl/common/error.hpp"
#include "cpl/numcore/ops.hpp"

namespace cpl::num {

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }
bool Var::has_grad() const { return tape_->has_grad(id_); }

Var Tape::leaf(Tensor value) {
  require(value.all_finite(), ErrorCode::non_finite, "leaf value contains NaN or Inf");
  nodes_.push_back(Node{std::move(value), {}, true, "leaf", {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  require(value.all_finite(), ErrorCode::non_finite, "constant value contains NaN or Inf");
  nodes_.push_back(Node{std::move(value), {}, false, "constant", {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn backward, const char* rule) {
  if (!value.all_finite()) {
    raise(ErrorCode::non_finite, std::string("op '") + rule + "' produced NaN or Inf at tape node " +
                                     std::to_string(nodes_.size()));
  }
  bool tracked = false;
  for (const Var& p : parents) {
    require(p.tape() == this, ErrorCode::contract, std::string("op '") + rule + "' mixes tapes");
    tracked = tracked || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, tracked, rule, tracked ? std::move(backward) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  require(!n.grad.empty(), ErrorCode::contract,
          std::string("no gradient reached node ") + std::to_string(id) + " (" + n.rule + ")");
  return n.grad;
}

void Tape::accumulate(Var target, const Tensor& contribution) {
  Node& n = nodes_[target.id()];
  if (!n.requires_grad) return;
  require(contribution.numel() == n.value.numel(), ErrorCode::dimension,
          std::string("gradient shape mismatch at ") + n.rule);
  if (n.grad.empty()) {
    n.grad = contribution.reshaped(n.value.shape());
    return;
  }
  auto dst = n.grad.data();
  auto src = contribution.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var root) {
  require(root.tape() == this, ErrorCode::contract, "backward root belongs to another tape");
  require(nodes_[root.id()].value.numel() == 1, ErrorCode::contract, "backward root must be a scalar");
  for (Node& n : nodes_) n.grad = Tensor();
  if (!nodes_[root.id()].requires_grad) return;
  nodes_[root.id()].grad = Tensor(nodes_[root.id()].value.shape(), 1.0);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    if (!n.grad.all_finite()) {
      raise(ErrorCode::non_finite, std::string("gradient became NaN or Inf at op '") + n.rule + "'");
    }
    // Copy: the rule may accumulate into nodes_ while reading its own grad.
    const Tensor g = n.grad;
    n.backward(*this, g);
  }
}

namespace {

Tape& tape_of(Var v) {
  require(v.valid(), ErrorCode::contract, "operation on an unbound Var");
  return *v.tape();
}

Tensor map(const Tensor& x, auto&& fn) {
  Tensor out = x;
  for (double& v : out.data()) v = fn(v);
  return out;
}

Tensor zip(const Tensor& a, const Tensor& b, auto&& fn) {
  require(a.numel() == b.numel(), ErrorCode::dimension,
          "elementwise op on " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  Tensor out = a;
  auto bd = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = fn(od[i], bd[i]);
  return out;
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  require(a.same_shape(b), ErrorCode::dimension,
          std::string(op) + " shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  const Var parents[] = {a, b};
  return t.record(
      matmul(a.value(), b.value()), parents,
      [a, b](Tape& tp, const Tensor& g) {
        if (a.requires_grad()) tp.accumulate(a, matmul(g, transpose(b.value())));
        if (b.requires_grad()) tp.accumulate(b, matmul(transpose(a.value()), g));
      },
      "matmul");
}

Var transpose(Var a) {
  const Var parents[] = {a};
  return tape_of(a).record(
      transpose(a.value()), parents, [a](Tape& tp, const Tensor& g) { tp.accumulate(a, transpose(g)); },
      "transpose");
}

Var add(Var a, Var b) {
  require_same(a.value(), b.value(), "add");
  const Var parents[] = {a, b};
  return tape_of(a).record(
      zip(a.value(), b.value(), [](double x, double y) { return x + y; }), parents,
      [a, b](Tape& tp, const Tensor& g) {
        tp.accumulate(a, g);
        tp.accumulate(b, g);
      },
      "add");
}

Var sub(Var a, Var b) {
  require_same(a.value(), b.value(), "sub");
  const Var parents[] = {a, b};
  return tape_of(a).record(
      zip(a.value(), b.value(), [](double x, double y) { return x - y; }), parents,
      [a, b](Tape& tp, const Tensor& g) {
        tp.accumulate(a, g);
        tp.accumulate(b, map(g, [](double v) { return -v; }));
      },
      "sub");
}

Var mul(Var a, Var b) {
  require_same(a.value(), b.value(), "mul");
  const Var parents[] = {a, b};
  return tape_of(a).record(
      zip(a.value(), b.value(), [](double x, double y) { return x * y; }), parents,
      [a, b](Tape& tp, const Tensor& g) {
        auto times = [](double x, double y) { return x * y; };
        if (a.requires_grad()) tp.accumulate(a, zip(g, b.value(), times));
        if (b.requires_grad()) tp.accumulate(b, zip(g, a.value(), times));
      },
      "mul");
}

Var add_row(Var m, Var row) {
  const Tensor& mv = m.value();
  const Tensor& rv = row.value();
  require(rv.numel() == mv.cols(), ErrorCode::dimension,
          "add_row: row of " + std::to_string(rv.numel()) + " values for " + std::to_string(mv.cols()) +
              " columns");
  Tensor out = mv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto dst = out.row(r);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += rv[j];
  }
  const Var parents[] = {m, row};
  return tape_of(m).record(
      std::move(out), parents,
      [m, row](Tape& tp, const Tensor& g) {
        tp.accumulate(m, g);
        if (row.requires_grad()) {
          Tensor col_sum(row.value().shape());
          for (std::size_t r = 0; r < g.rows(); ++r) {
            auto src = g.row(r);
            for (std::size_t j = 0; j < src.size(); ++j) col_sum[j] += src[j];
          }
          tp.accumulate(row, col_sum);
        }
      },
      "add_row");
}

Var scale(Var x, double factor) {
  const Var parents[] = {x};
  return tape_of(x).record(
      map(x.value(), [factor](double v) { return v * factor; }), parents,
      [x, factor](Tape& tp, const Tensor& g) {
        tp.accumulate(x, map(g, [factor](double v) { return v * factor; }));
      },
      "scale");
}

Var scale_by(Var x, Var factor) {
  require(factor.value().numel() == 1, ErrorCode::dimension, "scale_by factor must hold one value");
  const double s = factor.value()[0];
  const Var parents[] = {x, factor};
  return tape_of(x).record(
      map(x.value(), [s](double v) { return v * s; }), parents,
      [x, factor, s](Tape& tp, const Tensor& g) {
        if (x.requires_grad()) tp.accumulate(x, map(g, [s](double v) { return v * s; }));
        if (factor.requires_grad()) {
          tp.accumulate(factor, Tensor::scalar(dot(g.data(), x.value().data())));
        }
      },
      "scale_by");
}

Var softmax_rows(Var x) {
  Tensor y = softmax_rows(x.value());
  const Var parents[] = {x};
  Tape& t = tape_of(x);
  const std::size_t out_id = t.size();
  return t.record(
      std::move(y), parents,
      [x, out_id](Tape& tp, const Tensor& g) {
        const Tensor& yv = tp.value(out_id);
        Tensor dx = g;
        for (std::size_t r = 0; r < dx.rows(); ++r) {
          auto gy = g.row(r);
          auto yr = yv.row(r);
          const double inner = dot(gy, yr);
          auto dr = dx.row(r);
          for (std::size_t j = 0; j < dr.size(); ++j) dr[j] = yr[j] * (gy[j] - inner);
        }
        tp.accumulate(x, dx);
      },
      "softmax_rows");
}

Var log_softmax_rows(Var x) {
  const Var parents[] = {x};
  return tape_of(x).record(
      log_softmax_rows(x.value()), parents,
      [x](Tape& tp, const Tensor& g) {
        const Tensor p = softmax_rows(x.value());
        Tensor dx = g;
        for (std::size_t r = 0; r < dx.rows(); ++r) {
          auto gr = g.row(r);
          double total = 0.0;
          for (double v : gr) total += v;
          auto pr = p.row(r);
          auto dr = dx.row(r);
          for (std::size_t j = 0; j < dr.size(); ++j) dr[j] = gr[j] - pr[j] * total;
        }
        tp.accumulate(x, dx);
      },
      "log_softmax_rows");
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  const std::size_t d = xv.cols();
  Tensor y = layer_norm(xv, gain.value(), bias.value(), eps);
  // Normalized activations and inverse deviations, kept for the backward rule.
  Tensor xhat = xv;
  std::vector<double> inv_sigma(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto v = xhat.row(r);
    double mu = 0.0;
    for (double e : v) mu += e;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double e : v) var += (e - mu) * (e - mu);
    var /= static_cast<double>(d);
    inv_sigma[r] = 1.0 / std::sqrt(var + eps);
    for (double& e : v) e = (e - mu) * inv_sigma[r];
  }
  const Var parents[] = {x, gain, bias};
  return tape_of(x).record(
      std::move(y), parents,
      [x, gain, bias, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma), d](Tape& tp, const Tensor& g) {
        const Tensor& gv = gain.value();
        Tensor dgain(gv.shape());
        Tensor dbias(gv.shape());
        Tensor dx(x.value().shape());
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto gr = g.row(r);
          auto hr = xhat.row(r);
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dgain[j] += gr[j] * hr[j];
            dbias[j] += gr[j];
            const double dh = gr[j] * gv[j];
            mean_dh += dh;
            mean_dh_h += dh * hr[j];
          }
          mean_dh /= static_cast<double>(d);
          mean_dh_h /= static_cast<double>(d);
          auto dr = dx.row(r);
          for (std::size_t j = 0; j < d; ++j) {
            dr[j] = inv_sigma[r] * (gr[j] * gv[j] - mean_dh - hr[j] * mean_dh_h);
          }
        }
        tp.accumulate(x, dx);
        tp.accumulate(gain, dgain);
        tp.accumulate(bias, dbias);
      },
      "layer_norm");
}

Var l2_normalize_rows(Var x) {
  const Tensor& xv = x.value();
  Tensor y = l2_normalize(xv);
  std::vector<double> norms(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) norms[r] = norm(xv.row(r));
  const Var parents[] = {x};
  Tape& t = tape_of(x);
  const std::size_t out_id = t.size();
  return t.record(
      std::move(y), parents,
      [x, out_id, norms = std::move(norms)](Tape& tp, const Tensor& g) {
        const Tensor& yv = tp.value(out_id);
        Tensor dx = g;
        for (std::size_t r = 0; r < dx.rows(); ++r) {
          auto gr = g.row(r);
          auto yr = yv.row(r);
          const double inner = dot(gr, yr);
          auto dr = dx.row(r);
          for (std::size_t j = 0; j < dr.size(); ++j) dr[j] = (gr[j] - yr[j] * inner) / norms[r];
        }
        tp.accumulate(x, dx);
      },
      "l2_normalize_rows");
}

Var gelu(Var x) {
  const Var parents[] = {x};
  return tape_of(x).record(
      map(x.value(),
          [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); }),
      parents,
      [x](Tape& tp, const Tensor& g) {
        Tensor dx = x.value();
        auto gd = g.data();
        auto dd = dx.data();
        for (std::size_t i = 0; i < dd.size(); ++i) {
          const double v = dd[i];
          const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
          const double deriv =
              0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
          dd[i] = gd[i] * deriv;
        }
        tp.accumulate(x, dx);
      },
      "gelu");
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  const Var parents[] = {x};
  return tape_of(x).record(
      Tensor::scalar(total), parents,
      [x](Tape& tp, const Tensor& g) { tp.accumulate(x, Tensor(x.value().shape(), g[0])); }, "sum");
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

Var element(Var x, std::size_t index) {
  require(index < x.value().numel(), ErrorCode::dimension,
          "element index " + std::to_string(index) + " out of range");
  const Var parents[] = {x};
  return tape_of(x).record(
      Tensor::scalar(x.value()[index]), parents,
      [x, index](Tape& tp, const Tensor& g) {
        Tensor dx(x.value().shape());
        dx[index] = g[0];
        tp.accumulate(x, dx);
      },
      "element");
}

Var stack_rows(std::span<const Var> rows) {
  require(!rows.empty(), ErrorCode::dimension, "stack_rows needs at least one row");
  const std::size_t c = rows.front().value().numel();
  std::vector<double> data;
  data.reserve(rows.size() * c);
  for (const Var& r : rows) {
    require(r.value().numel() == c, ErrorCode::dimension, "stack_rows: rows differ in length");
    auto d = r.value().data();
    data.insert(data.end(), d.begin(), d.end());
  }
  std::vector<Var> parents(rows.begin(), rows.end());
  Tape& t = tape_of(rows.front());
  return t.record(
      Tensor({rows.size(), c}, std::move(data)), parents,
      [parents](Tape& tp, const Tensor& g) {
        for (std::size_t i = 0; i < parents.size(); ++i) {
          if (!parents[i].requires_grad()) continue;
          auto src = g.row(i);
          tp.accumulate(parents[i], Tensor(parents[i].value().shape(), std::vector<double>(src.begin(), src.end())));
        }
      },
      "stack_rows");
}

Var add_all(std::span<const Var> terms) {
  require(!terms.empty(), ErrorCode::dimension, "add_all needs at least one term");
  Tensor total = terms.front().value();
  for (std::size_t i = 1; i < terms.size(); ++i) {
    require_same(total, terms[i].value(), "add_all");
    auto dst = total.data();
    auto src = terms[i].value().data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
  std::vector<Var> parents(terms.begin(), terms.end());
  return tape_of(terms.front())
      .record(
          std::move(total), parents,
          [parents](Tape& tp, const Tensor& g) {
            for (const Var& p : parents) tp.accumulate(p, g);
          },
          "add_all");
}

}  // namespace cpl::num
