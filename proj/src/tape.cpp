#include "drex/tape.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "drex/errors.hpp"

namespace drex {

int Tape::push(Tensor value, bool needs_grad, std::function<void()> back, Parameter* bound) {
  Node n;
  n.value = std::move(value);
  n.back = std::move(back);
  n.bound = bound;
  n.needs = needs_grad;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::check(Var v, const char* op) const {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
    throw ValidationError(std::string(op) + ": invalid tape variable");
}

Tensor& Tape::grad_of(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Tensor::zeros(n.value.shape);
  return n.grad;
}

Tape::Var Tape::constant(Tensor v) { return {push(std::move(v), false, nullptr)}; }

Tape::Var Tape::param(Parameter& p) {
  auto it = param_cache_.find(&p);
  if (it != param_cache_.end()) return {it->second};
  int id = push(p.value, true, nullptr, &p);
  param_cache_.emplace(&p, id);
  return {id};
}

const Tensor& Tape::value(Var v) const {
  check(v, "value");
  return nodes_[v.id].value;
}

double Tape::scalar(Var v) const {
  const Tensor& t = value(v);
  if (t.size() != 1) throw DimensionError("scalar: tensor has size " + std::to_string(t.size()));
  return t.data[0];
}

Tape::Var Tape::add(Var a, Var b) {
  check(a, "add");
  check(b, "add");
  const Tensor &ta = nodes_[a.id].value, &tb = nodes_[b.id].value;
  Tensor out = drex::add(ta, tb);
  bool ng = needs(a) || needs(b);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, a, b] {
      const Tensor& g = nodes_[id].grad;
      if (needs(a)) {
        Tensor& ga = grad_of(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
      }
      if (needs(b)) {
        Tensor& gb = grad_of(b.id);
        for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i];
      }
    };
  return {id};
}

Tape::Var Tape::sub(Var a, Var b) {
  check(a, "sub");
  check(b, "sub");
  Tensor out = drex::sub(nodes_[a.id].value, nodes_[b.id].value);
  bool ng = needs(a) || needs(b);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, a, b] {
      const Tensor& g = nodes_[id].grad;
      if (needs(a)) {
        Tensor& ga = grad_of(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
      }
      if (needs(b)) {
        Tensor& gb = grad_of(b.id);
        for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] -= g.data[i];
      }
    };
  return {id};
}

Tape::Var Tape::mul(Var a, Var b) {
  check(a, "mul");
  check(b, "mul");
  Tensor out = drex::mul(nodes_[a.id].value, nodes_[b.id].value);
  bool ng = needs(a) || needs(b);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, a, b] {
      const Tensor& g = nodes_[id].grad;
      const Tensor& va = nodes_[a.id].value;
      const Tensor& vb = nodes_[b.id].value;
      if (needs(a)) {
        Tensor& ga = grad_of(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * vb.data[i];
      }
      if (needs(b)) {
        Tensor& gb = grad_of(b.id);
        for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * va.data[i];
      }
    };
  return {id};
}

Tape::Var Tape::scale(Var a, double c) {
  check(a, "scale");
  Tensor out = drex::scale(nodes_[a.id].value, c);
  bool ng = needs(a);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, a, c] {
      const Tensor& g = nodes_[id].grad;
      Tensor& ga = grad_of(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += c * g.data[i];
    };
  return {id};
}

Tape::Var Tape::add_n(const std::vector<Var>& xs) {
  if (xs.empty()) throw DimensionError("add_n: empty operand list");
  Var acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

Tape::Var Tape::matmul(Var a, Var b) {
  check(a, "matmul");
  check(b, "matmul");
  Tensor out = drex::matmul(nodes_[a.id].value, nodes_[b.id].value);
  bool ng = needs(a) || needs(b);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, a, b] {
      const Tensor& g = nodes_[id].grad;  // [m x p]
      const Tensor& va = nodes_[a.id].value;
      const Tensor& vb = nodes_[b.id].value;
      std::size_t m = va.rows(), n = va.cols(), p = vb.cols();
      if (needs(a)) {
        Tensor& ga = grad_of(a.id);  // += g * b^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t k = 0; k < n; ++k) {
            const double* grow = g.data.data() + i * p;
            const double* brow = vb.data.data() + k * p;
            ga.data[i * n + k] += detail::dot_span(grow, brow, p);
          }
      }
      if (needs(b)) {
        Tensor& gb = grad_of(b.id);  // += a^T * g
        for (std::size_t k = 0; k < n; ++k)
          for (std::size_t i = 0; i < m; ++i) {
            double av = va.data[i * n + k];
            if (av == 0.0) continue;
            const double* grow = g.data.data() + i * p;
            double* brow = gb.data.data() + k * p;
            for (std::size_t j = 0; j < p; ++j) brow[j] += av * grow[j];
          }
      }
    };
  return {id};
}

Tape::Var Tape::matvec(Var m, Var x) {
  check(m, "matvec");
  check(x, "matvec");
  Tensor out = drex::matvec(nodes_[m.id].value, nodes_[x.id].value);
  bool ng = needs(m) || needs(x);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, m, x] {
      const Tensor& g = nodes_[id].grad;  // [r]
      const Tensor& vm = nodes_[m.id].value;
      const Tensor& vx = nodes_[x.id].value;
      std::size_t r = vm.rows(), c = vm.cols();
      if (needs(m)) {
        Tensor& gm = grad_of(m.id);
        for (std::size_t i = 0; i < r; ++i) {
          double gi = g.data[i];
          if (gi == 0.0) continue;
          double* row = gm.data.data() + i * c;
          for (std::size_t j = 0; j < c; ++j) row[j] += gi * vx.data[j];
        }
      }
      if (needs(x)) {
        Tensor& gx = grad_of(x.id);
        for (std::size_t i = 0; i < r; ++i) {
          double gi = g.data[i];
          if (gi == 0.0) continue;
          const double* row = vm.data.data() + i * c;
          for (std::size_t j = 0; j < c; ++j) gx.data[j] += gi * row[j];
        }
      }
    };
  return {id};
}

Tape::Var Tape::dot(Var a, Var b) {
  check(a, "dot");
  check(b, "dot");
  double out = drex::dot(nodes_[a.id].value, nodes_[b.id].value);
  bool ng = needs(a) || needs(b);
  int id = push(Tensor::scalar(out), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, a, b] {
      double g = nodes_[id].grad.data[0];
      const Tensor& va = nodes_[a.id].value;
      const Tensor& vb = nodes_[b.id].value;
      if (needs(a)) {
        Tensor& ga = grad_of(a.id);
        for (std::size_t i = 0; i < va.size(); ++i) ga.data[i] += g * vb.data[i];
      }
      if (needs(b)) {
        Tensor& gb = grad_of(b.id);
        for (std::size_t i = 0; i < vb.size(); ++i) gb.data[i] += g * va.data[i];
      }
    };
  return {id};
}

Tape::Var Tape::concat(const std::vector<Var>& xs) {
  if (xs.empty()) throw DimensionError("concat: empty operand list");
  std::vector<const Tensor*> parts;
  bool ng = false;
  for (Var v : xs) {
    check(v, "concat");
    parts.push_back(&nodes_[v.id].value);
    ng = ng || needs(v);
  }
  Tensor out = drex::concat(parts);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, xs] {
      const Tensor& g = nodes_[id].grad;
      std::size_t off = 0;
      for (Var v : xs) {
        std::size_t n = nodes_[v.id].value.size();
        if (needs(v)) {
          Tensor& gv = grad_of(v.id);
          for (std::size_t i = 0; i < n; ++i) gv.data[i] += g.data[off + i];
        }
        off += n;
      }
    };
  return {id};
}

Tape::Var Tape::slice(Var a, std::size_t offset, std::size_t len) {
  check(a, "slice");
  const Tensor& va = nodes_[a.id].value;
  if (va.rank() != 1 || offset + len > va.size())
    throw DimensionError("slice: out of range for shape " + va.shape_str());
  Tensor out = Tensor::zeros({len});
  std::copy(va.data.begin() + offset, va.data.begin() + offset + len, out.data.begin());
  bool ng = needs(a);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, a, offset, len] {
      const Tensor& g = nodes_[id].grad;
      Tensor& ga = grad_of(a.id);
      for (std::size_t i = 0; i < len; ++i) ga.data[offset + i] += g.data[i];
    };
  return {id};
}

Tape::Var Tape::tanh(Var a) {
  check(a, "tanh");
  Tensor out = nodes_[a.id].value;
  for (double& v : out.data) v = std::tanh(v);
  bool ng = needs(a);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, a] {
      const Tensor& g = nodes_[id].grad;
      const Tensor& y = nodes_[id].value;
      Tensor& ga = grad_of(a.id);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
    };
  return {id};
}

Tape::Var Tape::sigmoid(Var a) {
  check(a, "sigmoid");
  Tensor out = nodes_[a.id].value;
  for (double& v : out.data) v = detail::sigmoid_scalar(v);
  bool ng = needs(a);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, a] {
      const Tensor& g = nodes_[id].grad;
      const Tensor& y = nodes_[id].value;
      Tensor& ga = grad_of(a.id);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
    };
  return {id};
}

Tape::Var Tape::hinge(Var a) {
  check(a, "hinge");
  Tensor out = nodes_[a.id].value;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  bool ng = needs(a);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, a] {
      const Tensor& g = nodes_[id].grad;
      const Tensor& x = nodes_[a.id].value;
      Tensor& ga = grad_of(a.id);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x.data[i] > 0.0) ga.data[i] += g.data[i];
    };
  return {id};
}

Tape::Var Tape::log(Var a) {
  check(a, "log");
  Tensor out = nodes_[a.id].value;
  for (double& v : out.data) {
    if (v <= 0.0) throw NumericError("log: non-positive input");
    v = std::log(v);
  }
  bool ng = needs(a);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, a] {
      const Tensor& g = nodes_[id].grad;
      const Tensor& x = nodes_[a.id].value;
      Tensor& ga = grad_of(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] / x.data[i];
    };
  return {id};
}

Tape::Var Tape::log_sigmoid(Var a) {
  check(a, "log_sigmoid");
  Tensor out = nodes_[a.id].value;
  for (double& v : out.data) v = -detail::softplus_scalar(-v);
  bool ng = needs(a);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, a] {
      const Tensor& g = nodes_[id].grad;
      const Tensor& x = nodes_[a.id].value;
      Tensor& ga = grad_of(a.id);
      // d/dx log(sigmoid(x)) = sigmoid(-x)
      for (std::size_t i = 0; i < g.size(); ++i)
        ga.data[i] += g.data[i] * detail::sigmoid_scalar(-x.data[i]);
    };
  return {id};
}

Tape::Var Tape::softmax(Var a) {
  check(a, "softmax");
  const Tensor& va = nodes_[a.id].value;
  if (va.rank() != 1) throw DimensionError("softmax: expects rank-1, got " + va.shape_str());
  Tensor out = activate(va, Activation::SoftmaxLastAxis);
  bool ng = needs(a);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, a] {
      const Tensor& g = nodes_[id].grad;
      const Tensor& y = nodes_[id].value;
      Tensor& ga = grad_of(a.id);
      double gy = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) gy += g.data[i] * y.data[i];
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += y.data[i] * (g.data[i] - gy);
    };
  return {id};
}

Tape::Var Tape::pick(Var a, std::size_t index) {
  check(a, "pick");
  const Tensor& va = nodes_[a.id].value;
  if (index >= va.size()) throw DimensionError("pick: index out of range");
  bool ng = needs(a);
  int id = push(Tensor::scalar(va.data[index]), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, a, index] {
      grad_of(a.id).data[index] += nodes_[id].grad.data[0];
    };
  return {id};
}

Tape::Var Tape::sum(Var a) {
  check(a, "sum");
  const Tensor& va = nodes_[a.id].value;
  double acc = 0.0;
  for (double v : va.data) acc += v;
  bool ng = needs(a);
  int id = push(Tensor::scalar(acc), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, a] {
      double g = nodes_[id].grad.data[0];
      Tensor& ga = grad_of(a.id);
      for (double& v : ga.data) v += g;
    };
  return {id};
}

Tape::Var Tape::mean(Var a) {
  check(a, "mean");
  std::size_t n = nodes_[a.id].value.size();
  if (n == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Tape::Var Tape::dropout(Var a, double rate, Rng& rng) {
  check(a, "dropout");
  if (rate < 0.0 || rate >= 1.0) throw SpecError("dropout: rate must be in [0, 1)");
  const Tensor& va = nodes_[a.id].value;
  Tensor mask = Tensor::zeros(va.shape);
  double keep = 1.0 - rate;
  for (double& m : mask.data) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
  Tensor out = drex::mul(va, mask);
  bool ng = needs(a);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, a, mask = std::move(mask)] {
      const Tensor& g = nodes_[id].grad;
      Tensor& ga = grad_of(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * mask.data[i];
    };
  return {id};
}

Tape::Var Tape::gather_rows(Var table, std::vector<std::size_t> rows) {
  check(table, "gather_rows");
  const Tensor& vt = nodes_[table.id].value;
  std::size_t dim = vt.cols();
  Tensor out = Tensor::zeros({rows.size(), dim});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= vt.rows()) throw DimensionError("gather_rows: row index out of range");
    std::copy(vt.data.begin() + rows[i] * dim, vt.data.begin() + (rows[i] + 1) * dim,
              out.data.begin() + i * dim);
  }
  bool ng = needs(table);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, table, rows = std::move(rows), dim] {
      const Tensor& g = nodes_[id].grad;
      Tensor& gt = grad_of(table.id);
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < dim; ++j) gt.data[rows[i] * dim + j] += g.data[i * dim + j];
    };
  return {id};
}

Tape::Var Tape::token_matrix(const Tensor& word_rows, Var pos_table,
                             std::vector<std::size_t> head_idx, std::vector<std::size_t> tail_idx) {
  check(pos_table, "token_matrix");
  const Tensor& pt = nodes_[pos_table.id].value;
  std::size_t n = word_rows.rows();
  std::size_t dw = word_rows.cols();
  std::size_t dp = pt.cols();
  if (head_idx.size() != n || tail_idx.size() != n)
    throw DimensionError("token_matrix: index count does not match token count");
  Tensor out = Tensor::zeros({n, dw + 2 * dp});
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.data.data() + i * (dw + 2 * dp);
    std::copy(word_rows.data.begin() + i * dw, word_rows.data.begin() + (i + 1) * dw, row);
    if (head_idx[i] >= pt.rows() || tail_idx[i] >= pt.rows())
      throw DimensionError("token_matrix: position index out of range");
    std::copy(pt.data.begin() + head_idx[i] * dp, pt.data.begin() + (head_idx[i] + 1) * dp,
              row + dw);
    std::copy(pt.data.begin() + tail_idx[i] * dp, pt.data.begin() + (tail_idx[i] + 1) * dp,
              row + dw + dp);
  }
  bool ng = needs(pos_table);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, pos_table, head_idx = std::move(head_idx),
                       tail_idx = std::move(tail_idx), dw, dp] {
      const Tensor& g = nodes_[id].grad;
      Tensor& gp = grad_of(pos_table.id);
      std::size_t width = dw + 2 * dp;
      for (std::size_t i = 0; i < head_idx.size(); ++i) {
        const double* grow = g.data.data() + i * width;
        for (std::size_t j = 0; j < dp; ++j) {
          gp.data[head_idx[i] * dp + j] += grow[dw + j];
          gp.data[tail_idx[i] * dp + j] += grow[dw + dp + j];
        }
      }
    };
  return {id};
}

Tape::Var Tape::conv_valid(Var x, Var filters, Var bias, int window) {
  check(x, "conv_valid");
  check(filters, "conv_valid");
  check(bias, "conv_valid");
  const Tensor& vx = nodes_[x.id].value;
  const Tensor& vf = nodes_[filters.id].value;
  const Tensor& vb = nodes_[bias.id].value;
  Tensor out = conv_valid_forward(vx, vf, vb, window);
  std::size_t w = vx.cols();
  std::size_t k = vf.rows();
  std::size_t fw = static_cast<std::size_t>(window) * w;
  std::size_t m = vx.rows() - static_cast<std::size_t>(window) + 1;
  bool ng = needs(x) || needs(filters) || needs(bias);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, x, filters, bias, w, fw, m, k] {
      const Tensor& g = nodes_[id].grad;  // [k x m]
      const Tensor& vx2 = nodes_[x.id].value;
      const Tensor& vf2 = nodes_[filters.id].value;
      if (needs(bias)) {
        Tensor& gb = grad_of(bias.id);
        for (std::size_t j = 0; j < k; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < m; ++i) acc += g.data[j * m + i];
          gb.data[j] += acc;
        }
      }
      if (needs(filters)) {
        Tensor& gf = grad_of(filters.id);
        for (std::size_t j = 0; j < k; ++j) {
          double* frow = gf.data.data() + j * fw;
          for (std::size_t i = 0; i < m; ++i) {
            double gv = g.data[j * m + i];
            if (gv == 0.0) continue;
            const double* seg = vx2.data.data() + i * w;
            for (std::size_t t = 0; t < fw; ++t) frow[t] += gv * seg[t];
          }
        }
      }
      if (needs(x)) {
        Tensor& gx = grad_of(x.id);
        for (std::size_t j = 0; j < k; ++j) {
          const double* frow = vf2.data.data() + j * fw;
          for (std::size_t i = 0; i < m; ++i) {
            double gv = g.data[j * m + i];
            if (gv == 0.0) continue;
            double* seg = gx.data.data() + i * w;
            for (std::size_t t = 0; t < fw; ++t) seg[t] += gv * frow[t];
          }
        }
      }
    };
  return {id};
}

Tape::Var Tape::piecewise_max(Var levels, int p1, int p2) {
  check(levels, "piecewise_max");
  const Tensor& vl = nodes_[levels.id].value;
  std::size_t k = vl.rows(), m = vl.cols();
  if (m == 0) throw DimensionError("piecewise_max: empty input");

  // Boundary rule: clamp the two split columns into [1, m-1] and keep
  // them ordered; degenerate widths fall back to the nearest non-empty
  // column range so the output stays total.
  long lm = static_cast<long>(m);
  long b1 = std::clamp<long>(p1, 1, std::max<long>(1, lm - 1));
  long b2 = std::clamp<long>(p2, 1, std::max<long>(1, lm - 1));
  if (b2 <= b1) b2 = std::min<long>(b1 + 1, std::max<long>(1, lm - 1));
  if (b2 <= b1) b1 = std::max<long>(1, b2 - 1);
  struct Range {
    std::size_t lo, hi;
  };
  auto fix = [&](long lo, long hi) -> Range {
    if (lo >= hi) {
      long col = std::clamp<long>(lo - 1, 0, lm - 1);
      return {static_cast<std::size_t>(col), static_cast<std::size_t>(col) + 1};
    }
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
  };
  std::array<Range, 3> segs = {fix(0, b1), fix(b1, b2), fix(b2, lm)};

  Tensor out = Tensor::zeros({3 * k});
  std::vector<std::size_t> argmax(3 * k);
  for (std::size_t j = 0; j < k; ++j) {
    const double* row = vl.data.data() + j * m;
    for (std::size_t s = 0; s < 3; ++s) {
      std::size_t best = segs[s].lo;
      double bv = row[best];
      for (std::size_t i = segs[s].lo + 1; i < segs[s].hi; ++i)
        if (row[i] > bv) {  // strict: ties keep the earliest column
          bv = row[i];
          best = i;
        }
      out.data[j * 3 + s] = bv;
      argmax[j * 3 + s] = best;
    }
  }
  bool ng = needs(levels);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].back = [this, id, levels, argmax = std::move(argmax), m, k] {
      const Tensor& g = nodes_[id].grad;
      Tensor& gl = grad_of(levels.id);
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t s = 0; s < 3; ++s)
          gl.data[j * m + argmax[j * 3 + s]] += g.data[j * 3 + s];
    };
  return {id};
}

void Tape::backward(Var root) {
  check(root, "backward");
  const Tensor& rv = nodes_[root.id].value;
  if (rv.size() != 1) throw DimensionError("backward: root must be scalar");
  ensure_finite(rv, "backward root");
  if (!nodes_[root.id].needs) return;  // nothing trainable upstream
  grad_of(root.id).data[0] = 1.0;
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs || n.grad.size() == 0) continue;
    if (n.back) n.back();
    if (n.bound) {
      Tensor& pg = n.bound->grad;
      for (std::size_t j = 0; j < pg.size(); ++j) pg.data[j] += n.grad.data[j];
    }
  }
}

void Tape::clear() {
  nodes_.clear();
  param_cache_.clear();
}

}  // namespace drex
