#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "imnav/nn/tensor.hpp"

namespace imnav::nn {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape, accumulated across backward passes until zeroed

  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor::zeros(value.dims);
  }
  int64_t size() const { return value.size(); }
};

struct Var {
  int i = -1;
  bool valid() const { return i >= 0; }
};

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Reverse-mode tape. Nodes are created in topological order by the op builders
// below; backward() replays them in reverse and accumulates leaf gradients into
// the bound Param objects. A tape built with recording=false stores values only.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) { nodes_.reserve(256); }

  bool recording() const { return recording_; }

  Var input(Tensor v) { return push(std::move(v), false, nullptr); }
  Var constant(double value) { return input(Tensor::scalar(value)); }

  // Gradient-tracked input that is not a parameter; read its gradient with
  // grad() after backward().
  Var tracked_input(Tensor v) { return push(std::move(v), true, nullptr); }

  Var param(Param& p) {
    Var v = push(p.value, recording_, nullptr);
    nodes_[v.i].param = recording_ ? &p : nullptr;
    return v;
  }

  const Tensor& val(Var v) const { return nodes_[v.i].val; }
  Tensor& grad(Var v) { return ensure_grad(v.i); }
  bool requires_grad(Var v) const { return nodes_[v.i].requires_grad; }
  size_t num_nodes() const { return nodes_.size(); }

  void backward(Var loss) {
    if (!recording_) throw Error("Tape::backward on non-recording tape");
    Node& ln = nodes_[loss.i];
    if (ln.val.size() != 1) throw Error("Tape::backward: loss must be scalar");
    if (!std::isfinite(ln.val[0])) throw Error("Tape::backward: non-finite loss value");
    if (!ln.requires_grad) return;
    ensure_grad(loss.i)[0] = 1.0;
    for (int i = loss.i; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.back) n.back(*this);
      if (n.param) {
        for (int64_t k = 0; k < n.grad.size(); ++k) n.param->grad[k] += n.grad[k];
      }
    }
  }

  // ---- elementwise binary ops (b may broadcast: scalar, row or column) ----

  Var add(Var a, Var b) { return binary(a, b, BinOp::Add); }
  Var sub(Var a, Var b) { return binary(a, b, BinOp::Sub); }
  Var mul(Var a, Var b) { return binary(a, b, BinOp::Mul); }
  Var div(Var a, Var b) { return binary(a, b, BinOp::Div); }

  Var neg(Var a) { return mul_scalar(a, -1.0); }

  Var add_scalar(Var a, double c) {
    Tensor out = val(a);
    for (auto& x : out.v) x += c;
    return unary(a, std::move(out), [](double, double, double g) { return g; });
  }
  Var mul_scalar(Var a, double c) {
    Tensor out = val(a);
    for (auto& x : out.v) x *= c;
    return unary(a, std::move(out), [c](double, double, double g) { return g * c; });
  }

  // ---- elementwise unary ----

  Var relu(Var a) {
    Tensor out = val(a);
    for (auto& x : out.v) x = x > 0.0 ? x : 0.0;
    return unary(a, std::move(out),
                 [](double x, double, double g) { return x > 0.0 ? g : 0.0; });
  }
  // x * sigmoid(x); smooth, so finite-difference checks hold tightly.
  Var silu(Var a) {
    Tensor out = val(a);
    for (auto& x : out.v) x = x * sigmoid_scalar(x);
    return unary(a, std::move(out), [](double x, double, double g) {
      const double s = sigmoid_scalar(x);
      return g * (s + x * s * (1.0 - s));
    });
  }
  Var tanh_(Var a) {
    Tensor out = val(a);
    for (auto& x : out.v) x = std::tanh(x);
    return unary(a, std::move(out),
                 [](double, double y, double g) { return g * (1.0 - y * y); });
  }
  Var sigmoid(Var a) {
    Tensor out = val(a);
    for (auto& x : out.v) x = sigmoid_scalar(x);
    return unary(a, std::move(out),
                 [](double, double y, double g) { return g * y * (1.0 - y); });
  }
  Var exp_(Var a) {
    Tensor out = val(a);
    for (auto& x : out.v) x = std::exp(x);
    return unary(a, std::move(out), [](double, double y, double g) { return g * y; });
  }
  Var log_(Var a) {
    Tensor out = val(a);
    for (auto& x : out.v) x = std::log(x);
    return unary(a, std::move(out), [](double x, double, double g) { return g / x; });
  }
  Var square(Var a) {
    Tensor out = val(a);
    for (auto& x : out.v) x = x * x;
    return unary(a, std::move(out), [](double x, double, double g) { return g * 2.0 * x; });
  }
  Var softplus(Var a) {
    Tensor out = val(a);
    for (auto& x : out.v) x = softplus_scalar(x);
    return unary(a, std::move(out),
                 [](double x, double, double g) { return g * sigmoid_scalar(x); });
  }
  Var clamp(Var a, double lo, double hi) {
    Tensor out = val(a);
    for (auto& x : out.v) x = std::min(std::max(x, lo), hi);
    return unary(a, std::move(out), [lo, hi](double x, double, double g) {
      return (x > lo && x < hi) ? g : 0.0;
    });
  }

  Var detach(Var a) { return push(val(a), false, nullptr); }

  // ---- shape ops ----

  Var reshape(Var a, std::vector<int> dims) {
    Tensor out(std::move(dims), val(a).v);
    Var r = push(std::move(out), requires_grad(a), nullptr);
    if (node(r).requires_grad) {
      node(r).back = [a, r](Tape& t) {
        Tensor& g = t.node(r).grad;
        Tensor& ga = t.ensure_grad(a.i);
        for (int64_t k = 0; k < g.size(); ++k) ga[k] += g[k];
      };
    }
    return r;
  }

  Var slice_cols(Var a, int start, int len) {
    const Tensor& x = val(a);
    const int m = x.rows(), n = x.cols();
    Tensor out({m, len});
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < len; ++c) out.at(r, c) = x.at(r, start + c);
    Var v = push(std::move(out), requires_grad(a), nullptr);
    if (node(v).requires_grad) {
      node(v).back = [a, v, start, len, m](Tape& t) {
        Tensor& g = t.node(v).grad;
        Tensor& ga = t.ensure_grad(a.i);
        for (int r = 0; r < m; ++r)
          for (int c = 0; c < len; ++c) ga.at(r, start + c) += g.at(r, c);
      };
    }
    return v;
  }

  // Contiguous row slice of a 2-D tensor.
  Var slice_rows(Var a, int start, int len) {
    const Tensor& x = val(a);
    const int n = x.cols();
    Tensor out({len, n});
    std::copy(x.v.begin() + static_cast<size_t>(start) * n,
              x.v.begin() + static_cast<size_t>(start + len) * n, out.v.begin());
    Var v = push(std::move(out), requires_grad(a), nullptr);
    if (node(v).requires_grad) {
      node(v).back = [a, v, start, len, n](Tape& t) {
        const Tensor& g = t.node(v).grad;
        Tensor& ga = t.ensure_grad(a.i);
        for (int64_t k = 0; k < g.size(); ++k)
          ga[static_cast<int64_t>(start) * n + k] += g[k];
      };
    }
    return v;
  }

  // Stacks 2-D tensors with equal column counts on top of each other.
  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw Error("concat_rows: empty input");
    const int n = val(parts[0]).cols();
    int rows = 0;
    bool rg = false;
    for (Var p : parts) {
      if (val(p).cols() != n) throw Error("concat_rows: column mismatch");
      rows += val(p).rows();
      rg = rg || requires_grad(p);
    }
    Tensor out({rows, n});
    int64_t off = 0;
    for (Var p : parts) {
      const Tensor& x = val(p);
      std::copy(x.v.begin(), x.v.end(), out.v.begin() + off);
      off += x.size();
    }
    Var v = push(std::move(out), recording_ && rg, nullptr);
    if (node(v).requires_grad) {
      std::vector<Var> ps = parts;
      node(v).back = [ps, v](Tape& t) {
        const Tensor& g = t.node(v).grad;
        int64_t off2 = 0;
        for (Var p : ps) {
          const int64_t sz = t.val(p).size();
          if (t.requires_grad(p)) {
            Tensor& gp = t.ensure_grad(p.i);
            for (int64_t k = 0; k < sz; ++k) gp[k] += g[off2 + k];
          }
          off2 += sz;
        }
      };
    }
    return v;
  }

  Var concat_cols(Var a, Var b) {
    const Tensor& xa = val(a);
    const Tensor& xb = val(b);
    if (xa.rows() != xb.rows()) throw Error("concat_cols: row mismatch");
    const int m = xa.rows(), na = xa.cols(), nb = xb.cols();
    Tensor out({m, na + nb});
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < na; ++c) out.at(r, c) = xa.at(r, c);
      for (int c = 0; c < nb; ++c) out.at(r, na + c) = xb.at(r, c);
    }
    bool rg = recording_ && (requires_grad(a) || requires_grad(b));
    Var v = push(std::move(out), rg, nullptr);
    if (rg) {
      node(v).back = [a, b, v, m, na, nb](Tape& t) {
        Tensor& g = t.node(v).grad;
        if (t.requires_grad(a)) {
          Tensor& ga = t.ensure_grad(a.i);
          for (int r = 0; r < m; ++r)
            for (int c = 0; c < na; ++c) ga.at(r, c) += g.at(r, c);
        }
        if (t.requires_grad(b)) {
          Tensor& gb = t.ensure_grad(b.i);
          for (int r = 0; r < m; ++r)
            for (int c = 0; c < nb; ++c) gb.at(r, c) += g.at(r, na + c);
        }
      };
    }
    return v;
  }

  // ---- reductions ----

  Var row_sum(Var a) {
    const Tensor& x = val(a);
    const int m = x.rows(), n = x.cols();
    Tensor out({m, 1});
    for (int r = 0; r < m; ++r) {
      double s = 0.0;
      for (int c = 0; c < n; ++c) s += x.at(r, c);
      out.at(r, 0) = s;
    }
    Var v = push(std::move(out), requires_grad(a), nullptr);
    if (node(v).requires_grad) {
      node(v).back = [a, v, m, n](Tape& t) {
        Tensor& g = t.node(v).grad;
        Tensor& ga = t.ensure_grad(a.i);
        for (int r = 0; r < m; ++r)
          for (int c = 0; c < n; ++c) ga.at(r, c) += g.at(r, 0);
      };
    }
    return v;
  }

  Var sum_all(Var a) {
    const Tensor& x = val(a);
    double s = 0.0;
    for (double e : x.v) s += e;
    Var v = push(Tensor::scalar(s), requires_grad(a), nullptr);
    if (node(v).requires_grad) {
      node(v).back = [a, v](Tape& t) {
        const double g = t.node(v).grad[0];
        Tensor& ga = t.ensure_grad(a.i);
        for (int64_t k = 0; k < ga.size(); ++k) ga[k] += g;
      };
    }
    return v;
  }

  Var mean_all(Var a) { return mul_scalar(sum_all(a), 1.0 / static_cast<double>(val(a).size())); }

  Var log_softmax_rows(Var a) {
    const Tensor& x = val(a);
    const int m = x.rows(), n = x.cols();
    Tensor out({m, n});
    for (int r = 0; r < m; ++r) {
      double mx = x.at(r, 0);
      for (int c = 1; c < n; ++c) mx = std::max(mx, x.at(r, c));
      double lse = 0.0;
      for (int c = 0; c < n; ++c) lse += std::exp(x.at(r, c) - mx);
      lse = mx + std::log(lse);
      for (int c = 0; c < n; ++c) out.at(r, c) = x.at(r, c) - lse;
    }
    Var v = push(std::move(out), requires_grad(a), nullptr);
    if (node(v).requires_grad) {
      node(v).back = [a, v, m, n](Tape& t) {
        const Tensor& y = t.val(v);
        Tensor& g = t.node(v).grad;
        Tensor& ga = t.ensure_grad(a.i);
        for (int r = 0; r < m; ++r) {
          double gs = 0.0;
          for (int c = 0; c < n; ++c) gs += g.at(r, c);
          for (int c = 0; c < n; ++c) ga.at(r, c) += g.at(r, c) - std::exp(y.at(r, c)) * gs;
        }
      };
    }
    return v;
  }

  // Elementwise min; gradient follows the smaller operand (ties go to a).
  Var min_elem(Var a, Var b) {
    const Tensor& xa = val(a);
    const Tensor& xb = val(b);
    if (!xa.same_shape(xb)) throw Error("min_elem: shape mismatch");
    Tensor out = xa;
    for (int64_t k = 0; k < out.size(); ++k) out[k] = std::min(xa[k], xb[k]);
    bool rg = recording_ && (requires_grad(a) || requires_grad(b));
    Var v = push(std::move(out), rg, nullptr);
    if (rg) {
      node(v).back = [a, b, v](Tape& t) {
        const Tensor& xa2 = t.val(a);
        const Tensor& xb2 = t.val(b);
        Tensor& g = t.node(v).grad;
        if (t.requires_grad(a)) {
          Tensor& ga = t.ensure_grad(a.i);
          for (int64_t k = 0; k < g.size(); ++k)
            if (xa2[k] <= xb2[k]) ga[k] += g[k];
        }
        if (t.requires_grad(b)) {
          Tensor& gb = t.ensure_grad(b.i);
          for (int64_t k = 0; k < g.size(); ++k)
            if (xa2[k] > xb2[k]) gb[k] += g[k];
        }
      };
    }
    return v;
  }

  // ---- linear algebra ----

  Var matmul(Var a, Var b) {
    const Tensor& xa = val(a);
    const Tensor& xb = val(b);
    if (xa.cols() != xb.rows()) throw Error("matmul: inner dim mismatch");
    const int m = xa.rows(), k = xa.cols(), n = xb.cols();
    Tensor out({m, n});
    {
      CMatMap A(xa.v.data(), m, k), B(xb.v.data(), k, n);
      MatMap C(out.v.data(), m, n);
      C.noalias() = A * B;
    }
    bool rg = recording_ && (requires_grad(a) || requires_grad(b));
    Var v = push(std::move(out), rg, nullptr);
    if (rg) {
      node(v).back = [a, b, v, m, k, n](Tape& t) {
        CMatMap G(t.node(v).grad.v.data(), m, n);
        if (t.requires_grad(a)) {
          CMatMap B(t.val(b).v.data(), k, n);
          MatMap GA(t.ensure_grad(a.i).v.data(), m, k);
          GA.noalias() += G * B.transpose();
        }
        if (t.requires_grad(b)) {
          CMatMap A(t.val(a).v.data(), m, k);
          MatMap GB(t.ensure_grad(b.i).v.data(), k, n);
          GB.noalias() += A.transpose() * G;
        }
      };
    }
    return v;
  }

  // x: [N,C,H,W], w: [F,C,KH,KW], bias: [F] (as [1,F]); same-geometry output
  // [N,F,OH,OW]. Uses im2col + GEMM in sample blocks; the column matrix is
  // rebuilt in backward instead of stored.
  Var conv2d(Var x, Var w, Var bias, int stride, int pad) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    if (xv.rank() != 4 || wv.rank() != 4) throw Error("conv2d: expects 4-d input and kernel");
    ConvGeom gm;
    gm.N = xv.dims[0];
    gm.C = xv.dims[1];
    gm.H = xv.dims[2];
    gm.W = xv.dims[3];
    gm.F = wv.dims[0];
    gm.KH = wv.dims[2];
    gm.KW = wv.dims[3];
    gm.stride = stride;
    gm.pad = pad;
    if (wv.dims[1] != gm.C) throw Error("conv2d: channel mismatch");
    gm.OH = (gm.H + 2 * pad - gm.KH) / stride + 1;
    gm.OW = (gm.W + 2 * pad - gm.KW) / stride + 1;

    Tensor out({gm.N, gm.F, gm.OH, gm.OW});
    const Tensor& bv = val(bias);
    conv_forward(xv, wv, bv, gm, out);

    bool rg = recording_ && (requires_grad(x) || requires_grad(w) || requires_grad(bias));
    Var v = push(std::move(out), rg, nullptr);
    if (rg) {
      node(v).back = [x, w, bias, v, gm](Tape& t) { conv_backward(t, x, w, bias, v, gm); };
    }
    return v;
  }

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    bool requires_grad = false;
    Param* param = nullptr;
    std::function<void(Tape&)> back;
  };

  struct ConvGeom {
    int N, C, H, W, F, KH, KW, OH, OW, stride, pad;
  };

  enum class BinOp { Add, Sub, Mul, Div };
  enum class Bcast { Same, Scalar, Row, Col };

  std::vector<Node> nodes_;
  bool recording_;

  Node& node(Var v) { return nodes_[v.i]; }

  static double sigmoid_scalar(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  static double softplus_scalar(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
  }

  Var push(Tensor val, bool requires_grad, Param* p) {
    Node n;
    n.val = std::move(val);
    n.requires_grad = recording_ && requires_grad;
    n.param = p;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Tensor& ensure_grad(int i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) n.grad = Tensor::zeros(n.val.dims);
    return n.grad;
  }

  template <typename Fn>
  Var unary(Var a, Tensor out, Fn dfn) {
    Var v = push(std::move(out), requires_grad(a), nullptr);
    if (node(v).requires_grad) {
      node(v).back = [a, v, dfn](Tape& t) {
        if (!t.requires_grad(a)) return;
        const Tensor& x = t.val(a);
        const Tensor& y = t.val(v);
        const Tensor& g = t.node(v).grad;
        Tensor& ga = t.ensure_grad(a.i);
        for (int64_t k = 0; k < g.size(); ++k) ga[k] += dfn(x[k], y[k], g[k]);
      };
    }
    return v;
  }

  static Bcast bcast_kind(const Tensor& a, const Tensor& b) {
    if (a.same_shape(b)) return Bcast::Same;
    if (b.size() == 1) return Bcast::Scalar;
    if (a.rank() == 2 && b.rank() == 2) {
      if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::Row;
      if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::Col;
    }
    throw Error("binary op: incompatible shapes " + a.shape_str() + " vs " + b.shape_str());
  }

  // Index of the b element paired with flat index k of a.
  static int64_t bindex(Bcast bc, int64_t k, int cols) {
    switch (bc) {
      case Bcast::Same: return k;
      case Bcast::Scalar: return 0;
      case Bcast::Row: return k % cols;
      case Bcast::Col: return k / cols;
    }
    return 0;
  }

  Var binary(Var a, Var b, BinOp op) {
    const Tensor& xa = val(a);
    const Tensor& xb = val(b);
    const Bcast bc = bcast_kind(xa, xb);
    const int cols = xa.rank() == 2 ? xa.cols() : 1;
    Tensor out = xa;
    for (int64_t k = 0; k < out.size(); ++k) {
      const double bv = xb[bindex(bc, k, cols)];
      switch (op) {
        case BinOp::Add: out[k] = xa[k] + bv; break;
        case BinOp::Sub: out[k] = xa[k] - bv; break;
        case BinOp::Mul: out[k] = xa[k] * bv; break;
        case BinOp::Div: out[k] = xa[k] / bv; break;
      }
    }
    bool rg = recording_ && (requires_grad(a) || requires_grad(b));
    Var v = push(std::move(out), rg, nullptr);
    if (rg) {
      node(v).back = [a, b, v, op, bc, cols](Tape& t) {
        const Tensor& xa2 = t.val(a);
        const Tensor& xb2 = t.val(b);
        const Tensor& g = t.node(v).grad;
        if (t.requires_grad(a)) {
          Tensor& ga = t.ensure_grad(a.i);
          for (int64_t k = 0; k < g.size(); ++k) {
            const double bv = xb2[bindex(bc, k, cols)];
            switch (op) {
              case BinOp::Add:
              case BinOp::Sub: ga[k] += g[k]; break;
              case BinOp::Mul: ga[k] += g[k] * bv; break;
              case BinOp::Div: ga[k] += g[k] / bv; break;
            }
          }
        }
        if (t.requires_grad(b)) {
          Tensor& gb = t.ensure_grad(b.i);
          for (int64_t k = 0; k < g.size(); ++k) {
            const int64_t j = bindex(bc, k, cols);
            const double bv = xb2[j];
            switch (op) {
              case BinOp::Add: gb[j] += g[k]; break;
              case BinOp::Sub: gb[j] -= g[k]; break;
              case BinOp::Mul: gb[j] += g[k] * xa2[k]; break;
              case BinOp::Div: gb[j] -= g[k] * xa2[k] / (bv * bv); break;
            }
          }
        }
      };
    }
    return v;
  }

  // im2col for samples [n0, n1): writes [ (n1-n0)*OH*OW, C*KH*KW ].
  static void im2col(const Tensor& x, const ConvGeom& g, int n0, int n1, std::vector<double>& col) {
    const int P = g.OH * g.OW, CK = g.C * g.KH * g.KW;
    col.assign(static_cast<size_t>(n1 - n0) * P * CK, 0.0);
    for (int n = n0; n < n1; ++n) {
      const double* xin = x.v.data() + static_cast<size_t>(n) * g.C * g.H * g.W;
      double* crow = col.data() + static_cast<size_t>(n - n0) * P * CK;
      for (int oh = 0; oh < g.OH; ++oh) {
        for (int ow = 0; ow < g.OW; ++ow) {
          double* dst = crow + static_cast<size_t>(oh * g.OW + ow) * CK;
          for (int c = 0; c < g.C; ++c) {
            for (int kh = 0; kh < g.KH; ++kh) {
              const int ih = oh * g.stride - g.pad + kh;
              for (int kw = 0; kw < g.KW; ++kw) {
                const int iw = ow * g.stride - g.pad + kw;
                double value = 0.0;
                if (ih >= 0 && ih < g.H && iw >= 0 && iw < g.W)
                  value = xin[(static_cast<size_t>(c) * g.H + ih) * g.W + iw];
                *dst++ = value;
              }
            }
          }
        }
      }
    }
  }

  static constexpr int kConvBlock = 64;

  static void conv_forward(const Tensor& x, const Tensor& w, const Tensor& b, const ConvGeom& g,
                           Tensor& out) {
    const int P = g.OH * g.OW, CK = g.C * g.KH * g.KW;
    std::vector<double> col;
    CMatMap W(w.v.data(), g.F, CK);
    for (int n0 = 0; n0 < g.N; n0 += kConvBlock) {
      const int n1 = std::min(n0 + kConvBlock, g.N);
      im2col(x, g, n0, n1, col);
      CMatMap Col(col.data(), static_cast<int64_t>(n1 - n0) * P, CK);
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> Out =
          Col * W.transpose();  // [(n1-n0)*P, F]
      for (int n = n0; n < n1; ++n) {
        double* optr = out.v.data() + static_cast<size_t>(n) * g.F * P;
        const double* omat = Out.data() + static_cast<size_t>(n - n0) * P * g.F;
        for (int p = 0; p < P; ++p)
          for (int f = 0; f < g.F; ++f) optr[static_cast<size_t>(f) * P + p] = omat[static_cast<size_t>(p) * g.F + f] + b.v[f];
      }
    }
  }

  static void conv_backward(Tape& t, Var x, Var w, Var bias, Var v, const ConvGeom& g) {
    const Tensor& gout = t.node(v).grad;
    const int P = g.OH * g.OW, CK = g.C * g.KH * g.KW;
    const bool need_dx = t.requires_grad(x);
    const bool need_dw = t.requires_grad(w);
    const bool need_db = t.requires_grad(bias);

    if (need_db) {
      Tensor& gb = t.ensure_grad(bias.i);
      for (int n = 0; n < g.N; ++n) {
        const double* gp = gout.v.data() + static_cast<size_t>(n) * g.F * P;
        for (int f = 0; f < g.F; ++f) {
          double s = 0.0;
          for (int p = 0; p < P; ++p) s += gp[static_cast<size_t>(f) * P + p];
          gb[f] += s;
        }
      }
    }
    if (!need_dx && !need_dw) return;

    std::vector<double> col, gmat, dcol;
    CMatMap W(t.val(w).v.data(), g.F, CK);
    for (int n0 = 0; n0 < g.N; n0 += kConvBlock) {
      const int n1 = std::min(n0 + kConvBlock, g.N);
      const int bs = n1 - n0;
      // Gather grad as [bs*P, F].
      gmat.resize(static_cast<size_t>(bs) * P * g.F);
      for (int n = n0; n < n1; ++n) {
        const double* gp = gout.v.data() + static_cast<size_t>(n) * g.F * P;
        double* dst = gmat.data() + static_cast<size_t>(n - n0) * P * g.F;
        for (int p = 0; p < P; ++p)
          for (int f = 0; f < g.F; ++f) dst[static_cast<size_t>(p) * g.F + f] = gp[static_cast<size_t>(f) * P + p];
      }
      CMatMap G(gmat.data(), static_cast<int64_t>(bs) * P, g.F);
      if (need_dw) {
        im2col(t.val(x), g, n0, n1, col);
        CMatMap Col(col.data(), static_cast<int64_t>(bs) * P, CK);
        MatMap GW(t.ensure_grad(w.i).v.data(), g.F, CK);
        GW.noalias() += G.transpose() * Col;
      }
      if (need_dx) {
        dcol.resize(static_cast<size_t>(bs) * P * CK);
        MatMap DCol(dcol.data(), static_cast<int64_t>(bs) * P, CK);
        DCol.noalias() = G * W;
        Tensor& gx = t.ensure_grad(x.i);
        // col2im scatter-add
        for (int n = n0; n < n1; ++n) {
          double* xg = gx.v.data() + static_cast<size_t>(n) * g.C * g.H * g.W;
          const double* crow = dcol.data() + static_cast<size_t>(n - n0) * P * CK;
          for (int oh = 0; oh < g.OH; ++oh) {
            for (int ow = 0; ow < g.OW; ++ow) {
              const double* src = crow + static_cast<size_t>(oh * g.OW + ow) * CK;
              for (int c = 0; c < g.C; ++c) {
                for (int kh = 0; kh < g.KH; ++kh) {
                  const int ih = oh * g.stride - g.pad + kh;
                  for (int kw = 0; kw < g.KW; ++kw) {
                    const int iw = ow * g.stride - g.pad + kw;
                    if (ih >= 0 && ih < g.H && iw >= 0 && iw < g.W)
                      xg[(static_cast<size_t>(c) * g.H + ih) * g.W + iw] += *src;
                    ++src;
                  }
                }
              }
            }
          }
        }
      }
    }
  }
};

}  // namespace imnav::nn
