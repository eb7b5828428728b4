#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "imnav/nn/optim.hpp"

namespace imnav::nn {

// Orthogonal init: QR of a square Gaussian matrix, sign-fixed by the R
// diagonal, truncated to the target shape, scaled by gain.
inline void init_orthogonal(Tensor& w, double gain, Rng& rng) {
  const int rows = w.dims[0], cols = w.dims[1];
  const int n = std::max(rows, cols);
  Eigen::MatrixXd a(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) a(r, c) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  Eigen::MatrixXd rmat = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int c = 0; c < n; ++c)
    if (rmat(c, c) < 0.0) q.col(c) *= -1.0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) w.at(r, c) = gain * q(r, c);
}

inline void init_fan_in_uniform(Tensor& w, int fan_in, Rng& rng) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& x : w.v) x = rng.uniform(-limit, limit);
}

// Fully connected layer, y = x W + b with W: [in, out].
struct Dense {
  Param* W = nullptr;
  Param* b = nullptr;

  Dense() = default;
  Dense(ParamStore& store, const std::string& name, int in, int out, double gain, Rng& rng) {
    W = &store.create(name + "/W", {in, out});
    b = &store.create(name + "/b", {1, out});
    init_orthogonal(W->value, gain, rng);
  }

  Var forward(Tape& t, Var x) const { return t.add(t.matmul(x, t.param(*W)), t.param(*b)); }
};

// 3x3-style convolution wrapper around Tape::conv2d. W: [F, C, KH, KW].
struct Conv2d {
  Param* W = nullptr;
  Param* b = nullptr;
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, int in_ch, int out_ch, int kernel,
         int stride_, int pad_, Rng& rng)
      : stride(stride_), pad(pad_) {
    W = &store.create(name + "/W", {out_ch, in_ch, kernel, kernel});
    b = &store.create(name + "/b", {1, out_ch});
    init_fan_in_uniform(W->value, in_ch * kernel * kernel, rng);
  }

  Var forward(Tape& t, Var x) const { return t.conv2d(x, t.param(*W), t.param(*b), stride, pad); }
};

// Gated recurrent unit cell, gate order (reset, update, candidate):
//   r = sigmoid(x Wi_r + bi_r + h Wh_r + bh_r)
//   z = sigmoid(x Wi_z + bi_z + h Wh_z + bh_z)
//   n = tanh(x Wi_n + bi_n + r * (h Wh_n + bh_n))
//   h' = (1 - z) * n + z * h
struct GruCell {
  Param* Wi = nullptr;  // [in, 3H]
  Param* Wh = nullptr;  // [H, 3H]
  Param* bi = nullptr;  // [1, 3H]
  Param* bh = nullptr;  // [1, 3H]
  int hidden = 0;

  GruCell() = default;
  GruCell(ParamStore& store, const std::string& name, int in, int hidden_, Rng& rng)
      : hidden(hidden_) {
    Wi = &store.create(name + "/Wi", {in, 3 * hidden});
    Wh = &store.create(name + "/Wh", {hidden, 3 * hidden});
    bi = &store.create(name + "/bi", {1, 3 * hidden});
    bh = &store.create(name + "/bh", {1, 3 * hidden});
    init_orthogonal(Wi->value, 1.0, rng);
    init_orthogonal(Wh->value, 1.0, rng);
  }

  Var forward(Tape& t, Var x, Var h) const {
    const int H = hidden;
    Var gi = t.add(t.matmul(x, t.param(*Wi)), t.param(*bi));  // [m, 3H]
    Var gh = t.add(t.matmul(h, t.param(*Wh)), t.param(*bh));
    Var r = t.sigmoid(t.add(t.slice_cols(gi, 0, H), t.slice_cols(gh, 0, H)));
    Var z = t.sigmoid(t.add(t.slice_cols(gi, H, H), t.slice_cols(gh, H, H)));
    Var n = t.tanh_(t.add(t.slice_cols(gi, 2 * H, H), t.mul(r, t.slice_cols(gh, 2 * H, H))));
    Var one_minus_z = t.add_scalar(t.neg(z), 1.0);
    return t.add(t.mul(one_minus_z, n), t.mul(z, h));
  }
};

}  // namespace imnav::nn
