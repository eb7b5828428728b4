#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "imnav/nn/layers.hpp"
#include "oracles.hpp"

using namespace imnav;
using namespace imnav::nn;
namespace fs = std::filesystem;

namespace {

Tensor random_tensor(std::vector<int> dims, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(dims));
  for (auto& x : t.v) x = scale * rng.normal();
  return t;
}

std::string read_file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("scalar chain rule: d(x^2)/dx = 2x") {
  ParamStore store;
  Param& x = store.create("x", {1, 1});
  x.value[0] = 3.0;
  Tape t;
  Var loss = t.square(t.param(x));
  t.backward(loss);
  CHECK(t.val(loss).item() == 9.0);
  CHECK(x.grad[0] == 6.0);
}

TEST_CASE("linear map: grad of sum(A x) is column sums of A") {
  Rng rng(7);
  ParamStore store;
  Param& x = store.create("x", {3, 1});
  for (int k = 0; k < 3; ++k) x.value[k] = rng.normal();
  Tensor a = random_tensor({4, 3}, rng);
  Tape t;
  Var loss = t.sum_all(t.matmul(t.input(a), t.param(x)));
  t.backward(loss);
  for (int c = 0; c < 3; ++c) {
    double col_sum = 0.0;
    for (int r = 0; r < 4; ++r) col_sum += a.at(r, c);
    CHECK(x.grad[c] == Catch::Approx(col_sum).epsilon(1e-12));
  }
}

TEST_CASE("three-layer dense net matches finite differences") {
  Rng rng(11);
  ParamStore store;
  Dense l1(store, "l1", 4, 8, std::sqrt(2.0), rng);
  Dense l2(store, "l2", 8, 8, std::sqrt(2.0), rng);
  Dense l3(store, "l3", 8, 3, 1.0, rng);
  Tensor in = random_tensor({5, 4}, rng);
  Tensor target = random_tensor({5, 3}, rng);

  auto loss_fn = [&](bool with_grad) {
    Tape t(with_grad);
    Var h = t.tanh_(l1.forward(t, t.input(in)));
    h = t.tanh_(l2.forward(t, h));
    Var out = l3.forward(t, h);
    Var loss = t.mean_all(t.square(t.sub(out, t.input(target))));
    if (with_grad) t.backward(loss);
    return t.val(loss).item();
  };
  auto res = test::check_gradients(store.all(), loss_fn, 1e-4);
  INFO("worst: " << res.worst_param << " rel err " << res.max_rel_err);
  CHECK(res.checked == store.total_size());
  CHECK(res.ok(1e-4));
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(13);
  ParamStore store;
  Conv2d conv(store, "conv", 2, 3, 3, 2, 1, rng);
  Tensor in = random_tensor({2, 2, 6, 8}, rng);

  auto loss_fn = [&](bool with_grad) {
    Tape t(with_grad);
    Var out = t.relu(conv.forward(t, t.input(in)));
    Var loss = t.mean_all(t.square(out));
    if (with_grad) t.backward(loss);
    return t.val(loss).item();
  };
  auto res = test::check_gradients(store.all(), loss_fn, 1e-4);
  INFO("worst: " << res.worst_param << " rel err " << res.max_rel_err);
  CHECK(res.ok(1e-4));
}

TEST_CASE("conv2d input gradient matches finite differences") {
  Rng rng(17);
  ParamStore store;
  Conv2d conv(store, "conv", 2, 2, 3, 2, 1, rng);
  Param& in = store.create("in", {1, 2, 4, 6});
  for (auto& x : in.value.v) x = rng.normal();

  auto loss_fn = [&](bool with_grad) {
    Tape t(with_grad);
    Var out = conv.forward(t, t.param(in));
    Var loss = t.sum_all(t.square(out));
    if (with_grad) t.backward(loss);
    return t.val(loss).item();
  };
  auto res = test::check_gradients({&in}, loss_fn, 1e-4);
  CHECK(res.ok(1e-4));
}

TEST_CASE("broadcast, reductions and misc op gradients") {
  Rng rng(19);
  ParamStore store;
  Param& a = store.create("a", {3, 4});
  Param& row = store.create("row", {1, 4});
  Param& col = store.create("col", {3, 1});
  Param& s = store.create("s", {1, 1});
  for (auto* p : store.all())
    for (auto& x : p->value.v) x = 0.5 + 0.2 * rng.normal();

  auto loss_fn = [&](bool with_grad) {
    Tape t(with_grad);
    Var va = t.param(a);
    Var x = t.add(va, t.param(row));
    x = t.mul(x, t.param(col));
    x = t.div(x, t.param(s));
    x = t.softplus(x);
    x = t.clamp(x, -2.0, 2.0);
    Var lsm = t.log_softmax_rows(x);
    Var m = t.min_elem(x, t.mul_scalar(va, 0.8));
    Var loss = t.add(t.mean_all(lsm), t.mean_all(t.square(m)));
    loss = t.add(loss, t.mean_all(t.row_sum(t.sigmoid(x))));
    if (with_grad) t.backward(loss);
    return t.val(loss).item();
  };
  auto res = test::check_gradients(store.all(), loss_fn, 1e-5);
  INFO("worst: " << res.worst_param << " rel err " << res.max_rel_err);
  CHECK(res.ok(1e-4));
}

TEST_CASE("detach blocks gradient flow") {
  ParamStore store;
  Param& x = store.create("x", {1, 1});
  x.value[0] = 2.0;

  SECTION("detach(x)*x has gradient x") {
    Tape t;
    Var vx = t.param(x);
    Var loss = t.mul(t.detach(vx), vx);
    t.backward(loss);
    CHECK(x.grad[0] == 2.0);
  }
  SECTION("detach(x)^2 has zero gradient") {
    Tape t;
    Var loss = t.square(t.detach(t.param(x)));
    t.backward(loss);
    CHECK(x.grad[0] == 0.0);
  }
}

TEST_CASE("KL with detached first argument sends no gradient into its producer") {
  // Mirrors the consistency-loss pattern: p from net1 (detached), q from net2.
  // Detach semantics define the gradient as that of the loss with the target
  // frozen at its current value, so the finite-difference oracle evaluates the
  // frozen-target loss while autodiff runs the real detached graph.
  Rng rng(23);
  ParamStore store;
  Dense net_p(store, "netp", 3, 2, 1.0, rng);
  Dense net_q(store, "netq", 3, 2, 1.0, rng);
  Param& log_std = store.create("log_std", {1, 2});
  Tensor in = random_tensor({4, 3}, rng);

  // Target values captured once at the current parameters.
  Tensor frozen_target;
  {
    Tape t(false);
    frozen_target = t.val(net_p.forward(t, t.input(in)));
  }

  auto build_loss = [&](Tape& t, Var mu_p) {
    Var mu_q = net_q.forward(t, t.input(in));
    Var ls = t.param(log_std);
    // KL(N(mu_p, s) || N(mu_q, s)) summed: (mu_p - mu_q)^2 / (2 s^2)
    Var var_q = t.exp_(t.mul_scalar(ls, 2.0));
    Var kl = t.div(t.square(t.sub(mu_p, mu_q)), t.mul_scalar(var_q, 2.0));
    return t.mean_all(t.row_sum(kl));
  };
  auto loss_fn = [&](bool with_grad) {
    Tape t(with_grad);
    Var mu_p = with_grad ? t.detach(net_p.forward(t, t.input(in))) : t.input(frozen_target);
    Var loss = build_loss(t, mu_p);
    if (with_grad) t.backward(loss);
    return t.val(loss).item();
  };

  store.zero_grads();
  loss_fn(true);
  for (double g : net_p.W->grad.v) CHECK(g == 0.0);
  for (double g : net_p.b->grad.v) CHECK(g == 0.0);
  // the real detached gradient matches finite differences of the frozen-target
  // loss for every parameter, including the exactly-zero producer branch
  auto res = test::check_gradients(store.all(), loss_fn, 1e-4);
  INFO("worst: " << res.worst_param << " rel err " << res.max_rel_err);
  CHECK(res.ok(1e-4));
  // and the live branch is not flat
  store.zero_grads();
  loss_fn(true);
  double live = 0.0;
  for (double g : net_q.W->grad.v) live += std::abs(g);
  CHECK(live > 0.0);
}

TEST_CASE("gru cell basics") {
  Rng rng(29);

  SECTION("zero weights and state give zero output") {
    ParamStore store;
    GruCell gru(store, "gru", 3, 4, rng);
    gru.Wi->value.zero();
    gru.Wh->value.zero();
    Tape t(false);
    Var x = t.input(Tensor::zeros({1, 3}));
    Var h = t.input(Tensor::zeros({1, 4}));
    Var out = gru.forward(t, x, h);
    for (double v : t.val(out).v) CHECK(v == 0.0);
  }

  SECTION("saturated update gate passes hidden state through") {
    ParamStore store;
    GruCell gru(store, "gru", 3, 4, rng);
    // push the update-gate biases high so z ~= 1
    for (int k = 4; k < 8; ++k) {
      gru.bi->value[k] = 20.0;
      gru.bh->value[k] = 20.0;
    }
    Tensor h_prev = random_tensor({1, 4}, rng, 0.5);
    Tape t(false);
    Var out = gru.forward(t, t.input(random_tensor({1, 3}, rng)), t.input(h_prev));
    for (int k = 0; k < 4; ++k)
      CHECK(t.val(out)[k] == Catch::Approx(h_prev[k]).margin(1e-3));
  }

  SECTION("gradient through 5 unrolled steps matches finite differences") {
    ParamStore store;
    GruCell gru(store, "gru", 3, 4, rng);
    std::vector<Tensor> xs;
    for (int i = 0; i < 5; ++i) xs.push_back(random_tensor({2, 3}, rng));
    auto loss_fn = [&](bool with_grad) {
      Tape t(with_grad);
      Var h = t.input(Tensor::zeros({2, 4}));
      for (int i = 0; i < 5; ++i) h = gru.forward(t, t.input(xs[i]), h);
      Var loss = t.mean_all(t.square(h));
      if (with_grad) t.backward(loss);
      return t.val(loss).item();
    };
    auto res = test::check_gradients(store.all(), loss_fn, 1e-4);
    INFO("worst: " << res.worst_param << " rel err " << res.max_rel_err);
    CHECK(res.ok(1e-3));
  }
}

TEST_CASE("adam step with zero gradient leaves parameters unchanged") {
  Rng rng(31);
  ParamStore store;
  Param& p = store.create("p", {4, 4});
  for (auto& x : p.value.v) x = rng.normal();
  Tensor before = p.value;
  Adam opt;
  p.grad.zero();
  opt.step(store.all());
  for (int64_t k = 0; k < p.size(); ++k) CHECK(p.value[k] == before[k]);
}

TEST_CASE("gradient norm clipping") {
  ParamStore store;
  Param& p = store.create("p", {1, 2});
  p.grad[0] = 3.0;
  p.grad[1] = 4.0;
  const double norm = clip_grad_norm(store.all(), 0.5);
  CHECK(norm == Catch::Approx(5.0));
  CHECK(std::hypot(p.grad[0], p.grad[1]) == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("checkpoint save-load-save is byte identical") {
  Rng rng(37);
  ParamStore store;
  Dense l1(store, "enc/l1", 6, 5, 1.0, rng);
  store.create("log_std", {1, 2}).value.fill(-0.5);
  for (auto& x : l1.b->value.v) x = rng.normal();

  const fs::path dir = fs::temp_directory_path() / "imnav_ckpt_test";
  fs::create_directories(dir);
  const fs::path f1 = dir / "a.ckpt";
  const fs::path f2 = dir / "b.ckpt";
  store.save(f1.string());

  ParamStore store2;
  Dense m1(store2, "enc/l1", 6, 5, 1.0, rng);
  store2.create("log_std", {1, 2});
  store2.load(f1.string());
  store2.save(f2.string());

  CHECK(read_file_bytes(f1) == read_file_bytes(f2));
  CHECK(store2.at("log_std").value[0] == -0.5);
  fs::remove_all(dir);
}

TEST_CASE("non-finite loss raises an error") {
  ParamStore store;
  Param& x = store.create("x", {1, 1});
  x.value[0] = -1.0;
  Tape t;
  Var loss = t.log_(t.param(x));  // log of a negative number
  CHECK_THROWS_AS(t.backward(loss), Error);
}
