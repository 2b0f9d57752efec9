#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "qf/error.hpp"
#include "qf/model.hpp"
#include "qf/random.hpp"

using namespace qf;

namespace {

ModelConfig small(int d = 8, int layers = 4, int vocab = 7, int ctx = 32) {
  ModelConfig c;
  c.model_dim = d;
  c.n_layers = layers;
  c.n_heads = 4;
  c.vocab_size = vocab;
  c.max_seq_len = ctx;
  return c;
}

// Direct sum of the documented tensor shapes.
std::int64_t shape_sum(const ModelConfig& c) {
  const std::int64_t d = c.model_dim, V = c.vocab_size;
  const std::int64_t h = c.ffn_hidden > 0 ? c.ffn_hidden : std::max<std::int64_t>(8, (d + 1) / 3 * 8);
  std::int64_t per_layer = d + 4 * d * d + d + 2 * d * h + h * d;
  return V * d + c.n_layers * per_layer + d + d * V;
}

const double* tensor(const ModelState<double>& s, std::size_t index) {
  return s.params.data() + s.layout.tensors[index].offset;
}

std::vector<double> rms(const double* x, const double* g, int d) {
  double ss = 0;
  for (int k = 0; k < d; ++k) ss += x[k] * x[k];
  const double r = 1.0 / std::sqrt(ss / d + kRmsNormEps);
  std::vector<double> y(d);
  for (int k = 0; k < d; ++k) y[k] = x[k] * r * g[k];
  return y;
}

// y = x W with W stored rows x cols (in x out).
std::vector<double> matvec(const std::vector<double>& x, const double* w, int rows, int cols) {
  std::vector<double> y(cols, 0.0);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) y[j] += x[i] * w[static_cast<std::size_t>(i) * cols + j];
  }
  return y;
}

}  // namespace

TEST_CASE("parameter count matches tensor shapes") {
  const auto c = small(8, 4, 7, 32);
  CHECK(shape_sum(c) == count_params(c));
  CHECK(count_params(c) == 7 * 8 + 4 * (2 * 8 + 4 * 64 + 3 * 8 * 24) + 8 + 8 * 7);
  CHECK(default_ffn_hidden(64) == 168);
  CHECK(flops_per_token(c) == 6.0 * static_cast<double>(count_params(c)));
  auto bigger = c;
  bigger.vocab_size = 11;
  CHECK(count_params(bigger) - count_params(c) == 2 * 8 * 4);
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const int heads = 1 << rng.uniform_int(0, 2);
    auto r = small(heads * 2 * static_cast<int>(rng.uniform_int(1, 8)), static_cast<int>(rng.uniform_int(0, 5)),
                   static_cast<int>(rng.uniform_int(5, 40)), 16);
    r.n_heads = heads;
    const auto s = init_model<float>(r, 1);
    std::int64_t summed = 0;
    for (const auto& t : s.layout.tensors) summed += static_cast<std::int64_t>(t.size());
    CHECK(summed == count_params(r));
    CHECK(static_cast<std::int64_t>(s.params.size()) == count_params(r));
    CHECK(shape_sum(r) == count_params(r));
  }
}

TEST_CASE("initialization is deterministic with unit norm gains") {
  const auto c = small();
  const auto a = init_model<float>(c, 9);
  const auto b = init_model<float>(c, 9);
  CHECK(a.params == b.params);
  CHECK(init_model<float>(c, 10).params != a.params);
  for (const auto& t : a.layout.tensors) {
    if (t.name.find("norm") == std::string::npos) continue;
    for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(a.params[t.offset + i] == 1.0f);
  }
}

TEST_CASE("RMSNorm output has unit root-mean-square") {
  Rng rng(1);
  const int rows = 5, d = 16;
  std::vector<double> x(rows * d), y(rows * d), g(d, 1.0);
  for (auto& v : x) v = 3 * rng.normal();
  rms_norm_rows(x.data(), g.data(), y.data(), rows, d);
  for (int r = 0; r < rows; ++r) {
    double ss = 0;
    for (int k = 0; k < d; ++k) ss += y[r * d + k] * y[r * d + k];
    CHECK(std::sqrt(ss / d) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("RoPE inner products depend only on relative position") {
  Rng rng(2);
  const int T = 24, d = 16, hd = 8;
  std::vector<double> q0(d), k0(d);
  for (auto& v : q0) v = rng.normal();
  for (auto& v : k0) v = rng.normal();
  std::vector<double> q(T * d), k(T * d);
  for (int t = 0; t < T; ++t) {
    std::copy(q0.begin(), q0.end(), q.begin() + t * d);
    std::copy(k0.begin(), k0.end(), k.begin() + t * d);
  }
  apply_rope(q.data(), 1, T, d, hd, 10000.0);
  apply_rope(k.data(), 1, T, d, hd, 10000.0);
  auto dot = [&](int i, int j, int head) {
    double s = 0;
    for (int m = 0; m < hd; ++m) s += q[i * d + head * hd + m] * k[j * d + head * hd + m];
    return s;
  };
  for (int head = 0; head < 2; ++head) {
    for (int i = 0; i + 5 < T; ++i) {
      for (int j = 0; j + 5 < T; ++j) CHECK(std::abs(dot(i, j, head) - dot(i + 5, j + 5, head)) < 1e-6);
    }
  }
  // Position 0 is unrotated, and the inverse undoes the rotation.
  for (int m = 0; m < d; ++m) CHECK(q[m] == doctest::Approx(q0[m]));
  apply_rope(q.data(), 1, T, d, hd, 10000.0, true);
  for (int t = 0; t < T; ++t) {
    for (int m = 0; m < d; ++m) CHECK(std::abs(q[t * d + m] - q0[m]) < 1e-12);
  }
}

TEST_CASE("causal: a later token does not change earlier logits") {
  const auto s = init_model<double>(small(), 3);
  auto b1 = gradcheck::random_batch(2, 12, 6, 7, 4);
  auto b2 = b1;
  b2.tokens[8] = b1.tokens[8] == 1 ? 2 : 1;
  const auto f1 = forward(s, b1);
  const auto f2 = forward(s, b2);
  for (int t = 0; t < 8; ++t) {
    for (int v = 0; v < 7; ++v) REQUIRE(f1.logits_at(0, t)[v] == f2.logits_at(0, t)[v]);
  }
  bool changed = false;
  for (int v = 0; v < 7; ++v) changed = changed || f1.logits_at(0, 8)[v] != f2.logits_at(0, 8)[v];
  CHECK(changed);
}

TEST_CASE("zero-layer model is head(final_norm(embed))") {
  const auto c = small(8, 0);
  auto s = init_model<double>(c, 4);
  Rng rng(8);
  for (std::size_t i = s.layout.tensors[s.layout.final_norm].offset; i < s.layout.tensors[s.layout.final_norm].offset + 8; ++i) {
    s.params[i] = 0.5 + rng.uniform();
  }
  const auto b = gradcheck::random_batch(1, 6, 3, 7, 1);
  const auto f = forward(s, b);
  for (int t = 0; t < 6; ++t) {
    const double* e = tensor(s, s.layout.embed) + b.token(0, t) * 8;
    const auto y = matvec(rms(e, tensor(s, s.layout.final_norm), 8), tensor(s, s.layout.head), 8, 7);
    for (int v = 0; v < 7; ++v) CHECK(f.logits_at(0, t)[v] == doctest::Approx(y[v]).epsilon(1e-12));
  }
}

TEST_CASE("trace: post minus mid equals the recomputed MLP branch") {
  const auto c = small(16, 3);
  const auto s = init_model<double>(c, 5);
  const auto b = gradcheck::random_batch(2, 10, 5, 7, 2);
  ForwardOptions opt;
  opt.capture = true;
  opt.capture_mid = true;
  const auto f = forward(s, b, opt);
  const int h = c.hidden();
  for (int l = 0; l < 3; ++l) {
    const auto& L = s.layout.layers[l];
    for (int r = 0; r < 2; ++r) {
      for (int t = 0; t < 10; ++t) {
        const double* mid = f.trace.mid_at(l, r, t);
        const double* post = f.trace.post_at(l, r, t);
        const auto xn = rms(mid, tensor(s, L.ffn_norm), 16);
        const auto gate = matvec(xn, tensor(s, L.w_gate), 16, h);
        auto up = matvec(xn, tensor(s, L.w_up), 16, h);
        for (int k = 0; k < h; ++k) up[k] *= gate[k] / (1.0 + std::exp(-gate[k]));
        const auto mlp = matvec(up, tensor(s, L.w_down), h, 16);
        for (int k = 0; k < 16; ++k) {
          const double diff = post[k] - mid[k];
          REQUIRE(std::abs(diff - mlp[k]) <= 1e-6 * std::max(1e-3, std::abs(mlp[k])));
        }
      }
    }
  }
}

TEST_CASE("SwiGLU branch vanishes with zero gate input") {
  auto s = init_model<double>(small(8, 1), 6);
  const auto& L = s.layout.layers[0];
  for (std::size_t i = 0; i < s.layout.tensors[L.w_gate].size(); ++i) s.params[s.layout.tensors[L.w_gate].offset + i] = 0;
  ForwardOptions opt;
  opt.capture = true;
  opt.capture_mid = true;
  const auto f = forward(s, gradcheck::random_batch(1, 6, 3, 7, 3), opt);
  for (int t = 0; t < 6; ++t) {
    for (int k = 0; k < 8; ++k) CHECK(f.trace.post_at(0, 0, t)[k] == f.trace.mid_at(0, 0, t)[k]);
  }
}

TEST_CASE("loss: uniform logits give ln V, duplicated rows leave it unchanged") {
  auto s = init_model<double>(small(), 7);
  const auto& head = s.layout.tensors[s.layout.head];
  for (std::size_t i = 0; i < head.size(); ++i) s.params[head.offset + i] = 0;
  const auto b = gradcheck::random_batch(3, 12, 6, 7, 5);
  CHECK(loss_and_grads(s, b).loss == doctest::Approx(std::log(7.0)).epsilon(1e-12));

  const auto s2 = init_model<double>(small(), 8);
  auto doubled = b;
  doubled.rows *= 2;
  doubled.tokens.insert(doubled.tokens.end(), b.tokens.begin(), b.tokens.end());
  doubled.loss_mask.insert(doubled.loss_mask.end(), b.loss_mask.begin(), b.loss_mask.end());
  doubled.lengths.insert(doubled.lengths.end(), b.lengths.begin(), b.lengths.end());
  CHECK(loss_and_grads(s2, doubled).loss == doctest::Approx(loss_and_grads(s2, b).loss).epsilon(1e-12));
}

TEST_CASE("forward is bit-for-bit deterministic") {
  const auto s = init_model<float>(small(16, 2), 9);
  const auto b = gradcheck::random_batch(4, 12, 6, 7, 6);
  ModelRunner<float> runner;
  const auto a = runner.forward(s, b).logits;
  CHECK(runner.forward(s, b).logits == a);
  CHECK(forward(s, b).logits == a);
}

TEST_CASE("shape and content errors") {
  const auto s = init_model<float>(small(8, 1, 7, 8), 1);
  CHECK_THROWS_AS(forward(s, gradcheck::random_batch(1, 12, 6, 7, 1)), Error);
  auto b = gradcheck::random_batch(1, 6, 3, 7, 1);
  b.tokens[0] = 99;
  CHECK_THROWS_AS(forward(s, b), Error);
  auto masked = gradcheck::random_batch(1, 6, 3, 7, 1);
  std::fill(masked.loss_mask.begin(), masked.loss_mask.end(), 0);
  CHECK_THROWS_AS(loss_and_grads(s, masked), Error);
}

TEST_CASE("gradients match central differences on a small model") {
  const auto s = init_model<double>(small(8, 2, 7, 16), 11);
  const auto b = gradcheck::random_batch(2, 10, 4, 7, 12);
  for (const auto& [name, err] : gradcheck::check(s, b, 1e-4, 1e-6)) {
    INFO(name);
    CHECK(err.max_relative < 1e-4);
  }
}
