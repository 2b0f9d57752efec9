#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "qf/dataset.hpp"
#include "qf/error.hpp"
#include "qf/probes.hpp"
#include "qf/random.hpp"

using namespace qf;

namespace {

ProbeDataset make_data(std::size_t rows, int dim, int width) {
  ProbeDataset d;
  d.dim = dim;
  d.width = width;
  d.x.resize(rows * dim);
  d.y.resize(rows * width);
  for (std::size_t i = 0; i < rows; ++i) d.example_index.push_back(i);
  return d;
}

// Damped Newton on (w, b) for 0.5·|w|^2 + C·sum log-loss.
std::pair<Eigen::VectorXd, double> newton_reference(const ProbeDataset& d, double C) {
  const int p = d.dim + 1;
  const auto n = static_cast<Eigen::Index>(d.rows());
  Eigen::MatrixXd X(n, p);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int k = 0; k < d.dim; ++k) X(i, k) = d.x[i * d.dim + k];
    X(i, d.dim) = 1.0;
    y(i) = d.y[i];
  }
  Eigen::VectorXd reg = Eigen::VectorXd::Ones(p);
  reg(d.dim) = 0;
  auto objective = [&](const Eigen::VectorXd& th) {
    double f = 0.5 * th.head(d.dim).squaredNorm();
    const Eigen::VectorXd z = X * th;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double zi = z(i);
      f += C * (std::max(zi, 0.0) - zi * y(i) + std::log1p(std::exp(-std::abs(zi))));
    }
    return f;
  };
  Eigen::VectorXd th = Eigen::VectorXd::Zero(p);
  for (int it = 0; it < 100; ++it) {
    const Eigen::VectorXd z = X * th;
    Eigen::VectorXd s(n), wt(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double sig = 1.0 / (1.0 + std::exp(-z(i)));
      s(i) = sig - y(i);
      wt(i) = sig * (1 - sig);
    }
    const Eigen::VectorXd g = reg.cwiseProduct(th) + C * X.transpose() * s;
    Eigen::MatrixXd H = C * X.transpose() * wt.asDiagonal() * X;
    H.diagonal() += reg;
    H.diagonal().array() += 1e-12;
    const Eigen::VectorXd step = H.ldlt().solve(g);
    double t = 1.0;
    const double f0 = objective(th);
    while (objective(th - t * step) > f0 && t > 1e-10) t *= 0.5;
    th -= t * step;
    if (g.norm() < 1e-10) break;
  }
  return {th.head(d.dim), th(d.dim)};
}

ProbeSpec logistic_spec() {
  ProbeSpec s;
  s.kind = ProbeKind::kLogistic;
  return s;
}

}  // namespace

TEST_CASE("logistic fit reaches the reference optimum") {
  Rng rng(3);
  auto d = make_data(300, 4, 1);
  for (std::size_t i = 0; i < d.rows(); ++i) {
    double z = 0.3;
    for (int k = 0; k < 4; ++k) {
      d.x[i * 4 + k] = rng.normal();
      z += (k + 1) * 0.4 * d.x[i * 4 + k];
    }
    d.y[i] = rng.bernoulli(1.0 / (1.0 + std::exp(-z))) ? 1 : 0;
  }
  for (double C : {1.0, 100.0}) {
    const auto fit = fit_logistic(d.x, d.y, d.dim, C, 1000);
    const auto [w, b] = newton_reference(d, C);
    const std::vector<double> wv(w.data(), w.data() + w.size());
    const double ref = logistic_objective(d.x, d.y, d.dim, C, wv, b);
    CHECK(fit.converged);
    CHECK(std::abs(fit.objective - ref) <= 1e-6 * std::max(1.0, std::abs(ref)));
    CHECK(fit.objective == doctest::Approx(logistic_objective(d.x, d.y, d.dim, C, fit.w, fit.b)));
    for (int k = 0; k < d.dim; ++k) CHECK(std::abs(fit.w[k] - w(k)) < 1e-4 * std::max(1.0, std::abs(w(k))));
    CHECK(std::abs(fit.b - b) < 1e-4 * std::max(1.0, std::abs(b)));
  }
}

TEST_CASE("separable data reaches near-zero test cross-entropy") {
  Rng rng(5);
  auto draw = [&](std::size_t rows) {
    auto d = make_data(rows, 2, 1);
    for (std::size_t i = 0; i < rows; ++i) {
      double a, b;
      do {
        a = 2 * rng.uniform() - 1;
        b = 2 * rng.uniform() - 1;
      } while (std::abs(a + b) < 0.1);
      d.x[2 * i] = a;
      d.x[2 * i + 1] = b;
      d.y[i] = a + b > 0;
    }
    return d;
  };
  const auto train = draw(500), test = draw(500);
  const auto p = train_probe(logistic_spec(), train, &test);
  CHECK(p.test_loss < 0.01);
  CHECK_FALSE(p.degenerate);
}

TEST_CASE("random labels give chance cross-entropy") {
  Rng rng(6);
  auto draw = [&](std::size_t rows) {
    auto d = make_data(rows, 8, 1);
    for (auto& v : d.x) v = rng.normal();
    for (auto& v : d.y) v = rng.bernoulli(0.5);
    return d;
  };
  const auto train = draw(10000), test = draw(1000);
  const auto p = train_probe(logistic_spec(), train, &test);
  CHECK(std::abs(p.test_loss - std::log(2.0)) < 0.05);
}

TEST_CASE("single-class labels give a degenerate constant probe") {
  auto d = make_data(20, 3, 1);
  Rng rng(1);
  for (auto& v : d.x) v = rng.normal();
  std::fill(d.y.begin(), d.y.end(), 1.0);
  const auto p = train_probe(logistic_spec(), d, &d);
  CHECK(p.degenerate);
  for (double w : p.weights) CHECK(w == 0);
  // Add-half smoothed positive rate.
  CHECK(p.test_loss == doctest::Approx(-std::log(20.5 / 21.0)));
}

TEST_CASE("least squares recovers a planted map") {
  Rng rng(7);
  auto d = make_data(100, 4, 1);
  for (std::size_t i = 0; i < d.rows(); ++i) {
    for (int k = 0; k < 4; ++k) d.x[i * 4 + k] = rng.normal();
    d.y[i] = 2 * d.x[i * 4] - 3;
  }
  ProbeSpec spec;
  spec.feature = FeatureId::kMaxEndingHere;
  spec.kind = ProbeKind::kRegression;
  const auto p = train_probe(spec, d, &d);
  CHECK(std::abs(p.weights[0] - 2) < 1e-6);
  for (int k = 1; k < 4; ++k) CHECK(std::abs(p.weights[k]) < 1e-6);
  CHECK(std::abs(p.bias[0] + 3) < 1e-6);
  CHECK(p.test_loss < 1e-12);

  // Duplicate column: the minimum-norm solution splits the weight.
  for (std::size_t i = 0; i < d.rows(); ++i) d.x[i * 4 + 1] = d.x[i * 4];
  const auto q = train_probe(spec, d);
  CHECK(std::abs(q.weights[0] - 1) < 1e-6);
  CHECK(std::abs(q.weights[1] - 1) < 1e-6);
}

TEST_CASE("multi-label heads equal separate binary fits") {
  Rng rng(8);
  auto d = make_data(400, 5, 3);
  for (std::size_t i = 0; i < d.rows(); ++i) {
    for (int k = 0; k < 5; ++k) d.x[i * 5 + k] = rng.normal();
    for (int h = 0; h < 3; ++h) d.y[i * 3 + h] = rng.bernoulli(1.0 / (1.0 + std::exp(-d.x[i * 5 + h] * 2))) ? 1 : 0;
  }
  ProbeSpec spec;
  spec.feature = FeatureId::kQueue;
  spec.kind = ProbeKind::kMultiLabel;
  const auto joint = train_probe(spec, d, &d);
  REQUIRE(joint.width == 3);
  double separate_loss = 0;
  for (int h = 0; h < 3; ++h) {
    auto single = make_data(d.rows(), 5, 1);
    single.x = d.x;
    for (std::size_t i = 0; i < d.rows(); ++i) single.y[i] = d.y[i * 3 + h];
    const auto p = train_probe(logistic_spec(), single, &single);
    for (int k = 0; k < 5; ++k) CHECK(std::abs(joint.head(h)[k] - p.weights[k]) < 1e-8);
    CHECK(std::abs(joint.bias[h] - p.bias[0]) < 1e-8);
    separate_loss += p.test_loss;
  }
  CHECK(std::abs(joint.test_loss - separate_loss / 3) < 1e-8);
}

TEST_CASE("selection by lowest training loss, ties to the lower layer") {
  std::vector<TrainedProbe> c(3);
  const double losses[] = {0.5, 0.1, 0.3};
  for (int i = 0; i < 3; ++i) {
    c[i].layer = i;
    c[i].train_loss = losses[i];
  }
  CHECK(select_probe(c).layer == 1);
  std::vector<TrainedProbe> tie(2);
  tie[0].layer = 0;
  tie[1].layer = 1;
  tie[0].train_loss = tie[1].train_loss = 0.2;
  CHECK(select_probe(tie).layer == 0);
  CHECK_THROWS_AS(select_probe(std::span<const TrainedProbe>{}), Error);
}

TEST_CASE("collected activations equal per-example forward traces") {
  ModelConfig c;
  c.model_dim = 16;
  c.n_layers = 2;
  c.n_heads = 4;
  const auto vocab = Vocabulary::for_task(TaskId::kAddition, 6);
  c.vocab_size = static_cast<int>(vocab.size());
  c.max_seq_len = max_sequence_length(TaskId::kAddition, 6);
  const auto s = init_model<double>(c, 9);
  const auto ds = build_dataset(TaskId::kAddition, 6, 10, 2, 20);
  const auto set = collect_activations(s, std::span<const Example>(ds.test), FeatureId::kCarry);
  const auto again = collect_activations(s, std::span<const Example>(ds.test), FeatureId::kCarry);
  CHECK(set.layers == 2);
  CHECK(set.slots == 6);
  ForwardOptions opt;
  opt.capture = true;
  for (int l = 0; l < 2; ++l) {
    for (int slot = 0; slot < 6; ++slot) {
      const auto& b = set.at(l, slot);
      REQUIRE(b.rows() == ds.test.size());
      CHECK(b.x == again.at(l, slot).x);
      for (std::size_t i = 0; i < b.rows(); ++i) {
        const auto& ex = ds.test[b.example_index[i]];
        const std::vector<TokenSequence> one{ex.tokens};
        const auto f = forward(s, make_batch(one), opt);
        const auto pos = static_cast<int>(ex.tokens.answer_start) + slot;
        const double* ref = f.trace.post_at(l, 0, pos);
        for (int k = 0; k < 16; ++k) REQUIRE(std::abs(b.row(i)[k] - ref[k]) < 1e-9);
        const auto ann = extract_features(ex.instance);
        REQUIRE(b.y[i] == ann.track(FeatureId::kCarry).at_slot(slot)->value[0]);
      }
    }
  }
}

TEST_CASE("probe JSON round trip") {
  TrainedProbe p;
  p.feature = FeatureId::kQueue;
  p.kind = ProbeKind::kMultiLabel;
  p.layer = 2;
  p.slot = 1;
  p.dim = 2;
  p.width = 2;
  p.weights = {1, 2, 3, 4};
  p.bias = {0.5, -0.5};
  p.train_loss = 0.25;
  const auto back = probe_from_json(probe_to_json(p));
  CHECK(back.weights == p.weights);
  CHECK(back.bias == p.bias);
  CHECK(back.feature == p.feature);
  CHECK(back.layer == 2);
}
