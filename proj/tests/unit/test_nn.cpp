#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cloak/error.hpp"
#include "cloak/nn/net.hpp"
#include "cloak/nn/ops.hpp"
#include "cloak/nn/serialize.hpp"
#include "cloak/rng.hpp"

using namespace cloak;
using namespace cloak::nn;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Naive reference: out[f][t] = b[f] + sum_c sum_k w[f][c][k] * x[c][t*s + k].
std::vector<double> naive_conv(const std::vector<double>& x, std::size_t channels, std::size_t len,
                               const Tensor& w, const Tensor& b, std::size_t stride) {
  const std::size_t filters = w.dim(0);
  const std::size_t kernel = w.dim(2);
  const std::size_t out_len = (len - kernel) / stride + 1;
  std::vector<double> out(filters * out_len, 0.0);
  for (std::size_t f = 0; f < filters; ++f) {
    for (std::size_t t = 0; t < out_len; ++t) {
      double acc = b[f];
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t k = 0; k < kernel; ++k) acc += w[(f * channels + c) * kernel + k] * x[c * len + t * stride + k];
      }
      out[f * out_len + t] = acc;
    }
  }
  return out;
}

std::vector<double> naive_pool(const std::vector<double>& x, std::size_t channels, std::size_t len, std::size_t window) {
  std::vector<double> out;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < len / window; ++t) {
      double m = -1e300;
      for (std::size_t i = 0; i < window; ++i) m = std::max(m, x[c * len + t * window + i]);
      out.push_back(m);
    }
  }
  return out;
}

// <u, J v> against <J^T u, v> for one layer; J v by central differences.
void adjoint_check(const LayerSpec& spec, const Shape& sample_shape, Mode mode, std::uint64_t seed) {
  Rng rng(seed);
  Layer layer = make_layer(spec, sample_shape);
  for (auto* p : trainable(layer)) {
    for (double& w : p->values()) w = rng.uniform(-1.0, 1.0);
  }
  Shape batch_shape{3};
  batch_shape.insert(batch_shape.end(), sample_shape.begin(), sample_shape.end());
  const Tensor x = random_tensor(batch_shape, rng);
  const Tensor v = random_tensor(batch_shape, rng);

  auto run = [&](const Tensor& in, LayerCache& cache) {
    Rng drop(77);
    return std::visit([&](const auto& l) { return l.forward(in, mode, &drop, cache); }, layer);
  };
  LayerCache cache;
  const Tensor y = run(x, cache);
  const Tensor u = random_tensor(y.shape(), rng);

  const double eps = 1e-6;
  Tensor xp = x, xm = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] += eps * v[i];
    xm[i] -= eps * v[i];
  }
  LayerCache scratch;
  const Tensor yp = run(xp, scratch);
  const Tensor ym = run(xm, scratch);
  std::vector<double> jv(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) jv[i] = (yp[i] - ym[i]) / (2 * eps);

  const Tensor jtu = std::visit([&](const auto& l) { return l.backward(u, cache, ParamGrads{}); }, layer);
  const double lhs = dot(u.values(), jv);
  const double rhs = dot(jtu.values(), v.values());
  CHECK(std::abs(lhs - rhs) <= 1e-6 * std::max(1.0, std::abs(lhs)));
}

Net small_cnn(std::uint64_t seed, std::size_t len = 60, std::size_t classes = 4) {
  return Net({1, len},
             {Conv1DSpec{3, 5, 1}, MaxPool1DSpec{2}, BatchNormSpec{}, DropoutSpec{0.25}, Conv1DSpec{4, 3, 1},
              MaxPool1DSpec{3}, BatchNormSpec{}, DropoutSpec{0.25}, FlattenSpec{}, DenseSpec{8}, DropoutSpec{0.25},
              DenseSpec{classes}, SoftmaxOutputSpec{classes}},
             seed);
}

// Runs a few train-mode batches so batch-norm running stats are non-trivial.
void warm_up(Net& net, Rng& rng) {
  for (int step = 0; step < 5; ++step) {
    Shape s{8};
    s.insert(s.end(), net.input_shape().begin(), net.input_shape().end());
    Tape tape;
    net.forward(random_tensor(s, rng, 0.0, 1.0), Mode::Train, &rng, &tape);
    net.commit_batch_stats(tape);
  }
}

}  // namespace

TEST_CASE("conv1d examples") {
  SUBCASE("[1,2,3] with kernel [1,1]") {
    Conv1D conv({1, 2, 1}, {1, 3});
    conv.weight.fill(1.0);
    LayerCache cache;
    const auto y = conv.forward(Tensor({1, 1, 3}, {1, 2, 3}), Mode::Infer, nullptr, cache);
    CHECK(y.to_vector() == std::vector<double>{3, 5});
  }
  SUBCASE("identity kernel") {
    Conv1D conv({1, 1, 1}, {1, 4});
    conv.weight.fill(1.0);
    LayerCache cache;
    const Tensor x({1, 1, 4}, {0.5, -2, 7, 1});
    CHECK(conv.forward(x, Mode::Infer, nullptr, cache).to_vector() == x.to_vector());
  }
  SUBCASE("matches the naive reference") {
    Rng rng(3);
    for (std::size_t stride : {1u, 2u, 3u}) {
      Conv1D conv({3, 5, stride}, {2, 32});
      conv.weight = random_tensor({3, 2, 5}, rng);
      conv.bias = random_tensor({3}, rng);
      const Tensor x = random_tensor({1, 2, 32}, rng);
      LayerCache cache;
      const auto y = conv.forward(x, Mode::Infer, nullptr, cache);
      const auto ref = naive_conv(x.to_vector(), 2, 32, conv.weight, conv.bias, stride);
      REQUIRE(y.size() == ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-14));
    }
  }
  SUBCASE("kernel longer than input") { CHECK_THROWS_AS(Conv1D({1, 5, 1}, {1, 4}), ShapeError); }
}

TEST_CASE("maxpool1d examples") {
  MaxPool1D pool({2}, {1, 4});
  LayerCache cache;
  CHECK(pool.forward(Tensor({1, 1, 4}, {1, 3, 2, 8}), Mode::Infer, nullptr, cache).to_vector() ==
        std::vector<double>{3, 8});

  MaxPool1D pool3({3}, {1, 7});
  const auto y = pool3.forward(Tensor({1, 1, 7}, 4.0), Mode::Infer, nullptr, cache);
  CHECK(y.to_vector() == std::vector<double>{4, 4});
  CHECK(cache.argmax == std::vector<std::size_t>{0, 3});
  const auto g = pool3.backward(Tensor({1, 1, 2}, {1.0, 2.0}), cache, {});
  CHECK(g.to_vector() == std::vector<double>{1, 0, 0, 2, 0, 0, 0});

  Rng rng(4);
  const Tensor x = random_tensor({2, 3, 23}, rng);
  MaxPool1D p5({5}, {3, 23});
  const auto out = p5.forward(x, Mode::Infer, nullptr, cache);
  const auto all = x.to_vector();
  const std::vector<double> first(all.begin(), all.begin() + 69);
  const std::vector<double> second(all.begin() + 69, all.end());
  auto ref = naive_pool(first, 3, 23, 5);
  const auto ref2 = naive_pool(second, 3, 23, 5);
  ref.insert(ref.end(), ref2.begin(), ref2.end());
  CHECK(out.to_vector() == ref);

  CHECK_THROWS_AS(MaxPool1D({0}, {1, 4}), ShapeError);
}

TEST_CASE("batchnorm examples") {
  Rng rng(8);
  SUBCASE("train mode standardizes") {
    BatchNorm bn({}, {3, 10});
    LayerCache cache;
    const auto y = bn.forward(random_tensor({6, 3, 10}, rng, -4, 9), Mode::Train, nullptr, cache);
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0, ss = 0;
      for (std::size_t n = 0; n < 6; ++n) {
        for (std::size_t t = 0; t < 10; ++t) {
          const double v = y[(n * 3 + c) * 10 + t];
          s += v;
          ss += v * v;
        }
      }
      CHECK(std::abs(s / 60) <= 1e-6);
      CHECK(std::abs(ss / 60 - 1.0) <= 1e-3);  // eps = 1e-5 shrinks the variance slightly
    }
  }
  SUBCASE("zero gain gives the shift") {
    BatchNorm bn({}, {4});
    bn.gamma.fill(0.0);
    bn.beta.fill(5.0);
    LayerCache cache;
    const auto y = bn.forward(random_tensor({5, 4}, rng), Mode::Train, nullptr, cache);
    for (double v : y.values()) CHECK(v == 5.0);
  }
  SUBCASE("inference uses running statistics") {
    BatchNorm bn({1e-5, 0.9}, {2});
    const Tensor batch({4, 2}, {1, 10, 2, 20, 3, 30, 6, 40});
    double rm[2] = {0, 0}, rv[2] = {1, 1};
    for (int step = 0; step < 3; ++step) {
      LayerCache cache;
      bn.forward(batch, Mode::Train, nullptr, cache);
      bn.update_running(cache);
      // Closed-form recursion with the biased batch variance.
      const double mean[2] = {3.0, 25.0};
      const double var[2] = {(4 + 1 + 0 + 9) / 4.0, (225 + 25 + 25 + 225) / 4.0};
      const double keep = step == 0 ? 0.0 : 0.9;  // first batch seeds the stats
      for (int c = 0; c < 2; ++c) {
        rm[c] = keep * rm[c] + (1 - keep) * mean[c];
        rv[c] = keep * rv[c] + (1 - keep) * var[c];
      }
    }
    LayerCache cache;
    const auto y = bn.forward(Tensor({1, 2}, {4.0, 12.0}), Mode::Infer, nullptr, cache);
    CHECK(y[0] == doctest::Approx((4.0 - rm[0]) / std::sqrt(rv[0] + 1e-5)).epsilon(1e-9));
    CHECK(y[1] == doctest::Approx((12.0 - rm[1]) / std::sqrt(rv[1] + 1e-5)).epsilon(1e-9));
  }
  SUBCASE("batch of one in train mode") {
    BatchNorm bn({}, {3});
    LayerCache cache;
    CHECK_THROWS(bn.forward(Tensor({1, 3}, 1.0), Mode::Train, nullptr, cache));
  }
}

TEST_CASE("dropout") {
  Rng rng(2);
  Dropout d({0.25}, {50});
  const Tensor x = random_tensor({4, 50}, rng);
  LayerCache cache;
  CHECK(d.forward(x, Mode::Infer, nullptr, cache) == x);
  const auto y = d.forward(x, Mode::Train, &rng, cache);
  int dropped = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (y[i] == 0.0) {
      ++dropped;
    } else {
      CHECK(y[i] == doctest::Approx(x[i] / 0.75));
    }
  }
  CHECK(dropped > 20);
  CHECK(dropped < 80);
  CHECK_THROWS(Dropout({1.0}, {3}));
}

TEST_CASE("adjoint test for every layer") {
  adjoint_check(Conv1DSpec{3, 4, 1}, {2, 17}, Mode::Infer, 1);
  adjoint_check(Conv1DSpec{2, 3, 2}, {3, 16}, Mode::Infer, 2);
  adjoint_check(MaxPool1DSpec{3}, {2, 14}, Mode::Infer, 3);
  adjoint_check(BatchNormSpec{}, {3, 6}, Mode::Train, 4);
  adjoint_check(BatchNormSpec{}, {5}, Mode::Train, 5);
  adjoint_check(BatchNormSpec{}, {3, 6}, Mode::Infer, 6);
  adjoint_check(DropoutSpec{0.3}, {2, 9}, Mode::Train, 7);
  adjoint_check(DropoutSpec{0.3}, {2, 9}, Mode::Infer, 8);
  adjoint_check(FlattenSpec{}, {3, 5}, Mode::Infer, 9);
  adjoint_check(DenseSpec{6}, {11}, Mode::Infer, 10);
  adjoint_check(SoftmaxOutputSpec{4}, {4}, Mode::Infer, 11);
}

TEST_CASE("softmax_t") {
  const std::vector<double> zero{0.0, 0.0};
  for (double t : {0.1, 1.0, 50.0}) {
    const auto p = softmax_t(zero, t);
    CHECK(p[0] == 0.5);
    CHECK(p[1] == 0.5);
  }
  const std::vector<double> l2{std::log(2.0), 0.0};
  const auto p = softmax_t(l2, 1.0);
  CHECK(p[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  const std::vector<double> far{10.0, 0.0};
  const auto hot = softmax_t(far, 1e6);
  CHECK(std::abs(hot[0] - 0.5) <= 1e-5);
  CHECK_THROWS(softmax_t(far, 0.0));
  CHECK_THROWS(softmax_t(far, -1.0));

  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> z(7);
    for (auto& v : z) v = rng.uniform(-20, 20);
    const double t = rng.uniform(0.5, 30);
    const auto a = softmax_t(z, t);
    double sum = 0.0;
    for (double v : a) sum += v;
    CHECK(std::abs(sum - 1.0) <= 1e-9);
    auto shifted = z;
    const double c = rng.uniform(-100, 100);
    for (auto& v : shifted) v += c;
    const auto b = softmax_t(shifted, t);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
  }
}

TEST_CASE("entropy grows with temperature") {
  Rng rng(13);
  std::vector<double> z(10);
  for (auto& v : z) v = rng.uniform(-5, 5);
  double prev = -1.0;
  for (double t : {0.5, 1.0, 2.0, 10.0, 50.0}) {
    const double h = entropy(softmax_t(z, t));
    CHECK(h >= prev - 1e-12);
    prev = h;
  }
}

TEST_CASE("cross_entropy") {
  const std::vector<double> sure{1.0, 0.0};
  CHECK(cross_entropy(sure, 0) == 0.0);
  const std::vector<double> inv_e{1.0 / std::numbers::e, 1.0 - 1.0 / std::numbers::e};
  CHECK(cross_entropy(inv_e, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cross_entropy(sure, 1) == doctest::Approx(-std::log(1e-12)));
  CHECK_THROWS(cross_entropy(sure, 2));

  // d/dz of -log softmax(z)[y] equals p - onehot; checked by central differences.
  Rng rng(14);
  std::vector<double> z(5);
  for (auto& v : z) v = rng.uniform(-3, 3);
  const auto p = softmax_t(z, 1.0);
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto zp = z, zm = z;
    zp[i] += 1e-6;
    zm[i] -= 1e-6;
    const double fd = (cross_entropy(softmax_t(zp), 2) - cross_entropy(softmax_t(zm), 2)) / 2e-6;
    CHECK(fd == doctest::Approx(p[i] - (i == 2 ? 1.0 : 0.0)).epsilon(1e-6));
  }
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient from fresh state") {
    Tensor w({3}, {1, 2, 3});
    const Tensor before = w;
    AdamState st;
    std::vector<Tensor*> params{&w};
    std::vector<Tensor> grads{Tensor({3}, 0.0)};
    adam_step(params, grads, st);
    CHECK(w == before);
    CHECK(st.t == 1);
  }
  SUBCASE("first step magnitude is lr") {
    Tensor w({3}, {1, 2, 3});
    AdamState st;
    std::vector<Tensor*> params{&w};
    std::vector<Tensor> grads{Tensor({3}, {0.5, -4.0, 1e-3})};
    adam_step(params, grads, st);
    CHECK(w[0] == doctest::Approx(1.0 - 0.001 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
    CHECK(w[1] == doctest::Approx(2.0 + 0.001 * 4.0 / (4.0 + 1e-8)).epsilon(1e-12));
    CHECK(std::abs(w[2] - 3.0) == doctest::Approx(0.001).epsilon(1e-4));
  }
  SUBCASE("minimizes w^2") {
    Tensor w({1}, 1.0);
    AdamState st;
    std::vector<Tensor*> params{&w};
    double prev = w[0] * w[0];
    for (int i = 0; i < 100; ++i) {
      std::vector<Tensor> grads{Tensor({1}, 2.0 * w[0])};
      adam_step(params, grads, st);
      const double f = w[0] * w[0];
      CHECK(f < prev);
      prev = f;
    }
    CHECK(std::abs(w[0]) < 1.0);
  }
  SUBCASE("non-finite gradient") {
    Tensor w({1}, 1.0);
    AdamState st;
    std::vector<Tensor*> params{&w};
    std::vector<Tensor> grads{Tensor({1}, std::nan(""))};
    CHECK_THROWS_WITH(adam_step(params, grads, st), "gradient explosion");
    CHECK(w[0] == 1.0);
  }
}

TEST_CASE("network shape chain and errors") {
  const Net net = small_cnn(1);
  const auto chain = net.shape_chain();
  CHECK(chain[0] == Shape{3, 56});
  CHECK(chain[1] == Shape{3, 28});
  CHECK(chain[4] == Shape{4, 26});
  CHECK(chain[5] == Shape{4, 8});
  CHECK(chain[8] == Shape{32});
  CHECK(net.n_classes() == 4);
  CHECK_THROWS_WITH_AS(Net({1, 8}, {Conv1DSpec{2, 10, 1}, FlattenSpec{}, DenseSpec{2}, SoftmaxOutputSpec{2}}, 1),
                       doctest::Contains("layer 0 (Conv1D)"), ShapeError);
  CHECK_THROWS_AS(Net({4}, {DenseSpec{3}, SoftmaxOutputSpec{2}}, 1), ShapeError);
  CHECK(small_cnn(5) == small_cnn(5));
  CHECK_FALSE(small_cnn(5) == small_cnn(6));
}

TEST_CASE("loss_input_gradient for a linear softmax model is W^T (p - onehot)") {
  Rng rng(21);
  Net net({6}, {DenseSpec{3}, SoftmaxOutputSpec{3}}, 3);
  auto& dense = std::get<Dense>(net.layers()[0]);
  dense.weight = random_tensor({3, 6}, rng);
  dense.bias = random_tensor({3}, rng);
  std::vector<double> x(6);
  for (auto& v : x) v = rng.uniform();
  // Closed form, independent of backprop.
  std::vector<double> z(3);
  for (std::size_t j = 0; j < 3; ++j) {
    z[j] = dense.bias[j];
    for (std::size_t i = 0; i < 6; ++i) z[j] += dense.weight[j * 6 + i] * x[i];
  }
  auto p = softmax_t(z, 1.0);
  p[1] -= 1.0;
  const auto g = loss_input_gradient(net, x, 1);
  for (std::size_t i = 0; i < 6; ++i) {
    double expect = 0.0;
    for (std::size_t j = 0; j < 3; ++j) expect += dense.weight[j * 6 + i] * p[j];
    CHECK(g[i] == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("finite differences converge at O(h^2)") {
    const auto fd1 = finite_diff_gradient(net, x, 1, 1e-2);
    const auto fd2 = finite_diff_gradient(net, x, 1, 5e-3);
    double e1 = 0, e2 = 0;
    for (std::size_t i = 0; i < 6; ++i) {
      e1 = std::max(e1, std::abs(fd1[i] - g[i]));
      e2 = std::max(e2, std::abs(fd2[i] - g[i]));
    }
    CHECK(e2 < e1);
    CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.1));
  }
  CHECK_THROWS_WITH(finite_diff_gradient(net, x, 1, 0.0), "degenerate step");
}

TEST_CASE("loss_input_gradient of a CNN matches finite differences") {
  Rng rng(31);
  Net net = small_cnn(7);
  warm_up(net, rng);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<double> x(60);
    for (auto& v : x) v = rng.uniform();
    const int label = trial % 4;
    const auto g = loss_input_gradient(net, x, label);
    const auto fd = finite_diff_gradient(net, x, label, 1e-6);
    double scale = 0.0, err = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      scale = std::max({scale, std::abs(g[i]), std::abs(fd[i])});
      err = std::max(err, std::abs(g[i] - fd[i]));
    }
    CHECK(err / scale <= 1e-4);
  }
}

TEST_CASE("inputs outside every pooled window get zero gradient") {
  // Length 61: conv k=5 -> 57, pool 2 -> 28 (conv output 56 dropped), so the
  // last input feeds only a truncated position.
  Net net({1, 61}, {Conv1DSpec{2, 5, 1}, MaxPool1DSpec{2}, FlattenSpec{}, DenseSpec{3}, SoftmaxOutputSpec{3}}, 4);
  Rng rng(5);
  std::vector<double> x(61);
  for (auto& v : x) v = rng.uniform();
  const auto g = loss_input_gradient(net, x, 0);
  CHECK(g[60] == 0.0);
}

TEST_CASE("training loss decreases on a toy 2-class set") {
  Rng rng(41);
  Net net({1, 16}, {Conv1DSpec{2, 3, 1}, MaxPool1DSpec{2}, FlattenSpec{}, DenseSpec{2}, SoftmaxOutputSpec{2}}, 9);
  Tensor batch({10, 1, 16});
  std::vector<int> labels(10);
  for (std::size_t n = 0; n < 10; ++n) {
    labels[n] = static_cast<int>(n % 2);
    for (std::size_t t = 0; t < 16; ++t) batch[n * 16 + t] = 0.5 + (labels[n] ? 0.3 : -0.3) * std::sin(0.7 * t) + rng.uniform(-0.05, 0.05);
  }
  auto total_loss = [&]() {
    double s = 0.0;
    for (std::size_t n = 0; n < 10; ++n) {
      s += loss_value(net, std::span<const double>(batch.data() + n * 16, 16), labels[n]);
    }
    return s / 10;
  };
  const double initial = total_loss();
  AdamState st;
  st.config.lr = 0.01;
  for (int step = 0; step < 50; ++step) {
    Tape tape;
    const auto logits = net.forward(batch, Mode::Train, &rng, &tape);
    Tensor grad(logits.shape());
    for (std::size_t n = 0; n < 10; ++n) {
      auto p = softmax_t(std::span<const double>(logits.data() + n * 2, 2));
      p[static_cast<std::size_t>(labels[n])] -= 1.0;
      for (std::size_t j = 0; j < 2; ++j) grad[n * 2 + j] = p[j] / 10;
    }
    auto grads = net.zero_gradients();
    net.backward(tape, grad, &grads);
    auto params = net.parameters();
    adam_step(params, grads, st);
  }
  CHECK(total_loss() < initial);
}

TEST_CASE("model JSON round trip preserves predictions") {
  Rng rng(51);
  Net net = small_cnn(11);
  warm_up(net, rng);
  net.norm_stats = NormStats::identity(1);
  const auto j = net_to_json(net);
  CHECK(j.at("format_version") == kModelFormatVersion);
  const Net back = net_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back == net);
  std::vector<double> x(60);
  for (auto& v : x) v = rng.uniform();
  const auto a = predict_proba(net, x);
  const auto b = predict_proba(back, x);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-9);
}
