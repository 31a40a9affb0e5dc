#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "cloak/clf/cnn.hpp"
#include "cloak/clf/knn.hpp"
#include "cloak/clf/pca.hpp"
#include "cloak/clf/registry.hpp"
#include "cloak/clf/tree.hpp"
#include "cloak/error.hpp"
#include "cloak/rng.hpp"
#include "cloak/synth.hpp"

using namespace cloak;
using namespace cloak::clf;

namespace {

struct Points {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::vector<Example> view() const {
    std::vector<Example> out;
    for (std::size_t i = 0; i < rows.size(); ++i) out.push_back({rows[i], labels[i]});
    return out;
  }
};

Points random_points(std::size_t n, std::size_t d, int classes, std::uint64_t seed) {
  Rng rng(seed);
  Points p;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> r(d);
    for (auto& v : r) v = rng.uniform();
    p.rows.push_back(std::move(r));
    p.labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))));
  }
  return p;
}

Dataset small_synthetic(int classes = 4, std::size_t per_class = 12, std::size_t samples = 40) {
  synth::GenConfig g;
  g.n_classes = classes;
  g.n_samples = samples;
  g.seed = 3;
  return synth::generate_dataset(g, per_class);
}

CnnConfig small_cnn_config(std::size_t input_len, std::size_t classes) {
  CnnConfig c;
  c.input_len = input_len;
  c.conv1_filters = 6;
  c.conv1_k = 5;
  c.pool = 3;
  c.conv2_filters = 8;
  c.conv2_k = 5;
  c.dense = 16;
  c.n_classes = classes;
  return c;
}

// Independent brute-force kNN: full stable sort, explicit vote table.
int brute_knn(const Points& p, const std::vector<double>& x, std::size_t k, Metric m, bool weighted, int classes) {
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t i = 0; i < p.rows.size(); ++i) {
    double s = 0;
    if (m == Metric::Euclidean) {
      for (std::size_t j = 0; j < x.size(); ++j) s += std::pow(x[j] - p.rows[i][j], 2);
      s = std::sqrt(s);
    } else if (m == Metric::Minkowski3) {
      for (std::size_t j = 0; j < x.size(); ++j) s += std::pow(std::abs(x[j] - p.rows[i][j]), 3);
      s = std::pow(s, 1.0 / 3.0);
    } else {
      double ab = 0, aa = 0, bb = 0;
      for (std::size_t j = 0; j < x.size(); ++j) {
        ab += x[j] * p.rows[i][j];
        aa += x[j] * x[j];
        bb += p.rows[i][j] * p.rows[i][j];
      }
      s = 1 - ab / std::sqrt(aa * bb);
    }
    d.push_back({s, i});
  }
  std::stable_sort(d.begin(), d.end());
  std::vector<double> votes(static_cast<std::size_t>(classes), 0.0);
  for (std::size_t r = 0; r < k; ++r) votes[static_cast<std::size_t>(p.labels[d[r].second])] += weighted ? 1.0 / d[r].first : 1.0;
  int best = 0;
  for (int c = 1; c < classes; ++c) {
    if (votes[static_cast<std::size_t>(c)] > votes[static_cast<std::size_t>(best)]) best = c;
  }
  return best;
}

}  // namespace

TEST_CASE("build_cnn shape chain at full scale") {
  CnnConfig c;  // input 5000, 20 classes
  const auto net = build_cnn(c, 1);
  const auto chain = net.shape_chain();
  REQUIRE(chain.size() == 13);
  // Valid convolution: out = in - k + 1; pooling: floor(in / 10).
  CHECK(chain[0] == nn::Shape{50, 4991});
  CHECK(chain[1] == nn::Shape{50, 499});
  CHECK(chain[4] == nn::Shape{100, 490});
  CHECK(chain[5] == nn::Shape{100, 49});
  CHECK(chain[8] == nn::Shape{4900});
  CHECK(chain[9] == nn::Shape{400});
  CHECK(chain[11] == nn::Shape{20});
  CHECK(net.n_classes() == 20);

  c.n_classes = 5;
  CHECK(build_cnn(c, 1).n_classes() == 5);
  CHECK(build_cnn(c, 9) == build_cnn(c, 9));

  c.input_len = 30;  // 30 -> 21 -> 2, too short for the second kernel
  CHECK_THROWS_WITH_AS(build_cnn(c, 1), doctest::Contains("layer 4 (Conv1D)"), ShapeError);
}

TEST_CASE("fresh network output is near uniform") {
  CnnConfig c;
  c.input_len = 1000;
  const auto net = build_cnn(c, 5);
  Rng rng(6);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> x(1000);
    for (auto& v : x) v = rng.uniform();
    const auto p = nn::predict_proba(net, x);
    CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) <= 1e-9);
    worst = std::max(worst, *std::max_element(p.begin(), p.end()));
  }
  CHECK(worst <= 0.25);
}

TEST_CASE("train_cnn on a small synthetic set") {
  auto ds = small_synthetic();
  const auto net = build_cnn(small_cnn_config(5 * 40, 4), 2);
  TrainConfig tc;
  tc.epochs = 15;
  tc.batch_size = 8;
  tc.seed = 4;
  tc.adam.lr = 0.005;
  const auto [trained, h] = train_cnn(net, ds, tc);
  CHECK(h.epochs() == 15);
  CHECK(h.val_accuracy.size() == 15);
  CHECK(h.val_accuracy.back() >= 0.99);
  CHECK(trained.norm_stats == ds.norm_stats);
  CHECK_FALSE(trained == net);  // input untouched, result differs

  const auto& lt = ds.traces[ds.indices(Split::Train)[0]];
  const auto p = predict(trained, lt.trace);
  CHECK(argmax(p) == lt.label);
  CHECK(p[static_cast<std::size_t>(lt.label)] >= 0.99);
  CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) <= 1e-9);

  SUBCASE("deterministic") {
    const auto again = train_cnn(net, ds, tc);
    CHECK(again.second == h);
    CHECK(again.first == trained);
  }
  SUBCASE("preconditions") {
    tc.epochs = 0;
    CHECK_THROWS_AS(train_cnn(net, ds, tc), ConfigError);
    tc.epochs = 1;
    CHECK_THROWS_AS(train_cnn(build_cnn(small_cnn_config(200, 5), 2), ds, tc), ConfigError);
    CHECK_THROWS_AS(predict(trained, Trace::zeros(5, 41, true)), ShapeError);
  }
}

TEST_CASE("batched inference is independent of thread count") {
  auto ds = small_synthetic(4, 40);
  const auto net = build_cnn(small_cnn_config(200, 4), 8);
  const NetClassifier clf(net, "cnn");
  const auto xs = examples(ds, Split::Train);
  setenv("CLOAK_THREADS", "1", 1);
  const auto a = clf.predict_proba_batch(xs);
  setenv("CLOAK_THREADS", "3", 1);
  const auto b = clf.predict_proba_batch(xs);
  unsetenv("CLOAK_THREADS");
  CHECK(a == b);
}

TEST_CASE("kNN toy example") {
  Points p;
  p.rows = {{0, 0}, {0, 0.1}, {1, 1}};
  p.labels = {0, 0, 1};  // A = 0, B = 1
  const auto train = p.view();
  const std::vector<double> x{0.9, 0.9};
  // Distances: 1.2728, 1.2042, 0.1414. Unweighted 2:1 for A; weighted
  // 1/1.2728 + 1/1.2042 = 1.616 for A against 7.07 for B.
  CHECK(knn_classify(train, x, {3, Metric::Euclidean, false}, 2) == 0);
  CHECK(knn_classify(train, x, {3, Metric::Euclidean, true}, 2) == 1);
  CHECK(knn_classify(train, std::vector<double>{1, 1}, {1, Metric::Euclidean, false}, 2) == 1);
  CHECK(knn_classify(train, std::vector<double>{0, 0.1}, {3, Metric::Euclidean, true}, 2) == 0);
  CHECK_THROWS(knn_classify(train, x, {4, Metric::Euclidean, false}, 2));

  // Vote tie between labels 0 and 1 goes to 0.
  Points tie;
  tie.rows = {{1, 0}, {0, 1}};
  tie.labels = {1, 0};
  CHECK(knn_classify(tie.view(), std::vector<double>{5, 5}, {2, Metric::Euclidean, false}, 2) == 0);
}

TEST_CASE("kNN matches a brute-force oracle") {
  const auto p = random_points(300, 12, 5, 21);
  const auto train = p.view();
  Rng rng(22);
  const std::vector<KnnConfig> configs = {KnnConfig::preset("fine"), KnnConfig::preset("medium"),
                                          KnnConfig::preset("coarse"), KnnConfig::preset("cosine"),
                                          KnnConfig::preset("cubic"), KnnConfig::preset("weighted")};
  for (int q = 0; q < 100; ++q) {
    std::vector<double> x(12);
    for (auto& v : x) v = rng.uniform();
    for (const auto& c : configs) CHECK(knn_classify(train, x, c, 5) == brute_knn(p, x, c.k, c.metric, c.weighted, 5));
  }
}

TEST_CASE("kNN properties") {
  const auto p = random_points(80, 6, 4, 31);
  const auto train = p.view();
  for (Metric m : {Metric::Euclidean, Metric::Cosine, Metric::Minkowski3}) {
    for (std::size_t i = 0; i < p.rows.size(); ++i) CHECK(knn_classify(train, p.rows[i], {1, m, false}, 4) == p.labels[i]);
  }
  Rng rng(32);
  for (int q = 0; q < 30; ++q) {
    std::vector<double> x(6);
    for (auto& v : x) v = rng.uniform();
    auto x3 = x;
    for (auto& v : x3) v *= 3;
    const KnnConfig c{10, Metric::Cosine, false};
    CHECK(knn_classify(train, x, c, 4) == knn_classify(train, x3, c, 4));
  }
}

TEST_CASE("tree on separable 1D data") {
  Points p;
  for (int i = 0; i < 20; ++i) {
    p.rows.push_back({static_cast<double>(i)});
    p.labels.push_back(i < 8 ? 0 : 1);
  }
  const auto tree = tree_fit(p.view(), 2, {100});
  CHECK(tree.n_splits() == 1);
  CHECK(tree.nodes()[0].threshold == 7.5);
  for (std::size_t i = 0; i < p.rows.size(); ++i) CHECK(tree_classify(tree, p.rows[i]) == p.labels[i]);

  Points one;
  one.rows = {{1.0}, {2.0}};
  one.labels = {0, 0};
  CHECK_THROWS(tree_fit(one.view(), 2, {5}));
  CHECK_THROWS_AS(tree_fit(p.view(), 2, {0}), ConfigError);
}

TEST_CASE("tree structure and monotone accuracy") {
  const auto p = random_points(400, 5, 6, 41);
  const auto train = p.view();
  double prev = 0.0;
  for (std::size_t splits : {1u, 2u, 5u, 10u, 20u, 50u, 100u}) {
    const auto tree = tree_fit(train, 6, {splits});
    CHECK(tree.n_splits() <= splits);
    CHECK(tree.n_leaves() <= splits + 1);
    CHECK(tree.depth() <= splits);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < p.rows.size(); ++i) correct += tree_classify(tree, p.rows[i]) == p.labels[i];
    const double acc = static_cast<double>(correct) / static_cast<double>(p.rows.size());
    CHECK(acc >= prev);
    prev = acc;
  }
}

TEST_CASE("coarse tree trails the fine tree on many classes") {
  auto ds = small_synthetic(20, 10, 20);
  TrainConfig tc;
  const auto train = examples(ds, Split::Train);
  const auto fine = train_classifier("tree-fine", ds, tc);
  const auto coarse = train_classifier("tree-coarse", ds, tc);
  CHECK(evaluate(*coarse, train).accuracy < evaluate(*fine, train).accuracy);
  // Five splits give at most six leaves, so at most six of 20 classes.
  CHECK(evaluate(*coarse, train).accuracy <= 6.0 / 20.0 + 1e-12);
}

TEST_CASE("PCA") {
  SUBCASE("points on a line in 5000-D") {
    Rng rng(51);
    std::vector<double> dir(5000), origin(5000);
    for (auto& v : dir) v = rng.normal();
    for (auto& v : origin) v = rng.uniform();
    Points p;
    for (int i = 0; i < 12; ++i) {
      const double t = rng.uniform(-2, 2);
      std::vector<double> r(5000);
      for (std::size_t j = 0; j < r.size(); ++j) r[j] = origin[j] + t * dir[j];
      p.rows.push_back(std::move(r));
      p.labels.push_back(0);
    }
    const auto m = pca_fit(p.view());
    CHECK(m.n_components() == 1);
    CHECK(m.retained_fraction() == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("both factorizations, invariants") {
    for (std::size_t n : {30u, 200u}) {  // 30 < d uses the Gram route
      auto p = random_points(n, 60, 2, 52 + n);
      for (auto& r : p.rows) {  // correlated columns so truncation happens
        for (std::size_t j = 30; j < 60; ++j) r[j] = r[j - 30] * 0.9 + 0.01 * r[j];
      }
      const auto train = p.view();
      const auto m = pca_fit(train);
      CHECK(m.retained_fraction() >= 0.995);
      CHECK(m.n_components() < 60);
      for (std::size_t a = 0; a < m.n_components(); ++a) {
        for (std::size_t b = 0; b < m.n_components(); ++b) {
          double s = 0;
          for (std::size_t j = 0; j < 60; ++j) s += m.components[a * 60 + j] * m.components[b * 60 + j];
          CHECK(std::abs(s - (a == b ? 1.0 : 0.0)) <= 1e-8);
        }
        if (a > 0) CHECK(m.explained_variance[a] <= m.explained_variance[a - 1]);
      }
      for (double z : pca_transform(m, m.mean)) CHECK(std::abs(z) <= 1e-12);

      // Residual variance after reconstruction, measured directly.
      double total = 0, residual = 0;
      for (const auto& r : p.rows) {
        const auto back = pca_reconstruct(m, pca_transform(m, r));
        for (std::size_t j = 0; j < 60; ++j) {
          total += std::pow(r[j] - m.mean[j], 2);
          residual += std::pow(r[j] - back[j], 2);
        }
      }
      CHECK(1.0 - residual / total >= 0.995);
    }
  }
  SUBCASE("bad target") {
    const auto p = random_points(10, 3, 2, 53);
    CHECK_THROWS_AS(pca_fit(p.view(), 0.0), ConfigError);
    CHECK_THROWS_AS(pca_fit(p.view(), 1.5), ConfigError);
  }
}

TEST_CASE("every family round-trips through JSON") {
  auto ds = small_synthetic(3, 10, 20);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  const auto test = examples(ds, Split::Test);
  for (const auto& family : classifier_families()) {
    CAPTURE(family);
    std::unique_ptr<Classifier> clf;
    if (family == "cnn") {
      auto net = build_cnn(small_cnn_config(100, 3), 1);
      clf = std::make_unique<NetClassifier>(train_cnn(net, ds, tc).first, "cnn");
    } else if (family == "knn-coarse" || family == "pca-knn-coarse") {
      continue;  // k = 100 exceeds this tiny training set
    } else {
      clf = train_classifier(family, ds, tc);
    }
    CHECK(clf->family() == family);
    const auto back = classifier_from_json(nlohmann::json::parse(classifier_to_json(*clf).dump()));
    CHECK(back->family() == family);
    for (const auto& ex : test) {
      const auto a = clf->predict_proba(ex.x);
      const auto b = back->predict_proba(ex.x);
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-9);
    }
    CHECK(back->has_gradients() == (family == "cnn" || family == "linear"));
  }
  CHECK_THROWS(train_classifier("svm", ds, tc));
}
