#include <doctest.h>

#include <cmath>

#include "cloak/defenses.hpp"
#include "cloak/error.hpp"
#include "cloak/synth.hpp"

using namespace cloak;
using namespace cloak::defense;

namespace {

Dataset small_dataset() {
  synth::GenConfig g;
  g.n_classes = 4;
  g.n_samples = 40;
  g.seed = 7;
  return synth::generate_dataset(g, 40);
}

clf::CnnConfig small_arch() {
  clf::CnnConfig c;
  c.input_len = 200;
  c.conv1_filters = 6;
  c.conv1_k = 5;
  c.pool = 3;
  c.conv2_filters = 8;
  c.conv2_k = 5;
  c.dense = 16;
  c.n_classes = 4;
  return c;
}

clf::TrainConfig quick() {
  clf::TrainConfig t;
  t.epochs = 8;
  t.batch_size = 16;
  t.adam.lr = 0.005;
  return t;
}

// Always answers with the label it was told.
class OracleModel final : public clf::Classifier {
 public:
  explicit OracleModel(std::vector<AdvSample> known) : known_(std::move(known)) {}
  std::string family() const override { return "oracle"; }
  std::size_t n_classes() const override { return 4; }
  std::size_t input_size() const override { return known_[0].x.size(); }
  std::vector<double> predict_proba(std::span<const double> x) const override {
    std::vector<double> p(4, 0.0);
    for (const auto& s : known_) {
      if (std::equal(s.x.begin(), s.x.end(), x.begin(), x.end())) p[static_cast<std::size_t>(s.label)] = 1.0;
    }
    return p;
  }
  nlohmann::json to_json() const override { return {}; }

 private:
  std::vector<AdvSample> known_;
};

struct Fixture {
  Dataset ds = small_dataset();
  nn::Net model = clf::train_cnn(clf::build_cnn(small_arch(), 3), ds, quick()).first;
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("invalidation rate") {
  auto& f = fixture();
  const clf::NetClassifier original(f.model, "cnn");
  const auto test = clf::examples(f.ds, Split::Test);
  const auto run = attack::evaluate_attack(original, test, 40, attack::AttackKind::GSA, {}, 10);
  const auto adv = successful_samples(run);
  REQUIRE_FALSE(adv.empty());
  CHECK(invalidation_rate(original, adv) == 0.0);
  CHECK(invalidation_rate(OracleModel(adv), adv) == 1.0);
  CHECK_THROWS(invalidation_rate(original, std::vector<AdvSample>{}));
}

TEST_CASE("adversarial retraining") {
  auto& f = fixture();
  const clf::NetClassifier original(f.model, "cnn");
  const auto train = clf::examples(f.ds, Split::Train);
  const auto val = clf::examples(f.ds, Split::Val);
  const auto run = attack::evaluate_attack(original, train, 40, attack::AttackKind::GSA, {}, 100);
  const auto adv = successful_samples(run);
  REQUIRE(adv.size() >= 50);

  RetrainConfig rc;
  rc.train = quick();
  rc.train.epochs = 4;
  const nn::Net before = f.model;
  const auto [hardened, h] = adversarial_retrain(f.model, f.ds, adv, rc);
  CHECK(f.model == before);
  CHECK(h.epochs() == 4);
  CHECK(hardened.norm_stats == f.model.norm_stats);
  const clf::NetClassifier hard(hardened, "cnn");
  CHECK(invalidation_rate(hard, adv) >= 0.5);
  CHECK(clf::evaluate(hard, val).accuracy >= clf::evaluate(original, val).accuracy - 0.1);

  SUBCASE("no adversarial samples is plain continued training") {
    const auto plain = adversarial_retrain(f.model, f.ds, {}, rc);
    auto direct = f.model;
    clf::fit(direct, {train, {}, {}}, val, rc.train);
    CHECK(plain.first == direct);
  }
  SUBCASE("normalization mismatch") {
    auto other = f.model;
    other.norm_stats = NormStats{{{0.0, 2.0}, {0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0}}};
    CHECK_THROWS(adversarial_retrain(other, f.ds, adv, rc));
  }
  SUBCASE("bad config") {
    rc.n_adversarial = 0;
    CHECK_THROWS_AS(rc.validate(), ConfigError);
  }
}

TEST_CASE("entropy grows with the softmax temperature of a fixed teacher") {
  auto& f = fixture();
  const auto val = clf::examples(f.ds, Split::Val);
  double prev = -1.0;
  for (double t : {1.0, 10.0, 50.0}) {
    auto net = f.model;
    net.set_temperature(t);
    const double h = mean_prediction_entropy(net, val);
    CHECK(h >= prev - 1e-12);
    CHECK(h <= std::log(4.0) + 1e-12);
    prev = h;
  }
}

TEST_CASE("distillation") {
  auto& f = fixture();
  DistillConfig dc;
  dc.temperature = 1.0;
  dc.teacher = quick();
  dc.student = quick();
  dc.student.seed = 2;
  const auto r = distill(f.ds, small_arch(), dc);
  CHECK(r.teacher.temperature() == 1.0);
  CHECK(r.student.temperature() == 1.0);
  CHECK(r.student.parameter_count() == r.teacher.parameter_count());
  CHECK(r.student.norm_stats == f.ds.norm_stats);
  CHECK(r.student_history.epochs() == dc.student.epochs);
  const auto val = clf::examples(f.ds, Split::Val);
  const double teacher_acc = clf::evaluate_net(r.teacher, val).accuracy;
  const double student_acc = clf::evaluate_net(r.student, val).accuracy;
  CHECK(student_acc >= teacher_acc - 0.02);
  CHECK(r.teacher_entropy >= 0.0);

  SUBCASE("high temperature deploys at 1") {
    dc.temperature = 20.0;
    const auto hot = distill(f.ds, small_arch(), dc);
    CHECK(hot.teacher.temperature() == 20.0);
    CHECK(hot.student.temperature() == 1.0);
    CHECK(hot.teacher_entropy > r.teacher_entropy);
  }
  SUBCASE("bad temperature") {
    dc.temperature = 0.0;
    CHECK_THROWS_AS(distill(f.ds, small_arch(), dc), ConfigError);
  }
}

TEST_CASE("adversarial set crafting") {
  auto& f = fixture();
  const clf::NetClassifier original(f.model, "cnn");
  const auto train = clf::examples(f.ds, Split::Train);
  for (auto kind : {attack::AttackKind::GSA, attack::AttackKind::AGNA}) {
    CAPTURE(kind);
    const auto full = successful_samples(attack::evaluate_attack(original, train, 40, kind, {}, train.size()));
    REQUIRE(full.size() > 3);
    for (std::size_t n : {std::size_t{3}, full.size() - 1, full.size() + 5}) {
      const auto got = craft_adversarial_set(original, train, 40, kind, {}, n);
      REQUIRE(got.size() == std::min(n, full.size()));
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].label == full[i].label);
        CHECK(got[i].x == full[i].x);
      }
    }
  }
}
