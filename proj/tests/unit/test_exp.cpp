#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cloak/error.hpp"
#include "cloak/exp.hpp"

using namespace cloak;
using namespace cloak::exp;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("cloak_test_exp_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const Table* find_table(const PipelineResult& r, const std::string& name) {
  for (const auto& t : r.tables) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

}  // namespace

TEST_CASE("key-value parsing") {
  const auto kv = parse_key_values("# comment\nseed = 7  # trailing\n\n  out=runs/a \n");
  CHECK(kv.size() == 2);
  CHECK(kv.at("seed") == "7");
  CHECK(kv.at("out") == "runs/a");

  try {
    parse_key_values("seed = 1\nnot a pair\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(parse_key_values("seed = 1\nseed = 2\n"), ParseError);
  CHECK_THROWS_AS(parse_key_values("= 3\n"), ParseError);
}

TEST_CASE("experiment config") {
  SUBCASE("defaults") {
    const auto c = ExperimentConfig::from_keys({});
    CHECK(c.last_stage == 4);
    CHECK(c.attacks.size() == 10);
    CHECK(c.temperatures.size() == 9);
    CHECK(c.family == "cnn");
  }
  SUBCASE("values and relative paths") {
    const auto c = ExperimentConfig::from_keys(
        parse_key_values("out = r\nstages = 2, 1\ntrain.epochs = 4\nattack.kinds = GSA, sma\n"
                         "defense.temperatures = none\ngen.seed = 9\n"),
        "/base");
    CHECK(c.out == fs::path("/base/r"));
    CHECK(c.last_stage == 2);
    CHECK(c.train.epochs == 4);
    REQUIRE(c.attacks.size() == 2);
    CHECK(c.attacks[1] == attack::AttackKind::SMA);
    CHECK(c.temperatures.empty());
    CHECK(c.gen_seed_set);
  }
  SUBCASE("rejections") {
    auto bad = [](const std::string& text) { return ExperimentConfig::from_keys(parse_key_values(text)); };
    CHECK_THROWS_AS(bad("colour = red\n"), ConfigError);
    CHECK_THROWS_AS(bad("train.epochs = many\n"), ConfigError);
    CHECK_THROWS_AS(bad("train.epochs = -3\n"), ConfigError);
    CHECK_THROWS_AS(bad("stages = 1, 3\n"), ConfigError);
    CHECK_THROWS_AS(bad("stages = 2\n"), ConfigError);
    CHECK_THROWS_AS(bad("attack.kinds = GSA, GSA\n"), ConfigError);
    CHECK_THROWS_AS(bad("attack.kinds = XYZ\n"), ConfigError);
    CHECK_THROWS_AS(bad("defense.temperatures = 0\n"), ConfigError);
    CHECK_THROWS_AS(bad("classifier.family = knn-fine\n"), ConfigError);
    CHECK_THROWS_AS(bad("data.path = /nonexistent/traces.csv\n"), ConfigError);
    CHECK_THROWS_AS(bad("gen.per_class = 2\n"), ConfigError);
    CHECK_NOTHROW(bad("classifier.family = knn-fine\nstages = 1, 2\n"));
  }
  SUBCASE("load") {
    const auto dir = scratch_dir("load");
    std::ofstream(dir / "exp.txt") << "out = here\nseed = 3\n";
    const auto c = ExperimentConfig::load(dir / "exp.txt");
    CHECK(c.out == dir / "here");
    CHECK(c.seed == 3);
    CHECK_THROWS_AS(ExperimentConfig::load(dir / "missing.txt"), ConfigError);
    fs::remove_all(dir);
  }
}

TEST_CASE("tables") {
  Table t{"demo", {"name", "value", "note"}, {}};
  t.rows.push_back({std::string("a"), num(0.1), std::monostate{}});
  t.rows.push_back({std::string("b"), num(std::nan("")), std::string("x y")});
  t.rows.push_back({std::string("c"), num(1e-17), std::string("")});

  std::ostringstream csv;
  t.write_csv(csv);
  CHECK(csv.str() == "name,value,note\na,0.1,NA\nb,NA,x y\nc,1e-17,\n");

  std::istringstream in(csv.str());
  const auto back = Table::read_csv(in, "demo");
  CHECK(back.columns == t.columns);
  REQUIRE(back.rows.size() == 3);
  CHECK(std::get<double>(back.rows[0][1]) == 0.1);
  CHECK(std::holds_alternative<std::monostate>(back.rows[1][1]));
  CHECK(std::get<double>(back.rows[2][1]) == 1e-17);

  const auto j = t.to_json();
  CHECK(j["table"] == "demo");
  CHECK(j["rows"][0]["value"] == 0.1);
  CHECK(j["rows"][0]["note"] == "NA");
  CHECK(j["rows"][1]["value"] == "NA");

  Table ragged{"r", {"a", "b"}, {{num(1.0)}}};
  std::ostringstream sink;
  CHECK_THROWS_AS(ragged.write_csv(sink), Error);
  Table comma{"q", {"a"}, {{std::string("x,y")}}};
  CHECK_THROWS_AS(comma.write_csv(sink), Error);

  std::istringstream short_row("a,b\n1\n");
  CHECK_THROWS_AS(Table::read_csv(short_row, "s"), ParseError);

  const auto dir = scratch_dir("emit");
  const auto written = emit_report({t}, dir / "nested", Format::Json);
  REQUIRE(written.size() == 1);
  CHECK(written[0].filename() == "demo.json");
  CHECK(fs::exists(written[0]));
  CHECK_THROWS_AS(emit_report({}, dir, Format::Csv), Error);
  fs::remove_all(dir);
}

TEST_CASE("prepare dataset") {
  synth::GenConfig g;
  g.n_classes = 3;
  g.n_samples = 20;
  const auto raw = synth::generate_dataset(g, 10);

  const auto ds = prepare_dataset(raw, 4);
  REQUIRE(ds.norm_stats.has_value());
  for (const auto& lt : ds.traces) CHECK(lt.trace.normalized());
  CHECK(ds.splits.size() == ds.traces.size());

  auto unlabeled = raw;
  unlabeled.traces[3].label = -1;
  CHECK_THROWS_AS(prepare_dataset(unlabeled, 4), Error);
  CHECK_THROWS_AS(prepare_dataset(Dataset{}, 4), Error);
}

TEST_CASE("pipeline stages 1-2 with a model without gradients") {
  const auto dir = scratch_dir("pipeline");
  auto c = ExperimentConfig::from_keys(parse_key_values(
      "stages = 1, 2\n"
      "classifier.family = knn-fine\n"
      "gen.n_classes = 3\n"
      "gen.n_samples = 20\n"
      "gen.per_class = 10\n"
      "attack.kinds = CRA, GSA\n"
      "attack.n_samples = 2\n"));
  c.out = dir;
  const auto r = run_pipeline(c);
  CHECK(r.stages.size() == 2);
  CHECK(fs::exists(dir / "dataset.csv"));
  CHECK(fs::exists(dir / "models" / "unprotected.json"));
  CHECK(fs::exists(dir / "stages.json"));

  const auto* attacks = find_table(r, "attacks_unprotected");
  REQUIRE(attacks != nullptr);
  REQUIRE(attacks->rows.size() == 2);
  CHECK(std::get<std::string>(attacks->rows[0][0]) == "CRA");
  CHECK(std::holds_alternative<double>(attacks->rows[0][3]));
  // GSA needs gradients; kNN has none, so every metric is NA.
  CHECK(std::get<std::string>(attacks->rows[1][0]) == "GSA");
  CHECK(std::holds_alternative<std::monostate>(attacks->rows[1][3]));
  CHECK(find_table(r, "accuracy") != nullptr);
  CHECK(find_table(r, "attacks_hardened") == nullptr);
  fs::remove_all(dir);
}
