#include <chrono>
#include <fstream>
#include <ostream>

#include "cloak/clf/registry.hpp"
#include "cloak/error.hpp"
#include "cloak/exp.hpp"
#include "cloak/format.hpp"
#include "cloak/trace_csv.hpp"

namespace cloak::exp {
namespace {

namespace fs = std::filesystem;
using attack::AttackKind;

struct Hardened {
  std::string name;
  double temperature = std::numeric_limits<double>::quiet_NaN();  // distillation T
  std::unique_ptr<clf::NetClassifier> model;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  double train_accuracy = 0.0;
  double teacher_entropy = std::numeric_limits<double>::quiet_NaN();
};

std::size_t kind_index(AttackKind k) {
  for (std::size_t i = 0; i < attack::kAllAttacks.size(); ++i) {
    if (attack::kAllAttacks[i] == k) return i;
  }
  return 0;
}

std::string name(AttackKind k) { return std::string(attack::to_string(k)); }

std::string temperature_name(double t) { return "dd_T" + format_number(t); }

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  body(out);
  if (!out) throw Error("failed writing " + path.string());
}

std::vector<Cell> summary_cells(const attack::AttackSummary& s) {
  return {num(static_cast<double>(s.requested)), num(static_cast<double>(s.evaluated)), num(s.success_rate),
          num(s.mean_orig_confidence),           num(s.mean_adv_confidence),             num(s.mean_mad),
          num(s.median_mad),                     num(s.mean_msd),                        num(s.mean_queries)};
}

const std::vector<std::string> kSummaryColumns = {"requested",      "evaluated", "success_rate",
                                                  "orig_confidence", "adv_confidence", "mean_mad",
                                                  "median_mad",      "mean_msd",   "mean_queries"};

class Pipeline {
 public:
  Pipeline(const ExperimentConfig& config, std::ostream* log) : c_(config), log_(log) {}

  PipelineResult run() {
    fs::create_directories(c_.out / "models");
    fs::create_directories(c_.out / "attacks");
    using Stage = void (Pipeline::*)(StageReport&);
    const Stage stages[] = {&Pipeline::train_stage, &Pipeline::attack_stage, &Pipeline::harden_stage,
                            &Pipeline::recraft_stage};
    for (int s = 1; s <= c_.last_stage; ++s) {
      StageReport report;
      report.stage = s;
      const auto t0 = std::chrono::steady_clock::now();
      say("stage " + std::to_string(s));
      (this->*stages[s - 1])(report);
      report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result_.stages.push_back(std::move(report));
      // Tables are rewritten after every stage so a later failure keeps them.
      finish_tables();
    }
    return std::move(result_);
  }

 private:
  std::uint64_t stage_seed(int s) const { return derive_seed(c_.seed, static_cast<std::uint64_t>(s)); }

  void say(const std::string& msg) {
    if (log_) *log_ << msg << std::endl;
  }

  fs::path artifact(StageReport& r, const fs::path& rel) {
    r.artifacts.push_back(c_.out / rel);
    return c_.out / rel;
  }

  // -- stage 1 --------------------------------------------------------------
  void train_stage(StageReport& r) {
    const auto seed = stage_seed(1);
    if (c_.data) {
      ds_ = prepare_dataset(synth::ingest_csv(*c_.data), derive_seed(seed, 1));
    } else {
      auto g = c_.gen;
      if (!c_.gen_seed_set) g.seed = derive_seed(seed, 0);
      ds_ = synth::generate_dataset(g, c_.per_class);
    }
    if (c_.export_dataset) write_trace_csv(artifact(r, "dataset.csv"), ds_);
    row_len_ = ds_.traces.front().trace.n_samples();
    train_ = clf::examples(ds_, Split::Train);
    val_ = clf::examples(ds_, Split::Val);
    test_ = clf::examples(ds_, Split::Test);

    auto tc = c_.train;
    tc.seed = derive_seed(seed, 2);
    clf::History history;
    if (c_.family == "cnn" || c_.family == "linear") {
      auto arch = c_.cnn;
      arch.input_len = train_.front().x.size();
      arch.n_classes = static_cast<std::size_t>(ds_.n_classes);
      const auto net = c_.family == "cnn" ? clf::build_cnn(arch, tc.seed)
                                          : clf::build_linear(arch.input_len, arch.n_classes, tc.seed);
      auto [trained, h] = clf::train_cnn(net, ds_, tc);
      history = std::move(h);
      model_ = std::make_unique<clf::NetClassifier>(std::move(trained), c_.family);
      write_file(artifact(r, "history.csv"), [&](std::ostream& o) { history.write_csv(o); });
    } else {
      model_ = clf::train_classifier(c_.family, ds_, tc, nullptr);
    }
    clf::save_classifier(artifact(r, "models/unprotected.json"), *model_);

    accuracy_.name = "accuracy";
    accuracy_.columns = {"model", "family", "distill_temperature", "train_accuracy", "val_accuracy", "test_accuracy",
                         "teacher_entropy"};
    const double val = clf::evaluate(*model_, val_).accuracy;
    accuracy_.rows.push_back({std::string("unprotected"), c_.family, std::monostate{}, num(clf::evaluate(*model_, train_).accuracy),
                              num(val), num(clf::evaluate(*model_, test_).accuracy), std::monostate{}});
    r.metrics["val_accuracy"] = val;
    say("  " + c_.family + " val accuracy " + format_number(val));

    for (const auto& family : c_.baselines) {
      const auto m = clf::train_classifier(family, ds_, tc, nullptr);
      accuracy_.rows.push_back({"baseline_" + family, family, std::monostate{}, num(clf::evaluate(*m, train_).accuracy),
                                num(clf::evaluate(*m, val_).accuracy), num(clf::evaluate(*m, test_).accuracy),
                                std::monostate{}});
    }
    tables_done_ = {&accuracy_};
  }

  // -- stage 2 --------------------------------------------------------------
  void attack_stage(StageReport& r) {
    const auto seed = stage_seed(2);
    unprotected_.name = "attacks_unprotected";
    unprotected_.columns = {"attack"};
    unprotected_.columns.insert(unprotected_.columns.end(), kSummaryColumns.begin(), kSummaryColumns.end());
    for (auto k : c_.attacks) {
      std::vector<Cell> row = {name(k)};
      if (attack::needs_gradients(k) && !model_->has_gradients()) {
        row.resize(unprotected_.columns.size());
        unprotected_.rows.push_back(std::move(row));
        runs_.emplace(k, attack::AttackRun{});
        continue;
      }
      auto params = c_.attack_params;
      params.seed = derive_seed(seed, kind_index(k));
      auto run = attack::evaluate_attack(*model_, test_, row_len_, k, params, c_.attack_samples);
      write_file(artifact(r, "attacks/unprotected_" + name(k) + ".csv"),
                 [&](std::ostream& o) { attack::write_results_csv(o, run); });
      const auto cells = summary_cells(run.summary);
      row.insert(row.end(), cells.begin(), cells.end());
      unprotected_.rows.push_back(std::move(row));
      r.metrics["success_rate_" + name(k)] = run.summary.success_rate;
      say("  " + name(k) + " success " + format_number(run.summary.success_rate) + " mean MAD " +
          format_number(run.summary.mean_mad));
      runs_.emplace(k, std::move(run));
    }
    tables_done_.push_back(&unprotected_);
  }

  // -- stage 3 --------------------------------------------------------------
  void harden_stage(StageReport& r) {
    const auto seed = stage_seed(3);
    const auto& base = dynamic_cast<const clf::NetClassifier&>(*model_);

    {
      auto params = c_.attack_params;
      params.seed = derive_seed(seed, 0);
      const auto adv =
          defense::craft_adversarial_set(*model_, train_, row_len_, c_.retrain.kind, params, c_.retrain.n_adversarial);
      auto rc = c_.retrain;
      rc.train.batch_size = c_.train.batch_size;
      rc.train.adam = c_.train.adam;
      rc.train.seed = derive_seed(seed, 1);
      auto [net, h] = defense::adversarial_retrain(base.net(), ds_, adv, rc);
      Hardened hd;
      hd.name = "retrain_" + name(c_.retrain.kind);
      hd.model = std::make_unique<clf::NetClassifier>(std::move(net), c_.family);
      r.metrics["retrain_samples"] = static_cast<double>(adv.size());
      say("  retrained on " + std::to_string(adv.size()) + " " + name(c_.retrain.kind) + " samples");
      hardened_.push_back(std::move(hd));
    }
    for (std::size_t i = 0; i < c_.temperatures.size(); ++i) {
      defense::DistillConfig dc;
      dc.temperature = c_.temperatures[i];
      dc.teacher = c_.train;
      dc.teacher.seed = derive_seed(seed, 100 + i);
      dc.student = c_.train;
      dc.student.seed = derive_seed(seed, 200 + i);
      if (c_.distill_epochs > 0) dc.teacher.epochs = dc.student.epochs = c_.distill_epochs;
      auto arch = c_.cnn;
      arch.input_len = train_.front().x.size();
      arch.n_classes = static_cast<std::size_t>(ds_.n_classes);
      auto d = defense::distill(ds_, arch, dc);
      Hardened hd;
      hd.name = temperature_name(dc.temperature);
      hd.temperature = dc.temperature;
      hd.teacher_entropy = d.teacher_entropy;
      hd.model = std::make_unique<clf::NetClassifier>(std::move(d.student), "cnn");
      say("  distilled at T=" + format_number(dc.temperature));
      hardened_.push_back(std::move(hd));
    }

    for (auto& hd : hardened_) {
      clf::save_classifier(artifact(r, "models/" + hd.name + ".json"), *hd.model);
      hd.train_accuracy = clf::evaluate(*hd.model, train_).accuracy;
      hd.val_accuracy = clf::evaluate(*hd.model, val_).accuracy;
      hd.test_accuracy = clf::evaluate(*hd.model, test_).accuracy;
      accuracy_.rows.push_back({hd.name, hd.model->family(), num(hd.temperature), num(hd.train_accuracy),
                                num(hd.val_accuracy), num(hd.test_accuracy), num(hd.teacher_entropy)});
      r.metrics["val_accuracy_" + hd.name] = hd.val_accuracy;
    }

    invalidation_.name = "invalidation";
    invalidation_.columns = {"attack"};
    for (const auto& hd : hardened_) invalidation_.columns.push_back(hd.name);
    for (auto k : c_.attacks) {
      const auto adv = defense::successful_samples(runs_.at(k));
      std::vector<Cell> row = {name(k)};
      for (const auto& hd : hardened_) {
        row.push_back(adv.empty() ? Cell{} : num(defense::invalidation_rate(*hd.model, adv)));
      }
      invalidation_.rows.push_back(std::move(row));
    }
    tables_done_.push_back(&invalidation_);
  }

  // -- stage 4 --------------------------------------------------------------
  void recraft_stage(StageReport& r) {
    const auto seed = stage_seed(4);
    hardened_table_.name = "attacks_hardened";
    hardened_table_.columns = {"defense", "attack"};
    hardened_table_.columns.insert(hardened_table_.columns.end(), kSummaryColumns.begin(), kSummaryColumns.end());
    mad_.name = "attacks_hardened_mad";
    mad_.columns = {"attack"};
    for (const auto& hd : hardened_) mad_.columns.push_back(hd.name);
    std::vector<std::vector<Cell>> mad_rows(c_.attacks.size());
    for (std::size_t a = 0; a < c_.attacks.size(); ++a) mad_rows[a].push_back(name(c_.attacks[a]));

    for (std::size_t d = 0; d < hardened_.size(); ++d) {
      const auto& hd = hardened_[d];
      const bool degenerate = !(hd.val_accuracy >= kDegenerateAccuracy);
      for (std::size_t a = 0; a < c_.attacks.size(); ++a) {
        const auto k = c_.attacks[a];
        std::vector<Cell> row = {hd.name, name(k)};
        if (degenerate) {
          row.resize(hardened_table_.columns.size());
          hardened_table_.rows.push_back(std::move(row));
          mad_rows[a].emplace_back();
          continue;
        }
        auto params = c_.attack_params;
        params.seed = derive_seed(seed, d * attack::kAllAttacks.size() + kind_index(k));
        const auto run = attack::evaluate_attack(*hd.model, test_, row_len_, k, params, c_.attack_samples);
        write_file(artifact(r, "attacks/" + hd.name + "_" + name(k) + ".csv"),
                   [&](std::ostream& o) { attack::write_results_csv(o, run); });
        const auto cells = summary_cells(run.summary);
        row.insert(row.end(), cells.begin(), cells.end());
        hardened_table_.rows.push_back(std::move(row));
        mad_rows[a].push_back(num(run.summary.mean_mad));
        r.metrics["success_rate_" + hd.name + "_" + name(k)] = run.summary.success_rate;
      }
      say("  re-crafted against " + hd.name);
    }
    mad_.rows = std::move(mad_rows);
    tables_done_.push_back(&hardened_table_);
    tables_done_.push_back(&mad_);
  }

  void finish_tables() {
    std::vector<Table> tables;
    for (const auto* t : tables_done_) tables.push_back(*t);
    emit_report(tables, c_.out, Format::Csv);
    emit_report(tables, c_.out, Format::Json);
    result_.tables = std::move(tables);
  }

  const ExperimentConfig& c_;
  std::ostream* log_;
  PipelineResult result_;

  Dataset ds_;
  std::size_t row_len_ = 0;
  std::vector<clf::Example> train_, val_, test_;
  std::unique_ptr<clf::Classifier> model_;
  std::map<AttackKind, attack::AttackRun> runs_;
  std::vector<Hardened> hardened_;

  Table accuracy_, unprotected_, invalidation_, hardened_table_, mad_;
  std::vector<const Table*> tables_done_;
};

}  // namespace

PipelineResult run_pipeline(const ExperimentConfig& config, std::ostream* log) {
  config.validate();
  auto result = Pipeline(config, log).run();

  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : result.stages) {
    nlohmann::json artifacts = nlohmann::json::array();
    for (const auto& a : s.artifacts) artifacts.push_back(a.string());
    stages.push_back({{"stage", s.stage}, {"wall_seconds", s.wall_seconds}, {"artifacts", artifacts}, {"metrics", s.metrics}});
  }
  std::ofstream(config.out / "stages.json") << stages.dump(2) << '\n';
  return result;
}

}  // namespace cloak::exp
