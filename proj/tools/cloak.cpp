// cloak: command-line front end for the toolkit.
//
//   cloak gen       synthetic trace CSV
//   cloak collect   sample hardware counters of a process
//   cloak train     fit a classifier on a trace CSV
//   cloak attack    craft adversarial traces against a model
//   cloak defend    retrain or distill a hardened model
//   cloak pipeline  all four stages from a config file
//   cloak report    print or convert the tables of a pipeline run
//
// Exit codes: 0 success, 2 configuration error, 3 failure while running.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "cloak/attacks.hpp"
#include "cloak/clf/registry.hpp"
#include "cloak/defenses.hpp"
#include "cloak/error.hpp"
#include "cloak/exp.hpp"
#include "cloak/hpc.hpp"
#include "cloak/synth.hpp"
#include "cloak/trace_csv.hpp"

using namespace cloak;
namespace fs = std::filesystem;

namespace {

constexpr int kConfigExit = 2;
constexpr int kStageExit = 3;

Dataset load_data(const fs::path& path, std::uint64_t seed) { return exp::prepare_dataset(synth::ingest_csv(path), seed); }

void check_norm(const clf::Classifier& model, const Dataset& ds) {
  if (const auto* net = dynamic_cast<const clf::NetClassifier*>(&model)) {
    if (net->net().norm_stats && net->net().norm_stats != ds.norm_stats) {
      throw ConfigError("model was trained with different normalization (use the same data and --seed)");
    }
  }
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split: " + s);
}

const clf::NetClassifier& as_net(const clf::Classifier& m) {
  const auto* net = dynamic_cast<const clf::NetClassifier*>(&m);
  if (!net) throw ConfigError("this command needs a cnn or linear model");
  return *net;
}

// Adversarial traces as a normalized trace CSV labeled with the true class.
Dataset adversarial_dataset(const attack::AttackRun& run, const Dataset& ds, std::span<const std::size_t> split_rows) {
  Dataset out;
  out.n_classes = ds.n_classes;
  out.norm_stats = ds.norm_stats;
  for (std::size_t k = 0; k < run.results.size(); ++k) {
    const auto& r = run.results[k];
    if (!r.success) continue;
    const auto& src = ds.traces[split_rows[run.indices[k]]].trace;
    out.traces.push_back({Trace(src.counters(), src.n_samples(), r.x_adv, true, src.interval_us()), r.orig_label});
    out.splits.push_back(Split::Train);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Side-channel trace classification, adversarial cloaking and hardening"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic labeled trace CSV");
  synth::GenConfig g;
  std::size_t per_class = 200;
  std::string gen_config, gen_out;
  gen->add_option("--config", gen_config, "Generator config file (key = value)");
  gen->add_option("--classes", g.n_classes, "Number of classes");
  gen->add_option("--counters", g.n_counters, "Counters per trace (1-5)");
  gen->add_option("--samples", g.n_samples, "Samples per counter");
  gen->add_option("--noise", g.noise_std, "Gaussian noise standard deviation");
  gen->add_option("--seed", g.seed, "Generator seed");
  gen->add_option("--per-class", per_class, "Traces per class");
  gen->add_option("--out", gen_out, "Output CSV")->required();

  // collect
  auto* collect = app.add_subcommand("collect", "Sample hardware counters of a process");
  hpc::SampleConfig sc;
  int pid = -1;
  bool list_only = false;
  std::string collect_out;
  collect->add_flag("--list", list_only, "List counter availability and exit");
  collect->add_option("--pid", pid, "Process to attach to");
  collect->add_option("--cmd", sc.command, "Command to launch and sample")->expected(-1);
  collect->add_option("--interval-us", sc.interval_us, "Sampling interval in microseconds");
  collect->add_option("--duration-ms", sc.duration_ms, "Trace length in milliseconds");
  collect->add_option("--out", collect_out, "Output CSV");

  // train
  auto* train = app.add_subcommand("train", "Train a classifier on a trace CSV");
  std::string train_data, train_out, train_history, family = "cnn";
  clf::TrainConfig tc;
  std::uint64_t train_seed = 1;
  train->add_option("--data", train_data, "Labeled trace CSV")->required();
  train->add_option("--family", family, "Classifier family")
      ->check(CLI::IsMember(clf::classifier_families()));
  train->add_option("--epochs", tc.epochs, "Training epochs (networks)");
  train->add_option("--batch", tc.batch_size, "Batch size (networks)");
  train->add_option("--lr", tc.adam.lr, "Adam learning rate");
  train->add_option("--seed", train_seed, "Split and training seed");
  train->add_option("--out", train_out, "Model JSON")->required();
  train->add_option("--history", train_history, "Per-epoch history CSV");

  // attack
  auto* atk = app.add_subcommand("attack", "Craft adversarial traces against a model");
  std::string atk_model, atk_data, atk_kind, atk_split = "test", atk_out, atk_adv_out;
  std::size_t atk_n = 100;
  std::uint64_t atk_seed = 1;
  attack::AttackParams ap;
  atk->add_option("--model", atk_model, "Model JSON")->required();
  atk->add_option("--data", atk_data, "Labeled trace CSV")->required();
  atk->add_option("--kind", atk_kind, "Attack kind (AGNA, GSA, SMA, ...)")->required();
  atk->add_option("--n", atk_n, "Correctly classified samples to attack");
  atk->add_option("--split", atk_split, "train, val or test");
  atk->add_option("--seed", atk_seed, "Split seed (must match training) and attack seed");
  atk->add_option("--eps-min", ap.eps_min, "First scale of the search");
  atk->add_option("--out", atk_out, "Per-sample results CSV")->required();
  atk->add_option("--adv-out", atk_adv_out, "Successful adversarial traces as trace CSV");

  // defend
  auto* defend = app.add_subcommand("defend", "Harden a model");
  defend->require_subcommand(1);
  auto* retrain = defend->add_subcommand("retrain", "Adversarial re-training");
  auto* distill = defend->add_subcommand("distill", "Defensive distillation");
  std::string def_model, def_data, def_attacks, def_out;
  std::uint64_t def_seed = 1;
  std::size_t def_epochs = 5;
  double temperature = 20.0;
  retrain->add_option("--model", def_model, "Model JSON")->required();
  retrain->add_option("--data", def_data, "Labeled trace CSV the model was trained on")->required();
  retrain->add_option("--attacks", def_attacks, "Adversarial trace CSV from `attack --adv-out`")->required();
  retrain->add_option("--epochs", def_epochs, "Extra epochs");
  retrain->add_option("--seed", def_seed, "Split and training seed");
  retrain->add_option("--out", def_out, "Hardened model JSON")->required();
  std::size_t distill_epochs = 20;
  distill->add_option("--data", def_data, "Labeled trace CSV")->required();
  distill->add_option("--T", temperature, "Distillation temperature");
  distill->add_option("--epochs", distill_epochs, "Epochs for teacher and student");
  distill->add_option("--seed", def_seed, "Split and training seed");
  distill->add_option("--out", def_out, "Student model JSON")->required();

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "Run the four-stage experiment");
  std::string pipe_config, pipe_out;
  std::optional<std::uint64_t> pipe_seed;
  pipeline->add_option("--config", pipe_config, "Experiment config (key = value)")->required();
  pipeline->add_option("--out", pipe_out, "Output directory (overrides the config)");
  pipeline->add_option("--seed", pipe_seed, "Master seed (overrides the config)");

  // report
  auto* report = app.add_subcommand("report", "Print or convert pipeline tables");
  std::string report_dir, report_format = "csv";
  report->add_option("--dir", report_dir, "Pipeline output directory")->required();
  report->add_option("--format", report_format, "csv prints tables; json writes <table>.json")
      ->check(CLI::IsMember({"csv", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (*gen) {
      if (!gen_config.empty()) {
        std::ifstream in(gen_config);
        if (!in) throw ConfigError("cannot open " + gen_config);
        std::stringstream text;
        text << in.rdbuf();
        g = synth::GenConfig::from_text(text.str());
      }
      g.validate();
      write_trace_csv(fs::path(gen_out), synth::generate_dataset(g, per_class));
    } else if (*collect) {
      if (list_only) {
        for (const auto& s : hpc::list_counters()) {
          std::cout << to_string(s.kind) << ' ' << (s.available ? "available" : "unavailable") << '\n';
        }
        return 0;
      }
      if (collect_out.empty()) throw ConfigError("--out is required");
      if (pid >= 0) sc.pid = pid;
      if (!sc.pid && sc.command.empty()) throw ConfigError("give --pid or --cmd");
      const auto t = hpc::sample_process(sc);
      Dataset ds;
      ds.traces.push_back({t, -1});
      ds.splits.push_back(Split::Train);
      write_trace_csv(fs::path(collect_out), ds);
    } else if (*train) {
      const auto ds = load_data(train_data, train_seed);
      tc.seed = train_seed;
      clf::History h;
      const auto model = clf::train_classifier(family, ds, tc, &h);
      clf::save_classifier(train_out, *model);
      if (!train_history.empty()) {
        std::ofstream out(train_history);
        h.write_csv(out);
      }
      std::cout << family << " val accuracy " << clf::evaluate(*model, clf::examples(ds, Split::Val)).accuracy << '\n';
    } else if (*atk) {
      const auto kind = attack::parse_attack(atk_kind);
      if (!kind) throw ConfigError("unknown attack kind: " + atk_kind);
      const auto model = clf::load_classifier(atk_model);
      const auto ds = load_data(atk_data, atk_seed);
      check_norm(*model, ds);
      const auto split = parse_split(atk_split);
      ap.seed = atk_seed;
      const auto rows = ds.indices(split);
      const auto xs = clf::examples(ds, split);
      const auto run = attack::evaluate_attack(*model, xs, ds.traces.front().trace.n_samples(), *kind, ap, atk_n);
      {
        std::ofstream out(atk_out);
        attack::write_results_csv(out, run);
      }
      if (!atk_adv_out.empty()) write_trace_csv(fs::path(atk_adv_out), adversarial_dataset(run, ds, rows));
      const auto& s = run.summary;
      std::cout << attack::to_string(*kind) << " evaluated " << s.evaluated << " success " << s.success_rate
                << " mean MAD " << s.mean_mad << (s.short_of_samples ? " (fewer samples than requested)" : "") << '\n';
    } else if (*retrain) {
      const auto model = clf::load_classifier(def_model);
      const auto& net = as_net(*model);
      const auto ds = load_data(def_data, def_seed);
      check_norm(*model, ds);
      const auto adv_ds = read_trace_csv(fs::path(def_attacks));
      std::vector<defense::AdvSample> adv;
      for (const auto& lt : adv_ds.traces) {
        if (!lt.trace.normalized()) throw ConfigError("adversarial CSV must hold normalized traces");
        adv.push_back({std::vector<double>(lt.trace.flat().begin(), lt.trace.flat().end()), lt.label});
      }
      defense::RetrainConfig rc;
      rc.train.epochs = def_epochs;
      rc.train.seed = def_seed;
      auto [hardened, h] = defense::adversarial_retrain(net.net(), ds, adv, rc);
      const clf::NetClassifier out(std::move(hardened), net.family());
      clf::save_classifier(def_out, out);
      std::cout << "invalidation " << defense::invalidation_rate(out, adv) << " val accuracy "
                << clf::evaluate(out, clf::examples(ds, Split::Val)).accuracy << '\n';
    } else if (*distill) {
      const auto ds = load_data(def_data, def_seed);
      clf::CnnConfig arch;
      arch.input_len = ds.traces.front().trace.size();
      arch.n_classes = static_cast<std::size_t>(ds.n_classes);
      defense::DistillConfig dc;
      dc.temperature = temperature;
      dc.teacher.epochs = dc.student.epochs = distill_epochs;
      dc.teacher.seed = def_seed;
      dc.student.seed = derive_seed(def_seed, 1);
      auto r = defense::distill(ds, arch, dc);
      const clf::NetClassifier out(std::move(r.student), "cnn");
      clf::save_classifier(def_out, out);
      std::cout << "teacher entropy " << r.teacher_entropy << " student val accuracy "
                << clf::evaluate(out, clf::examples(ds, Split::Val)).accuracy << '\n';
    } else if (*pipeline) {
      std::ifstream in(pipe_config);
      if (!in) throw ConfigError("cannot open " + pipe_config);
      auto kv = exp::parse_key_values(in);
      if (!pipe_out.empty()) kv["out"] = fs::absolute(pipe_out).string();
      if (pipe_seed) kv["seed"] = std::to_string(*pipe_seed);
      const auto config = exp::ExperimentConfig::from_keys(kv, fs::path(pipe_config).parent_path());
      exp::run_pipeline(config, &std::cerr);
    } else if (*report) {
      std::vector<exp::Table> tables;
      for (const char* name : {"accuracy", "attacks_unprotected", "invalidation", "attacks_hardened",
                               "attacks_hardened_mad"}) {
        std::ifstream in(fs::path(report_dir) / (std::string(name) + ".csv"));
        if (in) tables.push_back(exp::Table::read_csv(in, name));
      }
      if (tables.empty()) throw ConfigError("no tables found in " + report_dir);
      if (report_format == "json") {
        for (const auto& p : exp::emit_report(tables, report_dir, exp::Format::Json)) std::cout << p.string() << '\n';
      } else {
        for (const auto& t : tables) {
          std::cout << "== " << t.name << '\n';
          t.write_csv(std::cout);
        }
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return *pipeline ? kConfigExit : kStageExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kStageExit;
  }
  return 0;
}
