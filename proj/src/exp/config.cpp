#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <sstream>

#include "cloak/error.hpp"
#include "cloak/exp.hpp"

namespace cloak::exp {
namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T v{};
  in >> v;
  char extra;
  if (!in || in >> extra) throw ConfigError("bad value for '" + key + "': " + value);
  if constexpr (std::is_unsigned_v<T>) {
    if (value.find('-') != std::string::npos) throw ConfigError("'" + key + "' must be nonnegative");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("bad value for '" + key + "': " + value);
}

attack::AttackKind parse_kind(const std::string& name) {
  const auto k = attack::parse_attack(name);
  if (!k) throw ConfigError("unknown attack kind: " + name);
  return *k;
}

}  // namespace

KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected key = value");
    auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(line_no, "empty key");
    if (!kv.emplace(key, trim(line.substr(eq + 1))).second) throw ParseError(line_no, "duplicate key '" + key + "'");
  }
  return kv;
}

KeyValues parse_key_values(const std::string& text) {
  std::istringstream in(text);
  return parse_key_values(in);
}

ExperimentConfig ExperimentConfig::from_keys(const KeyValues& kv, const std::filesystem::path& base) {
  ExperimentConfig c;
  auto path = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_absolute() || base.empty() ? p : base / p;
  };

  using Setter = std::function<void(const std::string& key, const std::string& value)>;
  auto sz = [](std::size_t& dst) -> Setter {
    return [&dst](const std::string& k, const std::string& v) { dst = parse_number<std::size_t>(k, v); };
  };
  auto real = [](double& dst) -> Setter {
    return [&dst](const std::string& k, const std::string& v) { dst = parse_number<double>(k, v); };
  };
  auto integer = [](int& dst) -> Setter {
    return [&dst](const std::string& k, const std::string& v) { dst = parse_number<int>(k, v); };
  };
  auto u64 = [](std::uint64_t& dst) -> Setter {
    return [&dst](const std::string& k, const std::string& v) { dst = parse_number<std::uint64_t>(k, v); };
  };

  const std::map<std::string, Setter> setters = {
      {"seed", u64(c.seed)},
      {"out", [&](const std::string&, const std::string& v) { c.out = path(v); }},
      {"stages",
       [&](const std::string& k, const std::string& v) {
         const auto items = split_list(v);
         if (items.empty()) throw ConfigError("'stages' is empty");
         std::vector<int> stages;
         for (const auto& s : items) stages.push_back(parse_number<int>(k, s));
         std::sort(stages.begin(), stages.end());
         for (std::size_t i = 0; i < stages.size(); ++i) {
           if (stages[i] != static_cast<int>(i) + 1 || stages[i] > 4) {
             throw ConfigError("stages must be a prefix of 1,2,3,4, got " + v);
           }
         }
         c.last_stage = stages.back();
       }},
      {"data.path", [&](const std::string&, const std::string& v) { c.data = path(v); }},
      {"data.export",
       [&](const std::string& k, const std::string& v) { c.export_dataset = parse_bool(k, v); }},
      {"gen.n_classes", integer(c.gen.n_classes)},
      {"gen.n_counters", sz(c.gen.n_counters)},
      {"gen.n_samples", sz(c.gen.n_samples)},
      {"gen.noise_std", real(c.gen.noise_std)},
      {"gen.seed",
       [&](const std::string& k, const std::string& v) {
         c.gen.seed = parse_number<std::uint64_t>(k, v);
         c.gen_seed_set = true;
       }},
      {"gen.interval_us",
       [&](const std::string& k, const std::string& v) {
         c.gen.interval_us = static_cast<std::uint32_t>(parse_number<std::uint64_t>(k, v));
       }},
      {"gen.per_class", sz(c.per_class)},
      {"classifier.family", [&](const std::string&, const std::string& v) { c.family = v; }},
      {"classifier.baselines", [&](const std::string&, const std::string& v) { c.baselines = split_list(v); }},
      {"cnn.conv1_filters", sz(c.cnn.conv1_filters)},
      {"cnn.conv1_k", sz(c.cnn.conv1_k)},
      {"cnn.pool", sz(c.cnn.pool)},
      {"cnn.conv2_filters", sz(c.cnn.conv2_filters)},
      {"cnn.conv2_k", sz(c.cnn.conv2_k)},
      {"cnn.dense", sz(c.cnn.dense)},
      {"cnn.dropout", real(c.cnn.dropout)},
      {"train.epochs", sz(c.train.epochs)},
      {"train.batch_size", sz(c.train.batch_size)},
      {"train.lr", real(c.train.adam.lr)},
      {"attack.kinds",
       [&](const std::string&, const std::string& v) {
         c.attacks.clear();
         if (v == "all") {
           c.attacks.assign(attack::kAllAttacks.begin(), attack::kAllAttacks.end());
           return;
         }
         for (const auto& name : split_list(v)) c.attacks.push_back(parse_kind(name));
       }},
      {"attack.n_samples", sz(c.attack_samples)},
      {"attack.max_scale_doublings", integer(c.attack_params.max_scale_doublings)},
      {"attack.bisection_steps", integer(c.attack_params.bisection_steps)},
      {"attack.eps_min", real(c.attack_params.eps_min)},
      {"attack.sma_theta", real(c.attack_params.sma_theta)},
      {"attack.sma_max_fraction", real(c.attack_params.sma_max_fraction)},
      {"attack.lbfgs_c_bisections", integer(c.attack_params.lbfgs_c_bisections)},
      {"attack.lbfgs_max_iter", integer(c.attack_params.lbfgs_max_iter)},
      {"attack.lbfgs_memory", integer(c.attack_params.lbfgs_memory)},
      {"defense.retrain_kind", [&](const std::string&, const std::string& v) { c.retrain.kind = parse_kind(v); }},
      {"defense.n_adversarial", sz(c.retrain.n_adversarial)},
      {"defense.retrain_epochs", sz(c.retrain.train.epochs)},
      {"defense.temperatures",
       [&](const std::string& k, const std::string& v) {
         c.temperatures.clear();
         if (v == "none") return;
         for (const auto& t : split_list(v)) c.temperatures.push_back(parse_number<double>(k, t));
       }},
      {"defense.distill_epochs", sz(c.distill_epochs)},
  };

  for (const auto& [key, value] : kv) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(key, value);
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return from_keys(parse_key_values(in), path.parent_path());
}

void ExperimentConfig::validate() const {
  if (data && !std::filesystem::exists(*data)) throw ConfigError("data file not found: " + data->string());
  if (!data) gen.validate();
  if (per_class < 3) throw ConfigError("gen.per_class must be at least 3");
  train.validate();
  attack_params.validate();
  retrain.validate();
  if (cnn.dropout < 0.0 || cnn.dropout >= 1.0) throw ConfigError("cnn.dropout must lie in [0, 1)");
  if (last_stage >= 2 && attacks.empty()) throw ConfigError("attack.kinds is empty");
  for (std::size_t i = 0; i < attacks.size(); ++i) {
    if (std::find(attacks.begin(), attacks.begin() + static_cast<std::ptrdiff_t>(i), attacks[i]) !=
        attacks.begin() + static_cast<std::ptrdiff_t>(i)) {
      throw ConfigError("attack kind listed twice: " + std::string(attack::to_string(attacks[i])));
    }
  }
  for (double t : temperatures) {
    if (!(t > 0.0)) throw ConfigError("distillation temperatures must be positive");
  }
  const bool net = family == "cnn" || family == "linear";
  if (last_stage >= 3 && !net) throw ConfigError("hardening (stage 3) needs family cnn or linear");
  if (last_stage >= 3 && !temperatures.empty() && family != "cnn") {
    throw ConfigError("distillation needs family cnn; set defense.temperatures = none");
  }
}

}  // namespace cloak::exp
