#include "cloak/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "cloak/error.hpp"
#include "cloak/rng.hpp"
#include "cloak/trace_csv.hpp"

namespace cloak::synth {
namespace {

constexpr int kMaxRetries = 100;
constexpr std::uint64_t kTemplateStream = 0x7e;
constexpr std::uint64_t kSampleStream = 0x5a;
constexpr std::uint64_t kSplitStream = 0x3c;

CounterTemplate draw_counter(Rng& rng, std::size_t n_samples) {
  CounterTemplate ct;
  ct.base = rng.uniform(0.2, 0.8);
  const double headroom = std::min(ct.base - 0.05, 0.95 - ct.base);
  const auto n = static_cast<double>(n_samples);
  ct.amplitude = rng.uniform(0.3, 0.6) * headroom;
  ct.period = std::max(4.0, rng.uniform(n / 20.0, n / 2.0));
  ct.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

  // Bursts live in disjoint segments so at most one is active at a time and
  // |amplitude| + |height| stays within the headroom.
  const auto n_bursts = static_cast<std::size_t>(1 + rng.below(3));
  const std::size_t segment = n_samples / n_bursts;
  for (std::size_t b = 0; b < n_bursts && segment > 0; ++b) {
    Burst burst;
    const auto max_width = std::max<std::size_t>(1, segment / 2);
    const auto min_width = std::max<std::size_t>(1, std::min(max_width, n_samples / 20));
    burst.width = min_width + static_cast<std::size_t>(rng.below(max_width - min_width + 1));
    burst.offset = b * segment + static_cast<std::size_t>(rng.below(segment - burst.width + 1));
    const double magnitude = rng.uniform(0.3, 0.4) * headroom;
    burst.height = rng.uniform() < 0.5 ? -magnitude : magnitude;
    ct.bursts.push_back(burst);
  }
  return ct;
}

ClassTemplate draw_template(Rng& rng, const GenConfig& config) {
  ClassTemplate t;
  t.n_samples = config.n_samples;
  for (std::size_t c = 0; c < config.n_counters; ++c) t.counters.push_back(draw_counter(rng, config.n_samples));
  return t;
}

double frobenius(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

std::vector<double> ClassTemplate::render() const {
  std::vector<double> out(counters.size() * n_samples);
  for (std::size_t c = 0; c < counters.size(); ++c) {
    const CounterTemplate& ct = counters[c];
    for (std::size_t s = 0; s < n_samples; ++s) {
      out[c * n_samples + s] =
          ct.base + ct.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(s) / ct.period + ct.phase);
    }
    for (const Burst& b : ct.bursts) {
      for (std::size_t s = b.offset; s < std::min(n_samples, b.offset + b.width); ++s) out[c * n_samples + s] += b.height;
    }
  }
  return out;
}

void GenConfig::validate() const {
  if (n_classes < 1) throw ConfigError("n_classes must be positive");
  if (n_counters < 1 || n_counters > kAllCounters.size()) throw ConfigError("n_counters must be in [1, 5]");
  if (n_samples < 1) throw ConfigError("n_samples must be positive");
  if (!(noise_std >= 0.0 && noise_std < 0.1)) throw ConfigError("noise_std must be in [0, 0.1)");
  if (interval_us < 1) throw ConfigError("interval_us must be positive");
}

std::string GenConfig::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "n_classes = " << n_classes << '\n'
      << "n_counters = " << n_counters << '\n'
      << "n_samples = " << n_samples << '\n'
      << "noise_std = " << noise_std << '\n'
      << "seed = " << seed << '\n'
      << "interval_us = " << interval_us << '\n';
  return out.str();
}

GenConfig GenConfig::from_text(const std::string& text) {
  GenConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value, got '" + line + "'");
    auto key = line.substr(0, eq);
    auto value = line.substr(eq + 1);
    key.erase(key.find_last_not_of(" \t") + 1);
    key.erase(0, key.find_first_not_of(" \t"));
    value.erase(0, value.find_first_not_of(" \t"));
    try {
      if (key == "n_classes") {
        c.n_classes = std::stoi(value);
      } else if (key == "n_counters") {
        c.n_counters = std::stoul(value);
      } else if (key == "n_samples") {
        c.n_samples = std::stoul(value);
      } else if (key == "noise_std") {
        c.noise_std = std::stod(value);
      } else if (key == "seed") {
        c.seed = std::stoull(value);
      } else if (key == "interval_us") {
        c.interval_us = static_cast<std::uint32_t>(std::stoul(value));
      } else {
        throw ConfigError("unknown generator key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw ConfigError("bad value for '" + key + "': " + value);
    }
  }
  c.validate();
  return c;
}

double separation_threshold(const GenConfig& config) {
  return 10.0 * config.noise_std * std::sqrt(static_cast<double>(config.n_counters * config.n_samples));
}

std::vector<ClassTemplate> make_templates(const GenConfig& config) {
  config.validate();
  Rng rng(derive_seed(config.seed, kTemplateStream));
  const double threshold = separation_threshold(config);

  std::vector<ClassTemplate> templates;
  std::vector<std::vector<double>> rendered;
  for (int k = 0; k < config.n_classes; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt <= kMaxRetries && !placed; ++attempt) {
      ClassTemplate candidate = draw_template(rng, config);
      auto signal = candidate.render();
      placed = std::all_of(rendered.begin(), rendered.end(),
                           [&](const std::vector<double>& other) { return frobenius(signal, other) >= threshold; });
      if (placed) {
        templates.push_back(std::move(candidate));
        rendered.push_back(std::move(signal));
      }
    }
    if (!placed) throw Error("generator parameters too crowded");
  }
  return templates;
}

std::uint64_t sample_seed(const GenConfig& config, int class_id, std::size_t index) {
  return derive_seed(derive_seed(derive_seed(config.seed, kSampleStream), static_cast<std::uint64_t>(class_id)),
                     index);
}

LabeledTrace generate_trace(const std::vector<ClassTemplate>& templates, const GenConfig& config, int class_id,
                            std::uint64_t seed) {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= templates.size()) {
    throw Error("class id " + std::to_string(class_id) + " out of range");
  }
  auto values = templates[static_cast<std::size_t>(class_id)].render();
  if (config.noise_std > 0.0) {
    Rng rng(seed);
    for (double& v : values) v = std::clamp(v + config.noise_std * rng.normal(), 0.0, 1.0);
  }
  return {Trace(default_counters(config.n_counters), config.n_samples, std::move(values), true, config.interval_us),
          class_id};
}

Dataset generate_dataset(const GenConfig& config, std::size_t n_per_class) {
  if (n_per_class < 3) throw ConfigError("n_per_class must be at least 3");
  const auto templates = make_templates(config);
  Dataset ds;
  ds.n_classes = config.n_classes;
  ds.traces.reserve(static_cast<std::size_t>(config.n_classes) * n_per_class);
  for (int k = 0; k < config.n_classes; ++k) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      ds.traces.push_back(generate_trace(templates, config, k, sample_seed(config, k, i)));
    }
  }
  ds.splits.assign(ds.traces.size(), Split::Train);
  ds.norm_stats = NormStats::identity(config.n_counters);
  ds.class_names = class_names(config.n_classes);
  return split_dataset(ds, SplitRatios{}, derive_seed(config.seed, kSplitStream));
}

std::vector<std::string> class_names(int n_classes) {
  static const std::vector<std::string> kWorkloads = {
      "AES-128-CBC", "BF-CBC",   "BLOWFISH", "CAMELLIA-128-CBC", "DES-CBC", "DES-EDE3", "DSA2048",
      "ECDH",        "ECDHB571", "ECDHK571", "ECDHP521",         "ECDSA",   "ECDSAB571", "ECDSAP521",
      "HMAC",        "MD4",      "MD5",      "RC2",              "RC2-CBC", "RC4"};
  static const std::vector<std::string> kVersions = {"0.9.8", "1.0.0", "1.0.1", "1.0.2", "1.1.0"};
  if (n_classes == static_cast<int>(kWorkloads.size())) return kWorkloads;
  if (n_classes == static_cast<int>(kVersions.size())) return kVersions;
  std::vector<std::string> out;
  for (int i = 0; i < n_classes; ++i) out.push_back("class" + std::to_string(i));
  return out;
}

Dataset ingest_csv(const std::filesystem::path& path) {
  Dataset ds = read_trace_csv(path);
  ds.class_names = class_names(ds.n_classes);
  return ds;
}

}  // namespace cloak::synth
