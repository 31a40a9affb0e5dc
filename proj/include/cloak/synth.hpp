#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cloak/trace.hpp"

namespace cloak::synth {

struct Burst {
  std::size_t offset = 0;
  std::size_t width = 0;
  double height = 0.0;
};

/// Shape of one counter row of a class template:
/// base + amplitude * sin(2*pi*(t/period) + phase) + sum of rectangular bursts.
struct CounterTemplate {
  double base = 0.5;
  double amplitude = 0.0;
  double period = 1.0;  // samples
  double phase = 0.0;
  std::vector<Burst> bursts;
};

struct ClassTemplate {
  std::vector<CounterTemplate> counters;
  std::size_t n_samples = 0;

  /// Noise-free signal, counter-major.
  std::vector<double> render() const;
};

struct GenConfig {
  int n_classes = 20;
  std::size_t n_counters = 5;
  std::size_t n_samples = 1000;
  double noise_std = 0.02;
  std::uint64_t seed = 1;
  std::uint32_t interval_us = 10;

  void validate() const;

  /// Flat `key = value` persistence.
  std::string to_text() const;
  static GenConfig from_text(const std::string& text);
};

/// Pairwise Frobenius distance the templates must exceed.
double separation_threshold(const GenConfig& config);

std::vector<ClassTemplate> make_templates(const GenConfig& config);

/// Template plus i.i.d. Gaussian noise from Rng(sample_seed), clipped to [0, 1].
LabeledTrace generate_trace(const std::vector<ClassTemplate>& templates, const GenConfig& config, int class_id,
                            std::uint64_t sample_seed);

/// n_per_class traces per class, split 0.8/0.1/0.1 stratified. Traces are
/// produced normalized and carry identity NormStats.
Dataset generate_dataset(const GenConfig& config, std::size_t n_per_class);

/// Seed used for trace `index` of class `class_id`.
std::uint64_t sample_seed(const GenConfig& config, int class_id, std::size_t index);

/// Display labels: the twenty profiled OpenSSL workloads, the five library
/// versions for a 5-class run, otherwise "class<i>".
std::vector<std::string> class_names(int n_classes);

/// Reads a trace CSV produced by this toolkit or by the HPC sampler.
Dataset ingest_csv(const std::filesystem::path& path);

}  // namespace cloak::synth
