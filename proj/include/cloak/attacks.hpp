#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cloak/clf/model.hpp"
#include "cloak/trace.hpp"

namespace cloak::attack {

enum class AttackKind { AGNA, AUNA, BUNA, CRA, GA, GBA, GSA, LBFGSA, SMA, SPNA };

inline constexpr std::array<AttackKind, 10> kAllAttacks = {
    AttackKind::AGNA, AttackKind::AUNA, AttackKind::BUNA, AttackKind::CRA,    AttackKind::GA,
    AttackKind::GBA,  AttackKind::GSA,  AttackKind::LBFGSA, AttackKind::SMA, AttackKind::SPNA};

std::string_view to_string(AttackKind kind);
/// Case-insensitive.
std::optional<AttackKind> parse_attack(std::string_view name);
bool needs_gradients(AttackKind kind);

struct AttackParams {
  int max_scale_doublings = 20;
  int bisection_steps = 10;
  double eps_min = 1e-4;
  double sma_theta = 0.1;
  double sma_max_fraction = 0.05;
  int lbfgs_c_bisections = 8;
  int lbfgs_max_iter = 50;
  int lbfgs_memory = 10;
  std::uint64_t seed = 1;

  void validate() const;
};

struct AdversarialResult {
  std::vector<double> x_adv;
  std::vector<double> delta;
  Distances distances;
  bool success = false;
  int orig_label = -1;  // the true label the attack moves away from
  int adv_label = -1;   // model prediction on x_adv
  int target = -1;      // internal target for LBFGSA and SMA, else -1
  double orig_confidence = 0.0;  // model probability of orig_label on x
  double adv_confidence = 0.0;   // model probability of adv_label on x_adv
  double scale = 0.0;            // final search scale, where one applies
  std::size_t queries = 0;        // forward evaluations
  std::size_t gradient_calls = 0;  // backward evaluations
};

// ---------------------------------------------------------------------------
// Scale search

struct ScaleSearchResult {
  bool success = false;
  double scale = 0.0;  // smallest successful scale found, or the last probed
  std::size_t coarse_probes = 0;
  std::size_t probes = 0;
};

/// Geometric sweep s_k = min(eps_min * 2^k, cap) for k = 0..max_scale_doublings,
/// stopping at the first s where `succeeds(s)`, then `bisection_steps` halvings
/// of the bracket (last failure or 0, first success]. The returned scale
/// always satisfied the predicate. Probing stops early once the cap has been
/// tried.
ScaleSearchResult scale_search(const std::function<bool(double)>& succeeds, const AttackParams& params,
                               double cap = std::numeric_limits<double>::infinity());

// ---------------------------------------------------------------------------
// Perturbation primitives (all on flattened, normalized traces)

/// x + eps * sign(g) (sign_only) or x + eps * g / max|g|, clipped to [0, 1].
std::vector<double> fgsm_step(std::span<const double> x, std::span<const double> gradient, double eps,
                              bool sign_only = true);

/// Noise fixed per (sample, seed) and reused across scales.
struct NoiseDraw {
  std::vector<double> values;       // AGNA: N(0,1); AUNA: U(-1,1); BUNA: U(0,1)
  std::vector<std::size_t> order;   // SPNA: coordinate priority
  std::vector<std::uint8_t> bits;   // SPNA: 0 (pepper) or 1 (salt) per coordinate
};

NoiseDraw make_noise_draw(AttackKind kind, std::size_t n, std::uint64_t seed);

/// AGNA/AUNA: clip(x + s * noise); BUNA: (1-s) x + s u; CRA: (1-s) x + s m
/// with m the trace midpoint; SPNA: the first round(s * n) coordinates of
/// the draw's order set to their bits. Blend kinds need s in [0, 1].
std::vector<double> noise_perturb(std::span<const double> x, AttackKind kind, double scale, const NoiseDraw& draw);

/// Per-row Gaussian blur of a counter-major trace with rows of `row_len`.
/// Kernel truncated at +-ceil(3 sigma), normalized to 1; boundaries use
/// symmetric reflection (edge sample repeated), extended periodically.
std::vector<double> gaussian_blur(std::span<const double> x, std::size_t row_len, double sigma);

/// S_i = a_i |b_i| when a_i > 0 and b_i < 0, else 0, where a = dZ_target/dx
/// and b = sum over the other classes of dZ_j/dx.
std::vector<double> compute_saliency(const clf::Classifier& model, std::span<const double> x, int target);

// ---------------------------------------------------------------------------
// Attacks

/// Runs one attack. `row_len` is the per-counter sample count (used by GBA).
/// A model that already misclassifies x yields success with zero delta.
AdversarialResult craft(const clf::Classifier& model, std::span<const double> x, std::size_t row_len, int true_label,
                        AttackKind kind, const AttackParams& params);
AdversarialResult craft(const clf::Classifier& model, const Trace& x, int true_label, AttackKind kind,
                        const AttackParams& params);

AdversarialResult sma_attack(const clf::Classifier& model, std::span<const double> x, int true_label,
                             const AttackParams& params);
AdversarialResult lbfgs_attack(const clf::Classifier& model, std::span<const double> x, int true_label,
                               const AttackParams& params);

/// Target for LBFGSA and SMA: uniform over classes other than true_label.
int random_target(std::uint64_t seed, int true_label, std::size_t n_classes);

// ---------------------------------------------------------------------------
// Evaluation

struct AttackSummary {
  AttackKind kind = AttackKind::AGNA;
  std::size_t requested = 0;
  std::size_t evaluated = 0;
  bool short_of_samples = false;  // fewer correctly classified samples than requested
  double success_rate = 0.0;
  // Distances and adversarial confidence are averaged over successful samples.
  double mean_mad = 0.0;
  double median_mad = 0.0;
  double mean_msd = 0.0;
  double mean_orig_confidence = 0.0;
  double mean_adv_confidence = 0.0;
  double mean_queries = 0.0;
};

struct AttackRun {
  AttackSummary summary;
  std::vector<std::size_t> indices;  // positions in the evaluated split
  std::vector<AdversarialResult> results;
};

/// Attacks n_samples examples the model classifies correctly, drawn in a
/// random order seeded by params.seed.
/// Sample i uses seed derive_seed(params.seed, i); runs in parallel with
/// results independent of thread count.
AttackRun evaluate_attack(const clf::Classifier& model, std::span<const clf::Example> split, std::size_t row_len,
                          AttackKind kind, const AttackParams& params, std::size_t n_samples);

/// One row per sample with every scalar field of AdversarialResult.
void write_results_csv(std::ostream& out, const AttackRun& run);

}  // namespace cloak::attack
