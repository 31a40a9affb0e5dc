#include "cloak/attacks.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <ostream>

#include "cloak/error.hpp"
#include "cloak/format.hpp"
#include "cloak/parallel.hpp"
#include "cloak/rng.hpp"

namespace cloak::attack {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Stream tags so each random choice of a sample draws from its own stream.
constexpr std::uint64_t kNoiseStream = 0x6e6f;
constexpr std::uint64_t kTargetStream = 0x7467;
constexpr std::uint64_t kOrderStream = 0x6f72;

/// Counts model evaluations made on behalf of one attack.
struct Oracle {
  const clf::Classifier& model;
  std::size_t queries = 0;
  std::size_t gradient_calls = 0;

  std::vector<double> probs(std::span<const double> x) {
    ++queries;
    return model.predict_proba(x);
  }
  std::vector<double> log_probs(std::span<const double> x) {
    ++queries;
    return model.predict_log_proba(x);
  }
  std::vector<double> grad(std::span<const double> x, int label) {
    ++gradient_calls;
    return model.loss_gradient(x, label);
  }
  std::vector<double> vjp(std::span<const double> x, std::span<const double> cotangent) {
    ++gradient_calls;
    return model.logit_vjp(x, cotangent);
  }
};

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

bool is_blend(AttackKind kind) { return kind == AttackKind::BUNA || kind == AttackKind::CRA || kind == AttackKind::SPNA; }

void fill_result(AdversarialResult& r, std::span<const double> x, std::vector<double> x_adv,
                 const std::vector<double>& probs_adv, int true_label) {
  r.delta.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r.delta[i] = x_adv[i] - x[i];
  r.distances = distance(x, x_adv);
  r.x_adv = std::move(x_adv);
  r.adv_label = clf::argmax(probs_adv);
  r.adv_confidence = probs_adv[static_cast<std::size_t>(r.adv_label)];
  r.success = r.adv_label != true_label;
}

std::vector<double> saliency(Oracle& oracle, std::span<const double> x, int target, std::size_t n_classes) {
  std::vector<double> e(n_classes, 0.0);
  e[static_cast<std::size_t>(target)] = 1.0;
  const auto a = oracle.vjp(x, e);
  const std::vector<double> ones(n_classes, 1.0);
  auto b = oracle.vjp(x, ones);
  std::vector<double> s(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double bi = b[i] - a[i];
    if (a[i] > 0.0 && bi < 0.0) s[i] = a[i] * std::abs(bi);
  }
  return s;
}

double median(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : (v[m - 1] + v[m]) / 2.0;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::AGNA: return "AGNA";
    case AttackKind::AUNA: return "AUNA";
    case AttackKind::BUNA: return "BUNA";
    case AttackKind::CRA: return "CRA";
    case AttackKind::GA: return "GA";
    case AttackKind::GBA: return "GBA";
    case AttackKind::GSA: return "GSA";
    case AttackKind::LBFGSA: return "LBFGSA";
    case AttackKind::SMA: return "SMA";
    case AttackKind::SPNA: return "SPNA";
  }
  return "?";
}

std::optional<AttackKind> parse_attack(std::string_view name) {
  std::string upper(name);
  for (char& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (auto k : kAllAttacks) {
    if (to_string(k) == upper) return k;
  }
  return std::nullopt;
}

bool needs_gradients(AttackKind kind) {
  return kind == AttackKind::GA || kind == AttackKind::GSA || kind == AttackKind::LBFGSA || kind == AttackKind::SMA;
}

void AttackParams::validate() const {
  if (max_scale_doublings < 0) throw ConfigError("max_scale_doublings must be nonnegative");
  if (bisection_steps < 0) throw ConfigError("bisection_steps must be nonnegative");
  if (!(eps_min > 0.0)) throw ConfigError("eps_min must be positive");
  if (!(sma_theta > 0.0)) throw ConfigError("sma_theta must be positive");
  if (!(sma_max_fraction > 0.0 && sma_max_fraction <= 1.0)) throw ConfigError("sma_max_fraction must lie in (0, 1]");
  if (lbfgs_c_bisections < 1) throw ConfigError("lbfgs_c_bisections must be at least 1");
  if (lbfgs_max_iter < 1) throw ConfigError("lbfgs_max_iter must be at least 1");
  if (lbfgs_memory < 1) throw ConfigError("lbfgs_memory must be at least 1");
}

ScaleSearchResult scale_search(const std::function<bool(double)>& succeeds, const AttackParams& params, double cap) {
  ScaleSearchResult r;
  double lo = 0.0;
  double hi = kNaN;
  for (int k = 0; k <= params.max_scale_doublings; ++k) {
    const double s = std::min(std::ldexp(params.eps_min, k), cap);
    ++r.coarse_probes;
    ++r.probes;
    if (succeeds(s)) {
      hi = s;
      break;
    }
    lo = s;
    if (s >= cap) break;
  }
  if (std::isnan(hi)) {
    r.scale = lo;
    return r;
  }
  for (int i = 0; i < params.bisection_steps; ++i) {
    const double mid = lo + (hi - lo) / 2.0;
    ++r.probes;
    (succeeds(mid) ? hi : lo) = mid;
  }
  r.success = true;
  r.scale = hi;
  return r;
}

std::vector<double> fgsm_step(std::span<const double> x, std::span<const double> gradient, double eps, bool sign_only) {
  if (!(eps >= 0.0)) throw Error("eps must be nonnegative");
  if (gradient.size() != x.size()) throw ShapeError("gradient length does not match the input");
  double g_max = 0.0;
  for (double g : gradient) g_max = std::max(g_max, std::abs(g));
  std::vector<double> out(x.begin(), x.end());
  if (g_max == 0.0) return out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double g = gradient[i];
    const double dir = sign_only ? static_cast<double>((g > 0.0) - (g < 0.0)) : g / g_max;
    out[i] = clip01(x[i] + eps * dir);
  }
  return out;
}

NoiseDraw make_noise_draw(AttackKind kind, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  NoiseDraw d;
  switch (kind) {
    case AttackKind::AGNA:
      d.values.resize(n);
      for (auto& v : d.values) v = rng.normal();
      break;
    case AttackKind::AUNA:
      d.values.resize(n);
      for (auto& v : d.values) v = rng.uniform(-1.0, 1.0);
      break;
    case AttackKind::BUNA:
      d.values.resize(n);
      for (auto& v : d.values) v = rng.uniform();
      break;
    case AttackKind::SPNA:
      d.order.resize(n);
      std::iota(d.order.begin(), d.order.end(), 0);
      rng.shuffle(d.order.begin(), d.order.end());
      d.bits.resize(n);
      for (auto& b : d.bits) b = static_cast<std::uint8_t>(rng.below(2));
      break;
    default:
      break;
  }
  return d;
}

std::vector<double> noise_perturb(std::span<const double> x, AttackKind kind, double scale, const NoiseDraw& draw) {
  if (!(scale >= 0.0)) throw Error("scale must be nonnegative");
  if (is_blend(kind) && scale > 1.0) throw Error("scale > 1 for a blend-type attack");
  std::vector<double> out(x.begin(), x.end());
  const std::size_t n = x.size();
  auto need = [&](std::size_t have) {
    if (have != n) throw ShapeError("noise draw does not match the input length");
  };
  switch (kind) {
    case AttackKind::AGNA:
    case AttackKind::AUNA:
      need(draw.values.size());
      for (std::size_t i = 0; i < n; ++i) out[i] = clip01(x[i] + scale * draw.values[i]);
      break;
    case AttackKind::BUNA:
      need(draw.values.size());
      for (std::size_t i = 0; i < n; ++i) out[i] = clip01((1.0 - scale) * x[i] + scale * draw.values[i]);
      break;
    case AttackKind::CRA: {
      if (n == 0) break;
      const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
      const double m = (*lo + *hi) / 2.0;
      for (std::size_t i = 0; i < n; ++i) out[i] = clip01((1.0 - scale) * x[i] + scale * m);
      break;
    }
    case AttackKind::SPNA: {
      need(draw.order.size());
      need(draw.bits.size());
      const auto count = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(scale * static_cast<double>(n))));
      for (std::size_t k = 0; k < count; ++k) out[draw.order[k]] = draw.bits[draw.order[k]];
      break;
    }
    default:
      throw Error("not a noise attack: " + std::string(to_string(kind)));
  }
  return out;
}

std::vector<double> gaussian_blur(std::span<const double> x, std::size_t row_len, double sigma) {
  if (!(sigma >= 0.0)) throw Error("sigma must be nonnegative");
  if (row_len == 0 || x.size() % row_len != 0) throw ShapeError("blur row length does not divide the input");
  std::vector<double> out(x.begin(), x.end());
  if (sigma == 0.0) return out;
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
    const double w = std::exp(-static_cast<double>(k * k) / (2.0 * sigma * sigma));
    kernel[static_cast<std::size_t>(k + radius)] = w;
    total += w;
  }
  for (double& w : kernel) w /= total;

  const auto len = static_cast<std::ptrdiff_t>(row_len);
  auto reflect = [len](std::ptrdiff_t i) {
    const std::ptrdiff_t period = 2 * len;
    i %= period;
    if (i < 0) i += period;
    return i < len ? i : period - 1 - i;
  };
  for (std::size_t row = 0; row < x.size() / row_len; ++row) {
    const double* src = x.data() + row * row_len;
    double* dst = out.data() + row * row_len;
    for (std::ptrdiff_t t = 0; t < len; ++t) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) acc += kernel[static_cast<std::size_t>(k + radius)] * src[reflect(t + k)];
      dst[t] = acc;
    }
  }
  return out;
}

std::vector<double> compute_saliency(const clf::Classifier& model, std::span<const double> x, int target) {
  if (!model.has_gradients()) throw Error("attack requires gradients");
  if (target < 0 || static_cast<std::size_t>(target) >= model.n_classes()) throw Error("target label out of range");
  Oracle oracle{model};
  return saliency(oracle, x, target, model.n_classes());
}

int random_target(std::uint64_t seed, int true_label, std::size_t n_classes) {
  if (n_classes < 2) throw Error("a target needs at least two classes");
  Rng rng(seed);
  auto t = static_cast<int>(rng.below(n_classes - 1));
  if (t >= true_label) ++t;
  return t;
}

AdversarialResult sma_attack(const clf::Classifier& model, std::span<const double> x, int true_label,
                             const AttackParams& params) {
  if (!model.has_gradients()) throw Error("attack requires gradients");
  Oracle oracle{model};
  AdversarialResult r;
  r.orig_label = true_label;
  const auto p0 = oracle.probs(x);
  r.orig_confidence = p0.at(static_cast<std::size_t>(true_label));
  if (clf::argmax(p0) != true_label) {
    fill_result(r, x, std::vector<double>(x.begin(), x.end()), p0, true_label);
    r.queries = oracle.queries;
    return r;
  }
  r.target = random_target(derive_seed(params.seed, kTargetStream), true_label, model.n_classes());
  const auto budget = static_cast<std::size_t>(std::ceil(params.sma_max_fraction * static_cast<double>(x.size())));

  std::vector<double> xa(x.begin(), x.end());
  std::vector<bool> touched(x.size(), false);
  std::vector<double> probs = p0;
  std::size_t modified = 0;
  while (modified < budget) {
    const auto s = saliency(oracle, xa, r.target, model.n_classes());
    std::ptrdiff_t best = -1;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (touched[i] || xa[i] >= 1.0 || s[i] <= 0.0) continue;
      if (best < 0 || s[i] > s[static_cast<std::size_t>(best)]) best = static_cast<std::ptrdiff_t>(i);
    }
    if (best < 0) break;
    const auto i = static_cast<std::size_t>(best);
    xa[i] = clip01(xa[i] + params.sma_theta);
    touched[i] = true;
    ++modified;
    probs = oracle.probs(xa);
    if (clf::argmax(probs) != true_label) break;
  }
  fill_result(r, x, std::move(xa), probs, true_label);
  r.scale = static_cast<double>(modified);
  r.queries = oracle.queries;
  r.gradient_calls = oracle.gradient_calls;
  return r;
}

namespace {

struct LbfgsRun {
  bool success = false;
  std::vector<double> x_adv;
  std::vector<double> probs;
  double mad = std::numeric_limits<double>::infinity();
};

// Projected L-BFGS on f(x') = c |x' - x|^2 - log p_target(x') over the box
// [0, 1]^n, with Armijo backtracking along the projected path. Tracks the
// closest iterate the model misclassifies.
LbfgsRun lbfgs_minimize(Oracle& oracle, std::span<const double> x, int true_label, int target, double c,
                        const AttackParams& params) {
  const std::size_t n = x.size();
  const auto t = static_cast<std::size_t>(target);
  auto objective = [&](const std::vector<double>& xp, std::vector<double>& probs) {
    const auto logp = oracle.log_probs(xp);
    probs.resize(logp.size());
    for (std::size_t k = 0; k < logp.size(); ++k) probs[k] = std::exp(logp[k]);
    double d2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) d2 += (xp[i] - x[i]) * (xp[i] - x[i]);
    return c * d2 - logp[t];
  };
  auto gradient = [&](const std::vector<double>& xp) {
    auto g = oracle.grad(xp, target);
    for (std::size_t i = 0; i < n; ++i) g[i] += 2.0 * c * (xp[i] - x[i]);
    return g;
  };

  LbfgsRun best;
  std::vector<double> xc(x.begin(), x.end());
  std::vector<double> probs;
  double f = objective(xc, probs);
  auto g = gradient(xc);
  std::deque<std::pair<std::vector<double>, std::vector<double>>> memory;  // (s, y)

  for (int iter = 0; iter < params.lbfgs_max_iter; ++iter) {
    if (!std::isfinite(f)) break;
    // Two-loop recursion for d = -H g.
    std::vector<double> q = g;
    std::vector<double> alpha(memory.size());
    for (std::size_t m = memory.size(); m-- > 0;) {
      const auto& [s, y] = memory[m];
      const double rho = 1.0 / std::inner_product(y.begin(), y.end(), s.begin(), 0.0);
      alpha[m] = rho * std::inner_product(s.begin(), s.end(), q.begin(), 0.0);
      for (std::size_t i = 0; i < n; ++i) q[i] -= alpha[m] * y[i];
    }
    if (!memory.empty()) {
      const auto& [s, y] = memory.back();
      const double gamma = std::inner_product(s.begin(), s.end(), y.begin(), 0.0) /
                           std::inner_product(y.begin(), y.end(), y.begin(), 0.0);
      for (double& v : q) v *= gamma;
    }
    for (std::size_t m = 0; m < memory.size(); ++m) {
      const auto& [s, y] = memory[m];
      const double rho = 1.0 / std::inner_product(y.begin(), y.end(), s.begin(), 0.0);
      const double beta = rho * std::inner_product(y.begin(), y.end(), q.begin(), 0.0);
      for (std::size_t i = 0; i < n; ++i) q[i] += s[i] * (alpha[m] - beta);
    }
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = -q[i];
    // Directions pushing out of the box at an active bound are dropped.
    for (std::size_t i = 0; i < n; ++i) {
      if ((xc[i] <= 0.0 && d[i] < 0.0) || (xc[i] >= 1.0 && d[i] > 0.0)) d[i] = 0.0;
    }
    if (std::inner_product(g.begin(), g.end(), d.begin(), 0.0) >= 0.0) {
      memory.clear();
      for (std::size_t i = 0; i < n; ++i) {
        d[i] = -g[i];
        if ((xc[i] <= 0.0 && d[i] < 0.0) || (xc[i] >= 1.0 && d[i] > 0.0)) d[i] = 0.0;
      }
    }
    if (memory.empty()) {
      // First step of a fresh memory: scale so the largest move is 0.1.
      double dmax = 0.0;
      for (double v : d) dmax = std::max(dmax, std::abs(v));
      if (dmax == 0.0) break;
      for (double& v : d) v *= 0.1 / dmax;
    }

    double step = 1.0;
    bool accepted = false;
    std::vector<double> xn(n), pn;
    double fn = 0.0;
    for (int ls = 0; ls < 30; ++ls, step /= 2.0) {
      double decrease = 0.0;
      bool moved = false;
      for (std::size_t i = 0; i < n; ++i) {
        xn[i] = clip01(xc[i] + step * d[i]);
        decrease += g[i] * (xn[i] - xc[i]);
        moved = moved || xn[i] != xc[i];
      }
      if (!moved) break;
      fn = objective(xn, pn);
      if (std::isfinite(fn) && fn <= f + 1e-4 * decrease) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;

    if (clf::argmax(pn) != true_label) {
      const double mad = distance(x, xn).mad;
      if (mad < best.mad) {
        best = {true, xn, pn, mad};
      }
    }
    auto gn = gradient(xn);
    std::vector<double> s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = xn[i] - xc[i];
      y[i] = gn[i] - g[i];
    }
    if (std::inner_product(s.begin(), s.end(), y.begin(), 0.0) > 1e-12) {
      memory.emplace_back(std::move(s), std::move(y));
      if (memory.size() > static_cast<std::size_t>(params.lbfgs_memory)) memory.pop_front();
    }
    const double f_old = f;
    xc = std::move(xn);
    f = fn;
    g = std::move(gn);
    if (std::abs(f_old - f) <= 1e-10 * std::max(1.0, std::abs(f))) break;
  }
  return best;
}

}  // namespace

AdversarialResult lbfgs_attack(const clf::Classifier& model, std::span<const double> x, int true_label,
                               const AttackParams& params) {
  if (!model.has_gradients()) throw Error("attack requires gradients");
  Oracle oracle{model};
  AdversarialResult r;
  r.orig_label = true_label;
  const auto p0 = oracle.probs(x);
  r.orig_confidence = p0.at(static_cast<std::size_t>(true_label));
  if (clf::argmax(p0) != true_label) {
    fill_result(r, x, std::vector<double>(x.begin(), x.end()), p0, true_label);
    r.queries = oracle.queries;
    return r;
  }
  r.target = random_target(derive_seed(params.seed, kTargetStream), true_label, model.n_classes());

  // Larger c weighs distance more; find the largest c that still succeeds.
  double c = 1.0;
  double c_success = kNaN, c_failure = kNaN;
  LbfgsRun best;
  double best_c = 0.0;
  for (int round = 0; round < params.lbfgs_c_bisections; ++round) {
    const auto run = lbfgs_minimize(oracle, x, true_label, r.target, c, params);
    if (run.success) {
      if (std::isnan(c_success) || c > c_success) c_success = c;
      if (run.mad < best.mad) {
        best = run;
        best_c = c;
      }
    } else if (std::isnan(c_failure) || c < c_failure) {
      c_failure = c;
    }
    if (std::isnan(c_failure)) {
      c *= 10.0;
    } else if (std::isnan(c_success)) {
      c /= 10.0;
    } else {
      c = std::sqrt(c_success * c_failure);
    }
  }
  if (best.success) {
    fill_result(r, x, std::move(best.x_adv), best.probs, true_label);
    r.scale = best_c;
  } else {
    fill_result(r, x, std::vector<double>(x.begin(), x.end()), p0, true_label);
    r.scale = c_failure;
  }
  r.queries = oracle.queries;
  r.gradient_calls = oracle.gradient_calls;
  return r;
}

AdversarialResult craft(const clf::Classifier& model, std::span<const double> x, std::size_t row_len, int true_label,
                        AttackKind kind, const AttackParams& params) {
  params.validate();
  if (x.size() != model.input_size()) throw ShapeError("input length does not match the model");
  if (true_label < 0 || static_cast<std::size_t>(true_label) >= model.n_classes()) throw Error("label out of range");
  for (double v : x) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error("attacks need a normalized input in [0, 1]");
  }
  if (needs_gradients(kind) && !model.has_gradients()) throw Error("attack requires gradients");
  if (kind == AttackKind::SMA) return sma_attack(model, x, true_label, params);
  if (kind == AttackKind::LBFGSA) return lbfgs_attack(model, x, true_label, params);

  Oracle oracle{model};
  AdversarialResult r;
  r.orig_label = true_label;
  const auto p0 = oracle.probs(x);
  r.orig_confidence = p0[static_cast<std::size_t>(true_label)];
  if (clf::argmax(p0) != true_label) {
    fill_result(r, x, std::vector<double>(x.begin(), x.end()), p0, true_label);
    r.queries = oracle.queries;
    return r;
  }

  std::function<std::vector<double>(double)> perturb;
  NoiseDraw draw;
  std::vector<double> grad;
  double cap = std::numeric_limits<double>::infinity();
  switch (kind) {
    case AttackKind::AGNA:
    case AttackKind::AUNA:
    case AttackKind::BUNA:
    case AttackKind::CRA:
    case AttackKind::SPNA:
      draw = make_noise_draw(kind, x.size(), derive_seed(params.seed, kNoiseStream));
      if (is_blend(kind)) cap = 1.0;
      perturb = [&](double s) { return noise_perturb(x, kind, s, draw); };
      break;
    case AttackKind::GBA:
      perturb = [&](double s) { return gaussian_blur(x, row_len, s); };
      break;
    case AttackKind::GA:
    case AttackKind::GSA:
      grad = oracle.grad(x, true_label);
      // A sign step of 1 already pushes every moving coordinate to a bound.
      if (kind == AttackKind::GSA) cap = 1.0;
      perturb = [&, sign = kind == AttackKind::GSA](double s) { return fgsm_step(x, grad, s, sign); };
      break;
    default:
      throw Error("unhandled attack kind");
  }

  // Keep the outputs of the best success and the latest probe so the final
  // result needs no extra evaluation.
  std::vector<double> best_x, best_p, last_x, last_p;
  double best_s = std::numeric_limits<double>::infinity();
  const auto search = scale_search(
      [&](double s) {
        auto xa = perturb(s);
        auto p = oracle.probs(xa);
        const bool ok = clf::argmax(p) != true_label;
        if (ok && s < best_s) {
          best_s = s;
          best_x = xa;
          best_p = p;
        }
        last_x = std::move(xa);
        last_p = std::move(p);
        return ok;
      },
      params, cap);
  if (search.success) {
    fill_result(r, x, std::move(best_x), best_p, true_label);
  } else {
    fill_result(r, x, std::move(last_x), last_p, true_label);
  }
  r.scale = search.scale;
  r.queries = oracle.queries;
  r.gradient_calls = oracle.gradient_calls;
  return r;
}

AdversarialResult craft(const clf::Classifier& model, const Trace& x, int true_label, AttackKind kind,
                        const AttackParams& params) {
  if (!x.normalized()) throw Error("attacks need a normalized trace");
  return craft(model, x.flat(), x.n_samples(), true_label, kind, params);
}

AttackRun evaluate_attack(const clf::Classifier& model, std::span<const clf::Example> split, std::size_t row_len,
                          AttackKind kind, const AttackParams& params, std::size_t n_samples) {
  params.validate();
  if (needs_gradients(kind) && !model.has_gradients()) throw Error("attack requires gradients");
  AttackRun run;
  run.summary.kind = kind;
  run.summary.requested = n_samples;

  std::vector<int> predicted(split.size());
  parallel_for(split.size(), [&](std::size_t i) { predicted[i] = model.predict(split[i].x); });
  // Splits are often grouped by class, so candidates are visited in a seeded
  // random order.
  std::vector<std::size_t> order(split.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng(derive_seed(params.seed, kOrderStream)).shuffle(order.begin(), order.end());
  for (std::size_t i : order) {
    if (run.indices.size() == n_samples) break;
    if (predicted[i] == split[i].label) run.indices.push_back(i);
  }
  run.summary.evaluated = run.indices.size();
  run.summary.short_of_samples = run.indices.size() < n_samples;

  run.results.resize(run.indices.size());
  parallel_for(run.indices.size(), [&](std::size_t k) {
    const std::size_t i = run.indices[k];
    AttackParams p = params;
    p.seed = derive_seed(params.seed, i);
    run.results[k] = craft(model, split[i].x, row_len, split[i].label, kind, p);
  });

  std::vector<double> mads, msds, adv_conf, orig_conf, queries;
  std::size_t successes = 0;
  for (const auto& r : run.results) {
    orig_conf.push_back(r.orig_confidence);
    queries.push_back(static_cast<double>(r.queries));
    if (!r.success) continue;
    ++successes;
    mads.push_back(r.distances.mad);
    msds.push_back(r.distances.msd);
    adv_conf.push_back(r.adv_confidence);
  }
  auto& s = run.summary;
  s.success_rate = run.results.empty() ? kNaN : static_cast<double>(successes) / static_cast<double>(run.results.size());
  s.mean_mad = mean(mads);
  s.median_mad = median(mads);
  s.mean_msd = mean(msds);
  s.mean_orig_confidence = mean(orig_conf);
  s.mean_adv_confidence = mean(adv_conf);
  s.mean_queries = mean(queries);
  return run;
}

void write_results_csv(std::ostream& out, const AttackRun& run) {
  out << "index,kind,orig_label,adv_label,target,success,orig_confidence,adv_confidence,mad,msd,scale,queries,"
         "gradient_calls\n";
  const auto kind = to_string(run.summary.kind);
  for (std::size_t k = 0; k < run.results.size(); ++k) {
    const auto& r = run.results[k];
    out << run.indices[k] << ',' << kind << ',' << r.orig_label << ',' << r.adv_label << ',' << r.target << ','
        << (r.success ? 1 : 0) << ',' << format_number(r.orig_confidence) << ',' << format_number(r.adv_confidence)
        << ',' << format_number(r.distances.mad) << ',' << format_number(r.distances.msd) << ','
        << format_number(r.scale) << ',' << r.queries << ',' << r.gradient_calls << '\n';
  }
}

}  // namespace cloak::attack
