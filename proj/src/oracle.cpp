#include "patchguard/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace patchguard {

namespace {

constexpr double kBoundSlack = 1e-9;

std::uint64_t saturating_pow(std::uint64_t base, std::uint64_t exp) {
  std::uint64_t out = 1;
  for (std::uint64_t i = 0; i < exp; ++i) {
    if (base != 0 && out > std::numeric_limits<std::uint64_t>::max() / base)
      return std::numeric_limits<std::uint64_t>::max();
    out *= base;
  }
  return out;
}

void sort_unique(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

double clip_floor(const MaskingConfig& config) {
  const auto* b = std::get_if<ClipBounds>(&config.clip);
  require(b != nullptr, "oracle scenarios need an interval clip");
  return b->lo();
}

double level_cap(const FeatureTensor& clean, const MaskingConfig& config) {
  const auto& b = std::get<ClipBounds>(config.clip);
  if (b.hi()) return *b.hi();
  double mx = 0.0;
  for (double v : clean.values()) mx = std::max(mx, v);
  return 10.0 * (mx > 0.0 ? mx : 1.0);
}

// Case IV evasion totals (exact and nudged below) for one class slice.
void push_evasion_levels(std::vector<double>& out, double total, double threshold) {
  if (threshold <= 0.0 || threshold >= 1.0 || total <= 0.0) return;
  const double e = total * threshold / (1.0 - threshold);
  out.push_back(e);
  out.push_back(e * (1.0 - 1e-12));
}

std::vector<Window> cells_of(const Window& w) {
  std::vector<Window> out;
  for (std::size_t r = w.row0; r < w.row_end(); ++r)
    for (std::size_t c = w.col0; c < w.col_end(); ++c) out.push_back({r, c, 1, 1});
  return out;
}

// Odometer over `positions` digits, each in [0, radix).
template <typename Visit>
void odometer(std::size_t positions, std::size_t radix, Visit&& visit) {
  std::vector<std::size_t> digit(positions, 0);
  while (true) {
    if (!visit(digit)) return;
    std::size_t i = 0;
    while (i < positions && ++digit[i] == radix) digit[i++] = 0;
    if (i == positions) return;
  }
}

// Max masked evidence of class `k` over every assignment of `options` to the
// class-k entries inside `w`, tracking the wrong-class bound cases.
template <typename OnValue>
std::uint64_t enumerate_slice(const Grid& clean_slice, const Window& w,
                              const std::vector<double>& options, OnValue&& on_value) {
  const auto cells = cells_of(w);
  std::uint64_t count = 0;
  Grid adv = clean_slice;
  odometer(cells.size(), options.size(), [&](const std::vector<std::size_t>& digit) {
    for (std::size_t i = 0; i < cells.size(); ++i)
      adv(cells[i].row0, cells[i].col0) = options[digit[i]];
    ++count;
    on_value(adv);
    return true;
  });
  return count;
}

}  // namespace

std::uint64_t adversary_count(const OracleScenario& scenario, const Window& window) {
  if (scenario.kind == FeatureKind::prediction)
    return saturating_pow(scenario.classes, window.area());
  return saturating_pow(scenario.levels.size(), window.area() * scenario.classes);
}

std::vector<double> logits_levels(const FeatureTensor& clean, const Window& window,
                                  const MaskingConfig& config) {
  const double lo = clip_floor(config);
  const double cap = level_cap(clean, config);
  std::vector<double> out{lo, cap / 2.0, cap};
  const FeatureTensor clipped = clip(clean, config.clip);
  for (Label k = 0; k < clean.classes(); ++k)
    push_evasion_levels(out, sum_outside_window(clipped, k, window), config.threshold);
  sort_unique(out);
  return out;
}

void enumerate_adversaries(const FeatureTensor& clean, const Window& window,
                           const OracleScenario& scenario,
                           const std::function<bool(const FeatureTensor&)>& visit) {
  require(window.fits(clean.shape()), "window does not lie inside the feature grid");
  require(scenario.classes == clean.classes(), "scenario and tensor disagree on class count");
  require(scenario.kind == FeatureKind::prediction || !scenario.levels.empty(),
          "logits scenarios need a level set");
  const std::uint64_t required = adversary_count(scenario, window);
  if (required > scenario.budget) throw BudgetExceeded(required, scenario.budget);

  const std::size_t n = clean.classes();
  const auto cells = cells_of(window);
  std::vector<double> values(clean.values().begin(), clean.values().end());
  auto index = [&](const Window& cell, std::size_t k) {
    return (cell.row0 * clean.cols() + cell.col0) * n + k;
  };
  if (scenario.kind == FeatureKind::prediction) {
    odometer(cells.size(), n, [&](const std::vector<std::size_t>& digit) {
      for (std::size_t i = 0; i < cells.size(); ++i)
        for (std::size_t k = 0; k < n; ++k) values[index(cells[i], k)] = k == digit[i] ? 1.0 : 0.0;
      return visit(FeatureTensor::unchecked(clean.rows(), clean.cols(), n, clean.kind(), values));
    });
    return;
  }
  odometer(cells.size() * n, scenario.levels.size(), [&](const std::vector<std::size_t>& digit) {
    for (std::size_t i = 0; i < cells.size(); ++i)
      for (std::size_t k = 0; k < n; ++k) values[index(cells[i], k)] = scenario.levels[digit[i * n + k]];
    return visit(FeatureTensor::unchecked(clean.rows(), clean.cols(), n, clean.kind(), values));
  });
}

LemmaCase classify_case(const FeatureTensor& adversarial, const Window& window, Label k,
                        const MaskingConfig& config) {
  const Grid slice = clip(adversarial, config.clip).slice(k);
  const auto det = detect(slice, config.threshold, config.mask_shape);
  if (!det) return LemmaCase::IV;
  if (*det == window) return LemmaCase::I;
  if (!det->intersects(window)) return LemmaCase::II;
  return LemmaCase::III;
}

namespace {

std::vector<double> slice_options(const FeatureTensor& clean, const Grid& clipped_slice,
                                  const Window& w, const MaskingConfig& config,
                                  const OracleScenario& scenario, double extra_total) {
  if (scenario.kind == FeatureKind::prediction) return {0.0, 1.0};
  std::vector<double> out = scenario.levels;
  const double lo = clip_floor(config);
  const double cap = level_cap(clean, config);
  out.insert(out.end(), {lo, cap / 2.0, cap});
  const double t = sum_outside_window(clipped_slice, w);
  std::vector<double> totals;
  push_evasion_levels(totals, t, config.threshold);
  if (extra_total > 0.0) totals.push_back(extra_total);
  const double area = static_cast<double>(w.area());
  for (double e : totals) {
    out.push_back(e);
    out.push_back(e / area);
    out.push_back(e / area * (1.0 - 1e-12));
  }
  for (double& v : out) v = apply_clip(config.clip, v);
  sort_unique(out);
  return out;
}

}  // namespace

Lemma1Report verify_lemma1(const FeatureTensor& clean, const Window& window,
                           const MaskingConfig& config, const OracleScenario& scenario) {
  config.validate();
  require(window.shape() == config.mask_shape, "the wrong-class bound needs the mask to match the window");
  const FeatureTensor clipped = clip(clean, config.clip);
  Lemma1Report report;
  report.max_observed.assign(clean.classes(), -std::numeric_limits<double>::infinity());
  report.bound.assign(clean.classes(), 0.0);
  for (Label k = 0; k < clean.classes(); ++k) {
    const Grid clean_slice = clipped.slice(k);
    const double bound = lemma1_bound(clean_slice, window, config.threshold);
    report.bound[k] = bound;
    const auto options = slice_options(clean, clean_slice, window, config, scenario, 0.0);
    const std::uint64_t required = saturating_pow(options.size(), window.area());
    if (required > scenario.budget) throw BudgetExceeded(required, scenario.budget);
    report.evaluations += enumerate_slice(clean_slice, window, options, [&](const Grid& adv) {
      std::optional<Window> det;
      const double s = masked_evidence(adv, config.threshold, config.mask_shape, &det);
      report.max_observed[k] = std::max(report.max_observed[k], s);
      if (s > bound + kBoundSlack) report.holds = false;
      LemmaCase c = LemmaCase::IV;
      if (det) c = *det == window ? LemmaCase::I
                   : det->intersects(window) ? LemmaCase::III
                                             : LemmaCase::II;
      ++report.cases[static_cast<std::size_t>(c)];
      if (c == LemmaCase::IV && config.threshold > 0.0 && bound > 0.0 &&
          std::abs(s - bound) <= kBoundSlack)
        report.case_iv_attained = true;
    });
  }
  return report;
}

Lemma2Report verify_lemma2(const FeatureTensor& clean, Shape malicious_shape,
                           const MaskingConfig& config, const OracleScenario& scenario) {
  config.validate();
  const FeatureTensor clipped = clip(clean, config.clip);
  const auto mask_windows = enumerate_windows(clean.shape(), config.mask_shape);
  Lemma2Report report;
  for (Label k = 0; k < clean.classes(); ++k) {
    const Grid clean_slice = clipped.slice(k);
    double worst_l1 = -std::numeric_limits<double>::infinity();
    for (const Window& v : mask_windows)
      worst_l1 = std::max(worst_l1, lemma1_bound(clean_slice, v, config.threshold));
    for (const Window& w : enumerate_windows(clean.shape(), malicious_shape)) {
      const double bound = lemma2_bound(clean_slice, w, config.mask_shape, config.threshold);
      double best_cover = std::numeric_limits<double>::infinity();
      for (const Window& v : mask_windows)
        if (v.covers(w)) best_cover = std::min(best_cover, lemma1_bound(clean_slice, v, config.threshold));
      if (bound > best_cover + 1e-12 || bound > worst_l1 + 1e-12) report.dominates = false;
      report.max_gap = std::max(report.max_gap, worst_l1 - bound);

      // Case IV total for the oversized mask: (t*T - k_extra) / (1 - T).
      double extra = 0.0;
      if (config.threshold > 0.0) {
        const double t = sum_outside_window(clean_slice, w);
        const double outside_cover = bound * (1.0 - config.threshold);
        const double k_extra = t - outside_cover;
        extra = (t * config.threshold - k_extra) / (1.0 - config.threshold);
      }
      const auto options = slice_options(clean, clean_slice, w, config, scenario, extra);
      const std::uint64_t required = saturating_pow(options.size(), w.area());
      if (required > scenario.budget) throw BudgetExceeded(required, scenario.budget);
      report.evaluations += enumerate_slice(clean_slice, w, options, [&](const Grid& adv) {
        const double s = masked_evidence(adv, config.threshold, config.mask_shape);
        if (s > bound + kBoundSlack) report.holds = false;
      });
    }
  }
  return report;
}

namespace {

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double pick_threshold(std::mt19937_64& rng) {
  static constexpr double kThresholds[] = {0.0, 0.0, 0.0, 0.1, 0.25, 0.5};
  return kThresholds[pick(rng, 0, std::size(kThresholds) - 1)];
}

FeatureTensor random_prediction(std::mt19937_64& rng, Shape grid, std::size_t n, Label label) {
  const double p_true = uniform(rng, 0.45, 0.95);
  std::vector<double> values(grid.area() * n, 0.0);
  for (std::size_t c = 0; c < grid.area(); ++c) {
    Label k = label;
    if (uniform(rng, 0.0, 1.0) >= p_true) k = pick(rng, 0, n - 1);
    values[c * n + k] = 1.0;
  }
  return FeatureTensor(grid.rows, grid.cols, n, FeatureKind::prediction, std::move(values));
}

// Logits on a quarter grid so that ties between windows and classes happen.
FeatureTensor random_logits(std::mt19937_64& rng, Shape grid, std::size_t n, Label label) {
  const double strength = uniform(rng, 0.0, 2.0);
  std::vector<double> values(grid.area() * n);
  for (std::size_t c = 0; c < grid.area(); ++c)
    for (std::size_t k = 0; k < n; ++k) {
      const double raw = uniform(rng, -1.5, 2.5) + (k == label ? strength : 0.0);
      values[c * n + k] = std::round(raw * 4.0) / 4.0;
    }
  return FeatureTensor(grid.rows, grid.cols, n, FeatureKind::logits, std::move(values));
}

}  // namespace

RandomInstance random_instance(std::mt19937_64& rng, CorpusKind corpus) {
  RandomInstance inst;
  OracleScenario& sc = inst.scenario;
  const bool prediction = uniform(rng, 0.0, 1.0) < 0.6;
  sc.kind = prediction ? FeatureKind::prediction : FeatureKind::logits;
  sc.config.threshold = pick_threshold(rng);
  sc.config.clip = ClipBounds{0.0, std::nullopt};

  if (prediction) {
    sc.grid = {pick(rng, 2, corpus == CorpusKind::soundness ? 5 : 6),
               pick(rng, 2, corpus == CorpusKind::soundness ? 5 : 6)};
    sc.classes = pick(rng, 2, 4);
    const std::size_t max_side = corpus == CorpusKind::soundness ? 2 : 3;
    sc.window = {pick(rng, 1, std::min(max_side, sc.grid.rows)),
                 pick(rng, 1, std::min(max_side, sc.grid.cols))};
    // Keep the joint one-hot enumeration small.
    while (corpus == CorpusKind::soundness &&
           saturating_pow(sc.classes, sc.window.area()) > 256 && sc.window.area() > 1) {
      if (sc.window.rows >= sc.window.cols) --sc.window.rows; else --sc.window.cols;
    }
  } else {
    sc.grid = {pick(rng, 2, 4), pick(rng, 2, 4)};
    sc.classes = corpus == CorpusKind::soundness ? 2 : pick(rng, 2, 3);
    const std::size_t max_area = corpus == CorpusKind::soundness ? 2 : 4;
    sc.window = {pick(rng, 1, std::min<std::size_t>(2, sc.grid.rows)),
                 pick(rng, 1, std::min<std::size_t>(2, sc.grid.cols))};
    while (sc.window.area() > max_area) {
      if (sc.window.rows >= sc.window.cols) --sc.window.rows; else --sc.window.cols;
    }
  }

  sc.config.mask_shape = sc.window;
  const bool oversize = corpus == CorpusKind::lemma2 ||
                        (corpus == CorpusKind::soundness && uniform(rng, 0.0, 1.0) < 0.25);
  if (oversize) {
    // Malicious window strictly smaller than the mask along at least one axis
    // whenever the grid allows it.
    Shape mask = sc.window;
    if (mask.rows < sc.grid.rows && pick(rng, 0, 1)) ++mask.rows;
    if (mask.cols < sc.grid.cols && (mask == sc.window || pick(rng, 0, 1))) ++mask.cols;
    if (mask == sc.window && mask.rows < sc.grid.rows) ++mask.rows;
    sc.config.mask_shape = mask;
  }

  inst.label = pick(rng, 0, sc.classes - 1);
  inst.clean = prediction ? random_prediction(rng, sc.grid, sc.classes, inst.label)
                          : random_logits(rng, sc.grid, sc.classes, inst.label);
  return inst;
}

SoundnessReport verify_soundness(std::uint64_t seed, std::size_t trials, const CertOptions& opts) {
  std::mt19937_64 rng(seed);
  SoundnessReport report;
  for (std::size_t t = 0; t < trials; ++t) {
    RandomInstance inst = random_instance(rng, CorpusKind::soundness);
    ++report.trials;
    const CertResult cert = certify_oversized(inst.clean, inst.label, inst.scenario.window,
                                              inst.scenario.config, opts);
    if (!cert.certified) continue;
    ++report.certified;
    bool violated = false;
    for (const Window& w : enumerate_windows(inst.clean.shape(), inst.scenario.window)) {
      OracleScenario sc = inst.scenario;
      if (sc.kind != FeatureKind::prediction) sc.levels = logits_levels(inst.clean, w, sc.config);
      enumerate_adversaries(inst.clean, w, sc, [&](const FeatureTensor& adv) {
        ++report.adversaries;
        if (robust_masking(adv, sc.config).predicted != inst.label) violated = true;
        return !violated;
      });
      if (violated) break;
    }
    if (violated) ++report.violations;
  }
  return report;
}

CorpusReport lemma1_corpus(std::uint64_t seed, std::size_t count) {
  std::mt19937_64 rng(seed);
  CorpusReport report;
  for (std::size_t i = 0; i < count; ++i) {
    const RandomInstance inst = random_instance(rng, CorpusKind::lemma1);
    const Shape grid = inst.scenario.grid;
    const Shape ws = inst.scenario.window;
    const Window w{pick(rng, 0, grid.rows - ws.rows), pick(rng, 0, grid.cols - ws.cols), ws.rows,
                   ws.cols};
    const Lemma1Report r = verify_lemma1(inst.clean, w, inst.scenario.config, inst.scenario);
    ++report.scenarios;
    if (!r.holds) ++report.failures;
    report.evaluations += r.evaluations;
    for (std::size_t c = 0; c < 4; ++c) report.cases[c] += r.cases[c];
    report.case_iv_attained = report.case_iv_attained || r.case_iv_attained;
  }
  return report;
}

CorpusReport lemma2_corpus(std::uint64_t seed, std::size_t count) {
  std::mt19937_64 rng(seed);
  CorpusReport report;
  for (std::size_t i = 0; i < count; ++i) {
    const RandomInstance inst = random_instance(rng, CorpusKind::lemma2);
    const Lemma2Report r =
        verify_lemma2(inst.clean, inst.scenario.window, inst.scenario.config, inst.scenario);
    ++report.scenarios;
    if (!r.holds) ++report.failures;
    if (!r.dominates) ++report.dominance_failures;
    report.evaluations += r.evaluations;
    report.max_gap = std::max(report.max_gap, r.max_gap);
  }
  return report;
}

}  // namespace patchguard
