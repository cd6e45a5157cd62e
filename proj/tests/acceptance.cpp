// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "patchguard/aggregate.hpp"
#include "patchguard/certify.hpp"
#include "patchguard/cli.hpp"
#include "patchguard/geometry.hpp"
#include "patchguard/io.hpp"
#include "patchguard/model.hpp"
#include "patchguard/oracle.hpp"
#include "support.hpp"

using namespace patchguard;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void run(int id, const char* name, double limit_seconds, const std::function<Outcome()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > limit_seconds) {
    o.pass = false;
    o.detail += " (over the time limit)";
  }
  if (!o.pass) ++failures;
  std::printf("criterion %2d %-34s %s  [%.2fs] %s\n", id, name, o.pass ? "PASS" : "FAIL", secs,
              o.detail.c_str());
  std::fflush(stdout);
}

// Most receptive fields (start i*s, width r) one p-pixel span can meet along
// an unbounded axis, found by sliding the span across one stride period.
std::size_t sliding_intersection(std::size_t p, std::size_t r, std::size_t s) {
  const std::size_t base = (r / s + 2) * s;
  std::size_t best = 0;
  for (std::size_t a = base; a < base + s; ++a) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i * s <= a + p; ++i)
      if (i * s < a + p && a < i * s + r) ++hits;
    best = std::max(best, hits);
  }
  return best;
}

Outcome criterion1() {
  struct Row {
    std::size_t p, r, s, want;
  };
  // Hand-derived values of ceil((p + r - 1) / s).
  const Row golden[] = {{32, 17, 8, 6}, {1, 1, 1, 1},  {6, 9, 4, 4},
                        {16, 17, 8, 4}, {30, 25, 1, 54}, {3, 5, 3, 3}};
  for (const auto& g : golden)
    if (window_size(g.p, g.r, g.s) != g.want) return {false, "golden table mismatch"};
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> d(1, 40);
  for (int i = 0; i < 50; ++i) {
    const std::size_t p = d(rng), r = d(rng), s = 1 + d(rng) % 16;
    if (window_size(p, r, s) != sliding_intersection(p, r, s))
      return {false, "derived triple mismatch at p=" + std::to_string(p)};
  }
  return {true, "6 golden rows and 50 derived triples match"};
}

Outcome criterion2() {
  const auto r = lemma1_corpus(0, 500);
  std::ostringstream s;
  s << r.scenarios << " scenarios, " << r.failures << " failures, cases I/II/III/IV = "
    << r.cases[0] << '/' << r.cases[1] << '/' << r.cases[2] << '/' << r.cases[3]
    << ", Case IV attained " << (r.case_iv_attained ? "yes" : "no");
  return {r.scenarios == 500 && r.failures == 0 && r.case_iv_attained, s.str()};
}

Outcome criterion3() {
  const auto r = verify_soundness(0, 1000);
  std::ostringstream s;
  s << r.trials << " trials, " << r.certified << " certified, " << r.adversaries
    << " adversaries, " << r.violations << " violations";
  return {r.trials == 1000 && r.violations == 0, s.str()};
}

Outcome criterion4() {
  const auto r = lemma2_corpus(0, 200);
  std::mt19937_64 rng(44);
  std::size_t mismatches = 0;
  for (int i = 0; i < 200; ++i) {
    const auto t = testing::random_logits(rng, 3 + i % 4, 3 + (i / 4) % 4, 2 + i % 3);
    MaskingConfig cfg;
    cfg.mask_shape = {std::size_t(1 + i % 3), std::size_t(1 + (i / 3) % 3)};
    cfg.threshold = (i % 5) * 0.15;
    const Label y = i % t.classes();
    const auto a = certify_masking(t, y, cfg);
    const auto b = certify_oversized(t, y, cfg.mask_shape, cfg);
    if (a.certified != b.certified || a.worst_window != b.worst_window ||
        a.true_lower != b.true_lower || a.wrong_upper != b.wrong_upper ||
        a.max_defeating != b.max_defeating)
      ++mismatches;
  }
  std::ostringstream s;
  s << r.scenarios << " scenarios, " << r.failures << " bound failures, " << r.dominance_failures
    << " dominance failures, " << mismatches << " equal-shape mismatches";
  return {r.scenarios == 200 && r.failures == 0 && r.dominance_failures == 0 && mismatches == 0,
          s.str()};
}

Outcome criterion5() {
  std::mt19937_64 rng(55);
  std::size_t ds_agree = 0, cbn_agree = 0;
  for (int i = 0; i < 200; ++i) {
    const auto p = testing::random_prediction(rng, 2 + i % 5, 2 + (i / 5) % 5, 2 + i % 9);
    MaskingConfig cfg;
    cfg.threshold = 1.0;
    ds_agree += robust_masking(p, cfg).predicted == ds_majority(p).predicted;
  }
  for (int i = 0; i < 200; ++i) {
    const auto l = testing::random_logits(rng, 2 + i % 5, 2 + (i / 5) % 5, 2 + i % 9, -60.0, 80.0);
    MaskingConfig cfg;
    cfg.threshold = 1.0;
    cfg.clip = TanhClip{};
    cbn_agree += robust_masking(l, cfg).predicted == cbn_aggregate(l);
  }
  std::ostringstream s;
  s << "majority vote " << ds_agree << "/200, clipped logits " << cbn_agree << "/200";
  return {ds_agree == 200 && cbn_agree == 200, s.str()};
}

Outcome criterion6() {
  // C C W C C W C C W C C, correct class 0: 8 correct votes, 3 wrong.
  const auto t = testing::prediction_tensor(1, 11, 2, {0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0});
  const bool ds = ds_certify(t, 0, 3);
  MaskingConfig cfg;
  cfg.mask_shape = {1, 3};
  const bool pg = certify_masking(t, 0, cfg).certified;
  return {!ds && pg, std::string("majority vote ") + (ds ? "certified" : "not certified") +
                         ", robust masking " + (pg ? "certified" : "not certified")};
}

struct DeskRun {
  std::filesystem::path dir;
  ExperimentConfig cfg;
  CertifySummary plain, adv;
  AttackSummary attack;
  std::string csv_a, csv_b;
};

DeskRun& desk() {
  static DeskRun d;
  return d;
}

std::string slurp(const std::filesystem::path& p) {
  const auto bytes = read_file(p);
  return std::string(bytes.begin(), bytes.end());
}

Outcome criterion7() {
  DeskRun& d = desk();
  d.dir = std::filesystem::temp_directory_path() / "patchguard_acceptance";
  std::filesystem::remove_all(d.dir);
  d.cfg = make_config({{"dataset", (d.dir / "train.pgds").string()},
                       {"test_dataset", (d.dir / "test.pgds").string()},
                       {"output", (d.dir / "out").string()}});
  std::ostringstream log;
  cmd_gen_data(d.cfg, log);

  ExperimentConfig plain = d.cfg;
  plain.adv_train = false;
  plain.model = d.dir / "plain.pgmd";
  cmd_train(plain, log);
  d.plain = cmd_certify(plain, log);

  d.cfg.model = d.dir / "adv.pgmd";
  cmd_train(d.cfg, log);
  d.adv = cmd_certify(d.cfg, log);
  d.csv_a = slurp(d.cfg.output / "certify.csv");
  d.attack = cmd_attack(d.cfg, log);

  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(1);
  s << "clean " << 100.0 * d.adv.clean_accuracy() << "%, provable "
    << 100.0 * d.adv.provable_accuracy() << "% (plain " << 100.0 * d.plain.provable_accuracy()
    << "%), PGD successes on certified " << d.attack.certified_successes << "/"
    << d.attack.certified_attacked;
  const bool ok = d.adv.clean_accuracy() >= 0.8 && d.adv.provable > 0 &&
                  d.attack.certified_successes == 0 && d.attack.certified_attacked > 0 &&
                  d.adv.provable >= d.plain.provable;
  return {ok, s.str()};
}

Outcome criterion8() {
  std::mt19937_64 rng(88);
  double worst = 0.0;
  std::size_t probes = 0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const std::size_t rows = 8 + i % 5, cols = 8 + (i / 5) % 4, ch = 1 + i % 3;
    const auto g = RFGeometry::make(rows, cols, ch, 3 + i % 3, 1 + i % 2);
    auto m = PatchEnsembleModel::initialized(g, 2 + i % 4, 4 + i % 5, i);
    std::uniform_real_distribution<double> bias(-0.2, 0.2);
    for (std::size_t u = 0; u < m.hidden(); ++u) m.params()[m.b1_offset() + u] = bias(rng);
    const auto img = testing::random_image(rng, rows, cols, ch);
    const auto r = gradient_check(m, img, i % m.classes(), i);
    worst = std::max(worst, r.max_relative_error);
    probes += r.probes;
  }
  std::ostringstream s;
  s << "max relative error " << worst << " over " << probes << " probes";
  return {worst < 1e-3 && probes > 0, s.str()};
}

Outcome criterion9() {
  const auto& a = desk().adv;
  if (a.images == 0) return {false, "desk run missing"};
  std::ostringstream s;
  bool ok = a.topk.size() == 5;
  for (std::size_t k = 0; k < a.topk.size(); ++k) {
    s << (k ? ", " : "") << "top-" << k + 1 << " " << a.topk[k];
    if (k > 0 && a.topk[k] < a.topk[k - 1]) ok = false;
  }
  return {ok, s.str()};
}

Outcome criterion10() {
  DeskRun& d = desk();
  if (d.csv_a.empty()) return {false, "desk run missing"};
  std::ostringstream log;
  ExperimentConfig c = d.cfg;
  c.threads = 3;
  cmd_certify(c, log);
  d.csv_b = slurp(c.output / "certify.csv");
  const bool same = d.csv_a == d.csv_b;
  std::filesystem::remove_all(d.dir);
  return {same, same ? "certify.csv byte-identical (" + std::to_string(d.csv_a.size()) + " bytes)"
                     : "certify.csv differs between runs"};
}

}  // namespace

int main() {
  run(1, "window size table", 1.0, criterion1);
  run(2, "wrong-class bound oracle", 300.0, criterion2);
  run(3, "certification soundness", 600.0, criterion3);
  run(4, "oversized-mask bound oracle", 300.0, criterion4);
  run(5, "reductions to baselines", 30.0, criterion5);
  run(6, "vote sequence regression", 1.0, criterion6);
  run(7, "desk end-to-end experiment", 1800.0, criterion7);
  run(8, "gradient check", 60.0, criterion8);
  run(9, "top-k monotonicity", 1.0, criterion9);
  run(10, "certification determinism", 60.0, criterion10);
  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
