#include "patchguard/cli.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "patchguard/io.hpp"
#include "patchguard/oracle.hpp"
#include "patchguard/synthetic.hpp"

namespace patchguard {

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"dataset", "data/train.pgds", "training dataset file"},
      {"test_dataset", "data/test.pgds", "evaluation dataset file"},
      {"model", "model.pgmd", "model checkpoint file"},
      {"output", "results", "directory for result CSVs"},
      {"rf", "9", "receptive field side in pixels"},
      {"stride", "4", "receptive field stride in pixels"},
      {"hidden", "32", "hidden units of the local classifier"},
      {"kind", "logits", "feature kind: logits, confidence or prediction"},
      {"clip_lo", "0", "lower clip value c_l (>= 0)"},
      {"clip_hi", "inf", "upper clip value c_h"},
      {"threshold", "0", "detection threshold T in [0,1]"},
      {"patch_area", "0.03", "patch area as a fraction of the image"},
      {"patch", "0", "patch side in pixels; 0 derives it from patch_area"},
      {"mask", "auto", "deployed mask as RxC feature cells; auto uses the malicious window"},
      {"topk", "5", "largest k reported in top-k certification columns"},
      {"seed", "0", "seed for training, data order and attacks"},
      {"limit", "0", "process only the first N evaluation images; 0 means all"},
      {"threads", "0", "worker threads; 0 means hardware concurrency"},
      {"learning_rate", "0.05", "SGD learning rate"},
      {"epochs", "20", "epochs of conventional training"},
      {"batch_size", "32", "minibatch size"},
      {"adv_train", "true", "follow conventional training with provable adversarial training"},
      {"adv_epochs", "0", "epochs of provable adversarial training; 0 means epochs"},
      {"attack_steps", "500", "PGD steps per anchor"},
      {"attack_step_size", "0.05", "PGD sign-gradient step size"},
      {"attack_locations", "5", "random patch anchors per image"},
      {"attack_target", "none", "target class for a targeted attack, or none"},
      {"attack_exhaustive", "false", "attack every anchor instead of random ones"},
      {"attack_defended", "true", "attack robust masking instead of the mean-logits pipeline"},
      {"attack_images", "0", "attack only the first N images; 0 means all"},
      {"gen_train", "3000", "synthetic training images"},
      {"gen_test", "200", "synthetic evaluation images"},
      {"gen_rows", "32", "synthetic image rows"},
      {"gen_cols", "32", "synthetic image cols"},
      {"gen_channels", "1", "synthetic image channels"},
      {"gen_classes", "10", "synthetic classes (2..10)"},
      {"gen_noise", "0.05", "synthetic pixel noise std"},
      {"gen_contrast", "0.2", "largest synthetic grating amplitude"},
      {"oracle_seeds", "0", "comma-separated corpus seeds"},
      {"oracle_lemma1", "500", "wrong-class bound scenarios per seed"},
      {"oracle_lemma2", "200", "oversized-mask bound scenarios per seed"},
      {"oracle_soundness", "1000", "certify-then-enumerate trials per seed"},
      {"sweep_rf", "", "receptive fields to train and evaluate; empty uses the model file"},
      {"sweep_threshold", "0", "thresholds T to evaluate"},
      {"sweep_kind", "logits", "feature kinds to evaluate"},
      {"sweep_patch_area", "0.03", "patch areas to evaluate"},
      {"hist_min", "-10", "lower edge of the logits histogram"},
      {"hist_max", "10", "upper edge of the logits histogram"},
      {"hist_bins", "20", "logits histogram bins"},
  };
  return keys;
}

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw ContractViolation("config key '" + key + "': cannot parse '" + value + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v);
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(parse_u64(key, v));
}

double parse_real(const std::string& key, const std::string& v) {
  if (v.empty()) bad_value(key, v);
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || std::isnan(out)) bad_value(key, v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Shape parse_shape(const std::string& key, const std::string& v) {
  const auto x = v.find('x');
  if (x == std::string::npos) bad_value(key, v);
  const Shape s{parse_size(key, v.substr(0, x)), parse_size(key, v.substr(x + 1))};
  if (s.rows == 0 || s.cols == 0) bad_value(key, v);
  return s;
}

// Runs fn(i) for i in [0, n) on a pool of workers; results must be written
// by index so the output order does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::size_t effective_count(std::size_t available, std::size_t limit) {
  return limit == 0 ? available : std::min(available, limit);
}

void check_model_matches(const PatchEnsembleModel& model, const LabeledDataset& data) {
  const RFGeometry& g = model.geometry();
  require(data.class_count == model.classes(), "dataset and model disagree on class count");
  for (const auto& img : data.images)
    require(img.rows() == g.image_rows && img.cols() == g.image_cols && img.channels() == g.channels,
            "dataset images do not match the model geometry");
}

const char* flag(bool b) { return b ? "1" : "0"; }

std::string percent(double fraction) { return format_real(100.0 * fraction, 2) + "%"; }

}  // namespace

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_key_values(std::string(bytes.begin(), bytes.end()));
}

ExperimentConfig make_config(const std::map<std::string, std::string>& values) {
  std::map<std::string, std::string> kv;
  for (const auto& k : config_keys()) kv[k.name] = k.default_value;
  for (const auto& [k, v] : values) {
    require(kv.contains(k), "unknown config key '" + k + "'");
    kv[k] = v;
  }
  auto get = [&](const char* k) -> const std::string& { return kv.at(k); };

  ExperimentConfig c;
  c.dataset = get("dataset");
  c.test_dataset = get("test_dataset");
  c.model = get("model");
  c.output = get("output");
  c.rf = parse_size("rf", get("rf"));
  c.stride = parse_size("stride", get("stride"));
  c.hidden = parse_size("hidden", get("hidden"));
  c.kind = parse_feature_kind(get("kind"));
  c.clip = ClipBounds(parse_real("clip_lo", get("clip_lo")), parse_real("clip_hi", get("clip_hi")));
  c.threshold = parse_real("threshold", get("threshold"));
  c.patch_area = parse_real("patch_area", get("patch_area"));
  c.patch = parse_size("patch", get("patch"));
  if (get("mask") != "auto") c.mask = parse_shape("mask", get("mask"));
  c.topk = parse_size("topk", get("topk"));
  c.seed = parse_u64("seed", get("seed"));
  c.limit = parse_size("limit", get("limit"));
  c.threads = parse_size("threads", get("threads"));

  c.learning_rate = parse_real("learning_rate", get("learning_rate"));
  c.epochs = parse_size("epochs", get("epochs"));
  c.batch_size = parse_size("batch_size", get("batch_size"));
  c.adv_train = parse_bool("adv_train", get("adv_train"));
  c.adv_epochs = parse_size("adv_epochs", get("adv_epochs"));

  c.attack.steps = parse_size("attack_steps", get("attack_steps"));
  c.attack.step_size = parse_real("attack_step_size", get("attack_step_size"));
  c.attack.locations = parse_size("attack_locations", get("attack_locations"));
  if (get("attack_target") != "none")
    c.attack.target = parse_size("attack_target", get("attack_target"));
  c.attack.exhaustive = parse_bool("attack_exhaustive", get("attack_exhaustive"));
  c.attack.seed = c.seed;
  c.attack.defense_kind = c.kind;
  c.attack_defended = parse_bool("attack_defended", get("attack_defended"));
  c.attack_images = parse_size("attack_images", get("attack_images"));

  c.gen_train = parse_size("gen_train", get("gen_train"));
  c.gen_test = parse_size("gen_test", get("gen_test"));
  c.gen_rows = parse_size("gen_rows", get("gen_rows"));
  c.gen_cols = parse_size("gen_cols", get("gen_cols"));
  c.gen_channels = parse_size("gen_channels", get("gen_channels"));
  c.gen_classes = parse_size("gen_classes", get("gen_classes"));
  c.gen_noise = parse_real("gen_noise", get("gen_noise"));
  c.gen_contrast = parse_real("gen_contrast", get("gen_contrast"));

  c.oracle_seeds.clear();
  for (const auto& s : split_list(get("oracle_seeds"))) c.oracle_seeds.push_back(parse_u64("oracle_seeds", s));
  c.oracle_lemma1 = parse_size("oracle_lemma1", get("oracle_lemma1"));
  c.oracle_lemma2 = parse_size("oracle_lemma2", get("oracle_lemma2"));
  c.oracle_soundness = parse_size("oracle_soundness", get("oracle_soundness"));

  c.sweep_rf.clear();
  for (const auto& s : split_list(get("sweep_rf"))) c.sweep_rf.push_back(parse_size("sweep_rf", s));
  c.sweep_threshold.clear();
  for (const auto& s : split_list(get("sweep_threshold")))
    c.sweep_threshold.push_back(parse_real("sweep_threshold", s));
  c.sweep_kind.clear();
  for (const auto& s : split_list(get("sweep_kind"))) c.sweep_kind.push_back(parse_feature_kind(s));
  c.sweep_patch_area.clear();
  for (const auto& s : split_list(get("sweep_patch_area")))
    c.sweep_patch_area.push_back(parse_real("sweep_patch_area", s));

  c.hist_min = parse_real("hist_min", get("hist_min"));
  c.hist_max = parse_real("hist_max", get("hist_max"));
  c.hist_bins = parse_size("hist_bins", get("hist_bins"));

  require(c.threshold >= 0.0 && c.threshold <= 1.0, "threshold must lie in [0,1]");
  require(c.clip.lo() >= 0.0, "clip_lo must be non-negative for certification");
  require(c.patch > 0 || (c.patch_area > 0.0 && c.patch_area < 1.0),
          "patch_area must lie in (0,1) when patch is 0");
  require(c.topk >= 1, "topk must be at least 1");
  require(c.hist_bins >= 1 && c.hist_max > c.hist_min, "histogram range is empty");
  return c;
}

RFGeometry config_geometry(const ExperimentConfig& cfg, std::size_t rows, std::size_t cols,
                           std::size_t channels) {
  return RFGeometry::make(rows, cols, channels, cfg.rf, cfg.stride);
}

PatchSpec config_patch(const ExperimentConfig& cfg, std::size_t rows, std::size_t cols) {
  if (cfg.patch > 0) return PatchSpec::square(cfg.patch);
  return PatchSpec::square_for_area(cfg.patch_area, rows, cols);
}

MaskingConfig config_masking(const ExperimentConfig& cfg, const RFGeometry& geom) {
  MaskingConfig mc;
  mc.clip = cfg.clip;
  mc.threshold = cfg.threshold;
  mc.mask_shape = cfg.mask ? *cfg.mask
                           : mask_shape(config_patch(cfg, geom.image_rows, geom.image_cols), geom);
  mc.validate();
  return mc;
}

GenDataSummary cmd_gen_data(const ExperimentConfig& cfg, std::ostream& log) {
  SyntheticSpec spec{cfg.gen_train,   cfg.gen_rows,  cfg.gen_cols,     cfg.gen_channels,
                     cfg.gen_classes, cfg.gen_noise, cfg.gen_contrast, cfg.seed};
  save_dataset(make_synthetic(spec), cfg.dataset);
  spec.count = cfg.gen_test;
  spec.seed = cfg.seed + 1;
  save_dataset(make_synthetic(spec), cfg.test_dataset);
  log << "wrote " << cfg.gen_train << " training images to " << cfg.dataset.string() << "\n"
      << "wrote " << cfg.gen_test << " evaluation images to " << cfg.test_dataset.string() << "\n";
  return {cfg.gen_train, cfg.gen_test};
}

TrainSummary cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  const LabeledDataset data = load_dataset(cfg.dataset);
  require(data.size() > 0, "training dataset is empty");
  const auto& first = data.images.front();
  const RFGeometry geom = config_geometry(cfg, first.rows(), first.cols(), first.channels());

  TrainConfig tc;
  tc.learning_rate = cfg.learning_rate;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.seed = cfg.seed;
  tc.hidden_units = cfg.hidden;
  tc.adv_epochs = cfg.adv_epochs;
  if (cfg.adv_train) tc.adv_mask_shape = config_masking(cfg, geom).mask_shape;
  const TrainingRun run = cfg.adv_train ? train_provable_adv(data, geom, tc) : train(data, geom, tc);
  save_model(run.model, cfg.model);

  TrainSummary summary;
  summary.final_loss = run.final_loss();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    correct += predict_insecure(run.model, data.images[i]) == data.labels[i];
  summary.train_accuracy = double(correct) / double(data.size());
  log << "final loss " << format_real(summary.final_loss) << "\n"
      << "train accuracy " << percent(summary.train_accuracy) << "\n";
  if (std::filesystem::exists(cfg.test_dataset)) {
    const LabeledDataset test = load_dataset(cfg.test_dataset);
    check_model_matches(run.model, test);
    const MaskingConfig mc = config_masking(cfg, geom);
    const std::size_t n = effective_count(test.size(), cfg.limit);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < n; ++i)
      ok += robust_masking(extract_features(run.model, test.images[i], cfg.kind), mc).predicted ==
            test.labels[i];
    summary.validation_accuracy = n ? double(ok) / double(n) : 0.0;
    log << "validation accuracy (robust masking) " << percent(summary.validation_accuracy) << "\n";
  }
  log << "wrote model to " << cfg.model.string() << "\n";
  return summary;
}

std::vector<CertifyRow> certify_images(const PatchEnsembleModel& model, const LabeledDataset& data,
                                       const ExperimentConfig& cfg) {
  check_model_matches(model, data);
  const RFGeometry& geom = model.geometry();
  const MaskingConfig mc = config_masking(cfg, geom);
  const Shape malicious = mask_shape(config_patch(cfg, geom.image_rows, geom.image_cols), geom);
  require(mc.mask_shape.rows >= malicious.rows && mc.mask_shape.cols >= malicious.cols,
          "deployed mask is smaller than the malicious window");
  const std::size_t n = effective_count(data.size(), cfg.limit);
  std::vector<CertifyRow> rows(n);
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    const FeatureTensor f = extract_features(model, data.images[i], cfg.kind);
    const MaskingOutcome out = robust_masking(f, mc);
    const CertResult cert = certify_oversized(f, data.labels[i], malicious, mc);
    CertifyRow& row = rows[i];
    row.index = i;
    row.label = data.labels[i];
    row.prediction = out.predicted;
    row.certified = cert.certified;
    row.topk.resize(cfg.topk);
    for (std::size_t j = 0; j < cfg.topk; ++j) row.topk[j] = cert.max_defeating <= j;
    row.true_lower = cert.true_lower;
    row.max_wrong_upper = *std::max_element(cert.wrong_upper.begin(), cert.wrong_upper.end());
    row.detected = out.detected[out.predicted].has_value();
  });
  return rows;
}

CertifySummary summarize(const std::vector<CertifyRow>& rows, std::size_t topk) {
  CertifySummary s;
  s.images = rows.size();
  s.topk.assign(topk, 0);
  for (const auto& r : rows) {
    const bool correct = r.prediction == r.label;
    s.clean_correct += correct;
    s.provable += correct && r.certified;
    for (std::size_t j = 0; j < topk && j < r.topk.size(); ++j) s.topk[j] += r.topk[j];
    s.detections += r.detected;
  }
  return s;
}

std::string certify_csv(const std::vector<CertifyRow>& rows, std::size_t topk) {
  std::ostringstream out;
  out << "index,label,prediction,correct,certified";
  for (std::size_t j = 1; j <= topk; ++j) out << ",top" << j;
  out << ",true_lower,max_wrong_upper,detected\n";
  for (const auto& r : rows) {
    out << r.index << ',' << r.label << ',' << r.prediction << ',' << flag(r.prediction == r.label)
        << ',' << flag(r.certified);
    for (std::size_t j = 0; j < topk; ++j) out << ',' << flag(j < r.topk.size() && r.topk[j]);
    out << ',' << format_real(r.true_lower) << ',' << format_real(r.max_wrong_upper) << ','
        << flag(r.detected) << '\n';
  }
  return out.str();
}

CertifySummary cmd_certify(const ExperimentConfig& cfg, std::ostream& log) {
  const PatchEnsembleModel model = load_model(cfg.model);
  const LabeledDataset data = load_dataset(cfg.test_dataset);
  const auto rows = certify_images(model, data, cfg);
  write_text(cfg.output / "certify.csv", certify_csv(rows, cfg.topk));
  const CertifySummary s = summarize(rows, cfg.topk);
  log << "images " << s.images << "\n"
      << "clean accuracy " << percent(s.clean_accuracy()) << "\n"
      << "provable robust accuracy " << percent(s.provable_accuracy()) << "\n";
  for (std::size_t j = 0; j < s.topk.size(); ++j)
    log << "top-" << j + 1 << " provable accuracy "
        << percent(s.images ? double(s.topk[j]) / double(s.images) : 0.0) << "\n";
  log << "detections on the predicted class "
      << percent(s.images ? double(s.detections) / double(s.images) : 0.0) << "\n";
  return s;
}

AttackSummary cmd_attack(const ExperimentConfig& cfg, std::ostream& log) {
  const PatchEnsembleModel model = load_model(cfg.model);
  const LabeledDataset data = load_dataset(cfg.test_dataset);
  ExperimentConfig ccfg = cfg;
  ccfg.limit = effective_count(effective_count(data.size(), cfg.limit), cfg.attack_images);
  const auto cert_rows = certify_images(model, data, ccfg);
  const RFGeometry& geom = model.geometry();
  const MaskingConfig mc = config_masking(cfg, geom);
  const PatchSpec patch = config_patch(cfg, geom.image_rows, geom.image_cols);
  const std::optional<MaskingConfig> defense =
      cfg.attack_defended ? std::optional<MaskingConfig>(mc) : std::nullopt;

  const std::size_t n = cert_rows.size();
  std::vector<std::optional<AttackResult>> results(n);
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    if (cert_rows[i].prediction != cert_rows[i].label) return;
    AttackConfig ac = cfg.attack;
    ac.seed = cfg.seed * 1000003u + i;
    ac.defense_kind = cfg.kind;
    results[i] = pgd_patch_attack(model, data.images[i], data.labels[i], patch, ac, defense);
  });

  AttackSummary s;
  std::ostringstream csv;
  csv << "index,label,clean_prediction,certified,attacked,success,adversarial_prediction,"
         "anchor_row,anchor_col,final_loss\n";
  for (std::size_t i = 0; i < n; ++i) {
    const CertifyRow& c = cert_rows[i];
    csv << i << ',' << c.label << ',' << c.prediction << ',' << flag(c.certified) << ',';
    if (!results[i]) {
      csv << "0,0,,,,\n";
      continue;
    }
    const AttackResult& r = *results[i];
    csv << "1," << flag(r.success) << ',' << r.prediction << ',' << r.anchor.row << ','
        << r.anchor.col << ',' << format_real(r.final_loss) << '\n';
    if (c.certified) {
      ++s.certified_attacked;
      s.certified_successes += r.success;
    } else {
      ++s.uncertified_attacked;
      s.uncertified_successes += r.success;
    }
  }
  write_text(cfg.output / "attack.csv", csv.str());
  log << "pipeline " << (cfg.attack_defended ? "robust masking" : "mean logits (undefended)") << "\n"
      << "certified images attacked " << s.certified_attacked << ", successes "
      << s.certified_successes << "\n"
      << "uncertified images attacked " << s.uncertified_attacked << ", successes "
      << s.uncertified_successes << "\n";
  return s;
}

DiagnoseSummary cmd_diagnose(const ExperimentConfig& cfg, std::ostream& log) {
  const PatchEnsembleModel model = load_model(cfg.model);
  const LabeledDataset data = load_dataset(cfg.test_dataset);
  check_model_matches(model, data);
  const RFGeometry& geom = model.geometry();
  const PatchSpec patch = config_patch(cfg, geom.image_rows, geom.image_cols);
  const std::size_t n = effective_count(effective_count(data.size(), cfg.limit), cfg.attack_images);
  const std::size_t cells = geom.feature_shape().area();
  const std::size_t classes = model.classes();

  struct Item {
    double clean_incorrect = 0.0;
    double attacked_incorrect = 0.0;
    AttackResult attack;
    std::vector<double> clean_logits;
    std::vector<double> attacked_logits;
  };
  std::vector<Item> items(n);
  auto incorrect_fraction = [&](const std::vector<double>& logits, Label label) {
    std::size_t wrong = 0;
    for (std::size_t c = 0; c < cells; ++c)
      wrong += argmax_lowest(std::span(logits).subspan(c * classes, classes)) != label;
    return double(wrong) / double(cells);
  };
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    Item& it = items[i];
    it.clean_logits = local_logits(model, data.images[i]);
    it.clean_incorrect = incorrect_fraction(it.clean_logits, data.labels[i]);
    AttackConfig ac = cfg.attack;
    ac.seed = cfg.seed * 1000003u + i;
    it.attack = pgd_patch_attack(model, data.images[i], data.labels[i], patch, ac, std::nullopt);
    it.attacked_logits = local_logits(model, it.attack.adversarial_image);
    it.attacked_incorrect = incorrect_fraction(it.attacked_logits, data.labels[i]);
  });

  std::vector<std::size_t> hist_true(cfg.hist_bins, 0), hist_attacked(cfg.hist_bins, 0);
  const double width = (cfg.hist_max - cfg.hist_min) / double(cfg.hist_bins);
  auto bin = [&](double v) {
    const double b = std::floor((v - cfg.hist_min) / width);
    return static_cast<std::size_t>(std::clamp(b, 0.0, double(cfg.hist_bins - 1)));
  };

  DiagnoseSummary s;
  std::size_t successes = 0;
  std::ostringstream csv;
  csv << "index,label,clean_incorrect_local,attack_success,attacked_prediction,"
         "attacked_incorrect_local\n";
  for (std::size_t i = 0; i < n; ++i) {
    const Item& it = items[i];
    const Label label = data.labels[i];
    csv << i << ',' << label << ',' << format_real(it.clean_incorrect) << ','
        << flag(it.attack.success) << ',' << it.attack.prediction << ','
        << format_real(it.attacked_incorrect) << '\n';
    s.clean_incorrect_local += it.clean_incorrect;
    s.attacked_incorrect_local += it.attacked_incorrect;
    for (std::size_t c = 0; c < cells; ++c) ++hist_true[bin(it.clean_logits[c * classes + label])];
    if (it.attack.success) {
      ++successes;
      for (std::size_t c = 0; c < cells; ++c)
        ++hist_attacked[bin(it.attacked_logits[c * classes + it.attack.prediction])];
    }
  }
  if (n > 0) {
    s.clean_incorrect_local /= double(n);
    s.attacked_incorrect_local /= double(n);
    s.attack_success_rate = double(successes) / double(n);
  }
  write_text(cfg.output / "diagnose.csv", csv.str());

  std::ostringstream hist;
  hist << "bin_lo,bin_hi,clean_true_class,attacked_class\n";
  log << "local logits histogram (clean true class | attacked class)\n";
  for (std::size_t b = 0; b < cfg.hist_bins; ++b) {
    const double lo = cfg.hist_min + width * double(b);
    const double hi = lo + width;
    hist << format_real(lo, 3) << ',' << format_real(hi, 3) << ',' << hist_true[b] << ','
         << hist_attacked[b] << '\n';
    log << "  [" << format_real(lo, 2) << ", " << format_real(hi, 2) << ")  " << hist_true[b]
        << " | " << hist_attacked[b] << "\n";
  }
  write_text(cfg.output / "histogram.csv", hist.str());
  log << "incorrect local predictions, clean " << percent(s.clean_incorrect_local) << ", attacked "
      << percent(s.attacked_incorrect_local) << "\n"
      << "undefended attack success " << percent(s.attack_success_rate) << "\n";
  return s;
}

OracleSummary cmd_oracle(const ExperimentConfig& cfg, std::ostream& log) {
  OracleSummary s;
  std::ostringstream csv;
  csv << "check,seed,scenarios,certified,failures,evaluations,case_i,case_ii,case_iii,case_iv,"
         "case_iv_attained\n";
  for (std::uint64_t seed : cfg.oracle_seeds) {
    const CorpusReport l1 = lemma1_corpus(seed, cfg.oracle_lemma1);
    csv << "lemma1," << seed << ',' << l1.scenarios << ",," << l1.failures << ',' << l1.evaluations;
    for (std::size_t c : l1.cases) csv << ',' << c;
    csv << ',' << flag(l1.case_iv_attained) << '\n';
    log << "lemma1 seed " << seed << ": " << l1.failures << " failures in " << l1.scenarios
        << " scenarios\n";

    const CorpusReport l2 = lemma2_corpus(seed, cfg.oracle_lemma2);
    const std::size_t l2_fail = l2.failures + l2.dominance_failures;
    csv << "lemma2," << seed << ',' << l2.scenarios << ",," << l2_fail << ',' << l2.evaluations
        << ",,,,,\n";
    log << "lemma2 seed " << seed << ": " << l2_fail << " failures in " << l2.scenarios
        << " scenarios\n";

    const SoundnessReport sr = verify_soundness(seed, cfg.oracle_soundness);
    csv << "soundness," << seed << ',' << sr.trials << ',' << sr.certified << ',' << sr.violations
        << ',' << sr.adversaries << ",,,,,\n";
    log << "soundness seed " << seed << ": " << sr.violations << " violations in " << sr.certified
        << " certified of " << sr.trials << " trials\n";
    s.violations += l1.failures + l2_fail + sr.violations;
  }
  write_text(cfg.output / "oracle.csv", csv.str());
  return s;
}

std::size_t cmd_eval_sweep(const ExperimentConfig& cfg, std::ostream& log) {
  const LabeledDataset test = load_dataset(cfg.test_dataset);
  std::vector<std::pair<std::size_t, PatchEnsembleModel>> models;
  if (cfg.sweep_rf.empty()) {
    PatchEnsembleModel m = load_model(cfg.model);
    models.emplace_back(m.geometry().rf_rows, std::move(m));
  } else {
    const LabeledDataset data = load_dataset(cfg.dataset);
    require(data.size() > 0, "training dataset is empty");
    const auto& first = data.images.front();
    for (std::size_t rf : cfg.sweep_rf) {
      ExperimentConfig c = cfg;
      c.rf = rf;
      const RFGeometry geom = config_geometry(c, first.rows(), first.cols(), first.channels());
      TrainConfig tc;
      tc.learning_rate = cfg.learning_rate;
      tc.epochs = cfg.epochs;
      tc.batch_size = cfg.batch_size;
      tc.seed = cfg.seed;
      tc.hidden_units = cfg.hidden;
      tc.adv_epochs = cfg.adv_epochs;
      if (cfg.adv_train) tc.adv_mask_shape = config_masking(c, geom).mask_shape;
      log << "training rf " << rf << "\n";
      models.emplace_back(rf, cfg.adv_train ? train_provable_adv(data, geom, tc).model
                                            : train(data, geom, tc).model);
    }
  }

  std::ostringstream csv;
  csv << "rf,stride,kind,threshold,patch_area,mask_rows,mask_cols,images,clean_accuracy,"
         "provable_accuracy\n";
  std::size_t count = 0;
  for (const auto& [rf, model] : models)
    for (FeatureKind kind : cfg.sweep_kind)
      for (double t : cfg.sweep_threshold)
        for (double area : cfg.sweep_patch_area) {
          ExperimentConfig c = cfg;
          c.kind = kind;
          c.threshold = t;
          c.patch_area = area;
          c.patch = 0;
          c.mask.reset();
          const RFGeometry& geom = model.geometry();
          const Shape mask = config_masking(c, geom).mask_shape;
          const CertifySummary s = summarize(certify_images(model, test, c), c.topk);
          csv << rf << ',' << geom.stride_rows << ',' << to_string(kind) << ',' << format_real(t, 3)
              << ',' << format_real(area, 4) << ',' << mask.rows << ',' << mask.cols << ','
              << s.images << ',' << format_real(s.clean_accuracy()) << ','
              << format_real(s.provable_accuracy()) << '\n';
          log << "rf " << rf << " " << to_string(kind) << " T=" << format_real(t, 2)
              << " patch " << format_real(100.0 * area, 1) << "%: clean "
              << percent(s.clean_accuracy()) << ", provable " << percent(s.provable_accuracy())
              << "\n";
          ++count;
        }
  write_text(cfg.output / "sweep.csv", csv.str());
  return count;
}

}  // namespace patchguard
