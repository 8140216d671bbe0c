// Acceptance harness: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fclgan/fclgan.hpp"
#include "grad_check.hpp"
#include "probe_models.hpp"

namespace fs = std::filesystem;
using namespace fclgan;

namespace {

struct Outcome {
  Outcome() = default;
  Outcome(bool p, std::string d, std::set<std::string> f = {}) : pass(p), detail(std::move(d)), failed(std::move(f)) {}
  bool pass = false;
  std::string detail;
  std::set<std::string> failed;  // clause keys, e.g. "params"
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

/// Value of `key=` in a step or validation log line.
double field(const std::string& line, const std::string& key) {
  const auto pos = line.find(" " + key + "=");
  if (pos == std::string::npos) throw std::runtime_error("log line lacks " + key + ": " + line);
  return std::stod(line.substr(pos + key.size() + 2));
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

// ---------------------------------------------------------------- 1

Outcome coverage_oracles() {
  Stopwatch sw;
  std::mt19937_64 rng(101);
  std::bernoulli_distribution coin(0.5);
  auto random_rep = [&] {
    LatentSpectralRep r{64, 64, std::vector<double>(64 * 64), RepMode::hard};
    for (auto& v : r.values) v = coin(rng) ? 1.0 : 0.0;
    return r;
  };
  std::vector<LatentSpectralRep> reps;
  for (int i = 0; i < 100; ++i) reps.push_back(random_rep());

  double worst = 0;
  for (int w : {4, 8}) {
    const std::size_t n = 64 / static_cast<std::size_t>(w);
    auto oracle_cov = [&](const LatentSpectralRep& r) {
      std::vector<double> cov;
      for (std::size_t br = 0; br < n; ++br)
        for (std::size_t bc = 0; bc < n; ++bc) {
          double black = 0;
          for (std::size_t y = br * w; y < (br + 1) * w; ++y)
            for (std::size_t x = bc * w; x < (bc + 1) * w; ++x)
              if (r.values[y * 64 + x] == 0.0) black += 1;
          cov.push_back(black / double(w * w));
        }
      return cov;
    };
    for (std::size_t i = 0; i < reps.size(); ++i) {
      const auto got = black_coverage(reps[i], w).values;
      const auto ref = oracle_cov(reps[i]);
      if (got.size() != ref.size()) return {false, "coverage length mismatch"};
      for (std::size_t k = 0; k < ref.size(); ++k) worst = std::max(worst, std::abs(got[k] - ref[k]));

      const auto& other = reps[(i + 1) % reps.size()];
      const auto ref_b = oracle_cov(other);
      double sq = 0;
      for (std::size_t k = 0; k < ref.size(); ++k) sq += (ref[k] - ref_b[k]) * (ref[k] - ref_b[k]);
      const double sim_ref = 1.0 - sq / double(ref.size());
      worst = std::max(worst, std::abs(similarity(reps[i], other, w) - sim_ref));
    }
  }
  const double t = sw.seconds();
  return {worst <= 1e-12 && t < 5.0, "max |diff| " + fmt("%.3g", worst) + " (tol 1e-12), " + fmt("%.2f", t) +
                                         " s (limit 5 s), 100 reps x chunk {4, 8}"};
}

// ---------------------------------------------------------------- 2

Outcome contrastive_analytics() {
  const LatentSpectralRep half{16, 16, std::vector<double>(256, 0.5), RepMode::hard};
  double worst_eq = 0;
  for (int n : {1, 3, 7}) {
    const ContrastSample s{half, half, std::vector<LatentSpectralRep>(static_cast<std::size_t>(n), half)};
    worst_eq = std::max(worst_eq, std::abs(contrastive_loss(s, 0.07, 8) - std::log(n + 1.0)));
  }
  // ln(1 + e^(-1/0.07)) to 30 digits.
  const double reference = 6.24874755712038179154648598460e-7;
  const LatentSpectralRep white{16, 16, std::vector<double>(256, 1.0), RepMode::hard};
  const LatentSpectralRep black{16, 16, std::vector<double>(256, 0.0), RepMode::hard};
  const ContrastSample s{white, white, {black}};
  const double err = std::abs(contrastive_loss(s, 0.07, 8) - reference);
  return {worst_eq <= 1e-9 && err <= 1e-12, "equal similarities: max |L - ln(N+1)| " + fmt("%.3g", worst_eq) +
                                                " (tol 1e-9); (1, 0, 0.07): |err| " + fmt("%.3g", err) +
                                                " (tol 1e-12)"};
}

// ---------------------------------------------------------------- 3

Outcome blur_monotonicity() {
  Stopwatch sw;
  std::mt19937_64 rng(303);
  const SpectralConfig cfg;
  int monotone = 0;
  for (int i = 0; i < 20; ++i) {
    const Image img = generate_sharp_image(128, rng);
    double prev = -1;
    bool ok = true;
    for (double sigma : {0.0, 1.0, 2.0, 4.0}) {
      const Image b = synth_blur(img, BlurSpec::gaussian(sigma));
      std::vector<float> px(b.data.size());
      for (std::size_t k = 0; k < px.size(); ++k) px[k] = 2.0f * b.data[k] - 1.0f;
      const double cov = pfcu_forward(ImageView<float>{3, 128, 128, px}, cfg, RepMode::hard).mean_coverage();
      ok = ok && cov > prev;
      prev = cov;
    }
    monotone += ok;
  }
  const double t = sw.seconds();
  return {monotone >= 19 && t < 30.0, std::to_string(monotone) + "/20 images strictly increasing (need 19), " +
                                          fmt("%.2f", t) + " s (limit 30 s)"};
}

// ---------------------------------------------------------------- 4

Outcome structural_relations() {
  Stopwatch sw;
  std::mt19937_64 rng(404);
  auto meta_stack = [&](StructureKind k, Allocation a) {
    GeneratorSpec g;
    g.structure = k;
    g.base_width = 32;
    g.allocation = a;
    const auto m = build_generator<float>(g, rng);
    return model_summary(m, {1, 3, 256, 256}).subtotal("metas");
  };
  const auto [led_p, led_m] = meta_stack(StructureKind::led, {0, 6, 3});
  const auto [ed_p, ed_m] = meta_stack(StructureKind::encoder_decoder, {0, 0, 9});
  const auto [ss_p, ss_m] = meta_stack(StructureKind::single_scale, {9, 0, 0});
  const double p_ratio = double(led_p) / double(ed_p);
  const double mac_dev = std::abs(double(led_m) - double(ed_m)) / double(ed_m);
  const double ss_ratio = double(ss_m) / double(ed_m);
  const double t = sw.seconds();
  const bool c1 = p_ratio <= 0.5, c2 = mac_dev <= 0.02, c3 = ss_ratio >= 14 && ss_ratio <= 18, c4 = ss_p == ed_p;
  auto mark = [](bool b) { return b ? "ok" : "FAILED"; };
  std::set<std::string> failed;
  for (const auto& [ok, key] : {std::pair{c1, "params"}, {c2, "macs"}, {c3, "single_scale"}, {c4, "ss_params"},
                                {t < 5.0, "runtime"}})
    if (!ok) failed.insert(key);
  return {failed.empty(),
          "params LED/ED " + fmt("%.5f", p_ratio) + " (" + std::to_string(led_p) + "/" + std::to_string(ed_p) +
              ", need <= 0.5) " + mark(c1) + "; |MACs LED-ED|/ED " + fmt("%.4f", mac_dev) + " (<= 0.02) " +
              mark(c2) + "; MACs SS/ED " + fmt("%.3f", ss_ratio) + " (in [14, 18]) " + mark(c3) +
              "; params SS == ED " + mark(c4) + "; " + fmt("%.2f", t) + " s (limit 5 s)",
          failed};
}

// ---------------------------------------------------------------- 5

Outcome gradient_integrity() {
  Stopwatch sw;
  auto probe = probe::ObjectiveProbe::make(5);
  std::mt19937_64 rng(6);
  auto loss = [&] { return probe.loss(); };
  const auto res = testutil::grad_check(loss, probe::generator_vars(probe.models), 50, rng, 1e-4, 1e-6);
  const double t = sw.seconds();
  return {res.checked == 50 && res.max_rel_error < 1e-3 && t < 60.0,
          "max relative error " + fmt("%.3g", res.max_rel_error) + " over " + std::to_string(res.checked) +
              " parameters (tol 1e-3, " + std::to_string(res.straddled) + " kink-straddling samples replaced), " +
              fmt("%.2f", t) + " s (limit 60 s)"};
}

// ---------------------------------------------------------------- 6, 7, 9

struct DeskRun {
  std::string log, val_log;
  double seconds = 0;
  std::string error;
};

class Desk {
 public:
  explicit Desk(fs::path root) : root_(std::move(root)) {
    if (!fs::exists(root_ / "data" / "manifest.json")) make_desk_dataset(root_ / "data", 40, 64, 7);
    const DeskDatasetLayout lay{root_ / "data"};
    const TrainConfig defaults;
    data_.emplace(load_unpaired(lay.blurred(), lay.sharp(), static_cast<std::size_t>(defaults.crop_size), defaults.seed));
    val_ = ValidationSet::load(lay.root);
  }

  const fs::path& root() const { return root_; }
  const ValidationSet* val() const { return val_ ? &*val_ : nullptr; }

  /// Trains `trainer` to its configured epoch count, checkpointing under `name`.
  DeskRun run(Trainer<float>& trainer, const std::string& name) {
    DeskRun r;
    std::ostringstream log, vlog;
    fs::create_directories(root_ / name);
    Stopwatch sw;
    try {
      trainer.fit(*data_, log, val(), &vlog, root_ / name);
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    r.seconds = sw.seconds();
    r.log = log.str();
    r.val_log = vlog.str();
    std::ofstream(root_ / name / "train.log") << r.log;
    std::ofstream(root_ / name / "val.log") << r.val_log;
    return r;
  }

 private:
  fs::path root_;
  std::optional<UnpairedDataset> data_;
  std::optional<ValidationSet> val_;
};

struct TrainingOutcomes {
  Outcome behavior, resume;
};

TrainingOutcomes training_criteria(Desk& desk) {
  TrainConfig cfg;
  cfg.epochs = 5;
  Trainer<float> ta(cfg);
  const DeskRun a = desk.run(ta, "run_a");
  Trainer<float> tb(cfg);
  const DeskRun b = desk.run(tb, "run_b");

  TrainingOutcomes out;
  if (!a.error.empty() || !b.error.empty()) {
    out.behavior = {false, "training aborted: " + (a.error.empty() ? b.error : a.error).substr(0, 300)};
  } else {
    const auto lines = lines_of(a.log);
    bool finite = true;
    std::vector<double> cc;
    for (const auto& l : lines) {
      for (const char* k : {"adv_g", "adv_d_B", "adv_d_S", "cc", "ctst", "tv", "total"})
        finite = finite && std::isfinite(field(l, k));
      cc.push_back(field(l, "cc"));
    }
    double ratio = NAN;
    if (cc.size() >= 200) {
      const double first = std::accumulate(cc.begin(), cc.begin() + 100, 0.0) / 100;
      const double last = std::accumulate(cc.end() - 100, cc.end(), 0.0) / 100;
      ratio = last / first;
    }
    const bool identical = a.log == b.log && a.val_log == b.val_log &&
                           slurp(desk.root() / "run_a" / "latest.ckpt") == slurp(desk.root() / "run_b" / "latest.ckpt");
    const bool fast = a.seconds < 1200 && b.seconds < 1200;
    std::set<std::string> failed;
    for (const auto& [ok, key] : {std::pair{finite, "finite"}, {ratio < 0.5, "cc_ratio"}, {identical, "determinism"},
                                  {fast, "runtime"}})
      if (!ok) failed.insert(key);
    out.behavior = {failed.empty(),
                    std::to_string(lines.size()) + " steps, losses " + (finite ? "finite" : "NON-FINITE") +
                        "; cycle loss last100/first100 " + fmt("%.3f", ratio) + " (need < 0.5); runs A/B " +
                        (identical ? "byte-identical" : "DIFFER") + "; " + fmt("%.0f", a.seconds) + " s and " +
                        fmt("%.0f", b.seconds) + " s (limit 1200 s each)",
                    failed};
  }

  // Resume from epoch 3 of run A.
  const fs::path ckpt = desk.root() / "run_a" / Trainer<float>::checkpoint_name(3);
  if (!fs::exists(ckpt)) {
    out.resume = {false, "run A left no epoch-3 checkpoint"};
    return out;
  }
  auto tc = Trainer<float>::load(ckpt);
  const DeskRun c = desk.run(tc, "run_c");
  const bool tail = !c.log.empty() && c.log.size() <= a.log.size() &&
                    a.log.compare(a.log.size() - c.log.size(), c.log.size(), c.log) == 0;
  const bool vtail = c.val_log.size() <= a.val_log.size() &&
                     a.val_log.compare(a.val_log.size() - c.val_log.size(), c.val_log.size(), c.val_log) == 0;
  const bool same_ckpt = slurp(desk.root() / "run_c" / "latest.ckpt") == slurp(desk.root() / "run_a" / "latest.ckpt");
  out.resume = {c.error.empty() && tail && vtail && same_ckpt,
                "resumed at epoch 3: " + std::to_string(lines_of(c.log).size()) + " step lines " +
                    (tail ? "identical to" : "DIFFERENT from") + " the uninterrupted run, validation log " +
                    (vtail ? "identical" : "DIFFERENT") + ", final checkpoint " +
                    (same_ckpt ? "byte-identical" : "DIFFERENT")};
  return out;
}

Outcome end_to_end(Desk& desk, int epochs) {
  const fs::path start = desk.root() / "run_a" / "latest.ckpt";
  if (!fs::exists(start)) return {false, "run A left no final checkpoint"};
  // Continuing run A is equivalent to an uninterrupted run of `epochs` epochs.
  auto t = Trainer<float>::load(start);
  t.mutable_config().epochs = epochs;
  const DeskRun r = desk.run(t, "run_long");
  if (!r.error.empty()) return {false, "training aborted: " + r.error.substr(0, 300)};
  if (!desk.val()) return {false, "no validation set"};
  const auto v = validate(t.models().g_b2s, *desk.val());
  const double gain = v.restored.mean().psnr - v.baseline.mean().psnr;
  return {gain >= 0.2, "after " + std::to_string(epochs) + " epochs: restored PSNR " +
                           fmt("%.3f", v.restored.mean().psnr) + " dB vs blurred input " +
                           fmt("%.3f", v.baseline.mean().psnr) + " dB, gain " + fmt("%.3f", gain) +
                           " dB (need >= 0.2); " + fmt("%.0f", r.seconds) + " s"};
}

// ---------------------------------------------------------------- 8

Outcome metric_oracles() {
  std::mt19937_64 rng(808);
  std::uniform_real_distribution<float> u(0, 1);
  Image x(3, 32, 32);
  for (auto& v : x.data) v = u(rng);
  const double ssim_self = ssim(x, x), psnr_self = psnr(x, x);
  const Image a(3, 16, 16, 100.0f / 255.0f), b(3, 16, 16, 101.0f / 255.0f);
  const double p48 = psnr(a, b);

  const auto j = nlohmann::json::parse(slurp(fs::path(FCLGAN_FIXTURE_DIR) / "ssim_reference.json"));
  double worst = 0;
  std::size_t n = 0;
  for (const auto& c : j.at("cases")) {
    const std::size_t h = c.at("height"), w = c.at("width");
    Image p(1, h, w), q(1, h, w);
    const auto pv = c.at("x").get<std::vector<double>>(), qv = c.at("y").get<std::vector<double>>();
    for (std::size_t i = 0; i < h * w; ++i) {
      p.data[i] = static_cast<float>(pv[i]);
      q.data[i] = static_cast<float>(qv[i]);
    }
    worst = std::max(worst, std::abs(ssim(p, q) - c.at("ssim").get<double>()));
    ++n;
  }
  const bool ok = std::abs(ssim_self - 1) <= 1e-3 && std::abs(psnr_self - kPsnrCap) <= 1e-3 &&
                  std::abs(p48 - 48.13) <= 1e-3 && n == 10 && worst <= 1e-4;
  return {ok, "ssim(x,x) " + fmt("%.6f", ssim_self) + ", psnr(x,x) " + fmt("%.3f", psnr_self) +
                  " dB (cap 100), 1-gray-level offset " + fmt("%.4f", p48) + " dB (48.13 +- 1e-3); scikit-image ssim on " +
                  std::to_string(n) + " pairs: max |diff| " + fmt("%.3g", worst) + " (tol 1e-4)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  fs::path work;
  std::vector<int> only;
  std::vector<std::string> unattainable;
  int advisory_epochs = 30;
  app.add_option("--work-dir", work, "scratch directory for the desk dataset and runs")->required();
  app.add_option("--only", only, "run just these criteria")->delimiter(',');
  app.add_option("--known-unattainable", unattainable,
                 "documented unattainable clauses as <criterion>.<clause>, e.g. 4.params")
      ->delimiter(',');
  app.add_option("--advisory-epochs", advisory_epochs, "epochs for the end-to-end check")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  const std::set<int> selected(only.begin(), only.end());
  const std::set<std::string> known(unattainable.begin(), unattainable.end());
  auto wanted = [&](int id) { return selected.empty() || selected.count(id) > 0; };
  fs::create_directories(work);
  for (const char* run : {"run_a", "run_b", "run_c", "run_long"}) fs::remove_all(work / run);

  bool ok = true;
  auto report = [&](int id, const char* name, const Outcome& o, bool advisory = false) {
    const bool excused = !o.pass && !o.failed.empty() &&
                         std::all_of(o.failed.begin(), o.failed.end(), [&](const std::string& c) {
                           return known.count(std::to_string(id) + "." + c) > 0;
                         });
    std::string status = o.pass ? "PASS" : "FAIL";
    if (excused) status = "FAIL (documented as unattainable)";
    if (!o.pass && advisory) status = "FAIL (advisory)";
    std::cout << "criterion " << id << " [" << status << "] " << name << ": " << o.detail << std::endl;
    if (!o.pass && !advisory && !excused) ok = false;
  };
  auto guarded = [](const std::function<Outcome()>& f) -> Outcome {
    try {
      return f();
    } catch (const std::exception& e) {
      return {false, std::string("exception: ") + e.what()};
    }
  };

  if (wanted(1)) report(1, "coverage/similarity oracle equivalence", guarded(coverage_oracles));
  if (wanted(2)) report(2, "contrastive loss analytics", guarded(contrastive_analytics));
  if (wanted(3)) report(3, "blur-coverage monotonicity", guarded(blur_monotonicity));
  if (wanted(4)) report(4, "structural relations at matched meta budget", guarded(structural_relations));
  if (wanted(5)) report(5, "gradient integrity", guarded(gradient_integrity));
  if (wanted(6) || wanted(7) || wanted(9)) {
    std::optional<Desk> desk;
    std::optional<TrainingOutcomes> t;
    try {
      desk.emplace(work);
      t = training_criteria(*desk);
    } catch (const std::exception& e) {
      t = TrainingOutcomes{{false, std::string("exception: ") + e.what()}, {false, std::string("exception: ") + e.what()}};
    }
    if (wanted(6)) report(6, "desk training behavior", t->behavior);
    if (wanted(7))
      report(7, "end-to-end PSNR gain", desk ? guarded([&] { return end_to_end(*desk, advisory_epochs); })
                                             : Outcome{false, "desk setup failed"},
             true);
    if (wanted(8)) report(8, "metric oracles", guarded(metric_oracles));
    if (wanted(9)) report(9, "checkpoint round-trip and resume equivalence", t->resume);
  } else if (wanted(8)) {
    report(8, "metric oracles", guarded(metric_oracles));
  }
  std::cout << (ok ? "acceptance: all required criteria met" : "acceptance: required criteria FAILED") << std::endl;
  return ok ? 0 : 1;
}
