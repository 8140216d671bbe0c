#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "fclgan/cli.hpp"
#include "fclgan/fclgan.hpp"

namespace fs = std::filesystem;
using namespace fclgan;

namespace {

/// Usage problems detected after parsing (missing paths and the like).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot write " + p.string());
  os << text;
}

void require_dir(const fs::path& p, const std::string& what) {
  std::error_code ec;
  if (p.empty()) throw UsageError("missing required path: " + what);
  if (!fs::is_directory(p, ec)) throw UsageError(what + " is not a directory: " + p.string());
}

void require_file(const fs::path& p, const std::string& what) {
  std::error_code ec;
  if (p.empty()) throw UsageError("missing required path: " + what);
  if (!fs::is_regular_file(p, ec)) throw UsageError(what + " not found: " + p.string());
}

struct RunLayout {
  fs::path root;
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path logs() const { return root / "logs"; }
  fs::path reports() const { return root / "reports"; }
  fs::path samples() const { return root / "samples"; }
  void create() const {
    for (const auto& d : {checkpoints(), logs(), reports(), samples()}) fs::create_directories(d);
  }
};

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------- make-dataset

struct MakeDatasetArgs {
  fs::path out;
  std::size_t n = 40, size = 64;
  std::uint64_t seed = 7;
};

void add_make_dataset(CLI::App& app, MakeDatasetArgs& a) {
  app.add_option("--out", a.out, "output directory")->required()->type_name("PATH");
  app.add_option("--n", a.n, "number of source images")->capture_default_str();
  app.add_option("--size", a.size, "image side in pixels (>= 32)")->capture_default_str();
  app.add_option("--seed", a.seed, "random seed")->capture_default_str();
}

int run_make_dataset(const MakeDatasetArgs& a) {
  const auto manifest = make_desk_dataset(a.out, a.n, a.size, a.seed);
  const DeskDatasetLayout lay{a.out};
  std::cout << "wrote " << list_pngs(lay.blurred()).size() << " blurred, " << list_pngs(lay.sharp()).size()
            << " sharp, " << list_pngs(lay.val_blurred()).size() << " validation pairs to " << a.out.string()
            << '\n';
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::optional<fs::path> config;
  fs::path resume;
  bool print_config = false;
  std::vector<std::pair<const ConfigField*, CLI::Option*>> fields;
  std::vector<std::string> values = std::vector<std::string>(RunConfig::fields().size());
};

void add_train(CLI::App& app, TrainArgs& a) {
  app.add_option("--config", a.config, "sectioned key = value config file")->type_name("FILE");
  app.add_option("--resume", a.resume, "continue from a checkpoint")->type_name("CKPT");
  app.add_flag("--print-config", a.print_config, "print the resolved config with provenance and exit");
  const RunConfig defaults;
  const auto& fields = RunConfig::fields();
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const auto& f = fields[i];
    auto* opt = app.add_option("--" + f.flag, a.values[i], f.help + " [" + f.qualified() + "]")
                    ->type_name(f.type)
                    ->default_str(f.get(defaults));
    a.fields.emplace_back(&f, opt);
  }
}

RunConfig resolve(const TrainArgs& a) {
  std::vector<std::pair<std::string, std::string>> flags;
  for (std::size_t i = 0; i < a.fields.size(); ++i)
    if (a.fields[i].second->count() > 0) flags.emplace_back(a.fields[i].first->qualified(), a.values[i]);
  return load_config(a.config, flags);
}

int run_train(const TrainArgs& a) {
  const RunConfig cfg = resolve(a);
  if (a.print_config) {
    std::cout << cfg.to_ini();
    return 0;
  }
  require_dir(cfg.data_dir, "paths.data (--data)");
  if (!a.resume.empty()) require_file(a.resume, "checkpoint");
  const RunLayout run{cfg.run_dir};
  run.create();

  std::optional<Trainer<float>> trainer;
  if (a.resume.empty()) {
    trainer.emplace(cfg.train);
  } else {
    trainer.emplace(Trainer<float>::load(a.resume));
    if (cfg.provenance_of("train.epochs") != Provenance::default_value)
      trainer->mutable_config().epochs = cfg.train.epochs;
  }
  const TrainConfig& tc = trainer->config();
  RunConfig effective = cfg;
  effective.train = tc;
  write_text(run.reports() / "config.ini", effective.to_ini());

  const DeskDatasetLayout lay{cfg.data_dir};
  const auto data = load_unpaired(lay.blurred(), lay.sharp(), static_cast<std::size_t>(tc.crop_size), tc.seed);
  const auto val = ValidationSet::load(cfg.data_dir);

  const auto mode = a.resume.empty() ? std::ios::trunc : std::ios::app;
  std::ofstream log(run.logs() / "train.log", std::ios::out | mode);
  std::ofstream val_log(run.logs() / "val.log", std::ios::out | mode);
  if (!log || !val_log) throw IoError("cannot open logs under " + run.logs().string());

  const auto t0 = std::chrono::steady_clock::now();
  try {
    trainer->fit(data, log, val ? &*val : nullptr, &val_log, run.checkpoints(), [&](int epoch) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "epoch " << epoch << "/" << tc.epochs << " steps=" << trainer->steps()
                << " elapsed=" << fixed(s, 1) << "s" << std::endl;
    });
  } catch (const NumericError& e) {
    log.flush();
    const auto dump = run.logs() / "abort.txt";
    write_text(dump, std::string(e.what()) + "\n");
    throw NumericError(first_line(e.what()) + " (tensor statistics in " + dump.string() + ")");
  }
  log.flush();
  val_log.flush();

  if (val) {
    auto& g = trainer->models().g_b2s;
    const ValidationResult r = validate(g, *val);
    write_text(run.reports() / "validation.txt",
               "restored\n" + r.restored.table() + "\nblurred input\n" + r.baseline.table());
    write_text(run.reports() / "validation.json",
               nlohmann::json{{"restored", r.restored.to_json()}, {"baseline", r.baseline.to_json()}}.dump(2) + "\n");
    for (std::size_t i = 0; i < std::min<std::size_t>(4, val->names.size()); ++i)
      write_png(run.samples() / val->names[i], run_generator(g, val->blurred[i]));
  }
  std::cout << "run directory: " << run.root.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- infer

struct InferArgs {
  fs::path checkpoint, input, run_dir = "run";
  std::string direction = "blur2sharp";
  std::uint64_t seed = 0;
};

void add_infer(CLI::App& app, InferArgs& a) {
  app.add_option("--checkpoint", a.checkpoint, "trained checkpoint")->required()->type_name("CKPT");
  app.add_option("--input", a.input, "PNG file or directory of PNGs")->required()->type_name("PATH");
  app.add_option("--direction", a.direction, "blur2sharp or sharp2blur")->capture_default_str();
  app.add_option("--run-dir", a.run_dir, "outputs go to <run-dir>/samples")->capture_default_str();
  app.add_option("--seed", a.seed, "random seed (inference is deterministic)")->capture_default_str();
}

int run_infer(const InferArgs& a) {
  const Direction dir = parse_direction(a.direction);
  require_file(a.checkpoint, "checkpoint");
  std::error_code ec;
  std::vector<fs::path> inputs;
  if (fs::is_directory(a.input, ec))
    inputs = list_pngs(a.input);
  else if (fs::is_regular_file(a.input, ec))
    inputs.push_back(a.input);
  else
    throw UsageError("input not found: " + a.input.string());
  if (inputs.empty()) throw DatasetError("no PNG images in " + a.input.string());
  std::vector<Image> images;
  for (const auto& p : inputs) images.push_back(read_png(p));
  const auto out = infer<float>(a.checkpoint, images, dir);
  const RunLayout run{a.run_dir};
  fs::create_directories(run.samples());
  for (std::size_t i = 0; i < out.size(); ++i) write_png(run.samples() / inputs[i].filename(), out[i]);
  std::cout << "wrote " << out.size() << " images to " << run.samples().string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  fs::path restored, reference, checkpoint, data, run_dir = "run";
  std::uint64_t seed = 0;
};

void add_evaluate(CLI::App& app, EvaluateArgs& a) {
  app.add_option("--restored", a.restored, "directory of restored PNGs")->type_name("DIR");
  app.add_option("--reference", a.reference, "directory of reference PNGs with matching names")->type_name("DIR");
  app.add_option("--checkpoint", a.checkpoint, "evaluate a checkpoint on <data>/val_*")->type_name("CKPT");
  app.add_option("--data", a.data, "dataset root with val_blurred/ and val_sharp/")->type_name("DIR");
  app.add_option("--run-dir", a.run_dir, "reports go to <run-dir>/reports")->capture_default_str();
  app.add_option("--seed", a.seed, "random seed (evaluation is deterministic)")->capture_default_str();
}

int run_evaluate(const EvaluateArgs& a) {
  const RunLayout run{a.run_dir};
  MetricReport restored;
  std::optional<MetricReport> baseline;
  if (!a.checkpoint.empty()) {
    require_file(a.checkpoint, "checkpoint");
    require_dir(a.data, "--data");
    const auto val = ValidationSet::load(a.data);
    if (!val) throw DatasetError("no paired validation images under " + a.data.string());
    const auto out = infer<float>(a.checkpoint, val->blurred, Direction::blur_to_sharp);
    baseline.emplace();
    for (std::size_t i = 0; i < out.size(); ++i) {
      restored.add(val->names[i], out[i], val->sharp[i]);
      baseline->add(val->names[i], val->blurred[i], val->sharp[i]);
    }
  } else {
    require_dir(a.restored, "--restored (or --checkpoint)");
    require_dir(a.reference, "--reference");
    for (const auto& p : list_pngs(a.restored)) {
      const auto ref = a.reference / p.filename();
      if (!fs::exists(ref)) continue;
      restored.add(p.filename().string(), read_png(p), read_png(ref));
    }
    if (restored.count() == 0) throw DatasetError("no restored/reference pairs with matching file names");
  }
  std::string text = restored.table();
  nlohmann::json j = restored.to_json();
  if (baseline) {
    text = "restored\n" + text + "\nblurred input\n" + baseline->table();
    j = {{"restored", j}, {"baseline", baseline->to_json()}};
  }
  std::cout << text;
  write_text(run.reports() / "metrics.txt", text);
  write_text(run.reports() / "metrics.json", j.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------- analyze

struct AnalyzeArgs {
  fs::path input, run_dir;
  std::vector<double> sweep{0, 1, 2, 4};
  std::string mode = "hard";
  int chunk = 8;
  double crop_fraction = 0.5;
  std::size_t size = 128;
  std::uint64_t seed = 0;
  bool self_check = false;
};

void add_analyze(CLI::App& app, AnalyzeArgs& a) {
  app.add_option("--input", a.input, "PNG to analyze (synthesized from --seed when omitted)")->type_name("PNG");
  app.add_option("--blur-sweep", a.sweep, "gaussian sigmas")->delimiter(',')->capture_default_str();
  app.add_option("--mode", a.mode, "hard or soft binarization")->capture_default_str();
  app.add_option("--chunk", a.chunk, "coverage chunk size")->capture_default_str();
  app.add_option("--crop-fraction", a.crop_fraction, "kept central fraction of the spectrum")
      ->capture_default_str();
  app.add_option("--size", a.size, "side of the synthesized image")->capture_default_str();
  app.add_option("--seed", a.seed, "seed for the synthesized image")->capture_default_str();
  app.add_option("--run-dir", a.run_dir, "also write <run-dir>/reports/analyze.json")->type_name("DIR");
  app.add_flag("--self-check", a.self_check, "exit 1 unless mean coverage is non-decreasing along the sweep");
}

int run_analyze(const AnalyzeArgs& a) {
  if (a.mode != "hard" && a.mode != "soft") throw ConfigError("unknown mode '" + a.mode + "' (expected hard or soft)");
  SpectralConfig cfg;
  cfg.chunk = a.chunk;
  cfg.crop_fraction = a.crop_fraction;
  cfg.validate();
  const RepMode mode = a.mode == "hard" ? RepMode::hard : RepMode::soft;
  Image img;
  if (a.input.empty()) {
    std::mt19937_64 rng(a.seed);
    img = generate_sharp_image(a.size, rng);
  } else {
    require_file(a.input, "--input");
    img = read_png(a.input);
  }
  std::cout << "sigma  mean_coverage\n";
  nlohmann::json rows = nlohmann::json::array();
  std::vector<double> cov;
  for (double sigma : a.sweep) {
    if (sigma < 0) throw ConfigError("blur sigma must be non-negative");
    const Image blurred = synth_blur(img, BlurSpec::gaussian(sigma));
    std::vector<float> signed_px(blurred.data.size());
    for (std::size_t i = 0; i < signed_px.size(); ++i) signed_px[i] = 2.0f * blurred.data[i] - 1.0f;
    const auto rep = pfcu_forward(ImageView<float>{blurred.channels, blurred.height, blurred.width, signed_px}, cfg, mode);
    const auto cv = black_coverage(rep, cfg.chunk).values;
    const double mean = std::accumulate(cv.begin(), cv.end(), 0.0) / static_cast<double>(cv.size());
    cov.push_back(mean);
    rows.push_back({{"sigma", sigma}, {"mean_coverage", mean}});
    std::cout << fixed(sigma, 3) << "  " << fixed(mean, 6) << '\n';
  }
  bool monotone = true;
  for (std::size_t i = 1; i < cov.size(); ++i) monotone = monotone && cov[i] >= cov[i - 1];
  std::cout << "monotone_non_decreasing: " << (monotone ? "yes" : "no") << '\n';
  if (!a.run_dir.empty())
    write_text(RunLayout{a.run_dir}.reports() / "analyze.json",
               nlohmann::json{{"mode", a.mode}, {"chunk", a.chunk}, {"rows", rows}, {"monotone_non_decreasing", monotone}}
                       .dump(2) +
                   "\n");
  return a.self_check && !monotone ? 1 : 0;
}

// ---------------------------------------------------------------- summarize

struct SummarizeArgs {
  std::string structure = "led", norm = "batch", form = "e", alloc = "0,6,3";
  int width = 32, kernel = 3, d_width = 64;
  std::size_t size = 256;
  bool discriminator = false, self_check = false;
  fs::path json;
  std::uint64_t seed = 0;
};

void add_summarize(CLI::App& app, SummarizeArgs& a) {
  app.add_option("--structure", a.structure, "led, encoder_decoder or single_scale")->capture_default_str();
  app.add_option("--width", a.width, "generator base width")->capture_default_str();
  app.add_option("--alloc", a.alloc, "residual metas at full, 1/2 and 1/4 resolution")->capture_default_str();
  app.add_option("--norm", a.norm, "batch, instance or none")->capture_default_str();
  app.add_option("--residual-form", a.form, "d, e or f")->capture_default_str();
  app.add_option("--kernel", a.kernel, "residual-meta kernel size")->capture_default_str();
  app.add_option("--size", a.size, "square input side")->capture_default_str();
  app.add_flag("--discriminator", a.discriminator, "summarize the discriminator instead");
  app.add_option("--d-width", a.d_width, "discriminator base width")->capture_default_str();
  app.add_option("--json", a.json, "also write the summary as JSON")->type_name("FILE");
  app.add_flag("--self-check", a.self_check,
               "verify row totals and, for led, that the meta stack is lighter than encoder_decoder at equal meta count");
  app.add_option("--seed", a.seed, "weight-initialization seed (counts do not depend on it)")->capture_default_str();
}

int run_summarize(const SummarizeArgs& a) {
  GeneratorSpec g;
  g.structure = parse_structure(a.structure);
  g.base_width = a.width;
  g.allocation = detail::parse_list<int, 3>("--alloc", a.alloc);
  g.norm = g.residual_norm = parse_norm(a.norm);
  g.residual_form = parse_form(a.form);
  g.kernel = a.kernel;
  g.validate();
  const Shape in{1, 3, a.size, a.size};
  std::mt19937_64 rng(a.seed);

  if (a.discriminator) {
    DiscriminatorSpec d;
    d.base_width = a.d_width;
    d.norm = g.norm;
    auto m = build_discriminator<float>(d, rng);
    const auto rep = model_summary(m, in);
    std::cout << "discriminator width " << a.d_width << '\n' << rep.table();
    if (!a.json.empty()) write_text(a.json, rep.to_json().dump(2) + "\n");
    if (a.self_check && rep.total_params() != m.parameter_count()) {
      std::cout << "self-check: row total != registered parameters: FAIL\n";
      return 1;
    }
    return 0;
  }

  auto m = build_generator<float>(g, rng);
  const auto rep = model_summary(m, in);
  const auto alloc = g.effective_allocation();
  std::cout << "generator " << to_string(g.structure) << " width " << g.base_width << " alloc " << alloc[0] << ','
            << alloc[1] << ',' << alloc[2] << '\n'
            << rep.table();
  const auto [meta_p, meta_m] = rep.subtotal("metas");
  std::cout << "meta stack: params " << meta_p << ", MACs " << meta_m << '\n';
  if (!a.json.empty()) write_text(a.json, rep.to_json().dump(2) + "\n");
  if (!a.self_check) return 0;

  bool ok = rep.total_params() == m.parameter_count();
  std::cout << "self-check: row total " << rep.total_params() << " vs registered " << m.parameter_count() << ": "
            << (ok ? "PASS" : "FAIL") << '\n';
  if (g.structure == StructureKind::led) {
    GeneratorSpec ed = g;
    ed.structure = StructureKind::encoder_decoder;
    ed.allocation = {0, 0, g.meta_count()};
    auto em = build_generator<float>(ed, rng);
    const auto erep = model_summary(em, in);
    const auto ed_meta = erep.subtotal("metas").first;
    const bool lighter = meta_p < ed_meta && rep.total_params() < erep.total_params();
    std::cout << "self-check: led meta stack " << meta_p << " < encoder_decoder (0,0," << g.meta_count() << ") "
              << ed_meta << ", total " << rep.total_params() << " < " << erep.total_params() << ": "
              << (lighter ? "PASS" : "FAIL") << '\n';
    ok = ok && lighter;
  }
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  std::string structure = "led", alloc = "0,6,3";
  int width = 32;
  std::size_t size = 256;
  int reps = 10, warmup = 2;
  fs::path checkpoint;
  std::uint64_t seed = 0;
};

void add_bench(CLI::App& app, BenchArgs& a) {
  app.add_option("--structure", a.structure, "led, encoder_decoder or single_scale")->capture_default_str();
  app.add_option("--width", a.width, "generator base width")->capture_default_str();
  app.add_option("--alloc", a.alloc, "residual metas at full, 1/2 and 1/4 resolution")->capture_default_str();
  app.add_option("--size", a.size, "square input side")->capture_default_str();
  app.add_option("--reps", a.reps, "timed repetitions")->capture_default_str();
  app.add_option("--warmup", a.warmup, "untimed warmup runs")->capture_default_str();
  app.add_option("--checkpoint", a.checkpoint, "time the blur2sharp generator of a checkpoint")->type_name("CKPT");
  app.add_option("--seed", a.seed, "seed for weights and input")->capture_default_str();
}

std::string cpu_model() {
  std::ifstream is("/proc/cpuinfo");
  for (std::string line; std::getline(is, line);)
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) return line.substr(colon + 2);
    }
  return "unknown";
}

int run_bench(const BenchArgs& a) {
  if (a.reps <= 0 || a.warmup < 0) throw ConfigError("--reps must be positive and --warmup non-negative");
  std::mt19937_64 rng(a.seed);
  std::optional<Trainer<float>> trainer;
  std::optional<Model<float>> built;
  Model<float>* g = nullptr;
  std::string desc;
  if (!a.checkpoint.empty()) {
    require_file(a.checkpoint, "checkpoint");
    trainer.emplace(Trainer<float>::load(a.checkpoint));
    g = &trainer->models().g_b2s;
    desc = "checkpoint " + a.checkpoint.string();
  } else {
    GeneratorSpec spec;
    spec.structure = parse_structure(a.structure);
    spec.base_width = a.width;
    spec.allocation = detail::parse_list<int, 3>("--alloc", a.alloc);
    spec.validate();
    built.emplace(build_generator<float>(spec, rng));
    g = &*built;
    desc = to_string(spec.structure) + " width " + std::to_string(a.width) + " alloc " + a.alloc;
  }
  g->set_training(false);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> px(3 * a.size * a.size);
  for (auto& v : px) v = u(rng);
  const auto x = Var<float>::from({1, 3, a.size, a.size}, std::move(px));
  NoGradGuard ng;
  for (int i = 0; i < a.warmup; ++i) g->forward(x);
  std::vector<double> ms;
  for (int i = 0; i < a.reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto y = g->forward(x);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  const double mean = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
  double var = 0;
  for (double v : ms) var += (v - mean) * (v - mean);
  const double sd = ms.size() > 1 ? std::sqrt(var / static_cast<double>(ms.size() - 1)) : 0.0;
  std::cout << "# wall-clock CPU timing of generator inference; not comparable to GPU runtimes\n"
            << "# cpu: " << cpu_model() << '\n'
            << "# logical cpus: " << std::thread::hardware_concurrency() << '\n'
            << "# model: " << desc << ", " << g->parameter_count() << " params\n"
            << "# input: 1x3x" << a.size << 'x' << a.size << ", warmup " << a.warmup << ", reps " << a.reps << '\n'
            << "mean_ms=" << fixed(mean, 3) << " stddev_ms=" << fixed(sd, 3) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fclgan: unpaired blind deblurring with a cycle-consistent GAN and a spectral contrastive term"};
  app.require_subcommand(1);

  MakeDatasetArgs mk;
  TrainArgs tr;
  InferArgs inf;
  EvaluateArgs ev;
  AnalyzeArgs an;
  SummarizeArgs su;
  BenchArgs be;
  auto* c_mk = app.add_subcommand("make-dataset", "synthesize the unpaired desk dataset");
  auto* c_tr = app.add_subcommand("train", "train from a dataset directory");
  auto* c_inf = app.add_subcommand("infer", "apply a trained generator to images");
  auto* c_ev = app.add_subcommand("evaluate", "PSNR / SSIM / cse_proxy report");
  auto* c_an = app.add_subcommand("analyze", "spectral coverage under a gaussian blur sweep");
  auto* c_su = app.add_subcommand("summarize", "per-layer parameter and MAC table");
  auto* c_be = app.add_subcommand("bench", "time generator inference");
  add_make_dataset(*c_mk, mk);
  add_train(*c_tr, tr);
  add_infer(*c_inf, inf);
  add_evaluate(*c_ev, ev);
  add_analyze(*c_an, an);
  add_summarize(*c_su, su);
  add_bench(*c_be, be);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "fclgan: usage error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (c_mk->parsed()) return run_make_dataset(mk);
    if (c_tr->parsed()) return run_train(tr);
    if (c_inf->parsed()) return run_infer(inf);
    if (c_ev->parsed()) return run_evaluate(ev);
    if (c_an->parsed()) return run_analyze(an);
    if (c_su->parsed()) return run_summarize(su);
    if (c_be->parsed()) return run_bench(be);
  } catch (const UsageError& e) {
    std::cerr << "fclgan: usage error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "fclgan: usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "fclgan: error: " << first_line(e.what()) << '\n';
    return 1;
  }
  return 2;
}
