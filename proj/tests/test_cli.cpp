#include <sys/wait.h>

#include <regex>
#include <sstream>

#include "fclgan/cli.hpp"
#include "test_util.hpp"

using namespace fclgan;
using testutil::TempDir;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

Result run_cli(const std::string& args, const TempDir& tmp) {
  const auto out = tmp / "stdout.txt", err = tmp / "stderr.txt";
  const std::string cmd = std::string("'") + FCLGAN_CLI_PATH + "' " + args + " > '" + out.string() + "' 2> '" +
                          err.string() + "'";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = testutil::slurp(out);
  r.err = testutil::slurp(err);
  return r;
}

std::filesystem::path write_file(const TempDir& tmp, const std::string& name, const std::string& text) {
  const auto p = tmp / name;
  std::ofstream(p) << text;
  return p;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

const char* kTinyFlags =
    " --epochs 2 --batch-size 2 --crop-size 16 --repeats 1 --negatives 2 --buffer-capacity 4 --pool-capacity 3"
    " --chunk 2 --width 4 --alloc 0,1,1 --d-width 4";

}  // namespace

TEST(LoadConfig, EmptyFileAndNoFlagsGiveDefaults) {
  TempDir tmp("cfg_empty");
  const auto c = load_config(write_file(tmp, "empty.cfg", ""), {});
  const RunConfig d;
  for (const auto& f : RunConfig::fields()) {
    EXPECT_EQ(c.get(f.qualified()), f.get(d)) << f.qualified();
    EXPECT_EQ(c.provenance_of(f.qualified()), Provenance::default_value) << f.qualified();
  }
  EXPECT_EQ(c.train.lr, 1e-4);
  EXPECT_EQ(c.train.epochs, 80);
}

TEST(LoadConfig, FlagBeatsFileBeatsDefault) {
  TempDir tmp("cfg_prec");
  const auto file = write_file(tmp, "a.cfg", "[train]\nlr = 2e-4\nepochs = 3\n\n[generator]\nstructure = encoder_decoder\n");
  const auto c = load_config(file, {{"train.lr", "1e-4"}});
  EXPECT_EQ(c.train.lr, 1e-4);
  EXPECT_EQ(c.provenance_of("train.lr"), Provenance::flag);
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.provenance_of("train.epochs"), Provenance::file);
  EXPECT_EQ(c.train.generator.structure, StructureKind::encoder_decoder);
  EXPECT_EQ(c.provenance_of("train.beta1"), Provenance::default_value);
  const auto only_file = load_config(file, {});
  EXPECT_EQ(only_file.train.lr, 2e-4);
  EXPECT_EQ(only_file.provenance_of("train.lr"), Provenance::file);
}

TEST(LoadConfig, MisspelledKeyIsNamed) {
  TempDir tmp("cfg_typo");
  const auto file = write_file(tmp, "t.cfg", "[train]\nepocs = 5\n");
  const std::string msg = error_of([&] { load_config(file, {}); });
  EXPECT_NE(msg.find("epocs"), std::string::npos) << msg;
  EXPECT_NE(error_of([&] { load_config(write_file(tmp, "s.cfg", "[trian]\nepochs = 5\n"), {}); }).find("trian.epochs"),
            std::string::npos);
  EXPECT_NE(error_of([&] { load_config(std::nullopt, {{"train.epocs", "1"}}); }).find("epocs"), std::string::npos);
}

TEST(LoadConfig, MalformedInputIsConfigError) {
  TempDir tmp("cfg_bad");
  EXPECT_THROW(load_config(write_file(tmp, "a.cfg", "[train]\nthis line has no equals\n"), {}), ConfigError);
  EXPECT_THROW(load_config(write_file(tmp, "b.cfg", "[train]\nlr = 1e-4\nlr = 2e-4\n"), {}), ConfigError);
  EXPECT_THROW(load_config(write_file(tmp, "c.cfg", "epochs = 3\n"), {}), ConfigError);
  EXPECT_THROW(load_config(tmp / "missing.cfg", {}), ConfigError);
  EXPECT_NE(error_of([&] { load_config(std::nullopt, {{"train.lr", "fast"}}); }).find("train.lr"), std::string::npos);
  EXPECT_THROW(load_config(std::nullopt, {{"train.epochs", "2.5"}}), ConfigError);
  EXPECT_THROW(load_config(std::nullopt, {{"generator.allocation", "1,2"}}), ConfigError);
  EXPECT_THROW(load_config(std::nullopt, {{"generator.norm", "group"}}), ConfigError);
  EXPECT_THROW(load_config(std::nullopt, {{"train.tau", "0"}}), ConfigError);
}

TEST(LoadConfig, SerializesBackToAnEquivalentFile) {
  TempDir tmp("cfg_round");
  const auto c = load_config(std::nullopt, {{"train.lr", "0.00025"},
                                            {"generator.allocation", "1,2,3"},
                                            {"generator.norm", "instance"},
                                            {"spectral.luminance_weights", "0.2,0.7,0.1"},
                                            {"train.seed", "18446744073709551615"},
                                            {"paths.data", "some/where"}});
  const std::string ini = c.to_ini();
  EXPECT_NE(ini.find("; flag\nlr = 0.00025\n"), std::string::npos) << ini;
  EXPECT_NE(ini.find("; default\nepochs = 80"), std::string::npos);
  const auto back = load_config(write_file(tmp, "round.cfg", ini), {});
  for (const auto& f : RunConfig::fields()) {
    EXPECT_EQ(back.get(f.qualified()), c.get(f.qualified())) << f.qualified();
    EXPECT_EQ(back.provenance_of(f.qualified()), Provenance::file);
  }
  EXPECT_EQ(back.train.seed, 18446744073709551615ULL);
  EXPECT_EQ(back.train.spectral.luminance_weights[1], 0.7);
}

TEST(Cli, HelpListsEveryTrainFlagWithItsDefault) {
  TempDir tmp("cli_help");
  const auto r = run_cli("train --help", tmp);
  ASSERT_EQ(r.code, 0) << r.err;
  const RunConfig d;
  std::istringstream is(r.out);
  std::vector<std::string> lines;
  for (std::string l; std::getline(is, l);) lines.push_back(l);
  for (const auto& f : RunConfig::fields()) {
    const std::string value = f.get(d);
    const std::string flag = "--" + f.flag + " ", def = value.empty() ? f.type : "[" + value + "]";
    const bool found = std::any_of(lines.begin(), lines.end(), [&](const std::string& l) {
      return l.find(flag) != std::string::npos && l.find(def) != std::string::npos;
    });
    EXPECT_TRUE(found) << flag << def << " missing from\n" << r.out;
  }
}

TEST(Cli, HelpOfOtherSubcommandsShowsDefaults) {
  TempDir tmp("cli_help2");
  const std::vector<std::pair<std::string, std::vector<std::string>>> expect = {
      {"make-dataset", {"--n UINT [40]", "--size UINT [64]", "--seed UINT [7]"}},
      {"summarize", {"--structure TEXT [led]", "--width INT [32]", "--alloc TEXT [0,6,3]", "--size UINT [256]"}},
      {"analyze", {"--blur-sweep FLOAT [[0,1,2,4]]", "--mode TEXT [hard]", "--chunk INT [8]"}},
      {"bench", {"--reps INT [10]", "--warmup INT [2]", "--size UINT [256]"}},
      {"infer", {"--direction TEXT [blur2sharp]"}},
  };
  for (const auto& [sub, needles] : expect) {
    const auto r = run_cli(sub + " --help", tmp);
    ASSERT_EQ(r.code, 0) << sub;
    for (const auto& n : needles) EXPECT_NE(r.out.find(n), std::string::npos) << sub << ": " << n << "\n" << r.out;
  }
}

TEST(Cli, UsageErrorsExitTwo) {
  TempDir tmp("cli_usage");
  EXPECT_EQ(run_cli("", tmp).code, 2);
  EXPECT_EQ(run_cli("frobnicate", tmp).code, 2);
  EXPECT_EQ(run_cli("summarize --no-such-flag", tmp).code, 2);
  EXPECT_EQ(run_cli("infer --input x.png", tmp).code, 2);
  auto r = run_cli("train --run-dir '" + (tmp / "r").string() + "'", tmp);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("paths.data"), std::string::npos) << r.err;
  r = run_cli("train --data '" + (tmp / "nowhere").string() + "'", tmp);
  EXPECT_EQ(r.code, 2);
  const auto typo = write_file(tmp, "typo.cfg", "[train]\nepocs = 5\n");
  r = run_cli("train --config '" + typo.string() + "'", tmp);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("epocs"), std::string::npos) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
  EXPECT_EQ(run_cli("train --lr -1 --print-config", tmp).code, 2);
  EXPECT_EQ(run_cli("infer --checkpoint '" + (tmp / "none.ckpt").string() + "' --input x.png", tmp).code, 2);
}

TEST(Cli, PrintConfigShowsProvenance) {
  TempDir tmp("cli_print");
  const auto cfg = write_file(tmp, "a.cfg", "[train]\nlr = 2e-4\nepochs = 9\n");
  const auto r = run_cli("train --config '" + cfg.string() + "' --lr 1e-4 --print-config", tmp);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("; flag\nlr = 1e-04\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("; file\nepochs = 9\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("; default\nbeta1 = 0.5\n"), std::string::npos) << r.out;
}

TEST(Cli, SummarizeSelfCheckAndLedLighterThanEncoderDecoder) {
  TempDir tmp("cli_sum");
  const auto led = run_cli("summarize --structure led --width 32 --alloc 0,6,3 --self-check", tmp);
  ASSERT_EQ(led.code, 0) << led.out << led.err;
  EXPECT_NE(led.out.find("PASS"), std::string::npos);
  EXPECT_EQ(led.out.find("FAIL"), std::string::npos);
  const auto ed = run_cli("summarize --structure encoder_decoder --alloc 0,0,9 --self-check", tmp);
  ASSERT_EQ(ed.code, 0) << ed.err;
  const std::regex total(R"(\ntotal\s+(\d+)\s+(\d+)\n)");
  std::smatch ml, me;
  ASSERT_TRUE(std::regex_search(led.out, ml, total)) << led.out;
  ASSERT_TRUE(std::regex_search(ed.out, me, total)) << ed.out;
  EXPECT_LT(std::stoull(ml[1]), std::stoull(me[1]));
  const auto js = run_cli("summarize --discriminator --size 64 --json '" + (tmp / "d.json").string() + "'", tmp);
  ASSERT_EQ(js.code, 0) << js.err;
  EXPECT_GT(nlohmann::json::parse(testutil::slurp(tmp / "d.json")).at("total_params").get<std::size_t>(), 0u);
  EXPECT_EQ(run_cli("summarize --size 30", tmp).code, 1);
}

TEST(Cli, AnalyzeBlurSweepIsMonotone) {
  TempDir tmp("cli_an");
  std::mt19937_64 rng(3);
  write_png(tmp / "img.png", generate_sharp_image(128, rng));
  const auto r = run_cli("analyze --input '" + (tmp / "img.png").string() + "' --blur-sweep 0,1,2,4 --self-check --run-dir '" +
                             (tmp / "run").string() + "'",
                         tmp);
  ASSERT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("monotone_non_decreasing: yes"), std::string::npos) << r.out;
  const auto j = nlohmann::json::parse(testutil::slurp(tmp / "run" / "reports" / "analyze.json"));
  ASSERT_EQ(j.at("rows").size(), 4u);
  for (std::size_t i = 1; i < 4; ++i)
    EXPECT_GE(j["rows"][i]["mean_coverage"].get<double>(), j["rows"][i - 1]["mean_coverage"].get<double>());
  const auto a = run_cli("analyze --seed 5 --size 64", tmp), b = run_cli("analyze --seed 5 --size 64", tmp);
  EXPECT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(run_cli("analyze --mode fuzzy", tmp).code, 2);
}

TEST(Cli, BenchReportsHardwareAndTimings) {
  TempDir tmp("cli_bench");
  const auto r = run_cli("bench --width 4 --alloc 0,1,1 --size 32 --reps 3 --warmup 1", tmp);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("not comparable to GPU"), std::string::npos);
  EXPECT_NE(r.out.find("# cpu: "), std::string::npos);
  EXPECT_TRUE(std::regex_search(r.out, std::regex(R"(mean_ms=[0-9.]+ stddev_ms=[0-9.]+)"))) << r.out;
}

TEST(Cli, EndToEndRunIsDeterministicAndComplete) {
  TempDir tmp("cli_e2e");
  const auto data = tmp / "data";
  auto r = run_cli("make-dataset --out '" + data.string() + "' --n 8 --size 32 --seed 7", tmp);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto cfg = write_file(tmp, "desk.cfg", "[paths]\ndata = " + data.string() + "\n");

  for (const char* run : {"a", "b"}) {
    r = run_cli("train --config '" + cfg.string() + "' --seed 7" + kTinyFlags + " --run-dir '" + (tmp / run).string() +
                    "'",
                tmp);
    ASSERT_EQ(r.code, 0) << r.out << r.err;
  }
  for (const char* sub : {"checkpoints", "logs", "reports", "samples"})
    EXPECT_TRUE(std::filesystem::is_directory(tmp / "a" / sub)) << sub;
  const std::string log_a = testutil::slurp(tmp / "a" / "logs" / "train.log");
  EXPECT_EQ(std::count(log_a.begin(), log_a.end(), '\n'), 4);  // 4 blurred / batch 2 * 2 epochs
  EXPECT_EQ(log_a, testutil::slurp(tmp / "b" / "logs" / "train.log"));
  EXPECT_EQ(testutil::slurp(tmp / "a" / "logs" / "val.log"), testutil::slurp(tmp / "b" / "logs" / "val.log"));
  EXPECT_EQ(testutil::slurp(tmp / "a" / "checkpoints" / "latest.ckpt"),
            testutil::slurp(tmp / "b" / "checkpoints" / "latest.ckpt"));
  EXPECT_FALSE(list_pngs(tmp / "a" / "samples").empty());

  // The written config reproduces the run.
  const auto written = load_config(tmp / "a" / "reports" / "config.ini", {});
  EXPECT_EQ(written.train.seed, 7u);
  EXPECT_EQ(written.train.generator.base_width, 4);
  EXPECT_EQ(written.provenance_of("train.seed"), Provenance::file);
  const std::string ini = testutil::slurp(tmp / "a" / "reports" / "config.ini");
  EXPECT_NE(ini.find("; flag\nseed = 7\n"), std::string::npos) << ini;
  EXPECT_NE(ini.find("; file\ndata = "), std::string::npos) << ini;

  r = run_cli("train --config '" + cfg.string() + "' --seed 8" + kTinyFlags + " --run-dir '" + (tmp / "c").string() + "'",
              tmp);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(log_a, testutil::slurp(tmp / "c" / "logs" / "train.log"));

  // Resume from epoch 1 reproduces the second epoch.
  r = run_cli("train --resume '" + (tmp / "a" / "checkpoints" / "epoch_0001.ckpt").string() + "' --data '" +
                  data.string() + "' --run-dir '" + (tmp / "d").string() + "'",
              tmp);
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string tail = testutil::slurp(tmp / "d" / "logs" / "train.log");
  ASSERT_FALSE(tail.empty());
  EXPECT_EQ(log_a.substr(log_a.size() - tail.size()), tail);

  const auto ckpt = (tmp / "a" / "checkpoints" / "latest.ckpt").string();
  r = run_cli("infer --checkpoint '" + ckpt + "' --input '" + (data / "val_blurred").string() + "' --run-dir '" +
                  (tmp / "inf").string() + "'",
              tmp);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto outs = list_pngs(tmp / "inf" / "samples");
  ASSERT_EQ(outs.size(), list_pngs(data / "val_blurred").size());
  EXPECT_EQ(read_png(outs[0]).height, 32u);

  r = run_cli("evaluate --restored '" + (tmp / "inf" / "samples").string() + "' --reference '" +
                  (data / "val_sharp").string() + "' --run-dir '" + (tmp / "ev").string() + "'",
              tmp);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("cse_proxy"), std::string::npos);
  const auto j = nlohmann::json::parse(testutil::slurp(tmp / "ev" / "reports" / "metrics.json"));
  EXPECT_EQ(j.at("count").get<std::size_t>(), outs.size());

  r = run_cli("evaluate --checkpoint '" + ckpt + "' --data '" + data.string() + "' --run-dir '" + (tmp / "ev2").string() +
                  "'",
              tmp);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j2 = nlohmann::json::parse(testutil::slurp(tmp / "ev2" / "reports" / "metrics.json"));
  EXPECT_NEAR(j2.at("restored").at("mean").at("psnr").get<double>(), j.at("mean").at("psnr").get<double>(), 0.05);
  EXPECT_TRUE(j2.contains("baseline"));

  r = run_cli("bench --checkpoint '" + ckpt + "' --size 32 --reps 2", tmp);
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST(Cli, RuntimeFailuresExitOneWithOneLine) {
  TempDir tmp("cli_fail");
  const auto bogus = write_file(tmp, "bad.ckpt", "not a checkpoint");
  write_png(tmp / "x.png", Image(3, 8, 8, 0.5f));
  const auto r = run_cli("infer --checkpoint '" + bogus.string() + "' --input '" + (tmp / "x.png").string() + "' --run-dir '" +
                             (tmp / "r").string() + "'",
                         tmp);
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
}
