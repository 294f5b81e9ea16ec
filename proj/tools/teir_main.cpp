// teir: generate benchmarks, train continual runs, evaluate and report.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "teir/config.hpp"
#include "teir/error.hpp"
#include "teir/evaluation.hpp"
#include "teir/grad_check.hpp"
#include "teir/harness.hpp"
#include "teir/report.hpp"
#include "teir/synth_bench.hpp"

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kRuntime = 2, kIo = 3 };

void print_error(const std::string& kind, const std::string& what) {
  std::string flat = what;
  for (char& c : flat) {
    if (c == '\n') c = ' ';
  }
  std::fprintf(stderr, "teir: error[%s]: %s\n", kind.c_str(), flat.c_str());
}

teir::Config load_config(const std::string& path, const std::vector<std::string>& sets) {
  teir::Config cfg = path.empty() ? teir::Config{} : teir::Config::from_file(path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw teir::ConfigError(kv, "--set expects key=value");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  return cfg;
}

// Keeps only the data.* keys (minus data.dir) of a mixed config file.
teir::Config data_keys(const teir::Config& cfg) {
  teir::Config out;
  for (const auto& [k, v] : cfg.entries()) {
    if (k.rfind("data.", 0) == 0 && k != "data.dir") out.set(k, v);
  }
  return out;
}

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::string data;
  std::string run;
  std::string split = "test";
  std::optional<std::uint64_t> seed;
  std::string teir_init;
  std::string teir_reg;
  bool oracle_vocab = false;
  std::string mode;
  double corrupt = 0.0;
};

int cmd_gen_data(const Options& o) {
  teir::Config cfg = data_keys(load_config(o.config, o.sets));
  if (o.seed) cfg.set("data.seed", std::to_string(*o.seed));
  const teir::BenchConfig bench = teir::bench_config_from(cfg);
  const teir::BenchManifest m = teir::gen_benchmark(bench, o.out);
  teir::Config effective;
  teir::store_bench_config(bench, effective);
  effective.write(fs::path(o.out) / "effective_config.txt");
  std::printf("generated %zu images, %zu languages (", m.n_images, m.languages.size());
  for (std::size_t i = 0; i < m.languages.size(); ++i) {
    std::printf("%s%s", i ? "," : "", m.languages[i].c_str());
  }
  std::printf("), train/val/test = %zu/%zu/%zu, overlap %.3g, seed %llu -> %s\n",
              bench.n_train, bench.n_val, bench.n_test, bench.overlap,
              static_cast<unsigned long long>(bench.seed), o.out.c_str());
  return kOk;
}

int cmd_train(const Options& o) {
  teir::Config cfg = load_config(o.config, o.sets);
  if (!o.data.empty()) cfg.set("data.dir", o.data);
  if (o.seed) cfg.set("run.seed", std::to_string(*o.seed));
  if (!o.teir_init.empty()) cfg.set("teir.init", o.teir_init);
  if (!o.teir_reg.empty()) cfg.set("teir.reg", o.teir_reg);
  if (o.oracle_vocab) cfg.set("vocab.oracle", "on");
  if (!o.mode.empty()) cfg.set("run.mode", o.mode);
  if (cfg.get_string("data.dir", "").empty()) {
    throw teir::ConfigError("data.dir", "no dataset; pass --data or set data.dir");
  }
  // data.* generation keys may share the file; the run only needs data.dir.
  teir::Config run_cfg = cfg;
  for (const auto& [k, v] : cfg.entries()) {
    if (k.rfind("data.", 0) == 0 && k != "data.dir") run_cfg.erase(k);
  }
  const teir::RunConfig rc = teir::RunConfig::from_config(run_cfg);
  fs::create_directories(o.out);
  rc.to_config().write(fs::path(o.out) / "effective_config.txt");

  const auto t0 = std::chrono::steady_clock::now();
  const teir::RunArtifacts a = teir::run_sequence(rc);
  teir::write_run_directory(a, rc, o.out);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const std::size_t last = a.eval.task_rows() - 1;
  for (teir::Direction dir : teir::kDirections) {
    std::printf("%s AR_T=%.3f", teir::to_string(dir).c_str(),
                teir::average_recall(a.eval, last, dir));
    if (last >= 1) {
      // Joint runs only fill rows 0 and T-1, where forgetting is undefined.
      try {
        std::printf(" F_T=%.3f", teir::forgetting(a.eval, last, dir));
      } catch (const teir::UndefinedMetric&) {
        std::printf(" F_T=n/a");
      }
    }
    std::printf("\n");
  }
  std::printf("final_mean_loss=%.6g final_fisher=%.6g vocab=%zu time=%.1fs -> %s\n",
              a.final_mean_loss, a.final_fisher, a.vocab.size(), secs, o.out.c_str());
  return kOk;
}

int cmd_eval(const Options& o) {
  const fs::path run(o.run);
  fs::path data = o.data;
  if (data.empty()) {
    const fs::path cfg_path = run / "effective_config.txt";
    if (!fs::exists(cfg_path)) throw teir::IoError("missing " + cfg_path.string());
    data = teir::Config::from_file(cfg_path).get_string("data.dir", "");
  }
  const teir::Split split = teir::split_from_string(o.split);
  const teir::EvalMatrix m = teir::evaluate_run_directory(run, data, split);
  const fs::path out = o.out.empty() ? run / ("eval_" + o.split + ".csv") : fs::path(o.out);
  m.write_csv(out);
  std::printf("wrote %s\n", out.string().c_str());
  if (split == teir::Split::kTest && fs::exists(run / "eval_matrix.csv")) {
    const bool same = teir::EvalMatrix::read_csv(run / "eval_matrix.csv") == m;
    std::printf("matches training-time eval_matrix.csv: %s\n", same ? "yes" : "no");
    if (!same) {
      print_error("consistency", "recomputed matrix differs from eval_matrix.csv");
      return kRuntime;
    }
  }
  return kOk;
}

int cmd_report(const Options& o) {
  teir::write_report(o.run, o.out);
  std::printf("report written to %s\n", o.out.c_str());
  return kOk;
}

int cmd_grad_check(const Options& o) {
  teir::GradCheckConfig gc;
  if (!o.config.empty() || !o.sets.empty()) {
    const teir::Config cfg = load_config(o.config, o.sets);
    gc.loss.tau = cfg.get_double("loss.tau", gc.loss.tau);
    gc.loss.gamma_cm = cfg.get_double("loss.gamma_cm", gc.loss.gamma_cm);
    gc.loss.gamma_cl = cfg.get_double("loss.gamma_cl", gc.loss.gamma_cl);
  }
  if (o.seed) gc.seed = *o.seed;
  gc.corrupt = o.corrupt;
  const auto t0 = std::chrono::steady_clock::now();
  const teir::GradCheckResult r = teir::grad_check(gc);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s time=%.3fs\n", teir::describe(r).c_str(), secs);
  return r.passed ? kOk : kRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"teir: continual vocabulary learning for a frozen dual encoder"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config, "key = value config file");
    sub->add_option("--set", o.sets, "override a config key (key=value), repeatable");
  };
  const std::vector<std::string> on_off = {"on", "off"};

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark");
  add_config(gen);
  gen->add_option("-o,--out", o.out, "output dataset directory")->required();
  gen->add_option("--seed", o.seed, "generator seed (data.seed)");

  auto* train = app.add_subcommand("train", "run a continual (or joint) training sequence");
  add_config(train);
  train->add_option("-d,--data", o.data, "dataset directory (data.dir)");
  train->add_option("-o,--out", o.out, "run output directory")->required();
  train->add_option("--seed", o.seed, "master seed (run.seed)");
  train->add_option("--teir-init", o.teir_init, "distribution-matched init")
      ->check(CLI::IsMember(on_off));
  train->add_option("--teir-reg", o.teir_reg, "per-token lambda regularization")
      ->check(CLI::IsMember(on_off));
  train->add_flag("--oracle-vocab", o.oracle_vocab, "one vocab built from all corpora");
  train->add_option("--mode", o.mode, "continual or joint")
      ->check(CLI::IsMember({"continual", "joint"}));

  auto* eval = app.add_subcommand("eval", "recompute the Recall@1 matrix from checkpoints");
  eval->add_option("-r,--run", o.run, "run directory")->required();
  eval->add_option("-d,--data", o.data, "dataset directory (default: from the run config)");
  eval->add_option("--split", o.split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("-o,--out", o.out, "output csv (default: <run>/eval_<split>.csv)");

  auto* report = app.add_subcommand("report", "tables and plots for a finished run");
  report->add_option("-r,--run", o.run, "run directory")->required();
  report->add_option("-o,--out", o.out, "report directory")->required();

  auto* grad = app.add_subcommand("grad-check", "finite-difference check of the loss gradient");
  add_config(grad);
  grad->add_option("--seed", o.seed, "instance seed");
  grad->add_option("--corrupt", o.corrupt, "test hook: perturb one analytic entry")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o);
    if (train->parsed()) return cmd_train(o);
    if (eval->parsed()) return cmd_eval(o);
    if (report->parsed()) return cmd_report(o);
    if (grad->parsed()) return cmd_grad_check(o);
  } catch (const teir::ConfigError& e) {
    print_error("config", e.what());
    return kUsage;
  } catch (const teir::Error& e) {
    switch (e.category()) {
      case teir::Error::Category::kUsage:
        print_error("usage", e.what());
        return kUsage;
      case teir::Error::Category::kIo:
        print_error("io", e.what());
        return kIo;
      case teir::Error::Category::kRuntime:
        print_error("runtime", e.what());
        return kRuntime;
    }
  } catch (const fs::filesystem_error& e) {
    print_error("io", e.what());
    return kIo;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return kRuntime;
  }
  return kUsage;
}
