// Command-line front end: dataset generation, training, evaluation and
// the verification suites. Exit codes: 0 ok, 1 check failure, 2 bad
// config, 3 non-finite training state, 4 unwritable output directory.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ugdet/config.hpp"
#include "ugdet/eval.hpp"
#include "ugdet/gradcheck.hpp"
#include "ugdet/probdist.hpp"
#include "ugdet/quadrature.hpp"
#include "ugdet/synthdata.hpp"
#include "ugdet/trainer.hpp"

namespace fs = std::filesystem;
using namespace ugdet;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::string preset;
  std::string checkpoint;
  int64_t seed = -1;
  bool source_free = false;
};

RunConfig effective_config(const CommonOpts& opt) {
  RunConfig cfg = opt.config_path.empty() ? RunConfig{}
                                          : load_run_config(opt.config_path);
  if (!opt.preset.empty()) cfg.preset = opt.preset;
  std::tie(cfg.source_domain, cfg.target_domain) =
      domain_preset(cfg.preset, cfg.source_domain.grid,
                    cfg.source_domain.feat_dim, cfg.source_domain.num_classes);
  if (opt.seed >= 0) cfg.train.seed = static_cast<uint64_t>(opt.seed);
  if (opt.source_free) cfg.train.source_free = true;
  if (!opt.out_dir.empty()) cfg.output_dir = opt.out_dir;
  cfg.train.validate();
  if (opt.config_path.empty() && opt.preset.empty() &&
      cfg.preset.empty()) {
    throw std::invalid_argument("preset: empty");
  }
  return cfg;
}

// exit(4) semantics: the directory must exist (or be creatable) and be
// writable before any long-running work starts.
void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  const fs::path probe = fs::path(dir) / ".write-probe";
  std::ofstream os(probe);
  os << "ok";
  os.close();
  if (!os) {
    std::cerr << "output dir not writable: " << dir << "\n";
    std::exit(4);
  }
  fs::remove(probe, ec);
}

struct Splits {
  std::vector<Scene> source, target_train, target_test;
};

Splits make_splits(const RunConfig& cfg) {
  Splits s;
  s.source = generate_domain(cfg.source_domain, cfg.source_count, cfg.data_seed,
                             DomainTag::kSource);
  s.target_train = generate_domain(cfg.target_domain, cfg.target_count,
                                   cfg.data_seed + 1, DomainTag::kTarget);
  s.target_test = generate_domain(cfg.target_domain, cfg.test_count,
                                  cfg.data_seed + 2, DomainTag::kTarget);
  return s;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
  if (!os) {
    std::cerr << "cannot write " << p << "\n";
    std::exit(4);
  }
}

void emit_run_artifacts(const RunConfig& cfg, const TrainState& state) {
  const std::string cfg_text = dump_run_config(cfg);
  const std::string hash = config_hash(cfg_text);
  const fs::path out(cfg.output_dir);
  write_file(out / "config.json", cfg_text);
  {
    std::ofstream os(out / "metrics.csv");
    write_metrics_csv(os, state.history);
  }
  {
    std::ofstream os(out / "checkpoint.json");
    write_checkpoint(os, state, hash);
  }
  {
    std::ofstream os(out / "summary.json");
    write_run_summary(os, state, hash);
  }
}

int cmd_gen_data(const RunConfig& cfg) {
  ensure_out_dir(cfg.output_dir);
  const Splits s = make_splits(cfg);
  const fs::path out(cfg.output_dir);
  auto dump = [&](const char* name, const std::vector<Scene>& scenes) {
    std::ofstream os(out / name);
    write_dataset(os, scenes);
  };
  dump("source.jsonl", s.source);
  dump("target_train.jsonl", s.target_train);
  dump("target_test.jsonl", s.target_test);
  write_file(out / "config.json", dump_run_config(cfg));
  std::cout << "wrote " << s.source.size() << "+" << s.target_train.size()
            << "+" << s.target_test.size() << " scenes to " << cfg.output_dir
            << "\n";
  return 0;
}

int cmd_pretrain(const RunConfig& cfg) {
  ensure_out_dir(cfg.output_dir);
  const Splits s = make_splits(cfg);
  std::vector<double> losses;
  DetectorParams p = pretrain(cfg.train, s.source, &losses);
  TrainState state;
  state.student = p;
  state.teacher = p;
  EvalReport rep = evaluate(p, s.target_test);
  state.source_only_map = rep.map;

  const std::string cfg_text = dump_run_config(cfg);
  const fs::path out(cfg.output_dir);
  write_file(out / "config.json", cfg_text);
  {
    std::ofstream os(out / "checkpoint.json");
    write_checkpoint(os, state, config_hash(cfg_text));
  }
  {
    std::ofstream os(out / "pretrain_loss.csv");
    os << "step,loss\n";
    for (size_t i = 0; i < losses.size(); ++i) os << i << ',' << losses[i] << '\n';
  }
  std::cout << "pretrained " << cfg.train.pretrain_steps
            << " steps; target-test mAP " << rep.map << "\n";
  return 0;
}

int cmd_adapt(const RunConfig& cfg) {
  ensure_out_dir(cfg.output_dir);
  const Splits s = make_splits(cfg);
  TrainState state;
  try {
    state = adapt(cfg.train, s.source, s.target_train, s.target_test);
  } catch (const std::runtime_error& e) {
    const fs::path dump = fs::path(cfg.output_dir) / "failure_dump.json";
    nlohmann::json j;
    j["error"] = e.what();
    j["config"] = nlohmann::json::parse(dump_run_config(cfg));
    write_file(dump, j.dump(2));
    std::cerr << "training aborted: " << e.what() << "\ndump: " << dump << "\n";
    return 3;
  }
  emit_run_artifacts(cfg, state);
  const MetricRow& last = state.history.back();
  std::cout << "source-only mAP " << state.source_only_map
            << " -> teacher mAP " << last.teacher_map << " (student "
            << last.student_map << ") after " << state.step << " steps\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint) {
  ensure_out_dir(cfg.output_dir);
  TrainState state;
  if (!checkpoint.empty()) {
    std::ifstream is(checkpoint);
    if (!is) {
      std::cerr << "cannot open checkpoint " << checkpoint << "\n";
      return 2;
    }
    state = read_checkpoint(is, cfg.train.det);
  } else {
    std::cerr << "eval requires --checkpoint\n";
    return 2;
  }
  const Splits s = make_splits(cfg);
  const EvalReport rep = evaluate(state.teacher, s.target_test);
  const CalibrationReport cal =
      sigma_iou_calibration(state.teacher, s.target_test);

  nlohmann::json j;
  j["schema"] = "ugdet-eval-v1";
  j["map"] = rep.map;
  for (double ap : rep.per_class_ap) {
    j["per_class_ap"].push_back(std::isnan(ap) ? nlohmann::json()
                                               : nlohmann::json(ap));
  }
  j["tp"] = rep.tp;
  j["fp"] = rep.fp;
  j["fn"] = rep.fn;
  j["size_bin_tp"] = rep.size_bin_tp;
  j["size_bin_fn"] = rep.size_bin_fn;
  j["mean_cat_entropy"] = rep.mean_cat_entropy;
  j["mean_box_entropy"] = rep.mean_box_entropy;
  j["calibration"] = {{"sufficient", cal.sufficient},
                      {"corr_var_iou", cal.corr_var_iou},
                      {"corr_score_iou", cal.corr_score_iou}};
  for (const CalibrationBin& b : cal.by_variance) {
    j["calibration"]["by_variance"].push_back(
        {{"predictor_mean", b.predictor_mean},
         {"iou_mean", b.iou_mean},
         {"count", b.count}});
  }
  for (const CalibrationBin& b : cal.by_score) {
    j["calibration"]["by_score"].push_back(
        {{"predictor_mean", b.predictor_mean},
         {"iou_mean", b.iou_mean},
         {"count", b.count}});
  }
  write_file(fs::path(cfg.output_dir) / "eval.json", j.dump(2));
  std::cout << "mAP " << rep.map << " (tp " << rep.tp << " fp " << rep.fp
            << " fn " << rep.fn << ")\n";
  return 0;
}

int cmd_verify_formulas() {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> um(-3.0, 3.0);
  std::uniform_real_distribution<double> uv(0.05, 0.95);
  const int draws = 200;
  const double tol = 1e-6;
  int passed = 0;

  auto report = [&](const char* name, double worst, bool ok) {
    std::printf("%-28s max_abs_err=%.3e  %s\n", name, worst,
                ok ? "pass" : "FAIL");
    if (ok) ++passed;
  };

  {
    double worst = 0.0;
    for (int i = 0; i < draws; ++i) {
      const double a = um(rng), mu = um(rng), v = uv(rng);
      worst = std::max(worst, std::fabs(ce_dirac_gaussian(a, mu, v) -
                                        quad_ce_dirac_gaussian(a, mu, v)));
    }
    report("point_nll", worst, worst < tol);
  }
  {
    double worst = 0.0;
    for (int i = 0; i < draws; ++i) {
      const double v = uv(rng);
      worst = std::max(worst,
                       std::fabs(gaussian_entropy(v) - quad_gaussian_entropy(v)));
    }
    report("gaussian_entropy", worst, worst < tol);
  }
  {
    double worst = 0.0;
    for (int i = 0; i < draws; ++i) {
      const double m1 = um(rng), v1 = uv(rng), m2 = um(rng), v2 = uv(rng);
      worst = std::max(worst,
                       std::fabs(ce_gaussian_gaussian(m1, v1, m2, v2) -
                                 quad_ce_gaussian_gaussian(m1, v1, m2, v2)));
    }
    report("gaussian_cross_entropy", worst, worst < tol);
  }
  {
    double worst = 0.0;
    for (int n = 1; n <= 8; ++n) {
      const double e = categorical_entropy(CategoricalDist::uniform(n + 1));
      worst = std::max(worst, std::fabs(e - std::log(n + 1.0)));
    }
    report("categorical_max_entropy", worst, worst < 1e-12);
  }
  std::printf("%d/4 formulas pass\n", passed);
  return passed == 4 ? 0 : 1;
}

int cmd_grad_check(uint64_t seed) {
  bool ok = true;
  for (const SuiteResult& r : fd_op_suite(seed, 20)) {
    std::printf("op    %-22s max_rel_err=%.3e  %s\n", r.name.c_str(),
                r.max_rel_err, r.pass ? "pass" : "FAIL");
    ok = ok && r.pass;
  }
  for (const SuiteResult& r : fd_loss_suite(seed + 1, 20)) {
    std::printf("loss  %-22s max_rel_err=%.3e  %s\n", r.name.c_str(),
                r.max_rel_err, r.pass ? "pass" : "FAIL");
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}

int cmd_robustness(const RunConfig& cfg) {
  ensure_out_dir(cfg.output_dir);
  const Splits s = make_splits(cfg);
  const RobustnessResult res =
      robustness_study(cfg.train, cfg.tau_grid, cfg.threshold_grid, s.source,
                       s.target_train, s.target_test);
  nlohmann::json j;
  j["schema"] = "ugdet-robustness-v1";
  j["tau_mean"] = res.tau_mean;
  j["tau_std"] = res.tau_std;
  j["threshold_mean"] = res.threshold_mean;
  j["threshold_std"] = res.threshold_std;
  for (const RobustnessPoint& p : res.tau_points) {
    j["tau_points"].push_back({{"tau_cls", p.tau_cls},
                               {"tau_bbox", p.tau_bbox},
                               {"map", p.map},
                               {"failed", p.failed}});
  }
  for (const RobustnessPoint& p : res.threshold_points) {
    j["threshold_points"].push_back(
        {{"threshold", p.threshold}, {"map", p.map}, {"failed", p.failed}});
  }
  write_file(fs::path(cfg.output_dir) / "robustness.json", j.dump(2));
  std::printf("temperature grid: mean mAP %.4f std %.4f\n", res.tau_mean,
              res.tau_std);
  std::printf("threshold grid:   mean mAP %.4f std %.4f\n", res.threshold_mean,
              res.threshold_std);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uncertainty-guided cross-domain detector adaptation"};
  app.require_subcommand(1);
  CommonOpts opt;

  auto add_common = [&](CLI::App* sub, bool with_checkpoint = false) {
    sub->add_option("--config", opt.config_path, "configuration file");
    sub->add_option("--seed", opt.seed, "override training seed");
    sub->add_option("--out", opt.out_dir, "output directory");
    sub->add_option("--preset", opt.preset, "domain shift preset")
        ->check(CLI::IsMember({"weather", "scale", "camera", "synthetic"}));
    sub->add_flag("--source-free", opt.source_free,
                  "drop source scenes after pretraining");
    if (with_checkpoint) {
      sub->add_option("--checkpoint", opt.checkpoint, "checkpoint file");
    }
  };

  CLI::App* gen = app.add_subcommand("gen-data", "write the dataset splits");
  CLI::App* pre = app.add_subcommand("pretrain", "source-only training");
  CLI::App* ada = app.add_subcommand("adapt", "full adaptation pipeline");
  CLI::App* evl = app.add_subcommand("eval", "evaluate a checkpoint");
  CLI::App* vf = app.add_subcommand("verify-formulas",
                                    "closed forms vs quadrature");
  CLI::App* gc = app.add_subcommand("grad-check", "finite-difference suites");
  CLI::App* rob = app.add_subcommand("robustness",
                                     "temperature vs threshold sweep");
  for (CLI::App* sub : {gen, pre, ada, rob}) add_common(sub);
  add_common(evl, true);
  gc->add_option("--seed", opt.seed, "suite seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (vf->parsed()) return cmd_verify_formulas();
    if (gc->parsed()) {
      return cmd_grad_check(opt.seed >= 0 ? static_cast<uint64_t>(opt.seed) : 5);
    }
    const RunConfig cfg = effective_config(opt);
    if (gen->parsed()) return cmd_gen_data(cfg);
    if (pre->parsed()) return cmd_pretrain(cfg);
    if (ada->parsed()) return cmd_adapt(cfg);
    if (evl->parsed()) return cmd_eval(cfg, opt.checkpoint);
    if (rob->parsed()) return cmd_robustness(cfg);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
