#include "ugdet/config.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ugdet {

using nlohmann::json;

std::pair<DomainConfig, DomainConfig> domain_preset(const std::string& name,
                                                    int grid, int feat_dim,
                                                    int num_classes) {
  DomainConfig src;
  src.grid = grid;
  src.feat_dim = feat_dim;
  src.num_classes = num_classes;
  DomainConfig tgt = src;
  if (name == "weather") {
    tgt.noise_scale = 0.35;
    tgt.blur_radius = 1;
    tgt.blur_weight = 0.4;  // full-strength blur floors detection confidence
  } else if (name == "scale") {
    tgt.box_scale = 2.0;
    tgt.max_extent = src.max_extent;  // extents sampled pre-scale
  } else if (name == "camera") {
    // rotate adjacent channel pairs by a fixed angle
    const double th = 0.5;
    tgt.mixing.assign(static_cast<size_t>(feat_dim) * feat_dim, 0.0);
    for (int i = 0; i < feat_dim; ++i) tgt.mixing[i * feat_dim + i] = 1.0;
    for (int i = 0; i + 1 < feat_dim; i += 2) {
      tgt.mixing[i * feat_dim + i] = std::cos(th);
      tgt.mixing[i * feat_dim + i + 1] = -std::sin(th);
      tgt.mixing[(i + 1) * feat_dim + i] = std::sin(th);
      tgt.mixing[(i + 1) * feat_dim + i + 1] = std::cos(th);
    }
  } else if (name == "synthetic") {
    tgt.prototype_offset = 0.8;
  } else {
    throw std::invalid_argument("data.preset: unknown preset '" + name + "'");
  }
  return {src, tgt};
}

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::invalid_argument(path + ": " + what);
}

void reject_unknown(const json& obj, const std::string& path,
                    std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) fail(path.empty() ? key : path + "." + key, "unknown key");
  }
}

template <typename T>
void get_if(const json& obj, const char* key, T& out, const std::string& path) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(path + "." + key, e.what());
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config parse: ") + e.what());
  }
  if (!j.is_object()) fail("config", "top level must be an object");
  reject_unknown(j, "", {"schema_version", "data", "train", "eval", "output"});
  if (!j.contains("schema_version")) fail("schema_version", "missing");
  if (j["schema_version"].get<int>() != kConfigSchemaVersion) {
    fail("schema_version", "expected " + std::to_string(kConfigSchemaVersion));
  }

  RunConfig cfg;
  int grid = 16, feat_dim = 8, num_classes = 3;

  if (j.contains("data")) {
    const json& d = j["data"];
    reject_unknown(d, "data",
                   {"preset", "grid", "feat_dim", "num_classes", "source_count",
                    "target_count", "test_count", "seed"});
    get_if(d, "preset", cfg.preset, "data");
    get_if(d, "grid", grid, "data");
    get_if(d, "feat_dim", feat_dim, "data");
    get_if(d, "num_classes", num_classes, "data");
    get_if(d, "source_count", cfg.source_count, "data");
    get_if(d, "target_count", cfg.target_count, "data");
    get_if(d, "test_count", cfg.test_count, "data");
    get_if(d, "seed", cfg.data_seed, "data");
    if (grid < 4) fail("data.grid", "must be >= 4");
    if (feat_dim < 2) fail("data.feat_dim", "must be >= 2");
    if (num_classes < 1) fail("data.num_classes", "must be >= 1");
    if (cfg.source_count < 1 || cfg.target_count < 1 || cfg.test_count < 1) {
      fail("data", "scene counts must be >= 1");
    }
  }
  std::tie(cfg.source_domain, cfg.target_domain) =
      domain_preset(cfg.preset, grid, feat_dim, num_classes);
  cfg.train.det.grid = grid;
  cfg.train.det.feat_dim = feat_dim;
  cfg.train.det.num_classes = num_classes;

  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown(t, "train",
                   {"lambda_t", "tau_cls", "tau_bbox", "lambda_efl",
                    "ema_alpha", "lr", "momentum", "clip_norm", "loc_consistency_weight",
                    "anchor_grad_scale", "source_anchor_weight", "consistency_negatives",
                    "pretrain_steps",
                    "mutual_steps", "batch_size", "source_free", "anchor_adapt",
                    "pretrain_strong_aug", "target_mode", "score_threshold",
                    "eval_every", "seed"});
    TrainConfig& tc = cfg.train;
    get_if(t, "lambda_t", tc.lambda_t, "train");
    get_if(t, "tau_cls", tc.tau_cls, "train");
    get_if(t, "tau_bbox", tc.tau_bbox, "train");
    get_if(t, "lambda_efl", tc.lambda_efl, "train");
    get_if(t, "ema_alpha", tc.ema_alpha, "train");
    get_if(t, "lr", tc.lr, "train");
    get_if(t, "momentum", tc.momentum, "train");
    get_if(t, "clip_norm", tc.clip_norm, "train");
    get_if(t, "loc_consistency_weight", tc.loc_consistency_weight, "train");
    get_if(t, "anchor_grad_scale", tc.anchor_grad_scale, "train");
    get_if(t, "source_anchor_weight", tc.source_anchor_weight, "train");
    get_if(t, "consistency_negatives", tc.consistency_negatives, "train");
    get_if(t, "pretrain_steps", tc.pretrain_steps, "train");
    get_if(t, "mutual_steps", tc.mutual_steps, "train");
    get_if(t, "batch_size", tc.batch_size, "train");
    get_if(t, "source_free", tc.source_free, "train");
    get_if(t, "anchor_adapt", tc.anchor_adapt, "train");
    get_if(t, "pretrain_strong_aug", tc.pretrain_strong_aug, "train");
    if (t.contains("target_mode")) {
      const std::string m = t["target_mode"].get<std::string>();
      if (m == "probabilistic") {
        tc.target_mode = TrainConfig::TargetMode::kProbabilistic;
      } else if (m == "threshold") {
        tc.target_mode = TrainConfig::TargetMode::kThreshold;
      } else {
        fail("train.target_mode", "expected 'probabilistic' or 'threshold'");
      }
    }
    get_if(t, "score_threshold", tc.score_threshold, "train");
    get_if(t, "eval_every", tc.eval_every, "train");
    get_if(t, "seed", tc.seed, "train");
  }
  try {
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    fail("train", e.what());
  }

  if (j.contains("eval")) {
    const json& e = j["eval"];
    reject_unknown(e, "eval", {"tau_grid", "threshold_grid"});
    if (e.contains("tau_grid")) {
      cfg.tau_grid.clear();
      for (const json& p : e["tau_grid"]) {
        if (!p.is_array() || p.size() != 2) {
          fail("eval.tau_grid", "entries must be [tau_cls, tau_bbox] pairs");
        }
        cfg.tau_grid.emplace_back(p[0].get<double>(), p[1].get<double>());
      }
    }
    get_if(e, "threshold_grid", cfg.threshold_grid, "eval");
    for (const auto& [tc, tb] : cfg.tau_grid) {
      if (tc <= 0.0 || tc > 1.0 || tb <= 0.0 || tb > 1.0) {
        fail("eval.tau_grid", "temperatures must lie in (0, 1]");
      }
    }
    for (double th : cfg.threshold_grid) {
      if (th < 0.0 || th > 1.0) fail("eval.threshold_grid", "must lie in [0, 1]");
    }
  }

  if (j.contains("output")) {
    const json& o = j["output"];
    reject_unknown(o, "output", {"dir"});
    get_if(o, "dir", cfg.output_dir, "output");
  }
  return cfg;
}

std::string dump_run_config(const RunConfig& cfg) {
  const TrainConfig& tc = cfg.train;
  json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["data"] = {{"preset", cfg.preset},
               {"grid", cfg.source_domain.grid},
               {"feat_dim", cfg.source_domain.feat_dim},
               {"num_classes", cfg.source_domain.num_classes},
               {"source_count", cfg.source_count},
               {"target_count", cfg.target_count},
               {"test_count", cfg.test_count},
               {"seed", cfg.data_seed}};
  j["train"] = {
      {"lambda_t", tc.lambda_t},
      {"tau_cls", tc.tau_cls},
      {"tau_bbox", tc.tau_bbox},
      {"lambda_efl", tc.lambda_efl},
      {"ema_alpha", tc.ema_alpha},
      {"lr", tc.lr},
      {"momentum", tc.momentum},
      {"clip_norm", tc.clip_norm},
      {"loc_consistency_weight", tc.loc_consistency_weight},
      {"anchor_grad_scale", tc.anchor_grad_scale},
      {"source_anchor_weight", tc.source_anchor_weight},
      {"consistency_negatives", tc.consistency_negatives},
      {"pretrain_steps", tc.pretrain_steps},
      {"mutual_steps", tc.mutual_steps},
      {"batch_size", tc.batch_size},
      {"source_free", tc.source_free},
      {"anchor_adapt", tc.anchor_adapt},
      {"pretrain_strong_aug", tc.pretrain_strong_aug},
      {"target_mode", tc.target_mode == TrainConfig::TargetMode::kProbabilistic
                          ? "probabilistic"
                          : "threshold"},
      {"score_threshold", tc.score_threshold},
      {"eval_every", tc.eval_every},
      {"seed", tc.seed}};
  json grid = json::array();
  for (const auto& [a, b] : cfg.tau_grid) grid.push_back({a, b});
  j["eval"] = {{"tau_grid", grid}, {"threshold_grid", cfg.threshold_grid}};
  j["output"] = {{"dir", cfg.output_dir}};
  return j.dump(2);
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("config: cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

std::string config_hash(const std::string& json_text) {
  const std::string canon = json::parse(json_text).dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

void csv_cell(std::ostream& os, double v) {
  if (!std::isnan(v)) os << v;
}

}  // namespace

void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& history) {
  os << "# " << kMetricsSchema << "\n";
  os << "step,src_cls_rpn,src_cls_roi,src_bbox_rpn,src_bbox_roi,"
        "tgt_cls_rpn,tgt_cls_roi,tgt_bbox_rpn,tgt_bbox_roi,loss_total,"
        "pseudo_box_count,mean_cat_entropy,mean_box_entropy,"
        "teacher_map,student_map,anchor_mean_w,anchor_mean_h\n";
  os.precision(12);
  for (const MetricRow& r : history) {
    os << r.step << ',';
    csv_cell(os, r.src_cls_rpn); os << ',';
    csv_cell(os, r.src_cls_roi); os << ',';
    csv_cell(os, r.src_bbox_rpn); os << ',';
    csv_cell(os, r.src_bbox_roi); os << ',';
    csv_cell(os, r.tgt_cls_rpn); os << ',';
    csv_cell(os, r.tgt_cls_roi); os << ',';
    csv_cell(os, r.tgt_bbox_rpn); os << ',';
    csv_cell(os, r.tgt_bbox_roi); os << ',';
    csv_cell(os, r.loss_total); os << ',';
    csv_cell(os, r.pseudo_box_count); os << ',';
    csv_cell(os, r.mean_cat_entropy); os << ',';
    csv_cell(os, r.mean_box_entropy); os << ',';
    csv_cell(os, r.teacher_map); os << ',';
    csv_cell(os, r.student_map); os << ',';
    csv_cell(os, r.anchor_mean_w); os << ',';
    csv_cell(os, r.anchor_mean_h); os << '\n';
  }
}

void write_run_summary(std::ostream& os, const TrainState& state,
                       const std::string& cfg_hash) {
  json j;
  j["schema"] = "ugdet-summary-v1";
  j["config_hash"] = cfg_hash;
  j["steps"] = state.step;
  j["source_only_map"] = state.source_only_map;
  if (!state.history.empty()) {
    const MetricRow& last = state.history.back();
    j["final_teacher_map"] = last.teacher_map;
    j["final_student_map"] = last.student_map;
    j["final_mean_cat_entropy"] = last.mean_cat_entropy;
    j["final_mean_box_entropy"] = last.mean_box_entropy;
    j["final_anchor_mean_w"] = last.anchor_mean_w;
    j["final_anchor_mean_h"] = last.anchor_mean_h;
  }
  os << j.dump(2) << "\n";
}

void write_checkpoint(std::ostream& os, const TrainState& state,
                      const std::string& cfg_hash) {
  json j;
  j["schema"] = kCheckpointSchema;
  j["config_hash"] = cfg_hash;
  j["step"] = state.step;
  j["source_only_map"] = state.source_only_map;
  j["student"] = state.student.flat;
  j["teacher"] = state.teacher.flat;
  os << j.dump() << "\n";
}

TrainState read_checkpoint(std::istream& is, const DetectorConfig& cfg) {
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("checkpoint parse: ") + e.what());
  }
  if (!j.contains("schema") || j["schema"] != kCheckpointSchema) {
    throw std::invalid_argument("checkpoint: bad schema marker");
  }
  TrainState state;
  state.student = DetectorParams::init(cfg, 0);
  state.teacher = DetectorParams::init(cfg, 0);
  const auto stu = j.at("student").get<std::vector<double>>();
  const auto tea = j.at("teacher").get<std::vector<double>>();
  if (stu.size() != state.student.flat.size() ||
      tea.size() != state.teacher.flat.size()) {
    throw std::invalid_argument("checkpoint: parameter size mismatch");
  }
  state.student.flat = stu;
  state.teacher.flat = tea;
  state.step = j.value("step", 0);
  state.source_only_map = j.value("source_only_map", 0.0);
  return state;
}

}  // namespace ugdet
