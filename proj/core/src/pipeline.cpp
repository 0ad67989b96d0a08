#include "epde/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "epde/diffusion_maps.hpp"
#include "epde/emergent_coords.hpp"
#include "epde/generators.hpp"
#include "epde/metrics.hpp"
#include "epde/pde_learner.hpp"
#include "epde/questionnaire.hpp"
#include "epde/svg_plot.hpp"
#include "epde/tensor.hpp"

namespace epde {

namespace fs = std::filesystem;
using nlohmann::json;

uint64_t file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("file_hash: cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  std::string bytes = ss.str();
  return fnv1a64(bytes.data(), bytes.size());
}

namespace {

std::string hex64(uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config file " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw UsageError("config parse error in " + path + ": " + e.what());
  }
  return j;
}

struct Ctx {
  json cfg;
  std::string dir;
  PipelineOptions opt;
  uint64_t seed = 0;
  std::string config_path;

  std::string path(const std::string& name) const { return dir + "/" + name; }
  json stage(const std::string& name) const {
    return cfg.contains(name) ? cfg.at(name) : json::object();
  }
  Rng rng() const { return Rng(seed); }
};

bool exists(const std::string& p) { return fs::exists(fs::path(p)); }

void require_inputs(const std::string& stage, const std::vector<std::string>& inputs) {
  std::vector<std::string> missing;
  for (const auto& p : inputs)
    if (!exists(p)) missing.push_back(p);
  if (!missing.empty()) {
    std::string msg = "stage '" + stage + "' is missing inputs:";
    for (const auto& p : missing) msg += " " + p;
    throw UsageError(msg);
  }
}

void write_manifest(const Ctx& ctx, const std::string& stage,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  json m;
  m["stage"] = stage;
  m["seed"] = ctx.seed;
  m["config_hash"] = hex64(fnv1a64(ctx.cfg.dump() + "|" + stage));
  json in = json::object();
  for (const auto& p : inputs) in[fs::path(p).filename().string()] = hex64(file_hash(p));
  m["inputs"] = in;
  json out = json::array();
  for (const auto& p : outputs) out.push_back(fs::path(p).filename().string());
  m["outputs"] = out;
  std::ofstream os(ctx.path(stage + ".manifest.json"));
  if (!os) throw Error("cannot write manifest for stage " + stage);
  os << m.dump(2) << "\n";
}

// Wall time goes to the log, never to the manifest (reruns must be
// byte-identical).
void log_stage(const Ctx& ctx, const std::string& stage, double seconds,
               const std::string& note = "") {
  std::ofstream os(ctx.path(stage + ".log.txt"));
  os << "stage " << stage << " seconds " << seconds << "\n";
  if (!note.empty()) os << note << "\n";
}

std::vector<size_t> default_desk_sources() {
  std::vector<size_t> g;
  for (size_t i = 30; i <= 36; ++i) g.push_back(i);
  for (size_t i = 44; i <= 49; ++i) g.push_back(i);
  return g;
}

std::string organize_mode(const Ctx& ctx) {
  json org = ctx.stage("organize");
  if (org.contains("mode")) return org.at("mode").get<std::string>();
  return ctx.stage("generate").value("kind", "chafee") == "chafee" ? "2d" : "3d";
}

QuestConfig quest_config(const Ctx& ctx) {
  json org = ctx.stage("organize");
  QuestConfig q;
  q.threshold_growth = org.value("threshold_growth", 2.0);
  q.level_weight_decay = org.value("level_weight_decay", 0.70710678118654752440);
  q.max_sweeps = org.value("max_sweeps", 6);
  q.convergence_tol = org.value("convergence_tol", 1e-3);
  q.threads = ctx.opt.threads;
  q.embed_cfg.n_eigs = org.value("n_eigs", 10);
  q.embed_cfg.epsilon = org.value("epsilon", 0.0);
  q.embed_cfg.knn = org.value("knn", 0);
  q.embed_cfg.unique_threshold = org.value("unique_threshold", 0.5);
  return q;
}

const char* axis_file(Axis a) {
  switch (a) {
    case Axis::Param: return "embedding_param";
    case Axis::Time: return "embedding_time";
    default: return "embedding_space";
  }
}

// ---------------------------------------------------------------- generate
void stage_generate(const Ctx& ctx) {
  auto t0 = std::chrono::steady_clock::now();
  json g = ctx.stage("generate");
  std::string kind = g.value("kind", "chafee");
  DataTensor data;
  if (kind == "chafee") {
    ChafeeInfanteConfig cc;
    cc.nu = g.value("nu", 0.16);
    cc.n_x = g.value("n_x", size_t{101});
    cc.t_end = g.value("t_end", 10.0);
    cc.dt = g.value("dt", 0.0);
    cc.u0 = g.value("u0", 0.1);
    cc.n_out_times = g.value("n_out_times", size_t{200});
    data = solve_chafee_infante(cc);
    if (g.contains("space_window")) {
      size_t first = g["space_window"].value("first", size_t{0});
      size_t count = g["space_window"].value("count", data.dims[2] - first);
      data = slice_axis(data, Axis::Space, first, count);
    }
    if (g.contains("time_window")) {
      size_t first = g["time_window"].value("first", size_t{0});
      size_t count = g["time_window"].value("count", data.dims[1] - first);
      data = slice_axis(data, Axis::Time, first, count);
    }
  } else if (kind == "drosophila") {
    ParameterDistribution dist;
    dist.de_mean = g.value("de_mean", dist.de_mean);
    dist.de_sd = g.value("de_sd", dist.de_sd);
    dist.d_mean = g.value("d_mean", dist.d_mean);
    dist.d_sd = g.value("d_sd", dist.d_sd);
    size_t n_samples = g.value("n_samples", size_t{200});
    auto samples = sample_parameters(n_samples, ctx.rng().derive("generate.params"), dist);
    EnsembleConfig ec;
    ec.base.n_cells = g.value("n_cells", size_t{160});
    ec.base.t_end = g.value("t_end", 60.0);
    ec.base.dt = g.value("dt", 0.02);
    ec.base.k = g.value("k", 5e-5);
    ec.base.alpha = g.value("alpha", 0.03);
    if (g.contains("source_cells"))
      ec.base.source_cells = g.at("source_cells").get<std::vector<size_t>>();
    else
      ec.base.source_cells = default_desk_sources();
    ec.n_out_times = g.value("n_out_times", size_t{61});
    ec.first_cell = g.value("observe_first", size_t{0});
    ec.n_channels = g.value("observe_count", size_t{80});
    ec.threads = ctx.opt.threads;
    data = generate_ensemble(samples, ec);
  } else {
    throw UsageError("generate: unknown kind '" + kind + "'");
  }
  save_tensor(data, ctx.path("data.tensor"));
  write_manifest(ctx, "generate", {ctx.config_path},
                 {ctx.path("data.tensor"), ctx.path("data.tensor.meta.json")});
  log_stage(ctx, "generate",
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

// ---------------------------------------------------------------- scramble
void stage_scramble(const Ctx& ctx) {
  auto t0 = std::chrono::steady_clock::now();
  std::string in = ctx.path("data.tensor");
  require_inputs("scramble", {in});
  DataTensor data = load_tensor(in);
  json s = ctx.stage("scramble");
  ScrambleOptions so;
  so.seed = ctx.rng().derive("scramble");
  std::vector<std::string> axes = s.value("axes", std::vector<std::string>{});
  if (axes.empty()) {
    for (size_t a = 0; a < 3; ++a) so.axes[a] = data.dims[a] >= 4;
  } else {
    so.axes = {false, false, false};
    for (const auto& name : axes) {
      if (name == "param")
        so.axes[0] = true;
      else if (name == "time")
        so.axes[1] = true;
      else if (name == "space")
        so.axes[2] = true;
      else
        throw UsageError("scramble: unknown axis '" + name + "'");
    }
  }
  if (s.contains("drop_fraction")) {
    const json& df = s["drop_fraction"];
    so.drop_fraction[0] = df.value("param", 0.0);
    so.drop_fraction[1] = df.value("time", 0.0);
    so.drop_fraction[2] = df.value("space", 0.0);
  }
  ScrambleResult r = scramble(data, so);
  save_tensor(r.tensor, ctx.path("scrambled.tensor"), &r.record);
  write_manifest(ctx, "scramble", {in},
                 {ctx.path("scrambled.tensor"), ctx.path("scrambled.tensor.meta.json")});
  log_stage(ctx, "scramble",
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

// ---------------------------------------------------------------- organize
void save_axis_embedding(const Ctx& ctx, const AxisResult& r, const std::string& base,
                         json& summary, std::vector<std::string>& outputs) {
  json s;
  s["sweeps_change_history"] = r.change_history;
  if (r.embedding) {
    save_embedding(*r.embedding, ctx.path(base + ".csv"), ctx.path(base + ".json"));
    outputs.push_back(ctx.path(base + ".csv"));
    outputs.push_back(ctx.path(base + ".json"));
    s["ok"] = true;
  } else {
    s["ok"] = false;
    s["error"] = r.error;
  }
  if (ctx.opt.dump_intermediate) dump_axis_state(r, ctx.path(base));
  summary[base] = s;
}

void stage_organize(const Ctx& ctx) {
  auto t0 = std::chrono::steady_clock::now();
  std::string in = ctx.path("scrambled.tensor");
  require_inputs("organize", {in});
  DataTensor data = load_tensor(in);
  QuestConfig q = quest_config(ctx);
  std::string mode = organize_mode(ctx);
  json summary;
  std::vector<std::string> outputs;
  if (mode == "2d") {
    if (data.dims[0] != 1)
      throw UsageError("organize: 2d mode expects a single-parameter tensor");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(data.dims[1]),
                      static_cast<Eigen::Index>(data.dims[2]));
    for (size_t t = 0; t < data.dims[1]; ++t)
      for (size_t s = 0; s < data.dims[2]; ++s)
        m(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(s)) = data.at(0, t, s);
    Organize2dResult r = organize_2d(m, q);
    summary["sweeps"] = r.sweeps;
    save_axis_embedding(ctx, r.rows, "embedding_time", summary, outputs);
    save_axis_embedding(ctx, r.cols, "embedding_space", summary, outputs);
  } else if (mode == "3d") {
    Organize3dResult r = organize_3d(data, q);
    summary["sweeps"] = r.sweeps;
    for (size_t a = 0; a < 3; ++a)
      save_axis_embedding(ctx, r.axes[a], axis_file(static_cast<Axis>(a)), summary, outputs);
  } else {
    throw UsageError("organize: unknown mode '" + mode + "'");
  }
  {
    std::ofstream os(ctx.path("organize.summary.json"));
    os << summary.dump(2) << "\n";
    outputs.push_back(ctx.path("organize.summary.json"));
  }
  write_manifest(ctx, "organize", {in}, outputs);
  log_stage(ctx, "organize",
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

// ---------------------------------------------------------------- coords
EmergentCoordinate load_coord(const std::string& path) {
  json j = load_json_file(path);
  EmergentCoordinate c;
  c.values = j.at("values").get<std::vector<double>>();
  c.orientation_anchor = j.at("anchor").get<size_t>();
  c.source_coord_count = j.value("source_coord_count", 0);
  return c;
}

void save_coord(const EmergentCoordinate& c, const std::string& path) {
  json j;
  j["values"] = c.values;
  j["anchor"] = c.orientation_anchor;
  j["source_coord_count"] = c.source_coord_count;
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path);
  os << j.dump(2) << "\n";
}

EmergentCoordinate coord_from_embedding(const Embedding& e, int anchor_cfg, bool use_all) {
  Eigen::MatrixXd pts = use_all ? e.coords : e.unique_coords();
  if (pts.cols() == 0) pts = e.coords;
  std::optional<size_t> anchor;
  if (anchor_cfg >= 0) anchor = static_cast<size_t>(anchor_cfg);
  return extract_arclength(pts, anchor);
}

void stage_coords(const Ctx& ctx) {
  auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> inputs = {ctx.path("scrambled.tensor"),
                                     ctx.path("embedding_time.csv"),
                                     ctx.path("embedding_time.json"),
                                     ctx.path("embedding_space.csv"),
                                     ctx.path("embedding_space.json")};
  require_inputs("coords", inputs);
  json c = ctx.stage("coords");
  DataTensor data = load_tensor(ctx.path("scrambled.tensor"));
  Embedding e_time = load_embedding(ctx.path("embedding_time.csv"), ctx.path("embedding_time.json"));
  Embedding e_space =
      load_embedding(ctx.path("embedding_space.csv"), ctx.path("embedding_space.json"));
  bool use_all = c.value("use_all_coords", false);
  EmergentCoordinate ct = coord_from_embedding(e_time, c.value("anchor_time", -1), use_all);
  EmergentCoordinate cs = coord_from_embedding(e_space, c.value("anchor_space", -1), use_all);
  save_coord(ct, ctx.path("coord_time.json"));
  save_coord(cs, ctx.path("coord_space.json"));

  size_t pi = c.value("param_index", size_t{0});
  if (pi >= data.dims[0]) throw UsageError("coords: param_index out of range");
  Eigen::MatrixXd field(static_cast<Eigen::Index>(data.dims[2]),
                        static_cast<Eigen::Index>(data.dims[1]));
  for (size_t s = 0; s < data.dims[2]; ++s)
    for (size_t t = 0; t < data.dims[1]; ++t)
      field(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) = data.at(pi, t, s);
  size_t n_psi = c.value("n_psi", size_t{128});
  size_t n_phi = c.value("n_phi", size_t{1500});
  EmergentChart chart = resample(field, cs.values, ct.values, n_psi, n_phi);
  detect_source_corridor(chart, c.value("source_threshold", 0.9));
  save_chart(chart, ctx.path("chart.tensor"));

  write_manifest(ctx, "coords", inputs,
                 {ctx.path("coord_time.json"), ctx.path("coord_space.json"),
                  ctx.path("chart.tensor"), ctx.path("chart.tensor.meta.json")});
  log_stage(ctx, "coords",
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

// ---------------------------------------------------------------- learn
TrainConfig train_config(const Ctx& ctx, const json& l, uint64_t seed) {
  TrainConfig tc;
  tc.lr0 = l.value("lr0", 0.005);
  tc.plateau_patience = l.value("plateau_patience", 75);
  tc.epochs = l.value("epochs", 1500);
  tc.batch = l.value("batch", 128);
  tc.validation_snapshots = l.value("validation_snapshots", 10);
  tc.standardize = l.value("standardize", true);
  tc.time_stride = l.value("time_stride", 1);
  tc.seed = seed;
  return tc;
}

void stage_learn(const Ctx& ctx) {
  auto t0 = std::chrono::steady_clock::now();
  std::string in = ctx.path("chart.tensor");
  require_inputs("learn", {in});
  json l = ctx.stage("learn");
  EmergentChart chart = load_chart(in);
  FeatureSet f = fd_features(chart);
  TrainResult rhs = train_rhs(f, train_config(ctx, l, ctx.rng().derive("learn.f")));
  save_model(rhs.model, ctx.path("model_f.bin"));
  save_history_csv(rhs, ctx.path("loss_f.csv"));
  std::vector<std::string> outputs = {ctx.path("model_f.bin"), ctx.path("loss_f.csv")};
  if (l.value("train_source", true) && chart.source_hi >= chart.source_lo) {
    TrainConfig gc = train_config(ctx, l, ctx.rng().derive("learn.g"));
    if (l.contains("source_epochs")) gc.epochs = l["source_epochs"].get<int>();
    SourceTrainResult src = train_source(rhs.model, chart, gc);
    save_model(src.model.net, ctx.path("model_g.bin"));
    json gj;
    gj["psi_lo"] = src.model.psi_lo;
    gj["psi_hi"] = src.model.psi_hi;
    std::ofstream os(ctx.path("model_g.json"));
    os << gj.dump(2) << "\n";
    TrainResult hist;
    hist.loss_history = src.loss_history;
    save_history_csv(hist, ctx.path("loss_g.csv"));
    outputs.insert(outputs.end(),
                   {ctx.path("model_g.bin"), ctx.path("model_g.json"), ctx.path("loss_g.csv")});
  }
  write_manifest(ctx, "learn", {in}, outputs);
  log_stage(ctx, "learn",
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

// ---------------------------------------------------------------- integrate
void stage_integrate(const Ctx& ctx) {
  auto t0 = std::chrono::steady_clock::now();
  json ij = ctx.stage("integrate");
  std::vector<std::string> inputs = {ctx.path("chart.tensor"), ctx.path("model_f.bin")};
  bool use_source = ij.value("use_source", true) && exists(ctx.path("model_g.bin"));
  if (use_source) {
    inputs.push_back(ctx.path("model_g.bin"));
    inputs.push_back(ctx.path("model_g.json"));
  }
  require_inputs("integrate", inputs);
  EmergentChart chart = load_chart(ctx.path("chart.tensor"));
  MlpModel f = load_model(ctx.path("model_f.bin"));
  SourceModel g;
  if (use_source) {
    g.net = load_model(ctx.path("model_g.bin"));
    json gj = load_json_file(ctx.path("model_g.json"));
    g.psi_lo = gj.at("psi_lo").get<double>();
    g.psi_hi = gj.at("psi_hi").get<double>();
  }
  IntegrateOptions opt;
  opt.substeps = ij.value("substeps", 4);
  opt.rk4 = ij.value("rk4", true);
  opt.svd_energy = ij.value("svd_energy", 0.999);
  Eigen::MatrixXd pred =
      integrate(f, chart, chart.field.col(0), use_source ? &g : nullptr, opt);
  EmergentChart out = chart;
  out.field = pred;
  save_chart(out, ctx.path("predicted.tensor"));
  double rel = relative_l2(pred, chart.field);
  write_manifest(ctx, "integrate", inputs,
                 {ctx.path("predicted.tensor"), ctx.path("predicted.tensor.meta.json")});
  log_stage(ctx, "integrate",
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
            "relative_l2_vs_chart " + std::to_string(rel));
}

// ---------------------------------------------------------------- eval
void stage_eval(const Ctx& ctx) {
  auto t0 = std::chrono::steady_clock::now();
  require_inputs("eval", {ctx.path("scrambled.tensor")});
  DataTensor data = load_tensor(ctx.path("scrambled.tensor"));
  EvalReport rep;
  json metrics;

  auto coord_metric = [&](Axis axis, const std::string& coord_file, const std::string& meta_col,
                          const std::string& metric_name) {
    if (!exists(ctx.path(coord_file))) return;
    const AxisMeta& meta = data.axis_meta[static_cast<size_t>(axis)];
    auto it = meta.find(meta_col);
    if (it == meta.end()) return;  // ground truth absent
    EmergentCoordinate c = load_coord(ctx.path(coord_file));
    if (c.values.size() != it->second.size()) return;
    metrics[metric_name] = spearman(c.values, it->second);
  };
  coord_metric(Axis::Time, "coord_time.json", "t", "spearman_time");
  coord_metric(Axis::Space, "coord_space.json", "arclength", "spearman_space");

  if (exists(ctx.path("embedding_param.csv"))) {
    Embedding ep =
        load_embedding(ctx.path("embedding_param.csv"), ctx.path("embedding_param.json"));
    size_t window = std::min<size_t>(5, ep.unique_flags.size());
    int unique_count = 0;
    std::vector<Eigen::Index> unique_cols;
    for (size_t k = 0; k < window; ++k)
      if (ep.unique_flags[k]) {
        ++unique_count;
        unique_cols.push_back(static_cast<Eigen::Index>(k));
      }
    metrics["param_unique_count"] = unique_count;
    const AxisMeta& pmeta = data.axis_meta[static_cast<size_t>(Axis::Param)];
    if (unique_cols.size() >= 2 && pmeta.count("D_e") && pmeta.count("d")) {
      Eigen::MatrixXd P(ep.coords.rows(), 2);
      P.col(0) = ep.coords.col(unique_cols[0]);
      P.col(1) = ep.coords.col(unique_cols[1]);
      auto to_vec = [](const std::vector<double>& v) {
        return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
      };
      metrics["r2_De"] = local_linear_r2(P, to_vec(pmeta.at("D_e")));
      metrics["r2_d"] = local_linear_r2(P, to_vec(pmeta.at("d")));
    }
  }

  if (exists(ctx.path("predicted.tensor")) && exists(ctx.path("chart.tensor"))) {
    EmergentChart pred = load_chart(ctx.path("predicted.tensor"));
    EmergentChart chart = load_chart(ctx.path("chart.tensor"));
    metrics["recon_rel_l2"] = relative_l2(pred.field, chart.field);
  }

  for (auto& [k, v] : metrics.items()) rep.metrics[k] = v.get<double>();
  {
    std::ofstream os(ctx.path("eval.json"));
    os << metrics.dump(2) << "\n";
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rep.runtimes_seconds["eval"] = secs;
  write_manifest(ctx, "eval", {ctx.path("scrambled.tensor")}, {ctx.path("eval.json")});
  log_stage(ctx, "eval", secs);
}

// ---------------------------------------------------------------- plot
Eigen::MatrixXd slab_matrix(const DataTensor& t, size_t p) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(t.dims[1]), static_cast<Eigen::Index>(t.dims[2]));
  for (size_t ti = 0; ti < t.dims[1]; ++ti)
    for (size_t s = 0; s < t.dims[2]; ++s)
      m(static_cast<Eigen::Index>(ti), static_cast<Eigen::Index>(s)) = t.at(p, ti, s);
  return m;
}

void dump_matrix_csv(const Eigen::MatrixXd& m, const std::string& path) {
  std::ofstream os(path);
  os.precision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) os << ",";
      os << m(i, j);
    }
    os << "\n";
  }
}

void stage_plot(const Ctx& ctx) {
  auto t0 = std::chrono::steady_clock::now();
  json p = ctx.stage("plot");
  std::vector<std::string> kinds =
      p.value("kinds", std::vector<std::string>{"spacetime", "embedding", "loss", "report"});
  std::string color_by = ctx.opt.color_by.empty() ? "auto" : ctx.opt.color_by;
  if (p.contains("color_by") && ctx.opt.color_by == "auto") color_by = p["color_by"];
  std::vector<std::string> inputs, outputs;

  for (const std::string& kind : kinds) {
    if (kind == "spacetime") {
      for (const char* name : {"data", "scrambled", "predicted", "chart"}) {
        std::string tp = ctx.path(std::string(name) + ".tensor");
        if (!exists(tp)) continue;
        inputs.push_back(tp);
        DataTensor t = load_tensor(tp);
        Eigen::MatrixXd m = slab_matrix(t, 0);
        std::string out = ctx.path(std::string(name) + ".spacetime.svg");
        write_text_file(out, svg_heatmap(m, std::string(name) + " space-time", "space channel",
                                         "time channel"));
        outputs.push_back(out);
        if (ctx.opt.csv) {
          dump_matrix_csv(m, ctx.path(std::string(name) + ".spacetime.csv"));
          outputs.push_back(ctx.path(std::string(name) + ".spacetime.csv"));
        }
      }
    } else if (kind == "embedding") {
      DataTensor data;
      bool have_data = exists(ctx.path("scrambled.tensor"));
      if (have_data) data = load_tensor(ctx.path("scrambled.tensor"));
      for (size_t a = 0; a < 3; ++a) {
        std::string base = axis_file(static_cast<Axis>(a));
        if (!exists(ctx.path(base + ".csv"))) continue;
        inputs.push_back(ctx.path(base + ".csv"));
        Embedding e = load_embedding(ctx.path(base + ".csv"), ctx.path(base + ".json"));
        std::vector<double> color;
        std::string label;
        if (have_data) {
          const AxisMeta& meta = data.axis_meta[a];
          if (!meta.empty()) {
            auto it = color_by == "auto" ? meta.begin() : meta.find(color_by);
            if (it != meta.end() &&
                it->second.size() == static_cast<size_t>(e.coords.rows())) {
              color = it->second;
              label = "color: " + it->first;
            }
          }
        }
        std::string out = ctx.path(base + ".svg");
        write_text_file(out, svg_scatter(e.coords, color, base, label));
        outputs.push_back(out);
      }
    } else if (kind == "loss") {
      std::vector<std::vector<double>> series;
      std::vector<std::string> labels;
      for (const char* name : {"loss_f", "loss_g"}) {
        std::string fp = ctx.path(std::string(name) + ".csv");
        if (!exists(fp)) continue;
        inputs.push_back(fp);
        std::ifstream is(fp);
        std::string line;
        std::getline(is, line);  // header
        std::vector<double> vals;
        while (std::getline(is, line)) {
          size_t c1 = line.find(',');
          if (c1 == std::string::npos) continue;
          size_t c2 = line.find(',', c1 + 1);
          vals.push_back(std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
        }
        series.push_back(std::move(vals));
        labels.push_back(name);
      }
      if (!series.empty()) {
        std::string out = ctx.path("loss.svg");
        write_text_file(out, svg_curves(series, labels, "training loss"));
        outputs.push_back(out);
      }
    } else if (kind == "report") {
      std::string ep = ctx.path("eval.json");
      if (!exists(ep)) continue;
      inputs.push_back(ep);
      json ev = load_json_file(ep);
      std::vector<std::pair<std::string, std::string>> rows;
      for (auto& [k, v] : ev.items()) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6g", v.get<double>());
        rows.push_back({k, buf});
      }
      std::string out = ctx.path("report.svg");
      write_text_file(out, svg_table(rows, "evaluation report"));
      outputs.push_back(out);
    } else {
      throw UsageError("plot: unknown kind '" + kind + "'");
    }
  }
  write_manifest(ctx, "plot", inputs, outputs);
  log_stage(ctx, "plot",
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

void run_one(const Ctx& ctx, const std::string& stage) {
  if (stage == "generate")
    stage_generate(ctx);
  else if (stage == "scramble")
    stage_scramble(ctx);
  else if (stage == "organize")
    stage_organize(ctx);
  else if (stage == "coords")
    stage_coords(ctx);
  else if (stage == "learn")
    stage_learn(ctx);
  else if (stage == "integrate")
    stage_integrate(ctx);
  else if (stage == "eval")
    stage_eval(ctx);
  else if (stage == "plot")
    stage_plot(ctx);
  else
    throw UsageError("unknown stage '" + stage + "'");
}

}  // namespace

std::vector<std::string> validate_config_file(const std::string& config_path) {
  std::vector<std::string> errors;
  json cfg;
  try {
    cfg = load_json_file(config_path);
  } catch (const std::exception& e) {
    return {e.what()};
  }
  static const std::vector<std::string> known = {"seed",   "generate",  "scramble",
                                                 "organize", "coords",  "learn",
                                                 "integrate", "eval",   "plot"};
  for (auto& [k, v] : cfg.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end())
      errors.push_back("unknown top-level key '" + k + "'");
  }
  if (cfg.contains("seed") && !cfg["seed"].is_number())
    errors.push_back("seed must be a number");
  if (cfg.contains("generate")) {
    std::string kind = cfg["generate"].value("kind", "chafee");
    if (kind != "chafee" && kind != "drosophila")
      errors.push_back("generate.kind must be 'chafee' or 'drosophila'");
  }
  if (cfg.contains("organize")) {
    std::string mode = cfg["organize"].value("mode", "");
    if (!mode.empty() && mode != "2d" && mode != "3d")
      errors.push_back("organize.mode must be '2d' or '3d'");
    if (cfg["organize"].value("threshold_growth", 2.0) <= 1.0)
      errors.push_back("organize.threshold_growth must exceed 1");
    if (cfg["organize"].value("n_eigs", 10) < 1)
      errors.push_back("organize.n_eigs must be >= 1");
  }
  if (cfg.contains("learn")) {
    if (cfg["learn"].value("epochs", 1) < 1) errors.push_back("learn.epochs must be >= 1");
    if (cfg["learn"].value("batch", 1) < 1) errors.push_back("learn.batch must be >= 1");
    if (cfg["learn"].value("lr0", 0.005) <= 0) errors.push_back("learn.lr0 must be positive");
  }
  if (cfg.contains("integrate") && cfg["integrate"].value("substeps", 4) < 1)
    errors.push_back("integrate.substeps must be >= 1");
  if (cfg.contains("scramble") && cfg["scramble"].contains("drop_fraction")) {
    for (auto& [axis, frac] : cfg["scramble"]["drop_fraction"].items()) {
      double fv = frac.get<double>();
      if (fv < 0.0 || fv >= 1.0)
        errors.push_back("scramble.drop_fraction." + axis + " must be in [0,1)");
    }
  }
  return errors;
}

void run_stage(const std::string& stage, const std::string& config_path,
               const std::string& out_dir, const PipelineOptions& opt) {
  auto errors = validate_config_file(config_path);
  if (!errors.empty()) {
    std::string msg = "config validation failed:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw UsageError(msg);
  }
  Ctx ctx;
  ctx.cfg = load_json_file(config_path);
  ctx.dir = out_dir;
  ctx.opt = opt;
  ctx.config_path = config_path;
  ctx.seed = opt.seed_override ? *opt.seed_override : ctx.cfg.value("seed", uint64_t{0});
  fs::create_directories(fs::path(out_dir));

  if (stage == "run-all") {
    std::vector<std::string> order = {"generate", "scramble", "organize", "coords"};
    if (ctx.cfg.contains("learn")) {
      order.push_back("learn");
      order.push_back("integrate");
    }
    order.push_back("eval");
    order.push_back("plot");
    for (const auto& s : order) run_one(ctx, s);
  } else {
    run_one(ctx, stage);
  }
}

}  // namespace epde
