#pragma once

// Subcommand implementations shared by the CLI and the acceptance runner.
// Every command writes into a run directory <root>/<config hash>-s<seed>.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "geco/config.hpp"
#include "geco/experiment.hpp"
#include "geco/oracle.hpp"

namespace geco {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

/// Raised by a check whose numbers were computed fine but missed their bar.
class CheckFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline fs::path run_directory(const LoadedConfig& cfg, const fs::path& root) {
  return root / (config_hash(cfg.run) + "-s" + std::to_string(cfg.seed));
}

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string fmt(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

/// JSON has no NaN; non-finite numbers become null.
inline Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

/// Creates the run directory and stamps it with config, seed and version.
inline fs::path prepare_run_dir(const LoadedConfig& cfg, const fs::path& root) {
  const fs::path dir = run_directory(cfg, root);
  fs::create_directories(dir);
  write_text(dir / "config.resolved", resolved_config(cfg));
  write_text(dir / "seed", std::to_string(cfg.seed) + "\n");
  write_text(dir / "VERSION", std::string(kVersion) + "\n");
  return dir;
}

inline Json trace_json(const InferenceTrace& t) {
  Json r = Json::array();
  for (double v : t.residuals) r.push_back(num(v));
  return Json{{"nfe", t.nfe}, {"updates", t.updates}, {"stop", to_string(t.stop)}, {"residuals", r}};
}

inline Json summary_json(const RolloutSummary& s) {
  Json hist = Json::object();
  for (auto [k, v] : s.nfe_histogram) hist[std::to_string(k)] = v;
  return Json{{"budget", s.budget},
              {"episodes", s.episodes},
              {"plans", s.plans},
              {"success_rate", num(s.success_rate)},
              {"mean_nfe", num(s.mean_nfe)},
              {"median_nfe", num(s.median_nfe)},
              {"converged_fraction", num(s.converged_fraction)},
              {"nfe_histogram", hist}};
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace detail

inline std::string file_digest(const fs::path& path) {
  return hex64(fnv1a64(detail::read_text(path)));
}

inline TrainedModel load_model(const fs::path& checkpoint) {
  return model_from_checkpoint(read_checkpoint_file(checkpoint.string()));
}

/// Checkpoint and config must describe the same chunk layout.
inline void check_model_matches(const TrainedModel& model, const RunConfig& run) {
  if (model.task.chunk_dim() != run.task.chunk_dim())
    throw DimensionError("checkpoint chunk length " + std::to_string(model.task.chunk_dim()) +
                         " does not match the config task (" +
                         std::to_string(run.task.chunk_dim()) + ")");
}

// ---------------------------------------------------------------------------
// train

struct TrainOutcome {
  fs::path run_dir;
  fs::path checkpoint;
  std::string digest;
  TrainingLog log;
};

inline TrainOutcome cmd_train(const LoadedConfig& cfg, const fs::path& root,
                              std::ostream* progress = nullptr) {
  cfg.run.validate();
  TrainOutcome out;
  out.run_dir = detail::prepare_run_dir(cfg, root);
  TrainConfig tc = cfg.run.train;
  tc.seed = cfg.seed;

  std::ostringstream csv;
  csv << "step,loss\n";
  const auto on_log = [&](const LogEntry& e) {
    csv << e.step << ',' << detail::fmt(e.loss) << '\n';
    if (progress && (e.step % (tc.log_every * 20) == 0 || e.step == tc.steps))
      *progress << "step " << e.step << " loss " << e.loss << " (" << std::fixed
                << std::setprecision(1) << e.wall_seconds << "s)" << std::defaultfloat << '\n';
  };
  const TrainedModel model = train_model(cfg.run.task, cfg.run.goals, tc, on_log, &out.log);

  out.checkpoint = out.run_dir / "model.ckpt";
  write_checkpoint_file(out.checkpoint.string(), model.params, model_metadata(model));
  out.digest = file_digest(out.checkpoint);
  detail::write_text(out.run_dir / "train_log.csv", csv.str());
  const Json summary{{"version", kVersion},
                     {"seed", cfg.seed},
                     {"config_hash", config_hash(cfg.run)},
                     {"head", to_string(model.head)},
                     {"steps", tc.steps},
                     {"parameters", model.params.parameter_count()},
                     {"input_dim", model.params.spec.input_dim},
                     {"first_loss", detail::num(out.log.first_loss)},
                     {"final_loss", detail::num(out.log.final_loss)},
                     {"checkpoint_digest", out.digest}};
  detail::write_text(out.run_dir / "train_summary.json", summary.dump(2) + "\n");
  return out;
}

// ---------------------------------------------------------------------------
// rollout

struct RolloutOptions {
  std::vector<int> budgets;  // empty: eval.budgets from the config
  Split split = Split::id;
  int episodes = -1;  // negative: eval episodes for the split from the config
  std::size_t workers = 1;
};

struct RolloutOutcome {
  fs::path run_dir;
  std::vector<RolloutSummary> summaries;
};

/// The budget is K_max for a GeCO checkpoint and n_steps for a rectified-flow one.
inline Policy policy_for(const TrainedModel& model, const RunConfig& run, int budget) {
  if (model.head == Head::geco) {
    InferConfig ic = run.infer;
    ic.k_max = budget;
    return geco_policy(model, ic);
  }
  return rf_policy(model, budget);
}

inline RolloutOutcome cmd_rollout(const LoadedConfig& cfg, const fs::path& checkpoint,
                                  const fs::path& root, RolloutOptions opt) {
  cfg.run.validate();
  if (opt.budgets.empty()) opt.budgets = cfg.run.eval.budgets;
  for (int b : opt.budgets)
    if (b < 1) throw ConfigError("--budget values must be >= 1");
  if (opt.episodes < 0)
    opt.episodes = opt.split == Split::id ? cfg.run.eval.id_episodes : cfg.run.eval.ood_episodes;
  const TrainedModel model = load_model(checkpoint);
  check_model_matches(model, cfg.run);

  RolloutOutcome out;
  out.run_dir = detail::prepare_run_dir(cfg, root);
  const std::string tag = std::string("rollout_") + (opt.split == Split::id ? "id" : "ood");
  const Protocol proto = cfg.run.protocol_for(cfg.run.protocol);

  std::ostringstream csv;
  csv << "head,split,budget,episodes,plans,success_rate,mean_nfe,median_nfe,converged_fraction\n";
  Json rows = Json::array();
  for (int budget : opt.budgets) {
    const Policy policy = policy_for(model, cfg.run, budget);
    const auto eps = run_episodes(policy, cfg.run.task, opt.split, opt.episodes, proto, cfg.seed,
                                  {}, opt.workers);
    const RolloutSummary s = summarize(eps, budget);
    out.summaries.push_back(s);

    std::ostringstream plans, episodes;
    for (std::size_t e = 0; e < eps.size(); ++e) {
      const EpisodeRecord& ep = eps[e];
      for (const PlanRecord& p : ep.plans) {
        Json row{{"episode", e}, {"plan", p.index}, {"env_step", p.env_step},
                 {"score", detail::num(p.score)}};
        row.update(detail::trace_json(p.trace));
        plans << row.dump() << '\n';
      }
      episodes << Json{{"episode", e},
                       {"goal", {ep.goal.x(), ep.goal.y()}},
                       {"final_position", {ep.final_position.x(), ep.final_position.y()}},
                       {"success", ep.success},
                       {"steps_taken", ep.steps_taken},
                       {"plans", ep.plans.size()},
                       {"failure", ep.failure}}
                      .dump()
               << '\n';
    }
    const std::string stem = tag + "_k" + std::to_string(budget);
    detail::write_text(out.run_dir / (stem + "_plans.jsonl"), plans.str());
    detail::write_text(out.run_dir / (stem + "_episodes.jsonl"), episodes.str());

    csv << to_string(model.head) << ',' << to_string(opt.split) << ',' << budget << ','
        << s.episodes << ',' << s.plans << ',' << detail::fmt(s.success_rate) << ','
        << detail::fmt(s.mean_nfe) << ',' << detail::fmt(s.median_nfe) << ','
        << detail::fmt(s.converged_fraction) << '\n';
    rows.push_back(detail::summary_json(s));
  }
  detail::write_text(out.run_dir / (tag + ".csv"), csv.str());
  const Json doc{{"version", kVersion},
                 {"seed", cfg.seed},
                 {"head", to_string(model.head)},
                 {"split", to_string(opt.split)},
                 {"checkpoint_digest", file_digest(checkpoint)},
                 {"summaries", rows}};
  detail::write_text(out.run_dir / (tag + ".json"), doc.dump(2) + "\n");
  return out;
}

// ---------------------------------------------------------------------------
// eval-ood

struct OodOutcome {
  fs::path run_dir;
  std::vector<OodRow> rows;
  RolloutSummary id_summary;
  RolloutSummary ood_summary;
};

inline std::vector<EpisodeRecord> ood_eval_episodes(const TrainedModel& model,
                                                    const RunConfig& run, Split split,
                                                    std::uint64_t seed, std::size_t workers) {
  const int n = split == Split::id ? run.eval.id_episodes : run.eval.ood_episodes;
  const int budget = model.head == Head::geco ? run.eval.ood_k_max : run.eval.rf_steps;
  return run_episodes(policy_for(model, run, budget), run.task, split, n,
                      run.protocol_for(run.protocol), seed, {}, workers);
}

/// GeCO final-norm rows, then FM-loss-proxy rows when a baseline is given.
inline OodOutcome cmd_eval_ood(const LoadedConfig& cfg, const fs::path& geco_checkpoint,
                               const std::optional<fs::path>& baseline_checkpoint,
                               const fs::path& root, std::size_t workers = 1) {
  cfg.run.validate();
  const TrainedModel geco = load_model(geco_checkpoint);
  if (geco.head != Head::geco) throw ConfigError("eval-ood: first checkpoint must be a GeCO model");
  check_model_matches(geco, cfg.run);
  std::optional<TrainedModel> rf;
  if (baseline_checkpoint) {
    rf = load_model(*baseline_checkpoint);
    if (rf->head != Head::rectified_flow)
      throw ConfigError("eval-ood: baseline checkpoint must be a rectified-flow model");
    check_model_matches(*rf, cfg.run);
  }

  OodOutcome out;
  out.run_dir = detail::prepare_run_dir(cfg, root);
  const EvalConfig& ev = cfg.run.eval;
  auto score = [&](const TrainedModel& m, const std::string& method, bool keep_summary) {
    const auto id = ood_eval_episodes(m, cfg.run, Split::id, cfg.seed, workers);
    const auto ood = ood_eval_episodes(m, cfg.run, Split::ood, cfg.seed, workers);
    if (keep_summary) {
      out.id_summary = summarize(id, cfg.run.eval.ood_k_max);
      out.ood_summary = summarize(ood, cfg.run.eval.ood_k_max);
    }
    for (auto& row : score_episode_sets(method, id, ood, cfg.run.filter, ev.plans_per_episode,
                                        ev.target_tpr, cfg.seed))
      out.rows.push_back(std::move(row));
  };
  score(geco, "geco_final_norm", true);
  if (rf) score(*rf, "fm_loss_proxy", false);

  std::ostringstream csv;
  csv << "method,filter,auroc,threshold,tpr,tnr,time_saved,id_plans,ood_plans\n";
  Json rows = Json::array();
  for (const OodRow& r : out.rows) {
    csv << r.method << ',' << to_string(r.filter) << ',' << detail::fmt(r.auroc) << ','
        << detail::fmt(r.op.threshold) << ',' << detail::fmt(r.op.tpr) << ','
        << detail::fmt(r.op.tnr) << ',' << detail::fmt(r.time_saved) << ',' << r.id_plans << ','
        << r.ood_plans << '\n';
    rows.push_back(Json{{"method", r.method},
                        {"filter", to_string(r.filter)},
                        {"auroc", detail::num(r.auroc)},
                        {"threshold", detail::num(r.op.threshold)},
                        {"tpr", detail::num(r.op.tpr)},
                        {"tnr", detail::num(r.op.tnr)},
                        {"time_saved", detail::num(r.time_saved)},
                        {"id_plans", r.id_plans},
                        {"ood_plans", r.ood_plans}});
  }
  detail::write_text(out.run_dir / "ood_metrics.csv", csv.str());
  const Json doc{{"version", kVersion},
                 {"seed", cfg.seed},
                 {"target_tpr", ev.target_tpr},
                 {"k_max", cfg.run.eval.ood_k_max},
                 {"rf_steps", ev.rf_steps},
                 {"geco_checkpoint_digest", file_digest(geco_checkpoint)},
                 {"baseline_checkpoint_digest",
                  baseline_checkpoint ? Json(file_digest(*baseline_checkpoint)) : Json(nullptr)},
                 {"id_rollout", detail::summary_json(out.id_summary)},
                 {"ood_rollout", detail::summary_json(out.ood_summary)},
                 {"rows", rows}};
  detail::write_text(out.run_dir / "ood_metrics.json", doc.dump(2) + "\n");
  return out;
}

// ---------------------------------------------------------------------------
// oracle-check

struct OracleReport {
  int points = 0;
  int evaluated = 0;
  int oracle_undefined = 0;  // quadrature posterior not representable
  int cosine_undefined = 0;  // learned or oracle field has zero norm
  double median_cosine = 0.0;
  double cosine_p10 = 0.0;
  double cosine_p90 = 0.0;
  double median_magnitude_error = 0.0;  // | |f| - |f*| | / |f*|
  double euler_max_error = 0.0;         // analytic point field, N in {1, 5, 20}
};

/// Learned field against the quadrature oracle at points on interpolation
/// lines x = gamma a + (1 - gamma) eps, a drawn from the expert modes of an
/// ID condition.
inline OracleReport oracle_agreement(const TrainedModel& model, const OracleCheckConfig& oc,
                                     std::uint64_t seed, std::size_t workers = 1) {
  if (model.head != Head::geco) throw ConfigError("oracle-check needs a GeCO checkpoint");
  oc.validate();
  OracleReport rep;
  rep.points = oc.points;
  std::vector<double> cosines(static_cast<std::size_t>(oc.points),
                              std::numeric_limits<double>::quiet_NaN());
  std::vector<double> mags = cosines;
  std::vector<int> status(static_cast<std::size_t>(oc.points), 0);
  parallel_for(cosines.size(), workers, [&](std::size_t i) {
    Rng rng(derive_seed(seed, Stream::eval, 0x0C0000 + i));
    const Vector s = sample_condition(Split::id, model.task, rng);
    const auto modes = expert_modes(s, model.task, model.normalizer);
    const Vector& a = modes[rng.uniform_index(modes.size())].mean;
    const double gamma = rng.uniform();
    const Vector x = interpolate(a, rng.normal_vector(a.size()), gamma);
    const auto star = oracle_field(modes, x, model.decay, oc.quad);
    if (!star) {
      status[i] = 1;
      return;
    }
    const Vector f = eval_field(model.params, x, s);
    const double nf = f.norm(), ns = star->norm();
    if (nf == 0.0 || ns == 0.0) {
      status[i] = 2;
      return;
    }
    cosines[i] = f.dot(*star) / (nf * ns);
    mags[i] = std::abs(nf - ns) / ns;
  });
  std::vector<double> cos_ok, mag_ok;
  for (std::size_t i = 0; i < status.size(); ++i) {
    if (status[i] == 1) ++rep.oracle_undefined;
    else if (status[i] == 2) ++rep.cosine_undefined;
    else {
      cos_ok.push_back(cosines[i]);
      mag_ok.push_back(mags[i]);
    }
  }
  rep.evaluated = static_cast<int>(cos_ok.size());
  if (!cos_ok.empty()) {
    rep.median_cosine = detail::median(cos_ok);
    rep.cosine_p10 = detail::quantile(cos_ok, 0.1);
    rep.cosine_p90 = detail::quantile(cos_ok, 0.9);
    rep.median_magnitude_error = detail::median(mag_ok);
  }

  Rng rng(derive_seed(seed, Stream::eval, 0x0C1000));
  const auto dim = model.task.chunk_dim();
  for (int trial = 0; trial < 100; ++trial) {
    const Vector target = rng.normal_vector(dim);
    const Vector start = rng.normal_vector(dim);
    for (int n : {1, 5, 20}) {
      const auto res = euler_integrate(
          [&](const Vector& x, double g) { return analytic_point_field(x, g, target); }, start, n);
      rep.euler_max_error =
          std::max(rep.euler_max_error, (res.chunk - target).cwiseAbs().maxCoeff());
    }
  }
  return rep;
}

inline OracleReport cmd_oracle_check(const LoadedConfig& cfg, const fs::path& checkpoint,
                                     const fs::path& root, std::size_t workers = 1) {
  cfg.run.validate();
  const TrainedModel model = load_model(checkpoint);
  check_model_matches(model, cfg.run);
  const OracleReport rep = oracle_agreement(model, cfg.run.oracle, cfg.seed, workers);
  const fs::path dir = detail::prepare_run_dir(cfg, root);
  const Json doc{{"version", kVersion},
                 {"seed", cfg.seed},
                 {"checkpoint_digest", file_digest(checkpoint)},
                 {"quadrature_nodes", cfg.run.oracle.quad.nodes},
                 {"points", rep.points},
                 {"evaluated", rep.evaluated},
                 {"oracle_undefined", rep.oracle_undefined},
                 {"cosine_undefined", rep.cosine_undefined},
                 {"median_cosine", detail::num(rep.median_cosine)},
                 {"cosine_p10", detail::num(rep.cosine_p10)},
                 {"cosine_p90", detail::num(rep.cosine_p90)},
                 {"median_magnitude_error", detail::num(rep.median_magnitude_error)},
                 {"euler_max_error", detail::num(rep.euler_max_error)}};
  detail::write_text(dir / "oracle_check.json", doc.dump(2) + "\n");
  return rep;
}

// ---------------------------------------------------------------------------
// gradcheck

using GradFn = std::function<FieldParams(const FieldParams&, const Matrix&, const Matrix&)>;

inline FieldParams reverse_mode_grads(const FieldParams& p, const Matrix& in, const Matrix& tgt) {
  return regression_loss_and_grads(p, in, tgt).grads;
}

struct GradcheckReport {
  int nets = 0;
  double max_relative_error = 0.0;
  std::vector<double> per_net;
  bool pass = false;
};

/// Random nets of the given shape, each on a random regression batch, checked
/// against central differences of the loss.
inline GradcheckReport gradcheck(const NetworkSpec& spec, std::uint64_t seed, int nets = 20,
                                 double tolerance = 1e-4, const GradFn& grads = reverse_mode_grads) {
  spec.validate();
  if (nets < 0) throw ConfigError("gradcheck net count must be >= 0");
  GradcheckReport rep;
  rep.nets = nets;
  for (int i = 0; i < nets; ++i) {
    const FieldParams p = init_network(spec, derive_seed(seed, Stream::init, i));
    Rng rng(derive_seed(seed, Stream::data, i));
    Matrix in(4, static_cast<Eigen::Index>(spec.input_dim));
    Matrix tgt(4, static_cast<Eigen::Index>(spec.output_dim));
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
      in.row(r) = rng.normal_vector(in.cols()).transpose();
      tgt.row(r) = rng.normal_vector(tgt.cols()).transpose();
    }
    const FieldParams analytic = grads(p, in, tgt);
    const FieldParams numeric = finite_difference_grad(
        p, [&](const FieldParams& q) { return regression_loss(q, in, tgt); }, 1e-5);
    const double err = max_relative_error(analytic, numeric, 1e-6);
    rep.per_net.push_back(err);
    rep.max_relative_error = std::max(rep.max_relative_error, err);
  }
  rep.pass = rep.max_relative_error < tolerance;
  return rep;
}

// ---------------------------------------------------------------------------
// report

/// One row per rollout summary and per OOD metric row found under root, in
/// run-directory order.
inline std::pair<std::string, std::string> cmd_report(const fs::path& root) {
  if (!fs::is_directory(root)) throw ConfigError("report: no such directory " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / "config.resolved"))
      dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());

  std::ostringstream rollout, ood;
  rollout << "run,head,split,budget,episodes,success_rate,mean_nfe,median_nfe\n";
  ood << "run,method,filter,auroc,tnr,time_saved\n";
  for (const fs::path& dir : dirs) {
    const std::string run = dir.filename().string();
    for (const char* tag : {"rollout_id.json", "rollout_ood.json"}) {
      if (!fs::exists(dir / tag)) continue;
      const Json doc = Json::parse(detail::read_text(dir / tag));
      for (const Json& s : doc.at("summaries"))
        rollout << run << ',' << doc.at("head").get<std::string>() << ','
                << doc.at("split").get<std::string>() << ',' << s.at("budget") << ','
                << s.at("episodes") << ',' << s.at("success_rate") << ',' << s.at("mean_nfe")
                << ',' << s.at("median_nfe") << '\n';
    }
    if (fs::exists(dir / "ood_metrics.json")) {
      const Json doc = Json::parse(detail::read_text(dir / "ood_metrics.json"));
      for (const Json& r : doc.at("rows"))
        ood << run << ',' << r.at("method").get<std::string>() << ','
            << r.at("filter").get<std::string>() << ',' << r.at("auroc") << ',' << r.at("tnr")
            << ',' << r.at("time_saved") << '\n';
    }
  }
  return {rollout.str(), ood.str()};
}

}  // namespace geco
