#include "dxp/cli.hpp"

#include "dxp/agent.hpp"
#include "dxp/config.hpp"
#include "dxp/envs.hpp"
#include "dxp/replay.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace dxp::cli {

namespace fs = std::filesystem;
using nlohmann::json;

bool is_episode_metric(std::string_view metric) { return metric == "episode_return_ext" || metric == "episode"; }

double trapezoid_auc(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("trapezoid_auc: x and y differ in length");
  double area = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) area += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  return area;
}

RunMetrics load_run(const fs::path& dir) {
  RunMetrics run;
  run.run_id = dir.filename().string();
  if (run.run_id.empty()) run.run_id = dir.parent_path().filename().string();

  std::ifstream cfg_in(dir / "config.json");
  if (!cfg_in) throw MetricsError("missing " + (dir / "config.json").string());
  try {
    const config::ExperimentConfig cfg = config::from_json(json::parse(cfg_in));
    run.seed = cfg.loop.seed;
    run.condition = cfg.env + " replay=" + std::string(agent::to_string(cfg.loop.replay_mode)) +
                    " intrinsic=" + std::string(agent::to_string(cfg.loop.intrinsic_mode));
  } catch (const std::exception& e) {
    throw MetricsError("unreadable " + (dir / "config.json").string() + ": " + e.what());
  }

  std::ifstream in(dir / "metrics.jsonl");
  if (!in) throw MetricsError("missing " + (dir / "metrics.jsonl").string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = (dir / "metrics.jsonl").string() + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      throw MetricsError(where + ": not a JSON object");
    }
    if (!j.is_object() || !j.contains("kind") || !j.contains("step")) {
      throw MetricsError(where + ": record lacks kind/step");
    }
    MetricRow row;
    row.kind = j["kind"].get<std::string>();
    row.step = j["step"].get<std::uint64_t>();
    for (const std::string_view f : kMetricFields) {
      auto it = j.find(std::string(f));
      if (it == j.end() || !it->is_number()) throw MetricsError(where + ": missing numeric field '" + std::string(f) + "'");
      row.values.emplace(std::string(f), it->get<double>());
    }
    run.rows.push_back(std::move(row));
  }
  return run;
}

namespace {

std::vector<std::pair<double, double>> series(const RunMetrics& run, std::string_view metric) {
  const char* kind = is_episode_metric(metric) ? "episode" : "train";
  std::vector<std::pair<double, double>> out;
  for (const MetricRow& r : run.rows) {
    if (r.kind == kind) out.emplace_back(static_cast<double>(r.step), r.values.find(metric)->second);
  }
  return out;
}

}  // namespace

std::vector<MetricSummary> summarize(std::span<const RunMetrics> runs) {
  std::vector<std::string> conditions;
  for (const RunMetrics& r : runs) {
    if (std::find(conditions.begin(), conditions.end(), r.condition) == conditions.end()) {
      conditions.push_back(r.condition);
    }
  }
  std::vector<MetricSummary> out;
  for (const std::string& cond : conditions) {
    for (const std::string_view metric : kMetricFields) {
      MetricSummary s;
      s.condition = cond;
      s.metric = std::string(metric);
      double auc_sum = 0.0, final_sum = 0.0;
      for (const RunMetrics& r : runs) {
        if (r.condition != cond) continue;
        const auto pts = series(r, metric);
        if (pts.empty()) continue;
        std::vector<double> x, y;
        for (const auto& [a, b] : pts) {
          x.push_back(a);
          y.push_back(b);
        }
        const double auc = trapezoid_auc(x, y);
        const double fin = y.back();
        if (s.runs == 0) {
          s.auc_min = s.auc_max = auc;
          s.final_min = s.final_max = fin;
        }
        s.auc_min = std::min(s.auc_min, auc);
        s.auc_max = std::max(s.auc_max, auc);
        s.final_min = std::min(s.final_min, fin);
        s.final_max = std::max(s.final_max, fin);
        auc_sum += auc;
        final_sum += fin;
        ++s.runs;
      }
      if (s.runs == 0) continue;
      s.auc_mean = auc_sum / static_cast<double>(s.runs);
      s.final_mean = final_sum / static_cast<double>(s.runs);
      out.push_back(s);
    }
  }
  return out;
}

namespace {

fs::path default_out_root() {
  const char* root = std::getenv("DXP_OUT_ROOT");
  return root && *root ? fs::path(root) : fs::path("runs");
}

std::string cell_name(const config::ExperimentConfig& cfg) {
  return std::string(agent::to_string(cfg.loop.replay_mode)) + "-" +
         std::string(agent::to_string(cfg.loop.intrinsic_mode)) + "-s" + std::to_string(cfg.loop.seed);
}

// Runs one configured experiment into cfg.out_dir.
agent::RunSummary train_into(config::ExperimentConfig cfg) {
  cfg.validate();
  const std::unique_ptr<envs::Environment> env = envs::make_env(cfg.env);
  const fs::path dir = cfg.out_dir;
  fs::create_directories(dir);
  config::save(cfg, dir / "config.json");
  const agent::RunSummary s = agent::run_training(*env, cfg, dir);
  json j = {
      {"env_steps", s.env_steps},
      {"train_steps", s.train_steps},
      {"episodes", s.episodes},
      {"first_reward_step", s.first_reward_step ? json(*s.first_reward_step) : json(nullptr)},
      {"final_lambda", s.final_lambda},
      {"stale_updates", s.stale_updates},
      {"rejected_steps", s.rejected_steps},
  };
  std::ofstream(dir / "summary.json", std::ios::trunc) << j.dump(2) << '\n';
  return s;
}

void write_csv(std::span<const RunMetrics> runs, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17);
  out << "run_id,seed,condition,kind,step";
  for (const auto f : kMetricFields) out << ',' << f;
  out << '\n';
  for (const RunMetrics& r : runs) {
    for (const MetricRow& row : r.rows) {
      out << r.run_id << ',' << r.seed << ',' << r.condition << ',' << row.kind << ',' << row.step;
      for (const auto f : kMetricFields) out << ',' << row.values.find(f)->second;
      out << '\n';
    }
  }
}

void write_summary(std::span<const MetricSummary> rows, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17);
  out << "condition,metric,runs,auc_mean,auc_min,auc_max,final_mean,final_min,final_max\n";
  for (const MetricSummary& s : rows) {
    out << s.condition << ',' << s.metric << ',' << s.runs << ',' << s.auc_mean << ',' << s.auc_min << ','
        << s.auc_max << ',' << s.final_mean << ',' << s.final_min << ',' << s.final_max << '\n';
  }
}

void print_summary(std::span<const MetricSummary> rows, std::ostream& out) {
  out << std::left << std::setw(44) << "condition" << std::setw(20) << "metric" << std::setw(28) << "AUC mean [min, max]"
      << "final mean [min, max]\n";
  for (const MetricSummary& s : rows) {
    if (s.metric != "episode_return_ext" && s.metric != "loss_dynamics") continue;
    std::ostringstream auc, fin;
    auc << std::setprecision(4) << s.auc_mean << " [" << s.auc_min << ", " << s.auc_max << "]";
    fin << std::setprecision(4) << s.final_mean << " [" << s.final_min << ", " << s.final_max << "]";
    out << std::setw(44) << s.condition << std::setw(20) << s.metric << std::setw(28) << auc.str() << fin.str() << '\n';
  }
}

void write_svg(std::span<const RunMetrics> runs, std::string_view metric, const fs::path& path) {
  constexpr double kW = 640, kH = 400, kPad = 48;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  std::vector<std::vector<std::pair<double, double>>> all;
  for (const RunMetrics& r : runs) {
    all.push_back(series(r, metric));
    for (const auto& [x, y] : all.back()) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!(x1 > x0)) x1 = x0 + 1;
  if (!(y1 > y0)) y1 = y0 + 1;
  auto px = [&](double x) { return kPad + (x - x0) / (x1 - x0) * (kW - 2 * kPad); };
  auto py = [&](double y) { return kH - kPad - (y - y0) / (y1 - y0) * (kH - 2 * kPad); };

  static constexpr std::array<const char*, 6> kColors = {"#1f77b4", "#d62728", "#2ca02c",
                                                         "#9467bd", "#ff7f0e", "#17becf"};
  std::vector<std::string> conditions;
  std::ofstream out(path, std::ios::trunc);
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" viewBox=\"0 0 "
      << kW << ' ' << kH << "\">\n"
      << "  <rect x=\"0\" y=\"0\" width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n"
      << "  <path d=\"M " << kPad << ' ' << kPad << " L " << kPad << ' ' << kH - kPad << " L " << kW - kPad << ' '
      << kH - kPad << "\" stroke=\"black\" fill=\"none\"/>\n"
      << "  <text x=\"" << kPad << "\" y=\"" << kPad / 2 << "\" font-size=\"14\">" << metric << " vs env step</text>\n"
      << "  <text x=\"" << kPad << "\" y=\"" << kH - kPad / 4 << "\" font-size=\"10\">" << x0 << "</text>\n"
      << "  <text x=\"" << kW - kPad << "\" y=\"" << kH - kPad / 4 << "\" font-size=\"10\">" << x1 << "</text>\n"
      << "  <text x=\"2\" y=\"" << kH - kPad << "\" font-size=\"10\">" << y0 << "</text>\n"
      << "  <text x=\"2\" y=\"" << kPad << "\" font-size=\"10\">" << y1 << "</text>\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    auto it = std::find(conditions.begin(), conditions.end(), runs[i].condition);
    if (it == conditions.end()) it = conditions.insert(conditions.end(), runs[i].condition);
    const char* color = kColors[static_cast<std::size_t>(it - conditions.begin()) % kColors.size()];
    if (all[i].empty()) continue;
    out << "  <path fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1\" d=\"";
    for (std::size_t k = 0; k < all[i].size(); ++k) {
      out << (k == 0 ? "M " : " L ") << px(all[i][k].first) << ' ' << py(all[i][k].second);
    }
    out << "\"><title>" << runs[i].run_id << "</title></path>\n";
  }
  for (std::size_t c = 0; c < conditions.size(); ++c) {
    out << "  <text x=\"" << kW - kPad - 260 << "\" y=\"" << kPad + 14 * static_cast<double>(c) << "\" font-size=\"10\" fill=\""
        << kColors[c % kColors.size()] << "\">" << conditions[c] << "</text>\n";
  }
  out << "</svg>\n";
}

int compare_dirs(const std::vector<fs::path>& dirs, const fs::path& out_dir, bool plots, std::ostream& out) {
  if (dirs.size() < 2) throw MetricsError("compare needs at least two run directories");
  std::vector<RunMetrics> runs;
  for (const fs::path& d : dirs) runs.push_back(load_run(d));
  fs::create_directories(out_dir);
  write_csv(runs, out_dir / "compare.csv");
  const std::vector<MetricSummary> summary = summarize(runs);
  write_summary(summary, out_dir / "summary.csv");
  if (plots) {
    write_svg(runs, "episode_return_ext", out_dir / "episode_return_ext.svg");
    write_svg(runs, "loss_dynamics", out_dir / "loss_dynamics.svg");
  }
  print_summary(summary, out);
  out << "wrote " << (out_dir / "compare.csv").string() << " and " << (out_dir / "summary.csv").string() << '\n';
  return 0;
}

struct TrainFlags {
  std::string config_path;
  std::string env;
  std::uint64_t steps = 0;
  std::uint64_t seed = 0;
  std::string replay;
  std::string intrinsic;
  std::string out;
  int train_every = 0;
  int batch_size = 0;
  int ensemble_size = 0;
  int horizon = 0;
  int candidates = 0;
  int hidden = 0;
  double lambda_0 = 0.0;
  bool wall_time = false;
};

void add_run_flags(CLI::App* cmd, TrainFlags& f, std::map<std::string, CLI::Option*>& opts) {
  opts["config"] = cmd->add_option("--config", f.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  opts["env"] = cmd->add_option("--env", f.env, "chain-N, cupcatch or grid-G");
  opts["steps"] = cmd->add_option("--steps", f.steps, "total environment steps")->check(CLI::PositiveNumber);
  opts["seed"] = cmd->add_option("--seed", f.seed, "run seed");
  opts["replay"] = cmd->add_option("--replay", f.replay, "replay sampling mode")
                       ->check(CLI::IsMember({"uniform", "prioritized"}));
  opts["intrinsic"] = cmd->add_option("--intrinsic", f.intrinsic, "intrinsic reward mode")
                          ->check(CLI::IsMember({"off", "constant", "exp_decay", "ema_adaptive"}));
  opts["train-every"] = cmd->add_option("--train-every", f.train_every, "env steps per train step")->check(CLI::PositiveNumber);
  opts["batch-size"] = cmd->add_option("--batch-size", f.batch_size, "trajectories per batch")->check(CLI::PositiveNumber);
  opts["ensemble-size"] = cmd->add_option("--ensemble-size", f.ensemble_size, "ensemble members K")->check(CLI::PositiveNumber);
  opts["horizon"] = cmd->add_option("--horizon", f.horizon, "imagination horizon L")->check(CLI::PositiveNumber);
  opts["candidates"] = cmd->add_option("--candidates", f.candidates, "planner candidates")->check(CLI::PositiveNumber);
  opts["hidden"] = cmd->add_option("--hidden", f.hidden, "MLP width")->check(CLI::PositiveNumber);
  opts["lambda"] = cmd->add_option("--lambda", f.lambda_0, "initial / constant mixing weight")->check(CLI::Range(0.0, 1.0));
  opts["wall-time"] = cmd->add_flag("--wall-time", f.wall_time, "record wall_ms (breaks byte-identical metrics)");
}

config::ExperimentConfig resolve(const TrainFlags& f, const std::map<std::string, CLI::Option*>& opts) {
  auto given = [&](const char* name) { return opts.at(name)->count() > 0; };
  config::ExperimentConfig cfg;
  if (given("config")) cfg = config::load(f.config_path);
  if (given("env")) cfg.env = f.env;
  if (given("steps")) cfg.loop.total_env_steps = f.steps;
  if (given("seed")) cfg.loop.seed = f.seed;
  if (given("replay")) cfg.loop.replay_mode = agent::parse_replay_mode(f.replay);
  if (given("intrinsic")) cfg.loop.intrinsic_mode = agent::parse_intrinsic_mode(f.intrinsic);
  if (given("train-every")) cfg.loop.train_every = f.train_every;
  if (given("batch-size")) cfg.loop.batch_size = f.batch_size;
  if (given("ensemble-size")) cfg.ensemble_size = f.ensemble_size;
  if (given("horizon")) cfg.planner.horizon = f.horizon;
  if (given("candidates")) cfg.planner.n_candidates = f.candidates;
  if (given("hidden")) cfg.hidden = f.hidden;
  if (given("lambda")) cfg.schedule.lambda_0 = f.lambda_0;
  if (given("wall-time")) cfg.loop.record_wall_time = f.wall_time;
  return cfg;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"dxp: prioritized replay, ensemble disagreement and lambda schedules on toy environments"};
  app.require_subcommand(1);

  TrainFlags tf;
  std::map<std::string, CLI::Option*> topts;
  CLI::App* train = app.add_subcommand("train", "run one experiment");
  add_run_flags(train, tf, topts);
  train->add_option("--out", tf.out, "output directory (default $DXP_OUT_ROOT/<cell>)");

  std::vector<std::string> compare_dirs_arg;
  std::string compare_out;
  bool compare_plots = false;
  CLI::App* compare = app.add_subcommand("compare", "tabulate and plot several runs");
  compare->add_option("runs", compare_dirs_arg, "run directories")->required();
  compare->add_option("--out", compare_out, "output directory (default $DXP_OUT_ROOT/compare)");
  compare->add_flag("--plots", compare_plots, "also write SVG line charts");

  TrainFlags sf;
  std::map<std::string, CLI::Option*> sopts;
  std::string sweep_out;
  CLI::App* sweep = app.add_subcommand("sweep", "run the cross-product of the config's sweep axes");
  add_run_flags(sweep, sf, sopts);
  sweep->add_option("--out", sweep_out, "sweep root (default $DXP_OUT_ROOT/sweep)");

  std::string snapshot;
  std::string hist_out;
  int bins = 20;
  CLI::App* inspect = app.add_subcommand("inspect-buffer", "priority histogram of a replay snapshot as CSV");
  inspect->add_option("snapshot", snapshot, "replay snapshot file")->required()->check(CLI::ExistingFile);
  inspect->add_option("--bins", bins, "histogram bins")->check(CLI::PositiveNumber);
  inspect->add_option("--out", hist_out, "CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*train) {
      config::ExperimentConfig cfg = resolve(tf, topts);
      if (!tf.out.empty()) {
        cfg.out_dir = tf.out;
      } else if (cfg.out_dir.empty()) {
        cfg.out_dir = (default_out_root() / cell_name(cfg)).string();
      }
      const agent::RunSummary s = train_into(cfg);
      out << "trained " << s.env_steps << " env steps, " << s.train_steps << " train steps, " << s.episodes
          << " episodes; metrics in " << (fs::path(cfg.out_dir) / "metrics.jsonl").string() << '\n';
      return 0;
    }
    if (*compare) {
      std::vector<fs::path> dirs(compare_dirs_arg.begin(), compare_dirs_arg.end());
      return compare_dirs(dirs, compare_out.empty() ? default_out_root() / "compare" : fs::path(compare_out),
                          compare_plots, out);
    }
    if (*sweep) {
      const config::ExperimentConfig base = resolve(sf, sopts);
      const fs::path root = !sweep_out.empty()      ? fs::path(sweep_out)
                            : !base.out_dir.empty() ? fs::path(base.out_dir)
                                                    : default_out_root() / "sweep";
      std::vector<std::uint64_t> seeds = base.sweep.seeds;
      if (seeds.empty()) seeds.push_back(base.loop.seed);
      std::vector<replay::SampleMode> replays = base.sweep.replay_modes;
      if (replays.empty()) replays.push_back(base.loop.replay_mode);
      std::vector<agent::IntrinsicMode> intrinsics = base.sweep.intrinsic_modes;
      if (intrinsics.empty()) intrinsics.push_back(base.loop.intrinsic_mode);

      fs::create_directories(root);
      std::vector<fs::path> done;
      std::size_t failures = 0;
      std::ofstream failure_log(root / "failures.txt", std::ios::trunc);
      for (const auto seed : seeds) {
        for (const auto rm : replays) {
          for (const auto im : intrinsics) {
            config::ExperimentConfig cell = base;
            cell.sweep = {};
            cell.loop.seed = seed;
            cell.loop.replay_mode = rm;
            cell.loop.intrinsic_mode = im;
            const fs::path dir = root / cell_name(cell);
            cell.out_dir = dir.string();
            if (fs::exists(dir / "DONE")) {
              out << "skip " << dir.filename().string() << " (done)\n";
              done.push_back(dir);
              continue;
            }
            try {
              train_into(cell);
              std::ofstream(dir / "DONE", std::ios::trunc) << "ok\n";
              done.push_back(dir);
              out << "done " << dir.filename().string() << '\n';
            } catch (const std::exception& e) {
              ++failures;
              failure_log << dir.filename().string() << ": " << e.what() << '\n';
              err << "cell " << dir.filename().string() << " failed: " << e.what() << '\n';
            }
          }
        }
      }
      int rc = failures ? 1 : 0;
      if (done.size() >= 2) {
        rc = std::max(rc, compare_dirs(done, root / "compare", true, out));
      } else {
        err << "fewer than two completed cells; nothing to compare\n";
      }
      return rc;
    }
    if (*inspect) {
      const replay::ReplayBuffer buf = replay::ReplayBuffer::load(snapshot);
      std::vector<double> pr;
      for (const std::size_t i : buf.insertion_order()) pr.push_back(buf.at(i).priority);
      std::ostringstream csv;
      csv << std::setprecision(17) << "bin_lo,bin_hi,count\n";
      if (!pr.empty()) {
        const auto [lo_it, hi_it] = std::minmax_element(pr.begin(), pr.end());
        const double lo = *lo_it, hi = *hi_it;
        const double width = (hi - lo) / bins;
        std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
        for (const double p : pr) {
          std::size_t b = width > 0.0 ? static_cast<std::size_t>((p - lo) / width) : 0;
          counts[std::min(b, counts.size() - 1)]++;
        }
        for (int b = 0; b < bins; ++b) {
          csv << lo + width * b << ',' << (b + 1 == bins ? hi : lo + width * (b + 1)) << ','
              << counts[static_cast<std::size_t>(b)] << '\n';
        }
      }
      if (hist_out.empty()) {
        out << csv.str();
      } else {
        std::ofstream(hist_out, std::ios::trunc) << csv.str();
      }
      return 0;
    }
  } catch (const config::ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const MetricsError& e) {
    err << "metrics error: " << e.what() << '\n';
    return 2;
  } catch (const agent::EnvironmentFault& e) {
    err << "aborted: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace dxp::cli
