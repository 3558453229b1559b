// tdlab command-line interface.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>

#include "tdlab/activation.hpp"
#include "tdlab/config.hpp"
#include "tdlab/errors.hpp"
#include "tdlab/mnist.hpp"
#include "tdlab/parallel.hpp"
#include "tdlab/peaks.hpp"
#include "tdlab/sweep.hpp"

using namespace tdlab;
using namespace tdlab::orchestrator;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitPartial = 3;

struct SweepArgs {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string output;
  bool dump = false;
  bool fresh = false;
  bool quiet = false;
  std::string mode;  // spectrum only
};

void add_sweep_flags(CLI::App* sub, SweepArgs& a) {
  sub->add_option("--config", a.config, "JSON config file");
  sub->add_option("--set", a.sets, "override a config field, e.g. --set nn.epochs=200")->take_all();
  sub->add_option("--seed", a.seed, "master seed");
  sub->add_option("-o,--output", a.output, "output CSV path");
  sub->add_flag("--dump-config", a.dump, "print the resolved config and exit");
  sub->add_flag("--fresh", a.fresh, "ignore an existing partial file");
  sub->add_flag("-q,--quiet", a.quiet, "no progress output");
}

ExperimentConfig resolve(json j, const SweepArgs& a) {
  for (const auto& s : a.sets) apply_override(j, s);
  if (a.seed) j["seed"] = *a.seed;
  if (!a.output.empty()) j["output"] = a.output;
  if (!a.mode.empty()) j["spectrum"]["mode"] = a.mode;
  return ExperimentConfig::from_json(j);
}

json base_json(const SweepArgs& a, const std::string& task) {
  json j;
  if (!a.config.empty()) {
    std::ifstream is(a.config);
    if (!is) throw ConfigError("cannot open config " + a.config);
    try {
      j = json::parse(is);
    } catch (const json::exception& e) {
      throw ConfigError("config " + a.config + " is not valid JSON: " + e.what());
    }
  } else {
    j = ExperimentConfig{}.to_json();
    j["experiment_id"] = task;
    j["output"] = task + ".csv";
  }
  if (!task.empty()) j["task"] = task;
  return j;
}

int run(const ExperimentConfig& cfg, const SweepArgs& a) {
  if (a.dump) {
    std::cout << cfg.to_json().dump(2) << '\n';
    return 0;
  }
  SweepOptions o;
  o.resume = !a.fresh;
  if (!a.quiet)
    o.progress = [](long done, long total) {
      std::fprintf(stderr, "\r[%ld/%ld]", done, total);
      if (done == total) std::fprintf(stderr, "\n");
    };
  const auto res = run_sweep(cfg, o);
  std::fprintf(stderr, "%s: %zu rows, %ld items (%ld resumed), %ld failed\n", res.csv.string().c_str(),
               res.rows.size(), res.items, res.resumed, res.errors);
  return res.errors > 0 ? kExitPartial : 0;
}

// Series key of a profile row: everything except N and the value.
std::string series_key(const Row& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s snr=%g gamma=%g K=%d P=%ld", r.activation.c_str(), r.snr, r.gamma, r.K, r.P);
  std::string k = buf;
  if (r.width > 0) k += " width=" + std::to_string(r.width);
  if (r.epoch >= 0) k += " epoch=" + std::to_string(r.epoch);
  return k;
}

struct Profile {
  int D = 0;
  long P = 0;
  std::vector<double> n, mean, se;
};

std::vector<std::pair<std::string, Profile>> profiles(const std::string& path, const std::string& metric) {
  const auto rows = read_csv(path);
  std::map<std::string, std::size_t> idx;
  std::vector<std::pair<std::string, Profile>> out;
  std::map<std::string, double> se;
  for (const auto& r : select(rows, "stderr", metric)) se[series_key(r) + "#" + std::to_string(r.N)] = r.value;
  auto take = [&](const std::vector<Row>& sel, bool with_se) {
    for (const auto& r : sel) {
      const auto key = series_key(r);
      auto [it, fresh] = idx.emplace(key, out.size());
      if (fresh) out.push_back({key, Profile{r.D, r.P, {}, {}, {}}});
      auto& p = out[it->second].second;
      if (!p.n.empty() && r.N <= p.n.back()) continue;  // rounding duplicates
      p.n.push_back(static_cast<double>(r.N));
      p.mean.push_back(r.value);
      const auto s = se.find(key + "#" + std::to_string(r.N));
      p.se.push_back(with_se && s != se.end() ? s->second : 0.0);
    }
  };
  take(select(rows, "mean", metric), true);
  if (out.empty()) take(select(rows, "estimate", metric), false);
  if (out.empty()) throw InputError("no mean or estimate rows for metric '" + metric + "' in " + path);
  return out;
}

int cmd_peaks(const std::string& path, const std::string& metric) {
  int status = 0;
  std::printf("%-48s %-10s %10s %10s %10s %10s\n", "series", "class", "N/D", "height", "prominence", "width_dex");
  for (const auto& [key, p] : profiles(path, metric)) {
    try {
      const auto rep = detect_peaks(p.n, p.mean, p.se, p.D, static_cast<double>(p.P));
      if (rep.peaks.empty()) std::printf("%-48s %-10s\n", key.c_str(), "none");
      for (const auto& pk : rep.peaks)
        std::printf("%-48s %-10s %10.4g %10.4g %10.4g %10.3f\n", key.c_str(), to_string(pk.cls), pk.n_over_d,
                    pk.height, pk.prominence, pk.width_dex);
    } catch (const Error& e) {
      std::printf("%-48s error:%s %s\n", key.c_str(), e.kind(), e.what());
      status = kExitPartial;
    }
  }
  return status;
}

int cmd_ascii(const std::string& path, const std::string& metric, int cols) {
  for (const auto& [key, p] : profiles(path, metric)) {
    double lo = INFINITY, hi = -INFINITY;
    for (double v : p.mean)
      if (v > 0 && std::isfinite(v)) lo = std::min(lo, std::log10(v)), hi = std::max(hi, std::log10(v));
    std::printf("%s  (%s, log scale %.3g .. %.3g)\n", key.c_str(), metric.c_str(), std::pow(10, lo), std::pow(10, hi));
    for (std::size_t i = 0; i < p.n.size(); ++i) {
      const double v = p.mean[i];
      int len = 0;
      if (v > 0 && std::isfinite(v))
        len = 1 + static_cast<int>(std::lround((cols - 1) * (hi > lo ? (std::log10(v) - lo) / (hi - lo) : 1.0)));
      std::printf("  N/D=%9.4g %11.4g |%s\n", p.n[i] / p.D, v, std::string(static_cast<std::size_t>(len), '#').c_str());
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  init_workers_from_env();
  CLI::App app{"Random-feature and neural-network double/triple descent lab"};
  app.require_subcommand(1);
  int worker_flag = 0;
  app.add_option("--workers", worker_flag, std::string("worker threads (default: $") + kWorkersEnv + ")");

  std::string act_name = "tanh";
  auto* moments = app.add_subcommand("moments", "Gaussian moments eta, zeta and r of an activation");
  moments->add_option("activation", act_name, "linear | relu | abs | tanh | pwl:<alpha>");

  std::map<std::string, SweepArgs> sweep_args;
  std::vector<std::pair<std::string, CLI::App*>> sweeps;
  for (const char* task : {"rf-profile", "rf-phase", "biasvar", "nn-phase", "spectrum", "gap-curve"}) {
    auto* sub = app.add_subcommand(task, std::string("run a ") + task + " sweep");
    add_sweep_flags(sub, sweep_args[task]);
    if (std::string(task) == "spectrum")
      sub->add_option("mode", sweep_args[task].mode, "analytic | empirical | both");
    sweeps.push_back({task, sub});
  }

  std::string recipe_name;
  bool recipe_run = false, recipe_list = false;
  SweepArgs recipe_args;
  auto* rec = app.add_subcommand("recipe", "print (or run) the resolved config of a figure recipe");
  rec->add_option("name", recipe_name, "recipe name");
  rec->add_flag("--list", recipe_list, "list recipe names");
  rec->add_flag("--run", recipe_run, "run the sweep instead of printing the config");
  add_sweep_flags(rec, recipe_args);

  std::string images, labels, ingest_out;
  int side = 10, limit = 0;
  auto* ingest = app.add_subcommand("ingest-mnist", "downsample and standardize IDX images to CSV");
  ingest->add_option("--images", images, "IDX image file")->required();
  ingest->add_option("--labels", labels, "IDX label file")->required();
  ingest->add_option("--side", side, "target side length");
  ingest->add_option("--limit", limit, "keep the first N samples");
  ingest->add_option("-o,--output", ingest_out, "CSV output (label, then pixels)")->required();

  std::string csv_path, metric = "test_loss";
  int cols = 60;
  auto* peaks = app.add_subcommand("peaks", "detect and classify peaks in sweep profiles");
  peaks->add_option("csv", csv_path, "sweep CSV")->required();
  peaks->add_option("--metric", metric, "metric name");
  auto* ascii = app.add_subcommand("ascii-profile", "print log-scale profiles of a sweep CSV");
  ascii->add_option("csv", csv_path, "sweep CSV")->required();
  ascii->add_option("--metric", metric, "metric name");
  ascii->add_option("--cols", cols, "bar width");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  if (worker_flag > 0) set_workers(worker_flag);

  try {
    if (*moments) {
      const auto a = ActivationSpec::parse(act_name);
      std::printf("activation %s\neta  %.15g\nzeta %.15g\nr    %.15g\n", a.name().c_str(), a.eta(), a.zeta(), a.r());
      return 0;
    }
    for (const auto& [task, sub] : sweeps)
      if (*sub) {
        const auto& a = sweep_args[task];
        return run(resolve(base_json(a, task), a), a);
      }
    if (*rec) {
      if (recipe_list || recipe_name.empty()) {
        for (const auto& n : recipe_names()) std::printf("%s\n", n.c_str());
        return 0;
      }
      const auto cfg = resolve(recipe(recipe_name).to_json(), recipe_args);
      if (!recipe_run) {
        std::cout << cfg.to_json().dump(2) << '\n';
        return 0;
      }
      return run(cfg, recipe_args);
    }
    if (*ingest) {
      const auto ds = ingest_mnist(images, labels, side, limit);
      std::ofstream os(ingest_out);
      if (!os) throw InputError("cannot write " + ingest_out);
      char buf[32];
      for (Eigen::Index i = 0; i < ds.inputs.rows(); ++i) {
        os << ds.labels[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < ds.inputs.cols(); ++j) {
          std::snprintf(buf, sizeof buf, ",%.17g", ds.inputs(i, j));
          os << buf;
        }
        os << '\n';
      }
      std::fprintf(stderr, "%ld samples x %ld features -> %s\n", static_cast<long>(ds.inputs.rows()),
                   static_cast<long>(ds.inputs.cols()), ingest_out.c_str());
      return 0;
    }
    if (*peaks) return cmd_peaks(csv_path, metric);
    if (*ascii) return cmd_ascii(csv_path, metric, cols);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const Error& e) {
    std::fprintf(stderr, "%s error: %s\n", e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
