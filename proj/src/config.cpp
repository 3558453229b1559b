#include "tdlab/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "tdlab/activation.hpp"
#include "tdlab/errors.hpp"
#include "tdlab/rng.hpp"

#ifndef TDLAB_CODE_VERSION
#define TDLAB_CODE_VERSION "unknown"
#endif

namespace tdlab::orchestrator {

const char* code_version() { return TDLAB_CODE_VERSION; }

std::vector<double> log_grid(double lo, double hi, int points) {
  if (points < 1) throw ConfigError("grid needs at least one point");
  std::vector<double> g(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i)
    g[static_cast<std::size_t>(i)] = std::pow(10.0, points == 1 ? lo : lo + (hi - lo) * i / (points - 1));
  return g;
}

std::vector<double> default_ratio_grid() { return log_grid(-1.0, 2.3, 25); }

namespace {

const std::set<std::string> kTasks{"rf-profile", "rf-phase", "biasvar", "nn-phase", "spectrum",
                                   "gap-curve"};

double snr_from_json(const json& v) {
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf" || s == "infinity") return std::numeric_limits<double>::infinity();
    throw ConfigError("snr must be a number or \"inf\", got \"" + s + "\"");
  }
  return v.get<double>();
}

json snr_to_json(double v) { return std::isinf(v) ? json("inf") : json(v); }

// {"log10_min": a, "log10_max": b, "points": n} or an explicit array
std::vector<double> grid_from_json(const json& v) {
  if (v.is_array()) return v.get<std::vector<double>>();
  if (v.is_object()) {
    for (auto it = v.begin(); it != v.end(); ++it)
      if (it.key() != "log10_min" && it.key() != "log10_max" && it.key() != "points")
        throw ConfigError("unknown grid key '" + it.key() + "'");
    return log_grid(v.at("log10_min").get<double>(), v.at("log10_max").get<double>(),
                    v.at("points").get<int>());
  }
  throw ConfigError("grid must be an array or a {log10_min, log10_max, points} object");
}

class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + " must be an object");
  }
  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + key + ": " + e.what());
    }
  }
  template <class F>
  void with(const char* key, F&& f) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      f(j_.at(key));
    } catch (const json::exception& e) {
      throw ConfigError(where_ + key + ": " + e.what());
    }
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + where_ + it.key() + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  Reader r(j, "");
  r.get("experiment_id", c.experiment_id);
  r.get("task", c.task);
  r.get("D", c.D);
  r.with("p_over_d", [&](const json& v) { c.p_over_d = grid_from_json(v); });
  r.with("n_over_d", [&](const json& v) { c.n_over_d = grid_from_json(v); });
  r.get("replicates", c.replicates);
  r.get("activations", c.activations);
  r.with("snr", [&](const json& v) {
    c.snr.clear();
    if (v.is_array())
      for (const auto& e : v) c.snr.push_back(snr_from_json(e));
    else
      c.snr.push_back(snr_from_json(v));
  });
  r.with("gamma", [&](const json& v) {
    c.gamma = v.is_array() ? v.get<std::vector<double>>() : std::vector<double>{v.get<double>()};
  });
  r.with("K", [&](const json& v) {
    c.K = v.is_array() ? v.get<std::vector<int>>() : std::vector<int>{v.get<int>()};
  });
  r.get("seed", c.seed);
  r.get("m_test", c.m_test);
  r.get("output", c.output);
  r.with("nn", [&](const json& v) {
    Reader n(v, "nn.");
    n.get("widths", c.nn.widths);
    n.get("epochs", c.nn.epochs);
    n.get("lr", c.nn.lr);
    n.get("momentum", c.nn.momentum);
    n.get("checkpoints", c.nn.checkpoints);
    n.get("teacher_width", c.nn.teacher_width);
    n.get("teacher_probe", c.nn.teacher_probe);
    n.finish();
  });
  r.with("biasvar", [&](const json& v) {
    Reader b(v, "biasvar.");
    b.get("S_theta", c.biasvar.S_theta);
    b.get("S_noise", c.biasvar.S_noise);
    b.get("S_data", c.biasvar.S_data);
    b.get("bessel", c.biasvar.bessel);
    b.get("direct_replicates", c.biasvar.direct_replicates);
    b.finish();
  });
  r.with("spectrum", [&](const json& v) {
    Reader s(v, "spectrum.");
    s.get("mode", c.spectrum.mode);
    s.get("bins", c.spectrum.bins);
    s.get("epsilon", c.spectrum.epsilon);
    s.get("gap_threshold", c.spectrum.gap_threshold);
    s.get("top_d_split", c.spectrum.top_d_split);
    s.finish();
  });
  r.with("dataset", [&](const json& v) {
    Reader d(v, "dataset.");
    d.get("kind", c.dataset.kind);
    d.get("images", c.dataset.images);
    d.get("labels", c.dataset.labels);
    d.get("side", c.dataset.side);
    d.get("limit", c.dataset.limit);
    d.finish();
  });
  r.finish();
  if (c.n_over_d.empty()) c.n_over_d = default_ratio_grid();
  c.validate();
  return c;
}

json ExperimentConfig::to_json() const {
  json snrs = json::array();
  for (double s : snr) snrs.push_back(snr_to_json(s));
  return json{
      {"experiment_id", experiment_id},
      {"task", task},
      {"D", D},
      {"p_over_d", p_over_d},
      {"n_over_d", n_over_d},
      {"replicates", replicates},
      {"activations", activations},
      {"snr", snrs},
      {"gamma", gamma},
      {"K", K},
      {"seed", seed},
      {"m_test", m_test},
      {"output", output},
      {"nn",
       {{"widths", nn.widths},
        {"epochs", nn.epochs},
        {"lr", nn.lr},
        {"momentum", nn.momentum},
        {"checkpoints", nn.checkpoints},
        {"teacher_width", nn.teacher_width},
        {"teacher_probe", nn.teacher_probe}}},
      {"biasvar",
       {{"S_theta", biasvar.S_theta},
        {"S_noise", biasvar.S_noise},
        {"S_data", biasvar.S_data},
        {"bessel", biasvar.bessel},
        {"direct_replicates", biasvar.direct_replicates}}},
      {"spectrum",
       {{"mode", spectrum.mode},
        {"bins", spectrum.bins},
        {"epsilon", spectrum.epsilon},
        {"gap_threshold", spectrum.gap_threshold},
        {"top_d_split", spectrum.top_d_split}}},
      {"dataset",
       {{"kind", dataset.kind},
        {"images", dataset.images},
        {"labels", dataset.labels},
        {"side", dataset.side},
        {"limit", dataset.limit}}},
  };
}

void ExperimentConfig::validate() const {
  if (!kTasks.count(task)) {
    std::string names;
    for (const auto& t : kTasks) names += (names.empty() ? "" : ", ") + t;
    throw ConfigError("unknown task '" + task + "' (valid: " + names + ")");
  }
  if (experiment_id.empty() || experiment_id.find_first_of(",\n\r\"") != std::string::npos)
    throw ConfigError("experiment_id must be non-empty without commas, quotes or newlines");
  if (D < 1) throw ConfigError("D must be >= 1");
  if (replicates < 1) throw ConfigError("replicates must be >= 1");
  if (m_test < 1) throw ConfigError("m_test must be >= 1");
  auto positive = [](const std::vector<double>& v, const char* name) {
    if (v.empty()) throw ConfigError(std::string(name) + " must not be empty");
    for (double x : v)
      if (!(x > 0.0) || !std::isfinite(x)) throw ConfigError(std::string(name) + " entries must be finite and > 0");
  };
  positive(p_over_d, "p_over_d");
  positive(n_over_d, "n_over_d");
  for (double x : p_over_d)
    if (std::lround(D * x) < 1) throw ConfigError("p_over_d rounds to P = 0");
  for (double x : n_over_d)
    if (std::lround(D * x) < 1) throw ConfigError("n_over_d rounds to N = 0");
  if (activations.empty()) throw ConfigError("activations must not be empty");
  for (const auto& a : activations) {
    if (a.find(',') != std::string::npos) throw ConfigError("activation names cannot contain commas");
    (void)ActivationSpec::parse(a);
  }
  if (snr.empty()) throw ConfigError("snr must not be empty");
  for (double s : snr)
    if (!(s > 0.0)) throw ConfigError("snr must be > 0 (or \"inf\")");
  if (gamma.empty()) throw ConfigError("gamma must not be empty");
  for (double g : gamma)
    if (!(g >= 0.0) || !std::isfinite(g)) throw ConfigError("gamma must be finite and >= 0");
  if (K.empty()) throw ConfigError("K must not be empty");
  for (int k : K)
    if (k < 1) throw ConfigError("K must be >= 1");
  if (nn.widths.empty()) throw ConfigError("nn.widths must not be empty");
  for (int w : nn.widths)
    if (w < 1) throw ConfigError("nn.widths must be >= 1");
  if (nn.epochs < 0) throw ConfigError("nn.epochs must be >= 0");
  if (!(nn.lr >= 0.0)) throw ConfigError("nn.lr must be >= 0");
  if (!(nn.momentum >= 0.0 && nn.momentum < 1.0)) throw ConfigError("nn.momentum must lie in [0, 1)");
  for (int e : nn.checkpoints)
    if (e < 0 || e > nn.epochs) throw ConfigError("nn.checkpoints must lie in [0, nn.epochs]");
  if (nn.teacher_width < 1 || nn.teacher_probe < 2) throw ConfigError("bad teacher settings");
  if (biasvar.S_theta < 2 || biasvar.S_noise < 2 || biasvar.S_data < 2)
    throw ConfigError("biasvar seed counts must be >= 2");
  if (biasvar.direct_replicates < 0) throw ConfigError("biasvar.direct_replicates must be >= 0");
  if (spectrum.mode != "analytic" && spectrum.mode != "empirical" && spectrum.mode != "both")
    throw ConfigError("spectrum.mode must be analytic, empirical or both");
  if (spectrum.bins < 1) throw ConfigError("spectrum.bins must be >= 1");
  if (!(spectrum.epsilon > 0.0)) throw ConfigError("spectrum.epsilon must be > 0");
  if (!(spectrum.gap_threshold > 0.0)) throw ConfigError("spectrum.gap_threshold must be > 0");
  if (dataset.kind != "gaussian" && dataset.kind != "mnist")
    throw ConfigError("dataset.kind must be gaussian or mnist");
  if (dataset.kind == "mnist") {
    if (dataset.images.empty() || dataset.labels.empty())
      throw ConfigError("mnist dataset needs images and labels paths");
    if (dataset.side * dataset.side != D) throw ConfigError("dataset.side^2 must equal D");
    if (task == "nn-phase" || task == "biasvar" || task == "gap-curve")
      throw ConfigError("task '" + task + "' supports Gaussian inputs only");
  }
}

std::string ExperimentConfig::model() const { return task == "nn-phase" ? "NN" : "RF"; }

std::string ExperimentConfig::hash() const {
  json j = to_json();
  j.erase("output");
  const std::uint64_t h = hash_name(j.dump());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void apply_override(json& j, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("override must look like key.path=value");
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &j;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override path '" + path + "' crosses a non-object");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) throw ConfigError("override path '" + path + "' crosses a non-object");
  (*node)[parts.back()] = value;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

std::vector<std::string> recipe_names() {
  return {"fig3_rf_low_snr", "fig3_rf_high_snr", "fig4_spectra",  "fig5_spectra_r", "fig5bv_biasvar",
          "fig6_nonlinearities", "fig7_nn_reg",   "fig8_dynamics", "fig9_norms",     "appC_mnist"};
}

ExperimentConfig recipe(std::string_view name) {
  ExperimentConfig c;
  c.experiment_id = std::string(name);
  c.output = std::string(name) + ".csv";
  const double inf = std::numeric_limits<double>::infinity();
  if (name == "fig3_rf_low_snr" || name == "fig3_rf_high_snr") {
    c.task = "rf-phase";
    c.D = 50;
    c.p_over_d = log_grid(-0.5, 1.5, 9);
    c.n_over_d = log_grid(-1.0, 2.0, 19);
    c.replicates = 5;
    c.activations = {"tanh"};
    c.snr = {name == "fig3_rf_low_snr" ? 0.2 : 2.0};
    c.gamma = {0.1};
    c.m_test = 5000;
  } else if (name == "fig4_spectra") {
    c.task = "spectrum";
    c.D = 100;
    c.p_over_d = {10};
    c.n_over_d = {0.5, 1, 2, 10, 100};
    c.replicates = 10;
    c.activations = {"tanh"};
    c.snr = {0.2};
    c.gamma = {1e-5};
  } else if (name == "fig5_spectra_r") {
    c.task = "gap-curve";
    c.D = 100;
    c.p_over_d = {10};
    c.n_over_d = log_grid(-0.7, 1.7, 25);
    c.replicates = 3;
    c.activations = {"pwl:1", "relu", "tanh", "linear"};
  } else if (name == "fig5bv_biasvar") {
    c.task = "biasvar";
    c.D = 50;
    c.p_over_d = {20};
    // 0.1301-dex steps put N = D and N = P on the grid
    c.n_over_d.clear();
    for (int i = -4; i <= 15; ++i) c.n_over_d.push_back(std::pow(20.0, i / 10.0));
    c.activations = {"relu"};
    c.snr = {0.2, inf};
    c.gamma = {1e-5, 1e-3};
    c.m_test = 4000;
    c.biasvar.S_theta = c.biasvar.S_noise = c.biasvar.S_data = 6;
    c.biasvar.direct_replicates = 20;
  } else if (name == "fig6_nonlinearities") {
    c.task = "rf-profile";
    c.D = 100;
    c.p_over_d = {10};
    c.n_over_d = log_grid(-1.0, 2.0, 25);
    c.replicates = 10;
    c.activations = {"abs", "relu", "tanh", "linear"};
    c.snr = {0.2};
    c.gamma = {1e-3};
  } else if (name == "fig7_nn_reg" || name == "fig8_dynamics") {
    c.task = "nn-phase";
    c.D = 49;
    c.nn.widths = {50};
    c.n_over_d = log_grid(-0.3, 2.3, 27);
    c.activations = {"tanh"};
    c.snr = {0.2};
    c.m_test = 10000;
    if (name == "fig7_nn_reg") {
      c.replicates = 2;
      c.gamma = {0.0, 0.05};
      c.K = {1, 10};
      c.nn.checkpoints = {1000};
    } else {
      c.replicates = 4;
      c.gamma = {0.0};
      c.nn.checkpoints = {50, 100, 200, 500, 1000};
    }
  } else if (name == "fig9_norms") {
    c.task = "rf-profile";
    c.D = 100;
    c.p_over_d = {10};
    c.n_over_d = log_grid(-1.0, 2.0, 25);
    c.replicates = 10;
    c.activations = {"pwl:1", "pwl:0.5", "pwl:0", "pwl:-0.5", "pwl:-1"};
    c.snr = {0.2};
    c.gamma = {0.1};
  } else if (name == "appC_mnist") {
    c.task = "spectrum";
    c.D = 100;
    c.p_over_d = {10};
    c.n_over_d = {0.5, 1, 2, 10};
    c.replicates = 5;
    c.activations = {"tanh"};
    c.gamma = {1e-5};
    c.spectrum.mode = "empirical";
    c.dataset.kind = "mnist";
    c.dataset.images = "data/train-images-idx3-ubyte";
    c.dataset.labels = "data/train-labels-idx1-ubyte";
    c.dataset.side = 10;
  } else {
    std::string names;
    for (const auto& n : recipe_names()) names += (names.empty() ? "" : ", ") + n;
    throw ConfigError("unknown recipe '" + std::string(name) + "' (valid: " + names + ")");
  }
  c.validate();
  return c;
}

}  // namespace tdlab::orchestrator
