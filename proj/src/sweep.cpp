#include "tdlab/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "tdlab/activation.hpp"
#include "tdlab/biasvar.hpp"
#include "tdlab/errors.hpp"
#include "tdlab/mnist.hpp"
#include "tdlab/nnsim.hpp"
#include "tdlab/parallel.hpp"
#include "tdlab/rfcore.hpp"
#include "tdlab/rng.hpp"
#include "tdlab/spectral.hpp"

namespace tdlab::orchestrator {

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols{
      "experiment_id", "row_kind", "model",      "D",           "N",        "P",          "n_over_d",
      "p_over_d",      "activation", "r",        "eta",         "zeta",     "snr",        "gamma",
      "K",             "width",    "epoch",      "replicate",   "seed_tuple", "metric_name", "x",
      "value",         "config_hash", "seed_schedule", "code_version"};
  return cols;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_num(const std::string& s) {
  if (s == "nan") return kNaN;
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);  // keeps subnormals
  if (s.empty() || end != s.c_str() + s.size()) throw FormatError("bad number '" + s + "'");
  return v;
}

long parse_int(const std::string& s, long empty) {
  if (s.empty()) return empty;
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(s, &used);
  } catch (const std::exception&) {
    throw FormatError("bad integer '" + s + "'");
  }
  if (used != s.size()) throw FormatError("bad integer '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string header_line() {
  std::string h;
  for (const auto& c : csv_columns()) h += (h.empty() ? "" : ",") + c;
  return h;
}

std::string timestamp() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

struct Series {
  std::string name;
  ActivationSpec act;
  double snr, gamma;
  int K;
};

struct Item {
  int s = 0, p = 0, n = -1, w = -1, r = -1;
  std::string key;
};

class Runner {
 public:
  explicit Runner(const ExperimentConfig& cfg) : cfg_(cfg) {
    master_ = derive_seed(cfg.seed, {hash_name(cfg.experiment_id)});
    exp_hex_ = [&] {
      char buf[17];
      std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_name(cfg.experiment_id)));
      return std::string(buf);
    }();
    for (double x : cfg.n_over_d) n_.push_back(static_cast<int>(std::lround(cfg.D * x)));
    for (double x : cfg.p_over_d) p_.push_back(static_cast<int>(std::lround(cfg.D * x)));
    n_unique_ = n_;
    std::sort(n_unique_.begin(), n_unique_.end());
    n_unique_.erase(std::unique(n_unique_.begin(), n_unique_.end()), n_unique_.end());

    const bool act_only = cfg.task == "spectrum" || cfg.task == "gap-curve";
    for (const auto& a : cfg.activations) {
      const auto spec = ActivationSpec::parse(a);
      if (act_only) {
        series_.push_back({a, spec, cfg.snr.front(), cfg.gamma.front(), cfg.K.front()});
        continue;
      }
      for (double snr : cfg.snr)
        for (double g : cfg.gamma)
          for (int k : cfg.K) series_.push_back({a, spec, snr, g, k});
    }
    if (cfg.dataset.kind == "mnist")
      dataset_ = std::make_shared<const Dataset>(
          ingest_mnist(cfg.dataset.images, cfg.dataset.labels, cfg.dataset.side, cfg.dataset.limit));
    build_items();
    if (cfg.task == "nn-phase") build_nn();
  }

  const std::vector<Item>& items() const { return items_; }

  std::vector<std::string> compute(const Item& it) const {
    std::vector<Row> rows;
    try {
      if (cfg_.task == "rf-profile" || cfg_.task == "rf-phase")
        rows = rf(it);
      else if (cfg_.task == "biasvar")
        rows = bias_variance(it);
      else if (cfg_.task == "nn-phase")
        rows = nn(it);
      else if (cfg_.task == "spectrum")
        rows = spectrum(it);
      else
        rows = gaps(it);
    } catch (const Error& e) {
      rows = {error_row(it, e.kind())};
    } catch (const std::exception&) {
      rows = {error_row(it, "internal")};
    }
    std::vector<std::string> lines;
    lines.reserve(rows.size());
    for (const auto& r : rows) lines.push_back(format_row(r, cfg_.experiment_id, cfg_.model(), hash_));
    return lines;
  }

  std::string hash_ = "";

 private:
  Row base(const Item& it) const {
    const Series& s = series_[static_cast<std::size_t>(it.s)];
    Row r;
    r.D = cfg_.D;
    r.activation = s.name;
    r.eta = s.act.eta();
    r.zeta = s.act.zeta();
    r.r = r.zeta / r.eta;
    r.snr = s.snr;
    r.gamma = s.gamma;
    r.K = s.K;
    if (it.p >= 0 && cfg_.task != "nn-phase") {
      r.P = p_[static_cast<std::size_t>(it.p)];
      r.p_over_d = cfg_.p_over_d[static_cast<std::size_t>(it.p)];
    }
    if (it.n >= 0) {
      r.N = n_[static_cast<std::size_t>(it.n)];
      r.n_over_d = cfg_.n_over_d[static_cast<std::size_t>(it.n)];
    }
    if (it.w >= 0) {
      r.width = cfg_.nn.widths[static_cast<std::size_t>(it.w)];
      r.P = nnsim::MLP::param_count(cfg_.D, r.width);
      r.p_over_d = static_cast<double>(r.P) / cfg_.D;
    }
    r.replicate = it.r;
    r.seed_tuple = "seed=" + std::to_string(cfg_.seed) + ";exp=" + exp_hex_ + ";task=" + cfg_.task;
    if (it.r >= 0) r.seed_tuple += ";r=" + std::to_string(it.r);
    return r;
  }

  Row error_row(const Item& it, const std::string& kind) const {
    Row r = base(it);
    r.kind = "error";
    r.metric = "error:" + kind;
    r.value = kNaN;
    return r;
  }

  void set_n(Row& r, std::size_t i) const {
    r.N = n_[i];
    r.n_over_d = cfg_.n_over_d[i];
  }

  std::size_t unique_index(int N) const {
    return static_cast<std::size_t>(std::lower_bound(n_unique_.begin(), n_unique_.end(), N) - n_unique_.begin());
  }

  RFProblem problem(const Item& it) const {
    const Series& s = series_[static_cast<std::size_t>(it.s)];
    RFProblem pr;
    pr.D = cfg_.D;
    pr.P = p_[static_cast<std::size_t>(it.p)];
    pr.N = n_unique_.back();
    pr.activation = s.act;
    pr.snr = s.snr;
    pr.gamma = s.gamma;
    pr.dataset = dataset_;
    return pr;
  }

  std::vector<Row> rf(const Item& it) const {
    const Series& s = series_[static_cast<std::size_t>(it.s)];
    RFProblem pr = problem(it);
    pr.seeds = RFSeeds::from_master(master_, static_cast<std::uint64_t>(it.r));
    std::vector<Row> rows;
    Row b = base(it);
    b.kind = "replicate";
    if (s.K == 1) {
      const auto m = profile_replicate(pr, n_unique_, cfg_.m_test);
      for (std::size_t i = 0; i < n_.size(); ++i) {
        const auto& x = m[unique_index(n_[i])];
        const std::pair<const char*, double> vals[] = {
            {"test_loss", x.loss}, {"test_loss_mc_stderr", x.loss_mc_stderr}, {"ge_loss", x.ge_loss},
            {"norm_a", x.norm_a},  {"norm_b", x.norm_b},                      {"overlap", x.overlap},
            {"train_loss", x.train_loss}};
        for (const auto& [name, v] : vals) {
          Row r = b;
          set_n(r, i);
          r.metric = name;
          r.value = v;
          rows.push_back(r);
        }
      }
    } else {
      const auto loss = biasvar::ensemble_replicate(pr, s.K, n_unique_, cfg_.m_test);
      for (std::size_t i = 0; i < n_.size(); ++i) {
        Row r = b;
        set_n(r, i);
        r.metric = "test_loss";
        r.value = loss[unique_index(n_[i])];
        rows.push_back(r);
      }
    }
    return rows;
  }

  std::vector<Row> bias_variance(const Item& it) const {
    const RFProblem pr = problem(it);
    biasvar::DecomposeOptions opt;
    opt.S_theta = cfg_.biasvar.S_theta;
    opt.S_noise = cfg_.biasvar.S_noise;
    opt.S_data = cfg_.biasvar.S_data;
    opt.m_test = cfg_.m_test;
    opt.bessel = cfg_.biasvar.bessel;
    opt.direct_replicates = cfg_.biasvar.direct_replicates;
    const auto rep = biasvar::decompose_profile(pr, n_unique_, opt, derive_seed(master_, {hash_name("biasvar")}));
    std::vector<Row> rows;
    Row b = base(it);
    b.kind = "estimate";
    for (std::size_t i = 0; i < n_.size(); ++i) {
      const auto& x = rep[unique_index(n_[i])];
      const std::pair<const char*, double> vals[] = {
          {"bias2", x.bias2},         {"var_init", x.var_init},       {"var_noise", x.var_noise},
          {"var_sampling", x.var_sampling}, {"total", x.total},       {"se_bias2", x.se_bias2},
          {"se_var_init", x.se_var_init},   {"se_var_noise", x.se_var_noise},
          {"se_var_sampling", x.se_var_sampling}, {"se_total", x.se_total},
          {"plugin_mse", x.plugin_mse}, {"direct", x.direct},     {"direct_stderr", x.direct_stderr}};
      for (const auto& [name, v] : vals) {
        Row r = b;
        set_n(r, i);
        r.metric = name;
        r.value = v;
        rows.push_back(r);
      }
    }
    return rows;
  }

  void build_nn() {
    for (const auto& s : series_) {
      nnsim::NNPhaseOptions o;
      o.D = cfg_.D;
      o.widths = cfg_.nn.widths;
      o.n_grid = n_unique_;
      o.activation = s.act;
      o.snr = s.snr;
      o.config.epochs = cfg_.nn.epochs;
      o.config.lr = cfg_.nn.lr;
      o.config.momentum = cfg_.nn.momentum;
      o.config.weight_decay = s.gamma;
      o.config.checkpoint_epochs = cfg_.nn.checkpoints;
      if (o.config.checkpoint_epochs.empty()) o.config.checkpoint_epochs = {cfg_.nn.epochs};
      o.K = s.K;
      o.mode = nnsim::EnsembleMode::Prediction;
      o.m_test = cfg_.m_test;
      o.teacher_width = cfg_.nn.teacher_width;
      o.teacher_probe = cfg_.nn.teacher_probe;
      o.seed = derive_seed(master_, {hash_name("nn")});
      nn_.push_back(std::make_unique<nnsim::NNExperiment>(std::move(o)));
    }
  }

  std::vector<Row> nn(const Item& it) const {
    const Series& s = series_[static_cast<std::size_t>(it.s)];
    const auto& ex = *nn_[static_cast<std::size_t>(it.s)];
    const int width = cfg_.nn.widths[static_cast<std::size_t>(it.w)];
    const int N = n_[static_cast<std::size_t>(it.n)];
    const auto& epochs = ex.epochs();
    // members share the training set of replicate r and differ in init
    std::vector<nnsim::NNExperiment::Run> runs;
    for (int j = 0; j < s.K; ++j) runs.push_back(ex.run(width, N, it.r, s.K == 1 ? it.r : it.r * s.K + j));
    std::vector<Row> rows;
    Row b = base(it);
    b.kind = "replicate";
    for (std::size_t e = 0; e < epochs.size(); ++e) {
      Eigen::VectorXd avg;
      int used = 0, diverged = 0;
      double train = 0.0;
      for (const auto& run : runs) {
        if (run.diverged) ++diverged;
        if (run.predictions[e].size() == 0) continue;
        avg = used == 0 ? run.predictions[e] : Eigen::VectorXd(avg + run.predictions[e]);
        train += run.train_loss[e];
        ++used;
      }
      const double test = used == s.K ? ex.test_loss(avg / used) : kNaN;
      const std::pair<const char*, double> vals[] = {
          {"test_loss", test}, {"train_loss", used == s.K ? train / used : kNaN}, {"diverged", double(diverged)}};
      for (const auto& [name, v] : vals) {
        Row r = b;
        r.epoch = epochs[e];
        r.metric = name;
        r.value = v;
        rows.push_back(r);
      }
    }
    return rows;
  }

  std::vector<Row> spectrum(const Item& it) const {
    const Series& s = series_[static_cast<std::size_t>(it.s)];
    const int N = n_[static_cast<std::size_t>(it.n)];
    const int P = p_[static_cast<std::size_t>(it.p)];
    const auto& sc = cfg_.spectrum;
    const auto params = spectral::SpectralParams::from_activation(s.act, cfg_.D, N, P, sc.epsilon);
    std::vector<Row> rows;
    const Row b = base(it);
    auto scalar = [&](const char* kind, const char* metric, double v, int rep = -1) {
      Row r = b;
      r.kind = kind;
      r.metric = metric;
      r.value = v;
      r.replicate = rep;
      if (rep >= 0) r.seed_tuple += ";r=" + std::to_string(rep);
      rows.push_back(r);
    };
    auto curve = [&](const char* kind, const std::vector<double>& xs, const std::vector<double>& ys) {
      for (std::size_t i = 0; i < xs.size(); ++i) {
        Row r = b;
        r.kind = kind;
        r.metric = "density";
        r.x = xs[i];
        r.value = ys[i];
        rows.push_back(r);
      }
    };

    std::optional<spectral::SpectrumResult> an;
    if (sc.mode != "empirical") {
      spectral::AnalyticOptions ao;
      ao.gap_threshold = sc.gap_threshold;
      ao.parallel = false;
      an = spectral::analytic_spectrum(params, {}, ao);
      curve("analytic", an->lambda_grid, an->density);
      scalar("analytic", "atom", an->atom_at_zero);
      scalar("analytic", "rank_atom", params.rank_atom());
      scalar("analytic", "gap", an->gap);
      scalar("analytic", "right_edge", an->right_edge);
    }
    if (sc.mode != "analytic") {
      RFProblem pr = problem(it);
      pr.N = N;
      const std::uint64_t m = derive_seed(master_, {hash_name("spectrum")});
      std::vector<spectral::SpectrumResult> parts;
      spectral::EmpiricalOptions eo;
      eo.top_d_split = sc.top_d_split;
      eo.D = cfg_.D;
      eo.bins = sc.bins;
      eo.gap_threshold = sc.gap_threshold;
      eo.parallel = false;
      for (int rep = 0; rep < cfg_.replicates; ++rep) {
        pr.seeds = RFSeeds::from_master(m, static_cast<std::uint64_t>(rep));
        const RFInstance inst = sample_instance(pr);
        parts.push_back(spectral::empirical_spectrum(build_features(pr, inst), eo));
        const auto& sp = parts.back();
        scalar("replicate", "atom", sp.atom_at_zero, rep);
        scalar("replicate", "gap", sp.gap, rep);
        if (sp.linear_component) {
          scalar("replicate", "linear_left_edge", sp.linear_left_edge(), rep);
          if (!sp.nonlinear_component->empty() && !sp.linear_component->empty())
            scalar("replicate", "component_gap",
                   sp.linear_component->front() - sp.nonlinear_component->back(), rep);
        }
      }
      const auto pooled = spectral::pool_spectra(parts, sc.bins);
      curve("empirical", pooled.lambda_grid, pooled.density);
      scalar("empirical", "atom", pooled.atom_at_zero);
      scalar("empirical", "gap", pooled.gap);
      if (an && !pooled.eigenvalues.empty())
        scalar("empirical", "wasserstein1", spectral::wasserstein1(*an, pooled.eigenvalues));
    }
    return rows;
  }

  std::vector<Row> gaps(const Item& it) const {
    const Series& s = series_[static_cast<std::size_t>(it.s)];
    const int P = p_[static_cast<std::size_t>(it.p)];
    std::vector<Row> rows;
    const Row b = base(it);
    auto emit = [&](const char* kind, const char* metric, std::size_t i, double v) {
      Row r = b;
      r.kind = kind;
      set_n(r, i);
      r.metric = metric;
      r.value = v;
      rows.push_back(r);
    };
    const auto& sc = cfg_.spectrum;
    if (sc.mode != "empirical") {
      spectral::AnalyticOptions ao;
      ao.gap_threshold = sc.gap_threshold;
      ao.parallel = false;
      const auto g = spectral::gap_curve(s.act.eta(), s.act.zeta(), cfg_.D, P, cfg_.n_over_d, ao);
      for (std::size_t i = 0; i < g.points.size(); ++i) emit("analytic", "gap", i, g.points[i].gap);
    }
    if (sc.mode != "analytic") {
      const auto g = spectral::empirical_gap_curve(s.act, cfg_.D, P, cfg_.n_over_d, cfg_.replicates,
                                                   derive_seed(master_, {hash_name("gap")}));
      for (std::size_t i = 0; i < g.points.size(); ++i) {
        emit("empirical", "gap", i, g.points[i].gap);
        emit("empirical", "linear_edge", i, g.points[i].linear_edge);
      }
    }
    return rows;
  }

  void build_items() {
    const int S = static_cast<int>(series_.size());
    const int NP = static_cast<int>(p_.size()), NN = static_cast<int>(n_.size());
    auto add = [&](Item it) {
      it.key = "s" + std::to_string(it.s);
      if (it.p >= 0) it.key += ".p" + std::to_string(it.p);
      if (it.w >= 0) it.key += ".w" + std::to_string(it.w);
      if (it.n >= 0) it.key += ".n" + std::to_string(it.n);
      if (it.r >= 0) it.key += ".r" + std::to_string(it.r);
      items_.push_back(std::move(it));
    };
    const std::string& t = cfg_.task;
    for (int s = 0; s < S; ++s) {
      if (t == "rf-profile" || t == "rf-phase") {
        for (int p = 0; p < NP; ++p)
          for (int r = 0; r < cfg_.replicates; ++r) add({s, p, -1, -1, r, ""});
      } else if (t == "biasvar" || t == "gap-curve") {
        for (int p = 0; p < NP; ++p) add({s, p, -1, -1, -1, ""});
      } else if (t == "spectrum") {
        for (int p = 0; p < NP; ++p)
          for (int n = 0; n < NN; ++n) add({s, p, n, -1, -1, ""});
      } else {
        for (int w = 0; w < static_cast<int>(cfg_.nn.widths.size()); ++w)
          for (int n = 0; n < NN; ++n)
            for (int r = 0; r < cfg_.replicates; ++r) add({s, -1, n, w, r, ""});
      }
    }
  }

  const ExperimentConfig& cfg_;
  std::uint64_t master_ = 0;
  std::string exp_hex_;
  std::vector<int> n_, p_, n_unique_;
  std::vector<Series> series_;
  std::vector<Item> items_;
  std::shared_ptr<const Dataset> dataset_;
  std::vector<std::unique_ptr<nnsim::NNExperiment>> nn_;
};

// Complete blocks of a partial file written under the same config hash.
std::map<std::string, std::vector<std::string>> load_partial(const std::filesystem::path& path,
                                                              const std::string& hash) {
  std::map<std::string, std::vector<std::string>> blocks;
  std::ifstream is(path);
  if (!is) return blocks;
  std::string line;
  if (!std::getline(is, line) || line != header_line()) return blocks;
  if (!std::getline(is, line) || line != "#config," + hash) return blocks;
  std::vector<std::string> pending;
  while (std::getline(is, line)) {
    if (is.eof()) break;  // no trailing newline: torn write
    if (line.rfind("#complete,", 0) == 0) {
      const auto f = split(line, ',');
      if (f.size() == 3 && std::to_string(pending.size()) == f[2]) blocks[f[1]] = pending;
      pending.clear();
    } else {
      pending.push_back(line);
    }
  }
  return blocks;
}

void write_block(std::ostream& os, const std::string& key, const std::vector<std::string>& lines) {
  for (const auto& l : lines) os << l << '\n';
  os << "#complete," << key << ',' << lines.size() << '\n';
}

std::string strip_replicate(const std::string& tuple) {
  const auto at = tuple.rfind(";r=");
  return at == std::string::npos ? tuple : tuple.substr(0, at) + ";r=*";
}

std::vector<Row> aggregate(const std::vector<Row>& rows) {
  std::map<std::string, std::size_t> index;
  std::vector<std::pair<Row, std::vector<double>>> groups;
  for (const auto& r : rows) {
    if (r.kind != "replicate") continue;
    Row key = r;
    key.kind = "";
    key.replicate = -1;
    key.value = 0.0;
    key.seed_tuple = strip_replicate(r.seed_tuple);
    const std::string k = format_row(key, "", "", "");
    auto [it, fresh] = index.emplace(k, groups.size());
    if (fresh) groups.push_back({key, {}});
    groups[it->second].second.push_back(r.value);
  }
  std::vector<Row> out;
  for (auto& [key, vals] : groups) {
    std::vector<double> finite;
    for (double v : vals)
      if (std::isfinite(v)) finite.push_back(v);
    const Summary s = summarize(finite);
    Row m = key, e = key;
    m.kind = "mean";
    e.kind = "stderr";
    m.value = finite.empty() ? kNaN : s.mean;
    e.value = finite.empty() ? kNaN : s.stderr;
    out.push_back(m);
    out.push_back(e);
  }
  return out;
}

}  // namespace

std::string format_row(const Row& r, const std::string& experiment_id, const std::string& model,
                       const std::string& config_hash) {
  std::string s;
  s.reserve(256);
  auto put = [&](const std::string& v) {
    s += v;
    s += ',';
  };
  put(experiment_id);
  put(r.kind);
  put(model);
  put(std::to_string(r.D));
  put(std::to_string(r.N));
  put(std::to_string(r.P));
  put(num(r.n_over_d));
  put(num(r.p_over_d));
  put(r.activation);
  put(num(r.r));
  put(num(r.eta));
  put(num(r.zeta));
  put(num(r.snr));
  put(num(r.gamma));
  put(std::to_string(r.K));
  put(r.width > 0 ? std::to_string(r.width) : "");
  put(r.epoch >= 0 ? std::to_string(r.epoch) : "");
  put(r.replicate >= 0 ? std::to_string(r.replicate) : "");
  put(r.seed_tuple);
  put(r.metric);
  put(std::isnan(r.x) ? "" : num(r.x));
  put(num(r.value));
  put(config_hash);
  put(kSeedSchedule);
  s += code_version();
  return s;
}

Row parse_row(const std::string& line) {
  const auto f = split(line, ',');
  if (f.size() != csv_columns().size())
    throw FormatError("expected " + std::to_string(csv_columns().size()) + " fields, got " +
                      std::to_string(f.size()));
  Row r;
  r.kind = f[1];
  r.D = static_cast<int>(parse_int(f[3], 0));
  r.N = parse_int(f[4], 0);
  r.P = parse_int(f[5], 0);
  r.n_over_d = parse_num(f[6]);
  r.p_over_d = parse_num(f[7]);
  r.activation = f[8];
  r.r = parse_num(f[9]);
  r.eta = parse_num(f[10]);
  r.zeta = parse_num(f[11]);
  r.snr = parse_num(f[12]);
  r.gamma = parse_num(f[13]);
  r.K = static_cast<int>(parse_int(f[14], 1));
  r.width = static_cast<int>(parse_int(f[15], 0));
  r.epoch = static_cast<int>(parse_int(f[16], -1));
  r.replicate = static_cast<int>(parse_int(f[17], -1));
  r.seed_tuple = f[18];
  r.metric = f[19];
  r.x = f[20].empty() ? kNaN : parse_num(f[20]);
  r.value = parse_num(f[21]);
  return r;
}

std::vector<Row> read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != header_line()) throw FormatError("unexpected CSV header in " + path.string());
  std::vector<Row> rows;
  while (std::getline(is, line))
    if (!line.empty() && line[0] != '#') rows.push_back(parse_row(line));
  return rows;
}

std::vector<Row> select(const std::vector<Row>& rows, const std::string& kind, const std::string& metric) {
  std::vector<Row> out;
  for (const auto& r : rows)
    if (r.kind == kind && r.metric == metric) out.push_back(r);
  return out;
}

SweepResult run_sweep(const ExperimentConfig& cfg, const SweepOptions& opt) {
  cfg.validate();
  const std::string started = timestamp();
  Runner runner(cfg);
  SweepResult res;
  res.experiment_id = cfg.experiment_id;
  res.model = cfg.model();
  res.config_hash = cfg.hash();
  res.code_version = code_version();
  runner.hash_ = res.config_hash;
  res.csv = opt.output.empty() ? std::filesystem::path(cfg.output) : opt.output;
  res.meta = res.csv.string() + ".meta.json";
  const std::filesystem::path partial = res.csv.string() + ".partial";
  if (res.csv.has_parent_path()) std::filesystem::create_directories(res.csv.parent_path());

  const auto& items = runner.items();
  res.items = static_cast<long>(items.size());
  std::vector<std::vector<std::string>> blocks(items.size());
  std::vector<char> have(items.size(), 0);

  auto kept = opt.resume ? load_partial(partial, res.config_hash)
                         : std::map<std::string, std::vector<std::string>>{};
  {
    // rewrite the partial file with its complete blocks only
    const std::filesystem::path tmp = partial.string() + ".tmp";
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw InputError("cannot write " + tmp.string());
    os << header_line() << '\n' << "#config," << res.config_hash << '\n';
    for (std::size_t i = 0; i < items.size(); ++i) {
      auto it = kept.find(items[i].key);
      if (it == kept.end()) continue;
      blocks[i] = std::move(it->second);
      have[i] = 1;
      ++res.resumed;
      write_block(os, items[i].key, blocks[i]);
    }
    os.close();
    if (!os) throw InputError("write failed: " + tmp.string());
    std::filesystem::rename(tmp, partial);
  }

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (!have[i]) todo.push_back(i);

  std::ofstream out(partial, std::ios::app);
  if (!out) throw InputError("cannot append to " + partial.string());
  std::atomic<bool> stop{false};
  long computed = 0, done = res.resumed;
  const long total = static_cast<long>(todo.size());
#pragma omp parallel for schedule(dynamic, 1) num_threads(workers())
  for (long t = 0; t < total; ++t) {
    if (stop.load()) continue;
    const std::size_t i = todo[static_cast<std::size_t>(t)];
    auto lines = runner.compute(items[i]);
#pragma omp critical(tdlab_sweep_writer)
    {
      if (!stop.load()) {
        write_block(out, items[i].key, lines);
        out.flush();
        blocks[i] = std::move(lines);
        have[i] = 1;
        ++computed;
        ++done;
        if (opt.progress) opt.progress(done, res.items);
        if (opt.stop_after >= 0 && computed >= opt.stop_after) stop = true;
      }
    }
  }
  out.close();
  if (std::find(have.begin(), have.end(), 0) != have.end()) return res;

  std::vector<std::string> lines;
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (const auto& l : blocks[i]) {
      res.rows.push_back(parse_row(l));
      lines.push_back(l);
    }
    if (blocks[i].size() == 1 && res.rows.back().kind == "error") ++res.errors;
  }
  for (const auto& a : aggregate(res.rows)) {
    lines.push_back(format_row(a, res.experiment_id, res.model, res.config_hash));
    res.rows.push_back(a);
  }

  const std::filesystem::path tmp = res.csv.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw InputError("cannot write " + tmp.string());
    os << header_line() << '\n';
    for (const auto& l : lines) os << l << '\n';
    if (!os) throw InputError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, res.csv);

  json meta{{"experiment_id", res.experiment_id},
            {"model", res.model},
            {"config", cfg.to_json()},
            {"config_hash", res.config_hash},
            {"code_version", res.code_version},
            {"seed_schedule", kSeedSchedule},
            {"rounding_rule", kRoundingRule},
            {"momentum_convention", nnsim::kMomentumConvention},
            {"biasvar_conditioning_order", biasvar::kConditioningOrder},
            {"items", res.items},
            {"resumed_items", res.resumed},
            {"error_items", res.errors},
            {"workers", workers()},
            {"started", started},
            {"finished", timestamp()}};
  std::ofstream(res.meta, std::ios::trunc) << meta.dump(2) << '\n';
  std::filesystem::remove(partial);
  res.complete = true;
  return res;
}

}  // namespace tdlab::orchestrator
