#include "tdlab/nnsim.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <random>

#include <json.hpp>

#include "tdlab/errors.hpp"
#include "tdlab/kernels.hpp"
#include "tdlab/rng.hpp"

namespace tdlab::nnsim {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

MLP::MLP(int D, int H, ActivationSpec act) : D_(D), H_(H), act_(std::move(act)) {
  if (D < 1 || H < 1) throw ConfigError("MLP needs D >= 1 and H >= 1");
  w_ = VectorXd::Zero(param_count(D, H));
}

Index MLP::param_count(int D, int H) {
  return Index{H} * D + H + Index{H} * H + H + H + 1;
}

MLP MLP::initialized(int D, int H, ActivationSpec act, std::uint64_t seed) {
  MLP net(D, H, std::move(act));
  net.seed_ = seed;
  std::mt19937_64 gen(seed);
  auto fill = [&](Index from, Index count, int fan_in) {
    const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-b, b);
    for (Index i = 0; i < count; ++i) net.w_(from + i) = u(gen);
  };
  fill(0, Index{H} * D, D);
  fill(net.off_b1(), H, D);
  fill(net.off_W2(), Index{H} * H, H);
  fill(net.off_b2(), H, H);
  fill(net.off_w3(), H, H);
  fill(net.off_b3(), 1, H);
  return net;
}

Eigen::Map<const MatrixXd> MLP::W1() const { return {w_.data(), H_, D_}; }
Eigen::Map<const VectorXd> MLP::b1() const { return {w_.data() + off_b1(), H_}; }
Eigen::Map<const MatrixXd> MLP::W2() const { return {w_.data() + off_W2(), H_, H_}; }
Eigen::Map<const VectorXd> MLP::b2() const { return {w_.data() + off_b2(), H_}; }
Eigen::Map<const VectorXd> MLP::w3() const { return {w_.data() + off_w3(), H_}; }

namespace {

struct Activations {
  MatrixXd A1, H1, A2, H2;
  VectorXd f;
};

void forward_block(const MLP& net, const Eigen::Ref<const MatrixXd>& Xb, Activations& a) {
  const auto& act = net.activation();
  a.A1.noalias() = Xb * net.W1().transpose();
  a.A1.rowwise() += net.b1().transpose();
  a.H1 = a.A1;
  act.apply(a.H1);
  a.A2.noalias() = a.H1 * net.W2().transpose();
  a.A2.rowwise() += net.b2().transpose();
  a.H2 = a.A2;
  act.apply(a.H2);
  a.f.noalias() = a.H2 * net.w3();
  a.f.array() += net.b3();
}

Index block_count(Index n) { return (n + kGradBlock - 1) / kGradBlock; }

void check_batch(const MLP& net, const MatrixXd& X, const VectorXd& y) {
  if (X.cols() != net.D()) throw ConfigError("input width does not match the network");
  if (X.rows() != y.size()) throw ConfigError("inputs and labels differ in length");
  if (X.rows() == 0) throw ConfigError("empty batch");
}

}  // namespace

VectorXd MLP::forward(const MatrixXd& X, bool parallel) const {
  if (X.cols() != D_) throw ConfigError("input width does not match the network");
  VectorXd out(X.rows());
  const Index nb = block_count(X.rows());
#pragma omp parallel for schedule(static) if (parallel && nb > 1)
  for (Index b = 0; b < nb; ++b) {
    const Index r0 = b * kGradBlock, len = std::min(kGradBlock, X.rows() - r0);
    Activations a;
    forward_block(*this, X.middleRows(r0, len), a);
    out.segment(r0, len) = a.f;
  }
  return out;
}

MatrixXd MLP::hidden(const MatrixXd& X) const {
  if (X.cols() != D_) throw ConfigError("input width does not match the network");
  Activations a;
  forward_block(*this, X, a);
  return a.H2;
}

double loss_and_gradient(const MLP& net, const MatrixXd& X, const VectorXd& y, VectorXd& grad,
                         bool parallel) {
  check_batch(net, X, y);
  const Index n = X.rows(), nb = block_count(n), P = net.size();
  const int H = net.H();
  const double inv_n = 1.0 / static_cast<double>(n);
  MatrixXd partial(P, nb);
  VectorXd part_loss(nb);

#pragma omp parallel for schedule(static) if (parallel && nb > 1)
  for (Index b = 0; b < nb; ++b) {
    const Index r0 = b * kGradBlock, len = std::min(kGradBlock, n - r0);
    const auto Xb = X.middleRows(r0, len);
    Activations a;
    forward_block(net, Xb, a);
    const VectorXd res = a.f - y.segment(r0, len);
    part_loss(b) = res.squaredNorm() * inv_n;
    const VectorXd r = (2.0 * inv_n) * res;

    auto g = partial.col(b);
    Eigen::Map<MatrixXd> gW1(g.data(), H, net.D());
    Eigen::Map<VectorXd> gb1(g.data() + net.off_b1(), H);
    Eigen::Map<MatrixXd> gW2(g.data() + net.off_W2(), H, H);
    Eigen::Map<VectorXd> gb2(g.data() + net.off_b2(), H);
    Eigen::Map<VectorXd> gw3(g.data() + net.off_w3(), H);

    gw3.noalias() = a.H2.transpose() * r;
    g(net.off_b3()) = r.sum();
    // delta2 = (r w3^T) .* sigma'(A2)
    net.activation().apply_derivative(a.A2, a.H2);
    MatrixXd d2 = (r * net.w3().transpose()).cwiseProduct(a.A2);
    gW2.noalias() = d2.transpose() * a.H1;
    gb2 = d2.colwise().sum().transpose();
    net.activation().apply_derivative(a.A1, a.H1);
    MatrixXd d1 = (d2 * net.W2()).cwiseProduct(a.A1);
    gW1.noalias() = d1.transpose() * Xb;
    gb1 = d1.colwise().sum().transpose();
  }

  grad = partial.col(0);
  double loss = part_loss(0);
  for (Index b = 1; b < nb; ++b) {
    grad += partial.col(b);
    loss += part_loss(b);
  }
  return loss;
}

double loss_and_gradient_reference(const MLP& net, const MatrixXd& X, const VectorXd& y,
                                   VectorXd& grad) {
  check_batch(net, X, y);
  const int D = net.D(), H = net.H();
  const Index n = X.rows();
  const auto& act = net.activation();
  const double* w = net.params().data();
  const double* W1 = w;
  const double* b1 = w + net.off_b1();
  const double* W2 = w + net.off_W2();
  const double* b2 = w + net.off_b2();
  const double* w3 = w + net.off_w3();
  const double b3 = w[net.off_b3()];
  grad = VectorXd::Zero(net.size());
  double* g = grad.data();
  std::vector<double> a1(H), h1(H), a2(H), h2(H), d2(H), d1(H);
  double loss = 0.0;
  for (Index mu = 0; mu < n; ++mu) {
    for (int i = 0; i < H; ++i) {
      double s = b1[i];
      for (int j = 0; j < D; ++j) s += W1[i + j * H] * X(mu, j);
      a1[i] = s;
      h1[i] = act(s);
    }
    for (int i = 0; i < H; ++i) {
      double s = b2[i];
      for (int j = 0; j < H; ++j) s += W2[i + j * H] * h1[j];
      a2[i] = s;
      h2[i] = act(s);
    }
    double f = b3;
    for (int i = 0; i < H; ++i) f += w3[i] * h2[i];
    const double res = f - y(mu);
    loss += res * res / static_cast<double>(n);
    const double r = 2.0 * res / static_cast<double>(n);
    g[net.off_b3()] += r;
    for (int i = 0; i < H; ++i) {
      g[net.off_w3() + i] += r * h2[i];
      d2[i] = r * w3[i] * act.derivative(a2[i]);
      g[net.off_b2() + i] += d2[i];
    }
    for (int j = 0; j < H; ++j) {
      double s = 0.0;
      for (int i = 0; i < H; ++i) {
        g[net.off_W2() + i + j * H] += d2[i] * h1[j];
        s += d2[i] * W2[i + j * H];
      }
      d1[j] = s * act.derivative(a1[j]);
      g[net.off_b1() + j] += d1[j];
    }
    for (int j = 0; j < D; ++j)
      for (int i = 0; i < H; ++i) g[i + j * H] += d1[i] * X(mu, j);
  }
  return loss;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay))
    throw ConfigError("weight_decay must be finite and >= 0");
  for (int e : checkpoint_epochs)
    if (e < 0 || e > epochs) throw ConfigError("checkpoint epoch outside [0, epochs]");
}

TrainResult train(MLP student, const MatrixXd& X, const VectorXd& y, const TrainConfig& config) {
  config.validate();
  check_batch(student, X, y);
  if (!y.allFinite() || !X.allFinite()) throw InputError("non-finite training data");

  std::vector<int> marks = config.checkpoint_epochs;
  std::sort(marks.begin(), marks.end());
  marks.erase(std::unique(marks.begin(), marks.end()), marks.end());
  auto next_mark = marks.begin();

  TrainResult out;
  VectorXd& w = student.params();
  const Index first_trainable = config.freeze_hidden ? student.off_w3() : 0;
  const Index ntrain = w.size() - first_trainable;
  VectorXd v = VectorXd::Zero(ntrain), grad;

  auto save = [&](int epoch) {
    while (next_mark != marks.end() && *next_mark == epoch) {
      out.checkpoints.push_back({epoch, w});
      ++next_mark;
    }
  };

  for (int e = 0;; ++e) {
    const bool last = e == config.epochs;
    double loss;
    if (last) {
      const VectorXd f = student.forward(X, config.parallel);
      loss = (f - y).squaredNorm() / static_cast<double>(y.size());
    } else {
      loss = loss_and_gradient(student, X, y, grad, config.parallel);
    }
    if (!std::isfinite(loss) || !w.allFinite()) {
      out.diverged = true;
      break;
    }
    out.train_loss.push_back(loss);
    out.epochs_completed = e;
    save(e);
    if (last) break;

    auto wt = w.tail(ntrain);
    v = config.momentum * v + grad.tail(ntrain) + config.weight_decay * wt;
    wt -= config.lr * v;
  }
  out.final_net = std::move(student);
  return out;
}

VectorXd Teacher::operator()(const MatrixXd& X, bool parallel) const {
  return scale * net.forward(X, parallel);
}

Teacher make_teacher(int D, int width, std::uint64_t seed, int probe) {
  if (probe < 2) throw ConfigError("teacher probe needs at least 2 samples");
  Teacher t;
  t.seed = seed;
  t.net = MLP::initialized(D, width, ActivationSpec::relu(), derive_seed(seed, {hash_name("weights")}));
  const MatrixXd Xp = gaussian_matrix(probe, D, derive_seed(seed, {hash_name("probe")}));
  const VectorXd f = t.net.forward(Xp);
  const double mean = f.mean();
  const double var = (f.array() - mean).square().sum() / static_cast<double>(probe);
  if (!(var >= 1e-12)) throw DegenerateTeacherError("teacher output variance below 1e-12; re-seed");
  t.scale = 1.0 / std::sqrt(var);
  return t;
}

VectorXd make_labels(const Teacher& teacher, const MatrixXd& X, double snr,
                     std::uint64_t noise_seed) {
  if (!(snr > 0.0)) throw ConfigError("snr must be positive");
  VectorXd y = teacher(X);
  if (std::isfinite(snr)) y += gaussian_vector(X.rows(), noise_seed, 1.0 / std::sqrt(snr));
  return y;
}

namespace {
constexpr const char* kCheckpointFormat = "tdlab-mlp-checkpoint";
}

void write_checkpoint(const std::filesystem::path& path, const MLP& net,
                      const CheckpointHeader& header) {
  nlohmann::json h = {
      {"format", kCheckpointFormat},
      {"version", 1},
      {"dtype", "float64-le"},
      {"layout", {"W1", "b1", "W2", "b2", "w3", "b3"}},
      {"D", net.D()},
      {"H", net.H()},
      {"activation", net.activation().name()},
      {"param_count", net.size()},
      {"epoch", header.epoch},
      {"init_seed", header.init_seed},
      {"teacher_seed", header.teacher_seed},
      {"momentum_convention", kMomentumConvention},
  };
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open " + path.string() + " for writing");
  os << h.dump() << '\n';
  for (Index i = 0; i < net.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(net.params()(i));
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    unsigned char buf[8];
    std::memcpy(buf, &bits, 8);
    os.write(reinterpret_cast<const char*>(buf), 8);
  }
  if (!os) throw InputError("write failed: " + path.string());
}

MLP read_checkpoint(const std::filesystem::path& path, CheckpointHeader* header) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw FormatError("missing checkpoint header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }
  if (!h.is_object() || h.value("format", "") != kCheckpointFormat)
    throw FormatError("not a checkpoint file");
  CheckpointHeader hd;
  try {
    hd.D = h.at("D").get<int>();
    hd.H = h.at("H").get<int>();
    hd.activation = h.at("activation").get<std::string>();
    hd.epoch = h.at("epoch").get<int>();
    hd.init_seed = h.at("init_seed").get<std::uint64_t>();
    hd.teacher_seed = h.at("teacher_seed").get<std::uint64_t>();
    hd.param_count = h.at("param_count").get<Index>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("incomplete checkpoint header: ") + e.what());
  }
  if (hd.D < 1 || hd.H < 1 || hd.param_count != MLP::param_count(hd.D, hd.H))
    throw FormatError("inconsistent checkpoint shape");
  MLP net(hd.D, hd.H, ActivationSpec::parse(hd.activation));
  for (Index i = 0; i < hd.param_count; ++i) {
    unsigned char buf[8];
    if (!is.read(reinterpret_cast<char*>(buf), 8)) throw FormatError("truncated checkpoint payload");
    std::uint64_t bits;
    std::memcpy(&bits, buf, 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    net.params()(i) = std::bit_cast<double>(bits);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in checkpoint");
  if (header) *header = hd;
  return net;
}

std::uint64_t NNSeeds::teacher() const { return derive_seed(master, {hash_name("nn-teacher")}); }
std::uint64_t NNSeeds::test() const { return derive_seed(master, {hash_name("nn-test")}); }
std::uint64_t NNSeeds::data(int k) const {
  return derive_seed(master, {hash_name("nn-data"), static_cast<std::uint64_t>(k)});
}
std::uint64_t NNSeeds::noise(int k) const {
  return derive_seed(master, {hash_name("nn-noise"), static_cast<std::uint64_t>(k)});
}
std::uint64_t NNSeeds::init(int width, int k) const {
  return derive_seed(master, {hash_name("nn-init"), static_cast<std::uint64_t>(width),
                              static_cast<std::uint64_t>(k)});
}

NNExperiment::NNExperiment(NNPhaseOptions opt) : opt_(std::move(opt)) {
  opt_.config.validate();
  if (opt_.widths.empty() || opt_.n_grid.empty()) throw ConfigError("empty width or N grid");
  if (opt_.K < 1) throw ConfigError("K must be >= 1");
  if (opt_.m_test < 1) throw ConfigError("m_test must be positive");
  for (int h : opt_.widths)
    if (h < 1) throw ConfigError("widths must be >= 1");
  for (int n : opt_.n_grid)
    if (n < 1) throw ConfigError("grid N must be >= 1");

  epochs_ = opt_.config.checkpoint_epochs;
  if (epochs_.empty()) epochs_.push_back(opt_.config.epochs);
  std::sort(epochs_.begin(), epochs_.end());
  epochs_.erase(std::unique(epochs_.begin(), epochs_.end()), epochs_.end());
  opt_.config.checkpoint_epochs = epochs_;

  const NNSeeds seeds{opt_.seed};
  teacher_ = make_teacher(opt_.D, opt_.teacher_width, seeds.teacher(), opt_.teacher_probe);
  n_max_ = *std::max_element(opt_.n_grid.begin(), opt_.n_grid.end());
  test_X_ = gaussian_matrix(opt_.m_test, opt_.D, seeds.test());
  test_target_ = teacher_(test_X_);
}

const NNExperiment::DataSet& NNExperiment::data(int set) const {
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = data_.find(set);
  if (it == data_.end()) {
    const NNSeeds seeds{opt_.seed};
    DataSet d;
    d.X = gaussian_matrix(n_max_, opt_.D, seeds.data(set));
    d.y = make_labels(teacher_, d.X, opt_.snr, seeds.noise(set));
    it = data_.emplace(set, std::move(d)).first;
  }
  return it->second;
}

NNExperiment::Run NNExperiment::run(int width, int N, int data_set, int init_index) const {
  const NNSeeds seeds{opt_.seed};
  const DataSet& d = data(data_set);
  TrainConfig cfg = opt_.config;
  cfg.parallel = false;
  MLP net = MLP::initialized(opt_.D, width, opt_.activation, seeds.init(width, init_index));
  const TrainResult res = train(net, d.X.topRows(N), d.y.head(N), cfg);
  Run out;
  out.diverged = res.diverged;
  out.predictions.assign(epochs_.size(), VectorXd());
  out.train_loss.assign(epochs_.size(), std::numeric_limits<double>::quiet_NaN());
  for (const auto& ck : res.checkpoints) {
    const auto e = static_cast<std::size_t>(
        std::lower_bound(epochs_.begin(), epochs_.end(), ck.epoch) - epochs_.begin());
    net.params() = ck.params;
    out.predictions[e] = net.forward(test_X_, false);
    out.train_loss[e] = res.train_loss[static_cast<std::size_t>(ck.epoch)];
  }
  return out;
}

double NNExperiment::test_loss(const VectorXd& prediction) const {
  return (prediction - test_target_).squaredNorm() / static_cast<double>(test_target_.size());
}

std::vector<NNCell> NNExperiment::aggregate(int width, int N, const std::vector<Run>& runs) const {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<NNCell> cells;
  for (std::size_t e = 0; e < epochs_.size(); ++e) {
    NNCell c;
    c.width = width;
    c.P = MLP::param_count(opt_.D, width);
    c.N = N;
    c.epoch = epochs_[e];
    c.runs = static_cast<int>(runs.size());
    std::vector<double> losses, trains;
    VectorXd avg = VectorXd::Zero(opt_.m_test);
    for (const auto& r : runs) {
      if (r.predictions[e].size() == 0) {
        ++c.diverged;
        continue;
      }
      losses.push_back(test_loss(r.predictions[e]));
      trains.push_back(r.train_loss[e]);
      avg += r.predictions[e];
    }
    c.train_loss = trains.empty() ? Summary{nan, nan} : summarize(trains);
    if (opt_.mode == EnsembleMode::IndependentMean) {
      c.test_loss = losses.empty() ? Summary{nan, nan} : summarize(losses);
    } else if (c.diverged > 0) {
      c.test_loss = {nan, nan};
    } else {
      avg /= static_cast<double>(runs.size());
      const auto st = kernels::squared_error_stats(avg, test_target_);
      c.test_loss = {st.mean, st.stderr};
    }
    cells.push_back(c);
  }
  return cells;
}

std::vector<NNCell> nn_phase_space(const NNPhaseOptions& opt) {
  const NNExperiment ex(opt);
  const std::size_t nw = opt.widths.size(), nn = opt.n_grid.size();
  const auto K = static_cast<std::size_t>(opt.K);
  const std::size_t items = nw * nn * K;
  const bool shared = opt.mode == EnsembleMode::Prediction;
  for (int k = 0; k < (shared ? 1 : opt.K); ++k) ex.data(k);
  std::vector<NNExperiment::Run> runs(items);

#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t it = 0; it < items; ++it) {
    const std::size_t k = it % K, in = (it / K) % nn, iw = it / (K * nn);
    const int ki = static_cast<int>(k);
    runs[it] = ex.run(opt.widths[iw], opt.n_grid[in], shared ? 0 : ki, ki);
  }

  std::vector<NNCell> cells;
  for (std::size_t iw = 0; iw < nw; ++iw)
    for (std::size_t in = 0; in < nn; ++in) {
      const std::vector<NNExperiment::Run> group(runs.begin() + static_cast<std::ptrdiff_t>((iw * nn + in) * K),
                                                 runs.begin() + static_cast<std::ptrdiff_t>((iw * nn + in + 1) * K));
      for (auto& c : ex.aggregate(opt.widths[iw], opt.n_grid[in], group)) cells.push_back(c);
    }
  return cells;
}

}  // namespace tdlab::nnsim
