#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <omp.h>

#include "doctest.h"
#include "tdlab/errors.hpp"
#include "tdlab/nnsim.hpp"
#include "tdlab/rng.hpp"

using namespace tdlab;
using namespace tdlab::nnsim;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double loss_only(const MLP& net, const MatrixXd& X, const VectorXd& y) {
  return (net.forward(X) - y).squaredNorm() / static_cast<double>(y.size());
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "tdlab_test_nnsim";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("initialization bounds follow the fan-in of each layer") {
  const MLP net = MLP::initialized(30, 12, ActivationSpec::tanh(), 5);
  CHECK(net.size() == 12 * 30 + 12 + 144 + 12 + 12 + 1);
  CHECK(net.W1().cwiseAbs().maxCoeff() <= 1 / std::sqrt(30.0));
  CHECK(net.b1().cwiseAbs().maxCoeff() <= 1 / std::sqrt(30.0));
  CHECK(net.W2().cwiseAbs().maxCoeff() <= 1 / std::sqrt(12.0));
  CHECK(net.w3().cwiseAbs().maxCoeff() <= 1 / std::sqrt(12.0));
  // the bound is used, not a fraction of it
  CHECK(net.W1().cwiseAbs().maxCoeff() > 0.9 / std::sqrt(30.0));
  CHECK(net.W2().cwiseAbs().maxCoeff() > 0.8 / std::sqrt(12.0));
  const MLP again = MLP::initialized(30, 12, ActivationSpec::tanh(), 5);
  CHECK(again.params() == net.params());
}

TEST_CASE("gradient matches central finite differences") {
  for (const auto& act : {ActivationSpec::tanh(), ActivationSpec::linear()}) {
    CAPTURE(act.name());
    MLP net = MLP::initialized(7, 5, act, 11);
    const MatrixXd X = gaussian_matrix(13, 7, 1);
    const VectorXd y = gaussian_vector(13, 2);
    VectorXd g;
    loss_and_gradient(net, X, y, g);
    const Index groups[7] = {0, net.off_b1(), net.off_W2(), net.off_b2(), net.off_w3(), net.off_b3(),
                             net.size()};
    std::mt19937_64 gen(3);
    const double h = 1e-5;
    for (int grp = 0; grp < 6; ++grp) {
      std::uniform_int_distribution<Index> pick(groups[grp], groups[grp + 1] - 1);
      for (int probe = 0; probe < 10; ++probe) {
        const Index i = pick(gen);
        const double w0 = net.params()(i);
        net.params()(i) = w0 + h;
        const double up = loss_only(net, X, y);
        net.params()(i) = w0 - h;
        const double dn = loss_only(net, X, y);
        net.params()(i) = w0;
        const double fd = (up - dn) / (2 * h);
        const double rel = std::abs(g(i) - fd) / std::max({std::abs(g(i)), std::abs(fd), 1e-8});
        CAPTURE(i);
        CHECK(rel < 1e-5);
      }
    }
  }
}

TEST_CASE("blocked gradient agrees with the scalar reference") {
  for (const auto& act : {ActivationSpec::tanh(), ActivationSpec::relu()}) {
    const MLP net = MLP::initialized(9, 6, act, 4);
    const MatrixXd X = gaussian_matrix(3 * kGradBlock + 17, 9, 5);
    const VectorXd y = gaussian_vector(X.rows(), 6);
    VectorXd g, gr;
    const double l = loss_and_gradient(net, X, y, g);
    const double lr = loss_and_gradient_reference(net, X, y, gr);
    CHECK(l == doctest::Approx(lr).epsilon(1e-13));
    CHECK((g - gr).lpNorm<Eigen::Infinity>() <= 1e-13 * std::max(1.0, gr.lpNorm<Eigen::Infinity>()));
  }
}

TEST_CASE("gradient and training are bitwise independent of the worker count") {
  const MLP net = MLP::initialized(8, 6, ActivationSpec::tanh(), 9);
  const MatrixXd X = gaussian_matrix(5 * kGradBlock + 3, 8, 7);
  const VectorXd y = gaussian_vector(X.rows(), 8);
  VectorXd g1, g4, gs;
  omp_set_num_threads(1);
  const double l1 = loss_and_gradient(net, X, y, g1);
  omp_set_num_threads(4);
  const double l4 = loss_and_gradient(net, X, y, g4);
  const double ls = loss_and_gradient(net, X, y, gs, false);
  CHECK(l1 == l4);
  CHECK(l1 == ls);
  CHECK(g1 == g4);
  CHECK(g1 == gs);
  TrainConfig cfg;
  cfg.epochs = 20;
  const auto a = train(net, X, y, cfg);
  omp_set_num_threads(1);
  const auto b = train(net, X, y, cfg);
  CHECK(a.final_net.params() == b.final_net.params());
  CHECK(a.train_loss == b.train_loss);
}

TEST_CASE("one step on a linear chain equals the hand-computed gradient") {
  const int D = 4, H = 3;
  const MLP net = MLP::initialized(D, H, ActivationSpec::linear(), 21);
  const MatrixXd X = gaussian_matrix(1, D, 22);
  const VectorXd y = VectorXd::Constant(1, 0.7);
  const VectorXd x = X.row(0).transpose();
  const VectorXd h1 = net.W1() * x + net.b1();
  const VectorXd h2 = net.W2() * h1 + net.b2();
  const double r = 2 * (net.w3().dot(h2) + net.b3() - y(0));
  const VectorXd back = net.W2().transpose() * net.w3();
  VectorXd g(net.size());
  Eigen::Map<MatrixXd>(g.data(), H, D) = r * back * x.transpose();
  g.segment(net.off_b1(), H) = r * back;
  Eigen::Map<MatrixXd>(g.data() + net.off_W2(), H, H) = r * net.w3() * h1.transpose();
  g.segment(net.off_b2(), H) = r * net.w3();
  g.segment(net.off_w3(), H) = r * h2;
  g(net.off_b3()) = r;

  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.lr = 0.05;
  cfg.momentum = 0.0;
  const auto res = train(net, X, y, cfg);
  const VectorXd step = (net.params() - res.final_net.params()) / cfg.lr;
  CHECK((step - g).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("heavy-ball update with weight decay follows the documented rule") {
  const MLP net = MLP::initialized(5, 4, ActivationSpec::tanh(), 2);
  const MatrixXd X = gaussian_matrix(20, 5, 3);
  const VectorXd y = gaussian_vector(20, 4);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.lr = 0.02;
  cfg.momentum = 0.8;
  cfg.weight_decay = 0.1;
  MLP m = net;
  VectorXd v = VectorXd::Zero(m.size()), g;
  for (int e = 0; e < 3; ++e) {
    loss_and_gradient(m, X, y, g);
    v = cfg.momentum * v + g + cfg.weight_decay * m.params();
    m.params() -= cfg.lr * v;
  }
  const auto res = train(net, X, y, cfg);
  CHECK((res.final_net.params() - m.params()).lpNorm<Eigen::Infinity>() < 1e-14);
  CHECK(res.train_loss.size() == 4);
}

TEST_CASE("zero learning rate leaves weights and loss unchanged") {
  const MLP net = MLP::initialized(6, 5, ActivationSpec::relu(), 8);
  const MatrixXd X = gaussian_matrix(40, 6, 1);
  const VectorXd y = gaussian_vector(40, 2);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.lr = 0.0;
  const auto res = train(net, X, y, cfg);
  CHECK(res.final_net.params() == net.params());
  for (double l : res.train_loss) CHECK(l == res.train_loss.front());
}

TEST_CASE("teacher normalization and label noise") {
  const Teacher a = make_teacher(20, 100, 17);
  const Teacher b = make_teacher(20, 100, 17);
  CHECK(a.net.params() == b.net.params());
  CHECK(a.scale == b.scale);
  const MatrixXd Xf = gaussian_matrix(100000, 20, 99);
  const VectorXd clean = a(Xf);
  const double var = (clean.array() - clean.mean()).square().mean();
  CHECK(std::abs(var - 1.0) < 0.05);
  const VectorXd y = make_labels(a, Xf, 0.2, 5);
  const double vy = (y.array() - y.mean()).square().mean();
  CHECK(std::abs(vy - 6.0) < 0.2);
  CHECK((make_labels(a, Xf.topRows(10), kInfiniteSnr, 5) - clean.head(10)).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("student equal to the teacher has zero loss") {
  const Teacher t = make_teacher(10, 12, 3, 20000);
  MLP student = t.net;
  student.params().tail(13) *= t.scale;  // w3 and b3 absorb the output scale
  const MatrixXd X = gaussian_matrix(200, 10, 4);
  const VectorXd y = make_labels(t, X, kInfiniteSnr, 0);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.lr = 0.0;
  const auto res = train(student, X, y, cfg);
  CHECK(res.train_loss.back() < 1e-10);
  const MatrixXd Xt = gaussian_matrix(1000, 10, 5);
  CHECK((res.final_net.forward(Xt) - t(Xt)).squaredNorm() / 1000 < 1e-10);
}

TEST_CASE("frozen hidden layers converge to the ridge solution of their features") {
  const int D = 6, H = 8, N = 200;
  const double wd = 0.05;
  const MLP net = MLP::initialized(D, H, ActivationSpec::tanh(), 31);
  const MatrixXd X = gaussian_matrix(N, D, 32);
  const VectorXd y = gaussian_vector(N, 33);
  TrainConfig cfg;
  cfg.epochs = 6000;
  cfg.weight_decay = wd;
  cfg.freeze_hidden = true;
  const auto res = train(net, X, y, cfg);
  CHECK(res.final_net.params().head(net.off_w3()) == net.params().head(net.off_w3()));

  // gradient of mean sq loss + wd w  <=>  ridge (1/N)|y - Z a|^2 + (wd/2)|a|^2
  MatrixXd Z(N, H + 1);
  Z.leftCols(H) = net.hidden(X);
  Z.col(H).setOnes();
  const VectorXd a = RidgeFactorization(Z).solve(y, wd / 2);
  const VectorXd got = res.final_net.params().tail(H + 1);
  CHECK((got - a).lpNorm<Eigen::Infinity>() < 1e-3);
}

TEST_CASE("weight decay shrinks the weights on pure-noise labels") {
  const MLP net = MLP::initialized(10, 10, ActivationSpec::tanh(), 41);
  const MatrixXd X = gaussian_matrix(60, 10, 42);
  const VectorXd y = gaussian_vector(60, 43, 1 / std::sqrt(0.2));
  TrainConfig cfg;
  cfg.epochs = 400;
  const double free = train(net, X, y, cfg).final_net.params().norm();
  cfg.weight_decay = 0.05;
  const double decayed = train(net, X, y, cfg).final_net.params().norm();
  CHECK(decayed < free);
}

TEST_CASE("divergence halts training and keeps the partial trajectory") {
  const MLP net = MLP::initialized(5, 5, ActivationSpec::linear(), 1);
  const MatrixXd X = 10 * gaussian_matrix(30, 5, 2);
  const VectorXd y = gaussian_vector(30, 3);
  TrainConfig cfg;
  cfg.epochs = 1000;
  cfg.lr = 5.0;
  cfg.checkpoint_epochs = {0, 1000};
  const auto res = train(net, X, y, cfg);
  CHECK(res.diverged);
  CHECK(res.epochs_completed < 1000);
  CHECK(res.train_loss.size() == static_cast<std::size_t>(res.epochs_completed) + 1);
  for (double l : res.train_loss) CHECK(std::isfinite(l));
  REQUIRE(res.checkpoints.size() == 1);
  CHECK(res.checkpoints[0].epoch == 0);
}

TEST_CASE("checkpoints match shorter runs") {
  const MLP net = MLP::initialized(6, 5, ActivationSpec::tanh(), 51);
  const MatrixXd X = gaussian_matrix(50, 6, 52);
  const VectorXd y = gaussian_vector(50, 53);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.checkpoint_epochs = {30, 0, 10, 10};
  const auto full = train(net, X, y, cfg);
  REQUIRE(full.checkpoints.size() == 3);
  CHECK(full.checkpoints[0].epoch == 0);
  CHECK(full.checkpoints[0].params == net.params());
  cfg.epochs = 10;
  cfg.checkpoint_epochs.clear();
  const auto part = train(net, X, y, cfg);
  CHECK(full.checkpoints[1].params == part.final_net.params());
  CHECK(full.train_loss[10] == part.train_loss.back());
  CHECK(full.checkpoints[2].params == full.final_net.params());
}

TEST_CASE("checkpoint files round-trip") {
  const MLP net = MLP::initialized(7, 4, ActivationSpec::piecewise_linear(0.25), 61);
  const auto path = scratch("ck.bin");
  CheckpointHeader h;
  h.epoch = 100;
  h.init_seed = 61;
  h.teacher_seed = 0xFFFFFFFFFFFFFFFFULL;
  write_checkpoint(path, net, h);
  CheckpointHeader got;
  const MLP back = read_checkpoint(path, &got);
  CHECK(back.params() == net.params());
  CHECK(back.activation().kind() == ActivationKind::PiecewiseLinear);
  CHECK(got.epoch == 100);
  CHECK(got.teacher_seed == h.teacher_seed);
  CHECK(got.param_count == net.size());
  CHECK(std::filesystem::file_size(path) > static_cast<std::uintmax_t>(8 * net.size()));

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  CHECK_THROWS_AS(read_checkpoint(path), FormatError);
  {
    std::ofstream os(path, std::ios::binary);
    os << "{\"format\":\"something-else\"}\n";
  }
  CHECK_THROWS_AS(read_checkpoint(path), FormatError);
  {
    std::ofstream os(path, std::ios::binary);
    os << "not json\n";
  }
  CHECK_THROWS_AS(read_checkpoint(path), FormatError);
}

TEST_CASE("configuration errors") {
  TrainConfig cfg;
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.momentum = 0.9;
  cfg.lr = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.lr = 0.01;
  cfg.checkpoint_epochs = {cfg.epochs + 1};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(MLP(0, 3, ActivationSpec::tanh()), ConfigError);
  const MLP net = MLP::initialized(3, 3, ActivationSpec::tanh(), 1);
  VectorXd g;
  CHECK_THROWS_AS(loss_and_gradient(net, MatrixXd::Zero(4, 2), VectorXd::Zero(4), g), ConfigError);
}

TEST_CASE("phase space is deterministic and worker-count independent") {
  NNPhaseOptions o;
  o.D = 6;
  o.widths = {4, 6};
  o.n_grid = {5, 12, 30};
  o.K = 3;
  o.m_test = 300;
  o.teacher_probe = 5000;
  o.config.epochs = 40;
  o.config.checkpoint_epochs = {10, 40};
  o.seed = 77;
  omp_set_num_threads(1);
  const auto a = nn_phase_space(o);
  omp_set_num_threads(3);
  const auto b = nn_phase_space(o);
  omp_set_num_threads(1);
  REQUIRE(a.size() == 2 * 3 * 2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].test_loss.mean == b[i].test_loss.mean);
    CHECK(a[i].test_loss.stderr == b[i].test_loss.stderr);
    CHECK(a[i].train_loss.mean == b[i].train_loss.mean);
    CHECK(a[i].diverged == 0);
  }
  CHECK(a[0].width == 4);
  CHECK(a[0].P == MLP::param_count(6, 4));
  CHECK(a[0].epoch == 10);
  CHECK(a[1].epoch == 40);

  // a one-member ensemble is the single run
  o.K = 1;
  const auto m = nn_phase_space(o);
  o.mode = EnsembleMode::Prediction;
  const auto p = nn_phase_space(o);
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(m[i].test_loss.mean == doctest::Approx(p[i].test_loss.mean).epsilon(1e-14));

  // the cell matches a standalone training run
  const NNSeeds s{77};
  const Teacher t = make_teacher(6, kTeacherWidth, s.teacher(), 5000);
  const MatrixXd X = gaussian_matrix(12, 6, s.data(0));
  const VectorXd y = make_labels(t, X, o.snr, s.noise(0));
  TrainConfig cfg = o.config;
  const auto run = train(MLP::initialized(6, 4, o.activation, s.init(4, 0)), X, y, cfg);
  const MatrixXd Xt = gaussian_matrix(300, 6, s.test());
  const double loss = (run.final_net.forward(Xt) - t(Xt)).squaredNorm() / 300;
  CHECK(m[3].N == 12);
  CHECK(m[3].epoch == 40);
  CHECK(m[3].test_loss.mean == doctest::Approx(loss).epsilon(1e-12));
}
