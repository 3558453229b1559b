#pragma once

// Teacher-student simulator for fully connected D -> H -> H -> 1 networks
// trained by full-batch gradient descent with heavy-ball momentum.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tdlab/activation.hpp"
#include "tdlab/rfcore.hpp"

namespace tdlab::nnsim {

/// Rows per gradient chunk. Chunk sums are reduced in chunk order, so the
/// gradient is bitwise identical for any number of workers.
inline constexpr Eigen::Index kGradBlock = 256;

inline constexpr const char* kMomentumConvention =
    "g = grad(mean sq loss) + weight_decay * w; v = momentum * v + g; w -= lr * v; v0 = 0";

/// Parameters live in one flat vector laid out as
///   W1 (H x D, column-major), b1 (H), W2 (H x H, column-major), b2 (H),
///   w3 (H), b3 (1).
/// Hidden layers apply the activation; the output layer is linear.
class MLP {
 public:
  MLP() = default;
  MLP(int D, int H, ActivationSpec act);

  /// Every entry ~ Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) of its layer.
  static MLP initialized(int D, int H, ActivationSpec act, std::uint64_t seed);
  static Eigen::Index param_count(int D, int H);

  int D() const { return D_; }
  int H() const { return H_; }
  Eigen::Index size() const { return w_.size(); }
  const ActivationSpec& activation() const { return act_; }
  std::uint64_t init_seed() const { return seed_; }

  Eigen::VectorXd& params() { return w_; }
  const Eigen::VectorXd& params() const { return w_; }

  Eigen::Map<const Eigen::MatrixXd> W1() const;
  Eigen::Map<const Eigen::VectorXd> b1() const;
  Eigen::Map<const Eigen::MatrixXd> W2() const;
  Eigen::Map<const Eigen::VectorXd> b2() const;
  Eigen::Map<const Eigen::VectorXd> w3() const;
  double b3() const { return w_(w_.size() - 1); }

  // offsets into the flat vector
  Eigen::Index off_b1() const { return Eigen::Index{H_} * D_; }
  Eigen::Index off_W2() const { return off_b1() + H_; }
  Eigen::Index off_b2() const { return off_W2() + Eigen::Index{H_} * H_; }
  Eigen::Index off_w3() const { return off_b2() + H_; }
  Eigen::Index off_b3() const { return off_w3() + H_; }

  /// Outputs for the rows of X (n x D).
  Eigen::VectorXd forward(const Eigen::MatrixXd& X, bool parallel = true) const;
  /// Second hidden layer activations (n x H).
  Eigen::MatrixXd hidden(const Eigen::MatrixXd& X) const;

 private:
  int D_ = 0, H_ = 0;
  ActivationSpec act_ = ActivationSpec::linear();
  std::uint64_t seed_ = 0;
  Eigen::VectorXd w_;
};

/// Mean squared loss (1/n) sum (f(x) - y)^2 and its gradient, by row chunks.
double loss_and_gradient(const MLP& net, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         Eigen::VectorXd& grad, bool parallel = true);
/// Per-sample scalar backpropagation; oracle and benchmark baseline.
double loss_and_gradient_reference(const MLP& net, const Eigen::MatrixXd& X,
                                   const Eigen::VectorXd& y, Eigen::VectorXd& grad);

struct TrainConfig {
  int epochs = 1000;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  /// Train only the output layer (w3, b3); hidden layers stay at init.
  bool freeze_hidden = false;
  /// Epoch marks at which parameters are saved (0 = initialization).
  std::vector<int> checkpoint_epochs;
  bool parallel = true;

  void validate() const;
};

struct Checkpoint {
  int epoch = 0;
  Eigen::VectorXd params;
};

struct TrainResult {
  /// train_loss[e]: loss after e updates, e = 0..epochs_completed.
  std::vector<double> train_loss;
  std::vector<Checkpoint> checkpoints;
  int epochs_completed = 0;
  bool diverged = false;
  MLP final_net;
};

/// Full-batch training per kMomentumConvention. A non-finite loss or
/// parameter halts training with diverged = true and the partial trajectory.
TrainResult train(MLP student, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                  const TrainConfig& config);

inline constexpr int kTeacherWidth = 100;
inline constexpr int kTeacherProbe = 100000;

/// Untrained ReLU network scaled so that scale * net(x) has unit variance on
/// a fixed Gaussian probe set drawn from the teacher seed.
struct Teacher {
  MLP net;
  double scale = 1.0;
  std::uint64_t seed = 0;

  Eigen::VectorXd operator()(const Eigen::MatrixXd& X, bool parallel = true) const;
};

/// Throws DegenerateTeacherError when the probe variance is below 1e-12.
Teacher make_teacher(int D, int width, std::uint64_t seed, int probe = kTeacherProbe);

/// Labels y = teacher(x) + eps, eps ~ N(0, 1/snr) from the noise stream
/// (entry i from row stream i, nested across n).
Eigen::VectorXd make_labels(const Teacher& teacher, const Eigen::MatrixXd& X, double snr,
                            std::uint64_t noise_seed);

// Checkpoint files: one JSON header line, then the flat parameters as
// little-endian float64.
struct CheckpointHeader {
  int D = 0, H = 0;
  std::string activation;
  int epoch = 0;
  std::uint64_t init_seed = 0;
  std::uint64_t teacher_seed = 0;
  Eigen::Index param_count = 0;
};
void write_checkpoint(const std::filesystem::path& path, const MLP& net,
                      const CheckpointHeader& header);
/// Throws FormatError on a malformed header or truncated payload.
MLP read_checkpoint(const std::filesystem::path& path, CheckpointHeader* header = nullptr);

enum class EnsembleMode {
  IndependentMean,  ///< mean and stderr of K single-run test losses
  Prediction,       ///< loss of the K-averaged predictor
};

struct NNPhaseOptions {
  int D = 196;
  std::vector<int> widths{100};
  std::vector<int> n_grid;
  ActivationSpec activation = ActivationSpec::tanh();
  double snr = 0.2;
  TrainConfig config;  ///< checkpoint_epochs select the reported epochs
  int K = 10;
  EnsembleMode mode = EnsembleMode::IndependentMean;
  int m_test = 10000;
  int teacher_width = kTeacherWidth;
  int teacher_probe = kTeacherProbe;
  std::uint64_t seed = 0;
};

struct NNCell {
  int width = 0;
  Eigen::Index P = 0;  ///< parameter count of the student
  int N = 0;
  int epoch = 0;
  Summary test_loss;   ///< NaN when every run diverged
  Summary train_loss;
  int runs = 0;
  int diverged = 0;
};

/// Seed streams. Teacher and test set are shared by every cell. Training set
/// j (inputs and label noise) is nested across N and shared across widths.
/// nn_phase_space trains run k on set k with init(h, k); in Prediction mode
/// every member uses set 0.
struct NNSeeds {
  std::uint64_t master = 0;
  std::uint64_t teacher() const;
  std::uint64_t test() const;
  std::uint64_t data(int k) const;
  std::uint64_t noise(int k) const;
  std::uint64_t init(int width, int k) const;
};

/// Shared state of a phase-space experiment: teacher, test set and the
/// per-run training sets (built lazily, thread-safe).
class NNExperiment {
 public:
  explicit NNExperiment(NNPhaseOptions opt);

  struct Run {
    std::vector<Eigen::VectorXd> predictions;  ///< per reported epoch; empty when missing
    std::vector<double> train_loss;
    bool diverged = false;
  };
  struct DataSet {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
  };

  const NNPhaseOptions& options() const { return opt_; }
  /// Reported epochs, ascending.
  const std::vector<int>& epochs() const { return epochs_; }
  const Teacher& teacher() const { return teacher_; }
  const DataSet& data(int set) const;

  /// Student of the given width initialized from init(width, init_index) and
  /// trained on the first N samples of a training set.
  Run run(int width, int N, int data_set, int init_index) const;
  double test_loss(const Eigen::VectorXd& prediction) const;
  /// Cells for one (width, N) from its runs, in epoch order.
  std::vector<NNCell> aggregate(int width, int N, const std::vector<Run>& runs) const;

 private:
  NNPhaseOptions opt_;
  std::vector<int> epochs_;
  Teacher teacher_;
  int n_max_ = 0;
  Eigen::MatrixXd test_X_;
  Eigen::VectorXd test_target_;
  mutable std::mutex mutex_;
  mutable std::map<int, DataSet> data_;
};

/// Test loss against the noiseless teacher at every (width, N, checkpoint).
/// Training runs are independent work items executed in parallel.
std::vector<NNCell> nn_phase_space(const NNPhaseOptions& opt);

}  // namespace tdlab::nnsim
