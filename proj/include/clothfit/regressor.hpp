#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "clothfit/mesh.hpp"
#include "clothfit/rig.hpp"

namespace clothfit {

// One reconstructed frame of a sequence: the posed garment and its pose.
struct PosedGarment {
  int frame = 0;
  Pose pose;
  TriMesh mesh;
};
using GarmentSequence = std::vector<PosedGarment>;

struct GarmentSample {
  Pose pose;
  Positions offsets;  // unposed garment minus the dataset mean, meters
  int sequence = 0;
  int frame = 0;
};

struct SkippedFrame {
  int sequence = 0;
  int frame = 0;
  std::string reason;
};

struct GarmentDataset {
  std::vector<GarmentSample> samples;
  TriMesh mean_unposed;               // average unposed garment, shared faces
  std::vector<SkippedFrame> skipped;  // frames whose unposing was singular
};

// Offsets at or above this length (meters) mean a broken reconstruction.
constexpr double kMaxOffset = 0.5;

// Unposes every frame, averages the unposed meshes and stores offsets from
// that average. Throws InvalidArgument when topologies differ or nothing is
// left, NumericalError when an offset reaches kMaxOffset.
GarmentDataset build_dataset(const std::vector<GarmentSequence>& sequences, const RigBundle& rig,
                             double max_condition = 1e6);

// PCA of axis-angle poses.
class PoseEncoder {
 public:
  PoseEncoder() = default;
  // Throws InvalidArgument unless the basis columns are orthonormal (1e-6)
  // and the sizes agree.
  PoseEncoder(Eigen::VectorXd mean, Eigen::MatrixXd basis, Eigen::VectorXd stddev);

  Eigen::VectorXd encode(const Pose& pose) const;
  Pose decode(const Eigen::VectorXd& code) const;

  int pose_size() const { return static_cast<int>(mean_.size()); }
  int mode_count() const { return static_cast<int>(basis_.cols()); }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& basis() const { return basis_; }
  const Eigen::VectorXd& stddev() const { return stddev_; }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd basis_;
  Eigen::VectorXd stddev_;
};

// Top principal directions of the centered poses, each flipped so that its
// largest-magnitude entry is positive. Needs at least modes + 1 distinct
// poses and full rank, else InvalidArgument.
PoseEncoder fit_pose_encoder(const std::vector<Pose>& poses, int modes = 10);

// Three dense layers, LeakyReLU and dropout after the first two.
template <class Scalar>
struct Mlp {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix w1, w2, w3;
  Vector b1, b2, b3;

  int inputs() const { return static_cast<int>(w1.cols()); }
  int hidden() const { return static_cast<int>(w1.rows()); }
  int outputs() const { return static_cast<int>(w3.rows()); }
  std::size_t parameter_count() const;
  // Zero weights and biases of the same shapes.
  Mlp zeros_like() const;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for the first two layers, zeros
// for the last one and for all biases.
template <class Scalar>
Mlp<Scalar> init_mlp(int inputs, int hidden, int outputs, std::mt19937_64& rng);

// Intermediate values kept for the backward pass; one column per sample.
template <class Scalar>
struct MlpTape {
  typename Mlp<Scalar>::Matrix x, z1, keep1, z2, keep2, h1, h2;
};

// x holds one sample per column. Dropout is applied (inverted scaling) only
// when `rng` is given.
template <class Scalar>
typename Mlp<Scalar>::Matrix mlp_forward(const Mlp<Scalar>& net, const typename Mlp<Scalar>::Matrix& x,
                                         double slope, double dropout, std::mt19937_64* rng,
                                         MlpTape<Scalar>* tape = nullptr);

// Gradients of a scalar loss given dL/dy; overwrites `grad`.
template <class Scalar>
void mlp_backward(const Mlp<Scalar>& net, const MlpTape<Scalar>& tape, const typename Mlp<Scalar>::Matrix& dy,
                  double slope, Mlp<Scalar>& grad);

struct LossWeights {
  double offset = 1.0;
  double normal = 1.0;
};

// Mean absolute errors; `normal` is empty when its weight is zero.
struct LossValue {
  double offset = 0.0;
  std::optional<double> normal;
  double total(const LossWeights& w) const { return w.offset * offset + (normal ? w.normal * *normal : 0.0); }
};

// What the loss needs besides the network output.
struct LossContext {
  Positions mean_unposed;
  Faces faces;
  Eigen::VectorXd out_mean, out_std;  // per flattened offset coordinate
  LossWeights weights;
};

// L1 between predicted and target offsets plus L1 between vertex normals of
// mean + offsets. `y` holds normalized outputs, one column per sample. When
// `dy` is given it receives d total / d y.
template <class Scalar>
LossValue regression_loss(const LossContext& ctx, const typename Mlp<Scalar>::Matrix& y,
                          const std::vector<const Positions*>& target_offsets,
                          const std::vector<const Positions*>& target_normals, typename Mlp<Scalar>::Matrix* dy);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 64;
  double lr_start = 5e-3;
  double lr_end = 1e-5;
  // Learning rate for a zero-based epoch; empty means linear from lr_start
  // to lr_end.
  std::function<double(int epoch, int epochs)> schedule;
  LossWeights weights;
  double slope = 0.1;
  double dropout = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  double learning_rate(int epoch) const;
};

struct EpochLog {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  LossValue loss;  // mean over the epoch's batches, training mode
};

class RegressorModel {
 public:
  PoseEncoder encoder;
  Mlp<float> mlp;
  double slope = 0.1;
  double dropout = 0.1;
  Eigen::VectorXd in_mean, in_std;    // encoded-pose statistics
  Eigen::VectorXd out_mean, out_std;  // flattened offset statistics
  TriMesh mean_unposed;

  int vertex_count() const { return static_cast<int>(mean_unposed.num_vertices()); }
  // Inference: deterministic, no dropout.
  Positions forward(const Pose& pose) const;
  // Checks that shapes chain and statistics are usable; throws InvalidArgument.
  void validate() const;
};

struct TrainResult {
  RegressorModel model;
  std::vector<EpochLog> log;
  LossValue initial_loss;  // inference mode over all samples, before training
  LossValue final_loss;    // same, after training
};

// Fits the pose encoder on the sample poses unless one is given, then
// trains with Adam on shuffled mini-batches. Throws NumericalError naming
// epoch and batch on a non-finite loss.
TrainResult train_regressor(const GarmentDataset& data, const TrainConfig& cfg, const PoseEncoder* encoder = nullptr);

// Inference-mode loss of a model over a sample set.
LossValue evaluate_regressor(const RegressorModel& model, const std::vector<GarmentSample>& samples,
                             const LossWeights& weights);

// skin(mean + forward(pose)).
TriMesh animate(const RegressorModel& model, const Pose& pose, const RigBundle& rig);

void save_regressor(const std::filesystem::path& path, const RegressorModel& model);
RegressorModel load_regressor(const std::filesystem::path& path);

// Binary container, little-endian:
//   char[4] "CFDS", u32 version (1), u32 samples, u32 pose size,
//   u32 vertices, u32 faces, u32 skipped
//   f64 mean_unposed[3 * vertices], i32 faces[3 * faces]
//   per sample: i32 sequence, i32 frame, f64 pose[pose size],
//               f64 offsets[3 * vertices]
//   per skipped frame: i32 sequence, i32 frame (reasons are not kept)
void save_dataset(const std::filesystem::path& path, const GarmentDataset& data);
GarmentDataset load_dataset(const std::filesystem::path& path);

// epoch,lr,loss_offset,loss_normal; the last column is left out when the
// normal term was off.
void save_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);

}  // namespace clothfit
