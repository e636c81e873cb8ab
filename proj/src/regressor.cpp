#include "clothfit/regressor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <Eigen/SVD>

#include "binary_io.hpp"
#include "clothfit/error.hpp"
#include "clothfit/optim.hpp"
#include "clothfit/skinning.hpp"

namespace clothfit {

namespace {

std::string frame_tag(int sequence, int frame) {
  return "sequence " + std::to_string(sequence) + " frame " + std::to_string(frame);
}

// Standard deviations this small are treated as constant dimensions and
// left unscaled.
double usable_std(double s) { return s > 1e-8 ? s : 1.0; }

void column_stats(const Eigen::MatrixXd& cols, Eigen::VectorXd& mean, Eigen::VectorXd& stddev) {
  mean = cols.rowwise().mean();
  stddev.resize(cols.rows());
  for (Eigen::Index r = 0; r < cols.rows(); ++r) {
    const double var = (cols.row(r).array() - mean(r)).square().mean();
    stddev(r) = usable_std(std::sqrt(var));
  }
}

}  // namespace

// ---------------------------------------------------------------- dataset

GarmentDataset build_dataset(const std::vector<GarmentSequence>& sequences, const RigBundle& rig,
                             double max_condition) {
  GarmentDataset out;
  const TriMesh* reference = nullptr;
  std::vector<Positions> unposed;
  std::vector<std::pair<int, const PosedGarment*>> kept;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    for (const PosedGarment& g : sequences[s]) {
      const int seq = static_cast<int>(s);
      if (!reference) reference = &g.mesh;
      if (g.mesh.num_vertices() != reference->num_vertices() || g.mesh.faces() != reference->faces()) {
        throw InvalidArgument(frame_tag(seq, g.frame) + ": garment topology differs from the first frame");
      }
      validate_pose(g.pose, rig.joint_count());
      try {
        unposed.push_back(unskin(g.mesh.vertices(), rig, g.pose, max_condition));
      } catch (const GeometryError& e) {
        out.skipped.push_back({seq, g.frame, e.what()});
        continue;
      }
      kept.emplace_back(seq, &g);
    }
  }
  if (unposed.empty()) throw InvalidArgument("build_dataset: no usable frames");

  Positions mean = Positions::Zero(unposed[0].rows(), 3);
  for (const Positions& u : unposed) mean += u;
  mean /= static_cast<double>(unposed.size());
  out.mean_unposed = reference->with_vertices(mean);

  for (std::size_t i = 0; i < unposed.size(); ++i) {
    GarmentSample sample;
    sample.sequence = kept[i].first;
    sample.frame = kept[i].second->frame;
    sample.pose = kept[i].second->pose;
    sample.offsets = unposed[i] - mean;
    const double longest = sample.offsets.rowwise().norm().maxCoeff();
    if (!(longest < kMaxOffset)) {
      throw NumericalError(frame_tag(sample.sequence, sample.frame) + ": offset of " + std::to_string(longest) +
                           " m from the mean garment");
    }
    out.samples.push_back(std::move(sample));
  }
  return out;
}

// ---------------------------------------------------------------- pose encoder

PoseEncoder::PoseEncoder(Eigen::VectorXd mean, Eigen::MatrixXd basis, Eigen::VectorXd stddev)
    : mean_(std::move(mean)), basis_(std::move(basis)), stddev_(std::move(stddev)) {
  if (basis_.rows() != mean_.size() || stddev_.size() != basis_.cols()) {
    throw InvalidArgument("pose encoder: mean, basis and stddev sizes disagree");
  }
  const Eigen::MatrixXd gram = basis_.transpose() * basis_;
  const double off = (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
  if (!(off <= 1e-6)) throw InvalidArgument("pose encoder: basis is not orthonormal");
}

Eigen::VectorXd PoseEncoder::encode(const Pose& pose) const {
  if (pose.size() != mean_.size()) {
    throw InvalidArgument("pose has " + std::to_string(pose.size()) + " values, encoder expects " +
                          std::to_string(mean_.size()));
  }
  return basis_.transpose() * (pose - mean_);
}

Pose PoseEncoder::decode(const Eigen::VectorXd& code) const {
  if (code.size() != basis_.cols()) throw InvalidArgument("pose code has the wrong size");
  return mean_ + basis_ * code;
}

PoseEncoder fit_pose_encoder(const std::vector<Pose>& poses, int modes) {
  if (modes < 1) throw InvalidArgument("pose encoder needs at least one mode");
  if (poses.empty()) throw InvalidArgument("pose encoder needs poses");
  const Eigen::Index dim = poses[0].size();
  for (const Pose& p : poses) {
    if (p.size() != dim) throw InvalidArgument("poses differ in length");
    if (!p.allFinite()) throw InvalidArgument("pose with non-finite values");
  }
  if (modes > dim) throw InvalidArgument("more pose modes than pose dimensions");
  std::vector<const Pose*> sorted;
  for (const Pose& p : poses) sorted.push_back(&p);
  auto less = [](const Pose* a, const Pose* b) {
    return std::lexicographical_compare(a->data(), a->data() + a->size(), b->data(), b->data() + b->size());
  };
  std::sort(sorted.begin(), sorted.end(), less);
  const auto distinct = std::unique(sorted.begin(), sorted.end(), [](const Pose* a, const Pose* b) { return *a == *b; }) -
                        sorted.begin();
  if (distinct < modes + 1) {
    throw InvalidArgument("pose encoder needs " + std::to_string(modes + 1) + " distinct poses, got " +
                          std::to_string(distinct));
  }

  const Eigen::Index n = static_cast<Eigen::Index>(poses.size());
  Eigen::MatrixXd x(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = poses[static_cast<std::size_t>(i)].transpose();
  const Eigen::VectorXd mean = x.colwise().mean().transpose();
  x.rowwise() -= mean.transpose();
  const Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv.size() < modes || !(sv(modes - 1) > 1e-9 * sv(0))) {
    throw InvalidArgument("poses span fewer than " + std::to_string(modes) + " dimensions");
  }
  Eigen::MatrixXd basis = svd.matrixV().leftCols(modes);
  for (int k = 0; k < modes; ++k) {
    Eigen::Index arg;
    basis.col(k).cwiseAbs().maxCoeff(&arg);
    if (basis(arg, k) < 0) basis.col(k) *= -1.0;
  }
  const Eigen::VectorXd stddev = sv.head(modes) / std::sqrt(static_cast<double>(std::max<Eigen::Index>(n - 1, 1)));
  return PoseEncoder(mean, std::move(basis), stddev);
}

// ---------------------------------------------------------------- MLP

template <class Scalar>
std::size_t Mlp<Scalar>::parameter_count() const {
  return static_cast<std::size_t>(w1.size() + w2.size() + w3.size() + b1.size() + b2.size() + b3.size());
}

template <class Scalar>
Mlp<Scalar> Mlp<Scalar>::zeros_like() const {
  Mlp z;
  z.w1 = Matrix::Zero(w1.rows(), w1.cols());
  z.w2 = Matrix::Zero(w2.rows(), w2.cols());
  z.w3 = Matrix::Zero(w3.rows(), w3.cols());
  z.b1 = Vector::Zero(b1.size());
  z.b2 = Vector::Zero(b2.size());
  z.b3 = Vector::Zero(b3.size());
  return z;
}

template <class Scalar>
Mlp<Scalar> init_mlp(int inputs, int hidden, int outputs, std::mt19937_64& rng) {
  if (inputs < 1 || hidden < 1 || outputs < 1) throw InvalidArgument("layer sizes must be positive");
  using M = typename Mlp<Scalar>::Matrix;
  using V = typename Mlp<Scalar>::Vector;
  auto uniform = [&rng](Eigen::Index rows, Eigen::Index cols, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    M m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(u(rng));
    return m;
  };
  Mlp<Scalar> net;
  net.w1 = uniform(hidden, inputs, 1.0 / std::sqrt(static_cast<double>(inputs)));
  net.w2 = uniform(hidden, hidden, 1.0 / std::sqrt(static_cast<double>(hidden)));
  net.w3 = M::Zero(outputs, hidden);
  net.b1 = V::Zero(hidden);
  net.b2 = V::Zero(hidden);
  net.b3 = V::Zero(outputs);
  return net;
}

namespace {

template <class M>
void leaky_relu(const M& z, M& h, double slope) {
  using S = typename M::Scalar;
  const S a = static_cast<S>(slope);
  h = z.unaryExpr([a](S v) { return v > S(0) ? v : a * v; });
}

template <class M>
M dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng) {
  using S = typename M::Scalar;
  std::bernoulli_distribution keep(1.0 - rate);
  const S scale = static_cast<S>(1.0 / (1.0 - rate));
  M m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? scale : S(0);
  return m;
}

}  // namespace

template <class Scalar>
typename Mlp<Scalar>::Matrix mlp_forward(const Mlp<Scalar>& net, const typename Mlp<Scalar>::Matrix& x,
                                         double slope, double dropout, std::mt19937_64* rng, MlpTape<Scalar>* tape) {
  using M = typename Mlp<Scalar>::Matrix;
  if (x.rows() != net.inputs()) throw InvalidArgument("network input has the wrong size");
  const bool drop = rng && dropout > 0.0;
  MlpTape<Scalar> local;
  MlpTape<Scalar>& t = tape ? *tape : local;
  t.x = x;
  t.z1.noalias() = net.w1 * x;
  t.z1.colwise() += net.b1;
  leaky_relu(t.z1, t.h1, slope);
  t.keep1.resize(0, 0);
  if (drop) {
    t.keep1 = dropout_mask<M>(t.h1.rows(), t.h1.cols(), dropout, *rng);
    t.h1.array() *= t.keep1.array();
  }
  t.z2.noalias() = net.w2 * t.h1;
  t.z2.colwise() += net.b2;
  leaky_relu(t.z2, t.h2, slope);
  t.keep2.resize(0, 0);
  if (drop) {
    t.keep2 = dropout_mask<M>(t.h2.rows(), t.h2.cols(), dropout, *rng);
    t.h2.array() *= t.keep2.array();
  }
  M y;
  y.noalias() = net.w3 * t.h2;
  y.colwise() += net.b3;
  return y;
}

template <class Scalar>
void mlp_backward(const Mlp<Scalar>& net, const MlpTape<Scalar>& t, const typename Mlp<Scalar>::Matrix& dy,
                  double slope, Mlp<Scalar>& grad) {
  using M = typename Mlp<Scalar>::Matrix;
  const Scalar a = static_cast<Scalar>(slope);
  auto leaky_grad = [a](Scalar z) { return z > Scalar(0) ? Scalar(1) : a; };

  grad.w3.noalias() = dy * t.h2.transpose();
  grad.b3 = dy.rowwise().sum();
  M d;
  d.noalias() = net.w3.transpose() * dy;
  if (t.keep2.size()) d.array() *= t.keep2.array();
  d.array() *= t.z2.unaryExpr(leaky_grad).array();
  grad.w2.noalias() = d * t.h1.transpose();
  grad.b2 = d.rowwise().sum();
  M d1;
  d1.noalias() = net.w2.transpose() * d;
  if (t.keep1.size()) d1.array() *= t.keep1.array();
  d1.array() *= t.z1.unaryExpr(leaky_grad).array();
  grad.w1.noalias() = d1 * t.x.transpose();
  grad.b1 = d1.rowwise().sum();
}

// ---------------------------------------------------------------- loss

template <class Scalar>
LossValue regression_loss(const LossContext& ctx, const typename Mlp<Scalar>::Matrix& y,
                          const std::vector<const Positions*>& target_offsets,
                          const std::vector<const Positions*>& target_normals, typename Mlp<Scalar>::Matrix* dy) {
  const Eigen::Index dim = ctx.out_mean.size(), batch = y.cols();
  if (y.rows() != dim || static_cast<Eigen::Index>(target_offsets.size()) != batch) {
    throw InvalidArgument("loss inputs disagree in size");
  }
  const bool with_normals = ctx.weights.normal > 0.0;
  if (with_normals && static_cast<Eigen::Index>(target_normals.size()) != batch) {
    throw InvalidArgument("normal targets missing");
  }
  const double inv = 1.0 / (static_cast<double>(batch) * static_cast<double>(dim));
  if (dy) dy->setZero(dim, batch);

  LossValue loss;
  double normal_sum = 0.0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Positions& target = *target_offsets[static_cast<std::size_t>(b)];
    if (target.size() != dim) throw InvalidArgument("offset target has the wrong size");
    Positions offsets(dim / 3, 3);
    for (Eigen::Index i = 0; i < dim; ++i) {
      // Offsets are compared in normalized units, where the network lives.
      const double yi = static_cast<double>(y(i, b));
      offsets.data()[i] = yi * ctx.out_std(i) + ctx.out_mean(i);
      const double r = yi - (target.data()[i] - ctx.out_mean(i)) / ctx.out_std(i);
      loss.offset += std::abs(r) * inv;
      if (dy && r != 0.0) (*dy)(i, b) += static_cast<Scalar>(ctx.weights.offset * (r > 0 ? inv : -inv));
    }
    if (!with_normals) continue;
    const Positions verts = ctx.mean_unposed + offsets;
    Positions normals, raw;
    accumulate_vertex_normals(verts, ctx.faces, normals, &raw);
    const Positions& tn = *target_normals[static_cast<std::size_t>(b)];
    Positions ngrad(normals.rows(), 3);
    for (Eigen::Index i = 0; i < normals.size(); ++i) {
      const double r = normals.data()[i] - tn.data()[i];
      normal_sum += std::abs(r) * inv;
      ngrad.data()[i] = r > 0 ? ctx.weights.normal * inv : (r < 0 ? -ctx.weights.normal * inv : 0.0);
    }
    if (dy) {
      Positions vgrad = Positions::Zero(verts.rows(), 3);
      vertex_normals_vjp(verts, ctx.faces, raw, ngrad, vgrad);
      for (Eigen::Index i = 0; i < dim; ++i) (*dy)(i, b) += static_cast<Scalar>(vgrad.data()[i] * ctx.out_std(i));
    }
  }
  if (with_normals) loss.normal = normal_sum;
  return loss;
}

template struct Mlp<float>;
template struct Mlp<double>;
template Mlp<float> init_mlp<float>(int, int, int, std::mt19937_64&);
template Mlp<double> init_mlp<double>(int, int, int, std::mt19937_64&);
template Mlp<float>::Matrix mlp_forward<float>(const Mlp<float>&, const Mlp<float>::Matrix&, double, double,
                                               std::mt19937_64*, MlpTape<float>*);
template Mlp<double>::Matrix mlp_forward<double>(const Mlp<double>&, const Mlp<double>::Matrix&, double, double,
                                                 std::mt19937_64*, MlpTape<double>*);
template void mlp_backward<float>(const Mlp<float>&, const MlpTape<float>&, const Mlp<float>::Matrix&, double,
                                  Mlp<float>&);
template void mlp_backward<double>(const Mlp<double>&, const MlpTape<double>&, const Mlp<double>::Matrix&, double,
                                   Mlp<double>&);
template LossValue regression_loss<float>(const LossContext&, const Mlp<float>::Matrix&,
                                          const std::vector<const Positions*>&, const std::vector<const Positions*>&,
                                          Mlp<float>::Matrix*);
template LossValue regression_loss<double>(const LossContext&, const Mlp<double>::Matrix&,
                                           const std::vector<const Positions*>&, const std::vector<const Positions*>&,
                                           Mlp<double>::Matrix*);

// ---------------------------------------------------------------- training

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
  if (!(lr_start > 0) || !(lr_end > 0) || !std::isfinite(lr_start) || !std::isfinite(lr_end)) {
    throw InvalidArgument("learning rates must be positive");
  }
  if (!(weights.offset >= 0) || !(weights.normal >= 0) || weights.offset + weights.normal <= 0) {
    throw InvalidArgument("loss weights must be >= 0 and not both zero");
  }
  if (!(dropout >= 0 && dropout < 1)) throw InvalidArgument("dropout must lie in [0, 1)");
  if (!std::isfinite(slope)) throw InvalidArgument("activation slope must be finite");
}

double TrainConfig::learning_rate(int epoch) const {
  if (schedule) return schedule(epoch, epochs);
  if (epochs == 1) return lr_start;
  return lr_start + (lr_end - lr_start) * static_cast<double>(epoch) / static_cast<double>(epochs - 1);
}

void RegressorModel::validate() const {
  const int codes = encoder.mode_count();
  const Eigen::Index dim = 3 * mean_unposed.num_vertices();
  if (mlp.inputs() != codes || mlp.w2.rows() != mlp.hidden() || mlp.w2.cols() != mlp.hidden() ||
      mlp.w3.cols() != mlp.hidden() || mlp.outputs() != dim || mlp.b1.size() != mlp.hidden() ||
      mlp.b2.size() != mlp.hidden() || mlp.b3.size() != dim) {
    throw InvalidArgument("regressor layers do not chain");
  }
  if (in_mean.size() != codes || in_std.size() != codes || out_mean.size() != dim || out_std.size() != dim) {
    throw InvalidArgument("regressor normalization statistics have the wrong size");
  }
  if (!(in_std.minCoeff() > 0) || !(out_std.minCoeff() > 0)) {
    throw InvalidArgument("regressor normalization needs positive standard deviations");
  }
}

namespace {

Mlp<float>::Matrix normalized_inputs(const RegressorModel& m, const std::vector<const Pose*>& poses) {
  Mlp<float>::Matrix x(m.encoder.mode_count(), static_cast<Eigen::Index>(poses.size()));
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const Eigen::VectorXd c = (m.encoder.encode(*poses[i]) - m.in_mean).cwiseQuotient(m.in_std);
    x.col(static_cast<Eigen::Index>(i)) = c.cast<float>();
  }
  return x;
}

LossContext loss_context(const RegressorModel& m, const LossWeights& w) {
  return LossContext{m.mean_unposed.vertices(), m.mean_unposed.faces(), m.out_mean, m.out_std, w};
}

std::vector<Positions> target_normals(const TriMesh& mean, const std::vector<GarmentSample>& samples) {
  std::vector<Positions> out;
  out.reserve(samples.size());
  for (const GarmentSample& s : samples) {
    Positions n;
    accumulate_vertex_normals(mean.vertices() + s.offsets, mean.faces(), n);
    out.push_back(std::move(n));
  }
  return out;
}

LossValue average_loss(const RegressorModel& m, const std::vector<GarmentSample>& samples,
                       const std::vector<Positions>& normals, const LossWeights& w, int chunk) {
  const LossContext ctx = loss_context(m, w);
  LossValue total;
  double normal = 0.0;
  for (std::size_t first = 0; first < samples.size(); first += static_cast<std::size_t>(chunk)) {
    const std::size_t last = std::min(samples.size(), first + static_cast<std::size_t>(chunk));
    std::vector<const Pose*> poses;
    std::vector<const Positions*> offs, nrm;
    for (std::size_t i = first; i < last; ++i) {
      poses.push_back(&samples[i].pose);
      offs.push_back(&samples[i].offsets);
      if (w.normal > 0) nrm.push_back(&normals[i]);
    }
    const auto y = mlp_forward<float>(m.mlp, normalized_inputs(m, poses), m.slope, m.dropout, nullptr);
    const LossValue l = regression_loss<float>(ctx, y, offs, nrm, nullptr);
    const double share = static_cast<double>(last - first) / static_cast<double>(samples.size());
    total.offset += share * l.offset;
    if (l.normal) normal += share * *l.normal;
  }
  if (w.normal > 0) total.normal = normal;
  return total;
}

bool finite(const LossValue& l) { return std::isfinite(l.offset) && (!l.normal || std::isfinite(*l.normal)); }

}  // namespace

Positions RegressorModel::forward(const Pose& pose) const {
  const Pose* p = &pose;
  const auto y = mlp_forward<float>(mlp, normalized_inputs(*this, {p}), slope, dropout, nullptr);
  Positions out(mean_unposed.num_vertices(), 3);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<double>(y(i, 0)) * out_std(i) + out_mean(i);
  return out;
}

TrainResult train_regressor(const GarmentDataset& data, const TrainConfig& cfg, const PoseEncoder* encoder) {
  cfg.validate();
  if (data.samples.empty()) throw InvalidArgument("training needs at least one sample");
  const std::vector<GarmentSample>& samples = data.samples;
  const Eigen::Index nv = data.mean_unposed.num_vertices(), dim = 3 * nv;
  for (const GarmentSample& s : samples) {
    if (s.offsets.rows() != nv) throw InvalidArgument("sample offsets do not match the mean garment");
  }

  TrainResult result;
  RegressorModel& model = result.model;
  if (encoder) {
    model.encoder = *encoder;
  } else {
    std::vector<Pose> poses;
    for (const GarmentSample& s : samples) poses.push_back(s.pose);
    model.encoder = fit_pose_encoder(poses);
  }
  model.slope = cfg.slope;
  model.dropout = cfg.dropout;
  model.mean_unposed = data.mean_unposed;

  const Eigen::Index n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd codes(model.encoder.mode_count(), n), flat(dim, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const GarmentSample& s = samples[static_cast<std::size_t>(i)];
    codes.col(i) = model.encoder.encode(s.pose);
    flat.col(i) = Eigen::Map<const Eigen::VectorXd>(s.offsets.data(), dim);
  }
  column_stats(codes, model.in_mean, model.in_std);
  column_stats(flat, model.out_mean, model.out_std);

  std::mt19937_64 rng(cfg.seed);
  model.mlp = init_mlp<float>(model.encoder.mode_count(), static_cast<int>(nv), static_cast<int>(dim), rng);
  model.validate();

  const std::vector<Positions> normals =
      cfg.weights.normal > 0 ? target_normals(data.mean_unposed, samples) : std::vector<Positions>{};
  result.initial_loss = average_loss(model, samples, normals, cfg.weights, cfg.batch_size);

  Mlp<float>& net = model.mlp;
  Mlp<float> grad = net.zeros_like();
  Adam<float> adam_w1(net.w1.size(), cfg.lr_start), adam_w2(net.w2.size(), cfg.lr_start),
      adam_w3(net.w3.size(), cfg.lr_start), adam_b1(net.b1.size(), cfg.lr_start),
      adam_b2(net.b2.size(), cfg.lr_start), adam_b3(net.b3.size(), cfg.lr_start);
  const LossContext ctx = loss_context(model, cfg.weights);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  MlpTape<float> tape;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate(epoch);
    if (!(lr > 0) || !std::isfinite(lr)) throw InvalidArgument("learning rate schedule returned " + std::to_string(lr));
    for (Adam<float>* a : {&adam_w1, &adam_w2, &adam_w3, &adam_b1, &adam_b2, &adam_b3}) a->set_lr(lr);
    std::shuffle(order.begin(), order.end(), rng);

    EpochLog row;
    row.epoch = epoch + 1;
    row.lr = lr;
    double normal = 0.0;
    int batch_index = 0;
    for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const Pose*> poses;
      std::vector<const Positions*> offs, nrm;
      for (std::size_t k = first; k < last; ++k) {
        poses.push_back(&samples[order[k]].pose);
        offs.push_back(&samples[order[k]].offsets);
        if (cfg.weights.normal > 0) nrm.push_back(&normals[order[k]]);
      }
      const auto y = mlp_forward<float>(net, normalized_inputs(model, poses), cfg.slope, cfg.dropout, &rng, &tape);
      Mlp<float>::Matrix dy;
      const LossValue l = regression_loss<float>(ctx, y, offs, nrm, &dy);
      if (!finite(l) || !dy.allFinite()) {
        throw NumericalError("training: non-finite loss at epoch " + std::to_string(epoch + 1) + " batch " +
                             std::to_string(batch_index + 1));
      }
      mlp_backward<float>(net, tape, dy, cfg.slope, grad);
      adam_w1.step(net.w1.data(), grad.w1.data());
      adam_w2.step(net.w2.data(), grad.w2.data());
      adam_w3.step(net.w3.data(), grad.w3.data());
      adam_b1.step(net.b1.data(), grad.b1.data());
      adam_b2.step(net.b2.data(), grad.b2.data());
      adam_b3.step(net.b3.data(), grad.b3.data());

      const double share = static_cast<double>(last - first) / static_cast<double>(order.size());
      row.loss.offset += share * l.offset;
      if (l.normal) normal += share * *l.normal;
      ++batch_index;
    }
    if (cfg.weights.normal > 0) row.loss.normal = normal;
    result.log.push_back(row);
  }
  result.final_loss = average_loss(model, samples, normals, cfg.weights, cfg.batch_size);
  return result;
}

LossValue evaluate_regressor(const RegressorModel& model, const std::vector<GarmentSample>& samples,
                             const LossWeights& weights) {
  model.validate();
  if (samples.empty()) throw InvalidArgument("no samples to evaluate");
  const std::vector<Positions> normals =
      weights.normal > 0 ? target_normals(model.mean_unposed, samples) : std::vector<Positions>{};
  return average_loss(model, samples, normals, weights, 64);
}

TriMesh animate(const RegressorModel& model, const Pose& pose, const RigBundle& rig) {
  const Positions rest = model.mean_unposed.vertices() + model.forward(pose);
  return model.mean_unposed.with_vertices(skin(rest, rig, pose));
}

// ---------------------------------------------------------------- files

// CFRM container, little endian:
//   "CFRM" u32 version=1
//   u32 pose_size, modes, vertices, faces, hidden
//   f64 slope, dropout
//   f64 encoder mean[pose_size], basis[pose_size x modes, column major], stddev[modes]
//   f64 in_mean[modes], in_std[modes], out_mean[3V], out_std[3V]
//   f64 mean garment [V x 3, row major]; i32 faces [F x 3]
//   f32 w1 b1 w2 b2 w3 b3 (column major)
void save_regressor(const std::filesystem::path& path, const RegressorModel& m) {
  m.validate();
  detail::BinaryWriter out(path);
  out.magic("CFRM");
  out.u32(1);
  out.u32(static_cast<std::uint32_t>(m.encoder.pose_size()));
  out.u32(static_cast<std::uint32_t>(m.encoder.mode_count()));
  out.u32(static_cast<std::uint32_t>(m.mean_unposed.num_vertices()));
  out.u32(static_cast<std::uint32_t>(m.mean_unposed.num_faces()));
  out.u32(static_cast<std::uint32_t>(m.mlp.hidden()));
  out.f64(m.slope);
  out.f64(m.dropout);
  auto vec = [&out](const auto& v) { out.f64_range(v.data(), v.data() + v.size()); };
  vec(m.encoder.mean());
  vec(m.encoder.basis());
  vec(m.encoder.stddev());
  vec(m.in_mean);
  vec(m.in_std);
  vec(m.out_mean);
  vec(m.out_std);
  vec(m.mean_unposed.vertices());
  const Faces& f = m.mean_unposed.faces();
  for (Eigen::Index i = 0; i < f.size(); ++i) out.i32(f.data()[i]);
  out.f32_block(m.mlp.w1.data(), static_cast<std::size_t>(m.mlp.w1.size()));
  out.f32_block(m.mlp.b1.data(), static_cast<std::size_t>(m.mlp.b1.size()));
  out.f32_block(m.mlp.w2.data(), static_cast<std::size_t>(m.mlp.w2.size()));
  out.f32_block(m.mlp.b2.data(), static_cast<std::size_t>(m.mlp.b2.size()));
  out.f32_block(m.mlp.w3.data(), static_cast<std::size_t>(m.mlp.w3.size()));
  out.f32_block(m.mlp.b3.data(), static_cast<std::size_t>(m.mlp.b3.size()));
  out.finish();
}

RegressorModel load_regressor(const std::filesystem::path& path) {
  detail::BinaryReader in(path);
  in.expect_magic("CFRM");
  const std::uint32_t version = in.u32();
  if (version != 1) throw ParseError(path.string(), 0, "unsupported regressor version " + std::to_string(version));
  const std::uint64_t pose = in.u32(), modes = in.u32(), nv = in.u32(), nf = in.u32(), hidden = in.u32();
  if (pose == 0 || modes == 0 || modes > pose || nv == 0 || nf == 0 || hidden == 0) {
    throw ParseError(path.string(), 0, "invalid regressor dimensions");
  }
  const std::uint64_t dim = 3 * nv;
  const std::uint64_t doubles = 2 + pose + pose * modes + modes + 2 * modes + 2 * dim + dim;
  const std::uint64_t floats = hidden * modes + hidden + hidden * hidden + hidden + dim * hidden + dim;
  in.check_remaining(8 * doubles + 4 * (3 * nf) + 4 * floats);

  RegressorModel m;
  m.slope = in.f64();
  m.dropout = in.f64();
  auto vec = [&in](Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd v(rows, cols);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = in.f64();
    return v;
  };
  const Eigen::VectorXd emean = vec(static_cast<Eigen::Index>(pose), 1);
  const Eigen::MatrixXd basis = vec(static_cast<Eigen::Index>(pose), static_cast<Eigen::Index>(modes));
  const Eigen::VectorXd estd = vec(static_cast<Eigen::Index>(modes), 1);
  try {
    m.encoder = PoseEncoder(emean, basis, estd);
  } catch (const InvalidArgument& e) {
    throw ParseError(path.string(), 0, e.what());
  }
  m.in_mean = vec(static_cast<Eigen::Index>(modes), 1);
  m.in_std = vec(static_cast<Eigen::Index>(modes), 1);
  m.out_mean = vec(static_cast<Eigen::Index>(dim), 1);
  m.out_std = vec(static_cast<Eigen::Index>(dim), 1);
  Positions verts(static_cast<Eigen::Index>(nv), 3);
  for (Eigen::Index i = 0; i < verts.size(); ++i) verts.data()[i] = in.f64();
  Faces faces(static_cast<Eigen::Index>(nf), 3);
  for (Eigen::Index i = 0; i < faces.size(); ++i) {
    faces.data()[i] = in.i32();
    if (faces.data()[i] < 0 || static_cast<std::uint64_t>(faces.data()[i]) >= nv) {
      throw ParseError(path.string(), 0, "face index out of range");
    }
  }
  m.mean_unposed = TriMesh(verts, faces);
  const auto h = static_cast<Eigen::Index>(hidden), d = static_cast<Eigen::Index>(dim),
             k = static_cast<Eigen::Index>(modes);
  auto block = [&in](Eigen::Index rows, Eigen::Index cols) {
    Mlp<float>::Matrix w(rows, cols);
    in.f32_block(w.data(), static_cast<std::size_t>(w.size()));
    return w;
  };
  m.mlp.w1 = block(h, k);
  m.mlp.b1 = block(h, 1);
  m.mlp.w2 = block(h, h);
  m.mlp.b2 = block(h, 1);
  m.mlp.w3 = block(d, h);
  m.mlp.b3 = block(d, 1);
  try {
    m.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(path.string(), 0, e.what());
  }
  return m;
}

void save_dataset(const std::filesystem::path& path, const GarmentDataset& data) {
  if (data.samples.empty()) throw InvalidArgument("dataset has no samples");
  const Eigen::Index nv = data.mean_unposed.num_vertices();
  const Eigen::Index pose = data.samples.front().pose.size();
  for (const GarmentSample& s : data.samples) {
    if (s.pose.size() != pose || s.offsets.rows() != nv) throw InvalidArgument("dataset samples differ in shape");
  }
  detail::BinaryWriter out(path);
  out.magic("CFDS");
  out.u32(1);
  out.u32(static_cast<std::uint32_t>(data.samples.size()));
  out.u32(static_cast<std::uint32_t>(pose));
  out.u32(static_cast<std::uint32_t>(nv));
  out.u32(static_cast<std::uint32_t>(data.mean_unposed.num_faces()));
  out.u32(static_cast<std::uint32_t>(data.skipped.size()));
  const Positions& mv = data.mean_unposed.vertices();
  out.f64_range(mv.data(), mv.data() + mv.size());
  const Faces& f = data.mean_unposed.faces();
  for (Eigen::Index i = 0; i < f.size(); ++i) out.i32(f.data()[i]);
  for (const GarmentSample& s : data.samples) {
    out.i32(s.sequence);
    out.i32(s.frame);
    out.f64_range(s.pose.data(), s.pose.data() + s.pose.size());
    out.f64_range(s.offsets.data(), s.offsets.data() + s.offsets.size());
  }
  for (const SkippedFrame& k : data.skipped) {
    out.i32(k.sequence);
    out.i32(k.frame);
  }
  out.finish();
}

GarmentDataset load_dataset(const std::filesystem::path& path) {
  detail::BinaryReader in(path);
  in.expect_magic("CFDS");
  const std::uint32_t version = in.u32();
  if (version != 1) throw ParseError(path.string(), 0, "unsupported dataset version " + std::to_string(version));
  const std::uint64_t n = in.u32(), pose = in.u32(), nv = in.u32(), nf = in.u32(), skipped = in.u32();
  if (n == 0 || pose == 0 || nv == 0 || nf == 0) throw ParseError(path.string(), 0, "invalid dataset dimensions");
  in.check_remaining(8 * 3 * nv + 4 * 3 * nf + n * (8 + 8 * pose + 8 * 3 * nv) + 8 * skipped);
  GarmentDataset data;
  Positions verts(static_cast<Eigen::Index>(nv), 3);
  for (Eigen::Index i = 0; i < verts.size(); ++i) verts.data()[i] = in.f64();
  Faces faces(static_cast<Eigen::Index>(nf), 3);
  for (Eigen::Index i = 0; i < faces.size(); ++i) {
    faces.data()[i] = in.i32();
    if (faces.data()[i] < 0 || static_cast<std::uint64_t>(faces.data()[i]) >= nv) {
      throw ParseError(path.string(), 0, "face index out of range");
    }
  }
  data.mean_unposed = TriMesh(verts, faces);
  data.samples.resize(n);
  for (GarmentSample& s : data.samples) {
    s.sequence = in.i32();
    s.frame = in.i32();
    s.pose.resize(static_cast<Eigen::Index>(pose));
    for (Eigen::Index i = 0; i < s.pose.size(); ++i) s.pose(i) = in.f64();
    s.offsets.resize(static_cast<Eigen::Index>(nv), 3);
    for (Eigen::Index i = 0; i < s.offsets.size(); ++i) s.offsets.data()[i] = in.f64();
    if (!s.pose.allFinite() || !s.offsets.allFinite()) {
      throw ParseError(path.string(), 0, "non-finite value in sample " + std::to_string(&s - data.samples.data()));
    }
  }
  data.skipped.resize(skipped);
  for (SkippedFrame& k : data.skipped) {
    k.sequence = in.i32();
    k.frame = in.i32();
  }
  return data;
}

void save_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  const bool normal = !log.empty() && log.front().loss.normal.has_value();
  out << "epoch,lr,loss_offset" << (normal ? ",loss_normal" : "") << "\n";
  char buf[128];
  for (const EpochLog& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%.8g,%.10g", r.epoch, r.lr, r.loss.offset);
    out << buf;
    if (normal) {
      std::snprintf(buf, sizeof buf, ",%.10g", r.loss.normal.value_or(0.0));
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace clothfit
