#pragma once

// Feature-level fusion classifier over multi-channel epoch windows.
//
// Per channel: 1-2 recurrent layers (uni- or bidirectional), final-step
// output, optional dense stage.  Channel features are concatenated, pass
// through an optional shared-size dense layer, and a 2-way softmax closes
// the network.  Dropout (inverted) applies to encoder outputs and dense
// outputs only; recurrent state is never dropped.
//
// The whole graph is templated on the scalar type: float for training,
// double for finite-difference gradient verification.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tsfuse/common.hpp"
#include "tsfuse/genome.hpp"
#include "tsfuse/rng.hpp"
#include "tsfuse/signal.hpp"

namespace tsfuse {

template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Desk-scale knob: shrink structure sizes without touching the encoded
// configuration (0 / negative = keep the configured value).
struct StructureOverrides {
  int lstm_shape = 0;
  int dense_size = -1;

  bool operator==(const StructureOverrides&) const = default;
};

struct TensorShape {
  std::string name;
  int rows = 0;
  int cols = 0;  // 1 for bias vectors
};

// Tensor declaration order defines initialization draws and the checkpoint
// stream: per channel / layer / direction {U, W, b}, then per-channel dense
// {W, b}, fused dense {W, b}, softmax {W, b}.
std::vector<TensorShape> network_layout(const ModelConfig& c, int input_dim,
                                        const StructureOverrides& ov = {});

std::int64_t count_parameters(const std::vector<TensorShape>& layout);

// One gathered minibatch, time-major: x[channel][step] is (B x input_dim).
template <class Scalar>
struct BatchInput {
  std::vector<std::vector<Mat<Scalar>>> x;
  std::vector<int> labels;

  int batch_size() const { return static_cast<int>(labels.size()); }
};

template <class Scalar>
class FusionNet {
 public:
  FusionNet(const ModelConfig& cfg, int input_dim,
            const StructureOverrides& ov = {});

  const ModelConfig& config() const { return cfg_; }
  const StructureOverrides& overrides() const { return ov_; }
  int input_dim() const { return input_dim_; }
  int hidden() const { return hidden_; }
  int dense() const { return dense_; }
  std::int64_t parameter_count() const;

  std::vector<Mat<Scalar>>& tensors() { return tensors_; }
  const std::vector<Mat<Scalar>>& tensors() const { return tensors_; }
  std::vector<Mat<Scalar>>& grads() { return grads_; }
  const std::vector<TensorShape>& layout() const { return layout_; }

  // Glorot-uniform weights, zero biases except forget-gate biases at 1.
  void init_params(std::uint64_t seed);

  // Class probabilities, rows summing to 1.  When training is true and the
  // configured dropout is positive, rng must be provided.
  Mat<Scalar> forward(const BatchInput<Scalar>& in, bool training,
                      Rng* rng = nullptr);

  // Weighted cross-entropy over the batch (mean of per-example weighted
  // terms) and its gradients into grads().  RunError on non-finite loss.
  double loss_and_gradients(const BatchInput<Scalar>& in,
                            const std::array<double, 2>& class_weights,
                            bool training, Rng* rng = nullptr);

  // Loss only, no gradient bookkeeping (used by finite differences).
  double loss_only(const BatchInput<Scalar>& in,
                   const std::array<double, 2>& class_weights);

  void zero_grads();

 private:
  struct CellTrace {
    // Processing-order activations; for reversed cells step j reads input
    // index T-1-j.
    std::vector<Mat<Scalar>> f, i, o, g, s, tanh_s, h;
    const std::vector<Mat<Scalar>>* x = nullptr;  // borrowed input sequence
    bool reverse = false;
  };

  struct Trace;  // full forward record for one batch

  int tensor_base(int channel, int layer, int dir) const;
  CellTrace run_cell(int base, const std::vector<Mat<Scalar>>& xs,
                     bool reverse) const;
  void cell_backward(int base, const CellTrace& tr,
                     const std::vector<Mat<Scalar>>& dh_ext,
                     std::vector<Mat<Scalar>>& dx_out);

  Mat<Scalar> forward_internal(const BatchInput<Scalar>& in, bool training,
                               Rng* rng, Trace* trace);
  void backward(const BatchInput<Scalar>& in, const Trace& trace,
                const Mat<Scalar>& dlogits);

  ModelConfig cfg_;
  StructureOverrides ov_;
  int input_dim_;
  int hidden_;       // effective per-direction units
  int dense_;        // effective dense size (0 = disabled)
  int dirs_;         // 1 or 2
  int enc_out_;      // dirs * hidden
  int concat_w_;     // channels * (dense or enc_out)
  int top_w_;        // softmax input width
  std::vector<TensorShape> layout_;
  std::vector<Mat<Scalar>> tensors_;
  std::vector<Mat<Scalar>> grads_;
  int dense_w_base_ = -1;   // tensor index of first per-channel dense W
  int fusion_w_base_ = -1;  // tensor index of fused dense W
  int softmax_base_ = -1;
};

using FusionNetF = FusionNet<float>;
using FusionNetD = FusionNet<double>;

// ---------------------------------------------------------------------------
// Training.

struct TrainSpec {
  double learning_rate = 0.001;
  int batch_size = 1024;
  int max_epochs = 10;
  // Empty: computed from the training labels as N / (2 * N_class).
  std::optional<std::array<double, 2>> class_weights;
  std::uint64_t seed = 0;
};

template <class Scalar>
struct AdamState {
  double lr = 0.001, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::int64_t t = 0;
  std::vector<Mat<Scalar>> m, v;

  void attach(const std::vector<TensorShape>& layout);
  void step(std::vector<Mat<Scalar>>& tensors,
            const std::vector<Mat<Scalar>>& grads);
};

// Windows from several subjects plus the channel-slot mapping the model
// expects (model channel c reads subject slot slots[part][c]).
struct TrainingSet {
  std::vector<SubjectWindows> parts;
  std::vector<std::vector<int>> slots;

  int total_windows() const;
  std::array<std::int64_t, 2> label_counts() const;
};

TrainingSet make_training_set(
    const std::vector<std::shared_ptr<const PreparedSubject>>& subjects,
    const ModelConfig& cfg);

BatchInput<float> gather_batch(const TrainingSet& set,
                               const std::vector<std::pair<int, int>>& which,
                               int input_dim);

std::array<double, 2> balanced_class_weights(
    const std::array<std::int64_t, 2>& counts);

struct TrainHistory {
  std::vector<double> epoch_loss;
};

// Cold start: reinitializes the weights from spec.seed, then runs
// minibatch Adam for max_epochs epochs.
TrainHistory train_network(FusionNetF& net, const TrainingSet& data,
                           const TrainSpec& spec);

// Class-1 probability per window, in window order.
std::vector<double> score_windows(FusionNetF& net, const SubjectWindows& part,
                                  const std::vector<int>& slots,
                                  int batch_size = 1024);

// ---------------------------------------------------------------------------
// Gradient verification (double precision, central differences).

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_tensor;
};

GradCheckReport gradient_check(const ModelConfig& cfg, int input_dim,
                               const StructureOverrides& ov, int batch,
                               std::uint64_t seed, double fd_eps = 1e-5);

// ---------------------------------------------------------------------------
// Checkpoints: header (magic, version, structure JSON) + float32 tensors in
// declaration order, each prefixed with its dimension list.

void save_checkpoint(const FusionNetF& net, const std::string& path);
FusionNetF load_checkpoint(const std::string& path);

}  // namespace tsfuse
