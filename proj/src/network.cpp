#include "tsfuse/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <utility>

#include <nlohmann/json.hpp>

namespace tsfuse {

namespace {

constexpr double kSeluLambda = 1.0507009873554804934193;
constexpr double kSeluAlpha = 1.6732632423543772848170;

template <class Scalar>
Mat<Scalar> apply_activation(const Mat<Scalar>& z, Activation act) {
  switch (act) {
    case Activation::Tanh:
      return z.array().tanh().matrix();
    case Activation::Sigmoid:
      return (Scalar(1) / (Scalar(1) + (-z.array()).exp())).matrix();
    case Activation::Relu:
      return z.cwiseMax(Scalar(0));
    case Activation::Selu:
      return (z.array() > Scalar(0))
          .select(Scalar(kSeluLambda) * z.array(),
                  Scalar(kSeluLambda * kSeluAlpha) *
                      (z.array().exp() - Scalar(1)))
          .matrix();
  }
  throw RunError("unknown activation");
}

template <class Scalar>
Mat<Scalar> activation_grad(const Mat<Scalar>& z, const Mat<Scalar>& y,
                            Activation act) {
  switch (act) {
    case Activation::Tanh:
      return (Scalar(1) - y.array().square()).matrix();
    case Activation::Sigmoid:
      return (y.array() * (Scalar(1) - y.array())).matrix();
    case Activation::Relu:
      return (z.array() > Scalar(0)).template cast<Scalar>().matrix();
    case Activation::Selu:
      return (z.array() > Scalar(0))
          .select(Scalar(kSeluLambda),
                  Scalar(kSeluLambda * kSeluAlpha) * z.array().exp())
          .matrix();
  }
  throw RunError("unknown activation");
}

// Inverted dropout: kept entries scaled by 1/(1-p) so inference is identity.
// Mask entries are drawn row-major; an empty mask means "no dropout here".
template <class Scalar>
void apply_dropout(Mat<Scalar>& value, Mat<Scalar>& mask, double p,
                   bool training, Rng* rng) {
  mask.resize(0, 0);
  if (!training || p <= 0.0) return;
  if (rng == nullptr)
    throw RunError("training forward with dropout needs an rng");
  const Scalar keep = Scalar(1.0 / (1.0 - p));
  mask.resize(value.rows(), value.cols());
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    for (Eigen::Index c = 0; c < mask.cols(); ++c)
      mask(r, c) = rng->uniform01() < p ? Scalar(0) : keep;
  value = value.cwiseProduct(mask);
}

int effective_hidden(const ModelConfig& c, const StructureOverrides& ov) {
  return ov.lstm_shape > 0 ? ov.lstm_shape : c.lstm_shape;
}

int effective_dense(const ModelConfig& c, const StructureOverrides& ov) {
  return ov.dense_size >= 0 ? ov.dense_size : c.dense_size;
}

}  // namespace

std::vector<TensorShape> network_layout(const ModelConfig& c, int input_dim,
                                        const StructureOverrides& ov) {
  if (input_dim < 1) throw ConfigError("input_dim must be >= 1");
  if (c.channels.empty()) throw ConfigError("config has no channels");
  if (c.lstm_layers < 1 || c.lstm_layers > 2)
    throw ConfigError("lstm_layers must be 1 or 2");
  const int H = effective_hidden(c, ov);
  const int d = effective_dense(c, ov);
  if (H < 1) throw ConfigError("hidden size must be >= 1");
  if (d < 0) throw ConfigError("dense size must be >= 0");
  const int D = c.lstm_kind == LstmKind::Bidirectional ? 2 : 1;
  const int n = static_cast<int>(c.channels.size());
  const int enc_out = D * H;

  std::vector<TensorShape> out;
  for (int ch = 0; ch < n; ++ch) {
    for (int l = 0; l < c.lstm_layers; ++l) {
      const int in_w = l == 0 ? input_dim : enc_out;
      for (int dir = 0; dir < D; ++dir) {
        const std::string tag = "ch" + std::to_string(ch) + ".l" +
                                std::to_string(l) +
                                (dir == 0 ? ".fwd" : ".bwd");
        out.push_back({tag + ".U", 4 * H, in_w});
        out.push_back({tag + ".W", 4 * H, H});
        out.push_back({tag + ".b", 4 * H, 1});
      }
    }
  }
  if (d > 0) {
    for (int ch = 0; ch < n; ++ch) {
      const std::string tag = "ch" + std::to_string(ch) + ".dense";
      out.push_back({tag + ".W", d, enc_out});
      out.push_back({tag + ".b", d, 1});
    }
    out.push_back({"fused.W", d, n * d});
    out.push_back({"fused.b", d, 1});
    out.push_back({"softmax.W", 2, d});
    out.push_back({"softmax.b", 2, 1});
  } else {
    out.push_back({"softmax.W", 2, n * enc_out});
    out.push_back({"softmax.b", 2, 1});
  }
  return out;
}

std::int64_t count_parameters(const std::vector<TensorShape>& layout) {
  std::int64_t total = 0;
  for (const auto& t : layout)
    total += static_cast<std::int64_t>(t.rows) * t.cols;
  return total;
}

// ---------------------------------------------------------------------------

template <class Scalar>
struct FusionNet<Scalar>::Trace {
  std::vector<std::vector<std::vector<CellTrace>>> cells;  // [ch][layer][dir]
  std::vector<std::vector<std::vector<Mat<Scalar>>>> seqs;  // [ch][l < L-1][t]
  std::vector<Mat<Scalar>> enc, enc_mask, enc_drop;
  std::vector<Mat<Scalar>> dense_z, dense_y, dense_mask, dense_drop;
  Mat<Scalar> concat;
  Mat<Scalar> fusion_z, fusion_y, fusion_mask;
  Mat<Scalar> top, logits, probs;
};

template <class Scalar>
FusionNet<Scalar>::FusionNet(const ModelConfig& cfg, int input_dim,
                             const StructureOverrides& ov)
    : cfg_(cfg), ov_(ov), input_dim_(input_dim) {
  layout_ = network_layout(cfg, input_dim, ov);  // validates first
  hidden_ = effective_hidden(cfg, ov);
  dense_ = effective_dense(cfg, ov);
  dirs_ = cfg.lstm_kind == LstmKind::Bidirectional ? 2 : 1;
  enc_out_ = dirs_ * hidden_;
  const int n = static_cast<int>(cfg.channels.size());
  concat_w_ = n * (dense_ > 0 ? dense_ : enc_out_);
  top_w_ = dense_ > 0 ? dense_ : concat_w_;
  tensors_.reserve(layout_.size());
  for (const auto& t : layout_)
    tensors_.push_back(Mat<Scalar>::Zero(t.rows, t.cols));
  grads_ = tensors_;

  const int enc_tensors = 3 * n * cfg.lstm_layers * dirs_;
  if (dense_ > 0) {
    dense_w_base_ = enc_tensors;
    fusion_w_base_ = enc_tensors + 2 * n;
    softmax_base_ = fusion_w_base_ + 2;
  } else {
    softmax_base_ = enc_tensors;
  }
}

template <class Scalar>
std::int64_t FusionNet<Scalar>::parameter_count() const {
  return count_parameters(layout_);
}

template <class Scalar>
int FusionNet<Scalar>::tensor_base(int channel, int layer, int dir) const {
  return 3 * ((channel * cfg_.lstm_layers + layer) * dirs_ + dir);
}

template <class Scalar>
void FusionNet<Scalar>::init_params(std::uint64_t seed) {
  Rng rng(seed);
  const int H = hidden_;
  auto fill_uniform = [&](Mat<Scalar>& t, double lim) {
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c)
        t(r, c) = static_cast<Scalar>(rng.uniform(-lim, lim));
  };
  const int n = static_cast<int>(cfg_.channels.size());
  for (int ch = 0; ch < n; ++ch) {
    for (int l = 0; l < cfg_.lstm_layers; ++l) {
      for (int dir = 0; dir < dirs_; ++dir) {
        const int base = tensor_base(ch, l, dir);
        const int in_w = static_cast<int>(tensors_[base].cols());
        fill_uniform(tensors_[base], std::sqrt(6.0 / (in_w + H)));
        fill_uniform(tensors_[base + 1], std::sqrt(3.0 / H));
        tensors_[base + 2].setZero();
        tensors_[base + 2].topRows(H).setConstant(Scalar(1));  // forget gate
      }
    }
  }
  if (dense_ > 0) {
    for (int ch = 0; ch < n; ++ch) {
      fill_uniform(tensors_[dense_w_base_ + 2 * ch],
                   std::sqrt(6.0 / (enc_out_ + dense_)));
      tensors_[dense_w_base_ + 2 * ch + 1].setZero();
    }
    fill_uniform(tensors_[fusion_w_base_],
                 std::sqrt(6.0 / (concat_w_ + dense_)));
    tensors_[fusion_w_base_ + 1].setZero();
  }
  fill_uniform(tensors_[softmax_base_], std::sqrt(6.0 / (top_w_ + 2)));
  tensors_[softmax_base_ + 1].setZero();
}

template <class Scalar>
void FusionNet<Scalar>::zero_grads() {
  for (auto& g : grads_) g.setZero();
}

template <class Scalar>
typename FusionNet<Scalar>::CellTrace FusionNet<Scalar>::run_cell(
    int base, const std::vector<Mat<Scalar>>& xs, bool reverse) const {
  const Mat<Scalar>& U = tensors_[base];
  const Mat<Scalar>& W = tensors_[base + 1];
  const Mat<Scalar>& b = tensors_[base + 2];
  const int T = static_cast<int>(xs.size());
  const int B = static_cast<int>(xs[0].rows());
  const int H = hidden_;

  CellTrace tr;
  tr.x = &xs;
  tr.reverse = reverse;
  tr.f.resize(T);
  tr.i.resize(T);
  tr.o.resize(T);
  tr.g.resize(T);
  tr.s.resize(T);
  tr.tanh_s.resize(T);
  tr.h.resize(T);

  Mat<Scalar> z(B, 4 * H);
  for (int j = 0; j < T; ++j) {
    const Mat<Scalar>& x = xs[reverse ? T - 1 - j : j];
    z.noalias() = x * U.transpose();
    if (j > 0) z.noalias() += tr.h[j - 1] * W.transpose();
    z.rowwise() += b.col(0).transpose();

    tr.f[j] =
        (Scalar(1) / (Scalar(1) + (-z.middleCols(0, H).array()).exp()))
            .matrix();
    tr.i[j] =
        (Scalar(1) / (Scalar(1) + (-z.middleCols(H, H).array()).exp()))
            .matrix();
    tr.o[j] =
        (Scalar(1) / (Scalar(1) + (-z.middleCols(2 * H, H).array()).exp()))
            .matrix();
    tr.g[j] = z.middleCols(3 * H, H).array().tanh().matrix();

    if (j > 0)
      tr.s[j] =
          tr.f[j].cwiseProduct(tr.s[j - 1]) + tr.i[j].cwiseProduct(tr.g[j]);
    else
      tr.s[j] = tr.i[j].cwiseProduct(tr.g[j]);
    tr.tanh_s[j] = tr.s[j].array().tanh().matrix();
    tr.h[j] = tr.tanh_s[j].cwiseProduct(tr.o[j]);
  }
  return tr;
}

template <class Scalar>
void FusionNet<Scalar>::cell_backward(int base, const CellTrace& tr,
                                      const std::vector<Mat<Scalar>>& dh_ext,
                                      std::vector<Mat<Scalar>>& dx_out) {
  const Mat<Scalar>& U = tensors_[base];
  const Mat<Scalar>& W = tensors_[base + 1];
  Mat<Scalar>& gU = grads_[base];
  Mat<Scalar>& gW = grads_[base + 1];
  Mat<Scalar>& gb = grads_[base + 2];
  const int T = static_cast<int>(tr.h.size());
  const int B = static_cast<int>(tr.h[0].rows());
  const int H = hidden_;

  dx_out.assign(T, Mat<Scalar>());
  Mat<Scalar> dh_next = Mat<Scalar>::Zero(B, H);
  Mat<Scalar> ds_next = Mat<Scalar>::Zero(B, H);
  Mat<Scalar> dz(B, 4 * H);
  for (int j = T - 1; j >= 0; --j) {
    const Mat<Scalar> dh = dh_ext[j] + dh_next;
    const Mat<Scalar> dout = dh.cwiseProduct(tr.tanh_s[j]);
    const Mat<Scalar> ds =
        ds_next + (dh.array() * tr.o[j].array() *
                   (Scalar(1) - tr.tanh_s[j].array().square()))
                      .matrix();

    if (j > 0)
      dz.middleCols(0, H) = (ds.array() * tr.s[j - 1].array() *
                             tr.f[j].array() * (Scalar(1) - tr.f[j].array()))
                                .matrix();
    else
      dz.middleCols(0, H).setZero();
    dz.middleCols(H, H) = (ds.array() * tr.g[j].array() * tr.i[j].array() *
                           (Scalar(1) - tr.i[j].array()))
                              .matrix();
    dz.middleCols(2 * H, H) = (dout.array() * tr.o[j].array() *
                               (Scalar(1) - tr.o[j].array()))
                                  .matrix();
    dz.middleCols(3 * H, H) =
        (ds.array() * tr.i[j].array() * (Scalar(1) - tr.g[j].array().square()))
            .matrix();

    const Mat<Scalar>& x = (*tr.x)[tr.reverse ? T - 1 - j : j];
    gU.noalias() += dz.transpose() * x;
    if (j > 0) gW.noalias() += dz.transpose() * tr.h[j - 1];
    gb.col(0).noalias() += dz.colwise().sum().transpose();

    dx_out[j].noalias() = dz * U;
    dh_next.noalias() = dz * W;
    if (j > 0) ds_next = ds.cwiseProduct(tr.f[j]);
  }
}

template <class Scalar>
Mat<Scalar> FusionNet<Scalar>::forward_internal(const BatchInput<Scalar>& in,
                                                bool training, Rng* rng,
                                                Trace* trace) {
  const int n = static_cast<int>(cfg_.channels.size());
  const int T = cfg_.time_steps;
  if (static_cast<int>(in.x.size()) != n)
    throw RunError("batch has wrong channel count");
  const int B = in.batch_size();
  if (B < 1) throw RunError("empty batch");
  for (int ch = 0; ch < n; ++ch) {
    if (static_cast<int>(in.x[ch].size()) != T)
      throw RunError("batch has wrong step count");
    for (const auto& m : in.x[ch])
      if (m.rows() != B || m.cols() != input_dim_)
        throw RunError("batch block has wrong shape");
  }

  Trace local;
  Trace& tr = trace != nullptr ? *trace : local;
  const int L = cfg_.lstm_layers;
  tr.cells.assign(n, {});
  tr.seqs.assign(n, {});
  tr.enc.assign(n, {});
  tr.enc_mask.assign(n, {});
  tr.enc_drop.assign(n, {});
  tr.dense_z.assign(n, {});
  tr.dense_y.assign(n, {});
  tr.dense_mask.assign(n, {});
  tr.dense_drop.assign(n, {});

  for (int ch = 0; ch < n; ++ch) {
    tr.cells[ch].resize(L);
    tr.seqs[ch].resize(L - 1);
    const std::vector<Mat<Scalar>>* cur = &in.x[ch];
    for (int l = 0; l < L; ++l) {
      tr.cells[ch][l].resize(dirs_);
      tr.cells[ch][l][0] = run_cell(tensor_base(ch, l, 0), *cur, false);
      if (dirs_ == 2)
        tr.cells[ch][l][1] = run_cell(tensor_base(ch, l, 1), *cur, true);
      const auto& fwd = tr.cells[ch][l][0];
      if (l + 1 < L) {
        auto& seq = tr.seqs[ch][l];
        seq.resize(T);
        for (int t = 0; t < T; ++t) {
          if (dirs_ == 2) {
            seq[t].resize(B, enc_out_);
            seq[t].leftCols(hidden_) = fwd.h[t];
            // Reversed cell's processing step T-1-t read input index t.
            seq[t].rightCols(hidden_) = tr.cells[ch][l][1].h[T - 1 - t];
          } else {
            seq[t] = fwd.h[t];
          }
        }
        cur = &seq;
      } else {
        if (dirs_ == 2) {
          tr.enc[ch].resize(B, enc_out_);
          tr.enc[ch].leftCols(hidden_) = fwd.h[T - 1];
          tr.enc[ch].rightCols(hidden_) = tr.cells[ch][l][1].h[T - 1];
        } else {
          tr.enc[ch] = fwd.h[T - 1];
        }
      }
    }
    tr.enc_drop[ch] = tr.enc[ch];
    apply_dropout(tr.enc_drop[ch], tr.enc_mask[ch], cfg_.dropout, training,
                  rng);
  }

  if (dense_ > 0) {
    for (int ch = 0; ch < n; ++ch) {
      const Mat<Scalar>& Wd = tensors_[dense_w_base_ + 2 * ch];
      const Mat<Scalar>& bd = tensors_[dense_w_base_ + 2 * ch + 1];
      tr.dense_z[ch].noalias() = tr.enc_drop[ch] * Wd.transpose();
      tr.dense_z[ch].rowwise() += bd.col(0).transpose();
      tr.dense_y[ch] = apply_activation(tr.dense_z[ch], cfg_.dense_activation);
      tr.dense_drop[ch] = tr.dense_y[ch];
      apply_dropout(tr.dense_drop[ch], tr.dense_mask[ch], cfg_.dropout,
                    training, rng);
    }
  }

  const int wpart = dense_ > 0 ? dense_ : enc_out_;
  tr.concat.resize(B, concat_w_);
  for (int ch = 0; ch < n; ++ch)
    tr.concat.middleCols(ch * wpart, wpart) =
        dense_ > 0 ? tr.dense_drop[ch] : tr.enc_drop[ch];

  if (dense_ > 0) {
    const Mat<Scalar>& Wf = tensors_[fusion_w_base_];
    const Mat<Scalar>& bf = tensors_[fusion_w_base_ + 1];
    tr.fusion_z.noalias() = tr.concat * Wf.transpose();
    tr.fusion_z.rowwise() += bf.col(0).transpose();
    tr.fusion_y = apply_activation(tr.fusion_z, cfg_.dense_activation);
    tr.top = tr.fusion_y;
    apply_dropout(tr.top, tr.fusion_mask, cfg_.dropout, training, rng);
  } else {
    tr.top = tr.concat;
  }

  const Mat<Scalar>& Ws = tensors_[softmax_base_];
  const Mat<Scalar>& bs = tensors_[softmax_base_ + 1];
  tr.logits.noalias() = tr.top * Ws.transpose();
  tr.logits.rowwise() += bs.col(0).transpose();

  tr.probs.resize(B, 2);
  for (int r = 0; r < B; ++r) {
    const double l0 = tr.logits(r, 0), l1 = tr.logits(r, 1);
    const double m = std::max(l0, l1);
    const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
    const double sum = e0 + e1;
    tr.probs(r, 0) = static_cast<Scalar>(e0 / sum);
    tr.probs(r, 1) = static_cast<Scalar>(e1 / sum);
  }
  return tr.probs;
}

template <class Scalar>
Mat<Scalar> FusionNet<Scalar>::forward(const BatchInput<Scalar>& in,
                                       bool training, Rng* rng) {
  return forward_internal(in, training, rng, nullptr);
}

template <class Scalar>
void FusionNet<Scalar>::backward(const BatchInput<Scalar>& in,
                                 const Trace& tr, const Mat<Scalar>& dlogits) {
  const int n = static_cast<int>(cfg_.channels.size());
  const int T = cfg_.time_steps;
  const int L = cfg_.lstm_layers;
  const int B = in.batch_size();
  const int H = hidden_;

  grads_[softmax_base_].noalias() += dlogits.transpose() * tr.top;
  grads_[softmax_base_ + 1].col(0).noalias() +=
      dlogits.colwise().sum().transpose();
  Mat<Scalar> dtop = dlogits * tensors_[softmax_base_];

  Mat<Scalar> dconcat;
  if (dense_ > 0) {
    if (tr.fusion_mask.size() > 0) dtop = dtop.cwiseProduct(tr.fusion_mask);
    const Mat<Scalar> dzf = dtop.cwiseProduct(
        activation_grad(tr.fusion_z, tr.fusion_y, cfg_.dense_activation));
    grads_[fusion_w_base_].noalias() += dzf.transpose() * tr.concat;
    grads_[fusion_w_base_ + 1].col(0).noalias() +=
        dzf.colwise().sum().transpose();
    dconcat.noalias() = dzf * tensors_[fusion_w_base_];
  } else {
    dconcat = std::move(dtop);
  }

  const int wpart = dense_ > 0 ? dense_ : enc_out_;
  for (int ch = 0; ch < n; ++ch) {
    Mat<Scalar> dpart = dconcat.middleCols(ch * wpart, wpart);
    Mat<Scalar> denc_drop;
    if (dense_ > 0) {
      if (tr.dense_mask[ch].size() > 0)
        dpart = dpart.cwiseProduct(tr.dense_mask[ch]);
      const Mat<Scalar> dz = dpart.cwiseProduct(activation_grad(
          tr.dense_z[ch], tr.dense_y[ch], cfg_.dense_activation));
      grads_[dense_w_base_ + 2 * ch].noalias() +=
          dz.transpose() * tr.enc_drop[ch];
      grads_[dense_w_base_ + 2 * ch + 1].col(0).noalias() +=
          dz.colwise().sum().transpose();
      denc_drop.noalias() = dz * tensors_[dense_w_base_ + 2 * ch];
    } else {
      denc_drop = std::move(dpart);
    }
    if (tr.enc_mask[ch].size() > 0)
      denc_drop = denc_drop.cwiseProduct(tr.enc_mask[ch]);

    // Gradient w.r.t. the output sequence of the layer below, input order.
    std::vector<Mat<Scalar>> dseq_upper;
    for (int l = L - 1; l >= 0; --l) {
      std::vector<Mat<Scalar>> dh_f(T, Mat<Scalar>::Zero(B, H));
      std::vector<Mat<Scalar>> dh_b;
      if (dirs_ == 2) dh_b.assign(T, Mat<Scalar>::Zero(B, H));
      if (l == L - 1) {
        dh_f[T - 1] += denc_drop.leftCols(H);
        if (dirs_ == 2) dh_b[T - 1] += denc_drop.rightCols(H);
      } else {
        for (int t = 0; t < T; ++t) {
          dh_f[t] += dseq_upper[t].leftCols(H);
          if (dirs_ == 2) dh_b[T - 1 - t] += dseq_upper[t].rightCols(H);
        }
      }
      std::vector<Mat<Scalar>> dx_f, dx_b;
      cell_backward(tensor_base(ch, l, 0), tr.cells[ch][l][0], dh_f, dx_f);
      if (dirs_ == 2)
        cell_backward(tensor_base(ch, l, 1), tr.cells[ch][l][1], dh_b, dx_b);
      if (l > 0) {
        std::vector<Mat<Scalar>> dseq_lower(T);
        for (int t = 0; t < T; ++t) {
          dseq_lower[t] = dx_f[t];
          // Reversed cell's processing step T-1-t read input index t.
          if (dirs_ == 2) dseq_lower[t] += dx_b[T - 1 - t];
        }
        dseq_upper = std::move(dseq_lower);
      }
    }
  }
}

namespace {

// Names the first stage whose activations went non-finite, for error text.
template <class Trace>
std::string bad_stage_name(const Trace& tr, int channels, int dense) {
  for (int ch = 0; ch < channels; ++ch)
    if (!tr.enc[ch].allFinite())
      return "encoder output of channel " + std::to_string(ch);
  if (dense > 0) {
    for (int ch = 0; ch < channels; ++ch)
      if (!tr.dense_y[ch].allFinite())
        return "dense output of channel " + std::to_string(ch);
    if (!tr.fusion_y.allFinite()) return "fused dense output";
  }
  if (!tr.logits.allFinite()) return "softmax logits";
  return "loss reduction";
}

}  // namespace

template <class Scalar>
double FusionNet<Scalar>::loss_and_gradients(
    const BatchInput<Scalar>& in, const std::array<double, 2>& class_weights,
    bool training, Rng* rng) {
  zero_grads();
  Trace tr;
  forward_internal(in, training, rng, &tr);
  const int B = in.batch_size();
  Mat<Scalar> dlogits(B, 2);
  double loss = 0.0;
  for (int r = 0; r < B; ++r) {
    const int y = in.labels[r];
    if (y != 0 && y != 1) throw RunError("labels must be 0 or 1");
    const double w = class_weights[y];
    const double l0 = tr.logits(r, 0), l1 = tr.logits(r, 1);
    const double m = std::max(l0, l1);
    const double lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
    loss -= w * ((y == 0 ? l0 : l1) - lse);
    const double p0 = std::exp(l0 - lse), p1 = std::exp(l1 - lse);
    dlogits(r, 0) = static_cast<Scalar>((p0 - (y == 0 ? 1.0 : 0.0)) * w / B);
    dlogits(r, 1) = static_cast<Scalar>((p1 - (y == 1 ? 1.0 : 0.0)) * w / B);
  }
  loss /= B;
  if (!std::isfinite(loss))
    throw RunError(
        "non-finite values in " +
        bad_stage_name(tr, static_cast<int>(cfg_.channels.size()), dense_));
  backward(in, tr, dlogits);
  return loss;
}

template <class Scalar>
double FusionNet<Scalar>::loss_only(
    const BatchInput<Scalar>& in, const std::array<double, 2>& class_weights) {
  Trace tr;
  forward_internal(in, false, nullptr, &tr);
  const int B = in.batch_size();
  double loss = 0.0;
  for (int r = 0; r < B; ++r) {
    const int y = in.labels[r];
    if (y != 0 && y != 1) throw RunError("labels must be 0 or 1");
    const double l0 = tr.logits(r, 0), l1 = tr.logits(r, 1);
    const double m = std::max(l0, l1);
    const double lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
    loss -= class_weights[y] * ((y == 0 ? l0 : l1) - lse);
  }
  loss /= B;
  if (!std::isfinite(loss))
    throw RunError(
        "non-finite values in " +
        bad_stage_name(tr, static_cast<int>(cfg_.channels.size()), dense_));
  return loss;
}

template class FusionNet<float>;
template class FusionNet<double>;

// ---------------------------------------------------------------------------
// Training.

template <class Scalar>
void AdamState<Scalar>::attach(const std::vector<TensorShape>& layout) {
  t = 0;
  m.clear();
  v.clear();
  m.reserve(layout.size());
  v.reserve(layout.size());
  for (const auto& s : layout) {
    m.push_back(Mat<Scalar>::Zero(s.rows, s.cols));
    v.push_back(Mat<Scalar>::Zero(s.rows, s.cols));
  }
}

template <class Scalar>
void AdamState<Scalar>::step(std::vector<Mat<Scalar>>& tensors,
                             const std::vector<Mat<Scalar>>& grads) {
  if (tensors.size() != m.size() || grads.size() != m.size())
    throw RunError("optimizer state does not match the network");
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  const Scalar b1 = Scalar(beta1), b2 = Scalar(beta2);
  const Scalar scale1 = Scalar(1.0 / bc1), scale2 = Scalar(1.0 / bc2);
  const Scalar step_lr = Scalar(lr), e = Scalar(eps);
  for (std::size_t k = 0; k < m.size(); ++k) {
    m[k] = b1 * m[k] + (Scalar(1) - b1) * grads[k];
    v[k] = (b2 * v[k].array() +
            (Scalar(1) - b2) * grads[k].array().square())
               .matrix();
    tensors[k].array() -= step_lr * (m[k].array() * scale1) /
                          ((v[k].array() * scale2).sqrt() + e);
  }
}

template struct AdamState<float>;
template struct AdamState<double>;

int TrainingSet::total_windows() const {
  int total = 0;
  for (const auto& p : parts) total += p.num_windows();
  return total;
}

std::array<std::int64_t, 2> TrainingSet::label_counts() const {
  std::array<std::int64_t, 2> counts{0, 0};
  for (const auto& p : parts)
    for (auto lab : p.subject->labels) ++counts[lab ? 1 : 0];
  return counts;
}

TrainingSet make_training_set(
    const std::vector<std::shared_ptr<const PreparedSubject>>& subjects,
    const ModelConfig& cfg) {
  TrainingSet set;
  for (const auto& s : subjects) {
    if (!s) throw DataError("null subject in training set");
    std::vector<int> slot_map;
    slot_map.reserve(cfg.channels.size());
    for (auto ch : cfg.channels)
      slot_map.push_back(s->slot_of(channel_name(ch)));
    set.parts.push_back(SubjectWindows{s, cfg.time_steps});
    set.slots.push_back(std::move(slot_map));
  }
  return set;
}

BatchInput<float> gather_batch(const TrainingSet& set,
                               const std::vector<std::pair<int, int>>& which,
                               int input_dim) {
  if (set.parts.empty()) throw DataError("empty training set");
  const int n = static_cast<int>(set.slots[0].size());
  const int T = set.parts[0].time_steps;
  const int B = static_cast<int>(which.size());
  if (B < 1) throw RunError("empty batch request");

  BatchInput<float> out;
  out.x.assign(n, std::vector<Mat<float>>(T));
  for (int ch = 0; ch < n; ++ch)
    for (int t = 0; t < T; ++t) out.x[ch][t].resize(B, input_dim);
  out.labels.resize(B);

  for (int b = 0; b < B; ++b) {
    const auto [pi, w] = which[b];
    const SubjectWindows& part = set.parts[pi];
    const PreparedSubject& subj = *part.subject;
    for (int ch = 0; ch < n; ++ch) {
      const Eigen::MatrixXf& epochs = subj.channel_epochs[set.slots[pi][ch]];
      if (epochs.cols() != input_dim)
        throw DataError("epoch width does not match the network input");
      for (int t = 0; t < T; ++t)
        out.x[ch][t].row(b) = epochs.row(part.epoch_for_step(w, t));
    }
    out.labels[b] = subj.labels[w];
  }
  return out;
}

std::array<double, 2> balanced_class_weights(
    const std::array<std::int64_t, 2>& counts) {
  if (counts[0] <= 0 || counts[1] <= 0)
    throw DataError("training labels contain a single class");
  const double total = static_cast<double>(counts[0] + counts[1]);
  return {total / (2.0 * counts[0]), total / (2.0 * counts[1])};
}

TrainHistory train_network(FusionNetF& net, const TrainingSet& data,
                           const TrainSpec& spec) {
  if (data.total_windows() < 1) throw DataError("nothing to train on");
  if (spec.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (spec.max_epochs < 0) throw ConfigError("max_epochs must be >= 0");

  net.init_params(derive_seed(spec.seed, seed_role::kInit));
  const auto weights = spec.class_weights
                           ? *spec.class_weights
                           : balanced_class_weights(data.label_counts());

  AdamState<float> adam;
  adam.lr = spec.learning_rate;
  adam.attach(net.layout());

  Rng shuffle_rng(derive_seed(spec.seed, seed_role::kShuffle));
  Rng drop_rng(derive_seed(spec.seed, seed_role::kDropout));

  std::vector<std::pair<int, int>> order;
  order.reserve(data.total_windows());
  for (int pi = 0; pi < static_cast<int>(data.parts.size()); ++pi)
    for (int w = 0; w < data.parts[pi].num_windows(); ++w)
      order.emplace_back(pi, w);

  TrainHistory history;
  const int N = static_cast<int>(order.size());
  for (int epoch = 0; epoch < spec.max_epochs; ++epoch) {
    for (int i = N - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.below(i + 1)]);

    double weighted_sum = 0.0;
    for (int start = 0; start < N; start += spec.batch_size) {
      const int stop = std::min(N, start + spec.batch_size);
      const std::vector<std::pair<int, int>> which(order.begin() + start,
                                                   order.begin() + stop);
      const auto batch = gather_batch(data, which, net.input_dim());
      double loss = 0.0;
      try {
        loss = net.loss_and_gradients(batch, weights, true, &drop_rng);
      } catch (const RunError& e) {
        throw RunError("epoch " + std::to_string(epoch + 1) + ", batch at " +
                       std::to_string(start) + ": " + e.what());
      }
      adam.step(net.tensors(), net.grads());
      weighted_sum += loss * (stop - start);
    }
    history.epoch_loss.push_back(weighted_sum / N);
  }
  return history;
}

std::vector<double> score_windows(FusionNetF& net, const SubjectWindows& part,
                                  const std::vector<int>& slots,
                                  int batch_size) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  TrainingSet one;
  one.parts.push_back(part);
  one.slots.push_back(slots);
  const int N = part.num_windows();
  std::vector<double> out(N);
  for (int start = 0; start < N; start += batch_size) {
    const int stop = std::min(N, start + batch_size);
    std::vector<std::pair<int, int>> which;
    which.reserve(stop - start);
    for (int w = start; w < stop; ++w) which.emplace_back(0, w);
    const auto batch = gather_batch(one, which, net.input_dim());
    const auto probs = net.forward(batch, false);
    for (int w = start; w < stop; ++w) out[w] = probs(w - start, 1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient verification.

GradCheckReport gradient_check(const ModelConfig& cfg, int input_dim,
                               const StructureOverrides& ov, int batch,
                               std::uint64_t seed, double fd_eps) {
  if (batch < 2) throw ConfigError("gradient check needs batch >= 2");
  FusionNetD net(cfg, input_dim, ov);
  net.init_params(derive_seed(seed, seed_role::kInit));

  Rng rng(derive_seed(seed, seed_role::kNoise));
  BatchInput<double> in;
  const int n = static_cast<int>(cfg.channels.size());
  in.x.assign(n, std::vector<Mat<double>>(cfg.time_steps));
  for (int ch = 0; ch < n; ++ch)
    for (int t = 0; t < cfg.time_steps; ++t) {
      auto& m = in.x[ch][t];
      m.resize(batch, input_dim);
      for (int r = 0; r < batch; ++r)
        for (int c = 0; c < input_dim; ++c) m(r, c) = rng.normal();
    }
  in.labels.resize(batch);
  for (int r = 0; r < batch; ++r) in.labels[r] = r % 2;

  const std::array<double, 2> weights{0.7, 1.6};
  net.loss_and_gradients(in, weights, false, nullptr);
  const std::vector<Mat<double>> analytic = net.grads();

  GradCheckReport report;
  auto& tensors = net.tensors();
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    for (Eigen::Index r = 0; r < tensors[k].rows(); ++r)
      for (Eigen::Index c = 0; c < tensors[k].cols(); ++c) {
        const double orig = tensors[k](r, c);
        tensors[k](r, c) = orig + fd_eps;
        const double lp = net.loss_only(in, weights);
        tensors[k](r, c) = orig - fd_eps;
        const double lm = net.loss_only(in, weights);
        tensors[k](r, c) = orig;
        const double numeric = (lp - lm) / (2.0 * fd_eps);
        const double ga = analytic[k](r, c);
        const double rel = std::abs(ga - numeric) /
                           std::max({std::abs(ga), std::abs(numeric), 1e-8});
        if (rel > report.max_rel_err) {
          report.max_rel_err = rel;
          report.worst_tensor = net.layout()[k].name;
        }
      }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoints.

namespace {

constexpr char kCheckpointMagic[8] = {'T', 'S', 'F', 'U', 'S', 'E', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw DataError("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
  std::uint32_t bits = 0;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

float get_f32(std::istream& is) {
  const std::uint32_t bits = get_u32(is);
  float v = 0.0f;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void save_checkpoint(const FusionNetF& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint: " + path);

  nlohmann::ordered_json structure;
  structure["config"] = config_to_json(net.config());
  structure["overrides"] = {{"lstm_shape", net.overrides().lstm_shape},
                            {"dense_size", net.overrides().dense_size}};
  structure["input_dim"] = net.input_dim();
  const std::string header = structure.dump();

  os.write(kCheckpointMagic, 8);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));

  for (const auto& t : net.tensors()) {
    if (t.cols() == 1) {
      put_u32(os, 1);
      put_u32(os, static_cast<std::uint32_t>(t.rows()));
    } else {
      put_u32(os, 2);
      put_u32(os, static_cast<std::uint32_t>(t.rows()));
      put_u32(os, static_cast<std::uint32_t>(t.cols()));
    }
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) put_f32(os, t(r, c));
  }
  if (!os) throw DataError("checkpoint write failed: " + path);
}

FusionNetF load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read checkpoint: " + path);

  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("not a checkpoint file: " + path);
  if (get_u32(is) != kCheckpointVersion)
    throw DataError("unsupported checkpoint version: " + path);

  const std::uint32_t header_len = get_u32(is);
  std::string header(header_len, '\0');
  is.read(header.data(), header_len);
  if (!is) throw DataError("checkpoint truncated: " + path);

  nlohmann::json structure;
  try {
    structure = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint header: ") + e.what());
  }
  if (!structure.contains("config") || !structure.contains("input_dim"))
    throw DataError("checkpoint header is missing fields: " + path);
  const ModelConfig cfg = config_from_json(structure["config"]);
  StructureOverrides ov;
  if (structure.contains("overrides")) {
    const auto& j = structure["overrides"];
    if (j.contains("lstm_shape")) ov.lstm_shape = j["lstm_shape"].get<int>();
    if (j.contains("dense_size")) ov.dense_size = j["dense_size"].get<int>();
  }
  const int input_dim = structure["input_dim"].get<int>();

  FusionNetF net(cfg, input_dim, ov);
  for (auto& t : net.tensors()) {
    const std::uint32_t ndim = get_u32(is);
    std::uint32_t rows = 0, cols = 1;
    if (ndim == 1) {
      rows = get_u32(is);
    } else if (ndim == 2) {
      rows = get_u32(is);
      cols = get_u32(is);
    } else {
      throw DataError("checkpoint tensor rank is not 1 or 2: " + path);
    }
    if (static_cast<Eigen::Index>(rows) != t.rows() ||
        static_cast<Eigen::Index>(cols) != t.cols())
      throw DataError("checkpoint tensor shape mismatch: " + path);
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = get_f32(is);
  }
  if (!is) throw DataError("checkpoint truncated: " + path);
  return net;
}

}  // namespace tsfuse
