#include "cloak/nn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "cloak/error.hpp"

namespace cloak::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

std::size_t batch_of(const Tensor& t, const Shape& sample_shape, const char* who) {
  if (t.rank() != sample_shape.size() + 1 || !std::equal(sample_shape.begin(), sample_shape.end(), t.shape().begin() + 1)) {
    throw ShapeError(std::string(who) + ": expected batch of " + shape_string(sample_shape) + ", got " +
                     shape_string(t.shape()));
  }
  return t.dim(0);
}

Shape batched(std::size_t batch, const Shape& sample) {
  Shape s{batch};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

void require_sequence(const Shape& in, const char* who) {
  if (in.size() != 2) throw ShapeError(std::string(who) + " needs a {channels, length} input, got " + shape_string(in));
}

}  // namespace

std::string layer_name(const LayerSpec& spec) {
  struct {
    std::string operator()(const Conv1DSpec&) const { return "Conv1D"; }
    std::string operator()(const MaxPool1DSpec&) const { return "MaxPool1D"; }
    std::string operator()(const BatchNormSpec&) const { return "BatchNorm"; }
    std::string operator()(const DropoutSpec&) const { return "Dropout"; }
    std::string operator()(const FlattenSpec&) const { return "Flatten"; }
    std::string operator()(const DenseSpec&) const { return "Dense"; }
    std::string operator()(const SoftmaxOutputSpec&) const { return "SoftmaxOutput"; }
  } visitor;
  return std::visit(visitor, spec);
}

// ---------------------------------------------------------------------------
// Conv1D: valid cross-correlation, computed per sample as W * im2col(x).

Conv1D::Conv1D(Conv1DSpec spec, const Shape& in_shape) : spec_(spec) {
  require_sequence(in_shape, "Conv1D");
  if (spec.filters < 1 || spec.kernel < 1 || spec.stride < 1) throw ShapeError("Conv1D parameters must be positive");
  in_channels_ = in_shape[0];
  in_len_ = in_shape[1];
  if (spec.kernel > in_len_) {
    throw ShapeError("Conv1D kernel " + std::to_string(spec.kernel) + " longer than input length " +
                     std::to_string(in_len_));
  }
  out_shape_ = {spec.filters, (in_len_ - spec.kernel) / spec.stride + 1};
  weight = Tensor({spec.filters, in_channels_, spec.kernel});
  bias = Tensor({spec.filters});
}

Tensor Conv1D::forward(const Tensor& in, Mode mode, Rng*, LayerCache& cache) const {
  const std::size_t batch = batch_of(in, {in_channels_, in_len_}, "Conv1D");
  const std::size_t out_len = out_shape_[1];
  const std::size_t patch = in_channels_ * spec_.kernel;
  Tensor out(batched(batch, out_shape_));
  RowMat col(patch, out_len);
  const ConstMatMap w(weight.data(), spec_.filters, patch);
  const ConstVecMap b(bias.data(), spec_.filters);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* x = in.data() + n * in_channels_ * in_len_;
    for (std::size_t c = 0; c < in_channels_; ++c) {
      for (std::size_t k = 0; k < spec_.kernel; ++k) {
        double* dst = col.data() + (c * spec_.kernel + k) * out_len;
        const double* src = x + c * in_len_ + k;
        for (std::size_t t = 0; t < out_len; ++t) dst[t] = src[t * spec_.stride];
      }
    }
    MatMap y(out.data() + n * spec_.filters * out_len, spec_.filters, out_len);
    y.noalias() = w * col;
    y.colwise() += b;
  }
  cache.input = in;
  cache.mode = mode;
  return out;
}

Tensor Conv1D::backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads grads) const {
  const Tensor& in = cache.input;
  const std::size_t batch = in.dim(0);
  const std::size_t out_len = out_shape_[1];
  const std::size_t patch = in_channels_ * spec_.kernel;
  Tensor grad_in(in.shape());
  RowMat col(patch, out_len);
  RowMat dcol(patch, out_len);
  const ConstMatMap w(weight.data(), spec_.filters, patch);
  for (std::size_t n = 0; n < batch; ++n) {
    const ConstMatMap dy(grad_out.data() + n * spec_.filters * out_len, spec_.filters, out_len);
    const double* x = in.data() + n * in_channels_ * in_len_;
    if (!grads.empty()) {
      for (std::size_t c = 0; c < in_channels_; ++c) {
        for (std::size_t k = 0; k < spec_.kernel; ++k) {
          double* dst = col.data() + (c * spec_.kernel + k) * out_len;
          const double* src = x + c * in_len_ + k;
          for (std::size_t t = 0; t < out_len; ++t) dst[t] = src[t * spec_.stride];
        }
      }
      MatMap dw(grads[0].data(), spec_.filters, patch);
      dw.noalias() += dy * col.transpose();
      VecMap db(grads[1].data(), spec_.filters);
      db += dy.rowwise().sum();
    }
    dcol.noalias() = w.transpose() * dy;
    double* dx = grad_in.data() + n * in_channels_ * in_len_;
    for (std::size_t c = 0; c < in_channels_; ++c) {
      for (std::size_t k = 0; k < spec_.kernel; ++k) {
        const double* src = dcol.data() + (c * spec_.kernel + k) * out_len;
        double* dst = dx + c * in_len_ + k;
        for (std::size_t t = 0; t < out_len; ++t) dst[t * spec_.stride] += src[t];
      }
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// MaxPool1D

MaxPool1D::MaxPool1D(MaxPool1DSpec spec, const Shape& in_shape) : spec_(spec) {
  require_sequence(in_shape, "MaxPool1D");
  if (spec.window < 1) throw ShapeError("MaxPool1D window must be at least 1");
  channels_ = in_shape[0];
  in_len_ = in_shape[1];
  if (spec.window > in_len_) {
    throw ShapeError("MaxPool1D window " + std::to_string(spec.window) + " longer than input length " +
                     std::to_string(in_len_));
  }
  out_shape_ = {channels_, in_len_ / spec.window};
}

Tensor MaxPool1D::forward(const Tensor& in, Mode mode, Rng*, LayerCache& cache) const {
  const std::size_t batch = batch_of(in, {channels_, in_len_}, "MaxPool1D");
  const std::size_t out_len = out_shape_[1];
  Tensor out(batched(batch, out_shape_));
  cache.argmax.resize(out.size());
  for (std::size_t row = 0; row < batch * channels_; ++row) {
    const double* x = in.data() + row * in_len_;
    for (std::size_t t = 0; t < out_len; ++t) {
      std::size_t best = t * spec_.window;
      for (std::size_t i = best + 1; i < (t + 1) * spec_.window; ++i) {
        if (x[i] > x[best]) best = i;
      }
      out[row * out_len + t] = x[best];
      cache.argmax[row * out_len + t] = row * in_len_ + best;
    }
  }
  cache.in_shape = in.shape();
  cache.mode = mode;
  return out;
}

Tensor MaxPool1D::backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads) const {
  Tensor grad_in(cache.in_shape, 0.0);
  for (std::size_t i = 0; i < grad_out.size(); ++i) grad_in[cache.argmax[i]] += grad_out[i];
  return grad_in;
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(BatchNormSpec spec, const Shape& in_shape) : spec_(spec), out_shape_(in_shape) {
  if (in_shape.size() == 2) {
    channels_ = in_shape[0];
    length_ = in_shape[1];
  } else if (in_shape.size() == 1) {
    channels_ = in_shape[0];
    length_ = 1;
  } else {
    throw ShapeError("BatchNorm needs a sequence or flat input, got " + shape_string(in_shape));
  }
  if (!(spec.eps > 0.0) || !(spec.momentum >= 0.0 && spec.momentum < 1.0)) {
    throw ShapeError("BatchNorm needs eps > 0 and momentum in [0, 1)");
  }
  gamma = Tensor({channels_}, 1.0);
  beta = Tensor({channels_}, 0.0);
  running_mean = Tensor({channels_}, 0.0);
  running_var = Tensor({channels_}, 1.0);
}

Tensor BatchNorm::forward(const Tensor& in, Mode mode, Rng*, LayerCache& cache) const {
  const std::size_t batch = batch_of(in, out_shape_, "BatchNorm");
  Tensor out(in.shape());
  cache.mode = mode;
  cache.mean.assign(channels_, 0.0);
  cache.inv_std.assign(channels_, 0.0);
  if (mode == Mode::Train) {
    if (batch < 2) throw Error("BatchNorm in train mode needs a batch of at least 2");
    const auto count = static_cast<double>(batch * length_);
    for (std::size_t c = 0; c < channels_; ++c) {
      double sum = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const double* x = in.data() + (n * channels_ + c) * length_;
        for (std::size_t t = 0; t < length_; ++t) sum += x[t];
      }
      const double mean = sum / count;
      double sq = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const double* x = in.data() + (n * channels_ + c) * length_;
        for (std::size_t t = 0; t < length_; ++t) sq += (x[t] - mean) * (x[t] - mean);
      }
      cache.mean[c] = mean;
      cache.inv_std[c] = 1.0 / std::sqrt(sq / count + spec_.eps);
    }
    cache.aux = Tensor(in.shape());
  } else {
    for (std::size_t c = 0; c < channels_; ++c) {
      cache.mean[c] = running_mean[c];
      cache.inv_std[c] = 1.0 / std::sqrt(running_var[c] + spec_.eps);
    }
  }
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels_; ++c) {
      const std::size_t off = (n * channels_ + c) * length_;
      for (std::size_t t = 0; t < length_; ++t) {
        const double xhat = (in[off + t] - cache.mean[c]) * cache.inv_std[c];
        if (mode == Mode::Train) cache.aux[off + t] = xhat;
        out[off + t] = gamma[c] * xhat + beta[c];
      }
    }
  }
  return out;
}

Tensor BatchNorm::backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads grads) const {
  const std::size_t batch = grad_out.dim(0);
  Tensor grad_in(grad_out.shape());
  if (cache.mode == Mode::Infer) {
    // Running statistics are constants, so the layer is affine. Only the
    // input gradient is produced here; training always runs in Train mode.
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t c = 0; c < channels_; ++c) {
        const std::size_t off = (n * channels_ + c) * length_;
        for (std::size_t t = 0; t < length_; ++t) grad_in[off + t] = grad_out[off + t] * gamma[c] * cache.inv_std[c];
      }
    }
    return grad_in;
  }
  const auto count = static_cast<double>(batch * length_);
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * channels_ + c) * length_;
      for (std::size_t t = 0; t < length_; ++t) {
        sum_dy += grad_out[off + t];
        sum_dy_xhat += grad_out[off + t] * cache.aux[off + t];
      }
    }
    if (!grads.empty()) {
      grads[0][c] += sum_dy_xhat;
      grads[1][c] += sum_dy;
    }
    const double scale = gamma[c] * cache.inv_std[c] / count;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * channels_ + c) * length_;
      for (std::size_t t = 0; t < length_; ++t) {
        grad_in[off + t] = scale * (count * grad_out[off + t] - sum_dy - cache.aux[off + t] * sum_dy_xhat);
      }
    }
  }
  return grad_in;
}

void BatchNorm::update_running(const LayerCache& cache) {
  if (cache.mode != Mode::Train) return;
  // The first batch replaces the placeholder (0, 1) statistics outright.
  const double keep = running_seeded ? spec_.momentum : 0.0;
  for (std::size_t c = 0; c < channels_; ++c) {
    const double var = 1.0 / (cache.inv_std[c] * cache.inv_std[c]) - spec_.eps;
    running_mean[c] = keep * running_mean[c] + (1.0 - keep) * cache.mean[c];
    running_var[c] = keep * running_var[c] + (1.0 - keep) * std::max(var, 0.0);
  }
  running_seeded = true;
}

// ---------------------------------------------------------------------------
// Dropout

Dropout::Dropout(DropoutSpec spec, const Shape& in_shape) : spec_(spec), out_shape_(in_shape) {
  if (!(spec.rate >= 0.0 && spec.rate < 1.0)) throw ShapeError("Dropout rate must be in [0, 1)");
}

Tensor Dropout::forward(const Tensor& in, Mode mode, Rng* rng, LayerCache& cache) const {
  batch_of(in, out_shape_, "Dropout");
  cache.mode = mode;
  if (mode == Mode::Infer || spec_.rate == 0.0) {
    cache.aux = Tensor();
    return in;
  }
  if (rng == nullptr) throw Error("Dropout in train mode needs a random stream");
  const double keep_scale = 1.0 / (1.0 - spec_.rate);
  cache.aux = Tensor(in.shape());
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double m = rng->uniform() < spec_.rate ? 0.0 : keep_scale;
    cache.aux[i] = m;
    out[i] = in[i] * m;
  }
  return out;
}

Tensor Dropout::backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads) const {
  if (cache.aux.size() == 0) return grad_out;
  Tensor grad_in(grad_out.shape());
  for (std::size_t i = 0; i < grad_out.size(); ++i) grad_in[i] = grad_out[i] * cache.aux[i];
  return grad_in;
}

// ---------------------------------------------------------------------------
// Flatten

Flatten::Flatten(FlattenSpec, const Shape& in_shape) : out_shape_{shape_size(in_shape)} {}

Tensor Flatten::forward(const Tensor& in, Mode mode, Rng*, LayerCache& cache) const {
  cache.mode = mode;
  cache.in_shape = in.shape();
  if (in.size() % out_shape_[0] != 0) throw ShapeError("Flatten: unexpected input " + shape_string(in.shape()));
  return in.reshaped({in.dim(0), out_shape_[0]});
}

Tensor Flatten::backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads) const {
  return grad_out.reshaped(cache.in_shape);
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(DenseSpec spec, const Shape& in_shape) : spec_(spec) {
  if (in_shape.size() != 1) throw ShapeError("Dense needs a flat input, got " + shape_string(in_shape));
  if (spec.units < 1) throw ShapeError("Dense needs at least one unit");
  in_features_ = in_shape[0];
  out_shape_ = {spec.units};
  weight = Tensor({spec.units, in_features_});
  bias = Tensor({spec.units});
}

Tensor Dense::forward(const Tensor& in, Mode mode, Rng*, LayerCache& cache) const {
  const std::size_t batch = batch_of(in, {in_features_}, "Dense");
  Tensor out({batch, spec_.units});
  const ConstMatMap x(in.data(), batch, in_features_);
  const ConstMatMap w(weight.data(), spec_.units, in_features_);
  MatMap y(out.data(), batch, spec_.units);
  y.noalias() = x * w.transpose();
  y.rowwise() += ConstVecMap(bias.data(), spec_.units).transpose();
  cache.input = in;
  cache.mode = mode;
  return out;
}

Tensor Dense::backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads grads) const {
  const std::size_t batch = grad_out.dim(0);
  const ConstMatMap dy(grad_out.data(), batch, spec_.units);
  const ConstMatMap w(weight.data(), spec_.units, in_features_);
  if (!grads.empty()) {
    const ConstMatMap x(cache.input.data(), batch, in_features_);
    MatMap(grads[0].data(), spec_.units, in_features_).noalias() += dy.transpose() * x;
    VecMap(grads[1].data(), spec_.units) += dy.colwise().sum().transpose();
  }
  Tensor grad_in({batch, in_features_});
  MatMap(grad_in.data(), batch, in_features_).noalias() = dy * w;
  return grad_in;
}

// ---------------------------------------------------------------------------
// SoftmaxOutput

SoftmaxOutput::SoftmaxOutput(SoftmaxOutputSpec spec, const Shape& in_shape) : spec_(spec), out_shape_(in_shape) {
  if (in_shape.size() != 1 || in_shape[0] != spec.classes) {
    throw ShapeError("SoftmaxOutput expects " + std::to_string(spec.classes) + " logits, got " +
                     shape_string(in_shape));
  }
  set_temperature(spec.temperature);
}

void SoftmaxOutput::set_temperature(double t) {
  if (!(t > 0.0)) throw Error("softmax temperature must be positive");
  spec_.temperature = t;
}

Tensor SoftmaxOutput::forward(const Tensor& in, Mode mode, Rng*, LayerCache& cache) const {
  batch_of(in, out_shape_, "SoftmaxOutput");
  cache.mode = mode;
  return in;
}

Tensor SoftmaxOutput::backward(const Tensor& grad_out, const LayerCache&, ParamGrads) const { return grad_out; }

// ---------------------------------------------------------------------------

Layer make_layer(const LayerSpec& spec, const Shape& in_shape) {
  return std::visit([&](const auto& s) -> Layer {
    using S = std::decay_t<decltype(s)>;
    if constexpr (std::is_same_v<S, Conv1DSpec>) return Conv1D(s, in_shape);
    if constexpr (std::is_same_v<S, MaxPool1DSpec>) return MaxPool1D(s, in_shape);
    if constexpr (std::is_same_v<S, BatchNormSpec>) return BatchNorm(s, in_shape);
    if constexpr (std::is_same_v<S, DropoutSpec>) return Dropout(s, in_shape);
    if constexpr (std::is_same_v<S, FlattenSpec>) return Flatten(s, in_shape);
    if constexpr (std::is_same_v<S, DenseSpec>) return Dense(s, in_shape);
    if constexpr (std::is_same_v<S, SoftmaxOutputSpec>) return SoftmaxOutput(s, in_shape);
  }, spec);
}

LayerSpec spec_of(const Layer& layer) {
  return std::visit([](const auto& l) -> LayerSpec { return l.spec(); }, layer);
}

const Shape& out_shape_of(const Layer& layer) {
  return std::visit([](const auto& l) -> const Shape& { return l.out_shape(); }, layer);
}

std::vector<Tensor*> trainable(Layer& layer) {
  if (auto* c = std::get_if<Conv1D>(&layer)) return {&c->weight, &c->bias};
  if (auto* d = std::get_if<Dense>(&layer)) return {&d->weight, &d->bias};
  if (auto* b = std::get_if<BatchNorm>(&layer)) return {&b->gamma, &b->beta};
  return {};
}

std::vector<const Tensor*> trainable(const Layer& layer) {
  if (const auto* c = std::get_if<Conv1D>(&layer)) return {&c->weight, &c->bias};
  if (const auto* d = std::get_if<Dense>(&layer)) return {&d->weight, &d->bias};
  if (const auto* b = std::get_if<BatchNorm>(&layer)) return {&b->gamma, &b->beta};
  return {};
}

}  // namespace cloak::nn
