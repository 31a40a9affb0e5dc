#include "cloak/clf/cnn.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

#include "cloak/error.hpp"
#include "cloak/format.hpp"
#include "cloak/parallel.hpp"
#include "logits.hpp"

namespace cloak::clf {

using nn::Tensor;

std::vector<nn::LayerSpec> CnnConfig::layers() const {
  return {nn::Conv1DSpec{conv1_filters, conv1_k, 1},
          nn::MaxPool1DSpec{pool},
          nn::BatchNormSpec{},
          nn::DropoutSpec{dropout},
          nn::Conv1DSpec{conv2_filters, conv2_k, 1},
          nn::MaxPool1DSpec{pool},
          nn::BatchNormSpec{},
          nn::DropoutSpec{dropout},
          nn::FlattenSpec{},
          nn::DenseSpec{dense},
          nn::DropoutSpec{dropout},
          nn::DenseSpec{n_classes},
          nn::SoftmaxOutputSpec{n_classes}};
}

nn::Net build_cnn(const CnnConfig& config, std::uint64_t seed) { return nn::Net({1, config.input_len}, config.layers(), seed); }

nn::Net build_linear(std::size_t input_len, std::size_t n_classes, std::uint64_t seed) {
  return nn::Net({input_len}, {nn::DenseSpec{n_classes}, nn::SoftmaxOutputSpec{n_classes}}, seed);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
}

void History::write_csv(std::ostream& out) const {
  auto cell = [](double v) { return format_number(v); };
  out << "epoch,train_accuracy,val_accuracy,train_loss,val_loss\n";
  for (std::size_t e = 0; e < epochs(); ++e) {
    out << e + 1 << ',' << cell(train_accuracy[e]) << ',' << cell(val_accuracy[e]) << ',' << cell(train_loss[e]) << ','
        << cell(val_loss[e]) << '\n';
  }
}

Tensor pack_batch(const nn::Net& net, std::span<const std::span<const double>> rows) {
  const std::size_t d = net.input_size();
  nn::Shape shape{rows.size()};
  shape.insert(shape.end(), net.input_shape().begin(), net.input_shape().end());
  Tensor batch(std::move(shape));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != d) {
      throw ShapeError("input has " + std::to_string(rows[r].size()) + " values, network expects " + std::to_string(d));
    }
    std::copy(rows[r].begin(), rows[r].end(), batch.data() + r * d);
  }
  return batch;
}

std::vector<std::vector<double>> batch_logits(const nn::Net& net, std::span<const Example> xs) {
  const std::size_t c = net.n_classes();
  const std::size_t chunks = (xs.size() + kInferChunk - 1) / kInferChunk;
  std::vector<std::vector<double>> out(xs.size());
  parallel_for(chunks, [&](std::size_t k) {
    const std::size_t lo = k * kInferChunk;
    const std::size_t hi = std::min(xs.size(), lo + kInferChunk);
    std::vector<std::span<const double>> rows;
    for (std::size_t i = lo; i < hi; ++i) rows.push_back(xs[i].x);
    const Tensor logits = net.forward(pack_batch(net, rows), nn::Mode::Infer, nullptr, nullptr);
    for (std::size_t i = lo; i < hi; ++i) {
      out[i].assign(logits.data() + (i - lo) * c, logits.data() + (i - lo + 1) * c);
    }
  });
  return out;
}

NetEvaluation evaluate_net(const nn::Net& net, std::span<const Example> xs) {
  NetEvaluation e;
  if (xs.empty()) {
    e.accuracy = e.loss = std::numeric_limits<double>::quiet_NaN();
    return e;
  }
  const auto logits = batch_logits(net, xs);
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    correct += argmax(logits[i]) == xs[i].label;
    loss -= nn::log_softmax_t(logits[i], net.temperature())[static_cast<std::size_t>(xs[i].label)];
  }
  e.accuracy = static_cast<double>(correct) / static_cast<double>(xs.size());
  e.loss = loss / static_cast<double>(xs.size());
  return e;
}

History fit(nn::Net& net, const FitData& data, std::span<const Example> val, const TrainConfig& config) {
  config.validate();
  if (data.primary.empty()) throw Error("no training data");
  if (!data.soft.empty() && data.soft.size() != data.primary.size()) {
    throw Error("soft targets must match the training examples one to one");
  }
  const std::size_t n_classes = net.n_classes();
  for (const auto* set : {&data.primary, &data.mixin}) {
    for (const auto& ex : *set) {
      if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= n_classes) throw Error("training label out of range");
    }
  }
  for (const auto& q : data.soft) {
    if (q.size() != n_classes) throw ShapeError("soft target length must equal class count");
  }

  const double t = net.temperature();
  const bool mixing = !data.mixin.empty();
  const std::size_t take = mixing ? std::max<std::size_t>(1, config.batch_size / 2) : config.batch_size;

  Rng rng(config.seed);
  nn::AdamState adam{config.adam, {}, {}, 0};
  std::vector<std::size_t> order(data.primary.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> mix_order(data.mixin.size());
  std::iota(mix_order.begin(), mix_order.end(), 0);
  std::size_t mix_pos = mix_order.size();  // forces a shuffle on first use

  History h;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0, batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += take, ++batch_index) {
      const std::size_t stop = std::min(order.size(), start + take);
      std::vector<std::span<const double>> rows;
      std::vector<int> labels;
      std::vector<const std::vector<double>*> soft;
      for (std::size_t p = start; p < stop; ++p) {
        const auto& ex = data.primary[order[p]];
        rows.push_back(ex.x);
        labels.push_back(ex.label);
        soft.push_back(data.soft.empty() ? nullptr : &data.soft[order[p]]);
      }
      if (mixing) {
        for (std::size_t m = 0; m < take; ++m) {
          if (mix_pos == mix_order.size()) {
            rng.shuffle(mix_order.begin(), mix_order.end());
            mix_pos = 0;
          }
          const auto& ex = data.mixin[mix_order[mix_pos++]];
          rows.push_back(ex.x);
          labels.push_back(ex.label);
          soft.push_back(nullptr);
        }
      }
      const std::size_t b = rows.size();
      if (b < 2) continue;

      nn::Tape tape;
      const Tensor logits = net.forward(pack_batch(net, rows), nn::Mode::Train, &rng, &tape);
      Tensor grad(logits.shape());
      double batch_loss = 0.0;
      for (std::size_t r = 0; r < b; ++r) {
        const std::span<const double> z(logits.data() + r * n_classes, n_classes);
        const auto logp = nn::log_softmax_t(z, t);
        const auto y = static_cast<std::size_t>(labels[r]);
        for (std::size_t j = 0; j < n_classes; ++j) {
          const double q = soft[r] ? (*soft[r])[j] : (j == y ? 1.0 : 0.0);
          if (q > 0.0) batch_loss -= q * logp[j];
          grad[r * n_classes + j] = (std::exp(logp[j]) - q) / (t * static_cast<double>(b));
        }
        correct += static_cast<std::size_t>(argmax(z)) == y;
      }
      if (!std::isfinite(batch_loss)) {
        throw Error("non-finite loss at epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(batch_index + 1));
      }
      loss_sum += batch_loss;
      seen += b;

      auto grads = net.zero_gradients();
      net.backward(tape, grad, &grads);
      auto params = net.parameters();
      nn::adam_step(params, grads, adam);
      net.commit_batch_stats(tape);
    }
    h.train_loss.push_back(seen ? loss_sum / static_cast<double>(seen) : std::numeric_limits<double>::quiet_NaN());
    h.train_accuracy.push_back(seen ? static_cast<double>(correct) / static_cast<double>(seen)
                                    : std::numeric_limits<double>::quiet_NaN());
    const auto v = evaluate_net(net, val);
    h.val_accuracy.push_back(v.accuracy);
    h.val_loss.push_back(v.loss);
  }
  return h;
}

namespace {

void check_dataset_for(const nn::Net& net, const Dataset& ds) {
  if (ds.n_classes != static_cast<int>(net.n_classes())) {
    throw ConfigError("dataset has " + std::to_string(ds.n_classes) + " classes, network outputs " +
                      std::to_string(net.n_classes()));
  }
  for (const auto& lt : ds.traces) {
    if (!lt.trace.normalized()) throw Error("dataset must be normalized before training");
    if (lt.trace.size() != net.input_size()) {
      throw ShapeError("trace has " + std::to_string(lt.trace.size()) + " values, network expects " +
                       std::to_string(net.input_size()));
    }
  }
}

}  // namespace

std::pair<nn::Net, History> train_cnn(const nn::Net& net, const Dataset& ds, const TrainConfig& config) {
  check_dataset_for(net, ds);
  nn::Net out = net;
  out.norm_stats = ds.norm_stats;
  const auto val = examples(ds, Split::Val);
  auto h = fit(out, FitData{examples(ds, Split::Train), {}, {}}, val, config);
  return {std::move(out), std::move(h)};
}

std::vector<double> predict(const nn::Net& net, const Trace& trace) {
  if (!trace.normalized()) throw Error("trace must be normalized");
  return nn::predict_proba(net, trace.flat());
}

}  // namespace cloak::clf
