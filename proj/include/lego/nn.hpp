#pragma once

// Small dense networks: forward, backward (including input gradients), Adam,
// and a finite-difference gradient checker. Only what the variational model
// and the attacker need.

#include "lego/common.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>

namespace lego {

enum class Activation { relu, identity };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::identity;

  [[nodiscard]] Eigen::Index in() const { return weight.cols(); }
  [[nodiscard]] Eigen::Index out() const { return weight.rows(); }
};

struct LayerGradient {
  Matrix weight;
  Vector bias;
};

struct GradientBundle {
  std::vector<LayerGradient> layers;
  Matrix input;  // batch x in; empty when not requested

  [[nodiscard]] bool finite() const {
    for (const auto& l : layers)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return input.allFinite();
  }
};

class DenseNetwork {
 public:
  DenseNetwork() = default;
  explicit DenseNetwork(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { validate(); }

  [[nodiscard]] const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& mutable_layers() { return layers_; }
  [[nodiscard]] Eigen::Index input_size() const { return layers_.empty() ? 0 : layers_.front().in(); }
  [[nodiscard]] Eigen::Index output_size() const { return layers_.empty() ? 0 : layers_.back().out(); }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  // Flat views over every parameter block, in layer order (weight, bias).
  std::vector<std::span<double>> parameter_views() {
    std::vector<std::span<double>> views;
    for (auto& l : layers_) {
      views.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      views.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    return views;
  }

  [[nodiscard]] bool finite() const {
    for (const auto& l : layers_)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  void validate() const {
    if (layers_.empty()) throw ShapeError("DenseNetwork: no layers");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.bias.size() != l.out())
        throw ShapeError("DenseNetwork: bias size does not match layer output");
      if (i + 1 < layers_.size() && layers_[i + 1].in() != l.out())
        throw ShapeError("DenseNetwork: layer " + std::to_string(i + 1) + " input does not chain");
    }
  }

 private:
  std::vector<DenseLayer> layers_;
};

// Activations of one forward pass, kept for the backward pass.
struct ForwardCache {
  std::vector<Matrix> outputs;  // post-activation output of every layer
};

inline void check_input(const DenseNetwork& net, const Matrix& batch) {
  if (batch.cols() != net.input_size())
    throw ShapeError("forward: batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                     std::to_string(net.input_size()));
}

inline Matrix forward(const DenseNetwork& net, const Matrix& batch, ForwardCache* cache = nullptr) {
  check_input(net, batch);
  if (cache) cache->outputs.clear();
  Matrix h = batch;
  for (const auto& layer : net.layers()) {
    Matrix z = h * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    if (layer.activation == Activation::relu) z = z.cwiseMax(0.0);
    h = std::move(z);
    if (cache) cache->outputs.push_back(h);
  }
  return h;
}

inline GradientBundle backward(const DenseNetwork& net, const Matrix& batch, const ForwardCache& cache,
                               const Matrix& upstream) {
  const auto& layers = net.layers();
  if (cache.outputs.size() != layers.size()) throw ShapeError("backward: cache does not match network");
  if (upstream.rows() != batch.rows() || upstream.cols() != net.output_size())
    throw ShapeError("backward: upstream gradient shape mismatch");

  GradientBundle grads;
  grads.layers.resize(layers.size());
  Matrix delta = upstream;
  for (std::size_t idx = layers.size(); idx-- > 0;) {
    const auto& layer = layers[idx];
    if (layer.activation == Activation::relu)
      delta = delta.cwiseProduct((cache.outputs[idx].array() > 0.0).cast<double>().matrix());
    const Matrix& input = idx == 0 ? batch : cache.outputs[idx - 1];
    grads.layers[idx].weight = delta.transpose() * input;
    grads.layers[idx].bias = delta.colwise().sum().transpose();
    delta = delta * layer.weight;
  }
  grads.input = std::move(delta);
  return grads;
}

inline GradientBundle backward(const DenseNetwork& net, const Matrix& batch, const Matrix& upstream) {
  ForwardCache cache;
  forward(net, batch, &cache);
  return backward(net, batch, cache, upstream);
}

// Glorot-uniform weights, zero biases. ReLU on hidden layers, identity on the
// logit layer.
inline DenseNetwork init_network(const std::vector<int>& sizes, std::uint64_t seed) {
  if (sizes.size() < 2) throw Error("init_network: need at least an input and an output size");
  for (int s : sizes)
    if (s <= 0) throw Error("init_network: layer sizes must be positive");
  Rng rng(seed);
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const int in = sizes[i];
    const int out = sizes[i + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer layer;
    layer.weight.resize(out, in);
    for (Eigen::Index k = 0; k < layer.weight.size(); ++k) layer.weight.data()[k] = dist(rng);
    layer.bias = Vector::Zero(out);
    layer.activation = i + 2 == sizes.size() ? Activation::identity : Activation::relu;
    layers.push_back(std::move(layer));
  }
  return DenseNetwork(std::move(layers));
}

// Row-wise log-softmax with max subtraction.
inline Matrix log_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

struct NllResult {
  double loss = 0.0;  // mean negative log-likelihood
  Matrix gradient;    // d loss / d logits, B x p
};

inline void check_labels(const Labels& labels, Eigen::Index rows, Eigen::Index classes) {
  if (static_cast<Eigen::Index>(labels.size()) != rows)
    throw ShapeError("labels: expected " + std::to_string(rows) + " entries, got " + std::to_string(labels.size()));
  for (int y : labels)
    if (y < 0 || y >= classes)
      throw Error("labels: value " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
}

inline NllResult log_softmax_nll(const Matrix& logits, const Labels& labels) {
  check_labels(labels, logits.rows(), logits.cols());
  NllResult result;
  const Eigen::Index batch = logits.rows();
  if (batch == 0) {
    result.gradient = Matrix::Zero(0, logits.cols());
    return result;
  }
  const Matrix logp = log_softmax(logits);
  result.gradient = logp.array().exp().matrix();
  double total = 0.0;
  for (Eigen::Index r = 0; r < batch; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    total -= logp(r, y);
    result.gradient(r, y) -= 1.0;
  }
  result.loss = total / static_cast<double>(batch);
  result.gradient /= static_cast<double>(batch);
  return result;
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam over an ordered list of flat parameter blocks. Moments are allocated
// on the first step and must keep their shapes afterwards.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig config) : config_(config) {}

  [[nodiscard]] const AdamConfig& config() const { return config_; }
  [[nodiscard]] std::int64_t steps() const { return step_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

  void step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads) {
    if (params.size() != grads.size()) throw ShapeError("Adam: parameter/gradient block count mismatch");
    if (first_.empty()) {
      for (const auto& p : params) {
        first_.emplace_back(p.size(), 0.0);
        second_.emplace_back(p.size(), 0.0);
      }
    }
    if (first_.size() != params.size()) throw ShapeError("Adam: block count changed between steps");
    for (std::size_t b = 0; b < params.size(); ++b) {
      if (params[b].size() != first_[b].size() || grads[b].size() != params[b].size())
        throw ShapeError("Adam: block " + std::to_string(b) + " shape mismatch");
      for (double g : grads[b])
        if (!std::isfinite(g))
          throw NumericError("Adam: non-finite gradient in block " + std::to_string(b) + " at step " +
                             std::to_string(step_ + 1));
    }
    ++step_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (std::size_t b = 0; b < params.size(); ++b) {
      auto& m = first_[b];
      auto& v = second_[b];
      for (std::size_t i = 0; i < params[b].size(); ++i) {
        const double g = grads[b][i];
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
        params[b][i] -= config_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
      }
    }
  }

  void step(DenseNetwork& net, const GradientBundle& grads) {
    std::vector<std::span<const double>> views;
    for (const auto& l : grads.layers) {
      views.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      views.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    step(net.parameter_views(), views);
  }

  void step(Matrix& param, const Matrix& grad) {
    if (param.rows() != grad.rows() || param.cols() != grad.cols()) throw ShapeError("Adam: matrix shape mismatch");
    step({std::span<double>(param.data(), static_cast<std::size_t>(param.size()))},
         {std::span<const double>(grad.data(), static_cast<std::size_t>(grad.size()))});
  }

  void step(Vector& param, const Vector& grad) {
    if (param.size() != grad.size()) throw ShapeError("Adam: vector shape mismatch");
    step({std::span<double>(param.data(), static_cast<std::size_t>(param.size()))},
         {std::span<const double>(grad.data(), static_cast<std::size_t>(grad.size()))});
  }

 private:
  AdamConfig config_;
  std::int64_t step_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

// Mean NLL of the network on (batch, labels) and its full gradient bundle.
inline std::pair<double, GradientBundle> nll_and_gradient(const DenseNetwork& net, const Matrix& batch,
                                                          const Labels& labels) {
  ForwardCache cache;
  const Matrix logits = forward(net, batch, &cache);
  NllResult nll = log_softmax_nll(logits, labels);
  return {nll.loss, backward(net, batch, cache, nll.gradient)};
}

using AnalyticGradient = std::function<GradientBundle(const DenseNetwork&, const Matrix&, const Labels&)>;

// Largest relative error between an analytic parameter gradient and central
// differences of the mean NLL. Directions where both are below `floor` count
// as consistent zeros and are skipped.
inline double gradient_check(const DenseNetwork& net, const Matrix& batch, const Labels& labels,
                             const AnalyticGradient& analytic = {}, double step = 1e-5, double floor = 1e-7) {
  const GradientBundle grads =
      analytic ? analytic(net, batch, labels) : nll_and_gradient(net, batch, labels).second;
  DenseNetwork probe = net;
  auto views = probe.parameter_views();
  std::vector<std::span<const double>> gviews;
  for (const auto& l : grads.layers) {
    gviews.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    gviews.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  if (gviews.size() != views.size()) throw ShapeError("gradient_check: gradient layout mismatch");
  double worst = 0.0;
  for (std::size_t b = 0; b < views.size(); ++b) {
    for (std::size_t i = 0; i < views[b].size(); ++i) {
      const double saved = views[b][i];
      views[b][i] = saved + step;
      const double up = log_softmax_nll(forward(probe, batch), labels).loss;
      views[b][i] = saved - step;
      const double down = log_softmax_nll(forward(probe, batch), labels).loss;
      views[b][i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double exact = gviews[b][i];
      const double scale = std::max(std::abs(numeric), std::abs(exact));
      if (scale < floor) continue;
      worst = std::max(worst, std::abs(numeric - exact) / scale);
    }
  }
  return worst;
}

// Parameter snapshot: "LEGONN01", then per layer u32 rows, u32 cols,
// row-major f64 weights, f64 biases. Layers run to end of file; hidden layers
// are ReLU and the last layer is linear, as built by init_network.
inline void save_network(const DenseNetwork& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_network: cannot open " + path);
  out.write("LEGONN01", 8);
  for (const auto& l : net.layers()) {
    const auto rows = static_cast<std::uint32_t>(l.out());
    const auto cols = static_cast<std::uint32_t>(l.in());
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    out.write(reinterpret_cast<const char*>(l.weight.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(l.weight.size())));
    out.write(reinterpret_cast<const char*>(l.bias.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(l.bias.size())));
  }
  if (!out) throw Error("save_network: write failed for " + path);
}

inline DenseNetwork load_network(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_network: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "LEGONN01", 8) != 0) throw Error("load_network: bad magic in " + path);
  std::vector<DenseLayer> layers;
  while (in.peek() != std::char_traits<char>::eof()) {
    std::uint32_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    if (!in) throw Error("load_network: truncated layer header in " + path);
    DenseLayer l;
    l.weight.resize(rows, cols);
    l.bias.resize(rows);
    in.read(reinterpret_cast<char*>(l.weight.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(l.weight.size())));
    in.read(reinterpret_cast<char*>(l.bias.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(l.bias.size())));
    if (!in) throw Error("load_network: truncated layer payload in " + path);
    l.activation = Activation::relu;
    layers.push_back(std::move(l));
  }
  if (layers.empty()) throw Error("load_network: no layers in " + path);
  layers.back().activation = Activation::identity;
  return DenseNetwork(std::move(layers));
}

}  // namespace lego
