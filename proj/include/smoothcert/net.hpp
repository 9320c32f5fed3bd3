#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "smoothcert/io.hpp"
#include "smoothcert/rng.hpp"

namespace smoothcert {

enum class Activation { kRelu, kTanh };
enum class LossKind { kCrossEntropy, kL1Logit };
enum class OptimizerKind { kSgd, kAdam };

inline const char* activation_name(Activation a) {
  return a == Activation::kRelu ? "relu" : "tanh";
}
inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw std::invalid_argument("unknown activation: " + s);
}
inline const char* loss_name(LossKind l) {
  return l == LossKind::kCrossEntropy ? "cross-entropy" : "l1-logit";
}
inline LossKind parse_loss(const std::string& s) {
  if (s == "cross-entropy") return LossKind::kCrossEntropy;
  if (s == "l1-logit") return LossKind::kL1Logit;
  throw std::invalid_argument("unknown loss: " + s);
}
inline const char* optimizer_name(OptimizerKind o) {
  return o == OptimizerKind::kAdam ? "adam" : "sgd";
}
inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw std::invalid_argument("unknown optimizer: " + s);
}

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}
  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }
};

// Fully connected feed-forward network. Hidden layers share one activation;
// the final layer emits raw logits. `loss` records what the net was (or is
// meant to be) trained with; checkpoints carry it.
struct DenseNetwork {
  std::vector<int> layer_sizes;
  Activation activation = Activation::kRelu;
  LossKind loss = LossKind::kCrossEntropy;
  std::vector<Matrix> weights;              // per layer, out x in
  std::vector<std::vector<double>> biases;  // per layer

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int num_layers() const { return static_cast<int>(weights.size()); }

  // Xavier-uniform init: +-sqrt(6 / (fan_in + fan_out)), biases zero.
  static DenseNetwork init(const std::vector<int>& sizes, Activation act, std::uint64_t seed) {
    if (sizes.size() < 2) throw std::invalid_argument("DenseNetwork: need at least input and output layer");
    for (int s : sizes) {
      if (s < 1) throw std::invalid_argument("DenseNetwork: layer sizes must be positive");
    }
    DenseNetwork net;
    net.layer_sizes = sizes;
    net.activation = act;
    Rng rng = make_rng(seed);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      int fan_in = sizes[l];
      int fan_out = sizes[l + 1];
      double limit = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> u(-limit, limit);
      Matrix w(fan_out, fan_in);
      for (double& x : w.data) x = u(rng);
      net.weights.push_back(std::move(w));
      net.biases.emplace_back(fan_out, 0.0);
    }
    return net;
  }

  std::vector<double> forward(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != input_dim()) {
      throw std::invalid_argument("forward: input dimension mismatch");
    }
    std::vector<double> a = x;
    for (int l = 0; l < num_layers(); ++l) {
      const Matrix& w = weights[l];
      std::vector<double> z(w.rows);
      for (int i = 0; i < w.rows; ++i) {
        double acc = biases[l][i];
        const double* row = w.data.data() + static_cast<std::size_t>(i) * w.cols;
        for (int j = 0; j < w.cols; ++j) acc += row[j] * a[j];
        z[i] = acc;
      }
      if (l + 1 < num_layers()) {
        if (activation == Activation::kRelu) {
          for (double& v : z) v = v > 0.0 ? v : 0.0;
        } else {
          for (double& v : z) v = std::tanh(v);
        }
      }
      a = std::move(z);
    }
    return a;
  }
};

inline std::vector<double> softmax(const std::vector<double>& logits) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

struct Batch {
  std::vector<std::vector<double>> inputs;
  std::vector<int> labels;                          // cross-entropy targets
  std::vector<std::vector<double>> logit_targets;   // l1-logit targets
};

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
};

struct LossGrad {
  double loss = 0.0;
  Gradients grads;
};

namespace detail {

inline Gradients zero_like(const DenseNetwork& net) {
  Gradients g;
  for (int l = 0; l < net.num_layers(); ++l) {
    g.weights.emplace_back(net.weights[l].rows, net.weights[l].cols);
    g.biases.emplace_back(net.biases[l].size(), 0.0);
  }
  return g;
}

// Forward pass storing post-activation values per layer, then backprop of
// dLoss/dlogits. Returns the per-example loss; accumulates into grads and,
// when input_grad is non-null, writes dLoss/dinput.
inline double backprop_example(const DenseNetwork& net, const std::vector<double>& x,
                               const int* label, const std::vector<double>* target_logits,
                               LossKind kind, Gradients& grads, std::vector<double>* input_grad) {
  int L = net.num_layers();
  std::vector<std::vector<double>> acts(L + 1);
  acts[0] = x;
  for (int l = 0; l < L; ++l) {
    const Matrix& w = net.weights[l];
    std::vector<double> z(w.rows);
    for (int i = 0; i < w.rows; ++i) {
      double acc = net.biases[l][i];
      const double* row = w.data.data() + static_cast<std::size_t>(i) * w.cols;
      for (int j = 0; j < w.cols; ++j) acc += row[j] * acts[l][j];
      z[i] = acc;
    }
    if (l + 1 < L) {
      if (net.activation == Activation::kRelu) {
        for (double& v : z) v = v > 0.0 ? v : 0.0;
      } else {
        for (double& v : z) v = std::tanh(v);
      }
    }
    acts[l + 1] = std::move(z);
  }

  const std::vector<double>& logits = acts[L];
  double loss = 0.0;
  std::vector<double> delta(logits.size());
  if (kind == LossKind::kCrossEntropy) {
    std::vector<double> p = softmax(logits);
    loss = -std::log(std::max(p[*label], 1e-300));
    for (std::size_t i = 0; i < p.size(); ++i) delta[i] = p[i] - (static_cast<int>(i) == *label ? 1.0 : 0.0);
  } else {
    for (std::size_t i = 0; i < logits.size(); ++i) {
      double diff = logits[i] - (*target_logits)[i];
      loss += std::fabs(diff);
      // Subgradient 0 at an exact tie keeps self-distillation a fixed point.
      delta[i] = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    }
  }

  for (int l = L - 1; l >= 0; --l) {
    const Matrix& w = net.weights[l];
    Matrix& gw = grads.weights[l];
    std::vector<double>& gb = grads.biases[l];
    const std::vector<double>& prev = acts[l];
    for (int i = 0; i < w.rows; ++i) {
      double d = delta[i];
      gb[i] += d;
      double* grow = gw.data.data() + static_cast<std::size_t>(i) * w.cols;
      for (int j = 0; j < w.cols; ++j) grow[j] += d * prev[j];
    }
    if (l == 0 && input_grad == nullptr) break;
    std::vector<double> prev_delta(w.cols, 0.0);
    for (int i = 0; i < w.rows; ++i) {
      double d = delta[i];
      const double* row = w.data.data() + static_cast<std::size_t>(i) * w.cols;
      for (int j = 0; j < w.cols; ++j) prev_delta[j] += d * row[j];
    }
    if (l > 0) {
      // prev layer is activated: fold in the activation derivative using the
      // stored post-activation value.
      const std::vector<double>& a = acts[l];
      if (net.activation == Activation::kRelu) {
        for (int j = 0; j < w.cols; ++j) prev_delta[j] *= a[j] > 0.0 ? 1.0 : 0.0;
      } else {
        for (int j = 0; j < w.cols; ++j) prev_delta[j] *= 1.0 - a[j] * a[j];
      }
      delta = std::move(prev_delta);
    } else if (input_grad != nullptr) {
      *input_grad = std::move(prev_delta);
    }
  }
  return loss;
}

}  // namespace detail

// Mean loss over the batch and mean gradients with respect to every weight
// and bias.
inline LossGrad loss_and_gradients(const DenseNetwork& net, const Batch& batch, LossKind kind) {
  std::size_t n = batch.inputs.size();
  if (n == 0) throw std::invalid_argument("loss_and_gradients: empty batch");
  if (kind == LossKind::kCrossEntropy) {
    if (batch.labels.size() != n) throw std::invalid_argument("loss_and_gradients: labels missing");
    for (int lbl : batch.labels) {
      if (lbl < 0 || lbl >= net.output_dim()) {
        throw std::invalid_argument("loss_and_gradients: label out of range");
      }
    }
  } else {
    if (batch.logit_targets.size() != n) {
      throw std::invalid_argument("loss_and_gradients: logit targets missing");
    }
    for (const auto& t : batch.logit_targets) {
      if (static_cast<int>(t.size()) != net.output_dim()) {
        throw std::invalid_argument("loss_and_gradients: target dimension mismatch");
      }
    }
  }

  LossGrad out;
  out.grads = detail::zero_like(net);
  for (std::size_t i = 0; i < n; ++i) {
    const int* lbl = kind == LossKind::kCrossEntropy ? &batch.labels[i] : nullptr;
    const std::vector<double>* tgt = kind == LossKind::kL1Logit ? &batch.logit_targets[i] : nullptr;
    out.loss += detail::backprop_example(net, batch.inputs[i], lbl, tgt, kind, out.grads, nullptr);
  }
  double inv = 1.0 / static_cast<double>(n);
  out.loss *= inv;
  for (auto& m : out.grads.weights) {
    for (double& v : m.data) v *= inv;
  }
  for (auto& b : out.grads.biases) {
    for (double& v : b) v *= inv;
  }
  return out;
}

// Gradient of the cross-entropy loss at (x, label) with respect to the input.
inline std::vector<double> input_gradient(const DenseNetwork& net, const std::vector<double>& x,
                                          int label) {
  if (label < 0 || label >= net.output_dim()) {
    throw std::invalid_argument("input_gradient: label out of range");
  }
  Gradients scratch = detail::zero_like(net);
  std::vector<double> g;
  detail::backprop_example(net, x, &label, nullptr, LossKind::kCrossEntropy, scratch, &g);
  return g;
}

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 100;
  int batch_size = 32;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  LossKind loss = LossKind::kCrossEntropy;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be positive");
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  }
};

// Minibatch trainer holding optimizer state, so callers can feed it a
// different (e.g. freshly perturbed) view of the data each epoch.
class Trainer {
 public:
  Trainer(DenseNetwork net, const TrainConfig& cfg)
      : net_(std::move(net)), cfg_(cfg), shuffle_rng_(make_rng(cfg.seed)) {
    cfg_.validate();
    net_.loss = cfg_.loss;
    if (cfg_.optimizer == OptimizerKind::kAdam) {
      m_ = detail::zero_like(net_);
      v_ = detail::zero_like(net_);
    }
  }

  // One pass over the data in shuffled minibatches; returns the mean
  // per-example loss seen during the pass.
  double run_epoch(const Batch& data) {
    std::size_t n = data.inputs.size();
    if (n == 0) throw std::invalid_argument("Trainer: empty dataset");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), shuffle_rng_);

    double total = 0.0;
    for (std::size_t start = 0; start < n; start += cfg_.batch_size) {
      std::size_t stop = std::min(n, start + cfg_.batch_size);
      Batch mb;
      for (std::size_t i = start; i < stop; ++i) {
        mb.inputs.push_back(data.inputs[order[i]]);
        if (cfg_.loss == LossKind::kCrossEntropy) {
          mb.labels.push_back(data.labels[order[i]]);
        } else {
          mb.logit_targets.push_back(data.logit_targets[order[i]]);
        }
      }
      LossGrad lg = loss_and_gradients(net_, mb, cfg_.loss);
      apply(lg.grads);
      total += lg.loss * static_cast<double>(stop - start);
    }
    return total / static_cast<double>(n);
  }

  const DenseNetwork& net() const { return net_; }
  DenseNetwork take() { return std::move(net_); }

 private:
  void apply(const Gradients& g) {
    if (cfg_.optimizer == OptimizerKind::kSgd) {
      for (int l = 0; l < net_.num_layers(); ++l) {
        for (std::size_t i = 0; i < net_.weights[l].data.size(); ++i) {
          net_.weights[l].data[i] -= cfg_.learning_rate * g.weights[l].data[i];
        }
        for (std::size_t i = 0; i < net_.biases[l].size(); ++i) {
          net_.biases[l][i] -= cfg_.learning_rate * g.biases[l][i];
        }
      }
      return;
    }
    ++step_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (int l = 0; l < net_.num_layers(); ++l) {
      auto step_param = [&](double& w, double& m, double& v, double grad) {
        m = b1 * m + (1.0 - b1) * grad;
        v = b2 * v + (1.0 - b2) * grad * grad;
        w -= cfg_.learning_rate * (m / c1) / (std::sqrt(v / c2) + eps);
      };
      for (std::size_t i = 0; i < net_.weights[l].data.size(); ++i) {
        step_param(net_.weights[l].data[i], m_.weights[l].data[i], v_.weights[l].data[i],
                   g.weights[l].data[i]);
      }
      for (std::size_t i = 0; i < net_.biases[l].size(); ++i) {
        step_param(net_.biases[l][i], m_.biases[l][i], v_.biases[l][i], g.biases[l][i]);
      }
    }
  }

  DenseNetwork net_;
  TrainConfig cfg_;
  Rng shuffle_rng_;
  Gradients m_, v_;
  long long step_ = 0;
};

struct TrainResult {
  DenseNetwork net;
  std::vector<double> loss_history;
};

// Plain training on a fixed dataset for cfg.epochs passes. Zero epochs
// returns the network unchanged.
inline TrainResult train(const DenseNetwork& net, const Batch& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.inputs.empty()) throw std::invalid_argument("train: empty dataset");
  Trainer trainer(net, cfg);
  TrainResult out;
  for (int e = 0; e < cfg.epochs; ++e) out.loss_history.push_back(trainer.run_epoch(data));
  out.net = trainer.take();
  return out;
}

inline double accuracy(const DenseNetwork& net, const std::vector<std::vector<double>>& xs,
                       const std::vector<int>& labels) {
  if (xs.empty() || xs.size() != labels.size()) {
    throw std::invalid_argument("accuracy: empty or mismatched dataset");
  }
  long long hits = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::vector<double> logits = net.forward(xs[i]);
    int best = 0;
    for (int c = 1; c < static_cast<int>(logits.size()); ++c) {
      if (logits[c] > logits[best]) best = c;
    }
    if (best == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(xs.size());
}

// ---- checkpoint io ----------------------------------------------------

// Text checkpoint: self-describing, 17 significant digits, so a save/load
// round trip reproduces forward outputs bit-identically.
inline std::string checkpoint_to_string(const DenseNetwork& net) {
  std::ostringstream out;
  out << "smoothcert-model 1\n";
  out << "layers";
  for (int s : net.layer_sizes) out << ' ' << s;
  out << '\n';
  out << "activation " << activation_name(net.activation) << '\n';
  out << "loss " << loss_name(net.loss) << '\n';
  for (int l = 0; l < net.num_layers(); ++l) {
    const Matrix& w = net.weights[l];
    out << "weights " << l << ' ' << w.rows << ' ' << w.cols << '\n';
    for (int i = 0; i < w.rows; ++i) {
      for (int j = 0; j < w.cols; ++j) {
        if (j) out << ' ';
        out << format_double(w.at(i, j));
      }
      out << '\n';
    }
    out << "bias " << l << ' ' << w.rows << '\n';
    for (int i = 0; i < w.rows; ++i) {
      if (i) out << ' ';
      out << format_double(net.biases[l][i]);
    }
    out << '\n';
  }
  out << "end\n";
  return out.str();
}

inline void save_checkpoint(const DenseNetwork& net, const std::string& path) {
  atomic_write_text(path, checkpoint_to_string(net));
}

inline DenseNetwork checkpoint_from_string(const std::string& text) {
  // Leading '#' lines carry run metadata and are not part of the model.
  std::size_t pos = 0;
  while (pos < text.size() && text[pos] == '#') {
    std::size_t nl = text.find('\n', pos);
    pos = nl == std::string::npos ? text.size() : nl + 1;
  }
  std::istringstream in(text.substr(pos));
  std::string word;
  int version = 0;
  if (!(in >> word >> version) || word != "smoothcert-model") {
    throw std::runtime_error("checkpoint: bad magic");
  }
  if (version != 1) {
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
  }
  DenseNetwork net;
  if (!(in >> word) || word != "layers") throw std::runtime_error("checkpoint: missing layers");
  {
    std::string rest;
    std::getline(in, rest);
    std::istringstream ls(rest);
    int s;
    while (ls >> s) net.layer_sizes.push_back(s);
  }
  if (net.layer_sizes.size() < 2) throw std::runtime_error("checkpoint: bad layer list");
  if (!(in >> word) || word != "activation") throw std::runtime_error("checkpoint: missing activation");
  in >> word;
  net.activation = parse_activation(word);
  if (!(in >> word) || word != "loss") throw std::runtime_error("checkpoint: missing loss");
  in >> word;
  net.loss = parse_loss(word);

  int L = static_cast<int>(net.layer_sizes.size()) - 1;
  for (int l = 0; l < L; ++l) {
    int idx, rows, cols;
    if (!(in >> word >> idx >> rows >> cols) || word != "weights" || idx != l ||
        rows != net.layer_sizes[l + 1] || cols != net.layer_sizes[l]) {
      throw std::runtime_error("checkpoint: bad weights header for layer " + std::to_string(l));
    }
    Matrix w(rows, cols);
    for (double& v : w.data) {
      if (!(in >> v)) throw std::runtime_error("checkpoint: truncated weights for layer " + std::to_string(l));
    }
    net.weights.push_back(std::move(w));
    int n;
    if (!(in >> word >> idx >> n) || word != "bias" || idx != l || n != rows) {
      throw std::runtime_error("checkpoint: bad bias header for layer " + std::to_string(l));
    }
    std::vector<double> b(n);
    for (double& v : b) {
      if (!(in >> v)) throw std::runtime_error("checkpoint: truncated bias for layer " + std::to_string(l));
    }
    net.biases.push_back(std::move(b));
  }
  if (!(in >> word) || word != "end") throw std::runtime_error("checkpoint: missing end marker");
  return net;
}

inline DenseNetwork load_checkpoint(const std::string& path) {
  return checkpoint_from_string(read_text(path));
}

}  // namespace smoothcert
