#include "teasq/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "teasq/errors.hpp"
#include "teasq/rng.hpp"

namespace teasq {

std::size_t Tensor::num_elements() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t ParamVector::num_elements() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.values.size();
  return n;
}

bool ParamVector::same_layout(const ParamVector& other) const {
  if (tensors.size() != other.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name != other.tensors[i].name || tensors[i].shape != other.tensors[i].shape ||
        tensors[i].values.size() != other.tensors[i].values.size())
      return false;
  }
  return true;
}

bool ParamVector::all_finite() const {
  for (const auto& t : tensors)
    for (float v : t.values)
      if (!std::isfinite(v)) return false;
  return true;
}

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::kLogistic: return "multinomial-logistic";
    case Architecture::kMlp: return "mlp-1-hidden";
    case Architecture::kSmallCnn: return "small-cnn";
  }
  return "unknown";
}

Architecture architecture_from_string(const std::string& s) {
  if (s == "multinomial-logistic" || s == "logistic") return Architecture::kLogistic;
  if (s == "mlp-1-hidden" || s == "mlp") return Architecture::kMlp;
  if (s == "small-cnn" || s == "cnn") return Architecture::kSmallCnn;
  throw ConfigError("unknown model architecture '" + s + "'");
}

namespace {

std::size_t cnn_side(const ModelSpec& spec) {
  auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(spec.input_dim))));
  return side;
}

}  // namespace

void ModelSpec::validate() const {
  if (input_dim == 0) throw ConfigError("model.input_dim must be positive");
  if (num_classes < 2) throw ConfigError("model.num_classes must be at least 2");
  if (architecture == Architecture::kMlp && hidden_width == 0)
    throw ConfigError("model.hidden_width must be positive for mlp-1-hidden");
  if (architecture == Architecture::kSmallCnn) {
    const auto side = cnn_side(*this);
    if (side * side != input_dim || side < 3)
      throw ConfigError("small-cnn needs a square input of side >= 3");
    if (conv1_channels == 0 || conv2_channels == 0)
      throw ConfigError("small-cnn channel counts must be positive");
  }
}

ParamLayout layout_of(const ModelSpec& spec) {
  spec.validate();
  const auto d = spec.input_dim;
  const auto c = spec.num_classes;
  switch (spec.architecture) {
    case Architecture::kLogistic:
      return {{"W", {d, c}}, {"b", {c}}};
    case Architecture::kMlp: {
      const auto h = spec.hidden_width;
      return {{"W1", {d, h}}, {"b1", {h}}, {"W2", {h, c}}, {"b2", {c}}};
    }
    case Architecture::kSmallCnn: {
      const auto s = cnn_side(spec);
      const auto c1 = spec.conv1_channels;
      const auto c2 = spec.conv2_channels;
      const auto flat = c2 * (s - 2) * (s - 2);
      return {{"conv1.W", {c1, 1, 2, 2}}, {"conv1.b", {c1}}, {"conv2.W", {c2, c1, 2, 2}},
              {"conv2.b", {c2}},          {"fc.W", {flat, c}}, {"fc.b", {c}}};
    }
  }
  return {};
}

ParamLayout layout_of(const ParamVector& w) {
  ParamLayout out;
  out.reserve(w.tensors.size());
  for (const auto& t : w.tensors) out.push_back({t.name, t.shape});
  return out;
}

Batch gather_batch(const Dataset& data, std::span<const std::uint32_t> rows) {
  Batch b;
  b.features.reserve(rows.size() * data.input_dim);
  b.labels.reserve(rows.size());
  for (auto r : rows) {
    auto x = data.row(r);
    b.features.insert(b.features.end(), x.begin(), x.end());
    b.labels.push_back(data.labels[r]);
  }
  return b;
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  ParamVector w;
  Rng rng(derive_seed(seed, {0x1417}));
  for (auto& [name, shape] : layout_of(spec)) {
    Tensor t{name, shape, {}};
    t.values.assign(t.num_elements(), 0.0f);
    if (shape.size() >= 2) {
      std::size_t fan_in = 0, fan_out = 0;
      if (shape.size() == 2) {
        fan_in = shape[0];
        fan_out = shape[1];
      } else {
        const std::size_t receptive = shape[2] * shape[3];
        fan_in = shape[1] * receptive;
        fan_out = shape[0] * receptive;
      }
      const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (auto& v : t.values) v = static_cast<float>(uniform(rng, -s, s));
    }
    w.tensors.push_back(std::move(t));
  }
  return w;
}

namespace {

void check_layout(const ParamVector& w, const ModelSpec& spec) {
  const auto expected = layout_of(spec);
  if (expected.size() != w.tensors.size())
    throw ContractViolation("parameter tensor count does not match model spec");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& t = w.tensors[i];
    if (t.name != expected[i].name || t.shape != expected[i].shape ||
        t.values.size() != t.num_elements())
      throw ContractViolation("tensor '" + t.name + "' does not match model spec layout");
  }
}

void check_batch(const Batch& batch, const ModelSpec& spec) {
  if (batch.size() == 0) throw ContractViolation("empty batch");
  if (batch.features.size() != batch.size() * spec.input_dim)
    throw ContractViolation("batch feature matrix does not match input_dim");
  for (auto y : batch.labels)
    if (y >= spec.num_classes) throw ContractViolation("label out of range");
}

// Softmax cross-entropy on one row of logits; writes dL/dlogits into `delta`.
double softmax_xent(std::span<const double> logits, std::uint32_t label, std::span<double> delta) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    delta[k] = std::exp(logits[k] - mx);
    z += delta[k];
  }
  for (auto& p : delta) p /= z;
  const double loss = -(logits[label] - mx - std::log(z));
  delta[label] -= 1.0;
  return loss;
}

// Float64 working copy of a model plus per-sample forward and backward.
class Net {
 public:
  Net(const ParamVector& w, const ModelSpec& spec) : spec_(spec) {
    params_.reserve(w.tensors.size());
    for (const auto& t : w.tensors) params_.emplace_back(t.values.begin(), t.values.end());
    grads_.reserve(params_.size());
    for (const auto& p : params_) grads_.emplace_back(p.size(), 0.0);
    if (spec.architecture == Architecture::kSmallCnn) side_ = cnn_side(spec);
    logits_.resize(spec.num_classes);
    delta_.resize(spec.num_classes);
  }

  // Fills logits_ for sample x.
  void forward(std::span<const float> x) {
    switch (spec_.architecture) {
      case Architecture::kLogistic: forward_logistic(x); break;
      case Architecture::kMlp: forward_mlp(x); break;
      case Architecture::kSmallCnn: forward_cnn(x); break;
    }
  }

  std::span<const double> logits() const { return logits_; }

  // Forward + backward for one sample; adds scale * dLoss into grads_.
  double accumulate(std::span<const float> x, std::uint32_t label, double scale) {
    forward(x);
    const double loss = softmax_xent(logits_, label, delta_);
    for (auto& d : delta_) d *= scale;
    switch (spec_.architecture) {
      case Architecture::kLogistic: backward_logistic(x); break;
      case Architecture::kMlp: backward_mlp(x); break;
      case Architecture::kSmallCnn: backward_cnn(x); break;
    }
    return loss;
  }

  ParamVector grad_as_params(const ParamVector& like) const {
    ParamVector g = like;
    for (std::size_t i = 0; i < g.tensors.size(); ++i) {
      auto& vals = g.tensors[i].values;
      for (std::size_t j = 0; j < vals.size(); ++j) vals[j] = static_cast<float>(grads_[i][j]);
    }
    return g;
  }

 private:
  // y[k] = b[k] + sum_i x[i] * W[i, k]
  template <typename In>
  void affine(const In& x, std::size_t in_dim, const std::vector<double>& W,
              const std::vector<double>& b, std::vector<double>& y) {
    const std::size_t out = b.size();
    y.assign(b.begin(), b.end());
    for (std::size_t i = 0; i < in_dim; ++i) {
      const double xi = x[i];
      if (xi == 0.0) continue;
      const double* row = W.data() + i * out;
      for (std::size_t k = 0; k < out; ++k) y[k] += xi * row[k];
    }
  }

  template <typename In>
  void affine_backward(const In& x, std::size_t in_dim, std::span<const double> dy,
                       std::vector<double>& dW, std::vector<double>& db) {
    const std::size_t out = dy.size();
    for (std::size_t k = 0; k < out; ++k) db[k] += dy[k];
    for (std::size_t i = 0; i < in_dim; ++i) {
      const double xi = x[i];
      if (xi == 0.0) continue;
      double* row = dW.data() + i * out;
      for (std::size_t k = 0; k < out; ++k) row[k] += xi * dy[k];
    }
  }

  void forward_logistic(std::span<const float> x) {
    affine(x, spec_.input_dim, params_[0], params_[1], logits_);
  }
  void backward_logistic(std::span<const float> x) {
    affine_backward(x, spec_.input_dim, delta_, grads_[0], grads_[1]);
  }

  void forward_mlp(std::span<const float> x) {
    affine(x, spec_.input_dim, params_[0], params_[1], hidden_);
    for (auto& h : hidden_) h = std::tanh(h);
    affine(hidden_, hidden_.size(), params_[2], params_[3], logits_);
  }
  void backward_mlp(std::span<const float> x) {
    const std::size_t H = hidden_.size();
    const std::size_t C = spec_.num_classes;
    affine_backward(hidden_, H, delta_, grads_[2], grads_[3]);
    dhidden_.assign(H, 0.0);
    const auto& W2 = params_[2];
    for (std::size_t j = 0; j < H; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < C; ++k) s += W2[j * C + k] * delta_[k];
      dhidden_[j] = s * (1.0 - hidden_[j] * hidden_[j]);
    }
    affine_backward(x, spec_.input_dim, dhidden_, grads_[0], grads_[1]);
  }

  // Valid 2x2 stride-1 convolution followed by ReLU.
  // in: cin x s x s, out: cout x (s-1) x (s-1).
  template <typename In>
  void conv_relu(const In& in, std::size_t cin, std::size_t s, const std::vector<double>& W,
                 const std::vector<double>& b, std::vector<double>& out) {
    const std::size_t cout = b.size();
    const std::size_t o = s - 1;
    out.assign(cout * o * o, 0.0);
    for (std::size_t k = 0; k < cout; ++k) {
      double* dst = out.data() + k * o * o;
      for (std::size_t p = 0; p < o * o; ++p) dst[p] = b[k];
      for (std::size_t c = 0; c < cin; ++c) {
        const double* w = W.data() + (k * cin + c) * 4;
        const std::size_t base = c * s * s;
        for (std::size_t i = 0; i < o; ++i) {
          for (std::size_t j = 0; j < o; ++j) {
            const std::size_t at = base + i * s + j;
            dst[i * o + j] += w[0] * in[at] + w[1] * in[at + 1] + w[2] * in[at + s] +
                              w[3] * in[at + s + 1];
          }
        }
      }
      for (std::size_t p = 0; p < o * o; ++p) dst[p] = std::max(0.0, dst[p]);
    }
  }

  // dout is the gradient w.r.t. the post-ReLU output; `out` is that output.
  // Accumulates dW, db and (when din != nullptr) the gradient w.r.t. `in`.
  template <typename In>
  void conv_relu_backward(const In& in, std::size_t cin, std::size_t s,
                          const std::vector<double>& W, const std::vector<double>& out,
                          std::vector<double>& dout, std::vector<double>& dW,
                          std::vector<double>& db, std::vector<double>* din) {
    const std::size_t cout = db.size();
    const std::size_t o = s - 1;
    for (std::size_t p = 0; p < dout.size(); ++p)
      if (out[p] <= 0.0) dout[p] = 0.0;
    if (din) din->assign(cin * s * s, 0.0);
    for (std::size_t k = 0; k < cout; ++k) {
      const double* g = dout.data() + k * o * o;
      for (std::size_t p = 0; p < o * o; ++p) db[k] += g[p];
      for (std::size_t c = 0; c < cin; ++c) {
        const double* w = W.data() + (k * cin + c) * 4;
        double* dw = dW.data() + (k * cin + c) * 4;
        const std::size_t base = c * s * s;
        for (std::size_t i = 0; i < o; ++i) {
          for (std::size_t j = 0; j < o; ++j) {
            const double gv = g[i * o + j];
            if (gv == 0.0) continue;
            const std::size_t at = base + i * s + j;
            dw[0] += gv * in[at];
            dw[1] += gv * in[at + 1];
            dw[2] += gv * in[at + s];
            dw[3] += gv * in[at + s + 1];
            if (din) {
              auto& d = *din;
              d[at] += gv * w[0];
              d[at + 1] += gv * w[1];
              d[at + s] += gv * w[2];
              d[at + s + 1] += gv * w[3];
            }
          }
        }
      }
    }
  }

  void forward_cnn(std::span<const float> x) {
    const std::size_t s = side_;
    conv_relu(x, 1, s, params_[0], params_[1], act1_);
    conv_relu(act1_, spec_.conv1_channels, s - 1, params_[2], params_[3], act2_);
    affine(act2_, act2_.size(), params_[4], params_[5], logits_);
  }
  void backward_cnn(std::span<const float> x) {
    const std::size_t s = side_;
    const std::size_t C = spec_.num_classes;
    affine_backward(act2_, act2_.size(), delta_, grads_[4], grads_[5]);
    dact2_.assign(act2_.size(), 0.0);
    const auto& Wfc = params_[4];
    for (std::size_t j = 0; j < act2_.size(); ++j) {
      if (act2_[j] <= 0.0) continue;
      double acc = 0.0;
      for (std::size_t k = 0; k < C; ++k) acc += Wfc[j * C + k] * delta_[k];
      dact2_[j] = acc;
    }
    conv_relu_backward(act1_, spec_.conv1_channels, s - 1, params_[2], act2_, dact2_, grads_[2],
                       grads_[3], &dact1_);
    conv_relu_backward(x, 1, s, params_[0], act1_, dact1_, grads_[0], grads_[1], nullptr);
  }

  const ModelSpec& spec_;
  std::size_t side_ = 0;
  std::vector<std::vector<double>> params_;
  std::vector<std::vector<double>> grads_;
  std::vector<double> logits_, delta_;
  std::vector<double> hidden_, dhidden_;
  std::vector<double> act1_, act2_, dact1_, dact2_;
};

}  // namespace

LossAndGrad loss_and_grad(const ParamVector& w, const Batch& batch, const ModelSpec& spec) {
  check_layout(w, spec);
  check_batch(batch, spec);
  Net net(w, spec);
  const double scale = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::span<const float> x(batch.features.data() + i * spec.input_dim, spec.input_dim);
    loss += net.accumulate(x, batch.labels[i], scale);
  }
  return {loss * scale, net.grad_as_params(w)};
}

std::vector<double> forward_logits(const ParamVector& w, const Batch& batch,
                                   const ModelSpec& spec) {
  check_layout(w, spec);
  check_batch(batch, spec);
  Net net(w, spec);
  std::vector<double> out;
  out.reserve(batch.size() * spec.num_classes);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    net.forward({batch.features.data() + i * spec.input_dim, spec.input_dim});
    auto l = net.logits();
    out.insert(out.end(), l.begin(), l.end());
  }
  return out;
}

ParamVector prox_sgd_step(const ParamVector& w, const ParamVector& anchor, const Batch& batch,
                          double eta, double mu, const ModelSpec& spec) {
  if (!w.same_layout(anchor)) throw ContractViolation("prox anchor layout differs from weights");
  if (!(eta >= 0.0) || !(mu >= 0.0)) throw ContractViolation("eta and mu must be nonnegative");
  auto [loss, grad] = loss_and_grad(w, batch, spec);
  ParamVector out = w;
  for (std::size_t t = 0; t < out.tensors.size(); ++t) {
    auto& v = out.tensors[t].values;
    const auto& g = grad.tensors[t].values;
    const auto& a = anchor.tensors[t].values;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double wi = v[i];
      const double step = static_cast<double>(g[i]) + mu * (wi - static_cast<double>(a[i]));
      v[i] = static_cast<float>(wi - eta * step);
    }
  }
  return out;
}

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  return derive_seed(seed, {0xE90C, static_cast<std::uint64_t>(epoch)});
}

ParamVector train_epoch(ParamVector w, const ParamVector& anchor, DataView data,
                        std::size_t batch_size, double eta, double mu, const ModelSpec& spec,
                        std::uint64_t shuffle_seed) {
  if (data.size() == 0 || data.dataset == nullptr)
    throw EmptyDataset("device holds no training samples");
  if (batch_size == 0) throw ContractViolation("batch size must be positive");
  std::vector<std::uint32_t> order(data.indices.begin(), data.indices.end());
  Rng rng(shuffle_seed);
  shuffle(std::span<std::uint32_t>(order), rng);
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, order.size() - start);
    const Batch batch =
        gather_batch(*data.dataset, std::span<const std::uint32_t>(order.data() + start, len));
    w = prox_sgd_step(w, anchor, batch, eta, mu, spec);
  }
  return w;
}

ParamVector local_train(const ParamVector& w0, const ParamVector& anchor, DataView data,
                        const LocalTrainOptions& opts, const ModelSpec& spec, std::uint64_t seed) {
  if (data.size() == 0 || data.dataset == nullptr)
    throw EmptyDataset("device holds no training samples");
  if (opts.epochs < 1) throw ContractViolation("local epochs must be positive");
  ParamVector w = w0;
  for (int e = 0; e < opts.epochs; ++e)
    w = train_epoch(std::move(w), anchor, data, opts.batch_size, opts.eta, opts.mu, spec,
                    epoch_seed(seed, e));
  return w;
}

double evaluate(const ParamVector& w, const Dataset& testset, const ModelSpec& spec) {
  check_layout(w, spec);
  if (testset.size() == 0) throw ContractViolation("empty test set");
  if (testset.input_dim != spec.input_dim)
    throw ContractViolation("test set input_dim does not match model");
  Net net(w, spec);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < testset.size(); ++i) {
    net.forward(testset.row(i));
    auto l = net.logits();
    // max_element returns the first maximum: lowest index wins ties.
    const auto pred = static_cast<std::uint32_t>(std::max_element(l.begin(), l.end()) - l.begin());
    if (pred == testset.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(testset.size());
}

}  // namespace teasq
