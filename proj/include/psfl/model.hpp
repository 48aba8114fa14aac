#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "psfl/core.hpp"
#include "psfl/data.hpp"

namespace psfl {

enum class Activation { Tanh, Linear };

// Fully connected net: layer l maps layer_dims[l] -> layer_dims[l+1].
// Hidden layers apply the activation; the last layer emits logits for
// softmax cross-entropy. The split layer cuts the stack into a bottom
// part [0, split_layer) and a top part [split_layer, num_layers).
struct MlpSpec {
  std::vector<int> layer_dims;
  int split_layer = 1;
  Activation hidden_activation = Activation::Tanh;

  int num_layers() const { return static_cast<int>(layer_dims.size()) - 1; }
  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
  int split_width() const { return layer_dims[split_layer]; }

  long layer_param_count(int l) const {
    return static_cast<long>(layer_dims[l]) * layer_dims[l + 1] +
           layer_dims[l + 1];
  }
  long param_count_in_range(int from, int to) const {
    long n = 0;
    for (int l = from; l < to; ++l) n += layer_param_count(l);
    return n;
  }
  long bottom_param_count() const { return param_count_in_range(0, split_layer); }
  long top_param_count() const {
    return param_count_in_range(split_layer, num_layers());
  }
  long total_param_count() const {
    return param_count_in_range(0, num_layers());
  }

  // Multiply count of the top stack relative to the bottom stack; fixes the
  // mu_p / mu_b relation used by telemetry.
  double top_bottom_flop_ratio() const {
    auto mults = [&](int from, int to) {
      long m = 0;
      for (int l = from; l < to; ++l)
        m += static_cast<long>(layer_dims[l]) * layer_dims[l + 1];
      return m;
    };
    const long bottom = mults(0, split_layer);
    const long top = mults(split_layer, num_layers());
    if (bottom <= 0) throw ShapeError("flop ratio: empty bottom stack");
    return static_cast<double>(top) / static_cast<double>(bottom);
  }

  void validate() const {
    if (layer_dims.size() < 3)
      throw ConfigError("model: need at least two layers to split");
    for (int d : layer_dims)
      if (d < 1) throw ConfigError("model: layer widths must be >= 1");
    if (split_layer < 1 || split_layer > num_layers() - 1)
      throw ConfigError("model: split_layer must be in [1, num_layers-1]");
  }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

struct SplitModel {
  MlpSpec spec;
  std::vector<double> bottom_params;
  std::vector<double> top_params;
};

struct Batch {
  Matrix features;
  std::vector<int> labels;
};

// Activations at the split layer together with their labels; labels travel
// with the smashed data. byte_size uses the 4-byte-per-value wire convention
// and only feeds traffic accounting.
struct SmashedBatch {
  Matrix activations;
  std::vector<int> labels;
  std::int64_t byte_size = 0;
};

namespace detail {

inline void affine_forward(const Matrix& x, const double* w, const double* b,
                           int out_dim, Matrix& z) {
  z = Matrix(x.rows, out_dim);
  for (int r = 0; r < x.rows; ++r) {
    const double* xr = x.row(r);
    double* zr = z.row(r);
    for (int o = 0; o < out_dim; ++o) {
      const double* wr = w + static_cast<std::size_t>(o) * x.cols;
      double acc = b[o];
      for (int c = 0; c < x.cols; ++c) acc += wr[c] * xr[c];
      zr[o] = acc;
    }
  }
}

inline void apply_activation(Matrix& a, Activation act) {
  if (act == Activation::Linear) return;
  for (double& v : a.data) v = std::tanh(v);
}

// d(act)/dz expressed through the post-activation value.
inline double activation_grad(double a, Activation act) {
  return act == Activation::Linear ? 1.0 : 1.0 - a * a;
}

// Activations at every boundary of a layer range; acts[0] is the input.
struct ForwardTrace {
  std::vector<Matrix> acts;
};

// Runs layers [from, to) with params starting at layer `from`.
inline ForwardTrace forward_range(const MlpSpec& spec,
                                  std::span<const double> params, int from,
                                  int to, const Matrix& input) {
  if (input.cols != spec.layer_dims[from])
    throw ShapeError("forward: input width " + std::to_string(input.cols) +
                     " does not match layer width " +
                     std::to_string(spec.layer_dims[from]));
  if (params.size() != static_cast<std::size_t>(spec.param_count_in_range(from, to)))
    throw ShapeError("forward: parameter vector length mismatch");

  ForwardTrace trace;
  trace.acts.reserve(to - from + 1);
  trace.acts.push_back(input);
  std::size_t off = 0;
  for (int l = from; l < to; ++l) {
    const int in_dim = spec.layer_dims[l];
    const int out_dim = spec.layer_dims[l + 1];
    const double* w = params.data() + off;
    const double* b = w + static_cast<std::size_t>(in_dim) * out_dim;
    Matrix z;
    affine_forward(trace.acts.back(), w, b, out_dim, z);
    if (l != spec.num_layers() - 1)
      apply_activation(z, spec.hidden_activation);
    trace.acts.push_back(std::move(z));
    off += static_cast<std::size_t>(spec.layer_param_count(l));
  }
  return trace;
}

// Backpropagates output_grad (w.r.t. the range's output activations) through
// layers [to) down to [from). Accumulates parameter gradients into
// param_grad (same layout as the range's params) and returns the gradient
// w.r.t. the range's input activations.
inline Matrix backward_range(const MlpSpec& spec,
                             std::span<const double> params, int from, int to,
                             const ForwardTrace& trace,
                             const Matrix& output_grad,
                             std::span<double> param_grad) {
  Matrix d_act = output_grad;
  for (int l = to - 1; l >= from; --l) {
    const int in_dim = spec.layer_dims[l];
    const int out_dim = spec.layer_dims[l + 1];
    const Matrix& a_in = trace.acts[l - from];
    const Matrix& a_out = trace.acts[l - from + 1];

    // Gradient w.r.t. the pre-activation of layer l.
    Matrix d_z = std::move(d_act);
    if (l != spec.num_layers() - 1) {
      for (std::size_t k = 0; k < d_z.data.size(); ++k)
        d_z.data[k] *= activation_grad(a_out.data[k], spec.hidden_activation);
    }

    const std::size_t off =
        static_cast<std::size_t>(spec.param_count_in_range(from, l));
    double* dw = param_grad.data() + off;
    double* db = dw + static_cast<std::size_t>(in_dim) * out_dim;
    for (int r = 0; r < d_z.rows; ++r) {
      const double* dzr = d_z.row(r);
      const double* ar = a_in.row(r);
      for (int o = 0; o < out_dim; ++o) {
        const double g = dzr[o];
        double* dwr = dw + static_cast<std::size_t>(o) * in_dim;
        for (int c = 0; c < in_dim; ++c) dwr[c] += g * ar[c];
        db[o] += g;
      }
    }

    d_act = Matrix(d_z.rows, in_dim);
    const double* w = params.data() + off;
    for (int r = 0; r < d_z.rows; ++r) {
      const double* dzr = d_z.row(r);
      double* dar = d_act.row(r);
      for (int o = 0; o < out_dim; ++o) {
        const double g = dzr[o];
        const double* wr = w + static_cast<std::size_t>(o) * in_dim;
        for (int c = 0; c < in_dim; ++c) dar[c] += g * wr[c];
      }
    }
  }
  return d_act;
}

// Mean softmax cross-entropy and its gradient w.r.t. the logits.
inline double softmax_ce(const Matrix& logits, std::span<const int> labels,
                         Matrix* d_logits) {
  if (logits.rows != static_cast<int>(labels.size()))
    throw ShapeError("loss: logits rows do not match label count");
  const int m = logits.cols;
  const double inv_rows = 1.0 / logits.rows;
  double loss = 0.0;
  if (d_logits) *d_logits = Matrix(logits.rows, m);
  for (int r = 0; r < logits.rows; ++r) {
    const double* lr = logits.row(r);
    double mx = lr[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, lr[j]);
    double z = 0.0;
    for (int j = 0; j < m; ++j) z += std::exp(lr[j] - mx);
    const double log_z = std::log(z) + mx;
    loss += (log_z - lr[labels[r]]) * inv_rows;
    if (d_logits) {
      double* dr = d_logits->row(r);
      for (int j = 0; j < m; ++j)
        dr[j] = (std::exp(lr[j] - log_z) - (j == labels[r] ? 1.0 : 0.0)) *
                inv_rows;
    }
  }
  return loss;
}

}  // namespace detail

// Uniform init in [-a, a] with a = 1/sqrt(fan_in), layer by layer.
inline std::vector<double> init_params(const MlpSpec& spec,
                                       std::uint64_t seed) {
  spec.validate();
  std::vector<double> params(spec.total_param_count());
  std::mt19937_64 rng(seed);
  std::size_t off = 0;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const double a = 1.0 / std::sqrt(static_cast<double>(spec.layer_dims[l]));
    std::uniform_real_distribution<double> uni(-a, a);
    const std::size_t n = static_cast<std::size_t>(spec.layer_param_count(l));
    for (std::size_t k = 0; k < n; ++k) params[off + k] = uni(rng);
    off += n;
  }
  return params;
}

inline std::vector<double> splice(const MlpSpec& spec,
                                  std::span<const double> bottom,
                                  std::span<const double> top) {
  if (bottom.size() != static_cast<std::size_t>(spec.bottom_param_count()) ||
      top.size() != static_cast<std::size_t>(spec.top_param_count()))
    throw ShapeError("splice: submodel lengths do not match the architecture");
  std::vector<double> full;
  full.reserve(bottom.size() + top.size());
  full.insert(full.end(), bottom.begin(), bottom.end());
  full.insert(full.end(), top.begin(), top.end());
  return full;
}

inline std::pair<std::vector<double>, std::vector<double>> split_params(
    const MlpSpec& spec, std::span<const double> full) {
  if (full.size() != static_cast<std::size_t>(spec.total_param_count()))
    throw ShapeError("split: full vector length does not match architecture");
  const auto nb = static_cast<std::size_t>(spec.bottom_param_count());
  return {std::vector<double>(full.begin(), full.begin() + nb),
          std::vector<double>(full.begin() + nb, full.end())};
}

inline SplitModel init_split_model(const MlpSpec& spec, std::uint64_t seed) {
  const auto full = init_params(spec, seed);
  auto [bottom, top] = split_params(spec, full);
  return SplitModel{spec, std::move(bottom), std::move(top)};
}

inline SmashedBatch forward_bottom(const MlpSpec& spec,
                                   std::span<const double> bottom_params,
                                   const Batch& batch) {
  auto trace = detail::forward_range(spec, bottom_params, 0, spec.split_layer,
                                     batch.features);
  SmashedBatch out;
  out.activations = std::move(trace.acts.back());
  out.labels = batch.labels;
  out.byte_size = static_cast<std::int64_t>(out.activations.rows) *
                  spec.split_width() * 4;
  return out;
}

inline SmashedBatch forward_bottom(const SplitModel& model, const Batch& batch) {
  return forward_bottom(model.spec, model.bottom_params, batch);
}

struct TopStepResult {
  std::vector<Matrix> activation_grads;  // one per worker, batch x split width
  double mean_loss = 0.0;                // average of the workers' batch losses
};

// One top-worker iteration: every worker's gradient is taken at the same
// incoming top parameters, the update applies their average scaled by eta.
// The returned activation gradients are each worker's own (unaveraged) ones.
inline TopStepResult top_step(const MlpSpec& spec,
                              std::vector<double>& top_params,
                              const std::vector<SmashedBatch>& batches,
                              double eta) {
  if (batches.empty())
    throw ContractError("top_step: need at least one worker batch");
  const int from = spec.split_layer;
  const int to = spec.num_layers();

  std::vector<double> grad_sum(top_params.size(), 0.0);
  TopStepResult result;
  result.activation_grads.reserve(batches.size());
  for (const SmashedBatch& sb : batches) {
    if (sb.activations.cols != spec.split_width())
      throw ShapeError("top_step: smashed width does not match split layer");
    if (sb.activations.rows != static_cast<int>(sb.labels.size()))
      throw ShapeError("top_step: activations rows do not match labels");
    auto trace = detail::forward_range(spec, top_params, from, to,
                                       sb.activations);
    Matrix d_logits;
    result.mean_loss +=
        detail::softmax_ce(trace.acts.back(), sb.labels, &d_logits);
    std::vector<double> grad(top_params.size(), 0.0);
    Matrix act_grad = detail::backward_range(spec, top_params, from, to, trace,
                                             d_logits, grad);
    for (std::size_t k = 0; k < grad.size(); ++k) grad_sum[k] += grad[k];
    result.activation_grads.push_back(std::move(act_grad));
  }

  const double scale = eta / static_cast<double>(batches.size());
  for (std::size_t k = 0; k < top_params.size(); ++k)
    top_params[k] -= scale * grad_sum[k];
  result.mean_loss /= static_cast<double>(batches.size());
  return result;
}

// One bottom-worker iteration from the activation gradient returned by the
// top worker.
inline void bottom_step(const MlpSpec& spec, std::vector<double>& bottom_params,
                        const Batch& batch, const Matrix& activation_grad,
                        double eta) {
  if (activation_grad.cols != spec.split_width() ||
      activation_grad.rows != batch.features.rows)
    throw ShapeError("bottom_step: activation gradient shape mismatch");
  auto trace = detail::forward_range(spec, bottom_params, 0, spec.split_layer,
                                     batch.features);
  std::vector<double> grad(bottom_params.size(), 0.0);
  detail::backward_range(spec, bottom_params, 0, spec.split_layer, trace,
                         activation_grad, grad);
  for (std::size_t k = 0; k < bottom_params.size(); ++k)
    bottom_params[k] -= eta * grad[k];
}

inline Matrix forward_full(const MlpSpec& spec, std::span<const double> params,
                           const Matrix& features) {
  auto trace =
      detail::forward_range(spec, params, 0, spec.num_layers(), features);
  return std::move(trace.acts.back());
}

inline double mean_loss(const MlpSpec& spec, std::span<const double> params,
                        const Batch& batch) {
  const Matrix logits = forward_full(spec, params, batch.features);
  return detail::softmax_ce(logits, batch.labels, nullptr);
}

// Monolithic SGD step on the unsplit net; returns the batch loss before the
// update. Shares the layer primitives with the split path.
inline double full_step(const MlpSpec& spec, std::vector<double>& params,
                        const Batch& batch, double eta) {
  auto trace = detail::forward_range(spec, params, 0, spec.num_layers(),
                                     batch.features);
  Matrix d_logits;
  const double loss =
      detail::softmax_ce(trace.acts.back(), batch.labels, &d_logits);
  std::vector<double> grad(params.size(), 0.0);
  detail::backward_range(spec, params, 0, spec.num_layers(), trace, d_logits,
                         grad);
  for (std::size_t k = 0; k < params.size(); ++k) params[k] -= eta * grad[k];
  return loss;
}

// Full analytic gradient of the mean batch loss, for verification paths.
inline std::vector<double> full_gradient(const MlpSpec& spec,
                                         std::span<const double> params,
                                         const Batch& batch) {
  auto trace = detail::forward_range(spec, params, 0, spec.num_layers(),
                                     batch.features);
  Matrix d_logits;
  detail::softmax_ce(trace.acts.back(), batch.labels, &d_logits);
  std::vector<double> grad(params.size(), 0.0);
  detail::backward_range(spec, params, 0, spec.num_layers(), trace, d_logits,
                         grad);
  return grad;
}

inline double evaluate_accuracy(const MlpSpec& spec,
                                std::span<const double> params,
                                const Dataset& ds) {
  if (ds.size() == 0) throw DataError("evaluate_accuracy: empty dataset");
  Matrix features(ds.size(), ds.feature_dim);
  std::copy(ds.features.begin(), ds.features.end(), features.data.begin());
  const Matrix logits = forward_full(spec, params, features);
  int correct = 0;
  for (int r = 0; r < logits.rows; ++r) {
    const double* lr = logits.row(r);
    int best = 0;
    for (int j = 1; j < logits.cols; ++j)
      if (lr[j] > lr[best]) best = j;
    if (best == ds.labels[r]) ++correct;
  }
  return static_cast<double>(correct) / ds.size();
}

// --- checkpoint blob -------------------------------------------------------
//
// Layout (little endian): 8-byte magic "PSFLMODL", u32 version, u32 layer
// count; then u32 layer widths, u32 split layer, u32 activation, u64 value
// count, f64 values.

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[off + i]) << (8 * i);
  return v;
}
inline std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[off + i]) << (8 * i);
  return v;
}

inline constexpr char kParamMagic[8] = {'P', 'S', 'F', 'L', 'M', 'O', 'D', 'L'};
inline constexpr std::uint32_t kParamVersion = 1;

}  // namespace detail

inline std::vector<std::uint8_t> serialize_params(
    const MlpSpec& spec, std::span<const double> params) {
  if (params.size() != static_cast<std::size_t>(spec.total_param_count()))
    throw ShapeError("serialize: parameter count does not match architecture");
  std::vector<std::uint8_t> out;
  out.reserve(16 + spec.layer_dims.size() * 4 + params.size() * 8 + 16);
  out.insert(out.end(), std::begin(detail::kParamMagic),
             std::end(detail::kParamMagic));
  detail::put_u32(out, detail::kParamVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(spec.layer_dims.size()));
  for (int d : spec.layer_dims)
    detail::put_u32(out, static_cast<std::uint32_t>(d));
  detail::put_u32(out, static_cast<std::uint32_t>(spec.split_layer));
  detail::put_u32(out, static_cast<std::uint32_t>(spec.hidden_activation));
  detail::put_u64(out, params.size());
  for (double v : params) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    detail::put_u64(out, bits);
  }
  return out;
}

inline std::pair<MlpSpec, std::vector<double>> deserialize_params(
    std::span<const std::uint8_t> blob) {
  if (blob.size() < 16 ||
      !std::equal(std::begin(detail::kParamMagic),
                  std::end(detail::kParamMagic), blob.begin()))
    throw DataError("checkpoint: bad magic");
  if (detail::get_u32(blob, 8) != detail::kParamVersion)
    throw DataError("checkpoint: unsupported version");
  const std::uint32_t dims = detail::get_u32(blob, 12);
  std::size_t off = 16;
  if (blob.size() < off + dims * 4 + 16)
    throw DataError("checkpoint: truncated header");
  MlpSpec spec;
  spec.layer_dims.resize(dims);
  for (std::uint32_t i = 0; i < dims; ++i, off += 4)
    spec.layer_dims[i] = static_cast<int>(detail::get_u32(blob, off));
  spec.split_layer = static_cast<int>(detail::get_u32(blob, off));
  off += 4;
  spec.hidden_activation =
      static_cast<Activation>(detail::get_u32(blob, off));
  off += 4;
  const std::uint64_t count = detail::get_u64(blob, off);
  off += 8;
  if (blob.size() != off + count * 8)
    throw DataError("checkpoint: payload size mismatch");
  std::vector<double> params(count);
  for (std::uint64_t i = 0; i < count; ++i, off += 8) {
    const std::uint64_t bits = detail::get_u64(blob, off);
    std::memcpy(&params[i], &bits, 8);
  }
  spec.validate();
  if (params.size() != static_cast<std::size_t>(spec.total_param_count()))
    throw DataError("checkpoint: value count does not match architecture");
  return {std::move(spec), std::move(params)};
}

inline void save_params(const std::string& path, const MlpSpec& spec,
                        std::span<const double> params) {
  const auto blob = serialize_params(spec, params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size()));
}

inline std::pair<MlpSpec, std::vector<double>> load_params(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  return deserialize_params(blob);
}

}  // namespace psfl
