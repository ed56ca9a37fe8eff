#include "vsap/encoder.hpp"

#include <cmath>
#include <iostream>

#include "vsap/error.hpp"
#include "vsap/kernels.hpp"
#include "vsap/rng.hpp"

namespace vsap {
namespace {

double activate(Activation a, double x) {
  if (a == Activation::kTanh) return std::tanh(x);
  // softplus, overflow-safe
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double activate_grad(Activation a, double x) {
  if (a == Activation::kTanh) {
    const double t = std::tanh(x);
    return 1.0 - t * t;
  }
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

const char* activation_name(Activation a) { return a == Activation::kTanh ? "tanh" : "softplus"; }

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "softplus") return Activation::kSoftplus;
  throw Error(Errc::kInvalidArgument, "unknown activation '" + name + "'");
}

std::size_t EncoderState::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) n += dims[l + 1] * dims[l] + dims[l + 1];
  return n;
}

std::size_t EncoderState::layer_offset(std::size_t l) const {
  std::size_t off = 0;
  for (std::size_t k = 0; k < l; ++k) off += dims[k + 1] * dims[k] + dims[k + 1];
  return off;
}

EncoderState init_encoder(std::uint64_t seed, const std::vector<std::size_t>& dims, Activation activation) {
  if (dims.size() < 2) throw Error(Errc::kInvalidArgument, "encoder needs at least one layer");
  EncoderState s;
  s.dims = dims;
  s.activation = activation;
  s.init_seed = seed;
  s.params.resize(s.parameter_count());
  Rng rng(derive_seed(seed, "encoder-init"));
  for (std::size_t l = 0; l < s.num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    const std::size_t off = s.layer_offset(l);
    const std::size_t count = dims[l + 1] * dims[l] + dims[l + 1];
    for (std::size_t k = 0; k < count; ++k) s.params[off + k] = rng.uniform(-bound, bound);
  }
  return s;
}

Matrix forward(const EncoderState& state, const Matrix& patches, ForwardCache* cache) {
  if (patches.cols != state.input_dim()) throw Error(Errc::kShapeMismatch, "patch width does not match encoder input");
  if (state.params.size() != state.parameter_count()) throw Error(Errc::kCorruptedState, "parameter buffer size mismatch");
  for (double p : state.params) {
    if (!std::isfinite(p)) throw Error(Errc::kCorruptedState, "non-finite encoder parameter");
  }
  const auto& k = kernels::active();
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Matrix x = patches;
  for (std::size_t l = 0; l < state.num_layers(); ++l) {
    const std::size_t in = state.dims[l], out = state.dims[l + 1];
    const double* w = state.params.data() + state.layer_offset(l);
    const double* b = w + out * in;
    Matrix z(x.rows, out);
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double* xi = x.row(i).data();
      double* zi = z.row(i).data();
      for (std::size_t o = 0; o < out; ++o) zi[o] = k.dot(xi, w + o * in, in) + b[o];
    }
    const bool last = l + 1 == state.num_layers();
    Matrix y = z;
    if (!last) {
      for (double& v : y.data) v = activate(state.activation, v);
    }
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->pre.push_back(std::move(z));
    }
    x = std::move(y);
  }
  return x;
}

std::vector<double> backward(const EncoderState& state, const ForwardCache& cache, const Matrix& upstream) {
  if (cache.inputs.size() != state.num_layers() || upstream.cols != state.output_dim() ||
      upstream.rows != cache.inputs.front().rows) {
    throw Error(Errc::kShapeMismatch, "backward inputs do not match the forward cache");
  }
  const auto& k = kernels::active();
  std::vector<double> grad(state.parameter_count(), 0.0);
  Matrix dz = upstream;  // gradient w.r.t. the current layer's pre-activation
  for (std::size_t l = state.num_layers(); l-- > 0;) {
    const std::size_t in = state.dims[l], out = state.dims[l + 1];
    const double* w = state.params.data() + state.layer_offset(l);
    double* gw = grad.data() + state.layer_offset(l);
    double* gb = gw + out * in;
    const Matrix& x = cache.inputs[l];
    Matrix dx(x.rows, in);
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double* xi = x.row(i).data();
      const double* dzi = dz.row(i).data();
      double* dxi = dx.row(i).data();
      for (std::size_t o = 0; o < out; ++o) {
        const double g = dzi[o];
        if (g == 0.0) continue;
        k.axpy(g, xi, gw + o * in, in);
        gb[o] += g;
        if (l > 0) k.axpy(g, w + o * in, dxi, in);
      }
    }
    if (l == 0) break;
    const Matrix& zprev = cache.pre[l - 1];
    for (std::size_t q = 0; q < dx.data.size(); ++q) dx.data[q] *= activate_grad(state.activation, zprev.data[q]);
    dz = std::move(dx);
  }
  return grad;
}

OptimizerState init_optimizer(std::size_t parameter_count, const AdamConfig& config) {
  OptimizerState o;
  o.config = config;
  o.m.assign(parameter_count, 0.0);
  o.v.assign(parameter_count, 0.0);
  return o;
}

bool adam_step(OptimizerState& opt, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size() || opt.m.size() != params.size() || opt.v.size() != params.size()) {
    throw Error(Errc::kShapeMismatch, "optimizer, parameter and gradient sizes differ");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) {
      std::cerr << "warning: non-finite gradient at optimizer step " << opt.step << ", step skipped\n";
      return false;
    }
  }
  const AdamConfig& c = opt.config;
  opt.step += 1;
  const double t = static_cast<double>(opt.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    opt.m[k] = c.beta1 * opt.m[k] + (1.0 - c.beta1) * grads[k];
    opt.v[k] = c.beta2 * opt.v[k] + (1.0 - c.beta2) * grads[k] * grads[k];
    const double mhat = opt.m[k] / bc1;
    const double vhat = opt.v[k] / bc2;
    params[k] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
  }
  return true;
}

}  // namespace vsap
