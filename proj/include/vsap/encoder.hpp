#pragma once

// Patch encoder: flattened RGB patch -> linear -> tanh -> linear -> tanh ->
// linear -> R^c. Parameters live in one flat buffer so the optimizer and the
// checkpoint treat them uniformly; layer l stores W_l (out x in, row-major)
// followed by b_l.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vsap/matrix.hpp"

namespace vsap {

enum class Activation : std::uint32_t { kTanh = 0, kSoftplus = 1 };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

/// Default architecture: 8x8x3 patch -> 128 -> 128 -> 64.
inline const std::vector<std::size_t> kDefaultEncoderDims{192, 128, 128, 64};

struct EncoderState {
  std::vector<std::size_t> dims = kDefaultEncoderDims;
  Activation activation = Activation::kTanh;
  std::uint64_t init_seed = 0;
  std::vector<double> params;

  std::size_t input_dim() const { return dims.front(); }
  std::size_t output_dim() const { return dims.back(); }
  std::size_t num_layers() const { return dims.size() - 1; }
  std::size_t parameter_count() const;
  /// Offset of layer l's weight block inside `params`; bias follows it.
  std::size_t layer_offset(std::size_t l) const;

  friend bool operator==(const EncoderState&, const EncoderState&) = default;
};

/// Weights and biases uniform in +-1/sqrt(fan_in).
EncoderState init_encoder(std::uint64_t seed, const std::vector<std::size_t>& dims = kDefaultEncoderDims,
                          Activation activation = Activation::kTanh);

/// Intermediate values kept for the backward pass.
struct ForwardCache {
  std::vector<Matrix> inputs;  // input to each linear layer
  std::vector<Matrix> pre;     // pre-activation output of each layer
};

/// Throws Errc::kCorruptedState on non-finite parameters and
/// Errc::kShapeMismatch on a wrong patch width.
Matrix forward(const EncoderState& state, const Matrix& patches, ForwardCache* cache = nullptr);

/// Parameter gradient of <upstream, forward(patches)>.
std::vector<double> backward(const EncoderState& state, const ForwardCache& cache, const Matrix& upstream);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct OptimizerState {
  AdamConfig config;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

OptimizerState init_optimizer(std::size_t parameter_count, const AdamConfig& config = {});

/// One bias-corrected Adam descent step on `grads`. A non-finite gradient
/// skips the step (state untouched) and returns false.
bool adam_step(OptimizerState& opt, std::span<double> params, std::span<const double> grads);

struct Checkpoint {
  EncoderState encoder;
  OptimizerState optimizer;
  std::uint64_t train_step = 0;  // completed training steps

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr char kCheckpointMagic[4] = {'V', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vsap
