#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vsap/dataset.hpp"
#include "vsap/encoder.hpp"
#include "vsap/landmarks.hpp"
#include "vsap/objective.hpp"

namespace vsap {

struct TrainConfig {
  double tau = kDefaultTau;
  double rho = kDefaultRadius;
  /// Universe radius multiplier; +infinity disables the don't-care region.
  double kappa = kDefaultKappa;
  int batch_views = 16;
  int envs_per_batch = 2;
  std::size_t landmarks = 64;
  std::size_t min_positives = 2;
  int epochs = 20;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  EmbeddingMode embedding_mode = EmbeddingMode::kSinglePositive;
  bool exclude_self = true;
  Activation activation = Activation::kTanh;
  /// Save a checkpoint every N steps (0 = only at the end).
  int checkpoint_every = 0;
  int threads = 1;

  void validate() const;
  ObjectiveOptions objective() const { return {tau, exclude_self}; }
  LandmarkSamplingSpec sampling() const;
};

struct StepMetrics {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  double objective = 0.0;  // vectorized smooth AP on the batch, before the update
  double exact_ap = 0.0;
  double tau = 0.0;
  std::size_t landmarks = 0;
  std::size_t positive_pairs = 0;
  bool skipped = false;
};

/// CSV header and row used by the metrics log.
std::string metrics_header();
std::string metrics_row(const StepMetrics& m);

struct EndToEndResult {
  double objective = 0.0;
  double exact_ap = 0.0;
  std::vector<double> param_grad;  // d objective / d params (ascent direction)
};

/// Vectorized smooth AP of a fixed batch and landmark set as a function of
/// the encoder parameters. Landmark embeddings are taken from the encoder's
/// own outputs, and the gradient flows through them too.
EndToEndResult objective_and_param_grad(const EncoderState& state, const Matrix& patches,
                                        std::span<const TentativeLandmark> landmarks,
                                        const MaskPair& masks, const ObjectiveOptions& options,
                                        bool want_grad = true);

/// Batches of one epoch: each environment's views are shuffled and cut into
/// chunks of batch_views / envs_per_batch; every batch joins one chunk from
/// each of envs_per_batch distinct environments. Incomplete chunks and
/// leftover chunks that cannot form such a batch are dropped.
std::vector<std::vector<const PosedView*>> plan_epoch(const Dataset& dataset, std::span<const EnvId> envs,
                                                      int batch_views, int envs_per_batch,
                                                      std::uint64_t seed, std::uint64_t epoch);

class Trainer {
 public:
  Trainer(const TrainConfig& config, const Dataset& dataset);
  /// Resume from a checkpoint produced by the same config and dataset.
  Trainer(const TrainConfig& config, const Dataset& dataset, Checkpoint checkpoint);

  std::uint64_t steps_per_epoch() const { return steps_per_epoch_; }
  std::uint64_t total_steps() const { return steps_per_epoch_ * static_cast<std::uint64_t>(config_.epochs); }
  std::uint64_t step() const { return ckpt_.train_step; }
  bool done() const { return step() >= total_steps(); }

  StepMetrics run_step();
  /// Runs until done or `max_steps` more steps; calls on_step after each.
  void run(std::uint64_t max_steps = UINT64_MAX,
           const std::function<void(const StepMetrics&, const Trainer&)>& on_step = {});

  const Checkpoint& checkpoint() const { return ckpt_; }
  const EncoderState& encoder() const { return ckpt_.encoder; }
  const std::vector<StepMetrics>& log() const { return log_; }

 private:
  TrainConfig config_;
  const Dataset* dataset_;
  Checkpoint ckpt_;
  std::uint64_t steps_per_epoch_ = 0;
  std::uint64_t planned_epoch_ = UINT64_MAX;
  std::vector<std::vector<const PosedView*>> plan_;
  std::vector<StepMetrics> log_;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepMetrics> log;
};

TrainResult train(const TrainConfig& config, const Dataset& dataset);

}  // namespace vsap
