#include "vsap/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "vsap/error.hpp"
#include "vsap/rng.hpp"

namespace vsap {

void TrainConfig::validate() const {
  if (!(tau > 0.0)) throw Error(Errc::kConfig, "tau must be positive");
  if (!(rho > 0.0)) throw Error(Errc::kConfig, "rho must be positive");
  if (!(kappa > 1.0)) throw Error(Errc::kConfig, "kappa must exceed 1");
  if (batch_views < 1) throw Error(Errc::kConfig, "batch must hold at least one view");
  if (envs_per_batch < 1 || envs_per_batch > batch_views) {
    throw Error(Errc::kConfig, "envs_per_batch must be in [1, batch_views]");
  }
  if (landmarks < 1) throw Error(Errc::kConfig, "need at least one landmark per batch");
  if (epochs < 0) throw Error(Errc::kConfig, "epochs must be non-negative");
  if (!(learning_rate > 0.0)) throw Error(Errc::kConfig, "learning rate must be positive");
}

LandmarkSamplingSpec TrainConfig::sampling() const {
  LandmarkSamplingSpec s;
  s.count = landmarks;
  s.radius = rho;
  s.min_positives = min_positives;
  s.mode = embedding_mode;
  return s;
}

std::string metrics_header() { return "step,epoch,vsap,exact_ap,tau,landmarks,positive_pairs,skipped"; }

std::string metrics_row(const StepMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%llu,%.17g,%.17g,%.17g,%zu,%zu,%d",
                static_cast<unsigned long long>(m.step), static_cast<unsigned long long>(m.epoch),
                m.objective, m.exact_ap, m.tau, m.landmarks, m.positive_pairs, m.skipped ? 1 : 0);
  return buf;
}

EndToEndResult objective_and_param_grad(const EncoderState& state, const Matrix& patches,
                                        std::span<const TentativeLandmark> landmarks,
                                        const MaskPair& masks, const ObjectiveOptions& options,
                                        bool want_grad) {
  ForwardCache cache;
  const Matrix emb = forward(state, patches, want_grad ? &cache : nullptr);
  Matrix thetas(landmarks.size(), emb.cols);
  for (std::size_t j = 0; j < landmarks.size(); ++j) {
    const auto theta = landmarks[j].embedding.materialize(emb);
    std::copy(theta.begin(), theta.end(), thetas.row(j).begin());
  }
  const Matrix scores = cosine_scores(emb, thetas);
  EndToEndResult out;
  out.exact_ap = exact_ap(scores, masks);
  if (!want_grad) {
    out.objective = vectorized_smooth_ap(scores, masks, options);
    return out;
  }
  const auto og = vectorized_smooth_ap_with_grad(scores, masks, options);
  out.objective = og.value;
  CosineGradient cg = cosine_backward(emb, thetas, scores, og.grad);
  for (std::size_t j = 0; j < landmarks.size(); ++j) {
    const auto dtheta = cg.d_thetas.row(j);
    for (const auto& [idx, w] : landmarks[j].embedding.sources) {
      auto row = cg.d_embeddings.row(idx);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += w * dtheta[c];
    }
  }
  out.param_grad = backward(state, cache, cg.d_embeddings);
  return out;
}

std::vector<std::vector<const PosedView*>> plan_epoch(const Dataset& dataset, std::span<const EnvId> envs,
                                                      int batch_views, int envs_per_batch,
                                                      std::uint64_t seed, std::uint64_t epoch) {
  const auto chunk = static_cast<std::size_t>(batch_views / envs_per_batch);
  Rng rng(derive_seed(seed, "epoch-plan", epoch));
  std::vector<std::vector<std::vector<const PosedView*>>> by_env;
  for (EnvId e : envs) {
    auto& chunks = by_env.emplace_back();
    std::vector<const PosedView*> views;
    for (const auto& v : dataset.env(e).views) views.push_back(&v);
    rng.shuffle(views);
    for (std::size_t s = 0; s + chunk <= views.size(); s += chunk) {
      chunks.emplace_back(views.begin() + static_cast<std::ptrdiff_t>(s),
                          views.begin() + static_cast<std::ptrdiff_t>(s + chunk));
    }
  }
  // Each batch takes one chunk from each of envs_per_batch distinct
  // environments, preferring those with the most chunks left.
  const auto per = static_cast<std::size_t>(envs_per_batch);
  std::vector<std::vector<const PosedView*>> batches;
  while (true) {
    std::vector<std::size_t> order;
    for (std::size_t e = 0; e < by_env.size(); ++e) {
      if (!by_env[e].empty()) order.push_back(e);
    }
    if (order.size() < per) break;
    rng.shuffle(order);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return by_env[a].size() > by_env[b].size(); });
    std::vector<const PosedView*> b;
    for (std::size_t k = 0; k < per; ++k) {
      auto& q = by_env[order[k]];
      b.insert(b.end(), q.back().begin(), q.back().end());
      q.pop_back();
    }
    batches.push_back(std::move(b));
  }
  rng.shuffle(batches);
  return batches;
}

Trainer::Trainer(const TrainConfig& config, const Dataset& dataset)
    : Trainer(config, dataset, [&] {
        Checkpoint c;
        const std::size_t in = static_cast<std::size_t>(dataset.spec.patch_size) * dataset.spec.patch_size * 3;
        std::vector<std::size_t> dims = kDefaultEncoderDims;
        dims.front() = in;
        c.encoder = init_encoder(derive_seed(config.seed, "encoder"), dims, config.activation);
        c.optimizer = init_optimizer(c.encoder.parameter_count(), {config.learning_rate});
        return c;
      }()) {}

Trainer::Trainer(const TrainConfig& config, const Dataset& dataset, Checkpoint checkpoint)
    : config_(config), dataset_(&dataset), ckpt_(std::move(checkpoint)) {
  config_.validate();
  if (dataset.split.train.empty()) throw Error(Errc::kInvalidArgument, "dataset has no training split");
  const auto plan = plan_epoch(dataset, dataset.split.train, config_.batch_views, config_.envs_per_batch, config_.seed, 0);
  steps_per_epoch_ = plan.size();
  if (steps_per_epoch_ == 0 && config_.epochs > 0) {
    throw Error(Errc::kInvalidArgument, "training split too small for one batch");
  }
}

StepMetrics Trainer::run_step() {
  if (done()) throw Error(Errc::kInvalidArgument, "training already finished");
  const std::uint64_t step = ckpt_.train_step;
  const std::uint64_t epoch = step / steps_per_epoch_;
  if (epoch != planned_epoch_) {
    plan_ = plan_epoch(*dataset_, dataset_->split.train, config_.batch_views, config_.envs_per_batch, config_.seed, epoch);
    planned_epoch_ = epoch;
  }
  const auto& views = plan_[step % steps_per_epoch_];
  BatchSpec bs;
  bs.patch_size = dataset_->spec.patch_size;
  bs.normalization = dataset_->normalization;
  bs.threads = config_.threads;
  const PatchBatch batch = build_batch(std::span<const PosedView* const>(views), bs);

  StepMetrics m;
  m.step = step;
  m.epoch = epoch;
  m.tau = config_.tau;
  Rng rng(derive_seed(config_.seed, "landmarks", step));
  const auto landmarks = batch.size() ? sample_landmarks(batch, config_.sampling(), rng) : std::vector<TentativeLandmark>{};
  m.landmarks = landmarks.size();
  if (landmarks.empty()) {
    m.skipped = true;
    m.objective = m.exact_ap = std::numeric_limits<double>::quiet_NaN();
  } else {
    const MaskPair masks = build_masks(batch, std::span<const TentativeLandmark>(landmarks), config_.kappa);
    m.positive_pairs = masks.positive_count();
    EndToEndResult r = objective_and_param_grad(ckpt_.encoder, batch.pixels, landmarks, masks, config_.objective());
    m.objective = r.objective;
    m.exact_ap = r.exact_ap;
    // Ascent on the objective = descent on its negation.
    for (double& g : r.param_grad) g = -g;
    m.skipped = !adam_step(ckpt_.optimizer, ckpt_.encoder.params, r.param_grad);
  }
  ckpt_.train_step = step + 1;
  log_.push_back(m);
  return m;
}

void Trainer::run(std::uint64_t max_steps, const std::function<void(const StepMetrics&, const Trainer&)>& on_step) {
  for (std::uint64_t k = 0; k < max_steps && !done(); ++k) {
    const StepMetrics m = run_step();
    if (on_step) on_step(m, *this);
  }
}

TrainResult train(const TrainConfig& config, const Dataset& dataset) {
  Trainer t(config, dataset);
  t.run();
  return {t.checkpoint(), t.log()};
}

}  // namespace vsap
