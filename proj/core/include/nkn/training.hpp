#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nkn/autodiff.hpp"
#include "nkn/datagen.hpp"
#include "nkn/model.hpp"

namespace nkn {

/// Mean over samples of |pred_j - truth_j|^2 / |truth_j|^2. Both arguments
/// are samples x nodes, sample-major.
double relative_mse(std::span<const double> pred, std::span<const double> truth, std::size_t nodes);

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};
/// Sample mean and its standard error (sample std / sqrt(count)).
MeanStderr mean_stderr(std::span<const double> values);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<ad::DenseArray> m, v;
};

/// One bias-corrected Adam update in place. Moments are created on the first
/// call. Throws NumericalError on a non-finite gradient.
void adam_step(std::span<ad::DenseArray* const> params, std::span<const ad::DenseArray> grads, AdamState& state,
               double lr);

struct TrainConfig {
  double learning_rate = 1e-3;
  double decay_ratio = 1.0;        ///< multiply the rate by this ...
  std::size_t decay_period = 0;    ///< ... every this many epochs (0: never)
  std::size_t max_epochs = 10000;
  std::size_t batch_size = 0;      ///< 0: full batch
  std::size_t patience = 200;
  double threshold = 1e-4;         ///< relative improvement that resets patience
  double divergence_limit = 1e5;
  bool normalize = false;
  bool shuffle = false;
  std::uint64_t seed = 0;
  std::vector<std::size_t> depth_schedule{1};

  /// Throws on non-positive rates or a schedule that is not strictly increasing.
  void validate() const;
};

enum class TrainStatus { completed, plateau, diverged };
const char* status_name(TrainStatus s);  ///< "completed", "plateau", "INF"

struct TrainResult {
  OperatorModel model;           ///< best-so-far checkpoint
  std::vector<double> history;   ///< per-epoch mean training loss
  TrainStatus status = TrainStatus::completed;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  double initial_loss = 0.0;
  double best_loss = 0.0;
  double final_train_loss = 0.0; ///< loss of `model` on the training split
  double seconds = 0.0;
};

/// Loss and its gradient in parameters() order.
struct LossGradient {
  double loss = 0.0;
  std::vector<ad::DenseArray> grads;
};

/// Cached differentiable graphs for one dataset. Losses are mean relative
/// MSE over the listed samples; per-sample gradients are summed in sample
/// order whatever the worker count.
class Trainer {
 public:
  Trainer(const OperatorModel& shape, const Dataset& train);
  ~Trainer();
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  LossGradient loss_and_gradient(const OperatorModel& model, std::span<const std::size_t> samples);
  double loss(const OperatorModel& model, std::span<const std::size_t> samples);
  /// Mean relative MSE over every sample.
  double loss(const OperatorModel& model);
  /// Denormalized predictions for the listed samples.
  std::vector<std::vector<double>> predict(const OperatorModel& model, std::span<const std::size_t> samples);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Minimizes the mean relative MSE on `train` starting from `model`. The
/// depth schedule in `cfg` is ignored here.
TrainResult train(const OperatorModel& model, const Dataset& train, const TrainConfig& cfg);

/// Same parameters, depth `new_depth`, dt = T / new_depth.
OperatorModel shallow_to_deep(const OperatorModel& model, std::size_t new_depth);

/// Trains each depth of cfg.depth_schedule. With `warm_start` every depth
/// after the first starts from the previous result; otherwise from a fresh
/// model built from `spec`.
std::vector<TrainResult> train_schedule(const ModelSpec& spec, const Dataset& train, const TrainConfig& cfg,
                                        bool warm_start);

/// Mean relative MSE of `model` on `ds` (predictions denormalized).
double evaluate(const OperatorModel& model, const Dataset& ds);
/// Per-sample relative errors.
std::vector<double> evaluate_samples(const OperatorModel& model, const Dataset& ds);

/// Non-increasing running minimum of a loss history.
std::vector<double> best_so_far(std::span<const double> history);

/// Run metadata document: config, per-epoch losses, metrics, timing and the
/// dataset hash.
std::string run_metadata_json(const TrainConfig& cfg, const TrainResult& result, const Dataset& train,
                              const std::string& extra_json = "{}");

/// Worker count from NOL_THREADS (default: hardware concurrency, at least 1).
std::size_t worker_count();

}  // namespace nkn
