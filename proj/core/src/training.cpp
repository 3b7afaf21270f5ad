#include "nkn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <thread>

#include "json.hpp"
#include "nkn/error.hpp"
#include "nkn/grid.hpp"
#include "nkn/operator_graph.hpp"

namespace nkn {

using ad::DenseArray;

double relative_mse(std::span<const double> pred, std::span<const double> truth, std::size_t nodes) {
  if (pred.size() != truth.size()) throw ShapeError("relative_mse: prediction and truth sizes differ");
  if (nodes == 0 || truth.size() % nodes != 0 || truth.empty()) {
    throw ShapeError("relative_mse: sizes are not a whole number of samples");
  }
  const std::size_t samples = truth.size() / nodes;
  double total = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = s * nodes; i < (s + 1) * nodes; ++i) {
      const double e = pred[i] - truth[i];
      num += e * e;
      den += truth[i] * truth[i];
    }
    if (!(den > 0.0)) throw NumericalError("relative_mse: sample " + std::to_string(s) + " has a zero reference");
    total += num / den;
  }
  return total / static_cast<double>(samples);
}

MeanStderr mean_stderr(std::span<const double> values) {
  if (values.empty()) throw Error("mean_stderr: no values");
  const double n = static_cast<double>(values.size());
  MeanStderr r;
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - r.mean) * (v - r.mean);
    r.stderr_ = std::sqrt(sq / (n - 1.0)) / std::sqrt(n);
  }
  return r;
}

void adam_step(std::span<DenseArray* const> params, std::span<const DenseArray> grads, AdamState& state,
               double lr) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient counts differ");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->shape() != grads[k].shape()) {
      throw ShapeError("adam_step: gradient " + std::to_string(k) + " has shape " +
                       ad::shape_string(grads[k].shape()) + ", parameter has " +
                       ad::shape_string(params[k]->shape()));
    }
    if (!grads[k].all_finite()) throw NumericalError("adam_step: non-finite gradient in block " + std::to_string(k));
  }
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->shape(), 0.0);
      state.v.emplace_back(p->shape(), 0.0);
    }
  } else if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state belongs to a different parameter set");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k]->storage();
    auto& m = state.m[k].storage();
    auto& v = state.v[k].storage();
    const auto& g = grads[k].storage();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error("train config: learning rate must be positive");
  if (!(decay_ratio > 0.0)) throw Error("train config: decay ratio must be positive");
  if (!(threshold >= 0.0)) throw Error("train config: plateau threshold must be non-negative");
  if (!(divergence_limit > 0.0)) throw Error("train config: divergence limit must be positive");
  if (depth_schedule.empty()) throw Error("train config: empty depth schedule");
  for (std::size_t i = 0; i < depth_schedule.size(); ++i) {
    if (depth_schedule[i] == 0) throw Error("train config: depths must be positive");
    if (i > 0 && depth_schedule[i] <= depth_schedule[i - 1]) {
      throw Error("train config: depth schedule must be strictly increasing");
    }
  }
}

const char* status_name(TrainStatus s) {
  switch (s) {
    case TrainStatus::completed:
      return "completed";
    case TrainStatus::plateau:
      return "plateau";
    case TrainStatus::diverged:
      return "INF";
  }
  return "?";
}

std::size_t worker_count() {
  if (const char* env = std::getenv("NOL_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

// ---------------------------------------------------------------------------

struct Trainer::Impl {
  const Dataset* data;
  Grid grid;
  Neighborhood nbhd;
  std::size_t depth = 0;
  Normalizer norm;
  std::size_t workers = 1;
  std::map<std::size_t, std::unique_ptr<OperatorGraph>> dense;  // keyed by batch size
  std::vector<std::unique_ptr<OperatorGraph>> edge;             // one per worker
  OperatorModel shape;

  Impl(const OperatorModel& model, const Dataset& ds)
      : data(&ds),
        grid(make_uniform_grid(ds.n, ds.dim)),
        nbhd(build_neighborhood(grid, model.radius)),
        depth(model.depth),
        norm(model.normalizer),
        shape(model) {
    if (model.spatial_dim != ds.dim) {
      throw ShapeError("trainer: " + std::to_string(model.spatial_dim) + "D model with a " + std::to_string(ds.dim) +
                       "D dataset");
    }
    if (ds.samples == 0) throw Error("trainer: dataset has no samples");
  }

  void sync_shape(const OperatorModel& model) {
    if (model.depth == depth && model.normalizer == norm && model.variant == shape.variant &&
        model.kernel_form == shape.kernel_form && model.feature_dim == shape.feature_dim) {
      return;
    }
    depth = model.depth;
    norm = model.normalizer;
    shape = model;
    dense.clear();
    edge.clear();
  }

  OperatorGraph& dense_graph(const OperatorModel& model, std::size_t batch) {
    auto& g = dense[batch];
    if (!g) g = std::make_unique<OperatorGraph>(model, grid, nbhd, batch);
    return *g;
  }

  OperatorGraph& edge_graph(const OperatorModel& model, std::size_t worker) {
    if (edge.size() <= worker) edge.resize(worker + 1);
    if (!edge[worker]) edge[worker] = std::make_unique<OperatorGraph>(model, grid, nbhd, 1);
    return *edge[worker];
  }

  std::vector<DenseArray> zero_grads(const OperatorModel& model) const {
    std::vector<DenseArray> g;
    for (const auto* p : parameters(model)) g.emplace_back(p->shape(), 0.0);
    return g;
  }

  void check_samples(std::span<const std::size_t> samples) const {
    if (samples.empty()) throw Error("trainer: empty sample list");
    for (auto s : samples) {
      if (s >= data->samples) throw Error("trainer: sample " + std::to_string(s) + " out of range");
    }
  }

  // Runs forward (and optionally backward) on the listed samples. Returns the
  // summed relative squared error.
  double run(const OperatorModel& model, std::span<const std::size_t> samples, std::vector<DenseArray>* grads,
             std::vector<std::vector<double>>* preds) {
    sync_shape(model);
    check_samples(samples);
    if (OperatorGraph::dense_layout_applies(model)) {
      OperatorGraph& g = dense_graph(model, samples.size());
      g.load_parameters(model);
      std::vector<std::span<const double>> in, out;
      for (auto s : samples) {
        in.push_back(data->input_sample(s));
        out.push_back(data->output_sample(s));
      }
      g.load_batch(in, out);
      const double total = g.forward();
      if (grads) {
        g.backward();
        g.accumulate_gradients(*grads);
      }
      if (preds) *preds = g.predictions();
      return total;
    }

    const std::size_t n = samples.size();
    const std::size_t nw = std::min(workers, n);
    std::vector<double> losses(n, 0.0);
    std::vector<std::vector<DenseArray>> per_sample;
    if (grads && nw > 1) per_sample.assign(n, {});
    if (preds) preds->assign(n, {});
    for (std::size_t w = 0; w < nw; ++w) edge_graph(model, w).load_parameters(model);

    auto work = [&](std::size_t w, std::size_t k) {
      OperatorGraph& g = *edge[w];
      std::span<const double> in[] = {data->input_sample(samples[k])};
      std::span<const double> out[] = {data->output_sample(samples[k])};
      g.load_batch(in, out);
      losses[k] = g.forward();
      if (grads) {
        g.backward();
        if (nw > 1) {
          per_sample[k] = zero_grads(model);
          g.accumulate_gradients(per_sample[k]);
        } else {
          g.accumulate_gradients(*grads);
        }
      }
      if (preds) (*preds)[k] = g.predictions().front();
    };

    if (nw == 1) {
      for (std::size_t k = 0; k < n; ++k) work(0, k);
    } else {
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(nw);
      for (std::size_t w = 0; w < nw; ++w) {
        pool.emplace_back([&, w] {
          try {
            for (std::size_t k = w; k < n; k += nw) work(w, k);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
      for (auto& t : pool) t.join();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
      if (grads) {
        for (std::size_t k = 0; k < n; ++k) {
          for (std::size_t b = 0; b < grads->size(); ++b) {
            auto& dst = (*grads)[b].storage();
            const auto& src = per_sample[k][b].storage();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
          }
        }
      }
    }
    double total = 0.0;
    for (double l : losses) total += l;
    return total;
  }
};

Trainer::Trainer(const OperatorModel& shape, const Dataset& train) : impl_(std::make_unique<Impl>(shape, train)) {
  impl_->workers = worker_count();
}

Trainer::~Trainer() = default;

LossGradient Trainer::loss_and_gradient(const OperatorModel& model, std::span<const std::size_t> samples) {
  LossGradient lg;
  lg.grads = impl_->zero_grads(model);
  const double total = impl_->run(model, samples, &lg.grads, nullptr);
  const double scale = 1.0 / static_cast<double>(samples.size());
  lg.loss = total * scale;
  for (auto& g : lg.grads)
    for (double& v : g.storage()) v *= scale;
  return lg;
}

double Trainer::loss(const OperatorModel& model, std::span<const std::size_t> samples) {
  return impl_->run(model, samples, nullptr, nullptr) / static_cast<double>(samples.size());
}

double Trainer::loss(const OperatorModel& model) {
  std::vector<std::size_t> all(impl_->data->samples);
  std::iota(all.begin(), all.end(), 0);
  return loss(model, all);
}

std::vector<std::vector<double>> Trainer::predict(const OperatorModel& model, std::span<const std::size_t> samples) {
  std::vector<std::vector<double>> preds;
  impl_->run(model, samples, nullptr, &preds);
  return preds;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<DenseArray*> parameter_pointers(OperatorModel& m) {
  std::vector<DenseArray*> out;
  for (auto& r : parameters(m)) out.push_back(r.array);
  return out;
}

}  // namespace

TrainResult train(const OperatorModel& model, const Dataset& train_set, const TrainConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  TrainResult result;
  OperatorModel current = model;
  if (cfg.normalize) current.normalizer = normalizer_from(train_set);
  current.train_resolution = train_set.n;
  result.model = current;

  Trainer trainer(current, train_set);
  std::vector<std::size_t> order(train_set.samples);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = cfg.batch_size == 0 ? order.size() : std::min(cfg.batch_size, order.size());
  const bool full_batch = batch == order.size();
  std::mt19937_64 rng(cfg.seed);

  auto safe_loss = [&](const OperatorModel& m) {
    try {
      return trainer.loss(m);
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  result.initial_loss = safe_loss(current);
  result.best_loss = result.initial_loss;
  if (cfg.max_epochs == 0) {
    result.final_train_loss = result.initial_loss;
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
  }

  AdamState adam;
  const auto params = parameter_pointers(current);
  double best = std::numeric_limits<double>::infinity();
  double plateau_ref = std::numeric_limits<double>::infinity();
  std::size_t since_improvement = 0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    double lr = cfg.learning_rate;
    if (cfg.decay_period > 0) {
      lr *= std::pow(cfg.decay_ratio, static_cast<double>(epoch / cfg.decay_period));
    }
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    bool diverged = false;
    OperatorModel before = full_batch ? current : OperatorModel{};
    for (std::size_t b0 = 0; b0 < order.size(); b0 += batch) {
      const std::size_t count = std::min(batch, order.size() - b0);
      std::span<const std::size_t> ids(order.data() + b0, count);
      LossGradient lg;
      try {
        lg = trainer.loss_and_gradient(current, ids);
      } catch (const NumericalError&) {
        diverged = true;
        epoch_loss = std::numeric_limits<double>::infinity();
        break;
      }
      epoch_loss += lg.loss * static_cast<double>(count);
      if (!std::isfinite(lg.loss) || lg.loss > cfg.divergence_limit) {
        diverged = true;
        epoch_loss = lg.loss * static_cast<double>(order.size());
        break;
      }
      try {
        adam_step(params, lg.grads, adam, lr);
      } catch (const NumericalError&) {
        diverged = true;
        break;
      }
    }
    epoch_loss /= static_cast<double>(order.size());
    result.history.push_back(epoch_loss);
    result.epochs = epoch + 1;
    if (diverged || !std::isfinite(epoch_loss) || epoch_loss > cfg.divergence_limit) {
      result.status = TrainStatus::diverged;
      break;
    }
    if (epoch_loss < best) {
      best = epoch_loss;
      result.best_epoch = epoch;
      result.model = full_batch ? std::move(before) : current;
    }
    if (!std::isfinite(plateau_ref) || epoch_loss < plateau_ref * (1.0 - cfg.threshold)) {
      plateau_ref = epoch_loss;
      since_improvement = 0;
    } else if (++since_improvement >= cfg.patience) {
      result.status = TrainStatus::plateau;
      break;
    }
  }
  result.final_train_loss = safe_loss(result.model);
  result.best_loss = std::isfinite(best) ? best : result.initial_loss;
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

OperatorModel shallow_to_deep(const OperatorModel& model, std::size_t new_depth) {
  if (new_depth <= model.depth) {
    throw Error("shallow_to_deep: new depth " + std::to_string(new_depth) + " must exceed current depth " +
                std::to_string(model.depth));
  }
  OperatorModel deeper = model;
  deeper.depth = new_depth;
  return deeper;
}

std::vector<TrainResult> train_schedule(const ModelSpec& spec, const Dataset& train_set, const TrainConfig& cfg,
                                        bool warm_start) {
  cfg.validate();
  std::vector<TrainResult> results;
  for (std::size_t k = 0; k < cfg.depth_schedule.size(); ++k) {
    const std::size_t depth = cfg.depth_schedule[k];
    OperatorModel start;
    if (k > 0 && warm_start) {
      start = shallow_to_deep(results.back().model, depth);
    } else {
      ModelSpec s = spec;
      s.depth = depth;
      start = assemble_model(s);
    }
    results.push_back(train(start, train_set, cfg));
  }
  return results;
}

double evaluate(const OperatorModel& model, const Dataset& ds) {
  Trainer t(model, ds);
  return t.loss(model);
}

std::vector<double> evaluate_samples(const OperatorModel& model, const Dataset& ds) {
  Trainer t(model, ds);
  std::vector<std::size_t> all(ds.samples);
  std::iota(all.begin(), all.end(), 0);
  const auto preds = t.predict(model, all);
  std::vector<double> errs(ds.samples);
  for (std::size_t j = 0; j < ds.samples; ++j) errs[j] = relative_mse(preds[j], ds.output_sample(j), ds.nodes());
  return errs;
}

std::vector<double> best_so_far(std::span<const double> history) {
  std::vector<double> out(history.size());
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < history.size(); ++i) {
    best = std::min(best, history[i]);
    out[i] = best;
  }
  return out;
}

std::string run_metadata_json(const TrainConfig& cfg, const TrainResult& result, const Dataset& train_set,
                              const std::string& extra_json) {
  using json = nlohmann::json;
  auto finite_or_null = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json history = json::array();
  for (double v : result.history) history.push_back(finite_or_null(v));
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(dataset_hash(train_set)));
  json doc = {
      {"config",
       {{"learning_rate", cfg.learning_rate},
        {"decay_ratio", cfg.decay_ratio},
        {"decay_period", cfg.decay_period},
        {"max_epochs", cfg.max_epochs},
        {"batch_size", cfg.batch_size},
        {"patience", cfg.patience},
        {"threshold", cfg.threshold},
        {"divergence_limit", cfg.divergence_limit},
        {"normalize", cfg.normalize},
        {"shuffle", cfg.shuffle},
        {"seed", cfg.seed},
        {"depth_schedule", cfg.depth_schedule}}},
      {"model",
       {{"variant", variant_name(result.model.variant)},
        {"depth", result.model.depth},
        {"feature_dim", result.model.feature_dim},
        {"dt", result.model.dt()},
        {"radius", result.model.radius},
        {"seed", result.model.seed}}},
      {"status", status_name(result.status)},
      {"epochs", result.epochs},
      {"best_epoch", result.best_epoch},
      {"initial_loss", finite_or_null(result.initial_loss)},
      {"final_train_loss", finite_or_null(result.final_train_loss)},
      {"history", history},
      {"wall_clock_seconds", result.seconds},
      {"dataset",
       {{"generator", train_set.generator},
        {"seed", train_set.seed},
        {"n", train_set.n},
        {"samples", train_set.samples},
        {"hash", hash},
        {"provenance", train_set.provenance}}},
  };
  json extra = json::parse(extra_json.empty() ? "{}" : extra_json);
  if (!extra.is_object()) throw Error("run_metadata_json: extra metadata must be a JSON object");
  for (auto it = extra.begin(); it != extra.end(); ++it) doc[it.key()] = it.value();
  return doc.dump(2);
}

}  // namespace nkn
