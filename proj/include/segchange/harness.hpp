#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "segchange/config.hpp"
#include "segchange/dataio.hpp"
#include "segchange/metrics.hpp"
#include "segchange/model.hpp"
#include "segchange/rng.hpp"

namespace segchange {

// Decoupled-weight-decay Adam (beta1 0.9, beta2 0.999, eps 1e-8) over two
// parameter groups: backbone at lr_backbone, everything else at lr_main.
class Optimizer {
 public:
  struct Moments {
    Tensor m, v;
  };

  Optimizer(ParamRegistry& params, const TrainConfig& cfg);

  void zero_grad();
  void step(double lr_backbone, double lr_main);

  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  std::vector<Moments>& moments() { return moments_; }
  double grad_norm() const;

 private:
  ParamRegistry* params_;
  double weight_decay_;
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  std::vector<Moments> moments_;
  std::vector<bool> is_backbone_;
  std::int64_t t_ = 0;
};

// StepLR: both group rates decay by sched_gamma every sched_step epochs.
std::pair<double, double> lr_at(int epoch, const TrainConfig& cfg);

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  MetricsReport val;
  double lr_backbone = 0.0;
  double lr_main = 0.0;
  std::string line() const;  // fixed %.17g format, stable across runs
};

struct TrainResult {
  std::vector<EpochLog> logs;
  int best_epoch = -1;
  double best_val_f1 = -1.0;
  std::string last_checkpoint;
  std::string best_checkpoint;
};

// Binary checkpoint: config snapshot, epoch cursor, optimizer step count and
// moments, best-so-far F1, data-order RNG state, raw float64 parameters.
void save_checkpoint(const std::string& path, const ChangeModel& model, Optimizer& opt,
                     int next_epoch, double best_val_f1, const std::string& rng_state);

struct LoadedCheckpoint {
  TrainConfig cfg;
  std::unique_ptr<ChangeModel> model;
  int next_epoch = 0;
  double best_val_f1 = -1.0;
  std::int64_t opt_step = 0;
  std::string rng_state;
  std::vector<Optimizer::Moments> moments;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Deterministic training: data order comes from a dedicated RNG stream that
// is part of the checkpoint, losses are accumulated sequentially, and the
// best-val-F1 checkpoint is retained next to the last one. `on_epoch`, when
// set, observes each completed epoch's log line.
// Throws LoadError unless `provided` differs from the checkpoint snapshot
// only in run-scoped fields (epochs, out.*, data.*).
void require_resume_compatible(const TrainConfig& snapshot, const TrainConfig& provided);

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);
  explicit Trainer(LoadedCheckpoint loaded);
  // Resume under `provided` (validated against the snapshot).
  Trainer(LoadedCheckpoint loaded, const TrainConfig& provided);

  TrainResult train(const DatasetSplit& train_split, const DatasetSplit& val_split,
                    const std::function<void(const EpochLog&)>& on_epoch = nullptr);

  ChangeModel& model() { return *model_; }
  Optimizer& optimizer() { return *opt_; }

 private:
  TrainConfig cfg_;
  std::unique_ptr<ChangeModel> model_;
  std::unique_ptr<Optimizer> opt_;
  Rng data_rng_;
  int start_epoch_ = 0;
  double best_val_f1_ = -1.0;
};

// Batch-size-1 evaluation via summed confusions; optionally dumps predicted
// masks as <dir>/<id>.png.
MetricsReport evaluate(const ChangeModel& model, const DatasetSplit& split, double threshold,
                       const std::optional<std::string>& dump_dir = std::nullopt);

struct BenchRow {
  BevMode mode;
  int n = 0;
  double median_seconds = 0.0;
  std::uint64_t score_evals = 0;
};

// Times the per-mode attention path on random token grids; >= 5-run medians.
std::vector<BenchRow> bench_attention(const std::vector<int>& sizes,
                                      const std::vector<BevMode>& modes, int dim = 16,
                                      int attn_dim = 16, int runs = 5);

}  // namespace segchange
