#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "retro/encoder.hpp"
#include "retro/knowledge_store.hpp"
#include "retro/memorization.hpp"
#include "retro/pipeline.hpp"
#include "retro/reports.hpp"
#include "retro/run_config.hpp"

namespace retro {

// Everything a run needs besides the seed: config, prompting and loaded data.
// Not movable once pipelines hold a pointer to `prompting`, so it lives on the heap.
struct Experiment {
  RunConfig config;
  Prompting prompting;
  std::vector<Example> pool;       // labelled rows few-shot splits are drawn from
  std::vector<Example> test;
  std::vector<Example> dev;        // explicit dev file, used with shots = all
  std::vector<Example> unlabeled;  // zero-shot store corpus

  Experiment() = default;
  Experiment(const Experiment&) = delete;
  Experiment& operator=(const Experiment&) = delete;
};

// Reads every file named in the config and builds the vocabulary from the
// pool, dev and unlabeled rows.
std::unique_ptr<Experiment> load_experiment(const RunConfig& config);
std::unique_ptr<Experiment> make_experiment(const RunConfig& config, std::vector<Example> pool,
                                            std::vector<Example> test, std::vector<Example> unlabeled = {},
                                            std::vector<Example> dev = {});

struct SplitData {
  std::vector<Example> train;
  std::vector<Example> dev;
};

SplitData split_for_seed(const Experiment& exp, std::uint64_t seed);

// Seeded reshuffle of [0, n) at every epoch.
class BatchOrder {
 public:
  BatchOrder(std::size_t n, std::uint64_t seed);
  std::vector<std::size_t> next_epoch();

 private:
  std::size_t n_;
  std::mt19937_64 rng_;
};

// v <- momentum v + g; theta <- theta - lr v, after optional global-norm clipping.
void sgd_momentum_step(std::vector<double>& theta, std::vector<double>& velocity, std::span<const double> grad,
                       const OptimizerConfig& optim);

// A store snapshot plus the BM25 index over the same corpus.
struct StoreBundle {
  KnowledgeStore store;
  std::shared_ptr<const Bm25Index> bm25;

  StoreContext context() const { return {&store, bm25.get()}; }
};

StoreBundle make_store(std::span<const Example> corpus, const EncoderParams& params, const Experiment& exp, int epoch);

struct EvalResult {
  ClassificationMetrics metrics;
  std::vector<std::uint32_t> predictions;
};

// No exclusion: evaluation instances are never in the store.
EvalResult evaluate(const RetroPipeline& pipeline, const EncoderParams& params, const StoreContext& ctx,
                    std::span<const Example> eval_set, std::optional<std::uint32_t> negative_label = {});

struct TrainHooks {
  std::function<void(std::size_t step, const Example&, const InstanceResult&)> on_instance;
  std::function<void(int epoch, const KnowledgeStore&)> on_refresh;
};

struct TrainResult {
  EncoderParams params;  // best-dev checkpoint
  StoreBundle store;     // store snapshot taken with the checkpoint
  std::vector<double> step_losses;
  std::size_t best_step = 0;
  double best_dev = -1.0;
  int epochs = 0;
  std::size_t loo_violations = 0;  // retrievals that returned the instance itself
};

class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(std::size_t step, const std::string& what);
  std::size_t step;
};

RetroPipeline make_pipeline(const Experiment& exp);
TrainResult train(const Experiment& exp, const SplitData& split, std::uint64_t seed, const TrainHooks& hooks = {});

struct ZeroShotResult {
  EvalResult eval;
  StoreBundle store;
  std::uint64_t checksum_before = 0;
  std::uint64_t checksum_after = 0;
};

// Frozen initial parameters: pseudo-label the unlabeled corpus, store it, evaluate.
ZeroShotResult zero_shot(const Experiment& exp, std::uint64_t seed, std::optional<double> lambda = {});

struct SeedOutcome {
  std::uint64_t seed = 0;
  EvalResult test;
};

SeedOutcome run_seed(const Experiment& exp, std::uint64_t seed);
MetricsReport run_all(const Experiment& exp, std::vector<SeedOutcome>* outcomes = nullptr);

struct SweepPoint {
  double beta = 0.0;
  double lambda = 0.0;
  std::size_t k = 0;
  std::size_t m = 0;
};

struct SweepRow {
  SweepPoint point;
  MetricsReport report;
};

std::vector<SweepPoint> make_grid(std::span<const double> betas, std::span<const double> lambdas,
                                  std::span<const std::size_t> ks, std::span<const std::size_t> ms);
// Runs every point with the experiment's seeds. In zero-shot mode lambda sets
// the zero-shot interpolation weight.
std::vector<SweepRow> sweep(Experiment& exp, std::span<const SweepPoint> grid);
// beta lambda k m accuracy_mean accuracy_std micro_f1_mean micro_f1_std
void write_sweep_tsv(std::span<const SweepRow> rows, std::ostream& out);
// Name of the single parameter that varies across the grid, or "index".
std::string swept_parameter(std::span<const SweepRow> rows);
std::vector<PlotPoint> plot_points(std::span<const SweepRow> rows, bool use_micro_f1);

struct BenchRow {
  std::string variant;
  std::size_t instances = 0;
  std::size_t store_size = 0;
  double total_seconds = 0.0;
  double ms_per_instance = 0.0;
};

// Per-instance inference time with and without retrieval, min over `repeats`.
std::vector<BenchRow> bench(const Experiment& exp, std::uint64_t seed, std::size_t repeats = 3);
// variant instances store_size total_seconds ms_per_instance
void write_bench_tsv(std::span<const BenchRow> rows, std::ostream& out);
// Seconds for `queries` exact top-k searches over a random store of the given size.
double time_search(std::size_t store_size, std::size_t dim, std::size_t queries, std::size_t k, std::uint64_t seed);

struct MemorizeOutcome {
  MemorizationReport report;
  TrainResult trained;
  std::size_t invalid_scores = 0;
};

// Trains on the seed's split, then scores every training instance.
// `features` is indexed by the pool row (source_id); empty means all zeros.
MemorizeOutcome memorize(const Experiment& exp, std::uint64_t seed, std::span<const double> features);

std::vector<double> load_features(const std::filesystem::path& path);

}  // namespace retro
