#include "retro/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <set>

#include "retro/dataset.hpp"

namespace retro {

namespace {

// Rows with or without a trailing label column; labels are dropped.
std::vector<Example> load_unlabeled(const std::filesystem::path& path, TaskKind kind) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read unlabeled corpus " + path.string());
  const std::size_t text_cols = kind == TaskKind::SentencePair ? 2 : 1;
  std::vector<Example> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != text_cols && fields.size() != text_cols + 1) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(text_cols) +
                      " text columns, found " + std::to_string(fields.size()) + " columns");
    }
    fields.resize(text_cols);
    Example ex;
    ex.texts = std::move(fields);
    ex.source_id = rows.size();
    rows.push_back(std::move(ex));
  }
  return rows;
}

double selection_metric(const ClassificationMetrics& m, const RunConfig& cfg) {
  return cfg.negative_label ? m.micro_f1 : m.accuracy;
}

}  // namespace

std::unique_ptr<Experiment> make_experiment(const RunConfig& config, std::vector<Example> pool,
                                            std::vector<Example> test, std::vector<Example> unlabeled,
                                            std::vector<Example> dev) {
  config.validate();
  auto exp = std::make_unique<Experiment>();
  exp->config = config;
  exp->pool = std::move(pool);
  exp->test = std::move(test);
  exp->unlabeled = std::move(unlabeled);
  exp->dev = std::move(dev);
  const std::span<const Example> corpora[] = {exp->pool, exp->dev, exp->unlabeled};
  exp->prompting.vocab = build_vocab(corpora, config.dataset);
  exp->prompting.tmpl = Template::parse(config.dataset.template_text);
  exp->prompting.verbalizer = Verbalizer::from_words(config.dataset.label_words, exp->prompting.vocab);
  exp->prompting.max_len = config.model.max_len;
  return exp;
}

std::unique_ptr<Experiment> load_experiment(const RunConfig& config) {
  config.validate();
  const auto& spec = config.dataset;
  std::vector<Example> pool, test, unlabeled, dev;
  if (config.mode != RunMode::ZeroShot || !spec.path.empty()) pool = load_dataset(spec);
  if (!config.test_path.empty()) test = load_dataset(config.test_path, spec.task_kind, spec.num_classes);
  if (!config.dev_path.empty()) dev = load_dataset(config.dev_path, spec.task_kind, spec.num_classes);
  if (!config.unlabeled_path.empty()) unlabeled = load_unlabeled(config.unlabeled_path, spec.task_kind);
  return make_experiment(config, std::move(pool), std::move(test), std::move(unlabeled), std::move(dev));
}

SplitData split_for_seed(const Experiment& exp, std::uint64_t seed) {
  const auto split = sample_few_shot(exp.pool, exp.config.dataset.num_classes, exp.config.shots, seed);
  SplitData out;
  out.train = select(exp.pool, split.train);
  out.dev = split.shots ? select(exp.pool, split.dev) : exp.dev;
  return out;
}

BatchOrder::BatchOrder(std::size_t n, std::uint64_t seed) : n_(n), rng_(seed) {}

std::vector<std::size_t> BatchOrder::next_epoch() {
  std::vector<std::size_t> order(n_);
  for (std::size_t i = 0; i < n_; ++i) order[i] = i;
  for (std::size_t i = n_; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng_() % i)]);
  return order;
}

void sgd_momentum_step(std::vector<double>& theta, std::vector<double>& velocity, std::span<const double> grad,
                       const OptimizerConfig& optim) {
  check_same_dim(theta.size(), grad.size(), "sgd gradient");
  check_same_dim(theta.size(), velocity.size(), "sgd velocity");
  double clip = 1.0;
  if (optim.grad_clip > 0.0) {
    const double n = norm2(grad);
    if (n > optim.grad_clip) clip = optim.grad_clip / n;
  }
  for (std::size_t i = 0; i < theta.size(); ++i) {
    velocity[i] = optim.momentum * velocity[i] + clip * grad[i];
    theta[i] -= optim.learning_rate * velocity[i];
  }
}

StoreBundle make_store(std::span<const Example> corpus, const EncoderParams& params, const Experiment& exp, int epoch) {
  StoreBundle b;
  b.store = build_store(corpus, params, exp.prompting,
                        StoreBuildOptions{exp.config.key_mode, exp.config.normalize_keys, epoch});
  if (exp.config.acquisition == Acquisition::Bm25) {
    std::vector<std::string> docs;
    docs.reserve(corpus.size());
    for (const auto& ex : corpus) docs.push_back(example_text(ex));
    b.bm25 = std::make_shared<const Bm25Index>(docs);
  }
  return b;
}

EvalResult evaluate(const RetroPipeline& pipeline, const EncoderParams& params, const StoreContext& ctx,
                    std::span<const Example> eval_set, std::optional<std::uint32_t> negative_label) {
  if (eval_set.empty()) throw std::invalid_argument("evaluate: empty evaluation set");
  if (ctx.store && !ctx.store->empty() && ctx.store->dim() != params.config().dim) {
    throw DimensionError("evaluate: store dim " + std::to_string(ctx.store->dim()) + " vs encoder dim " +
                         std::to_string(params.config().dim));
  }
  EvalResult out;
  std::vector<std::uint32_t> gold;
  for (const auto& ex : eval_set) {
    const auto res = pipeline.predict(params, ctx, ex);
    out.predictions.push_back(static_cast<std::uint32_t>(argmax(res.p_final)));
    gold.push_back(ex.label);
  }
  out.metrics = compute_metrics(out.predictions, gold, pipeline.prompting().num_classes(), negative_label);
  return out;
}

TrainingDiverged::TrainingDiverged(std::size_t s, const std::string& what)
    : NumericError("training diverged at step " + std::to_string(s) + ": " + what), step(s) {}

RetroPipeline make_pipeline(const Experiment& exp) {
  const auto& cfg = exp.config;
  return RetroPipeline(exp.prompting, cfg.mode == RunMode::ZeroShot ? cfg.zero_shot_retro() : cfg.retro,
                       cfg.pipeline_flags());
}

TrainResult train(const Experiment& exp, const SplitData& split, std::uint64_t seed, const TrainHooks& hooks) {
  const auto& cfg = exp.config;
  if (cfg.mode == RunMode::ZeroShot) throw std::invalid_argument("train: zero-shot mode does not train");
  if (split.train.empty()) throw std::invalid_argument("train: empty training split");
  const auto& optim = cfg.optim;
  const auto& train_set = split.train;
  const std::size_t n = train_set.size();

  EncoderParams params = EncoderParams::initialized(cfg.encoder_config(exp.prompting.vocab.size()), seed);
  const RetroPipeline pipeline = make_pipeline(exp);
  StoreBundle bundle = make_store(train_set, params, exp, 0);

  TrainResult result;
  BatchOrder order(n, seed);
  std::vector<double> velocity(params.size(), 0.0);
  ParamGradient grad(params.size(), 0.0);
  std::size_t step = 0;
  int epoch = 0;

  auto checkpoint = [&] {
    result.params = params;
    result.store = bundle;
    result.best_step = step;
  };

  while (step < optim.max_steps) {
    const auto perm = order.next_epoch();
    for (std::size_t begin = 0; begin < n && step < optim.max_steps; begin += optim.batch_size) {
      const std::size_t end = std::min(n, begin + optim.batch_size);
      const double scale = 1.0 / static_cast<double>(end - begin);
      std::fill(grad.begin(), grad.end(), 0.0);
      double loss = 0.0;
      const auto ctx = bundle.context();
      for (std::size_t i = begin; i < end; ++i) {
        const Example& ex = train_set[perm[i]];
        InstanceResult res;
        try {
          res = pipeline.train_loss(params, ctx, ex, grad, scale);
        } catch (const NumericError& e) {
          throw TrainingDiverged(step + 1, e.what());
        }
        if (std::find(res.retrieved_ids.begin(), res.retrieved_ids.end(), ex.source_id) != res.retrieved_ids.end()) {
          ++result.loo_violations;
        }
        if (hooks.on_instance) hooks.on_instance(step, ex, res);
        loss += res.loss;
      }
      loss /= static_cast<double>(end - begin);
      if (!std::isfinite(loss) || !all_finite(grad)) throw TrainingDiverged(step + 1, "non-finite loss or gradient");
      sgd_momentum_step(params.values(), velocity, grad, optim);
      ++step;
      result.step_losses.push_back(loss);

      if (end == n) {
        ++epoch;
        if (!cfg.ablate.no_refresh && epoch % static_cast<int>(cfg.retro.refresh_period) == 0) {
          bundle.store = refresh_store(bundle.store, params, exp.prompting, train_set, epoch);
          if (hooks.on_refresh) hooks.on_refresh(epoch, bundle.store);
        }
      }
      if (!split.dev.empty() && (step % optim.eval_period == 0 || step == optim.max_steps)) {
        const auto dev = evaluate(pipeline, params, bundle.context(), split.dev, cfg.negative_label);
        const double metric = selection_metric(dev.metrics, cfg);
        if (metric > result.best_dev) {
          result.best_dev = metric;
          checkpoint();
        }
      }
    }
  }
  result.epochs = epoch;
  if (split.dev.empty() || result.best_dev < 0.0) checkpoint();
  return result;
}

ZeroShotResult zero_shot(const Experiment& exp, std::uint64_t seed, std::optional<double> lambda) {
  const auto& cfg = exp.config;
  if (cfg.mode != RunMode::ZeroShot) throw std::invalid_argument("zero_shot: run mode is " + to_string(cfg.mode));
  if (exp.unlabeled.empty()) throw std::invalid_argument("zero_shot: empty unlabeled corpus");
  const EncoderParams params = EncoderParams::initialized(cfg.encoder_config(exp.prompting.vocab.size()), seed);

  ZeroShotResult out;
  out.checksum_before = params.checksum();
  std::vector<Example> pseudo = exp.unlabeled;
  for (auto& ex : pseudo) {
    const auto enc = forward(embed(exp.prompting.wrap(ex), params), params);
    ex.label = static_cast<std::uint32_t>(argmax(class_probs(enc.vocab_logits, exp.prompting.verbalizer)));
  }
  out.store = make_store(pseudo, params, exp, 0);
  RetroConfig rc = cfg.zero_shot_retro();
  if (lambda) rc.lambda = *lambda;
  const RetroPipeline pipeline(exp.prompting, rc, cfg.pipeline_flags());
  out.eval = evaluate(pipeline, params, out.store.context(), exp.test, cfg.negative_label);
  out.checksum_after = params.checksum();
  if (out.checksum_after != out.checksum_before) throw std::logic_error("zero_shot: parameters changed");
  return out;
}

SeedOutcome run_seed(const Experiment& exp, std::uint64_t seed) {
  SeedOutcome out;
  out.seed = seed;
  if (exp.test.empty()) throw std::invalid_argument("run: no test set");
  if (exp.config.mode == RunMode::ZeroShot) {
    out.test = zero_shot(exp, seed).eval;
    return out;
  }
  const auto split = split_for_seed(exp, seed);
  const auto trained = train(exp, split, seed);
  out.test = evaluate(make_pipeline(exp), trained.params, trained.store.context(), exp.test, exp.config.negative_label);
  return out;
}

MetricsReport run_all(const Experiment& exp, std::vector<SeedOutcome>* outcomes) {
  std::vector<ClassificationMetrics> per_seed;
  for (auto seed : exp.config.seeds) {
    auto o = run_seed(exp, seed);
    per_seed.push_back(o.test.metrics);
    if (outcomes) outcomes->push_back(std::move(o));
  }
  return MetricsReport::aggregate(exp.config.seeds, per_seed);
}

std::vector<SweepPoint> make_grid(std::span<const double> betas, std::span<const double> lambdas,
                                  std::span<const std::size_t> ks, std::span<const std::size_t> ms) {
  std::vector<SweepPoint> grid;
  for (double b : betas)
    for (double l : lambdas)
      for (std::size_t k : ks)
        for (std::size_t m : ms) grid.push_back({b, l, k, m});
  return grid;
}

std::vector<SweepRow> sweep(Experiment& exp, std::span<const SweepPoint> grid) {
  if (grid.empty()) throw std::invalid_argument("sweep: empty grid");
  const RunConfig saved = exp.config;
  std::vector<SweepRow> rows;
  try {
    for (const auto& p : grid) {
      exp.config = saved;
      exp.config.retro.beta = p.beta;
      exp.config.retro.k = p.k;
      exp.config.retro.m = p.m;
      if (saved.mode == RunMode::ZeroShot) exp.config.zero_shot_lambda = p.lambda;
      else exp.config.retro.lambda = p.lambda;
      exp.config.validate();
      rows.push_back({p, run_all(exp)});
    }
  } catch (...) {
    exp.config = saved;
    throw;
  }
  exp.config = saved;
  return rows;
}

void write_sweep_tsv(std::span<const SweepRow> rows, std::ostream& out) {
  out << "beta\tlambda\tk\tm\taccuracy_mean\taccuracy_std\tmicro_f1_mean\tmicro_f1_std\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string("NA"); };
  for (const auto& r : rows) {
    out << format_number(r.point.beta) << '\t' << format_number(r.point.lambda) << '\t' << r.point.k << '\t'
        << r.point.m << '\t' << format_number(r.report.accuracy_summary.mean) << '\t'
        << opt(r.report.accuracy_summary.stddev) << '\t' << format_number(r.report.micro_f1_summary.mean) << '\t'
        << opt(r.report.micro_f1_summary.stddev) << '\n';
  }
}

std::string swept_parameter(std::span<const SweepRow> rows) {
  std::set<double> b, l, k, m;
  for (const auto& r : rows) {
    b.insert(r.point.beta);
    l.insert(r.point.lambda);
    k.insert(static_cast<double>(r.point.k));
    m.insert(static_cast<double>(r.point.m));
  }
  const int varying = (b.size() > 1) + (l.size() > 1) + (k.size() > 1) + (m.size() > 1);
  if (varying != 1) return "index";
  if (b.size() > 1) return "beta";
  if (l.size() > 1) return "lambda";
  if (k.size() > 1) return "k";
  return "m";
}

std::vector<PlotPoint> plot_points(std::span<const SweepRow> rows, bool use_micro_f1) {
  const auto param = swept_parameter(rows);
  std::vector<PlotPoint> points;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& p = rows[i].point;
    double x = static_cast<double>(i);
    if (param == "beta") x = p.beta;
    else if (param == "lambda") x = p.lambda;
    else if (param == "k") x = static_cast<double>(p.k);
    else if (param == "m") x = static_cast<double>(p.m);
    points.push_back({x, use_micro_f1 ? rows[i].report.micro_f1_summary : rows[i].report.accuracy_summary});
  }
  return points;
}

std::vector<BenchRow> bench(const Experiment& exp, std::uint64_t seed, std::size_t repeats) {
  if (exp.test.empty()) throw std::invalid_argument("bench: no test set");
  const auto& cfg = exp.config;
  const EncoderParams params = EncoderParams::initialized(cfg.encoder_config(exp.prompting.vocab.size()), seed);
  std::vector<Example> corpus;
  if (cfg.mode == RunMode::ZeroShot) corpus = exp.unlabeled;
  else corpus = split_for_seed(exp, seed).train;
  const auto bundle = make_store(corpus, params, exp, 0);

  const RetroPipeline on = make_pipeline(exp);
  PipelineFlags off_flags = cfg.pipeline_flags();
  off_flags.use_demo = false;
  off_flags.use_knn_test = false;
  const RetroPipeline off(exp.prompting, on.config(), off_flags);

  auto time_variant = [&](const RetroPipeline& p, const StoreContext& ctx) {
    double best = 0.0;
    for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      for (const auto& ex : exp.test) (void)p.predict(params, ctx, ex);
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (r == 0 || s < best) best = s;
    }
    return best;
  };
  const double t_off = time_variant(off, StoreContext{});
  const double t_on = time_variant(on, bundle.context());
  const auto count = exp.test.size();
  auto row = [&](std::string name, std::size_t store_size, double s) {
    return BenchRow{std::move(name), count, store_size, s, 1000.0 * s / static_cast<double>(count)};
  };
  return {row("retrieval-off", 0, t_off), row("retrieval-on", bundle.store.size(), t_on)};
}

void write_bench_tsv(std::span<const BenchRow> rows, std::ostream& out) {
  out << "variant\tinstances\tstore_size\ttotal_seconds\tms_per_instance\n";
  for (const auto& r : rows) {
    out << r.variant << '\t' << r.instances << '\t' << r.store_size << '\t' << format_number(r.total_seconds) << '\t'
        << format_number(r.ms_per_instance) << '\n';
  }
}

double time_search(std::size_t store_size, std::size_t dim, std::size_t queries, std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  KnowledgeStore store(dim, 2, KeyMode::PromptMask);
  Vector key(dim);
  for (std::size_t i = 0; i < store_size; ++i) {
    for (auto& v : key) v = normal(rng);
    store.add(StoreEntry{i, static_cast<std::uint32_t>(i % 2), 0}, key);
  }
  std::vector<Vector> qs(queries, Vector(dim));
  for (auto& q : qs)
    for (auto& v : q) v = normal(rng);
  std::size_t sink = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& q : qs) {
    if (!store.empty()) sink += search(store, q, k).size();
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return sink == static_cast<std::size_t>(-1) ? 0.0 : s;
}

MemorizeOutcome memorize(const Experiment& exp, std::uint64_t seed, std::span<const double> features) {
  const auto& cfg = exp.config;
  const auto split = split_for_seed(exp, seed);
  MemorizeOutcome out;
  out.trained = train(exp, split, seed);
  const RetroPipeline pipeline = make_pipeline(exp);
  const auto ctx = out.trained.store.context();
  const PipelineInfluenceProblem problem(pipeline, out.trained.params, ctx, split.train,
                                         scope_indices(out.trained.params, exp.prompting.verbalizer, cfg.memorize.scope));
  const MemorizationScorer scorer(problem, problem.theta(), cfg.memorize.influence);

  std::vector<MemorizationRecord> records;
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    const auto& ex = split.train[i];
    const auto s = scorer.score(i);
    MemorizationRecord r;
    r.source_id = ex.source_id;
    r.score = s.score;
    r.valid = s.valid;
    if (!s.valid) ++out.invalid_scores;
    r.factor = pipeline.train_loss(out.trained.params, ctx, ex).factor;
    r.label = ex.label;
    if (!features.empty()) {
      if (ex.source_id >= features.size()) {
        throw DataError("memorize: no feature value for row " + std::to_string(ex.source_id));
      }
      r.feature = features[ex.source_id];
    }
    records.push_back(r);
  }
  out.report = group_report(std::move(records), cfg.memorize.fraction);
  return out;
}

std::vector<double> load_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read features " + path.string());
  std::vector<double> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    try {
      out.push_back(std::stod(line));
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": not a number");
    }
  }
  return out;
}

}  // namespace retro
