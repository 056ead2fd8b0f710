// retroprompt: train, evaluate and analyse retrieval-augmented prompt learners.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "retro/dataset.hpp"
#include "retro/harness.hpp"
#include "retro/synthetic.hpp"

namespace fs = std::filesystem;
using namespace retro;

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string shots;
  std::optional<double> lambda, beta;
  std::optional<std::size_t> k, m;
  std::string ablate;
  std::vector<std::string> sets;
  std::string out = ".";
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("--config", o.config_path, "Run config file (key = value)");
  app->add_option("--seed", o.seed, "Run a single seed instead of the configured list");
  app->add_option("--shots", o.shots, "Shots per class, or 'all'");
  app->add_option("--lambda", o.lambda, "kNN interpolation weight");
  app->add_option("--beta", o.beta, "Modulating factor weight");
  app->add_option("--k", o.k, "Neighbours for the kNN distribution");
  app->add_option("--m", o.m, "Neighbours per class for demonstrations");
  app->add_option("--ablate", o.ablate, "Comma list: no-knn-test,no-knn-train,no-demo,no-refresh");
  app->add_option("--set", o.sets, "Override any config key: key=value");
  app->add_option("--out", o.out, "Output directory");
}

RunConfig resolve(const CommonOptions& o) {
  RunConfig cfg;
  if (!o.config_path.empty()) cfg = load_config(o.config_path);
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
    apply_key_value(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (o.seed) cfg.seeds = {*o.seed};
  if (!o.shots.empty()) apply_key_value(cfg, "split.shots", o.shots);
  if (o.lambda) cfg.retro.lambda = *o.lambda;
  if (o.beta) cfg.retro.beta = *o.beta;
  if (o.k) cfg.retro.k = *o.k;
  if (o.m) cfg.retro.m = *o.m;
  if (!o.ablate.empty()) cfg.ablate = parse_ablations(o.ablate);
  cfg.validate();
  return cfg;
}

fs::path prepare_out(const CommonOptions& o, const RunConfig& cfg) {
  const fs::path dir = o.out;
  fs::create_directories(dir);
  std::ofstream(dir / "config.txt") << format_config(cfg);
  return dir;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  return f;
}

void write_metrics(const fs::path& dir, const MetricsReport& report) {
  auto m = open_out(dir / "metrics.tsv");
  write_metrics_tsv(report, m);
  auto p = open_out(dir / "per_seed.tsv");
  write_per_seed_tsv(report, p);
  write_metrics_tsv(report, std::cout);
}

std::string seed_tag(std::uint64_t seed) { return "seed" + std::to_string(seed); }

int cmd_train(const CommonOptions& o) {
  const auto cfg = resolve(o);
  if (cfg.mode == RunMode::ZeroShot) throw std::invalid_argument("train: config is in zero-shot mode; use zero-shot");
  const auto dir = prepare_out(o, cfg);
  const auto exp = load_experiment(cfg);
  exp->prompting.vocab.save(dir / "vocab.txt");
  std::vector<ClassificationMetrics> per_seed;
  for (auto seed : cfg.seeds) {
    const auto split = split_for_seed(*exp, seed);
    const auto trained = train(*exp, split, seed);
    const auto eval = evaluate(make_pipeline(*exp), trained.params, trained.store.context(), exp->test, cfg.negative_label);
    trained.params.save(dir / ("params_" + seed_tag(seed) + ".rpep"));
    save_store(trained.store.store, dir / ("store_" + seed_tag(seed) + ".rpks"));
    std::cerr << "seed " << seed << ": best dev " << format_number(trained.best_dev) << " at step "
              << trained.best_step << ", test accuracy " << format_number(eval.metrics.accuracy) << "\n";
    per_seed.push_back(eval.metrics);
  }
  write_metrics(dir, MetricsReport::aggregate(cfg.seeds, per_seed));
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& params_path, const std::string& store_path) {
  const auto cfg = resolve(o);
  const auto dir = prepare_out(o, cfg);
  const auto exp = load_experiment(cfg);
  const auto params = EncoderParams::load(params_path);
  if (params.config().vocab_size != exp->prompting.vocab.size()) {
    throw std::invalid_argument("eval: parameter vocabulary size " + std::to_string(params.config().vocab_size) +
                                " does not match the config's data (" + std::to_string(exp->prompting.vocab.size()) + ")");
  }
  StoreBundle bundle;
  if (!store_path.empty()) {
    bundle.store = load_store(store_path);
    // The file format has no normalisation flag; it is a property of the run.
    bundle.store.normalized_keys = cfg.normalize_keys;
    if (cfg.acquisition == Acquisition::Bm25) throw std::invalid_argument("eval: BM25 acquisition needs the store corpus; use train");
  }
  const auto eval = evaluate(make_pipeline(*exp), params, bundle.context(), exp->test, cfg.negative_label);
  const std::vector<std::uint64_t> seeds = {cfg.seeds.front()};
  write_metrics(dir, MetricsReport::aggregate(seeds, std::vector<ClassificationMetrics>{eval.metrics}));
  auto preds = open_out(dir / "predictions.tsv");
  preds << "index\tgold\tpredicted\n";
  for (std::size_t i = 0; i < eval.predictions.size(); ++i) {
    preds << i << '\t' << exp->test[i].label << '\t' << eval.predictions[i] << '\n';
  }
  return 0;
}

int cmd_zero_shot(const CommonOptions& o) {
  auto cfg = resolve(o);
  cfg.mode = RunMode::ZeroShot;
  cfg.optim.max_steps = 0;
  cfg.validate();
  const auto dir = prepare_out(o, cfg);
  const auto exp = load_experiment(cfg);
  std::vector<ClassificationMetrics> per_seed;
  for (auto seed : cfg.seeds) {
    const auto r = zero_shot(*exp, seed);
    save_store(r.store.store, dir / ("store_" + seed_tag(seed) + ".rpks"));
    per_seed.push_back(r.eval.metrics);
  }
  write_metrics(dir, MetricsReport::aggregate(cfg.seeds, per_seed));
  return 0;
}

template <typename T>
std::vector<T> parse_list(const std::string& s, T fallback) {
  if (s.empty()) return {fallback};
  std::vector<T> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if constexpr (std::is_same_v<T, double>) out.push_back(std::stod(item));
    else out.push_back(static_cast<T>(std::stoull(item)));
  }
  return out;
}

int cmd_sweep(const CommonOptions& o, const std::map<std::string, std::string>& lists) {
  const auto cfg = resolve(o);
  const auto dir = prepare_out(o, cfg);
  const auto exp = load_experiment(cfg);
  const double lambda0 = cfg.mode == RunMode::ZeroShot ? cfg.zero_shot_lambda : cfg.retro.lambda;
  const auto betas = parse_list<double>(lists.at("beta"), cfg.retro.beta);
  const auto lambdas = parse_list<double>(lists.at("lambda"), lambda0);
  const auto ks = parse_list<std::size_t>(lists.at("k"), cfg.retro.k);
  const auto ms = parse_list<std::size_t>(lists.at("m"), cfg.retro.m);
  const auto grid = make_grid(betas, lambdas, ks, ms);
  const auto rows = sweep(*exp, grid);
  auto t = open_out(dir / "sweep.tsv");
  write_sweep_tsv(rows, t);
  auto p = open_out(dir / "plot_data.tsv");
  write_plot_tsv(plot_points(rows, cfg.negative_label.has_value()), p);
  write_sweep_tsv(rows, std::cout);
  return 0;
}

int cmd_memorize(const CommonOptions& o, const std::string& features_path) {
  auto cfg = resolve(o);
  if (!features_path.empty()) cfg.memorize.features_path = features_path;
  const auto dir = prepare_out(o, cfg);
  const auto exp = load_experiment(cfg);
  std::vector<double> features;
  if (!cfg.memorize.features_path.empty()) features = load_features(cfg.memorize.features_path);
  auto summary = open_out(dir / "memorization_summary.tsv");
  summary << "seed\ttop_feature_mean\tall_feature_mean\tbottom_feature_mean\tinvalid_scores\n";
  for (auto seed : cfg.seeds) {
    const auto r = memorize(*exp, seed, features);
    auto f = open_out(dir / ("memorization_" + seed_tag(seed) + ".tsv"));
    write_report(r.report, f);
    summary << seed << '\t' << format_number(r.report.top.mean_feature) << '\t'
            << format_number(r.report.all.mean_feature) << '\t' << format_number(r.report.bottom.mean_feature) << '\t'
            << r.invalid_scores << '\n';
    std::cerr << "seed " << seed << ": top " << format_number(r.report.top.mean_feature) << " all "
              << format_number(r.report.all.mean_feature) << "\n";
  }
  return 0;
}

int cmd_store_build(const CommonOptions& o, const std::string& params_path) {
  const auto cfg = resolve(o);
  const auto dir = prepare_out(o, cfg);
  const auto exp = load_experiment(cfg);
  const auto seed = cfg.seeds.front();
  const auto params = params_path.empty()
                          ? EncoderParams::initialized(cfg.encoder_config(exp->prompting.vocab.size()), seed)
                          : EncoderParams::load(params_path);
  const auto corpus = cfg.mode == RunMode::ZeroShot ? exp->unlabeled : split_for_seed(*exp, seed).train;
  const auto bundle = make_store(corpus, params, *exp, 0);
  const auto path = dir / ("store_" + seed_tag(seed) + ".rpks");
  save_store(bundle.store, path);
  std::cout << path.string() << ": " << bundle.store.size() << " entries\n";
  return 0;
}

int cmd_store_inspect(const std::string& path, std::size_t show) {
  const auto store = load_store(path);
  std::cout << "entries\t" << store.size() << "\ndim\t" << store.dim() << "\nclasses\t" << store.num_classes()
            << "\nkey_mode\t" << to_string(store.key_mode()) << "\nepoch\t" << store.built_at_epoch << '\n';
  for (std::size_t c = 0; c < store.num_classes(); ++c) {
    std::cout << "class " << c << "\t" << store.partition(c).size() << '\n';
  }
  std::cout << "source_id\tlabel\tvalue_word\tkey_norm\n";
  for (std::size_t i = 0; i < std::min(show, store.size()); ++i) {
    const auto& e = store.entry(i);
    std::cout << e.source_id << '\t' << e.label << '\t' << e.value_word << '\t' << format_number(norm2(store.key(i)))
              << '\n';
  }
  return 0;
}

int cmd_bench(const CommonOptions& o) {
  const auto cfg = resolve(o);
  const auto dir = prepare_out(o, cfg);
  const auto exp = load_experiment(cfg);
  const auto rows = bench(*exp, cfg.seeds.front());
  auto f = open_out(dir / "bench.tsv");
  write_bench_tsv(rows, f);
  write_bench_tsv(rows, std::cout);
  return 0;
}

int cmd_generate(const std::string& out, std::size_t pool_per_class, std::size_t test_rows, std::size_t unlabeled_rows,
                 std::uint64_t seed) {
  const fs::path dir = out;
  fs::create_directories(dir);
  const SyntheticConfig sc;
  const auto pool = generate_synthetic(sc, pool_per_class, seed);
  const auto test = generate_synthetic_mixed(sc, test_rows, seed + 1);
  const auto unlabeled = generate_synthetic_mixed(sc, unlabeled_rows, seed + 2);
  write_dataset(dir / "train.tsv", pool.rows);
  write_dataset(dir / "test.tsv", test.rows);
  write_dataset(dir / "unlabeled.tsv", unlabeled.rows);
  auto f = open_out(dir / "atypical.txt");
  for (double v : pool.atypical) f << v << '\n';
  RunConfig cfg;
  cfg.dataset = synthetic_spec();
  cfg.dataset.path = fs::absolute(dir / "train.tsv");
  cfg.test_path = fs::absolute(dir / "test.tsv");
  cfg.unlabeled_path = fs::absolute(dir / "unlabeled.tsv");
  cfg.memorize.features_path = fs::absolute(dir / "atypical.txt");
  std::ofstream(dir / "run.conf") << format_config(cfg);
  std::cout << "wrote " << (dir / "run.conf").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval-augmented prompt learning on a from-scratch encoder"};
  app.require_subcommand(1);

  CommonOptions common;
  auto* train_cmd = app.add_subcommand("train", "Few-shot or fully supervised training over the configured seeds");
  add_common(train_cmd, common);

  std::string params_path, store_path;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate saved parameters and store on the test set");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--params", params_path, "Parameter file from train")->required();
  eval_cmd->add_option("--store", store_path, "Store file; omit for plain model inference");

  auto* zs_cmd = app.add_subcommand("zero-shot", "Pseudo-label the unlabeled corpus and evaluate without training");
  add_common(zs_cmd, common);

  std::map<std::string, std::string> lists = {{"beta", ""}, {"lambda", ""}, {"k", ""}, {"m", ""}};
  auto* sweep_cmd = app.add_subcommand("sweep", "Grid over beta, lambda, k and m");
  add_common(sweep_cmd, common);
  sweep_cmd->add_option("--betas", lists["beta"], "Comma list");
  sweep_cmd->add_option("--lambdas", lists["lambda"], "Comma list");
  sweep_cmd->add_option("--ks", lists["k"], "Comma list");
  sweep_cmd->add_option("--ms", lists["m"], "Comma list");

  std::string features_path;
  auto* mem_cmd = app.add_subcommand("memorize", "Self-influence scores of every training instance");
  add_common(mem_cmd, common);
  mem_cmd->add_option("--features", features_path, "One feature value per training-pool row");

  auto* store_cmd = app.add_subcommand("store", "Knowledge-store utilities");
  store_cmd->require_subcommand(1);
  auto* build_cmd = store_cmd->add_subcommand("build", "Encode the training split into a store file");
  add_common(build_cmd, common);
  build_cmd->add_option("--params", params_path, "Parameter file; default is the seeded initial encoder");
  std::string inspect_path;
  std::size_t show = 10;
  auto* inspect_cmd = store_cmd->add_subcommand("inspect", "Print a store file's header and first entries");
  inspect_cmd->add_option("path", inspect_path)->required();
  inspect_cmd->add_option("--show", show, "Entries to list");

  auto* bench_cmd = app.add_subcommand("bench", "Inference time with and without retrieval");
  add_common(bench_cmd, common);

  std::string gen_out = "synthetic";
  std::size_t pool_per_class = 200, test_rows = 500, unlabeled_rows = 400;
  std::uint64_t gen_seed = 7;
  auto* gen_cmd = app.add_subcommand("generate", "Write the synthetic task with atypicality flags and a run config");
  gen_cmd->add_option("--out", gen_out);
  gen_cmd->add_option("--pool-per-class", pool_per_class);
  gen_cmd->add_option("--test", test_rows);
  gen_cmd->add_option("--unlabeled", unlabeled_rows);
  gen_cmd->add_option("--seed", gen_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(common);
    if (*eval_cmd) return cmd_eval(common, params_path, store_path);
    if (*zs_cmd) return cmd_zero_shot(common);
    if (*sweep_cmd) return cmd_sweep(common, lists);
    if (*mem_cmd) return cmd_memorize(common, features_path);
    if (*build_cmd) return cmd_store_build(common, params_path);
    if (*inspect_cmd) return cmd_store_inspect(inspect_path, show);
    if (*bench_cmd) return cmd_bench(common);
    if (*gen_cmd) return cmd_generate(gen_out, pool_per_class, test_rows, unlabeled_rows, gen_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
