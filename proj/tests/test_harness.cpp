#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "retro/harness.hpp"
#include "vanilla.hpp"

using namespace retro;

namespace {

RunConfig small_config() {
  RunConfig c;
  c.dataset = synthetic_spec();
  c.shots = 8;
  c.seeds = {13, 21};
  c.model.dim = 16;
  c.model.heads = 2;
  c.model.layers = 1;
  c.model.mlp_dim = 32;
  c.model.max_len = 24;
  c.optim.max_steps = 12;
  c.optim.eval_period = 4;
  c.retro.k = 8;
  c.retro.m = 1;
  return c;
}

std::unique_ptr<Experiment> small_experiment(const RunConfig& cfg) {
  const SyntheticConfig sc;
  return make_experiment(cfg, generate_synthetic(sc, 40, 1).rows, generate_synthetic_mixed(sc, 60, 2).rows,
                         generate_synthetic_mixed(sc, 40, 3).rows);
}

RunConfig zero_shot_config() {
  auto c = small_config();
  c.mode = RunMode::ZeroShot;
  c.optim.max_steps = 0;
  return c;
}

std::vector<std::string> split_tsv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream in(line);
  std::string f;
  while (std::getline(in, f, '\t')) out.push_back(f);
  return out;
}

}  // namespace

TEST_CASE("run config text round trip") {
  auto c = small_config();
  c.negative_label = 0;
  c.ablate.no_demo = true;
  c.acquisition = Acquisition::Bm25;
  c.memorize.scope = ParamScope::LastLayer;
  c.retro.lambda = 0.35;
  const auto text = format_config(c);
  const auto back = parse_config_text(text);
  CHECK(to_key_values(back) == to_key_values(c));
  CHECK(format_config(back) == text);
  CHECK(to_key_values(c).at("retro.lambda") == "0.35");

  CHECK_THROWS_AS(parse_config_text("nonsense.key = 1"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text("retro.k = many"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text("no equals sign"), std::invalid_argument);
  CHECK(parse_config_text("# comment\n\nretro.k = 3\n").retro.k == 3);
}

TEST_CASE("run config mode consistency") {
  auto c = small_config();
  c.mode = RunMode::ZeroShot;
  CHECK_THROWS(c.validate());
  c.optim.max_steps = 0;
  CHECK_NOTHROW(c.validate());
  c = small_config();
  c.mode = RunMode::FullySupervised;
  CHECK_THROWS(c.validate());
  c.shots.reset();
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("each ablation differs from the full run in exactly its flag") {
  const auto full = small_config();
  const auto full_kv = to_key_values(full);
  for (const char* name : {"no-knn-test", "no-knn-train", "no-demo", "no-refresh"}) {
    auto c = full;
    c.ablate = parse_ablations(name);
    const auto kv = to_key_values(c);
    std::vector<std::string> diff;
    for (const auto& [k, v] : kv)
      if (full_kv.at(k) != v) diff.push_back(k);
    CHECK(diff == std::vector<std::string>{"run.ablate"});
    const auto f = c.pipeline_flags();
    const auto base = full.pipeline_flags();
    const int changed = (f.use_demo != base.use_demo) + (f.use_knn_train != base.use_knn_train) +
                        (f.use_knn_test != base.use_knn_test);
    CHECK(changed == (std::string(name) == "no-refresh" ? 0 : 1));
  }
  CHECK_THROWS(parse_ablations("no-everything"));
  CHECK(format_ablations(parse_ablations("no-demo,no-knn-test")) == "no-knn-test,no-demo");
}

TEST_CASE("metrics on a hand-counted fixture") {
  const std::vector<std::uint32_t> gold{0, 0, 1, 1, 2, 2};
  const std::vector<std::uint32_t> pred{0, 1, 1, 1, 0, 2};
  const auto cm = confusion_matrix(pred, gold, 3);
  CHECK(cm[0] == std::vector<std::size_t>{1, 1, 0});
  CHECK(cm[1] == std::vector<std::size_t>{0, 2, 0});
  CHECK(cm[2] == std::vector<std::size_t>{1, 0, 1});
  const auto m = compute_metrics(pred, gold, 3);
  CHECK(m.accuracy == doctest::Approx(4.0 / 6.0));
  CHECK(m.micro_f1 == m.accuracy);
  const auto neg = compute_metrics(pred, gold, 3, 0u);
  CHECK(neg.micro_f1 == doctest::Approx(0.75));

  const std::vector<std::uint32_t> g2{0, 1, 1, 0};
  const std::vector<std::uint32_t> flipped{1, 0, 0, 1};
  CHECK(compute_metrics(g2, g2, 2).accuracy == 1.0);
  CHECK(compute_metrics(flipped, g2, 2).accuracy == 0.0);
  CHECK_THROWS(compute_metrics(std::vector<std::uint32_t>{}, std::vector<std::uint32_t>{}, 2));
}

TEST_CASE("aggregation is recomputable from the per-seed table") {
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const std::vector<ClassificationMetrics> per{{0.7, 0.7, 10}, {0.8, 0.8, 10}, {0.65, 0.65, 10}};
  const auto r = MetricsReport::aggregate(seeds, per);
  std::ostringstream ps, ms;
  write_per_seed_tsv(r, ps);
  write_metrics_tsv(r, ms);

  std::istringstream pin(ps.str());
  std::string line;
  std::getline(pin, line);
  CHECK(line == "seed\taccuracy\tmicro_f1");
  std::vector<double> acc;
  while (std::getline(pin, line)) acc.push_back(std::stod(split_tsv_line(line)[1]));
  const auto recomputed = mean_std(acc);

  std::istringstream min(ms.str());
  std::getline(min, line);
  CHECK(line == "metric\tmean\tstd");
  std::getline(min, line);
  const auto f = split_tsv_line(line);
  CHECK(f[0] == "accuracy");
  CHECK(std::stod(f[1]) == recomputed.mean);
  CHECK(std::stod(f[2]) == *recomputed.stddev);

  const std::vector<std::uint64_t> one{1};
  const std::vector<ClassificationMetrics> single{{0.5, 0.5, 4}};
  const auto r1 = MetricsReport::aggregate(one, single);
  CHECK(!r1.accuracy_summary.stddev);
  std::ostringstream o1;
  write_metrics_tsv(r1, o1);
  CHECK(o1.str().find("NA") != std::string::npos);
}

TEST_CASE("reduction to the vanilla loop") {
  auto cfg = small_config();
  cfg.retro.lambda = 0.0;
  cfg.retro.beta = 0.0;
  cfg.retro.m = 0;
  cfg.optim.max_steps = 20;
  const auto exp = small_experiment(cfg);
  const auto split = split_for_seed(*exp, 13);
  const auto harness = train(*exp, split, 13);
  const auto plain = vanilla::train(*exp, split, 13);
  CHECK(harness.step_losses == plain.step_losses);
  CHECK(harness.params.values() == plain.params.values());
  const auto eval = evaluate(make_pipeline(*exp), harness.params, harness.store.context(), exp->test);
  for (std::size_t i = 0; i < exp->test.size(); ++i) {
    CHECK(eval.predictions[i] == vanilla::plain_predict(exp->prompting, plain.params, exp->test[i]));
  }
}

TEST_CASE("refresh schedule") {
  auto cfg = small_config();
  const auto initial_keys = [&](const Experiment& exp, const SplitData& split) {
    const auto p = EncoderParams::initialized(cfg.encoder_config(exp.prompting.vocab.size()), 13);
    return build_store(split.train, p, exp.prompting).keys();
  };
  SUBCASE("refresh every epoch") {
    const auto exp = small_experiment(cfg);
    const auto split = split_for_seed(*exp, 13);
    std::vector<int> epochs;
    TrainHooks hooks;
    hooks.on_refresh = [&](int e, const KnowledgeStore& s) {
      epochs.push_back(e);
      CHECK(s.built_at_epoch == e);
    };
    const auto r = train(*exp, split, 13, hooks);
    // 16 training rows, batch 8: two steps per epoch.
    CHECK(epochs == std::vector<int>{1, 2, 3, 4, 5, 6});
    CHECK(r.store.store.keys() != initial_keys(*exp, split));
  }
  SUBCASE("no-refresh keeps keys constant") {
    cfg.ablate.no_refresh = true;
    const auto exp = small_experiment(cfg);
    const auto split = split_for_seed(*exp, 13);
    int calls = 0;
    TrainHooks hooks;
    hooks.on_refresh = [&](int, const KnowledgeStore&) { ++calls; };
    const auto r = train(*exp, split, 13, hooks);
    CHECK(calls == 0);
    CHECK(r.store.store.keys() == initial_keys(*exp, split));
  }
  SUBCASE("refresh period 2") {
    cfg.retro.refresh_period = 2;
    const auto exp = small_experiment(cfg);
    std::vector<int> epochs;
    TrainHooks hooks;
    hooks.on_refresh = [&](int e, const KnowledgeStore&) { epochs.push_back(e); };
    train(*exp, split_for_seed(*exp, 13), 13, hooks);
    CHECK(epochs == std::vector<int>{2, 4, 6});
  }
}

TEST_CASE("training instrumentation") {
  auto cfg = small_config();
  cfg.retro.m = 2;
  const auto exp = small_experiment(cfg);
  const auto split = split_for_seed(*exp, 21);
  std::size_t instances = 0, checked = 0;
  TrainHooks hooks;
  hooks.on_instance = [&](std::size_t, const Example& ex, const InstanceResult& r) {
    ++instances;
    checked += r.retrieved_ids.size();
    CHECK(std::find(r.retrieved_ids.begin(), r.retrieved_ids.end(), ex.source_id) == r.retrieved_ids.end());
  };
  const auto r = train(*exp, split, 21, hooks);
  CHECK(r.loo_violations == 0);
  CHECK(instances == 12 * 8);
  CHECK(checked > instances);
  CHECK(r.step_losses.size() == 12);
  CHECK(r.best_step % 4 == 0);
}

TEST_CASE("divergence names the step") {
  auto cfg = small_config();
  cfg.optim.learning_rate = 1e300;
  const auto exp = small_experiment(cfg);
  try {
    train(*exp, split_for_seed(*exp, 13), 13);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.step >= 1);
    CHECK(std::string(e.what()).find("step " + std::to_string(e.step)) != std::string::npos);
  }
}

TEST_CASE("few-shot training beats the majority baseline on dev") {
  auto cfg = small_config();
  cfg.shots = 16;
  cfg.model.dim = 32;
  cfg.model.heads = 4;
  cfg.optim.max_steps = 120;
  cfg.optim.eval_period = 20;
  const auto exp = small_experiment(cfg);
  const auto r = train(*exp, split_for_seed(*exp, 13), 13);
  CHECK(r.best_dev > 0.5);
}

TEST_CASE("zero-shot") {
  const auto cfg = zero_shot_config();
  const auto exp = small_experiment(cfg);
  const auto r = zero_shot(*exp, 13);
  CHECK(r.checksum_before == r.checksum_after);
  CHECK(r.store.store.size() == exp->unlabeled.size());

  const auto plain = zero_shot(*exp, 13, 0.0);
  const auto params = EncoderParams::initialized(cfg.encoder_config(exp->prompting.vocab.size()), 13);
  std::vector<std::uint32_t> gold;
  for (std::size_t i = 0; i < exp->test.size(); ++i) {
    CHECK(plain.eval.predictions[i] == vanilla::plain_predict(exp->prompting, params, exp->test[i]));
    gold.push_back(exp->test[i].label);
  }

  // A store holding one pseudo-label gives one-hot kNN distributions.
  KnowledgeStore one_class = r.store.store;
  KnowledgeStore relabeled(one_class.dim(), 2, one_class.key_mode());
  for (std::size_t i = 0; i < one_class.size(); ++i) relabeled.add({one_class.entry(i).source_id, 1, 0}, one_class.key(i));
  for (const auto& ex : exp->test) {
    const auto q = encode_key(exp->prompting.wrap(ex), params, KeyMode::PromptMask);
    CHECK(knn_distribution(q, relabeled, 8).probs == Vector{0.0, 1.0});
  }

  CHECK_THROWS(zero_shot(*small_experiment(small_config()), 13));
  const auto empty = make_experiment(cfg, {}, exp->test, {});
  CHECK_THROWS_AS(zero_shot(*empty, 13), std::invalid_argument);
}

TEST_CASE("sweep") {
  SUBCASE("grid of one equals a direct run") {
    const auto cfg = small_config();
    auto exp = small_experiment(cfg);
    const SweepPoint p{cfg.retro.beta, cfg.retro.lambda, cfg.retro.k, cfg.retro.m};
    const auto rows = sweep(*exp, std::span<const SweepPoint>(&p, 1));
    const auto direct = run_all(*exp);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].report.accuracy == direct.accuracy);
    CHECK(to_key_values(exp->config) == to_key_values(cfg));
  }
  SUBCASE("lambda endpoints on a fixed zero-shot store") {
    auto exp = small_experiment(zero_shot_config());
    const std::vector<double> betas{0.0}, lambdas{0.0, 1.0};
    const std::vector<std::size_t> ks{8}, ms{0};
    const auto rows = sweep(*exp, make_grid(betas, lambdas, ks, ms));
    const auto& cfg = exp->config;
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
      const auto params = EncoderParams::initialized(cfg.encoder_config(exp->prompting.vocab.size()), cfg.seeds[s]);
      const auto store = zero_shot(*exp, cfg.seeds[s]).store.store;
      std::size_t model_ok = 0, knn_ok = 0;
      for (const auto& ex : exp->test) {
        model_ok += vanilla::plain_predict(exp->prompting, params, ex) == ex.label;
        const auto q = encode_key(exp->prompting.wrap(ex), params, KeyMode::PromptMask);
        knn_ok += argmax(knn_distribution(q, store, 8).probs) == ex.label;
      }
      const double n = static_cast<double>(exp->test.size());
      CHECK(rows[0].report.accuracy[s] == static_cast<double>(model_ok) / n);
      CHECK(rows[1].report.accuracy[s] == static_cast<double>(knn_ok) / n);
    }
    CHECK(swept_parameter(rows) == "lambda");
    const auto pts = plot_points(rows, false);
    CHECK(pts[1].x == 1.0);
    std::ostringstream out;
    write_sweep_tsv(rows, out);
    CHECK(out.str().rfind("beta\tlambda\tk\tm\taccuracy_mean\taccuracy_std\tmicro_f1_mean\tmicro_f1_std\n", 0) == 0);
  }
  SUBCASE("k saturates at the store size") {
    auto cfg = zero_shot_config();
    cfg.zero_shot_lambda = 1.0;
    auto exp = small_experiment(cfg);
    const std::vector<double> betas{0.0}, lambdas{1.0};
    const std::vector<std::size_t> ks{40, 64, 200}, ms{0};
    const auto rows = sweep(*exp, make_grid(betas, lambdas, ks, ms));
    CHECK(rows[0].report.accuracy == rows[1].report.accuracy);
    CHECK(rows[1].report.accuracy == rows[2].report.accuracy);
  }
}

TEST_CASE("bench") {
  const auto exp = small_experiment(small_config());
  const auto rows = bench(*exp, 13, 2);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].variant == "retrieval-off");
  CHECK(rows[1].variant == "retrieval-on");
  CHECK(rows[0].total_seconds <= rows[1].total_seconds);
  std::ostringstream out;
  write_bench_tsv(rows, out);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  CHECK(header == "variant\tinstances\tstore_size\ttotal_seconds\tms_per_instance");
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    CHECK(split_tsv_line(line).size() == 5);
    ++n;
  }
  CHECK(n == 2);
  CHECK(time_search(0, 64, 50, 16, 1) < time_search(10000, 64, 50, 16, 1));
}

TEST_CASE("repeated runs give byte-identical metrics") {
  const auto cfg = small_config();
  std::string first;
  for (int rep = 0; rep < 2; ++rep) {
    const auto exp = small_experiment(cfg);
    std::ostringstream m, p;
    const auto r = run_all(*exp);
    write_metrics_tsv(r, m);
    write_per_seed_tsv(r, p);
    if (rep == 0) first = m.str() + p.str();
    else CHECK(first == m.str() + p.str());
  }
}

TEST_CASE("memorize driver") {
  auto cfg = small_config();
  cfg.seeds = {13};
  const auto exp = small_experiment(cfg);
  std::vector<double> features(exp->pool.size());
  for (std::size_t i = 0; i < features.size(); ++i) features[i] = static_cast<double>(i % 3) / 2.0;
  const auto out = memorize(*exp, 13, features);
  CHECK(out.report.records.size() == 16);
  CHECK(out.invalid_scores == 0);
  for (const auto& r : out.report.records) CHECK(r.feature == features[r.source_id]);
  CHECK(out.report.top.count == 2);
}
