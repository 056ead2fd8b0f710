// Acceptance checks, one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "fixtures.hpp"
#include "retro/harness.hpp"
#include "vanilla.hpp"

using namespace retro;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

const std::vector<std::uint64_t> kSeeds{13, 21, 42, 87, 100};

// ---- oracles -------------------------------------------------------------

std::vector<Neighbor> scan_oracle(const KnowledgeStore& s, std::span<const double> q, std::size_t k,
                                  std::optional<std::uint64_t> exclude) {
  std::vector<Neighbor> all;
  const double div = std::sqrt(static_cast<double>(s.dim()));
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& e = s.entry(i);
    if (exclude && e.source_id == *exclude) continue;
    double acc = 0.0;
    for (std::size_t c = 0; c < s.dim(); ++c) acc += q[c] * s.key(i)[c];
    all.push_back({i, acc / div, e.label, e.value_word, e.source_id});
  }
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.score != b.score ? a.score > b.score : a.source_id < b.source_id;
  });
  all.resize(std::min(k, all.size()));
  return all;
}

// p(l) = sum over top-k with label l of exp(s_i) / sum_j exp(s_j).
Vector knn_formula(std::span<const Neighbor> top, std::size_t num_classes) {
  Vector p(num_classes, 0.0);
  if (top.empty()) return p;
  double z = 0.0;
  for (const auto& n : top) z += std::exp(n.score - top.front().score);
  for (const auto& n : top) p[n.label] += std::exp(n.score - top.front().score) / z;
  return p;
}

// Random store with some duplicated keys so ties are exercised.
KnowledgeStore random_store(std::mt19937_64& rng, std::size_t n, std::size_t d, std::size_t classes) {
  std::normal_distribution<double> nd;
  KnowledgeStore s(d, classes, KeyMode::PromptMask);
  Vector key(d);
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0 || rng() % 10 != 0) {
      for (auto& v : key) v = nd(rng);
    }
    // source ids shuffled relative to insertion order
    s.add({(i * 7919) % 100003, static_cast<std::uint32_t>(rng() % classes), 0}, key);
  }
  return s;
}

// ---- experiments ---------------------------------------------------------

// The synthetic task as `retroprompt generate` writes it: 200 pool rows per class, 500 mixed test rows.
std::unique_ptr<Experiment> generator_experiment(const RunConfig& cfg) {
  const SyntheticConfig sc;
  return make_experiment(cfg, generate_synthetic(sc, 200, 7).rows, generate_synthetic_mixed(sc, 500, 8).rows,
                         generate_synthetic_mixed(sc, 400, 9).rows);
}

std::vector<double> generator_atypicality() { return generate_synthetic(SyntheticConfig{}, 200, 7).atypical; }

// Desk-scale model and schedule shared by the directional experiments.
RunConfig desk_config() {
  RunConfig c;
  c.dataset = synthetic_spec();
  c.shots = 16;
  c.seeds = kSeeds;
  c.model.dim = 32;
  c.model.heads = 2;
  c.model.layers = 1;
  c.model.mlp_dim = 64;
  c.model.max_len = 64;
  c.optim.max_steps = 300;
  c.optim.eval_period = 20;
  return c;
}

RunConfig small_config() {
  auto c = desk_config();
  c.model.dim = 16;
  c.model.mlp_dim = 32;
  c.optim.max_steps = 40;
  c.optim.eval_period = 10;
  c.seeds = {13, 21};
  return c;
}

// ---- criteria ------------------------------------------------------------

Outcome search_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  std::size_t mismatches = 0, queries = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 1000;
    const std::size_t d = 1 + rng() % 64;
    const auto s = random_store(rng, n, d, 2 + rng() % 3);
    std::normal_distribution<double> nd;
    for (int qi = 0; qi < 4; ++qi) {
      Vector q(d);
      for (auto& v : q) v = nd(rng);
      const std::size_t k = 1 + rng() % std::min<std::size_t>(n + 5, 64);
      const auto own = s.entry(rng() % n).source_id;
      mismatches += search(s, q, k) != scan_oracle(s, q, k, std::nullopt);
      mismatches += search(s, q, k, own) != scan_oracle(s, q, k, own);
      queries += 2;
    }
  }
  const double t = seconds_since(t0);
  return {mismatches == 0 && t < 10.0,
          std::to_string(queries) + " queries on 100 stores, " + std::to_string(mismatches) + " mismatches, " +
              format_number(std::round(t * 100) / 100) + " s"};
}

Outcome knn_oracle() {
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 300;
    const std::size_t d = 1 + rng() % 64;
    const std::size_t classes = 2 + rng() % 4;
    const auto s = random_store(rng, n, d, classes);
    std::normal_distribution<double> nd(0.0, 2.0);
    Vector q(d);
    for (auto& v : q) v = nd(rng);
    const std::size_t k = 1 + rng() % 32;
    const auto exclude = trial % 2 ? std::optional<std::uint64_t>(s.entry(rng() % n).source_id) : std::nullopt;
    const auto got = knn_distribution(q, s, k, exclude).probs;
    const auto want = knn_formula(scan_oracle(s, q, k, exclude), classes);
    for (std::size_t l = 0; l < classes; ++l) worst = std::max(worst, std::abs(got[l] - want[l]));
  }
  std::ostringstream d;
  d << "100 cases, max abs error " << worst;
  return {worst <= 1e-9, d.str()};
}

Outcome gradient_check() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::uint64_t draw = 0; draw < 20; ++draw) {
    const auto w = fixtures::tiny_world(100 + draw, 4, 1);
    const auto store = build_store(w->rows, w->params, w->prompting);
    RetroConfig rc;
    rc.k = 3 + draw % 4;
    rc.m = 1 + draw % 2;
    rc.beta = 0.5;
    rc.lambda = 0.3;
    const RetroPipeline pipe(w->prompting, rc);
    const StoreContext ctx{&store, nullptr};
    const auto& ex = w->rows[draw % w->rows.size()];
    ParamGradient g(w->params.size(), 0.0);
    const auto res = pipe.train_loss(w->params, ctx, ex, g);
    const double weight = 1.0 + rc.beta * res.factor;
    EncoderParams work = w->params;
    const auto fd = finite_diff_grad(
        [&](std::span<const double> th) {
          return fixtures::at_theta(work, th, [&](const EncoderParams& p) {
            return weight * pipe.train_loss(p, ctx, ex).ce;
          });
        },
        w->params.values());
    worst = std::max(worst, fixtures::relative_error(g, fd));
  }
  const double t = seconds_since(t0);
  std::ostringstream d;
  d << "20 draws, max relative error " << worst << ", " << std::round(t * 10) / 10 << " s";
  return {worst < 1e-4 && t < 60.0, d.str()};
}

Outcome reduction() {
  auto cfg = desk_config();
  cfg.retro.lambda = 0.0;
  cfg.retro.beta = 0.0;
  cfg.retro.m = 0;
  cfg.optim.max_steps = 200;
  const auto exp = generator_experiment(cfg);
  const auto split = split_for_seed(*exp, 13);
  const auto harness = train(*exp, split, 13);
  const auto plain = vanilla::train(*exp, split, 13);
  const bool losses = harness.step_losses == plain.step_losses && harness.step_losses.size() == 200;
  const bool params = harness.params.values() == plain.params.values();
  const auto eval = evaluate(make_pipeline(*exp), harness.params, harness.store.context(), exp->test);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < exp->test.size(); ++i)
    differ += eval.predictions[i] != vanilla::plain_predict(exp->prompting, plain.params, exp->test[i]);
  std::ostringstream d;
  d << "200 steps, losses " << (losses ? "identical" : "differ") << ", params " << (params ? "identical" : "differ")
    << ", " << differ << " differing test predictions";
  return {losses && params && differ == 0, d.str()};
}

Outcome endpoints() {
  auto cfg = small_config();
  cfg.retro.m = 1;
  const auto exp = generator_experiment(cfg);
  const auto trained = train(*exp, split_for_seed(*exp, 13), 13);
  const auto& params = trained.params;
  const auto ctx = trained.store.context();
  const auto& store = trained.store.store;

  auto no_demo = cfg;
  no_demo.retro.m = 0;
  const RetroPipeline with_demo(exp->prompting, cfg.retro, cfg.pipeline_flags());
  const RetroPipeline plain(exp->prompting, no_demo.retro, no_demo.pipeline_flags());
  std::size_t model_diff = 0, knn_diff = 0;
  for (const auto& ex : exp->test) {
    // lambda = 0 against the bare encoder (m = 0) and against the pipeline's own model head.
    model_diff += argmax(plain.predict(params, ctx, ex, {}, 0.0).p_final) !=
                  vanilla::plain_predict(exp->prompting, params, ex);
    const auto r0 = with_demo.predict(params, ctx, ex, {}, 0.0);
    model_diff += argmax(r0.p_final) != argmax(r0.p_model);
    const auto q = encode_key(exp->prompting.wrap(ex), params, cfg.key_mode);
    const auto top = scan_oracle(store, q, cfg.retro.k, std::nullopt);
    const auto direct = knn_formula(top, 2);
    knn_diff += argmax(with_demo.predict(params, ctx, ex, {}, 1.0).p_final) != argmax(direct);
  }
  std::ostringstream d;
  d << exp->test.size() << " test instances, lambda=0 mismatches " << model_diff << ", lambda=1 mismatches "
    << knn_diff;
  return {model_diff == 0 && knn_diff == 0, d.str()};
}

Outcome leave_one_out() {
  auto cfg = small_config();
  cfg.retro.m = 3;
  cfg.retro.k = 16;
  cfg.optim.max_steps = 8;  // two epochs of 32 instances
  std::size_t instances = 0, retrievals = 0, violations = 0;
  for (auto acq : {Acquisition::RepSimilar, Acquisition::Bm25}) {
    cfg.acquisition = acq;
    const auto exp = generator_experiment(cfg);
    TrainHooks hooks;
    hooks.on_instance = [&](std::size_t, const Example& ex, const InstanceResult& r) {
      ++instances;
      retrievals += r.retrieved_ids.size();
      violations += std::count(r.retrieved_ids.begin(), r.retrieved_ids.end(), ex.source_id);
    };
    const auto res = train(*exp, split_for_seed(*exp, 13), 13, hooks);
    violations += res.loo_violations;
  }
  std::ostringstream d;
  d << instances << " training instances, " << retrievals << " retrieved ids, " << violations << " violations";
  return {violations == 0 && instances == 128, d.str()};
}

Outcome influence_oracle() {
  double worst_rho = 1.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto [x, y] = fixtures::logistic_toy(seed);
    const LogisticRegressionProblem prob(x, y, 0.05);
    const MemorizationScorer scorer(prob, prob.fit(), {});
    std::vector<double> scores;
    for (std::size_t i = 0; i < prob.num_instances(); ++i) scores.push_back(scorer.score(i).score);
    worst_rho = std::min(worst_rho, fixtures::spearman(scores, fixtures::loo_probability_drop(prob)));
  }

  // L = (theta - a)^2 / 2, P = -theta^2 / 2: S = theta (theta - a) / (1 + eps).
  struct Quadratic : InfluenceProblem {
    double a;
    explicit Quadratic(double a_) : a(a_) {}
    std::size_t num_params() const override { return 1; }
    std::size_t num_instances() const override { return 1; }
    double loss(std::size_t, std::span<const double> t, std::span<double> g) const override {
      if (!g.empty()) g[0] = t[0] - a;
      return 0.5 * (t[0] - a) * (t[0] - a);
    }
    double probability(std::size_t, std::span<const double> t, std::span<double> g) const override {
      if (!g.empty()) g[0] = -t[0];
      return -0.5 * t[0] * t[0];
    }
  };
  double worst_abs = 0.0;
  for (double theta : {-2.0, 0.3, 1.7})
    for (double a : {-1.0, 0.0, 2.5}) {
      const Quadratic q(a);
      const InfluenceConfig ic;
      const auto r = memorization_score(q, 0, Vector{theta}, ic);
      worst_abs = std::max(worst_abs, std::abs(r.score - theta * (theta - a) / (1.0 + ic.damping)));
    }
  std::ostringstream d;
  d << "min Spearman over 3 toys " << worst_rho << ", quadratic max error " << worst_abs;
  return {worst_rho >= 0.8 && worst_abs <= 1e-6, d.str()};
}

Outcome directional(std::string& table) {
  const auto t0 = Clock::now();
  const auto base_cfg = desk_config();
  std::vector<std::pair<std::string, RunConfig>> variants;
  variants.emplace_back("full", base_cfg);
  auto baseline = base_cfg;
  baseline.retro.lambda = 0.0;
  baseline.retro.beta = 0.0;
  baseline.retro.m = 0;
  variants.emplace_back("baseline", baseline);
  for (const char* a : {"no-knn-test", "no-knn-train", "no-demo", "no-refresh"}) {
    auto c = base_cfg;
    c.ablate = parse_ablations(a);
    variants.emplace_back(a, c);
  }
  std::map<std::string, double> mean;
  std::ostringstream tab;
  for (const auto& [name, cfg] : variants) {
    const auto exp = generator_experiment(cfg);
    const auto report = run_all(*exp);
    mean[name] = report.accuracy_summary.mean;
    tab << "    " << name << "\tmean " << format_number(report.accuracy_summary.mean) << "\tper-seed";
    for (double a : report.accuracy) tab << ' ' << format_number(a);
    tab << '\n';
  }
  table = tab.str();
  const double t = seconds_since(t0);
  bool ok = mean["full"] >= mean["baseline"];
  std::string failed;
  for (const char* a : {"no-knn-test", "no-knn-train", "no-demo", "no-refresh"}) {
    if (mean[a] > mean["full"]) {
      ok = false;
      failed += std::string(" ") + a;
    }
  }
  if (mean["full"] < mean["baseline"]) failed += " baseline";
  std::ostringstream d;
  d << "full " << format_number(mean["full"]) << " vs baseline " << format_number(mean["baseline"]) << ", "
    << (failed.empty() ? "no variant above full" : "above full:" + failed) << ", " << std::round(t) << " s";
  return {ok && t < 600.0, d.str()};
}

Outcome memorization_direction() {
  auto cfg = desk_config();
  const auto exp = generator_experiment(cfg);
  const auto features = generator_atypicality();
  double top = 0.0, all = 0.0;
  std::ostringstream per;
  for (auto seed : kSeeds) {
    const auto out = memorize(*exp, seed, features);
    top += out.report.top.mean_feature / static_cast<double>(kSeeds.size());
    all += out.report.all.mean_feature / static_cast<double>(kSeeds.size());
    per << ' ' << format_number(out.report.top.mean_feature) << '/' << format_number(out.report.all.mean_feature);
  }
  std::ostringstream d;
  d << "top-10% atypicality " << format_number(top) << " vs overall " << format_number(all)
    << " (per seed top/all:" << per.str() << ")";
  return {top > all, d.str()};
}

Outcome refresh_contract() {
  const auto exp = generator_experiment(small_config());
  const auto split = split_for_seed(*exp, 21);
  const auto params = EncoderParams::initialized(exp->config.encoder_config(exp->prompting.vocab.size()), 21);
  const auto store = build_store(split.train, params, exp->prompting);
  const auto refreshed = refresh_store(store, params, exp->prompting, split.train, 1);
  const bool keys_equal = refreshed.keys() == store.keys() && refreshed.entries() == store.entries();

  const auto path = fs::temp_directory_path() / "acceptance_store.rpks";
  save_store(store, path);
  const auto loaded = load_store(path);
  bool round_trip = loaded.entries() == store.entries() && loaded.size() == store.size();
  for (std::size_t i = 0; i < store.keys().size() && round_trip; ++i)
    round_trip = loaded.keys()[i] == static_cast<double>(static_cast<float>(store.keys()[i]));

  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  bytes[bytes.size() / 2] ^= 0x10;
  bool crc_caught = false;
  try {
    deserialize_store(bytes);
  } catch (const ChecksumError&) {
    crc_caught = true;
  }
  fs::remove(path);
  std::ostringstream d;
  d << "refresh keys " << (keys_equal ? "bit-identical" : "differ") << ", round trip "
    << (round_trip ? "exact" : "differs") << ", corrupted file " << (crc_caught ? "rejected" : "accepted");
  return {keys_equal && round_trip && crc_caught, d.str()};
}

Outcome determinism() {
  auto cfg = small_config();
  std::string texts[2];
  for (int rep = 0; rep < 2; ++rep) {
    const auto dir = fs::temp_directory_path() / ("acceptance_det_" + std::to_string(rep));
    fs::create_directories(dir);
    const auto exp = generator_experiment(cfg);
    const auto report = run_all(*exp);
    {
      std::ofstream m(dir / "metrics.tsv"), p(dir / "per_seed.tsv");
      write_metrics_tsv(report, m);
      write_per_seed_tsv(report, p);
    }
    for (const char* f : {"metrics.tsv", "per_seed.tsv"}) {
      std::ifstream in(dir / f, std::ios::binary);
      texts[rep].append(std::istreambuf_iterator<char>(in), {});
    }
    fs::remove_all(dir);
  }
  return {texts[0] == texts[1] && !texts[0].empty(),
          "two runs, " + std::to_string(texts[0].size()) + " bytes, " + (texts[0] == texts[1] ? "identical" : "differ")};
}

}  // namespace

int main() {
  std::string table;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"search equals full-scan oracle", search_oracle},
      {"kNN distribution equals direct formula", knn_oracle},
      {"training-loss gradient matches finite differences", gradient_check},
      {"lambda=beta=m=0 reduces to vanilla prompt learning", reduction},
      {"interpolation endpoints", endpoints},
      {"leave-one-out retrieval", leave_one_out},
      {"influence oracle", influence_oracle},
      {"directional desk-scale experiment", [&] { return directional(table); }},
      {"memorization direction", memorization_direction},
      {"refresh and store round trip", refresh_contract},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %zu: %s  %s: %s\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str());
    if (i == 7 && !table.empty()) std::printf("%s", table.c_str());
    std::fflush(stdout);
  }
  return failed;
}
