#include "retro/run_config.hpp"

#include "retro/reports.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace retro {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

std::string fmt_double(double v) { return format_number(v); }

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw std::invalid_argument("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: '" + key + "' expects true/false, got '" + v + "'");
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += ',';
    out += s;
  }
  return out;
}

}  // namespace

std::string to_string(RunMode mode) {
  switch (mode) {
    case RunMode::FewShotTrain: return "few-shot-train";
    case RunMode::ZeroShot: return "zero-shot";
    case RunMode::FullySupervised: return "fully-supervised";
  }
  return "?";
}

std::string to_string(KeyMode mode) { return mode == KeyMode::PromptMask ? "prompt-mask" : "cls-token"; }

std::string to_string(Acquisition acq) { return acq == Acquisition::RepSimilar ? "rep-similar" : "bm25"; }

AblationFlags parse_ablations(const std::string& list) {
  AblationFlags f;
  for (const auto& name : split_list(list)) {
    if (name == "none") continue;
    if (name == "no-knn-test") f.no_knn_test = true;
    else if (name == "no-knn-train") f.no_knn_train = true;
    else if (name == "no-demo") f.no_demo = true;
    else if (name == "no-refresh") f.no_refresh = true;
    else throw std::invalid_argument("unknown ablation '" + name + "'");
  }
  return f;
}

std::string format_ablations(const AblationFlags& flags) {
  std::vector<std::string> names;
  if (flags.no_knn_test) names.emplace_back("no-knn-test");
  if (flags.no_knn_train) names.emplace_back("no-knn-train");
  if (flags.no_demo) names.emplace_back("no-demo");
  if (flags.no_refresh) names.emplace_back("no-refresh");
  return names.empty() ? "none" : join(names);
}

void RunConfig::validate() const {
  dataset.validate();
  retro.validate();
  if (shots && *shots == 0) throw std::invalid_argument("config: shots must be positive or 'all'");
  if (seeds.empty()) throw std::invalid_argument("config: at least one seed is required");
  if (optim.batch_size == 0) throw std::invalid_argument("config: batch_size must be positive");
  if (optim.eval_period == 0) throw std::invalid_argument("config: eval_period must be positive");
  if (!(optim.learning_rate > 0.0)) throw std::invalid_argument("config: learning_rate must be positive");
  if (!(zero_shot_lambda >= 0.0 && zero_shot_lambda <= 1.0)) throw std::invalid_argument("config: zero_shot_lambda must lie in [0, 1]");
  if (mode == RunMode::ZeroShot && optim.max_steps != 0) {
    throw std::invalid_argument("config: zero-shot mode forbids training steps (set max_steps = 0)");
  }
  if (mode == RunMode::FullySupervised && shots) {
    throw std::invalid_argument("config: fully-supervised mode requires shots = all");
  }
  if (negative_label && *negative_label >= dataset.num_classes) throw std::invalid_argument("config: negative_label out of range");
}

PipelineFlags RunConfig::pipeline_flags() const {
  PipelineFlags f;
  f.use_demo = !ablate.no_demo;
  f.use_knn_train = !ablate.no_knn_train;
  f.use_knn_test = !ablate.no_knn_test;
  f.acquisition = acquisition;
  f.differentiate_factor = differentiate_factor;
  return f;
}

RetroConfig RunConfig::zero_shot_retro() const {
  RetroConfig r = retro;
  r.lambda = zero_shot_lambda;
  r.beta = 0.0;
  if (!zero_shot_demo) r.m = 0;
  return r;
}

EncoderConfig RunConfig::encoder_config(std::size_t vocab_size) const {
  EncoderConfig c = model;
  c.vocab_size = vocab_size;
  c.max_len_extended = c.max_len + 2 * dataset.num_classes;
  return c;
}

std::map<std::string, std::string> to_key_values(const RunConfig& c) {
  std::map<std::string, std::string> kv;
  kv["data.train"] = c.dataset.path.string();
  kv["data.test"] = c.test_path.string();
  kv["data.dev"] = c.dev_path.string();
  kv["data.unlabeled"] = c.unlabeled_path.string();
  kv["data.task"] = c.dataset.task_kind == TaskKind::SentencePair ? "sentence-pair" : "single-sentence";
  kv["data.num_classes"] = std::to_string(c.dataset.num_classes);
  kv["data.template"] = c.dataset.template_text;
  kv["data.label_words"] = join(c.dataset.label_words);
  kv["data.negative_label"] = c.negative_label ? std::to_string(*c.negative_label) : "none";
  kv["split.shots"] = c.shots ? std::to_string(*c.shots) : "all";
  std::vector<std::string> seeds;
  for (auto s : c.seeds) seeds.push_back(std::to_string(s));
  kv["split.seeds"] = join(seeds);
  kv["retro.k"] = std::to_string(c.retro.k);
  kv["retro.m"] = std::to_string(c.retro.m);
  kv["retro.lambda"] = fmt_double(c.retro.lambda);
  kv["retro.beta"] = fmt_double(c.retro.beta);
  kv["retro.p_min"] = fmt_double(c.retro.p_min);
  kv["retro.sim_divisor"] = fmt_double(c.retro.sim_divisor);
  kv["retro.refresh_period"] = std::to_string(c.retro.refresh_period);
  kv["retro.zero_shot_lambda"] = fmt_double(c.zero_shot_lambda);
  kv["retro.zero_shot_demo"] = fmt_bool(c.zero_shot_demo);
  kv["retro.key_mode"] = to_string(c.key_mode);
  kv["retro.acquisition"] = to_string(c.acquisition);
  kv["retro.normalize_keys"] = fmt_bool(c.normalize_keys);
  kv["retro.differentiate_factor"] = fmt_bool(c.differentiate_factor);
  kv["optim.learning_rate"] = fmt_double(c.optim.learning_rate);
  kv["optim.momentum"] = fmt_double(c.optim.momentum);
  kv["optim.batch_size"] = std::to_string(c.optim.batch_size);
  kv["optim.max_steps"] = std::to_string(c.optim.max_steps);
  kv["optim.eval_period"] = std::to_string(c.optim.eval_period);
  kv["optim.grad_clip"] = fmt_double(c.optim.grad_clip);
  kv["model.dim"] = std::to_string(c.model.dim);
  kv["model.heads"] = std::to_string(c.model.heads);
  kv["model.layers"] = std::to_string(c.model.layers);
  kv["model.mlp_dim"] = std::to_string(c.model.mlp_dim);
  kv["model.max_len"] = std::to_string(c.model.max_len);
  kv["model.init_std"] = fmt_double(c.model.init_std);
  kv["run.mode"] = to_string(c.mode);
  kv["run.ablate"] = format_ablations(c.ablate);
  kv["memorize.damping"] = fmt_double(c.memorize.influence.damping);
  kv["memorize.solver"] = c.memorize.influence.solver == InfluenceSolver::ExplicitInverse ? "explicit" : "cg";
  kv["memorize.cg_max_iters"] = std::to_string(c.memorize.influence.cg_max_iters);
  kv["memorize.cg_tol"] = fmt_double(c.memorize.influence.cg_tol);
  kv["memorize.scope"] = to_string(c.memorize.scope);
  kv["memorize.fraction"] = fmt_double(c.memorize.fraction);
  kv["memorize.features"] = c.memorize.features_path.string();
  return kv;
}

void apply_key_value(RunConfig& c, const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "data.train") c.dataset.path = v;
  else if (key == "data.test") c.test_path = v;
  else if (key == "data.dev") c.dev_path = v;
  else if (key == "data.unlabeled") c.unlabeled_path = v;
  else if (key == "data.task") {
    if (v == "single-sentence") c.dataset.task_kind = TaskKind::SingleSentence;
    else if (v == "sentence-pair") c.dataset.task_kind = TaskKind::SentencePair;
    else throw std::invalid_argument("config: unknown task kind '" + v + "'");
  } else if (key == "data.num_classes") c.dataset.num_classes = to_u64(key, v);
  else if (key == "data.template") c.dataset.template_text = v;
  else if (key == "data.label_words") c.dataset.label_words = split_list(v);
  else if (key == "data.negative_label") {
    if (v == "none") c.negative_label.reset();
    else c.negative_label = static_cast<std::uint32_t>(to_u64(key, v));
  } else if (key == "split.shots") {
    if (v == "all") c.shots.reset();
    else c.shots = to_u64(key, v);
  } else if (key == "split.seeds") {
    c.seeds.clear();
    for (const auto& s : split_list(v)) c.seeds.push_back(to_u64(key, s));
  } else if (key == "retro.k") c.retro.k = to_u64(key, v);
  else if (key == "retro.m") c.retro.m = to_u64(key, v);
  else if (key == "retro.lambda") c.retro.lambda = to_double(key, v);
  else if (key == "retro.beta") c.retro.beta = to_double(key, v);
  else if (key == "retro.p_min") c.retro.p_min = to_double(key, v);
  else if (key == "retro.sim_divisor") c.retro.sim_divisor = to_double(key, v);
  else if (key == "retro.refresh_period") c.retro.refresh_period = to_u64(key, v);
  else if (key == "retro.zero_shot_lambda") c.zero_shot_lambda = to_double(key, v);
  else if (key == "retro.zero_shot_demo") c.zero_shot_demo = to_bool(key, v);
  else if (key == "retro.key_mode") {
    if (v == "prompt-mask") c.key_mode = KeyMode::PromptMask;
    else if (v == "cls-token") c.key_mode = KeyMode::ClsToken;
    else throw std::invalid_argument("config: unknown key mode '" + v + "'");
  } else if (key == "retro.acquisition") {
    if (v == "rep-similar") c.acquisition = Acquisition::RepSimilar;
    else if (v == "bm25") c.acquisition = Acquisition::Bm25;
    else throw std::invalid_argument("config: unknown acquisition '" + v + "'");
  } else if (key == "retro.normalize_keys") c.normalize_keys = to_bool(key, v);
  else if (key == "retro.differentiate_factor") c.differentiate_factor = to_bool(key, v);
  else if (key == "optim.learning_rate") c.optim.learning_rate = to_double(key, v);
  else if (key == "optim.momentum") c.optim.momentum = to_double(key, v);
  else if (key == "optim.batch_size") c.optim.batch_size = to_u64(key, v);
  else if (key == "optim.max_steps") c.optim.max_steps = to_u64(key, v);
  else if (key == "optim.eval_period") c.optim.eval_period = to_u64(key, v);
  else if (key == "optim.grad_clip") c.optim.grad_clip = to_double(key, v);
  else if (key == "model.dim") c.model.dim = to_u64(key, v);
  else if (key == "model.heads") c.model.heads = to_u64(key, v);
  else if (key == "model.layers") c.model.layers = to_u64(key, v);
  else if (key == "model.mlp_dim") c.model.mlp_dim = to_u64(key, v);
  else if (key == "model.max_len") c.model.max_len = to_u64(key, v);
  else if (key == "model.init_std") c.model.init_std = to_double(key, v);
  else if (key == "run.mode") {
    if (v == "few-shot-train") c.mode = RunMode::FewShotTrain;
    else if (v == "zero-shot") c.mode = RunMode::ZeroShot;
    else if (v == "fully-supervised") c.mode = RunMode::FullySupervised;
    else throw std::invalid_argument("config: unknown mode '" + v + "'");
  } else if (key == "run.ablate") c.ablate = parse_ablations(v);
  else if (key == "memorize.damping") c.memorize.influence.damping = to_double(key, v);
  else if (key == "memorize.solver") {
    if (v == "explicit") c.memorize.influence.solver = InfluenceSolver::ExplicitInverse;
    else if (v == "cg") c.memorize.influence.solver = InfluenceSolver::ConjugateGradient;
    else throw std::invalid_argument("config: unknown solver '" + v + "'");
  } else if (key == "memorize.cg_max_iters") c.memorize.influence.cg_max_iters = to_u64(key, v);
  else if (key == "memorize.cg_tol") c.memorize.influence.cg_tol = to_double(key, v);
  else if (key == "memorize.scope") c.memorize.scope = parse_param_scope(v);
  else if (key == "memorize.fraction") c.memorize.fraction = to_double(key, v);
  else if (key == "memorize.features") c.memorize.features_path = v;
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

RunConfig parse_config_text(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    apply_key_value(base, trim(t.substr(0, eq)), t.substr(eq + 1));
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), std::move(base));
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& [k, v] : to_key_values(config)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace retro
