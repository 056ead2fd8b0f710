#include "retro/memorization.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

namespace retro {

Vector grad_prob(const InfluenceProblem& problem, std::size_t i, std::span<const double> theta) {
  Vector g(problem.num_params(), 0.0);
  problem.probability(i, theta, g);
  if (!all_finite(g)) throw NumericError("grad_prob: non-finite gradient for instance " + std::to_string(i));
  return g;
}

Vector grad_loss(const InfluenceProblem& problem, std::size_t i, std::span<const double> theta) {
  Vector g(problem.num_params(), 0.0);
  problem.loss(i, theta, g);
  if (!all_finite(g)) throw NumericError("grad_loss: non-finite gradient for instance " + std::to_string(i));
  return g;
}

Vector mean_loss_grad(const InfluenceProblem& problem, std::span<const double> theta) {
  const std::size_t n = problem.num_instances();
  Vector total(problem.num_params(), 0.0), g(problem.num_params());
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(g.begin(), g.end(), 0.0);
    problem.loss(i, theta, g);
    axpy(1.0, g, total);
  }
  scale(total, 1.0 / static_cast<double>(n));
  return total;
}

DenseMatrix hessian(const InfluenceProblem& problem, std::span<const double> theta, double step,
                    std::size_t max_params) {
  const std::size_t p = problem.num_params();
  if (p > max_params) {
    throw ScopeTooLarge("hessian: " + std::to_string(p) + " parameters in scope exceed the explicit limit of " +
                        std::to_string(max_params) + "; use the conjugate-gradient solver");
  }
  if (problem.num_instances() == 0) throw std::invalid_argument("hessian: empty training set");
  DenseMatrix h(p, p);
  Vector point(theta.begin(), theta.end());
  for (std::size_t j = 0; j < p; ++j) {
    const double orig = point[j];
    point[j] = orig + step;
    const Vector up = mean_loss_grad(problem, point);
    point[j] = orig - step;
    const Vector down = mean_loss_grad(problem, point);
    point[j] = orig;
    for (std::size_t r = 0; r < p; ++r) h(r, j) = (up[r] - down[r]) / (2.0 * step);
  }
  for (std::size_t r = 0; r < p; ++r) {
    for (std::size_t c = r + 1; c < p; ++c) {
      const double s = 0.5 * (h(r, c) + h(c, r));
      h(r, c) = s;
      h(c, r) = s;
    }
  }
  if (!all_finite(h.data())) throw NumericError("hessian: non-finite entry");
  return h;
}

Vector hessian_vector_product(const InfluenceProblem& problem, std::span<const double> theta,
                              std::span<const double> v, double step) {
  check_same_dim(v.size(), theta.size(), "hessian_vector_product");
  const double vn = norm2(v);
  if (vn == 0.0) return Vector(v.size(), 0.0);
  // Step along the unit direction so the difference scale is independent of |v|.
  const double h = step / vn;
  Vector up(theta.begin(), theta.end()), down(theta.begin(), theta.end());
  axpy(h, v, up);
  axpy(-h, v, down);
  Vector gu = mean_loss_grad(problem, up);
  const Vector gd = mean_loss_grad(problem, down);
  for (std::size_t i = 0; i < gu.size(); ++i) gu[i] = (gu[i] - gd[i]) / (2.0 * h);
  return gu;
}

CgResult conjugate_gradient(const LinearOperator& apply, std::span<const double> b, std::size_t max_iters,
                            double tol) {
  CgResult res;
  res.x.assign(b.size(), 0.0);
  Vector r(b.begin(), b.end());
  Vector p = r;
  double rs = dot(r, r);
  const double target = tol * std::sqrt(rs);
  res.residual = std::sqrt(rs);
  if (res.residual == 0.0 || res.residual <= target) {
    res.converged = true;
    return res;
  }
  for (std::size_t it = 0; it < max_iters; ++it) {
    const Vector ap = apply(p);
    const double curvature = dot(p, ap);
    if (!(curvature > 0.0)) {
      res.iterations = it;
      return res;
    }
    const double alpha = rs / curvature;
    axpy(alpha, p, res.x);
    axpy(-alpha, ap, r);
    const double rs_new = dot(r, r);
    res.iterations = it + 1;
    res.residual = std::sqrt(rs_new);
    if (res.residual <= target) {
      res.converged = true;
      return res;
    }
    const double ratio = rs_new / rs;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + ratio * p[i];
    rs = rs_new;
  }
  return res;
}

MemorizationScorer::MemorizationScorer(const InfluenceProblem& problem, Vector theta, InfluenceConfig config)
    : problem_(&problem), theta_(std::move(theta)), config_(config) {
  check_same_dim(theta_.size(), problem.num_params(), "memorization scorer theta");
  if (!(config_.damping > 0.0)) throw std::invalid_argument("influence config: damping must be positive");
  if (!(config_.cg_tol > 0.0)) throw std::invalid_argument("influence config: cg_tol must be positive");
}

const DenseMatrix& MemorizationScorer::damped_hessian() const {
  if (!have_hessian_) {
    damped_ = hessian(*problem_, theta_, config_.fd_step, config_.max_explicit_params);
    for (std::size_t i = 0; i < damped_.rows(); ++i) damped_(i, i) += config_.damping;
    have_hessian_ = true;
  }
  return damped_;
}

CgResult MemorizationScorer::solve(std::span<const double> b) const {
  if (config_.solver == InfluenceSolver::ExplicitInverse) {
    CgResult res;
    res.x = solve_linear(damped_hessian(), b);
    res.converged = true;
    return res;
  }
  const auto apply = [&](std::span<const double> v) {
    Vector hv = hessian_vector_product(*problem_, theta_, v, config_.fd_step);
    axpy(config_.damping, v, hv);
    return hv;
  };
  return conjugate_gradient(apply, b, config_.cg_max_iters, config_.cg_tol);
}

ScoreResult MemorizationScorer::score(std::size_t i) const {
  ScoreResult out;
  const Vector gl = grad_loss(*problem_, i, theta_);
  if (norm2(gl) == 0.0) return out;
  const Vector gp = grad_prob(*problem_, i, theta_);
  const CgResult sol = solve(gl);
  out.cg_iterations = sol.iterations;
  if (!sol.converged) {
    out.valid = false;
    out.message = "conjugate gradient did not converge after " + std::to_string(sol.iterations) +
                  " iterations (residual " + std::to_string(sol.residual) + ")";
  }
  out.score = -dot(gp, sol.x);
  if (!std::isfinite(out.score)) {
    out.valid = false;
    out.message = "non-finite score";
  }
  return out;
}

ScoreResult memorization_score(const InfluenceProblem& problem, std::size_t i, std::span<const double> theta,
                               const InfluenceConfig& config) {
  return MemorizationScorer(problem, Vector(theta.begin(), theta.end()), config).score(i);
}

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

LogisticRegressionProblem::LogisticRegressionProblem(DenseMatrix features, std::vector<int> labels, double l2)
    : features_(std::move(features)), labels_(std::move(labels)), l2_(l2) {
  check_same_dim(labels_.size(), features_.rows(), "logistic labels");
  for (int y : labels_) {
    if (y != 0 && y != 1) throw std::invalid_argument("logistic regression: labels must be 0 or 1");
  }
}

double LogisticRegressionProblem::loss(std::size_t i, std::span<const double> theta, std::span<double> grad) const {
  const double s = labels_.at(i) == 1 ? 1.0 : -1.0;
  const auto x = features_.row(i);
  const double margin = s * dot(theta, x);
  const double value = std::log1p(std::exp(-std::abs(margin))) + std::max(-margin, 0.0) + 0.5 * l2_ * dot(theta, theta);
  if (!grad.empty()) {
    const double coeff = -s * (1.0 - sigmoid(margin));
    for (std::size_t j = 0; j < theta.size(); ++j) grad[j] = coeff * x[j] + l2_ * theta[j];
  }
  return value;
}

double LogisticRegressionProblem::probability(std::size_t i, std::span<const double> theta,
                                              std::span<double> grad) const {
  const double s = labels_.at(i) == 1 ? 1.0 : -1.0;
  const auto x = features_.row(i);
  const double p = sigmoid(s * dot(theta, x));
  if (!grad.empty()) {
    for (std::size_t j = 0; j < theta.size(); ++j) grad[j] = p * (1.0 - p) * s * x[j];
  }
  return p;
}

Vector LogisticRegressionProblem::fit(std::span<const double> weights, std::size_t max_iters) const {
  const std::size_t n = num_instances(), p = num_params();
  Vector w(n, 1.0);
  if (!weights.empty()) {
    check_same_dim(weights.size(), n, "logistic fit weights");
    w.assign(weights.begin(), weights.end());
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0.0)) throw std::invalid_argument("logistic fit: no instance carries weight");
  Vector theta(p, 0.0);
  for (std::size_t it = 0; it < max_iters; ++it) {
    Vector g(p, 0.0);
    DenseMatrix h(p, p);
    for (std::size_t i = 0; i < n; ++i) {
      if (w[i] == 0.0) continue;
      const double s = labels_[i] == 1 ? 1.0 : -1.0;
      const auto x = features_.row(i);
      const double sig = sigmoid(s * dot(theta, x));
      const double wi = w[i] / total;
      for (std::size_t a = 0; a < p; ++a) {
        g[a] += wi * (-s * (1.0 - sig) * x[a]);
        for (std::size_t b = 0; b < p; ++b) h(a, b) += wi * sig * (1.0 - sig) * x[a] * x[b];
      }
    }
    for (std::size_t a = 0; a < p; ++a) {
      g[a] += l2_ * theta[a];
      h(a, a) += l2_;
    }
    const Vector step = solve_linear(h, g);
    axpy(-1.0, step, theta);
    if (norm2(step) < 1e-14) break;
  }
  return theta;
}

ParamScope parse_param_scope(const std::string& name) {
  if (name == "head") return ParamScope::Head;
  if (name == "last_layer") return ParamScope::LastLayer;
  if (name == "embedding") return ParamScope::Embedding;
  if (name == "embedding+last_layer") return ParamScope::EmbeddingAndLastLayer;
  if (name == "all") return ParamScope::All;
  throw std::invalid_argument("unknown parameter scope '" + name + "'");
}

std::string to_string(ParamScope scope) {
  switch (scope) {
    case ParamScope::Head: return "head";
    case ParamScope::LastLayer: return "last_layer";
    case ParamScope::Embedding: return "embedding";
    case ParamScope::EmbeddingAndLastLayer: return "embedding+last_layer";
    case ParamScope::All: return "all";
  }
  return "?";
}

std::vector<std::size_t> scope_indices(const EncoderParams& params, const Verbalizer& verbalizer, ParamScope scope) {
  const auto& layout = params.layout();
  const std::size_t d = params.config().dim;
  std::vector<std::size_t> idx;
  auto range = [&](std::size_t begin, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) idx.push_back(begin + i);
  };
  auto last_layer = [&] {
    if (layout.layers.empty()) return;
    const auto& o = layout.layers.back();
    range(o.begin, o.end - o.begin);
  };
  switch (scope) {
    case ParamScope::Head: {
      std::vector<TokenId> words = verbalizer.words();
      std::sort(words.begin(), words.end());
      for (TokenId w : words) range(layout.embedding + w * d, d);
      range(layout.final_gain, d);
      range(layout.final_bias, d);
      break;
    }
    case ParamScope::LastLayer:
      last_layer();
      break;
    case ParamScope::Embedding:
      range(layout.embedding, params.config().vocab_size * d);
      break;
    case ParamScope::EmbeddingAndLastLayer:
      range(layout.embedding, params.config().vocab_size * d);
      last_layer();
      break;
    case ParamScope::All:
      range(0, params.size());
      break;
  }
  return idx;
}

PipelineInfluenceProblem::PipelineInfluenceProblem(const RetroPipeline& pipeline, const EncoderParams& params,
                                                   StoreContext store, std::span<const Example> trainset,
                                                   std::vector<std::size_t> scope)
    : pipeline_(&pipeline),
      store_(store),
      trainset_(trainset),
      scope_(std::move(scope)),
      work_(params),
      full_grad_(params.size(), 0.0) {
  if (trainset_.empty()) throw std::invalid_argument("influence problem: empty training set");
  for (std::size_t i : scope_) {
    if (i >= params.size()) throw std::out_of_range("influence problem: scope index outside parameters");
  }
}

Vector PipelineInfluenceProblem::theta() const {
  Vector t(scope_.size());
  for (std::size_t j = 0; j < scope_.size(); ++j) t[j] = work_.values()[scope_[j]];
  return t;
}

void PipelineInfluenceProblem::load_theta(std::span<const double> theta) const {
  check_same_dim(theta.size(), scope_.size(), "influence theta");
  for (std::size_t j = 0; j < scope_.size(); ++j) work_.values()[scope_[j]] = theta[j];
}

void PipelineInfluenceProblem::gather(std::span<const double> full, std::span<double> out) const {
  for (std::size_t j = 0; j < scope_.size(); ++j) out[j] = full[scope_[j]];
}

double PipelineInfluenceProblem::loss(std::size_t i, std::span<const double> theta, std::span<double> grad) const {
  load_theta(theta);
  if (grad.empty()) return pipeline_->train_loss(work_, store_, trainset_[i]).loss;
  std::fill(full_grad_.begin(), full_grad_.end(), 0.0);
  const double value = pipeline_->train_loss(work_, store_, trainset_[i], full_grad_, 1.0).loss;
  gather(full_grad_, grad);
  return value;
}

double PipelineInfluenceProblem::probability(std::size_t i, std::span<const double> theta,
                                             std::span<double> grad) const {
  load_theta(theta);
  const auto& ex = trainset_[i];
  if (grad.empty()) return pipeline_->gold_probability(work_, store_, ex, ex.source_id);
  std::fill(full_grad_.begin(), full_grad_.end(), 0.0);
  const double value = pipeline_->gold_probability(work_, store_, ex, ex.source_id, full_grad_);
  gather(full_grad_, grad);
  return value;
}

namespace {

GroupSummary summarize(std::span<const MemorizationRecord* const> members) {
  GroupSummary g;
  g.count = members.size();
  if (members.empty()) return g;
  for (const auto* r : members) {
    g.mean_score += r->score;
    g.mean_feature += r->feature;
  }
  g.mean_score /= static_cast<double>(members.size());
  g.mean_feature /= static_cast<double>(members.size());
  return g;
}

struct Groups {
  std::vector<const MemorizationRecord*> top, all, bottom;
};

// `sorted` is already in descending score order.
Groups split_groups(const std::vector<const MemorizationRecord*>& sorted, double fraction) {
  Groups g;
  g.all = sorted;
  const std::size_t n = sorted.size();
  const auto take = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-12)));
  g.top.assign(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(take));
  g.bottom.assign(sorted.end() - static_cast<std::ptrdiff_t>(take), sorted.end());
  return g;
}

}  // namespace

MemorizationReport group_report(std::vector<MemorizationRecord> records, double fraction) {
  if (records.empty()) throw std::invalid_argument("group_report: no records");
  if (!(fraction > 0.0 && fraction <= 0.5)) throw std::invalid_argument("group_report: fraction must lie in (0, 0.5]");
  std::sort(records.begin(), records.end(), [](const MemorizationRecord& a, const MemorizationRecord& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.source_id < b.source_id;
  });
  MemorizationReport rep;
  rep.records = std::move(records);
  rep.fraction = fraction;

  std::vector<const MemorizationRecord*> sorted;
  for (const auto& r : rep.records) sorted.push_back(&r);
  const auto groups = split_groups(sorted, fraction);
  rep.top = summarize(groups.top);
  rep.all = summarize(groups.all);
  rep.bottom = summarize(groups.bottom);
  for (const auto* r : groups.top) rep.top_members.push_back(r->source_id);
  for (const auto* r : groups.bottom) rep.bottom_members.push_back(r->source_id);

  for (const auto& r : rep.records) {
    if (std::find(rep.labels.begin(), rep.labels.end(), r.label) == rep.labels.end()) rep.labels.push_back(r.label);
  }
  std::sort(rep.labels.begin(), rep.labels.end());
  for (auto label : rep.labels) {
    std::vector<const MemorizationRecord*> within;
    for (const auto* r : sorted)
      if (r->label == label) within.push_back(r);
    const auto g = split_groups(within, fraction);
    rep.top_by_label.push_back(summarize(g.top));
    rep.all_by_label.push_back(summarize(g.all));
    rep.bottom_by_label.push_back(summarize(g.bottom));
  }
  return rep;
}

void write_report(const MemorizationReport& report, std::ostream& out) {
  out << std::setprecision(10);
  out << "source_id\tscore\tF_knn\tlabel\tfeature\n";
  for (const auto& r : report.records) {
    out << r.source_id << '\t' << r.score << '\t' << r.factor << '\t' << r.label << '\t' << r.feature << '\n';
  }
  const int pct = static_cast<int>(std::lround(report.fraction * 100.0));
  out << "\n# group\tall_feature_mean\tall_score_mean";
  for (auto label : report.labels) out << "\tlabel" << label << "_feature_mean";
  out << '\n';
  auto row = [&](const std::string& name, const GroupSummary& g, const std::vector<GroupSummary>& by_label) {
    out << name << '\t' << g.mean_feature << '\t' << g.mean_score;
    for (const auto& s : by_label) out << '\t' << s.mean_feature;
    out << '\n';
  };
  row("Top-" + std::to_string(pct) + "%", report.top, report.top_by_label);
  row("ALL", report.all, report.all_by_label);
  row("Bottom-" + std::to_string(pct) + "%", report.bottom, report.bottom_by_label);
}

}  // namespace retro
