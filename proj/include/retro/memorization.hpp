#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "retro/encoder.hpp"
#include "retro/numerics.hpp"
#include "retro/pipeline.hpp"

namespace retro {

// A trained model seen as a function of a parameter vector theta: per-instance
// training loss L(z_i, theta) and the probability functional P(y_i | x_i; theta).
// Gradients are written (not accumulated) into `grad` when it is non-empty.
class InfluenceProblem {
 public:
  virtual ~InfluenceProblem() = default;
  virtual std::size_t num_params() const = 0;
  virtual std::size_t num_instances() const = 0;
  virtual double loss(std::size_t i, std::span<const double> theta, std::span<double> grad) const = 0;
  virtual double probability(std::size_t i, std::span<const double> theta, std::span<double> grad) const = 0;
};

enum class InfluenceSolver { ExplicitInverse, ConjugateGradient };

struct InfluenceConfig {
  double damping = 1e-3;
  InfluenceSolver solver = InfluenceSolver::ExplicitInverse;
  std::size_t cg_max_iters = 500;
  double cg_tol = 1e-10;  // relative residual
  double fd_step = 1e-4;
  std::size_t max_explicit_params = 5000;
};

class ScopeTooLarge : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Vector grad_prob(const InfluenceProblem& problem, std::size_t i, std::span<const double> theta);
Vector grad_loss(const InfluenceProblem& problem, std::size_t i, std::span<const double> theta);

// Mean gradient of the training loss over all instances.
Vector mean_loss_grad(const InfluenceProblem& problem, std::span<const double> theta);

// (1/n) sum_i Hessian of L(z_i), by central differences of gradients, symmetrised.
DenseMatrix hessian(const InfluenceProblem& problem, std::span<const double> theta, double step = 1e-4,
                    std::size_t max_params = 5000);

// H v by central differences of the mean gradient along v.
Vector hessian_vector_product(const InfluenceProblem& problem, std::span<const double> theta,
                              std::span<const double> v, double step = 1e-4);

struct CgResult {
  Vector x;
  std::size_t iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

using LinearOperator = std::function<Vector(std::span<const double>)>;

// Solves A x = b for symmetric A given only products A v. Stops when
// |r| <= tol |b| or after max_iters; also stops on non-positive curvature.
CgResult conjugate_gradient(const LinearOperator& apply, std::span<const double> b, std::size_t max_iters, double tol);

struct ScoreResult {
  double score = 0.0;
  bool valid = true;
  std::size_t cg_iterations = 0;
  std::string message;
};

// Self-influence S(z) = -grad P(z)^T (H + damping I)^{-1} grad L(z). The
// explicit solver factors H once and reuses it across instances.
class MemorizationScorer {
 public:
  MemorizationScorer(const InfluenceProblem& problem, Vector theta, InfluenceConfig config);

  ScoreResult score(std::size_t i) const;
  const DenseMatrix& damped_hessian() const;
  // (H + damping I)^{-1} b with the configured solver.
  CgResult solve(std::span<const double> b) const;

 private:
  const InfluenceProblem* problem_;
  Vector theta_;
  InfluenceConfig config_;
  mutable DenseMatrix damped_;
  mutable bool have_hessian_ = false;
};

ScoreResult memorization_score(const InfluenceProblem& problem, std::size_t i, std::span<const double> theta,
                               const InfluenceConfig& config);

// L2-regularised logistic regression, y in {0, 1}, no intercept column added.
// Loss of instance i: -ln sigma(s_i theta.x_i) + (l2 / 2)|theta|^2 with s_i = +-1.
class LogisticRegressionProblem : public InfluenceProblem {
 public:
  LogisticRegressionProblem(DenseMatrix features, std::vector<int> labels, double l2);

  std::size_t num_params() const override { return features_.cols(); }
  std::size_t num_instances() const override { return features_.rows(); }
  double loss(std::size_t i, std::span<const double> theta, std::span<double> grad) const override;
  double probability(std::size_t i, std::span<const double> theta, std::span<double> grad) const override;

  // Newton's method on the (optionally weighted) mean loss; weight 0 drops an instance.
  Vector fit(std::span<const double> weights = {}, std::size_t max_iters = 100) const;

 private:
  DenseMatrix features_;
  std::vector<int> labels_;
  double l2_;
};

enum class ParamScope { Head, LastLayer, Embedding, EmbeddingAndLastLayer, All };

ParamScope parse_param_scope(const std::string& name);
std::string to_string(ParamScope scope);

// Flat indices into EncoderParams::values() covered by a scope. Head is the
// label-word rows of the tied embedding plus the final layer norm.
std::vector<std::size_t> scope_indices(const EncoderParams& params, const Verbalizer& verbalizer, ParamScope scope);

// The trained retrieval-augmented model restricted to a parameter scope. Loss
// is the training loss the run optimised; probability is the interpolated
// prediction of the gold class. Both use leave-one-out retrieval.
// Not thread-safe: evaluations write into an internal working copy.
class PipelineInfluenceProblem : public InfluenceProblem {
 public:
  PipelineInfluenceProblem(const RetroPipeline& pipeline, const EncoderParams& params, StoreContext store,
                           std::span<const Example> trainset, std::vector<std::size_t> scope);

  std::size_t num_params() const override { return scope_.size(); }
  std::size_t num_instances() const override { return trainset_.size(); }
  double loss(std::size_t i, std::span<const double> theta, std::span<double> grad) const override;
  double probability(std::size_t i, std::span<const double> theta, std::span<double> grad) const override;

  Vector theta() const;

 private:
  void load_theta(std::span<const double> theta) const;
  void gather(std::span<const double> full, std::span<double> out) const;

  const RetroPipeline* pipeline_;
  StoreContext store_;
  std::span<const Example> trainset_;
  std::vector<std::size_t> scope_;
  mutable EncoderParams work_;
  mutable ParamGradient full_grad_;
};

struct MemorizationRecord {
  std::uint64_t source_id = 0;
  double score = 0.0;
  double factor = 0.0;  // F(p_kNN) at convergence
  std::uint32_t label = 0;
  double feature = 0.0;
  bool valid = true;
};

struct GroupSummary {
  std::size_t count = 0;
  double mean_score = 0.0;
  double mean_feature = 0.0;
};

struct MemorizationReport {
  std::vector<MemorizationRecord> records;  // sorted by score descending, ties by source_id
  double fraction = 0.1;
  std::vector<std::uint64_t> top_members;
  std::vector<std::uint64_t> bottom_members;
  GroupSummary top, all, bottom;
  // Same three groups computed within each label.
  std::vector<std::uint32_t> labels;
  std::vector<GroupSummary> top_by_label, all_by_label, bottom_by_label;
};

MemorizationReport group_report(std::vector<MemorizationRecord> records, double fraction);

// Tab-separated rows (source_id, score, F_knn, label, feature) followed by a
// summary block of group x feature-mean.
void write_report(const MemorizationReport& report, std::ostream& out);

}  // namespace retro
