#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "retrainaudit/common.hpp"

namespace retrainaudit::learner {

struct TrainConfig {
  double learning_rate = 0.1;
  double l2 = 1e-3;       // applied to weights, not the bias
  int max_iter = 500;
  double tol = 1e-8;      // gradient-norm stopping threshold
  std::uint64_t seed = 0; // unused by deterministic full-batch training
  bool include_protected = false;
};

enum class ModelKind { logreg, naive_bayes, constant };

ModelKind model_kind_from_string(std::string_view s);
std::string to_string(ModelKind k);

// Per-feature z-score transform fitted on the training split only.
// Constant features get sd = 1 so standardized values are exactly zero.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> sd;

  static Standardizer fit(const Matrix& x);
  std::vector<double> apply(std::span<const double> x) const;
  Matrix apply(const Matrix& x) const;
};

// Raised when a training set cannot produce a discriminative model
// (e.g. a single-class bootstrap resample). Callers decide the fallback.
struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Model {
  ModelKind kind = ModelKind::logreg;
  std::vector<std::string> feature_names;
  Standardizer standardizer;
  double decision_threshold = 0.5;

  // logreg
  std::vector<double> weights;
  double bias = 0.0;
  bool converged = false;
  int iterations = 0;

  // naive_bayes: class-conditional Gaussians + prior
  std::vector<double> nb_mean0, nb_var0, nb_mean1, nb_var1;
  double nb_prior1 = 0.5;

  // constant fallback
  double constant_score = 0.5;

  double predict_proba(std::span<const double> x) const;
  int predict(std::span<const double> x) const;  // 1 iff proba >= threshold

  nlohmann::json to_json() const;
  static Model from_json(const nlohmann::json& j);
};

struct Dataset {
  std::vector<std::string> feature_names;
  Matrix x;
  std::vector<int> y;
};

// Trains on the full batch. Logistic regression uses plain gradient descent
// on the L2-regularized mean negative log-likelihood from zero-initialized
// weights, so retraining on the same rows is bit-deterministic and
// independent of row order up to accumulator rounding.
Model fit(const Dataset& train, const TrainConfig& cfg,
          ModelKind kind = ModelKind::logreg);

// Score-constant fallback used when training is impossible.
Model constant_model(double score, std::vector<std::string> feature_names,
                     double decision_threshold = 0.5);

// Loss and gradient of the regularized objective at (w, b); exposed for the
// finite-difference oracle.
double logreg_loss(const Matrix& x_std, std::span<const int> y,
                   std::span<const double> w, double b, double l2);
void logreg_grad(const Matrix& x_std, std::span<const int> y,
                 std::span<const double> w, double b, double l2,
                 std::span<double> grad_w, double& grad_b);

}  // namespace retrainaudit::learner
