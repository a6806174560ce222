#include "retrainaudit/learner.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace retrainaudit::learner {

ModelKind model_kind_from_string(std::string_view s) {
  if (s == "logreg") return ModelKind::logreg;
  if (s == "naive_bayes") return ModelKind::naive_bayes;
  if (s == "constant") return ModelKind::constant;
  throw ConfigError("unknown model kind: '" + std::string(s) + "'");
}

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::logreg: return "logreg";
    case ModelKind::naive_bayes: return "naive_bayes";
    case ModelKind::constant: return "constant";
  }
  return "?";
}

Standardizer Standardizer::fit(const Matrix& x) {
  Standardizer s;
  s.mean.assign(x.cols, 0.0);
  s.sd.assign(x.cols, 1.0);
  if (x.rows == 0) return s;
  for (std::size_t j = 0; j < x.cols; ++j) {
    long double sum = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) sum += x.at(i, j);
    s.mean[j] = static_cast<double>(sum / x.rows);
    long double ss = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double d = x.at(i, j) - s.mean[j];
      ss += static_cast<long double>(d) * d;
    }
    const double var = static_cast<double>(ss / x.rows);
    s.sd[j] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

std::vector<double> Standardizer::apply(std::span<const double> x) const {
  if (x.size() != mean.size())
    throw InternalError("standardizer: dimension mismatch");
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / sd[j];
  return out;
}

Matrix Standardizer::apply(const Matrix& x) const {
  if (x.cols != mean.size())
    throw InternalError("standardizer: dimension mismatch");
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j)
      out.at(i, j) = (x.at(i, j) - mean[j]) / sd[j];
  return out;
}

namespace {

double sigmoid(double z) {
  if (z >= 0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_finite(const Matrix& x) {
  for (double v : x.data)
    if (!std::isfinite(v)) throw TrainError("non-finite feature value");
}

}  // namespace

double logreg_loss(const Matrix& x_std, std::span<const int> y,
                   std::span<const double> w, double b, double l2) {
  const std::size_t n = x_std.rows;
  long double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x_std.row(i);
    double z = b;
    for (std::size_t j = 0; j < x_std.cols; ++j) z += w[j] * xi[j];
    // -log p(y|z) in a numerically stable form: log(1+e^z) - y*z
    const double softplus = z > 30 ? z : std::log1p(std::exp(z));
    loss += softplus - (y[i] != 0 ? z : 0.0);
  }
  loss /= static_cast<long double>(n);
  long double reg = 0.0;
  for (double wj : w) reg += static_cast<long double>(wj) * wj;
  return static_cast<double>(loss + 0.5L * l2 * reg);
}

void logreg_grad(const Matrix& x_std, std::span<const int> y,
                 std::span<const double> w, double b, double l2,
                 std::span<double> grad_w, double& grad_b) {
  const std::size_t n = x_std.rows;
  const std::size_t d = x_std.cols;
  // long double accumulators keep the result stable under row permutation
  std::vector<long double> gw(d, 0.0L);
  long double gb = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x_std.row(i);
    double z = b;
    for (std::size_t j = 0; j < d; ++j) z += w[j] * xi[j];
    const double r = sigmoid(z) - (y[i] != 0 ? 1.0 : 0.0);
    for (std::size_t j = 0; j < d; ++j) gw[j] += static_cast<long double>(r) * xi[j];
    gb += r;
  }
  for (std::size_t j = 0; j < d; ++j)
    grad_w[j] = static_cast<double>(gw[j] / n) + l2 * w[j];
  grad_b = static_cast<double>(gb / n);
}

Model fit(const Dataset& train, const TrainConfig& cfg, ModelKind kind) {
  if (cfg.learning_rate <= 0) throw ConfigError("learning_rate must be > 0");
  if (cfg.max_iter < 1) throw ConfigError("max_iter must be >= 1");
  const std::size_t n = train.x.rows;
  const std::size_t d = train.x.cols;
  if (train.y.size() != n) throw InternalError("fit: labels/rows mismatch");
  check_finite(train.x);

  std::size_t n_pos = 0;
  for (int v : train.y) n_pos += (v != 0);
  if (n_pos == 0 || n_pos == n) throw TrainError("single-class training set");

  Model m;
  m.kind = kind;
  m.feature_names = train.feature_names;
  m.standardizer = Standardizer::fit(train.x);

  if (kind == ModelKind::naive_bayes) {
    m.nb_mean0.assign(d, 0.0);
    m.nb_var0.assign(d, 1.0);
    m.nb_mean1.assign(d, 0.0);
    m.nb_var1.assign(d, 1.0);
    const Matrix xs = m.standardizer.apply(train.x);
    for (std::size_t j = 0; j < d; ++j) {
      long double s0 = 0, s1 = 0;
      for (std::size_t i = 0; i < n; ++i)
        (train.y[i] != 0 ? s1 : s0) += xs.at(i, j);
      m.nb_mean0[j] = static_cast<double>(s0 / (n - n_pos));
      m.nb_mean1[j] = static_cast<double>(s1 / n_pos);
      long double v0 = 0, v1 = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double c = xs.at(i, j) -
                         (train.y[i] != 0 ? m.nb_mean1[j] : m.nb_mean0[j]);
        (train.y[i] != 0 ? v1 : v0) += static_cast<long double>(c) * c;
      }
      // variance floor keeps likelihoods finite on constant columns
      m.nb_var0[j] = std::max(1e-9, static_cast<double>(v0 / (n - n_pos)));
      m.nb_var1[j] = std::max(1e-9, static_cast<double>(v1 / n_pos));
    }
    m.nb_prior1 = static_cast<double>(n_pos) / static_cast<double>(n);
    return m;
  }

  if (kind != ModelKind::logreg) throw ConfigError("fit: unsupported model kind");

  const Matrix xs = m.standardizer.apply(train.x);
  m.weights.assign(d, 0.0);
  m.bias = 0.0;
  std::vector<double> gw(d, 0.0);
  double gb = 0.0;
  m.converged = false;
  int it = 0;
  for (; it < cfg.max_iter; ++it) {
    logreg_grad(xs, train.y, m.weights, m.bias, cfg.l2, gw, gb);
    double norm2 = gb * gb;
    for (double g : gw) norm2 += g * g;
    if (std::sqrt(norm2) <= cfg.tol) {
      m.converged = true;
      break;
    }
    for (std::size_t j = 0; j < d; ++j) m.weights[j] -= cfg.learning_rate * gw[j];
    m.bias -= cfg.learning_rate * gb;
  }
  m.iterations = it;
  return m;
}

Model constant_model(double score, std::vector<std::string> feature_names,
                     double decision_threshold) {
  Model m;
  m.kind = ModelKind::constant;
  m.feature_names = std::move(feature_names);
  m.standardizer.mean.assign(m.feature_names.size(), 0.0);
  m.standardizer.sd.assign(m.feature_names.size(), 1.0);
  m.decision_threshold = decision_threshold;
  m.constant_score = score;
  return m;
}

double Model::predict_proba(std::span<const double> x) const {
  if (kind == ModelKind::constant) return constant_score;
  const std::vector<double> xs = standardizer.apply(x);
  if (kind == ModelKind::logreg) {
    double z = bias;
    for (std::size_t j = 0; j < xs.size(); ++j) z += weights[j] * xs[j];
    return sigmoid(z);
  }
  // Gaussian naive Bayes posterior for class 1, in log space.
  double log0 = std::log1p(-nb_prior1);
  double log1 = std::log(nb_prior1);
  for (std::size_t j = 0; j < xs.size(); ++j) {
    const double d0 = xs[j] - nb_mean0[j];
    const double d1 = xs[j] - nb_mean1[j];
    log0 += -0.5 * (std::log(2 * M_PI * nb_var0[j]) + d0 * d0 / nb_var0[j]);
    log1 += -0.5 * (std::log(2 * M_PI * nb_var1[j]) + d1 * d1 / nb_var1[j]);
  }
  const double mx = std::max(log0, log1);
  const double p1 = std::exp(log1 - mx);
  return p1 / (p1 + std::exp(log0 - mx));
}

int Model::predict(std::span<const double> x) const {
  return predict_proba(x) >= decision_threshold ? 1 : 0;
}

nlohmann::json Model::to_json() const {
  nlohmann::json j;
  j["kind"] = to_string(kind);
  j["feature_names"] = feature_names;
  j["standardizer"] = {{"mean", standardizer.mean}, {"sd", standardizer.sd}};
  j["decision_threshold"] = decision_threshold;
  switch (kind) {
    case ModelKind::logreg:
      j["weights"] = weights;
      j["bias"] = bias;
      j["converged"] = converged;
      j["iterations"] = iterations;
      break;
    case ModelKind::naive_bayes:
      j["mean0"] = nb_mean0;
      j["var0"] = nb_var0;
      j["mean1"] = nb_mean1;
      j["var1"] = nb_var1;
      j["prior1"] = nb_prior1;
      break;
    case ModelKind::constant:
      j["score"] = constant_score;
      break;
  }
  return j;
}

Model Model::from_json(const nlohmann::json& j) {
  Model m;
  m.kind = model_kind_from_string(j.at("kind").get<std::string>());
  m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  m.standardizer.mean = j.at("standardizer").at("mean").get<std::vector<double>>();
  m.standardizer.sd = j.at("standardizer").at("sd").get<std::vector<double>>();
  m.decision_threshold = j.at("decision_threshold").get<double>();
  switch (m.kind) {
    case ModelKind::logreg:
      m.weights = j.at("weights").get<std::vector<double>>();
      m.bias = j.at("bias").get<double>();
      m.converged = j.value("converged", false);
      m.iterations = j.value("iterations", 0);
      break;
    case ModelKind::naive_bayes:
      m.nb_mean0 = j.at("mean0").get<std::vector<double>>();
      m.nb_var0 = j.at("var0").get<std::vector<double>>();
      m.nb_mean1 = j.at("mean1").get<std::vector<double>>();
      m.nb_var1 = j.at("var1").get<std::vector<double>>();
      m.nb_prior1 = j.at("prior1").get<double>();
      break;
    case ModelKind::constant:
      m.constant_score = j.at("score").get<double>();
      break;
  }
  return m;
}

}  // namespace retrainaudit::learner
