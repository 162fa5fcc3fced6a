#pragma once

// Step 2: combine calibrated embeddings, U(alpha) = sum_i alpha_i U_i, with
// alpha on the open simplex. alpha is carried as softmax(z) and descended
// through z, so every iterate is strictly positive and sums to one.

#include "lego/calibration.hpp"

namespace lego {

struct CombinationWeights {
  Vector alpha;

  [[nodiscard]] bool on_simplex(double tol = 1e-9) const {
    return alpha.size() > 0 && (alpha.array() > 0.0).all() && std::abs(alpha.sum() - 1.0) <= tol;
  }
};

inline CombinationWeights project_simplex_softmax(const Vector& logits) {
  if (logits.size() == 0) throw Error("project_simplex_softmax: empty vector");
  if (!logits.allFinite()) throw NumericError("project_simplex_softmax: non-finite input");
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp().matrix();
  return {e / e.sum()};
}

inline void check_same_shape(const std::vector<Matrix>& embeddings) {
  if (embeddings.empty()) throw Error("combine: no embeddings");
  for (const auto& m : embeddings)
    if (m.rows() != embeddings.front().rows() || m.cols() != embeddings.front().cols())
      throw ShapeError("combine: embeddings have different shapes");
}

inline Matrix combine(const std::vector<Matrix>& embeddings, const Vector& alpha) {
  check_same_shape(embeddings);
  if (alpha.size() != static_cast<Eigen::Index>(embeddings.size()))
    throw ShapeError("combine: " + std::to_string(alpha.size()) + " weights for " + std::to_string(embeddings.size()) +
                     " embeddings");
  Matrix out = alpha[0] * embeddings[0];
  for (std::size_t i = 1; i < embeddings.size(); ++i) out += alpha[static_cast<Eigen::Index>(i)] * embeddings[i];
  return out;
}

struct CombinationConfig {
  int iterations = 500;
  int batch_size = 256;
  double learning_rate = 3e-4;  // step on the softmax logits
  int inner_steps = 1;
  VariationalConfig variational{100, 1e-3};
  std::uint64_t seed = 11;

  void validate() const {
    if (iterations < 0 || batch_size < 2 || learning_rate <= 0.0 || inner_steps < 1)
      throw Error("CombinationConfig: need iterations >= 0, batch >= 2, positive step size, inner_steps >= 1");
  }
};

struct CombinationTraceRow {
  int iteration = 0;
  double mi_sum = 0.0;
  std::vector<double> alpha;
};

struct CombinationResult {
  CombinationWeights weights;
  Matrix embedding;
  std::vector<std::string> attributes;
  std::vector<double> attribute_mi;  // final per-attribute estimate; empty for plain averaging
  std::vector<CombinationTraceRow> trace;
};

struct CombinationObjective {
  double value = 0.0;                // sum_t I_hat_t on the batch
  std::vector<double> per_attribute;
  Matrix input_gradient;             // d value / d U(alpha)[rows]
  Vector alpha_gradient;             // d value / d alpha_i
};

// Summed vCLUB estimates of U(alpha)[rows] under fixed networks, with the
// exact gradient in alpha: d/d alpha_i = <dI/dU(alpha), U_i> over the batch.
inline CombinationObjective combination_objective(const std::vector<DenseNetwork>& networks,
                                                  const std::vector<Matrix>& batch_embeddings,
                                                  const std::vector<Labels>& batch_labels, const Vector& alpha) {
  if (networks.size() != batch_labels.size()) throw ShapeError("combination_objective: networks/labels mismatch");
  const Matrix x = combine(batch_embeddings, alpha);
  CombinationObjective out;
  out.input_gradient = Matrix::Zero(x.rows(), x.cols());
  for (std::size_t t = 0; t < networks.size(); ++t) {
    const auto est = vclub_value_and_input_gradient(networks[t], x, batch_labels[t]);
    out.value += est.value;
    out.per_attribute.push_back(est.value);
    out.input_gradient += est.input_gradient;
  }
  out.alpha_gradient.resize(static_cast<Eigen::Index>(batch_embeddings.size()));
  for (std::size_t i = 0; i < batch_embeddings.size(); ++i)
    out.alpha_gradient[static_cast<Eigen::Index>(i)] = out.input_gradient.cwiseProduct(batch_embeddings[i]).sum();
  return out;
}

// Chain rule through alpha = softmax(z).
inline Vector softmax_logit_gradient(const Vector& alpha, const Vector& alpha_gradient) {
  return alpha.cwiseProduct((alpha_gradient.array() - alpha.dot(alpha_gradient)).matrix());
}

namespace detail {

inline void check_attributes(const std::vector<AttributeLabels>& attributes, Eigen::Index users) {
  if (attributes.empty()) throw Error("combination: no attributes");
  for (const auto& a : attributes) check_labels(a.labels, users, a.cardinality);
}

inline std::vector<VariationalModel> fresh_models(const std::vector<AttributeLabels>& attributes, int dim,
                                                  const VariationalConfig& config, std::uint64_t seed) {
  std::vector<VariationalModel> models;
  for (const auto& a : attributes)
    models.emplace_back(dim, a.cardinality, derive_seed(seed, "phi:" + a.name), config, a.name);
  return models;
}

inline std::vector<DenseNetwork> networks_of(const std::vector<VariationalModel>& models) {
  std::vector<DenseNetwork> nets;
  for (const auto& m : models) nets.push_back(m.net);
  return nets;
}

}  // namespace detail

inline CombinationResult optimize_weights(const std::vector<Matrix>& calibrated,
                                          const std::vector<AttributeLabels>& attributes,
                                          const CombinationConfig& config) {
  config.validate();
  if (calibrated.empty()) throw Error("optimize_weights: k = 0");
  check_same_shape(calibrated);
  const auto n = static_cast<int>(calibrated.front().rows());
  detail::check_attributes(attributes, n);

  const auto k = static_cast<Eigen::Index>(calibrated.size());
  Vector logits = Vector::Zero(k);
  CombinationResult result;
  result.weights = project_simplex_softmax(logits);
  for (const auto& a : attributes) result.attributes.push_back(a.name);
  auto models = detail::fresh_models(attributes, static_cast<int>(calibrated.front().cols()), config.variational,
                                     config.seed);
  BatchSampler sampler(n, config.batch_size, derive_seed(config.seed, "combine-batches"));
  Adam logit_opt(AdamConfig{config.learning_rate});
  std::vector<Matrix> batch_u(calibrated.size());
  std::vector<Labels> batch_y(attributes.size());
  result.trace.reserve(static_cast<std::size_t>(config.iterations));

  for (int it = 0; it < config.iterations; ++it) {
    const auto rows = sampler.next();
    for (std::size_t i = 0; i < calibrated.size(); ++i) batch_u[i] = gather_rows(calibrated[i], rows);
    for (std::size_t t = 0; t < attributes.size(); ++t) batch_y[t] = gather_labels(attributes[t].labels, rows);
    const Matrix x = combine(batch_u, result.weights.alpha);
    for (std::size_t t = 0; t < models.size(); ++t)
      for (int s = 0; s < config.inner_steps; ++s) fit_variational_step(models[t], x, batch_y[t]);
    const auto obj = combination_objective(detail::networks_of(models), batch_u, batch_y, result.weights.alpha);
    logit_opt.step(logits, softmax_logit_gradient(result.weights.alpha, obj.alpha_gradient));
    result.weights = project_simplex_softmax(logits);
    result.trace.push_back(
        {it, obj.value, std::vector<double>(result.weights.alpha.data(), result.weights.alpha.data() + k)});
  }
  result.embedding = combine(calibrated, result.weights.alpha);
  for (std::size_t t = 0; t < models.size(); ++t)
    result.attribute_mi.push_back(mi_over_embedding(models[t], result.embedding, attributes[t].labels,
                                                    config.batch_size, 1, derive_seed(config.seed, "combine-eval")));
  return result;
}

// Uniform weights, no optimization.
inline CombinationResult average_combination(const std::vector<Matrix>& calibrated) {
  if (calibrated.empty()) throw Error("average_combination: k = 0");
  CombinationResult result;
  const auto k = static_cast<Eigen::Index>(calibrated.size());
  result.weights.alpha = Vector::Constant(k, 1.0 / static_cast<double>(k));
  result.embedding = combine(calibrated, result.weights.alpha);
  return result;
}

struct JointTraceRow {
  int iteration = 0;
  double mi_sum = 0.0;
};

struct JointResult {
  std::vector<Matrix> embeddings;  // U_i, each inside the eps-ball around U_0
  CombinationWeights weights;
  Matrix combined;
  double final_mi_sum = 0.0;  // mean of the summed batch estimate over the last 10% of iterations
  std::vector<JointTraceRow> trace;
};

// End-to-end comparator: all U_i and alpha updated together against the
// summed vCLUB objective, with ball and softmax projections. Uses the
// calibration iteration count, batch size and embedding step size, and the
// combination step size for the logits.
inline JointResult joint_unlearn(const Matrix& u0, const std::vector<AttributeLabels>& attributes,
                                 const CalibrationConfig& calibration, const CombinationConfig& combination) {
  calibration.validate();
  combination.validate();
  const auto n = static_cast<int>(u0.rows());
  detail::check_attributes(attributes, n);
  const double eps = calibration.eps_ratio * n;
  const std::size_t k = attributes.size();

  JointResult result;
  result.embeddings.assign(k, u0);
  Vector logits = Vector::Zero(static_cast<Eigen::Index>(k));
  result.weights = project_simplex_softmax(logits);
  const std::uint64_t seed = derive_seed(calibration.seed, "joint");
  auto models = detail::fresh_models(attributes, static_cast<int>(u0.cols()), calibration.variational, seed);
  BatchSampler sampler(n, calibration.batch_size, derive_seed(seed, "batches"));
  std::vector<Adam> embedding_opts(k, Adam(AdamConfig{calibration.learning_rate}));
  Adam logit_opt(AdamConfig{combination.learning_rate});
  std::vector<Matrix> batch_u(k);
  std::vector<Labels> batch_y(k);
  Matrix grad = Matrix::Zero(u0.rows(), u0.cols());

  const bool frozen = eps == 0.0;
  for (int it = 0; it < calibration.iterations; ++it) {
    const auto rows = sampler.next();
    for (std::size_t i = 0; i < k; ++i) batch_u[i] = gather_rows(result.embeddings[i], rows);
    for (std::size_t t = 0; t < k; ++t) batch_y[t] = gather_labels(attributes[t].labels, rows);
    const Matrix x = combine(batch_u, result.weights.alpha);
    for (std::size_t t = 0; t < k; ++t)
      for (int s = 0; s < calibration.inner_steps; ++s) fit_variational_step(models[t], x, batch_y[t]);
    const auto obj = combination_objective(detail::networks_of(models), batch_u, batch_y, result.weights.alpha);
    if (!frozen) {
      for (std::size_t i = 0; i < k; ++i) {
        grad.setZero();
        const double a = result.weights.alpha[static_cast<Eigen::Index>(i)];
        for (std::size_t r = 0; r < rows.size(); ++r)
          grad.row(rows[r]) = a * obj.input_gradient.row(static_cast<Eigen::Index>(r));
        embedding_opts[i].step(result.embeddings[i], grad);
        project_ball_in_place(result.embeddings[i], u0, eps);
      }
    }
    logit_opt.step(logits, softmax_logit_gradient(result.weights.alpha, obj.alpha_gradient));
    result.weights = project_simplex_softmax(logits);
    result.trace.push_back({it, obj.value});
  }
  result.combined = combine(result.embeddings, result.weights.alpha);
  if (!result.trace.empty()) {
    const std::size_t tail = std::max<std::size_t>(1, result.trace.size() / 10);
    double s = 0.0;
    for (std::size_t j = result.trace.size() - tail; j < result.trace.size(); ++j) s += result.trace[j].mi_sum;
    result.final_mi_sum = s / static_cast<double>(tail);
  }
  return result;
}

// P1 and P2 are minima of the training objective, an in-sample vCLUB, so
// the bound check scores the rows q_phi was fitted on.
inline MIProtocol objective_protocol() {
  MIProtocol p;
  p.folds = 1;
  return p;
}

struct BoundCheckConfig {
  CalibrationConfig calibration;
  CombinationConfig combination;
  MIProtocol protocol = objective_protocol();
  int parallelism = 1;
  std::uint64_t seed = 13;
};

struct BoundCheckReport {
  double p1 = 0.0;
  double p2 = 0.0;
  double gap = 0.0;  // p1 - p2
  double epsilon = 0.0;
  int k = 0;
  double c_frobenius = 0.0;  // ||U_0||_F, used as the norm bound C
  std::vector<double> p1_per_attribute;
  std::vector<double> p2_per_attribute;
  std::vector<double> p1_alpha;
  std::vector<double> p2_alpha;
  std::string note;
};

// Summed MI of an embedding under a fresh, identically seeded estimator per
// attribute, so two embeddings are scored by the same protocol.
inline std::vector<double> protocol_mi(const Matrix& embedding, const std::vector<AttributeLabels>& attributes,
                                       const MIProtocol& protocol, std::uint64_t seed) {
  std::vector<double> out;
  for (const auto& a : attributes)
    out.push_back(fitted_mi(embedding, a.labels, a.cardinality, protocol, derive_seed(seed, "mi:" + a.name)));
  return out;
}

// P1 from the two-step pipeline (calibrations supplied, in attribute order)
// and P2 from joint_unlearn, both scored by protocol_mi.
inline BoundCheckReport bound_check(const Matrix& u0, const std::vector<AttributeLabels>& attributes,
                                    const std::vector<Matrix>& calibrated, const BoundCheckConfig& config) {
  if (attributes.size() != calibrated.size()) throw ShapeError("bound_check: one calibration per attribute expected");
  if (attributes.size() < 2) warn("bound_check: fewer than two attributes; the comparison is degenerate");
  BoundCheckReport report;
  report.k = static_cast<int>(attributes.size());
  report.epsilon = config.calibration.eps_ratio * static_cast<double>(u0.rows());
  report.c_frobenius = u0.norm();

  const CombinationResult two_step = optimize_weights(calibrated, attributes, config.combination);
  const JointResult joint = joint_unlearn(u0, attributes, config.calibration, config.combination);
  report.p1_per_attribute = protocol_mi(two_step.embedding, attributes, config.protocol, config.seed);
  report.p2_per_attribute = protocol_mi(joint.combined, attributes, config.protocol, config.seed);
  for (double v : report.p1_per_attribute) report.p1 += v;
  for (double v : report.p2_per_attribute) report.p2 += v;
  report.gap = report.p1 - report.p2;
  report.p1_alpha.assign(two_step.weights.alpha.data(), two_step.weights.alpha.data() + two_step.weights.alpha.size());
  report.p2_alpha.assign(joint.weights.alpha.data(), joint.weights.alpha.data() + joint.weights.alpha.size());
  report.note =
      "MI values are vCLUB estimates from a freshly fitted estimator; C is the Frobenius norm of U0; the MI "
      "Lipschitz constant L is not estimated, only the empirical gap is reported";
  return report;
}

inline BoundCheckReport bound_check(const Matrix& u0, const std::vector<AttributeLabels>& attributes,
                                    const BoundCheckConfig& config) {
  const auto results = calibrate_many(u0, attributes, config.calibration, config.parallelism);
  std::vector<Matrix> calibrated;
  for (const auto& a : attributes) calibrated.push_back(results.at(a.name).embedding);
  return bound_check(u0, attributes, calibrated, config);
}

}  // namespace lego
