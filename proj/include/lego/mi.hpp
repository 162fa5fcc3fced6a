#pragma once

// vCLUB mutual-information estimation with a variational classifier
// q_phi(a | u), in nats.
//
//   I_hat = 1/B sum_i [ log q(y_i|x_i) - 1/B sum_j log q(y_j|x_i) ]
//
// The inner average runs over all B labels of the batch, diagonal included.

#include "lego/nn.hpp"

#include <numeric>

namespace lego {

struct VariationalConfig {
  int hidden = 100;
  double learning_rate = 1e-4;
};

// One attribute's labels for every user row.
struct AttributeLabels {
  std::string name;
  int cardinality = 0;
  Labels labels;
};

struct VariationalModel {
  DenseNetwork net;
  int cardinality = 0;
  std::string attribute;
  Adam optimizer;

  VariationalModel() = default;
  VariationalModel(int input_dim, int classes, std::uint64_t seed, VariationalConfig config = {},
                   std::string attribute_name = {})
      : net(init_network({input_dim, config.hidden, classes}, seed)),
        cardinality(classes),
        attribute(std::move(attribute_name)),
        optimizer(AdamConfig{config.learning_rate}) {
    if (classes < 1) throw Error("VariationalModel: cardinality must be positive");
  }
};

struct MIEstimate {
  double value = 0.0;  // nats
  int batch_size = 0;
  std::int64_t iteration = 0;
};

// One Adam step maximizing the mean log-likelihood. Returns the NLL measured
// before the step.
inline double fit_variational_step(VariationalModel& model, const Matrix& embeddings, const Labels& labels) {
  if (embeddings.rows() == 0) throw Error("fit_variational_step: empty batch");
  auto [loss, grads] = nll_and_gradient(model.net, embeddings, labels);
  if (!std::isfinite(loss)) throw NumericError("fit_variational_step: non-finite log-likelihood");
  model.optimizer.step(model.net, grads);
  return loss;
}

namespace detail {

inline std::vector<double> label_histogram(const Labels& labels, Eigen::Index classes) {
  std::vector<double> counts(static_cast<std::size_t>(classes), 0.0);
  for (int y : labels) counts[static_cast<std::size_t>(y)] += 1.0;
  return counts;
}

}  // namespace detail

// The batch estimator evaluated on a B x p matrix of log q(c | x_i).
inline double vclub_from_log_probs(const Matrix& log_probs, const Labels& labels) {
  const Eigen::Index batch = log_probs.rows();
  if (batch < 2) throw Error("vCLUB: batch size must be at least 2");
  check_labels(labels, batch, log_probs.cols());
  const auto counts = detail::label_histogram(labels, log_probs.cols());
  const double b = static_cast<double>(batch);
  double total = 0.0;
  for (Eigen::Index i = 0; i < batch; ++i) {
    double marginal = 0.0;
    for (Eigen::Index c = 0; c < log_probs.cols(); ++c)
      if (counts[static_cast<std::size_t>(c)] > 0.0) marginal += counts[static_cast<std::size_t>(c)] * log_probs(i, c);
    total += log_probs(i, labels[static_cast<std::size_t>(i)]) - marginal / b;
  }
  return total / b;
}

// d I_hat / d log q(c | x_i). Rows sum to zero, so this is also the gradient
// with respect to the logits (the softmax Jacobian term vanishes).
inline Matrix vclub_log_prob_gradient(const Labels& labels, Eigen::Index classes) {
  const auto batch = static_cast<Eigen::Index>(labels.size());
  const double b = static_cast<double>(batch);
  const auto counts = detail::label_histogram(labels, classes);
  Matrix g(batch, classes);
  for (Eigen::Index c = 0; c < classes; ++c) g.col(c).setConstant(-counts[static_cast<std::size_t>(c)] / (b * b));
  for (Eigen::Index i = 0; i < batch; ++i) g(i, labels[static_cast<std::size_t>(i)]) += 1.0 / b;
  return g;
}

inline MIEstimate estimate_vclub(const VariationalModel& model, const Matrix& embeddings, const Labels& labels) {
  if (embeddings.rows() < 2) throw Error("estimate_vclub: batch size must be at least 2");
  const Matrix logp = log_softmax(forward(model.net, embeddings));
  const double value = vclub_from_log_probs(logp, labels);
  if (!std::isfinite(value)) throw NumericError("estimate_vclub: non-finite estimate");
  return {value, static_cast<int>(embeddings.rows()), model.optimizer.steps()};
}

struct VclubWithGradient {
  double value = 0.0;
  Matrix input_gradient;  // B x d
};

// I_hat on the batch together with its gradient with respect to every
// embedding row; q_phi is held fixed.
inline VclubWithGradient vclub_value_and_input_gradient(const DenseNetwork& net, const Matrix& embeddings,
                                                        const Labels& labels) {
  if (embeddings.rows() < 2) throw Error("vclub_input_gradient: batch size must be at least 2");
  ForwardCache cache;
  const Matrix logits = forward(net, embeddings, &cache);
  check_labels(labels, logits.rows(), logits.cols());
  const Matrix logp = log_softmax(logits);
  VclubWithGradient out;
  out.value = vclub_from_log_probs(logp, labels);
  out.input_gradient = backward(net, embeddings, cache, vclub_log_prob_gradient(labels, logits.cols())).input;
  if (!std::isfinite(out.value) || !out.input_gradient.allFinite())
    throw NumericError("vclub_input_gradient: non-finite value or gradient");
  return out;
}

inline Matrix vclub_input_gradient(const VariationalModel& model, const Matrix& embeddings, const Labels& labels) {
  return vclub_value_and_input_gradient(model.net, embeddings, labels).input_gradient;
}

struct DiscreteJoint {
  Matrix probabilities;  // rows: x categories, cols: y categories

  void validate() const {
    if (probabilities.size() == 0) throw Error("DiscreteJoint: empty table");
    if ((probabilities.array() < 0.0).any() || !probabilities.allFinite())
      throw Error("DiscreteJoint: entries must be finite and non-negative");
    if (std::abs(probabilities.sum() - 1.0) > 1e-12) throw Error("DiscreteJoint: entries must sum to 1");
  }
};

// Exact MI of a discrete joint, with 0 log 0 = 0.
inline double discrete_mi_oracle(const DiscreteJoint& joint) {
  joint.validate();
  const Matrix& p = joint.probabilities;
  const Vector px = p.rowwise().sum();
  const Eigen::RowVectorXd py = p.colwise().sum();
  double mi = 0.0;
  for (Eigen::Index x = 0; x < p.rows(); ++x)
    for (Eigen::Index y = 0; y < p.cols(); ++y)
      if (p(x, y) > 0.0) mi += p(x, y) * std::log(p(x, y) / (px[x] * py[y]));
  return std::max(mi, 0.0);
}

struct JointSample {
  Matrix embeddings;  // one-hot rows of the x category
  Labels labels;      // y category
};

// n i.i.d. draws (x, y) from the table, x encoded one-hot.
inline JointSample sample_discrete_joint(const DiscreteJoint& joint, int n, std::uint64_t seed) {
  joint.validate();
  const Matrix& p = joint.probabilities;
  std::discrete_distribution<Eigen::Index> cell(p.data(), p.data() + p.size());
  Rng rng(seed);
  JointSample out{Matrix::Zero(n, p.rows()), Labels(static_cast<std::size_t>(n))};
  for (int i = 0; i < n; ++i) {
    const Eigen::Index k = cell(rng);  // row-major cell index
    out.embeddings(i, k / p.cols()) = 1.0;
    out.labels[static_cast<std::size_t>(i)] = static_cast<int>(k % p.cols());
  }
  return out;
}

// Mean of the batch estimator over `passes` shuffled sweeps of U. The last
// partial batch of a sweep is dropped when it has fewer than two rows.
inline double mi_over_embedding(const VariationalModel& model, const Matrix& embeddings, const Labels& labels,
                                int batch_size, int passes, std::uint64_t seed) {
  const auto n = static_cast<int>(embeddings.rows());
  if (static_cast<int>(labels.size()) != n) throw ShapeError("mi_over_embedding: label count mismatch");
  if (batch_size < 2 || passes < 1 || n < 2) throw Error("mi_over_embedding: need batch >= 2, passes >= 1, N >= 2");
  Rng rng(seed);
  std::vector<int> order(static_cast<std::size_t>(n));
  double total = 0.0;
  int count = 0;
  for (int pass = 0; pass < passes; ++pass) {
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < n; start += batch_size) {
      const int stop = std::min(n, start + batch_size);
      if (stop - start < 2) continue;
      std::span<const int> rows(order.data() + start, static_cast<std::size_t>(stop - start));
      total += estimate_vclub(model, gather_rows(embeddings, rows), gather_labels(labels, rows)).value;
      ++count;
    }
  }
  return total / count;
}

struct MIProtocol {
  int fit_steps = 1000;
  int batch_size = 256;
  int passes = 5;
  int folds = 5;  // cross-fitting folds; 1 scores the rows q_phi was fitted on
  VariationalConfig variational{100, 1e-3};
};

// Fits a fresh q_phi on a fixed embedding and reports the vCLUB estimate.
// Used wherever two embeddings must be compared under the same estimator.
// With folds > 1 each fold is scored by a q_phi fitted on the other folds,
// so memorised noise does not count as dependence.
inline double fitted_mi(const Matrix& embeddings, const Labels& labels, int cardinality, const MIProtocol& protocol,
                        std::uint64_t seed) {
  const auto n = static_cast<int>(embeddings.rows());
  if (protocol.folds < 1 || n < 2 * protocol.folds) throw Error("fitted_mi: need at least two rows per fold");
  auto fit_and_score = [&](const Matrix& fit_x, const Labels& fit_y, const Matrix& eval_x, const Labels& eval_y,
                           std::uint64_t s) {
    VariationalModel model(static_cast<int>(embeddings.cols()), cardinality, derive_seed(s, "protocol-init"),
                           protocol.variational);
    BatchSampler sampler(static_cast<int>(fit_x.rows()), protocol.batch_size, derive_seed(s, "protocol-batches"));
    for (int step = 0; step < protocol.fit_steps; ++step) {
      const auto rows = sampler.next();
      fit_variational_step(model, gather_rows(fit_x, rows), gather_labels(fit_y, rows));
    }
    const int batch = std::min(protocol.batch_size, static_cast<int>(eval_x.rows()));
    return mi_over_embedding(model, eval_x, eval_y, batch, protocol.passes, derive_seed(s, "protocol-eval"));
  };
  if (protocol.folds == 1) return fit_and_score(embeddings, labels, embeddings, labels, seed);

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "protocol-folds"));
  std::shuffle(order.begin(), order.end(), rng);
  double total = 0.0;
  for (int f = 0; f < protocol.folds; ++f) {
    std::vector<int> fit_rows, eval_rows;
    for (int i = 0; i < n; ++i)
      (i % protocol.folds == f ? eval_rows : fit_rows).push_back(order[static_cast<std::size_t>(i)]);
    const double v = fit_and_score(gather_rows(embeddings, fit_rows), gather_labels(labels, fit_rows),
                                   gather_rows(embeddings, eval_rows), gather_labels(labels, eval_rows),
                                   derive_seed(seed, "fold" + std::to_string(f)));
    total += v * static_cast<double>(eval_rows.size());
  }
  return total / n;
}

}  // namespace lego
