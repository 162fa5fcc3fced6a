#pragma once

// Step 1: per-attribute embedding calibration. Alternates one ascent step on
// q_phi with one descent step on U_t against the vCLUB estimate, then
// projects U_t back into the Frobenius ball of radius eps around U_0.

#include "lego/mi.hpp"

#include <algorithm>
#include <atomic>
#include <map>
#include <set>
#include <thread>

namespace lego {

struct CalibrationConfig {
  double eps_ratio = 0.5;  // eps = eps_ratio * N
  int iterations = 1000;
  int batch_size = 256;
  double learning_rate = 2e-4;  // embedding step size
  int inner_steps = 1;          // q_phi updates per embedding update
  // q_phi steps faster than the embedding so the adversary keeps up.
  VariationalConfig variational{100, 1e-3};
  std::uint64_t seed = 7;
  // Optional plateau stop: halt when the mean I_hat over the last `window`
  // iterations improves by less than `plateau_tolerance` on the window before.
  bool plateau_stop = false;
  int plateau_window = 200;
  double plateau_tolerance = 1e-3;

  void validate() const {
    if (eps_ratio < 0.0) throw Error("CalibrationConfig: eps_ratio must be non-negative");
    if (iterations < 0) throw Error("CalibrationConfig: iterations must be non-negative");
    if (batch_size < 2) throw Error("CalibrationConfig: batch size must be at least 2");
    if (learning_rate <= 0.0 || variational.learning_rate <= 0.0)
      throw Error("CalibrationConfig: learning rates must be positive");
    if (inner_steps < 1 || variational.hidden < 1) throw Error("CalibrationConfig: inner_steps and hidden >= 1");
  }

  [[nodiscard]] std::uint64_t hash() const {
    Fnv1a h;
    h.update("calibration-v1");
    h.update_value(eps_ratio).update_value(iterations).update_value(batch_size).update_value(learning_rate);
    h.update_value(inner_steps).update_value(variational.hidden).update_value(variational.learning_rate);
    h.update_value(seed).update_value(plateau_stop).update_value(plateau_window).update_value(plateau_tolerance);
    return h.digest();
  }
};

struct CalibrationTraceRow {
  int iteration = 0;
  double mi = 0.0;
  double nll = 0.0;
  double distance = 0.0;  // ||U_t - U_0||_F after projection
};

struct CalibrationResult {
  Matrix embedding;
  std::string attribute;
  std::vector<CalibrationTraceRow> trace;
  std::uint64_t config_hash = 0;
  double epsilon = 0.0;
};

// Euclidean projection onto the Frobenius ball of radius eps around center.
inline Matrix project_ball(const Matrix& u, const Matrix& center, double eps) {
  if (eps < 0.0) throw Error("project_ball: eps must be non-negative");
  if (u.rows() != center.rows() || u.cols() != center.cols()) throw ShapeError("project_ball: shape mismatch");
  const Matrix diff = u - center;
  const double dist = diff.norm();
  if (dist <= eps) return u;
  return center + (eps / dist) * diff;
}

inline void project_ball_in_place(Matrix& u, const Matrix& center, double eps) {
  const double dist = (u - center).norm();
  if (dist <= eps) return;
  u = center + (eps / dist) * (u - center);
}

inline std::uint64_t attribute_seed(std::uint64_t seed, std::string_view attribute) {
  return derive_seed(seed, std::string("calibrate:") + std::string(attribute));
}

inline CalibrationResult calibrate(const Matrix& u0, const Labels& labels, int cardinality,
                                   const CalibrationConfig& config, std::string attribute = {}) {
  config.validate();
  const auto n = static_cast<int>(u0.rows());
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError("calibrate: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " users");
  check_labels(labels, n, cardinality);
  if (!u0.allFinite()) throw NumericError("calibrate: U0 has non-finite entries");

  CalibrationResult result;
  result.attribute = attribute;
  result.config_hash = config.hash();
  result.epsilon = config.eps_ratio * n;
  result.embedding = u0;
  if (config.iterations == 0 || result.epsilon == 0.0) return result;

  const std::uint64_t seed = attribute_seed(config.seed, attribute);
  VariationalModel model(static_cast<int>(u0.cols()), cardinality, derive_seed(seed, "phi"), config.variational,
                         attribute);
  BatchSampler sampler(n, config.batch_size, derive_seed(seed, "batches"));
  Adam embedding_opt(AdamConfig{config.learning_rate});
  Matrix& u = result.embedding;
  Matrix grad = Matrix::Zero(u.rows(), u.cols());
  result.trace.reserve(static_cast<std::size_t>(config.iterations));

  for (int it = 0; it < config.iterations; ++it) {
    const auto rows = sampler.next();
    const Labels y = gather_labels(labels, rows);
    Matrix x = gather_rows(u, rows);
    double nll = 0.0;
    VclubWithGradient est;
    try {
      for (int s = 0; s < config.inner_steps; ++s) nll = fit_variational_step(model, x, y);
      est = vclub_value_and_input_gradient(model.net, x, y);
      grad.setZero();
      for (std::size_t r = 0; r < rows.size(); ++r)
        grad.row(rows[r]) = est.input_gradient.row(static_cast<Eigen::Index>(r));
      embedding_opt.step(u, grad);
    } catch (const NumericError& e) {
      std::string dump = std::string("calibrate: ") + e.what() + " at iteration " + std::to_string(it) + "; last trace:";
      for (std::size_t k = result.trace.size() >= 5 ? result.trace.size() - 5 : 0; k < result.trace.size(); ++k)
        dump += " [" + std::to_string(result.trace[k].iteration) + ": mi=" + std::to_string(result.trace[k].mi) +
                " nll=" + std::to_string(result.trace[k].nll) + "]";
      throw NumericError(dump);
    }
    project_ball_in_place(u, u0, result.epsilon);
    result.trace.push_back({it, est.value, nll, (u - u0).norm()});

    if (config.plateau_stop && static_cast<int>(result.trace.size()) >= 2 * config.plateau_window) {
      const auto end = result.trace.end();
      auto mean = [](auto first, auto last) {
        double s = 0.0;
        for (auto p = first; p != last; ++p) s += p->mi;
        return s / static_cast<double>(last - first);
      };
      const double recent = mean(end - config.plateau_window, end);
      const double before = mean(end - 2 * config.plateau_window, end - config.plateau_window);
      if (before - recent < config.plateau_tolerance) break;
    }
  }
  return result;
}

// Independent calibrations, one per attribute, run on up to `parallelism`
// worker threads. Seeds derive from (config.seed, attribute name), so the
// output does not depend on scheduling.
inline std::map<std::string, CalibrationResult> calibrate_many(const Matrix& u0,
                                                               const std::vector<AttributeLabels>& attributes,
                                                               const CalibrationConfig& config, int parallelism = 1) {
  std::set<std::string> seen;
  for (const auto& a : attributes)
    if (!seen.insert(a.name).second) throw Error("calibrate_many: duplicate attribute '" + a.name + "'");
  std::map<std::string, CalibrationResult> results;
  if (attributes.empty()) return results;
  const std::size_t workers =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::max(parallelism, 1)), 1, attributes.size());
  std::vector<CalibrationResult> slots(attributes.size());
  std::vector<std::exception_ptr> errors(attributes.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k = next++; k < attributes.size(); k = next++) {
      try {
        const auto& a = attributes[k];
        slots[k] = calibrate(u0, a.labels, a.cardinality, config, a.name);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (std::size_t k = 0; k < attributes.size(); ++k) results.emplace(attributes[k].name, std::move(slots[k]));
  return results;
}

}  // namespace lego
