#include "latlink/collab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>
#include <utility>

#include "latlink/metrics.hpp"
#include "latlink/rng.hpp"
#include "latlink/util.hpp"

namespace latlink::collab {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// Analytic FLOPs: 2 * fan_in * fan_out per affine map per sample, x3 when the
// map is traversed forward and backward, x1 on stop-gradient (forward-only)
// branches. W refits and probe evaluations are bookkeeping, not training, and
// are deliberately excluded; W exchanges are metered in bytes instead.
double affine_flops(Eigen::Index fan_in, Eigen::Index fan_out) {
  return 2.0 * static_cast<double>(fan_in) * static_cast<double>(fan_out);
}

double mlp_flops(const jepa::Mlp& m) {
  return affine_flops(m.in_dim(), m.hidden_dim()) + affine_flops(m.hidden_dim(), m.out_dim());
}

// One JEPA step on a batch of b samples: context branch forward+backward
// through encoder and predictor, target branch forward-only through the
// encoder (stop-gradient).
double jepa_step_flops(const jepa::ToyJepaModel& model, double b) {
  return b * (3.0 * (mlp_flops(model.encoder) + mlp_flops(model.predictor)) +
              mlp_flops(model.encoder));
}

void check_paired(const jepa::JepaData& a, const jepa::JepaData& b) {
  if (a.contexts.cols() != b.contexts.cols() || a.state_ids != b.state_ids) {
    throw std::invalid_argument("collaboration requires paired views of the same states");
  }
}

// Threshold metric for teacher-student runs: a linear state readout is fit
// once on the first half of the frozen teacher's latents, and at each
// evaluation it is migrated through a student->teacher map fit on that same
// half; the score is the held-out R^2 of the migrated readout's state
// reconstruction. A binary probe saturates through almost any least-squares
// map, so it cannot register progress; reconstructing the full state vector
// only succeeds once the student's latents are linearly aligned with the
// teacher's, which is exactly what teaching is supposed to buy.
struct MigratedReadoutEval {
  Eigen::MatrixXd teacher_fit_z;   // teacher latents on the fitting half
  align::AlignmentMap readout;     // teacher latents -> states
  Eigen::MatrixXd states_eval;     // held-out states
  Eigen::VectorXd state_fit_mean;  // fit-split mean, the R^2 baseline
  Eigen::Index n_fit = 0;

  MigratedReadoutEval(const Eigen::MatrixXd& teacher_clean_z, const Eigen::MatrixXd& states,
                      double lambda) {
    const Eigen::Index n = teacher_clean_z.cols();
    n_fit = n / 2;
    if (n_fit < 1 || n - n_fit < 1) {
      throw std::invalid_argument("too few samples for a readout fit/eval split");
    }
    teacher_fit_z = teacher_clean_z.leftCols(n_fit);
    const Eigen::MatrixXd states_fit = states.leftCols(n_fit);
    states_eval = states.rightCols(n - n_fit);
    state_fit_mean = states_fit.rowwise().mean();
    readout = align::fit_ridge(teacher_fit_z, states_fit, lambda);
  }

  double operator()(const jepa::ToyJepaModel& student, const jepa::JepaData& student_data) const {
    const Eigen::MatrixXd z_s = jepa::encode(student, student_data.clean);
    const align::AlignmentMap w_eval = align::fit_auto(z_s.leftCols(n_fit), teacher_fit_z);
    align::AlignmentMap migrated = readout;
    migrated.matrix = readout.matrix * w_eval.matrix;
    return metrics::r_squared(z_s.rightCols(z_s.cols() - n_fit), states_eval, migrated,
                              state_fit_mean);
  }
};

// Threshold metric for mutual runs: R^2 of the current W on the full clean
// latents, 1 - ||z2 - W z1||^2 / ||z2 - mean(z2)||^2.
double alignment_r2(const Eigen::MatrixXd& w, const Eigen::MatrixXd& z1,
                    const Eigen::MatrixXd& z2) {
  const Eigen::VectorXd mean = z2.rowwise().mean();
  const double total = (z2.colwise() - mean).squaredNorm();
  if (total <= 0.0) return kNan;
  return 1.0 - (z2 - w * z1).squaredNorm() / total;
}

struct ThresholdTracker {
  double value = 0.0;
  long long reached_at = -1;
  bool non_monotone = false;

  void observe(int step, double metric) {
    if (value <= 0.0 || std::isnan(metric)) return;
    if (reached_at < 0) {
      if (metric >= value) reached_at = step;
    } else if (metric < value) {
      non_monotone = true;
    }
  }
};

}  // namespace

std::string to_string(CollabMode mode) {
  switch (mode) {
    case CollabMode::probe: return "probe";
    case CollabMode::teacher_student: return "teacher_student";
    case CollabMode::mutual: return "mutual";
  }
  throw std::invalid_argument("unknown collaboration mode");
}

CollabMode collab_mode_from_string(const std::string& s) {
  if (s == "probe") return CollabMode::probe;
  if (s == "teacher_student" || s == "teacher-student") return CollabMode::teacher_student;
  if (s == "mutual") return CollabMode::mutual;
  throw std::invalid_argument("unknown collaboration mode: " + s);
}

void validate(const CollabConfig& config) {
  if (!(config.beta >= 0.0) || !std::isfinite(config.beta)) {
    throw std::invalid_argument("beta must be finite and >= 0");
  }
  if (!(config.gamma >= 0.0) || !std::isfinite(config.gamma)) {
    throw std::invalid_argument("gamma must be finite and >= 0");
  }
  if (config.refit_interval < 1) throw std::invalid_argument("refit_interval must be >= 1");
  if (config.eval_interval < 1) throw std::invalid_argument("eval_interval must be >= 1");
  if (!(config.tau > 1.0)) throw std::invalid_argument("tau must be > 1");
  if (!(config.probe_lambda >= 0.0)) throw std::invalid_argument("probe_lambda must be >= 0");
  if (config.threshold_metric.empty()) {
    throw std::invalid_argument("threshold_metric must be named");
  }
}

std::vector<int> hyperplane_labels(const Eigen::MatrixXd& states, std::uint64_t seed) {
  if (states.cols() < 1) throw std::invalid_argument("empty state matrix");
  Rng rng(seed);
  Eigen::VectorXd normal(states.rows());
  for (Eigen::Index i = 0; i < normal.size(); ++i) normal(i) = rng.normal();
  std::vector<int> labels(static_cast<std::size_t>(states.cols()));
  for (Eigen::Index j = 0; j < states.cols(); ++j) {
    labels[static_cast<std::size_t>(j)] = normal.dot(states.col(j)) >= 0.0 ? 1 : -1;
  }
  return labels;
}

align::LinearProbe fit_linear_probe(const Eigen::MatrixXd& z, const std::vector<int>& labels,
                                    double lambda) {
  const Eigen::Index n = z.cols();
  if (static_cast<std::size_t>(n) != labels.size()) {
    throw std::invalid_argument("label/latent count mismatch");
  }
  if (n < 2) throw std::invalid_argument("need at least 2 samples to fit a probe");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");

  Eigen::VectorXd y(n);
  for (Eigen::Index j = 0; j < n; ++j) y(j) = labels[static_cast<std::size_t>(j)];
  const Eigen::VectorXd z_mean = z.rowwise().mean();
  const double y_mean = y.mean();
  const Eigen::MatrixXd zc = z.colwise() - z_mean;
  const Eigen::VectorXd yc = y.array() - y_mean;

  Eigen::MatrixXd gram = zc * zc.transpose();
  gram.diagonal().array() += lambda;
  align::LinearProbe probe;
  probe.weights = gram.ldlt().solve(zc * yc);
  probe.bias = y_mean - probe.weights.dot(z_mean);
  return probe;
}

double probe_accuracy(const align::LinearProbe& probe, const Eigen::MatrixXd& z,
                      const std::vector<int>& labels) {
  const Eigen::Index n = z.cols();
  if (static_cast<std::size_t>(n) != labels.size()) {
    throw std::invalid_argument("label/latent count mismatch");
  }
  if (n < 1) throw std::invalid_argument("empty evaluation set");
  if (probe.weights.size() != z.rows()) {
    throw std::invalid_argument("probe dimension does not match the latents");
  }
  long long correct = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double score = probe.weights.dot(z.col(j)) + probe.bias;
    const int predicted = score >= 0.0 ? 1 : -1;
    if (predicted == labels[static_cast<std::size_t>(j)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

ProbeTransferResult probe_transfer_eval(const align::LinearProbe& source_probe,
                                        const align::AlignmentMap& map,
                                        const Eigen::MatrixXd& z1_test,
                                        const Eigen::MatrixXd& z2_test,
                                        const std::vector<int>& labels) {
  if (z1_test.cols() != z2_test.cols()) {
    throw std::invalid_argument("paired test sets must have equal counts");
  }
  if (map.cols() != z1_test.rows() || map.rows() != z2_test.rows()) {
    throw std::invalid_argument("alignment map does not match the latent dimensions");
  }
  ProbeTransferResult result;
  result.source_accuracy = probe_accuracy(source_probe, z1_test, labels);
  result.a_probe_accuracy = z1_test.rows() == z2_test.rows()
                                ? probe_accuracy(source_probe, z2_test, labels)
                                : kNan;
  const align::LinearProbe migrated = align::migrate_probe(source_probe, map);
  result.migrated_accuracy = probe_accuracy(migrated, z2_test, labels);
  result.condition_number = map.condition_number;
  result.inverse_kind = map.inverse_kind;
  return result;
}

TeacherStudentResult teacher_student(const jepa::ToyJepaModel& teacher,
                                     const jepa::JepaData& teacher_data,
                                     const jepa::JepaData& student_data,
                                     const jepa::ToyJepaModel& student0,
                                     const jepa::TrainConfig& config,
                                     const CollabConfig& collab) {
  jepa::validate(config);
  jepa::validate(student0);
  jepa::validate(teacher);
  validate(collab);
  check_paired(teacher_data, student_data);
  const Eigen::Index n = student_data.contexts.cols();
  if (n < 1) throw std::invalid_argument("empty training data");
  if (teacher.obs_dim() != teacher_data.contexts.rows() ||
      student0.obs_dim() != student_data.contexts.rows()) {
    throw std::invalid_argument("model/observation dimension mismatch");
  }

  const bool coupled = collab.beta > 0.0;
  // The teacher is frozen, so its latents and its readout never change.
  const Eigen::MatrixXd teacher_clean_z = jepa::encode(teacher, teacher_data.clean);
  const MigratedReadoutEval readout_metric(teacher_clean_z, student_data.states,
                                           collab.probe_lambda);

  const double d_s = static_cast<double>(student0.latent_dim());
  const double d_t = static_cast<double>(teacher.latent_dim());
  const double base_step_flops = jepa_step_flops(student0, 1.0);
  const double coupled_step_flops =
      mlp_flops(teacher.encoder) + 3.0 * affine_flops(student0.latent_dim(), teacher.latent_dim());

  jepa::ToyJepaModel model = student0;
  ThresholdTracker tracker{collab.threshold_value};
  TeacherStudentResult result;
  result.student.losses.reserve(static_cast<std::size_t>(config.steps));
  result.student.encoder_variance.reserve(static_cast<std::size_t>(config.steps));
  std::set<int> snapshots(config.checkpoint_steps.begin(), config.checkpoint_steps.end());
  if (snapshots.count(0)) result.student.checkpoints.emplace_back(0, model);

  double cum_flops = 0.0;
  Rng batch_rng(derive_seed(config.seed, 2));
  for (int step = 0; step < config.steps; ++step) {
    if (coupled && step % collab.refit_interval == 0) {
      const Eigen::MatrixXd student_clean_z = jepa::encode(model, student_data.clean);
      result.w = align::fit_auto(student_clean_z, teacher_clean_z).matrix;
      ++result.ledger.w_refits;
      result.ledger.w_bytes_exchanged += static_cast<long long>(d_s * d_t * 8.0);
    }

    const std::vector<Eigen::Index> idx = jepa::draw_batch(batch_rng, n, config.batch_size);
    jepa::StepResult s;
    double align_loss = 0.0;
    double batch_count = 0.0;
    if (idx.empty()) {
      batch_count = static_cast<double>(n);
      if (coupled) {
        const Eigen::MatrixXd z_s = jepa::encode(model, student_data.contexts);
        const Eigen::MatrixXd z_t = jepa::encode(teacher, teacher_data.contexts);
        const Eigen::MatrixXd resid = z_t - result.w * z_s;
        align_loss = collab.beta * resid.squaredNorm() / batch_count;
        const Eigen::MatrixXd extra =
            (-2.0 * collab.beta / batch_count) * (result.w.transpose() * resid);
        s = jepa::sgd_step(model, student_data.contexts, student_data.targets,
                           config.learning_rate, &extra);
      } else {
        s = jepa::sgd_step(model, student_data.contexts, student_data.targets,
                           config.learning_rate, nullptr);
      }
    } else {
      batch_count = static_cast<double>(idx.size());
      const Eigen::MatrixXd ctx = jepa::take_columns(student_data.contexts, idx);
      const Eigen::MatrixXd tgt = jepa::take_columns(student_data.targets, idx);
      if (coupled) {
        const Eigen::MatrixXd z_s = jepa::encode(model, ctx);
        const Eigen::MatrixXd z_t =
            jepa::encode(teacher, jepa::take_columns(teacher_data.contexts, idx));
        const Eigen::MatrixXd resid = z_t - result.w * z_s;
        align_loss = collab.beta * resid.squaredNorm() / batch_count;
        const Eigen::MatrixXd extra =
            (-2.0 * collab.beta / batch_count) * (result.w.transpose() * resid);
        s = jepa::sgd_step(model, ctx, tgt, config.learning_rate, &extra);
      } else {
        s = jepa::sgd_step(model, ctx, tgt, config.learning_rate, nullptr);
      }
    }
    if (!std::isfinite(s.loss)) {
      throw std::runtime_error("training diverged (non-finite loss) at step " +
                               std::to_string(step));
    }
    result.student.losses.push_back(s.loss);
    result.student.encoder_variance.push_back(s.encoder_variance);
    if (snapshots.count(step + 1)) result.student.checkpoints.emplace_back(step + 1, model);

    cum_flops += batch_count * (base_step_flops + (coupled ? coupled_step_flops : 0.0));
    const int done = step + 1;
    if (done % collab.eval_interval == 0 || done == config.steps) {
      const double metric = readout_metric(model, student_data);
      tracker.observe(done, metric);
      result.ledger.rows.push_back({done, s.loss, kNan, align_loss, metric, cum_flops,
                                    static_cast<double>(result.ledger.w_bytes_exchanged)});
    }
  }

  result.student.model = std::move(model);
  result.ledger.steps_to_threshold = tracker.reached_at;
  result.ledger.flops_estimate = cum_flops;
  result.ledger.metric_non_monotone = tracker.non_monotone;
  return result;
}

MutualTeachResult mutual_teach(const jepa::JepaData& data1, const jepa::JepaData& data2,
                               const jepa::ToyJepaModel& model1_0,
                               const jepa::ToyJepaModel& model2_0,
                               const jepa::TrainConfig& config1,
                               const jepa::TrainConfig& config2,
                               const CollabConfig& collab) {
  jepa::validate(config1);
  jepa::validate(config2);
  jepa::validate(model1_0);
  jepa::validate(model2_0);
  validate(collab);
  check_paired(data1, data2);
  const Eigen::Index n = data1.contexts.cols();
  if (n < 1) throw std::invalid_argument("empty training data");
  if (config1.steps != config2.steps || config1.batch_size != config2.batch_size) {
    throw std::invalid_argument("mutual teaching requires matching step and batch budgets");
  }
  if (model1_0.obs_dim() != data1.contexts.rows() ||
      model2_0.obs_dim() != data2.contexts.rows()) {
    throw std::invalid_argument("model/observation dimension mismatch");
  }

  const bool coupled = collab.gamma > 0.0;
  const double d1 = static_cast<double>(model1_0.latent_dim());
  const double d2 = static_cast<double>(model2_0.latent_dim());
  const double base_flops = jepa_step_flops(model1_0, 1.0) + jepa_step_flops(model2_0, 1.0);
  const double cross_flops = 3.0 * affine_flops(model1_0.latent_dim(), model2_0.latent_dim());

  jepa::ToyJepaModel m1 = model1_0;
  jepa::ToyJepaModel m2 = model2_0;
  ThresholdTracker tracker{collab.threshold_value};
  MutualTeachResult result;
  std::set<int> snapshots1(config1.checkpoint_steps.begin(), config1.checkpoint_steps.end());
  std::set<int> snapshots2(config2.checkpoint_steps.begin(), config2.checkpoint_steps.end());
  if (snapshots1.count(0)) result.run1.checkpoints.emplace_back(0, m1);
  if (snapshots2.count(0)) result.run2.checkpoints.emplace_back(0, m2);

  double cum_flops = 0.0;
  // Both models see the same batch of states each round; the shared stream
  // matches train()'s, so gamma = 0 with matching seeds is the bitwise
  // decoupled reduction.
  Rng batch_rng(derive_seed(config1.seed, 2));
  for (int step = 0; step < config1.steps; ++step) {
    if (coupled && step % collab.refit_interval == 0) {
      const Eigen::MatrixXd z1 = jepa::encode(m1, data1.clean);
      const Eigen::MatrixXd z2 = jepa::encode(m2, data2.clean);
      result.w = align::fit_auto(z1, z2).matrix;
      ++result.ledger.w_refits;
      result.ledger.w_bytes_exchanged += static_cast<long long>(d1 * d2 * 8.0);
    }

    const std::vector<Eigen::Index> idx = jepa::draw_batch(batch_rng, n, config1.batch_size);
    jepa::StepResult s1;
    jepa::StepResult s2;
    double align_loss = 0.0;
    double batch_count = 0.0;
    if (idx.empty()) {
      batch_count = static_cast<double>(n);
      if (coupled) {
        // Gradients of the cross term are evaluated simultaneously, at both
        // models' pre-step weights, then applied to each model's own step.
        const Eigen::MatrixXd z1 = jepa::encode(m1, data1.contexts);
        const Eigen::MatrixXd z2 = jepa::encode(m2, data2.contexts);
        const Eigen::MatrixXd resid = z2 - result.w * z1;
        align_loss = collab.gamma * resid.squaredNorm() / batch_count;
        const Eigen::MatrixXd extra1 =
            (-2.0 * collab.gamma / batch_count) * (result.w.transpose() * resid);
        const Eigen::MatrixXd extra2 = (2.0 * collab.gamma / batch_count) * resid;
        s1 = jepa::sgd_step(m1, data1.contexts, data1.targets, config1.learning_rate, &extra1);
        s2 = jepa::sgd_step(m2, data2.contexts, data2.targets, config2.learning_rate, &extra2);
      } else {
        s1 = jepa::sgd_step(m1, data1.contexts, data1.targets, config1.learning_rate, nullptr);
        s2 = jepa::sgd_step(m2, data2.contexts, data2.targets, config2.learning_rate, nullptr);
      }
    } else {
      batch_count = static_cast<double>(idx.size());
      const Eigen::MatrixXd ctx1 = jepa::take_columns(data1.contexts, idx);
      const Eigen::MatrixXd tgt1 = jepa::take_columns(data1.targets, idx);
      const Eigen::MatrixXd ctx2 = jepa::take_columns(data2.contexts, idx);
      const Eigen::MatrixXd tgt2 = jepa::take_columns(data2.targets, idx);
      if (coupled) {
        const Eigen::MatrixXd z1 = jepa::encode(m1, ctx1);
        const Eigen::MatrixXd z2 = jepa::encode(m2, ctx2);
        const Eigen::MatrixXd resid = z2 - result.w * z1;
        align_loss = collab.gamma * resid.squaredNorm() / batch_count;
        const Eigen::MatrixXd extra1 =
            (-2.0 * collab.gamma / batch_count) * (result.w.transpose() * resid);
        const Eigen::MatrixXd extra2 = (2.0 * collab.gamma / batch_count) * resid;
        s1 = jepa::sgd_step(m1, ctx1, tgt1, config1.learning_rate, &extra1);
        s2 = jepa::sgd_step(m2, ctx2, tgt2, config2.learning_rate, &extra2);
      } else {
        s1 = jepa::sgd_step(m1, ctx1, tgt1, config1.learning_rate, nullptr);
        s2 = jepa::sgd_step(m2, ctx2, tgt2, config2.learning_rate, nullptr);
      }
    }
    if (!std::isfinite(s1.loss) || !std::isfinite(s2.loss)) {
      throw std::runtime_error("training diverged (non-finite loss) at step " +
                               std::to_string(step));
    }
    result.run1.losses.push_back(s1.loss);
    result.run1.encoder_variance.push_back(s1.encoder_variance);
    result.run2.losses.push_back(s2.loss);
    result.run2.encoder_variance.push_back(s2.encoder_variance);
    if (snapshots1.count(step + 1)) result.run1.checkpoints.emplace_back(step + 1, m1);
    if (snapshots2.count(step + 1)) result.run2.checkpoints.emplace_back(step + 1, m2);

    cum_flops += batch_count * (base_flops + (coupled ? cross_flops : 0.0));
    const int done = step + 1;
    if (done % collab.eval_interval == 0 || done == config1.steps) {
      double metric = kNan;
      if (coupled) {
        metric = alignment_r2(result.w, jepa::encode(m1, data1.clean),
                              jepa::encode(m2, data2.clean));
      }
      tracker.observe(done, metric);
      result.ledger.rows.push_back({done, s1.loss, s2.loss, align_loss, metric, cum_flops,
                                    static_cast<double>(result.ledger.w_bytes_exchanged)});
    }
  }

  result.run1.model = std::move(m1);
  result.run2.model = std::move(m2);
  result.ledger.steps_to_threshold = tracker.reached_at;
  result.ledger.flops_estimate = cum_flops;
  result.ledger.metric_non_monotone = tracker.non_monotone;
  return result;
}

void write_ledger_csv(const std::filesystem::path& path, const CostLedger& ledger) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "step,jepa_loss,jepa_loss2,align_loss,metric,cum_flops,cum_bytes\n";
  for (const LedgerRow& row : ledger.rows) {
    out << row.step << ',' << format_double(row.jepa_loss) << ','
        << format_double(row.jepa_loss2) << ',' << format_double(row.align_loss) << ','
        << format_double(row.metric) << ',' << format_double(row.flops) << ','
        << format_double(row.bytes) << '\n';
  }
  if (!out) throw std::runtime_error("failed while writing " + path.string());
}

}  // namespace latlink::collab
