#pragma once

#include <cstdint>
#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <vector>

#include "latlink/align.hpp"
#include "latlink/jepa.hpp"

namespace latlink::collab {

enum class CollabMode { probe, teacher_student, mutual };

std::string to_string(CollabMode mode);
CollabMode collab_mode_from_string(const std::string& s);

struct CollabConfig {
  CollabMode mode = CollabMode::teacher_student;
  // Weight of the alignment penalty in teacher-student mode. Zero is
  // permitted and reduces the run, bitwise, to independent training.
  double beta = 1.0;
  // Weight of the cross-model consistency term in mutual mode; zero again
  // decouples the two runs exactly.
  double gamma = 1.0;
  int refit_interval = 50;   // steps between W refits
  int eval_interval = 25;    // steps between metric evaluations / ledger rows
  double tau = 1e6;          // conditioning threshold forwarded to refit maps
  std::string threshold_metric = "migrated_readout_r2";
  // Stopping criterion for cost accounting only (training always runs the
  // full budget); <= 0 disables threshold tracking.
  double threshold_value = 0.0;
  double probe_lambda = 1e-3;  // ridge strength for probes and state readouts
  std::uint64_t label_seed = 7;
};

void validate(const CollabConfig& config);

struct LedgerRow {
  int step = 0;            // completed steps at the time of the row
  double jepa_loss = 0.0;  // student loss (teacher-student) or model-1 loss
  double jepa_loss2 = 0.0;  // model-2 loss (mutual mode only, else NaN)
  double align_loss = 0.0;  // weighted penalty term at this step
  // Threshold metric value (NaN when undefined). Teacher-student: held-out
  // accuracy of the teacher's probe migrated through an eval-time map fit on
  // the shared half (defined for beta = 0 too). Mutual: R^2 of the current W.
  double metric = 0.0;
  double flops = 0.0;       // cumulative analytic FLOPs
  double bytes = 0.0;       // cumulative W bytes exchanged
};

struct CostLedger {
  long long steps_to_threshold = -1;  // -1: never reached within the budget
  double flops_estimate = 0.0;        // cumulative at the end of the run
  int w_refits = 0;
  long long w_bytes_exchanged = 0;  // refits * d1 * d2 * 8
  bool metric_non_monotone = false;  // dipped below threshold after reaching it
  std::vector<LedgerRow> rows;
};

// Synthetic labeled task: the sign (+1/-1, with sign(0) = +1) of a fixed
// random hyperplane through the underlying states. states is d x N.
std::vector<int> hyperplane_labels(const Eigen::MatrixXd& states, std::uint64_t seed);

// Centered ridge fit of the +/-1 labels on the latents; the bias absorbs the
// means so the probe applies to raw (uncentered) latents.
align::LinearProbe fit_linear_probe(const Eigen::MatrixXd& z, const std::vector<int>& labels,
                                    double lambda);

double probe_accuracy(const align::LinearProbe& probe, const Eigen::MatrixXd& z,
                      const std::vector<int>& labels);

struct ProbeTransferResult {
  double source_accuracy = 0.0;    // source probe on view-1 latents
  double a_probe_accuracy = 0.0;   // source probe applied to view 2 untranslated
                                   // (NaN when the dimensions differ)
  double migrated_accuracy = 0.0;  // migrated probe on view-2 latents
  double condition_number = 0.0;
  align::InverseKind inverse_kind = align::InverseKind::none;
};

// Three-way comparison of Algorithm 2's probe mode: keep the probe at home,
// apply it across spaces untranslated, or migrate it through the alignment
// map (zero optimization steps on the target side).
ProbeTransferResult probe_transfer_eval(const align::LinearProbe& source_probe,
                                        const align::AlignmentMap& map,
                                        const Eigen::MatrixXd& z1_test,
                                        const Eigen::MatrixXd& z2_test,
                                        const std::vector<int>& labels);

struct TeacherStudentResult {
  jepa::TrainResult student;
  CostLedger ledger;
  // Last refit of the student-to-teacher map (empty when beta == 0).
  Eigen::MatrixXd w;
};

// Algorithm 2, teacher-student mode. The teacher is frozen; the student
// starts from student0 and minimizes its own JEPA loss plus
// beta * mean_n ||z_T - W z_S||^2 on each batch, with W refit by ridge on the
// full clean latents every refit_interval steps and detached otherwise
// (no gradient ever flows into W). The ledger metric is the accuracy of the
// teacher's hyperplane probe migrated onto the student's latents through a
// map fit at evaluation time on the first-half states and scored on the
// second half; it measures how portable the teacher's tooling has become.
// teacher_data and student_data must be paired views of the same states in
// the same column order.
TeacherStudentResult teacher_student(const jepa::ToyJepaModel& teacher,
                                     const jepa::JepaData& teacher_data,
                                     const jepa::JepaData& student_data,
                                     const jepa::ToyJepaModel& student0,
                                     const jepa::TrainConfig& student_config,
                                     const CollabConfig& collab);

struct MutualTeachResult {
  jepa::TrainResult run1;
  jepa::TrainResult run2;
  CostLedger ledger;
  // Last refit of the view-1 -> view-2 map (empty when gamma == 0).
  Eigen::MatrixXd w;
};

// Algorithm 2, mutual mode. Both models update in lockstep on a shared batch
// of states per round, minimizing L1 + L2 + gamma * mean_n ||z2 - W z1||^2;
// the cross-term gradient flows into both encoders and W is refit/detached as
// in teacher-student. config1.steps must equal config2.steps. The shared
// batch stream is seeded from config1.seed, so with matching seeds gamma = 0
// is bitwise equal to two independent train() calls.
MutualTeachResult mutual_teach(const jepa::JepaData& data1, const jepa::JepaData& data2,
                               const jepa::ToyJepaModel& model1_0,
                               const jepa::ToyJepaModel& model2_0,
                               const jepa::TrainConfig& config1,
                               const jepa::TrainConfig& config2,
                               const CollabConfig& collab);

// CSV: step,jepa_loss,jepa_loss2,align_loss,metric,cum_flops,cum_bytes.
void write_ledger_csv(const std::filesystem::path& path, const CostLedger& ledger);

}  // namespace latlink::collab
