// SPDX-License-Identifier: Apache-2.0
//
// Interactive teacher/student training.
//
// One step on a target batch:
//   (a) forward the adapted teacher and the student
//   (b) teacher objective -> Adam on adapters + attention parameters
//   (c) fresh no-grad teacher forward (or reuse of (a), see reuse_teacher_forward)
//   (d) student objective -> momentum SGD on student + feature mapping
// The pretrained backbone of the teacher never changes except in the
// learnable_teacher_full variant.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fdd/adapter.hpp"
#include "fdd/data.hpp"
#include "fdd/fusion.hpp"
#include "fdd/losses.hpp"
#include "fdd/network.hpp"
#include "fdd/optim.hpp"

namespace fdd {

enum class Weighting { FusionActivation, None, Block, Channel, BlockChannel };
std::string weighting_name(Weighting w);
Weighting parse_weighting(const std::string& s);

struct TrainingConfig {
  double beta = 1.0;
  double gamma = 0.1;
  double tau = 4.0;
  std::size_t epochs = 30;
  double student_lr = 0.05;
  double adapter_lr = 0.01;
  /// Empty: derived from `epochs` as floor(E/3), floor(7E/12), floor(5E/6).
  std::vector<std::size_t> lr_decay_epochs;
  double lr_decay_factor = 10.0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::vector<std::size_t> student_channels{4, 8, 16, 32};
  double mix_temperature = 1.0;

  bool no_kt_S = false;
  bool no_dikt_S = false;
  bool no_ce_T = false;
  bool no_kt_T = false;
  bool fixed_teacher = false;
  bool learnable_teacher_full = false;
  Weighting weighting = Weighting::FusionActivation;
  KlDirection kl_direction = KlDirection::TargetFirst;
  bool reuse_teacher_forward = false;
  std::string variant = "full_4ds";

  void validate() const;
  std::vector<std::size_t> decay_epochs() const;
  /// Learning-rate multiplier for 0-based epoch e.
  double lr_multiplier(std::size_t epoch) const;
  std::string to_json() const;
  /// Keys present in `text` override the current values; unknown keys are rejected.
  void merge_json(const std::string& text);
  std::string digest() const;
};

/// Variant names accepted by run_ablation.
const std::vector<std::string>& variant_names();
/// Sets the switches of a named variant on top of `base`.
TrainingConfig apply_variant(TrainingConfig base, const std::string& variant);

/// Learnable per-block / per-channel weights used by the weighting variants.
struct WeightingParams {
  Var block_logits;    // [n]
  Var channel_logits;  // [M]
  Tensor block_expand;  // [M, n] indicator
  ParamList params() const;
};

struct DistillModels {
  AdaptedTeacher teacher;
  ActivationParams activation;
  WeightingParams weighting;
  Network student;
  std::optional<FeatureMapParams> mapping;

  ParamList teacher_learnable(const TrainingConfig& cfg) const;
  ParamList student_learnable() const;
};

DistillModels build_models(const Network& pretrained_teacher, const TrainingConfig& cfg, std::size_t num_classes);

struct TeacherOutput {
  Var logits;
  std::vector<Var> phases;  // per block [B, C_i, H_i, W_i]
  std::vector<Var> features;
};

/// use_adapters=false runs the bare backbone (fixed teacher). When `stem` is
/// given it replaces the output of the first backbone block.
TeacherOutput teacher_forward(DistillModels& m, const Var& x, bool use_adapters, BatchNormMode adapter_mode,
                              bool update_running, BatchNormMode backbone_mode = BatchNormMode::Eval,
                              const Var* stem = nullptr);

struct StudentOutput {
  Var logits;
  std::vector<Var> phases;
  std::vector<Var> features;
};

StudentOutput student_forward(Network& student, const Var& x, BatchNormMode mode, bool with_phases,
                              bool update_running = true);

/// Weighted teacher and student stacks fed to the dikt loss.
struct TransferStacks {
  Var student_act;
  Var teacher_act;
  Var attention;  // [B, M]
};

TransferStacks transfer_stacks(DistillModels& m, const std::vector<Var>& teacher_phases,
                               const std::vector<Var>& student_phases, Weighting weighting);

struct StepRecord {
  LossBreakdown teacher;
  LossBreakdown student;
};

class Trainer {
 public:
  Trainer(DistillModels models, TrainingConfig cfg);

  StepRecord train_step(const Tensor& images, const std::vector<std::size_t>& labels,
                        const std::vector<std::size_t>& batch, double lr_multiplier);

  DistillModels& models() { return m_; }
  const TrainingConfig& config() const { return cfg_; }
  Adam& teacher_optimizer() { return teacher_opt_; }
  Sgd& student_optimizer() { return student_opt_; }

  std::size_t epoch = 0;
  std::uint64_t step = 0;
  Rng batch_rng;
  /// Called with 'b' after the teacher update and 'd' after the student update.
  std::function<void(char)> on_phase;

 private:
  Var stem_batch(const Tensor& images, const std::vector<std::size_t>& batch);

  DistillModels m_;
  TrainingConfig cfg_;
  Adam teacher_opt_;
  Sgd student_opt_;
  // First-block outputs of the frozen backbone, one row per image.
  Tensor stem_cache_;
  const Tensor* stem_images_ = nullptr;
};

double evaluate(Network& net, const SyntheticDataset& ds, Split split);
double evaluate_teacher(DistillModels& m, const SyntheticDataset& ds, Split split, bool use_adapters = true);
/// argmax with the lowest index winning ties.
std::size_t argmax_row(const double* row, std::size_t k);

std::vector<double> mixing_weights(const DistillModels& m);

struct EpochMetrics {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  double lr_student = 0.0;
  double lr_adapter = 0.0;
  LossBreakdown teacher;
  LossBreakdown student;
  double student_acc = 0.0;
  double teacher_acc = 0.0;
  std::vector<double> lambdas;
};

std::string metrics_header_json();
std::string metrics_json(const EpochMetrics& m);

struct TrainResult {
  std::vector<EpochMetrics> metrics;
  double final_student_acc = 0.0;
  double final_teacher_acc = 0.0;
};

using EpochCallback = std::function<void(Trainer&, const EpochMetrics&)>;

/// Trains on the target train split, reports accuracy on its test split.
TrainResult train(Trainer& trainer, const SyntheticDataset& target, const EpochCallback& on_epoch = {});

struct PretrainConfig {
  std::size_t epochs = 30;
  double lr = 0.05;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::vector<std::size_t> channels{8, 16, 32, 64};
};

/// Cross-entropy training of a fresh teacher on the source train split.
Network pretrain_teacher(const SyntheticDataset& source, const PretrainConfig& cfg,
                         const std::function<void(std::size_t, double)>& on_epoch = {});

/// Cross-entropy-only student training with the same streams as Trainer.
TrainResult train_plain_student(const SyntheticDataset& target, const TrainingConfig& cfg);

/// Builds models from the teacher, trains `variant`, returns the metrics.
TrainResult run_ablation(const std::string& variant, const TrainingConfig& base, const Network& pretrained_teacher,
                         const SyntheticDataset& target);

/// Mini-batches of a shuffled index set; drops a trailing batch smaller than 2.
std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> indices, std::size_t batch_size, Rng& rng);

}  // namespace fdd
