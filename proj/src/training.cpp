// SPDX-License-Identifier: Apache-2.0
#include "fdd/training.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <stdexcept>

#include "fdd/container.hpp"
#include "fdd/spectral.hpp"

namespace fdd {

using json = nlohmann::json;

std::string weighting_name(Weighting w) {
  switch (w) {
    case Weighting::FusionActivation: return "fusion-activation";
    case Weighting::None: return "none";
    case Weighting::Block: return "block";
    case Weighting::Channel: return "channel";
    case Weighting::BlockChannel: return "block+channel";
  }
  return "?";
}

Weighting parse_weighting(const std::string& s) {
  for (auto w : {Weighting::FusionActivation, Weighting::None, Weighting::Block, Weighting::Channel,
                 Weighting::BlockChannel})
    if (weighting_name(w) == s) return w;
  throw std::invalid_argument("unknown weighting '" + s + "' (expected none|block|channel|block+channel|fusion-activation)");
}

// ---- config -------------------------------------------------------------------

void TrainingConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  if (!(beta >= 0.0) || !std::isfinite(beta)) fail("beta must be >= 0");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) fail("gamma must be >= 0");
  if (!(tau > 0.0) || !std::isfinite(tau)) fail("tau must be > 0");
  if (!(student_lr > 0.0)) fail("student_lr must be > 0");
  if (!(adapter_lr > 0.0)) fail("adapter_lr must be > 0");
  if (!(lr_decay_factor >= 1.0)) fail("lr_decay_factor must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (batch_size < 2) fail("batch_size must be >= 2 (batch norm in train mode)");
  if (!(mix_temperature > 0.0)) fail("mix_temperature must be > 0");
  if (student_channels.empty()) fail("student_channels must not be empty");
  if (fixed_teacher && learnable_teacher_full) fail("fixed_teacher and learnable_teacher_full are exclusive");
  const auto d = decay_epochs();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] == 0 || d[i] >= epochs) fail("decay epochs must lie in (0, epochs)");
    if (i > 0 && d[i] <= d[i - 1]) fail("decay epochs must be strictly increasing");
  }
}

std::vector<std::size_t> TrainingConfig::decay_epochs() const {
  if (!lr_decay_epochs.empty()) return lr_decay_epochs;
  std::vector<std::size_t> out;
  for (auto [num, den] : {std::pair<std::size_t, std::size_t>{1, 3}, {7, 12}, {5, 6}}) {
    const std::size_t e = epochs * num / den;
    if (e > 0 && e < epochs && (out.empty() || e > out.back())) out.push_back(e);
  }
  return out;
}

double TrainingConfig::lr_multiplier(std::size_t epoch) const {
  double m = 1.0;
  for (auto d : decay_epochs())
    if (epoch >= d) m /= lr_decay_factor;
  return m;
}

std::string TrainingConfig::to_json() const {
  json j{{"beta", beta},
         {"gamma", gamma},
         {"tau", tau},
         {"epochs", epochs},
         {"student_lr", student_lr},
         {"adapter_lr", adapter_lr},
         {"lr_decay_epochs", lr_decay_epochs},
         {"lr_decay_factor", lr_decay_factor},
         {"momentum", momentum},
         {"weight_decay", weight_decay},
         {"batch_size", batch_size},
         {"seed", seed},
         {"student_channels", student_channels},
         {"mix_temperature", mix_temperature},
         {"no_kt_S", no_kt_S},
         {"no_dikt_S", no_dikt_S},
         {"no_ce_T", no_ce_T},
         {"no_kt_T", no_kt_T},
         {"fixed_teacher", fixed_teacher},
         {"learnable_teacher_full", learnable_teacher_full},
         {"weighting", weighting_name(weighting)},
         {"kl_direction", kl_direction_name(kl_direction)},
         {"reuse_teacher_forward", reuse_teacher_forward},
         {"variant", variant}};
  return j.dump();
}

void TrainingConfig::merge_json(const std::string& text) {
  const json j = json::parse(text);
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    if (k == "beta") beta = v.get<double>();
    else if (k == "gamma") gamma = v.get<double>();
    else if (k == "tau") tau = v.get<double>();
    else if (k == "epochs") epochs = v.get<std::size_t>();
    else if (k == "student_lr") student_lr = v.get<double>();
    else if (k == "adapter_lr") adapter_lr = v.get<double>();
    else if (k == "lr_decay_epochs") lr_decay_epochs = v.get<std::vector<std::size_t>>();
    else if (k == "lr_decay_factor") lr_decay_factor = v.get<double>();
    else if (k == "momentum") momentum = v.get<double>();
    else if (k == "weight_decay") weight_decay = v.get<double>();
    else if (k == "batch_size") batch_size = v.get<std::size_t>();
    else if (k == "seed") seed = v.get<std::uint64_t>();
    else if (k == "student_channels") student_channels = v.get<std::vector<std::size_t>>();
    else if (k == "mix_temperature") mix_temperature = v.get<double>();
    else if (k == "no_kt_S") no_kt_S = v.get<bool>();
    else if (k == "no_dikt_S") no_dikt_S = v.get<bool>();
    else if (k == "no_ce_T") no_ce_T = v.get<bool>();
    else if (k == "no_kt_T") no_kt_T = v.get<bool>();
    else if (k == "fixed_teacher") fixed_teacher = v.get<bool>();
    else if (k == "learnable_teacher_full") learnable_teacher_full = v.get<bool>();
    else if (k == "weighting") weighting = parse_weighting(v.get<std::string>());
    else if (k == "kl_direction") kl_direction = parse_kl_direction(v.get<std::string>());
    else if (k == "reuse_teacher_forward") reuse_teacher_forward = v.get<bool>();
    else if (k == "variant") variant = v.get<std::string>();
    else throw std::invalid_argument("config: unknown key '" + k + "'");
  }
}

std::string TrainingConfig::digest() const { return sha256_hex(to_json()); }

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{
      "full_4ds",         "no_kt_S",          "no_dikt_S",         "no_both",
      "weighting:none",   "weighting:block",  "weighting:channel", "weighting:block+channel",
      "fixed_teacher",    "learnable_teacher_full", "no_ce_T",     "no_kt_T"};
  return names;
}

TrainingConfig apply_variant(TrainingConfig c, const std::string& variant) {
  if (std::find(variant_names().begin(), variant_names().end(), variant) == variant_names().end())
    throw std::invalid_argument("unknown variant '" + variant + "'");
  c.variant = variant;
  if (variant == "no_kt_S") c.no_kt_S = true;
  else if (variant == "no_dikt_S") c.no_dikt_S = true;
  else if (variant == "no_both") c.no_kt_S = c.no_dikt_S = true;
  else if (variant.rfind("weighting:", 0) == 0) c.weighting = parse_weighting(variant.substr(10));
  else if (variant == "fixed_teacher") c.fixed_teacher = true;
  else if (variant == "learnable_teacher_full") c.learnable_teacher_full = true;
  else if (variant == "no_ce_T") c.no_ce_T = true;
  else if (variant == "no_kt_T") c.no_kt_T = true;
  return c;
}

// ---- models -------------------------------------------------------------------

ParamList WeightingParams::params() const { return {{"weighting.block", block_logits}, {"weighting.channel", channel_logits}}; }

ParamList DistillModels::teacher_learnable(const TrainingConfig& cfg) const {
  if (cfg.fixed_teacher) return {};
  ParamList out = teacher.adapter_params();
  auto act = activation.params("activation");
  out.insert(out.end(), act.begin(), act.end());
  auto w = weighting.params();
  out.insert(out.end(), w.begin(), w.end());
  if (cfg.learnable_teacher_full) {
    auto b = teacher.backbone.params("teacher.");
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

ParamList DistillModels::student_learnable() const {
  ParamList out = student.params("student.");
  if (mapping) {
    auto p = mapping->params("mapping");
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

namespace {

std::size_t channel_sum(const std::vector<std::size_t>& c) {
  std::size_t s = 0;
  for (auto v : c) s += v;
  return s;
}

}  // namespace

DistillModels build_models(const Network& pretrained_teacher, const TrainingConfig& cfg, std::size_t num_classes) {
  cfg.validate();
  Rng adapter_rng = derive_rng(cfg.seed, "adapter-init");
  Rng activation_rng = derive_rng(cfg.seed, "activation-init");
  Rng student_rng = derive_rng(cfg.seed, "student-init");
  Rng mapping_rng = derive_rng(cfg.seed, "mapping-init");

  const NetworkSpec& ts = pretrained_teacher.spec();
  if (ts.num_classes != num_classes) throw std::invalid_argument("teacher has " + std::to_string(ts.num_classes) +
                                                                 " classes, dataset has " + std::to_string(num_classes));
  AdaptedTeacher teacher = attach_adapters(pretrained_teacher.clone(), adapter_rng);
  for (auto& a : teacher.adapters) a.mix_temperature = cfg.mix_temperature;
  if (cfg.learnable_teacher_full) set_trainable(teacher.backbone.params(), true);

  NetworkSpec ss;
  ss.block_channels = cfg.student_channels;
  ss.in_channels = ts.in_channels;
  ss.in_height = ts.in_height;
  ss.in_width = ts.in_width;
  ss.num_classes = num_classes;
  ss.role = NetworkRole::Student;
  if (ss.n_blocks() != ts.n_blocks()) throw std::invalid_argument("teacher and student need the same number of blocks");

  const std::size_t m_t = channel_sum(ts.block_channels);
  const std::size_t m_s = channel_sum(ss.block_channels);
  DistillModels m{std::move(teacher), ActivationParams::init(m_t, activation_rng), {}, Network(ss, student_rng), {}};

  m.weighting.block_logits = parameter(Tensor({ts.n_blocks()}, 0.0));
  m.weighting.channel_logits = parameter(Tensor({m_t}, 0.0));
  m.weighting.block_expand = Tensor({m_t, ts.n_blocks()}, 0.0);
  std::size_t off = 0;
  for (std::size_t b = 0; b < ts.n_blocks(); ++b)
    for (std::size_t c = 0; c < ts.block_channels[b]; ++c, ++off) m.weighting.block_expand[off * ts.n_blocks() + b] = 1.0;

  if (m_s != m_t) m.mapping = FeatureMapParams::init(m_s, m_t, mapping_rng);
  return m;
}

// ---- forward passes -----------------------------------------------------------------

TeacherOutput teacher_forward(DistillModels& m, const Var& x, bool use_adapters, BatchNormMode adapter_mode,
                              bool update_running, BatchNormMode backbone_mode, const Var* stem) {
  TeacherOutput out;
  Var h = x;
  Network& net = m.teacher.backbone;
  const bool backbone_update = update_running && backbone_mode == BatchNormMode::Train;
  for (std::size_t i = 0; i < net.blocks().size(); ++i) {
    Var f = i == 0 && stem ? *stem : net.run_block(i, h, backbone_mode, backbone_update);
    if (use_adapters) {
      AdapterOutput a = adapter_forward(f, m.teacher.adapters[i], adapter_mode, update_running);
      out.phases.push_back(a.phase);
      h = a.f_ift;
    } else {
      out.phases.push_back(phase(dft2(f)));
      h = f;
    }
    out.features.push_back(h);
  }
  out.logits = net.classify(h);
  return out;
}

StudentOutput student_forward(Network& student, const Var& x, BatchNormMode mode, bool with_phases,
                              bool update_running) {
  StudentOutput out;
  Network::Output o = student.forward(x, mode, update_running);
  out.logits = o.logits;
  out.features = o.block_outputs;
  if (with_phases)
    for (const auto& f : o.block_outputs) out.phases.push_back(phase(dft2(f)));
  return out;
}

namespace {

// [M] weights broadcast to [B, M].
Var broadcast_rows(const Var& w, std::size_t batch) {
  const std::size_t M = w.size();
  return fully_connected(constant(Tensor({batch, 1}, 1.0)), reshape(w, {M, 1}));
}

}  // namespace

TransferStacks transfer_stacks(DistillModels& m, const std::vector<Var>& teacher_phases,
                               const std::vector<Var>& student_phases, Weighting weighting) {
  FusedPhase t = fuse(teacher_phases);
  FusedPhase s = fuse(student_phases);
  Var t_data = t.data;
  Var s_data = s.data;
  std::tie(s_data, t_data) = align_spatial(s_data, t_data);
  if (m.mapping) s_data = map_features(s_data, *m.mapping);
  if (s_data.shape() != t_data.shape())
    throw ShapeError("transfer_stacks: student stack " + shape_str(s_data.shape()) + " vs teacher " +
                     shape_str(t_data.shape()));
  const std::size_t B = t_data.shape()[0];
  Var w;
  switch (weighting) {
    case Weighting::FusionActivation:
      w = attention(squeeze(t_data), m.activation);
      break;
    case Weighting::None:
      return {s_data, t_data, constant(Tensor({B, t.channels()}, 1.0))};
    case Weighting::Block:
      w = broadcast_rows(sigmoid(fully_connected(m.weighting.block_logits, constant(m.weighting.block_expand))), B);
      break;
    case Weighting::Channel:
      w = broadcast_rows(sigmoid(m.weighting.channel_logits), B);
      break;
    case Weighting::BlockChannel:
      w = broadcast_rows(mul(sigmoid(fully_connected(m.weighting.block_logits, constant(m.weighting.block_expand))),
                             sigmoid(m.weighting.channel_logits)),
                         B);
      break;
  }
  return {activate(s_data, w), activate(t_data, w), w};
}

// ---- trainer -------------------------------------------------------------------------

Trainer::Trainer(DistillModels models, TrainingConfig cfg)
    : batch_rng(derive_rng(cfg.seed, "batches")),
      m_(std::move(models)),
      cfg_(std::move(cfg)),
      teacher_opt_(m_.teacher_learnable(cfg_)),
      student_opt_(m_.student_learnable(), Sgd::Options{cfg_.momentum, cfg_.weight_decay}) {
  cfg_.validate();
}

namespace {

LossOptions teacher_loss_options(const TrainingConfig& c) {
  LossOptions o;
  o.beta = c.beta;
  o.gamma = c.gamma;
  o.tau = c.tau;
  o.direction = c.kl_direction;
  o.use_ce = !c.no_ce_T;
  o.use_kt = !c.no_kt_T;
  o.use_dikt = false;
  return o;
}

LossOptions student_loss_options(const TrainingConfig& c) {
  LossOptions o;
  o.beta = c.beta;
  o.gamma = c.gamma;
  o.tau = c.tau;
  o.direction = c.kl_direction;
  o.use_kt = !c.no_kt_S;
  o.use_dikt = !c.no_dikt_S;
  return o;
}

std::vector<std::size_t> labels_of(const std::vector<std::size_t>& labels, const std::vector<std::size_t>& batch) {
  std::vector<std::size_t> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) out[i] = labels.at(batch[i]);
  return out;
}

Var detached(const Var& v) { return constant(v.value()); }

}  // namespace

Var Trainer::stem_batch(const Tensor& images, const std::vector<std::size_t>& batch) {
  if (stem_images_ != &images) {
    NoGradGuard no_grad;
    const std::size_t N = images.dim(0);
    std::vector<Tensor> parts;
    constexpr std::size_t kChunk = 250;
    for (std::size_t s = 0; s < N; s += kChunk) {
      std::vector<std::size_t> rows;
      for (std::size_t i = s; i < std::min(N, s + kChunk); ++i) rows.push_back(i);
      parts.push_back(m_.teacher.backbone.run_block(0, input_batch(images, rows), BatchNormMode::Eval, false).value());
    }
    Shape shape = parts[0].shape();
    shape[0] = N;
    std::vector<double> data;
    data.reserve(shape_numel(shape));
    for (const auto& p : parts) data.insert(data.end(), p.vec().begin(), p.vec().end());
    stem_cache_ = Tensor(shape, std::move(data));
    stem_images_ = &images;
  }
  return input_batch(stem_cache_, batch);
}

StepRecord Trainer::train_step(const Tensor& images, const std::vector<std::size_t>& labels,
                               const std::vector<std::size_t>& batch, double lr_multiplier) {
  const Var x = input_batch(images, batch);
  const std::vector<std::size_t> y = labels_of(labels, batch);
  const bool adapters = !cfg_.fixed_teacher;
  const BatchNormMode backbone_mode = cfg_.learnable_teacher_full ? BatchNormMode::Train : BatchNormMode::Eval;
  const bool need_phases = !cfg_.no_dikt_S;
  StepRecord rec;
  // The frozen first block sees constant inputs, so its output depends only on the image.
  std::optional<Var> stem;
  if (!cfg_.learnable_teacher_full) stem = stem_batch(images, batch);
  const Var* stem_ptr = stem ? &*stem : nullptr;

  // (a)
  TeacherOutput t = teacher_forward(m_, x, adapters, BatchNormMode::Train, true, backbone_mode, stem_ptr);
  StudentOutput s = student_forward(m_.student, x, BatchNormMode::Train, need_phases);

  // (b)
  if (adapters) {
    LossResult lt = teacher_total(t.logits, detached(s.logits), y, teacher_loss_options(cfg_));
    rec.teacher = lt.parts;
    teacher_opt_.zero_grad();
    if (lt.total.requires_grad()) backward(lt.total);
    teacher_opt_.step(cfg_.adapter_lr * lr_multiplier);
  }
  if (on_phase) on_phase('b');

  // (c)
  if (adapters && !cfg_.reuse_teacher_forward) {
    NoGradGuard no_grad;
    t = teacher_forward(m_, x, adapters, BatchNormMode::Train, false, backbone_mode, stem_ptr);
  } else {
    t.logits = detached(t.logits);
    for (auto& p : t.phases) p = detached(p);
  }

  // (d)
  Var s_act, t_act;
  if (need_phases) {
    TransferStacks st = transfer_stacks(m_, t.phases, s.phases, cfg_.weighting);
    s_act = st.student_act;
    t_act = st.teacher_act;
  }
  LossResult ls = student_total(s.logits, t.logits, y, s_act, t_act, student_loss_options(cfg_));
  rec.student = ls.parts;
  student_opt_.zero_grad();
  backward(ls.total);
  student_opt_.step(cfg_.student_lr * lr_multiplier);
  if (on_phase) on_phase('d');
  ++step;
  return rec;
}

// ---- evaluation -------------------------------------------------------------------

std::size_t argmax_row(const double* row, std::size_t k) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

namespace {

constexpr std::size_t kEvalBatch = 250;

template <class Logits>
double accuracy_over(const SyntheticDataset& ds, Split split, Logits&& logits_of) {
  const auto idx = split_indices(ds, split);
  if (idx.empty()) throw std::invalid_argument("evaluate: empty split");
  NoGradGuard no_grad;
  std::size_t correct = 0;
  for (std::size_t s = 0; s < idx.size(); s += kEvalBatch) {
    std::vector<std::size_t> b(idx.begin() + static_cast<std::ptrdiff_t>(s),
                               idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), s + kEvalBatch)));
    const Var z = logits_of(input_batch(ds.images, b));
    const std::size_t K = z.shape()[1];
    for (std::size_t i = 0; i < b.size(); ++i)
      if (argmax_row(z.value().ptr() + i * K, K) == ds.labels[b[i]]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

}  // namespace

double evaluate(Network& net, const SyntheticDataset& ds, Split split) {
  return accuracy_over(ds, split, [&](const Var& x) { return net.forward(x, BatchNormMode::Eval).logits; });
}

double evaluate_teacher(DistillModels& m, const SyntheticDataset& ds, Split split, bool use_adapters) {
  return accuracy_over(ds, split, [&](const Var& x) {
    return teacher_forward(m, x, use_adapters, BatchNormMode::Eval, false).logits;
  });
}

std::vector<double> mixing_weights(const DistillModels& m) {
  NoGradGuard no_grad;
  std::vector<double> out;
  for (const auto& a : m.teacher.adapters) out.push_back(mixing_weight(a).item());
  return out;
}

// ---- metrics ------------------------------------------------------------------------

namespace {

json breakdown_json(const LossBreakdown& b) {
  return json{{"ce", b.ce}, {"kt", b.kt}, {"dikt", b.dikt}, {"total", b.total},
              {"beta", b.beta}, {"gamma", b.gamma}, {"tau", b.tau}};
}

}  // namespace

std::string metrics_header_json() {
  json j{{"schema", "fdd.metrics.v1"},
         {"fields",
          {"epoch", "step", "lr_student", "lr_adapter", "teacher", "student", "student_acc", "teacher_acc", "lambda"}},
         {"loss_fields", {"ce", "kt", "dikt", "total", "beta", "gamma", "tau"}}};
  return j.dump();
}

std::string metrics_json(const EpochMetrics& m) {
  json j{{"epoch", m.epoch},
         {"step", m.step},
         {"lr_student", m.lr_student},
         {"lr_adapter", m.lr_adapter},
         {"teacher", breakdown_json(m.teacher)},
         {"student", breakdown_json(m.student)},
         {"student_acc", m.student_acc},
         {"teacher_acc", m.teacher_acc},
         {"lambda", m.lambdas}};
  return j.dump();
}

// ---- loops --------------------------------------------------------------------------

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> indices, std::size_t batch_size, Rng& rng) {
  std::shuffle(indices.begin(), indices.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < indices.size(); s += batch_size) {
    const std::size_t e = std::min(indices.size(), s + batch_size);
    if (e - s < 2) break;
    out.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(s), indices.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return out;
}

namespace {

void add_into(LossBreakdown& acc, const LossBreakdown& b) {
  acc.ce += b.ce;
  acc.kt += b.kt;
  acc.dikt += b.dikt;
  acc.total += b.total;
  acc.beta = b.beta;
  acc.gamma = b.gamma;
  acc.tau = b.tau;
}

void divide(LossBreakdown& acc, double n) {
  acc.ce /= n;
  acc.kt /= n;
  acc.dikt /= n;
  acc.total /= n;
}

}  // namespace

TrainResult train(Trainer& trainer, const SyntheticDataset& target, const EpochCallback& on_epoch) {
  const TrainingConfig& cfg = trainer.config();
  const auto train_idx = target.train_indices();
  TrainResult result;
  while (trainer.epoch < cfg.epochs) {
    const std::size_t e = trainer.epoch;
    const double mult = cfg.lr_multiplier(e);
    EpochMetrics em;
    em.epoch = e + 1;
    em.lr_student = cfg.student_lr * mult;
    em.lr_adapter = cfg.fixed_teacher ? 0.0 : cfg.adapter_lr * mult;
    const auto batches = make_batches(train_idx, cfg.batch_size, trainer.batch_rng);
    for (const auto& b : batches) {
      StepRecord r;
      try {
        r = trainer.train_step(target.images, target.labels, b, mult);
      } catch (const NumericError& err) {
        throw NumericError("training aborted at epoch " + std::to_string(e + 1) + ", step " +
                           std::to_string(trainer.step + 1) + ": " + err.what());
      }
      add_into(em.teacher, r.teacher);
      add_into(em.student, r.student);
    }
    if (!batches.empty()) {
      divide(em.teacher, static_cast<double>(batches.size()));
      divide(em.student, static_cast<double>(batches.size()));
    }
    em.step = trainer.step;
    em.student_acc = evaluate(trainer.models().student, target, Split::Test);
    em.teacher_acc = evaluate_teacher(trainer.models(), target, Split::Test, !cfg.fixed_teacher);
    em.lambdas = mixing_weights(trainer.models());
    ++trainer.epoch;
    result.metrics.push_back(em);
    if (on_epoch) on_epoch(trainer, em);
  }
  result.final_student_acc = evaluate(trainer.models().student, target, Split::Test);
  result.final_teacher_acc = evaluate_teacher(trainer.models(), target, Split::Test, !cfg.fixed_teacher);
  return result;
}

Network pretrain_teacher(const SyntheticDataset& source, const PretrainConfig& cfg,
                         const std::function<void(std::size_t, double)>& on_epoch) {
  if (cfg.batch_size < 2) throw std::invalid_argument("pretrain: batch_size must be >= 2");
  NetworkSpec spec;
  spec.block_channels = cfg.channels;
  spec.num_classes = source.num_classes;
  spec.in_channels = source.images.dim(1);
  spec.in_height = source.images.dim(2);
  spec.in_width = source.images.dim(3);
  spec.role = NetworkRole::Teacher;
  Rng init_rng = derive_rng(cfg.seed, "teacher-init");
  Rng batch_rng = derive_rng(cfg.seed, "teacher-batches");
  Network net(spec, init_rng);
  Sgd opt(net.params("teacher."));
  TrainingConfig sched;
  sched.epochs = cfg.epochs;
  const auto idx = source.train_indices();
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const double lr = cfg.lr * sched.lr_multiplier(e);
    for (const auto& b : make_batches(idx, cfg.batch_size, batch_rng)) {
      const Var x = input_batch(source.images, b);
      const Var loss = ce_loss(net.forward(x, BatchNormMode::Train).logits, labels_of(source.labels, b));
      opt.zero_grad();
      backward(loss);
      opt.step(lr);
    }
    if (on_epoch) on_epoch(e + 1, evaluate(net, source, Split::Test));
  }
  return net;
}

TrainResult train_plain_student(const SyntheticDataset& target, const TrainingConfig& cfg) {
  cfg.validate();
  NetworkSpec ss;
  ss.block_channels = cfg.student_channels;
  ss.num_classes = target.num_classes;
  ss.in_channels = target.images.dim(1);
  ss.in_height = target.images.dim(2);
  ss.in_width = target.images.dim(3);
  Rng student_rng = derive_rng(cfg.seed, "student-init");
  Rng batch_rng = derive_rng(cfg.seed, "batches");
  Network student(ss, student_rng);
  Sgd opt(student.params("student."), Sgd::Options{cfg.momentum, cfg.weight_decay});
  const auto idx = target.train_indices();
  TrainResult result;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const double mult = cfg.lr_multiplier(e);
    EpochMetrics em;
    em.epoch = e + 1;
    em.lr_student = cfg.student_lr * mult;
    const auto batches = make_batches(idx, cfg.batch_size, batch_rng);
    for (const auto& b : batches) {
      const Var x = input_batch(target.images, b);
      const Var loss = ce_loss(student_forward(student, x, BatchNormMode::Train, false).logits, labels_of(target.labels, b));
      em.student.ce += loss.item();
      opt.zero_grad();
      backward(loss);
      opt.step(cfg.student_lr * mult);
    }
    em.step = opt.steps();
    if (!batches.empty()) em.student.ce /= static_cast<double>(batches.size());
    em.student.total = em.student.ce;
    em.student_acc = evaluate(student, target, Split::Test);
    result.metrics.push_back(em);
  }
  result.final_student_acc = evaluate(student, target, Split::Test);
  return result;
}

TrainResult run_ablation(const std::string& variant, const TrainingConfig& base, const Network& pretrained_teacher,
                         const SyntheticDataset& target) {
  TrainingConfig cfg = apply_variant(base, variant);
  Trainer trainer(build_models(pretrained_teacher, cfg, target.num_classes), cfg);
  return train(trainer, target);
}

}  // namespace fdd
