// SPDX-License-Identifier: Apache-2.0
#include "fdd/checkpoint.hpp"

#include <json.hpp>
#include <sstream>

namespace fdd {

using json = nlohmann::json;

std::string network_spec_json(const NetworkSpec& spec) {
  json j{{"block_channels", spec.block_channels},
         {"in_channels", spec.in_channels},
         {"in_height", spec.in_height},
         {"in_width", spec.in_width},
         {"num_classes", spec.num_classes},
         {"role", role_name(spec.role)}};
  return j.dump();
}

NetworkSpec network_spec_from_json(const std::string& text) {
  const json j = json::parse(text);
  NetworkSpec s;
  s.block_channels = j.at("block_channels").get<std::vector<std::size_t>>();
  s.in_channels = j.at("in_channels").get<std::size_t>();
  s.in_height = j.at("in_height").get<std::size_t>();
  s.in_width = j.at("in_width").get<std::size_t>();
  s.num_classes = j.at("num_classes").get<std::size_t>();
  s.role = parse_role(j.at("role").get<std::string>());
  s.validate();
  return s;
}

namespace {

void add_params(Container& c, const ParamList& params) {
  for (const auto& p : params) c.add_tensor(p.name, p.var.value());
}

void restore_params(const Container& c, const ParamList& params) {
  for (const auto& p : params) {
    Tensor t = c.tensor(p.name);
    if (t.shape() != p.var.shape())
      throw FormatError("checkpoint block '" + p.name + "' has shape " + shape_str(t.shape()) + ", expected " +
                        shape_str(p.var.shape()));
    Var v = p.var;
    v.mutable_value() = std::move(t);
  }
}

void add_stats(Container& c, const std::string& prefix, const std::vector<BatchNormLayer*>& norms) {
  for (std::size_t i = 0; i < norms.size(); ++i) {
    c.add_tensor(prefix + "norm" + std::to_string(i) + ".running_mean", norms[i]->stats.running_mean);
    c.add_tensor(prefix + "norm" + std::to_string(i) + ".running_var", norms[i]->stats.running_var);
  }
}

void restore_stats(const Container& c, const std::string& prefix, const std::vector<BatchNormLayer*>& norms) {
  for (std::size_t i = 0; i < norms.size(); ++i) {
    auto& st = norms[i]->stats;
    Tensor mean = c.tensor(prefix + "norm" + std::to_string(i) + ".running_mean");
    Tensor var = c.tensor(prefix + "norm" + std::to_string(i) + ".running_var");
    if (mean.shape() != st.running_mean.shape() || var.shape() != st.running_var.shape())
      throw FormatError("checkpoint running statistics under '" + prefix + "' do not match the network");
    st.running_mean = std::move(mean);
    st.running_var = std::move(var);
  }
}

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

}  // namespace

void add_network(Container& c, const std::string& prefix, const Network& net) {
  Network view = net;
  add_params(c, net.params(prefix));
  add_stats(c, prefix, view.norms());
}

Network restore_network(const Container& c, const std::string& prefix, const NetworkSpec& spec) {
  Rng scratch(0);
  Network net(spec, scratch);
  restore_params(c, net.params(prefix));
  restore_stats(c, prefix, net.norms());
  return net;
}

void save_network_checkpoint(const std::filesystem::path& path, const Network& net, const std::string& config_json) {
  Container c(kCheckpointMagic, sha256_hex(config_json));
  c.add_text("kind", "network");
  c.add_text("config", config_json);
  c.add_text("spec", network_spec_json(net.spec()));
  add_network(c, "net.", net);
  c.save(path);
}

Network load_network_checkpoint(const std::filesystem::path& path) {
  const Container c = Container::load(path, kCheckpointMagic);
  if (c.text("kind") != "network")
    throw FormatError(path.string() + " is a '" + c.text("kind") + "' checkpoint, expected 'network'");
  return restore_network(c, "net.", network_spec_from_json(c.text("spec")));
}

std::string checkpoint_kind(const std::filesystem::path& path) {
  return Container::load(path, kCheckpointMagic).text("kind");
}

namespace {

std::vector<BatchNormLayer*> adapter_norms(DistillModels& m) { return m.teacher.adapter_norms(); }

}  // namespace

void save_trainer_checkpoint(const std::filesystem::path& path, Trainer& trainer) {
  DistillModels& m = trainer.models();
  const TrainingConfig& cfg = trainer.config();
  const std::string config_json = cfg.to_json();
  Container c(kCheckpointMagic, cfg.digest());
  c.add_text("kind", "trainer");
  c.add_text("config", config_json);
  c.add_text("teacher_spec", network_spec_json(m.teacher.backbone.spec()));
  c.add_text("student_spec", network_spec_json(m.student.spec()));
  c.add_ints("counters", {static_cast<std::int64_t>(trainer.epoch), static_cast<std::int64_t>(trainer.step),
                          static_cast<std::int64_t>(trainer.teacher_optimizer().steps()),
                          static_cast<std::int64_t>(trainer.student_optimizer().steps())});
  c.add_text("batch_rng", rng_state(trainer.batch_rng));

  add_network(c, "teacher.", m.teacher.backbone);
  add_params(c, m.teacher.adapter_params());
  add_stats(c, "adapters.", adapter_norms(m));
  add_params(c, m.activation.params("activation"));
  add_params(c, m.weighting.params());
  add_network(c, "student.", m.student);
  if (m.mapping) add_params(c, m.mapping->params("mapping"));

  const ParamList& tp = trainer.teacher_optimizer().params();
  for (std::size_t i = 0; i < tp.size(); ++i) {
    c.add_tensor("adam.m." + tp[i].name, trainer.teacher_optimizer().first_moment()[i]);
    c.add_tensor("adam.v." + tp[i].name, trainer.teacher_optimizer().second_moment()[i]);
  }
  const ParamList& sp = trainer.student_optimizer().params();
  for (std::size_t i = 0; i < sp.size(); ++i)
    c.add_tensor("sgd.velocity." + sp[i].name, trainer.student_optimizer().velocity()[i]);
  c.save(path);
}

Trainer load_trainer_checkpoint(const std::filesystem::path& path) {
  const Container c = Container::load(path, kCheckpointMagic);
  if (c.text("kind") != "trainer")
    throw FormatError(path.string() + " is a '" + c.text("kind") + "' checkpoint, expected 'trainer'");
  TrainingConfig cfg;
  cfg.merge_json(c.text("config"));
  if (cfg.digest() != c.config_digest()) throw FormatError(path.string() + ": config digest mismatch");
  const NetworkSpec ts = network_spec_from_json(c.text("teacher_spec"));
  const NetworkSpec ss = network_spec_from_json(c.text("student_spec"));
  if (ss.block_channels != cfg.student_channels) throw FormatError(path.string() + ": student spec disagrees with config");

  Network backbone = restore_network(c, "teacher.", ts);
  Trainer trainer(build_models(backbone, cfg, ts.num_classes), cfg);
  DistillModels& m = trainer.models();
  // build_models works on a clone of the backbone.
  restore_params(c, m.teacher.backbone.params("teacher."));
  restore_stats(c, "teacher.", m.teacher.backbone.norms());
  restore_params(c, m.teacher.adapter_params());
  restore_stats(c, "adapters.", adapter_norms(m));
  restore_params(c, m.activation.params("activation"));
  restore_params(c, m.weighting.params());
  restore_params(c, m.student.params("student."));
  restore_stats(c, "student.", m.student.norms());
  if (m.mapping) restore_params(c, m.mapping->params("mapping"));

  const auto counters = c.ints("counters");
  if (counters.size() != 4) throw FormatError(path.string() + ": malformed counters");
  trainer.epoch = static_cast<std::size_t>(counters[0]);
  trainer.step = static_cast<std::uint64_t>(counters[1]);
  trainer.teacher_optimizer().set_steps(static_cast<std::uint64_t>(counters[2]));
  trainer.student_optimizer().set_steps(static_cast<std::uint64_t>(counters[3]));
  std::istringstream rs(c.text("batch_rng"));
  rs >> trainer.batch_rng;
  if (!rs) throw FormatError(path.string() + ": malformed generator state");

  const ParamList& tp = trainer.teacher_optimizer().params();
  for (std::size_t i = 0; i < tp.size(); ++i) {
    trainer.teacher_optimizer().first_moment()[i] = c.tensor("adam.m." + tp[i].name);
    trainer.teacher_optimizer().second_moment()[i] = c.tensor("adam.v." + tp[i].name);
  }
  const ParamList& sp = trainer.student_optimizer().params();
  for (std::size_t i = 0; i < sp.size(); ++i) trainer.student_optimizer().velocity()[i] = c.tensor("sgd.velocity." + sp[i].name);
  return trainer;
}

}  // namespace fdd
