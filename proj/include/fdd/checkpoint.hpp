// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "fdd/container.hpp"
#include "fdd/network.hpp"
#include "fdd/training.hpp"

namespace fdd {

std::string network_spec_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const std::string& text);

/// Parameters and batch-norm running statistics under `prefix`.
void add_network(Container& c, const std::string& prefix, const Network& net);
Network restore_network(const Container& c, const std::string& prefix, const NetworkSpec& spec);

/// Single network (pretrained teacher or plain student).
void save_network_checkpoint(const std::filesystem::path& path, const Network& net, const std::string& config_json);
Network load_network_checkpoint(const std::filesystem::path& path);

/// Complete trainer state: teacher backbone, adapters, attention and
/// weighting parameters, student, mapping, optimizer buffers, epoch/step
/// counters, batch generator state and the config.
void save_trainer_checkpoint(const std::filesystem::path& path, Trainer& trainer);
Trainer load_trainer_checkpoint(const std::filesystem::path& path);

/// Kind recorded in a checkpoint: "network" or "trainer".
std::string checkpoint_kind(const std::filesystem::path& path);

}  // namespace fdd
