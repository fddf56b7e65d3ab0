// SPDX-License-Identifier: Apache-2.0
//
// Small shared datasets and teachers for the training tests.
#pragma once

#include "fdd/data.hpp"
#include "fdd/training.hpp"

namespace fdd::test {

/// 6 examples per class and domain: 35 train and 7 test rows.
inline const DatasetPair& tiny_pair() {
  static const DatasetPair pair = generate_dataset(6, reference_source_spec(), reference_target_spec(), 5);
  return pair;
}

/// Default-width teacher after one source epoch.
inline const Network& tiny_teacher() {
  static const Network net = [] {
    PretrainConfig pc;
    pc.epochs = 1;
    pc.batch_size = 16;
    return pretrain_teacher(tiny_pair().source, pc);
  }();
  return net;
}

inline TrainingConfig tiny_config(std::size_t epochs = 2) {
  TrainingConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  return c;
}

}  // namespace fdd::test
