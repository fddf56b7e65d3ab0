// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "fdd/checkpoint.hpp"
#include "fdd/container.hpp"
#include "fixtures.hpp"
#include "support.hpp"

using namespace fdd;
using fdd::test::TempDir;
using fdd::test::tiny_config;
using fdd::test::tiny_pair;
using fdd::test::tiny_teacher;

TEST_CASE("container round trip and integrity") {
  TempDir dir("container");
  Container c(kCheckpointMagic, "abc");
  c.add_tensor("w", Tensor({2, 2}, {1.0, -2.0, 3.5, 0.0}));
  c.add_ints("n", {1, -7, 42});
  c.add_text("t", "hello");
  c.save(dir / "c.bin");
  const Container d = Container::load(dir / "c.bin", kCheckpointMagic);
  CHECK(d.tensor("w") == c.tensor("w"));
  CHECK(d.ints("n") == std::vector<std::int64_t>{1, -7, 42});
  CHECK(d.text("t") == "hello");
  CHECK(d.config_digest() == "abc");
  CHECK(d.serialize() == c.serialize());

  const std::string bytes = read_file(dir / "c.bin");
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, bytes.size() / 2, bytes.size() - 1})
    CHECK_THROWS_AS(Container::parse(bytes.substr(0, cut), kCheckpointMagic), FormatError);
  std::string flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  CHECK_THROWS_AS(Container::parse(flipped, kCheckpointMagic), FormatError);
  CHECK_THROWS_AS(Container::parse(bytes, kDatasetMagic), FormatError);
  CHECK_THROWS_AS(d.tensor("missing"), FormatError);
}

TEST_CASE("sha256 of a known string") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("network checkpoint") {
  TempDir dir("netckpt");
  const Network& teacher = tiny_teacher();
  save_network_checkpoint(dir / "a.ckpt", teacher, "{}");
  CHECK(checkpoint_kind(dir / "a.ckpt") == "network");
  Network back = load_network_checkpoint(dir / "a.ckpt");
  save_network_checkpoint(dir / "b.ckpt", back, "{}");
  CHECK(read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt"));
  Network copy = teacher.clone();
  CHECK(evaluate(copy, tiny_pair().source, Split::All) == evaluate(back, tiny_pair().source, Split::All));

  const std::string bytes = read_file(dir / "a.ckpt");
  write_file_atomic(dir / "cut.ckpt", bytes.substr(0, bytes.size() - 40));
  CHECK_THROWS_AS(load_network_checkpoint(dir / "cut.ckpt"), FormatError);
}

TEST_CASE("trainer checkpoint round trip and resume") {
  TempDir dir("trainerckpt");
  const SyntheticDataset& ds = tiny_pair().target;
  TrainingConfig cfg = tiny_config(2);

  Trainer straight(build_models(tiny_teacher(), cfg, kNumClasses), cfg);
  const TrainResult full = train(straight, ds);

  Trainer first(build_models(tiny_teacher(), cfg, kNumClasses), cfg);
  std::vector<std::string> lines;
  train(first, ds, [&](Trainer& t, const EpochMetrics& m) {
    lines.push_back(metrics_json(m));
    if (m.epoch == 1) save_trainer_checkpoint(dir / "e1.ckpt", t);
  });
  CHECK(checkpoint_kind(dir / "e1.ckpt") == "trainer");

  Trainer resumed = load_trainer_checkpoint(dir / "e1.ckpt");
  CHECK(resumed.epoch == 1);
  save_trainer_checkpoint(dir / "e1b.ckpt", resumed);
  CHECK(read_file(dir / "e1.ckpt") == read_file(dir / "e1b.ckpt"));

  const TrainResult rest = train(resumed, ds);
  REQUIRE(rest.metrics.size() == 1);
  CHECK(metrics_json(rest.metrics[0]) == metrics_json(full.metrics[1]));
  CHECK(rest.final_student_acc == full.final_student_acc);

  save_trainer_checkpoint(dir / "end.ckpt", straight);
  Trainer loaded = load_trainer_checkpoint(dir / "end.ckpt");
  CHECK(evaluate(loaded.models().student, ds, Split::Test) == full.final_student_acc);

  const std::string bytes = read_file(dir / "end.ckpt");
  write_file_atomic(dir / "cut.ckpt", bytes.substr(0, bytes.size() / 3));
  CHECK_THROWS_AS(load_trainer_checkpoint(dir / "cut.ckpt"), FormatError);
  CHECK_THROWS_AS(load_trainer_checkpoint(dir / "missing.ckpt"), std::exception);
  CHECK_THROWS_AS(load_network_checkpoint(dir / "end.ckpt"), FormatError);
}
