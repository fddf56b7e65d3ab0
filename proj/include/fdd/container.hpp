// SPDX-License-Identifier: Apache-2.0
//
// Binary container shared by checkpoints and datasets.
//
//   magic        8 bytes ("FDD-CKPT" or "FDD-DATA")
//   version      u32
//   digest       u32 length + bytes (config digest, hex)
//   block count  u32
//   blocks       u32 name length, name, u8 dtype (0 f64, 1 i64, 2 text),
//                u32 rank, u64 dims[rank], little-endian payload
//   sha256       32 bytes over everything above
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fdd/tensor.hpp"

namespace fdd {

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr char kCheckpointMagic[] = "FDD-CKPT";
inline constexpr char kDatasetMagic[] = "FDD-DATA";

/// Malformed, truncated, or mismatched container.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { F64 = 0, I64 = 1, Text = 2 };

struct ContainerBlock {
  std::string name;
  DType dtype = DType::F64;
  Shape dims;
  std::vector<double> f64;
  std::vector<std::int64_t> i64;
  std::string text;
};

class Container {
 public:
  Container() = default;
  Container(std::string magic, std::string config_digest)
      : magic_(std::move(magic)), config_digest_(std::move(config_digest)) {}

  void add_tensor(const std::string& name, const Tensor& t);
  void add_ints(const std::string& name, const std::vector<std::int64_t>& values);
  void add_text(const std::string& name, const std::string& text);

  bool has(const std::string& name) const;
  const ContainerBlock& block(const std::string& name) const;
  Tensor tensor(const std::string& name) const;
  std::vector<std::int64_t> ints(const std::string& name) const;
  const std::string& text(const std::string& name) const;

  const std::vector<ContainerBlock>& blocks() const noexcept { return blocks_; }
  const std::string& magic() const noexcept { return magic_; }
  const std::string& config_digest() const noexcept { return config_digest_; }
  std::uint32_t version() const noexcept { return version_; }

  std::string serialize() const;
  /// Verifies magic, version and checksum before decoding anything.
  static Container parse(const std::string& bytes, const std::string& expected_magic);

  /// Writes through a temporary file and renames, so readers never see a
  /// partially written container.
  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path, const std::string& expected_magic);

 private:
  std::string magic_;
  std::uint32_t version_ = kContainerVersion;
  std::string config_digest_;
  std::vector<ContainerBlock> blocks_;
};

std::string sha256_hex(const std::string& bytes);
std::string file_sha256(const std::filesystem::path& path);
std::string read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace fdd
