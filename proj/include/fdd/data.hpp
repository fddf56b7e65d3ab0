// SPDX-License-Identifier: Apache-2.0
//
// Synthetic paired domains. Class identity is carried by geometric motifs
// (phase structure); a domain is an amplitude filter plus colour, contrast
// and brightness changes, so domains differ only in amplitude statistics.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fdd/layers.hpp"
#include "fdd/tensor.hpp"

namespace fdd {

inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImageSize = 32;
inline constexpr std::size_t kNumClasses = 7;

struct DomainSpec {
  std::string name;
  /// Radial amplitude gains over equal-width bands of normalized frequency
  /// |f| / |f|max in [0, 1]; the DC coefficient belongs to the first band.
  std::vector<double> band_gains{1.0};
  /// Per-channel amplitude gain (colour cast).
  std::array<double, kImageChannels> channel_gains{1.0, 1.0, 1.0};
  double brightness_offset = 0.0;
  double contrast_gain = 1.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const DomainSpec&) const = default;
};

struct SyntheticDataset {
  std::string domain;
  Tensor images;                    // [N, 3, 32, 32], values in [0, 1]
  std::vector<std::size_t> labels;  // [N]
  std::size_t n_train = 0;          // rows [0, n_train) train, the rest test
  std::size_t num_classes = kNumClasses;

  std::size_t size() const { return labels.size(); }
  std::vector<std::size_t> train_indices() const;
  std::vector<std::size_t> test_indices() const;
};

enum class Split { Train, Test, All };
std::vector<std::size_t> split_indices(const SyntheticDataset& ds, Split split);
Split parse_split(const std::string& s);

/// Canonical motif of class k with random placement, scale and tint.
Tensor generate_base(std::size_t k, Rng& rng);
/// Gain of the radial band curve at frequency bin (u, v) of an h x w grid.
double band_gain(const std::vector<double>& gains, std::size_t u, std::size_t v, std::size_t h, std::size_t w);
/// Filters amplitude per channel, then contrast, offset, noise and clamp.
/// `noise_rng` may be null when spec.noise_sigma is 0.
Tensor apply_domain(const Tensor& image, const DomainSpec& spec, Rng* noise_rng);
/// True when apply_domain without noise would not clamp any pixel.
bool fits_unclamped(const Tensor& image, const DomainSpec& spec);

struct DatasetPair {
  SyntheticDataset source;
  SyntheticDataset target;
};

/// n_per_class examples per class and domain, 80/20 train/test per class.
DatasetPair generate_dataset(std::size_t n_per_class, const DomainSpec& source, const DomainSpec& target,
                             std::uint64_t seed);

DomainSpec reference_source_spec();
DomainSpec reference_target_spec();
inline constexpr std::size_t kReferencePerClass = 250;
inline constexpr std::uint64_t kReferenceSeed = 2024;

std::string domain_spec_json(const DomainSpec& spec);
DomainSpec domain_spec_from_json(const std::string& text);

void save_dataset(const std::filesystem::path& path, const SyntheticDataset& ds, const DomainSpec& spec);
SyntheticDataset load_dataset(const std::filesystem::path& path, DomainSpec* spec = nullptr);

/// Multinomial logistic regression on raw pixels, trained on `train_rows` of
/// `fit`; returns accuracy on `eval_rows` of `eval`.
double linear_probe_accuracy(const SyntheticDataset& fit, const std::vector<std::size_t>& train_rows,
                             const SyntheticDataset& eval, const std::vector<std::size_t>& eval_rows,
                             std::size_t epochs = 30, std::uint64_t seed = 0);

}  // namespace fdd
