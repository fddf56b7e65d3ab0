// SPDX-License-Identifier: Apache-2.0
#include "fdd/data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numbers>
#include <stdexcept>

#include "fdd/container.hpp"
#include "fdd/spectral.hpp"

namespace fdd {

using json = nlohmann::json;

void DomainSpec::validate() const {
  if (band_gains.empty()) throw std::invalid_argument("domain '" + name + "': band_gains must not be empty");
  for (double g : band_gains)
    if (!(g > 0.0) || !std::isfinite(g)) throw std::invalid_argument("domain '" + name + "': band gains must be positive");
  for (double g : channel_gains)
    if (!(g > 0.0) || !std::isfinite(g)) throw std::invalid_argument("domain '" + name + "': channel gains must be positive");
  if (!(contrast_gain > 0.0)) throw std::invalid_argument("domain '" + name + "': contrast_gain must be positive");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("domain '" + name + "': noise_sigma must be non-negative");
  if (!std::isfinite(brightness_offset)) throw std::invalid_argument("domain '" + name + "': offset must be finite");
}

std::vector<std::size_t> SyntheticDataset::train_indices() const { return split_indices(*this, Split::Train); }
std::vector<std::size_t> SyntheticDataset::test_indices() const { return split_indices(*this, Split::Test); }

std::vector<std::size_t> split_indices(const SyntheticDataset& ds, Split split) {
  std::size_t lo = 0, hi = ds.size();
  if (split == Split::Train) hi = ds.n_train;
  if (split == Split::Test) lo = ds.n_train;
  std::vector<std::size_t> idx(hi - lo);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = lo + i;
  return idx;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  if (s == "all") return Split::All;
  throw std::invalid_argument("unknown split '" + s + "' (expected train|test|all)");
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kBaseNoise = 0.04;
constexpr double kEdge = 2.5;

double smooth_sign(double v) { return std::tanh(kEdge * v); }

// Motif value in [-1, 1] at (y, x). c* is the motif centre, t the scale.
double motif(std::size_t k, double y, double x, double cy, double cx, double t) {
  const double dy = y - cy, dx = x - cx;
  switch (k) {
    case 0:  // axis-aligned stripes
      return smooth_sign(std::sin(kTwoPi * dy / t));
    case 1:  // diagonal stripes
      return smooth_sign(std::sin(kTwoPi * (dx + dy) / (t * std::numbers::sqrt2)));
    case 2:  // coarse checker
      return smooth_sign(2.0 * std::sin(kTwoPi * dx / t) * std::sin(kTwoPi * dy / t));
    case 3:  // concentric rings
      return smooth_sign(std::sin(kTwoPi * std::hypot(dx, dy) / t));
    case 4: {  // plus-shaped cross
      const double arm = 0.25 * t;
      return smooth_sign(std::max(arm - std::abs(dx), arm - std::abs(dy)));
    }
    case 5:  // disk
      return smooth_sign(0.9 * t - std::hypot(dx, dy));
    case 6:  // fine checker
      return smooth_sign(2.0 * std::sin(kTwoPi * dx / (0.5 * t)) * std::sin(kTwoPi * dy / (0.5 * t)));
    default:
      throw std::invalid_argument("class index " + std::to_string(k) + " out of range");
  }
}

}  // namespace

Tensor generate_base(std::size_t k, Rng& rng) {
  if (k >= kNumClasses) throw std::invalid_argument("generate_base: class " + std::to_string(k) + " out of range");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  const double n = static_cast<double>(kImageSize);
  const double t = 8.0 * uni(0.85, 1.15);
  const double cy = uni(0.35 * n, 0.65 * n), cx = uni(0.35 * n, 0.65 * n);
  const int d4 = static_cast<int>(rng() % 8);
  std::array<double, kImageChannels> mean{}, amp{};
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    mean[c] = uni(0.45, 0.55);
    amp[c] = uni(0.18, 0.28);
  }
  std::normal_distribution<double> noise(0.0, kBaseNoise);
  Tensor img({kImageChannels, kImageSize, kImageSize});
  for (std::size_t h = 0; h < kImageSize; ++h)
    for (std::size_t w = 0; w < kImageSize; ++w) {
      double y = static_cast<double>(h), x = static_cast<double>(w);
      if (d4 & 1) y = n - 1.0 - y;
      if (d4 & 2) x = n - 1.0 - x;
      if (d4 & 4) std::swap(x, y);
      const double p = motif(k, y, x, cy, cx, t);
      for (std::size_t c = 0; c < kImageChannels; ++c) {
        const double v = mean[c] + amp[c] * p + noise(rng);
        img[(c * kImageSize + h) * kImageSize + w] = std::clamp(v, 0.0, 1.0);
      }
    }
  return img;
}

double band_gain(const std::vector<double>& gains, std::size_t u, std::size_t v, std::size_t h, std::size_t w) {
  const double fu = static_cast<double>(std::min(u, h - u)) / static_cast<double>(h);
  const double fv = static_cast<double>(std::min(v, w - v)) / static_cast<double>(w);
  const double r = std::sqrt((fu * fu + fv * fv) / 0.5);
  const std::size_t nb = gains.size();
  const std::size_t band = std::min(nb - 1, static_cast<std::size_t>(r * static_cast<double>(nb)));
  return gains[band];
}

namespace {

Tensor filtered(const Tensor& image, const DomainSpec& spec) {
  if (image.rank() != 3) throw ShapeError("apply_domain: image must be [C,H,W]");
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (C != kImageChannels) throw ShapeError("apply_domain: expected 3 channels");
  Tensor out(image.shape());
  for (std::size_t c = 0; c < C; ++c) {
    Tensor plane({H, W}, std::vector<double>(image.ptr() + c * H * W, image.ptr() + (c + 1) * H * W));
    ComplexSpectrum F = dft2(plane);
    for (std::size_t u = 0; u < H; ++u)
      for (std::size_t v = 0; v < W; ++v) {
        const double g = band_gain(spec.band_gains, u, v, H, W) * spec.channel_gains[c];
        F.real[u * W + v] *= g;
        F.imag[u * W + v] *= g;
      }
    Tensor back = idft2(F);
    for (std::size_t i = 0; i < H * W; ++i)
      out[c * H * W + i] = spec.contrast_gain * back[i] + spec.brightness_offset;
  }
  return out;
}

}  // namespace

Tensor apply_domain(const Tensor& image, const DomainSpec& spec, Rng* noise_rng) {
  spec.validate();
  Tensor out = filtered(image, spec);
  if (spec.noise_sigma > 0.0) {
    if (!noise_rng) throw std::invalid_argument("apply_domain: noise requested without a generator");
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (auto& v : out.data()) v += noise(*noise_rng);
  }
  for (auto& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

bool fits_unclamped(const Tensor& image, const DomainSpec& spec) {
  Tensor out = filtered(image, spec);
  return std::all_of(out.data().begin(), out.data().end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

DatasetPair generate_dataset(std::size_t n_per_class, const DomainSpec& source, const DomainSpec& target,
                             std::uint64_t seed) {
  if (n_per_class < 2) throw std::invalid_argument("n_per_class must be at least 2");
  source.validate();
  target.validate();
  if (source == target) throw std::invalid_argument("source and target specs must differ");
  const std::size_t n_train = std::clamp<std::size_t>((4 * n_per_class + 2) / 5, 1, n_per_class - 1);

  auto build = [&](const DomainSpec& spec, const std::string& tag) {
    SyntheticDataset ds;
    ds.domain = spec.name;
    ds.num_classes = kNumClasses;
    ds.n_train = n_train * kNumClasses;
    const std::size_t N = n_per_class * kNumClasses;
    const std::size_t per = kImageChannels * kImageSize * kImageSize;
    ds.images = Tensor({N, kImageChannels, kImageSize, kImageSize});
    ds.labels.resize(N);
    // Rows: all train examples class-interleaved, then all test examples.
    std::size_t row = 0;
    for (std::size_t i = 0; i < n_per_class; ++i)
      for (std::size_t k = 0; k < kNumClasses; ++k, ++row) {
        const std::string id = std::to_string(k) + "/" + std::to_string(i);
        Rng base_rng = derive_rng(seed, "base/" + tag + "/" + id);
        Rng noise_rng = derive_rng(spec.seed, "noise/" + tag + "/" + id);
        Tensor img = apply_domain(generate_base(k, base_rng), spec, &noise_rng);
        std::copy(img.ptr(), img.ptr() + per, ds.images.ptr() + row * per);
        ds.labels[row] = k;
      }
    return ds;
  };
  return {build(source, "source"), build(target, "target")};
}

DomainSpec reference_source_spec() {
  DomainSpec s;
  s.name = "source";
  s.band_gains = {1.0, 1.0, 1.0, 1.0};
  s.channel_gains = {1.0, 1.0, 1.0};
  s.brightness_offset = 0.0;
  s.contrast_gain = 1.0;
  s.noise_sigma = 0.3;
  s.seed = 11;
  return s;
}

DomainSpec reference_target_spec() {
  DomainSpec s;
  s.name = "target";
  s.band_gains = {1.0, 0.8, 0.65, 0.5};
  s.channel_gains = {0.6, 0.8, 1.0};
  s.brightness_offset = 0.4;
  s.contrast_gain = 0.5;
  s.noise_sigma = 0.15;
  s.seed = 23;
  return s;
}

std::string domain_spec_json(const DomainSpec& spec) {
  json j{{"name", spec.name},
         {"band_gains", spec.band_gains},
         {"channel_gains", spec.channel_gains},
         {"brightness_offset", spec.brightness_offset},
         {"contrast_gain", spec.contrast_gain},
         {"noise_sigma", spec.noise_sigma},
         {"seed", spec.seed}};
  return j.dump();
}

DomainSpec domain_spec_from_json(const std::string& text) {
  const json j = json::parse(text);
  DomainSpec s;
  s.name = j.at("name").get<std::string>();
  s.band_gains = j.at("band_gains").get<std::vector<double>>();
  s.channel_gains = j.at("channel_gains").get<std::array<double, kImageChannels>>();
  s.brightness_offset = j.at("brightness_offset").get<double>();
  s.contrast_gain = j.at("contrast_gain").get<double>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.validate();
  return s;
}

void save_dataset(const std::filesystem::path& path, const SyntheticDataset& ds, const DomainSpec& spec) {
  const std::string spec_text = domain_spec_json(spec);
  Container c(kDatasetMagic, sha256_hex(spec_text));
  c.add_text("domain_spec", spec_text);
  c.add_text("domain", ds.domain);
  c.add_tensor("images", ds.images);
  c.add_ints("labels", std::vector<std::int64_t>(ds.labels.begin(), ds.labels.end()));
  c.add_ints("meta", {static_cast<std::int64_t>(ds.n_train), static_cast<std::int64_t>(ds.num_classes)});
  c.save(path);
}

SyntheticDataset load_dataset(const std::filesystem::path& path, DomainSpec* spec) {
  const Container c = Container::load(path, kDatasetMagic);
  SyntheticDataset ds;
  ds.domain = c.text("domain");
  ds.images = c.tensor("images");
  const auto labels = c.ints("labels");
  const auto meta = c.ints("meta");
  if (meta.size() != 2 || ds.images.rank() != 4 || ds.images.dim(0) != labels.size())
    throw FormatError("dataset " + path.string() + " has inconsistent blocks");
  ds.n_train = static_cast<std::size_t>(meta[0]);
  ds.num_classes = static_cast<std::size_t>(meta[1]);
  if (ds.n_train > labels.size()) throw FormatError("dataset " + path.string() + ": train split exceeds size");
  for (auto l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= ds.num_classes)
      throw FormatError("dataset " + path.string() + ": label out of range");
    ds.labels.push_back(static_cast<std::size_t>(l));
  }
  if (spec) *spec = domain_spec_from_json(c.text("domain_spec"));
  return ds;
}

double linear_probe_accuracy(const SyntheticDataset& fit, const std::vector<std::size_t>& train_rows,
                             const SyntheticDataset& eval, const std::vector<std::size_t>& eval_rows,
                             std::size_t epochs, std::uint64_t seed) {
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  if (train_rows.empty() || eval_rows.empty()) throw std::invalid_argument("linear probe needs non-empty splits");
  const std::size_t D = fit.images.size() / fit.images.dim(0);
  const std::size_t K = fit.num_classes;
  auto rows = [&](const SyntheticDataset& ds, const std::vector<std::size_t>& idx) {
    Mat X(idx.size(), D + 1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t d = 0; d < D; ++d) X(i, d) = ds.images[idx[i] * D + d];
      X(i, D) = 1.0;
    }
    return X;
  };
  const Mat X = rows(fit, train_rows);
  const Mat Xe = rows(eval, eval_rows);
  Mat W = Mat::Zero(D + 1, K), V = Mat::Zero(D + 1, K);
  Rng rng = derive_rng(seed, "linear-probe");
  std::vector<std::size_t> order(train_rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  constexpr std::size_t kBatch = 64;
  constexpr double kLr = 0.01, kMomentum = 0.9;
  for (std::size_t e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += kBatch) {
      const std::size_t B = std::min(kBatch, order.size() - s);
      Mat xb(B, D + 1);
      Mat g = Mat::Zero(B, K);
      for (std::size_t i = 0; i < B; ++i) xb.row(i) = X.row(order[s + i]);
      Mat z = xb * W;
      for (std::size_t i = 0; i < B; ++i) {
        const double m = z.row(i).maxCoeff();
        double tot = 0.0;
        for (std::size_t k = 0; k < K; ++k) tot += (g(i, k) = std::exp(z(i, k) - m));
        g.row(i) /= tot * static_cast<double>(B);
        g(i, fit.labels[train_rows[order[s + i]]]) -= 1.0 / static_cast<double>(B);
      }
      V = kMomentum * V + xb.transpose() * g;
      W -= kLr * V;
    }
  }
  const Mat ze = Xe * W;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < eval_rows.size(); ++i) {
    Eigen::Index best = 0;
    ze.row(i).maxCoeff(&best);
    if (static_cast<std::size_t>(best) == eval.labels[eval_rows[i]]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(eval_rows.size());
}

}  // namespace fdd
