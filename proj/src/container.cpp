// SPDX-License-Identifier: Apache-2.0
#include "fdd/container.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fdd {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

constexpr std::size_t kMagicLen = 8;
constexpr std::size_t kHashLen = 32;

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void raw(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n, const char* what) {
    if (n > end_ - pos_) throw FormatError(std::string("container truncated while reading ") + what);
  }

  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::string raw_sha256(const char* data, std::size_t n) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, n, md, &len, EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 failed");
  return std::string(reinterpret_cast<char*>(md), len);
}

std::string to_hex(const std::string& raw) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned char c : raw) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 15]);
  }
  return out;
}

}  // namespace

void Container::add_tensor(const std::string& name, const Tensor& t) {
  ContainerBlock b;
  b.name = name;
  b.dtype = DType::F64;
  b.dims = t.shape();
  b.f64 = t.vec();
  blocks_.push_back(std::move(b));
}

void Container::add_ints(const std::string& name, const std::vector<std::int64_t>& values) {
  ContainerBlock b;
  b.name = name;
  b.dtype = DType::I64;
  b.dims = {values.size()};
  b.i64 = values;
  blocks_.push_back(std::move(b));
}

void Container::add_text(const std::string& name, const std::string& text) {
  ContainerBlock b;
  b.name = name;
  b.dtype = DType::Text;
  b.dims = {text.size()};
  b.text = text;
  blocks_.push_back(std::move(b));
}

bool Container::has(const std::string& name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return true;
  return false;
}

const ContainerBlock& Container::block(const std::string& name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return b;
  throw FormatError("container has no block named '" + name + "'");
}

Tensor Container::tensor(const std::string& name) const {
  const auto& b = block(name);
  if (b.dtype != DType::F64) throw FormatError("block '" + name + "' is not f64");
  return Tensor(b.dims, b.f64);
}

std::vector<std::int64_t> Container::ints(const std::string& name) const {
  const auto& b = block(name);
  if (b.dtype != DType::I64) throw FormatError("block '" + name + "' is not i64");
  return b.i64;
}

const std::string& Container::text(const std::string& name) const {
  const auto& b = block(name);
  if (b.dtype != DType::Text) throw FormatError("block '" + name + "' is not text");
  return b.text;
}

std::string Container::serialize() const {
  if (magic_.size() != kMagicLen) throw FormatError("container magic must be 8 bytes");
  std::string out = magic_;
  put<std::uint32_t>(out, version_);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(config_digest_.size()));
  out += config_digest_;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(blocks_.size()));
  for (const auto& b : blocks_) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(b.name.size()));
    out += b.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(b.dtype));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(b.dims.size()));
    for (auto d : b.dims) put<std::uint64_t>(out, d);
    switch (b.dtype) {
      case DType::F64:
        out.append(reinterpret_cast<const char*>(b.f64.data()), b.f64.size() * sizeof(double));
        break;
      case DType::I64:
        out.append(reinterpret_cast<const char*>(b.i64.data()), b.i64.size() * sizeof(std::int64_t));
        break;
      case DType::Text:
        out += b.text;
        break;
    }
  }
  out += raw_sha256(out.data(), out.size());
  return out;
}

Container Container::parse(const std::string& bytes, const std::string& expected_magic) {
  if (bytes.size() < kMagicLen + sizeof(std::uint32_t) + kHashLen)
    throw FormatError("container truncated: " + std::to_string(bytes.size()) + " bytes");
  if (bytes.compare(0, kMagicLen, expected_magic) != 0)
    throw FormatError("bad magic: expected " + expected_magic + ", found '" + bytes.substr(0, kMagicLen) + "'");
  Reader r(bytes, bytes.size() - kHashLen);
  r.str(kMagicLen, "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kContainerVersion)
    throw FormatError("unsupported container version " + std::to_string(version) + " (expected " +
                      std::to_string(kContainerVersion) + ")");
  const std::size_t body = bytes.size() - kHashLen;
  if (raw_sha256(bytes.data(), body) != bytes.substr(body))
    throw FormatError("container checksum mismatch (file truncated or corrupted)");

  Container c;
  c.magic_ = expected_magic;
  c.version_ = version;
  c.config_digest_ = r.str(r.get<std::uint32_t>("digest length"), "digest");
  const auto n_blocks = r.get<std::uint32_t>("block count");
  for (std::uint32_t i = 0; i < n_blocks; ++i) {
    ContainerBlock b;
    b.name = r.str(r.get<std::uint32_t>("name length"), "block name");
    const auto tag = r.get<std::uint8_t>("dtype");
    if (tag > 2) throw FormatError("block '" + b.name + "' has unknown dtype " + std::to_string(tag));
    b.dtype = static_cast<DType>(tag);
    const auto rank = r.get<std::uint32_t>("rank");
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      b.dims.push_back(static_cast<std::size_t>(r.get<std::uint64_t>("dims")));
      n *= b.dims.back();
    }
    switch (b.dtype) {
      case DType::F64:
        if (n > body / sizeof(double)) throw FormatError("block '" + b.name + "' larger than file");
        b.f64.resize(n);
        r.raw(b.f64.data(), n * sizeof(double), "f64 payload");
        break;
      case DType::I64:
        if (n > body / sizeof(std::int64_t)) throw FormatError("block '" + b.name + "' larger than file");
        b.i64.resize(n);
        r.raw(b.i64.data(), n * sizeof(std::int64_t), "i64 payload");
        break;
      case DType::Text:
        b.text = r.str(n, "text payload");
        break;
    }
    c.blocks_.push_back(std::move(b));
  }
  if (!r.done()) throw FormatError("trailing bytes after last block");
  return c;
}

void Container::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

Container Container::load(const std::filesystem::path& path, const std::string& expected_magic) {
  return parse(read_file(path), expected_magic);
}

std::string sha256_hex(const std::string& bytes) { return to_hex(raw_sha256(bytes.data(), bytes.size())); }

std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace fdd
