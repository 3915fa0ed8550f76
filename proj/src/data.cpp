#include "argmaxgrad/data.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "argmaxgrad/errors.hpp"
#include "argmaxgrad/rng.hpp"

namespace argmaxgrad {

namespace {

constexpr uint32_t kImageMagic = 0x00000803;
constexpr uint32_t kLabelMagic = 0x00000801;

// RngStream ids for the module's independent randomness sources.
constexpr uint64_t kBinarizeStream = 11;
constexpr uint64_t kSyntheticStream = 12;
constexpr uint64_t kShuffleStream = 13;

/// gz-transparent reader that tracks the byte offset of the decompressed
/// stream for error messages.
class IdxReader {
 public:
  explicit IdxReader(const std::string& path) : path_(path) {
    file_ = gzopen(path.c_str(), "rb");
    if (!file_) throw ParseError("cannot open " + path);
  }
  ~IdxReader() {
    if (file_) gzclose(file_);
  }
  IdxReader(const IdxReader&) = delete;
  IdxReader& operator=(const IdxReader&) = delete;

  void read(void* out, size_t n) {
    const int got = gzread(file_, out, static_cast<unsigned>(n));
    if (got < 0 || static_cast<size_t>(got) != n)
      throw ParseError(path_ + ": truncated at byte offset " +
                       std::to_string(offset_ + (got > 0 ? got : 0)));
    offset_ += static_cast<int64_t>(n);
  }

  uint32_t read_u32_be() {
    unsigned char b[4];
    read(b, 4);
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) |
           (uint32_t(b[2]) << 8) | uint32_t(b[3]);
  }

 private:
  gzFile file_ = nullptr;
  std::string path_;
  int64_t offset_ = 0;
};

std::vector<int> load_idx_labels(const std::string& path, int64_t expected) {
  IdxReader r(path);
  const uint32_t magic = r.read_u32_be();
  if (magic != kLabelMagic) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "0x%08x", magic);
    throw ParseError(path + ": bad label magic " + buf +
                     " at byte offset 0, expected 0x00000801");
  }
  const uint32_t count = r.read_u32_be();
  if (expected >= 0 && count != static_cast<uint32_t>(expected))
    throw ParseError(path + ": label count " + std::to_string(count) +
                     " does not match image count " + std::to_string(expected) +
                     " (header at byte offset 4)");
  std::vector<unsigned char> raw(count);
  if (count > 0) r.read(raw.data(), raw.size());
  return {raw.begin(), raw.end()};
}

}  // namespace

Dataset Dataset::take(int limit) const {
  if (limit >= count()) return *this;
  Dataset out;
  out.split = split;
  out.images = Tensor::zeros({limit, dim()});
  std::copy(images.data.begin(),
            images.data.begin() + static_cast<size_t>(limit) * dim(),
            out.images.data.begin());
  if (has_labels()) out.labels.assign(labels.begin(), labels.begin() + limit);
  return out;
}

Tensor Dataset::image_row(int i) const {
  Tensor row = Tensor::zeros({1, dim()});
  std::copy_n(images.data.begin() + static_cast<size_t>(i) * dim(), dim(),
              row.data.begin());
  return row;
}

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  IdxReader r(images_path);
  const uint32_t magic = r.read_u32_be();
  if (magic != kImageMagic) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "0x%08x", magic);
    throw ParseError(images_path + ": bad image magic " + buf +
                     " at byte offset 0, expected 0x00000803");
  }
  const uint32_t count = r.read_u32_be();
  const uint32_t rows = r.read_u32_be();
  const uint32_t cols = r.read_u32_be();
  const int64_t d = static_cast<int64_t>(rows) * cols;
  if (count > 0 && (d <= 0 || d > (1 << 24)))
    throw ParseError(images_path + ": implausible dimensions " +
                     std::to_string(rows) + "x" + std::to_string(cols) +
                     " (header at byte offset 8)");

  Dataset out;
  out.images = Tensor::zeros({static_cast<int>(count), static_cast<int>(d)});
  std::vector<unsigned char> raw(static_cast<size_t>(d));
  for (uint32_t i = 0; i < count; ++i) {
    r.read(raw.data(), raw.size());
    double* dst = out.images.data.data() + static_cast<size_t>(i) * d;
    for (int64_t c = 0; c < d; ++c) dst[c] = raw[c] / 255.0;
  }
  if (!labels_path.empty()) out.labels = load_idx_labels(labels_path, count);
  return out;
}

void save_idx(const Dataset& d, const std::string& images_path,
              const std::string& labels_path) {
  auto put_u32_be = [](std::ofstream& os, uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
  };

  std::ofstream os(images_path, std::ios::binary);
  if (!os) throw Error("cannot open " + images_path + " for writing");
  put_u32_be(os, kImageMagic);
  put_u32_be(os, static_cast<uint32_t>(d.count()));
  // Square image sides when possible, otherwise a single row of pixels.
  const int side = static_cast<int>(std::lround(std::sqrt(double(d.dim()))));
  const bool square = side * side == d.dim();
  put_u32_be(os, static_cast<uint32_t>(square ? side : 1));
  put_u32_be(os, static_cast<uint32_t>(square ? side : d.dim()));
  std::vector<unsigned char> raw(static_cast<size_t>(d.dim()));
  for (int i = 0; i < d.count(); ++i) {
    const double* src = d.images.data.data() + static_cast<size_t>(i) * d.dim();
    for (int c = 0; c < d.dim(); ++c)
      raw[c] = static_cast<unsigned char>(std::lround(src[c] * 255.0));
    os.write(reinterpret_cast<const char*>(raw.data()), raw.size());
  }
  if (!os) throw Error("write failed: " + images_path);

  if (!labels_path.empty()) {
    if (!d.has_labels())
      throw ContractError("save_idx: dataset has no labels to write");
    std::ofstream ls(labels_path, std::ios::binary);
    if (!ls) throw Error("cannot open " + labels_path + " for writing");
    put_u32_be(ls, kLabelMagic);
    put_u32_be(ls, static_cast<uint32_t>(d.count()));
    for (int v : d.labels) ls.put(static_cast<char>(v));
    if (!ls) throw Error("write failed: " + labels_path);
  }
}

Dataset binarize(const Dataset& d, BinarizeMode mode, uint64_t seed) {
  for (double v : d.images.data)
    if (!(v >= 0.0 && v <= 1.0))
      throw DomainError("binarize: pixel outside [0,1]");
  Dataset out = d;
  if (mode == BinarizeMode::kThreshold) {
    for (double& v : out.images.data) v = v >= 0.5 ? 1.0 : 0.0;
  } else {
    RngStream rng(seed, kBinarizeStream);
    // u < p fires with probability p; p=0 never, p=1 always, so binary
    // inputs pass through unchanged.
    for (double& v : out.images.data) v = rng.next_uniform() < v ? 1.0 : 0.0;
  }
  return out;
}

SyntheticDataset synthetic_dataset(SyntheticKind kind, int n, uint64_t seed,
                                   int components) {
  if (n < 1) throw ContractError("synthetic_dataset: n must be >= 1");
  SyntheticDataset out;
  out.data.images = Tensor::zeros({n, 16});
  out.data.labels.resize(static_cast<size_t>(n));

  if (kind == SyntheticKind::kBars) {
    // 8 classes: classes 0-3 light one row of the 4x4 grid, 4-7 one column.
    for (int i = 0; i < n; ++i) {
      const int cls = i % 8;
      out.data.labels[i] = cls;
      for (int t = 0; t < 4; ++t) {
        const int pix = cls < 4 ? cls * 4 + t : t * 4 + (cls - 4);
        out.data.images(i, pix) = 1.0;
      }
    }
    return out;
  }

  if (components < 1)
    throw ContractError("synthetic_dataset: components must be >= 1");
  RngStream rng(seed, kSyntheticStream);
  out.mixture_means = Tensor::zeros({components, 16});
  for (double& v : out.mixture_means.data)
    v = 0.1 + 0.8 * rng.next_uniform();
  out.mixture_weights.assign(static_cast<size_t>(components),
                             1.0 / components);
  for (int i = 0; i < n; ++i) {
    const int c = static_cast<int>(rng.next_u64() % components);
    out.data.labels[i] = c;
    for (int p = 0; p < 16; ++p)
      out.data.images(i, p) =
          rng.next_uniform() < out.mixture_means(c, p) ? 1.0 : 0.0;
  }
  return out;
}

std::vector<std::vector<int>> epoch_batches(int count, int batch_size,
                                            uint64_t seed, int epoch) {
  if (batch_size < 1) throw ContractError("epoch_batches: batch_size >= 1");
  std::vector<int> perm(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) perm[i] = i;
  RngStream rng = RngStream(seed, kShuffleStream).substream(
      static_cast<uint64_t>(epoch));
  for (int i = count - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.next_u64() % (i + 1));
    std::swap(perm[i], perm[j]);
  }
  std::vector<std::vector<int>> batches;
  for (int b = 0; b < count; b += batch_size) {
    const int e = std::min(b + batch_size, count);
    batches.emplace_back(perm.begin() + b, perm.begin() + e);
  }
  return batches;
}

Tensor gather_rows(const Tensor& t, std::span<const int> rows) {
  Tensor out = Tensor::zeros({static_cast<int>(rows.size()), t.cols()});
  for (size_t r = 0; r < rows.size(); ++r)
    std::copy_n(t.data.begin() + static_cast<size_t>(rows[r]) * t.cols(),
                t.cols(), out.data.begin() + r * t.cols());
  return out;
}

}  // namespace argmaxgrad
