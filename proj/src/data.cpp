// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cuti/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "cuti/checkpoint.hpp"
#include "cuti/error.hpp"

namespace cuti {

std::string to_string(DomainTag tag) {
  switch (tag) {
    case DomainTag::Source: return "source";
    case DomainTag::Cuti: return "cuti";
    case DomainTag::Target: return "target";
    case DomainTag::Synthetic: return "synthetic";
  }
  return "?";
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed ^ (0x9E3779B97F4A7C15ULL * (salt + 0x632BE59BD9B4E019ULL));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<int> shuffled_indices(int n, std::uint64_t seed) {
  std::vector<int> idx(static_cast<std::size_t>(std::max(n, 0)));
  std::iota(idx.begin(), idx.end(), 0);
  // Explicit Fisher-Yates: std::shuffle's draw sequence is implementation-defined.
  std::mt19937_64 rng(seed);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  return idx;
}

LabeledBatch LabeledBatch::subset(std::span<const int> indices) const {
  LabeledBatch out;
  out.images = images.gather(indices);
  out.labels.reserve(indices.size());
  for (int i : indices) out.labels.push_back(labels.at(static_cast<std::size_t>(i)));
  out.tag = tag;
  return out;
}

LabeledBatch LabeledBatch::slice(int begin, int end) const {
  LabeledBatch out;
  out.images = images.slice(begin, end);
  out.labels.assign(labels.begin() + begin, labels.begin() + end);
  out.tag = tag;
  return out;
}

void LabeledBatch::validate(int num_classes) const {
  if (images.rank() != 4) throw InvalidInput("batch: images must be [N, C, H, W]");
  if (images.dim(0) != size()) throw InvalidInput("batch: image and label counts differ");
  for (double v : images.values())
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidInput("batch: pixel outside [0, 1]");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw InvalidInput("batch: label outside [0, K)");
}

LabeledBatch concat(const LabeledBatch& a, const LabeledBatch& b, DomainTag tag) {
  if (a.size() == 0) {
    LabeledBatch out = b;
    out.tag = tag;
    return out;
  }
  if (b.size() == 0) {
    LabeledBatch out = a;
    out.tag = tag;
    return out;
  }
  std::vector<int> sa = a.images.shape(), sb = b.images.shape();
  if (!std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1)) throw InvalidInput("concat: image shapes differ");
  std::vector<double> v(a.images.values().begin(), a.images.values().end());
  v.insert(v.end(), b.images.values().begin(), b.images.values().end());
  sa[0] += sb[0];
  LabeledBatch out;
  out.images = Tensor(sa, std::move(v));
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.tag = tag;
  return out;
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t at, const char* what) {
  if (at + 4 > b.size()) throw FormatError(std::string(what) + ": truncated header", at);
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>((v >> s) & 0xFF));
}

}  // namespace

LabeledBatch parse_idx_dataset(const std::vector<std::uint8_t>& image_bytes,
                               const std::vector<std::uint8_t>& label_bytes) {
  const std::uint32_t image_magic = read_be32(image_bytes, 0, "IDX images");
  int dims = 0;
  if (image_magic == 0x00000803) {
    dims = 3;
  } else if (image_magic == 0x00000804) {
    dims = 4;
  } else {
    throw FormatError("IDX images: bad magic number", 0);
  }
  std::vector<std::uint32_t> shape;
  for (int d = 0; d < dims; ++d) shape.push_back(read_be32(image_bytes, 4 + 4 * static_cast<std::size_t>(d), "IDX images"));
  const std::size_t header = 4 + 4 * static_cast<std::size_t>(dims);
  const std::uint32_t n = shape[0];
  const std::uint32_t channels = dims == 4 ? shape[1] : 1;
  const std::uint32_t rows = shape[static_cast<std::size_t>(dims - 2)], cols = shape[static_cast<std::size_t>(dims - 1)];
  if (n == 0 || channels == 0 || rows == 0 || cols == 0) throw FormatError("IDX images: zero dimension", 4);
  const std::size_t pixels = static_cast<std::size_t>(n) * channels * rows * cols;
  if (image_bytes.size() < header + pixels) throw FormatError("IDX images: truncated pixel data", image_bytes.size());
  if (image_bytes.size() > header + pixels) throw FormatError("IDX images: trailing bytes", header + pixels);

  if (read_be32(label_bytes, 0, "IDX labels") != 0x00000801) throw FormatError("IDX labels: bad magic number", 0);
  const std::uint32_t label_count = read_be32(label_bytes, 4, "IDX labels");
  if (label_count != n) {
    throw FormatError("IDX labels: count " + std::to_string(label_count) + " does not match image count " +
                          std::to_string(n),
                      4);
  }
  if (label_bytes.size() < 8 + static_cast<std::size_t>(n)) throw FormatError("IDX labels: truncated", label_bytes.size());
  if (label_bytes.size() > 8 + static_cast<std::size_t>(n)) throw FormatError("IDX labels: trailing bytes", 8 + n);

  LabeledBatch out;
  std::vector<double> values(pixels);
  for (std::size_t i = 0; i < pixels; ++i) values[i] = image_bytes[header + i] / 255.0;
  out.images = Tensor({static_cast<int>(n), static_cast<int>(channels), static_cast<int>(rows), static_cast<int>(cols)},
                      std::move(values));
  out.labels.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) out.labels.push_back(label_bytes[8 + i]);
  return out;
}

LabeledBatch load_idx_dataset(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  return parse_idx_dataset(read_file_bytes(images_path), read_file_bytes(labels_path));
}

void save_idx_dataset(const LabeledBatch& batch, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path) {
  const Tensor& x = batch.images;
  std::vector<std::uint8_t> img;
  const bool gray = x.dim(1) == 1;
  put_be32(img, gray ? 0x00000803 : 0x00000804);
  put_be32(img, static_cast<std::uint32_t>(x.dim(0)));
  if (!gray) put_be32(img, static_cast<std::uint32_t>(x.dim(1)));
  put_be32(img, static_cast<std::uint32_t>(x.dim(2)));
  put_be32(img, static_cast<std::uint32_t>(x.dim(3)));
  for (double v : x.values()) img.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  std::vector<std::uint8_t> lab;
  put_be32(lab, 0x00000801);
  put_be32(lab, static_cast<std::uint32_t>(batch.size()));
  for (int y : batch.labels) {
    if (y < 0 || y > 255) throw InvalidInput("IDX labels must fit in one byte");
    lab.push_back(static_cast<std::uint8_t>(y));
  }
  write_file_bytes(images_path, img);
  write_file_bytes(labels_path, lab);
}

LabeledBatch replicate_channels(const LabeledBatch& batch, int channels) {
  const Tensor& x = batch.images;
  if (x.dim(1) == channels) return batch;
  if (x.dim(1) != 1) throw InvalidInput("replicate_channels: source must be single-channel");
  LabeledBatch out = batch;
  out.images = Tensor({x.dim(0), channels, x.dim(2), x.dim(3)});
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  for (int n = 0; n < x.dim(0); ++n)
    for (int c = 0; c < channels; ++c) std::copy_n(x.plane(n, 0), plane, out.images.plane(n, c));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic domains

namespace {

// 5x7 digit bitmaps, rows top to bottom, bit 4 = leftmost column.
constexpr std::uint8_t kDigits[10][7] = {
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
};

double glyph_cell(int digit, int row, int col) {
  if (row < 0 || row >= 7 || col < 0 || col >= 5) return 0.0;
  return (kDigits[digit][row] >> (4 - col)) & 1 ? 1.0 : 0.0;
}

// Bilinear sample of the bitmap at continuous glyph coordinates.
double glyph_sample(int digit, double u, double v) {
  const double x = u - 0.5, y = v - 0.5;
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  return (1 - fx) * (1 - fy) * glyph_cell(digit, y0, x0) + fx * (1 - fy) * glyph_cell(digit, y0, x0 + 1) +
         (1 - fx) * fy * glyph_cell(digit, y0 + 1, x0) + fx * fy * glyph_cell(digit, y0 + 1, x0 + 1);
}

// Glyph coverage mask in [0, 1] with random placement, scale, slant and weight.
std::vector<double> render_mask(int digit, int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double height = size * (0.6 + 0.2 * uni(rng));
  const double width = height * (0.55 + 0.15 * uni(rng));
  const double angle = (uni(rng) - 0.5) * 0.4;
  const double slack_x = std::max(0.0, size - width) * 0.5, slack_y = std::max(0.0, size - height) * 0.5;
  const double cx = size * 0.5 + (uni(rng) - 0.5) * slack_x, cy = size * 0.5 + (uni(rng) - 0.5) * slack_y;
  const double threshold = 0.25 + 0.3 * uni(rng);
  const double ca = std::cos(angle), sa = std::sin(angle);

  std::vector<double> m(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double rx = ca * dx + sa * dy, ry = -sa * dx + ca * dy;
      const double u = (rx / width + 0.5) * 5.0, v = (ry / height + 0.5) * 7.0;
      const double g = glyph_sample(digit, u, v);
      m[static_cast<std::size_t>(y) * size + x] = std::clamp((g - threshold) / 0.25 + 0.5, 0.0, 1.0);
    }
  return m;
}

void style_image(const std::string& style, const std::vector<double>& mask, int size, int channels,
                 std::mt19937_64& rng, double* out) {
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  if (style == "plain") {
    for (int c = 0; c < channels; ++c) std::copy(mask.begin(), mask.end(), out + c * plane);
  } else if (style == "inverted") {
    for (int c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = 1.0 - mask[i];
  } else if (style == "textured") {
    // Warm glyph over a smooth random colour field.
    static constexpr double kGlyph[3] = {0.95, 0.7, 0.15};
    for (int c = 0; c < channels; ++c) {
      const double fx = 1.0 + 3.0 * uni(rng), fy = 1.0 + 3.0 * uni(rng);
      const double px = 6.283 * uni(rng), py = 6.283 * uni(rng);
      const double base = 0.25 + 0.3 * uni(rng);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * size + x;
          const double bg = base + 0.2 * std::sin(fx * 6.283 * x / size + px) * std::cos(fy * 6.283 * y / size + py);
          out[c * plane + i] = std::clamp(bg * (1.0 - mask[i]) + kGlyph[c % 3] * mask[i], 0.0, 1.0);
        }
    }
  } else if (style == "noisy") {
    std::normal_distribution<double> noise(0.0, 0.06);
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = 0.15 + 0.6 * mask[i];
      for (int c = 0; c < channels; ++c) out[c * plane + i] = std::clamp(v + noise(rng), 0.0, 1.0);
    }
  } else {
    throw InvalidInput("unknown synthetic style '" + style + "'");
  }
}

}  // namespace

const std::vector<std::string>& synthetic_style_names() {
  static const std::vector<std::string> names{"plain", "inverted", "textured", "noisy"};
  return names;
}

void SyntheticSpec::validate() const {
  if (n_classes < 2 || n_classes > 10) throw InvalidInput("synthetic: n_classes must lie in [2, 10]");
  if (n_per_class < 1) throw InvalidInput("synthetic: n_per_class must be >= 1");
  if (image_size < 8) throw InvalidInput("synthetic: image_size must be >= 8");
  if (styles.empty()) throw InvalidInput("synthetic: at least one style required");
  const auto& known = synthetic_style_names();
  for (const auto& s : styles)
    if (std::find(known.begin(), known.end(), s) == known.end()) throw InvalidInput("synthetic: unknown style '" + s + "'");
}

std::vector<DomainDataset> make_synthetic_domains(const SyntheticSpec& spec) {
  spec.validate();
  const int N = spec.n_classes * spec.n_per_class, S = spec.image_size, C = 3;

  std::mt19937_64 content_rng(derive_seed(spec.seed, 1));
  std::vector<std::vector<double>> masks;
  std::vector<int> labels;
  masks.reserve(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) {
    const int label = i % spec.n_classes;
    labels.push_back(label);
    masks.push_back(render_mask(label, S, content_rng));
  }

  std::vector<DomainDataset> out;
  for (std::size_t d = 0; d < spec.styles.size(); ++d) {
    const std::string& style = spec.styles[d];
    // Style randomness depends on the style name, not its list position.
    std::uint64_t name_salt = 0xcbf29ce484222325ULL;
    for (unsigned char ch : style) name_salt = (name_salt ^ ch) * 0x100000001b3ULL;
    std::mt19937_64 style_rng(derive_seed(spec.seed, name_salt));
    LabeledBatch all;
    all.images = Tensor({N, C, S, S});
    all.labels = labels;
    for (int i = 0; i < N; ++i) style_image(style, masks[static_cast<std::size_t>(i)], S, C, style_rng, all.images.plane(i, 0));
    auto [train, test] = split_and_shuffle(all, derive_seed(spec.seed, 2));
    DomainDataset ds;
    ds.name = style;
    ds.train = std::move(train);
    ds.test = std::move(test);
    ds.num_classes = spec.n_classes;
    ds.image_shape = {C, S, S};
    out.push_back(std::move(ds));
  }
  return out;
}

std::pair<LabeledBatch, LabeledBatch> split_and_shuffle(const LabeledBatch& all, std::uint64_t seed) {
  const int n = all.size();
  const std::vector<int> perm = shuffled_indices(n, seed);
  const int n_test = static_cast<int>(std::lround(0.2 * n));
  std::span<const int> p(perm);
  LabeledBatch train = all.subset(p.first(static_cast<std::size_t>(n - n_test)));
  LabeledBatch test = all.subset(p.subspan(static_cast<std::size_t>(n - n_test)));
  return {std::move(train), std::move(test)};
}

std::uint64_t content_hash(const LabeledBatch& batch, int index) {
  const std::size_t per = batch.images.size() / static_cast<std::size_t>(batch.images.dim(0));
  const auto* bytes = reinterpret_cast<const unsigned char*>(batch.images.data() + static_cast<std::size_t>(index) * per);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < per * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace cuti
