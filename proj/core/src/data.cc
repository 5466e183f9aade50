#include "fedbrb/data.h"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>

namespace fedbrb {
namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) throw DataError(path.string() + ": truncated header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

std::string hex(std::uint32_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s = "0x";
  for (int shift = 28; shift >= 0; shift -= 4) s += digits[(v >> shift) & 0xF];
  return s;
}

std::vector<std::vector<std::size_t>> rows_by_label(const Dataset& dataset) {
  std::vector<std::vector<std::size_t>> by_label(static_cast<std::size_t>(dataset.class_count));
  for (std::size_t r = 0; r < dataset.count(); ++r) {
    by_label[static_cast<std::size_t>(dataset.labels[r])].push_back(r);
  }
  return by_label;
}

}  // namespace

Shape Dataset::example_shape() const {
  return Shape(images.shape().begin() + 1, images.shape().end());
}

Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path, Normalization norm) {
  if (!(norm.stddev > 0.0)) throw DataError("normalization stddev must be positive");
  const std::vector<std::uint8_t> img = read_file(images_path);
  const std::vector<std::uint8_t> lab = read_file(labels_path);

  const std::uint32_t img_magic = read_be32(img, 0, images_path);
  if (img_magic != kIdxImageMagic) {
    throw DataError(images_path.string() + ": bad magic " + hex(img_magic) + ", expected " +
                    hex(kIdxImageMagic));
  }
  const std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
  if (lab_magic != kIdxLabelMagic) {
    throw DataError(labels_path.string() + ": bad magic " + hex(lab_magic) + ", expected " +
                    hex(kIdxLabelMagic));
  }
  const std::size_t count = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  const std::size_t label_count = read_be32(lab, 4, labels_path);
  if (count != label_count) {
    throw DataError("image count " + std::to_string(count) + " does not match label count " +
                    std::to_string(label_count));
  }
  if (count == 0 || rows == 0 || cols == 0) throw DataError(images_path.string() + ": empty");
  const std::size_t pixels = count * rows * cols;
  if (img.size() < 16 + pixels) throw DataError(images_path.string() + ": truncated pixel data");
  if (lab.size() < 8 + count) throw DataError(labels_path.string() + ": truncated label data");

  Dataset ds;
  std::vector<double> data(pixels);
  for (std::size_t i = 0; i < pixels; ++i) {
    data[i] = (static_cast<double>(img[16 + i]) / 255.0 - norm.mean) / norm.stddev;
  }
  ds.images = Tensor({count, 1, rows, cols}, std::move(data));
  ds.labels.resize(count);
  int max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.class_count = std::max(10, max_label + 1);
  return ds;
}

void write_idx_pair(const std::filesystem::path& images_path,
                    const std::filesystem::path& labels_path, std::uint32_t rows,
                    std::uint32_t cols, std::span<const std::uint8_t> pixels,
                    std::span<const std::uint8_t> labels) {
  const std::size_t count = labels.size();
  if (pixels.size() != count * rows * cols) {
    throw DataError("write_idx_pair: pixel buffer does not match count x rows x cols");
  }
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw DataError("write_idx_pair: cannot open output files");
  put_be32(img, kIdxImageMagic);
  put_be32(img, static_cast<std::uint32_t>(count));
  put_be32(img, rows);
  put_be32(img, cols);
  img.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  put_be32(lab, kIdxLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(count));
  lab.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
}

Dataset synthetic_classes(int classes, std::size_t per_class, std::size_t dim,
                          double separation, Rng& rng) {
  if (classes < 2) throw std::invalid_argument("synthetic_classes: need at least 2 classes");
  if (per_class == 0 || dim == 0) throw std::invalid_argument("synthetic_classes: empty dataset");
  const std::size_t count = per_class * static_cast<std::size_t>(classes);
  std::vector<double> data(count * dim);
  Dataset ds;
  ds.class_count = classes;
  ds.labels.resize(count);
  for (std::size_t r = 0; r < count; ++r) {
    const int label = static_cast<int>(r % static_cast<std::size_t>(classes));
    ds.labels[r] = label;
    for (std::size_t d = 0; d < dim; ++d) data[r * dim + d] = standard_normal(rng);
    // Class means sit on the first axis, one `separation` apart.
    data[r * dim] += separation * static_cast<double>(label);
  }
  ds.images = Tensor({count, dim, 1, 1}, std::move(data));
  return ds;
}

Dataset take_subset(const Dataset& dataset, std::size_t count, Rng& rng) {
  std::vector<std::size_t> rows(dataset.count());
  std::iota(rows.begin(), rows.end(), 0);
  shuffle(rows, rng);
  if (count < rows.size()) rows.resize(count);
  if (rows.empty()) throw std::invalid_argument("take_subset: empty subset");
  std::sort(rows.begin(), rows.end());
  const std::size_t row_size = dataset.example_size();
  Shape shape = dataset.images.shape();
  shape[0] = rows.size();
  std::vector<double> data(rows.size() * row_size);
  Dataset out;
  out.class_count = dataset.class_count;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(dataset.images.data().begin() + static_cast<std::ptrdiff_t>(rows[r] * row_size),
                row_size, data.begin() + static_cast<std::ptrdiff_t>(r * row_size));
    out.labels.push_back(dataset.labels[rows[r]]);
  }
  out.images = Tensor(std::move(shape), std::move(data));
  return out;
}

PartitionPlan partition_noniid(const Dataset& dataset, std::size_t num_clients, int L,
                               Rng& rng) {
  const int classes = dataset.class_count;
  if (L < 1 || L > classes) {
    throw std::invalid_argument("labels per client " + std::to_string(L) + " outside 1.." +
                                std::to_string(classes));
  }
  if (num_clients == 0) throw std::invalid_argument("partition_noniid: no clients");

  std::vector<int> perm(static_cast<std::size_t>(classes));
  std::iota(perm.begin(), perm.end(), 0);
  shuffle(perm, rng);

  PartitionPlan plan;
  plan.labels_per_client = L;
  plan.client_indices.resize(num_clients);
  plan.allowed_labels.resize(num_clients);
  std::vector<std::vector<std::size_t>> holders(static_cast<std::size_t>(classes));
  std::size_t slot = 0;
  for (std::size_t c = 0; c < num_clients; ++c) {
    for (int j = 0; j < L; ++j, ++slot) {
      const int label = perm[slot % static_cast<std::size_t>(classes)];
      plan.allowed_labels[c].push_back(label);
      holders[static_cast<std::size_t>(label)].push_back(c);
    }
    std::sort(plan.allowed_labels[c].begin(), plan.allowed_labels[c].end());
  }

  auto by_label = rows_by_label(dataset);
  for (std::size_t label = 0; label < by_label.size(); ++label) {
    const auto& h = holders[label];
    if (h.empty()) continue;
    auto& rows = by_label[label];
    shuffle(rows, rng);
    // Even split: the first (n mod holders) holders get one extra row.
    const std::size_t base = rows.size() / h.size();
    const std::size_t extra = rows.size() % h.size();
    std::size_t pos = 0;
    for (std::size_t j = 0; j < h.size(); ++j) {
      const std::size_t take = base + (j < extra ? 1 : 0);
      auto& dst = plan.client_indices[h[j]];
      dst.insert(dst.end(), rows.begin() + static_cast<std::ptrdiff_t>(pos),
                 rows.begin() + static_cast<std::ptrdiff_t>(pos + take));
      pos += take;
    }
  }
  for (auto& idx : plan.client_indices) std::sort(idx.begin(), idx.end());
  return plan;
}

PartitionPlan partition_iid(const Dataset& dataset, std::size_t num_clients, Rng& rng) {
  if (num_clients == 0 || num_clients > dataset.count()) {
    throw std::invalid_argument("partition_iid: need 1.." + std::to_string(dataset.count()) +
                                " clients");
  }
  std::vector<std::size_t> rows(dataset.count());
  std::iota(rows.begin(), rows.end(), 0);
  shuffle(rows, rng);
  PartitionPlan plan;
  plan.client_indices.resize(num_clients);
  plan.allowed_labels.resize(num_clients);
  const std::size_t base = rows.size() / num_clients;
  const std::size_t extra = rows.size() % num_clients;
  std::size_t pos = 0;
  for (std::size_t c = 0; c < num_clients; ++c) {
    const std::size_t take = base + (c < extra ? 1 : 0);
    plan.client_indices[c].assign(rows.begin() + static_cast<std::ptrdiff_t>(pos),
                                  rows.begin() + static_cast<std::ptrdiff_t>(pos + take));
    std::sort(plan.client_indices[c].begin(), plan.client_indices[c].end());
    pos += take;
    for (int l = 0; l < dataset.class_count; ++l) plan.allowed_labels[c].push_back(l);
  }
  return plan;
}

}  // namespace fedbrb
