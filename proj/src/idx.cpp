#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "r2u/dataset.hpp"
#include "r2u/error.hpp"

namespace r2u {

namespace {

constexpr std::uint32_t kLabelMagic = 0x00000801;
constexpr std::uint32_t kImageMagic = 0x00000803;

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t at, const char* field) {
  if (buf.size() < at + 4) throw FormatError(std::string("truncated header: ") + field);
  return (std::uint32_t{buf[at]} << 24) | (std::uint32_t{buf[at + 1]} << 16) |
         (std::uint32_t{buf[at + 2]} << 8) | std::uint32_t{buf[at + 3]};
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes, 4);
}

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        std::optional<std::size_t> limit) {
  const auto img = read_all(images);
  const auto lab = read_all(labels);

  if (read_be32(img, 0, "image magic") != kImageMagic) throw FormatError("bad image magic");
  if (read_be32(lab, 0, "label magic") != kLabelMagic) throw FormatError("bad label magic");

  const std::size_t image_count = read_be32(img, 4, "image count");
  const std::size_t rows = read_be32(img, 8, "image rows");
  const std::size_t cols = read_be32(img, 12, "image cols");
  const std::size_t label_count = read_be32(lab, 4, "label count");
  if (image_count != label_count) {
    throw FormatError("count mismatch: " + std::to_string(image_count) + " images vs " +
                      std::to_string(label_count) + " labels");
  }
  const std::size_t pixels = rows * cols;
  if (img.size() < 16 + image_count * pixels) throw FormatError("truncated image data");
  if (lab.size() < 8 + label_count) throw FormatError("truncated label data");

  const std::size_t n = limit ? std::min(*limit, image_count) : image_count;
  std::vector<Example> examples(n);
  std::size_t classes = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto& ex = examples[i];
    ex.input.resize(pixels);
    const unsigned char* px = img.data() + 16 + i * pixels;
    for (std::size_t j = 0; j < pixels; ++j) ex.input[j] = static_cast<double>(px[j]) / 255.0;
    ex.target = lab[8 + i];
    classes = std::max(classes, static_cast<std::size_t>(ex.target) + 1);
  }
  return LabeledDataset::from_examples(images.filename().string(), classes, std::move(examples));
}

void write_idx(const LabeledDataset& d, std::size_t rows, std::size_t cols,
               const std::filesystem::path& images, const std::filesystem::path& labels) {
  std::ofstream img(images, std::ios::binary);
  std::ofstream lab(labels, std::ios::binary);
  if (!img || !lab) throw InputError("cannot create IDX output files");
  write_be32(img, kImageMagic);
  write_be32(img, static_cast<std::uint32_t>(d.size()));
  write_be32(img, static_cast<std::uint32_t>(rows));
  write_be32(img, static_cast<std::uint32_t>(cols));
  write_be32(lab, kLabelMagic);
  write_be32(lab, static_cast<std::uint32_t>(d.size()));
  for (const auto& ex : d.examples) {
    if (ex.input.size() != rows * cols) throw DimensionError("write_idx: image size mismatch");
    for (double v : ex.input) img.put(static_cast<char>(std::lround(v * 255.0)));
    lab.put(static_cast<char>(ex.target));
  }
}

}  // namespace r2u
