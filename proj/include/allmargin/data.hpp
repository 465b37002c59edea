#pragma once

// Labelled datasets: synthetic generators, IDX files, label corruption, CSV.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace allmargin::data {

struct Dataset {
  std::vector<std::vector<double>> inputs;
  std::vector<std::size_t> labels;
  std::size_t classes = 2;
  std::string split = "train";
  std::string provenance;

  std::size_t size() const noexcept { return inputs.size(); }
  std::size_t dim() const noexcept { return inputs.empty() ? 0 : inputs.front().size(); }
  // Throws on unequal lengths, ragged inputs, labels >= classes or missing provenance.
  void validate() const;
};

// kind: "two-gaussians", "two-moons" or "spirals". Two balanced classes in
// the plane, centred on the sample mean and scaled so the largest input has
// norm 1.
Dataset gen_synthetic(const std::string& kind, std::size_t n, double noise, std::uint64_t seed);

// Images: magic 0x00000803 (unsigned bytes, scaled by 1/255) or any
// 0x00000Exx (big-endian doubles, read as is). Labels: magic 0x00000801.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
// Writes unsigned bytes when every value is a multiple of 1/255 in [0, 1],
// doubles otherwise, so write-then-read is exact.
void write_idx(const Dataset& ds, const std::filesystem::path& images, const std::filesystem::path& labels);

// Relabels a seeded ceil(fraction * n)-subset uniformly among the other classes.
Dataset corrupt_labels(const Dataset& ds, double fraction, std::uint64_t seed);

// Returns (train, validation); the first ceil(fraction * n) shuffled examples go to validation.
std::pair<Dataset, Dataset> split_validation(const Dataset& ds, double fraction, std::uint64_t seed);

// Header comment line, column names, then one row per example with the label last.
std::string to_csv(const Dataset& ds);
Dataset from_csv(const std::string& text);
void write_csv(const Dataset& ds, const std::filesystem::path& path);
Dataset read_csv(const std::filesystem::path& path);

// Pixel intensities on the 0..255 scale to input units.
inline double pixel_units(double pixels) { return pixels / 255.0; }

}  // namespace allmargin::data
