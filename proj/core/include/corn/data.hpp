#pragma once

// Synthetic "atrium-like" 2D segmentation data: an ellipse body with outward
// protrusions, surrounded by a thin bright wall that is not foreground, with
// intensity inhomogeneity and noise growing with difficulty.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "corn/image.hpp"

namespace corn {

inline constexpr std::size_t kDatasetClasses = 2;

struct DatasetParams {
    std::size_t count = 100;
    std::size_t size = 32;
    std::uint64_t seed = 0;
    double difficulty = 0.6;  ///< 0 = noise-free, maximal contrast; 1 = hardest
};

struct SegSample {
    int id = 0;
    Image image;    ///< quantized to 8-bit levels so PGM round trips are exact
    LabelMap mask;  ///< 0 = background, 1 = foreground
    bool labeled = false;
    std::uint64_t seed = 0;
};

/// Deterministic per seed; sample k uses the derived seed mix_seed(seed, k).
/// Foreground fraction of every mask lies in [0.05, 0.6] (rejection sampled).
std::vector<SegSample> generate_dataset(std::size_t count, std::size_t size, std::uint64_t seed, double difficulty);
std::vector<SegSample> generate_dataset(const DatasetParams& params);

/// First round((1 - test_fraction) * count) samples train, the rest test.
struct TrainTestSplit {
    std::vector<SegSample> train;
    std::vector<SegSample> test;
};
TrainTestSplit train_test_split(const std::vector<SegSample>& dataset, double test_fraction = 0.2);

/// Training-facing views. UnlabeledSample carries no mask at all, so hidden
/// ground truth cannot leak into the trainer.
struct LabeledSample {
    int id = 0;
    Image image;
    LabelMap mask;
};

struct UnlabeledSample {
    int id = 0;
    Image image;
};

struct LabeledSplit {
    std::vector<LabeledSample> labeled;
    std::vector<UnlabeledSample> unlabeled;
};

/// Seeded shuffle, then round(count * labeled_fraction) samples keep their
/// masks. labeled_fraction must lie in (0, 1]; a split with no labeled
/// sample is an error.
LabeledSplit split(const std::vector<SegSample>& dataset, double labeled_fraction, std::uint64_t seed);

struct LabeledCrop {
    std::size_t instance = 0;  ///< index into LabeledSplit::labeled
    int source_id = 0;
    std::size_t y0 = 0;
    std::size_t x0 = 0;
    Image image;
    LabelMap mask;
};

struct UnlabeledCrop {
    int source_id = 0;
    std::size_t y0 = 0;
    std::size_t x0 = 0;
    Image image;
};

struct MiniBatch {
    std::vector<LabeledCrop> labeled;
    std::vector<UnlabeledCrop> unlabeled;
};

inline constexpr std::size_t kBatchSize = 4;

/// Four random crops: two labeled + two unlabeled, or four labeled when the
/// unlabeled split is empty.
MiniBatch crop_batch(const LabeledSplit& data, std::size_t crop_size, std::uint64_t seed);

Image crop(const Image& image, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w);
LabelMap crop(const LabelMap& mask, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w);

// Binary 8-bit PGM (P5). Images map [0, 1] to 0..255; masks store class ids directly.
void write_pgm(const std::filesystem::path& path, const Image& image);
void write_pgm(const std::filesystem::path& path, const LabelMap& mask, std::size_t classes);
Image read_pgm_image(const std::filesystem::path& path);
LabelMap read_pgm_mask(const std::filesystem::path& path);

/// Dataset directory: image_XXX.pgm / mask_XXX.pgm pairs plus manifest.json.
struct DatasetManifest {
    DatasetParams params;
    double test_fraction = 0.2;
    double labeled_fraction = 0.05;
    std::uint64_t split_seed = 0;
};

void save_dataset(const std::filesystem::path& dir, const std::vector<SegSample>& samples,
                  const DatasetManifest& manifest);

struct LoadedDataset {
    DatasetManifest manifest;
    std::vector<SegSample> samples;
};
LoadedDataset load_dataset(const std::filesystem::path& dir);

}  // namespace corn
