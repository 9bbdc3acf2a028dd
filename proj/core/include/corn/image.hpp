#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace corn {

/// Single-channel image, row-major, intensities nominally in [0, 1].
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}

    double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
    double& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
    std::size_t size() const noexcept { return pixels.size(); }

    bool operator==(const Image&) const = default;
};

/// Per-pixel class ids, row-major.
struct LabelMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<int> labels;

    LabelMap() = default;
    LabelMap(std::size_t h, std::size_t w, int fill = 0) : height(h), width(w), labels(h * w, fill) {}

    int at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
    int& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
    std::size_t size() const noexcept { return labels.size(); }

    bool operator==(const LabelMap&) const = default;
};

}  // namespace corn
