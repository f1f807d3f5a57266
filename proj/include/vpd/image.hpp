#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace vpd {

/// Channel-major (C x H x W) pixel buffer.
template <class T>
struct Planar {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Planar() = default;
    Planar(int c, int h, int w, T fill = T{})
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t index(int c, int y, int x) const {
        return (static_cast<std::size_t>(c) * height + y) * width + x;
    }
    T& at(int c, int y, int x) { return data[index(c, y, x)]; }
    const T& at(int c, int y, int x) const { return data[index(c, y, x)]; }
    bool empty() const { return data.empty(); }
    bool operator==(const Planar&) const = default;
};

using ImageU8 = Planar<std::uint8_t>;
using ImageF = Planar<float>;

/// Axis-aligned square in source pixel coordinates (pixel i covers [i, i+1)).
struct SquareWindow {
    double x0 = 0.0;
    double y0 = 0.0;
    double side = 0.0;
};

/// Resamples a square window to out_size x out_size with a separable
/// triangle filter widened by the downscale factor. Samples outside the
/// source read as zero.
template <class T>
ImageF resample_window(const Planar<T>& src, const SquareWindow& window, int out_size);

/// Binary PPM (3 channels) or PGM (1 channel).
void write_pnm(const std::filesystem::path& path, const ImageU8& image);
ImageU8 read_pnm(const std::filesystem::path& path);

}  // namespace vpd
