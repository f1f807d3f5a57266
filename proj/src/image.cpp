#include "vpd/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "vpd/error.hpp"

namespace vpd {

namespace {

struct Tap {
    int index;
    float weight;
};

/// Taps for each output sample along one axis; weights normalised over the
/// zero-extended source so out-of-range taps still count.
std::vector<std::vector<Tap>> axis_taps(double origin, double span, int out_size) {
    const double scale = span / out_size;
    const double support = std::max(1.0, scale);
    std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(out_size));
    for (int o = 0; o < out_size; ++o) {
        const double center = origin + (o + 0.5) * scale;
        const int lo = static_cast<int>(std::floor(center - support - 0.5));
        const int hi = static_cast<int>(std::ceil(center + support - 0.5));
        double total = 0.0;
        std::vector<Tap> row;
        for (int i = lo; i <= hi; ++i) {
            const double w = 1.0 - std::abs((i + 0.5) - center) / support;
            if (w <= 0.0) continue;
            total += w;
            row.push_back({i, static_cast<float>(w)});
        }
        for (auto& t : row) t.weight = static_cast<float>(t.weight / total);
        taps[static_cast<std::size_t>(o)] = std::move(row);
    }
    return taps;
}

}  // namespace

template <class T>
ImageF resample_window(const Planar<T>& src, const SquareWindow& window, int out_size) {
    const auto xt = axis_taps(window.x0, window.side, out_size);
    const auto yt = axis_taps(window.y0, window.side, out_size);
    ImageF horizontal(src.channels, src.height, out_size, 0.0f);
    for (int c = 0; c < src.channels; ++c) {
        for (int y = 0; y < src.height; ++y) {
            for (int ox = 0; ox < out_size; ++ox) {
                float acc = 0.0f;
                for (const Tap& t : xt[static_cast<std::size_t>(ox)]) {
                    if (t.index < 0 || t.index >= src.width) continue;
                    acc += t.weight * static_cast<float>(src.at(c, y, t.index));
                }
                horizontal.at(c, y, ox) = acc;
            }
        }
    }
    ImageF out(src.channels, out_size, out_size, 0.0f);
    for (int c = 0; c < src.channels; ++c) {
        for (int oy = 0; oy < out_size; ++oy) {
            for (const Tap& t : yt[static_cast<std::size_t>(oy)]) {
                if (t.index < 0 || t.index >= src.height) continue;
                for (int ox = 0; ox < out_size; ++ox) out.at(c, oy, ox) += t.weight * horizontal.at(c, t.index, ox);
            }
        }
    }
    return out;
}

template ImageF resample_window(const Planar<std::uint8_t>&, const SquareWindow&, int);
template ImageF resample_window(const Planar<float>&, const SquareWindow&, int);

void write_pnm(const std::filesystem::path& path, const ImageU8& image) {
    if (image.channels != 1 && image.channels != 3) throw DimensionMismatch("pnm: 1 or 3 channels required");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingArtifact("cannot write " + path.string());
    out << (image.channels == 3 ? "P6" : "P5") << '\n' << image.width << ' ' << image.height << "\n255\n";
    std::vector<char> interleaved(image.data.size());
    std::size_t k = 0;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < image.channels; ++c) interleaved[k++] = static_cast<char>(image.at(c, y, x));
    out.write(interleaved.data(), static_cast<std::streamsize>(interleaved.size()));
}

ImageU8 read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifact("cannot read " + path.string());
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    in.get();
    if ((magic != "P6" && magic != "P5") || w <= 0 || h <= 0 || maxval != 255)
        throw CorruptHeader("unsupported image " + path.string());
    const int channels = magic == "P6" ? 3 : 1;
    ImageU8 image(channels, h, w);
    std::vector<char> interleaved(image.data.size());
    if (!in.read(interleaved.data(), static_cast<std::streamsize>(interleaved.size())))
        throw CorruptHeader("truncated image " + path.string());
    std::size_t k = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) image.at(c, y, x) = static_cast<std::uint8_t>(interleaved[k++]);
    return image;
}

}  // namespace vpd
