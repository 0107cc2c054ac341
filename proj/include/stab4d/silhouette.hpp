#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "stab4d/geometry.hpp"

namespace stab4d {

using Faces = std::vector<std::array<int, 3>>;

/// Binary occupancy raster, bit-packed row-major.
class SilhouetteMask {
public:
    SilhouetteMask() = default;
    SilhouetteMask(int width, int height);

    int width() const { return width_; }
    int height() const { return height_; }
    bool get(int x, int y) const;
    void set(int x, int y, bool value = true);
    /// Set bits [x0, x1) of row y.
    void set_span(int y, int x0, int x1);

    std::int64_t count() const;
    bool empty() const { return count() == 0; }

    bool operator==(const SilhouetteMask& other) const = default;

    const std::vector<std::uint64_t>& words() const { return words_; }

private:
    friend std::int64_t intersection_count(const SilhouetteMask&, const SilhouetteMask&);
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint64_t> words_;
};

std::int64_t intersection_count(const SilhouetteMask& a, const SilhouetteMask& b);

/// Dice coefficient 2|A&B| / (|A| + |B|); two empty masks agree (1.0).
double dice(const SilhouetteMask& a, const SilhouetteMask& b);

/// Intersection over union; two empty masks agree (1.0).
double iou(const SilhouetteMask& a, const SilhouetteMask& b);

/// Scanline-rasterized binary union of projected triangle coverage at
/// resolution (width/downscale, height/downscale). A pixel is covered iff its
/// center lies inside a projected triangle; edge ties follow a top-left fill
/// rule. Faces with any vertex at z <= 1e-6 are skipped. Deterministic.
SilhouetteMask rasterize_silhouette(const Points& vertices, const Faces& faces,
                                    const CameraIntrinsics& K, int downscale);

/// Block-majority downsampling; ties resolve to foreground.
SilhouetteMask downscale_mask(const SilhouetteMask& mask, int factor);

/// Binary PGM (P5), maxval 255, foreground >= 128.
SilhouetteMask read_pgm(const std::filesystem::path& path);
void write_pgm(const SilhouetteMask& mask, const std::filesystem::path& path);

}  // namespace stab4d
