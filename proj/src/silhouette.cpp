#include "stab4d/silhouette.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>

namespace stab4d {

SilhouetteMask::SilhouetteMask(int width, int height) : width_(width), height_(height) {
    if (width < 0 || height < 0) throw InputError("mask dimensions must be nonnegative");
    words_.assign((std::size_t(width) * std::size_t(height) + 63) / 64, 0);
}

bool SilhouetteMask::get(int x, int y) const {
    const std::size_t i = std::size_t(y) * width_ + x;
    return (words_[i >> 6] >> (i & 63)) & 1u;
}

void SilhouetteMask::set(int x, int y, bool value) {
    const std::size_t i = std::size_t(y) * width_ + x;
    if (value)
        words_[i >> 6] |= std::uint64_t(1) << (i & 63);
    else
        words_[i >> 6] &= ~(std::uint64_t(1) << (i & 63));
}

void SilhouetteMask::set_span(int y, int x0, int x1) {
    if (x0 >= x1) return;
    std::size_t lo = std::size_t(y) * width_ + x0;
    std::size_t hi = std::size_t(y) * width_ + x1;  // exclusive
    std::size_t wlo = lo >> 6, whi = (hi - 1) >> 6;
    const std::uint64_t mlo = ~std::uint64_t(0) << (lo & 63);
    const std::uint64_t mhi = ~std::uint64_t(0) >> (63 - ((hi - 1) & 63));
    if (wlo == whi) {
        words_[wlo] |= mlo & mhi;
    } else {
        words_[wlo] |= mlo;
        for (std::size_t w = wlo + 1; w < whi; ++w) words_[w] = ~std::uint64_t(0);
        words_[whi] |= mhi;
    }
}

std::int64_t SilhouetteMask::count() const {
    std::int64_t n = 0;
    for (std::uint64_t w : words_) n += std::popcount(w);
    return n;
}

std::int64_t intersection_count(const SilhouetteMask& a, const SilhouetteMask& b) {
    std::int64_t n = 0;
    for (std::size_t i = 0; i < a.words_.size(); ++i) n += std::popcount(a.words_[i] & b.words_[i]);
    return n;
}

namespace {
void require_same_dims(const SilhouetteMask& a, const SilhouetteMask& b) {
    if (a.width() != b.width() || a.height() != b.height())
        throw InputError("mask dimension mismatch");
}
}  // namespace

double dice(const SilhouetteMask& a, const SilhouetteMask& b) {
    require_same_dims(a, b);
    const std::int64_t ca = a.count(), cb = b.count();
    if (ca + cb == 0) return 1.0;
    return 2.0 * double(intersection_count(a, b)) / double(ca + cb);
}

double iou(const SilhouetteMask& a, const SilhouetteMask& b) {
    require_same_dims(a, b);
    const std::int64_t inter = intersection_count(a, b);
    const std::int64_t uni = a.count() + b.count() - inter;
    if (uni == 0) return 1.0;
    return double(inter) / double(uni);
}

namespace {

// Edge tie rule: a pixel center exactly on an edge belongs to the triangle
// whose edge is "top-left" under screen-clockwise winding (x right, y down).
inline bool tie_accepts(double ex, double ey) {
    return ey < 0.0 || (ey == 0.0 && ex > 0.0);
}

}  // namespace

SilhouetteMask rasterize_silhouette(const Points& vertices, const Faces& faces,
                                    const CameraIntrinsics& K, int downscale) {
    K.validate();
    if (downscale < 1) throw InputError("rasterize_silhouette: downscale must be >= 1");
    const int W = K.width / downscale;
    const int H = K.height / downscale;
    if (W == 0 || H == 0) throw InputError("rasterize_silhouette: zero-size raster");

    SilhouetteMask mask(W, H);
    const Eigen::Index nv = vertices.rows();

    // project once; behind-camera vertices invalidate their faces
    std::vector<double> px(nv), py(nv);
    std::vector<char> ok(nv);
    const double inv_ds = 1.0 / double(downscale);
    for (Eigen::Index i = 0; i < nv; ++i) {
        const double z = vertices(i, 2);
        if (z > 1e-6) {
            ok[i] = 1;
            px[i] = (K.fx * vertices(i, 0) / z + K.cx) * inv_ds;
            py[i] = (K.fy * vertices(i, 1) / z + K.cy) * inv_ds;
        } else {
            ok[i] = 0;
        }
    }

    for (const auto& f : faces) {
        if (f[0] < 0 || f[1] < 0 || f[2] < 0 || f[0] >= nv || f[1] >= nv || f[2] >= nv)
            throw InputError("rasterize_silhouette: face index out of range");
        if (!ok[f[0]] || !ok[f[1]] || !ok[f[2]]) continue;

        double x0 = px[f[0]], y0 = py[f[0]];
        double x1 = px[f[1]], y1 = py[f[1]];
        double x2 = px[f[2]], y2 = py[f[2]];
        const double area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0);
        if (area2 == 0.0) continue;
        if (area2 < 0.0) {
            std::swap(x1, x2);
            std::swap(y1, y2);
        }

        const double minx = std::min({x0, x1, x2}), maxx = std::max({x0, x1, x2});
        const double miny = std::min({y0, y1, y2}), maxy = std::max({y0, y1, y2});
        const int bx0 = std::max(0, int(std::ceil(minx - 0.5)));
        const int bx1 = std::min(W - 1, int(std::floor(maxx - 0.5)));
        const int by0 = std::max(0, int(std::ceil(miny - 0.5)));
        const int by1 = std::min(H - 1, int(std::floor(maxy - 0.5)));
        if (bx0 > bx1 || by0 > by1) continue;

        // edge i runs from vertex i to vertex i+1
        const double ex[3] = {x1 - x0, x2 - x1, x0 - x2};
        const double ey[3] = {y1 - y0, y2 - y1, y0 - y2};
        const double ox[3] = {x0, x1, x2};
        const double oy[3] = {y0, y1, y2};
        bool accept[3];
        double row_e[3];
        for (int e = 0; e < 3; ++e) accept[e] = tie_accepts(ex[e], ey[e]);

        for (int y = by0; y <= by1; ++y) {
            const double pyc = y + 0.5;
            for (int e = 0; e < 3; ++e)
                row_e[e] = ex[e] * (pyc - oy[e]) - ey[e] * ((bx0 + 0.5) - ox[e]);
            int run_start = -1;
            for (int x = bx0; x <= bx1; ++x) {
                bool inside = true;
                for (int e = 0; e < 3; ++e) {
                    const double v = row_e[e];
                    if (v < 0.0 || (v == 0.0 && !accept[e])) {
                        inside = false;
                        break;
                    }
                }
                if (inside) {
                    if (run_start < 0) run_start = x;
                } else if (run_start >= 0) {
                    mask.set_span(y, run_start, x);
                    run_start = -1;
                }
                for (int e = 0; e < 3; ++e) row_e[e] -= ey[e];
            }
            if (run_start >= 0) mask.set_span(y, run_start, bx1 + 1);
        }
    }
    return mask;
}

SilhouetteMask downscale_mask(const SilhouetteMask& mask, int factor) {
    if (factor < 1) throw InputError("downscale_mask: factor must be >= 1");
    if (factor == 1) return mask;
    const int W = mask.width() / factor;
    const int H = mask.height() / factor;
    if (W == 0 || H == 0) throw InputError("downscale_mask: zero-size result");
    SilhouetteMask out(W, H);
    const int half = factor * factor;  // majority: 2*count >= factor^2
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            int c = 0;
            for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx)
                    c += mask.get(x * factor + dx, y * factor + dy);
            if (2 * c >= half) out.set(x, y);
        }
    }
    return out;
}

SilhouetteMask read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open mask file: " + path.string());
    auto next_token = [&]() -> std::string {
        std::string tok;
        int c;
        while ((c = in.get()) != EOF) {
            if (c == '#') {
                while ((c = in.get()) != EOF && c != '\n') {
                }
            } else if (!std::isspace(c)) {
                tok.push_back(char(c));
                while ((c = in.peek()) != EOF && !std::isspace(c) && c != '#') tok.push_back(char(in.get()));
                return tok;
            }
        }
        return tok;
    };
    if (next_token() != "P5") throw InputError("not a binary PGM (P5): " + path.string());
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(next_token());
        h = std::stoi(next_token());
        maxval = std::stoi(next_token());
    } catch (const std::exception&) {
        throw InputError("malformed PGM header: " + path.string());
    }
    if (w < 0 || h < 0 || maxval <= 0 || maxval > 255)
        throw InputError("unsupported PGM header (need 8-bit, maxval <= 255): " + path.string());
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> row(static_cast<std::size_t>(w));
    SilhouetteMask mask(w, h);
    for (int y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), w);
        if (in.gcount() != w) throw InputError("truncated PGM data: " + path.string());
        int run = -1;
        for (int x = 0; x < w; ++x) {
            if (row[x] >= 128) {
                if (run < 0) run = x;
            } else if (run >= 0) {
                mask.set_span(y, run, x);
                run = -1;
            }
        }
        if (run >= 0) mask.set_span(y, run, w);
    }
    return mask;
}

void write_pgm(const SilhouetteMask& mask, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write mask file: " + path.string());
    out << "P5\n" << mask.width() << " " << mask.height() << "\n255\n";
    std::vector<unsigned char> row(std::size_t(mask.width()));
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) row[x] = mask.get(x, y) ? 255 : 0;
        out.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
    if (!out) throw InputError("failed writing mask file: " + path.string());
}

}  // namespace stab4d
