#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "ulab/augment.hpp"
#include "ulab/dataset.hpp"

namespace ulab::data {

// Deterministic desk-scale image corpora. Two 10-class families with
// distinct distributions: stroke glyphs ("digits") and geometric textures
// ("shapes"). They stand in for the usual 28x28 benchmark pair whenever no
// real IDX files are available under UNLEARN_DATA_DIR, and double as the
// POOD pairing (each family is out-of-distribution for the other).

enum class CorpusFamily { Digits, Shapes };

inline CorpusFamily corpus_family_from_name(const std::string& name) {
    if (name == "digits") return CorpusFamily::Digits;
    if (name == "shapes") return CorpusFamily::Shapes;
    fail(ErrorKind::Config, "unknown corpus family: " + name + " (expected digits|shapes)");
}

namespace glyph {

using Seg = std::array<double, 4>; // x0, y0, x1, y1 in unit glyph space

inline void arc(std::vector<Seg>& segs, double cx, double cy, double rx, double ry,
                double deg0, double deg1, int steps = 14) {
    double px = 0, py = 0;
    for (int i = 0; i <= steps; ++i) {
        const double a = (deg0 + (deg1 - deg0) * i / steps) * M_PI / 180.0;
        const double x = cx + rx * std::cos(a), y = cy - ry * std::sin(a);
        if (i) segs.push_back({px, py, x, y});
        px = x;
        py = y;
    }
}

inline void line(std::vector<Seg>& segs, double x0, double y0, double x1, double y1) {
    segs.push_back({x0, y0, x1, y1});
}

inline const std::vector<Seg>& digit_strokes(int d) {
    static const std::array<std::vector<Seg>, 10> table = [] {
        std::array<std::vector<Seg>, 10> t;
        arc(t[0], 0.5, 0.5, 0.27, 0.37, 0, 360, 24);
        line(t[1], 0.34, 0.3, 0.52, 0.12);
        line(t[1], 0.52, 0.12, 0.52, 0.88);
        arc(t[2], 0.5, 0.32, 0.25, 0.2, 175, -10);
        line(t[2], 0.73, 0.38, 0.26, 0.87);
        line(t[2], 0.26, 0.87, 0.76, 0.87);
        arc(t[3], 0.46, 0.3, 0.24, 0.19, 150, -80);
        arc(t[3], 0.46, 0.68, 0.26, 0.21, 100, -150);
        line(t[4], 0.62, 0.1, 0.22, 0.62);
        line(t[4], 0.22, 0.62, 0.8, 0.62);
        line(t[4], 0.62, 0.1, 0.62, 0.9);
        line(t[5], 0.72, 0.12, 0.27, 0.12);
        line(t[5], 0.27, 0.12, 0.25, 0.46);
        arc(t[5], 0.46, 0.65, 0.26, 0.23, 120, -120);
        arc(t[6], 0.52, 0.3, 0.3, 0.45, 70, 150);
        arc(t[6], 0.48, 0.67, 0.21, 0.2, 0, 360, 20);
        line(t[7], 0.24, 0.14, 0.78, 0.14);
        line(t[7], 0.78, 0.14, 0.4, 0.88);
        arc(t[8], 0.5, 0.31, 0.2, 0.18, 0, 360, 20);
        arc(t[8], 0.5, 0.68, 0.24, 0.2, 0, 360, 20);
        arc(t[9], 0.52, 0.34, 0.21, 0.2, 0, 360, 20);
        line(t[9], 0.72, 0.36, 0.6, 0.88);
        return t;
    }();
    return table[d];
}

inline double dist_to_segment(double px, double py, const Seg& s) {
    const double vx = s[2] - s[0], vy = s[3] - s[1];
    const double wx = px - s[0], wy = py - s[1];
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? (wx * vx + wy * vy) / len2 : 0.0;
    t = std::min(1.0, std::max(0.0, t));
    const double dx = px - (s[0] + t * vx), dy = py - (s[1] + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

// Membership intensity for the texture family, in unit glyph space.
inline double shape_value(int cls, double x, double y) {
    const double dx = x - 0.5, dy = y - 0.5;
    const double r = std::sqrt(dx * dx + dy * dy);
    auto band = [](double v, double period) {
        const double m = v / period - std::floor(v / period);
        return m < 0.5 ? 1.0 : 0.0;
    };
    switch (cls) {
        case 0: return r < 0.32 ? 1.0 : 0.0;                                   // disk
        case 1: return (r > 0.2 && r < 0.36) ? 1.0 : 0.0;                      // ring
        case 2: return (std::abs(dx) < 0.3 && std::abs(dy) < 0.3) ? 1.0 : 0.0; // square
        case 3: {                                                              // square outline
            const double m = std::max(std::abs(dx), std::abs(dy));
            return (m > 0.2 && m < 0.34) ? 1.0 : 0.0;
        }
        case 4: return std::abs(dy) < 0.36 && std::abs(dx) < 0.38 ? band(y, 0.22) : 0.0;  // h-stripes
        case 5: return std::abs(dx) < 0.36 && std::abs(dy) < 0.38 ? band(x, 0.22) : 0.0;  // v-stripes
        case 6:
            return (std::abs(dx) < 0.36 && std::abs(dy) < 0.36 &&
                    band(x, 0.36) == band(y, 0.36))
                       ? 1.0
                       : 0.0; // checker
        case 7: return (dy > -0.28 && dy < 0.3 && std::abs(dx) < 0.33 * (dy + 0.28)) ? 1.0 : 0.0; // triangle
        case 8:
            return ((std::abs(dx) < 0.11 && std::abs(dy) < 0.36) ||
                    (std::abs(dy) < 0.11 && std::abs(dx) < 0.36))
                       ? 1.0
                       : 0.0; // cross
        case 9: return std::abs(dx) + std::abs(dy) < 0.42 ? band(x - y, 0.2) : 0.0; // diagonal-striped diamond
    }
    return 0.0;
}

} // namespace glyph

namespace detail {

struct DrawParams {
    double cos_a, sin_a, sx, sy, shear, tx, ty;
    double thickness, intensity, edge;
    double blur_sigma, noise_amp;
    // low-frequency elastic warp, two sinusoidal components per axis
    double wax[2], wfx[2], wpx[2];
    double way[2], wfy[2], wpy[2];
    // up to two faint distractor strokes
    int n_distract = 0;
    glyph::Seg distract[2];
    double distract_gain[2];
};

inline DrawParams sample_draw(Rng& rng) {
    DrawParams p;
    const double angle = rng.uniform(-25.0, 25.0) * M_PI / 180.0;
    p.cos_a = std::cos(angle);
    p.sin_a = std::sin(angle);
    p.sx = rng.uniform(0.62, 1.25);
    p.sy = rng.uniform(0.62, 1.25);
    p.shear = rng.uniform(-0.35, 0.35);
    p.tx = rng.uniform(-0.14, 0.14);
    p.ty = rng.uniform(-0.14, 0.14);
    p.thickness = rng.uniform(0.028, 0.105);
    p.intensity = rng.uniform(0.55, 1.0);
    p.edge = 0.025;
    p.blur_sigma = rng.uniform(0.2, 0.5);
    p.noise_amp = rng.uniform(0.0, 0.03);
    for (int k = 0; k < 2; ++k) {
        p.wax[k] = rng.uniform(0.0, 0.07);
        p.wfx[k] = rng.uniform(0.5, 1.8);
        p.wpx[k] = rng.uniform(0.0, 2.0 * M_PI);
        p.way[k] = rng.uniform(0.0, 0.07);
        p.wfy[k] = rng.uniform(0.5, 1.8);
        p.wpy[k] = rng.uniform(0.0, 2.0 * M_PI);
    }
    p.n_distract = int(rng.index(3));
    for (int k = 0; k < p.n_distract; ++k) {
        const double x0 = rng.uniform(0.05, 0.95), y0 = rng.uniform(0.05, 0.95);
        p.distract[k] = {x0, y0, x0 + rng.uniform(-0.25, 0.25), y0 + rng.uniform(-0.25, 0.25)};
        p.distract_gain[k] = rng.uniform(0.15, 0.45);
    }
    return p;
}

// output pixel -> glyph space: inverse affine, then an elastic warp
inline void to_glyph(const DrawParams& p, double x, double y, double& gx, double& gy) {
    double ux = x - 0.5 - p.tx, uy = y - 0.5 - p.ty;
    const double rx = p.cos_a * ux + p.sin_a * uy;
    const double ry = -p.sin_a * ux + p.cos_a * uy;
    ux = rx - p.shear * ry;
    uy = ry;
    gx = ux / p.sx + 0.5;
    gy = uy / p.sy + 0.5;
    double wx = 0.0, wy = 0.0;
    for (int k = 0; k < 2; ++k) {
        wx += p.wax[k] * std::sin(2.0 * M_PI * (p.wfx[k] * gy) + p.wpx[k]);
        wy += p.way[k] * std::sin(2.0 * M_PI * (p.wfy[k] * gx) + p.wpy[k]);
    }
    gx += wx;
    gy += wy;
}

inline void render_sample(CorpusFamily fam, int cls, const DrawParams& p, Rng& rng, int hw,
                          double* out) {
    Tensor img({1, 1, std::size_t(hw), std::size_t(hw)});
    for (int r = 0; r < hw; ++r) {
        for (int c = 0; c < hw; ++c) {
            double gx, gy;
            to_glyph(p, (c + 0.5) / hw, (r + 0.5) / hw, gx, gy);
            double v = 0.0;
            if (fam == CorpusFamily::Digits) {
                double d = 1e9;
                for (const auto& s : glyph::digit_strokes(cls))
                    d = std::min(d, glyph::dist_to_segment(gx, gy, s));
                const double t = (p.thickness - d) / p.edge;
                v = t >= 1.0 ? 1.0 : (t <= 0.0 ? 0.0 : t);
            } else {
                if (gx > 0.0 && gx < 1.0 && gy > 0.0 && gy < 1.0)
                    v = glyph::shape_value(cls, gx, gy);
            }
            for (int k = 0; k < p.n_distract; ++k) {
                const double d = glyph::dist_to_segment(gx, gy, p.distract[k]);
                const double t = (0.55 * p.thickness - d) / p.edge;
                v = std::max(v, p.distract_gain[k] * std::min(1.0, std::max(0.0, t)));
            }
            img.data[r * hw + c] = p.intensity * v;
        }
    }
    img = gaussian_blur(img, p.blur_sigma);
    for (int i = 0; i < hw * hw; ++i) {
        double v = img.data[i] + p.noise_amp * rng.normal();
        out[i] = std::min(1.0, std::max(0.0, v));
    }
}

} // namespace detail

inline LabeledDataset make_corpus(CorpusFamily fam, std::size_t n, std::uint64_t seed,
                                  std::int64_t id_base = 0, int hw = 28) {
    LabeledDataset ds;
    ds.images = Tensor({n, 1, std::size_t(hw), std::size_t(hw)});
    ds.labels.resize(n);
    ds.ids.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(mix_seed(seed, fam == CorpusFamily::Digits ? 0xd161 : 0x5a9e, i));
        const int cls = int(i % 10);
        const auto p = detail::sample_draw(rng);
        detail::render_sample(fam, cls, p, rng, hw, ds.images.ptr() + i * ds.images.row_size());
        ds.labels[i] = cls;
        ds.ids[i] = id_base + std::int64_t(i);
    }
    return ds;
}

// Writes a family as standard IDX train/test files under dir.
inline void write_corpus_idx(const std::string& dir, CorpusFamily fam, std::size_t n_train,
                             std::size_t n_test, std::uint64_t seed) {
    const LabeledDataset train = make_corpus(fam, n_train, mix_seed(seed, 1));
    const LabeledDataset test = make_corpus(fam, n_test, mix_seed(seed, 2), 1000000);
    save_idx(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte", train);
    save_idx(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte", test);
}

} // namespace ulab::data
