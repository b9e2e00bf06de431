#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "ulab/rng.hpp"
#include "ulab/tensor.hpp"

namespace ulab::data {

enum class AugOp { Identity, Crop, Rotate, Scale, FlipHorizontal, GaussianNoise, Cutout };

inline const char* aug_op_name(AugOp op) {
    switch (op) {
        case AugOp::Identity: return "identity";
        case AugOp::Crop: return "crop";
        case AugOp::Rotate: return "rotate";
        case AugOp::Scale: return "scale";
        case AugOp::FlipHorizontal: return "flip-horizontal";
        case AugOp::GaussianNoise: return "gaussian-noise";
        case AugOp::Cutout: return "cutout";
    }
    return "?";
}

// One draw w ~ Omega. The same w is applied to both the real and the
// synthetic minibatch of a Siamese pair.
struct AugmentationParams {
    AugOp op = AugOp::Identity;
    int pad = 0, offset_r = 0, offset_c = 0;   // crop
    double angle_deg = 0.0;                    // rotate, in [-15, 15]
    double scale = 1.0;                        // in [0.8, 1.2]
    double sigma = 0.0;                        // gaussian noise, <= 0.05
    double box_frac = 0.0;                     // cutout area fraction, <= 0.25
    double box_center_r = 0.5, box_center_c = 0.5;
    std::uint64_t noise_seed = 0;              // pinned noise realization
};

// Omega bounds (the sampling distribution for w).
inline constexpr int kMaxPad = 4;
inline constexpr double kMaxAngleDeg = 15.0;
inline constexpr double kScaleLo = 0.8, kScaleHi = 1.2;
inline constexpr double kMaxSigma = 0.05;
inline constexpr double kMaxBoxFrac = 0.25;

// Categorical weights over ops. Flip stays disabled for digit-style data.
struct AugmentWeights {
    double identity = 0.0;
    double crop = 1.0;
    double rotate = 1.0;
    double scale = 1.0;
    double flip = 0.0;
    double noise = 1.0;
    double cutout = 1.0;

    std::array<std::pair<AugOp, double>, 7> entries() const {
        return {{{AugOp::Identity, identity},
                 {AugOp::Crop, crop},
                 {AugOp::Rotate, rotate},
                 {AugOp::Scale, scale},
                 {AugOp::FlipHorizontal, flip},
                 {AugOp::GaussianNoise, noise},
                 {AugOp::Cutout, cutout}}};
    }
};

inline AugmentationParams sample_augmentation(Rng& rng, const AugmentWeights& w = {}) {
    double total = 0.0;
    for (auto [op, wt] : w.entries()) total += wt;
    require(total > 0.0, ErrorKind::Config, "augmentation weights sum to zero");
    double r = rng.uniform() * total;
    AugOp chosen = AugOp::Identity;
    for (auto [op, wt] : w.entries()) {
        if (r < wt) {
            chosen = op;
            break;
        }
        r -= wt;
    }
    AugmentationParams p;
    p.op = chosen;
    switch (chosen) {
        case AugOp::Identity:
            break;
        case AugOp::Crop:
            p.pad = 1 + int(rng.index(kMaxPad));
            p.offset_r = int(rng.index(2 * p.pad + 1));
            p.offset_c = int(rng.index(2 * p.pad + 1));
            break;
        case AugOp::Rotate:
            p.angle_deg = rng.uniform(-kMaxAngleDeg, kMaxAngleDeg);
            break;
        case AugOp::Scale:
            p.scale = rng.uniform(kScaleLo, kScaleHi);
            break;
        case AugOp::FlipHorizontal:
            break;
        case AugOp::GaussianNoise:
            p.sigma = rng.uniform(0.0, kMaxSigma);
            p.noise_seed = rng.next_u64();
            break;
        case AugOp::Cutout:
            p.box_frac = rng.uniform(0.05, kMaxBoxFrac);
            p.box_center_r = rng.uniform();
            p.box_center_c = rng.uniform();
            break;
    }
    return p;
}

namespace detail {

// Bilinear resampling pass: y[r,c] = x(src_r, src_c) with zeros outside.
// Linear in x, so its VJP is the transposed scatter of the same weights.
template <bool Backward>
inline void resample(const double* x, double* y, int h, int w,
                     double m00, double m01, double m10, double m11, double tr, double tc) {
    const double cr = 0.5 * (h - 1), cc = 0.5 * (w - 1);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double dr = r - cr, dc = c - cc;
            const double sr = m00 * dr + m01 * dc + cr + tr;
            const double sc = m10 * dr + m11 * dc + cc + tc;
            const int r0 = int(std::floor(sr)), c0 = int(std::floor(sc));
            const double fr = sr - r0, fc = sc - c0;
            const double wts[4] = {(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc};
            const int rr[4] = {r0, r0, r0 + 1, r0 + 1};
            const int cs[4] = {c0, c0 + 1, c0, c0 + 1};
            for (int t = 0; t < 4; ++t) {
                if (rr[t] < 0 || rr[t] >= h || cs[t] < 0 || cs[t] >= w) continue;
                if constexpr (Backward)
                    y[rr[t] * w + cs[t]] += wts[t] * x[r * w + c];
                else
                    y[r * w + c] += wts[t] * x[rr[t] * w + cs[t]];
            }
        }
    }
}

struct PlaneOp {
    // rotation/scale matrix applied per plane (identity for crop/flip/etc.)
    double m00 = 1, m01 = 0, m10 = 0, m11 = 1, tr = 0, tc = 0;
    bool use_resample = false;
};

inline PlaneOp plane_op(const AugmentationParams& p) {
    PlaneOp op;
    switch (p.op) {
        case AugOp::Rotate: {
            const double a = p.angle_deg * M_PI / 180.0;
            // inverse mapping (output -> source)
            op.m00 = std::cos(a);
            op.m01 = std::sin(a);
            op.m10 = -std::sin(a);
            op.m11 = std::cos(a);
            op.use_resample = true;
            break;
        }
        case AugOp::Scale: {
            op.m00 = 1.0 / p.scale;
            op.m11 = 1.0 / p.scale;
            op.use_resample = true;
            break;
        }
        default:
            break;
    }
    return op;
}

} // namespace detail

struct AugmentTrace {
    AugmentationParams params;
    std::vector<std::size_t> shape;
    std::vector<unsigned char> clamp_mask; // 1 where the output was clamped
};

// Applies w to an image batch (n x c x h x w). Output stays in [0,1].
inline Tensor augment(const Tensor& batch, const AugmentationParams& p,
                      AugmentTrace* trace = nullptr) {
    require(batch.rank() == 4, ErrorKind::InputShape, "augment expects n x c x h x w");
    const std::size_t n = batch.dim(0), ch = batch.dim(1);
    const int h = int(batch.dim(2)), w = int(batch.dim(3));
    const std::size_t plane = std::size_t(h) * w;
    Tensor out(batch.shape);

    switch (p.op) {
        case AugOp::Identity:
            out.data = batch.data;
            break;
        case AugOp::Crop: {
            // zero-pad by p.pad then shift by (offset - pad): pure pixel relocation
            const int sr = p.offset_r - p.pad, sc = p.offset_c - p.pad;
            for (std::size_t pl = 0; pl < n * ch; ++pl) {
                const double* x = batch.ptr() + pl * plane;
                double* y = out.ptr() + pl * plane;
                for (int r = 0; r < h; ++r)
                    for (int c = 0; c < w; ++c) {
                        const int rr = r + sr, cc = c + sc;
                        y[r * w + c] = (rr >= 0 && rr < h && cc >= 0 && cc < w)
                                           ? x[rr * w + cc]
                                           : 0.0;
                    }
            }
            break;
        }
        case AugOp::Rotate:
        case AugOp::Scale: {
            const auto op = detail::plane_op(p);
            for (std::size_t pl = 0; pl < n * ch; ++pl)
                detail::resample<false>(batch.ptr() + pl * plane, out.ptr() + pl * plane, h, w,
                                        op.m00, op.m01, op.m10, op.m11, op.tr, op.tc);
            break;
        }
        case AugOp::FlipHorizontal: {
            for (std::size_t pl = 0; pl < n * ch; ++pl) {
                const double* x = batch.ptr() + pl * plane;
                double* y = out.ptr() + pl * plane;
                for (int r = 0; r < h; ++r)
                    for (int c = 0; c < w; ++c) y[r * w + c] = x[r * w + (w - 1 - c)];
            }
            break;
        }
        case AugOp::GaussianNoise: {
            Rng noise(p.noise_seed);
            for (std::size_t i = 0; i < out.size(); ++i)
                out.data[i] = batch.data[i] + p.sigma * noise.normal();
            break;
        }
        case AugOp::Cutout: {
            const double side = std::sqrt(p.box_frac);
            const int bh = std::max(1, int(std::lround(side * h)));
            const int bw = std::max(1, int(std::lround(side * w)));
            const int r0 = std::min(h - bh, std::max(0, int(p.box_center_r * h) - bh / 2));
            const int c0 = std::min(w - bw, std::max(0, int(p.box_center_c * w) - bw / 2));
            out.data = batch.data;
            for (std::size_t pl = 0; pl < n * ch; ++pl) {
                double* y = out.ptr() + pl * plane;
                for (int r = r0; r < r0 + bh; ++r)
                    for (int c = c0; c < c0 + bw; ++c) y[r * w + c] = 0.0;
            }
            break;
        }
    }

    if (trace) {
        trace->params = p;
        trace->shape = batch.shape;
        trace->clamp_mask.assign(out.size(), 0);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out.data[i] < 0.0) {
            out.data[i] = 0.0;
            if (trace) trace->clamp_mask[i] = 1;
        } else if (out.data[i] > 1.0) {
            out.data[i] = 1.0;
            if (trace) trace->clamp_mask[i] = 1;
        }
    }
    return out;
}

// Vector-Jacobian product of augment at the traced application.
inline Tensor augment_vjp(const AugmentTrace& trace, const Tensor& grad_out) {
    require(grad_out.shape == trace.shape, ErrorKind::Dimension, "augment_vjp shape mismatch");
    const AugmentationParams& p = trace.params;
    const std::size_t n = grad_out.dim(0), ch = grad_out.dim(1);
    const int h = int(grad_out.dim(2)), w = int(grad_out.dim(3));
    const std::size_t plane = std::size_t(h) * w;

    Tensor g = grad_out; // clamp: zero where saturated
    for (std::size_t i = 0; i < g.size(); ++i)
        if (trace.clamp_mask[i]) g.data[i] = 0.0;

    Tensor out(grad_out.shape);
    switch (p.op) {
        case AugOp::Identity:
        case AugOp::GaussianNoise:
            out.data = g.data;
            break;
        case AugOp::Crop: {
            const int sr = p.offset_r - p.pad, sc = p.offset_c - p.pad;
            for (std::size_t pl = 0; pl < n * ch; ++pl) {
                const double* gy = g.ptr() + pl * plane;
                double* gx = out.ptr() + pl * plane;
                for (int r = 0; r < h; ++r)
                    for (int c = 0; c < w; ++c) {
                        const int rr = r + sr, cc = c + sc;
                        if (rr >= 0 && rr < h && cc >= 0 && cc < w)
                            gx[rr * w + cc] += gy[r * w + c];
                    }
            }
            break;
        }
        case AugOp::Rotate:
        case AugOp::Scale: {
            const auto op = detail::plane_op(p);
            for (std::size_t pl = 0; pl < n * ch; ++pl)
                detail::resample<true>(g.ptr() + pl * plane, out.ptr() + pl * plane, h, w, op.m00,
                                       op.m01, op.m10, op.m11, op.tr, op.tc);
            break;
        }
        case AugOp::FlipHorizontal: {
            for (std::size_t pl = 0; pl < n * ch; ++pl) {
                const double* gy = g.ptr() + pl * plane;
                double* gx = out.ptr() + pl * plane;
                for (int r = 0; r < h; ++r)
                    for (int c = 0; c < w; ++c) gx[r * w + (w - 1 - c)] = gy[r * w + c];
            }
            break;
        }
        case AugOp::Cutout: {
            const double side = std::sqrt(p.box_frac);
            const int bh = std::max(1, int(std::lround(side * h)));
            const int bw = std::max(1, int(std::lround(side * w)));
            const int r0 = std::min(h - bh, std::max(0, int(p.box_center_r * h) - bh / 2));
            const int c0 = std::min(w - bw, std::max(0, int(p.box_center_c * w) - bw / 2));
            out.data = g.data;
            for (std::size_t pl = 0; pl < n * ch; ++pl) {
                double* gx = out.ptr() + pl * plane;
                for (int r = r0; r < r0 + bh; ++r)
                    for (int c = c0; c < c0 + bw; ++c) gx[r * w + c] = 0.0;
            }
            break;
        }
    }
    return out;
}

// Separable Gaussian blur with clamp-to-edge padding; the default substitute
// x~ = blur(x) for gradient-difference unlearning.
inline Tensor gaussian_blur(const Tensor& batch, double sigma) {
    require(batch.rank() == 4, ErrorKind::InputShape, "blur expects n x c x h x w");
    if (sigma <= 0.0) return batch;
    const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * double(i) * i / (sigma * sigma));
        sum += kernel[i + radius];
    }
    for (double& k : kernel) k /= sum;

    const std::size_t planes = batch.dim(0) * batch.dim(1);
    const int h = int(batch.dim(2)), w = int(batch.dim(3));
    Tensor tmp(batch.shape), out(batch.shape);
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const double* x = batch.ptr() + pl * std::size_t(h) * w;
        double* t = tmp.ptr() + pl * std::size_t(h) * w;
        double* y = out.ptr() + pl * std::size_t(h) * w;
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    const int cc = std::min(w - 1, std::max(0, c + i));
                    acc += kernel[i + radius] * x[r * w + cc];
                }
                t[r * w + c] = acc;
            }
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    const int rr = std::min(h - 1, std::max(0, r + i));
                    acc += kernel[i + radius] * t[rr * w + c];
                }
                y[r * w + c] = acc;
            }
    }
    return out;
}

} // namespace ulab::data
