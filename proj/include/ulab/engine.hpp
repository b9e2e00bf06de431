#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "ulab/network.hpp"
#include "ulab/tensor.hpp"

namespace ulab::nn {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;

inline constexpr double kNormEps = 1e-5;

enum class Reduction { Mean, Sum };

// Activations recorded during a forward pass, consumed by backward().
struct Trace {
    std::vector<Tensor> acts;                       // acts[0] = input, acts[i+1] = layer i output
    std::vector<std::vector<double>> norm_inv_std;  // ChannelNorm only: per (sample, channel)
    std::vector<FeatureShape> shapes;               // per-sample shapes along the network
};

namespace detail {

inline void im2col(const double* x, int ch, int h, int w, int k, double* col) {
    // col is (ch*k*k) x (h*w); same padding, stride 1
    const int pad = k / 2;
    for (int ci = 0; ci < ch; ++ci) {
        const double* xc = x + std::size_t(ci) * h * w;
        for (int kr = 0; kr < k; ++kr) {
            for (int kc = 0; kc < k; ++kc) {
                double* row = col + (std::size_t(ci) * k * k + kr * k + kc) * std::size_t(h) * w;
                for (int r = 0; r < h; ++r) {
                    const int sr = r + kr - pad;
                    if (sr < 0 || sr >= h) {
                        std::fill(row + std::size_t(r) * w, row + std::size_t(r + 1) * w, 0.0);
                        continue;
                    }
                    for (int c = 0; c < w; ++c) {
                        const int sc = c + kc - pad;
                        row[std::size_t(r) * w + c] = (sc < 0 || sc >= w)
                                                          ? 0.0
                                                          : xc[std::size_t(sr) * w + sc];
                    }
                }
            }
        }
    }
}

inline void col2im_add(const double* col, int ch, int h, int w, int k, double* dx) {
    const int pad = k / 2;
    for (int ci = 0; ci < ch; ++ci) {
        double* xc = dx + std::size_t(ci) * h * w;
        for (int kr = 0; kr < k; ++kr) {
            for (int kc = 0; kc < k; ++kc) {
                const double* row =
                    col + (std::size_t(ci) * k * k + kr * k + kc) * std::size_t(h) * w;
                for (int r = 0; r < h; ++r) {
                    const int sr = r + kr - pad;
                    if (sr < 0 || sr >= h) continue;
                    for (int c = 0; c < w; ++c) {
                        const int sc = c + kc - pad;
                        if (sc < 0 || sc >= w) continue;
                        xc[std::size_t(sr) * w + sc] += row[std::size_t(r) * w + c];
                    }
                }
            }
        }
    }
}

} // namespace detail

// Forward through the first `layer_count` layers. Records a trace when given one.
inline Tensor forward_upto(const Model& m, const Tensor& batch, std::size_t layer_count,
                           Trace* trace) {
    const auto shapes = m.spec.shape_trace();
    require(batch.rank() >= 2, ErrorKind::InputShape, "batch must have a leading sample axis");
    require(batch.row_size() == shapes[0].count(), ErrorKind::InputShape,
            "batch sample size " + std::to_string(batch.row_size()) + " does not match input " +
                std::to_string(shapes[0].count()));
    if (!shapes[0].flat) {
        require(batch.rank() == 4 && batch.dim(1) == std::size_t(shapes[0].channels) &&
                    batch.dim(2) == std::size_t(shapes[0].height) &&
                    batch.dim(3) == std::size_t(shapes[0].width),
                ErrorKind::InputShape, "batch shape " + shape_string(batch.shape) +
                                           " does not match declared input shape");
    }
    const std::size_t n = batch.dim(0);

    if (trace) {
        trace->acts.clear();
        trace->norm_inv_std.assign(m.spec.layers.size(), {});
        trace->shapes = shapes;
        trace->acts.reserve(layer_count + 1);
        trace->acts.push_back(batch);
    }

    Tensor cur = batch;
    std::vector<double> colbuf;
    for (std::size_t li = 0; li < layer_count; ++li) {
        const LayerDesc& l = m.spec.layers[li];
        const FeatureShape& si = shapes[li];
        const FeatureShape& so = shapes[li + 1];
        Tensor out(si.flat || so.flat
                       ? std::vector<std::size_t>{n, so.count()}
                       : std::vector<std::size_t>{n, std::size_t(so.channels),
                                                  std::size_t(so.height), std::size_t(so.width)});
        const std::size_t in_sz = si.count(), out_sz = so.count();
        switch (l.kind) {
            case LayerKind::Conv: {
                const int h = si.height, w = si.width, k = l.kernel;
                const std::size_t kdim = std::size_t(l.in_ch) * k * k, hw = std::size_t(h) * w;
                colbuf.resize(kdim * hw);
                MapCM W(m.params.seg_ptr(li), l.out_ch, kdim);
                const double* b = m.params.seg_ptr(li) + std::size_t(l.out_ch) * kdim;
                for (std::size_t s = 0; s < n; ++s) {
                    detail::im2col(cur.ptr() + s * in_sz, l.in_ch, h, w, k, colbuf.data());
                    MapCM col(colbuf.data(), kdim, hw);
                    MapM y(out.ptr() + s * out_sz, l.out_ch, hw);
                    y.noalias() = W * col;
                    for (int oc = 0; oc < l.out_ch; ++oc) y.row(oc).array() += b[oc];
                }
                break;
            }
            case LayerKind::ChannelNorm: {
                const std::size_t hw = std::size_t(si.height) * si.width;
                if (trace) trace->norm_inv_std[li].resize(n * si.channels);
                for (std::size_t s = 0; s < n; ++s) {
                    for (int c = 0; c < si.channels; ++c) {
                        const double* x = cur.ptr() + s * in_sz + std::size_t(c) * hw;
                        double* y = out.ptr() + s * out_sz + std::size_t(c) * hw;
                        double mean = 0.0;
                        for (std::size_t i = 0; i < hw; ++i) mean += x[i];
                        mean /= double(hw);
                        double var = 0.0;
                        for (std::size_t i = 0; i < hw; ++i) var += (x[i] - mean) * (x[i] - mean);
                        var /= double(hw);
                        const double inv_std = 1.0 / std::sqrt(var + kNormEps);
                        for (std::size_t i = 0; i < hw; ++i) y[i] = (x[i] - mean) * inv_std;
                        if (trace) trace->norm_inv_std[li][s * si.channels + c] = inv_std;
                    }
                }
                break;
            }
            case LayerKind::Relu: {
                for (std::size_t i = 0; i < out.size(); ++i)
                    out.data[i] = cur.data[i] > 0.0 ? cur.data[i] : 0.0;
                break;
            }
            case LayerKind::AvgPool: {
                const int ho = so.height, wo = so.width, w = si.width;
                for (std::size_t s = 0; s < n; ++s)
                    for (int c = 0; c < si.channels; ++c) {
                        const double* x = cur.ptr() + s * in_sz +
                                          std::size_t(c) * si.height * si.width;
                        double* y = out.ptr() + s * out_sz + std::size_t(c) * ho * wo;
                        for (int r = 0; r < ho; ++r)
                            for (int cc = 0; cc < wo; ++cc)
                                y[r * wo + cc] = 0.25 * (x[(2 * r) * w + 2 * cc] +
                                                         x[(2 * r) * w + 2 * cc + 1] +
                                                         x[(2 * r + 1) * w + 2 * cc] +
                                                         x[(2 * r + 1) * w + 2 * cc + 1]);
                    }
                break;
            }
            case LayerKind::Flatten: {
                out.data = cur.data;
                break;
            }
            case LayerKind::Linear: {
                MapCM W(m.params.seg_ptr(li), l.out_dim, l.in_dim);
                const double* b = m.params.seg_ptr(li) + std::size_t(l.out_dim) * l.in_dim;
                Eigen::Map<const Eigen::VectorXd> bv(b, l.out_dim);
                for (std::size_t s = 0; s < n; ++s) {
                    Eigen::Map<const Eigen::VectorXd> x(cur.ptr() + s * in_sz, l.in_dim);
                    Eigen::Map<Eigen::VectorXd> y(out.ptr() + s * out_sz, l.out_dim);
                    y.noalias() = W * x + bv;
                }
                break;
            }
        }
        cur = std::move(out);
        if (trace) trace->acts.push_back(cur);
    }
    return cur;
}

// logits, batch x class-count
inline Tensor forward(const Model& m, const Tensor& batch) {
    Tensor logits = forward_upto(m, batch, m.spec.layers.size(), nullptr);
    check_finite(logits, "forward");
    return logits;
}

// Reverse pass from a cotangent on the last traced layer's output.
// Accumulates into param_grad (must be zero-initialized by the caller) and,
// when input_grad is non-null, writes the gradient with respect to the input batch.
inline void backward(const Model& m, const Trace& trace, const Tensor& out_cotangent,
                     ParamVector* param_grad, Tensor* input_grad) {
    const std::size_t layer_count = trace.acts.size() - 1;
    const std::size_t n = trace.acts[0].dim(0);
    require(out_cotangent.size() == trace.acts[layer_count].size(), ErrorKind::Dimension,
            "cotangent does not match traced output");

    Tensor grad = out_cotangent;
    std::vector<double> colbuf, dcolbuf;
    for (std::size_t li = layer_count; li-- > 0;) {
        const LayerDesc& l = m.spec.layers[li];
        const FeatureShape& si = trace.shapes[li];
        const FeatureShape& so = trace.shapes[li + 1];
        const Tensor& x = trace.acts[li];
        const std::size_t in_sz = si.count(), out_sz = so.count();
        Tensor next(x.shape);
        const bool need_input = li > 0 || input_grad != nullptr;
        switch (l.kind) {
            case LayerKind::Conv: {
                const int h = si.height, w = si.width, k = l.kernel;
                const std::size_t kdim = std::size_t(l.in_ch) * k * k, hw = std::size_t(h) * w;
                colbuf.resize(kdim * hw);
                dcolbuf.resize(kdim * hw);
                MapCM W(m.params.seg_ptr(li), l.out_ch, kdim);
                for (std::size_t s = 0; s < n; ++s) {
                    detail::im2col(x.ptr() + s * in_sz, l.in_ch, h, w, k, colbuf.data());
                    MapCM col(colbuf.data(), kdim, hw);
                    MapCM dy(grad.ptr() + s * out_sz, l.out_ch, hw);
                    if (param_grad) {
                        MapM dW(param_grad->seg_ptr(li), l.out_ch, kdim);
                        dW.noalias() += dy * col.transpose();
                        double* db = param_grad->seg_ptr(li) + std::size_t(l.out_ch) * kdim;
                        for (int oc = 0; oc < l.out_ch; ++oc) db[oc] += dy.row(oc).sum();
                    }
                    if (need_input) {
                        MapM dcol(dcolbuf.data(), kdim, hw);
                        dcol.noalias() = W.transpose() * dy;
                        std::fill(next.ptr() + s * in_sz, next.ptr() + (s + 1) * in_sz, 0.0);
                        detail::col2im_add(dcolbuf.data(), l.in_ch, h, w, k, next.ptr() + s * in_sz);
                    }
                }
                break;
            }
            case LayerKind::ChannelNorm: {
                const std::size_t hw = std::size_t(si.height) * si.width;
                const Tensor& y = trace.acts[li + 1];
                for (std::size_t s = 0; s < n; ++s)
                    for (int c = 0; c < si.channels; ++c) {
                        const double inv_std = trace.norm_inv_std[li][s * si.channels + c];
                        const double* dy = grad.ptr() + s * out_sz + std::size_t(c) * hw;
                        const double* yv = y.ptr() + s * out_sz + std::size_t(c) * hw;
                        double* dx = next.ptr() + s * in_sz + std::size_t(c) * hw;
                        double mean_dy = 0.0, mean_dyy = 0.0;
                        for (std::size_t i = 0; i < hw; ++i) {
                            mean_dy += dy[i];
                            mean_dyy += dy[i] * yv[i];
                        }
                        mean_dy /= double(hw);
                        mean_dyy /= double(hw);
                        for (std::size_t i = 0; i < hw; ++i)
                            dx[i] = (dy[i] - mean_dy - yv[i] * mean_dyy) * inv_std;
                    }
                break;
            }
            case LayerKind::Relu: {
                for (std::size_t i = 0; i < next.size(); ++i)
                    next.data[i] = x.data[i] > 0.0 ? grad.data[i] : 0.0;
                break;
            }
            case LayerKind::AvgPool: {
                const int ho = so.height, wo = so.width, w = si.width;
                std::fill(next.data.begin(), next.data.end(), 0.0);
                for (std::size_t s = 0; s < n; ++s)
                    for (int c = 0; c < si.channels; ++c) {
                        const double* dy = grad.ptr() + s * out_sz + std::size_t(c) * ho * wo;
                        double* dx = next.ptr() + s * in_sz + std::size_t(c) * si.height * si.width;
                        for (int r = 0; r < ho; ++r)
                            for (int cc = 0; cc < wo; ++cc) {
                                const double g = 0.25 * dy[r * wo + cc];
                                dx[(2 * r) * w + 2 * cc] += g;
                                dx[(2 * r) * w + 2 * cc + 1] += g;
                                dx[(2 * r + 1) * w + 2 * cc] += g;
                                dx[(2 * r + 1) * w + 2 * cc + 1] += g;
                            }
                    }
                break;
            }
            case LayerKind::Flatten: {
                next.data = grad.data;
                break;
            }
            case LayerKind::Linear: {
                MapCM W(m.params.seg_ptr(li), l.out_dim, l.in_dim);
                for (std::size_t s = 0; s < n; ++s) {
                    Eigen::Map<const Eigen::VectorXd> dy(grad.ptr() + s * out_sz, l.out_dim);
                    Eigen::Map<const Eigen::VectorXd> xv(x.ptr() + s * in_sz, l.in_dim);
                    if (param_grad) {
                        MapM dW(param_grad->seg_ptr(li), l.out_dim, l.in_dim);
                        dW.noalias() += dy * xv.transpose();
                        double* db = param_grad->seg_ptr(li) + std::size_t(l.out_dim) * l.in_dim;
                        Eigen::Map<Eigen::VectorXd>(db, l.out_dim) += dy;
                    }
                    if (need_input) {
                        Eigen::Map<Eigen::VectorXd> dx(next.ptr() + s * in_sz, l.in_dim);
                        dx.noalias() = W.transpose() * dy;
                    }
                }
                break;
            }
        }
        grad = std::move(next);
        if (li == 0 && input_grad) *input_grad = std::move(grad);
    }
}

// --- cross-entropy ---

inline void check_labels(const Tensor& logits, const std::vector<int>& labels) {
    require(logits.rank() == 2, ErrorKind::Dimension, "logits must be batch x classes");
    require(logits.dim(0) == labels.size(), ErrorKind::Dimension,
            "logits rows do not match label count");
    const int k = int(logits.dim(1));
    for (int y : labels)
        require(y >= 0 && y < k, ErrorKind::Label,
                "label " + std::to_string(y) + " outside [0," + std::to_string(k) + ")");
}

// mean negative log-softmax-probability of the true label
inline double cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    check_labels(logits, labels);
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    double total = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
        const double* row = logits.ptr() + s * k;
        const double mx = *std::max_element(row, row + k);
        double lse = 0.0;
        for (std::size_t j = 0; j < k; ++j) lse += std::exp(row[j] - mx);
        lse = std::log(lse) + mx;
        total += lse - row[labels[s]];
    }
    return total / double(n);
}

// d(cross-entropy)/d(logits): softmax minus one-hot, scaled per reduction
inline Tensor ce_cotangent(const Tensor& logits, const std::vector<int>& labels, Reduction red) {
    check_labels(logits, labels);
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    const double scale = red == Reduction::Mean ? 1.0 / double(n) : 1.0;
    Tensor cot(logits.shape);
    for (std::size_t s = 0; s < n; ++s) {
        const double* row = logits.ptr() + s * k;
        double* out = cot.ptr() + s * k;
        const double mx = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < k; ++j) out[j] = std::exp(row[j] - mx) / z * scale;
        out[labels[s]] -= scale;
    }
    return cot;
}

struct LossGrads {
    double loss = 0.0;       // mean cross-entropy regardless of gradient reduction
    ParamVector param_grad;
    Tensor input_grad;       // empty unless requested
};

inline LossGrads loss_and_grads(const Model& m, const Tensor& batch, const std::vector<int>& labels,
                                Reduction red = Reduction::Mean, bool want_params = true,
                                bool want_input = false) {
    Trace trace;
    Tensor logits = forward_upto(m, batch, m.spec.layers.size(), &trace);
    check_finite(logits, "forward");
    LossGrads out;
    out.loss = cross_entropy(logits, labels);
    Tensor cot = ce_cotangent(logits, labels, red);
    if (want_params) out.param_grad = ParamVector::zeros_like(m.spec);
    backward(m, trace, cot, want_params ? &out.param_grad : nullptr,
             want_input ? &out.input_grad : nullptr);
    return out;
}

inline ParamVector grad_params(const Model& m, const Tensor& batch, const std::vector<int>& labels,
                               Reduction red = Reduction::Mean) {
    auto r = loss_and_grads(m, batch, labels, red, true, false);
    require(std::all_of(r.param_grad.values.begin(), r.param_grad.values.end(),
                        [](double v) { return std::isfinite(v); }),
            ErrorKind::Numeric, "grad_params: non-finite gradient");
    return std::move(r.param_grad);
}

inline Tensor grad_input(const Model& m, const Tensor& batch, const std::vector<int>& labels,
                         Reduction red = Reduction::Mean) {
    auto r = loss_and_grads(m, batch, labels, red, false, true);
    check_finite(r.input_grad, "grad_input");
    return std::move(r.input_grad);
}

inline double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// Hessian-vector product by central differencing of grad_params. The step is
// scaled to the parameter magnitude so truncation and roundoff stay balanced;
// a larger eps_scale smooths over ReLU kinks at trained parameters.
inline ParamVector hvp(const Model& m, const Tensor& batch, const std::vector<int>& labels,
                       const ParamVector& v, Reduction red = Reduction::Mean,
                       double eps_scale = 1e-5) {
    require(v.size() == m.params.size(), ErrorKind::Dimension,
            "hvp direction length does not match parameter count");
    const double vnorm = l2_norm(v.values);
    ParamVector out = ParamVector::zeros_like(m.spec);
    if (vnorm == 0.0) return out;
    const double eps = eps_scale * std::max(1.0, l2_norm(m.params.values)) / vnorm;

    Model shifted = m;
    for (std::size_t i = 0; i < v.size(); ++i) shifted.params.values[i] = m.params.values[i] + eps * v.values[i];
    ParamVector gplus = grad_params(shifted, batch, labels, red);
    for (std::size_t i = 0; i < v.size(); ++i) shifted.params.values[i] = m.params.values[i] - eps * v.values[i];
    ParamVector gminus = grad_params(shifted, batch, labels, red);

    for (std::size_t i = 0; i < out.size(); ++i)
        out.values[i] = (gplus.values[i] - gminus.values[i]) / (2.0 * eps);
    return out;
}

// Penultimate representation: activations entering the trailing linear head.
inline Tensor penultimate_features(const Model& m, const Tensor& batch) {
    std::size_t cut = m.spec.layers.size();
    while (cut > 0 && m.spec.layers[cut - 1].kind == LayerKind::Linear) --cut;
    return forward_upto(m, batch, cut, nullptr);
}

} // namespace ulab::nn
