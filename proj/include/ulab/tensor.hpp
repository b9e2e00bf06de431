#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "ulab/errors.hpp"

namespace ulab {

// Dense row-major tensor of 64-bit reals.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)), data(count(shape), 0.0) {}
    Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        require(data.size() == count(shape), ErrorKind::Dimension,
                "tensor data length does not match shape");
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    std::size_t size() const { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    // row view for a leading-axis index (e.g. one sample of a batch)
    std::size_t row_size() const {
        require(rank() >= 1, ErrorKind::Dimension, "tensor has no leading axis");
        return size() / shape[0];
    }

    // one sample as a batch of size 1
    Tensor row(std::size_t i) const {
        const std::size_t rs = row_size();
        std::vector<std::size_t> s = shape;
        s[0] = 1;
        Tensor out(std::move(s));
        std::copy(data.begin() + i * rs, data.begin() + (i + 1) * rs, out.data.begin());
        return out;
    }

    // rows [begin, begin+n) as a batch
    Tensor rows(const std::vector<std::size_t>& idx) const {
        const std::size_t rs = row_size();
        std::vector<std::size_t> s = shape;
        s[0] = idx.size();
        Tensor out(std::move(s));
        for (std::size_t k = 0; k < idx.size(); ++k)
            std::copy(data.begin() + idx[k] * rs, data.begin() + (idx[k] + 1) * rs,
                      out.data.begin() + k * rs);
        return out;
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline std::string shape_string(const std::vector<std::size_t>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

inline void check_finite(const Tensor& t, const char* what) {
    require(t.all_finite(), ErrorKind::Numeric, std::string(what) + ": non-finite values");
}

} // namespace ulab
