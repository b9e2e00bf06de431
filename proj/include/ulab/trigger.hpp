#pragma once

#include <set>
#include <vector>

#include "ulab/dataset.hpp"

namespace ulab::data {

// BadNets-style dirty-label patch trigger, used only as a detector
// calibration control.
struct TriggerSpec {
    Tensor patch;      // ph x pw, values in [0,1]
    int row = 0, col = 0;
    int target_label = 0;
    double rate = 0.05;

    void validate(std::size_t h, std::size_t w) const {
        require(patch.rank() == 2, ErrorKind::Config, "trigger patch must be ph x pw");
        require(rate >= 0.0 && rate <= 1.0, ErrorKind::Config, "trigger rate outside [0,1]");
        require(row >= 0 && col >= 0 && row + patch.dim(0) <= h && col + patch.dim(1) <= w,
                ErrorKind::Config, "trigger patch out of image bounds");
    }
};

// 3x3 checkerboard in the lower-right corner, the usual desk default.
inline TriggerSpec default_trigger(std::size_t h, std::size_t w, int target_label, double rate) {
    TriggerSpec t;
    t.patch = Tensor({3, 3}, {1, 0, 1, 0, 1, 0, 1, 0, 1});
    t.row = int(h) - 4;
    t.col = int(w) - 4;
    t.target_label = target_label;
    t.rate = rate;
    return t;
}

inline void stamp_in_place(Tensor& images, std::size_t sample, const TriggerSpec& t) {
    const std::size_t ch = images.dim(1), h = images.dim(2), w = images.dim(3);
    const std::size_t ph = t.patch.dim(0), pw = t.patch.dim(1);
    for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t r = 0; r < ph; ++r)
            for (std::size_t cc = 0; cc < pw; ++cc)
                images.data[((sample * ch + c) * h + t.row + r) * w + t.col + cc] =
                    t.patch.data[r * pw + cc];
}

// Stamps round(rate*n) samples, replaces their labels with the target label,
// and returns exactly the flagged ids. Sources are drawn from non-target
// classes when enough exist.
inline std::pair<LabeledDataset, std::set<std::int64_t>> apply_trigger(const LabeledDataset& ds,
                                                                       const TriggerSpec& t,
                                                                       std::uint64_t seed) {
    t.validate(ds.images.dim(2), ds.images.dim(3));
    const std::size_t want = std::size_t(std::llround(t.rate * double(ds.size())));
    std::vector<std::size_t> candidates, rest;
    for (std::size_t i = 0; i < ds.size(); ++i)
        (ds.labels[i] != t.target_label ? candidates : rest).push_back(i);
    Rng rng(mix_seed(seed, 0xbadc0de));
    rng.shuffle(candidates);
    if (candidates.size() < want) {
        rng.shuffle(rest);
        candidates.insert(candidates.end(), rest.begin(), rest.end());
    }
    candidates.resize(want);

    LabeledDataset out = ds;
    std::set<std::int64_t> flagged;
    for (std::size_t i : candidates) {
        stamp_in_place(out.images, i, t);
        out.labels[i] = t.target_label;
        flagged.insert(out.ids[i]);
    }
    return {std::move(out), std::move(flagged)};
}

// Test-time triggered copies of non-target-class samples, used to measure
// attack success rate.
inline LabeledDataset make_triggered_eval(const LabeledDataset& ds, const TriggerSpec& t) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (ds.labels[i] != t.target_label) idx.push_back(i);
    LabeledDataset out = ds.select(idx);
    for (std::size_t i = 0; i < out.size(); ++i) stamp_in_place(out.images, i, t);
    for (auto& y : out.labels) y = t.target_label;
    return out;
}

} // namespace ulab::data
