#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "ulab/io.hpp"
#include "ulab/rng.hpp"
#include "ulab/tensor.hpp"

namespace ulab::data {

struct LabeledDataset {
    Tensor images;                 // n x channels x h x w, values in [0,1]
    std::vector<int> labels;
    std::vector<std::int64_t> ids; // unique
    std::vector<std::string> tags; // empty, or one per sample

    std::size_t size() const { return labels.size(); }
    bool has_tags() const { return !tags.empty(); }

    void validate() const {
        require(images.rank() == 4, ErrorKind::InputShape, "images must be n x c x h x w");
        require(images.dim(0) == labels.size() && labels.size() == ids.size(),
                ErrorKind::Dimension, "images/labels/ids lengths differ");
        require(tags.empty() || tags.size() == labels.size(), ErrorKind::Dimension,
                "tags length mismatch");
        std::set<std::int64_t> seen(ids.begin(), ids.end());
        require(seen.size() == ids.size(), ErrorKind::Config, "sample ids are not unique");
        for (double v : images.data)
            require(v >= 0.0 && v <= 1.0, ErrorKind::Numeric, "pixel outside [0,1]");
    }

    int class_count() const {
        int k = 0;
        for (int y : labels) k = std::max(k, y + 1);
        return k;
    }

    LabeledDataset select(const std::vector<std::size_t>& idx) const {
        LabeledDataset out;
        out.images = images.rows(idx);
        out.labels.reserve(idx.size());
        out.ids.reserve(idx.size());
        for (std::size_t i : idx) {
            out.labels.push_back(labels[i]);
            out.ids.push_back(ids[i]);
            if (has_tags()) out.tags.push_back(tags[i]);
        }
        return out;
    }

    std::vector<std::vector<std::size_t>> indices_by_class(int k = 0) const {
        std::vector<std::vector<std::size_t>> by(std::max(k, class_count()));
        for (std::size_t i = 0; i < labels.size(); ++i) by[labels[i]].push_back(i);
        return by;
    }

    std::size_t index_of_id(std::int64_t id) const {
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (ids[i] == id) return i;
        fail(ErrorKind::Id, "unknown sample id " + std::to_string(id));
    }
};

// Appends `extra` to `base`; ids must stay unique.
inline LabeledDataset concat(const LabeledDataset& base, const LabeledDataset& extra) {
    require(base.images.shape.size() == 4 && extra.images.shape.size() == 4 &&
                std::equal(base.images.shape.begin() + 1, base.images.shape.end(),
                           extra.images.shape.begin() + 1),
            ErrorKind::Dimension, "concat: image shapes differ");
    LabeledDataset out = base;
    out.images.shape[0] += extra.images.dim(0);
    out.images.data.insert(out.images.data.end(), extra.images.data.begin(),
                           extra.images.data.end());
    out.labels.insert(out.labels.end(), extra.labels.begin(), extra.labels.end());
    out.ids.insert(out.ids.end(), extra.ids.begin(), extra.ids.end());
    if (base.has_tags() || extra.has_tags()) {
        if (out.tags.empty()) out.tags.assign(base.size(), "");
        if (extra.has_tags())
            out.tags.insert(out.tags.end(), extra.tags.begin(), extra.tags.end());
        else
            out.tags.resize(out.labels.size(), "");
    }
    out.validate();
    return out;
}

// --- IDX files (big-endian headers, magic 0x803 images / 0x801 labels) ---

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

inline LabeledDataset load_idx(const std::string& image_path, const std::string& label_path) {
    auto is = io::open_in(image_path);
    require(io::get_u32be(is) == kIdxImageMagic, ErrorKind::Format,
            "bad magic number in " + image_path);
    const std::uint32_t n = io::get_u32be(is);
    const std::uint32_t h = io::get_u32be(is);
    const std::uint32_t w = io::get_u32be(is);
    std::vector<unsigned char> raw(std::size_t(n) * h * w);
    is.read(reinterpret_cast<char*>(raw.data()), raw.size());
    require(std::size_t(is.gcount()) == raw.size(), ErrorKind::Format,
            "truncated image payload in " + image_path);

    auto ls = io::open_in(label_path);
    require(io::get_u32be(ls) == kIdxLabelMagic, ErrorKind::Format,
            "bad magic number in " + label_path);
    const std::uint32_t ln = io::get_u32be(ls);
    require(ln == n, ErrorKind::Format, "label count " + std::to_string(ln) +
                                            " does not match image count " + std::to_string(n));
    std::vector<unsigned char> lraw(ln);
    ls.read(reinterpret_cast<char*>(lraw.data()), lraw.size());
    require(std::size_t(ls.gcount()) == lraw.size(), ErrorKind::Format,
            "truncated label payload in " + label_path);

    LabeledDataset ds;
    ds.images = Tensor({n, 1, h, w});
    for (std::size_t i = 0; i < raw.size(); ++i) ds.images.data[i] = double(raw[i]) / 255.0;
    ds.labels.assign(lraw.begin(), lraw.end());
    ds.ids.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) ds.ids[i] = i;
    return ds;
}

inline void save_idx(const std::string& image_path, const std::string& label_path,
                     const LabeledDataset& ds) {
    require(ds.images.dim(1) == 1, ErrorKind::Config, "IDX export supports single-channel images");
    auto os = io::open_out(image_path);
    io::put_u32be(os, kIdxImageMagic);
    io::put_u32be(os, std::uint32_t(ds.size()));
    io::put_u32be(os, std::uint32_t(ds.images.dim(2)));
    io::put_u32be(os, std::uint32_t(ds.images.dim(3)));
    for (double v : ds.images.data) {
        const double c = std::min(1.0, std::max(0.0, v));
        os.put(char(static_cast<unsigned char>(std::lround(c * 255.0))));
    }
    auto ls = io::open_out(label_path);
    io::put_u32be(ls, kIdxLabelMagic);
    io::put_u32be(ls, std::uint32_t(ds.size()));
    for (int y : ds.labels) ls.put(char(static_cast<unsigned char>(y)));
}

// --- attacker-knowledge subsetting ---

struct KnowledgeView {
    const LabeledDataset* source = nullptr;
    double fraction = 1.0; // in (0, 1]
    std::uint64_t seed = 0;
};

// Class-stratified subset of round(fraction*n) samples, largest-remainder
// apportioned so each class count is within 1 of fraction * class size.
// Selection order follows the source so fraction 1.0 is the identity.
inline LabeledDataset knowledge_subset(const KnowledgeView& view) {
    require(view.source != nullptr, ErrorKind::Config, "knowledge view has no source");
    require(view.fraction > 0.0 && view.fraction <= 1.0, ErrorKind::Config,
            "knowledge fraction must be in (0,1]");
    const LabeledDataset& src = *view.source;
    const std::size_t want = std::size_t(std::llround(view.fraction * double(src.size())));
    auto by_class = src.indices_by_class();

    std::vector<std::size_t> take(by_class.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        const double exact = view.fraction * double(by_class[c].size());
        take[c] = std::size_t(exact);
        assigned += take[c];
        remainders.push_back({exact - double(take[c]), c});
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < want && i < remainders.size(); ++i, ++assigned)
        take[remainders[i].second]++;

    std::vector<std::size_t> chosen;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto pool = by_class[c];
        Rng rng(mix_seed(view.seed, 0x5d5, c));
        rng.shuffle(pool);
        pool.resize(std::min(take[c], pool.size()));
        chosen.insert(chosen.end(), pool.begin(), pool.end());
    }
    std::sort(chosen.begin(), chosen.end());
    return src.select(chosen);
}

// Deterministic class-stratified draw of exactly `count` samples.
inline std::vector<std::size_t> stratified_sample(const LabeledDataset& ds, std::size_t count,
                                                  std::uint64_t seed) {
    require(count <= ds.size(), ErrorKind::Config, "stratified sample larger than dataset");
    auto by_class = ds.indices_by_class();
    const std::size_t k = by_class.size();
    std::vector<std::size_t> chosen;
    std::size_t c = 0, taken = 0;
    std::vector<std::size_t> cursor(k, 0);
    for (std::size_t ci = 0; ci < k; ++ci) {
        Rng rng(mix_seed(seed, 0x57a7, ci));
        rng.shuffle(by_class[ci]);
    }
    while (taken < count) { // round-robin over classes
        if (cursor[c] < by_class[c].size()) {
            chosen.push_back(by_class[c][cursor[c]++]);
            ++taken;
        }
        c = (c + 1) % k;
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

// --- content digests (the service provider's hash table) ---

inline std::uint64_t sample_digest(const LabeledDataset& ds, std::size_t index) {
    const std::size_t rs = ds.images.row_size();
    std::uint64_t h = io::fnv1a(&ds.labels[index], sizeof(int));
    return io::fnv1a(ds.images.ptr() + index * rs, rs * sizeof(double), h);
}

inline std::unordered_map<std::int64_t, std::uint64_t> digest_table(const LabeledDataset& ds) {
    std::unordered_map<std::int64_t, std::uint64_t> table;
    table.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) table[ds.ids[i]] = sample_digest(ds, i);
    return table;
}

// --- subset manifests: sorted id list, one per line ---

inline void save_manifest(const std::string& path, std::vector<std::int64_t> ids) {
    std::sort(ids.begin(), ids.end());
    auto os = io::open_out(path, /*binary=*/false);
    for (auto id : ids) os << id << "\n";
}

inline std::vector<std::int64_t> load_manifest(const std::string& path) {
    auto is = io::open_in(path, /*binary=*/false);
    std::vector<std::int64_t> ids;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) ids.push_back(std::stoll(line));
    require(std::is_sorted(ids.begin(), ids.end()), ErrorKind::Format,
            "manifest ids not sorted: " + path);
    return ids;
}

} // namespace ulab::data
