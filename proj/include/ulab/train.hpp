#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ulab/dataset.hpp"
#include "ulab/engine.hpp"

namespace ulab::nn {

enum class BatchPartition { Mixed, SegregatedByTag };

struct TrainConfig {
    int epochs = 20;
    int batch_size = 64;
    double learning_rate = 0.05;
    double momentum = 0.9; // in [0,1)
    std::uint64_t seed = 0;
    bool record_ledger = false;
    BatchPartition partition = BatchPartition::Mixed;
};

struct LedgerEntry {
    int epoch = 0;
    int batch_index = 0;
    std::vector<std::int64_t> member_ids; // sorted
    std::vector<double> delta;            // applied parameter step
};

// Per-batch parameter deltas. The trainer maintains parameters as
// theta_initial + running_sum(deltas), so replaying the recorded deltas in
// order reproduces every intermediate state bitwise:
//   theta_initial + sum(entries.delta) == theta_final, exactly.
struct UpdateLedger {
    std::vector<double> theta_initial;
    std::vector<double> theta_final;
    std::vector<LedgerEntry> entries;

    // sequential fixed-order replay
    std::vector<double> replay_sum() const {
        std::vector<double> s(theta_initial.size(), 0.0);
        for (const auto& e : entries)
            for (std::size_t i = 0; i < s.size(); ++i) s[i] += e.delta[i];
        return s;
    }
};

struct TrainResult {
    Model model;
    std::optional<UpdateLedger> ledger;
    std::vector<double> epoch_loss; // mean batch loss per epoch
};

namespace detail {

inline std::vector<std::vector<std::size_t>> build_batches(const data::LabeledDataset& ds,
                                                           const TrainConfig& cfg, int epoch) {
    std::vector<std::vector<std::size_t>> batches;
    auto chunk = [&](std::vector<std::size_t>& idx) {
        for (std::size_t b = 0; b < idx.size(); b += cfg.batch_size) {
            const std::size_t e = std::min(idx.size(), b + cfg.batch_size);
            batches.emplace_back(idx.begin() + b, idx.begin() + e);
        }
    };
    if (cfg.partition == BatchPartition::Mixed) {
        std::vector<std::size_t> idx(ds.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        Rng rng(mix_seed(cfg.seed, 0xe90c, epoch));
        rng.shuffle(idx);
        chunk(idx);
    } else {
        require(ds.has_tags(), ErrorKind::Config,
                "segregated-by-tag training needs per-sample tags");
        std::map<std::string, std::vector<std::size_t>> groups; // ordered for determinism
        for (std::size_t i = 0; i < ds.size(); ++i) groups[ds.tags[i]].push_back(i);
        std::uint64_t g = 0;
        for (auto& [tag, idx] : groups) {
            Rng rng(mix_seed(cfg.seed, 0xe95e + g++, epoch));
            rng.shuffle(idx);
            chunk(idx);
        }
        Rng order(mix_seed(cfg.seed, 0xba7c, epoch));
        order.shuffle(batches);
    }
    return batches;
}

} // namespace detail

inline TrainResult train(const Model& initial, const data::LabeledDataset& ds,
                         const TrainConfig& cfg) {
    require(ds.size() > 0, ErrorKind::Config, "train: empty dataset");
    require(cfg.batch_size > 0 && std::size_t(cfg.batch_size) <= ds.size(), ErrorKind::Config,
            "train: batch size must be in [1, dataset size]");
    require(cfg.momentum >= 0.0 && cfg.momentum < 1.0, ErrorKind::Config,
            "train: momentum must be in [0,1)");
    require(cfg.learning_rate >= 0.0, ErrorKind::Config, "train: negative learning rate");

    const std::size_t np = initial.params.size();
    TrainResult out;
    out.model = initial;
    if (cfg.record_ledger) {
        out.ledger.emplace();
        out.ledger->theta_initial = initial.params.values;
    }

    // params are kept as theta0 + running sum so the ledger telescopes bitwise
    std::vector<double> accum(np, 0.0), velocity(np, 0.0), delta(np, 0.0);
    const std::vector<double>& theta0 = initial.params.values;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches = detail::build_batches(ds, cfg, epoch);
        double loss_sum = 0.0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const auto& idx = batches[bi];
            Tensor images = ds.images.rows(idx);
            std::vector<int> labels(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = ds.labels[idx[i]];

            auto lg = loss_and_grads(out.model, images, labels, Reduction::Mean);
            loss_sum += lg.loss;
            for (std::size_t i = 0; i < np; ++i) {
                velocity[i] = cfg.momentum * velocity[i] + lg.param_grad.values[i];
                delta[i] = -cfg.learning_rate * velocity[i];
                accum[i] += delta[i];
                out.model.params.values[i] = theta0[i] + accum[i];
            }
            if (cfg.record_ledger) {
                LedgerEntry e;
                e.epoch = epoch;
                e.batch_index = int(bi);
                e.member_ids.reserve(idx.size());
                for (std::size_t i : idx) e.member_ids.push_back(ds.ids[i]);
                std::sort(e.member_ids.begin(), e.member_ids.end());
                e.delta = delta;
                out.ledger->entries.push_back(std::move(e));
            }
        }
        out.epoch_loss.push_back(loss_sum / double(batches.size()));
        require(out.model.params.values[0] == out.model.params.values[0], ErrorKind::Numeric,
                "train: parameters diverged (NaN)");
    }
    if (cfg.record_ledger) out.ledger->theta_final = out.model.params.values;
    return out;
}

// --- evaluation helpers ---

inline std::vector<int> predict(const Model& m, const Tensor& images, std::size_t chunk = 256) {
    const std::size_t n = images.dim(0);
    std::vector<int> pred(n);
    for (std::size_t b = 0; b < n; b += chunk) {
        std::vector<std::size_t> idx;
        for (std::size_t i = b; i < std::min(n, b + chunk); ++i) idx.push_back(i);
        Tensor logits = forward(m, images.rows(idx));
        const std::size_t k = logits.dim(1);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const double* row = logits.ptr() + i * k;
            pred[idx[i]] = int(std::max_element(row, row + k) - row);
        }
    }
    return pred;
}

inline double accuracy(const Model& m, const data::LabeledDataset& ds) {
    if (ds.size() == 0) return 0.0;
    auto pred = predict(m, ds.images);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) hit += pred[i] == ds.labels[i];
    return double(hit) / double(ds.size());
}

inline double mean_loss(const Model& m, const data::LabeledDataset& ds, std::size_t chunk = 256) {
    require(ds.size() > 0, ErrorKind::Config, "mean_loss: empty dataset");
    double total = 0.0;
    const std::size_t n = ds.size();
    for (std::size_t b = 0; b < n; b += chunk) {
        std::vector<std::size_t> idx;
        std::vector<int> labels;
        for (std::size_t i = b; i < std::min(n, b + chunk); ++i) {
            idx.push_back(i);
            labels.push_back(ds.labels[i]);
        }
        Tensor logits = forward(m, ds.images.rows(idx));
        total += cross_entropy(logits, labels) * double(idx.size());
    }
    return total / double(n);
}

// --- ledger file: little-endian records with integrity digests in the header ---

inline constexpr std::uint64_t kLedgerMagic = 0x554c454447455231ULL; // "ULEDGER1"

inline void save_ledger(const std::string& path, const UpdateLedger& led) {
    auto os = io::open_out(path);
    io::put_u64le(os, kLedgerMagic);
    io::put_u64le(os, led.theta_initial.size());
    io::put_u64le(os, led.entries.size());
    io::put_u64le(os, io::fnv1a(std::span<const double>(led.theta_initial)));
    io::put_u64le(os, io::fnv1a(std::span<const double>(led.theta_final)));
    io::put_f64_block(os, led.theta_initial);
    io::put_f64_block(os, led.theta_final);
    for (const auto& e : led.entries) {
        io::put_u32le(os, std::uint32_t(e.epoch));
        io::put_u32le(os, std::uint32_t(e.batch_index));
        io::put_u64le(os, e.member_ids.size());
        for (auto id : e.member_ids) io::put_u64le(os, std::uint64_t(id));
        io::put_f64_block(os, e.delta);
    }
    require(os.good(), ErrorKind::Io, "ledger write failed: " + path);
}

inline UpdateLedger load_ledger(const std::string& path) {
    auto is = io::open_in(path);
    require(io::get_u64le(is) == kLedgerMagic, ErrorKind::Format, "bad ledger magic: " + path);
    const std::uint64_t np = io::get_u64le(is);
    const std::uint64_t ne = io::get_u64le(is);
    const std::uint64_t dig0 = io::get_u64le(is);
    const std::uint64_t dig1 = io::get_u64le(is);
    UpdateLedger led;
    led.theta_initial.resize(np);
    led.theta_final.resize(np);
    io::get_f64_block(is, led.theta_initial);
    io::get_f64_block(is, led.theta_final);
    require(io::fnv1a(std::span<const double>(led.theta_initial)) == dig0, ErrorKind::Format,
            "ledger theta_initial digest mismatch");
    require(io::fnv1a(std::span<const double>(led.theta_final)) == dig1, ErrorKind::Format,
            "ledger theta_final digest mismatch");
    led.entries.resize(ne);
    for (auto& e : led.entries) {
        e.epoch = int(io::get_u32le(is));
        e.batch_index = int(io::get_u32le(is));
        const std::uint64_t nid = io::get_u64le(is);
        e.member_ids.resize(nid);
        for (auto& id : e.member_ids) id = std::int64_t(io::get_u64le(is));
        e.delta.resize(np);
        io::get_f64_block(is, e.delta);
    }
    return led;
}

} // namespace ulab::nn
