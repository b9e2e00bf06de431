#pragma once

#include <string>
#include <vector>

#include "ulab/augment.hpp"
#include "ulab/dataset.hpp"
#include "ulab/engine.hpp"

namespace ulab::condense {

// Penultimate-space embedding of an image batch under a headless extractor.
inline Tensor embed(const nn::Model& net, const Tensor& batch) {
    return nn::forward_upto(net, batch, net.spec.layers.size(), nullptr);
}

// Empirical squared MMD with the linear mean-embedding kernel:
// || mean(real) - mean(syn) ||^2.
inline double mmd_sq(const Tensor& real_embeds, const Tensor& syn_embeds) {
    require(real_embeds.rank() == 2 && syn_embeds.rank() == 2, ErrorKind::Dimension,
            "mmd_sq expects row matrices");
    require(real_embeds.dim(0) > 0 && syn_embeds.dim(0) > 0, ErrorKind::Dimension,
            "mmd_sq: empty embedding set");
    require(real_embeds.dim(1) == syn_embeds.dim(1), ErrorKind::Dimension,
            "mmd_sq: embedding widths differ");
    const std::size_t d = real_embeds.dim(1);
    double out = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        double mr = 0.0, ms = 0.0;
        for (std::size_t i = 0; i < real_embeds.dim(0); ++i)
            mr += real_embeds.data[i * d + j];
        for (std::size_t i = 0; i < syn_embeds.dim(0); ++i) ms += syn_embeds.data[i * d + j];
        mr /= double(real_embeds.dim(0));
        ms /= double(syn_embeds.dim(0));
        out += (mr - ms) * (mr - ms);
    }
    return out;
}

struct CondenseConfig {
    int ipc = 10;
    int outer_iterations = 300;
    double image_learning_rate = 1.0;
    int real_batch_size = 64;
    int synthetic_batch_size = 0; // 0 = all ipc images of the class
    nn::NetworkSpec embed_spec;   // headless (class_count == 0)
    bool augmentation = true;
    data::AugmentWeights aug_weights;
    std::uint64_t seed = 0;
    int probe_every = 1; // fixed-w MMD probe cadence; 0 disables

    std::string digest_string() const {
        std::string s = "ipc=" + std::to_string(ipc) +
                        ";it=" + std::to_string(outer_iterations) +
                        ";lr=" + std::to_string(image_learning_rate) +
                        ";rb=" + std::to_string(real_batch_size) +
                        ";sb=" + std::to_string(synthetic_batch_size) +
                        ";aug=" + std::to_string(int(augmentation)) +
                        ";embed=" + embed_spec.to_string();
        return io::hex64(io::fnv1a(s));
    }
};

struct SyntheticSet {
    Tensor images;           // (ipc * classes) x c x h x w, class blocks in order
    std::vector<int> labels; // clean: label == generating class, never modified
    int ipc = 0;
    int classes = 0;
    std::uint64_t seed = 0;
    std::string config_digest;
    std::vector<double> probe_trace; // class-averaged fixed-w MMD per probed iteration

    data::LabeledDataset as_dataset(std::int64_t id_base, const std::string& tag = "") const {
        data::LabeledDataset ds;
        ds.images = images;
        ds.labels = labels;
        ds.ids.resize(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) ds.ids[i] = id_base + std::int64_t(i);
        if (!tag.empty()) ds.tags.assign(labels.size(), tag);
        return ds;
    }
};

namespace detail {

// gradient of mmd_sq with respect to the synthetic batch pixels
inline Tensor mmd_input_grad(const nn::Model& net, const Tensor& syn_batch,
                             const Tensor& real_embeds, double* mmd_out) {
    nn::Trace trace;
    Tensor syn_embeds = nn::forward_upto(net, syn_batch, net.spec.layers.size(), &trace);
    *mmd_out = mmd_sq(real_embeds, syn_embeds);

    const std::size_t ns = syn_embeds.dim(0), d = syn_embeds.dim(1);
    Tensor cot(syn_embeds.shape);
    for (std::size_t j = 0; j < d; ++j) {
        double mr = 0.0, ms = 0.0;
        for (std::size_t i = 0; i < real_embeds.dim(0); ++i)
            mr += real_embeds.data[i * d + j];
        for (std::size_t i = 0; i < ns; ++i) ms += syn_embeds.data[i * d + j];
        mr /= double(real_embeds.dim(0));
        ms /= double(ns);
        const double g = -2.0 * (mr - ms) / double(ns); // d(mmd)/d(syn_embed[i][j])
        for (std::size_t i = 0; i < ns; ++i) cot.data[i * d + j] = g;
    }
    Tensor input_grad;
    nn::backward(net, trace, cot, nullptr, &input_grad);
    return input_grad;
}

} // namespace detail

// Distribution-matching condensation: per outer iteration a freshly
// re-initialized embedder, per class one Siamese-augmented MMD gradient step
// on the synthetic pixels, projected back into [0,1].
inline SyntheticSet condense(const data::LabeledDataset& real, const CondenseConfig& cfg) {
    require(cfg.ipc > 0, ErrorKind::Config, "condense: ipc must be positive");
    require(cfg.outer_iterations >= 0, ErrorKind::Config, "condense: negative iteration count");
    require(cfg.embed_spec.class_count == 0, ErrorKind::Config,
            "condense: embed spec must be headless (truncated before the classifier)");
    const int classes = real.class_count();
    auto by_class = real.indices_by_class();
    for (int c = 0; c < classes; ++c)
        require(by_class[c].size() >= std::size_t(cfg.real_batch_size), ErrorKind::Config,
                "condense: class " + std::to_string(c) + " has " +
                    std::to_string(by_class[c].size()) + " samples, need >= " +
                    std::to_string(cfg.real_batch_size));
    const int syn_bs = cfg.synthetic_batch_size > 0 ? std::min(cfg.synthetic_batch_size, cfg.ipc)
                                                    : cfg.ipc;
    require(syn_bs <= cfg.ipc, ErrorKind::Config, "condense: synthetic batch exceeds ipc");

    const std::size_t ch = real.images.dim(1), h = real.images.dim(2), w = real.images.dim(3);
    const std::size_t img_sz = ch * h * w;

    SyntheticSet syn;
    syn.ipc = cfg.ipc;
    syn.classes = classes;
    syn.seed = cfg.seed;
    syn.config_digest = cfg.digest_string();
    syn.images = Tensor({std::size_t(cfg.ipc) * classes, ch, h, w});
    syn.labels.resize(std::size_t(cfg.ipc) * classes);

    // init: copies of randomly drawn same-class real images
    {
        Rng rng(mix_seed(cfg.seed, 0x171));
        for (int c = 0; c < classes; ++c)
            for (int j = 0; j < cfg.ipc; ++j) {
                const std::size_t row = std::size_t(c) * cfg.ipc + j;
                syn.labels[row] = c;
                const auto& pool = by_class[c];
                double* dst = syn.images.ptr() + row * img_sz;
                if (!pool.empty()) {
                    const std::size_t src = pool[rng.index(pool.size())];
                    const double* sp = real.images.ptr() + src * img_sz;
                    std::copy(sp, sp + img_sz, dst);
                } else {
                    for (std::size_t i = 0; i < img_sz; ++i) dst[i] = rng.uniform();
                }
            }
    }

    // fixed probe: one frozen embedder, identity augmentation, fixed real batches
    nn::Model probe_net = nn::make_model(cfg.embed_spec, mix_seed(cfg.seed, 0xFACE));
    std::vector<Tensor> probe_real_embeds(classes);
    if (cfg.probe_every > 0) {
        for (int c = 0; c < classes; ++c) {
            Rng rng(mix_seed(cfg.seed, 0xF0, c));
            std::vector<std::size_t> pick;
            const std::size_t take = std::min<std::size_t>(by_class[c].size(), 32);
            auto pool = by_class[c];
            rng.shuffle(pool);
            pick.assign(pool.begin(), pool.begin() + take);
            probe_real_embeds[c] = embed(probe_net, real.images.rows(pick));
        }
    }
    auto probe_mmd = [&]() {
        double acc = 0.0;
        for (int c = 0; c < classes; ++c) {
            std::vector<std::size_t> rows(cfg.ipc);
            for (int j = 0; j < cfg.ipc; ++j) rows[j] = std::size_t(c) * cfg.ipc + j;
            Tensor se = embed(probe_net, syn.images.rows(rows));
            acc += mmd_sq(probe_real_embeds[c], se);
        }
        return acc / double(classes);
    };

    for (int it = 0; it < cfg.outer_iterations; ++it) {
        nn::Model net = nn::make_model(cfg.embed_spec, mix_seed(cfg.seed, 0xE0, it));
        Rng iter_rng(mix_seed(cfg.seed, 0xA0, it));
        for (int c = 0; c < classes; ++c) {
            // one augmentation draw w shared by the real and synthetic minibatch
            data::AugmentationParams aug;
            if (cfg.augmentation) aug = data::sample_augmentation(iter_rng, cfg.aug_weights);

            std::vector<std::size_t> rpick(cfg.real_batch_size);
            for (int i = 0; i < cfg.real_batch_size; ++i)
                rpick[i] = by_class[c][iter_rng.index(by_class[c].size())];
            Tensor real_batch = real.images.rows(rpick);

            std::vector<std::size_t> spick(syn_bs);
            if (syn_bs == cfg.ipc) {
                for (int j = 0; j < syn_bs; ++j) spick[j] = std::size_t(c) * cfg.ipc + j;
            } else {
                for (int j = 0; j < syn_bs; ++j)
                    spick[j] = std::size_t(c) * cfg.ipc + iter_rng.index(cfg.ipc);
            }
            Tensor syn_batch = syn.images.rows(spick);

            data::AugmentTrace aug_trace;
            Tensor real_aug = cfg.augmentation ? data::augment(real_batch, aug) : real_batch;
            Tensor syn_aug =
                cfg.augmentation ? data::augment(syn_batch, aug, &aug_trace) : syn_batch;

            Tensor real_embeds = embed(net, real_aug);
            double mmd_val = 0.0;
            Tensor g = detail::mmd_input_grad(net, syn_aug, real_embeds, &mmd_val);
            if (cfg.augmentation) g = data::augment_vjp(aug_trace, g);

            for (int j = 0; j < syn_bs; ++j) {
                double* px = syn.images.ptr() + spick[j] * img_sz;
                const double* gp = g.ptr() + std::size_t(j) * img_sz;
                for (std::size_t i = 0; i < img_sz; ++i) {
                    double v = px[i] - cfg.image_learning_rate * gp[i];
                    px[i] = std::min(1.0, std::max(0.0, v)); // project to [0,1]
                }
            }
        }
        if (cfg.probe_every > 0 && (it % cfg.probe_every == 0 || it + 1 == cfg.outer_iterations))
            syn.probe_trace.push_back(probe_mmd());
    }
    check_finite(syn.images, "condense");
    return syn;
}

// --- synthetic-set file: f64 pixel block + text metadata, lossless ---

inline constexpr std::uint64_t kSyntheticMagic = 0x53594e5345543144ULL; // "SYNSET1D"

inline void save_synthetic(const std::string& path, const SyntheticSet& s) {
    auto os = io::open_out(path);
    io::put_u64le(os, kSyntheticMagic);
    io::put_u64le(os, s.ipc);
    io::put_u64le(os, s.classes);
    io::put_u64le(os, s.seed);
    std::string digest = s.config_digest;
    io::put_u64le(os, digest.size());
    os.write(digest.data(), std::streamsize(digest.size()));
    for (std::size_t d : s.images.shape) io::put_u64le(os, d);
    io::put_f64_block(os, s.images.data);
    io::put_u64le(os, s.labels.size());
    for (int y : s.labels) io::put_u32le(os, std::uint32_t(y));
    io::put_u64le(os, s.probe_trace.size());
    io::put_f64_block(os, s.probe_trace);
    require(os.good(), ErrorKind::Io, "synthetic set write failed: " + path);
}

inline SyntheticSet load_synthetic(const std::string& path) {
    auto is = io::open_in(path);
    require(io::get_u64le(is) == kSyntheticMagic, ErrorKind::Format,
            "bad synthetic-set magic: " + path);
    SyntheticSet s;
    s.ipc = int(io::get_u64le(is));
    s.classes = int(io::get_u64le(is));
    s.seed = io::get_u64le(is);
    const std::uint64_t dlen = io::get_u64le(is);
    s.config_digest.resize(dlen);
    is.read(s.config_digest.data(), std::streamsize(dlen));
    require(is.good(), ErrorKind::Format, "truncated synthetic-set metadata");
    std::vector<std::size_t> shape(4);
    for (auto& d : shape) d = io::get_u64le(is);
    s.images = Tensor(shape);
    io::get_f64_block(is, s.images.data);
    s.labels.resize(io::get_u64le(is));
    for (auto& y : s.labels) y = int(io::get_u32le(is));
    s.probe_trace.resize(io::get_u64le(is));
    io::get_f64_block(is, s.probe_trace);
    for (std::size_t i = 0; i < s.labels.size(); ++i)
        require(s.labels[i] == int(i / std::size_t(s.ipc)), ErrorKind::Format,
                "synthetic labels are not clean class blocks");
    return s;
}

} // namespace ulab::condense
