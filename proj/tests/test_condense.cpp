#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "ulab/condense.hpp"
#include "ulab/datagen.hpp"

using namespace ulab;
namespace cnd = ulab::condense;

namespace {

nn::NetworkSpec small_embed() {
    return nn::convnet_spec(1, 16, 16, 10, 6, 2).feature_extractor();
}

cnd::CondenseConfig small_config(std::uint64_t seed) {
    cnd::CondenseConfig cfg;
    cfg.ipc = 4;
    cfg.outer_iterations = 30;
    cfg.image_learning_rate = 1.0;
    cfg.real_batch_size = 24;
    cfg.embed_spec = small_embed();
    cfg.seed = seed;
    return cfg;
}

} // namespace

TEST_CASE("embed: zero-weight extractor maps everything to zero") {
    auto spec = small_embed();
    nn::Model net{spec, nn::ParamVector::zeros_like(spec)};
    auto ds = data::make_corpus(data::CorpusFamily::Digits, 6, 1, 0, 16);
    Tensor e = cnd::embed(net, ds.images);
    for (double v : e.data) CHECK(v == 0.0);
}

TEST_CASE("embed: duplicated batch rows give duplicated embedding rows") {
    auto spec = small_embed();
    nn::Model net = nn::make_model(spec, 2);
    auto ds = data::make_corpus(data::CorpusFamily::Digits, 3, 3, 0, 16);
    Tensor dup = ds.images.rows({0, 1, 2, 1});
    Tensor e = cnd::embed(net, dup);
    const std::size_t d = e.dim(1);
    for (std::size_t j = 0; j < d; ++j) CHECK(e.data[3 * d + j] == e.data[1 * d + j]);
}

TEST_CASE("embed: width follows the layer-shape recurrence and stays below d") {
    auto full = nn::convnet_spec(1, 28, 28, 10, 16, 3);
    auto ext = full.feature_extractor();
    nn::Model net = nn::make_model(ext, 4);
    auto ds = data::make_corpus(data::CorpusFamily::Digits, 2, 5);
    Tensor e = cnd::embed(net, ds.images);
    // recurrence: 28 -> 14 -> 7 -> 3 spatial, 16 channels
    CHECK(e.dim(1) == 16u * 3u * 3u);
    CHECK(e.dim(1) < 28u * 28u);
}

TEST_CASE("mmd_sq: identical embedding sets give exactly zero") {
    Tensor a({5, 3});
    Rng rng(6);
    for (auto& v : a.data) v = rng.normal();
    CHECK(cnd::mmd_sq(a, a) == 0.0);
}

TEST_CASE("mmd_sq: single points collapse to the squared distance") {
    Tensor p({1, 4}, {1.0, -2.0, 0.5, 3.0});
    Tensor q({1, 4}, {0.0, 1.0, 0.5, -1.0});
    double expect = 0.0;
    for (int j = 0; j < 4; ++j) expect += (p.data[j] - q.data[j]) * (p.data[j] - q.data[j]);
    CHECK(cnd::mmd_sq(p, q) == expect);
}

TEST_CASE("mmd_sq: matches a brute-force mean-difference computation") {
    Rng rng(7);
    Tensor a({8, 4}), b({8, 4});
    for (auto& v : a.data) v = rng.uniform(-2, 2);
    for (auto& v : b.data) v = rng.uniform(-2, 2);
    double expect = 0.0;
    for (int j = 0; j < 4; ++j) {
        double ma = 0, mb = 0;
        for (int i = 0; i < 8; ++i) {
            ma += a.data[i * 4 + j];
            mb += b.data[i * 4 + j];
        }
        const double d = ma / 8.0 - mb / 8.0;
        expect += d * d;
    }
    CHECK(cnd::mmd_sq(a, b) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("mmd_sq: non-negative on random pairs, dimension mismatch raises") {
    Rng rng(8);
    for (int rep = 0; rep < 100; ++rep) {
        Tensor a({3, 5}), b({4, 5});
        for (auto& v : a.data) v = rng.normal();
        for (auto& v : b.data) v = rng.normal();
        CHECK(cnd::mmd_sq(a, b) >= 0.0);
    }
    Tensor a({2, 3}), b({2, 4});
    try {
        cnd::mmd_sq(a, b);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Dimension);
    }
}

TEST_CASE("condense: zero outer iterations returns the initialization") {
    auto real = data::make_corpus(data::CorpusFamily::Digits, 300, 9, 0, 16);
    auto cfg = small_config(10);
    cfg.outer_iterations = 0;
    auto syn = cnd::condense(real, cfg);
    REQUIRE(syn.images.dim(0) == std::size_t(cfg.ipc) * 10);
    // initialization copies real images of the matching class
    auto by_class = real.indices_by_class();
    const std::size_t img_sz = real.images.row_size();
    for (std::size_t r = 0; r < syn.images.dim(0); ++r) {
        const int cls = syn.labels[r];
        bool found = false;
        for (std::size_t i : by_class[cls]) {
            if (std::equal(syn.images.data.begin() + r * img_sz,
                           syn.images.data.begin() + (r + 1) * img_sz,
                           real.images.data.begin() + i * img_sz)) {
                found = true;
                break;
            }
        }
        CHECK(found);
    }
}

TEST_CASE("condense: probe MMD falls from the first to the last decile") {
    auto real = data::make_corpus(data::CorpusFamily::Digits, 400, 11, 0, 16);
    auto cfg = small_config(12);
    cfg.outer_iterations = 40;
    auto syn = cnd::condense(real, cfg);
    REQUIRE(syn.probe_trace.size() >= 10);
    const std::size_t dec = syn.probe_trace.size() / 10;
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < dec; ++i) {
        first += syn.probe_trace[i];
        last += syn.probe_trace[syn.probe_trace.size() - 1 - i];
    }
    CHECK(last < first);
}

TEST_CASE("condense: labels stay clean, pixels stay projected, output is finite") {
    auto real = data::make_corpus(data::CorpusFamily::Digits, 300, 13, 0, 16);
    auto cfg = small_config(14);
    auto syn = cnd::condense(real, cfg);
    for (std::size_t r = 0; r < syn.images.dim(0); ++r)
        CHECK(syn.labels[r] == int(r / std::size_t(cfg.ipc)));
    for (double v : syn.images.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("condense: bitwise deterministic in config and seed") {
    auto real = data::make_corpus(data::CorpusFamily::Digits, 300, 15, 0, 16);
    auto cfg = small_config(16);
    cfg.outer_iterations = 10;
    auto a = cnd::condense(real, cfg);
    auto b = cnd::condense(real, cfg);
    CHECK(a.images.data == b.images.data);
    cfg.seed = 17;
    auto c = cnd::condense(real, cfg);
    CHECK(a.images.data != c.images.data);
}

TEST_CASE("condense: class with too few real samples raises config error") {
    auto real = data::make_corpus(data::CorpusFamily::Digits, 100, 18, 0, 16);
    auto cfg = small_config(19);
    cfg.real_batch_size = 64; // classes have only 10 samples
    try {
        cnd::condense(real, cfg);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Config);
    }
}

TEST_CASE("synthetic set file round-trips bitwise with provenance") {
    auto real = data::make_corpus(data::CorpusFamily::Digits, 300, 20, 0, 16);
    auto cfg = small_config(21);
    cfg.outer_iterations = 5;
    auto syn = cnd::condense(real, cfg);
    const std::string path = "/tmp/ulab_synset.bin";
    cnd::save_synthetic(path, syn);
    auto back = cnd::load_synthetic(path);
    CHECK(back.images.data == syn.images.data);
    CHECK(back.labels == syn.labels);
    CHECK(back.seed == syn.seed);
    CHECK(back.config_digest == syn.config_digest);
    CHECK(back.probe_trace == syn.probe_trace);
}

TEST_CASE("load_synthetic: truncated payload raises format error") {
    auto real = data::make_corpus(data::CorpusFamily::Digits, 300, 22, 0, 16);
    auto cfg = small_config(23);
    cfg.outer_iterations = 0;
    cnd::save_synthetic("/tmp/ulab_synset_full.bin", cnd::condense(real, cfg));
    std::ifstream in("/tmp/ulab_synset_full.bin", std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream out("/tmp/ulab_synset_trunc.bin", std::ios::binary);
    out.write(bytes.data(), std::streamsize(bytes.size() / 2));
    out.close();
    try {
        cnd::load_synthetic("/tmp/ulab_synset_trunc.bin");
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Format);
    }
}
