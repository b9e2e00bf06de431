#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <map>

#include "ulab/augment.hpp"
#include "ulab/datagen.hpp"
#include "ulab/dataset.hpp"
#include "ulab/trigger.hpp"

using namespace ulab;
using namespace ulab::data;

namespace {

// hand-packed IDX pair, independent of the library writers
void write_raw_idx(const std::string& img_path, const std::string& lab_path,
                   const std::vector<unsigned char>& pixels, const std::vector<unsigned char>& labels,
                   std::uint32_t n, std::uint32_t h, std::uint32_t w,
                   std::uint32_t img_magic = 0x803, std::uint32_t lab_magic = 0x801,
                   std::uint32_t label_count_override = 0) {
    std::ofstream os(img_path, std::ios::binary);
    auto be = [&](std::ofstream& s, std::uint32_t v) {
        unsigned char b[4] = {(unsigned char)(v >> 24), (unsigned char)(v >> 16),
                              (unsigned char)(v >> 8), (unsigned char)v};
        s.write((const char*)b, 4);
    };
    be(os, img_magic);
    be(os, n);
    be(os, h);
    be(os, w);
    os.write((const char*)pixels.data(), pixels.size());
    os.close();
    std::ofstream ls(lab_path, std::ios::binary);
    be(ls, lab_magic);
    be(ls, label_count_override ? label_count_override : n);
    ls.write((const char*)labels.data(), labels.size());
}

} // namespace

TEST_CASE("load_idx: parses bytes, normalizes, and matches an independent reader") {
    const std::string ip = "/tmp/ulab_idx_img", lp = "/tmp/ulab_idx_lab";
    std::vector<unsigned char> px(2 * 3 * 3);
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = (unsigned char)(i * 13 % 256);
    write_raw_idx(ip, lp, px, {4, 9}, 2, 3, 3);
    auto ds = load_idx(ip, lp);
    CHECK(ds.size() == 2);
    CHECK(ds.images.shape == std::vector<std::size_t>{2, 1, 3, 3});
    CHECK(ds.labels == std::vector<int>{4, 9});
    // independent oracle: re-read the image payload byte-for-byte
    std::ifstream raw(ip, std::ios::binary);
    raw.seekg(16);
    std::uint64_t checksum_bytes = 0, checksum_loaded = 0;
    for (std::size_t i = 0; i < px.size(); ++i) {
        const int byte = raw.get();
        checksum_bytes = checksum_bytes * 31 + std::uint64_t(byte);
        checksum_loaded =
            checksum_loaded * 31 + std::uint64_t(std::llround(ds.images.data[i] * 255.0));
        CHECK(ds.images.data[i] == doctest::Approx(byte / 255.0).epsilon(1e-15));
    }
    CHECK(checksum_bytes == checksum_loaded);
}

TEST_CASE("load_idx: bad magic and count mismatch raise format errors") {
    const std::string ip = "/tmp/ulab_idx_bad_img", lp = "/tmp/ulab_idx_bad_lab";
    std::vector<unsigned char> px(9), lab = {1};
    write_raw_idx(ip, lp, px, lab, 1, 3, 3, /*img_magic=*/0x999);
    try {
        load_idx(ip, lp);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Format);
    }
    write_raw_idx(ip, lp, px, lab, 1, 3, 3, 0x803, 0x801, /*label_count_override=*/5);
    try {
        load_idx(ip, lp);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Format);
    }
}

TEST_CASE("save_idx/load_idx round-trip to quantized pixels") {
    auto ds = make_corpus(CorpusFamily::Digits, 12, 5);
    save_idx("/tmp/ulab_idx_rt_img", "/tmp/ulab_idx_rt_lab", ds);
    auto back = load_idx("/tmp/ulab_idx_rt_img", "/tmp/ulab_idx_rt_lab");
    REQUIRE(back.size() == ds.size());
    CHECK(back.labels == ds.labels);
    for (std::size_t i = 0; i < ds.images.size(); ++i)
        CHECK(std::abs(back.images.data[i] - ds.images.data[i]) <= 0.5 / 255.0 + 1e-12);
}

TEST_CASE("knowledge_subset: fraction 1.0 is the identity") {
    auto ds = make_corpus(CorpusFamily::Digits, 50, 7);
    KnowledgeView v{&ds, 1.0, 99};
    auto sub = knowledge_subset(v);
    CHECK(sub.ids == ds.ids);
    CHECK(sub.images.data == ds.images.data);
}

TEST_CASE("knowledge_subset: stratified counts within one of the exact share") {
    auto ds = make_corpus(CorpusFamily::Digits, 2000, 8);
    KnowledgeView v{&ds, 0.01, 42};
    auto sub = knowledge_subset(v);
    CHECK(sub.size() == 20);
    auto by = sub.indices_by_class(10);
    for (int c = 0; c < 10; ++c) CHECK(std::abs(double(by[c].size()) - 2.0) <= 1.0);
}

TEST_CASE("knowledge_subset: deterministic in the seed") {
    auto ds = make_corpus(CorpusFamily::Digits, 300, 9);
    KnowledgeView v{&ds, 0.1, 1234};
    auto a = knowledge_subset(v), b = knowledge_subset(v);
    CHECK(a.ids == b.ids);
    KnowledgeView v2{&ds, 0.1, 1235};
    auto c = knowledge_subset(v2);
    CHECK(a.ids != c.ids); // overwhelmingly likely
}

TEST_CASE("knowledge_subset: non-positive fraction raises config error") {
    auto ds = make_corpus(CorpusFamily::Digits, 30, 10);
    KnowledgeView v{&ds, 0.0, 1};
    try {
        knowledge_subset(v);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Config);
    }
}

TEST_CASE("sample_augmentation: draws stay within the Omega bounds") {
    Rng rng(77);
    AugmentWeights w;
    w.identity = 1.0;
    w.flip = 1.0;
    for (int i = 0; i < 10000; ++i) {
        auto p = sample_augmentation(rng, w);
        CHECK(p.pad <= kMaxPad);
        CHECK(std::abs(p.angle_deg) <= kMaxAngleDeg);
        CHECK(p.scale >= kScaleLo);
        CHECK(p.scale <= kScaleHi);
        CHECK(p.sigma <= kMaxSigma);
        CHECK(p.box_frac <= kMaxBoxFrac);
        if (p.op == AugOp::Crop) {
            CHECK(p.offset_r <= 2 * p.pad);
            CHECK(p.offset_c <= 2 * p.pad);
        }
    }
}

TEST_CASE("sample_augmentation: fixed rng state reproduces the draw") {
    Rng a(123), b(123);
    for (int i = 0; i < 50; ++i) {
        auto pa = sample_augmentation(a);
        auto pb = sample_augmentation(b);
        CHECK(pa.op == pb.op);
        CHECK(pa.angle_deg == pb.angle_deg);
        CHECK(pa.scale == pb.scale);
        CHECK(pa.noise_seed == pb.noise_seed);
    }
}

TEST_CASE("sample_augmentation: empirical frequencies match configured weights") {
    AugmentWeights w;
    w.identity = 0.1;
    w.crop = 0.3;
    w.rotate = 0.2;
    w.scale = 0.1;
    w.flip = 0.05;
    w.noise = 0.15;
    w.cutout = 0.1;
    Rng rng(2024);
    std::map<AugOp, int> counts;
    const int n = 100000;
    for (int i = 0; i < n; ++i) counts[sample_augmentation(rng, w).op]++;
    for (auto [op, weight] : w.entries())
        CHECK(std::abs(double(counts[op]) / n - weight) < 0.03);
}

TEST_CASE("augment: identity returns the batch bitwise") {
    auto ds = make_corpus(CorpusFamily::Digits, 4, 11);
    AugmentationParams p; // identity
    auto out = augment(ds.images, p);
    CHECK(out.data == ds.images.data);
}

TEST_CASE("augment: zero-degree rotation is exact") {
    auto ds = make_corpus(CorpusFamily::Digits, 4, 12);
    AugmentationParams p;
    p.op = AugOp::Rotate;
    p.angle_deg = 0.0;
    auto out = augment(ds.images, p);
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(std::abs(out.data[i] - ds.images.data[i]) <= 1e-12);
}

TEST_CASE("augment: rotate 10 then -10 degrees nearly round-trips") {
    auto ds = make_corpus(CorpusFamily::Digits, 8, 13);
    AugmentationParams fwd, bwd;
    fwd.op = bwd.op = AugOp::Rotate;
    fwd.angle_deg = 10.0;
    bwd.angle_deg = -10.0;
    auto there = augment(ds.images, fwd);
    auto back = augment(there, bwd);
    double mad = 0.0;
    for (std::size_t i = 0; i < back.size(); ++i)
        mad += std::abs(back.data[i] - ds.images.data[i]);
    mad /= double(back.size());
    CHECK(mad < 0.05);
}

TEST_CASE("augment: the same w applies the same geometric transform to any batch") {
    // coordinate-grid probes: pixel value encodes position
    Tensor gridA({2, 1, 16, 16}), gridB({3, 1, 16, 16});
    for (std::size_t s = 0; s < 2; ++s)
        for (int r = 0; r < 16; ++r)
            for (int c = 0; c < 16; ++c) gridA.data[(s * 16 + r) * 16 + c] = (r * 16 + c) / 256.0;
    for (std::size_t s = 0; s < 3; ++s)
        std::copy(gridA.data.begin(), gridA.data.begin() + 256, gridB.data.begin() + s * 256);

    Rng rng(321);
    for (int rep = 0; rep < 20; ++rep) {
        auto p = sample_augmentation(rng);
        if (p.op == AugOp::GaussianNoise) continue; // not geometric
        auto a = augment(gridA, p);
        auto b = augment(gridB, p);
        for (std::size_t i = 0; i < 256; ++i) CHECK(a.data[i] == b.data[i]);
    }
}

TEST_CASE("augment: output stays in [0,1] and the vjp matches finite differences") {
    Rng rng(55);
    Tensor x({2, 1, 12, 12});
    for (auto& v : x.data) v = 0.2 + 0.6 * rng.uniform(); // keep away from clamp boundaries
    for (int rep = 0; rep < 30; ++rep) {
        auto p = sample_augmentation(rng);
        p.sigma = std::min(p.sigma, 0.01);
        AugmentTrace trace;
        auto y = augment(x, p, &trace);
        for (double v : y.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        // directional derivative check
        Tensor gy(y.shape), dir(x.shape);
        for (auto& v : gy.data) v = rng.uniform(-1.0, 1.0);
        for (auto& v : dir.data) v = rng.uniform(-1.0, 1.0);
        Tensor gx = augment_vjp(trace, gy);
        const double eps = 1e-6;
        Tensor xp = x, xm = x;
        for (std::size_t i = 0; i < x.size(); ++i) {
            xp.data[i] += eps * dir.data[i];
            xm.data[i] -= eps * dir.data[i];
        }
        auto yp = augment(xp, p);
        auto ym = augment(xm, p);
        double fd = 0.0, an = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i)
            fd += gy.data[i] * (yp.data[i] - ym.data[i]) / (2.0 * eps);
        for (std::size_t i = 0; i < x.size(); ++i) an += gx.data[i] * dir.data[i];
        CHECK(std::abs(fd - an) < 1e-5 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("apply_trigger: null rate leaves the dataset unchanged") {
    auto ds = make_corpus(CorpusFamily::Digits, 40, 14);
    auto t = default_trigger(28, 28, 0, 0.0);
    auto [out, flagged] = apply_trigger(ds, t, 5);
    CHECK(flagged.empty());
    CHECK(out.images.data == ds.images.data);
    CHECK(out.labels == ds.labels);
}

TEST_CASE("apply_trigger: flags exactly round(rate*n) samples and stamps them") {
    auto ds = make_corpus(CorpusFamily::Digits, 1000, 15);
    auto t = default_trigger(28, 28, 3, 0.05);
    auto [out, flagged] = apply_trigger(ds, t, 6);
    CHECK(flagged.size() == 50);
    for (auto id : flagged) {
        const std::size_t i = out.index_of_id(id);
        CHECK(out.labels[i] == 3);
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < 3; ++c)
                CHECK(out.images.data[((i * 1 + 0) * 28 + t.row + r) * 28 + t.col + c] ==
                      t.patch.data[r * 3 + c]);
    }
}

TEST_CASE("apply_trigger: out-of-bounds patch raises config error") {
    auto ds = make_corpus(CorpusFamily::Digits, 10, 16);
    auto t = default_trigger(28, 28, 0, 0.1);
    t.row = 27;
    try {
        apply_trigger(ds, t, 7);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Config);
    }
}

TEST_CASE("corpus generator: valid, deterministic, balanced") {
    auto a = make_corpus(CorpusFamily::Digits, 100, 17);
    auto b = make_corpus(CorpusFamily::Digits, 100, 17);
    a.validate();
    CHECK(a.images.data == b.images.data);
    auto by = a.indices_by_class(10);
    for (int c = 0; c < 10; ++c) CHECK(by[c].size() == 10);
    auto s = make_corpus(CorpusFamily::Shapes, 50, 18);
    s.validate();
    CHECK(s.images.data != a.images.data);
}

TEST_CASE("digest table detects content tampering") {
    auto ds = make_corpus(CorpusFamily::Digits, 20, 19);
    auto table = digest_table(ds);
    CHECK(table.at(ds.ids[4]) == sample_digest(ds, 4));
    auto tampered = ds;
    tampered.images.data[4 * tampered.images.row_size() + 100] += 0.25;
    CHECK(table.at(ds.ids[4]) != sample_digest(tampered, 4));
}

TEST_CASE("manifest round-trips sorted ids") {
    save_manifest("/tmp/ulab_manifest.txt", {5, 3, 9, 1});
    auto ids = load_manifest("/tmp/ulab_manifest.txt");
    CHECK(ids == std::vector<std::int64_t>{1, 3, 5, 9});
}
