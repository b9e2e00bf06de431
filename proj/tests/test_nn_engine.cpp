#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ulab/engine.hpp"

using namespace ulab;
using namespace ulab::nn;

namespace {

Tensor random_batch(std::size_t n, const FeatureShape& in, std::uint64_t seed) {
    Tensor t(in.flat ? std::vector<std::size_t>{n, std::size_t(in.channels)}
                     : std::vector<std::size_t>{n, std::size_t(in.channels),
                                                std::size_t(in.height), std::size_t(in.width)});
    Rng rng(seed);
    for (auto& v : t.data) v = rng.uniform();
    return t;
}

std::vector<int> random_labels(std::size_t n, int k, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<int> y(n);
    for (auto& v : y) v = int(rng.index(k));
    return y;
}

// a small convnet for gradient checks (few hundred params)
NetworkSpec tiny_convnet() { return convnet_spec(1, 8, 8, 4, /*width=*/4, /*depth=*/2); }

// independent central-difference gradient of the mean loss
std::vector<double> fd_grad_params(Model m, const Tensor& batch, const std::vector<int>& labels,
                                   double eps) {
    std::vector<double> g(m.params.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double keep = m.params.values[i];
        m.params.values[i] = keep + eps;
        const double lp = cross_entropy(forward(m, batch), labels);
        m.params.values[i] = keep - eps;
        const double lm = cross_entropy(forward(m, batch), labels);
        m.params.values[i] = keep;
        g[i] = (lp - lm) / (2.0 * eps);
    }
    return g;
}

double rel_err_with_floor(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double scale = 0.0;
    for (double v : a) scale = std::max(scale, std::abs(v));
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, rel_err_with_floor(a[i], b[i], 1e-4 * std::max(scale, 1e-30)));
    return worst;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace

TEST_CASE("forward: all-zero parameters give all-zero logits") {
    auto spec = convnet_spec(1, 12, 12, 5, 6, 2);
    Model m{spec, ParamVector::zeros_like(spec)};
    Tensor batch = random_batch(3, spec.input, 7);
    Tensor logits = forward(m, batch);
    for (double v : logits.data) CHECK(v == 0.0);
}

TEST_CASE("forward: hand-computed linear model") {
    NetworkSpec spec;
    spec.input = FeatureShape{2, 0, 0, true};
    spec.layers.push_back(LayerDesc::linear(2, 3));
    spec.class_count = 3;
    Model m{spec, ParamVector::zeros_like(spec)};
    // W = [[1,2],[3,4],[5,6]], b = [0.5, -0.5, 0.25]
    m.params.values = {1, 2, 3, 4, 5, 6, 0.5, -0.5, 0.25};
    Tensor x({1, 2}, {10.0, -1.0});
    Tensor y = forward(m, x);
    CHECK(y.data[0] == doctest::Approx(1 * 10 + 2 * -1 + 0.5));
    CHECK(y.data[1] == doctest::Approx(3 * 10 + 4 * -1 - 0.5));
    CHECK(y.data[2] == doctest::Approx(5 * 10 + 6 * -1 + 0.25));
}

TEST_CASE("forward: batch rows equal per-sample forward bitwise") {
    auto spec = tiny_convnet();
    Model m = make_model(spec, 11);
    Tensor batch = random_batch(5, spec.input, 13);
    Tensor logits = forward(m, batch);
    for (std::size_t i = 0; i < 5; ++i) {
        Tensor single = forward(m, batch.row(i));
        for (std::size_t j = 0; j < single.size(); ++j)
            CHECK(logits.data[i * single.size() + j] == single.data[j]);
    }
}

TEST_CASE("forward: shape mismatch raises input-shape error") {
    auto spec = tiny_convnet();
    Model m = make_model(spec, 3);
    Tensor bad({2, 1, 7, 8});
    CHECK_THROWS_AS(forward(m, bad), Error);
    try {
        forward(m, bad);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InputShape);
    }
}

TEST_CASE("cross_entropy: uniform logits give ln K") {
    Tensor logits({4, 7});
    std::fill(logits.data.begin(), logits.data.end(), 0.37);
    CHECK(cross_entropy(logits, {0, 3, 6, 2}) == doctest::Approx(std::log(7.0)).epsilon(1e-12));
}

TEST_CASE("cross_entropy: huge true-class margin drives loss to zero") {
    Tensor logits({1, 3}, {50.0, 0.0, 0.0});
    CHECK(cross_entropy(logits, {0}) < 1e-12);
    CHECK(cross_entropy(logits, {0}) >= 0.0);
}

TEST_CASE("cross_entropy: matches independent softmax-then-log computation") {
    Rng rng(99);
    Tensor logits({6, 3});
    for (auto& v : logits.data) v = rng.uniform(-3.0, 3.0);
    auto labels = random_labels(6, 3, 5);
    double expect = 0.0;
    for (int s = 0; s < 6; ++s) {
        double z = 0.0;
        for (int j = 0; j < 3; ++j) z += std::exp(logits.data[s * 3 + j]);
        expect += -std::log(std::exp(logits.data[s * 3 + labels[s]]) / z);
    }
    expect /= 6.0;
    CHECK(cross_entropy(logits, labels) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("cross_entropy: out-of-range label raises label error") {
    Tensor logits({2, 3});
    try {
        cross_entropy(logits, {0, 3});
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Label);
    }
}

TEST_CASE("grad_params: zero at a constructed symmetric stationary point") {
    NetworkSpec spec;
    spec.input = FeatureShape{2, 0, 0, true};
    spec.layers.push_back(LayerDesc::linear(2, 2));
    spec.class_count = 2;
    Model m{spec, ParamVector::zeros_like(spec)};
    m.params.values = {0.3, -0.7, 0.3, -0.7, 0.1, 0.1}; // identical class rows
    Tensor batch({2, 2}, {1.5, -0.25, 1.5, -0.25});
    auto g = grad_params(m, batch, {0, 1});
    CHECK(l2_norm(g.values) < 1e-10);
}

TEST_CASE("grad_params: agrees with central finite differences") {
    auto spec = tiny_convnet();
    Model m = make_model(spec, 21);
    Tensor batch = random_batch(3, spec.input, 22);
    auto labels = random_labels(3, spec.class_count, 23);
    auto g = grad_params(m, batch, labels);
    auto fd = fd_grad_params(m, batch, labels, 1e-4);
    CHECK(max_rel_err(fd, g.values) < 1e-4);
}

TEST_CASE("grad_params: duplicated batch leaves mean gradient unchanged") {
    auto spec = tiny_convnet();
    Model m = make_model(spec, 31);
    Tensor batch = random_batch(4, spec.input, 32);
    auto labels = random_labels(4, spec.class_count, 33);
    Tensor doubled({8, batch.dim(1), batch.dim(2), batch.dim(3)});
    std::copy(batch.data.begin(), batch.data.end(), doubled.data.begin());
    std::copy(batch.data.begin(), batch.data.end(), doubled.data.begin() + batch.size());
    std::vector<int> dlabels = labels;
    dlabels.insert(dlabels.end(), labels.begin(), labels.end());
    auto g1 = grad_params(m, batch, labels);
    auto g2 = grad_params(m, doubled, dlabels);
    for (std::size_t i = 0; i < g1.size(); ++i)
        CHECK(g1.values[i] == doctest::Approx(g2.values[i]).epsilon(1e-12));
}

TEST_CASE("grad_input: zero-weight model gives zero input gradient") {
    auto spec = tiny_convnet();
    Model m{spec, ParamVector::zeros_like(spec)};
    Tensor batch = random_batch(2, spec.input, 41);
    auto g = grad_input(m, batch, random_labels(2, spec.class_count, 42));
    for (double v : g.data) CHECK(v == 0.0);
}

TEST_CASE("grad_input: agrees with central finite differences") {
    auto spec = tiny_convnet();
    Model m = make_model(spec, 51);
    Tensor batch = random_batch(2, spec.input, 52);
    auto labels = random_labels(2, spec.class_count, 53);
    Tensor g = grad_input(m, batch, labels);

    const double eps = 1e-4;
    std::vector<double> fd(batch.size());
    Tensor probe = batch;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        probe.data[i] = batch.data[i] + eps;
        const double lp = cross_entropy(forward(m, probe), labels);
        probe.data[i] = batch.data[i] - eps;
        const double lm = cross_entropy(forward(m, probe), labels);
        probe.data[i] = batch.data[i];
        fd[i] = (lp - lm) / (2.0 * eps);
    }
    CHECK(max_rel_err(fd, g.data) < 1e-4);
}

TEST_CASE("grad_input: sum reduction scales mean gradient by batch size") {
    auto spec = tiny_convnet();
    Model m = make_model(spec, 61);
    Tensor batch = random_batch(3, spec.input, 62);
    auto labels = random_labels(3, spec.class_count, 63);
    Tensor gm = grad_input(m, batch, labels, Reduction::Mean);
    Tensor gs = grad_input(m, batch, labels, Reduction::Sum);
    for (std::size_t i = 0; i < gm.size(); ++i)
        CHECK(gs.data[i] == doctest::Approx(3.0 * gm.data[i]).epsilon(1e-12));
}

TEST_CASE("hvp: zero direction maps to zero") {
    auto spec = tiny_convnet();
    Model m = make_model(spec, 71);
    Tensor batch = random_batch(2, spec.input, 72);
    auto labels = random_labels(2, spec.class_count, 73);
    ParamVector v = ParamVector::zeros_like(spec);
    auto hv = hvp(m, batch, labels, v);
    for (double x : hv.values) CHECK(x == 0.0);
}

TEST_CASE("hvp: dimension mismatch raises") {
    auto spec = tiny_convnet();
    Model m = make_model(spec, 74);
    Tensor batch = random_batch(2, spec.input, 75);
    auto labels = random_labels(2, spec.class_count, 76);
    ParamVector v;
    v.values.assign(3, 1.0);
    try {
        hvp(m, batch, labels, v);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Dimension);
    }
}

TEST_CASE("hvp: Hessian symmetry holds for random direction pairs") {
    auto spec = tiny_convnet();
    Model m = make_model(spec, 81);
    Tensor batch = random_batch(3, spec.input, 82);
    auto labels = random_labels(3, spec.class_count, 83);
    Rng rng(84);
    for (int rep = 0; rep < 20; ++rep) {
        ParamVector u = ParamVector::zeros_like(spec), w = ParamVector::zeros_like(spec);
        for (auto& x : u.values) x = rng.normal();
        for (auto& x : w.values) x = rng.normal();
        auto hu = hvp(m, batch, labels, u);
        auto hw = hvp(m, batch, labels, w);
        const double a = dot(hu.values, w.values), b = dot(hw.values, u.values);
        CHECK(rel_err_with_floor(a, b, 1e-12) < 1e-6);
    }
}

TEST_CASE("hvp: agrees with the gradient-difference oracle") {
    auto spec = tiny_convnet();
    Model m = make_model(spec, 91);
    Tensor batch = random_batch(3, spec.input, 92);
    auto labels = random_labels(3, spec.class_count, 93);
    Rng rng(94);
    ParamVector v = ParamVector::zeros_like(spec);
    for (auto& x : v.values) x = rng.normal();
    auto hv = hvp(m, batch, labels, v);

    // oracle: fixed-step central difference of grad_params
    const double eps = 1e-4 / l2_norm(v.values);
    Model shifted = m;
    for (std::size_t i = 0; i < v.size(); ++i) shifted.params.values[i] += eps * v.values[i];
    auto gp = grad_params(shifted, batch, labels);
    shifted.params = m.params;
    for (std::size_t i = 0; i < v.size(); ++i) shifted.params.values[i] -= eps * v.values[i];
    auto gm = grad_params(shifted, batch, labels);
    std::vector<double> oracle(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        oracle[i] = (gp.values[i] - gm.values[i]) / (2.0 * eps);

    std::vector<double> diff(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) diff[i] = oracle[i] - hv.values[i];
    CHECK(l2_norm(diff) / std::max(l2_norm(oracle), 1e-30) < 1e-3);
}

TEST_CASE("penultimate features match the layer-shape recurrence") {
    auto spec = convnet_spec(1, 28, 28, 10, 16, 3);
    // recurrence: three conv blocks keep channels=16 and halve 28 -> 14 -> 7 -> 3
    int h = 28;
    for (int i = 0; i < 3; ++i) h /= 2;
    const std::size_t expected = std::size_t(16) * h * h;
    CHECK(spec.feature_dim() == expected);
    Model m = make_model(spec, 101);
    Tensor batch = random_batch(2, spec.input, 102);
    Tensor f = penultimate_features(m, batch);
    CHECK(f.dim(1) == expected);
    CHECK(expected < 28u * 28u); // d' < d
}

TEST_CASE("checkpoint round-trip preserves parameters bitwise") {
    auto spec = tiny_convnet();
    Model m = make_model(spec, 111);
    const std::string path = "/tmp/ulab_test_ckpt.bin";
    save_checkpoint(path, m, 111);
    Model back = load_checkpoint(path);
    REQUIRE(back.params.size() == m.params.size());
    for (std::size_t i = 0; i < m.params.size(); ++i)
        CHECK(back.params.values[i] == m.params.values[i]);
    CHECK(back.spec.to_string() == m.spec.to_string());
}
