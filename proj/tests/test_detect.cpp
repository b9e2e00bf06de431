#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>

#include "ulab/datagen.hpp"
#include "ulab/detect.hpp"

using namespace ulab;
using namespace ulab::detect;

namespace {

RepresentationMatrix one_class(const Tensor& rows) {
    RepresentationMatrix reps;
    RepresentationMatrix::ClassBlock blk;
    blk.label = 0;
    blk.rows = rows;
    for (std::size_t i = 0; i < rows.dim(0); ++i) blk.ids.push_back(std::int64_t(i));
    reps.classes.push_back(std::move(blk));
    reps.feature_dim = rows.dim(1);
    return reps;
}

} // namespace

TEST_CASE("extract_representations: zero model, duplicated rows, width oracle") {
    auto spec = nn::convnet_spec(1, 16, 16, 10, 6, 2);
    auto ds = data::make_corpus(data::CorpusFamily::Digits, 30, 1, 0, 16);

    nn::Model zero{spec, nn::ParamVector::zeros_like(spec)};
    auto reps0 = extract_representations(zero, ds);
    for (const auto& blk : reps0.classes)
        for (double v : blk.rows.data) CHECK(v == 0.0);

    nn::Model m = nn::make_model(spec, 2);
    auto dup_idx = std::vector<std::size_t>{0};
    auto dup = ds.select({0, 1, 2});
    dup.images = ds.images.rows({0, 0, 2});
    dup.labels = {ds.labels[0], ds.labels[0], ds.labels[2]};
    dup.ids = {900, 901, 902};
    auto reps = extract_representations(m, dup);
    const auto& blk = reps.classes[ds.labels[0]];
    REQUIRE(blk.ids.size() >= 2);
    const std::size_t d = blk.rows.dim(1);
    CHECK(d == spec.feature_dim()); // shape recurrence
    CHECK(std::equal(blk.rows.data.begin(), blk.rows.data.begin() + d,
                     blk.rows.data.begin() + d));
}

TEST_CASE("spectral signature: identical rows score zero") {
    Tensor rows({6, 5});
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 5; ++j) rows.data[i * 5 + j] = double(j) * 0.3 + 1.0;
    auto scores = spectral_signature_scores(one_class(rows));
    for (auto& [id, s] : scores) CHECK(s == 0.0);
}

TEST_CASE("spectral signature: a planted outlier receives the maximum score") {
    Rng rng(3);
    Tensor rows({40, 10});
    for (auto& v : rows.data) v = rng.normal();
    for (std::size_t j = 0; j < 10; ++j) rows.data[7 * 10 + j] += (j == 2 ? 12.0 : 0.0);
    auto scores = spectral_signature_scores(one_class(rows));
    double best = -1;
    std::int64_t best_id = -1;
    for (auto& [id, s] : scores)
        if (s > best) {
            best = s;
            best_id = id;
        }
    CHECK(best_id == 7);
}

TEST_CASE("spectral signature: invariant to adding a constant vector per class") {
    Rng rng(4);
    Tensor rows({25, 8});
    for (auto& v : rows.data) v = rng.normal();
    auto base = spectral_signature_scores(one_class(rows));
    Tensor shifted = rows;
    for (std::size_t i = 0; i < 25; ++i)
        for (std::size_t j = 0; j < 8; ++j) shifted.data[i * 8 + j] += 3.0 * double(j) - 5.0;
    auto moved = spectral_signature_scores(one_class(shifted));
    for (auto& [id, s] : base) CHECK(moved[id] == doctest::Approx(s).epsilon(1e-9));
}

TEST_CASE("que: alpha = 1 reduces exactly to the whitened squared norm") {
    Rng rng(5);
    const std::size_t n = 60, d = 8;
    Tensor rows({n, d});
    for (auto& v : rows.data) v = rng.normal() * 0.7 + 0.2;
    auto reps = one_class(rows);
    QueOptions opt;
    opt.alpha = 1.0;
    opt.clean_fraction = 0.5;
    auto scores = que_scores(reps, opt);

    // independent whitening following the stated construction
    nn::MapCM M(rows.ptr(), n, d);
    Eigen::RowVectorXd mean_all = M.colwise().mean();
    std::vector<std::pair<double, std::size_t>> by_norm(n);
    for (std::size_t i = 0; i < n; ++i)
        by_norm[i] = {(M.row(i) - mean_all).squaredNorm(), i};
    std::stable_sort(by_norm.begin(), by_norm.end());
    const std::size_t n_clean = n / 2;
    Eigen::RowVectorXd mu = Eigen::RowVectorXd::Zero(d);
    for (std::size_t i = 0; i < n_clean; ++i) mu += M.row(by_norm[i].second);
    mu /= double(n_clean);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t i = 0; i < n_clean; ++i) {
        Eigen::RowVectorXd r = M.row(by_norm[i].second) - mu;
        cov += r.transpose() * r;
    }
    cov /= double(n_clean);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    Eigen::MatrixXd whiten = eig.eigenvectors() *
                             eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                             eig.eigenvectors().transpose();
    for (std::size_t i = 0; i < n; ++i) {
        const double expect = ((M.row(i) - mu) * whiten).squaredNorm() / double(d);
        CHECK(std::abs(scores[std::int64_t(i)] - expect) / expect < 1e-6);
    }
}

TEST_CASE("que: isotropic data concentrates near one") {
    Rng rng(6);
    Tensor rows({400, 10});
    for (auto& v : rows.data) v = rng.normal();
    auto reps = one_class(rows);
    QueOptions opt;
    opt.alpha = 4.0;
    auto scores = que_scores(reps, opt);
    double mean = 0, m2 = 0;
    for (auto& [id, s] : scores) mean += s;
    mean /= double(scores.size());
    for (auto& [id, s] : scores) m2 += (s - mean) * (s - mean);
    const double sd = std::sqrt(m2 / double(scores.size()));
    CHECK(std::abs(mean - 1.0) <= 3.0 * sd);
}

TEST_CASE("strip: constant-logit model yields entropy ln K for every candidate") {
    auto spec = nn::convnet_spec(1, 16, 16, 10, 6, 2);
    nn::Model zero{spec, nn::ParamVector::zeros_like(spec)};
    auto ds = data::make_corpus(data::CorpusFamily::Digits, 12, 7, 0, 16);
    auto pool = data::make_corpus(data::CorpusFamily::Digits, 20, 8, 5000, 16);
    auto scores = strip_entropy(zero, ds, pool, 4, 9);
    for (auto& [id, s] : scores) CHECK(s == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("tpr_fpr: boundary cases and the random-half sampling oracle") {
    std::set<std::int64_t> population, attack;
    for (std::int64_t i = 0; i < 1000; ++i) population.insert(i);
    for (std::int64_t i = 0; i < 100; ++i) attack.insert(i);

    auto [tpr1, fpr1] = tpr_fpr(attack, attack, population);
    CHECK(tpr1 == 1.0);
    CHECK(fpr1 == 0.0);
    auto [tpr0, fpr0] = tpr_fpr({}, attack, population);
    CHECK(tpr0 == 0.0);
    CHECK(fpr0 == 0.0);

    Rng rng(10);
    double tpr_acc = 0, fpr_acc = 0;
    const int reps = 50;
    for (int r = 0; r < reps; ++r) {
        std::set<std::int64_t> flagged;
        for (std::int64_t i = 0; i < 1000; ++i)
            if (rng.uniform() < 0.5) flagged.insert(i);
        auto [t, f] = tpr_fpr(flagged, attack, population);
        tpr_acc += t;
        fpr_acc += f;
    }
    CHECK(std::abs(tpr_acc / reps - 0.5) < 0.05);
    CHECK(std::abs(fpr_acc / reps - 0.5) < 0.05);

    try {
        tpr_fpr({}, {}, population);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::UndefinedTpr);
    }
}

TEST_CASE("monitor: identical costs flag nothing, small populations error out") {
    auto ds = data::make_corpus(data::CorpusFamily::Digits, 120, 11, 0, 16);
    auto spec = nn::convnet_spec(1, 16, 16, 10, 6, 2);
    nn::Model m = nn::make_model(spec, 12);

    std::vector<unlearn::UnlearnRequest> reqs;
    for (int r = 0; r < 12; ++r) {
        unlearn::UnlearnRequest q;
        q.forget = ds.select({0, 1, 2}); // identical content -> identical cost
        reqs.push_back(std::move(q));
    }
    MonitorConfig cfg;
    cfg.statistic = CostStatistic::GradientNorm;
    MonitorInputs in;
    in.model = &m;
    auto rep = unlearning_cost_monitor(reqs, cfg, in);
    CHECK(rep.flagged.empty());

    reqs.resize(5);
    try {
        unlearning_cost_monitor(reqs, cfg, in);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InsufficientPopulation);
    }
}

TEST_CASE("score csv dump is deterministic and well-formed") {
    DetectionReport rep;
    rep.detector = "spectral";
    rep.scores = {{1, 0.25}, {2, 1.5}, {3, 0.01}};
    rep.flagged = {2};
    std::map<std::int64_t, int> labels = {{1, 0}, {2, 4}, {3, 9}};
    save_scores_csv("/tmp/ulab_scores_a.csv", rep, labels);
    save_scores_csv("/tmp/ulab_scores_b.csv", rep, labels);
    std::ifstream a("/tmp/ulab_scores_a.csv"), b("/tmp/ulab_scores_b.csv");
    std::string sa((std::istreambuf_iterator<char>(a)), {});
    std::string sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
    CHECK(sa.rfind("id,class,score,flagged\n", 0) == 0);
    CHECK(sa.find("2,4,1.5,1") != std::string::npos);
}
