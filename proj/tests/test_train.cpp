#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ulab/datagen.hpp"
#include "ulab/train.hpp"

using namespace ulab;
using namespace ulab::nn;

namespace {

data::LabeledDataset small_corpus(std::size_t n, std::uint64_t seed) {
    return data::make_corpus(data::CorpusFamily::Digits, n, seed);
}

NetworkSpec small_net() { return convnet_spec(1, 28, 28, 10, 8, 3); }

} // namespace

TEST_CASE("train: zero learning rate leaves parameters unchanged, ledger zero") {
    auto ds = small_corpus(40, 1);
    Model m = make_model(small_net(), 2);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 10;
    cfg.learning_rate = 0.0;
    cfg.record_ledger = true;
    cfg.seed = 3;
    auto res = train(m, ds, cfg);
    for (std::size_t i = 0; i < m.params.size(); ++i)
        CHECK(res.model.params.values[i] == m.params.values[i]);
    REQUIRE(res.ledger.has_value());
    for (const auto& e : res.ledger->entries)
        for (double d : e.delta) CHECK(d == 0.0);
}

TEST_CASE("train: ledger telescopes bitwise to the final parameters") {
    auto ds = small_corpus(60, 11);
    Model m = make_model(small_net(), 12);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.05;
    cfg.record_ledger = true;
    cfg.seed = 13;
    auto res = train(m, ds, cfg);
    REQUIRE(res.ledger.has_value());
    auto sum = res.ledger->replay_sum();
    for (std::size_t i = 0; i < sum.size(); ++i) {
        const double reconstructed = res.ledger->theta_initial[i] + sum[i];
        CHECK(reconstructed == res.ledger->theta_final[i]);
        CHECK(res.ledger->theta_final[i] == res.model.params.values[i]);
    }
}

TEST_CASE("train: identical config and seed reproduce parameters bitwise") {
    auto ds = small_corpus(50, 21);
    Model m = make_model(small_net(), 22);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 10;
    cfg.learning_rate = 0.03;
    cfg.seed = 23;
    auto a = train(m, ds, cfg);
    auto b = train(m, ds, cfg);
    for (std::size_t i = 0; i < m.params.size(); ++i)
        CHECK(a.model.params.values[i] == b.model.params.values[i]);
}

TEST_CASE("train: segregated batches never mix tags") {
    auto ds = small_corpus(64, 31);
    ds.tags.assign(ds.size(), "bulk");
    for (std::size_t i = 0; i < 12; ++i) ds.tags[i] = "special";
    Model m = make_model(small_net(), 32);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.learning_rate = 0.02;
    cfg.record_ledger = true;
    cfg.partition = BatchPartition::SegregatedByTag;
    cfg.seed = 33;
    auto res = train(m, ds, cfg);
    REQUIRE(res.ledger.has_value());
    std::map<std::int64_t, std::string> tag_of;
    for (std::size_t i = 0; i < ds.size(); ++i) tag_of[ds.ids[i]] = ds.tags[i];
    for (const auto& e : res.ledger->entries) {
        REQUIRE(!e.member_ids.empty());
        const std::string& t = tag_of[e.member_ids[0]];
        for (auto id : e.member_ids) CHECK(tag_of[id] == t);
    }
}

TEST_CASE("train: empty dataset and oversized batch raise config errors") {
    Model m = make_model(small_net(), 41);
    data::LabeledDataset empty;
    empty.images = Tensor({0, 1, 28, 28});
    TrainConfig cfg;
    try {
        train(m, empty, cfg);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Config);
    }
    auto ds = small_corpus(10, 42);
    cfg.batch_size = 11;
    try {
        train(m, ds, cfg);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Config);
    }
}

TEST_CASE("train: 200-sample corpus reaches 0.90 training accuracy in 20 epochs") {
    auto ds = small_corpus(200, 51);
    Model m = make_model(convnet_spec(1, 28, 28, 10, 16, 3), 52);
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 32;
    cfg.learning_rate = 0.08;
    cfg.momentum = 0.9;
    cfg.seed = 53;
    auto res = train(m, ds, cfg);
    CHECK(accuracy(res.model, ds) >= 0.90);
}

TEST_CASE("ledger file round-trips") {
    auto ds = small_corpus(30, 61);
    Model m = make_model(small_net(), 62);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 10;
    cfg.record_ledger = true;
    cfg.seed = 63;
    auto res = train(m, ds, cfg);
    const std::string path = "/tmp/ulab_test_ledger.bin";
    save_ledger(path, *res.ledger);
    auto back = load_ledger(path);
    REQUIRE(back.entries.size() == res.ledger->entries.size());
    for (std::size_t i = 0; i < back.entries.size(); ++i) {
        CHECK(back.entries[i].epoch == res.ledger->entries[i].epoch);
        CHECK(back.entries[i].member_ids == res.ledger->entries[i].member_ids);
        CHECK(back.entries[i].delta == res.ledger->entries[i].delta);
    }
    CHECK(back.theta_final == res.ledger->theta_final);
}
