#pragma once

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <future>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ulab/condense.hpp"
#include "ulab/datagen.hpp"
#include "ulab/detect.hpp"
#include "ulab/report.hpp"
#include "ulab/trigger.hpp"
#include "ulab/unlearn.hpp"

namespace ulab::harness {

// --- scenario specification ---

struct ScenarioSpec {
    enum class Kind { FullKnowledge, PartialKnowledge, Pood };
    Kind kind = Kind::FullKnowledge;
    double fraction = 1.0;       // partial-knowledge: Dst. Kwl.
    std::string pood_source;     // pood: the attacker's out-of-distribution dataset
    std::string dataset = "digits";
    int ipc = 10;
    int injection_count = 0;     // 0 -> ipc * classes
    std::vector<unlearn::Method> methods = {
        unlearn::Method::FirstOrder, unlearn::Method::SecondOrder, unlearn::Method::NegGrad,
        unlearn::Method::Amnesiac};
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

    std::string name() const {
        switch (kind) {
            case Kind::FullKnowledge: return "full";
            case Kind::PartialKnowledge: {
                char buf[32];
                std::snprintf(buf, sizeof buf, "partial(%g)", fraction);
                return buf;
            }
            case Kind::Pood: return "pood(" + pood_source + ")";
        }
        return "?";
    }
};

// --- configuration tree (JSON-compatible key-value file drives the CLI) ---

struct HarnessConfig {
    // data
    std::string data_dir;            // empty -> $UNLEARN_DATA_DIR -> ./data
    bool generate_missing = true;    // builtin corpora only
    std::size_t gen_train = 6000, gen_test = 1000;
    std::uint64_t gen_seed = 1;
    std::size_t train_subset = 5000;
    std::size_t test_subset = 1000;
    double max_injection_fraction = 0.025;

    // model & main training
    int width = 16, depth = 3;
    int epochs = 25;
    int batch_size = 64;
    double lr = 0.08;
    double momentum = 0.9;

    // amnesiac instrumentation run (momentum-free so per-batch deltas are
    // attributable to their member samples alone)
    int amn_epochs = 35;
    double amn_lr = 0.2;

    // condensation
    int cond_iterations = 500;
    double cond_lr = 1.0;
    int cond_real_batch = 64;
    bool cond_augment = true;
    int cond_probe_every = 25;

    // unlearning defaults and tuning grids
    unlearn::Hyperparams hp; // blur_sigma etc; tau/lambda replaced by tuning
    int neg_steps = 5;
    std::vector<double> tau_grid_first = {1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1};
    std::vector<double> tau_grid_neg = {1e-6, 3e-6, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2};
    std::vector<double> lambda_grid = {3000, 1000, 300, 100, 30, 10, 3, 1};
    double tune_max_drop = 0.02;
    int rounds = 1;

    // detector bench
    double trigger_rate = 0.05;
    int trigger_target = 0;
    int strip_overlays = 16;
    double strip_fpr = 0.10;
    double que_alpha = 4.0;
    double que_clean_fraction = 0.5;

    // cost monitor
    int monitor_normal_requests = 40;
    int monitor_request_size = 10;
    double monitor_k = 3.0;
    detect::CostStatistic monitor_statistic = detect::CostStatistic::Budget;

    // budget solver
    unlearn::BudgetOptions budget;

    ScenarioSpec scenario;
    int parallel_seeds = 2;

    nlohmann::ordered_json to_json() const;
    static HarnessConfig from_json(const nlohmann::json& j);
    static HarnessConfig from_file(const std::string& path);
    std::string digest() const { return io::hex64(io::fnv1a(to_json().dump())); }
};

inline nlohmann::ordered_json HarnessConfig::to_json() const {
    nlohmann::ordered_json j;
    j["data"] = {{"dir", data_dir},
                 {"generate_missing", generate_missing},
                 {"gen_train", gen_train},
                 {"gen_test", gen_test},
                 {"gen_seed", gen_seed},
                 {"train_subset", train_subset},
                 {"test_subset", test_subset},
                 {"max_injection_fraction", max_injection_fraction}};
    j["model"] = {{"width", width}, {"depth", depth}};
    j["train"] = {{"epochs", epochs},
                  {"batch_size", batch_size},
                  {"lr", lr},
                  {"momentum", momentum},
                  {"amn_epochs", amn_epochs},
                  {"amn_lr", amn_lr}};
    j["condense"] = {{"iterations", cond_iterations},
                     {"image_lr", cond_lr},
                     {"real_batch", cond_real_batch},
                     {"augment", cond_augment},
                     {"probe_every", cond_probe_every}};
    j["unlearn"] = {{"blur_sigma", hp.blur_sigma},
                    {"substitute", hp.substitute == unlearn::SubstituteKind::Blur ? "blur" : "zero"},
                    {"reduction", hp.reduction == nn::Reduction::Sum ? "sum" : "mean"},
                    {"neg_steps", neg_steps},
                    {"cg_iters", hp.cg_iters},
                    {"cg_tol", hp.cg_tol},
                    {"hessian_probe", hp.hessian_probe},
                    {"tau_grid_first", tau_grid_first},
                    {"tau_grid_neg", tau_grid_neg},
                    {"lambda_grid", lambda_grid},
                    {"tune_max_drop", tune_max_drop},
                    {"rounds", rounds}};
    j["detect"] = {{"trigger_rate", trigger_rate},
                   {"trigger_target", trigger_target},
                   {"strip_overlays", strip_overlays},
                   {"strip_fpr", strip_fpr},
                   {"que_alpha", que_alpha},
                   {"que_clean_fraction", que_clean_fraction}};
    j["monitor"] = {{"normal_requests", monitor_normal_requests},
                    {"request_size", monitor_request_size},
                    {"k", monitor_k},
                    {"statistic", monitor_statistic == detect::CostStatistic::Budget
                                      ? "budget"
                                      : monitor_statistic == detect::CostStatistic::LossChange
                                            ? "loss-change"
                                            : "gradient-norm"}};
    j["budget"] = {{"lr", budget.lr}, {"iterations", budget.iterations}, {"rel_tol", budget.rel_tol}};
    std::string kind = scenario.kind == ScenarioSpec::Kind::FullKnowledge ? "full"
                       : scenario.kind == ScenarioSpec::Kind::PartialKnowledge ? "partial"
                                                                               : "pood";
    std::vector<std::string> methods;
    for (auto m : scenario.methods) methods.push_back(unlearn::method_name(m));
    j["scenario"] = {{"kind", kind},          {"fraction", scenario.fraction},
                     {"pood_source", scenario.pood_source}, {"dataset", scenario.dataset},
                     {"ipc", scenario.ipc},   {"injection_count", scenario.injection_count},
                     {"methods", methods},    {"seeds", scenario.seeds}};
    j["parallel_seeds"] = parallel_seeds;
    return j;
}

inline HarnessConfig HarnessConfig::from_json(const nlohmann::json& j) {
    HarnessConfig c;
    auto get = [](const nlohmann::json& o, const char* k, auto fallback) {
        using T = decltype(fallback);
        return o.contains(k) ? o.at(k).get<T>() : fallback;
    };
    if (j.contains("data")) {
        const auto& d = j["data"];
        c.data_dir = get(d, "dir", c.data_dir);
        c.generate_missing = get(d, "generate_missing", c.generate_missing);
        c.gen_train = get(d, "gen_train", c.gen_train);
        c.gen_test = get(d, "gen_test", c.gen_test);
        c.gen_seed = get(d, "gen_seed", c.gen_seed);
        c.train_subset = get(d, "train_subset", c.train_subset);
        c.test_subset = get(d, "test_subset", c.test_subset);
        c.max_injection_fraction = get(d, "max_injection_fraction", c.max_injection_fraction);
    }
    if (j.contains("model")) {
        c.width = get(j["model"], "width", c.width);
        c.depth = get(j["model"], "depth", c.depth);
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        c.epochs = get(t, "epochs", c.epochs);
        c.batch_size = get(t, "batch_size", c.batch_size);
        c.lr = get(t, "lr", c.lr);
        c.momentum = get(t, "momentum", c.momentum);
        c.amn_epochs = get(t, "amn_epochs", c.amn_epochs);
        c.amn_lr = get(t, "amn_lr", c.amn_lr);
    }
    if (j.contains("condense")) {
        const auto& s = j["condense"];
        c.cond_iterations = get(s, "iterations", c.cond_iterations);
        c.cond_lr = get(s, "image_lr", c.cond_lr);
        c.cond_real_batch = get(s, "real_batch", c.cond_real_batch);
        c.cond_augment = get(s, "augment", c.cond_augment);
        c.cond_probe_every = get(s, "probe_every", c.cond_probe_every);
    }
    if (j.contains("unlearn")) {
        const auto& u = j["unlearn"];
        c.hp.blur_sigma = get(u, "blur_sigma", c.hp.blur_sigma);
        if (get(u, "substitute", std::string("blur")) == "zero")
            c.hp.substitute = unlearn::SubstituteKind::ZeroImage;
        if (get(u, "reduction", std::string("sum")) == "mean")
            c.hp.reduction = nn::Reduction::Mean;
        c.neg_steps = get(u, "neg_steps", c.neg_steps);
        c.hp.cg_iters = get(u, "cg_iters", c.hp.cg_iters);
        c.hp.cg_tol = get(u, "cg_tol", c.hp.cg_tol);
        c.hp.hessian_probe = get(u, "hessian_probe", c.hp.hessian_probe);
        c.tau_grid_first = get(u, "tau_grid_first", c.tau_grid_first);
        c.tau_grid_neg = get(u, "tau_grid_neg", c.tau_grid_neg);
        c.lambda_grid = get(u, "lambda_grid", c.lambda_grid);
        c.tune_max_drop = get(u, "tune_max_drop", c.tune_max_drop);
        c.rounds = get(u, "rounds", c.rounds);
    }
    if (j.contains("detect")) {
        const auto& d = j["detect"];
        c.trigger_rate = get(d, "trigger_rate", c.trigger_rate);
        c.trigger_target = get(d, "trigger_target", c.trigger_target);
        c.strip_overlays = get(d, "strip_overlays", c.strip_overlays);
        c.strip_fpr = get(d, "strip_fpr", c.strip_fpr);
        c.que_alpha = get(d, "que_alpha", c.que_alpha);
        c.que_clean_fraction = get(d, "que_clean_fraction", c.que_clean_fraction);
    }
    if (j.contains("monitor")) {
        const auto& m = j["monitor"];
        c.monitor_normal_requests = get(m, "normal_requests", c.monitor_normal_requests);
        c.monitor_request_size = get(m, "request_size", c.monitor_request_size);
        c.monitor_k = get(m, "k", c.monitor_k);
        const std::string s = get(m, "statistic", std::string("budget"));
        c.monitor_statistic = s == "loss-change" ? detect::CostStatistic::LossChange
                              : s == "gradient-norm" ? detect::CostStatistic::GradientNorm
                                                     : detect::CostStatistic::Budget;
    }
    if (j.contains("budget")) {
        const auto& b = j["budget"];
        c.budget.lr = get(b, "lr", c.budget.lr);
        c.budget.iterations = get(b, "iterations", c.budget.iterations);
        c.budget.rel_tol = get(b, "rel_tol", c.budget.rel_tol);
    }
    if (j.contains("scenario")) {
        const auto& s = j["scenario"];
        const std::string kind = get(s, "kind", std::string("full"));
        c.scenario.kind = kind == "partial" ? ScenarioSpec::Kind::PartialKnowledge
                          : kind == "pood"  ? ScenarioSpec::Kind::Pood
                                            : ScenarioSpec::Kind::FullKnowledge;
        c.scenario.fraction = get(s, "fraction", c.scenario.fraction);
        c.scenario.pood_source = get(s, "pood_source", c.scenario.pood_source);
        c.scenario.dataset = get(s, "dataset", c.scenario.dataset);
        c.scenario.ipc = get(s, "ipc", c.scenario.ipc);
        c.scenario.injection_count = get(s, "injection_count", c.scenario.injection_count);
        if (s.contains("methods")) {
            c.scenario.methods.clear();
            for (const auto& m : s["methods"])
                c.scenario.methods.push_back(unlearn::method_from_name(m.get<std::string>()));
        }
        c.scenario.seeds = get(s, "seeds", c.scenario.seeds);
    }
    c.parallel_seeds = get(j, "parallel_seeds", c.parallel_seeds);
    return c;
}

inline HarnessConfig HarnessConfig::from_file(const std::string& path) {
    auto is = io::open_in(path, /*binary=*/false);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Format, std::string("bad config json: ") + e.what());
    }
    return from_json(j);
}

// --- dataset resolution ---

inline std::string data_root(const HarnessConfig& cfg) {
    if (!cfg.data_dir.empty()) return cfg.data_dir;
    if (const char* env = std::getenv("UNLEARN_DATA_DIR")) return env;
    return "./data";
}

struct LoadedData {
    data::LabeledDataset train;
    data::LabeledDataset test;
};

inline bool is_builtin_family(const std::string& name) {
    return name == "digits" || name == "shapes";
}

// Loads <root>/<name>/{train,t10k}-*-ubyte; materializes a builtin corpus
// there first when allowed.
inline LoadedData load_dataset(const std::string& name, const HarnessConfig& cfg) {
    namespace fs = std::filesystem;
    const std::string dir = data_root(cfg) + "/" + name;
    const std::string ti = dir + "/train-images-idx3-ubyte", tl = dir + "/train-labels-idx1-ubyte";
    const std::string si = dir + "/t10k-images-idx3-ubyte", sl = dir + "/t10k-labels-idx1-ubyte";
    if (!fs::exists(ti)) {
        require(cfg.generate_missing && is_builtin_family(name), ErrorKind::Environment,
                "dataset not found under " + dir +
                    " (set UNLEARN_DATA_DIR or enable data.generate_missing for digits|shapes)");
        fs::create_directories(dir);
        data::write_corpus_idx(dir, data::corpus_family_from_name(name), cfg.gen_train,
                               cfg.gen_test, cfg.gen_seed);
    }
    LoadedData out{data::load_idx(ti, tl), data::load_idx(si, sl)};
    for (auto& id : out.test.ids) id += 1000000; // keep id spaces disjoint
    return out;
}

// --- per-seed pipeline ---

inline constexpr std::int64_t kSyntheticIdBase = 9000000;

struct SeedRun {
    std::uint64_t seed = 0;
    data::LabeledDataset subset;      // desk training subset (bulk + control tags)
    data::LabeledDataset mix;         // subset + injected synthetic set
    data::LabeledDataset control;     // size-matched normal forget set
    data::LabeledDataset informative; // the injected synthetic samples
    data::LabeledDataset retained;    // mix minus control minus informative
    condense::SyntheticSet syn;
    nn::Model model;                        // main trained model
    std::optional<nn::TrainResult> amn;     // momentum-free recorded run
    double acc_before = 0.0;                // main model, test set
    double amn_acc_before = 0.0;
};

inline nn::NetworkSpec model_spec(const HarnessConfig& cfg, const data::LabeledDataset& any) {
    return nn::convnet_spec(int(any.images.dim(1)), int(any.images.dim(2)),
                            int(any.images.dim(3)), 10, cfg.width, cfg.depth);
}

// Builds the attacker-known dataset T for the scenario kind.
inline data::LabeledDataset build_knowledge(const HarnessConfig& cfg,
                                            const data::LabeledDataset& subset,
                                            std::uint64_t seed) {
    switch (cfg.scenario.kind) {
        case ScenarioSpec::Kind::FullKnowledge:
            return subset;
        case ScenarioSpec::Kind::PartialKnowledge: {
            data::KnowledgeView view{&subset, cfg.scenario.fraction, mix_seed(seed, 0x12)};
            return data::knowledge_subset(view);
        }
        case ScenarioSpec::Kind::Pood: {
            require(!cfg.scenario.pood_source.empty(), ErrorKind::Config,
                    "pood scenario needs a source dataset");
            auto pood = load_dataset(cfg.scenario.pood_source, cfg);
            auto idx = data::stratified_sample(pood.train,
                                               std::min(cfg.train_subset, pood.train.size()),
                                               mix_seed(seed, 0x13));
            return pood.train.select(idx);
        }
    }
    fail(ErrorKind::Config, "unreachable scenario kind");
}

inline SeedRun prepare_seed(const HarnessConfig& cfg, const LoadedData& dataset,
                            std::uint64_t seed, bool want_amnesiac) {
    SeedRun run;
    run.seed = seed;

    auto sub_idx = data::stratified_sample(dataset.train,
                                           std::min(cfg.train_subset, dataset.train.size()),
                                           mix_seed(seed, 1));
    run.subset = dataset.train.select(sub_idx);

    data::LabeledDataset knowledge = build_knowledge(cfg, run.subset, seed);

    condense::CondenseConfig cc;
    cc.ipc = cfg.scenario.ipc;
    cc.outer_iterations = cfg.cond_iterations;
    cc.image_learning_rate = cfg.cond_lr;
    cc.real_batch_size = int(std::min<std::size_t>(
        cfg.cond_real_batch, [&] {
            auto by = knowledge.indices_by_class();
            std::size_t m = knowledge.size();
            for (const auto& v : by)
                if (!v.empty()) m = std::min(m, v.size());
            return m;
        }()));
    cc.augmentation = cfg.cond_augment;
    cc.embed_spec = model_spec(cfg, dataset.train).feature_extractor();
    cc.seed = mix_seed(seed, 2);
    cc.probe_every = cfg.cond_probe_every;
    run.syn = condense::condense(knowledge, cc);
    run.informative = run.syn.as_dataset(kSyntheticIdBase, "informative");

    const double inj_frac = double(run.informative.size()) / double(run.subset.size());
    require(inj_frac <= cfg.max_injection_fraction, ErrorKind::Config,
            "injection fraction " + std::to_string(inj_frac) + " exceeds the configured bound");

    auto control_idx =
        data::stratified_sample(run.subset, run.informative.size(), mix_seed(seed, 3));
    run.mix = run.subset;
    run.mix.tags.assign(run.mix.size(), "bulk");
    for (auto i : control_idx) run.mix.tags[i] = "control";
    run.control = run.mix.select(control_idx);
    run.mix = data::concat(run.mix, run.informative);

    std::vector<std::size_t> retained_idx;
    for (std::size_t i = 0; i < run.mix.size(); ++i)
        if (run.mix.tags[i] == "bulk") retained_idx.push_back(i);
    run.retained = run.mix.select(retained_idx);

    const auto spec = model_spec(cfg, dataset.train);
    nn::TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.learning_rate = cfg.lr;
    tc.momentum = cfg.momentum;
    tc.seed = mix_seed(seed, 4);
    tc.partition = nn::BatchPartition::SegregatedByTag;
    run.model = nn::train(nn::make_model(spec, mix_seed(seed, 5)), run.mix, tc).model;
    run.acc_before = nn::accuracy(run.model, dataset.test);

    if (want_amnesiac) {
        nn::TrainConfig ac = tc;
        ac.epochs = cfg.amn_epochs;
        ac.learning_rate = cfg.amn_lr;
        ac.momentum = 0.0; // keeps per-batch deltas attributable
        ac.record_ledger = true;
        ac.seed = mix_seed(seed, 6);
        run.amn = nn::train(nn::make_model(spec, mix_seed(seed, 5)), run.mix, ac);
        run.amn_acc_before = nn::accuracy(run.amn->model, dataset.test);
    }
    return run;
}

// --- hyperparameter tuning: largest update keeping the normal-control
// drop within tune_max_drop ---

struct TunedParams {
    double tau = 0.0;
    double lambda = 0.0;
    bool found = false;
};

inline unlearn::Hyperparams method_hp(const HarnessConfig& cfg, unlearn::Method m,
                                      const TunedParams& t, std::uint64_t seed) {
    unlearn::Hyperparams hp = cfg.hp;
    hp.tau = t.tau;
    hp.steps = m == unlearn::Method::NegGrad ? cfg.neg_steps : 1;
    hp.lambda = t.lambda;
    hp.rounds = cfg.rounds;
    hp.seed = mix_seed(seed, 7);
    return hp;
}

inline TunedParams tune_method(const HarnessConfig& cfg, unlearn::Method method,
                               const nn::Model& model, double acc0,
                               const data::LabeledDataset& control,
                               const data::LabeledDataset& retained,
                               const data::LabeledDataset& test, std::uint64_t seed) {
    TunedParams best;
    if (method == unlearn::Method::Amnesiac) {
        best.found = true; // hyperparameter-free
        return best;
    }
    unlearn::UnlearnContext ctx{&retained, nullptr, nullptr};
    if (method == unlearn::Method::SecondOrder) {
        for (double lam : cfg.lambda_grid) { // descending: smaller lambda = stronger update
            TunedParams cand{0.0, lam, true};
            auto hp = method_hp(cfg, method, cand, seed);
            auto m = unlearn::apply_method(model, method, control, hp, ctx);
            if (acc0 - nn::accuracy(m, test) <= cfg.tune_max_drop)
                best = cand;
            else
                break;
        }
        return best;
    }
    const auto& grid =
        method == unlearn::Method::FirstOrder ? cfg.tau_grid_first : cfg.tau_grid_neg;
    for (double tau : grid) { // ascending: larger tau = stronger update
        TunedParams cand{tau, cfg.hp.lambda, true};
        auto hp = method_hp(cfg, method, cand, seed);
        auto m = unlearn::apply_method(model, method, control, hp, ctx);
        if (acc0 - nn::accuracy(m, test) <= cfg.tune_max_drop)
            best = cand;
        else
            break;
    }
    return best;
}

// --- scenario runner ---

inline std::vector<report::Row> seed_rows(const HarnessConfig& cfg, const LoadedData& dataset,
                                          std::uint64_t seed) {
    const bool want_amnesiac =
        std::count(cfg.scenario.methods.begin(), cfg.scenario.methods.end(),
                   unlearn::Method::Amnesiac) > 0;
    SeedRun run = prepare_seed(cfg, dataset, seed, want_amnesiac);

    std::vector<report::Row> rows;
    report::Row base;
    base.scenario = cfg.scenario.name();
    base.dataset = cfg.scenario.dataset;
    base.seed = seed;
    base.acc_before = run.acc_before;
    rows.push_back(base); // before-unlearning row (method empty)

    auto digests = data::digest_table(run.mix);
    for (auto method : cfg.scenario.methods) {
        report::Row row = base;
        row.method = unlearn::method_name(method);
        try {
            const bool amnesiac = method == unlearn::Method::Amnesiac;
            const nn::Model& model = amnesiac ? run.amn->model : run.model;
            const double acc0 = amnesiac ? run.amn_acc_before : run.acc_before;
            row.acc_before = acc0;

            unlearn::verify_request(run.control, digests);
            unlearn::verify_request(run.informative, digests);

            TunedParams tuned = tune_method(cfg, method, model, acc0, run.control, run.retained,
                                            dataset.test, seed);
            require(tuned.found, ErrorKind::Config,
                    std::string("no stable hyperparameter for ") + unlearn::method_name(method));
            auto hp = method_hp(cfg, method, tuned, seed);

            std::set<std::int64_t> known_ids(run.mix.ids.begin(), run.mix.ids.end());
            unlearn::UnlearnContext ctx{&run.retained, run.amn ? &*run.amn->ledger : nullptr,
                                        &known_ids};

            auto [mn, rep_n] = unlearn::multi_round(model, method, run.control, hp, ctx,
                                                    dataset.test, run.retained);
            auto [mi, rep_i] = unlearn::multi_round(model, method, run.informative, hp, ctx,
                                                    dataset.test, run.retained);
            for (int r = 0; r < hp.rounds; ++r) {
                report::Row rr = row;
                rr.round = r + 1;
                rr.acc_after_normal = rep_n.round_test_acc[r];
                rr.acc_after_informative = rep_i.round_test_acc[r];
                rr.drop_normal = rr.acc_before - rr.acc_after_normal;
                rr.drop_informative = rr.acc_before - rr.acc_after_informative;
                rows.push_back(rr);
            }
        } catch (const std::exception& e) {
            row.status = std::string("failed: ") + e.what();
            rows.push_back(row);
        }
    }
    return rows;
}

inline report::ExperimentReport run_scenario(const HarnessConfig& cfg) {
    report::ExperimentReport rep;
    rep.config_digest = cfg.digest();
    if (cfg.scenario.seeds.empty()) return rep;
    LoadedData dataset = load_dataset(cfg.scenario.dataset, cfg);
    if (cfg.test_subset < dataset.test.size()) {
        auto idx = data::stratified_sample(dataset.test, cfg.test_subset, 0x7e57);
        dataset.test = dataset.test.select(idx);
    }

    std::vector<std::vector<report::Row>> per_seed(cfg.scenario.seeds.size());
    const int lanes = std::max(1, cfg.parallel_seeds);
    for (std::size_t at = 0; at < cfg.scenario.seeds.size(); at += lanes) {
        std::vector<std::future<std::vector<report::Row>>> wave;
        for (std::size_t k = at; k < std::min(cfg.scenario.seeds.size(), at + lanes); ++k)
            wave.push_back(std::async(std::launch::async, [&, k] {
                return seed_rows(cfg, dataset, cfg.scenario.seeds[k]);
            }));
        for (std::size_t k = 0; k < wave.size(); ++k) per_seed[at + k] = wave[k].get();
    }
    for (auto& rows : per_seed)
        rep.rows.insert(rep.rows.end(), rows.begin(), rows.end());
    return rep;
}

// Trains on the clean subset only (no injection) and unlearns a normal
// forget set of the size the scenario would inject.
inline report::ExperimentReport retrain_baseline(const HarnessConfig& cfg) {
    report::ExperimentReport rep;
    rep.config_digest = cfg.digest();
    if (cfg.scenario.seeds.empty()) return rep;
    LoadedData dataset = load_dataset(cfg.scenario.dataset, cfg);
    if (cfg.test_subset < dataset.test.size()) {
        auto idx = data::stratified_sample(dataset.test, cfg.test_subset, 0x7e57);
        dataset.test = dataset.test.select(idx);
    }
    const int classes = 10;
    const std::size_t forget_size =
        cfg.scenario.injection_count > 0 ? std::size_t(cfg.scenario.injection_count)
                                         : std::size_t(cfg.scenario.ipc) * classes;
    const bool want_amnesiac =
        std::count(cfg.scenario.methods.begin(), cfg.scenario.methods.end(),
                   unlearn::Method::Amnesiac) > 0;

    for (auto seed : cfg.scenario.seeds) {
        auto sub_idx = data::stratified_sample(dataset.train,
                                               std::min(cfg.train_subset, dataset.train.size()),
                                               mix_seed(seed, 1));
        auto subset = dataset.train.select(sub_idx);
        auto control_idx = data::stratified_sample(subset, forget_size, mix_seed(seed, 3));
        subset.tags.assign(subset.size(), "bulk");
        for (auto i : control_idx) subset.tags[i] = "control";
        auto control = subset.select(control_idx);
        std::vector<std::size_t> retained_idx;
        for (std::size_t i = 0; i < subset.size(); ++i)
            if (subset.tags[i] == "bulk") retained_idx.push_back(i);
        auto retained = subset.select(retained_idx);

        const auto spec = model_spec(cfg, dataset.train);
        nn::TrainConfig tc;
        tc.epochs = cfg.epochs;
        tc.batch_size = cfg.batch_size;
        tc.learning_rate = cfg.lr;
        tc.momentum = cfg.momentum;
        tc.seed = mix_seed(seed, 4);
        tc.partition = nn::BatchPartition::SegregatedByTag;
        auto trained = nn::train(nn::make_model(spec, mix_seed(seed, 5)), subset, tc);
        const double acc0 = nn::accuracy(trained.model, dataset.test);

        std::optional<nn::TrainResult> amn;
        double amn_acc0 = 0.0;
        if (want_amnesiac) {
            nn::TrainConfig ac = tc;
            ac.epochs = cfg.amn_epochs;
            ac.learning_rate = cfg.amn_lr;
            ac.momentum = 0.0;
            ac.record_ledger = true;
            ac.seed = mix_seed(seed, 6);
            amn = nn::train(nn::make_model(spec, mix_seed(seed, 5)), subset, ac);
            amn_acc0 = nn::accuracy(amn->model, dataset.test);
        }

        report::Row base;
        base.scenario = "retrain";
        base.dataset = cfg.scenario.dataset;
        base.seed = seed;
        base.acc_before = acc0;
        rep.rows.push_back(base);

        std::set<std::int64_t> known_ids(subset.ids.begin(), subset.ids.end());
        for (auto method : cfg.scenario.methods) {
            report::Row row = base;
            row.method = unlearn::method_name(method);
            try {
                const bool amnesiac = method == unlearn::Method::Amnesiac;
                const nn::Model& model = amnesiac ? amn->model : trained.model;
                row.acc_before = amnesiac ? amn_acc0 : acc0;
                TunedParams tuned = tune_method(cfg, method, model, row.acc_before, control,
                                                retained, dataset.test, seed);
                require(tuned.found, ErrorKind::Config,
                        std::string("no stable hyperparameter for ") +
                            unlearn::method_name(method));
                auto hp = method_hp(cfg, method, tuned, seed);
                unlearn::UnlearnContext ctx{&retained, amn ? &*amn->ledger : nullptr, &known_ids};
                auto [m, r] = unlearn::multi_round(model, method, control, hp, ctx, dataset.test,
                                                   retained);
                row.round = 1;
                row.acc_after_normal = r.acc_test_after;
                row.drop_normal = row.acc_before - row.acc_after_normal;
            } catch (const std::exception& e) {
                row.status = std::string("failed: ") + e.what();
            }
            rep.rows.push_back(row);
        }
    }
    return rep;
}

// --- detector bench (defend verb) ---

struct DefendOutcome {
    // BadNets calibration control
    double badnets_asr = 0.0;
    detect::DetectionReport badnets_spectral, badnets_que, badnets_strip;
    // informative-data evasion, same threshold policy
    detect::DetectionReport inf_spectral, inf_que, inf_strip;
    bool sanity_spectral = false, sanity_que = false, sanity_strip = false;
    report::ExperimentReport report;
};

namespace detail {

inline detect::DetectionReport score_report(const std::string& name, detect::ScoreMap scores,
                                            std::set<std::int64_t> flagged,
                                            const std::set<std::int64_t>& attack,
                                            const std::set<std::int64_t>& population) {
    detect::DetectionReport rep;
    rep.detector = name;
    rep.scores = std::move(scores);
    rep.flagged = std::move(flagged);
    rep.attack_ids = attack;
    auto [tpr, fpr] = detect::tpr_fpr(rep.flagged, attack, population);
    rep.tpr = tpr;
    rep.fpr = fpr;
    return rep;
}

struct DetectorTriple {
    detect::DetectionReport spectral, que, strip;
};

inline DetectorTriple run_detectors(const HarnessConfig& cfg, const nn::Model& model,
                                    const data::LabeledDataset& population_ds,
                                    const std::set<std::int64_t>& attack,
                                    const data::LabeledDataset& clean_pool, double expected_rate,
                                    std::uint64_t seed) {
    std::set<std::int64_t> population(population_ds.ids.begin(), population_ds.ids.end());
    auto reps = detect::extract_representations(model, population_ds);

    auto ss = detect::spectral_signature_scores(reps);
    auto ss_fl = detect::flag_top_scores(reps, ss, expected_rate);

    detect::QueOptions qo;
    qo.alpha = cfg.que_alpha;
    qo.clean_fraction = cfg.que_clean_fraction;
    auto qs = detect::que_scores(reps, qo);
    auto qs_fl = detect::flag_top_scores(reps, qs, expected_rate);

    auto cand = detect::strip_entropy(model, population_ds, clean_pool, cfg.strip_overlays,
                                      mix_seed(seed, 0x51));
    auto pool_scores = detect::strip_entropy(model, clean_pool, clean_pool, cfg.strip_overlays,
                                             mix_seed(seed, 0x52));
    const double thr = detect::strip_threshold(pool_scores, cfg.strip_fpr);
    auto strip_fl = detect::flag_below(cand, thr);

    DetectorTriple out{
        score_report("spectral-signature", std::move(ss), std::move(ss_fl), attack, population),
        score_report("que", std::move(qs), std::move(qs_fl), attack, population),
        score_report("strip", std::move(cand), std::move(strip_fl), attack, population)};
    out.strip.threshold = thr;
    return out;
}

} // namespace detail

// BadNets calibration first; the informative-evasion numbers only count when
// the detector clears TPR >= 0.8 at FPR <= 0.15 on that control.
inline DefendOutcome run_defend(const HarnessConfig& cfg) {
    DefendOutcome out;
    out.report.config_digest = cfg.digest();
    LoadedData dataset = load_dataset(cfg.scenario.dataset, cfg);
    if (cfg.test_subset < dataset.test.size()) {
        auto idx = data::stratified_sample(dataset.test, cfg.test_subset, 0x7e57);
        dataset.test = dataset.test.select(idx);
    }
    const std::uint64_t seed = cfg.scenario.seeds.empty() ? 1 : cfg.scenario.seeds.front();
    auto pool_idx = data::stratified_sample(dataset.test,
                                            std::min<std::size_t>(500, dataset.test.size()),
                                            mix_seed(seed, 0x50));
    auto clean_pool = dataset.test.select(pool_idx);

    // BadNets control on the clean desk subset
    auto sub_idx = data::stratified_sample(dataset.train,
                                           std::min(cfg.train_subset, dataset.train.size()),
                                           mix_seed(seed, 1));
    auto subset = dataset.train.select(sub_idx);
    auto trig = data::default_trigger(subset.images.dim(2), subset.images.dim(3),
                                      cfg.trigger_target, cfg.trigger_rate);
    auto [poisoned, poison_ids] = data::apply_trigger(subset, trig, mix_seed(seed, 0x53));
    const auto spec = model_spec(cfg, dataset.train);
    nn::TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.learning_rate = cfg.lr;
    tc.momentum = cfg.momentum;
    tc.seed = mix_seed(seed, 0x54);
    auto pm = nn::train(nn::make_model(spec, mix_seed(seed, 0x55)), poisoned, tc).model;
    out.badnets_asr = nn::accuracy(pm, data::make_triggered_eval(dataset.test, trig));

    auto bt = detail::run_detectors(cfg, pm, poisoned, poison_ids, clean_pool, cfg.trigger_rate,
                                    seed);
    out.badnets_spectral = std::move(bt.spectral);
    out.badnets_que = std::move(bt.que);
    out.badnets_strip = std::move(bt.strip);
    auto sane = [](const detect::DetectionReport& r) { return r.tpr >= 0.8 && r.fpr <= 0.15; };
    out.sanity_spectral = sane(out.badnets_spectral);
    out.sanity_que = sane(out.badnets_que);
    out.sanity_strip = sane(out.badnets_strip);

    // informative-injection run under the identical threshold policy
    SeedRun run = prepare_seed(cfg, dataset, seed, /*want_amnesiac=*/false);
    std::set<std::int64_t> iids(run.informative.ids.begin(), run.informative.ids.end());
    const double exp_rate = double(run.informative.size()) / double(run.mix.size());
    auto it = detail::run_detectors(cfg, run.model, run.mix, iids, clean_pool, exp_rate, seed);
    out.inf_spectral = std::move(it.spectral);
    out.inf_que = std::move(it.que);
    out.inf_strip = std::move(it.strip);
    out.inf_spectral.sanity_passed = out.sanity_spectral;
    out.inf_que.sanity_passed = out.sanity_que;
    out.inf_strip.sanity_passed = out.sanity_strip;

    report::Row row;
    row.scenario = cfg.scenario.name();
    row.dataset = cfg.scenario.dataset;
    row.method = "detector-bench";
    row.seed = seed;
    row.acc_before = run.acc_before;
    row.tpr_spectral = out.inf_spectral.tpr;
    row.tpr_que = out.inf_que.tpr;
    row.tpr_strip = out.inf_strip.tpr;
    if (!(out.sanity_spectral && out.sanity_que && out.sanity_strip))
        row.status = "failed: detector sanity gate (BadNets control)";
    out.report.rows.push_back(row);
    report::Row ctrl = row;
    ctrl.method = "detector-badnets-control";
    ctrl.tpr_spectral = out.badnets_spectral.tpr;
    ctrl.tpr_que = out.badnets_que.tpr;
    ctrl.tpr_strip = out.badnets_strip.tpr;
    ctrl.status = "ok";
    out.report.rows.push_back(ctrl);
    return out;
}

// --- budget verb: perturbation budgets on a never-exposed probe model ---

struct BudgetOutcome {
    unlearn::BudgetResult normal, informative;
    double mean_normal = 0.0, mean_informative = 0.0, ratio = 0.0;
    double closed_fraction = 0.0; // samples whose final gap <= 10% of initial
    report::ExperimentReport report;
    SeedRun run; // reusable artifacts
    nn::Model unseen;
};

inline BudgetOutcome run_budget(const HarnessConfig& cfg) {
    BudgetOutcome out;
    out.report.config_digest = cfg.digest();
    LoadedData dataset = load_dataset(cfg.scenario.dataset, cfg);
    if (cfg.test_subset < dataset.test.size()) {
        auto idx = data::stratified_sample(dataset.test, cfg.test_subset, 0x7e57);
        dataset.test = dataset.test.select(idx);
    }
    const std::uint64_t seed = cfg.scenario.seeds.empty() ? 1 : cfg.scenario.seeds.front();
    out.run = prepare_seed(cfg, dataset, seed, /*want_amnesiac=*/false);

    // the probe model never saw the control or the informative samples
    nn::TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.learning_rate = cfg.lr;
    tc.momentum = cfg.momentum;
    tc.seed = mix_seed(seed, 0x61);
    out.unseen = nn::train(nn::make_model(model_spec(cfg, dataset.train), mix_seed(seed, 0x62)),
                           out.run.retained, tc)
                     .model;

    out.normal = unlearn::budget_analysis(out.run.model, out.unseen, out.run.control, cfg.budget);
    out.informative =
        unlearn::budget_analysis(out.run.model, out.unseen, out.run.informative, cfg.budget);
    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / double(v.size());
    };
    out.mean_normal = mean(out.normal.budgets);
    out.mean_informative = mean(out.informative.budgets);
    out.ratio = out.mean_normal > 0 ? out.mean_informative / out.mean_normal : 0.0;
    std::size_t closed = 0, total = 0;
    for (const auto* b : {&out.normal, &out.informative})
        for (std::size_t i = 0; i < b->budgets.size(); ++i, ++total)
            if (std::abs(b->final_gap[i]) <= std::max(0.10 * std::abs(b->initial_gap[i]), 1e-9))
                ++closed;
    out.closed_fraction = total ? double(closed) / double(total) : 0.0;

    report::Row row;
    row.scenario = cfg.scenario.name();
    row.dataset = cfg.scenario.dataset;
    row.method = "budget";
    row.seed = seed;
    row.acc_before = out.run.acc_before;
    row.budget_mean_normal = out.mean_normal;
    row.budget_mean_informative = out.mean_informative;
    out.report.rows.push_back(row);
    return out;
}

// --- cost monitor over an unlearning-request population ---

struct MonitorOutcome {
    detect::MonitorReport report;
    int normal_requests = 0, informative_requests = 0;
    int flagged_normal = 0, flagged_informative = 0;
};

inline MonitorOutcome run_monitor(const HarnessConfig& cfg, const SeedRun& run,
                                  const nn::Model& unseen) {
    MonitorOutcome out;
    const int rs = cfg.monitor_request_size;
    std::vector<unlearn::UnlearnRequest> requests;

    Rng rng(mix_seed(run.seed, 0x63));
    std::vector<std::size_t> bulk_idx;
    for (std::size_t i = 0; i < run.mix.size(); ++i)
        if (run.mix.tags[i] == "bulk") bulk_idx.push_back(i);
    rng.shuffle(bulk_idx);
    require(bulk_idx.size() >= std::size_t(cfg.monitor_normal_requests) * rs, ErrorKind::Config,
            "monitor: not enough bulk samples for the request population");
    for (int r = 0; r < cfg.monitor_normal_requests; ++r) {
        std::vector<std::size_t> take(bulk_idx.begin() + std::size_t(r) * rs,
                                      bulk_idx.begin() + std::size_t(r + 1) * rs);
        unlearn::UnlearnRequest q;
        q.forget = run.mix.select(take);
        requests.push_back(std::move(q));
    }
    out.normal_requests = cfg.monitor_normal_requests;
    const int inf_requests = int(run.informative.size()) / rs;
    for (int r = 0; r < inf_requests; ++r) {
        std::vector<std::size_t> take;
        for (int j = 0; j < rs; ++j) take.push_back(std::size_t(r) * rs + j);
        unlearn::UnlearnRequest q;
        q.forget = run.informative.select(take);
        requests.push_back(std::move(q));
    }
    out.informative_requests = inf_requests;

    detect::MonitorConfig mc;
    mc.statistic = cfg.monitor_statistic;
    mc.k = cfg.monitor_k;
    mc.budget_opts = cfg.budget;
    mc.hp = cfg.hp;
    detect::MonitorInputs in;
    in.model = &run.model;
    in.unseen_model = &unseen;
    in.retained = &run.retained;
    out.report = detect::unlearning_cost_monitor(requests, mc, in);
    for (auto idx : out.report.flagged)
        (int(idx) < cfg.monitor_normal_requests ? out.flagged_normal : out.flagged_informative)++;
    return out;
}

} // namespace ulab::harness
