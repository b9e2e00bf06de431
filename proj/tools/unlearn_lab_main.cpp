#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "ulab/harness.hpp"

using namespace ulab;

namespace {

harness::HarnessConfig load_config(const std::string& path, std::uint64_t seed_override,
                                   bool has_seed) {
    harness::HarnessConfig cfg =
        path.empty() ? harness::HarnessConfig{} : harness::HarnessConfig::from_file(path);
    if (has_seed) cfg.scenario.seeds = {seed_override};
    return cfg;
}

std::string format_from(const std::string& fmt, const std::string& out) {
    if (!fmt.empty()) return fmt;
    return out.ends_with(".csv") ? "csv" : "json";
}

int cmd_train(const harness::HarnessConfig& cfg, const std::string& out, bool with_ledger) {
    auto dataset = harness::load_dataset(cfg.scenario.dataset, cfg);
    const std::uint64_t seed = cfg.scenario.seeds.empty() ? 1 : cfg.scenario.seeds.front();
    auto sub_idx = data::stratified_sample(dataset.train,
                                           std::min(cfg.train_subset, dataset.train.size()),
                                           mix_seed(seed, 1));
    auto subset = dataset.train.select(sub_idx);
    nn::TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.learning_rate = cfg.lr;
    tc.momentum = cfg.momentum;
    tc.seed = mix_seed(seed, 4);
    tc.record_ledger = with_ledger;
    auto res = nn::train(nn::make_model(harness::model_spec(cfg, dataset.train),
                                        mix_seed(seed, 5)),
                         subset, tc);
    nn::save_checkpoint(out, res.model, seed);
    if (with_ledger) nn::save_ledger(out + ".ledger", *res.ledger);
    std::cout << "trained " << cfg.scenario.dataset << " subset=" << subset.size()
              << " train_acc=" << nn::accuracy(res.model, subset)
              << " test_acc=" << nn::accuracy(res.model, dataset.test) << "\n"
              << "checkpoint: " << out << "\n";
    return 0;
}

int cmd_condense(const harness::HarnessConfig& cfg, const std::string& out) {
    auto dataset = harness::load_dataset(cfg.scenario.dataset, cfg);
    const std::uint64_t seed = cfg.scenario.seeds.empty() ? 1 : cfg.scenario.seeds.front();
    auto run = harness::prepare_seed(cfg, dataset, seed, /*want_amnesiac=*/false);
    condense::save_synthetic(out, run.syn);
    std::cout << "condensed " << run.syn.images.dim(0) << " images (ipc=" << run.syn.ipc
              << ") probe_mmd " << run.syn.probe_trace.front() << " -> "
              << run.syn.probe_trace.back() << "\n"
              << "synthetic set: " << out << "\n"
              << "model-with-injection test_acc=" << run.acc_before << "\n";
    return 0;
}

int cmd_attack(const harness::HarnessConfig& cfg, const std::string& out, const std::string& fmt,
               bool baseline) {
    auto rep = baseline ? harness::retrain_baseline(cfg) : harness::run_scenario(cfg);
    report::emit_report(rep, format_from(fmt, out), out);
    std::cout << (baseline ? "retrain baseline: " : "scenario run: ") << rep.rows.size()
              << " rows -> " << out << "\n";
    for (const auto& r : rep.rows) {
        if (r.method.empty()) continue;
        std::cout << "  " << r.scenario << " seed=" << r.seed << " " << r.method;
        if (!std::isnan(r.drop_normal)) std::cout << " drop_normal=" << r.drop_normal;
        if (!std::isnan(r.drop_informative))
            std::cout << " drop_informative=" << r.drop_informative;
        if (r.status != "ok") std::cout << " [" << r.status << "]";
        std::cout << "\n";
    }
    return 0;
}

int cmd_defend(const harness::HarnessConfig& cfg, const std::string& out, const std::string& fmt,
               const std::string& scores_dir) {
    auto res = harness::run_defend(cfg);
    report::emit_report(res.report, format_from(fmt, out), out);
    if (!scores_dir.empty()) {
        std::filesystem::create_directories(scores_dir);
        std::map<std::int64_t, int> labels; // filled per dump below
        auto dump = [&](const detect::DetectionReport& r, const std::string& name) {
            detect::save_scores_csv(scores_dir + "/" + name + ".csv", r, labels);
        };
        dump(res.badnets_spectral, "badnets_spectral");
        dump(res.badnets_que, "badnets_que");
        dump(res.badnets_strip, "badnets_strip");
        dump(res.inf_spectral, "informative_spectral");
        dump(res.inf_que, "informative_que");
        dump(res.inf_strip, "informative_strip");
    }
    std::cout << "badnets control: asr=" << res.badnets_asr
              << " ss(tpr=" << res.badnets_spectral.tpr << ",fpr=" << res.badnets_spectral.fpr
              << ") que(tpr=" << res.badnets_que.tpr << ",fpr=" << res.badnets_que.fpr
              << ") strip(tpr=" << res.badnets_strip.tpr << ",fpr=" << res.badnets_strip.fpr
              << ")\n";
    std::cout << "informative evasion: ss_tpr=" << res.inf_spectral.tpr
              << " que_tpr=" << res.inf_que.tpr << " strip_tpr=" << res.inf_strip.tpr
              << (res.sanity_spectral && res.sanity_que && res.sanity_strip
                      ? ""
                      : "  [detector sanity gate FAILED]")
              << "\nreport: " << out << "\n";
    return 0;
}

int cmd_budget(const harness::HarnessConfig& cfg, const std::string& out, const std::string& fmt,
               bool with_monitor) {
    auto res = harness::run_budget(cfg);
    if (with_monitor) {
        auto mon = harness::run_monitor(cfg, res.run, res.unseen);
        report::Row row;
        row.scenario = cfg.scenario.name();
        row.dataset = cfg.scenario.dataset;
        row.method = "cost-monitor";
        row.seed = res.run.seed;
        row.status = "flagged " + std::to_string(mon.flagged_normal) + "/" +
                     std::to_string(mon.normal_requests) + " normal, " +
                     std::to_string(mon.flagged_informative) + "/" +
                     std::to_string(mon.informative_requests) + " informative";
        res.report.rows.push_back(row);
        std::cout << "monitor: " << row.status << "\n";
    }
    report::emit_report(res.report, format_from(fmt, out), out);
    std::cout << "budget: normal=" << res.mean_normal << " informative=" << res.mean_informative
              << " ratio=" << res.ratio << " gap_closed=" << res.closed_fraction
              << "\nreport: " << out << "\n";
    return 0;
}

int cmd_report(const std::string& in, const std::string& out, const std::string& fmt) {
    auto rep = report::parse_json(in);
    report::emit_report(rep, format_from(fmt, out), out);
    std::cout << "converted " << rep.rows.size() << " rows -> " << out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale laboratory for unlearning usability attacks"};
    app.require_subcommand(1);

    std::string config_path, out, fmt, in_path, scores_dir;
    std::uint64_t seed = 0;
    bool with_ledger = false, baseline = false, with_monitor = true;
    std::vector<CLI::Option*> seed_opts;

    auto add_common = [&](CLI::App* c, const char* default_out) {
        c->add_option("--config", config_path, "config file (JSON key-value tree)");
        seed_opts.push_back(c->add_option("--seed", seed, "override the seed list"));
        c->add_option("--out", out, "output path")->default_val(default_out);
        c->add_option("--format", fmt, "report format: csv | json");
    };

    auto* t = app.add_subcommand("train", "train the desk model on the configured dataset");
    add_common(t, "model.ckpt");
    t->add_flag("--ledger", with_ledger, "record the per-batch update ledger");

    auto* c = app.add_subcommand("condense", "synthesize the informative benign set");
    add_common(c, "synthetic.bin");

    auto* a = app.add_subcommand("attack", "run the configured unlearning scenario");
    add_common(a, "report.json");
    a->add_flag("--baseline", baseline, "retrain baseline without injection");

    auto* d = app.add_subcommand("defend", "poisoning-detector bench with BadNets control");
    add_common(d, "defend.json");
    d->add_option("--scores-dir", scores_dir, "directory for per-sample score CSV dumps");

    auto* b = app.add_subcommand("budget", "per-sample unlearning budgets and cost monitor");
    add_common(b, "budget.json");
    b->add_flag("--monitor,!--no-monitor", with_monitor, "run the cost monitor");

    auto* r = app.add_subcommand("report", "convert a JSON report");
    r->add_option("--in", in_path, "input report (json)")->required();
    r->add_option("--out", out, "output path")->default_val("report.csv");
    r->add_option("--format", fmt, "csv | json");
    r->add_option("--seed", seed, "ignored; accepted for interface uniformity");

    CLI11_PARSE(app, argc, argv);

    try {
        const bool has_seed = app.count_all("--seed") > 0 && !r->parsed();
        if (t->parsed()) return cmd_train(load_config(config_path, seed, has_seed), out, with_ledger);
        if (c->parsed()) return cmd_condense(load_config(config_path, seed, has_seed), out);
        if (a->parsed())
            return cmd_attack(load_config(config_path, seed, has_seed), out, fmt, baseline);
        if (d->parsed())
            return cmd_defend(load_config(config_path, seed, has_seed), out, fmt, scores_dir);
        if (b->parsed())
            return cmd_budget(load_config(config_path, seed, has_seed), out, fmt, with_monitor);
        if (r->parsed()) return cmd_report(in_path, out, fmt);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
