#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "ulab/io.hpp"

namespace ulab::report {

inline constexpr const char* kToolVersion = "unlearn-lab 0.1.0";

// One row per (scenario, dataset, method, seed, round). Optional statistics
// stay NaN when a stage did not run; the CSV writes them as empty cells.
struct Row {
    std::string scenario;
    std::string dataset;
    std::string method; // empty when no unlearning ran
    std::uint64_t seed = 0;
    int round = 0;
    double acc_before = NAN;
    double acc_after_normal = NAN;
    double acc_after_informative = NAN;
    double drop_normal = NAN;
    double drop_informative = NAN;
    double budget_mean_normal = NAN;
    double budget_mean_informative = NAN;
    double tpr_spectral = NAN;
    double tpr_que = NAN;
    double tpr_strip = NAN;
    std::string status = "ok";
};

struct ExperimentReport {
    std::vector<Row> rows;
    std::string config_digest;
    std::string tool_version = kToolVersion;
};

inline const std::vector<std::string>& csv_columns() {
    static const std::vector<std::string> cols = {
        "scenario",          "dataset",
        "method",            "seed",
        "round",             "acc_before",
        "acc_after_normal",  "acc_after_informative",
        "drop_normal",       "drop_informative",
        "budget_mean_normal", "budget_mean_informative",
        "tpr_spectral",      "tpr_que",
        "tpr_strip",         "status"};
    return cols;
}

namespace detail {

inline std::string num(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double num_from(const std::string& s) { return s.empty() ? NAN : std::stod(s); }

} // namespace detail

inline void emit_csv(const ExperimentReport& rep, const std::string& path) {
    auto os = io::open_out(path, /*binary=*/false);
    os << "# config_digest=" << rep.config_digest << " tool_version=" << rep.tool_version << "\n";
    const auto& cols = csv_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << "\n";
    for (const Row& r : rep.rows) {
        os << r.scenario << "," << r.dataset << "," << r.method << "," << r.seed << "," << r.round
           << "," << detail::num(r.acc_before) << "," << detail::num(r.acc_after_normal) << ","
           << detail::num(r.acc_after_informative) << "," << detail::num(r.drop_normal) << ","
           << detail::num(r.drop_informative) << "," << detail::num(r.budget_mean_normal) << ","
           << detail::num(r.budget_mean_informative) << "," << detail::num(r.tpr_spectral) << ","
           << detail::num(r.tpr_que) << "," << detail::num(r.tpr_strip) << "," << r.status << "\n";
    }
    require(os.good(), ErrorKind::Io, "report write failed: " + path);
}

inline nlohmann::ordered_json row_to_json(const Row& r) {
    nlohmann::ordered_json j;
    j["scenario"] = r.scenario;
    j["dataset"] = r.dataset;
    j["method"] = r.method;
    j["seed"] = r.seed;
    j["round"] = r.round;
    auto put = [&](const char* k, double v) {
        if (std::isnan(v))
            j[k] = nullptr;
        else
            j[k] = detail::num(v); // string keeps serialization byte-stable
    };
    put("acc_before", r.acc_before);
    put("acc_after_normal", r.acc_after_normal);
    put("acc_after_informative", r.acc_after_informative);
    put("drop_normal", r.drop_normal);
    put("drop_informative", r.drop_informative);
    put("budget_mean_normal", r.budget_mean_normal);
    put("budget_mean_informative", r.budget_mean_informative);
    put("tpr_spectral", r.tpr_spectral);
    put("tpr_que", r.tpr_que);
    put("tpr_strip", r.tpr_strip);
    j["status"] = r.status;
    return j;
}

inline void emit_json(const ExperimentReport& rep, const std::string& path) {
    nlohmann::ordered_json j;
    j["tool_version"] = rep.tool_version;
    j["config_digest"] = rep.config_digest;
    j["rows"] = nlohmann::ordered_json::array();
    for (const Row& r : rep.rows) j["rows"].push_back(row_to_json(r));
    auto os = io::open_out(path, /*binary=*/false);
    os << j.dump(2) << "\n";
    require(os.good(), ErrorKind::Io, "report write failed: " + path);
}

inline void emit_report(const ExperimentReport& rep, const std::string& format,
                        const std::string& path) {
    if (format == "csv")
        emit_csv(rep, path);
    else if (format == "json")
        emit_json(rep, path);
    else
        fail(ErrorKind::Config, "unknown report format: " + format + " (expected csv|json)");
}

inline ExperimentReport parse_json(const std::string& path) {
    auto is = io::open_in(path, /*binary=*/false);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Format, std::string("bad report json: ") + e.what());
    }
    ExperimentReport rep;
    rep.tool_version = j.value("tool_version", "");
    rep.config_digest = j.value("config_digest", "");
    auto get = [&](const nlohmann::json& row, const char* k) {
        if (!row.contains(k) || row[k].is_null()) return double(NAN);
        return std::stod(row[k].get<std::string>());
    };
    for (const auto& row : j.at("rows")) {
        Row r;
        r.scenario = row.at("scenario");
        r.dataset = row.at("dataset");
        r.method = row.at("method");
        r.seed = row.at("seed");
        r.round = row.at("round");
        r.acc_before = get(row, "acc_before");
        r.acc_after_normal = get(row, "acc_after_normal");
        r.acc_after_informative = get(row, "acc_after_informative");
        r.drop_normal = get(row, "drop_normal");
        r.drop_informative = get(row, "drop_informative");
        r.budget_mean_normal = get(row, "budget_mean_normal");
        r.budget_mean_informative = get(row, "budget_mean_informative");
        r.tpr_spectral = get(row, "tpr_spectral");
        r.tpr_que = get(row, "tpr_que");
        r.tpr_strip = get(row, "tpr_strip");
        r.status = row.at("status");
        rep.rows.push_back(std::move(r));
    }
    return rep;
}

} // namespace ulab::report
