#pragma once

#include <Eigen/Dense>

#include <map>
#include <set>
#include <string>
#include <vector>

#include "ulab/unlearn.hpp"

namespace ulab::detect {

// Per-class penultimate-layer activations with aligned sample ids.
struct RepresentationMatrix {
    struct ClassBlock {
        int label = 0;
        std::vector<std::int64_t> ids; // row-aligned
        Tensor rows;                   // n_c x d'
    };
    std::vector<ClassBlock> classes;
    std::size_t feature_dim = 0;
};

inline RepresentationMatrix extract_representations(const nn::Model& model,
                                                    const data::LabeledDataset& ds,
                                                    std::size_t chunk = 256) {
    RepresentationMatrix out;
    const int k = ds.class_count();
    out.classes.resize(k);
    for (int c = 0; c < k; ++c) out.classes[c].label = c;

    std::vector<std::vector<std::size_t>> by = ds.indices_by_class(k);
    for (int c = 0; c < k; ++c) {
        const auto& idx = by[c];
        std::vector<Tensor> parts;
        for (std::size_t b = 0; b < idx.size(); b += chunk) {
            std::vector<std::size_t> slice(idx.begin() + b,
                                           idx.begin() + std::min(idx.size(), b + chunk));
            parts.push_back(nn::penultimate_features(model, ds.images.rows(slice)));
        }
        auto& blk = out.classes[c];
        if (idx.empty()) {
            blk.rows = Tensor({0, model.spec.feature_dim()});
        } else {
            const std::size_t d = parts[0].dim(1);
            blk.rows = Tensor({idx.size(), d});
            std::size_t at = 0;
            for (const auto& p : parts) {
                std::copy(p.data.begin(), p.data.end(), blk.rows.data.begin() + at);
                at += p.data.size();
            }
        }
        for (std::size_t i : idx) blk.ids.push_back(ds.ids[i]);
        out.feature_dim = blk.rows.dim(1);
    }
    return out;
}

using ScoreMap = std::map<std::int64_t, double>;

// Spectral signature: per class, squared projection of centered rows onto the
// top right singular vector.
inline ScoreMap spectral_signature_scores(const RepresentationMatrix& reps) {
    ScoreMap scores;
    for (const auto& blk : reps.classes) {
        const std::size_t n = blk.rows.dim(0);
        if (n == 0) continue;
        require(n >= 2, ErrorKind::Config,
                "spectral signature needs >= 2 rows per class, class " +
                    std::to_string(blk.label) + " has " + std::to_string(n));
        const std::size_t d = blk.rows.dim(1);
        nn::MapCM M(blk.rows.ptr(), n, d);
        Eigen::RowVectorXd mean = M.colwise().mean();
        nn::MatRM centered = M.rowwise() - mean;
        Eigen::MatrixXd gram = centered.transpose() * centered;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
        if (eig.eigenvalues()(Eigen::last) <= 1e-12) { // all rows identical
            for (auto id : blk.ids) scores[id] = 0.0;
            continue;
        }
        Eigen::VectorXd v = eig.eigenvectors().col(d - 1);
        for (std::size_t i = 0; i < n; ++i) {
            const double p = centered.row(i).dot(v);
            scores[blk.ids[i]] = p * p;
        }
    }
    return scores;
}

namespace detail {

inline Eigen::MatrixXd expm_taylor(const Eigen::MatrixXd& a, int terms = 8) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Identity(a.rows(), a.cols());
    Eigen::MatrixXd term = out;
    for (int k = 1; k <= terms; ++k) {
        term = (term * a) / double(k);
        out += term;
    }
    return out;
}

} // namespace detail

struct QueOptions {
    double alpha = 4.0;           // >= 1; alpha = 1 reduces to the whitened norm
    double clean_fraction = 0.5;  // lowest-norm rows used for mean/covariance
    bool ridge_warning = false;   // set when the covariance needed regularization
};

// Quantum-entropy outlier scores per class. Rows are whitened against a
// clean-fraction estimate; the score interpolates from the plain whitened
// norm (alpha = 1) toward the top principal direction as alpha grows.
inline ScoreMap que_scores(const RepresentationMatrix& reps, QueOptions& opt) {
    require(opt.alpha >= 1.0, ErrorKind::Config, "que: alpha must be >= 1");
    require(opt.clean_fraction > 0.0 && opt.clean_fraction <= 1.0, ErrorKind::Config,
            "que: clean fraction must be in (0,1]");
    ScoreMap scores;
    for (const auto& blk : reps.classes) {
        const std::size_t n = blk.rows.dim(0);
        if (n == 0) continue;
        std::size_t d = blk.rows.dim(1);
        nn::MatRM rows = nn::MapCM(blk.rows.ptr(), n, d);

        // dimension-reduce when the class population is too small for a
        // stable covariance estimate
        if (n < d / 4) {
            const std::size_t kdim = std::max<std::size_t>(2, n / 4);
            Eigen::RowVectorXd mean = rows.colwise().mean();
            nn::MatRM centered = rows.rowwise() - mean;
            Eigen::MatrixXd gram = centered.transpose() * centered / double(n);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
            Eigen::MatrixXd basis = eig.eigenvectors().rightCols(kdim);
            rows = centered * basis;
            d = kdim;
        }

        Eigen::RowVectorXd mean_all = rows.colwise().mean();
        std::vector<std::pair<double, std::size_t>> by_norm(n);
        for (std::size_t i = 0; i < n; ++i)
            by_norm[i] = {(rows.row(i) - mean_all).squaredNorm(), i};
        std::stable_sort(by_norm.begin(), by_norm.end());
        const std::size_t n_clean = std::max<std::size_t>(2, std::size_t(opt.clean_fraction * n));

        Eigen::RowVectorXd mu = Eigen::RowVectorXd::Zero(d);
        for (std::size_t i = 0; i < n_clean; ++i) mu += rows.row(by_norm[i].second);
        mu /= double(n_clean);
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
        for (std::size_t i = 0; i < n_clean; ++i) {
            Eigen::RowVectorXd r = rows.row(by_norm[i].second) - mu;
            cov += r.transpose() * r;
        }
        cov /= double(n_clean);

        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
        Eigen::VectorXd evals = eig.eigenvalues();
        const double floor = 1e-6 * std::max(1.0, evals.maxCoeff());
        for (Eigen::Index i = 0; i < evals.size(); ++i)
            if (evals(i) < floor) {
                evals(i) = floor;
                opt.ridge_warning = true;
            }
        Eigen::MatrixXd whiten = eig.eigenvectors() *
                                 evals.cwiseSqrt().cwiseInverse().asDiagonal() *
                                 eig.eigenvectors().transpose();

        nn::MatRM xt = (rows.rowwise() - mu) * whiten;
        Eigen::RowVectorXd xt_mean = xt.colwise().mean();
        nn::MatRM xc = xt.rowwise() - xt_mean;
        Eigen::MatrixXd sigma = xc.transpose() * xc / double(n);

        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> seig(sigma);
        const double top = seig.eigenvalues()(Eigen::last);
        const double denom = std::max(top - 1.0, 1e-9);
        Eigen::MatrixXd q = detail::expm_taylor(
            (opt.alpha - 1.0) / denom * (sigma - Eigen::MatrixXd::Identity(d, d)));
        const double tr = q.trace();
        for (std::size_t i = 0; i < n; ++i) {
            const double raw = xt.row(i) * q * xt.row(i).transpose();
            scores[blk.ids[i]] = raw / tr;
        }
    }
    return scores;
}

// Strip: mean prediction entropy of candidates superimposed 50/50 with
// random clean partners. Triggered inputs keep low entropy.
inline ScoreMap strip_entropy(const nn::Model& model, const data::LabeledDataset& candidates,
                              const data::LabeledDataset& clean_pool, int n_overlays,
                              std::uint64_t seed) {
    require(n_overlays >= 1, ErrorKind::Config, "strip: need at least one overlay");
    require(clean_pool.size() > 0, ErrorKind::Config, "strip: empty clean pool");
    ScoreMap scores;
    const std::size_t img_sz = candidates.images.row_size();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        Rng rng(mix_seed(seed, 0x57f1, i));
        Tensor overlays(
            {std::size_t(n_overlays), candidates.images.dim(1), candidates.images.dim(2),
             candidates.images.dim(3)});
        for (int o = 0; o < n_overlays; ++o) {
            const std::size_t j = rng.index(clean_pool.size());
            const double* a = candidates.images.ptr() + i * img_sz;
            const double* b = clean_pool.images.ptr() + j * img_sz;
            double* dst = overlays.ptr() + std::size_t(o) * img_sz;
            for (std::size_t p = 0; p < img_sz; ++p) dst[p] = 0.5 * (a[p] + b[p]);
        }
        Tensor logits = nn::forward(model, overlays);
        const std::size_t k = logits.dim(1);
        double ent_sum = 0.0;
        for (int o = 0; o < n_overlays; ++o) {
            const double* row = logits.ptr() + std::size_t(o) * k;
            const double mx = *std::max_element(row, row + k);
            double z = 0.0;
            for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
            for (std::size_t j = 0; j < k; ++j) {
                const double p = std::exp(row[j] - mx) / z;
                if (p > 0.0) ent_sum -= p * std::log(p);
            }
        }
        scores[candidates.ids[i]] = ent_sum / double(n_overlays);
    }
    return scores;
}

// --- flagging policies and reporting ---

inline std::pair<double, double> tpr_fpr(const std::set<std::int64_t>& flagged,
                                         const std::set<std::int64_t>& attack,
                                         const std::set<std::int64_t>& population) {
    require(!attack.empty(), ErrorKind::UndefinedTpr, "tpr undefined for an empty attack set");
    for (auto id : attack)
        require(population.count(id), ErrorKind::Config, "attack ids must lie in the population");
    std::size_t tp = 0, fp = 0;
    for (auto id : flagged) {
        if (attack.count(id))
            ++tp;
        else if (population.count(id))
            ++fp;
    }
    const double tpr = double(tp) / double(attack.size());
    const std::size_t negatives = population.size() - attack.size();
    const double fpr = negatives == 0 ? 0.0 : double(fp) / double(negatives);
    return {tpr, fpr};
}

struct DetectionReport {
    std::string detector;
    ScoreMap scores;
    double threshold = 0.0;
    std::set<std::int64_t> flagged;
    std::set<std::int64_t> attack_ids;
    double tpr = 0.0, fpr = 0.0;
    bool sanity_passed = true; // BadNets-control gate, set by the bench
};

// Spectral-signature convention: per class, flag the top
// ceil(1.5 * expected_rate * class size) scores.
inline std::set<std::int64_t> flag_top_scores(const RepresentationMatrix& reps,
                                              const ScoreMap& scores, double expected_rate) {
    std::set<std::int64_t> flagged;
    for (const auto& blk : reps.classes) {
        if (blk.ids.empty()) continue;
        std::vector<std::pair<double, std::int64_t>> ranked;
        for (auto id : blk.ids) ranked.push_back({scores.at(id), id});
        std::stable_sort(ranked.begin(), ranked.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        const std::size_t take = std::min(
            ranked.size(), std::size_t(std::ceil(1.5 * expected_rate * double(blk.ids.size()))));
        for (std::size_t i = 0; i < take; ++i) flagged.insert(ranked[i].second);
    }
    return flagged;
}

// Strip convention: flag entropies below a threshold calibrated to a target
// false-positive rate on a clean validation pool.
inline double strip_threshold(const ScoreMap& clean_scores, double target_fpr) {
    std::vector<double> v;
    for (auto& [id, s] : clean_scores) v.push_back(s);
    std::sort(v.begin(), v.end());
    const std::size_t at = std::size_t(target_fpr * double(v.size()));
    return v[std::min(at, v.size() - 1)];
}

inline std::set<std::int64_t> flag_below(const ScoreMap& scores, double threshold) {
    std::set<std::int64_t> flagged;
    for (auto& [id, s] : scores)
        if (s < threshold) flagged.insert(id);
    return flagged;
}

inline void save_scores_csv(const std::string& path, const DetectionReport& rep,
                            const std::map<std::int64_t, int>& label_of) {
    auto os = io::open_out(path, /*binary=*/false);
    os << "id,class,score,flagged\n";
    for (const auto& [id, score] : rep.scores) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", score);
        os << id << "," << (label_of.count(id) ? label_of.at(id) : -1) << "," << buf << ","
           << (rep.flagged.count(id) ? 1 : 0) << "\n";
    }
}

// --- the proposed cost-based monitor ---

enum class CostStatistic { Budget, LossChange, GradientNorm };

struct MonitorConfig {
    CostStatistic statistic = CostStatistic::Budget;
    double k = 3.0; // median + k * MAD rule
    unlearn::Method method = unlearn::Method::NegGrad;
    unlearn::Hyperparams hp;
    unlearn::BudgetOptions budget_opts;
};

struct MonitorInputs {
    const nn::Model* model = nullptr;
    const nn::Model* unseen_model = nullptr; // budget statistic only
    const data::LabeledDataset* retained = nullptr;
    const nn::UpdateLedger* ledger = nullptr;
};

struct MonitorReport {
    std::vector<double> costs; // one per request
    double threshold = 0.0;
    std::vector<std::size_t> flagged; // request indices
};

inline double request_cost(const unlearn::UnlearnRequest& req, const MonitorConfig& cfg,
                           const MonitorInputs& in) {
    const nn::Model& model = *in.model;
    switch (cfg.statistic) {
        case CostStatistic::Budget: {
            require(in.unseen_model != nullptr, ErrorKind::Config,
                    "budget statistic needs the never-exposed probe model");
            auto b = unlearn::budget_analysis(model, *in.unseen_model, req.forget,
                                              cfg.budget_opts);
            double mean = 0.0;
            for (double v : b.budgets) mean += v;
            return mean / double(b.budgets.size());
        }
        case CostStatistic::LossChange: {
            unlearn::UnlearnContext ctx{in.retained, in.ledger, nullptr};
            nn::Model after = unlearn::apply_method(model, cfg.method, req.forget, cfg.hp, ctx);
            double acc = 0.0;
            for (std::size_t i = 0; i < req.forget.size(); ++i) {
                Tensor x = req.forget.images.row(i);
                const std::vector<int> y = {req.forget.labels[i]};
                acc += std::abs(nn::cross_entropy(nn::forward(after, x), y) -
                                nn::cross_entropy(nn::forward(model, x), y));
            }
            return acc / double(req.forget.size());
        }
        case CostStatistic::GradientNorm: {
            auto g = nn::grad_params(model, req.forget.images, req.forget.labels,
                                     nn::Reduction::Mean);
            return nn::l2_norm(g.values);
        }
    }
    fail(ErrorKind::Config, "unreachable statistic");
}

// Flags the requests whose unlearning cost exceeds median + k * MAD of the
// population. Identical costs (MAD = 0) flag nothing.
inline MonitorReport unlearning_cost_monitor(const std::vector<unlearn::UnlearnRequest>& requests,
                                             const MonitorConfig& cfg, const MonitorInputs& in) {
    require(cfg.k > 0.0, ErrorKind::Config, "monitor: k must be positive");
    require(requests.size() >= 10, ErrorKind::InsufficientPopulation,
            "monitor: need at least 10 requests, have " + std::to_string(requests.size()));
    MonitorReport rep;
    for (const auto& r : requests) rep.costs.push_back(request_cost(r, cfg, in));

    std::vector<double> sorted = rep.costs;
    std::sort(sorted.begin(), sorted.end());
    auto median_of = [](const std::vector<double>& v) {
        const std::size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    const double med = median_of(sorted);
    std::vector<double> dev;
    for (double c : rep.costs) dev.push_back(std::abs(c - med));
    std::sort(dev.begin(), dev.end());
    const double mad = median_of(dev);
    if (mad == 0.0) { // no outlier signal
        rep.threshold = med;
        return rep;
    }
    rep.threshold = med + cfg.k * mad;
    for (std::size_t i = 0; i < rep.costs.size(); ++i)
        if (rep.costs[i] > rep.threshold) rep.flagged.push_back(i);
    return rep;
}

} // namespace ulab::detect
