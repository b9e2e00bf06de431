#pragma once

#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "ulab/augment.hpp"
#include "ulab/train.hpp"

namespace ulab::unlearn {

enum class Method { FirstOrder, SecondOrder, NegGrad, Amnesiac };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::FirstOrder: return "first-order";
        case Method::SecondOrder: return "second-order";
        case Method::NegGrad: return "neg-grad";
        case Method::Amnesiac: return "amnesiac";
    }
    return "?";
}

inline Method method_from_name(const std::string& s) {
    if (s == "first-order" || s == "first_order") return Method::FirstOrder;
    if (s == "second-order" || s == "second_order") return Method::SecondOrder;
    if (s == "neg-grad" || s == "neg_grad") return Method::NegGrad;
    if (s == "amnesiac") return Method::Amnesiac;
    fail(ErrorKind::Config, "unknown unlearning method: " + s);
}

enum class SubstituteKind { Blur, ZeroImage };

struct Hyperparams {
    double tau = 1e-4;   // unlearning rate (first-order, neg-grad)
    int steps = 1;       // neg-grad ascent steps per round
    int rounds = 1;
    double lambda = 0.01; // second-order damping
    int cg_iters = 100;
    double cg_tol = 1e-4;
    int hessian_probe = 512;    // retained-data probe batch size
    double hvp_eps = 1e-3;      // FD step scale inside CG; smooths ReLU kinks
    double lambda_cap = 100.0;  // damping escalation limit on indefiniteness
    SubstituteKind substitute = SubstituteKind::Blur;
    double blur_sigma = 2.0;
    nn::Reduction reduction = nn::Reduction::Sum; // summed gradients; mean is the switch
    std::uint64_t seed = 0;
};

struct UnlearnRequest {
    data::LabeledDataset forget; // explicit forget set (images + labels + ids)
    Method method = Method::FirstOrder;
    Hyperparams hp;
};

// The service provider's gate: every requested sample must hash-match the
// stored training-set digest for its id.
inline void verify_request(const data::LabeledDataset& forget,
                           const std::unordered_map<std::int64_t, std::uint64_t>& digests) {
    require(forget.size() > 0, ErrorKind::Config, "empty forget set");
    for (std::size_t i = 0; i < forget.size(); ++i) {
        auto it = digests.find(forget.ids[i]);
        require(it != digests.end(), ErrorKind::Id,
                "forget id " + std::to_string(forget.ids[i]) + " is not in the training set");
        require(it->second == data::sample_digest(forget, i), ErrorKind::Id,
                "forget sample " + std::to_string(forget.ids[i]) +
                    " does not match the stored content digest");
    }
}

inline Tensor make_substitute(const Tensor& images, const Hyperparams& hp) {
    if (hp.substitute == SubstituteKind::ZeroImage) return Tensor(images.shape);
    Tensor blurred = data::gaussian_blur(images, hp.blur_sigma);
    for (auto& v : blurred.data) v = std::min(1.0, std::max(0.0, v));
    return blurred;
}

// gradient difference g = sum grad l(x~) - sum grad l(x) over the forget set
inline nn::ParamVector gradient_difference(const nn::Model& m, const data::LabeledDataset& forget,
                                           const Tensor& substitute, const Hyperparams& hp) {
    require(substitute.shape == forget.images.shape, ErrorKind::Dimension,
            "substitute shape does not match the forget set");
    auto g_sub = nn::grad_params(m, substitute, forget.labels, hp.reduction);
    auto g_orig = nn::grad_params(m, forget.images, forget.labels, hp.reduction);
    for (std::size_t i = 0; i < g_sub.size(); ++i) g_sub.values[i] -= g_orig.values[i];
    return g_sub;
}

// theta <- theta - tau * (sum grad l(x~) - sum grad l(x)), once per round
inline nn::Model unlearn_first_order(nn::Model model, const data::LabeledDataset& forget,
                                     const Tensor& substitute, double tau, int rounds,
                                     const Hyperparams& hp = {}) {
    require(rounds >= 1, ErrorKind::Config, "rounds must be >= 1");
    for (int r = 0; r < rounds; ++r) {
        auto g = gradient_difference(model, forget, substitute, hp);
        for (std::size_t i = 0; i < g.size(); ++i) model.params.values[i] -= tau * g.values[i];
    }
    return model;
}

struct SecondOrderReport {
    double residual = 0.0; // ||(H + lambda I) v - g|| / ||g||
    int iterations = 0;
    bool converged = true;
    double lambda_used = 0.0; // after any escalation on indefiniteness
};

namespace detail {

// One CG pass on (H + lambda I) v = g. Returns false when negative or
// divergent curvature shows the damped system is not positive definite.
inline bool cg_pass(const nn::Model& m, const Tensor& probe_images,
                    const std::vector<int>& probe_labels, const std::vector<double>& b,
                    double lambda, int max_iters, double tol, double hvp_eps,
                    std::vector<double>& x, SecondOrderReport* rep) {
    const std::size_t n = b.size();
    x.assign(n, 0.0);
    std::vector<double> r = b, p = b, hp_buf(n);
    auto matvec = [&](const std::vector<double>& v, std::vector<double>& out) {
        nn::ParamVector dir = nn::ParamVector::zeros_like(m.spec);
        dir.values = v;
        auto hv = nn::hvp(m, probe_images, probe_labels, dir, nn::Reduction::Mean, hvp_eps);
        for (std::size_t i = 0; i < n; ++i) out[i] = hv.values[i] + lambda * v[i];
    };
    const double bnorm = nn::l2_norm(b);
    if (bnorm == 0.0) {
        if (rep) *rep = {0.0, 0, true, lambda};
        return true;
    }
    double rs = 0.0;
    for (double v : r) rs += v * v;
    int it = 0;
    for (; it < max_iters; ++it) {
        if (std::sqrt(rs) / bnorm < tol) break;
        matvec(p, hp_buf);
        double pap = 0.0;
        for (std::size_t i = 0; i < n; ++i) pap += p[i] * hp_buf[i];
        if (pap <= 0.0) return false; // indefinite at this damping
        const double alpha = rs / pap;
        for (std::size_t i = 0; i < n; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * hp_buf[i];
        }
        double rs_new = 0.0;
        for (double v : r) rs_new += v * v;
        if (!std::isfinite(rs_new) || rs_new > 1e8 * bnorm * bnorm) return false;
        const double beta = rs_new / rs;
        rs = rs_new;
        for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
    }
    if (rep) {
        rep->residual = std::sqrt(rs) / bnorm;
        rep->iterations = it;
        rep->converged = rep->residual < tol;
        rep->lambda_used = lambda;
    }
    return true;
}

// Damped CG with escalation: when the Hessian estimate is indefinite at the
// requested damping, lambda doubles until CG completes or hits the cap.
inline std::vector<double> cg_solve(const nn::Model& m, const Tensor& probe_images,
                                    const std::vector<int>& probe_labels,
                                    const std::vector<double>& b, const Hyperparams& hp,
                                    SecondOrderReport* rep) {
    std::vector<double> x;
    double lambda = hp.lambda;
    while (true) {
        if (cg_pass(m, probe_images, probe_labels, b, lambda, hp.cg_iters, hp.cg_tol, hp.hvp_eps,
                    x, rep))
            return x;
        lambda = std::max(2.0 * lambda, 1e-3);
        if (lambda > hp.lambda_cap) {
            // give up on curvature information entirely
            if (rep) *rep = {1.0, 0, false, lambda};
            x.assign(b.size(), 0.0);
            return x;
        }
    }
}

} // namespace detail

// theta <- theta - (H + lambda I)^-1 (sum grad l(x~) - sum grad l(x)),
// Hessian estimated on a fixed retained-data probe batch.
inline nn::Model unlearn_second_order(nn::Model model, const data::LabeledDataset& forget,
                                      const Tensor& substitute,
                                      const data::LabeledDataset& retained,
                                      const Hyperparams& hp, SecondOrderReport* report = nullptr) {
    auto g = gradient_difference(model, forget, substitute, hp);

    const std::size_t probe_n = std::min<std::size_t>(hp.hessian_probe, retained.size());
    require(probe_n > 0, ErrorKind::Config, "second-order: empty retained probe");
    auto pick = data::stratified_sample(retained, probe_n, mix_seed(hp.seed, 0x2e9));
    Tensor probe_images = retained.images.rows(pick);
    std::vector<int> probe_labels(pick.size());
    for (std::size_t i = 0; i < pick.size(); ++i) probe_labels[i] = retained.labels[pick[i]];

    SecondOrderReport rep;
    auto v = detail::cg_solve(model, probe_images, probe_labels, g.values, hp, &rep);
    for (std::size_t i = 0; i < v.size(); ++i) model.params.values[i] -= v[i];
    if (report) *report = rep;
    return model;
}

// theta <- theta + tau * sum grad l(x), `steps` ascent steps
inline nn::Model unlearn_neg_grad(nn::Model model, const data::LabeledDataset& forget, double tau,
                                  int steps, const Hyperparams& hp = {}) {
    require(forget.size() > 0, ErrorKind::Config, "neg-grad: empty forget set");
    require(steps >= 1, ErrorKind::Config, "neg-grad: steps must be >= 1");
    for (int s = 0; s < steps; ++s) {
        auto g = nn::grad_params(model, forget.images, forget.labels, hp.reduction);
        for (std::size_t i = 0; i < g.size(); ++i) model.params.values[i] += tau * g.values[i];
    }
    return model;
}

// Amnesiac reconstruction: theta_initial plus every recorded delta whose batch
// does not contain a forgotten sample. Replaying all deltas reproduces
// theta_final bitwise, so forgetting every id returns theta_initial exactly.
inline nn::Model unlearn_amnesiac(const nn::NetworkSpec& spec, const nn::UpdateLedger& ledger,
                                  const std::set<std::int64_t>& forget_ids,
                                  const std::set<std::int64_t>& known_ids = {}) {
    if (!known_ids.empty())
        for (auto id : forget_ids)
            require(known_ids.count(id), ErrorKind::Id,
                    "amnesiac: unknown forget id " + std::to_string(id));
    nn::Model out{spec, nn::ParamVector::zeros_like(spec)};
    require(ledger.theta_initial.size() == out.params.size(), ErrorKind::Dimension,
            "ledger does not match the network spec");
    std::vector<double> acc(ledger.theta_initial.size(), 0.0);
    for (const auto& e : ledger.entries) {
        bool hit = false;
        for (auto id : e.member_ids)
            if (forget_ids.count(id)) {
                hit = true;
                break;
            }
        if (!hit)
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += e.delta[i];
    }
    for (std::size_t i = 0; i < acc.size(); ++i)
        out.params.values[i] = ledger.theta_initial[i] + acc[i];
    return out;
}

// One application of `method` against the forget set; shared by multi_round
// and the scenario runner.
struct UnlearnContext {
    const data::LabeledDataset* retained = nullptr;  // second-order Hessian probe source
    const nn::UpdateLedger* ledger = nullptr;        // amnesiac
    const std::set<std::int64_t>* known_ids = nullptr;
};

inline nn::Model apply_method(const nn::Model& model, Method method,
                              const data::LabeledDataset& forget, const Hyperparams& hp,
                              const UnlearnContext& ctx, SecondOrderReport* so_report = nullptr) {
    switch (method) {
        case Method::FirstOrder:
            return unlearn_first_order(model, forget, make_substitute(forget.images, hp), hp.tau,
                                       1, hp);
        case Method::SecondOrder: {
            require(ctx.retained != nullptr, ErrorKind::Config,
                    "second-order needs retained data for the Hessian probe");
            return unlearn_second_order(model, forget, make_substitute(forget.images, hp),
                                        *ctx.retained, hp, so_report);
        }
        case Method::NegGrad:
            return unlearn_neg_grad(model, forget, hp.tau, hp.steps, hp);
        case Method::Amnesiac: {
            require(ctx.ledger != nullptr, ErrorKind::Config, "amnesiac needs an update ledger");
            std::set<std::int64_t> ids(forget.ids.begin(), forget.ids.end());
            nn::Model rebuilt = unlearn_amnesiac(model.spec, *ctx.ledger, ids,
                                                 ctx.known_ids ? *ctx.known_ids
                                                               : std::set<std::int64_t>{});
            // applied to the recorded final state, the reconstruction is exact
            if (model.params.values == ctx.ledger->theta_final) return rebuilt;
            // repeated rounds subtract the forgotten delta mass again
            nn::Model out = model;
            for (std::size_t i = 0; i < out.params.size(); ++i)
                out.params.values[i] -=
                    ctx.ledger->theta_final[i] - rebuilt.params.values[i];
            return out;
        }
    }
    fail(ErrorKind::Config, "unreachable method");
}

struct UnlearnReport {
    double acc_test_before = 0.0, acc_test_after = 0.0;
    double acc_train_before = 0.0, acc_train_after = 0.0; // on train minus forget set
    std::vector<double> round_test_acc;
    Method method = Method::FirstOrder;
    Hyperparams hp;
    std::optional<SecondOrderReport> second_order;
};

// Applies the method `rounds` times, recording test accuracy after each round.
inline std::pair<nn::Model, UnlearnReport> multi_round(const nn::Model& model, Method method,
                                                       const data::LabeledDataset& forget,
                                                       const Hyperparams& hp,
                                                       const UnlearnContext& ctx,
                                                       const data::LabeledDataset& test,
                                                       const data::LabeledDataset& train_minus) {
    require(hp.rounds >= 1, ErrorKind::Config, "multi_round: rounds must be >= 1");
    UnlearnReport rep;
    rep.method = method;
    rep.hp = hp;
    rep.acc_test_before = nn::accuracy(model, test);
    rep.acc_train_before = nn::accuracy(model, train_minus);
    nn::Model cur = model;
    for (int r = 0; r < hp.rounds; ++r) {
        SecondOrderReport so;
        cur = apply_method(cur, method, forget, hp, ctx, &so);
        if (method == Method::SecondOrder) rep.second_order = so;
        rep.round_test_acc.push_back(nn::accuracy(cur, test));
    }
    rep.acc_test_after = rep.round_test_acc.back();
    rep.acc_train_after = nn::accuracy(cur, train_minus);
    return {std::move(cur), std::move(rep)};
}

// --- unlearning-budget solver ---

struct BudgetOptions {
    double lr = 1.0;     // scale on the normalized descent step
    int iterations = 100;
    double rel_tol = 0.10; // stop once |gap| <= rel_tol * |gap_0|
};

struct BudgetResult {
    Tensor delta;                      // per-sample optimized perturbation
    std::vector<double> budgets;       // per-sample sum |delta|
    std::vector<double> initial_gap;   // loss_seen(x) - loss_unseen(x)
    std::vector<double> final_gap;
    std::vector<bool> aborted;         // non-finite loss encountered
    double total_budget = 0.0;
};

// For each sample, finds delta so the seen model's loss at x + delta matches
// the unseen model's loss at x, by descent on (loss_se(x+delta) - target)^2
// with x + delta kept inside [0,1].
inline BudgetResult budget_analysis(const nn::Model& model_seen, const nn::Model& model_unseen,
                                    const data::LabeledDataset& samples, const BudgetOptions& opt) {
    const std::size_t n = samples.size();
    const std::size_t img_sz = samples.images.row_size();
    BudgetResult out;
    out.delta = Tensor(samples.images.shape);
    out.budgets.assign(n, 0.0);
    out.initial_gap.assign(n, 0.0);
    out.final_gap.assign(n, 0.0);
    out.aborted.assign(n, false);

    for (std::size_t s = 0; s < n; ++s) {
        Tensor x = samples.images.row(s);
        const std::vector<int> label = {samples.labels[s]};
        const double target = nn::cross_entropy(nn::forward(model_unseen, x), label);
        Tensor cur = x;
        double gap = nn::cross_entropy(nn::forward(model_seen, cur), label) - target;
        out.initial_gap[s] = gap;
        const double stop = std::max(opt.rel_tol * std::abs(gap), 1e-9);
        for (int it = 0; it < opt.iterations && std::abs(gap) > stop; ++it) {
            auto lg = nn::loss_and_grads(model_seen, cur, label, nn::Reduction::Mean, false, true);
            if (!std::isfinite(lg.loss)) {
                out.aborted[s] = true;
                break;
            }
            gap = lg.loss - target;
            double gnorm2 = 0.0;
            for (double v : lg.input_grad.data) gnorm2 += v * v;
            if (gnorm2 < 1e-18) break; // flat; cannot move the loss
            const double step = opt.lr * gap / gnorm2; // normalized descent on 0.5*gap^2
            for (std::size_t i = 0; i < img_sz; ++i) {
                double v = cur.data[i] - step * lg.input_grad.data[i];
                cur.data[i] = std::min(1.0, std::max(0.0, v)); // keep x + delta in [0,1]
            }
            gap = nn::cross_entropy(nn::forward(model_seen, cur), label) - target;
        }
        out.final_gap[s] = gap;
        double budget = 0.0;
        for (std::size_t i = 0; i < img_sz; ++i) {
            const double d = cur.data[i] - x.data[i];
            out.delta.data[s * img_sz + i] = d;
            budget += std::abs(d);
        }
        out.budgets[s] = budget;
        out.total_budget += budget;
    }
    return out;
}

} // namespace ulab::unlearn
