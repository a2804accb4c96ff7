#include "ccpdm/equilibrium.hpp"

#include "ccpdm/risk.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace ccpdm {

namespace {

int reference_index(const std::vector<Participant>& members) {
    int ref = 0;
    for (int i = 1; i < static_cast<int>(members.size()); ++i) {
        if (members[i].id < members[ref].id) ref = i;
    }
    return ref;
}

Equilibrium finish(const std::string& exchange_id, const std::vector<Participant>& members,
                   const AssetModel& asset, const VectorXd& rhs, std::vector<VectorXd> qs,
                   Equilibrium::Method method, int iters) {
    Equilibrium eq;
    eq.exchange_id = exchange_id;
    eq.method = method;
    eq.iterations = iters;
    for (std::size_t i = 0; i < members.size(); ++i) eq.positions[members[i].id] = qs[i];
    // Price from any differentiable member's optimality condition.
    for (std::size_t i = 0; i < members.size(); ++i) {
        try {
            eq.price = -grad_r(members[i], asset, qs[i]);
            break;
        } catch (const DegenerateRisk&) {
            continue;
        }
    }
    const auto check = verify_equilibrium(eq, members, asset, rhs);
    eq.residual_kkt = check.residual_kkt;
    eq.residual_clearing = check.residual_clearing;
    return eq;
}

}  // namespace

AggregateRisk aggregate_risk(const std::vector<Participant>& members) {
    AggregateRisk agg;
    double inv = 0.0;
    for (const auto& p : members) {
        if (p.risk.kind != RiskSpec::Kind::Entropic || p.risk.varrho <= 0.0)
            throw WrongRiskKind("aggregate_risk: every member must be entropic with varrho > 0");
        inv += 1.0 / p.risk.varrho;
        if (agg.cov_agg.size() == 0)
            agg.cov_agg = p.cov_r;
        else
            agg.cov_agg += p.cov_r;
    }
    agg.varrho_agg = 1.0 / inv;
    return agg;
}

Participant CcpHedger::as_participant(const AssetModel& a, const VectorXd& pre_price) const {
    Participant p;
    p.id = id;
    p.role = Role::CcpHedger;
    p.risk = risk;
    p.er = q_hedged.dot(a.mu - pre_price);
    p.var_r = q_hedged.dot(a.gamma * q_hedged);
    p.cov_r = a.gamma * q_hedged;
    return p;
}

Equilibrium solve_entropic(const std::string& exchange_id, const std::vector<Participant>& members,
                           const AssetModel& asset, const VectorXd& clearing_rhs) {
    if (!asset.ellipse.is_gaussian())
        throw WrongRiskKind("solve_entropic: entropic equilibria need a Gaussian market");
    const auto agg = aggregate_risk(members);
    Eigen::LLT<MatrixXd> llt(asset.gamma);
    if (llt.info() != Eigen::Success) throw SingularGamma("solve_entropic: gamma is not positive definite");

    const VectorXd shifted = agg.cov_agg + asset.gamma * clearing_rhs;
    std::vector<VectorXd> qs;
    qs.reserve(members.size());
    for (const auto& p : members) {
        const double k = agg.varrho_agg / p.risk.varrho;
        qs.push_back(llt.solve(k * agg.cov_agg - p.cov_r) + k * clearing_rhs);
    }
    auto eq = finish(exchange_id, members, asset, clearing_rhs, std::move(qs),
                     Equilibrium::Method::ClosedForm, 0);
    eq.price = asset.mu - agg.varrho_agg * shifted;
    return eq;
}

namespace {

struct EsSystem {
    const std::vector<Participant>& members;
    const AssetModel& asset;
    const VectorXd& rhs;
    int ref;
    int m;
    int n;

    VectorXd residual(const std::vector<VectorXd>& qs) const {
        VectorXd f(n * m);
        VectorXd clearing = -rhs;
        for (const auto& q : qs) clearing += q;
        f.head(m) = clearing;
        const VectorXd gref = grad_r(members[ref], asset, qs[ref]);
        int row = m;
        for (int i = 0; i < n; ++i) {
            if (i == ref) continue;
            f.segment(row, m) = grad_r(members[i], asset, qs[i]) - gref;
            row += m;
        }
        return f;
    }

    MatrixXd jacobian(const std::vector<VectorXd>& qs) const {
        MatrixXd J = MatrixXd::Zero(n * m, n * m);
        for (int i = 0; i < n; ++i) J.block(0, i * m, m, m) = MatrixXd::Identity(m, m);
        const MatrixXd href = hess_r(members[ref], asset, qs[ref]);
        int row = m;
        for (int i = 0; i < n; ++i) {
            if (i == ref) continue;
            J.block(row, i * m, m, m) = hess_r(members[i], asset, qs[i]);
            J.block(row, ref * m, m, m) = -href;
            row += m;
        }
        return J;
    }
};

std::vector<VectorXd> entropic_proxy_start(const std::vector<Participant>& members,
                                           const AssetModel& asset, const VectorXd& rhs) {
    const int n = static_cast<int>(members.size());
    std::vector<VectorXd> qs(n, VectorXd::Zero(asset.n_assets()));
    double inv = 0.0;
    std::vector<double> proxy(n);
    for (int i = 0; i < n; ++i) {
        const double es = es_standardized(asset.ellipse, members[i].risk.alpha);
        if (es <= 0.0 || members[i].var_r <= kTolDegenerate) return qs;  // fall back to zero start
        proxy[i] = es / std::sqrt(members[i].var_r);
        inv += 1.0 / proxy[i];
    }
    const double agg = 1.0 / inv;
    VectorXd cov = VectorXd::Zero(asset.n_assets());
    for (const auto& p : members) cov += p.cov_r;
    Eigen::LLT<MatrixXd> llt(asset.gamma);
    if (llt.info() != Eigen::Success) return qs;
    for (int i = 0; i < n; ++i) {
        const double k = agg / proxy[i];
        qs[i] = llt.solve(k * cov - members[i].cov_r) + k * rhs;
    }
    return qs;
}

double safe_norm(const EsSystem& sys, const std::vector<VectorXd>& qs) {
    try {
        return sys.residual(qs).norm();
    } catch (const DegenerateRisk&) {
        return std::numeric_limits<double>::infinity();
    }
}

// Damped Newton with Armijo backtracking on the residual norm.
std::pair<std::vector<VectorXd>, int> newton_solve(const EsSystem& sys, std::vector<VectorXd> qs) {
    const int m = sys.m;
    for (int it = 0; it < kNewtonMaxIter; ++it) {
        VectorXd f;
        try {
            f = sys.residual(qs);
        } catch (const DegenerateRisk&) {
            throw NoConvergence(it, std::numeric_limits<double>::infinity(),
                                "solve_es: iterate hit a degenerate ES point");
        }
        if (f.lpNorm<Eigen::Infinity>() <= kNewtonTol) return {qs, it};
        const MatrixXd J = sys.jacobian(qs);
        const VectorXd d = J.fullPivLu().solve(-f);
        const double f0 = f.norm();
        double lambda = 1.0;
        std::vector<VectorXd> trial = qs;
        while (true) {
            for (int i = 0; i < sys.n; ++i) trial[i] = qs[i] + lambda * d.segment(i * m, m);
            if (safe_norm(sys, trial) <= (1.0 - 1e-4 * lambda) * f0) break;
            lambda *= 0.5;
            if (lambda < 1e-12) {
                throw NoConvergence(it, f0, "solve_es: line search failed to reduce the residual");
            }
        }
        qs = trial;
    }
    throw NoConvergence(kNewtonMaxIter, safe_norm(sys, qs), "solve_es: iteration limit reached");
}

}  // namespace

double hedger_conjugate_residual(const Participant& hedger, const AssetModel& asset,
                                 const VectorXd& q_c, const VectorXd& price, double box_half) {
    const int m = asset.n_assets();
    const auto g = [&](const VectorXd& q) { return -price.dot(q) - objective_r(hedger, asset, q); };
    const auto clamp = [&](VectorXd q) {
        for (int k = 0; k < m; ++k) q(k) = std::clamp(q(k), -box_half, box_half);
        return q;
    };

    // Candidate starts: the kink of the sqrt term, the origin, and +-q_c.
    Eigen::LLT<MatrixXd> llt(asset.gamma);
    std::vector<VectorXd> starts{VectorXd::Zero(m), q_c, -q_c};
    if (llt.info() == Eigen::Success) starts.push_back(clamp(-llt.solve(hedger.cov_r)));

    double best = -std::numeric_limits<double>::infinity();
    for (const auto& s0 : starts) best = std::max(best, g(clamp(s0)));
    // Projected gradient ascent from each start; r is convex so g is concave.
    for (auto x : starts) {
        x = clamp(x);
        double step = std::max(1.0, box_half / 8.0);
        for (int it = 0; it < 400 && step > 1e-14; ++it) {
            VectorXd dir;
            try {
                dir = -price - grad_r(hedger, asset, x);
            } catch (const DegenerateRisk&) {
                break;  // at the kink: candidate already evaluated
            }
            VectorXd next = clamp(x + step * dir);
            if (g(next) > g(x)) {
                x = next;
            } else {
                step *= 0.5;
            }
        }
        best = std::max(best, g(x));
    }
    return objective_r(hedger, asset, q_c) + q_c.dot(price) + best;
}

Equilibrium solve_es(const std::string& exchange_id, const std::vector<Participant>& members,
                     const AssetModel& asset, const VectorXd& clearing_rhs,
                     const std::optional<CcpHedger>& hedger) {
    const int m = asset.n_assets();
    for (const auto& p : members) {
        if (p.risk.kind != RiskSpec::Kind::ExpectedShortfall)
            throw WrongRiskKind("solve_es: member " + p.id + " is not an expected-shortfall participant");
    }
    if (!hedger) {
        if (members.empty()) throw WrongRiskKind("solve_es: empty exchange");
        EsSystem sys{members, asset, clearing_rhs, reference_index(members),
                     m, static_cast<int>(members.size())};
        auto start = entropic_proxy_start(members, asset, clearing_rhs);
        std::pair<std::vector<VectorXd>, int> sol;
        try {
            sol = newton_solve(sys, start);
        } catch (const NoConvergence&) {
            sol = newton_solve(sys, std::vector<VectorXd>(members.size(), VectorXd::Zero(m)));
        }
        return finish(exchange_id, members, asset, clearing_rhs, std::move(sol.first),
                      Equilibrium::Method::Newton, sol.second);
    }

    if (members.empty())
        throw WrongRiskKind("solve_es: a hedged exchange needs at least one other participant");
    Participant hp = hedger->as_participant(asset, VectorXd::Zero(m));
    hp.risk = hedger->risk;

    // First try the full-offset position q_c = -q_h: the remaining members then
    // clear rhs + q_h among themselves. Accept when the hedger's Fenchel-Young
    // residual vanishes, i.e. the price lands inside its subdifferential band.
    const VectorXd rhs_surv = clearing_rhs + hedger->q_hedged;
    Equilibrium surv = solve_es(exchange_id, members, asset, rhs_surv);
    const VectorXd q_kink = -hedger->q_hedged;
    const double scale = 1.0 + hedger->q_hedged.lpNorm<Eigen::Infinity>();
    const double box = 10.0 * std::max(1.0, hedger->q_hedged.norm());
    const double fy = hedger_conjugate_residual(hp, asset, q_kink, surv.price, box);
    if (std::abs(fy) <= 1e-7 * scale) {
        std::vector<Participant> all = members;
        all.push_back(hp);
        std::vector<VectorXd> qs;
        for (const auto& p : members) qs.push_back(surv.positions.at(p.id));
        qs.push_back(q_kink);
        auto eq = finish(exchange_id, all, asset, clearing_rhs, std::move(qs),
                         Equilibrium::Method::Newton, surv.iterations);
        eq.price = surv.price;
        return eq;
    }

    // Off the kink the hedger objective is smooth; solve the full system.
    std::vector<Participant> all = members;
    all.push_back(hp);
    EsSystem sys{all, asset, clearing_rhs, reference_index(all), m, static_cast<int>(all.size())};
    auto start = entropic_proxy_start(all, asset, clearing_rhs);
    std::pair<std::vector<VectorXd>, int> sol;
    try {
        sol = newton_solve(sys, start);
    } catch (const NoConvergence&) {
        // Perturb away from the kink before giving up.
        std::vector<VectorXd> s2(all.size(), VectorXd::Zero(m));
        s2.back() = q_kink + VectorXd::Constant(m, 0.1 * scale);
        sol = newton_solve(sys, s2);
    }
    return finish(exchange_id, all, asset, clearing_rhs, std::move(sol.first),
                  Equilibrium::Method::Newton, sol.second);
}

Equilibrium solve_exchange(const std::string& exchange_id, const std::vector<Participant>& members,
                           const AssetModel& asset, const VectorXd& clearing_rhs,
                           const std::optional<CcpHedger>& hedger) {
    bool any_es = hedger && hedger->risk.kind == RiskSpec::Kind::ExpectedShortfall;
    bool any_entropic = hedger && hedger->risk.kind == RiskSpec::Kind::Entropic;
    for (const auto& p : members) {
        any_es |= p.risk.kind == RiskSpec::Kind::ExpectedShortfall;
        any_entropic |= p.risk.kind == RiskSpec::Kind::Entropic;
    }
    if (any_es && any_entropic)
        throw WrongRiskKind("solve_exchange: mixed entropic and expected-shortfall members");
    if (any_es) return solve_es(exchange_id, members, asset, clearing_rhs, hedger);
    if (!hedger) return solve_entropic(exchange_id, members, asset, clearing_rhs);
    std::vector<Participant> all = members;
    Participant hp = hedger->as_participant(asset, VectorXd::Zero(asset.n_assets()));
    all.push_back(hp);
    return solve_entropic(exchange_id, all, asset, clearing_rhs);
}

EquilibriumCheck verify_equilibrium(const Equilibrium& eq, const std::vector<Participant>& members,
                                    const AssetModel& asset, const VectorXd& clearing_rhs) {
    EquilibriumCheck out{0.0, 0.0, 0.0};
    VectorXd clearing = -clearing_rhs;
    std::vector<VectorXd> implied;
    for (const auto& p : members) {
        const VectorXd& q = eq.positions.at(p.id);
        clearing += q;
        try {
            const VectorXd g = grad_r(p, asset, q);
            out.residual_kkt = std::max(out.residual_kkt, (g + eq.price).lpNorm<Eigen::Infinity>());
            implied.push_back(-g);
        } catch (const DegenerateRisk&) {
            // Kinked hedger: optimality is checked by the conjugate residual instead.
        }
    }
    out.residual_clearing = clearing.lpNorm<Eigen::Infinity>();
    for (std::size_t i = 0; i + 1 < implied.size(); ++i) {
        out.price_consistency = std::max(
            out.price_consistency, (implied[i] - implied[i + 1]).lpNorm<Eigen::Infinity>());
    }
    return out;
}

}  // namespace ccpdm
