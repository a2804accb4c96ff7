#include "ccpdm/resolution.hpp"

#include "ccpdm/risk.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace ccpdm {

const char* StrategySpec::name(Kind k) {
    switch (k) {
        case Kind::LiquidateOwn: return "liquidate_own";
        case Kind::LiquidateExternal: return "liquidate_external";
        case Kind::HedgeOwn: return "hedge_own";
        case Kind::HedgeExternal: return "hedge_external";
        case Kind::ReplicateOwn: return "replicate_own";
        case Kind::ReplicateExternal: return "replicate_external";
        case Kind::HybridOwn: return "hybrid_own";
        case Kind::HybridExternal: return "hybrid_external";
    }
    return "?";
}

StrategySpec::Kind StrategySpec::parse(const std::string& name) {
    for (int k = 0; k <= static_cast<int>(Kind::HybridExternal); ++k) {
        if (name == StrategySpec::name(static_cast<Kind>(k))) return static_cast<Kind>(k);
    }
    throw std::invalid_argument("unknown strategy '" + name + "'");
}

namespace {

std::vector<Participant> exchange_members(const Scenario& s, const Exchange& ex,
                                          const std::set<std::string>& skip) {
    std::vector<Participant> out;
    for (const auto& id : ex.members) {
        if (skip.count(id)) continue;
        out.push_back(s.participants.at(id));
    }
    return out;
}

const std::string kHedgerId = "ccp";

}  // namespace

std::map<std::string, Equilibrium> pre_default_equilibria(const Scenario& s) {
    std::map<std::string, Equilibrium> out;
    for (const auto& ex : s.exchanges) {
        VectorXd rhs = ex.clearing_rhs.size() ? ex.clearing_rhs : VectorXd::Zero(s.asset.n_assets());
        out[ex.id] = solve_exchange(ex.id, exchange_members(s, ex, {}), s.asset, rhs);
    }
    return out;
}

std::vector<PostExchange> post_default_clearing(const Scenario& s, const StrategySpec& strategy,
                                                const std::map<std::string, Equilibrium>& pre,
                                                const std::vector<std::string>& defaulters) {
    const int m = s.asset.n_assets();
    const Exchange* home = nullptr;
    for (const auto& d : defaulters) {
        for (const auto& ex : s.exchanges) {
            if (std::count(ex.members.begin(), ex.members.end(), d)) {
                if (home && home->id != ex.id)
                    throw StrategyMismatch("all defaulters must belong to one exchange");
                home = &ex;
            }
        }
    }
    if (!home) throw StrategyMismatch("defaulter not found on any exchange");
    const Equilibrium& pre_home = pre.at(home->id);

    VectorXd q_d = VectorXd::Zero(m);
    for (const auto& d : defaulters) q_d += pre_home.positions.at(d);

    VectorXd q_l = VectorXd::Zero(m);
    if (strategy.kind == StrategySpec::Kind::HybridOwn ||
        strategy.kind == StrategySpec::Kind::HybridExternal) {
        if (strategy.q_d_liq.size() != m)
            throw StrategyMismatch("hybrid strategies need q_d_liq of length m");
        q_l = strategy.q_d_liq;
    } else if (strategy.kind == StrategySpec::Kind::LiquidateOwn ||
               strategy.kind == StrategySpec::Kind::LiquidateExternal) {
        q_l = q_d;
    }
    const VectorXd q_h = q_d - q_l;  // hedged slice

    const Exchange* ext = nullptr;
    if (strategy.is_external()) {
        ext = &s.exchange(strategy.external_exchange);
        for (const auto& d : defaulters) {
            if (std::count(ext->members.begin(), ext->members.end(), d))
                throw StrategyMismatch("external exchange must not contain the defaulter");
        }
    }

    std::set<std::string> dset(defaulters.begin(), defaulters.end());
    const RiskSpec hedger_risk = s.participants.at(defaulters.front()).risk;

    std::vector<PostExchange> out;
    PostExchange homex;
    homex.exchange_id = home->id;
    homex.members = exchange_members(s, *home, dset);
    homex.q_liq = VectorXd::Zero(m);

    auto hedger_on = [&](PostExchange& pex, const VectorXd& hedged, bool pinned) {
        CcpHedger h;
        h.id = kHedgerId;
        h.q_hedged = hedged;
        h.risk = hedger_risk;
        pex.hedger = h;
        pex.hedger_pinned = pinned;
    };

    switch (strategy.kind) {
        case StrategySpec::Kind::LiquidateOwn:
            homex.clearing_rhs = VectorXd::Zero(m);
            homex.q_liq = q_d;
            break;
        case StrategySpec::Kind::HedgeOwn:
            homex.clearing_rhs = -q_d;
            hedger_on(homex, q_d, false);
            break;
        case StrategySpec::Kind::ReplicateOwn:
            homex.clearing_rhs = -q_d;
            hedger_on(homex, q_d, true);
            break;
        case StrategySpec::Kind::HybridOwn:
            homex.clearing_rhs = -q_h;
            homex.q_liq = q_l;
            hedger_on(homex, q_h, false);
            break;
        case StrategySpec::Kind::LiquidateExternal:
        case StrategySpec::Kind::HedgeExternal:
        case StrategySpec::Kind::ReplicateExternal:
        case StrategySpec::Kind::HybridExternal:
            homex.clearing_rhs = -q_d;
            break;
    }

    if (ext) {
        PostExchange extx;
        extx.exchange_id = ext->id;
        extx.members = exchange_members(s, *ext, dset);
        extx.q_liq = VectorXd::Zero(m);
        switch (strategy.kind) {
            case StrategySpec::Kind::LiquidateExternal:
                extx.clearing_rhs = q_d;
                extx.q_liq = q_d;
                break;
            case StrategySpec::Kind::HedgeExternal:
                extx.clearing_rhs = VectorXd::Zero(m);
                hedger_on(extx, q_d, false);
                break;
            case StrategySpec::Kind::ReplicateExternal:
                extx.clearing_rhs = VectorXd::Zero(m);
                hedger_on(extx, q_d, true);
                break;
            case StrategySpec::Kind::HybridExternal:
                extx.clearing_rhs = q_l;
                extx.q_liq = q_l;
                hedger_on(extx, q_h, false);
                break;
            default:
                break;
        }
        for (const auto& e : strategy.new_entrants) extx.members.push_back(e);
        out.push_back(std::move(extx));
    } else {
        for (const auto& e : strategy.new_entrants) homex.members.push_back(e);
    }
    out.push_back(std::move(homex));
    return out;
}

void liquidity_cost(const Scenario& s, const PostExchange& pex, const Equilibrium& pre,
                    const Equilibrium& post, ResolutionOutcome& out) {
    const int m = s.asset.n_assets();
    const VectorXd dp = pre.price - post.price;

    double lc_e = 0.0;
    for (const auto& [id, q] : post.positions) lc_e += q.dot(dp);

    // Liquidation-leg attribution: legs proportional to the position changes,
    // scaled per coordinate so that the legs sum to the quantity liquidated here.
    // The exchange total is split-invariant; only per-participant rows depend on it.
    VectorXd dq_sum = VectorXd::Zero(m);
    std::map<std::string, VectorXd> dq;
    for (const auto& [id, qpost] : post.positions) {
        if (id == kHedgerId) continue;
        VectorXd qpre = pre.positions.count(id) ? pre.positions.at(id) : VectorXd::Zero(m);
        dq[id] = qpost - qpre;
        dq_sum += dq[id];
    }
    VectorXd scale = VectorXd::Zero(m);
    for (int k = 0; k < m; ++k) {
        if (std::abs(dq_sum(k)) > 1e-12) scale(k) = pex.q_liq(k) / dq_sum(k);
    }
    for (const auto& [id, qpost] : post.positions) {
        VectorXd qpre = pre.positions.count(id) ? pre.positions.at(id) : VectorXd::Zero(m);
        VectorXd leg = VectorXd::Zero(m);
        if (id != kHedgerId) leg = dq.at(id).cwiseProduct(scale);
        out.lc_per_participant[id] = (qpre + leg).dot(dp);
    }
    out.lc_per_exchange[pex.exchange_id] = lc_e;
}

void delta_rho(const Scenario& s, const PostExchange& pex, const Equilibrium& pre,
               const Equilibrium& post, const VectorXd& home_pre_price, ResolutionOutcome& out) {
    const int m = s.asset.n_assets();
    std::map<std::string, Participant> lookup;
    for (const auto& p : pex.members) lookup[p.id] = p;
    if (pex.hedger) lookup[pex.hedger->id] = pex.hedger->as_participant(s.asset, home_pre_price);

    for (const auto& [id, qpost] : post.positions) {
        const Participant& p = lookup.at(id);
        const bool is_hedger = pex.hedger && id == pex.hedger->id;
        const VectorXd qpre = pre.positions.count(id) ? pre.positions.at(id) : VectorXd::Zero(m);
        double dr = objective_r(p, s.asset, qpost) + qpost.dot(post.price) - qpre.dot(pre.price);
        if (!is_hedger) dr -= objective_r(p, s.asset, qpre);
        out.delta_rho[id] = dr;
        out.post_exchange_of[id] = pex.exchange_id;
    }
}

ResolutionOutcome resolve(const Scenario& s, const StrategySpec& strategy) {
    return resolve(s, strategy, {s.defaulter});
}

ResolutionOutcome resolve(const Scenario& s, const StrategySpec& strategy,
                          const std::vector<std::string>& defaulters) {
    ResolutionOutcome out;
    out.strategy = strategy;
    out.defaulters = defaulters;
    out.pre = pre_default_equilibria(s);

    const Exchange& home = [&]() -> const Exchange& {
        for (const auto& ex : s.exchanges)
            for (const auto& mm : ex.members)
                if (mm == defaulters.front()) return ex;
        throw StrategyMismatch("defaulter not found");
    }();
    const VectorXd home_price = out.pre.at(home.id).price;
    out.q_d = VectorXd::Zero(s.asset.n_assets());
    for (const auto& d : defaulters) out.q_d += out.pre.at(home.id).positions.at(d);

    const auto posts = post_default_clearing(s, strategy, out.pre, defaulters);
    for (const auto& pex : posts) {
        Equilibrium eq;
        if (pex.hedger && pex.hedger_pinned) {
            // The replicating CCP's only admissible position is the full offset;
            // fold it into the clearing condition and pin it in the result.
            VectorXd rhs = pex.clearing_rhs + pex.hedger->q_hedged;
            eq = solve_exchange(pex.exchange_id, pex.members, s.asset, rhs);
            eq.positions[pex.hedger->id] = -pex.hedger->q_hedged;
        } else if (pex.hedger) {
            CcpHedger h = *pex.hedger;
            Participant hp = h.as_participant(s.asset, home_price);
            if (hp.risk.kind == RiskSpec::Kind::Entropic) {
                std::vector<Participant> all = pex.members;
                all.push_back(hp);
                eq = solve_exchange(pex.exchange_id, all, s.asset, pex.clearing_rhs);
            } else {
                eq = solve_es(pex.exchange_id, pex.members, s.asset, pex.clearing_rhs, h);
            }
        } else {
            eq = solve_exchange(pex.exchange_id, pex.members, s.asset, pex.clearing_rhs);
        }
        const Equilibrium& pre_eq = out.pre.at(pex.exchange_id);
        liquidity_cost(s, pex, pre_eq, eq, out);
        delta_rho(s, pex, pre_eq, eq, home_price, out);
        out.post[pex.exchange_id] = std::move(eq);
    }

    for (const auto& pex : posts) {
        double drho_sum = 0.0;
        for (const auto& [id, q] : out.post.at(pex.exchange_id).positions) drho_sum += out.delta_rho.at(id);
        const double lc_e = out.lc_per_exchange.at(pex.exchange_id);
        out.mc_per_exchange[pex.exchange_id] = lc_e + drho_sum;
        out.lc_total += lc_e;
        out.delta_rho_total += drho_sum;
        out.mc_total += lc_e + drho_sum;
    }
    return out;
}

double entropic_mc_closed_form(const Scenario& s, const StrategySpec& strategy) {
    return entropic_mc_closed_form(s, strategy, {s.defaulter});
}

double entropic_mc_closed_form(const Scenario& s, const StrategySpec& strategy,
                               const std::vector<std::string>& defaulters) {
    if (!s.asset.ellipse.is_gaussian())
        throw WrongRiskKind("entropic_mc_closed_form: Gaussian market required");
    const int m = s.asset.n_assets();
    const Exchange& home = [&]() -> const Exchange& {
        for (const auto& ex : s.exchanges)
            for (const auto& mm : ex.members)
                if (mm == defaulters.front()) return ex;
        throw StrategyMismatch("defaulter not found");
    }();

    std::set<std::string> dset(defaulters.begin(), defaulters.end());
    std::vector<Participant> pre_members;
    std::vector<Participant> survivors;
    for (const auto& id : home.members) {
        const Participant& p = s.participants.at(id);
        if (p.risk.kind != RiskSpec::Kind::Entropic)
            throw WrongRiskKind("entropic_mc_closed_form: all members must be entropic");
        pre_members.push_back(p);
        if (!dset.count(id)) survivors.push_back(p);
    }
    const auto pre_agg = aggregate_risk(pre_members);
    const double rho = pre_agg.varrho_agg;
    const VectorXd cov = pre_agg.cov_agg;
    Eigen::LLT<MatrixXd> llt(s.asset.gamma);
    if (llt.info() != Eigen::Success) throw SingularGamma("entropic_mc_closed_form: gamma not PD");

    double inv_d = 0.0;
    VectorXd cov_d = VectorXd::Zero(m);
    for (const auto& d : defaulters) {
        inv_d += 1.0 / s.participants.at(d).risk.varrho;
        cov_d += s.participants.at(d).cov_r;
    }
    const VectorXd q_d = llt.solve(rho * inv_d * cov - cov_d);

    if (strategy.kind == StrategySpec::Kind::LiquidateOwn) {
        std::vector<Participant> post_members = survivors;
        for (const auto& e : strategy.new_entrants) post_members.push_back(e);
        const auto post_agg = aggregate_risk(post_members);
        const double rho_p = post_agg.varrho_agg;
        const VectorXd cov_p = post_agg.cov_agg;

        VectorXd entrant_sum = VectorXd::Zero(m);
        double third = 0.0;
        for (const auto& e : strategy.new_entrants) {
            entrant_sum += (rho / e.risk.varrho) * cov - e.cov_r;
            const VectorXd qe = llt.solve((rho_p / e.risk.varrho) * cov_p - e.cov_r);
            const VectorXd lhs = llt.solve(rho * cov - e.risk.varrho * e.cov_r);
            third += lhs.dot(e.cov_r + 0.5 * (s.asset.gamma * qe));
        }
        const double first = 0.5 * rho_p * q_d.dot(s.asset.gamma * q_d);
        const double second = -rho_p * llt.solve(entrant_sum).dot(cov_p + 0.5 * (s.asset.gamma * q_d));
        return first + second + third;
    }

    if (strategy.kind == StrategySpec::Kind::HedgeOwn) {
        if (!strategy.new_entrants.empty())
            throw WrongRiskKind("entropic_mc_closed_form: hedging form assumes no new entrants");
        double inv = 0.0;
        for (const auto& p : survivors) inv += 1.0 / p.risk.varrho;
        const double rho_c = s.participants.at(defaulters.front()).risk.varrho;
        inv += 1.0 / rho_c;
        const double rho_p = 1.0 / inv;
        const double cov_g_cov = cov.dot(llt.solve(cov));
        return rho * rho * (rho_p - rho_c) / (2.0 * rho_c * rho_c) * cov_g_cov +
               0.5 * rho_p * q_d.dot(s.asset.gamma * q_d) - (rho_p * rho / rho_c) * q_d.dot(cov);
    }
    throw WrongRiskKind("entropic_mc_closed_form: strategy must be liquidate_own or hedge_own");
}

}  // namespace ccpdm
