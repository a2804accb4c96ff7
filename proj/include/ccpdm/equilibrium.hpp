#pragma once

#include "ccpdm/market.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ccpdm {

struct SingularGamma : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct WrongRiskKind : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NoConvergence : std::runtime_error {
    NoConvergence(int iters, double residual, const std::string& what)
        : std::runtime_error(what), iterations(iters), last_residual(residual) {}
    int iterations;
    double last_residual;
};

inline constexpr double kTolClear = 1e-8;
inline constexpr double kTolKkt = 1e-8;
inline constexpr double kNewtonTol = 1e-10;
inline constexpr int kNewtonMaxIter = 200;

struct Equilibrium {
    std::string exchange_id;
    std::map<std::string, VectorXd> positions;
    VectorXd price;
    double residual_kkt = 0.0;
    double residual_clearing = 0.0;
    enum class Method { ClosedForm, Newton } method = Method::ClosedForm;
    int iterations = 0;
};

// Aggregate entropic quantities varrho = (sum 1/varrho_i)^-1 and cov = sum cov_i.
struct AggregateRisk {
    double varrho_agg = 0.0;
    VectorXd cov_agg;
};
AggregateRisk aggregate_risk(const std::vector<Participant>& members);

// A hedging CCP participating in a post-default equilibrium. Its receivable
// moments derive from the (hedged part of the) defaulted portfolio and the
// pre-default price: E[R_c] = q_h^T (mu - p), Var = q_h^T Gamma q_h, cov = Gamma q_h.
struct CcpHedger {
    std::string id;
    VectorXd q_hedged;  // q_d, or q_d^h in hybrid strategies
    RiskSpec risk;
    Participant as_participant(const AssetModel& a, const VectorXd& pre_price) const;
};

// Unique entropic/Gaussian equilibrium with clearing sum q_i = clearing_rhs:
// p = mu - varrho (cov + Gamma c), q_i = Gamma^-1 ((varrho/varrho_i) cov - cov_i)
// + (varrho/varrho_i) c.
Equilibrium solve_entropic(const std::string& exchange_id, const std::vector<Participant>& members,
                           const AssetModel& asset, const VectorXd& clearing_rhs);

// Expected-shortfall equilibrium by damped Newton on the clearing condition plus
// gradient-matching equations referenced to the lowest-id member. An optional
// hedger (degenerate moments, receivable spanned by P) is first placed at its
// full-offset position and accepted if the conjugate-equality residual vanishes;
// otherwise it joins the smooth system as an ordinary unknown.
Equilibrium solve_es(const std::string& exchange_id, const std::vector<Participant>& members,
                     const AssetModel& asset, const VectorXd& clearing_rhs,
                     const std::optional<CcpHedger>& hedger = std::nullopt);

// Dispatch on the members' risk kinds. Mixed kinds are rejected.
Equilibrium solve_exchange(const std::string& exchange_id, const std::vector<Participant>& members,
                           const AssetModel& asset, const VectorXd& clearing_rhs,
                           const std::optional<CcpHedger>& hedger = std::nullopt);

struct EquilibriumCheck {
    double residual_kkt;
    double residual_clearing;
    double price_consistency;
};

// Recompute both residuals from grad_r and the spread of member-implied prices.
// Participants at non-differentiable points (degenerate ES hedger) are skipped
// in the KKT and price checks.
EquilibriumCheck verify_equilibrium(const Equilibrium& eq, const std::vector<Participant>& members,
                                    const AssetModel& asset, const VectorXd& clearing_rhs);

// Fenchel-Young residual r_c(q_c) + q_c^T p + r_c*(-p) of a hedger with
// receivable moments spanned by P; the conjugate is evaluated by concave
// maximization over the box [-box_half, box_half]^m. Zero iff -p is a
// subgradient of r_c at q_c.
double hedger_conjugate_residual(const Participant& hedger, const AssetModel& asset,
                                 const VectorXd& q_c, const VectorXd& price, double box_half);

}  // namespace ccpdm
