#pragma once

#include "ccpdm/equilibrium.hpp"
#include "ccpdm/market.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ccpdm {

struct StrategyMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StrategySpec {
    enum class Kind {
        LiquidateOwn,
        LiquidateExternal,
        HedgeOwn,
        HedgeExternal,
        ReplicateOwn,
        ReplicateExternal,
        HybridOwn,
        HybridExternal,
    };
    Kind kind = Kind::LiquidateOwn;
    std::string external_exchange;            // *External kinds
    VectorXd q_d_liq;                         // Hybrid kinds: liquidated slice of q_d
    std::vector<Participant> new_entrants;    // joins the exchange where the action happens

    bool is_external() const {
        return kind == Kind::LiquidateExternal || kind == Kind::HedgeExternal ||
               kind == Kind::ReplicateExternal || kind == Kind::HybridExternal;
    }
    bool has_hedger() const {
        return kind == Kind::HedgeOwn || kind == Kind::HedgeExternal || kind == Kind::ReplicateOwn ||
               kind == Kind::ReplicateExternal || kind == Kind::HybridOwn || kind == Kind::HybridExternal;
    }
    bool hedger_pinned() const {
        return kind == Kind::ReplicateOwn || kind == Kind::ReplicateExternal;
    }
    static const char* name(Kind k);
    static Kind parse(const std::string& name);
};

// One post-default exchange to re-solve: membership, clearing right-hand side,
// optional hedging CCP, and the liquidated quantity routed to this exchange
// (steers the per-participant margin-leg attribution).
struct PostExchange {
    std::string exchange_id;
    std::vector<Participant> members;  // survivors plus entrants; hedger kept separate
    VectorXd clearing_rhs;
    std::optional<CcpHedger> hedger;
    bool hedger_pinned = false;  // replicate: position forced to -q_hedged, folded into the solve
    VectorXd q_liq;              // liquidated quantity executed on this exchange
};

struct ResolutionOutcome {
    StrategySpec strategy;
    std::vector<std::string> defaulters;
    VectorXd q_d;  // aggregate defaulted portfolio
    std::map<std::string, Equilibrium> pre;
    std::map<std::string, Equilibrium> post;
    std::map<std::string, double> lc_per_exchange;
    std::map<std::string, double> lc_per_participant;
    std::map<std::string, double> delta_rho;           // participant -> incremental risk
    std::map<std::string, std::string> post_exchange_of;  // participant -> post exchange id
    std::map<std::string, double> mc_per_exchange;
    double lc_total = 0.0;
    double delta_rho_total = 0.0;
    double mc_total = 0.0;
};

// Pre-default Radner equilibria, one per exchange, zero clearing.
std::map<std::string, Equilibrium> pre_default_equilibria(const Scenario& s);

// Post-default membership and clearing conditions implied by the strategy.
std::vector<PostExchange> post_default_clearing(const Scenario& s, const StrategySpec& strategy,
                                                const std::map<std::string, Equilibrium>& pre,
                                                const std::vector<std::string>& defaulters);

// LC_E = sum_{i in E'} q'_i . (p^E - p'^E); per-participant attribution
// LC_i = (q_i + dq^l_i) . (p^E - p'^E) with the liquidation leg scaled so the
// legs sum to the liquidated quantity routed to the exchange.
void liquidity_cost(const Scenario& s, const PostExchange& pex, const Equilibrium& pre,
                    const Equilibrium& post, ResolutionOutcome& out);

// dRho_i = r_i(q'_i) - 1_{i != c} r_i(q_i) + q'_i . p' - q_i . p.
void delta_rho(const Scenario& s, const PostExchange& pex, const Equilibrium& pre,
               const Equilibrium& post, const VectorXd& home_pre_price, ResolutionOutcome& out);

// Full pipeline: pre equilibria, post equilibria per strategy, LC, dRho, MC.
ResolutionOutcome resolve(const Scenario& s, const StrategySpec& strategy);
ResolutionOutcome resolve(const Scenario& s, const StrategySpec& strategy,
                          const std::vector<std::string>& defaulters);

// Closed-form market cost for entropic Gaussian scenarios (liquidation or
// hedging on the own exchange), evaluated from moments only. Serves as an
// independent oracle for the generic pipeline.
double entropic_mc_closed_form(const Scenario& s, const StrategySpec& strategy);
double entropic_mc_closed_form(const Scenario& s, const StrategySpec& strategy,
                               const std::vector<std::string>& defaulters);

}  // namespace ccpdm
