#pragma once

#include "ccpdm/market.hpp"
#include "ccpdm/resolution.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ccpdm {

struct InsufficientTail : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct WeightUndefined : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NoSurvivors : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct XvaConfig {
    double horizon = 5.0;                 // period length in years (documentation only: all
                                          // inputs are already expressed over the period)
    std::map<std::string, double> gamma;  // participant default probabilities; "*" = default
    double funding_blend = 0.25;          // gamma_tilde / gamma
    double rho_cr = 0.20;                 // credit factor correlation
    double alpha_im = 0.75;
    double alpha_df = 0.80;
    double alpha_kva = 0.9975;
    double hurdle = 0.10;
    bool collateralized = true;           // false: IM = DF = 0 study
    long long n_paths = 1'000'000;
    int n_batches = 100;
    std::uint64_t seed = 42;

    double gamma_of(const std::string& id) const;
    void validate() const;
};

struct MarginProfile {
    std::map<std::string, double> im;     // proprietary-account initial margin
    std::map<std::string, double> sloim;  // stressed loss over IM
    std::map<std::string, double> df;     // cover-2 default fund contribution
    std::map<std::string, double> client_im;  // client-account margin, general setup
};

// One participant book inside a mutualized loss pool. Exposure over the period:
//   e = shift - b . Z   (Z standardized market factors)
// with loss-given-default (e_house - im - df)^+ , two-leg general form
//   ((e_house - im)^+ + (e_client - im_client)^+ - df)^+ .
struct MemberBook {
    std::string participant;
    int pool = 0;
    double gamma_pd = 0.0;  // 0 = cannot default (the hedging CCP)
    VectorXd b;
    double shift = 0.0;
    VectorXd b_client;      // empty when the member clears no clients
    double shift_client = 0.0;
    double im = 0.0;
    double im_client = 0.0;
    double df = 0.0;
    double wkey = 0.0;      // loss-allocation key (pro-rata of default fund / SLOIM)
    double mva_base = 0.0;  // IM + DF funded for the MVA
    double er_otc = 0.0;    // sum of expected OTC receivables, FVA input
};

// A bilateral exposure of one participant to a defaultable counterparty outside
// the mutualized pool (cleared client or OTC end-user): (1-J)(shift - b.Z + idio - im)^+.
struct BilateralBook {
    std::string participant;
    std::string counterparty;
    double cpty_gamma = 0.0;
    VectorXd b;
    double shift = 0.0;
    double idio_sd = 0.0;  // idiosyncratic receivable volatility
    double im = 0.0;
};

struct CreditState {
    int m = 0;
    EllipseKind market;
    std::vector<MemberBook> books;
    std::vector<BilateralBook> bilaterals;
    std::map<int, double> junior_buffer;  // per pool, absorbed ahead of loss allocation
};

struct XvaValues {
    double cva = 0.0, mva = 0.0, kva = 0.0, fva = 0.0;
    double cva_se = 0.0, kva_se = 0.0;
    double total() const { return cva + mva + kva + fva; }
};

struct XvaResult {
    std::map<std::string, XvaValues> values;
    double sum_over(const std::vector<std::string>& ids) const;
};

// Seeded Monte Carlo over the Gaussian latent-factor default model. Batches own
// independent streams keyed by (seed, batch); the reduction is ordered, so the
// result is identical for any worker count. parallel=false runs the serial
// reference implementation used for testing and benchmarking.
XvaResult compute_xva(const CreditState& state, const XvaConfig& cfg, bool parallel = true);

// Margin profile of one equilibrium per (e:IM/DF) rules: IM is the VaR of the
// member's period exposure, SLOIM the VaR increment from alpha_im to alpha_df,
// DF the cover-2 amount allocated pro-rata of SLOIM.
MarginProfile compute_margins(const Equilibrium& eq, const XvaConfig& cfg, const AssetModel& asset);

// State builders bridging equilibria to credit states.
CreditState build_pre_state(const Scenario& s, const std::map<std::string, Equilibrium>& pre,
                            const XvaConfig& cfg);
CreditState build_post_state(const Scenario& s, const ResolutionOutcome& outcome, const XvaConfig& cfg);
// Auction counterfactual: the taker absorbs the package at unchanged prices;
// exposure margins and allocation keys stay at their pre-default values, the
// defaulter's default-fund contribution absorbs first losses, funded margins
// (MVA) are recomputed on the new books.
CreditState build_auction_state(const Scenario& s, const std::map<std::string, Equilibrium>& pre,
                                const XvaConfig& cfg, const std::string& taker, const VectorXd& package);

struct AuctionOutcome {
    std::string taker;
    double ac = 0.0;
    std::vector<std::pair<std::string, double>> ranking;  // ascending cost
};

// Least-cost taker among the surviving members of the defaulter's exchange:
// for each candidate, sum of the survivors' XVA changes in the counterfactual.
AuctionOutcome auction_cost(const Scenario& s, const std::map<std::string, Equilibrium>& pre,
                            const XvaConfig& cfg, const VectorXd& package, bool parallel = true);

struct XvaReport {
    XvaResult pre;
    XvaResult post;
    std::map<std::string, double> delta_xva;  // survivors of the defaulter's exchange
    double sum_delta_xva = 0.0;
    std::optional<AuctionOutcome> auction;
    double ac = 0.0;
    double cc = 0.0;   // sum delta XVA + AC
    double mc = 0.0;   // from the resolution outcome
    double ftp = 0.0;  // mc + cc
};

// Full credit-cost pipeline for one resolved strategy; run_auction controls the
// trailing auction of the (hedged or raw) defaulted package.
XvaReport compute_ftp(const Scenario& s, const ResolutionOutcome& outcome, const XvaConfig& cfg,
                      bool run_auction, bool parallel = true);

// Pure auction strategy: no equilibrium change, FTP = AC.
XvaReport compute_pure_auction(const Scenario& s, const std::map<std::string, Equilibrium>& pre,
                               const XvaConfig& cfg, bool parallel = true);

}  // namespace ccpdm
