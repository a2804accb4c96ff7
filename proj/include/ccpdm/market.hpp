#pragma once

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ccpdm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Relative eigenvalue tolerance for positive-definiteness checks.
inline constexpr double kTolPd = 1e-10;

struct EllipseKind {
    enum class Tag { Gaussian, StudentT };
    Tag tag = Tag::Gaussian;
    double nu = 0.0;  // degrees of freedom, StudentT only; must be > 2

    static EllipseKind gaussian() { return {Tag::Gaussian, 0.0}; }
    static EllipseKind student_t(double nu) { return {Tag::StudentT, nu}; }
    bool is_gaussian() const { return tag == Tag::Gaussian; }
};

// Joint moments of the traded payoff vector P: mean mu and covariance gamma.
struct AssetModel {
    VectorXd mu;
    MatrixXd gamma;
    EllipseKind ellipse;

    int n_assets() const { return static_cast<int>(mu.size()); }
};

struct RiskSpec {
    enum class Kind { Entropic, ExpectedShortfall };
    Kind kind = Kind::Entropic;
    double varrho = 0.0;  // risk aversion, Entropic
    double alpha = 0.0;   // confidence level, ExpectedShortfall

    static RiskSpec entropic(double varrho) { return {Kind::Entropic, varrho, 0.0}; }
    static RiskSpec expected_shortfall(double alpha) { return {Kind::ExpectedShortfall, 0.0, alpha}; }
};

enum class Role { ClearingMember, SimpleParticipant, CcpHedger };

// A trading participant with the joint second moments of (R_i, P) that every
// closed form and solver consumes: E[R_i], Var(R_i), Cov(R_i, P).
struct Participant {
    std::string id;
    Role role = Role::ClearingMember;
    RiskSpec risk;
    double er = 0.0;
    double var_r = 0.0;
    VectorXd cov_r;

    // Optional credit-side data, consumed by the xva module only.
    std::optional<double> gamma_pd;            // default probability over [0,T]
    std::map<std::string, double> cleared_by;  // simple participants: position split across members
};

struct Exchange {
    std::string id;
    std::vector<std::string> members;
    VectorXd clearing_rhs;  // right-hand side c of sum q_i = c; zero pre-default
};

struct StrategySpec;  // resolution.hpp
struct XvaConfig;     // xva.hpp

struct Scenario {
    AssetModel asset;
    std::vector<Exchange> exchanges;
    std::map<std::string, Participant> participants;
    std::string defaulter;
    std::shared_ptr<StrategySpec> strategy;  // optional; CLI may override
    std::shared_ptr<XvaConfig> xva;          // optional

    const Exchange& home_exchange() const;  // the exchange containing the defaulter
    const Exchange& exchange(const std::string& id) const;
};

struct Diagnostic {
    enum class Severity { Error, Warning };
    Severity severity;
    std::string code;
    std::string message;
};

// Block matrix [[Var(R_i), cov_r^T], [cov_r, Gamma]] of the joint vector (R_i, P).
MatrixXd assemble_joint_moments(const Participant& p, const AssetModel& a);

// Well-posedness checks ahead of any solve. Empty result means clean.
// Degenerate (singular PSD) participant moments yield a warning, not an error.
std::vector<Diagnostic> validate_scenario(const Scenario& s);

}  // namespace ccpdm
