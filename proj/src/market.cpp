#include "ccpdm/market.hpp"

#include <Eigen/Eigenvalues>

#include <set>
#include <sstream>
#include <stdexcept>

namespace ccpdm {

const Exchange& Scenario::home_exchange() const {
    for (const auto& ex : exchanges) {
        for (const auto& m : ex.members) {
            if (m == defaulter) return ex;
        }
    }
    throw std::runtime_error("scenario: defaulter '" + defaulter + "' belongs to no exchange");
}

const Exchange& Scenario::exchange(const std::string& id) const {
    for (const auto& ex : exchanges) {
        if (ex.id == id) return ex;
    }
    throw std::runtime_error("scenario: unknown exchange '" + id + "'");
}

MatrixXd assemble_joint_moments(const Participant& p, const AssetModel& a) {
    const int m = a.n_assets();
    if (p.cov_r.size() != m) {
        throw std::invalid_argument("assemble_joint_moments: cov_r has length " +
                                    std::to_string(p.cov_r.size()) + ", expected " + std::to_string(m));
    }
    MatrixXd g(m + 1, m + 1);
    g(0, 0) = p.var_r;
    g.block(0, 1, 1, m) = p.cov_r.transpose();
    g.block(1, 0, m, 1) = p.cov_r;
    g.block(1, 1, m, m) = a.gamma;
    return g;
}

namespace {

void check_spd(const MatrixXd& g, const std::string& what, std::vector<Diagnostic>& out,
               bool require_pd, const std::string& pd_code, const std::string& psd_code) {
    if ((g - g.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + g.cwiseAbs().maxCoeff())) {
        out.push_back({Diagnostic::Severity::Error, "not_symmetric", what + " is not symmetric"});
        return;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(g);
    const double lmin = es.eigenvalues().minCoeff();
    const double lmax = es.eigenvalues().maxCoeff();
    const double tol = kTolPd * std::max(1.0, lmax);
    if (lmin < -tol) {
        out.push_back({Diagnostic::Severity::Error, psd_code, what + " has a negative eigenvalue"});
    } else if (require_pd && lmin <= tol) {
        out.push_back({Diagnostic::Severity::Error, pd_code, what + " is not positive definite"});
    } else if (!require_pd && lmin <= tol) {
        out.push_back({Diagnostic::Severity::Warning, pd_code,
                       what + " is singular; equilibrium uniqueness not guaranteed"});
    }
}

}  // namespace

std::vector<Diagnostic> validate_scenario(const Scenario& s) {
    std::vector<Diagnostic> out;
    const int m = s.asset.n_assets();

    if (!s.asset.mu.allFinite()) {
        out.push_back({Diagnostic::Severity::Error, "mu_not_finite", "asset mean is not finite"});
    }
    if (s.asset.gamma.rows() != m || s.asset.gamma.cols() != m) {
        out.push_back({Diagnostic::Severity::Error, "gamma_shape", "gamma is not m x m"});
        return out;
    }
    check_spd(s.asset.gamma, "gamma", out, /*require_pd=*/true, "gamma_not_pd", "gamma_not_pd");

    if (!s.asset.ellipse.is_gaussian() && s.asset.ellipse.nu <= 2.0) {
        out.push_back({Diagnostic::Severity::Error, "nu_too_small",
                       "Student t needs nu > 2 for a finite covariance"});
    }

    for (const auto& [id, p] : s.participants) {
        if (p.cov_r.size() != m) {
            out.push_back({Diagnostic::Severity::Error, "cov_r_shape", "participant " + id + ": cov_r length mismatch"});
            continue;
        }
        if (p.var_r < 0.0) {
            out.push_back({Diagnostic::Severity::Error, "var_r_negative", "participant " + id + ": Var(R) < 0"});
            continue;
        }
        switch (p.risk.kind) {
            case RiskSpec::Kind::Entropic:
                if (p.risk.varrho <= 0.0)
                    out.push_back({Diagnostic::Severity::Error, "varrho_not_positive",
                                   "participant " + id + ": entropic risk aversion must be > 0"});
                if (!s.asset.ellipse.is_gaussian())
                    out.push_back({Diagnostic::Severity::Error, "entropic_student_t",
                                   "participant " + id + ": entropic preferences need a Gaussian market"});
                break;
            case RiskSpec::Kind::ExpectedShortfall:
                if (p.risk.alpha < 0.0 || p.risk.alpha >= 1.0)
                    out.push_back({Diagnostic::Severity::Error, "alpha_out_of_range",
                                   "participant " + id + ": ES confidence must lie in [0,1)"});
                else
                    check_spd(assemble_joint_moments(p, s.asset), "gamma_i of " + id, out,
                              /*require_pd=*/false, "gamma_i_singular", "gamma_i_indefinite");
                break;
        }
        if (p.gamma_pd && (*p.gamma_pd < 0.0 || *p.gamma_pd >= 1.0)) {
            out.push_back({Diagnostic::Severity::Error, "gamma_pd_out_of_range",
                           "participant " + id + ": default probability must lie in [0,1)"});
        }
        for (const auto& [member, frac] : p.cleared_by) {
            if (!s.participants.count(member))
                out.push_back({Diagnostic::Severity::Error, "unknown_id",
                               "participant " + id + " cleared by unknown member " + member});
            (void)frac;
        }
    }

    std::set<std::string> seen;
    bool defaulter_found = false;
    for (const auto& ex : s.exchanges) {
        if (ex.members.empty())
            out.push_back({Diagnostic::Severity::Error, "empty_exchange", "exchange " + ex.id + " has no members"});
        if (ex.clearing_rhs.size() != m || !ex.clearing_rhs.allFinite())
            out.push_back({Diagnostic::Severity::Error, "clearing_rhs_invalid",
                           "exchange " + ex.id + ": clearing_rhs must be finite of length m"});
        for (const auto& mem : ex.members) {
            if (!s.participants.count(mem))
                out.push_back({Diagnostic::Severity::Error, "unknown_id",
                               "exchange " + ex.id + " references unknown participant " + mem});
            if (mem == s.defaulter) {
                if (defaulter_found)
                    out.push_back({Diagnostic::Severity::Error, "defaulter_ambiguous",
                                   "defaulter belongs to more than one exchange"});
                defaulter_found = true;
            }
        }
        if (seen.count(ex.id))
            out.push_back({Diagnostic::Severity::Error, "duplicate_exchange", "duplicate exchange id " + ex.id});
        seen.insert(ex.id);
    }
    if (!s.defaulter.empty() && !defaulter_found) {
        out.push_back({Diagnostic::Severity::Error, "defaulter_unknown",
                       "defaulter " + s.defaulter + " is not a member of any exchange"});
    }
    return out;
}

}  // namespace ccpdm
