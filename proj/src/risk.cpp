#include "ccpdm/risk.hpp"

#include "ccpdm/stats.hpp"

#include <cmath>

namespace ccpdm {

double es_standardized(const EllipseKind& kind, double alpha) {
    if (alpha < 0.0 || alpha >= 1.0) throw std::invalid_argument("es_standardized: alpha must lie in [0,1)");
    if (kind.is_gaussian()) {
        if (alpha == 0.0) return 0.0;
        const double z = stats::norm_ppf(alpha);
        return stats::norm_pdf(z) / (1.0 - alpha);
    }
    const double nu = kind.nu;
    if (nu <= 2.0) throw std::invalid_argument("es_standardized: Student t needs nu > 2");
    if (alpha == 0.0) return 0.0;
    const double q = stats::t_ppf(alpha, nu);
    // ES of the scale-1 t, then standardized to unit variance.
    const double es_raw = stats::t_pdf(q, nu) * (nu + q * q) / ((1.0 - alpha) * (nu - 1.0));
    return std::sqrt((nu - 2.0) / nu) * es_raw;
}

double es_sqrt_arg(const Participant& p, const AssetModel& a, const VectorXd& q) {
    return p.var_r + 2.0 * q.dot(p.cov_r) + q.dot(a.gamma * q);
}

double objective_r(const Participant& p, const AssetModel& a, const VectorXd& q) {
    switch (p.risk.kind) {
        case RiskSpec::Kind::Entropic: {
            if (!a.ellipse.is_gaussian())
                throw UnsupportedCombination("entropic risk under a Student t market has no finite value");
            const double vr = p.risk.varrho;
            return -p.er - q.dot(a.mu) + 0.5 * vr * p.var_r + vr * q.dot(p.cov_r) +
                   0.5 * vr * q.dot(a.gamma * q);
        }
        case RiskSpec::Kind::ExpectedShortfall: {
            const double es = es_standardized(a.ellipse, p.risk.alpha);
            const double s = es_sqrt_arg(p, a, q);
            return -p.er - q.dot(a.mu) + es * std::sqrt(std::max(s, 0.0));
        }
    }
    throw std::logic_error("objective_r: unreachable");
}

VectorXd grad_r(const Participant& p, const AssetModel& a, const VectorXd& q) {
    switch (p.risk.kind) {
        case RiskSpec::Kind::Entropic: {
            if (!a.ellipse.is_gaussian())
                throw UnsupportedCombination("entropic risk under a Student t market has no finite value");
            return -a.mu + p.risk.varrho * (p.cov_r + a.gamma * q);
        }
        case RiskSpec::Kind::ExpectedShortfall: {
            const double es = es_standardized(a.ellipse, p.risk.alpha);
            const double s = es_sqrt_arg(p, a, q);
            if (s <= kTolDegenerate)
                throw DegenerateRisk("grad_r: ES objective is not differentiable (degenerate sqrt argument)");
            return -a.mu + (es / std::sqrt(s)) * (p.cov_r + a.gamma * q);
        }
    }
    throw std::logic_error("grad_r: unreachable");
}

MatrixXd hess_r(const Participant& p, const AssetModel& a, const VectorXd& q) {
    switch (p.risk.kind) {
        case RiskSpec::Kind::Entropic:
            if (!a.ellipse.is_gaussian())
                throw UnsupportedCombination("entropic risk under a Student t market has no finite value");
            return p.risk.varrho * a.gamma;
        case RiskSpec::Kind::ExpectedShortfall: {
            const double es = es_standardized(a.ellipse, p.risk.alpha);
            const double s = es_sqrt_arg(p, a, q);
            if (s <= kTolDegenerate)
                throw DegenerateRisk("hess_r: ES objective is not twice differentiable here");
            const VectorXd g = p.cov_r + a.gamma * q;
            return es * (a.gamma / std::sqrt(s) - (g * g.transpose()) / (s * std::sqrt(s)));
        }
    }
    throw std::logic_error("hess_r: unreachable");
}

}  // namespace ccpdm
