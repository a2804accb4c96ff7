#pragma once

#include "ccpdm/market.hpp"

#include <stdexcept>

namespace ccpdm {

struct UnsupportedCombination : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DegenerateRisk : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Absolute tolerance below which the ES square-root argument counts as degenerate.
inline constexpr double kTolDegenerate = 1e-12;

// Expected shortfall at level alpha of the standardized (mean 0, variance 1)
// one-dimensional margin of the elliptical family. Gaussian:
// phi(Phi^-1(alpha)) / (1-alpha). Student t: variance-standardized closed form.
double es_standardized(const EllipseKind& kind, double alpha);

// r_i(q) = rho_i(-R_i - q^T P), evaluated from the joint moments.
double objective_r(const Participant& p, const AssetModel& a, const VectorXd& q);

// Analytic gradient of objective_r.
VectorXd grad_r(const Participant& p, const AssetModel& a, const VectorXd& q);

// Analytic Hessian of objective_r (dense m x m).
MatrixXd hess_r(const Participant& p, const AssetModel& a, const VectorXd& q);

// ES square-root argument (1,q)^T Gamma_i (1,q); useful to probe degeneracy.
double es_sqrt_arg(const Participant& p, const AssetModel& a, const VectorXd& q);

}  // namespace ccpdm
