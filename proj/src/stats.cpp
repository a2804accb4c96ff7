#include "ccpdm/stats.hpp"

#include <gsl/gsl_cdf.h>
#include <gsl/gsl_integration.h>
#include <gsl/gsl_randist.h>

#include <cmath>
#include <stdexcept>

namespace ccpdm::stats {

double norm_pdf(double x) { return gsl_ran_ugaussian_pdf(x); }
double norm_cdf(double x) { return gsl_cdf_ugaussian_P(x); }

double norm_ppf(double p) {
    if (p <= 0.0 || p >= 1.0) throw std::invalid_argument("norm_ppf: p must be in (0,1)");
    return gsl_cdf_ugaussian_Pinv(p);
}

double t_pdf(double x, double nu) { return gsl_ran_tdist_pdf(x, nu); }
double t_cdf(double x, double nu) { return gsl_cdf_tdist_P(x, nu); }

double t_ppf(double p, double nu) {
    if (p <= 0.0 || p >= 1.0) throw std::invalid_argument("t_ppf: p must be in (0,1)");
    return gsl_cdf_tdist_Pinv(p, nu);
}

namespace {

struct BinormParams {
    double x, y, r;
};

double binorm_integrand(double t, void* params) {
    // Drezner-Wesolowsky style: d/dr P = phi2(x,y;r), integrate over correlation.
    const auto* p = static_cast<const BinormParams*>(params);
    const double denom = 1.0 - t * t;
    const double expo = -(p->x * p->x - 2.0 * t * p->x * p->y + p->y * p->y) / (2.0 * denom);
    return std::exp(expo) / (2.0 * M_PI * std::sqrt(denom));
}

}  // namespace

double binorm_cdf(double x, double y, double r) {
    if (r <= -1.0 || r >= 1.0) throw std::invalid_argument("binorm_cdf: |r| must be < 1");
    BinormParams params{x, y, r};
    gsl_function f;
    f.function = &binorm_integrand;
    f.params = &params;
    gsl_integration_workspace* ws = gsl_integration_workspace_alloc(256);
    double val = 0.0, err = 0.0;
    gsl_integration_qag(&f, 0.0, r, 1e-12, 1e-10, 256, GSL_INTEG_GAUSS41, ws, &val, &err);
    gsl_integration_workspace_free(ws);
    return norm_cdf(x) * norm_cdf(y) + val;
}

}  // namespace ccpdm::stats
