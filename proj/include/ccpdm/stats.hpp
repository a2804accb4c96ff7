#pragma once

namespace ccpdm::stats {

// Standard normal density, cdf, and inverse cdf.
double norm_pdf(double x);
double norm_cdf(double x);
double norm_ppf(double p);

// Student t (scale-1 parameterization, nu degrees of freedom).
double t_pdf(double x, double nu);
double t_cdf(double x, double nu);
double t_ppf(double p, double nu);

// Bivariate standard normal orthant probability P[X<=x, Y<=y] with correlation r.
// Used by tests as an oracle for joint default probabilities.
double binorm_cdf(double x, double y, double r);

}  // namespace ccpdm::stats
