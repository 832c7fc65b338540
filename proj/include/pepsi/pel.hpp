#pragma once

#include <utility>
#include <vector>

#include "pepsi/el_core.hpp"
#include "pepsi/model_spec.hpp"

namespace pepsi {

/// SCAD penalty settings and inner-loop controls for penalized EL fits.
struct PenaltyConfig {
    double a = 3.7;                 // SCAD shape
    std::vector<double> tau_grid;   // empty -> default_tau_grid rule
    double gamma = 1e-3;            // hard-zero threshold on |theta_j|
    double theta_tol = 1e-8;        // outer-loop parameter-change stop
    int max_outer = 200;
    ELOptions el;

    void validate() const;
};

/// Penalized EL output for one secondary working model. theta_hat carries
/// exact zeros at the detected coordinates; its length is the number of free
/// coefficients of the input spec.
struct SecondaryFit {
    ModelSpec spec;
    Vector theta_hat;
    Vector lambda_hat;
    std::vector<int> zero_index_set;  // indices into theta_hat
    double tau_selected = 0.0;
    double bic_value = 0.0;
    double log_ratio = 0.0;
    int q_hat = 0;
    bool converged = false;
    bool degenerate_all_zero = false;

    explicit SecondaryFit(ModelSpec s) : spec(std::move(s)) {}
};

/// SCAD penalty value and derivative at t >= 0. The derivative is tau on
/// [0, tau], decays linearly to zero on (tau, a*tau], and vanishes beyond;
/// the value integrates it from zero, reaching (a+1) tau^2 / 2.
std::pair<double, double> scad(double t, double tau, double a = 3.7);

/// C_m = max(log log p, 1), the BIC model-size constant.
double bic_constant(int p);

/// Default tuning grid: 20 log-spaced multipliers in [0.01, 2] applied to
/// sqrt(log(p)/n) * scale.
std::vector<double> default_tau_grid(int p, Eigen::Index n, double scale);

/// One penalized EL fit at a fixed tau: alternating dual solves and damped
/// Newton steps on theta with a local quadratic approximation of the
/// penalty; coordinates whose magnitude falls to gamma or below are zeroed
/// and frozen for the remainder of the fit.
SecondaryFit pel_fit(const SecondaryDataset& secondary, const ModelSpec& spec, double tau,
                     const PenaltyConfig& config = {});

/// Runs pel_fit over the tuning grid and returns the fit minimizing
/// BIC(tau) = 2 l_m(theta_hat) + C_m log(n) #nonzero; ties go to the larger
/// tau (sparser model). Throws if every grid point fails.
SecondaryFit bic_select(const SecondaryDataset& secondary, const ModelSpec& spec,
                        const PenaltyConfig& config = {});

/// Unpenalized EL estimation: minimizes the EL log ratio over the free
/// coefficients of `spec`. This is the working-model fit behind the
/// prior-knowledge (VIS) integration route.
SecondaryFit el_fit(const SecondaryDataset& secondary, const ModelSpec& spec,
                    const PenaltyConfig& config = {});

/// Selection matrix H (q_hat x p) picking the zeroed coordinates, so that
/// H theta_hat = 0 exactly. An all-zero fit yields the identity.
Matrix zero_pattern(const SecondaryFit& fit);

}  // namespace pepsi
