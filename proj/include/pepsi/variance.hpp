#pragma once

#include "pepsi/integrators.hpp"

namespace pepsi {

/// Plug-in estimates of the asymptotic variance building blocks shared by
/// every method: Gamma = E df/dbeta, Sigma = E f f', Lambda = E f G', plus
/// the pooled block machinery when secondary data enter.
struct VarianceComponents {
    Matrix gamma_hat;   // p0 x p0
    Matrix sigma_hat;   // p0 x p0
    Matrix lambda_hat;  // p0 x R_total (empty when no secondary data)
    PooledComponents pooled;
    bool has_pooled = false;
    Eigen::Index n = 0;
};

VarianceComponents estimate_components(const PrimaryDataset& primary, const ModelSpec& spec,
                                       const Vector& beta_hat,
                                       const PooledComponents* pooled = nullptr);

/// Plug-in covariance V_hat / n for naive, VIS, PSI or PEPSI. The result is
/// symmetrized; negative diagonal entries raise a NumericError advising a
/// larger sample.
Matrix covariance_of(Method method, const VarianceComponents& components);

struct InferenceRow {
    double estimate;
    double se;
    double lower;
    double upper;
    double p_value;
    double re;  // naive variance over method variance; 1 when no naive ref
};

using InferenceTable = std::vector<InferenceRow>;

/// Two-sided normal-quantile Wald intervals and p-values; the RE column is
/// filled when the naive covariance is supplied.
InferenceTable wald_inference(const Vector& beta_hat, const Matrix& covariance, double level,
                              const Matrix* naive_covariance = nullptr);

struct SampleSizeCheck {
    int threshold;
    bool pass;
    std::string note;
};

/// Advisory design-size rule: n >= 40 p0 + 40 K for PEPSI, n >= 40 p0 + 20 K
/// for the averaging scheme, 40 p0 otherwise. Never blocks estimation.
SampleSizeCheck sample_size_check(int p0, int k_hat, Eigen::Index n, Method method);

/// Standard normal CDF and quantile.
double normal_cdf(double x);
double normal_quantile(double p);

}  // namespace pepsi
