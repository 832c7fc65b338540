#include "pepsi/variance.hpp"

#include <cmath>

namespace pepsi {

namespace {

Matrix inverse_with_guard(const Matrix& m, const char* name) {
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const double smax = svd.singularValues().maxCoeff();
    const double smin = svd.singularValues().minCoeff();
    if (!(smin > 0.0) || smax / smin > 1e12)
        throw NumericError(std::string(name) + ": condition number exceeds 1e12");
    return svd.solve(Matrix::Identity(m.rows(), m.cols()));
}

}  // namespace

VarianceComponents estimate_components(const PrimaryDataset& primary, const ModelSpec& spec,
                                       const Vector& beta_hat, const PooledComponents* pooled) {
    VarianceComponents c;
    c.n = primary.n();
    const double nd = static_cast<double>(c.n);
    Matrix f = spec.score_matrix(beta_hat, primary.x, primary.y);
    c.gamma_hat = spec.eval_jacobian_full(beta_hat, primary.x, primary.y);
    c.sigma_hat = f.transpose() * f / nd;
    if (pooled != nullptr) {
        c.pooled = *pooled;
        c.has_pooled = true;
        c.lambda_hat = f.transpose() * pooled->G / nd;
    }
    if (!c.gamma_hat.allFinite() || !c.sigma_hat.allFinite())
        throw NumericError("estimate_components: non-finite component estimates");
    return c;
}

Matrix covariance_of(Method method, const VarianceComponents& c) {
    const int p0 = static_cast<int>(c.gamma_hat.rows());
    Matrix ginv = inverse_with_guard(c.gamma_hat, "Gamma");
    Matrix middle = c.sigma_hat;

    if (method != Method::naive) {
        if (!c.has_pooled)
            throw ContractError("covariance_of: method requires pooled secondary components");
        const auto& pooled = c.pooled;
        if (method == Method::pepsi) {
            Matrix proj = pooled.projector();
            middle -= c.lambda_hat * proj * c.lambda_hat.transpose();
        } else if (method == Method::psi || method == Method::vis) {
            for (std::size_t m = 0; m < pooled.blocks.size(); ++m) {
                const auto& blk = pooled.blocks[m];
                const Matrix lam_m = c.lambda_hat.middleCols(pooled.offsets[m], blk.r);
                const Matrix& reduction = method == Method::psi ? blk.T : blk.S;
                middle -= lam_m * reduction * lam_m.transpose();
            }
        } else {
            throw ContractError("covariance_of: averaging covariance is produced by averaging_fit");
        }
    }

    Matrix v = ginv * middle * ginv.transpose() / static_cast<double>(c.n);
    v = 0.5 * (v + v.transpose()).eval();
    for (int j = 0; j < p0; ++j)
        if (v(j, j) < 0.0)
            throw NumericError(std::string("covariance_of(") + method_name(method) +
                               "): negative variance estimate for coefficient " +
                               std::to_string(j) +
                               "; the sample is likely too small for the retained secondary "
                               "degrees of freedom");
    return v;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ContractError("normal_quantile: p must be in (0,1)");
    // Acklam's rational approximation, polished by one Halley step.
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double cc[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                -2.400758277161838e+00, -2.549732539343734e+00,
                                4.374664141464968e+00, 2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    double x;
    if (p < plow) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((cc[0] * q + cc[1]) * q + cc[2]) * q + cc[3]) * q + cc[4]) * q + cc[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((cc[0] * q + cc[1]) * q + cc[2]) * q + cc[3]) * q + cc[4]) * q + cc[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double e = normal_cdf(x) - p;
    const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
    return x - u / (1.0 + x * u / 2.0);
}

InferenceTable wald_inference(const Vector& beta_hat, const Matrix& covariance, double level,
                              const Matrix* naive_covariance) {
    if (!(level > 0.0 && level < 1.0))
        throw ContractError("wald_inference: confidence level must be in (0,1)");
    if (covariance.rows() != beta_hat.size() || covariance.cols() != beta_hat.size())
        throw ContractError("wald_inference: covariance dimension mismatch");
    const double z = normal_quantile(0.5 + level / 2.0);
    InferenceTable table;
    table.reserve(beta_hat.size());
    for (Eigen::Index j = 0; j < beta_hat.size(); ++j) {
        InferenceRow row;
        row.estimate = beta_hat[j];
        row.se = std::sqrt(std::max(covariance(j, j), 0.0));
        row.lower = row.estimate - z * row.se;
        row.upper = row.estimate + z * row.se;
        row.p_value = row.se > 0.0
                          ? 2.0 * (1.0 - normal_cdf(std::abs(row.estimate) / row.se))
                          : (row.estimate == 0.0 ? 1.0 : 0.0);
        row.re = naive_covariance != nullptr ? (*naive_covariance)(j, j) / covariance(j, j) : 1.0;
        table.push_back(row);
    }
    return table;
}

SampleSizeCheck sample_size_check(int p0, int k_hat, Eigen::Index n, Method method) {
    SampleSizeCheck out;
    int k_term = 0;
    if (method == Method::pepsi) k_term = 40 * k_hat;
    else if (method == Method::avg) k_term = 20 * k_hat;
    out.threshold = 40 * p0 + k_term;
    out.pass = n >= out.threshold;
    out.note = std::string(method_name(method)) + ": n=" + std::to_string(n) +
               (out.pass ? " meets " : " below ") + "guideline threshold " +
               std::to_string(out.threshold);
    return out;
}

}  // namespace pepsi
