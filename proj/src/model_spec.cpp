#include "pepsi/model_spec.hpp"

#include <algorithm>
#include <set>

namespace pepsi {

void PrimaryDataset::validate(Family family) const {
    if (y.size() < 1) throw ContractError("primary dataset: n must be >= 1");
    if (x.rows() != y.size())
        throw ContractError("primary dataset: x has " + std::to_string(x.rows()) +
                            " rows but y has " + std::to_string(y.size()));
    if (!y.allFinite() || !x.allFinite())
        throw NumericError("primary dataset: non-finite values");
    if (family == Family::logistic) {
        for (Eigen::Index i = 0; i < y.size(); ++i)
            if (y[i] != 0.0 && y[i] != 1.0)
                throw ContractError("logistic outcome must be 0/1; row " + std::to_string(i) +
                                    " has " + std::to_string(y[i]));
    }
}

void SecondaryDataset::validate() const {
    if (y_tilde.size() < 1) throw ContractError("secondary dataset: n must be >= 1");
    if (x_tilde.rows() != y_tilde.size())
        throw ContractError("secondary dataset: row mismatch between y_tilde and x_tilde");
    if (!y_tilde.allFinite() || !x_tilde.allFinite())
        throw NumericError("secondary dataset: non-finite values");
}

ModelSpec ModelSpec::linear(int n_covariates, bool intercept) {
    if (n_covariates < 0) throw ContractError("n_covariates must be >= 0");
    ModelSpec s(Family::linear, n_covariates, intercept);
    if (s.dim_g() == 0) throw ContractError("model has no coefficients");
    return s;
}

ModelSpec ModelSpec::logistic(int n_covariates, bool intercept) {
    if (n_covariates < 0) throw ContractError("n_covariates must be >= 0");
    ModelSpec s(Family::logistic, n_covariates, intercept);
    if (s.dim_g() == 0) throw ContractError("model has no coefficients");
    return s;
}

ModelSpec ModelSpec::with_zero_constraints(const std::vector<int>& zero_set) const {
    std::set<int> merged(fixed_zero_.begin(), fixed_zero_.end());
    for (int j : zero_set) {
        if (j < 0 || j >= dim_g())
            throw ContractError("zero constraint index " + std::to_string(j) +
                                " outside coefficient range [0," + std::to_string(dim_g()) + ")");
        merged.insert(j);
    }
    if (static_cast<int>(merged.size()) >= dim_g())
        throw ContractError("zero constraints cover all coefficients; no free parameter left");
    ModelSpec out = *this;
    out.fixed_zero_.assign(merged.begin(), merged.end());
    return out;
}

std::vector<int> ModelSpec::free_indices() const {
    std::vector<int> free;
    free.reserve(dim_theta());
    std::size_t k = 0;
    for (int j = 0; j < dim_g(); ++j) {
        if (k < fixed_zero_.size() && fixed_zero_[k] == j) {
            ++k;
            continue;
        }
        free.push_back(j);
    }
    return free;
}

void ModelSpec::check_params(const Eigen::Ref<const Vector>& params) const {
    if (params.size() != dim_theta())
        throw ContractError("parameter vector length " + std::to_string(params.size()) +
                            " != dim_theta " + std::to_string(dim_theta()));
    if (!params.allFinite()) throw NumericError("non-finite parameter value");
}

Vector ModelSpec::full_coefficients(const Eigen::Ref<const Vector>& params) const {
    check_params(params);
    Vector full = Vector::Zero(dim_g());
    const auto free = free_indices();
    for (int k = 0; k < dim_theta(); ++k) full[free[k]] = params[k];
    return full;
}

Vector ModelSpec::design_row(const Eigen::Ref<const Vector>& xrow) const {
    if (xrow.size() != n_covariates_)
        throw ContractError("covariate row length " + std::to_string(xrow.size()) +
                            " != declared dimension " + std::to_string(n_covariates_));
    Vector z(dim_g());
    int off = 0;
    if (intercept_) z[off++] = 1.0;
    z.segment(off, n_covariates_) = xrow;
    return z;
}

Matrix ModelSpec::design_matrix(const Matrix& x) const {
    if (x.cols() != n_covariates_)
        throw ContractError("covariate matrix has " + std::to_string(x.cols()) +
                            " columns, spec declares " + std::to_string(n_covariates_));
    Matrix z(x.rows(), dim_g());
    int off = 0;
    if (intercept_) {
        z.col(0).setOnes();
        off = 1;
    }
    z.rightCols(n_covariates_) = x;
    (void)off;
    return z;
}

Vector ModelSpec::eval_score(const Eigen::Ref<const Vector>& params,
                             const Eigen::Ref<const Vector>& xrow, double y) const {
    if (!std::isfinite(y) || !xrow.allFinite()) throw NumericError("non-finite observation");
    const Vector z = design_row(xrow);
    const Vector b = full_coefficients(params);
    const double eta = z.dot(b);
    const double resid = family_ == Family::linear ? y - eta : y - expit(eta);
    return resid * z;
}

Matrix ModelSpec::score_matrix(const Eigen::Ref<const Vector>& params, const Matrix& x,
                               const Vector& y) const {
    if (x.rows() != y.size()) throw ContractError("score_matrix: x/y row mismatch");
    if (!y.allFinite() || !x.allFinite()) throw NumericError("non-finite observation");
    const Matrix z = design_matrix(x);
    const Vector b = full_coefficients(params);
    Vector resid = y - (z * b).eval();
    if (family_ == Family::logistic)
        for (Eigen::Index i = 0; i < resid.size(); ++i) resid[i] = y[i] - expit(z.row(i).dot(b));
    return z.array().colwise() * resid.array();
}

Matrix ModelSpec::eval_jacobian_full(const Eigen::Ref<const Vector>& params, const Matrix& x,
                                     const Vector& y) const {
    if (x.rows() != y.size()) throw ContractError("eval_jacobian: x/y row mismatch");
    if (!y.allFinite() || !x.allFinite()) throw NumericError("non-finite observation");
    const Matrix z = design_matrix(x);
    const double n = static_cast<double>(z.rows());
    if (family_ == Family::linear) return -(z.transpose() * z) / n;
    const Vector b = full_coefficients(params);
    Vector v(z.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double p = expit(z.row(i).dot(b));
        v[i] = p * (1.0 - p);
    }
    return -(z.transpose() * (z.array().colwise() * v.array()).matrix()) / n;
}

Matrix ModelSpec::eval_jacobian(const Eigen::Ref<const Vector>& params, const Matrix& x,
                                const Vector& y) const {
    const Matrix full = eval_jacobian_full(params, x, y);
    const auto free = free_indices();
    Matrix out(dim_g(), dim_theta());
    for (int k = 0; k < dim_theta(); ++k) out.col(k) = full.col(free[k]);
    return out;
}

}  // namespace pepsi
