#pragma once

#include <vector>

#include "pepsi/types.hpp"

namespace pepsi {

/// An estimating-function family over a linear design: the intercept
/// (optional) followed by the raw covariates. Scores are always emitted at
/// full design length dim_g; coefficients constrained to zero simply carry
/// the value 0 in the design product, which is what makes a constrained
/// function over-identified rather than reduced.
class ModelSpec {
  public:
    static ModelSpec linear(int n_covariates, bool intercept = true);
    static ModelSpec logistic(int n_covariates, bool intercept = true);

    Family family() const { return family_; }
    bool has_intercept() const { return intercept_; }
    int n_covariates() const { return n_covariates_; }

    /// Length of the emitted score vector (intercept + covariates).
    int dim_g() const { return n_covariates_ + (intercept_ ? 1 : 0); }
    /// Number of free coefficients.
    int dim_theta() const { return dim_g() - static_cast<int>(fixed_zero_.size()); }

    /// Coefficient indices (0-based over the dim_g design coordinates,
    /// intercept first when present) constrained to exactly zero.
    const std::vector<int>& fixed_zero_set() const { return fixed_zero_; }

    /// Returns a spec with `zero_set` merged into the fixed-zero set.
    /// Rejects a constraint set that would leave no free coefficient.
    ModelSpec with_zero_constraints(const std::vector<int>& zero_set) const;

    /// Indices of the free coefficients in design coordinates, ascending.
    std::vector<int> free_indices() const;

    /// Embeds free coefficients into a full-length design coefficient
    /// vector, zeros at constrained coordinates.
    Vector full_coefficients(const Eigen::Ref<const Vector>& params) const;

    /// Design vector z for one covariate row.
    Vector design_row(const Eigen::Ref<const Vector>& xrow) const;

    /// Score for one observation: linear (y - z'b) z, logistic (y - expit(z'b)) z,
    /// where b is the full coefficient embedding of `params`.
    Vector eval_score(const Eigen::Ref<const Vector>& params,
                      const Eigen::Ref<const Vector>& xrow, double y) const;

    /// n x dim_g matrix of per-row scores over a full dataset.
    Matrix score_matrix(const Eigen::Ref<const Vector>& params, const Matrix& x,
                        const Vector& y) const;

    /// Averaged score Jacobian n^-1 sum d f_i / d theta, restricted to free
    /// coefficient columns (dim_g x dim_theta).
    Matrix eval_jacobian(const Eigen::Ref<const Vector>& params, const Matrix& x,
                         const Vector& y) const;

    /// Averaged Jacobian over all dim_g coefficient coordinates, free or not.
    Matrix eval_jacobian_full(const Eigen::Ref<const Vector>& params, const Matrix& x,
                              const Vector& y) const;

    /// Full design matrix (n x dim_g).
    Matrix design_matrix(const Matrix& x) const;

  private:
    ModelSpec(Family f, int d, bool intercept) : family_(f), n_covariates_(d), intercept_(intercept) {}

    void check_params(const Eigen::Ref<const Vector>& params) const;

    Family family_;
    int n_covariates_;
    bool intercept_;
    std::vector<int> fixed_zero_;
};

}  // namespace pepsi
