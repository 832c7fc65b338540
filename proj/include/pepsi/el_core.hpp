#pragma once

#include "pepsi/types.hpp"

namespace pepsi {

/// Solver controls for the EL dual problem.
struct ELOptions {
    double tol = 1e-10;  // on the mean-gradient norm ||n^-1 sum g/(1+lam'g)||
    int max_iter = 100;
};

/// Dual solution of the empirical-likelihood inner problem at a fixed theta:
/// lambda maximizing sum_i log(1 + lambda'g_i) over the region where every
/// 1 + lambda'g_i is positive. The stationarity condition is exactly the
/// weight constraint n^-1 sum_i {1+lambda'g_i}^-1 g_i = 0.
struct ELDualSolution {
    Vector lambda;
    Vector weights;    // n^-1 (1 + lambda'g_i)^-1, strictly positive, sums to 1
    double log_ratio;  // sum_i log(1 + lambda'g_i) >= 0
    bool converged;
    int iterations;
};

/// Damped Newton solve of the dual. Line search enforces 1 + lambda'g_i >= 1/n
/// so the implied weights never exceed one. Throws ELNoSolutionError when zero
/// is outside the convex hull of the score rows and NumericError when the
/// iteration cap is reached with a non-trivial gradient.
ELDualSolution solve_dual(const Eigen::Ref<const Matrix>& scores, const ELOptions& opts = {});

/// Weights of a dual solution against its score matrix.
Vector el_weights(const ELDualSolution& solution, const Eigen::Ref<const Matrix>& scores);

/// Empirical likelihood log ratio sum_i log(1 + lambda'g_i).
double el_logratio(const ELDualSolution& solution, const Eigen::Ref<const Matrix>& scores);

namespace detail {

/// Reusable workspace for repeated dual solves on same-shape score matrices.
/// `warm` seeds the Newton iteration (pass the previous lambda when the
/// scores moved only slightly).
class ELWorkspace {
  public:
    /// Solves the dual in-place; identical contract to solve_dual.
    ELDualSolution solve(const Eigen::Ref<const Matrix>& scores, const ELOptions& opts,
                         const Vector* warm = nullptr);

  private:
    Vector t_, w_, grad_, dir_, lam_, trial_;
    Matrix h_;
};

}  // namespace detail
}  // namespace pepsi
