#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pepsi {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Misuse of an interface: dimension mismatches, domain violations,
/// invalid configuration. Indicates a caller bug, not a data problem.
struct ContractError : std::invalid_argument {
    explicit ContractError(const std::string& what) : std::invalid_argument(what) {}
};

/// Numerical failure on valid inputs: non-finite values, singular systems,
/// non-convergence, infeasible empirical-likelihood problems.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// The EL dual problem has no interior solution (zero outside the convex
/// hull of the score rows). Carries the direction along which the dual
/// objective is unbounded.
struct ELNoSolutionError : NumericError {
    Vector direction;
    ELNoSolutionError(const std::string& what, Vector dir)
        : NumericError(what), direction(std::move(dir)) {}
};

enum class Family { linear, logistic };

inline const char* family_name(Family f) {
    return f == Family::linear ? "linear" : "logistic";
}

/// Row-aligned primary data: outcome y (length n) and covariates x (n x d).
/// The design mapping in ModelSpec prepends the intercept; x holds raw
/// covariates only.
struct PrimaryDataset {
    Vector y;
    Matrix x;

    Eigen::Index n() const { return y.size(); }
    Eigen::Index d() const { return x.cols(); }
    void validate(Family family = Family::linear) const;
};

/// Row-aligned secondary data for outcome m, sharing the n subjects of the
/// paired primary dataset.
struct SecondaryDataset {
    Vector y_tilde;
    Matrix x_tilde;
    int index = 1;

    Eigen::Index n() const { return y_tilde.size(); }
    Eigen::Index d() const { return x_tilde.cols(); }
    void validate() const;
};

/// Logistic function with an overflow-safe branch for large |z|.
inline double expit(double z) {
    if (z >= 0.0) {
        const double e = std::exp(-std::min(z, 700.0));
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(std::max(z, -700.0));
    return e / (1.0 + e);
}

}  // namespace pepsi
