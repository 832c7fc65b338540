#include "pepsi/el_core.hpp"

#include <cmath>
#include <sstream>

namespace pepsi {
namespace detail {
namespace {

// Sum of log(t_i) for strictly positive t.
double sum_log(const Vector& t) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < t.size(); ++i) s += std::log(t[i]);
    return s;
}

[[noreturn]] void throw_no_solution(const Vector& direction, const std::string& detail) {
    std::ostringstream os;
    os << "no-EL-solution: zero appears to lie outside the convex hull of the score rows; "
       << "unbounded ascent direction (" << direction.transpose() << ")";
    if (!detail.empty()) os << "; " << detail;
    throw ELNoSolutionError(os.str(), direction);
}

}  // namespace

ELDualSolution ELWorkspace::solve(const Eigen::Ref<const Matrix>& scores, const ELOptions& opts,
                                  const Vector* warm) {
    const Eigen::Index n = scores.rows();
    const Eigen::Index r = scores.cols();
    if (n == 0 || r == 0) throw ContractError("solve_dual: empty score matrix");
    if (!scores.allFinite()) throw NumericError("solve_dual: non-finite score entries");

    // Quick necessary condition: a coordinate with single-signed entries puts
    // zero outside the hull.
    for (Eigen::Index j = 0; j < r; ++j) {
        const double mn = scores.col(j).minCoeff();
        const double mx = scores.col(j).maxCoeff();
        if (mn > 0.0 || mx < 0.0) {
            Vector dir = Vector::Zero(r);
            dir[j] = mn > 0.0 ? -1.0 : 1.0;
            throw_no_solution(dir, "score column " + std::to_string(j) + " is single-signed");
        }
    }

    const double nd = static_cast<double>(n);
    const double floor = 1.0 / nd;

    lam_ = (warm != nullptr && warm->size() == r) ? *warm : Vector::Zero(r);
    t_.noalias() = scores * lam_;
    t_.array() += 1.0;
    if (t_.minCoeff() < floor) {
        lam_.setZero();  // warm start infeasible; restart at the centre
        t_.setOnes();
    }

    int it = 0;
    double grad_norm = 0.0;
    for (; it < opts.max_iter; ++it) {
        w_ = t_.cwiseInverse();
        grad_.noalias() = scores.transpose() * w_;
        grad_ /= nd;
        grad_norm = grad_.norm();
        if (grad_norm <= opts.tol) break;

        // H = n^-1 sum g g' / t^2 (negated dual Hessian, positive semidefinite)
        h_.noalias() = scores.transpose() * (scores.array().colwise() * w_.array().square()).matrix();
        h_ /= nd;
        Eigen::LDLT<Matrix> ldlt(h_);
        dir_ = ldlt.solve(grad_);
        if (ldlt.info() != Eigen::Success || !dir_.allFinite()) {
            const double ridge = 1e-12 * (h_.trace() / static_cast<double>(r)) + 1e-300;
            h_.diagonal().array() += ridge;
            dir_ = h_.ldlt().solve(grad_);
            if (!dir_.allFinite()) throw NumericError("solve_dual: singular dual Hessian");
        }

        const double phi0 = sum_log(t_);
        const double slope = nd * grad_.dot(dir_);
        double step = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            trial_ = lam_ + step * dir_;
            t_.noalias() = scores * trial_;
            t_.array() += 1.0;
            if (t_.minCoeff() >= floor) {
                const double phi = sum_log(t_);
                if (phi >= phi0 + 1e-4 * step * slope || phi > phi0) {
                    lam_ = trial_;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if (!accepted) {
            // Feasible ascent blocked: at the feasibility boundary this means
            // the dual is unbounded, i.e. zero sits outside the hull.
            if (grad_norm <= 1e-8) break;
            throw_no_solution(Vector(grad_ / grad_norm),
                              "line search exhausted at gradient norm " + std::to_string(grad_norm));
        }
        if (lam_.norm() > 1e12)
            throw_no_solution(Vector(lam_ / lam_.norm()), "dual iterate diverged");
    }

    t_.noalias() = scores * lam_;
    t_.array() += 1.0;
    w_ = t_.cwiseInverse();
    grad_.noalias() = scores.transpose() * w_;
    grad_ /= nd;
    grad_norm = grad_.norm();
    if (grad_norm > opts.tol && grad_norm > 1e-8) {
        std::ostringstream os;
        os << "solve_dual: no convergence after " << it << " iterations; gradient norm "
           << grad_norm << ", last lambda (" << lam_.transpose() << ")";
        throw NumericError(os.str());
    }

    ELDualSolution out;
    out.lambda = lam_;
    out.weights = w_ / nd;
    out.log_ratio = sum_log(t_);
    out.converged = grad_norm <= opts.tol;
    out.iterations = it;
    return out;
}

}  // namespace detail

ELDualSolution solve_dual(const Eigen::Ref<const Matrix>& scores, const ELOptions& opts) {
    detail::ELWorkspace ws;
    return ws.solve(scores, opts);
}

Vector el_weights(const ELDualSolution& solution, const Eigen::Ref<const Matrix>& scores) {
    if (solution.lambda.size() != scores.cols())
        throw ContractError("el_weights: lambda/scores dimension mismatch");
    Vector t = (scores * solution.lambda).array() + 1.0;
    if (t.minCoeff() <= 0.0) throw NumericError("el_weights: infeasible lambda for these scores");
    return t.cwiseInverse() / static_cast<double>(scores.rows());
}

double el_logratio(const ELDualSolution& solution, const Eigen::Ref<const Matrix>& scores) {
    if (solution.lambda.size() != scores.cols())
        throw ContractError("el_logratio: lambda/scores dimension mismatch");
    Vector t = (scores * solution.lambda).array() + 1.0;
    if (t.minCoeff() <= 0.0) throw NumericError("el_logratio: infeasible lambda for these scores");
    double s = 0.0;
    for (Eigen::Index i = 0; i < t.size(); ++i) s += std::log(t[i]);
    return s;
}

}  // namespace pepsi
