#include "pepsi/pel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

namespace pepsi {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Initial coefficients over the free columns: least squares for the linear
// family, unpenalized MLE (damped Newton) for the logistic one.
Vector initial_theta(Family family, const Matrix& zfree, const Vector& y) {
    if (family == Family::linear)
        return zfree.colPivHouseholderQr().solve(y);
    const Eigen::Index n = zfree.rows();
    const Eigen::Index p = zfree.cols();
    Vector th = Vector::Zero(p);
    for (int it = 0; it < 100; ++it) {
        Vector eta = zfree * th;
        Vector mu(n), v(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            mu[i] = expit(eta[i]);
            v[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-10);
        }
        Vector grad = zfree.transpose() * (y - mu);
        if (grad.lpNorm<Eigen::Infinity>() < 1e-10 * static_cast<double>(n)) break;
        Matrix h = zfree.transpose() * (zfree.array().colwise() * v.array()).matrix();
        Vector step = h.ldlt().solve(grad);
        double s = 1.0;
        while (s > 1e-8 && !((zfree * (th + s * step)).array().abs() < 700).all()) s *= 0.5;
        th += s * step;
    }
    return th;
}

// State shared by the penalized and unpenalized inner loops.
struct FitContext {
    const ModelSpec& spec;
    Matrix z;        // n x r design
    Vector y;        // secondary outcome
    Matrix ztz_n;    // z'z / n for the linear-family Jacobian
    Eigen::Index n;
    int r;
    detail::ELWorkspace ws;
    ELOptions el;

    FitContext(const SecondaryDataset& data, const ModelSpec& s, const ELOptions& opts)
        : spec(s), z(s.design_matrix(data.x_tilde)), y(data.y_tilde), n(data.n()),
          r(s.dim_g()), el(opts) {
        ztz_n = z.transpose() * z / static_cast<double>(n);
    }

    // Scores g_i = resid_i * z_i for the full coefficient vector b.
    Matrix scores(const Vector& b) const {
        Vector resid = residuals(b);
        return z.array().colwise() * resid.array();
    }

    Vector residuals(const Vector& b) const {
        Vector eta = z * b;
        if (spec.family() == Family::linear) return y - eta;
        Vector resid(n);
        for (Eigen::Index i = 0; i < n; ++i) resid[i] = y[i] - expit(eta[i]);
        return resid;
    }

    // Averaged Jacobian columns for the given design coordinates.
    Matrix jacobian_cols(const Vector& b, const std::vector<int>& cols) const {
        Matrix out(r, cols.size());
        if (spec.family() == Family::linear) {
            for (std::size_t k = 0; k < cols.size(); ++k) out.col(k) = -ztz_n.col(cols[k]);
            return out;
        }
        Vector eta = z * b;
        Vector v(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double p = expit(eta[i]);
            v[i] = p * (1.0 - p);
        }
        Matrix zv = z.array().colwise() * v.array();
        for (std::size_t k = 0; k < cols.size(); ++k)
            out.col(k) = -(z.transpose() * zv.col(cols[k])) / static_cast<double>(n);
        return out;
    }
};

double scad_value_sum(const Vector& theta, double tau, double a) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < theta.size(); ++j) s += scad(std::abs(theta[j]), tau, a).first;
    return s;
}

// Core alternating loop. With penalize=false this is plain EL minimization
// over the free coefficients (no thresholding).
SecondaryFit fit_inner(const SecondaryDataset& secondary, const ModelSpec& spec, double tau,
                       const PenaltyConfig& config, bool penalize) {
    secondary.validate();
    config.validate();
    if (penalize && !(tau > 0.0)) throw ContractError("pel_fit: tau must be positive");

    FitContext ctx(secondary, spec, config.el);
    const auto free_design = spec.free_indices();  // design coords of the free coefficients
    const int p = spec.dim_theta();
    const double nd = static_cast<double>(ctx.n);

    Matrix zfree(ctx.z.rows(), p);
    for (int k = 0; k < p; ++k) zfree.col(k) = ctx.z.col(free_design[k]);

    SecondaryFit fit(spec);
    fit.tau_selected = penalize ? tau : 0.0;

    Vector theta = initial_theta(spec.family(), zfree, ctx.y);
    std::vector<bool> active(p, true);
    auto embed = [&](const Vector& th) {
        Vector b = Vector::Zero(ctx.r);
        for (int k = 0; k < p; ++k) b[free_design[k]] = th[k];
        return b;
    };

    Vector lambda = Vector::Zero(ctx.r);
    bool have_lambda = false;

    auto penalized_objective = [&](const Vector& th, Vector& lam_out) -> double {
        Matrix g = ctx.scores(embed(th));
        ELDualSolution sol = ctx.ws.solve(g, ctx.el, have_lambda ? &lambda : nullptr);
        lam_out = sol.lambda;
        double obj = sol.log_ratio;
        if (penalize) obj += nd * scad_value_sum(th, tau, config.a);
        return obj;
    };

    bool converged = false;
    int outer = 0;
    {
        Vector lam_cur;
        double obj = penalized_objective(theta, lam_cur);
        lambda = lam_cur;
        have_lambda = true;

        for (outer = 0; outer < config.max_outer; ++outer) {
            std::vector<int> act_design, act_local;
            for (int k = 0; k < p; ++k)
                if (active[k]) {
                    act_design.push_back(free_design[k]);
                    act_local.push_back(k);
                }
            if (act_design.empty()) break;
            const int pa = static_cast<int>(act_design.size());

            const Vector b = embed(theta);
            Matrix g = ctx.scores(b);
            Vector u = ctx.z * lambda;  // z_i'lambda
            Vector t = (g * lambda).array() + 1.0;
            Vector w = t.cwiseInverse();

            // Envelope gradient of the EL log ratio wrt the active coefficients.
            Vector gl(pa);
            if (spec.family() == Family::linear) {
                Vector wu = w.cwiseProduct(u);
                for (int k = 0; k < pa; ++k) gl[k] = -ctx.z.col(act_design[k]).dot(wu);
            } else {
                Vector eta = ctx.z * b;
                Vector wu(ctx.n);
                for (Eigen::Index i = 0; i < ctx.n; ++i) {
                    const double pi = expit(eta[i]);
                    wu[i] = w[i] * u[i] * pi * (1.0 - pi);
                }
                for (int k = 0; k < pa; ++k) gl[k] = -ctx.z.col(act_design[k]).dot(wu);
            }

            // Gauss-Newton curvature n B' A^-1 B on the active block.
            Matrix a_hat = g.transpose() * g / nd;
            a_hat.diagonal().array() += 1e-12 * (a_hat.trace() / ctx.r + 1e-300);
            Matrix b_act = ctx.jacobian_cols(b, act_design);
            Matrix ainv_b = a_hat.ldlt().solve(b_act);
            Matrix h = nd * (b_act.transpose() * ainv_b);

            Vector rhs = -gl;
            if (penalize) {
                for (int k = 0; k < pa; ++k) {
                    const double ak = std::abs(theta[act_local[k]]);
                    const double d = scad(ak, tau, config.a).second / std::max(ak, 1e-8);
                    h(k, k) += nd * d;
                    rhs[k] -= nd * d * theta[act_local[k]];
                }
            }

            Eigen::LDLT<Matrix> hldlt(h);
            Vector delta = hldlt.solve(rhs);
            if (hldlt.info() != Eigen::Success || !delta.allFinite()) {
                h.diagonal().array() += 1e-8 * (h.trace() / pa + 1e-300);
                delta = h.ldlt().solve(rhs);
                if (!delta.allFinite()) break;
            }

            // Backtrack on the true penalized objective.
            double step = 1.0;
            bool accepted = false;
            Vector theta_new = theta;
            double obj_new = obj;
            Vector lam_new = lambda;
            for (int ls = 0; ls < 30; ++ls) {
                theta_new = theta;
                for (int k = 0; k < pa; ++k) theta_new[act_local[k]] += step * delta[k];
                try {
                    obj_new = penalized_objective(theta_new, lam_new);
                } catch (const NumericError&) {
                    step *= 0.5;
                    continue;
                }
                if (obj_new <= obj + 1e-12) {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) {
                converged = true;  // no feasible descent left; treat as stationary
                break;
            }

            double change = 0.0;
            for (int k = 0; k < p; ++k) change = std::max(change, std::abs(theta_new[k] - theta[k]));
            theta = theta_new;
            lambda = lam_new;
            obj = obj_new;

            if (penalize) {
                bool zeroed = false;
                for (int k = 0; k < p; ++k) {
                    if (active[k] && std::abs(theta[k]) <= config.gamma) {
                        change = std::max(change, std::abs(theta[k]));
                        theta[k] = 0.0;
                        active[k] = false;
                        zeroed = true;
                    }
                }
                if (zeroed) {
                    Vector lam_tmp;
                    obj = penalized_objective(theta, lam_tmp);
                    lambda = lam_tmp;
                }
            }

            if (change < config.theta_tol) {
                converged = true;
                break;
            }
        }
    }

    // Assemble the fit; the dual is re-solved at the final theta so the
    // reported lambda satisfies the weight constraint there.
    fit.theta_hat = theta;
    for (int k = 0; k < p; ++k)
        if (theta[k] == 0.0 && !active[k]) fit.zero_index_set.push_back(k);
    fit.q_hat = static_cast<int>(fit.zero_index_set.size());
    fit.degenerate_all_zero = fit.q_hat == p;
    try {
        Matrix g = ctx.scores(embed(theta));
        ELDualSolution sol = ctx.ws.solve(g, ctx.el, have_lambda ? &lambda : nullptr);
        fit.lambda_hat = sol.lambda;
        fit.log_ratio = sol.log_ratio;
        fit.converged = converged && sol.converged;
    } catch (const NumericError&) {
        if (!fit.degenerate_all_zero) throw;
        fit.lambda_hat = Vector::Constant(ctx.r, std::numeric_limits<double>::quiet_NaN());
        fit.log_ratio = kInf;
        fit.converged = false;
    }
    return fit;
}

}  // namespace

void PenaltyConfig::validate() const {
    if (!(a > 2.0)) throw ContractError("PenaltyConfig: SCAD shape a must exceed 2");
    if (!(gamma > 0.0)) throw ContractError("PenaltyConfig: gamma must be positive");
    for (double t : tau_grid)
        if (!(t > 0.0)) throw ContractError("PenaltyConfig: tau grid must be strictly positive");
}

std::pair<double, double> scad(double t, double tau, double a) {
    if (t < 0.0) throw ContractError("scad: t must be nonnegative");
    if (!(tau > 0.0) || !(a > 2.0)) throw ContractError("scad: requires tau > 0, a > 2");
    if (t <= tau) return {tau * t, tau};
    if (t <= a * tau) {
        const double value = tau * tau + (a * tau * (t - tau) - 0.5 * (t * t - tau * tau)) / (a - 1.0);
        return {value, (a * tau - t) / (a - 1.0)};
    }
    return {(a + 1.0) * tau * tau / 2.0, 0.0};
}

double bic_constant(int p) {
    if (p < 2) return 1.0;
    return std::max(std::log(std::log(static_cast<double>(p))), 1.0);
}

std::vector<double> default_tau_grid(int p, Eigen::Index n, double scale) {
    const double base = std::sqrt(std::log(static_cast<double>(std::max(p, 2))) /
                                  static_cast<double>(n)) *
                        (scale > 0 ? scale : 1.0);
    const int k = 20;
    std::vector<double> grid(k);
    const double lo = std::log(0.01), hi = std::log(2.0);
    for (int i = 0; i < k; ++i)
        grid[i] = std::exp(lo + (hi - lo) * i / (k - 1)) * base;
    return grid;
}

SecondaryFit pel_fit(const SecondaryDataset& secondary, const ModelSpec& spec, double tau,
                     const PenaltyConfig& config) {
    return fit_inner(secondary, spec, tau, config, true);
}

SecondaryFit el_fit(const SecondaryDataset& secondary, const ModelSpec& spec,
                    const PenaltyConfig& config) {
    return fit_inner(secondary, spec, 0.0, config, false);
}

SecondaryFit bic_select(const SecondaryDataset& secondary, const ModelSpec& spec,
                        const PenaltyConfig& config) {
    secondary.validate();
    config.validate();
    std::vector<double> grid = config.tau_grid;
    if (grid.empty()) {
        const Vector& ys = secondary.y_tilde;
        const double mean = ys.mean();
        const double sd = std::sqrt((ys.array() - mean).square().mean());
        grid = default_tau_grid(spec.dim_theta(), secondary.n(), sd);
    }
    std::sort(grid.begin(), grid.end());

    const double cm = bic_constant(spec.dim_theta());
    const double logn = std::log(static_cast<double>(secondary.n()));

    std::unique_ptr<SecondaryFit> best;
    double best_bic = kInf;
    std::ostringstream failures;
    int n_failed = 0;
    for (double tau : grid) {
        SecondaryFit fit(spec);
        try {
            fit = pel_fit(secondary, spec, tau, config);
        } catch (const NumericError& e) {
            ++n_failed;
            failures << "  tau=" << tau << ": " << e.what() << "\n";
            continue;
        }
        const int nonzero = spec.dim_theta() - fit.q_hat;
        const double bic = 2.0 * fit.log_ratio + cm * logn * nonzero;
        fit.bic_value = bic;
        if (!best || bic <= best_bic) {  // ties resolve to the larger tau
            best_bic = bic;
            best = std::make_unique<SecondaryFit>(fit);
        }
    }
    if (!best)
        throw NumericError("bic_select: all " + std::to_string(n_failed) +
                           " tuning grid points failed:\n" + failures.str());
    return *best;
}

Matrix zero_pattern(const SecondaryFit& fit) {
    const int p = static_cast<int>(fit.theta_hat.size());
    if (fit.degenerate_all_zero) return Matrix::Identity(p, p);
    Matrix h = Matrix::Zero(fit.q_hat, p);
    for (int row = 0; row < fit.q_hat; ++row) h(row, fit.zero_index_set[row]) = 1.0;
    return h;
}

}  // namespace pepsi
