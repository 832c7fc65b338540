#include "pepsi/integrators.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pepsi/variance.hpp"

namespace pepsi {

namespace {

Matrix symmetric_inverse(const Matrix& m, const char* name) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    const Vector& ev = es.eigenvalues();
    const double emax = ev.cwiseAbs().maxCoeff();
    const double emin = ev.cwiseAbs().minCoeff();
    if (!(emin > 0.0) || emax / emin > 1e12)
        throw NumericError(std::string(name) + ": condition number exceeds 1e12 (" +
                           std::to_string(emax / (emin + 1e-300)) + ")");
    return es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

void check_alignment(const PrimaryDataset& primary, const std::vector<SecondaryDataset>& secondaries) {
    for (const auto& s : secondaries)
        if (s.n() != primary.n())
            throw ContractError("secondary dataset " + std::to_string(s.index) +
                                " has n=" + std::to_string(s.n()) + ", primary has n=" +
                                std::to_string(primary.n()));
}

// Reciprocal EL weights at the fitted secondary parameters; the dual is
// solved fresh from zero. A just-identified fit with no detected zeros has
// non-informative weights, returned exactly uniform.
WeightVector psi_weight_vector(const SecondaryFit& fit, const SecondaryDataset& data, Method tag) {
    const Eigen::Index n = data.n();
    if (fit.q_hat == 0 && fit.spec.dim_g() == fit.spec.dim_theta())
        return WeightVector::uniform(n, tag);
    Matrix g = fit.spec.score_matrix(fit.theta_hat, data.x_tilde, data.y_tilde);
    ELDualSolution sol = solve_dual(g);
    return WeightVector::from(sol.weights, tag);
}

PrimaryFit finish_fit(const PrimaryDataset& primary, const ModelSpec& spec, WeightVector weights,
                      Method method, std::vector<SecondaryFit> fits,
                      const PooledComponents* pooled) {
    PrimaryFit out;
    out.method = method;
    out.weights_used = std::move(weights);
    out.beta_hat = solve_weighted_ee(spec, primary, out.weights_used.w);
    out.secondary_fits = std::move(fits);
    out.K_hat = pooled != nullptr ? pooled->K_hat : 0;
    out.converged = true;
    for (const auto& f : out.secondary_fits) out.converged = out.converged && f.converged;
    VarianceComponents comps = estimate_components(primary, spec, out.beta_hat, pooled);
    out.covariance = covariance_of(method == Method::avg ? Method::psi : method, comps);
    return out;
}

}  // namespace

const char* method_name(Method m) {
    switch (m) {
        case Method::naive: return "naive";
        case Method::vis: return "vis";
        case Method::psi: return "psi";
        case Method::avg: return "avg";
        case Method::pepsi: return "pepsi";
    }
    return "?";
}

std::optional<Method> method_from_name(const std::string& name) {
    if (name == "naive") return Method::naive;
    if (name == "vis") return Method::vis;
    if (name == "psi") return Method::psi;
    if (name == "avg") return Method::avg;
    if (name == "pepsi") return Method::pepsi;
    return std::nullopt;
}

WeightVector WeightVector::uniform(Eigen::Index n, Method m) {
    WeightVector v;
    v.w = Vector::Constant(n, 1.0 / static_cast<double>(n));
    v.method = m;
    v.min_weight = 1.0 / static_cast<double>(n);
    v.sum = 1.0;
    return v;
}

WeightVector WeightVector::from(Vector w, Method m) {
    WeightVector v;
    v.min_weight = w.minCoeff();
    v.sum = w.sum();
    v.w = std::move(w);
    v.method = m;
    return v;
}

Vector solve_weighted_ee(const ModelSpec& spec, const PrimaryDataset& data, const Vector& weights,
                         const Vector* init) {
    data.validate(spec.family());
    if (weights.size() != data.n())
        throw ContractError("solve_weighted_ee: weight vector length mismatch");
    if (spec.dim_theta() != spec.dim_g())
        throw ContractError("solve_weighted_ee: primary model does not support zero constraints");
    const Matrix z = spec.design_matrix(data.x);
    const Eigen::Index n = z.rows();
    const int p = spec.dim_g();

    if (spec.family() == Family::linear) {
        Matrix zw = z.array().colwise() * weights.array();
        Matrix m = zw.transpose() * z;
        Vector rhs = zw.transpose() * data.y;
        Eigen::ColPivHouseholderQR<Matrix> qr(m);
        if (qr.rank() < p)
            throw NumericError("solve_weighted_ee: singular weighted design (rank " +
                               std::to_string(qr.rank()) + " of " + std::to_string(p) + ")");
        return qr.solve(rhs);
    }

    Vector beta;
    if (init != nullptr && init->size() == p) {
        beta = *init;
    } else if (weights.maxCoeff() - weights.minCoeff() < 1e-15) {
        beta = Vector::Zero(p);
    } else {
        // default init: the unweighted fit
        Vector zero = Vector::Zero(p);
        beta = solve_weighted_ee(spec, data, Vector::Constant(n, 1.0 / static_cast<double>(n)),
                                 &zero);
    }

    auto weighted_score = [&](const Vector& b, Vector& mu) {
        Vector eta = z * b;
        mu.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) mu[i] = expit(eta[i]);
        return z.transpose() * (weights.cwiseProduct(data.y - mu)).matrix();
    };

    Vector mu;
    Vector score = weighted_score(beta, mu);
    double snorm = score.norm();
    for (int it = 0; it < 100 && snorm > 1e-12; ++it) {
        Vector v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = weights[i] * mu[i] * (1.0 - mu[i]);
        Matrix h = z.transpose() * (z.array().colwise() * v.array()).matrix();
        // Levenberg escalation when the weighted Hessian is indefinite or the
        // step fails to reduce the score (possible with negative weights).
        double ridge = 0.0;
        bool moved = false;
        for (int attempt = 0; attempt < 12 && !moved; ++attempt) {
            Matrix hr = h;
            hr.diagonal().array() += ridge;
            Eigen::LDLT<Matrix> ldlt(hr);
            Vector step = ldlt.solve(score);
            if (ldlt.info() == Eigen::Success && step.allFinite()) {
                double t = 1.0;
                for (int ls = 0; ls < 40; ++ls) {
                    Vector cand = beta + t * step;
                    Vector mu_c;
                    Vector sc = weighted_score(cand, mu_c);
                    if (sc.norm() < snorm) {
                        beta = cand;
                        score = sc;
                        mu = mu_c;
                        snorm = sc.norm();
                        moved = true;
                        break;
                    }
                    t *= 0.5;
                }
            }
            ridge = ridge == 0.0 ? 1e-8 * (std::abs(h.trace()) / p + 1.0) : ridge * 10.0;
        }
        if (!moved) break;
    }
    if (snorm > 1e-8)
        throw NumericError("solve_weighted_ee: Newton failed to converge; residual norm " +
                           std::to_string(snorm));
    return beta;
}

PrimaryFit naive_fit(const PrimaryDataset& primary, const ModelSpec& spec) {
    return finish_fit(primary, spec, WeightVector::uniform(primary.n(), Method::naive),
                      Method::naive, {}, nullptr);
}

PrimaryFit psi_fit(const PrimaryDataset& primary, const SecondaryDataset& secondary,
                   const ModelSpec& primary_spec, const ModelSpec& secondary_spec,
                   const PenaltyConfig& config) {
    check_alignment(primary, {secondary});
    SecondaryFit sfit = bic_select(secondary, secondary_spec, config);
    WeightVector w = psi_weight_vector(sfit, secondary, Method::psi);
    PooledComponents pooled = pool_secondary({sfit}, {secondary});
    return finish_fit(primary, primary_spec, std::move(w), Method::psi, {sfit}, &pooled);
}

PrimaryFit vis_fit(const PrimaryDataset& primary, const SecondaryDataset& secondary,
                   const ModelSpec& primary_spec, const ModelSpec& secondary_spec,
                   const PenaltyConfig& config) {
    check_alignment(primary, {secondary});
    if (secondary_spec.dim_g() <= secondary_spec.dim_theta())
        throw ContractError(
            "vis_fit: working function is just-identified; VIS requires prior-knowledge "
            "zero constraints making it over-identified");
    SecondaryFit efit = el_fit(secondary, secondary_spec, config);
    WeightVector w = psi_weight_vector(efit, secondary, Method::vis);
    PooledComponents pooled = pool_secondary({efit}, {secondary});
    return finish_fit(primary, primary_spec, std::move(w), Method::vis, {efit}, &pooled);
}

BlockComponents block_components(const SecondaryFit& fit, const SecondaryDataset& data) {
    BlockComponents blk;
    blk.r = fit.spec.dim_g();
    blk.p = fit.spec.dim_theta();
    blk.q = fit.q_hat;

    Matrix g = fit.spec.score_matrix(fit.theta_hat, data.x_tilde, data.y_tilde);
    const double n = static_cast<double>(g.rows());
    blk.A = g.transpose() * g / n;

    Eigen::SelfAdjointEigenSolver<Matrix> es(blk.A);
    const double emax = es.eigenvalues().maxCoeff();
    const double emin = es.eigenvalues().minCoeff();
    if (!(emin > emax * 1e-12)) {
        blk.A.diagonal().array() += 1e-10 * blk.A.trace() / blk.r;
        blk.ridged = true;
    }

    blk.B = fit.spec.eval_jacobian(fit.theta_hat, data.x_tilde, data.y_tilde);
    blk.H = zero_pattern(fit);

    Eigen::LDLT<Matrix> aldlt(blk.A);
    Matrix ainv = aldlt.solve(Matrix::Identity(blk.r, blk.r));
    Matrix x = aldlt.solve(blk.B);                 // A^-1 B
    blk.C = symmetric_inverse(blk.B.transpose() * x, "B'A^-1B");
    blk.S = ainv - x * blk.C * x.transpose();
    if (blk.H.rows() > 0) {
        Matrix hch = blk.H * blk.C * blk.H.transpose();
        Matrix hch_inv = symmetric_inverse(hch, "H C H'");
        Matrix xch = x * blk.C * blk.H.transpose();  // A^-1 B C H'
        blk.P = xch * hch_inv * xch.transpose();
    } else {
        blk.P = Matrix::Zero(blk.r, blk.r);
    }
    blk.S = 0.5 * (blk.S + blk.S.transpose()).eval();
    blk.P = 0.5 * (blk.P + blk.P.transpose()).eval();
    blk.T = blk.S + blk.P;
    blk.R = blk.A * blk.T;
    return blk;
}

PooledComponents pool_secondary(const std::vector<SecondaryFit>& fits,
                                const std::vector<SecondaryDataset>& secondaries) {
    if (fits.empty() || fits.size() != secondaries.size())
        throw ContractError("pool_secondary: need one fit per secondary dataset");
    const Eigen::Index n = secondaries.front().n();
    for (const auto& s : secondaries)
        if (s.n() != n) throw ContractError("pool_secondary: secondary datasets are not row-aligned");

    PooledComponents pooled;
    int total = 0;
    for (std::size_t m = 0; m < fits.size(); ++m) {
        pooled.blocks.push_back(block_components(fits[m], secondaries[m]));
        pooled.offsets.push_back(total);
        total += pooled.blocks.back().r;
    }
    pooled.G.resize(n, total);
    pooled.R_hat = Matrix::Zero(total, total);
    pooled.K_nominal = 0;
    for (std::size_t m = 0; m < fits.size(); ++m) {
        const auto& blk = pooled.blocks[m];
        const int off = pooled.offsets[m];
        pooled.G.middleCols(off, blk.r) =
            fits[m].spec.score_matrix(fits[m].theta_hat, secondaries[m].x_tilde, secondaries[m].y_tilde);
        pooled.R_hat.block(off, off, blk.r, blk.r) = blk.R;
        pooled.K_nominal += blk.r - (blk.p - blk.q);
    }

    // Eigenpairs of the uncentered second moment of R G.
    Matrix a_full = pooled.G.transpose() * pooled.G / static_cast<double>(n);
    Matrix w = pooled.R_hat * a_full * pooled.R_hat.transpose();
    w = 0.5 * (w + w.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Matrix> es(w);
    const Vector& ev = es.eigenvalues();  // ascending
    const double cutoff = 1e-10 * std::max(ev.maxCoeff(), 0.0);
    int positive = 0;
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        if (ev[i] > cutoff && ev[i] > 0.0) ++positive;
    const int k = std::min(positive, pooled.K_nominal);
    pooled.k_reduced = k < pooled.K_nominal;
    pooled.K_hat = k;
    pooled.phi.resize(k);
    pooled.U.resize(total, k);
    for (int j = 0; j < k; ++j) {
        pooled.phi[j] = ev[ev.size() - 1 - j];
        pooled.U.col(j) = es.eigenvectors().col(ev.size() - 1 - j);
    }
    return pooled;
}

Matrix PooledComponents::projector() const {
    if (K_hat == 0) return Matrix::Zero(total_r(), total_r());
    Matrix ru = R_hat.transpose() * U;  // R' U
    return ru * phi.cwiseInverse().asDiagonal() * ru.transpose();
}

WeightVector pepsi_weights(const PooledComponents& pooled) {
    const Eigen::Index n = pooled.G.rows();
    if (pooled.K_hat == 0) return WeightVector::uniform(n, Method::pepsi);
    const double nd = static_cast<double>(n);
    Matrix proj_cols = pooled.G * (pooled.R_hat.transpose() * pooled.U);  // n x K: U'R G_i rows
    Vector colsum = proj_cols.colwise().sum();
    Vector scaled = pooled.phi.cwiseInverse().asDiagonal() * colsum;
    Vector w = (1.0 - (proj_cols * scaled).array() / nd) / nd;
    return WeightVector::from(std::move(w), Method::pepsi);
}

std::vector<SecondaryFit> fit_all_secondaries(const std::vector<SecondaryDataset>& secondaries,
                                              const std::vector<ModelSpec>& specs,
                                              const PenaltyConfig& config) {
    if (secondaries.size() != specs.size())
        throw ContractError("fit_all_secondaries: one spec per secondary dataset required");
    std::vector<SecondaryFit> fits;
    fits.reserve(secondaries.size());
    for (std::size_t m = 0; m < secondaries.size(); ++m)
        fits.push_back(bic_select(secondaries[m], specs[m], config));
    return fits;
}

PrimaryFit pepsi_from_fits(const PrimaryDataset& primary,
                           const std::vector<SecondaryDataset>& secondaries,
                           const ModelSpec& primary_spec, const std::vector<SecondaryFit>& fits) {
    check_alignment(primary, secondaries);
    if (fits.size() != secondaries.size())
        throw ContractError("pepsi_from_fits: fit/data count mismatch");
    PooledComponents pooled = pool_secondary(fits, secondaries);
    if (fits.size() == 1) {
        // A single secondary outcome makes PEPSI and PSI the same estimator;
        // realize the equivalence exactly through the PSI weight path.
        WeightVector w = psi_weight_vector(fits.front(), secondaries.front(), Method::pepsi);
        return finish_fit(primary, primary_spec, std::move(w), Method::pepsi, fits, &pooled);
    }
    WeightVector w = pepsi_weights(pooled);
    return finish_fit(primary, primary_spec, std::move(w), Method::pepsi, fits, &pooled);
}

PrimaryFit pepsi_fit(const PrimaryDataset& primary, const std::vector<SecondaryDataset>& secondaries,
                     const ModelSpec& primary_spec, const std::vector<ModelSpec>& secondary_specs,
                     const PenaltyConfig& config) {
    if (secondaries.empty()) throw ContractError("pepsi_fit: needs at least one secondary dataset");
    check_alignment(primary, secondaries);
    return pepsi_from_fits(primary, secondaries, primary_spec,
                           fit_all_secondaries(secondaries, secondary_specs, config));
}

PrimaryFit averaging_from_fits(const PrimaryDataset& primary,
                               const std::vector<SecondaryDataset>& secondaries,
                               const ModelSpec& primary_spec, const std::vector<SecondaryFit>& fits) {
    check_alignment(primary, secondaries);
    const std::size_t m_count = fits.size();
    if (m_count == 0) throw ContractError("averaging_from_fits: needs at least one fit");
    if (m_count == 1) {
        // Degenerates to PSI.
        WeightVector w = psi_weight_vector(fits.front(), secondaries.front(), Method::avg);
        PooledComponents pooled = pool_secondary(fits, secondaries);
        PrimaryFit out = finish_fit(primary, primary_spec, std::move(w), Method::avg, fits, &pooled);
        out.avg_weights = {1.0};
        return out;
    }

    const Eigen::Index n = primary.n();
    const double nd = static_cast<double>(n);
    PooledComponents pooled = pool_secondary(fits, secondaries);

    // Pilot quantities at the naive estimate.
    Vector beta0 = solve_weighted_ee(primary_spec, primary,
                                     Vector::Constant(n, 1.0 / nd));
    Matrix f = primary_spec.score_matrix(beta0, primary.x, primary.y);
    Matrix gamma = primary_spec.eval_jacobian_full(beta0, primary.x, primary.y);
    const int p0 = primary_spec.dim_g();
    Matrix gamma_inv_t;
    {
        Eigen::JacobiSVD<Matrix> svd(gamma, Eigen::ComputeFullU | Eigen::ComputeFullV);
        if (svd.singularValues().minCoeff() <= svd.singularValues().maxCoeff() * 1e-12)
            throw NumericError("averaging_fit: Gamma is singular");
        gamma_inv_t = svd.solve(Matrix::Identity(p0, p0)).transpose();
    }
    Matrix f_star = f * gamma_inv_t;  // rows f_i' Gamma^-T
    Vector vn = (f_star.transpose() * f_star).diagonal() / nd;  // naive middle diag

    // Influence contributions E_m = G_m (Lambda_m T_m)' mapped through Gamma^-1.
    std::vector<Matrix> e_star(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
        const auto& blk = pooled.blocks[m];
        const Matrix gm = pooled.G.middleCols(pooled.offsets[m], blk.r);
        Matrix lambda_m = f.transpose() * gm / nd;  // p0 x r_m
        e_star[m] = gm * (blk.T * lambda_m.transpose()) * gamma_inv_t;
    }

    Matrix q(m_count, m_count);
    Vector b(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
        for (std::size_t l = m; l < m_count; ++l) {
            double acc = 0.0;
            for (int j = 0; j < p0; ++j)
                acc += e_star[m].col(j).dot(e_star[l].col(j)) / (nd * vn[j]);
            q(m, l) = acc;
            q(l, m) = acc;
        }
        double acc = 0.0;
        for (int j = 0; j < p0; ++j) acc += f_star.col(j).dot(e_star[m].col(j)) / (nd * vn[j]);
        b[m] = acc;
    }

    // minimize w'Qw - 2 b'w subject to sum w = 1.
    Vector w_mix = Vector::Constant(m_count, 1.0 / static_cast<double>(m_count));
    bool fallback = false;
    {
        Matrix kkt = Matrix::Zero(m_count + 1, m_count + 1);
        kkt.topLeftCorner(m_count, m_count) = 2.0 * q;
        kkt.topRightCorner(m_count, 1).setOnes();
        kkt.bottomLeftCorner(1, m_count).setOnes();
        Vector rhs(m_count + 1);
        rhs.head(m_count) = 2.0 * b;
        rhs[m_count] = 1.0;
        Eigen::FullPivLU<Matrix> lu(kkt);
        if (lu.isInvertible()) {
            Vector sol = lu.solve(rhs);
            if (sol.head(m_count).allFinite())
                w_mix = sol.head(m_count);
            else
                fallback = true;
        } else {
            fallback = true;
        }
    }

    // Combined observation weights.
    Vector w_obs = Vector::Zero(n);
    std::vector<WeightVector> per_outcome;
    per_outcome.reserve(m_count);
    for (std::size_t m = 0; m < m_count; ++m)
        per_outcome.push_back(psi_weight_vector(fits[m], secondaries[m], Method::psi));
    for (std::size_t m = 0; m < m_count; ++m) w_obs += w_mix[m] * per_outcome[m].w;

    PrimaryFit out;
    out.method = Method::avg;
    out.weights_used = WeightVector::from(std::move(w_obs), Method::avg);
    out.beta_hat = solve_weighted_ee(primary_spec, primary, out.weights_used.w);
    out.secondary_fits = fits;
    out.avg_weights.assign(w_mix.data(), w_mix.data() + m_count);
    out.K_hat = pooled.K_hat;
    out.avg_fallback_equal_weights = fallback;
    out.converged = true;
    for (const auto& ft : fits) out.converged = out.converged && ft.converged;

    // Plug-in covariance of the mixed-influence estimator at beta_hat.
    Matrix f_hat = primary_spec.score_matrix(out.beta_hat, primary.x, primary.y);
    Matrix gamma_hat = primary_spec.eval_jacobian_full(out.beta_hat, primary.x, primary.y);
    Matrix ginv_t;
    {
        Eigen::JacobiSVD<Matrix> svd(gamma_hat, Eigen::ComputeFullU | Eigen::ComputeFullV);
        if (svd.singularValues().minCoeff() <= svd.singularValues().maxCoeff() * 1e-12)
            throw NumericError("averaging_fit: Gamma is singular at the solution");
        ginv_t = svd.solve(Matrix::Identity(p0, p0)).transpose();
    }
    Matrix infl = f_hat * ginv_t;
    for (std::size_t m = 0; m < m_count; ++m) {
        const auto& blk = pooled.blocks[m];
        const Matrix gm = pooled.G.middleCols(pooled.offsets[m], blk.r);
        Matrix lambda_m = f_hat.transpose() * gm / nd;
        infl -= w_mix[m] * (gm * (blk.T * lambda_m.transpose()) * ginv_t);
    }
    Matrix v = infl.transpose() * infl / nd;
    out.covariance = 0.5 * (v + v.transpose()) / nd;
    for (int j = 0; j < p0; ++j)
        if (out.covariance(j, j) < 0.0)
            throw NumericError("averaging_fit: negative variance estimate; sample size likely "
                               "too small for this many outcomes");
    return out;
}

PrimaryFit averaging_fit(const PrimaryDataset& primary,
                         const std::vector<SecondaryDataset>& secondaries,
                         const ModelSpec& primary_spec,
                         const std::vector<ModelSpec>& secondary_specs,
                         const PenaltyConfig& config) {
    if (secondaries.empty()) throw ContractError("averaging_fit: needs at least one secondary dataset");
    check_alignment(primary, secondaries);
    return averaging_from_fits(primary, secondaries, primary_spec,
                               fit_all_secondaries(secondaries, secondary_specs, config));
}

}  // namespace pepsi
