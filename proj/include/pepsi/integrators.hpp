#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pepsi/pel.hpp"

namespace pepsi {

enum class Method { naive, vis, psi, avg, pepsi };

const char* method_name(Method m);
std::optional<Method> method_from_name(const std::string& name);

/// Observation weights entering the re-weighted estimating equation,
/// with diagnostics. PSI/VIS weights are strictly positive and sum to one;
/// PEPSI weights come from a linearization and may go negative in finite
/// samples. They are recorded as-is, never clipped.
struct WeightVector {
    Vector w;
    Method method = Method::naive;
    double min_weight = 0.0;
    double sum = 0.0;

    static WeightVector uniform(Eigen::Index n, Method m);
    static WeightVector from(Vector w, Method m);
};

/// Theorem-1 component estimates for one secondary working model at its
/// fitted parameters.
struct BlockComponents {
    Matrix A;  // r x r   second moment of the scores
    Matrix B;  // r x p   averaged score Jacobian over the fit's parameters
    Matrix H;  // q x p   zero-coordinate selector
    Matrix C;  // p x p   (B'A^-1 B)^-1
    Matrix S;  // r x r
    Matrix P;  // r x r
    Matrix T;  // S + P
    Matrix R;  // A (S + P)
    int r = 0, p = 0, q = 0;
    bool ridged = false;  // A needed ridge stabilization
};

/// Stacked machinery for multi-outcome integration: pooled scores at the
/// fitted parameters, the block-diagonal R matrix, and the leading
/// eigenpairs of the uncentered second moment of R G.
struct PooledComponents {
    Matrix G;      // n x R_total
    Matrix R_hat;  // R_total x R_total, block diagonal
    Vector phi;    // K_hat leading eigenvalues, descending, strictly positive
    Matrix U;      // R_total x K_hat
    int K_hat = 0;
    int K_nominal = 0;  // sum_m r_m - (p_m - q_m)
    bool k_reduced = false;
    std::vector<BlockComponents> blocks;
    std::vector<int> offsets;  // column offset of each block within G

    int total_r() const { return static_cast<int>(G.cols()); }
    /// R' U Phi^-1 U' R, the projection entering the PEPSI weights and the
    /// Theorem-2 variance.
    Matrix projector() const;
};

/// Primary-model estimate with its plug-in covariance (V_hat / n) and the
/// integration bookkeeping needed for reporting.
struct PrimaryFit {
    Vector beta_hat;
    Matrix covariance;  // p0 x p0, already divided by n
    WeightVector weights_used;
    Method method = Method::naive;
    std::vector<SecondaryFit> secondary_fits;
    std::vector<double> avg_weights;  // averaging scheme only
    int K_hat = 0;
    bool converged = false;
    bool avg_fallback_equal_weights = false;
};

/// Root of sum_i w_i f(D_i; beta) = 0. Closed-form weighted least squares
/// for the linear family; damped Newton with an indefiniteness fallback for
/// the logistic one (PEPSI weights may be negative).
Vector solve_weighted_ee(const ModelSpec& spec, const PrimaryDataset& data, const Vector& weights,
                         const Vector* init = nullptr);

PrimaryFit naive_fit(const PrimaryDataset& primary, const ModelSpec& spec);

/// Single-outcome penalized-EL integration: BIC-tuned PEL fit, fresh dual
/// solve at theta_hat, reciprocal EL weights, re-weighted primary solve.
PrimaryFit psi_fit(const PrimaryDataset& primary, const SecondaryDataset& secondary,
                   const ModelSpec& primary_spec, const ModelSpec& secondary_spec,
                   const PenaltyConfig& config = {});

/// Prior-knowledge integration: requires an over-identified secondary spec
/// (fixed zero constraints); estimates the free coefficients by unpenalized
/// EL and reweights as in psi_fit.
PrimaryFit vis_fit(const PrimaryDataset& primary, const SecondaryDataset& secondary,
                   const ModelSpec& primary_spec, const ModelSpec& secondary_spec,
                   const PenaltyConfig& config = {});

/// Theorem-1 components for one fitted block.
BlockComponents block_components(const SecondaryFit& fit, const SecondaryDataset& data);

PooledComponents pool_secondary(const std::vector<SecondaryFit>& fits,
                                const std::vector<SecondaryDataset>& secondaries);

/// PEPSI weights from the pooled components: p_i = n^-1 {1 - n^-1 G_i' M sum_j G_j}
/// with M the pooled projector. K_hat = 0 yields exact uniform weights.
WeightVector pepsi_weights(const PooledComponents& pooled);

/// Multi-outcome PEPSI estimator. With a single secondary outcome the
/// estimator coincides with PSI and is computed through the PSI weight
/// construction.
PrimaryFit pepsi_fit(const PrimaryDataset& primary, const std::vector<SecondaryDataset>& secondaries,
                     const ModelSpec& primary_spec, const std::vector<ModelSpec>& secondary_specs,
                     const PenaltyConfig& config = {});

/// Averaging-scheme estimator: convex-free affine combination of per-outcome
/// PSI weights, mixing weights chosen by minimizing the summed proportion of
/// plug-in variance relative to the naive estimator.
PrimaryFit averaging_fit(const PrimaryDataset& primary,
                         const std::vector<SecondaryDataset>& secondaries,
                         const ModelSpec& primary_spec,
                         const std::vector<ModelSpec>& secondary_specs,
                         const PenaltyConfig& config = {});

/// Shared-fit entry points: run the per-outcome penalized fits once and feed
/// them to several integrators.
std::vector<SecondaryFit> fit_all_secondaries(const std::vector<SecondaryDataset>& secondaries,
                                              const std::vector<ModelSpec>& specs,
                                              const PenaltyConfig& config = {});
PrimaryFit pepsi_from_fits(const PrimaryDataset& primary,
                           const std::vector<SecondaryDataset>& secondaries,
                           const ModelSpec& primary_spec, const std::vector<SecondaryFit>& fits);
PrimaryFit averaging_from_fits(const PrimaryDataset& primary,
                               const std::vector<SecondaryDataset>& secondaries,
                               const ModelSpec& primary_spec, const std::vector<SecondaryFit>& fits);

}  // namespace pepsi
