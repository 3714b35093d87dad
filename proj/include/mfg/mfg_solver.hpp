#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "mfg/geometry.hpp"
#include "mfg/measures.hpp"
#include "mfg/model.hpp"

namespace mfg {

/// Time-indexed nodal values on the full grid: frames[k] holds the field at
/// t0 + k*dt. Solvers fill nodes outside the active subdomain mask with the
/// value of the nearest in-mask node, so gradients and plots stay total.
struct ScalarFlow {
    double t0 = 0.0;
    double dt = 0.0;
    std::vector<std::vector<double>> frames;

    double t_end() const {
        return frames.empty() ? t0 : t0 + dt * static_cast<double>(frames.size() - 1);
    }
};

/// Time-indexed densities. Outside-mask nodes are zero, so each frame is the
/// (sub)probability living on the active subdomain.
struct MeasureFlow {
    double t0 = 0.0;
    double dt = 0.0;
    std::vector<MeasureField> frames;

    double t_end() const {
        return frames.empty() ? t0 : t0 + dt * static_cast<double>(frames.size() - 1);
    }
};

/// Time-indexed nodal vector fields (drifts).
struct VectorFlow {
    double t0 = 0.0;
    double dt = 0.0;
    std::vector<std::vector<Vec2>> frames;
};

struct SolverConfig {
    double dt = 1e-2;
    double horizon = 1.0;        // terminal time of solve_mfg runs
    double theta_scheme = 1.0;   // implicitness weight; 1 = backward Euler
    double picard_damping = 0.5; // fraction of the new iterate mixed in
    double picard_tol = 1e-8;    // fixed-point gap in d1 units
    std::size_t max_iters = 60;
    double p_exponent = 0.0;     // <= 0: filled with (d+2)/(d+1+alpha)

    // per-time-step quasilinear iteration on the frozen gradient
    std::size_t inner_iters = 30;
    double inner_tol = 1e-13;

    // use the terminal data as given, without the boundary flux correction
    bool raw_terminal = false;
};

/// Validates and completes a configuration: theta_scheme must lie in (0,1]
/// and values below 1/2 additionally require dt <= h^2 / (2 max a); a
/// nonpositive p_exponent is replaced by (d+2)/(d+1+alpha).
SolverConfig resolved_solver_config(const DomainGrid& grid, const ModelSpec& model,
                                    SolverConfig config);

/// Index of the subdomain level whose eps matches the given value.
std::size_t eps_level_index(const DomainGrid& grid, double eps);

/// For each node, the id of the nearest node inside the level's mask
/// (itself when masked); ties broken toward lower ids.
std::vector<int> nearest_mask_nodes(const DomainGrid& grid, std::size_t level);

/// Extension field carrying the co-normal derivative of the given data on
/// the subdomain boundary: subtracting it yields a field with zero co-normal
/// derivative there. Supported on a collar of the boundary, zero inside.
std::vector<double> conormal_flux_correction(const DomainGrid& grid, std::size_t level,
                                             const ModelSpec& model,
                                             const std::vector<double>& data);

/// Terminal data of the eps-subdomain problem: G(., m_T) minus the extension
/// field carrying its co-normal derivative, so the corrected field has zero
/// co-normal derivative on the subdomain boundary.
std::vector<double> corrected_terminal_data(const DomainGrid& grid, std::size_t level,
                                            const ModelSpec& model, const MeasureField& m_T);

/// Backward value solve on the eps-subdomain with no-flux boundary and the
/// running coupling evaluated along m_flow. The time grid (t0, dt, frame
/// count) is taken from m_flow; terminal is the value at its last frame time
/// and is expected to be co-normally compatible (see corrected_terminal_data).
/// Each step solves the monotone upwind discretization implicitly, iterating
/// the frozen-gradient linearization to inner_tol.
ScalarFlow solve_hjb_neumann(const DomainGrid& grid, double eps, const ModelSpec& model,
                             const MeasureFlow& m_flow, const std::vector<double>& terminal,
                             const SolverConfig& config);

/// Forward density solve on the eps-subdomain, conservative by construction:
/// the spatial operator is the exact weighted transpose of the value-equation
/// transport operator. The drift enters through nodal gradient vectors,
/// averaged onto faces. m0 is restricted to the subdomain and kept
/// unnormalized.
MeasureFlow solve_fp_neumann(const DomainGrid& grid, double eps, const ModelSpec& model,
                             const VectorFlow& drift, const MeasureField& m0,
                             const SolverConfig& config);

/// Same forward solve with the drift taken from the face differences of a
/// stored value flow. This is the exact-duality route used inside the fixed
/// point: the operator of each step is reassembled deterministically from
/// the value frame at the step's left endpoint.
MeasureFlow solve_fp_neumann(const DomainGrid& grid, double eps, const ModelSpec& model,
                             const ScalarFlow& value_flow, const MeasureField& m0,
                             const SolverConfig& config);

struct LevelSolution {
    double eps = 0.0;
    std::size_t level = 0;
    ScalarFlow u;
    MeasureFlow m;
    std::size_t picard_iters = 0;
    std::vector<double> residuals;  // fixed-point gap sup_t d1 per iteration
    bool flagged = false;           // residuals increased after iteration 3
};

struct MFGSolution {
    ScalarFlow u;   // finest-level value flow
    MeasureFlow m;  // finest-level density flow
    std::vector<double> eps_used;
    std::size_t picard_iters = 0;
    std::vector<double> residuals;
    bool flagged = false;
    std::vector<LevelSolution> levels;  // one per eps level, coarsest first
};

/// Fixed point of the forward-backward system on each subdomain level,
/// coarsest eps first, finest last. Per level: damped Picard alternation of
/// the backward and forward solves, terminal data re-corrected against the
/// current terminal density, stopping when the d1 gap between consecutive
/// undamped forward outputs falls below picard_tol. After convergence the
/// value flow is re-solved once against the returned density flow so the
/// terminal identity holds exactly for the returned pair. Throws
/// ConvergenceError with the residual history when max_iters is exhausted.
MFGSolution solve_mfg(const DomainGrid& grid, const ModelSpec& model, double t0,
                      const MeasureField& m0, const SolverConfig& config);

/// The fixed-point solve of one subdomain level on its own. Levels of
/// solve_mfg are independent, so the finest-level call reproduces solve_mfg's
/// headline pair bit for bit at a fraction of the cost; callers that only
/// need the value map use this.
LevelSolution solve_mfg_level(const DomainGrid& grid, double eps, const ModelSpec& model,
                              double t0, const MeasureField& m0, const SolverConfig& config);

/// True when the residual sequence increases somewhere after its third entry.
bool picard_residuals_flagged(const std::vector<double>& residuals);

/// Monotonicity gap of two solutions on the same grid and model:
///   rhs  = integral (u1 - u2)(t0) d(m1(t0) - m2(t0)),
///   lhs  = sum of the two convexity cross-terms
///          integral integral (H(x,Du_j) - H(x,Du_i) - Hp(x,Du_i).(Du_j - Du_i)) dm_i dt.
/// Returns rhs - lhs, which is the sum of the coupling monotonicity terms and
/// therefore nonnegative up to discretization defects.
double lasry_lions_gap(const MFGSolution& sol1, const MFGSolution& sol2, const ModelSpec& model);

struct StabilityPair {
    double d1_initial = 0.0;
    double ratio_m = 0.0;  // sup_t d1(m1,m2) / d1(m01,m02)
    double ratio_u = 0.0;  // sup_t ||u1-u2||_{2+alpha} / sup_t d1(m1,m2)
};

struct StabilityReport {
    std::size_t pairs_used = 0;
    std::size_t pairs_skipped = 0;  // degenerate pairs (initial d1 ~ 0)
    double ratio_m = 0.0;           // maxima over used pairs
    double ratio_u = 0.0;
    std::vector<StabilityPair> pairs;
};

/// Empirical stability constants over initial-measure pairs: both members of
/// each pair are solved from t0 = 0 to config.horizon and the two Lipschitz
/// ratios are reported. Pairs with initial d1 below 1e-14 are skipped and
/// counted as degenerate.
StabilityReport stability_constants(const DomainGrid& grid, const ModelSpec& model,
                                    const std::vector<std::pair<MeasureField, MeasureField>>& pairs,
                                    const SolverConfig& config);

}  // namespace mfg
