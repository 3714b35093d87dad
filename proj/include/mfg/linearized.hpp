#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "mfg/mfg_solver.hpp"

namespace mfg {

/// Time-dependent scalar and vector sources. An empty std::function means
/// identically zero.
using ScalarSource = std::function<double(double, Vec2)>;
using VectorSource = std::function<Vec2(double, Vec2)>;

/// Response of a solved system to a perturbation of its data: v is the
/// first-order change of the value field, mu the signed first-order change
/// of the density flow. Produced by solve_linearized around a base solve.
struct LinearizedSolution {
    ScalarFlow v;
    MeasureFlow mu;  // signed; zero outside the active subdomain

    // data the solve actually used (after restriction to the subdomain)
    MeasureField mu0;
    std::vector<double> v_T;
    ScalarSource h_src;
    VectorSource c_src;
    const MFGSolution* base = nullptr;

    std::size_t picard_iters = 0;
    std::vector<double> residuals;
    bool flagged = false;

    // logged output/input norm bookkeeping for the a-priori bound shape
    double norm_v = 0.0;          // sup_t value-space surrogate norm of v
    double norm_mu_lp = 0.0;      // space-time L^p norm of mu
    double norm_mu_dual = 0.0;    // sup_t dual-norm surrogate of mu
    double data_magnitude = 0.0;  // combined input norms
    double estimate_ratio = 0.0;  // output norms / data_magnitude
};

/// Solves the coupled linear response system around the base solve on its
/// finest subdomain and time grid: the backward v-equation is driven by the
/// running-coupling kernel paired with mu plus h_src, and the forward
/// mu-equation reuses the adjoint density operator with the extra face flux
/// (base density) * Hpp * Dv + c_src. Operators are reassembled from the
/// stored base value frames with frozen upwind switches, which makes the
/// solution map the exact parameter-derivative of the discrete solver at its
/// fixed point. The map is linear in (mu0, h_src, c_src, v_T); convergence
/// is measured relative to the data magnitude, so scaling the data scales
/// the solution exactly. config.dt and config.horizon are ignored (the base
/// flow's time grid governs); theta_scheme should match the base solve's.
LinearizedSolution solve_linearized(const DomainGrid& grid, const ModelSpec& model,
                                    const MFGSolution& base, const MeasureField& mu0,
                                    const ScalarSource& h_src, const VectorSource& c_src,
                                    const std::vector<double>& v_T, const SolverConfig& config);

/// First variation of the solved value in the initial measure, sampled as a
/// kernel: K[k][i] is the t0-value response at node i to a unit atom placed
/// at y_nodes[k]. DmK holds the y-derivative rows (centered differences over
/// neighboring y_nodes; assembled on one-dimensional grids only).
struct MeasureDerivative {
    double t0 = 0.0;
    MeasureField m0;  // initial measure of the base solve
    std::vector<int> y_nodes;
    std::vector<std::vector<double>> K;
    std::vector<std::vector<double>> DmK;
};

/// One linearized solve per y node with a mass-1 atom as initial
/// perturbation and all other data zero. t0 must be the start of the base
/// window.
MeasureDerivative compute_K(const DomainGrid& grid, const ModelSpec& model,
                            const MFGSolution& base, double t0,
                            const std::vector<int>& y_nodes,
                            const SolverConfig& config = {});

/// Pairing of the kernel with a signed measure: result[i] = sum over k of
/// K[k][i] * mu0(y_k) * w(y_k). Reproduces the direct linearized solve when
/// y_nodes cover the support of mu0.
std::vector<double> kernel_apply(const DomainGrid& grid, const MeasureDerivative& deriv,
                                 const MeasureField& mu0);

/// Combined regularity surrogate of the kernel: max over y columns of the
/// second-order Hoelder surrogate in x plus max over x of (sup, first
/// y-difference sup, Hoelder quotient of first y-differences). Measured one
/// subdomain level in, away from the solve's own boundary layer.
double kernel_surrogate_norm(const DomainGrid& grid, const MeasureDerivative& deriv,
                             double alpha);

/// Value of the solved system as a function of the starting point: solves
/// from (t0, m0) and interpolates the value at x. At t0 equal to the horizon
/// this is the terminal coupling G(x, m0) exactly.
double evaluate_U(const DomainGrid& grid, const ModelSpec& model, double t0, Vec2 x,
                  const MeasureField& m0, const SolverConfig& config = {});

struct ExpansionReport {
    std::vector<double> s_values;
    std::vector<double> defects;  // sup-norm defect per s
    double slope = 0.0;           // log-log fit over positive defects
    bool floor_limited = false;   // some defect sat below the numerical floor
};

/// Quadratic-remainder check of the value map in the measure argument:
/// defect(s) = sup over the finest mask of
///   |u(t0; m0 + s dir) - u(t0; m0) - s v(t0; dir)|,
/// fitted against s. direction must have zero total mass and keep
/// m0 + s*direction a probability for every s.
ExpansionReport second_order_expansion_check(const DomainGrid& grid, const ModelSpec& model,
                                             double t0, const MeasureField& m0,
                                             const MeasureField& direction,
                                             const std::vector<double>& s_values,
                                             const SolverConfig& config = {});

struct MasterResidual {
    std::vector<int> nodes;
    std::vector<double> residual;
    double dt_probe = 0.0;
};

/// Signed residual of the self-consistency identity satisfied by the value
/// map at (t0, m0), per sampled node x: the time derivative (central
/// difference of fresh solves at t0 +- 2 dt) plus the spatial operator terms
/// of the value, plus the two kernel integrals against m0, plus the running
/// coupling. One-dimensional grids.
MasterResidual master_equation_residual(const DomainGrid& grid, const ModelSpec& model,
                                        double t0, const std::vector<int>& x_nodes,
                                        const MeasureField& m0,
                                        const SolverConfig& config = {});

struct KernelLipschitzReport {
    double ratio = 0.0;
    std::size_t pairs_used = 0;
    std::size_t pairs_skipped = 0;
};

/// Max over pairs of ||K(m1) - K(m2)||_surrogate / d1(m1, m2); degenerate
/// pairs are skipped.
KernelLipschitzReport lipschitz_in_measure_of_K(
    const DomainGrid& grid, const ModelSpec& model, double t0,
    const std::vector<std::pair<MeasureField, MeasureField>>& pairs,
    const SolverConfig& config = {});

}  // namespace mfg
