#pragma once

#include <functional>
#include <vector>

#include "mfg/geometry.hpp"

namespace mfg {

/// Nonnegative density on grid nodes; integrals use the grid quadrature
/// weights, so mass = sum_i density_i * w_i. Subprobabilities (mass <= 1)
/// arise by restriction to a shrunken subdomain and are kept unnormalized.
struct MeasureField {
    const DomainGrid* grid = nullptr;
    std::vector<double> density;

    double mass() const;
    double min_density() const;
    /// Zeroes the density outside the given eps-level mask.
    MeasureField restricted(std::size_t level) const;
    void normalize();
};

MeasureField zero_measure(const DomainGrid& grid);

/// Samples f at the nodes, requires f >= 0, and normalizes to mass one.
MeasureField probability_from_density(const DomainGrid& grid,
                                      const std::function<double(Vec2)>& f);

void validate_subprobability(const MeasureField& m);  // mass <= 1 + 1e-12, density >= 0
void validate_probability(const MeasureField& m);     // |mass - 1| <= 1e-10

struct EmpiricalConfig {
    std::vector<Vec2> points;  // all inside the domain (caller clamps)
    int exclude = -1;          // index skipped by the leave-one-out convention
};

/// Empirical measure of the configuration: each retained point splats its
/// atom linearly onto the surrounding cell centers. Weight is 1/(N-1) when a
/// point is excluded, 1/N otherwise.
MeasureField empirical_measure(const DomainGrid& grid, const EmpiricalConfig& cfg);

/// Exact 1-Wasserstein distance in 1D via |F1 - F2| of the cumulative masses;
/// requires equal total masses (1e-12) and dim == 1.
double wasserstein1_cdf(const MeasureField& m1, const MeasureField& m2);

struct W1Result {
    double value = 0.0;
    std::vector<int> support;     // node ids of the LP support union
    std::vector<double> phi;      // reported optimal potential on the support
};

/// Kantorovich LP over the support nodes with cost |x-y|, solved as a
/// min-cost flow. Unequal masses are handled by a virtual node at cost
/// diam(domain), the duality value of
///   sup { integral phi d(m1 - m2) : Lip(phi) <= 1, |phi| <= diam }.
/// On equal masses this equals the plain 1-Wasserstein distance.
W1Result wasserstein1_lp(const MeasureField& m1, const MeasureField& m2);

/// Dispatch: CDF route in 1D with equal masses, LP otherwise.
double wasserstein1(const MeasureField& m1, const MeasureField& m2);

/// Distance between the restrictions to the eps-level subdomain.
double wasserstein1_eps(const MeasureField& m1, const MeasureField& m2, std::size_t level);

/// Lower-bound surrogate of the dual Hoelder norm ||mu||_{-(order+alpha)}:
/// max |<mu, phi>| over a fixed family of polynomial-times-bump test fields
/// (degree <= 3), each normalized by its grid (order+alpha)-norm. The same
/// surrogate is used on both sides of every inequality it enters.
double signed_dual_norm(const DomainGrid& grid, const std::vector<double>& signed_density,
                        int order, double alpha);

/// Inverse-CDF sample from a 1D probability field (piecewise-constant on
/// cells). u must lie in [0,1).
Vec2 sample_from_density(const DomainGrid& grid, const MeasureField& m, double u);

}  // namespace mfg
