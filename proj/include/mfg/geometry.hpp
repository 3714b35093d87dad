#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "mfg/core.hpp"

namespace mfg {

struct Vec2 {
    double x = 0.0, y = 0.0;
};

/// Symmetric 2x2 matrix; 1D problems use the xx entry only.
struct Mat2 {
    double xx = 0.0, xy = 0.0, yy = 0.0;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline Vec2 matvec(const Mat2& m, Vec2 v) {
    return {m.xx * v.x + m.xy * v.y, m.xy * v.x + m.yy * v.y};
}

/// Width parameters of the boundary collar. dist equals the exact boundary
/// distance on {dist < eps0}; the structural condition is checked on
/// {dist < delta0} with delta0 <= eps0.
struct CollarParams {
    double eps0 = 0.0;
    double delta0 = 0.0;
};

/// Cell-centered grid on an interval (dim 1) or a disk (dim 2), carrying the
/// boundary-distance field, its discrete derivatives, exact quadrature
/// weights, and the nested masks of the shrunken subdomains.
struct DomainGrid {
    int dim = 1;
    double h = 0.0;
    double volume = 0.0;    // analytic |domain|
    double diameter = 0.0;  // analytic diam(domain)
    CollarParams collar;

    // bounding lattice: [x0,x1] x [y0,y1] split into nx x ny cells
    double x0 = 0.0, x1 = 0.0, y0 = 0.0, y1 = 0.0;
    int nx = 0, ny = 0;

    std::vector<int> node_of_cell;  // lattice cell -> node id, -1 outside
    std::vector<int> cell_of_node;
    std::vector<Vec2> nodes;
    std::vector<double> dist;
    std::vector<Vec2> grad_dist;   // discrete gradient of dist
    std::vector<Mat2> hess_dist;   // discrete Hessian of dist
    std::vector<Vec2> normal;              // outward unit normal, collar nodes only
    std::vector<double> quad_weights;
    std::vector<double> eps_levels;                 // strictly decreasing
    std::vector<std::vector<std::uint8_t>> masks;   // per level, 1 = inside

    std::size_t size() const { return nodes.size(); }

    int cell_index(int ix, int iy) const { return iy * nx + ix; }

    /// Neighbor node ids in directions [x-, x+, y-, y+]; -1 when absent.
    std::array<int, 4> neighbors(int node) const {
        const int c = cell_of_node[node];
        const int ix = c % nx, iy = c / nx;
        std::array<int, 4> out{-1, -1, -1, -1};
        if (ix > 0) out[0] = node_of_cell[cell_index(ix - 1, iy)];
        if (ix + 1 < nx) out[1] = node_of_cell[cell_index(ix + 1, iy)];
        if (dim == 2 && iy > 0) out[2] = node_of_cell[cell_index(ix, iy - 1)];
        if (dim == 2 && iy + 1 < ny) out[3] = node_of_cell[cell_index(ix, iy + 1)];
        return out;
    }

    const std::vector<std::uint8_t>& mask(std::size_t level) const {
        if (level >= masks.size()) throw ValidationError("DomainGrid: mask level out of range");
        return masks[level];
    }

    /// Nodes of the given mask with at least one neighbor outside it.
    std::vector<int> mask_boundary_nodes(std::size_t level) const;

    /// Multilinear interpolation of a nodal field at point p; clamps to the
    /// nearest node where lattice neighbors fall outside the domain.
    double interpolate(const std::vector<double>& field, Vec2 p) const;

    /// Nearest node id to a point (by lattice cell, then local search).
    int nearest_node(Vec2 p) const;
};

/// Interval (0, L) with n cells. dist is min(x, L-x) near the boundary and
/// blended by a fixed monotone quintic beyond eps0 so the field is C^2 at the
/// midpoint. Default collar: eps0 = delta0 = L/4; default eps levels
/// {eps0/3, eps0/6, eps0/12, eps0/24}.
DomainGrid build_interval_domain(double L, int n, CollarParams collar = {},
                                 std::vector<double> eps_levels = {});

/// Disk of radius R sampled on an n x n lattice of its bounding box. Nodes
/// are the cell centers inside the disk; quadrature weights are exact
/// cell-disk intersection areas, with the slivers of center-outside cells
/// merged into their nearest node so that the weights sum to pi R^2.
DomainGrid build_disk_domain(double R, int n, CollarParams collar = {},
                             std::vector<double> eps_levels = {});

/// Distance profile used by the grid builders: the raw boundary distance rho
/// on [0, eps0], then a monotone quintic blend up to rho_max so the composed
/// field is C^2 through the ridge of the raw distance (interval midpoint,
/// disk center). Exposed so coefficient fields built from the distance can
/// evaluate the exact same profile analytically.
double smooth_boundary_profile(double rho, double eps0, double rho_max);
double smooth_boundary_profile_deriv(double rho, double eps0, double rho_max);

/// C^2 odd cutoff with ramp(0)=0, ramp'(0)=1, supported on |s| <= width.
double extension_ramp(double s, double width);
double extension_ramp_deriv(double s, double width);

/// Extension field g with co-normal derivative a grad(g) . nu = f on the
/// boundary of the eps-subdomain, built as
///   g(x) = -ramp(dist(x) - eps) * f(pi(x)) / a_nn(pi(x)),
/// where pi is the closest-boundary-point projection, the ramp is supported
/// in one collar width, and a_nn is the co-normal diffusion coefficient
/// supplied per boundary node (pass 1 for identity diffusion). boundary_data
/// and conormal_coeff are indexed like mask_boundary_nodes(level).
std::vector<double> neumann_extension(const DomainGrid& grid, std::size_t level,
                                      const std::vector<double>& boundary_data,
                                      const std::vector<double>& conormal_coeff);

struct InvarianceReport {
    bool holds = false;
    double min_slack = 0.0;   // min over collar nodes and p samples of LHS-RHS
    int worst_node = -1;
    Vec2 worst_p;
    double c_margin = 0.0;
    int nodes_checked = 0;
    std::vector<double> node_slack;  // per checked node, min over p samples
    std::vector<int> node_ids;
};

/// Checks the structural drift/diffusion inequality on the collar
/// {0 < dist < delta0} with discrete derivatives of dist:
///   tr(a D^2 d) - H_p(x,p) . Dd  >=  (a Dd . Dd)/d - C d
/// for every sampled p. Reports; never throws on failure.
InvarianceReport check_invariance_condition(
    const DomainGrid& grid, const std::function<Mat2(Vec2)>& a,
    const std::function<Vec2(Vec2, Vec2)>& Hp, const std::vector<Vec2>& p_samples,
    double c_margin);

}  // namespace mfg
