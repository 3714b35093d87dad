#include "mfg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mfg {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

// Monotone quintic blend q(t) = t - t^3 + t^4/2 on [0,1]:
// q(0)=0, q'(0)=1, q''(0)=0, q(1)=1/2, q'(1)=0, q''(1)=0.
double blend_q(double t) { return t * (1.0 - t * t * (1.0 - 0.5 * t)); }

double blend_q_deriv(double t) { return 1.0 - t * t * (3.0 - 2.0 * t); }

std::vector<double> default_eps_levels(double eps0) {
    return {eps0 / 3.0, eps0 / 6.0, eps0 / 12.0, eps0 / 24.0};
}

void validate_collar_and_levels(const CollarParams& collar, const std::vector<double>& levels,
                                double rho_max) {
    if (!(collar.eps0 > 0.0) || collar.eps0 >= rho_max)
        throw ValidationError("DomainGrid: eps0 must lie in (0, max distance)");
    if (!(collar.delta0 > 0.0) || collar.delta0 > collar.eps0)
        throw ValidationError("DomainGrid: delta0 must lie in (0, eps0]");
    if (levels.empty()) throw ValidationError("DomainGrid: eps_levels must be nonempty");
    for (std::size_t k = 0; k < levels.size(); ++k) {
        if (!(levels[k] > 0.0) || levels[k] > collar.eps0 / 3.0 + 1e-15)
            throw ValidationError("DomainGrid: every eps level must lie in (0, eps0/3]");
        if (k > 0 && levels[k] >= levels[k - 1])
            throw ValidationError("DomainGrid: eps_levels must be strictly decreasing");
    }
}

// Discrete derivatives of dist: central differences where both lattice
// neighbors carry nodes, one-sided at the outermost layer.
void fill_dist_derivatives(DomainGrid& g) {
    const std::size_t n = g.size();
    g.grad_dist.assign(n, {});
    g.hess_dist.assign(n, {});
    g.normal.assign(n, {});
    auto axis_first = [&](int node, int axis, double& d1, double& d2) {
        const auto nb = g.neighbors(node);
        const int lo = nb[2 * axis], hi = nb[2 * axis + 1];
        const double di = g.dist[node];
        if (lo >= 0 && hi >= 0) {
            d1 = (g.dist[hi] - g.dist[lo]) / (2.0 * g.h);
            d2 = (g.dist[hi] - 2.0 * di + g.dist[lo]) / (g.h * g.h);
        } else if (hi >= 0) {
            d1 = (g.dist[hi] - di) / g.h;
            const int hh = g.neighbors(hi)[2 * axis + 1];
            d2 = (hh >= 0) ? (g.dist[hh] - 2.0 * g.dist[hi] + di) / (g.h * g.h) : 0.0;
        } else if (lo >= 0) {
            d1 = (di - g.dist[lo]) / g.h;
            const int ll = g.neighbors(lo)[2 * axis];
            d2 = (ll >= 0) ? (di - 2.0 * g.dist[lo] + g.dist[ll]) / (g.h * g.h) : 0.0;
        } else {
            d1 = 0.0;
            d2 = 0.0;
        }
    };
    for (std::size_t i = 0; i < n; ++i) {
        const auto nb = g.neighbors(static_cast<int>(i));
        double gx, gxx, gy = 0.0, gyy = 0.0;
        axis_first(static_cast<int>(i), 0, gx, gxx);
        if (g.dim == 2) axis_first(static_cast<int>(i), 1, gy, gyy);
        double gxy = 0.0;
        if (g.dim == 2 && nb[0] >= 0 && nb[1] >= 0) {
            const auto nxm = g.neighbors(nb[0]);
            const auto nxp = g.neighbors(nb[1]);
            if (nxm[2] >= 0 && nxm[3] >= 0 && nxp[2] >= 0 && nxp[3] >= 0)
                gxy = (g.dist[nxp[3]] - g.dist[nxp[2]] - g.dist[nxm[3]] + g.dist[nxm[2]]) /
                      (4.0 * g.h * g.h);
        }
        g.grad_dist[i] = {gx, gy};
        g.hess_dist[i] = {gxx, gxy, gyy};
        const double norm = std::sqrt(gx * gx + gy * gy);
        if (g.dist[i] < g.collar.eps0 && norm > 1e-14)
            g.normal[i] = {-gx / norm, -gy / norm};
    }
}

void fill_masks(DomainGrid& g) {
    g.masks.clear();
    for (double eps : g.eps_levels) {
        std::vector<std::uint8_t> m(g.size(), 0);
        for (std::size_t i = 0; i < g.size(); ++i) m[i] = g.dist[i] > eps ? 1 : 0;
        std::size_t count = 0;
        for (auto v : m) count += v;
        if (count == 0) throw ValidationError("DomainGrid: an eps level has an empty mask");
        g.masks.push_back(std::move(m));
    }
}

// Area of the intersection of an axis-aligned cell with the disk |p| <= R,
// by adaptive Simpson integration of the chord length in x.
double chord_len(double x, double yl, double yh, double R) {
    const double t2 = R * R - x * x;
    if (t2 <= 0.0) return 0.0;
    const double t = std::sqrt(t2);
    return std::max(0.0, std::min(yh, t) - std::max(yl, -t));
}

double simpson_rec(double a, double b, double fa, double fm, double fb, double whole,
                   double yl, double yh, double R, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = chord_len(lm, yl, yh, R), frm = chord_len(rm, yl, yh, R);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol)
        return left + right + (left + right - whole) / 15.0;
    return simpson_rec(a, m, fa, flm, fm, left, yl, yh, R, 0.5 * tol, depth - 1) +
           simpson_rec(m, b, fm, frm, fb, right, yl, yh, R, 0.5 * tol, depth - 1);
}

double cell_disk_area(double xl, double xh, double yl, double yh, double R) {
    if (xl >= R || xh <= -R) return 0.0;
    xl = std::max(xl, -R);
    xh = std::min(xh, R);
    const double fa = chord_len(xl, yl, yh, R);
    const double fm = chord_len(0.5 * (xl + xh), yl, yh, R);
    const double fb = chord_len(xh, yl, yh, R);
    const double whole = (xh - xl) / 6.0 * (fa + 4.0 * fm + fb);
    return simpson_rec(xl, xh, fa, fm, fb, whole, yl, yh, R, 1e-13 * R * R, 48);
}

}  // namespace

double smooth_boundary_profile(double rho, double eps0, double rho_max) {
    if (rho <= eps0) return rho;
    const double span = rho_max - eps0;
    if (span <= 0.0) return rho;
    return eps0 + span * blend_q(std::min(1.0, (rho - eps0) / span));
}

double smooth_boundary_profile_deriv(double rho, double eps0, double rho_max) {
    if (rho <= eps0) return 1.0;
    const double span = rho_max - eps0;
    if (span <= 0.0) return 1.0;
    return blend_q_deriv(std::min(1.0, (rho - eps0) / span));
}

std::vector<int> DomainGrid::mask_boundary_nodes(std::size_t level) const {
    const auto& m = mask(level);
    std::vector<int> out;
    for (std::size_t i = 0; i < size(); ++i) {
        if (!m[i]) continue;
        const auto nb = neighbors(static_cast<int>(i));
        const int dirs = dim == 1 ? 2 : 4;
        for (int d = 0; d < dirs; ++d) {
            if (nb[d] < 0 || !m[nb[d]]) {
                out.push_back(static_cast<int>(i));
                break;
            }
        }
    }
    return out;
}

int DomainGrid::nearest_node(Vec2 p) const {
    const int ix = std::clamp(static_cast<int>((p.x - x0) / h), 0, nx - 1);
    const int iy = dim == 2 ? std::clamp(static_cast<int>((p.y - y0) / h), 0, ny - 1) : 0;
    int best = -1;
    double best_d = std::numeric_limits<double>::max();
    const int radius = 3;
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            const int jx = ix + dx, jy = iy + dy;
            if (jx < 0 || jx >= nx || jy < 0 || jy >= ny) continue;
            const int node = node_of_cell[cell_index(jx, jy)];
            if (node < 0) continue;
            const double dd = sqr(nodes[node].x - p.x) + sqr(nodes[node].y - p.y);
            if (dd < best_d) {
                best_d = dd;
                best = node;
            }
        }
    }
    if (best >= 0) return best;
    for (std::size_t i = 0; i < size(); ++i) {
        const double dd = sqr(nodes[i].x - p.x) + sqr(nodes[i].y - p.y);
        if (dd < best_d) {
            best_d = dd;
            best = static_cast<int>(i);
        }
    }
    return best;
}

double DomainGrid::interpolate(const std::vector<double>& field, Vec2 p) const {
    if (field.size() != size()) throw ValidationError("interpolate: field size mismatch");
    if (dim == 1) {
        const double t = (p.x - (x0 + 0.5 * h)) / h;
        const int i0 = std::clamp(static_cast<int>(std::floor(t)), 0, nx - 2);
        const double w = std::clamp(t - i0, 0.0, 1.0);
        const int a = node_of_cell[i0], b = node_of_cell[i0 + 1];
        return (1.0 - w) * field[a] + w * field[b];
    }
    const double tx = (p.x - (x0 + 0.5 * h)) / h;
    const double ty = (p.y - (y0 + 0.5 * h)) / h;
    const int ix = std::clamp(static_cast<int>(std::floor(tx)), 0, nx - 2);
    const int iy = std::clamp(static_cast<int>(std::floor(ty)), 0, ny - 2);
    const double wx = std::clamp(tx - ix, 0.0, 1.0), wy = std::clamp(ty - iy, 0.0, 1.0);
    const int c[4] = {node_of_cell[cell_index(ix, iy)], node_of_cell[cell_index(ix + 1, iy)],
                      node_of_cell[cell_index(ix, iy + 1)],
                      node_of_cell[cell_index(ix + 1, iy + 1)]};
    const double w[4] = {(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy};
    double s = 0.0, ws = 0.0;
    for (int k = 0; k < 4; ++k)
        if (c[k] >= 0) {
            s += w[k] * field[c[k]];
            ws += w[k];
        }
    if (ws > 1e-14) return s / ws;
    const int nn = nearest_node(p);
    return nn >= 0 ? field[nn] : 0.0;
}

DomainGrid build_interval_domain(double L, int n, CollarParams collar,
                                 std::vector<double> eps_levels) {
    if (!(L > 0.0)) throw ValidationError("build_interval_domain: L must be positive");
    if (n < 16) throw ValidationError("build_interval_domain: need n >= 16");
    if (collar.eps0 == 0.0) collar = {L / 4.0, L / 4.0};
    if (eps_levels.empty()) eps_levels = default_eps_levels(collar.eps0);
    validate_collar_and_levels(collar, eps_levels, L / 2.0);

    DomainGrid g;
    g.dim = 1;
    g.h = L / n;
    g.volume = L;
    g.diameter = L;
    g.collar = collar;
    g.x0 = 0.0;
    g.x1 = L;
    g.nx = n;
    g.ny = 1;
    g.node_of_cell.resize(n);
    g.eps_levels = std::move(eps_levels);
    for (int i = 0; i < n; ++i) {
        g.node_of_cell[i] = i;
        g.cell_of_node.push_back(i);
        const double x = (i + 0.5) * g.h;
        g.nodes.push_back({x, 0.0});
        const double rho = std::min(x, L - x);
        g.dist.push_back(smooth_boundary_profile(rho, collar.eps0, L / 2.0));
        g.quad_weights.push_back(g.h);
    }
    fill_dist_derivatives(g);
    fill_masks(g);
    return g;
}

DomainGrid build_disk_domain(double R, int n, CollarParams collar,
                             std::vector<double> eps_levels) {
    if (!(R > 0.0)) throw ValidationError("build_disk_domain: R must be positive");
    if (n < 32) throw ValidationError("build_disk_domain: need n >= 32 cells per axis");
    if (collar.eps0 == 0.0) collar = {R / 2.0, R / 2.0};
    if (eps_levels.empty()) eps_levels = default_eps_levels(collar.eps0);
    validate_collar_and_levels(collar, eps_levels, R);

    DomainGrid g;
    g.dim = 2;
    g.h = 2.0 * R / n;
    g.volume = kPi * R * R;
    g.diameter = 2.0 * R;
    g.collar = collar;
    g.x0 = -R;
    g.x1 = R;
    g.y0 = -R;
    g.y1 = R;
    g.nx = n;
    g.ny = n;
    g.node_of_cell.assign(static_cast<std::size_t>(n) * n, -1);
    g.eps_levels = std::move(eps_levels);

    std::vector<std::pair<int, double>> sliver_cells;  // cell -> stray area
    for (int iy = 0; iy < n; ++iy) {
        for (int ix = 0; ix < n; ++ix) {
            const double cx = g.x0 + (ix + 0.5) * g.h;
            const double cy = g.y0 + (iy + 0.5) * g.h;
            const double xl = g.x0 + ix * g.h, xh = xl + g.h;
            const double yl = g.y0 + iy * g.h, yh = yl + g.h;
            const double r = std::sqrt(cx * cx + cy * cy);
            const double area = cell_disk_area(xl, xh, yl, yh, R);
            if (area <= 0.0) continue;
            const int cell = g.cell_index(ix, iy);
            if (r < R) {
                g.node_of_cell[cell] = static_cast<int>(g.nodes.size());
                g.cell_of_node.push_back(cell);
                g.nodes.push_back({cx, cy});
                g.dist.push_back(smooth_boundary_profile(R - r, collar.eps0, R));
                g.quad_weights.push_back(area);
            } else {
                sliver_cells.emplace_back(cell, area);
            }
        }
    }
    if (g.nodes.empty()) throw ValidationError("build_disk_domain: no interior nodes");
    // merge center-outside slivers into the nearest interior node so the
    // weights partition the disk area exactly
    for (const auto& [cell, area] : sliver_cells) {
        const int ix = cell % n, iy = cell / n;
        const double cx = g.x0 + (ix + 0.5) * g.h, cy = g.y0 + (iy + 0.5) * g.h;
        const double r = std::sqrt(cx * cx + cy * cy);
        const Vec2 inside{cx * (R - 0.25 * g.h) / r, cy * (R - 0.25 * g.h) / r};
        const int target = g.nearest_node(inside);
        g.quad_weights[target] += area;
    }
    fill_dist_derivatives(g);
    fill_masks(g);
    return g;
}

double extension_ramp(double s, double width) {
    const double q = (s / width) * (s / width);
    if (q >= 1.0) return 0.0;
    const double c = 1.0 - q;
    return s * c * c * c;
}

double extension_ramp_deriv(double s, double width) {
    const double q = (s / width) * (s / width);
    if (q >= 1.0) return 0.0;
    const double c = 1.0 - q;
    return c * c * (c - 6.0 * q);
}

std::vector<double> neumann_extension(const DomainGrid& grid, std::size_t level,
                                      const std::vector<double>& boundary_data,
                                      const std::vector<double>& conormal_coeff) {
    const double eps = grid.eps_levels.at(level);
    const auto bnodes = grid.mask_boundary_nodes(level);
    if (boundary_data.size() != bnodes.size() || conormal_coeff.size() != bnodes.size())
        throw ValidationError("neumann_extension: boundary data size mismatch");
    for (double c : conormal_coeff)
        if (!(c > 0.0))
            throw ValidationError("neumann_extension: co-normal coefficients must be positive");

    const double width = grid.collar.eps0;
    std::vector<double> g(grid.size(), 0.0);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double s = grid.dist[i] - eps;
        if (std::abs(s) >= width) continue;
        // project to the eps-boundary along the inward distance gradient
        const Vec2 gd = grid.grad_dist[i];
        const double gn = std::sqrt(dot(gd, gd));
        if (gn < 1e-14) continue;
        const Vec2 pi_x{grid.nodes[i].x - s * gd.x / gn, grid.nodes[i].y - s * gd.y / gn};
        // nearest eps-boundary node carries the data
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::max();
        for (std::size_t b = 0; b < bnodes.size(); ++b) {
            const Vec2 q = grid.nodes[bnodes[b]];
            const double dd = sqr(q.x - pi_x.x) + sqr(q.y - pi_x.y);
            if (dd < best_d) {
                best_d = dd;
                best = b;
            }
        }
        g[i] = -extension_ramp(s, width) * boundary_data[best] / conormal_coeff[best];
    }
    return g;
}

InvarianceReport check_invariance_condition(
    const DomainGrid& grid, const std::function<Mat2(Vec2)>& a,
    const std::function<Vec2(Vec2, Vec2)>& Hp, const std::vector<Vec2>& p_samples,
    double c_margin) {
    InvarianceReport rep;
    rep.c_margin = c_margin;
    rep.min_slack = std::numeric_limits<double>::max();
    if (p_samples.empty()) {
        rep.holds = false;
        rep.min_slack = 0.0;
        return rep;
    }
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double d = grid.dist[i];
        if (d <= 0.0 || d >= grid.collar.delta0) continue;
        const Vec2 x = grid.nodes[i];
        const Mat2 A = a(x);
        const Vec2 Dd = grid.grad_dist[i];
        const Mat2 H = grid.hess_dist[i];
        const double tr_aD2d = A.xx * H.xx + 2.0 * A.xy * H.xy + A.yy * H.yy;
        const double quad = dot(matvec(A, Dd), Dd);
        double node_slack = std::numeric_limits<double>::max();
        Vec2 worst_p;
        for (const Vec2& p : p_samples) {
            const double lhs = tr_aD2d - dot(Hp(x, p), Dd);
            const double rhs = quad / d - c_margin * d;
            const double slack = lhs - rhs;
            if (slack < node_slack) {
                node_slack = slack;
                worst_p = p;
            }
        }
        rep.node_ids.push_back(static_cast<int>(i));
        rep.node_slack.push_back(node_slack);
        ++rep.nodes_checked;
        if (node_slack < rep.min_slack) {
            rep.min_slack = node_slack;
            rep.worst_node = static_cast<int>(i);
            rep.worst_p = worst_p;
        }
    }
    if (rep.nodes_checked == 0) rep.min_slack = 0.0;
    rep.holds = rep.min_slack >= 0.0;
    return rep;
}

}  // namespace mfg
