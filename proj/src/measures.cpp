#include "mfg/measures.hpp"

#include <algorithm>
#include <cmath>

#include "mfg/norms.hpp"
#include "mfg/transport_lp.hpp"

namespace mfg {

double MeasureField::mass() const {
    double s = 0.0;
    for (std::size_t i = 0; i < density.size(); ++i) s += density[i] * grid->quad_weights[i];
    return s;
}

double MeasureField::min_density() const {
    double m = 0.0;
    for (double v : density) m = std::min(m, v);
    return m;
}

MeasureField MeasureField::restricted(std::size_t level) const {
    const auto& mk = grid->mask(level);
    MeasureField out{grid, density};
    for (std::size_t i = 0; i < density.size(); ++i)
        if (!mk[i]) out.density[i] = 0.0;
    return out;
}

void MeasureField::normalize() {
    const double m = mass();
    if (m <= 0.0) throw ValidationError("MeasureField::normalize: zero mass");
    for (double& v : density) v /= m;
}

MeasureField zero_measure(const DomainGrid& grid) {
    return {&grid, std::vector<double>(grid.size(), 0.0)};
}

MeasureField probability_from_density(const DomainGrid& grid,
                                      const std::function<double(Vec2)>& f) {
    MeasureField m = zero_measure(grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double v = f(grid.nodes[i]);
        if (v < 0.0) throw ValidationError("probability_from_density: negative density");
        m.density[i] = v;
    }
    m.normalize();
    return m;
}

void validate_subprobability(const MeasureField& m) {
    if (m.min_density() < 0.0)
        throw ValidationError("MeasureField: density must be nonnegative");
    if (m.mass() > 1.0 + 1e-12)
        throw ValidationError("MeasureField: mass exceeds one");
}

void validate_probability(const MeasureField& m) {
    if (m.min_density() < 0.0)
        throw ValidationError("MeasureField: density must be nonnegative");
    if (std::abs(m.mass() - 1.0) > 1e-10)
        throw ValidationError("MeasureField: mass must equal one");
}

MeasureField empirical_measure(const DomainGrid& grid, const EmpiricalConfig& cfg) {
    std::size_t kept = 0;
    for (std::size_t k = 0; k < cfg.points.size(); ++k)
        if (static_cast<int>(k) != cfg.exclude) ++kept;
    if (kept == 0) throw ValidationError("empirical_measure: no points retained");
    const double atom = 1.0 / static_cast<double>(kept);

    MeasureField m = zero_measure(grid);
    for (std::size_t k = 0; k < cfg.points.size(); ++k) {
        if (static_cast<int>(k) == cfg.exclude) continue;
        const Vec2 p = cfg.points[k];
        // linear splat: corner cells of the surrounding lattice square
        int ids[4] = {-1, -1, -1, -1};
        double ws[4] = {0, 0, 0, 0};
        if (grid.dim == 1) {
            const double t = (p.x - (grid.x0 + 0.5 * grid.h)) / grid.h;
            const int i0 = std::clamp(static_cast<int>(std::floor(t)), 0, grid.nx - 2);
            const double w = std::clamp(t - i0, 0.0, 1.0);
            ids[0] = grid.node_of_cell[i0];
            ids[1] = grid.node_of_cell[i0 + 1];
            ws[0] = 1.0 - w;
            ws[1] = w;
        } else {
            const double tx = (p.x - (grid.x0 + 0.5 * grid.h)) / grid.h;
            const double ty = (p.y - (grid.y0 + 0.5 * grid.h)) / grid.h;
            const int ix = std::clamp(static_cast<int>(std::floor(tx)), 0, grid.nx - 2);
            const int iy = std::clamp(static_cast<int>(std::floor(ty)), 0, grid.ny - 2);
            const double wx = std::clamp(tx - ix, 0.0, 1.0), wy = std::clamp(ty - iy, 0.0, 1.0);
            ids[0] = grid.node_of_cell[grid.cell_index(ix, iy)];
            ids[1] = grid.node_of_cell[grid.cell_index(ix + 1, iy)];
            ids[2] = grid.node_of_cell[grid.cell_index(ix, iy + 1)];
            ids[3] = grid.node_of_cell[grid.cell_index(ix + 1, iy + 1)];
            ws[0] = (1 - wx) * (1 - wy);
            ws[1] = wx * (1 - wy);
            ws[2] = (1 - wx) * wy;
            ws[3] = wx * wy;
        }
        double wsum = 0.0;
        for (int c = 0; c < 4; ++c)
            if (ids[c] >= 0) wsum += ws[c];
        if (wsum <= 0.0) {
            const int nn = grid.nearest_node(p);
            m.density[nn] += atom / grid.quad_weights[nn];
            continue;
        }
        for (int c = 0; c < 4; ++c)
            if (ids[c] >= 0)
                m.density[ids[c]] += atom * (ws[c] / wsum) / grid.quad_weights[ids[c]];
    }
    return m;
}

double wasserstein1_cdf(const MeasureField& m1, const MeasureField& m2) {
    if (m1.grid != m2.grid) throw ValidationError("wasserstein1_cdf: grids differ");
    const DomainGrid& g = *m1.grid;
    if (g.dim != 1) throw ValidationError("wasserstein1_cdf: requires a 1D grid");
    if (std::abs(m1.mass() - m2.mass()) > 1e-12)
        throw ValidationError("wasserstein1_cdf: masses differ");
    // nodes are ordered by x on the interval lattice
    double acc = 0.0, cum = 0.0;
    for (std::size_t i = 0; i + 1 < g.size(); ++i) {
        cum += (m1.density[i] - m2.density[i]) * g.quad_weights[i];
        acc += std::abs(cum) * (g.nodes[i + 1].x - g.nodes[i].x);
    }
    return acc;
}

W1Result wasserstein1_lp(const MeasureField& m1, const MeasureField& m2) {
    if (m1.grid != m2.grid) throw ValidationError("wasserstein1_lp: grids differ");
    const DomainGrid& g = *m1.grid;
    TransportProblem pb;
    pb.box = g.diameter;
    W1Result res;
    std::vector<int> src_nodes, snk_nodes;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double b = (m1.density[i] - m2.density[i]) * g.quad_weights[i];
        if (b > 0.0) {
            pb.src_pos.push_back(g.nodes[i]);
            pb.src_mass.push_back(b);
            src_nodes.push_back(static_cast<int>(i));
        } else if (b < 0.0) {
            pb.snk_pos.push_back(g.nodes[i]);
            pb.snk_mass.push_back(-b);
            snk_nodes.push_back(static_cast<int>(i));
        }
    }
    const TransportSolution ts = solve_transport(pb);
    res.value = ts.cost;
    res.support = src_nodes;
    res.support.insert(res.support.end(), snk_nodes.begin(), snk_nodes.end());
    res.phi = ts.phi_src;
    res.phi.insert(res.phi.end(), ts.phi_snk.begin(), ts.phi_snk.end());
    return res;
}

double wasserstein1(const MeasureField& m1, const MeasureField& m2) {
    if (m1.grid != m2.grid) throw ValidationError("wasserstein1: grids differ");
    if (m1.grid->dim == 1 && std::abs(m1.mass() - m2.mass()) <= 1e-12)
        return wasserstein1_cdf(m1, m2);
    return wasserstein1_lp(m1, m2).value;
}

double wasserstein1_eps(const MeasureField& m1, const MeasureField& m2, std::size_t level) {
    return wasserstein1(m1.restricted(level), m2.restricted(level));
}

namespace {

struct TestField {
    std::vector<double> values;
    double norm = 0.0;
};

// Fixed family: compactly supported bumps (1-r^2)^4 at swept centers and
// dyadic widths, times monomials of degree <= 3 in the centered offset.
std::vector<TestField> dual_test_family(const DomainGrid& g, int order, double alpha) {
    std::vector<TestField> family;
    const int n_centers = g.dim == 1 ? 17 : 5;
    std::vector<Vec2> centers;
    if (g.dim == 1) {
        for (int c = 0; c < n_centers; ++c) {
            const double t = (c + 0.5) / n_centers;
            centers.push_back({g.x0 + t * (g.x1 - g.x0), 0.0});
        }
    } else {
        for (int cy = 0; cy < n_centers; ++cy)
            for (int cx = 0; cx < n_centers; ++cx) {
                const double tx = (cx + 0.5) / n_centers, ty = (cy + 0.5) / n_centers;
                centers.push_back({g.x0 + tx * (g.x1 - g.x0), g.y0 + ty * (g.y1 - g.y0)});
            }
    }
    const double half_extent = 0.5 * (g.x1 - g.x0);
    const std::vector<double> widths = {2.0 * half_extent, half_extent, 0.5 * half_extent,
                                        0.25 * half_extent};
    // monomial exponents (px, py) with px + py <= 3
    std::vector<std::pair<int, int>> polys;
    for (int px = 0; px <= 3; ++px)
        for (int py = 0; py <= (g.dim == 1 ? 0 : 3 - px); ++py) polys.emplace_back(px, py);

    for (const Vec2& c : centers) {
        for (double w : widths) {
            for (const auto& [px, py] : polys) {
                TestField tf;
                tf.values.resize(g.size());
                bool nonzero = false;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double rx = (g.nodes[i].x - c.x) / w;
                    const double ry = (g.nodes[i].y - c.y) / w;
                    const double r2 = rx * rx + ry * ry;
                    double v = 0.0;
                    if (r2 < 1.0) {
                        const double bump = sqr(sqr(1.0 - r2));
                        v = bump * std::pow(rx, px) * (py ? std::pow(ry, py) : 1.0);
                    }
                    tf.values[i] = v;
                    if (std::abs(v) > 1e-14) nonzero = true;
                }
                if (!nonzero) continue;
                const HolderBreakdown hb = order >= 2 ? holder_norm_2a(g, tf.values, alpha)
                                                      : holder_norm_1a(g, tf.values, alpha);
                if (hb.total < 1e-12) continue;
                tf.norm = hb.total;
                family.push_back(std::move(tf));
            }
        }
    }
    return family;
}

}  // namespace

double signed_dual_norm(const DomainGrid& grid, const std::vector<double>& signed_density,
                        int order, double alpha) {
    if (signed_density.size() != grid.size())
        throw ValidationError("signed_dual_norm: density size mismatch");
    if (order < 1 || order > 2) throw ValidationError("signed_dual_norm: order must be 1 or 2");
    const auto family = dual_test_family(grid, order, alpha);
    double best = 0.0;
    for (const auto& tf : family) {
        double pairing = 0.0;
        for (std::size_t i = 0; i < grid.size(); ++i)
            pairing += tf.values[i] * signed_density[i] * grid.quad_weights[i];
        best = std::max(best, std::abs(pairing) / tf.norm);
    }
    return best;
}

Vec2 sample_from_density(const DomainGrid& grid, const MeasureField& m, double u) {
    if (grid.dim != 1) throw ValidationError("sample_from_density: 1D only");
    const double total = m.mass();
    if (total <= 0.0) throw ValidationError("sample_from_density: zero mass");
    double target = u * total, cum = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double cell = m.density[i] * grid.quad_weights[i];
        if (cum + cell >= target && cell > 0.0) {
            const double frac = (target - cum) / cell;
            return {grid.nodes[i].x + (frac - 0.5) * grid.h, 0.0};
        }
        cum += cell;
    }
    return grid.nodes.back();
}

}  // namespace mfg
