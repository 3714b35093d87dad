#include "mfg/norms.hpp"

#include <algorithm>
#include <cmath>

namespace mfg {

namespace {

inline bool active(const std::vector<std::uint8_t>* mask, int node) {
    return node >= 0 && (!mask || (*mask)[node]);
}

// Nodes taking part in the pairwise quotient scan, decimated to keep the
// scan quadratic cost bounded.
std::vector<int> quotient_nodes(const DomainGrid& grid, const std::vector<std::uint8_t>* mask,
                                std::size_t cap = 512) {
    std::vector<int> ids;
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (active(mask, static_cast<int>(i))) ids.push_back(static_cast<int>(i));
    if (ids.size() <= cap) return ids;
    std::vector<int> out;
    const double stride = static_cast<double>(ids.size()) / static_cast<double>(cap);
    for (std::size_t k = 0; k < cap; ++k) out.push_back(ids[static_cast<std::size_t>(k * stride)]);
    return out;
}

}  // namespace

std::vector<Vec2> field_gradient(const DomainGrid& grid, const std::vector<double>& f,
                                 const std::vector<std::uint8_t>* mask) {
    if (f.size() != grid.size()) throw ValidationError("field_gradient: size mismatch");
    std::vector<Vec2> g(grid.size(), Vec2{});
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!active(mask, static_cast<int>(i))) continue;
        const auto nb = grid.neighbors(static_cast<int>(i));
        for (int axis = 0; axis < grid.dim; ++axis) {
            const int lo = active(mask, nb[2 * axis]) ? nb[2 * axis] : -1;
            const int hi = active(mask, nb[2 * axis + 1]) ? nb[2 * axis + 1] : -1;
            double d = 0.0;
            if (lo >= 0 && hi >= 0) d = (f[hi] - f[lo]) / (2.0 * grid.h);
            else if (hi >= 0) d = (f[hi] - f[i]) / grid.h;
            else if (lo >= 0) d = (f[i] - f[lo]) / grid.h;
            if (axis == 0) g[i].x = d;
            else g[i].y = d;
        }
    }
    return g;
}

std::vector<Mat2> field_hessian(const DomainGrid& grid, const std::vector<double>& f,
                                const std::vector<std::uint8_t>* mask) {
    if (f.size() != grid.size()) throw ValidationError("field_hessian: size mismatch");
    std::vector<Mat2> out(grid.size(), Mat2{});
    const double h2 = grid.h * grid.h;
    auto second = [&](int i, int axis) -> double {
        const auto nb = grid.neighbors(i);
        const int lo = active(mask, nb[2 * axis]) ? nb[2 * axis] : -1;
        const int hi = active(mask, nb[2 * axis + 1]) ? nb[2 * axis + 1] : -1;
        if (lo >= 0 && hi >= 0) return (f[hi] - 2.0 * f[i] + f[lo]) / h2;
        if (hi >= 0) {
            const int hh0 = grid.neighbors(hi)[2 * axis + 1];
            const int hh = active(mask, hh0) ? hh0 : -1;
            if (hh >= 0) return (f[hh] - 2.0 * f[hi] + f[i]) / h2;
        }
        if (lo >= 0) {
            const int ll0 = grid.neighbors(lo)[2 * axis];
            const int ll = active(mask, ll0) ? ll0 : -1;
            if (ll >= 0) return (f[i] - 2.0 * f[lo] + f[ll]) / h2;
        }
        return 0.0;
    };
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!active(mask, static_cast<int>(i))) continue;
        const int ii = static_cast<int>(i);
        out[i].xx = second(ii, 0);
        if (grid.dim == 2) {
            out[i].yy = second(ii, 1);
            const auto nb = grid.neighbors(ii);
            const int xm = active(mask, nb[0]) ? nb[0] : -1;
            const int xp = active(mask, nb[1]) ? nb[1] : -1;
            if (xm >= 0 && xp >= 0) {
                const auto nm = grid.neighbors(xm);
                const auto np = grid.neighbors(xp);
                const int a = active(mask, np[3]) ? np[3] : -1;
                const int b = active(mask, np[2]) ? np[2] : -1;
                const int c = active(mask, nm[3]) ? nm[3] : -1;
                const int d = active(mask, nm[2]) ? nm[2] : -1;
                if (a >= 0 && b >= 0 && c >= 0 && d >= 0)
                    out[i].xy = (f[a] - f[b] - f[c] + f[d]) / (4.0 * h2);
            }
        }
    }
    return out;
}

namespace {

HolderBreakdown holder_impl(const DomainGrid& grid, const std::vector<double>& f, double alpha,
                            const std::vector<std::uint8_t>* mask, bool second_order) {
    HolderBreakdown hb;
    const auto grad = field_gradient(grid, f, mask);
    const auto hess = second_order ? field_hessian(grid, f, mask) : std::vector<Mat2>{};
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!active(mask, static_cast<int>(i))) continue;
        hb.sup = std::max(hb.sup, std::abs(f[i]));
        hb.grad_sup = std::max({hb.grad_sup, std::abs(grad[i].x), std::abs(grad[i].y)});
        if (second_order)
            hb.hess_sup = std::max({hb.hess_sup, std::abs(hess[i].xx), std::abs(hess[i].xy),
                                    std::abs(hess[i].yy)});
    }
    const auto ids = quotient_nodes(grid, mask);
    const double min_sep = 2.0 * grid.h;
    for (std::size_t a = 0; a < ids.size(); ++a) {
        for (std::size_t b = a + 1; b < ids.size(); ++b) {
            const int i = ids[a], j = ids[b];
            const double dx = grid.nodes[i].x - grid.nodes[j].x;
            const double dy = grid.nodes[i].y - grid.nodes[j].y;
            const double r = std::sqrt(dx * dx + dy * dy);
            if (r < min_sep) continue;
            const double denom = std::pow(r, alpha);
            double diff;
            if (second_order) {
                diff = std::max({std::abs(hess[i].xx - hess[j].xx), std::abs(hess[i].xy - hess[j].xy),
                                 std::abs(hess[i].yy - hess[j].yy)});
            } else {
                diff = std::max(std::abs(grad[i].x - grad[j].x), std::abs(grad[i].y - grad[j].y));
            }
            hb.quotient = std::max(hb.quotient, diff / denom);
        }
    }
    hb.total = hb.sup + hb.grad_sup + hb.hess_sup + hb.quotient;
    return hb;
}

}  // namespace

HolderBreakdown holder_norm_1a(const DomainGrid& grid, const std::vector<double>& f, double alpha,
                               const std::vector<std::uint8_t>* mask) {
    return holder_impl(grid, f, alpha, mask, false);
}

HolderBreakdown holder_norm_2a(const DomainGrid& grid, const std::vector<double>& f, double alpha,
                               const std::vector<std::uint8_t>* mask) {
    return holder_impl(grid, f, alpha, mask, true);
}

double lp_norm_spacetime(const DomainGrid& grid, const std::vector<std::vector<double>>& flow,
                         double dt, double p, const std::vector<std::uint8_t>* mask) {
    double acc = 0.0;
    for (const auto& f : flow) {
        if (f.size() != grid.size()) throw ValidationError("lp_norm_spacetime: size mismatch");
        double slice = 0.0;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (!active(mask, static_cast<int>(i))) continue;
            slice += std::pow(std::abs(f[i]), p) * grid.quad_weights[i];
        }
        acc += dt * slice;
    }
    return std::pow(acc, 1.0 / p);
}

double sup_norm(const std::vector<double>& f) {
    double m = 0.0;
    for (double v : f) m = std::max(m, std::abs(v));
    return m;
}

double sup_norm_masked(const std::vector<double>& f, const std::vector<std::uint8_t>& mask) {
    double m = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i)
        if (mask[i]) m = std::max(m, std::abs(f[i]));
    return m;
}

}  // namespace mfg
