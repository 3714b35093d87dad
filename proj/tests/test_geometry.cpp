#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mfg/geometry.hpp"
#include "mfg/rng.hpp"

using namespace mfg;

namespace {

constexpr double kPi = 3.14159265358979323846;

// independent area oracle: fraction of a fine subgrid of cell (ix,iy) whose
// points fall inside the disk of radius R
double cell_area_oracle(const DomainGrid& g, int ix, int iy, double R) {
    const int sub = 256;
    const double cx0 = g.x0 + ix * g.h, cy0 = g.y0 + iy * g.h;
    const double step = g.h / sub;
    long hits = 0;
    for (int a = 0; a < sub; ++a) {
        const double x = cx0 + (a + 0.5) * step;
        const double xx = x * x;
        if (xx > R * R) continue;
        // count b with (cy0 + (b+.5)step)^2 <= R^2 - x^2 by direct bounds
        const double ylim = std::sqrt(R * R - xx);
        const double blo = (-ylim - cy0) / step - 0.5, bhi = (ylim - cy0) / step - 0.5;
        const long lo = std::max(0L, static_cast<long>(std::ceil(blo)));
        const long hi = std::min(static_cast<long>(sub - 1), static_cast<long>(std::floor(bhi)));
        if (hi >= lo) hits += hi - lo + 1;
    }
    return static_cast<double>(hits) * step * step;
}

double second_diff_max(const DomainGrid& g, const std::vector<double>& f) {
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto nb = g.neighbors(static_cast<int>(i));
        if (nb[0] >= 0 && nb[1] >= 0)
            worst = std::max(worst,
                             std::abs(f[nb[0]] - 2.0 * f[i] + f[nb[1]]) / (g.h * g.h));
    }
    return worst;
}

}  // namespace

TEST_CASE("interval domain: lattice, weights, exact distance zone") {
    const double L = 1.0;
    const int n = 96;
    DomainGrid g = build_interval_domain(L, n);
    CHECK(g.dim == 1);
    CHECK(g.size() == static_cast<std::size_t>(n));
    CHECK(g.volume == doctest::Approx(L).epsilon(1e-14));
    CHECK(g.diameter == doctest::Approx(L).epsilon(1e-14));

    double wsum = 0.0;
    for (double w : g.quad_weights) wsum += w;
    CHECK(wsum == doctest::Approx(L).epsilon(1e-12));

    for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = g.nodes[i].x;
        CHECK(x == doctest::Approx((i + 0.5) * g.h).epsilon(1e-14));
        const double exact = std::min(x, L - x);
        if (exact <= g.collar.eps0)
            CHECK(g.dist[i] == doctest::Approx(exact).epsilon(1e-14));
        else
            CHECK(g.dist[i] >= g.collar.eps0 - 1e-14);  // blend only grows past eps0
    }
}

TEST_CASE("interval distance blend stays C2 under refinement") {
    // a kink in the first derivative would make the max second difference
    // grow like 1/h; a C2 field keeps it bounded
    DomainGrid g1 = build_interval_domain(1.0, 64);
    DomainGrid g2 = build_interval_domain(1.0, 128);
    DomainGrid g3 = build_interval_domain(1.0, 256);
    const double m1 = second_diff_max(g1, g1.dist);
    const double m2 = second_diff_max(g2, g2.dist);
    const double m3 = second_diff_max(g3, g3.dist);
    CHECK(m2 <= m1 * 1.5 + 1e-9);
    CHECK(m3 <= m2 * 1.5 + 1e-9);
}

TEST_CASE("interval masks follow the eps levels and nest") {
    DomainGrid g = build_interval_domain(1.0, 96);
    REQUIRE(g.eps_levels.size() == 4);
    CHECK(g.eps_levels[0] == doctest::Approx(g.collar.eps0 / 3.0));
    CHECK(g.eps_levels[3] == doctest::Approx(g.collar.eps0 / 24.0));
    for (std::size_t lv = 0; lv + 1 < g.eps_levels.size(); ++lv)
        CHECK(g.eps_levels[lv] > g.eps_levels[lv + 1]);

    for (std::size_t lv = 0; lv < g.eps_levels.size(); ++lv) {
        const auto& mk = g.mask(lv);
        for (std::size_t i = 0; i < g.size(); ++i)
            CHECK(static_cast<bool>(mk[i]) == (g.dist[i] > g.eps_levels[lv]));
        if (lv > 0)
            for (std::size_t i = 0; i < g.size(); ++i)
                if (g.mask(lv - 1)[i]) CHECK(mk[i]);  // smaller eps keeps more nodes
    }

    // boundary nodes: inside the mask with a neighbor outside, and complete
    const int dirs = 2 * g.dim;
    for (std::size_t lv = 0; lv < g.eps_levels.size(); ++lv) {
        const auto& mk = g.mask(lv);
        const auto bnodes = g.mask_boundary_nodes(lv);
        std::vector<bool> is_b(g.size(), false);
        for (int b : bnodes) {
            is_b[b] = true;
            CHECK(mk[b]);
            bool outside_nb = false;
            for (int d = 0; d < dirs; ++d) {
                const int nb = g.neighbors(b)[d];
                if (nb < 0 || !mk[nb]) outside_nb = true;
            }
            CHECK(outside_nb);
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!mk[i] || is_b[i]) continue;
            for (int d = 0; d < dirs; ++d) {
                const int nb = g.neighbors(static_cast<int>(i))[d];
                CHECK((nb >= 0 && mk[nb]));
            }
        }
    }
}

TEST_CASE("disk domain: exact quadrature against subgrid oracle") {
    const double R = 1.0;
    const int n = 32;
    DomainGrid g = build_disk_domain(R, n);
    CHECK(g.dim == 2);
    CHECK(g.volume == doctest::Approx(kPi * R * R).epsilon(1e-14));
    CHECK(g.diameter == doctest::Approx(2.0 * R).epsilon(1e-14));

    double wsum = 0.0;
    for (double w : g.quad_weights) wsum += w;
    CHECK(std::abs(wsum - kPi * R * R) <= 1e-6 * kPi * R * R);

    // per-cell areas: nodes own at least their cell's intersection (sliver
    // merging only adds), and deep interior cells are exactly full
    const double h2 = g.h * g.h;
    double oracle_total = 0.0;
    for (int iy = 0; iy < g.ny; ++iy)
        for (int ix = 0; ix < g.nx; ++ix) oracle_total += cell_area_oracle(g, ix, iy, R);
    CHECK(std::abs(oracle_total - kPi * R * R) <= 5e-3);  // validates the oracle itself

    double owned = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const int c = g.cell_of_node[i];
        const double own = cell_area_oracle(g, c % g.nx, c / g.nx, R);
        owned += own;
        CHECK(g.quad_weights[i] >= own - 0.02 * h2);
        const double r = std::sqrt(sqr(g.nodes[i].x) + sqr(g.nodes[i].y));
        if (r < R - 2.0 * g.h) CHECK(std::abs(g.quad_weights[i] - h2) <= 1e-10);
    }
    CHECK(owned <= wsum + 5e-3);  // the rest of the oracle mass is merged slivers
}

TEST_CASE("disk distance field and normals near the boundary") {
    const double R = 1.0;
    DomainGrid g = build_disk_domain(R, 48);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double r = std::sqrt(sqr(g.nodes[i].x) + sqr(g.nodes[i].y));
        const double exact = R - r;
        if (exact <= g.collar.eps0) CHECK(g.dist[i] == doctest::Approx(exact).epsilon(1e-13));
        if (g.dist[i] < g.collar.eps0 && g.dist[i] > 2.0 * g.h && r > 1e-12) {
            // grad dist ~ -x/r, unit outward normal ~ x/r
            CHECK(std::abs(g.grad_dist[i].x + g.nodes[i].x / r) < 0.08);
            CHECK(std::abs(g.grad_dist[i].y + g.nodes[i].y / r) < 0.08);
            const Vec2 nrm = g.normal[i];
            CHECK(dot(nrm, {g.nodes[i].x / r, g.nodes[i].y / r}) ==
                  doctest::Approx(1.0).epsilon(0.02));
            // Hessian trace of R - r is -1/r
            const double tr = g.hess_dist[i].xx + g.hess_dist[i].yy;
            CHECK(std::abs(tr + 1.0 / r) < 0.3);
        }
    }
}

TEST_CASE("extension ramp: odd C2 cutoff with unit slope at zero") {
    const double w = 0.25;
    CHECK(extension_ramp(0.0, w) == 0.0);
    CHECK(extension_ramp(w, w) == 0.0);
    CHECK(extension_ramp(-w, w) == 0.0);
    CHECK(extension_ramp(1.5 * w, w) == 0.0);
    for (double s : {0.01, 0.07, 0.2, 0.24}) {
        CHECK(extension_ramp(-s, w) == doctest::Approx(-extension_ramp(s, w)).epsilon(1e-14));
        const double fd =
            (extension_ramp(s + 1e-6, w) - extension_ramp(s - 1e-6, w)) / 2e-6;
        CHECK(extension_ramp_deriv(s, w) == doctest::Approx(fd).epsilon(1e-6));
    }
    CHECK(extension_ramp_deriv(0.0, w) == doctest::Approx(1.0).epsilon(1e-13));
    // C2 closure at the support edge: value, slope and curvature all vanish
    const double d = 1e-4;
    CHECK(std::abs(extension_ramp(w - d, w)) < 1e-9);
    CHECK(std::abs(extension_ramp_deriv(w - d, w)) < 1e-5);
    CHECK(std::abs(extension_ramp_deriv(w - d, w) - extension_ramp_deriv(w - 2 * d, w)) <
          150.0 * d * d / (w * w));
    // near zero the slope deviates only quadratically
    CHECK(std::abs(extension_ramp_deriv(0.02 * w, w) - 1.0) < 10.0 * sqr(0.02));
}

TEST_CASE("neumann extension matches prescribed co-normal data") {
    const double L = 1.0;
    const int n = 192;
    DomainGrid g = build_interval_domain(L, n);
    const std::size_t level = 1;
    const auto bnodes = g.mask_boundary_nodes(level);
    REQUIRE(bnodes.size() == 2);

    auto fdata = [](Vec2 p) { return 0.7 + 0.4 * std::sin(3.0 * p.x); };
    std::vector<double> f, ann;
    for (int b : bnodes) {
        f.push_back(fdata(g.nodes[b]));
        ann.push_back(1.0);  // identity diffusion
    }
    const auto ext = neumann_extension(g, level, f, ann);
    REQUIRE(ext.size() == g.size());

    // support is confined to one collar width around the level set
    for (std::size_t i = 0; i < g.size(); ++i)
        if (std::abs(g.dist[i] - g.eps_levels[level]) >= g.collar.eps0)
            CHECK(ext[i] == 0.0);

    // discrete co-normal derivative at the subdomain boundary nodes: the
    // outward normal of {dist > eps} points along -grad dist
    for (std::size_t k = 0; k < bnodes.size(); ++k) {
        const int b = bnodes[k];
        const auto nb = g.neighbors(b);
        REQUIRE(nb[0] >= 0);
        REQUIRE(nb[1] >= 0);
        const double dg = (ext[nb[1]] - ext[nb[0]]) / (2.0 * g.h);
        const double conormal = dg * (-g.grad_dist[b].x);
        CHECK(std::abs(conormal - f[k]) <= 10.0 * g.h);
    }

    // dividing by the co-normal coefficient restores the prescribed data
    std::vector<double> ann2 = {2.5, 2.5};
    const auto ext2 = neumann_extension(g, level, f, ann2);
    for (std::size_t k = 0; k < bnodes.size(); ++k) {
        const int b = bnodes[k];
        const auto nb = g.neighbors(b);
        const double dg = (ext2[nb[1]] - ext2[nb[0]]) / (2.0 * g.h);
        const double conormal = 2.5 * dg * (-g.grad_dist[b].x);
        CHECK(std::abs(conormal - f[k]) <= 10.0 * g.h);
    }
}

TEST_CASE("neumann extension co-normal accuracy improves with resolution") {
    const double L = 1.0;
    const std::size_t level = 1;
    auto fdata = [](Vec2 p) { return 0.7 + 0.4 * std::sin(3.0 * p.x); };
    std::vector<double> errs;
    std::vector<double> hs;
    for (int n : {96, 192, 384}) {
        DomainGrid g = build_interval_domain(L, n);
        const auto bnodes = g.mask_boundary_nodes(level);
        std::vector<double> f, ann;
        for (int b : bnodes) {
            f.push_back(fdata(g.nodes[b]));
            ann.push_back(1.0);
        }
        const auto ext = neumann_extension(g, level, f, ann);
        double worst = 0.0;
        for (std::size_t k = 0; k < bnodes.size(); ++k) {
            const int b = bnodes[k];
            const auto nb = g.neighbors(b);
            const double dg = (ext[nb[1]] - ext[nb[0]]) / (2.0 * g.h);
            const double conormal = dg * (-g.grad_dist[b].x);
            worst = std::max(worst, std::abs(conormal - f[k]));
        }
        errs.push_back(worst);
        hs.push_back(g.h);
        CHECK(worst <= 10.0 * g.h);
    }
    CHECK(errs[2] <= errs[0] + 1e-12);
}

TEST_CASE("invariance condition holds for the adapted model and fails for uniform diffusion") {
    const double L = 1.0, nu0 = 0.35, kappa = 0.8, ell = 0.15;
    DomainGrid g = build_interval_domain(L, 128);

    auto dist_at = [&](Vec2 p) { return std::min(p.x, L - p.x); };
    auto s_prof = [&](double d) { return ell * std::tanh(d / ell); };
    auto a_adapted = [&](Vec2 p) {
        const double s = s_prof(dist_at(p));
        return Mat2{nu0 * s * s, 0.0, nu0 * s * s};
    };
    auto Hp = [&](Vec2 p, Vec2 q) {
        const double sh = 0.2 * std::tanh(dist_at(p) / 0.2);
        return Vec2{kappa * sh * std::tanh(q.x), 0.0};
    };
    std::vector<Vec2> ps;
    for (double v : {-5.0, -1.0, -0.2, 0.0, 0.2, 1.0, 5.0}) ps.push_back({v, 0.0});

    const auto rep = check_invariance_condition(g, a_adapted, Hp, ps, kappa + nu0 + 0.5);
    CHECK(rep.holds);
    CHECK(rep.min_slack > 0.0);
    CHECK(rep.nodes_checked > 0);
    CHECK(rep.node_slack.size() == static_cast<std::size_t>(rep.nodes_checked));
    double mn = rep.node_slack[0];
    for (double v : rep.node_slack) mn = std::min(mn, v);
    CHECK(mn == doctest::Approx(rep.min_slack));

    auto a_flat = [&](Vec2) { return Mat2{nu0, 0.0, nu0}; };
    const auto bad = check_invariance_condition(g, a_flat, Hp, ps, kappa + nu0 + 0.5);
    CHECK_FALSE(bad.holds);
    CHECK(bad.min_slack < 0.0);
    CHECK(bad.worst_node >= 0);
    CHECK(g.dist[bad.worst_node] < 3.0 * g.h);  // blow-up concentrates at the boundary
}

TEST_CASE("invariance condition holds on the disk for the adapted model") {
    const double R = 1.0, nu0 = 0.35, kappa = 0.8, ell = 0.15;
    DomainGrid g = build_disk_domain(R, 64);
    auto s_prof = [&](double d) { return ell * std::tanh(d / ell); };
    auto dist_at = [&](Vec2 p) { return R - std::sqrt(p.x * p.x + p.y * p.y); };
    auto a_adapted = [&](Vec2 p) {
        const double s = s_prof(std::max(0.0, dist_at(p)));
        return Mat2{nu0 * s * s, 0.0, nu0 * s * s};
    };
    auto Hp = [&](Vec2 p, Vec2 q) {
        const double sh = 0.2 * std::tanh(std::max(0.0, dist_at(p)) / 0.2);
        return Vec2{kappa * sh * std::tanh(q.x), kappa * sh * std::tanh(q.y)};
    };
    std::vector<Vec2> ps = {{0, 0}, {1, 0}, {0, 1}, {-1, -1}, {4, -3}, {-4, 3}};
    const auto rep = check_invariance_condition(g, a_adapted, Hp, ps, kappa + 2.5 * nu0 + 1.0);
    CHECK(rep.holds);
}

TEST_CASE("interpolation reproduces linear fields and nearest node is nearest") {
    DomainGrid g = build_interval_domain(1.0, 64);
    std::vector<double> lin(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) lin[i] = 2.0 + 3.0 * g.nodes[i].x;
    CounterRng r(5);
    for (int k = 0; k < 40; ++k) {
        const double x = 0.02 + 0.96 * r.uniform();
        CHECK(g.interpolate(lin, {x, 0.0}) == doctest::Approx(2.0 + 3.0 * x).epsilon(1e-12));
        const int nn = g.nearest_node({x, 0.0});
        double best = 1e30;
        int bid = -1;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double d = std::abs(g.nodes[i].x - x);
            if (d < best) { best = d; bid = static_cast<int>(i); }
        }
        CHECK(std::abs(g.nodes[nn].x - x) <= std::abs(g.nodes[bid].x - x) + 1e-14);
    }

    DomainGrid gd = build_disk_domain(1.0, 32);
    std::vector<double> lin2(gd.size());
    for (std::size_t i = 0; i < gd.size(); ++i)
        lin2[i] = 1.0 + 0.5 * gd.nodes[i].x - 0.25 * gd.nodes[i].y;
    for (int k = 0; k < 40; ++k) {
        const double ang = 6.283185307179586 * r.uniform();
        const double rad = 0.7 * std::sqrt(r.uniform());
        const Vec2 p{rad * std::cos(ang), rad * std::sin(ang)};
        CHECK(gd.interpolate(lin2, p) ==
              doctest::Approx(1.0 + 0.5 * p.x - 0.25 * p.y).epsilon(1e-10));
    }
}
