#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "doctest.h"
#include "mfg/linalg.hpp"
#include "mfg/linearized.hpp"
#include "mfg/measures.hpp"
#include "mfg/norms.hpp"
#include "mfg/operators.hpp"
#include "mfg/rng.hpp"

using namespace mfg;

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

MeasureField compact_bump(const DomainGrid& g, double c, double w) {
    return probability_from_density(g, [=](Vec2 p) {
        const double s = std::abs(p.x - c) / w;
        return s >= 1.0 ? 0.0 : (1.0 - s * s) * (1.0 - s * s) * (1.0 - s * s);
    });
}

MeasureField random_bump(const DomainGrid& g, CounterRng& rng) {
    const double c = 0.35 + 0.3 * rng.uniform();
    const double w = 0.10 + 0.12 * rng.uniform();
    return compact_bump(g, c, w);
}

// Signed field with zero total mass, the admissible data class for the
// linear response.
MeasureField bump_difference(const DomainGrid& g, CounterRng& rng) {
    const MeasureField a = random_bump(g, rng);
    const MeasureField b = random_bump(g, rng);
    MeasureField d = a;
    for (std::size_t i = 0; i < g.size(); ++i) d.density[i] = a.density[i] - b.density[i];
    return d;
}

// Direct backward march for the value response when the couplings carry no
// measure dependence: implicit steps of the frozen-slope transport operator
// plus the running source. Assembled from the operator primitives only, so
// it exercises none of the linear-response code.
std::vector<std::vector<double>> backward_transport_march(const DomainGrid& g,
                                                          const ModelSpec& model,
                                                          const MFGSolution& base,
                                                          const ScalarSource& h) {
    const std::size_t lvl = g.eps_levels.size() - 1;
    MaskOperator op = make_mask_skeleton(g, lvl, model);
    const std::size_t nt = base.u.frames.size() - 1;
    std::vector<std::vector<double>> v(nt + 1, std::vector<double>(op.size(), 0.0));
    for (std::size_t n = nt; n-- > 0;) {
        assemble_operator(op, model, face_slopes_from_field(op, base.u.frames[n]));
        const SpMat M = shifted_identity(op.transport, -base.m.dt);
        std::vector<double> rhs(op.size());
        const double t = base.u.t0 + base.u.dt * static_cast<double>(n);
        for (std::size_t j = 0; j < op.size(); ++j)
            rhs[j] = v[n + 1][j] + base.m.dt * h(t, g.nodes[op.nodes[j]]);
        v[n] = solve_sparse(M, rhs);
    }
    return v;
}

// Interval model whose data are all even under x -> L - x; the shipped
// terminal base profile is odd under the flip, so it is replaced by a
// full-period cosine while the crowd-aversion coupling stays unchanged.
ModelSpec mirror_symmetric_model() {
    ModelSpec model = make_invariant_model_1d();
    const ModelParams par{};
    const double L = 1.0;
    model.G = [par, L](Vec2 x, const MeasureField& m) {
        auto psi = [L](Vec2 p) { return 0.5 * (1.0 - std::cos(2.0 * kPi * p.x / L)); };
        double c = 0.0;
        for (std::size_t i = 0; i < m.grid->size(); ++i)
            c += psi(m.grid->nodes[i]) * m.density[i] * m.grid->quad_weights[i];
        return 0.5 * std::cos(2.0 * kPi * x.x / L) + par.c_G * psi(x) * c;
    };
    return model;
}

ModelSpec pure_diffusion_model() {
    ModelSpec model = make_decoupled_model_1d();
    model.H = [](Vec2, Vec2) { return 0.0; };
    model.Hp = [](Vec2, Vec2) { return Vec2{0.0, 0.0}; };
    model.Hpp = [](Vec2, Vec2) { return Mat2{0.0, 0.0, 0.0}; };
    return model;
}

std::vector<int> mask_nodes(const DomainGrid& g) {
    const auto& mask = g.mask(g.eps_levels.size() - 1);
    std::vector<int> ys;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (mask[i]) ys.push_back(static_cast<int>(i));
    return ys;
}

MFGSolution wrap_level(const DomainGrid& g, const LevelSolution& lev) {
    MFGSolution base;
    base.u = lev.u;
    base.m = lev.m;
    base.eps_used = g.eps_levels;
    return base;
}

// One shared coupled run plus its full response kernel, reused by the
// linearity, representation, and regularity checks.
struct SharedRun {
    DomainGrid grid;
    ModelSpec model;
    MeasureField m0;
    SolverConfig cfg;
    MFGSolution base;
    std::vector<int> ys;
    MeasureDerivative deriv;

    SharedRun()
        : grid(build_interval_domain(1.0, 96)),
          model(make_invariant_model_1d()),
          m0(compact_bump(grid, 0.45, 0.2)) {
        cfg.dt = 0.01;
        cfg.horizon = 0.4;
        base = solve_mfg(grid, model, 0.0, m0, cfg);
        ys = mask_nodes(grid);
        deriv = compute_K(grid, model, base, 0.0, ys, cfg);
    }
};

const SharedRun& shared() {
    static SharedRun run;
    return run;
}

}  // namespace

TEST_CASE("zero data produces the zero response") {
    const SharedRun& s = shared();
    const MeasureField zero{&s.grid, std::vector<double>(s.grid.size(), 0.0)};
    const auto sol = solve_linearized(s.grid, s.model, s.base, zero, {}, {}, {}, s.cfg);
    CHECK(sol.picard_iters == 1);
    for (const auto& f : sol.v.frames)
        for (double v : f) CHECK(v == 0.0);
    for (const auto& f : sol.mu.frames)
        for (double v : f.density) CHECK(v == 0.0);
}

TEST_CASE("response doubles bitwise with the data") {
    const SharedRun& s = shared();
    CounterRng rng(7);
    const MeasureField mu0 = bump_difference(s.grid, rng);
    MeasureField mu0x2 = mu0;
    for (double& v : mu0x2.density) v *= 2.0;
    const auto one = solve_linearized(s.grid, s.model, s.base, mu0, {}, {}, {}, s.cfg);
    const auto two = solve_linearized(s.grid, s.model, s.base, mu0x2, {}, {}, {}, s.cfg);
    REQUIRE(one.v.frames.size() == two.v.frames.size());
    for (std::size_t n = 0; n < one.v.frames.size(); ++n)
        for (std::size_t i = 0; i < s.grid.size(); ++i) {
            CHECK(2.0 * one.v.frames[n][i] == two.v.frames[n][i]);
            CHECK(2.0 * one.mu.frames[n].density[i] == two.mu.frames[n].density[i]);
        }
}

TEST_CASE("responses to separate data superpose") {
    const SharedRun& s = shared();
    const DomainGrid& g = s.grid;
    SolverConfig tight = s.cfg;
    tight.picard_tol = 1e-13;

    CounterRng rng(7);
    const MeasureField mua = bump_difference(g, rng);
    (void)bump_difference(g, rng);
    const MeasureField mub = bump_difference(g, rng);
    const ScalarSource ha = [](double t, Vec2 x) {
        return 0.3 * std::sin(2.0 * kPi * x.x) * (1.0 + t);
    };
    const VectorSource cb = [](double t, Vec2 x) {
        return Vec2{0.2 * std::cos(2.0 * kPi * x.x) * (1.0 - t), 0.0};
    };
    std::vector<double> vTa(g.size()), vTb(g.size()), vTs(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        vTa[i] = 0.2 * std::cos(kPi * g.nodes[i].x);
        vTb[i] = 0.1 * std::sin(2.0 * kPi * g.nodes[i].x);
        vTs[i] = vTa[i] + vTb[i];
    }
    MeasureField musum = mua;
    for (std::size_t i = 0; i < g.size(); ++i) musum.density[i] += mub.density[i];

    const auto A = solve_linearized(g, s.model, s.base, mua, ha, {}, vTa, tight);
    const auto B = solve_linearized(g, s.model, s.base, mub, {}, cb, vTb, tight);
    const auto AB = solve_linearized(g, s.model, s.base, musum, ha, cb, vTs, tight);
    double gap = 0.0;
    for (std::size_t n = 0; n < AB.v.frames.size(); ++n)
        for (std::size_t i = 0; i < g.size(); ++i) {
            gap = std::max(gap, std::abs(A.v.frames[n][i] + B.v.frames[n][i] - AB.v.frames[n][i]));
            gap = std::max(gap, std::abs(A.mu.frames[n].density[i] + B.mu.frames[n].density[i] -
                                         AB.mu.frames[n].density[i]));
        }
    CHECK(gap <= 1e-10);

    // logged pieces of the stability estimate come out finite and nonzero
    CHECK(A.norm_v > 0.0);
    CHECK(A.norm_mu_lp > 0.0);
    CHECK(A.norm_mu_dual > 0.0);
    CHECK(A.data_magnitude > 0.0);
    CHECK(A.estimate_ratio > 0.0);
    CHECK(A.estimate_ratio < 1e4);
    CHECK(std::isfinite(A.norm_v));
    CHECK(std::isfinite(A.estimate_ratio));

    // the terminal frame equals the flux-corrected terminal data, rebuilt
    // here from the coupling kernel and the correction primitive directly
    const std::size_t lvl = g.eps_levels.size() - 1;
    const auto& mask = g.mask(lvl);
    const MaskOperator skel = make_mask_skeleton(g, lvl, s.model);
    const MeasureField& mT = s.base.m.frames.back();
    const MeasureField& muT = A.mu.frames.back();
    std::vector<double> pair(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < skel.size(); ++j) {
            const int y = skel.nodes[j];
            acc += s.model.dG_dm(g.nodes[i], mT, g.nodes[y]) * skel.w[j] * muT.density[y];
        }
        pair[i] = acc + A.v_T[i];
    }
    const auto corr = conormal_flux_correction(g, lvl, s.model, pair);
    double tid = 0.0, raw = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!mask[i]) continue;
        tid = std::max(tid, std::abs(A.v.frames.back()[i] - (pair[i] - corr[i])));
        if (g.dist[i] >= g.eps_levels[lvl] + g.collar.eps0)
            raw = std::max(raw, std::abs(A.v.frames.back()[i] - pair[i]));
    }
    CHECK(tid <= 1e-12);
    CHECK(raw <= 1e-12);

    // signed mass of the measure response is conserved along the flow
    const double mass0 = A.mu.frames.front().mass();
    for (const auto& f : A.mu.frames) CHECK(std::abs(f.mass() - mass0) <= 1e-12);
}

TEST_CASE("decoupled response matches the direct transport march") {
    DomainGrid g = build_interval_domain(1.0, 96);
    const ModelSpec dec = make_decoupled_model_1d();
    SolverConfig cfg;
    cfg.dt = 0.01;
    cfg.horizon = 0.4;
    const MeasureField m0 = compact_bump(g, 0.45, 0.2);
    const MFGSolution base = solve_mfg(g, dec, 0.0, m0, cfg);
    const ScalarSource h = [](double t, Vec2 x) {
        return std::cos(2.0 * kPi * x.x) * (1.0 + 0.5 * t);
    };

    const auto oracle = backward_transport_march(g, dec, base, h);

    const MeasureField zero{&g, std::vector<double>(g.size(), 0.0)};
    const auto sol = solve_linearized(g, dec, base, zero, h, {}, {}, cfg);
    // without measure feedback the sweep settles after one corrective pass
    CHECK(sol.picard_iters == 2);
    REQUIRE(sol.residuals.size() == 2);
    CHECK(sol.residuals[1] == 0.0);

    const std::size_t lvl = g.eps_levels.size() - 1;
    const MaskOperator op = make_mask_skeleton(g, lvl, dec);
    double gap = 0.0;
    for (std::size_t n = 0; n < oracle.size(); ++n)
        for (std::size_t j = 0; j < op.size(); ++j)
            gap = std::max(gap, std::abs(oracle[n][j] - sol.v.frames[n][op.nodes[j]]));
    CHECK(gap <= 1e-9);

    // and the response kernel of a measure-independent model vanishes
    const std::vector<int> ys = {op.nodes[2], op.nodes[op.size() / 2], op.nodes[op.size() - 3]};
    const auto D = compute_K(g, dec, base, 0.0, ys, cfg);
    for (const auto& col : D.K)
        for (double v : col) CHECK(v == 0.0);
    for (const auto& col : D.DmK)
        for (double v : col) CHECK(v == 0.0);
}

TEST_CASE("kernel pairing reproduces direct solves") {
    const SharedRun& s = shared();
    const auto& mask = s.grid.mask(s.grid.eps_levels.size() - 1);
    CounterRng rng(11);
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
        const MeasureField mu0 = bump_difference(s.grid, rng);
        const auto direct = solve_linearized(s.grid, s.model, s.base, mu0, {}, {}, {}, s.cfg);
        const auto paired = kernel_apply(s.grid, s.deriv, mu0);
        double gap = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < s.grid.size(); ++i) {
            if (!mask[i]) continue;
            gap = std::max(gap, std::abs(direct.v.frames.front()[i] - paired[i]));
            scale = std::max(scale, std::abs(direct.v.frames.front()[i]));
        }
        REQUIRE(scale > 0.0);
        worst = std::max(worst, gap / scale);
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("two atom mixture pairs linearly against the kernel columns") {
    const SharedRun& s = shared();
    const DomainGrid& g = s.grid;
    const auto& mask = g.mask(g.eps_levels.size() - 1);
    const std::size_t ka = s.ys.size() / 3;
    const std::size_t kb = 2 * s.ys.size() / 3;
    EmpiricalConfig ea, eb;
    ea.points = {g.nodes[s.ys[ka]]};
    eb.points = {g.nodes[s.ys[kb]]};
    const MeasureField atom_a = empirical_measure(g, ea);
    const MeasureField atom_b = empirical_measure(g, eb);
    MeasureField mix{&g, std::vector<double>(g.size())};
    for (std::size_t i = 0; i < g.size(); ++i)
        mix.density[i] = 0.7 * atom_a.density[i] + 0.3 * atom_b.density[i];
    const auto direct = solve_linearized(g, s.model, s.base, mix, {}, {}, {}, s.cfg);
    double gap = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!mask[i]) continue;
        gap = std::max(gap, std::abs(direct.v.frames.front()[i] - 0.7 * s.deriv.K[ka][i] -
                                     0.3 * s.deriv.K[kb][i]));
    }
    CHECK(gap <= 1e-6);
}

TEST_CASE("kernel derivative matches difference quotients of the columns") {
    const SharedRun& s = shared();
    REQUIRE(s.deriv.DmK.size() == s.deriv.K.size());
    const std::size_t k = s.ys.size() / 2;
    const int probe = s.ys[10];
    const double fd = (s.deriv.K[k + 1][probe] - s.deriv.K[k - 1][probe]) /
                      (s.grid.nodes[s.ys[k + 1]].x - s.grid.nodes[s.ys[k - 1]].x);
    CHECK(std::abs(s.deriv.DmK[k][probe] - fd) <= 1e-12);
}

TEST_CASE("kernel inherits the mirror symmetry of an even model") {
    const double L = 1.0;
    const ModelSpec model = mirror_symmetric_model();
    SolverConfig cfg;
    cfg.dt = 0.01;
    cfg.horizon = 0.4;
    DomainGrid g = build_interval_domain(L, 64);
    const MeasureField m0 = compact_bump(g, 0.5, 0.2);
    const MFGSolution base = solve_mfg(g, model, 0.0, m0, cfg);

    double base_gap = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t mi = g.size() - 1 - i;
        base_gap = std::max(base_gap, std::abs(base.u.frames.front()[i] - base.u.frames.front()[mi]));
        base_gap = std::max(base_gap,
                            std::abs(base.m.frames.back().density[i] - base.m.frames.back().density[mi]));
    }
    CHECK(base_gap <= 1e-11);

    const std::vector<int> ys = mask_nodes(g);
    const auto& mask = g.mask(g.eps_levels.size() - 1);
    const auto D = compute_K(g, model, base, 0.0, ys, cfg);
    double gap = 0.0;
    for (std::size_t k = 0; k < ys.size(); ++k) {
        const int my = static_cast<int>(g.size()) - 1 - ys[k];
        const auto it = std::find(ys.begin(), ys.end(), my);
        if (it == ys.end()) continue;
        const std::size_t mk = static_cast<std::size_t>(it - ys.begin());
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!mask[i]) continue;
            const std::size_t mi = g.size() - 1 - i;
            gap = std::max(gap, std::abs(D.K[k][i] - D.K[mk][mi]));
        }
    }
    CHECK(gap <= 1e-9);
}

TEST_CASE("value map hits the terminal condition at the horizon") {
    const SharedRun& s = shared();
    const double g1 = evaluate_U(s.grid, s.model, s.cfg.horizon, {0.5, 0.0}, s.m0, s.cfg);
    CHECK(g1 == s.model.G({0.5, 0.0}, s.m0));
    const double g2 = evaluate_U(s.grid, s.model, s.cfg.horizon, {0.31, 0.0}, s.m0, s.cfg);
    CHECK(g2 == s.model.G({0.31, 0.0}, s.m0));
}

TEST_CASE("value map ignores the measure argument when the couplings do") {
    DomainGrid g = build_interval_domain(1.0, 64);
    const ModelSpec dec = make_decoupled_model_1d();
    SolverConfig cfg;
    cfg.dt = 0.01;
    cfg.horizon = 0.4;
    const MeasureField a = compact_bump(g, 0.45, 0.2);
    const MeasureField b = compact_bump(g, 0.55, 0.15);
    const double ua = evaluate_U(g, dec, 0.1, {0.5, 0.0}, a, cfg);
    const double ub = evaluate_U(g, dec, 0.1, {0.5, 0.0}, b, cfg);
    CHECK(std::abs(ua - ub) <= 1e-12);
}

TEST_CASE("value map lipschitz constant in the measure is stable under refinement") {
    SolverConfig cfg;
    cfg.dt = 0.01;
    cfg.horizon = 0.4;
    const ModelSpec model = make_invariant_model_1d();
    double c_coarse = 0.0, c_fine = 0.0;
    for (int n : {64, 128}) {
        DomainGrid g = build_interval_domain(1.0, n);
        const MeasureField a = compact_bump(g, 0.45, 0.2);
        const MeasureField b = compact_bump(g, 0.52, 0.17);
        const double d = wasserstein1(a, b);
        REQUIRE(d > 0.0);
        double gap = 0.0;
        for (double xq : {0.3, 0.5, 0.7}) {
            const double ua = evaluate_U(g, model, 0.1, {xq, 0.0}, a, cfg);
            const double ub = evaluate_U(g, model, 0.1, {xq, 0.0}, b, cfg);
            gap = std::max(gap, std::abs(ua - ub));
        }
        (n == 64 ? c_coarse : c_fine) = gap / d;
    }
    CHECK(c_coarse > 0.0);
    CHECK(std::isfinite(c_coarse));
    CHECK(std::abs(c_fine / c_coarse - 1.0) <= 0.25);
}

TEST_CASE("value map approaches the terminal data linearly near the horizon") {
    DomainGrid g = build_interval_domain(1.0, 64);
    const ModelSpec model = make_invariant_model_1d();
    SolverConfig cfg;
    cfg.dt = 0.01;
    cfg.horizon = 0.4;
    const MeasureField m0 = compact_bump(g, 0.45, 0.2);
    double gap_far = 0.0, gap_near = 0.0;
    for (double back : {0.1, 0.05}) {
        double gap = 0.0;
        for (double xq : {0.35, 0.5, 0.65}) {
            const double u = evaluate_U(g, model, cfg.horizon - back, {xq, 0.0}, m0, cfg);
            gap = std::max(gap, std::abs(u - model.G({xq, 0.0}, m0)));
        }
        (back == 0.1 ? gap_far : gap_near) = gap;
        CHECK(gap <= back);
    }
    CHECK(gap_near / gap_far >= 0.35);
    CHECK(gap_near / gap_far <= 0.65);
}

TEST_CASE("expansion defect shrinks at second order in the step") {
    DomainGrid g = build_interval_domain(1.0, 96);
    const ModelSpec model = make_invariant_model_1d();
    SolverConfig cfg;
    cfg.dt = 0.01;
    cfg.horizon = 0.4;
    cfg.picard_tol = 1e-10;
    const MeasureField m0 = compact_bump(g, 0.5, 0.45);
    const MeasureField plus = compact_bump(g, 0.55, 0.12);
    const MeasureField minus = compact_bump(g, 0.42, 0.12);
    MeasureField dir = plus;
    for (std::size_t i = 0; i < g.size(); ++i)
        dir.density[i] = plus.density[i] - minus.density[i];

    const auto rep = second_order_expansion_check(g, model, 0.0, m0, dir, {0.04, 0.02, 0.01}, cfg);
    REQUIRE(rep.defects.size() == 3);
    CHECK(!rep.floor_limited);
    CHECK(rep.defects[0] > rep.defects[1]);
    CHECK(rep.defects[1] > rep.defects[2]);
    CHECK(rep.slope >= 1.8);
    CHECK(rep.slope <= 2.2);

    const auto at_zero = second_order_expansion_check(g, model, 0.0, m0, dir, {0.0}, cfg);
    REQUIRE(at_zero.defects.size() == 1);
    CHECK(at_zero.defects[0] == 0.0);
    CHECK(at_zero.floor_limited);

    MeasureField nodir = dir;
    for (double& v : nodir.density) v = 0.0;
    const auto flat = second_order_expansion_check(g, model, 0.0, m0, nodir, {0.04, 0.02}, cfg);
    for (double d : flat.defects) CHECK(d == 0.0);
    CHECK(flat.slope == 0.0);
    CHECK(flat.floor_limited);
}

TEST_CASE("master residual is small for pure diffusion") {
    DomainGrid g = build_interval_domain(1.0, 64);
    const ModelSpec heat = pure_diffusion_model();
    SolverConfig cfg;
    cfg.dt = 0.02;
    cfg.horizon = 0.4;
    const MeasureField m0 = compact_bump(g, 0.45, 0.2);
    const auto& mask = g.mask(g.eps_levels.size() - 1);
    std::vector<int> xs;
    for (std::size_t i = 0; i < g.size(); i += 12)
        if (mask[i]) xs.push_back(static_cast<int>(i));
    REQUIRE(xs.size() >= 4);
    const auto res = master_equation_residual(g, heat, 0.1, xs, m0, cfg);
    REQUIRE(res.residual.size() == xs.size());
    CHECK(res.dt_probe == 2.0 * cfg.dt);
    double sup = 0.0;
    for (double r : res.residual) sup = std::max(sup, std::abs(r));
    CHECK(sup <= 10.0 * (g.h + cfg.dt));
}

TEST_CASE("master residual decays under simultaneous refinement") {
    const ModelSpec model = make_invariant_model_1d();
    double coarse = 0.0, fine = 0.0;
    for (int n : {64, 128}) {
        DomainGrid g = build_interval_domain(1.0, n);
        SolverConfig cfg;
        cfg.dt = 1.28 / n;
        cfg.horizon = 0.4;
        const MeasureField m0 = compact_bump(g, 0.45, 0.2);
        const auto& mask = g.mask(g.eps_levels.size() - 1);
        std::vector<int> xs;
        for (std::size_t i = 0; i < g.size(); i += g.size() / 5)
            if (mask[i]) xs.push_back(static_cast<int>(i));
        const auto res = master_equation_residual(g, model, 0.1, xs, m0, cfg);
        double sup = 0.0;
        for (double r : res.residual) sup = std::max(sup, std::abs(r));
        (n == 64 ? coarse : fine) = sup;
    }
    CHECK(coarse / fine >= 1.8);
}

TEST_CASE("master residual stays bounded when assembled near the horizon") {
    DomainGrid g = build_interval_domain(1.0, 64);
    const ModelSpec model = make_invariant_model_1d();
    SolverConfig cfg;
    cfg.dt = 0.01;
    cfg.horizon = 0.4;
    const MeasureField m0 = compact_bump(g, 0.45, 0.2);
    const auto& mask = g.mask(g.eps_levels.size() - 1);
    std::vector<int> xs;
    for (std::size_t i = 0; i < g.size(); i += 12)
        if (mask[i]) xs.push_back(static_cast<int>(i));
    const auto res = master_equation_residual(g, model, cfg.horizon - 0.05, xs, m0, cfg);
    double sup = 0.0;
    for (double r : res.residual) sup = std::max(sup, std::abs(r));
    CHECK(sup <= 0.1);
}

TEST_CASE("measure flow driven by the solved value map closes the loop") {
    const SharedRun& s = shared();
    const MeasureFlow m2 = solve_fp_neumann(s.grid, s.grid.eps_levels.back(), s.model, s.base.u,
                                            s.m0, s.cfg);
    REQUIRE(m2.frames.size() == s.base.m.frames.size());
    double gap = 0.0;
    for (std::size_t n = 0; n < m2.frames.size(); ++n)
        gap = std::max(gap, wasserstein1(m2.frames[n], s.base.m.frames[n]));
    CHECK(gap <= 2.0 * s.cfg.picard_tol);
}

TEST_CASE("kernel lipschitz ratio in the base measure is finite and stable") {
    SolverConfig cfg;
    cfg.dt = 0.01;
    cfg.horizon = 0.4;
    const ModelSpec model = make_invariant_model_1d();
    double coarse = 0.0, fine = 0.0;
    for (int n : {48, 96}) {
        DomainGrid g = build_interval_domain(1.0, n);
        CounterRng rng(23);
        std::vector<std::pair<MeasureField, MeasureField>> pairs;
        for (int k = 0; k < 5; ++k) pairs.emplace_back(random_bump(g, rng), random_bump(g, rng));
        const MeasureField same = compact_bump(g, 0.5, 0.15);
        pairs.emplace_back(same, same);
        const auto rep = lipschitz_in_measure_of_K(g, model, 0.0, pairs, cfg);
        CHECK(rep.pairs_used == 5);
        CHECK(rep.pairs_skipped == 1);
        CHECK(rep.ratio > 0.0);
        CHECK(std::isfinite(rep.ratio));
        (n == 48 ? coarse : fine) = rep.ratio;
    }
    CHECK(std::abs(fine / coarse - 1.0) <= 0.30);
}

TEST_CASE("kernel stays regular across source positions under refinement") {
    SolverConfig cfg;
    cfg.dt = 0.01;
    cfg.horizon = 0.4;
    const ModelSpec model = make_invariant_model_1d();
    double norm_coarse = 0.0, norm_fine = 0.0;
    double ysec_coarse = 0.0, ysec_fine = 0.0;
    for (int n : {64, 128}) {
        DomainGrid g = build_interval_domain(1.0, n);
        const MeasureField m0 = compact_bump(g, 0.45, 0.2);
        const LevelSolution lev = solve_mfg_level(g, g.eps_levels.back(), model, 0.0, m0, cfg);
        const MFGSolution base = wrap_level(g, lev);
        const std::vector<int> ys = mask_nodes(g);
        const auto D = compute_K(g, model, base, 0.0, ys, cfg);
        const double nrm = kernel_surrogate_norm(g, D, model.alpha);

        const auto& inner = g.mask(g.eps_levels.size() - 2);
        double ysec = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!inner[i]) continue;
            for (std::size_t k = 1; k + 1 < ys.size(); ++k) {
                if (!inner[ys[k]]) continue;
                const double d2 =
                    (D.K[k + 1][i] - 2.0 * D.K[k][i] + D.K[k - 1][i]) / (g.h * g.h);
                ysec = std::max(ysec, std::abs(d2));
            }
        }
        if (n == 64) {
            norm_coarse = nrm;
            ysec_coarse = ysec;
        } else {
            norm_fine = nrm;
            ysec_fine = ysec;
        }
    }
    CHECK(norm_coarse > 0.0);
    CHECK(std::isfinite(norm_coarse));
    CHECK(std::abs(norm_fine / norm_coarse - 1.0) <= 0.30);
    CHECK(ysec_coarse <= 50.0);
    CHECK(ysec_fine <= 50.0);
    CHECK(ysec_fine / ysec_coarse <= 1.5);
}

TEST_CASE("invalid inputs are rejected before any solve") {
    const SharedRun& s = shared();
    CHECK_THROWS_AS((void)compute_K(s.grid, s.model, s.base, 0.1, s.ys, s.cfg), ValidationError);
    CHECK_THROWS_AS((void)compute_K(s.grid, s.model, s.base, 0.0, {0}, s.cfg), ValidationError);
    const std::vector<int> unsorted = {s.ys[3], s.ys[1]};
    CHECK_THROWS_AS((void)compute_K(s.grid, s.model, s.base, 0.0, unsorted, s.cfg),
                    ValidationError);
    CHECK_THROWS_AS((void)master_equation_residual(s.grid, s.model, 0.39, {s.ys[5]}, s.m0, s.cfg),
                    ValidationError);
    CHECK_THROWS_AS((void)master_equation_residual(s.grid, s.model, 0.1, {}, s.m0, s.cfg),
                    ValidationError);

    DomainGrid disk = build_disk_domain(0.5, 32);
    const ModelSpec md = make_invariant_model_disk();
    const MeasureField flat = probability_from_density(disk, [](Vec2) { return 1.0; });
    SolverConfig cd;
    cd.dt = 0.05;
    cd.horizon = 0.1;
    CHECK_THROWS_AS((void)master_equation_residual(disk, md, 0.0, {0}, flat, cd), ValidationError);

    SolverConfig one = s.cfg;
    one.max_iters = 1;
    one.picard_tol = 1e-16;
    MeasureField mu0{&s.grid, std::vector<double>(s.grid.size(), 0.0)};
    const std::size_t mid = s.grid.size() / 2;
    mu0.density[mid] = 1.0 / s.grid.quad_weights[mid];
    mu0.density[mid + 4] = -1.0 / s.grid.quad_weights[mid + 4];
    try {
        (void)solve_linearized(s.grid, s.model, s.base, mu0, {}, {}, {}, one);
        CHECK(false);
    } catch (const ConvergenceError& e) {
        CHECK(e.residual_history.size() == 1);
    }
}
