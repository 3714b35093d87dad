#include "mfg/model.hpp"

#include <algorithm>
#include <cmath>

#include "mfg/rng.hpp"

namespace mfg {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;
constexpr double kLog2 = 0.69314718055994530941723212145817657;

double logcosh(double p) {
    const double ap = std::abs(p);
    return ap + std::log1p(std::exp(-2.0 * ap)) - kLog2;
}

double sech2(double p) {
    const double c = std::cosh(std::min(std::abs(p), 350.0));
    return 1.0 / (c * c);
}

// Boundary profile of the coefficient fields: the same smoothed distance the
// grids carry, evaluated analytically so derivatives are exact.
struct Profile1d {
    double L, eps0;
    double dist(double x) const {
        return smooth_boundary_profile(std::min(x, L - x), eps0, L / 2.0);
    }
    // d'(x), with the sign of the active side of the minimum
    double dist_deriv(double x) const {
        const double rho = std::min(x, L - x);
        const double sgn = x < L - x ? 1.0 : -1.0;
        return smooth_boundary_profile_deriv(rho, eps0, L / 2.0) * sgn;
    }
};

struct ProfileDisk {
    double R, eps0;
    // sqrt form matches the grid builder's arithmetic exactly
    double dist(Vec2 p) const {
        return smooth_boundary_profile(R - std::sqrt(p.x * p.x + p.y * p.y), eps0, R);
    }
    Vec2 dist_grad(Vec2 p) const {
        const double r = std::sqrt(p.x * p.x + p.y * p.y);
        if (r < 1e-14) return {0.0, 0.0};
        const double dphi = smooth_boundary_profile_deriv(R - r, eps0, R);
        return {-dphi * p.x / r, -dphi * p.y / r};
    }
};

// s(d) = ell tanh(d/ell): s ~ d at the boundary, saturates at ell inside.
double shape(double d, double ell) { return ell * std::tanh(d / ell); }
double shape_deriv(double d, double ell) { return sech2(d / ell); }

void attach_interval_couplings(ModelSpec& spec, const ModelParams& prm) {
    const double L = prm.L, cF = prm.c_F, cG = prm.c_G, tau = prm.tau_F;
    auto f0 = [L](double x) { return 0.3 * std::cos(2.0 * kPi * x / L); };
    auto g0 = [L](double x) { return 0.5 * std::cos(kPi * x / L); };
    auto psi = [L](double x) { return 0.5 * (1.0 - std::cos(2.0 * kPi * x / L)); };
    auto kernel = [tau](double x, double y) {
        return std::exp(-sqr(x - y) / (2.0 * tau * tau));
    };
    spec.F = [f0, kernel, cF](Vec2 p, const MeasureField& m) {
        double conv = 0.0;
        for (std::size_t j = 0; j < m.density.size(); ++j)
            conv += kernel(p.x, m.grid->nodes[j].x) * m.density[j] * m.grid->quad_weights[j];
        return f0(p.x) + cF * conv;
    };
    spec.G = [g0, psi, cG](Vec2 p, const MeasureField& m) {
        double avg = 0.0;
        for (std::size_t j = 0; j < m.density.size(); ++j)
            avg += psi(m.grid->nodes[j].x) * m.density[j] * m.grid->quad_weights[j];
        return g0(p.x) + cG * psi(p.x) * avg;
    };
    spec.dF_dm = [kernel, cF](Vec2 p, const MeasureField&, Vec2 q) {
        return cF * kernel(p.x, q.x);
    };
    spec.dG_dm = [psi, cG](Vec2 p, const MeasureField&, Vec2 q) {
        return cG * psi(p.x) * psi(q.x);
    };
}

void attach_interval_hamiltonian(ModelSpec& spec, const ModelParams& prm) {
    const double kappa = prm.kappa, ellH = prm.ell_H;
    Profile1d prof{prm.L, prm.L / 4.0};
    auto sH = [prof, ellH](double x) { return shape(prof.dist(x), ellH); };
    spec.H = [sH, kappa](Vec2 p, Vec2 q) { return kappa * sH(p.x) * logcosh(q.x); };
    spec.Hp = [sH, kappa](Vec2 p, Vec2 q) {
        return Vec2{kappa * sH(p.x) * std::tanh(q.x), 0.0};
    };
    spec.Hpp = [sH, kappa](Vec2 p, Vec2 q) {
        return Mat2{kappa * sH(p.x) * sech2(q.x), 0.0, 0.0};
    };
}

}  // namespace

ModelSpec make_invariant_model_1d(const ModelParams& prm) {
    ModelSpec spec;
    spec.name = "invariant-1d";
    spec.alpha = prm.alpha;
    const double nu0 = prm.nu0, ell = prm.ell;
    Profile1d prof{prm.L, prm.L / 4.0};
    const double eps_finest = prm.L / 4.0 / 24.0;
    spec.lambda = nu0 * sqr(shape(eps_finest, ell));
    spec.theta = nu0 * sqr(ell);
    spec.a = [prof, nu0, ell](Vec2 p) {
        return Mat2{nu0 * sqr(shape(prof.dist(p.x), ell)), 0.0, 0.0};
    };
    spec.sigma = [prof, nu0, ell](Vec2 p) {
        return Mat2{std::sqrt(nu0) * shape(prof.dist(p.x), ell), 0.0, 0.0};
    };
    spec.b_tilde = [prof, nu0, ell](Vec2 p) {
        const double d = prof.dist(p.x);
        return Vec2{2.0 * nu0 * shape(d, ell) * shape_deriv(d, ell) * prof.dist_deriv(p.x),
                    0.0};
    };
    attach_interval_hamiltonian(spec, prm);
    attach_interval_couplings(spec, prm);
    return spec;
}

ModelSpec make_elliptic_model_1d(const ModelParams& prm) {
    ModelSpec spec;
    spec.name = "elliptic-1d";
    spec.alpha = prm.alpha;
    const double nu0 = prm.nu0;
    spec.lambda = nu0;
    spec.theta = nu0;
    spec.a = [nu0](Vec2) { return Mat2{nu0, 0.0, 0.0}; };
    spec.sigma = [nu0](Vec2) { return Mat2{std::sqrt(nu0), 0.0, 0.0}; };
    spec.b_tilde = [](Vec2) { return Vec2{0.0, 0.0}; };
    attach_interval_hamiltonian(spec, prm);
    attach_interval_couplings(spec, prm);
    return spec;
}

ModelSpec make_decoupled_model_1d(const ModelParams& prm) {
    ModelParams local = prm;
    local.c_F = 0.0;
    local.c_G = 0.0;
    ModelSpec spec = make_invariant_model_1d(local);
    spec.name = "decoupled-1d";
    return spec;
}

ModelSpec make_heat_model_1d(double diffusion) {
    ModelSpec spec;
    spec.name = "heat-1d";
    spec.alpha = 0.5;
    spec.lambda = diffusion;
    spec.theta = diffusion;
    spec.a = [diffusion](Vec2) { return Mat2{diffusion, 0.0, 0.0}; };
    spec.sigma = [diffusion](Vec2) { return Mat2{std::sqrt(diffusion), 0.0, 0.0}; };
    spec.b_tilde = [](Vec2) { return Vec2{0.0, 0.0}; };
    spec.H = [](Vec2, Vec2) { return 0.0; };
    spec.Hp = [](Vec2, Vec2) { return Vec2{0.0, 0.0}; };
    spec.Hpp = [](Vec2, Vec2) { return Mat2{0.0, 0.0, 0.0}; };
    spec.F = [](Vec2, const MeasureField&) { return 0.0; };
    spec.G = [](Vec2, const MeasureField&) { return 0.0; };
    spec.dF_dm = [](Vec2, const MeasureField&, Vec2) { return 0.0; };
    spec.dG_dm = [](Vec2, const MeasureField&, Vec2) { return 0.0; };
    return spec;
}

ModelSpec make_invariant_model_disk(const ModelParams& prm) {
    ModelSpec spec;
    spec.name = "invariant-disk";
    spec.alpha = prm.alpha;
    const double R = prm.L, nu0 = prm.nu0, ell = prm.ell;
    const double kappa = prm.kappa, ellH = prm.ell_H;
    ProfileDisk prof{R, R / 2.0};  // default disk collar width
    const double eps_finest = R / 2.0 / 24.0;
    spec.lambda = nu0 * sqr(shape(eps_finest, ell));
    spec.theta = nu0 * sqr(ell);
    spec.a = [prof, nu0, ell](Vec2 p) {
        const double aa = nu0 * sqr(shape(prof.dist(p), ell));
        return Mat2{aa, 0.0, aa};
    };
    spec.sigma = [prof, nu0, ell](Vec2 p) {
        const double ss = std::sqrt(nu0) * shape(prof.dist(p), ell);
        return Mat2{ss, 0.0, ss};
    };
    spec.b_tilde = [prof, nu0, ell](Vec2 p) {
        const double d = prof.dist(p);
        const Vec2 gd = prof.dist_grad(p);
        const double c = 2.0 * nu0 * shape(d, ell) * shape_deriv(d, ell);
        return Vec2{c * gd.x, c * gd.y};
    };
    auto sH = [prof, ellH](Vec2 p) { return shape(prof.dist(p), ellH); };
    spec.H = [sH, kappa](Vec2 p, Vec2 q) {
        return kappa * sH(p) * (logcosh(q.x) + logcosh(q.y));
    };
    spec.Hp = [sH, kappa](Vec2 p, Vec2 q) {
        const double c = kappa * sH(p);
        return Vec2{c * std::tanh(q.x), c * std::tanh(q.y)};
    };
    spec.Hpp = [sH, kappa](Vec2 p, Vec2 q) {
        const double c = kappa * sH(p);
        return Mat2{c * sech2(q.x), 0.0, c * sech2(q.y)};
    };
    // radial couplings through w = r^2/R^2, so everything is smooth at the
    // center and has vanishing radial derivative at the rim
    const double cF = prm.c_F, cG = prm.c_G, tau = prm.tau_F;
    auto w_of = [R](Vec2 p) { return (p.x * p.x + p.y * p.y) / (R * R); };
    auto f0 = [w_of](Vec2 p) { return 0.3 * std::cos(kPi * w_of(p)); };
    auto g0 = [w_of](Vec2 p) { return 0.5 * std::cos(kPi * (1.0 - w_of(p))); };
    auto psi = [w_of](Vec2 p) { return 0.5 * (1.0 - std::cos(2.0 * kPi * (1.0 - w_of(p)))); };
    auto kernel = [tau](Vec2 p, Vec2 q) {
        return std::exp(-(sqr(p.x - q.x) + sqr(p.y - q.y)) / (2.0 * tau * tau));
    };
    spec.F = [f0, kernel, cF](Vec2 p, const MeasureField& m) {
        double conv = 0.0;
        for (std::size_t j = 0; j < m.density.size(); ++j)
            conv += kernel(p, m.grid->nodes[j]) * m.density[j] * m.grid->quad_weights[j];
        return f0(p) + cF * conv;
    };
    spec.G = [g0, psi, cG](Vec2 p, const MeasureField& m) {
        double avg = 0.0;
        for (std::size_t j = 0; j < m.density.size(); ++j)
            avg += psi(m.grid->nodes[j]) * m.density[j] * m.grid->quad_weights[j];
        return g0(p) + cG * psi(p) * avg;
    };
    spec.dF_dm = [kernel, cF](Vec2 p, const MeasureField&, Vec2 q) {
        return cF * kernel(p, q);
    };
    spec.dG_dm = [psi, cG](Vec2 p, const MeasureField&, Vec2 q) {
        return cG * psi(p) * psi(q);
    };
    return spec;
}

namespace {

void eig_range(const Mat2& m, int dim, double& lo, double& hi) {
    if (dim == 1) {
        lo = hi = m.xx;
        return;
    }
    const double mid = 0.5 * (m.xx + m.yy);
    const double rad = std::sqrt(sqr(0.5 * (m.xx - m.yy)) + sqr(m.xy));
    lo = mid - rad;
    hi = mid + rad;
}

MeasureField random_probability(const DomainGrid& grid, std::uint64_t seed,
                                std::uint64_t stream) {
    CounterRng rng(seed, stream);
    MeasureField m;
    m.grid = &grid;
    m.density.resize(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) m.density[i] = 0.25 + rng.uniform();
    m.normalize();
    return m;
}

}  // namespace

ModelValidation validate_model(const DomainGrid& grid, const ModelSpec& model,
                               std::uint64_t seed) {
    ModelValidation rep;
    const double h = grid.h;

    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Vec2 x = grid.nodes[i];
        const Mat2 A = model.a(x);
        const Mat2 S = model.sigma(x);
        const double dxx = std::abs(A.xx - (S.xx * S.xx + S.xy * S.xy));
        const double dxy = std::abs(A.xy - S.xy * (S.xx + S.yy));
        const double dyy = grid.dim == 2 ? std::abs(A.yy - (S.xy * S.xy + S.yy * S.yy)) : 0.0;
        rep.max_sigma_defect = std::max({rep.max_sigma_defect, dxx, dxy, dyy});

        // row divergence of a by central differences at analytic offsets
        Vec2 div{};
        const Vec2 xpx{x.x + h, x.y}, xmx{x.x - h, x.y};
        div.x = (model.a(xpx).xx - model.a(xmx).xx) / (2.0 * h);
        if (grid.dim == 2) {
            const Vec2 xpy{x.x, x.y + h}, xmy{x.x, x.y - h};
            div.x += (model.a(xpy).xy - model.a(xmy).xy) / (2.0 * h);
            div.y = (model.a(xpx).xy - model.a(xmx).xy) / (2.0 * h) +
                    (model.a(xpy).yy - model.a(xmy).yy) / (2.0 * h);
        }
        const Vec2 bt = model.b_tilde(x);
        rep.max_divergence_defect =
            std::max({rep.max_divergence_defect, std::abs(bt.x - div.x), std::abs(bt.y - div.y)});
    }
    if (rep.max_sigma_defect > 1e-12)
        rep.failures.push_back("a != sigma sigma^T: defect " + format_double(rep.max_sigma_defect));
    if (rep.max_divergence_defect > 10.0 * h * h)
        rep.failures.push_back("b_tilde vs divergence of a: defect " +
                               format_double(rep.max_divergence_defect));

    const std::uint64_t mseed = seed ^ 0x6d6f64656cULL;
    rep.min_monotonicity_F = 0.0;
    rep.min_monotonicity_G = 0.0;
    for (int pair = 0; pair < 8; ++pair) {
        const MeasureField m1 = random_probability(grid, mseed, 2 * pair);
        const MeasureField m2 = random_probability(grid, mseed, 2 * pair + 1);
        double monoF = 0.0, monoG = 0.0;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const Vec2 x = grid.nodes[i];
            const double dm = (m1.density[i] - m2.density[i]) * grid.quad_weights[i];
            if (dm == 0.0) continue;
            monoF += (model.F(x, m1) - model.F(x, m2)) * dm;
            monoG += (model.G(x, m1) - model.G(x, m2)) * dm;
        }
        rep.min_monotonicity_F = std::min(rep.min_monotonicity_F, monoF);
        rep.min_monotonicity_G = std::min(rep.min_monotonicity_G, monoG);
    }
    if (rep.min_monotonicity_F < -1e-10)
        rep.failures.push_back("F is not monotone: " + format_double(rep.min_monotonicity_F));
    if (rep.min_monotonicity_G < -1e-10)
        rep.failures.push_back("G is not monotone: " + format_double(rep.min_monotonicity_G));

    // terminal co-normal data must vanish at the boundary to O(h)
    const MeasureField msample = random_probability(grid, mseed, 1000);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid.dist[i] > 2.0 * h + 1e-14) continue;
        const Vec2 x = grid.nodes[i];
        Vec2 gradG{};
        gradG.x = (model.G({x.x + h, x.y}, msample) - model.G({x.x - h, x.y}, msample)) / (2.0 * h);
        if (grid.dim == 2)
            gradG.y =
                (model.G({x.x, x.y + h}, msample) - model.G({x.x, x.y - h}, msample)) / (2.0 * h);
        const Vec2 nu = grid.normal[i];
        if (std::abs(nu.x) + std::abs(nu.y) < 0.5) continue;  // outside the collar
        const double conormal = std::abs(dot(matvec(model.a(x), gradG), nu));
        rep.max_boundary_conormal_G = std::max(rep.max_boundary_conormal_G, conormal);
    }
    if (rep.max_boundary_conormal_G > 10.0 * h)
        rep.failures.push_back("terminal co-normal data does not vanish at the boundary: " +
                               format_double(rep.max_boundary_conormal_G));

    const std::size_t nlev = grid.eps_levels.size();
    rep.min_eig_per_level.assign(nlev, 1e300);
    rep.max_eig_per_level.assign(nlev, -1e300);
    for (std::size_t lev = 0; lev < nlev; ++lev) {
        const auto& msk = grid.mask(lev);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (!msk[i]) continue;
            double lo, hi;
            eig_range(model.a(grid.nodes[i]), grid.dim, lo, hi);
            rep.min_eig_per_level[lev] = std::min(rep.min_eig_per_level[lev], lo);
            rep.max_eig_per_level[lev] = std::max(rep.max_eig_per_level[lev], hi);
        }
    }
    double max_eig_all = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double lo, hi;
        eig_range(model.a(grid.nodes[i]), grid.dim, lo, hi);
        max_eig_all = std::max(max_eig_all, hi);
    }
    if (!(model.lambda > 0.0))
        rep.failures.push_back("declared ellipticity floor must be positive");
    if (!rep.min_eig_per_level.empty() && rep.min_eig_per_level.back() < model.lambda - 1e-12)
        rep.failures.push_back("declared ellipticity floor exceeds the finest-level minimum");
    if (max_eig_all > model.theta + 1e-12)
        rep.failures.push_back("declared ellipticity ceiling is below the domain maximum");
    if (!(model.alpha > 0.0) || !(model.alpha < 1.0))
        rep.failures.push_back("alpha must lie in (0, 1)");

    rep.ok = rep.failures.empty();
    return rep;
}

InvarianceReport check_invariance_condition(const DomainGrid& grid, const ModelSpec& model,
                                            const std::vector<Vec2>& p_samples, double c_margin) {
    return check_invariance_condition(grid, model.a, model.Hp, p_samples, c_margin);
}

}  // namespace mfg
