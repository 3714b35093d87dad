#include "mfg/linearized.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mfg/linalg.hpp"
#include "mfg/measures.hpp"
#include "mfg/norms.hpp"
#include "mfg/operators.hpp"

namespace mfg {

namespace {

// Everything the linear response solver derives from one base pair (u, m):
// per-frame operators reassembled from the stored value frames, the implicit
// step matrices, the face data of the extra density flux, and the coupling
// rows paired against the base densities. Freezing the upwind switches at
// the base slopes is not an approximation: at the converged implicit step
// the scheme's Hamiltonian face term is a smooth function of the face slope
// whose derivative is exactly the frozen transport row, and the density
// step's slope-derivative is the donor-weighted Hpp flux assembled below.
struct LinWorkspace {
    const DomainGrid* grid = nullptr;
    const ModelSpec* model = nullptr;
    const MeasureFlow* base_m = nullptr;
    std::size_t level = 0;
    SolverConfig cfg;
    double t0 = 0.0;
    double dt = 0.0;
    std::size_t nt = 0;

    MaskOperator skel;
    std::vector<int> extend_from;  // full-grid node -> nearest in-mask node

    std::vector<MaskOperator> ops;  // per frame, assembled at the base slopes
    std::vector<SpMat> mv;          // I - theta dt transport(n), n < nt
    std::vector<SpMat> mf;          // I - theta dt fp(n), n < nt
    // slope-derivative s * Hpp_axis of the advective face coefficient, and
    // the density column it multiplies (0: low node, 1: high node, 2: the
    // coefficient vanished, split evenly)
    std::vector<std::vector<double>> dch;
    std::vector<std::vector<signed char>> donor;
    std::vector<std::vector<double>> mloc;  // base density at mask nodes

    bool cache_couplings = false;
    std::vector<std::vector<double>> dF;  // per frame, nloc x nloc, weighted by w_j
    std::vector<double> dG;               // full grid x nloc, weighted by w_j

    std::size_t nloc() const { return skel.size(); }
};

LinWorkspace make_workspace(const DomainGrid& grid, const ModelSpec& model,
                            const ScalarFlow& u, const MeasureFlow& m,
                            const SolverConfig& config) {
    if (u.frames.size() != m.frames.size())
        throw ValidationError("linear response: base flows disagree in frame count");
    if (u.frames.size() < 2) throw ValidationError("linear response: base has no time steps");
    if (!(m.dt > 0.0)) throw ValidationError("linear response: base dt must be positive");
    for (const auto& fr : m.frames)
        if (fr.grid != &grid || fr.density.size() != grid.size())
            throw ValidationError("linear response: base does not live on the given grid");

    LinWorkspace ws;
    ws.grid = &grid;
    ws.model = &model;
    ws.base_m = &m;
    ws.level = grid.eps_levels.size() - 1;
    SolverConfig cfg = config;
    cfg.dt = m.dt;  // the base time grid governs
    cfg.horizon = m.t_end();
    ws.cfg = resolved_solver_config(grid, model, cfg);
    ws.t0 = m.t0;
    ws.dt = m.dt;
    ws.nt = m.frames.size() - 1;

    ws.skel = make_mask_skeleton(grid, ws.level, model);
    if (ws.skel.size() == 0) throw ValidationError("subdomain mask has no nodes");
    ws.extend_from = nearest_mask_nodes(grid, ws.level);

    const std::size_t nloc = ws.skel.size();
    const double theta = ws.cfg.theta_scheme;
    ws.ops.reserve(ws.nt + 1);
    for (std::size_t n = 0; n <= ws.nt; ++n) {
        MaskOperator op = ws.skel;
        const auto pbar = face_slopes_from_field(op, u.frames[n]);
        assemble_operator(op, model, pbar);

        std::vector<double> dch(op.faces.size());
        std::vector<signed char> donor(op.faces.size());
        for (std::size_t k = 0; k < op.faces.size(); ++k) {
            const MaskFace& f = op.faces[k];
            const Vec2 pvec = f.axis == 0 ? Vec2{pbar[k], 0.0} : Vec2{0.0, pbar[k]};
            const Vec2 hp = model.Hp(f.xf, pvec);
            const Mat2 hpp = model.Hpp(f.xf, pvec);
            const double ch = f.s * (f.axis == 0 ? hp.x : hp.y);
            dch[k] = f.s * (f.axis == 0 ? hpp.xx : hpp.yy);
            donor[k] = ch > 0.0 ? 1 : (ch < 0.0 ? 0 : 2);
        }
        ws.dch.push_back(std::move(dch));
        ws.donor.push_back(std::move(donor));

        std::vector<double> ml(nloc);
        for (std::size_t j = 0; j < nloc; ++j) ml[j] = m.frames[n].density[op.nodes[j]];
        ws.mloc.push_back(std::move(ml));

        if (n < ws.nt) {
            ws.mv.push_back(shifted_identity(op.transport, -theta * ws.dt));
            ws.mf.push_back(shifted_identity(op.fp, -theta * ws.dt));
        }
        ws.ops.push_back(std::move(op));
    }

    if (model.dG_dm) {
        ws.dG.resize(grid.size() * nloc);
        const MeasureField& mT = m.frames.back();
        for (std::size_t i = 0; i < grid.size(); ++i)
            for (std::size_t j = 0; j < nloc; ++j)
                ws.dG[i * nloc + j] =
                    model.dG_dm(grid.nodes[i], mT, grid.nodes[ws.skel.nodes[j]]) *
                    ws.skel.w[j];
    }
    if (model.dF_dm) {
        // cache the running-coupling rows when they fit; otherwise they are
        // re-evaluated on the fly each sweep
        ws.cache_couplings = (ws.nt + 1) * nloc * nloc <= 3000000;
        if (ws.cache_couplings) {
            ws.dF.assign(ws.nt + 1, std::vector<double>(nloc * nloc));
            for (std::size_t n = 0; n <= ws.nt; ++n)
                for (std::size_t i = 0; i < nloc; ++i) {
                    const Vec2 xi = grid.nodes[ws.skel.nodes[i]];
                    for (std::size_t j = 0; j < nloc; ++j)
                        ws.dF[n][i * nloc + j] =
                            model.dF_dm(xi, m.frames[n], grid.nodes[ws.skel.nodes[j]]) *
                            ws.skel.w[j];
                }
        }
    }
    return ws;
}

// out[i] += sum_j dF_dm(x_i, m_n, y_j) mu_j w_j over mask nodes
void add_running_pair(const LinWorkspace& ws, std::size_t n, const std::vector<double>& muloc,
                      std::vector<double>& out) {
    const std::size_t nloc = ws.nloc();
    if (!ws.model->dF_dm) return;
    if (ws.cache_couplings) {
        const auto& row = ws.dF[n];
        for (std::size_t i = 0; i < nloc; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < nloc; ++j) s += row[i * nloc + j] * muloc[j];
            out[i] += s;
        }
        return;
    }
    const DomainGrid& g = *ws.grid;
    const MeasureField& mn = ws.base_m->frames[n];
    for (std::size_t i = 0; i < nloc; ++i) {
        const Vec2 xi = g.nodes[ws.skel.nodes[i]];
        double s = 0.0;
        for (std::size_t j = 0; j < nloc; ++j)
            s += ws.model->dF_dm(xi, mn, g.nodes[ws.skel.nodes[j]]) * ws.skel.w[j] * muloc[j];
        out[i] += s;
    }
}

// Terminal data of the backward pass on the full grid: the terminal-coupling
// pairing against mu(T) plus v_T, with the same shrinking-domain flux
// correction the base solve applies to its terminal data. Differentiating
// the base path requires correcting the pairing and v_T jointly.
std::vector<double> terminal_from(const LinWorkspace& ws, const std::vector<double>& muT_loc,
                                  const std::vector<double>& vT_full) {
    const DomainGrid& g = *ws.grid;
    const std::size_t nloc = ws.nloc();
    std::vector<double> gfull(g.size(), 0.0);
    if (!ws.dG.empty())
        for (std::size_t i = 0; i < g.size(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < nloc; ++j) s += ws.dG[i * nloc + j] * muT_loc[j];
            gfull[i] = s;
        }
    if (!vT_full.empty())
        for (std::size_t i = 0; i < g.size(); ++i) gfull[i] += vT_full[i];
    const auto ext = conormal_flux_correction(g, ws.level, *ws.model, gfull);
    for (std::size_t i = 0; i < g.size(); ++i) gfull[i] -= ext[i];
    return gfull;
}

// Backward pass at frozen switches; sources are the running pairing against
// the mu iterate plus h.
std::vector<std::vector<double>> backward_v(const LinWorkspace& ws,
                                            const std::vector<std::vector<double>>& muloc,
                                            const ScalarSource& h,
                                            const std::vector<double>& term_full) {
    const std::size_t nloc = ws.nloc();
    const std::size_t nt = ws.nt;
    const double dt = ws.dt;
    const double theta = ws.cfg.theta_scheme;

    std::vector<std::vector<double>> S(nt + 1, std::vector<double>(nloc, 0.0));
    for (std::size_t n = 0; n <= nt; ++n) {
        add_running_pair(ws, n, muloc[n], S[n]);
        if (h) {
            const double t = ws.t0 + dt * static_cast<double>(n);
            for (std::size_t j = 0; j < nloc; ++j)
                S[n][j] += h(t, ws.grid->nodes[ws.skel.nodes[j]]);
        }
    }

    std::vector<std::vector<double>> v(nt + 1, std::vector<double>(nloc));
    for (std::size_t j = 0; j < nloc; ++j) v[nt][j] = term_full[ws.skel.nodes[j]];
    for (std::size_t n = nt; n-- > 0;) {
        std::vector<double> rhs(nloc);
        for (std::size_t j = 0; j < nloc; ++j) rhs[j] = v[n + 1][j] + theta * dt * S[n][j];
        if (theta < 1.0) {
            const auto tv = ws.ops[n + 1].transport.apply(v[n + 1]);
            for (std::size_t j = 0; j < nloc; ++j)
                rhs[j] += (1.0 - theta) * dt * (tv[j] + S[n + 1][j]);
        }
        v[n] = solve_sparse(ws.mv[n], rhs);
    }
    return v;
}

// Forward pass: the adjoint-consistent density operator at frozen switches
// plus the extra conservative face flux (base density) * Hpp * Dv + c. The
// donor density is theta-mixed between the step endpoints, matching the
// derivative of the implicit density step.
std::vector<std::vector<double>> forward_mu(const LinWorkspace& ws,
                                            const std::vector<std::vector<double>>& vloc,
                                            const VectorSource& c,
                                            const std::vector<double>& mu0loc) {
    const std::size_t nloc = ws.nloc();
    const std::size_t nt = ws.nt;
    const double dt = ws.dt;
    const double theta = ws.cfg.theta_scheme;

    std::vector<std::vector<double>> mu(nt + 1);
    mu[0] = mu0loc;
    for (std::size_t n = 0; n < nt; ++n) {
        const MaskOperator& op = ws.ops[n];
        std::vector<double> q(nloc, 0.0);
        const double t = ws.t0 + dt * static_cast<double>(n);
        for (std::size_t k = 0; k < op.faces.size(); ++k) {
            const MaskFace& f = op.faces[k];
            const double dp = (vloc[n][f.lj] - vloc[n][f.li]) / op.h;
            auto mix = [&](int j) {
                return theta * ws.mloc[n + 1][j] + (1.0 - theta) * ws.mloc[n][j];
            };
            const double mdon = ws.donor[n][k] == 1
                                    ? mix(f.lj)
                                    : (ws.donor[n][k] == 0 ? mix(f.li)
                                                           : 0.5 * (mix(f.li) + mix(f.lj)));
            double V = ws.dch[n][k] * dp * mdon;
            if (c) {
                const Vec2 cv = c(t, f.xf);
                V += f.s * (f.axis == 0 ? cv.x : cv.y);
            }
            q[f.li] += V / op.w[f.li];
            q[f.lj] -= V / op.w[f.lj];
        }
        std::vector<double> rhs(nloc);
        for (std::size_t j = 0; j < nloc; ++j) rhs[j] = mu[n][j] + dt * q[j];
        if (theta < 1.0) {
            const auto am = op.fp.apply(mu[n]);
            for (std::size_t j = 0; j < nloc; ++j) rhs[j] += (1.0 - theta) * dt * am[j];
        }
        mu[n + 1] = solve_sparse(ws.mf[n], rhs);
    }
    return mu;
}

double weighted_l1_gap(const LinWorkspace& ws, const std::vector<std::vector<double>>& a,
                       const std::vector<std::vector<double>>& b) {
    double worst = 0.0;
    for (std::size_t n = 0; n < a.size(); ++n) {
        double s = 0.0;
        for (std::size_t j = 0; j < a[n].size(); ++j)
            s += ws.skel.w[j] * std::abs(a[n][j] - b[n][j]);
        worst = std::max(worst, s);
    }
    return worst;
}

// Homogeneous magnitude of the data, used to make the stopping rule
// scale-equivariant: scaling all data by a power of two reproduces the
// iteration path exactly.
double stopping_scale(const LinWorkspace& ws, const std::vector<double>& mu0loc,
                      const ScalarSource& h, const VectorSource& c,
                      const std::vector<double>& vT_full) {
    const std::size_t nloc = ws.nloc();
    double scale = 0.0;
    for (std::size_t j = 0; j < nloc; ++j) scale += ws.skel.w[j] * std::abs(mu0loc[j]);
    double vsup = 0.0;
    for (double v : vT_full) vsup = std::max(vsup, std::abs(v));
    scale += vsup;
    if (h) {
        double hsup = 0.0;
        for (std::size_t n = 0; n <= ws.nt; ++n) {
            const double t = ws.t0 + ws.dt * static_cast<double>(n);
            for (std::size_t j = 0; j < nloc; ++j)
                hsup = std::max(hsup, std::abs(h(t, ws.grid->nodes[ws.skel.nodes[j]])));
        }
        scale += hsup;
    }
    if (c) {
        double csup = 0.0;
        for (std::size_t n = 0; n <= ws.nt; ++n) {
            const double t = ws.t0 + ws.dt * static_cast<double>(n);
            for (const MaskFace& f : ws.skel.faces) {
                const Vec2 cv = c(t, f.xf);
                csup = std::max(csup, std::abs(f.axis == 0 ? cv.x : cv.y));
            }
        }
        scale += csup;
    }
    return scale;
}

struct RawLinear {
    std::vector<std::vector<double>> v;   // local frames
    std::vector<std::vector<double>> mu;  // local frames
    std::vector<double> mu0loc;
    std::vector<double> vT_used;  // full grid, restricted to the mask
    std::size_t picard_iters = 0;
    std::vector<double> residuals;
    bool flagged = false;
};

// Damped alternation of the backward and forward passes, mirroring the base
// solver's loop: the residual compares consecutive undamped forward outputs
// in weighted-L1, relative to the data magnitude. The zero start and the
// relative stopping rule make zero data return exact zeros and data doubling
// double the output bitwise.
RawLinear run_linear_picard(const LinWorkspace& ws, const MeasureField& mu0,
                            const ScalarSource& h, const VectorSource& c,
                            const std::vector<double>& v_T) {
    const DomainGrid& g = *ws.grid;
    const std::size_t nloc = ws.nloc();
    if (mu0.grid != &g || mu0.density.size() != g.size())
        throw ValidationError("linear response: mu0 does not live on the given grid");
    if (!v_T.empty() && v_T.size() != g.size())
        throw ValidationError("linear response: v_T size mismatch");

    RawLinear out;
    out.mu0loc.assign(nloc, 0.0);
    for (std::size_t j = 0; j < nloc; ++j) out.mu0loc[j] = mu0.density[ws.skel.nodes[j]];
    out.vT_used.assign(g.size(), 0.0);
    if (!v_T.empty()) {
        const auto& mask = g.mask(ws.level);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (mask[i]) out.vT_used[i] = v_T[i];
    }

    const double scale = stopping_scale(ws, out.mu0loc, h, c, out.vT_used);
    std::vector<std::vector<double>> muiter(ws.nt + 1, std::vector<double>(nloc, 0.0));
    std::vector<std::vector<double>> muraw, muraw_prev;
    bool converged = false;
    for (std::size_t k = 1; k <= ws.cfg.max_iters; ++k) {
        out.picard_iters = k;
        const auto term = terminal_from(ws, muiter[ws.nt], out.vT_used);
        const auto v = backward_v(ws, muiter, h, term);
        muraw = forward_mu(ws, v, c, out.mu0loc);
        out.residuals.push_back(weighted_l1_gap(ws, muraw, k == 1 ? muiter : muraw_prev));
        if (out.residuals.back() <= ws.cfg.picard_tol * scale) {
            converged = true;
            break;
        }
        for (std::size_t n = 0; n <= ws.nt; ++n)
            for (std::size_t j = 0; j < nloc; ++j)
                muiter[n][j] = (1.0 - ws.cfg.picard_damping) * muiter[n][j] +
                               ws.cfg.picard_damping * muraw[n][j];
        muraw_prev = muraw;
    }
    if (!converged)
        throw ConvergenceError("linear response: max_iters reached without meeting picard_tol",
                               out.residuals);

    // final backward pass against the returned mu so the terminal identity
    // holds exactly for the returned pair
    const auto term = terminal_from(ws, muraw[ws.nt], out.vT_used);
    out.v = backward_v(ws, muraw, h, term);
    out.mu = std::move(muraw);
    out.flagged = picard_residuals_flagged(out.residuals);
    return out;
}

std::vector<double> expand_full(const LinWorkspace& ws, const std::vector<double>& loc) {
    const DomainGrid& g = *ws.grid;
    std::vector<double> full(g.size());
    for (std::size_t i = 0; i < g.size(); ++i)
        full[i] = loc[ws.skel.local_of_node[ws.extend_from[i]]];
    return full;
}

LinearizedSolution package_solution(const LinWorkspace& ws, RawLinear raw) {
    const DomainGrid& g = *ws.grid;
    LinearizedSolution sol;
    sol.v.t0 = ws.t0;
    sol.v.dt = ws.dt;
    sol.v.frames.reserve(ws.nt + 1);
    for (const auto& fr : raw.v) sol.v.frames.push_back(expand_full(ws, fr));
    sol.mu.t0 = ws.t0;
    sol.mu.dt = ws.dt;
    sol.mu.frames.assign(ws.nt + 1, MeasureField{&g, std::vector<double>(g.size(), 0.0)});
    for (std::size_t n = 0; n <= ws.nt; ++n)
        for (std::size_t j = 0; j < ws.nloc(); ++j)
            sol.mu.frames[n].density[ws.skel.nodes[j]] = raw.mu[n][j];
    sol.mu0 = MeasureField{&g, std::vector<double>(g.size(), 0.0)};
    for (std::size_t j = 0; j < ws.nloc(); ++j)
        sol.mu0.density[ws.skel.nodes[j]] = raw.mu0loc[j];
    sol.v_T = std::move(raw.vT_used);
    sol.picard_iters = raw.picard_iters;
    sol.residuals = std::move(raw.residuals);
    sol.flagged = raw.flagged;
    return sol;
}

const std::vector<std::uint8_t>& interior_mask(const DomainGrid& grid) {
    const std::size_t nlevels = grid.eps_levels.size();
    return grid.mask(nlevels >= 2 ? nlevels - 2 : nlevels - 1);
}

MFGSolution as_solution(const LevelSolution& lev, const std::vector<double>& eps_levels) {
    MFGSolution sol;
    sol.u = lev.u;
    sol.m = lev.m;
    sol.eps_used = eps_levels;
    sol.picard_iters = lev.picard_iters;
    sol.residuals = lev.residuals;
    sol.flagged = lev.flagged;
    return sol;
}

}  // namespace

LinearizedSolution solve_linearized(const DomainGrid& grid, const ModelSpec& model,
                                    const MFGSolution& base, const MeasureField& mu0,
                                    const ScalarSource& h_src, const VectorSource& c_src,
                                    const std::vector<double>& v_T,
                                    const SolverConfig& config) {
    const LinWorkspace ws = make_workspace(grid, model, base.u, base.m, config);
    LinearizedSolution sol = package_solution(ws, run_linear_picard(ws, mu0, h_src, c_src, v_T));
    sol.base = &base;
    sol.h_src = h_src;
    sol.c_src = c_src;

    // a-priori bound bookkeeping: output norms against the data magnitude
    const auto& mask_in = interior_mask(grid);
    for (const auto& fr : sol.v.frames)
        sol.norm_v = std::max(sol.norm_v, holder_norm_2a(grid, fr, model.alpha, &mask_in).total);
    std::vector<std::vector<double>> mud;
    mud.reserve(sol.mu.frames.size());
    for (const auto& fr : sol.mu.frames) {
        mud.push_back(fr.density);
        sol.norm_mu_dual =
            std::max(sol.norm_mu_dual, signed_dual_norm(grid, fr.density, 1, model.alpha));
    }
    sol.norm_mu_lp = lp_norm_spacetime(grid, mud, ws.dt, ws.cfg.p_exponent);
    double hsup = 0.0;
    if (h_src)
        for (std::size_t n = 0; n <= ws.nt; ++n) {
            const double t = ws.t0 + ws.dt * static_cast<double>(n);
            for (int gi : ws.skel.nodes) hsup = std::max(hsup, std::abs(h_src(t, grid.nodes[gi])));
        }
    double cl1 = 0.0;
    if (c_src)
        for (std::size_t n = 0; n <= ws.nt; ++n) {
            const double t = ws.t0 + ws.dt * static_cast<double>(n);
            double s = 0.0;
            for (std::size_t j = 0; j < ws.nloc(); ++j) {
                const Vec2 cv = c_src(t, grid.nodes[ws.skel.nodes[j]]);
                s += ws.skel.w[j] * std::sqrt(dot(cv, cv));
            }
            cl1 = std::max(cl1, s);
        }
    sol.data_magnitude = holder_norm_2a(grid, sol.v_T, model.alpha, &mask_in).total +
                         signed_dual_norm(grid, sol.mu0.density, 1, model.alpha) + hsup + cl1;
    sol.estimate_ratio =
        sol.data_magnitude > 0.0
            ? (sol.norm_v + sol.norm_mu_lp + sol.norm_mu_dual) / sol.data_magnitude
            : 0.0;
    return sol;
}

MeasureDerivative compute_K(const DomainGrid& grid, const ModelSpec& model,
                            const MFGSolution& base, double t0,
                            const std::vector<int>& y_nodes, const SolverConfig& config) {
    if (std::abs(t0 - base.u.t0) > 1e-9 * std::max(1.0, std::abs(t0)))
        throw ValidationError("kernel: t0 must be the start of the base window");
    if (y_nodes.empty()) throw ValidationError("kernel: no y nodes given");
    const LinWorkspace ws = make_workspace(grid, model, base.u, base.m, config);
    for (int y : y_nodes)
        if (y < 0 || static_cast<std::size_t>(y) >= grid.size() ||
            ws.skel.local_of_node[y] < 0)
            throw ValidationError("kernel: y node outside the active subdomain");

    MeasureDerivative D;
    D.t0 = t0;
    D.m0 = base.m.frames.front();
    D.y_nodes = y_nodes;
    D.K.reserve(y_nodes.size());
    for (int y : y_nodes) {
        EmpiricalConfig ec;
        ec.points = {grid.nodes[y]};
        const MeasureField atom = empirical_measure(grid, ec);
        RawLinear raw = run_linear_picard(ws, atom, {}, {}, {});
        D.K.push_back(expand_full(ws, raw.v.front()));
    }

    if (grid.dim == 1 && y_nodes.size() >= 2) {
        for (std::size_t k = 1; k < y_nodes.size(); ++k)
            if (!(grid.nodes[y_nodes[k]].x > grid.nodes[y_nodes[k - 1]].x))
                throw ValidationError("kernel: y nodes must be ordered along the axis");
        const std::size_t ny = y_nodes.size();
        D.DmK.assign(ny, std::vector<double>(grid.size()));
        auto yc = [&](std::size_t k) { return grid.nodes[y_nodes[k]].x; };
        for (std::size_t k = 0; k < ny; ++k) {
            const std::size_t ka = k == 0 ? 0 : k - 1;
            const std::size_t kb = k + 1 == ny ? k : k + 1;
            const double dy = yc(kb) - yc(ka);
            for (std::size_t i = 0; i < grid.size(); ++i)
                D.DmK[k][i] = (D.K[kb][i] - D.K[ka][i]) / dy;
        }
    }
    return D;
}

std::vector<double> kernel_apply(const DomainGrid& grid, const MeasureDerivative& deriv,
                                 const MeasureField& mu0) {
    if (mu0.grid != &grid || mu0.density.size() != grid.size())
        throw ValidationError("kernel pairing: mu0 does not live on the given grid");
    std::vector<double> out(grid.size(), 0.0);
    for (std::size_t k = 0; k < deriv.y_nodes.size(); ++k) {
        const int y = deriv.y_nodes[k];
        const double wmu = mu0.density[y] * grid.quad_weights[y];
        if (wmu == 0.0) continue;
        for (std::size_t i = 0; i < grid.size(); ++i) out[i] += deriv.K[k][i] * wmu;
    }
    return out;
}

double kernel_surrogate_norm(const DomainGrid& grid, const MeasureDerivative& deriv,
                             double alpha) {
    if (deriv.K.empty()) throw ValidationError("kernel norm: empty kernel");
    const auto& mask_in = interior_mask(grid);

    // columns of fixed y: second-order surrogate in x
    double xpart = 0.0;
    std::vector<std::size_t> kept;
    for (std::size_t k = 0; k < deriv.y_nodes.size(); ++k) {
        if (!mask_in[deriv.y_nodes[k]]) continue;
        kept.push_back(k);
        xpart = std::max(xpart, holder_norm_2a(grid, deriv.K[k], alpha, &mask_in).total);
    }
    if (kept.empty()) throw ValidationError("kernel norm: no y nodes inside the interior mask");

    // rows of fixed x: first-order surrogate in y (one-dimensional grids)
    double ypart = 0.0;
    if (grid.dim == 1 && kept.size() >= 2) {
        auto yc = [&](std::size_t t) { return grid.nodes[deriv.y_nodes[kept[t]]].x; };
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (!mask_in[i]) continue;
            double sup = 0.0;
            for (std::size_t t = 0; t < kept.size(); ++t)
                sup = std::max(sup, std::abs(deriv.K[kept[t]][i]));
            std::vector<double> dmid, dval;
            for (std::size_t t = 0; t + 1 < kept.size(); ++t) {
                const double dy = yc(t + 1) - yc(t);
                dval.push_back((deriv.K[kept[t + 1]][i] - deriv.K[kept[t]][i]) / dy);
                dmid.push_back(0.5 * (yc(t + 1) + yc(t)));
            }
            double dsup = 0.0, quot = 0.0;
            for (double v : dval) dsup = std::max(dsup, std::abs(v));
            for (std::size_t a = 0; a < dval.size(); ++a)
                for (std::size_t b = a + 1; b < dval.size(); ++b) {
                    const double r = std::abs(dmid[b] - dmid[a]);
                    if (r < 2.0 * grid.h) continue;
                    quot = std::max(quot, std::abs(dval[b] - dval[a]) / std::pow(r, alpha));
                }
            ypart = std::max(ypart, sup + dsup + quot);
        }
    }
    return xpart + ypart;
}

double evaluate_U(const DomainGrid& grid, const ModelSpec& model, double t0, Vec2 x,
                  const MeasureField& m0, const SolverConfig& config) {
    const SolverConfig cfg = resolved_solver_config(grid, model, config);
    validate_probability(m0);
    if (std::abs(t0 - cfg.horizon) <= 1e-12 * std::max(1.0, std::abs(cfg.horizon)))
        return model.G(x, m0);
    const LevelSolution lev =
        solve_mfg_level(grid, grid.eps_levels.back(), model, t0, m0, cfg);
    return grid.interpolate(lev.u.frames.front(), x);
}

ExpansionReport second_order_expansion_check(const DomainGrid& grid, const ModelSpec& model,
                                             double t0, const MeasureField& m0,
                                             const MeasureField& direction,
                                             const std::vector<double>& s_values,
                                             const SolverConfig& config) {
    if (s_values.empty()) throw ValidationError("expansion check: no s values given");
    if (direction.grid != &grid || direction.density.size() != grid.size())
        throw ValidationError("expansion check: direction does not live on the given grid");
    const double eps = grid.eps_levels.back();
    const LevelSolution lev0 = solve_mfg_level(grid, eps, model, t0, m0, config);
    const LinWorkspace ws = make_workspace(grid, model, lev0.u, lev0.m, config);
    const RawLinear lin = run_linear_picard(ws, direction, {}, {}, {});
    const auto v0 = expand_full(ws, lin.v.front());
    const auto& mask = grid.mask(ws.level);

    ExpansionReport rep;
    rep.s_values = s_values;
    const double floor = 20.0 * ws.cfg.picard_tol;
    std::vector<double> fit_s, fit_d;
    for (double s : s_values) {
        MeasureField ms = m0;
        for (std::size_t i = 0; i < grid.size(); ++i)
            ms.density[i] += s * direction.density[i];
        const LevelSolution levs = solve_mfg_level(grid, eps, model, t0, ms, config);
        double defect = 0.0;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (!mask[i]) continue;
            defect = std::max(defect, std::abs(levs.u.frames.front()[i] -
                                               lev0.u.frames.front()[i] - s * v0[i]));
        }
        rep.defects.push_back(defect);
        if (s > 0.0 && defect > floor) {
            fit_s.push_back(s);
            fit_d.push_back(defect);
        } else if (s > 0.0) {
            rep.floor_limited = true;
        }
    }
    if (fit_s.size() >= 2)
        rep.slope = loglog_slope(fit_s, fit_d);
    else
        rep.floor_limited = true;
    return rep;
}

MasterResidual master_equation_residual(const DomainGrid& grid, const ModelSpec& model,
                                        double t0, const std::vector<int>& x_nodes,
                                        const MeasureField& m0, const SolverConfig& config) {
    if (grid.dim != 1)
        throw ValidationError("residual assembly is implemented on one-dimensional grids");
    if (x_nodes.empty()) throw ValidationError("residual: no x nodes given");
    const SolverConfig cfg = resolved_solver_config(grid, model, config);
    const double probe = 2.0 * cfg.dt;
    if (!(t0 + probe < cfg.horizon))
        throw ValidationError("residual: probe time passes the horizon");

    const double eps = grid.eps_levels.back();
    const LevelSolution lev0 = solve_mfg_level(grid, eps, model, t0, m0, cfg);
    const LevelSolution levp = solve_mfg_level(grid, eps, model, t0 + probe, m0, cfg);
    const LevelSolution levm = solve_mfg_level(grid, eps, model, t0 - probe, m0, cfg);

    const auto& mask = grid.mask(grid.eps_levels.size() - 1);
    for (int x : x_nodes)
        if (x < 0 || static_cast<std::size_t>(x) >= grid.size() || !mask[x])
            throw ValidationError("residual: x node outside the active subdomain");

    const auto& u0 = lev0.u.frames.front();
    const auto grad = field_gradient(grid, u0, &mask);
    const auto hess = field_hessian(grid, u0, &mask);

    // kernel over every active node, ordered along the axis
    std::vector<int> y_nodes;
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (mask[i]) y_nodes.push_back(static_cast<int>(i));
    if (y_nodes.size() < 3) throw ValidationError("residual: too few active nodes");
    const MeasureDerivative D =
        compute_K(grid, model, as_solution(lev0, grid.eps_levels), t0, y_nodes, cfg);

    const std::size_t ny = y_nodes.size();
    const auto& mr = lev0.m.frames.front().density;  // measure the solve actually used

    MasterResidual out;
    out.nodes = x_nodes;
    out.dt_probe = probe;
    for (int x : x_nodes) {
        const double dtU =
            (levp.u.frames.front()[x] - levm.u.frames.front()[x]) / (2.0 * probe);

        // y-derivatives of the kernel row at this x
        std::vector<double> Ky(ny), Kyy(ny);
        auto kv = [&](std::size_t k) { return D.K[k][x]; };
        auto yc = [&](std::size_t k) { return grid.nodes[y_nodes[k]].x; };
        for (std::size_t k = 0; k < ny; ++k) {
            const std::size_t ka = k == 0 ? 0 : k - 1;
            const std::size_t kb = k + 1 == ny ? k : k + 1;
            Ky[k] = (kv(kb) - kv(ka)) / (yc(kb) - yc(ka));
            const std::size_t kc = k == 0 ? 1 : (k + 1 == ny ? ny - 2 : k);
            Kyy[k] = (kv(kc + 1) - 2.0 * kv(kc) + kv(kc - 1)) / (grid.h * grid.h);
        }

        double I1 = 0.0, I2 = 0.0;
        for (std::size_t k = 0; k < ny; ++k) {
            const int y = y_nodes[k];
            const double wm = mr[y] * grid.quad_weights[y];
            if (wm == 0.0) continue;
            I1 += model.a(grid.nodes[y]).xx * Kyy[k] * wm;
            I2 += Ky[k] * model.Hp(grid.nodes[y], grad[y]).x * wm;
        }

        const double res = -dtU - model.a(grid.nodes[x]).xx * hess[x].xx +
                           model.H(grid.nodes[x], grad[x]) - I1 + I2 -
                           model.F(grid.nodes[x], lev0.m.frames.front());
        out.residual.push_back(res);
    }
    return out;
}

KernelLipschitzReport lipschitz_in_measure_of_K(
    const DomainGrid& grid, const ModelSpec& model, double t0,
    const std::vector<std::pair<MeasureField, MeasureField>>& pairs,
    const SolverConfig& config) {
    const SolverConfig cfg = resolved_solver_config(grid, model, config);
    const double eps = grid.eps_levels.back();
    const auto& mask = grid.mask(grid.eps_levels.size() - 1);

    std::vector<int> all;
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (mask[i]) all.push_back(static_cast<int>(i));
    const std::size_t stride = (all.size() + 47) / 48;
    std::vector<int> y_nodes;
    for (std::size_t k = 0; k < all.size(); k += stride) y_nodes.push_back(all[k]);

    KernelLipschitzReport rep;
    for (const auto& pr : pairs) {
        const double d = wasserstein1(pr.first, pr.second);
        if (d <= 1e-12) {
            rep.pairs_skipped++;
            continue;
        }
        const LevelSolution lev1 = solve_mfg_level(grid, eps, model, t0, pr.first, cfg);
        const LevelSolution lev2 = solve_mfg_level(grid, eps, model, t0, pr.second, cfg);
        const MeasureDerivative D1 =
            compute_K(grid, model, as_solution(lev1, grid.eps_levels), t0, y_nodes, cfg);
        const MeasureDerivative D2 =
            compute_K(grid, model, as_solution(lev2, grid.eps_levels), t0, y_nodes, cfg);
        MeasureDerivative diff;
        diff.t0 = t0;
        diff.y_nodes = y_nodes;
        diff.K = D1.K;
        for (std::size_t k = 0; k < diff.K.size(); ++k)
            for (std::size_t i = 0; i < diff.K[k].size(); ++i) diff.K[k][i] -= D2.K[k][i];
        rep.ratio = std::max(rep.ratio, kernel_surrogate_norm(grid, diff, model.alpha) / d);
        rep.pairs_used++;
    }
    return rep;
}

}  // namespace mfg
