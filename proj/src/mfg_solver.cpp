#include "mfg/mfg_solver.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mfg/linalg.hpp"
#include "mfg/norms.hpp"
#include "mfg/operators.hpp"

namespace mfg {

namespace {

// Per-level working set: the operator skeleton plus the map used to extend
// mask-local fields onto the full grid (each outside node copies its nearest
// in-mask node, found by breadth-first search over the lattice adjacency).
struct LevelContext {
    const DomainGrid* grid = nullptr;
    std::size_t level = 0;
    MaskOperator op;
    std::vector<int> extend_from;
};

LevelContext make_level_context(const DomainGrid& grid, std::size_t level,
                                const ModelSpec& model) {
    LevelContext ctx;
    ctx.grid = &grid;
    ctx.level = level;
    ctx.op = make_mask_skeleton(grid, level, model);
    if (ctx.op.size() == 0) throw ValidationError("subdomain mask has no nodes");
    ctx.extend_from = nearest_mask_nodes(grid, level);
    return ctx;
}

std::vector<double> expand_full(const LevelContext& ctx, const std::vector<double>& loc) {
    const DomainGrid& g = *ctx.grid;
    std::vector<double> full(g.size());
    for (std::size_t i = 0; i < g.size(); ++i)
        full[i] = loc[ctx.op.local_of_node[ctx.extend_from[i]]];
    return full;
}

std::vector<double> local_face_slopes(const MaskOperator& op, const std::vector<double>& uloc) {
    std::vector<double> p(op.faces.size());
    for (std::size_t k = 0; k < op.faces.size(); ++k)
        p[k] = (uloc[op.faces[k].lj] - uloc[op.faces[k].li]) / op.h;
    return p;
}

void check_flow_shape(const DomainGrid& grid, const MeasureFlow& flow, const char* what) {
    if (flow.frames.size() < 2)
        throw ValidationError(std::string(what) + ": need at least two frames");
    if (!(flow.dt > 0.0)) throw ValidationError(std::string(what) + ": dt must be positive");
    for (const auto& f : flow.frames) {
        if (f.grid != &grid) throw ValidationError(std::string(what) + ": frame grid mismatch");
        if (f.density.size() != grid.size())
            throw ValidationError(std::string(what) + ": frame size mismatch");
    }
}

// Backward theta-scheme on one level. Each step solves the upwind monotone
// discretization with the transport operator frozen at the current gradient
// iterate, repeating until the frame settles to inner_tol; the final frame
// therefore satisfies the fully implicit scheme up to that tolerance.
ScalarFlow hjb_on_level(const LevelContext& ctx, const ModelSpec& model,
                        const MeasureFlow& m_flow, const std::vector<double>& terminal,
                        const SolverConfig& cfg) {
    const DomainGrid& grid = *ctx.grid;
    MaskOperator op = ctx.op;  // private copy: assembly mutates matrices
    const std::size_t nloc = op.size();
    const std::size_t nt = m_flow.frames.size() - 1;
    const double dt = m_flow.dt;
    const double theta = cfg.theta_scheme;

    std::vector<std::vector<double>> S(nt + 1, std::vector<double>(nloc));
    for (std::size_t n = 0; n <= nt; ++n)
        for (std::size_t j = 0; j < nloc; ++j)
            S[n][j] = model.F(grid.nodes[op.nodes[j]], m_flow.frames[n]);
    std::vector<double> H0(nloc);
    for (std::size_t j = 0; j < nloc; ++j)
        H0[j] = model.H(grid.nodes[op.nodes[j]], {0.0, 0.0});

    std::vector<double> u(nloc);
    for (std::size_t j = 0; j < nloc; ++j) u[j] = terminal[op.nodes[j]];

    ScalarFlow out;
    out.t0 = m_flow.t0;
    out.dt = dt;
    out.frames.assign(nt + 1, {});
    out.frames[nt] = expand_full(ctx, u);

    for (std::size_t n = nt; n-- > 0;) {
        std::vector<double> base(nloc);
        if (theta < 1.0) {
            const auto pv = local_face_slopes(op, u);
            assemble_operator(op, model, pv);
            const auto Tv = op.transport.apply(u);
            for (std::size_t j = 0; j < nloc; ++j)
                base[j] = (1.0 - theta) * dt *
                          (Tv[j] - op.eo_remainder[j] - H0[j] + S[n + 1][j]);
        }
        for (std::size_t j = 0; j < nloc; ++j)
            base[j] += u[j] + theta * dt * (S[n][j] - H0[j]);

        std::vector<double> prev = u;
        std::vector<double> pbar = local_face_slopes(op, u);
        std::vector<double> deltas;
        std::vector<double> unew;
        bool settled = false;
        for (std::size_t it = 0; it < cfg.inner_iters; ++it) {
            assemble_operator(op, model, pbar);
            SpMat M = shifted_identity(op.transport, -theta * dt);
            std::vector<double> rhs = base;
            for (std::size_t j = 0; j < nloc; ++j) rhs[j] -= theta * dt * op.eo_remainder[j];
            unew = solve_sparse(M, rhs);
            double d = 0.0;
            for (std::size_t j = 0; j < nloc; ++j) d = std::max(d, std::abs(unew[j] - prev[j]));
            deltas.push_back(d);
            prev = unew;
            pbar = local_face_slopes(op, unew);
            if (d <= cfg.inner_tol) {
                settled = true;
                break;
            }
        }
        if (!settled) {
            double scale = 1.0;
            for (double v : unew) scale = std::max(scale, std::abs(v));
            if (deltas.back() > 1e-10 * scale)
                throw ConvergenceError("value step: frozen-gradient iteration stalled", deltas);
        }
        u = std::move(unew);
        out.frames[n] = expand_full(ctx, u);
    }
    return out;
}

MeasureField restrict_to_mask(const DomainGrid& grid, std::size_t level,
                              const MeasureField& m0) {
    if (m0.grid != &grid || m0.density.size() != grid.size())
        throw ValidationError("initial measure does not live on the given grid");
    MeasureField r = m0.restricted(level);
    if (!(r.mass() > 0.0))
        throw ValidationError("initial measure has no mass inside the subdomain");
    return r;
}

// Forward conservative theta-scheme on one level; the per-step face slopes
// are supplied by the caller (nodal drift vectors or stored value frames).
template <typename SlopeAt>
MeasureFlow fp_on_level(const LevelContext& ctx, const ModelSpec& model,
                        const MeasureField& m0_restricted, double t0, double dt,
                        std::size_t nt, const SolverConfig& cfg, SlopeAt&& slope_at) {
    const DomainGrid& grid = *ctx.grid;
    MaskOperator op = ctx.op;
    const std::size_t nloc = op.size();
    const double theta = cfg.theta_scheme;

    std::vector<double> mloc(nloc);
    for (std::size_t j = 0; j < nloc; ++j) mloc[j] = m0_restricted.density[op.nodes[j]];

    MeasureFlow out;
    out.t0 = t0;
    out.dt = dt;
    out.frames.assign(nt + 1, MeasureField{&grid, std::vector<double>(grid.size(), 0.0)});
    auto store = [&](std::size_t n) {
        auto& d = out.frames[n].density;
        for (std::size_t j = 0; j < nloc; ++j) d[op.nodes[j]] = mloc[j];
    };
    store(0);

    for (std::size_t n = 0; n < nt; ++n) {
        assemble_operator(op, model, slope_at(op, n));
        std::vector<double> rhs = mloc;
        if (theta < 1.0) {
            const auto Am = op.fp.apply(mloc);
            for (std::size_t j = 0; j < nloc; ++j) rhs[j] += (1.0 - theta) * dt * Am[j];
        }
        SpMat M = shifted_identity(op.fp, -theta * dt);
        mloc = solve_sparse(M, rhs);
        store(n + 1);
    }
    return out;
}

// Fixed-point gap between two density flows: sup over frames of d1.
double flow_gap(const MeasureFlow& a, const MeasureFlow& b) {
    double worst = 0.0;
    for (std::size_t n = 0; n < a.frames.size(); ++n)
        worst = std::max(worst, wasserstein1(a.frames[n], b.frames[n]));
    return worst;
}

LevelSolution picard_level(const DomainGrid& grid, std::size_t level, const ModelSpec& model,
                           double t0, const MeasureField& m0, const SolverConfig& cfg) {
    const double span = cfg.horizon - t0;
    const auto nt = static_cast<std::size_t>(std::ceil(span / cfg.dt - 1e-9));
    if (nt == 0) throw ValidationError("horizon too close to t0 for one step");
    const double dt = span / static_cast<double>(nt);

    const LevelContext ctx = make_level_context(grid, level, model);
    const MeasureField m0r = restrict_to_mask(grid, level, m0);

    MeasureFlow input;
    input.t0 = t0;
    input.dt = dt;
    input.frames.assign(nt + 1, m0r);

    auto slopes_from_u = [](const ScalarFlow& uflow) {
        return [&uflow](const MaskOperator& op, std::size_t n) {
            return face_slopes_from_field(op, uflow.frames[n]);
        };
    };

    auto terminal_for = [&](const MeasureField& m_T) {
        if (!cfg.raw_terminal) return corrected_terminal_data(grid, level, model, m_T);
        std::vector<double> g(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) g[i] = model.G(grid.nodes[i], m_T);
        return g;
    };

    std::vector<double> residuals;
    MeasureFlow raw, raw_prev;
    ScalarFlow u;
    bool converged = false;
    std::size_t iters = 0;
    for (std::size_t k = 1; k <= cfg.max_iters; ++k) {
        iters = k;
        const auto term = terminal_for(input.frames.back());
        u = hjb_on_level(ctx, model, input, term, cfg);
        raw = fp_on_level(ctx, model, m0r, t0, dt, nt, cfg, slopes_from_u(u));
        residuals.push_back(k == 1 ? flow_gap(raw, input) : flow_gap(raw, raw_prev));
        if (residuals.back() < cfg.picard_tol) {
            converged = true;
            break;
        }
        for (std::size_t n = 0; n <= nt; ++n) {
            auto& din = input.frames[n].density;
            const auto& dra = raw.frames[n].density;
            for (std::size_t i = 0; i < din.size(); ++i)
                din[i] = (1.0 - cfg.picard_damping) * din[i] + cfg.picard_damping * dra[i];
        }
        raw_prev = raw;
    }
    if (!converged)
        throw ConvergenceError("fixed point: max_iters reached without meeting picard_tol",
                               residuals);

    // Re-solve the value flow against the returned densities so the pair is
    // internally consistent and the terminal identity is exact.
    const auto term = terminal_for(raw.frames.back());
    u = hjb_on_level(ctx, model, raw, term, cfg);

    LevelSolution out;
    out.eps = grid.eps_levels[level];
    out.level = level;
    out.u = std::move(u);
    out.m = std::move(raw);
    out.picard_iters = iters;
    out.residuals = std::move(residuals);
    out.flagged = picard_residuals_flagged(out.residuals);
    return out;
}

}  // namespace

SolverConfig resolved_solver_config(const DomainGrid& grid, const ModelSpec& model,
                                    SolverConfig cfg) {
    if (!(cfg.dt > 0.0)) throw ValidationError("config: dt must be positive");
    if (!(cfg.theta_scheme > 0.0) || cfg.theta_scheme > 1.0)
        throw ValidationError("config: theta_scheme must lie in (0, 1]");
    if (!(cfg.picard_damping > 0.0) || cfg.picard_damping > 1.0)
        throw ValidationError("config: picard_damping must lie in (0, 1]");
    if (!(cfg.picard_tol > 0.0)) throw ValidationError("config: picard_tol must be positive");
    if (cfg.max_iters == 0) throw ValidationError("config: max_iters must be at least 1");
    if (cfg.inner_iters == 0) throw ValidationError("config: inner_iters must be at least 1");
    if (!(cfg.inner_tol > 0.0)) throw ValidationError("config: inner_tol must be positive");
    if (cfg.theta_scheme < 0.5) {
        double amax = 0.0;
        for (const Vec2& x : grid.nodes) {
            const Mat2 A = model.a(x);
            const double top =
                grid.dim == 1
                    ? A.xx
                    : 0.5 * (A.xx + A.yy + std::sqrt(sqr(A.xx - A.yy) + 4.0 * sqr(A.xy)));
            amax = std::max(amax, top);
        }
        if (amax > 0.0 && cfg.dt > grid.h * grid.h / (2.0 * amax) + 1e-15)
            throw ValidationError(
                "config: theta_scheme below 1/2 requires dt <= h^2 / (2 max a)");
    }
    if (cfg.p_exponent <= 0.0)
        cfg.p_exponent = (grid.dim + 2.0) / (grid.dim + 1.0 + model.alpha);
    return cfg;
}

std::size_t eps_level_index(const DomainGrid& grid, double eps) {
    for (std::size_t l = 0; l < grid.eps_levels.size(); ++l)
        if (std::abs(grid.eps_levels[l] - eps) <= 1e-12 * std::max(1.0, std::abs(eps)))
            return l;
    throw ValidationError("eps does not match any subdomain level of the grid");
}

std::vector<int> nearest_mask_nodes(const DomainGrid& grid, std::size_t level) {
    const auto& mask = grid.mask(level);
    std::vector<int> from(grid.size(), -1);
    std::vector<int> queue;
    queue.reserve(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (mask[i]) {
            from[i] = static_cast<int>(i);
            queue.push_back(static_cast<int>(i));
        }
    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
        const int u = queue[qi];
        for (int v : grid.neighbors(u)) {
            if (v < 0 || from[v] >= 0) continue;
            from[v] = from[u];
            queue.push_back(v);
        }
    }
    return from;
}

std::vector<double> conormal_flux_correction(const DomainGrid& grid, std::size_t level,
                                             const ModelSpec& model,
                                             const std::vector<double>& data) {
    const auto bnodes = grid.mask_boundary_nodes(level);
    const auto grad = field_gradient(grid, data);
    std::vector<double> f(bnodes.size()), ann(bnodes.size());
    for (std::size_t k = 0; k < bnodes.size(); ++k) {
        const int b = bnodes[k];
        Vec2 nu{-grid.grad_dist[b].x, -grid.grad_dist[b].y};
        const double len = std::sqrt(dot(nu, nu));
        if (len < 1e-12) {
            f[k] = 0.0;
            ann[k] = 1.0;
            continue;
        }
        nu.x /= len;
        nu.y /= len;
        const Mat2 A = model.a(grid.nodes[b]);
        f[k] = dot(matvec(A, grad[b]), nu);
        ann[k] = std::max(dot(nu, matvec(A, nu)), 1e-300);
    }
    return neumann_extension(grid, level, f, ann);
}

std::vector<double> corrected_terminal_data(const DomainGrid& grid, std::size_t level,
                                            const ModelSpec& model, const MeasureField& m_T) {
    std::vector<double> g(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) g[i] = model.G(grid.nodes[i], m_T);
    const auto ext = conormal_flux_correction(grid, level, model, g);
    for (std::size_t i = 0; i < grid.size(); ++i) g[i] -= ext[i];
    return g;
}

ScalarFlow solve_hjb_neumann(const DomainGrid& grid, double eps, const ModelSpec& model,
                             const MeasureFlow& m_flow, const std::vector<double>& terminal,
                             const SolverConfig& config) {
    const std::size_t level = eps_level_index(grid, eps);
    check_flow_shape(grid, m_flow, "value solve");
    if (terminal.size() != grid.size())
        throw ValidationError("value solve: terminal field size mismatch");
    SolverConfig cfg = config;
    cfg.dt = m_flow.dt;  // the flow's time grid governs
    cfg = resolved_solver_config(grid, model, cfg);
    const LevelContext ctx = make_level_context(grid, level, model);
    return hjb_on_level(ctx, model, m_flow, terminal, cfg);
}

MeasureFlow solve_fp_neumann(const DomainGrid& grid, double eps, const ModelSpec& model,
                             const VectorFlow& drift, const MeasureField& m0,
                             const SolverConfig& config) {
    const std::size_t level = eps_level_index(grid, eps);
    if (drift.frames.size() < 2)
        throw ValidationError("density solve: need at least two drift frames");
    if (!(drift.dt > 0.0)) throw ValidationError("density solve: dt must be positive");
    for (const auto& fr : drift.frames)
        if (fr.size() != grid.size())
            throw ValidationError("density solve: drift frame size mismatch");
    SolverConfig cfg = config;
    cfg.dt = drift.dt;
    cfg = resolved_solver_config(grid, model, cfg);
    const LevelContext ctx = make_level_context(grid, level, model);
    const MeasureField m0r = restrict_to_mask(grid, level, m0);
    return fp_on_level(ctx, model, m0r, drift.t0, drift.dt, drift.frames.size() - 1, cfg,
                       [&drift](const MaskOperator& op, std::size_t n) {
                           return face_slopes_from_vectors(op, drift.frames[n]);
                       });
}

MeasureFlow solve_fp_neumann(const DomainGrid& grid, double eps, const ModelSpec& model,
                             const ScalarFlow& value_flow, const MeasureField& m0,
                             const SolverConfig& config) {
    const std::size_t level = eps_level_index(grid, eps);
    if (value_flow.frames.size() < 2)
        throw ValidationError("density solve: need at least two value frames");
    if (!(value_flow.dt > 0.0)) throw ValidationError("density solve: dt must be positive");
    for (const auto& fr : value_flow.frames)
        if (fr.size() != grid.size())
            throw ValidationError("density solve: value frame size mismatch");
    SolverConfig cfg = config;
    cfg.dt = value_flow.dt;
    cfg = resolved_solver_config(grid, model, cfg);
    const LevelContext ctx = make_level_context(grid, level, model);
    const MeasureField m0r = restrict_to_mask(grid, level, m0);
    return fp_on_level(ctx, model, m0r, value_flow.t0, value_flow.dt,
                       value_flow.frames.size() - 1, cfg,
                       [&value_flow](const MaskOperator& op, std::size_t n) {
                           return face_slopes_from_field(op, value_flow.frames[n]);
                       });
}

MFGSolution solve_mfg(const DomainGrid& grid, const ModelSpec& model, double t0,
                      const MeasureField& m0, const SolverConfig& config) {
    const SolverConfig cfg = resolved_solver_config(grid, model, config);
    if (!(cfg.horizon > t0)) throw ValidationError("solve: horizon must exceed t0");
    validate_probability(m0);
    if (m0.grid != &grid) throw ValidationError("solve: m0 does not live on the given grid");
    const ModelValidation val = validate_model(grid, model);
    if (!val.ok) {
        std::string msg = "solve: model failed validation:";
        for (const auto& s : val.failures) msg += " [" + s + "]";
        throw ValidationError(msg);
    }

    MFGSolution sol;
    for (std::size_t level = 0; level < grid.eps_levels.size(); ++level)
        sol.levels.push_back(picard_level(grid, level, model, t0, m0, cfg));

    const LevelSolution& finest = sol.levels.back();
    sol.u = finest.u;
    sol.m = finest.m;
    sol.eps_used = grid.eps_levels;
    sol.picard_iters = finest.picard_iters;
    sol.residuals = finest.residuals;
    sol.flagged = false;
    for (const auto& lv : sol.levels) sol.flagged = sol.flagged || lv.flagged;
    return sol;
}

LevelSolution solve_mfg_level(const DomainGrid& grid, double eps, const ModelSpec& model,
                              double t0, const MeasureField& m0, const SolverConfig& config) {
    const std::size_t level = eps_level_index(grid, eps);
    const SolverConfig cfg = resolved_solver_config(grid, model, config);
    if (!(cfg.horizon > t0)) throw ValidationError("solve: horizon must exceed t0");
    validate_probability(m0);
    if (m0.grid != &grid) throw ValidationError("solve: m0 does not live on the given grid");
    return picard_level(grid, level, model, t0, m0, cfg);
}

bool picard_residuals_flagged(const std::vector<double>& residuals) {
    for (std::size_t i = 3; i < residuals.size(); ++i)
        if (residuals[i] > residuals[i - 1]) return true;
    return false;
}

double lasry_lions_gap(const MFGSolution& sol1, const MFGSolution& sol2,
                       const ModelSpec& model) {
    if (sol1.m.frames.empty() || sol2.m.frames.empty())
        throw ValidationError("gap: empty solutions");
    const DomainGrid* grid = sol1.m.frames.front().grid;
    if (grid == nullptr || sol2.m.frames.front().grid != grid)
        throw ValidationError("gap: solutions live on different grids");
    const std::size_t nt = sol1.m.frames.size() - 1;
    if (sol2.m.frames.size() != nt + 1 || sol1.u.frames.size() != nt + 1 ||
        sol2.u.frames.size() != nt + 1)
        throw ValidationError("gap: frame counts differ");
    const double dt = sol1.m.dt;
    const auto& mask = grid->masks.back();

    std::vector<std::vector<Vec2>> grads1(nt + 1), grads2(nt + 1);
    for (std::size_t n = 0; n <= nt; ++n) {
        grads1[n] = field_gradient(*grid, sol1.u.frames[n], &mask);
        grads2[n] = field_gradient(*grid, sol2.u.frames[n], &mask);
    }

    // cross-term of the ordered pair (A carries the measure, B the compared
    // gradient): integral of H(x,DuB) - H(x,DuA) - Hp(x,DuA).(DuB - DuA) dmA
    auto cross = [&](const MFGSolution& A, const std::vector<std::vector<Vec2>>& gA,
                     const std::vector<std::vector<Vec2>>& gB) {
        double total = 0.0;
        for (std::size_t n = 0; n <= nt; ++n) {
            const double wt = (n == 0 || n == nt) ? 0.5 : 1.0;
            double frame = 0.0;
            for (std::size_t i = 0; i < grid->size(); ++i) {
                if (!mask[i]) continue;
                const double mi = A.m.frames[n].density[i];
                if (mi == 0.0) continue;
                const Vec2 x = grid->nodes[i];
                const Vec2 pa = gA[n][i], pb = gB[n][i];
                const double val = model.H(x, pb) - model.H(x, pa) -
                                   dot(model.Hp(x, pa), Vec2{pb.x - pa.x, pb.y - pa.y});
                frame += val * mi * grid->quad_weights[i];
            }
            total += wt * dt * frame;
        }
        return total;
    };

    const double lhs = cross(sol1, grads1, grads2) + cross(sol2, grads2, grads1);
    double rhs = 0.0;
    for (std::size_t i = 0; i < grid->size(); ++i)
        rhs += (sol1.u.frames[0][i] - sol2.u.frames[0][i]) *
               (sol1.m.frames[0].density[i] - sol2.m.frames[0].density[i]) *
               grid->quad_weights[i];
    return rhs - lhs;
}

StabilityReport stability_constants(const DomainGrid& grid, const ModelSpec& model,
                                    const std::vector<std::pair<MeasureField, MeasureField>>& pairs,
                                    const SolverConfig& config) {
    const SolverConfig cfg = resolved_solver_config(grid, model, config);
    StabilityReport rep;
    // The value norm is measured one layer level in: the solve's no-flux edge
    // carries a mesh-width numerical layer whose second differences do not
    // settle under refinement, while the next subdomain keeps a fixed
    // physical margin from that edge.
    const std::size_t nlevels = grid.eps_levels.size();
    const auto& mask = grid.mask(nlevels >= 2 ? nlevels - 2 : nlevels - 1);
    for (const auto& pr : pairs) {
        const double d0 = wasserstein1(pr.first, pr.second);
        if (d0 < 1e-14) {
            ++rep.pairs_skipped;
            continue;
        }
        const MFGSolution s1 = solve_mfg(grid, model, 0.0, pr.first, cfg);
        const MFGSolution s2 = solve_mfg(grid, model, 0.0, pr.second, cfg);
        const std::size_t nt = s1.m.frames.size() - 1;
        double sup_d1 = 0.0;
        for (std::size_t n = 0; n <= nt; ++n)
            sup_d1 = std::max(sup_d1, wasserstein1(s1.m.frames[n], s2.m.frames[n]));
        double sup_u = 0.0;
        std::vector<double> diff(grid.size());
        for (std::size_t n = 0; n <= nt; ++n) {
            for (std::size_t i = 0; i < grid.size(); ++i)
                diff[i] = s1.u.frames[n][i] - s2.u.frames[n][i];
            sup_u = std::max(sup_u, holder_norm_2a(grid, diff, model.alpha, &mask).total);
        }
        StabilityPair sp;
        sp.d1_initial = d0;
        sp.ratio_m = sup_d1 / d0;
        sp.ratio_u = sup_d1 > 0.0 ? sup_u / sup_d1 : 0.0;
        rep.pairs.push_back(sp);
        ++rep.pairs_used;
        rep.ratio_m = std::max(rep.ratio_m, sp.ratio_m);
        rep.ratio_u = std::max(rep.ratio_u, sp.ratio_u);
    }
    return rep;
}

}  // namespace mfg
