#include "mfg/nash.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <utility>

#include "mfg/core.hpp"
#include "mfg/operators.hpp"
#include "mfg/rng.hpp"

namespace mfg {

namespace {

// ---------------------------------------------------------------- geometry

// The one axis every player lives on: the finest subdomain mask of a 1D
// grid, with its operator skeleton and the zero-gradient Hamiltonian values.
struct AxisContext {
    const DomainGrid* grid = nullptr;
    std::size_t level = 0;
    MaskOperator op;
    std::vector<int> axis_nodes;
    std::vector<double> axis_x;
    std::vector<double> H0;
};

AxisContext make_axis_context(const DomainGrid& grid, const ModelSpec& model) {
    AxisContext ax;
    ax.grid = &grid;
    ax.level = grid.eps_levels.size() - 1;
    ax.op = make_mask_skeleton(grid, ax.level, model);
    const std::size_t nloc = ax.op.size();
    if (nloc < 2) throw ValidationError("player solve: axis mask has fewer than two nodes");
    if (ax.op.faces.size() != nloc - 1)
        throw ValidationError("player solve: axis mask is not contiguous");
    for (std::size_t k = 0; k + 1 < nloc; ++k)
        if (ax.op.faces[k].li != static_cast<int>(k) ||
            ax.op.faces[k].lj != static_cast<int>(k + 1))
            throw ValidationError("player solve: axis mask is not contiguous");
    ax.axis_nodes.assign(ax.op.nodes.begin(), ax.op.nodes.end());
    ax.axis_x.resize(nloc);
    ax.H0.resize(nloc);
    for (std::size_t k = 0; k < nloc; ++k) {
        ax.axis_x[k] = grid.nodes[ax.axis_nodes[k]].x;
        ax.H0[k] = model.H(grid.nodes[ax.axis_nodes[k]], {0.0, 0.0});
    }
    return ax;
}

void validate_player_setup(const DomainGrid& grid, int players, const SolverConfig& cfg) {
    if (grid.dim != 1) throw ValidationError("player solve: one-dimensional grids only");
    if (players < 2 || players > 4)
        throw ValidationError("player solve: player count must be 2, 3, or 4");
    if (cfg.theta_scheme != 1.0)
        throw ValidationError("player solve: fully implicit stepping required");
    double states = 1.0;
    for (int p = 0; p < players; ++p) states *= static_cast<double>(grid.nx);
    if (states > 2e6)
        throw ValidationError("player solve: state tensor exceeds the 2e6 budget");
}

std::size_t snapped_steps(const SolverConfig& cfg) {
    const auto nt = static_cast<std::size_t>(std::ceil(cfg.horizon / cfg.dt - 1e-9));
    if (nt == 0) throw ValidationError("player solve: horizon too short for one step");
    return nt;
}

// ------------------------------------------------------------ combinatorics

// Ordered others-tuples mapped to their multiset rank, the orbit sizes, and
// one ascending representative per rank.
struct RankTables {
    std::vector<std::uint32_t> rank_of_others;  // others-tuple index -> rank
    std::vector<std::uint32_t> orbit_count;
    std::vector<std::vector<int>> tuple_of_rank;
};

RankTables make_rank_tables(const NashLayout& layout) {
    RankTables rt;
    const int no = layout.players - 1;
    std::size_t total = 1;
    for (int t = 0; t < no; ++t) total *= layout.nloc;
    rt.rank_of_others.resize(total);
    rt.orbit_count.assign(layout.multisets, 0);
    rt.tuple_of_rank.assign(layout.multisets, {});
    std::vector<int> digits(no);
    for (std::size_t o = 0; o < total; ++o) {
        std::size_t rest = o;
        for (int t = 0; t < no; ++t) {
            digits[t] = static_cast<int>(rest % layout.nloc);
            rest /= layout.nloc;
        }
        std::sort(digits.begin(), digits.end());
        const std::size_t r = layout.rank_sorted(digits.data());
        rt.rank_of_others[o] = static_cast<std::uint32_t>(r);
        if (rt.orbit_count[r]++ == 0) rt.tuple_of_rank[r] = digits;
    }
    return rt;
}

// Per-multiset lines of the running and terminal couplings at the empirical
// measure of the others; both are independent of time.
struct CouplingCache {
    std::vector<double> F_line;  // [rank * nloc + own]
    std::vector<double> G_line;
};

MeasureField empirical_of_tuple(const DomainGrid& grid, const AxisContext& ax,
                                const std::vector<int>& tuple) {
    EmpiricalConfig ec;
    ec.points.reserve(tuple.size());
    for (int s : tuple) ec.points.push_back(grid.nodes[ax.axis_nodes[s]]);
    return empirical_measure(grid, ec);
}

CouplingCache make_coupling_cache(const DomainGrid& grid, const ModelSpec& model,
                                  const AxisContext& ax, const NashLayout& layout,
                                  const RankTables& rt) {
    CouplingCache cc;
    const std::size_t nloc = layout.nloc;
    cc.F_line.resize(layout.multisets * nloc);
    cc.G_line.resize(layout.multisets * nloc);
    for (std::size_t r = 0; r < layout.multisets; ++r) {
        const MeasureField emp = empirical_of_tuple(grid, ax, rt.tuple_of_rank[r]);
        for (std::size_t k = 0; k < nloc; ++k) {
            const Vec2 x = grid.nodes[ax.axis_nodes[k]];
            cc.F_line[r * nloc + k] = model.F(x, emp);
            cc.G_line[r * nloc + k] = model.G(x, emp);
        }
    }
    return cc;
}

// ----------------------------------------------------- canonical compression

void decompress(const NashLayout& layout, const RankTables& rt,
                const std::vector<double>& canon, std::vector<double>& full) {
    const std::size_t nloc = layout.nloc;
    full.resize(nloc * rt.rank_of_others.size());
    std::size_t idx = 0;
    for (std::size_t o = 0; o < rt.rank_of_others.size(); ++o) {
        const double* line = canon.data() + static_cast<std::size_t>(rt.rank_of_others[o]) * nloc;
        for (std::size_t k = 0; k < nloc; ++k) full[idx++] = line[k];
    }
}

// Orbit means into canon; returns the worst asymmetry the full tensor had.
double compress(const NashLayout& layout, const RankTables& rt,
                const std::vector<double>& full, std::vector<double>& canon) {
    const std::size_t nloc = layout.nloc;
    canon.assign(layout.size(), 0.0);
    std::size_t idx = 0;
    for (std::size_t o = 0; o < rt.rank_of_others.size(); ++o) {
        double* line = canon.data() + static_cast<std::size_t>(rt.rank_of_others[o]) * nloc;
        for (std::size_t k = 0; k < nloc; ++k) line[k] += full[idx++];
    }
    for (std::size_t r = 0; r < layout.multisets; ++r) {
        const double inv = 1.0 / static_cast<double>(rt.orbit_count[r]);
        for (std::size_t k = 0; k < nloc; ++k) canon[r * nloc + k] *= inv;
    }
    double defect = 0.0;
    idx = 0;
    for (std::size_t o = 0; o < rt.rank_of_others.size(); ++o) {
        const double* line = canon.data() + static_cast<std::size_t>(rt.rank_of_others[o]) * nloc;
        for (std::size_t k = 0; k < nloc; ++k)
            defect = std::max(defect, std::abs(full[idx++] - line[k]));
    }
    return defect;
}

// ------------------------------------------------------------- line algebra

// One-axis workhorse: assembles the mask operator at given face slopes and
// solves (I - dt transport) along the line by the Thomas algorithm.
struct LineSolver {
    const ModelSpec* model = nullptr;
    MaskOperator op;  // private copy, assembly mutates the matrices
    double dt = 0.0;
    std::vector<double> facep, lo, di, up, d2, rhs, gat, Ty;

    LineSolver(const AxisContext& ax, const ModelSpec& m, double dt_)
        : model(&m), op(ax.op), dt(dt_) {
        const std::size_t n = op.size();
        facep.assign(n - 1, 0.0);
        lo.assign(n, 0.0);
        di.assign(n, 0.0);
        up.assign(n, 0.0);
        d2 = di;
        rhs = di;
        gat = di;
        Ty = di;
    }

    void assemble() { assemble_operator(op, *model, facep); }

    // Loads I - dt * transport from the assembled operator.
    void load_matrix() {
        const SpMat& T = op.transport;
        const std::size_t n = op.size();
        for (std::size_t i = 0; i < n; ++i) {
            lo[i] = 0.0;
            di[i] = 1.0;
            up[i] = 0.0;
        }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = T.row_ptr[i]; k < T.row_ptr[i + 1]; ++k) {
                const std::size_t j = T.col[k];
                const double v = -dt * T.val[k];
                if (j == i)
                    di[i] += v;
                else if (j + 1 == i)
                    lo[i] = v;
                else if (j == i + 1)
                    up[i] = v;
                else
                    throw ValidationError("player solve: axis operator is not tridiagonal");
            }
    }

    void solve_inplace(std::vector<double>& b) {
        const std::size_t n = op.size();
        d2 = di;
        for (std::size_t i = 1; i < n; ++i) {
            const double w = lo[i] / d2[i - 1];
            d2[i] -= w * up[i - 1];
            b[i] -= w * b[i - 1];
        }
        b[n - 1] /= d2[n - 1];
        for (std::size_t i = n - 1; i-- > 0;) b[i] = (b[i] - up[i] * b[i + 1]) / d2[i];
    }
};

// One implicit time step by dimensional splitting, every gradient frozen at
// src. The own axis solves the Hamiltonian step with its running-cost source;
// each other axis solves the advection-diffusion its player's own gradient
// induces, the gradient read by swapping that axis with the own one.
void split_step(const AxisContext& ax, const NashLayout& layout, const RankTables& rt,
                const CouplingCache& cc, double dt, const std::vector<double>& next,
                const std::vector<double>& src, LineSolver& ls, std::vector<double>& out) {
    const std::size_t nloc = layout.nloc;
    const std::size_t lines = rt.rank_of_others.size();
    const double h = ax.op.h;
    out = next;

    for (std::size_t outer = 0; outer < lines; ++outer) {
        const std::size_t base = outer * nloc;
        for (std::size_t f = 0; f + 1 < nloc; ++f)
            ls.facep[f] = (src[base + f + 1] - src[base + f]) / h;
        ls.assemble();
        ls.load_matrix();
        const double* Fl =
            cc.F_line.data() + static_cast<std::size_t>(rt.rank_of_others[outer]) * nloc;
        auto& b = ls.rhs;
        for (std::size_t k = 0; k < nloc; ++k)
            b[k] = out[base + k] + dt * (Fl[k] - ax.H0[k] - ls.op.eo_remainder[k]);
        ls.solve_inplace(b);
        for (std::size_t k = 0; k < nloc; ++k) out[base + k] = b[k];
    }

    std::size_t stride = nloc;
    for (int a = 1; a < layout.players; ++a) {
        for (std::size_t outer = 0; outer < lines; ++outer) {
            const std::size_t low = outer % stride;
            const std::size_t high = outer / stride;
            const std::size_t base = high * stride * nloc + low;
            const std::size_t c0 = base % nloc;
            const std::size_t swapbase = base - c0 + c0 * stride;
            for (std::size_t f = 0; f + 1 < nloc; ++f)
                ls.facep[f] = (src[swapbase + f + 1] - src[swapbase + f]) / h;
            ls.assemble();
            ls.load_matrix();
            auto& b = ls.rhs;
            for (std::size_t k = 0; k < nloc; ++k) b[k] = out[base + k * stride];
            ls.solve_inplace(b);
            for (std::size_t k = 0; k < nloc; ++k) out[base + k * stride] = b[k];
        }
        stride *= nloc;
    }
}

// Defect of the unsplit implicit step identity on two consecutive frames:
// (u^n - u^{n+1})/dt minus every axis operator at u^n's gradients, plus the
// Hamiltonian remainder and the source terms of the own axis.
void scheme_defect(const AxisContext& ax, const NashLayout& layout, const RankTables& rt,
                   const CouplingCache& cc, double dt, const std::vector<double>& uf,
                   const std::vector<double>& ufn, LineSolver& ls, std::vector<double>& r) {
    const std::size_t nloc = layout.nloc;
    const std::size_t lines = rt.rank_of_others.size();
    const double h = ax.op.h;
    r.resize(uf.size());
    for (std::size_t i = 0; i < uf.size(); ++i) r[i] = (uf[i] - ufn[i]) / dt;

    for (std::size_t outer = 0; outer < lines; ++outer) {
        const std::size_t base = outer * nloc;
        for (std::size_t f = 0; f + 1 < nloc; ++f)
            ls.facep[f] = (uf[base + f + 1] - uf[base + f]) / h;
        ls.assemble();
        for (std::size_t k = 0; k < nloc; ++k) ls.gat[k] = uf[base + k];
        ls.op.transport.apply(ls.gat.data(), ls.Ty.data());
        const double* Fl =
            cc.F_line.data() + static_cast<std::size_t>(rt.rank_of_others[outer]) * nloc;
        for (std::size_t k = 0; k < nloc; ++k)
            r[base + k] += -ls.Ty[k] + ls.op.eo_remainder[k] + ax.H0[k] - Fl[k];
    }

    std::size_t stride = nloc;
    for (int a = 1; a < layout.players; ++a) {
        for (std::size_t outer = 0; outer < lines; ++outer) {
            const std::size_t low = outer % stride;
            const std::size_t high = outer / stride;
            const std::size_t base = high * stride * nloc + low;
            const std::size_t c0 = base % nloc;
            const std::size_t swapbase = base - c0 + c0 * stride;
            for (std::size_t f = 0; f + 1 < nloc; ++f)
                ls.facep[f] = (uf[swapbase + f + 1] - uf[swapbase + f]) / h;
            ls.assemble();
            for (std::size_t k = 0; k < nloc; ++k) ls.gat[k] = uf[base + k * stride];
            ls.op.transport.apply(ls.gat.data(), ls.Ty.data());
            for (std::size_t k = 0; k < nloc; ++k) r[base + k * stride] -= ls.Ty[k];
        }
        stride *= nloc;
    }
}

std::vector<int> others_of(const std::vector<int>& slots, int player) {
    std::vector<int> others;
    others.reserve(slots.size() - 1);
    for (std::size_t p = 0; p < slots.size(); ++p)
        if (static_cast<int>(p) != player) others.push_back(slots[p]);
    return others;
}

void check_state(const NashLayout& layout, int player, const std::vector<int>& slots,
                 const char* what) {
    if (player < 0 || player >= layout.players)
        throw ValidationError(std::string(what) + ": no such player");
    if (slots.size() != static_cast<std::size_t>(layout.players))
        throw ValidationError(std::string(what) + ": need one slot per player");
    for (int s : slots)
        if (s < 0 || static_cast<std::size_t>(s) >= layout.nloc)
            throw ValidationError(std::string(what) + ": slot outside the axis");
}

}  // namespace

// ------------------------------------------------------------------ layout

NashLayout make_nash_layout(int players, std::size_t nloc) {
    NashLayout l;
    l.players = players;
    l.nloc = nloc;
    const std::size_t top = nloc + static_cast<std::size_t>(players);
    l.choose.assign(top + 1, std::vector<std::size_t>(players, 0));
    for (std::size_t r = 0; r <= top; ++r) {
        l.choose[r][0] = 1;
        for (int k = 1; k < players; ++k)
            l.choose[r][k] =
                r == 0 ? 0 : l.choose[r - 1][k - 1] + l.choose[r - 1][k];
    }
    l.multisets = l.choose[nloc + players - 2][players - 1];
    return l;
}

std::size_t NashLayout::rank_sorted(const int* others) const {
    std::size_t r = 0;
    for (int t = 1; t < players; ++t)
        r += choose[static_cast<std::size_t>(others[t - 1]) + t - 1][t];
    return r;
}

std::size_t NashLayout::index(int own, std::vector<int> others) const {
    std::sort(others.begin(), others.end());
    return static_cast<std::size_t>(own) + nloc * rank_sorted(others.data());
}

// ------------------------------------------------------------- value tensor

double NashTensor::value(std::size_t frame, int player, const std::vector<int>& slots) const {
    if (frame >= values.size()) throw ValidationError("player value: frame out of range");
    check_state(layout, player, slots, "player value");
    return values[frame][layout.index(slots[player], others_of(slots, player))];
}

double NashTensor::interpolate(std::size_t frame, int player,
                               const std::vector<double>& xs) const {
    if (frame >= values.size()) throw ValidationError("player value: frame out of range");
    if (player < 0 || player >= players)
        throw ValidationError("player value: no such player");
    if (xs.size() != static_cast<std::size_t>(players))
        throw ValidationError("player value: need one position per player");
    const std::size_t nloc = layout.nloc;
    std::vector<int> cell(players);
    std::vector<double> frac(players);
    for (int p = 0; p < players; ++p) {
        double t = (xs[p] - axis_x.front()) / h;
        t = std::min(std::max(t, 0.0), static_cast<double>(nloc - 1));
        int c = static_cast<int>(t);
        c = std::min(c, static_cast<int>(nloc) - 2);
        cell[p] = c;
        frac[p] = t - c;
    }
    double acc = 0.0;
    std::vector<int> slots(players);
    for (unsigned corner = 0; corner < (1u << players); ++corner) {
        double wgt = 1.0;
        for (int p = 0; p < players; ++p) {
            const bool hi = (corner >> p) & 1u;
            slots[p] = cell[p] + (hi ? 1 : 0);
            wgt *= hi ? frac[p] : 1.0 - frac[p];
        }
        if (wgt == 0.0) continue;
        acc += wgt * value(frame, player, slots);
    }
    return acc;
}

double NashTensor::own_gradient(std::size_t frame, int player,
                                const std::vector<int>& slots) const {
    if (frame >= values.size()) throw ValidationError("player value: frame out of range");
    check_state(layout, player, slots, "player value");
    const int k = slots[player];
    const int klo = std::max(k - 1, 0);
    const int khi = std::min(k + 1, static_cast<int>(layout.nloc) - 1);
    std::vector<int> a = slots, b = slots;
    a[player] = klo;
    b[player] = khi;
    return (value(frame, player, b) - value(frame, player, a)) /
           (static_cast<double>(khi - klo) * h);
}

// -------------------------------------------------------------- player solve

NashTensor solve_nash(const DomainGrid& grid, const ModelSpec& model, int players,
                      const SolverConfig& config) {
    const SolverConfig cfg = resolved_solver_config(grid, model, config);
    validate_player_setup(grid, players, cfg);

    const AxisContext ax = make_axis_context(grid, model);
    const std::size_t nloc = ax.op.size();
    const std::size_t nt = snapped_steps(cfg);
    const double dt = cfg.horizon / static_cast<double>(nt);

    NashTensor out;
    out.players = players;
    out.t0 = 0.0;
    out.dt = dt;
    out.h = ax.op.h;
    out.axis_nodes = ax.axis_nodes;
    out.axis_x = ax.axis_x;
    out.layout = make_nash_layout(players, nloc);
    const RankTables rt = make_rank_tables(out.layout);
    const CouplingCache cc = make_coupling_cache(grid, model, ax, out.layout, rt);

    out.values.assign(nt + 1, {});
    out.values[nt] = cc.G_line;  // terminal values are the coupling itself

    LineSolver ls(ax, model, dt);
    std::vector<double> V, V_cur, V_new;
    decompress(out.layout, rt, out.values[nt], V);

    const double gamma = cfg.picard_damping;
    for (std::size_t n = nt; n-- > 0;) {
        V_cur = V;
        std::vector<double> deltas;
        bool settled = false;
        for (std::size_t it = 0; it < cfg.inner_iters; ++it) {
            split_step(ax, out.layout, rt, cc, dt, V, V_cur, ls, V_new);
            double d = 0.0;
            for (std::size_t i = 0; i < V_new.size(); ++i)
                d = std::max(d, std::abs(V_new[i] - V_cur[i]));
            deltas.push_back(d);
            if (d <= cfg.inner_tol) {
                settled = true;
                break;
            }
            for (std::size_t i = 0; i < V_cur.size(); ++i)
                V_cur[i] = (1.0 - gamma) * V_cur[i] + gamma * V_new[i];
        }
        if (!settled) {
            double scale = 1.0;
            for (double v : V_new) scale = std::max(scale, std::abs(v));
            if (deltas.back() > 1e-10 * scale)
                throw ConvergenceError("player step: coupling iteration stalled", deltas);
        }
        out.max_step_sweeps = std::max(out.max_step_sweeps, deltas.size());
        const double defect = compress(out.layout, rt, V_new, out.values[n]);
        out.exchange_defect = std::max(out.exchange_defect, defect);
        decompress(out.layout, rt, out.values[n], V);
    }
    return out;
}

// --------------------------------------------------------------- projection

double ProjectionTensor::value(std::size_t frame, int player,
                               const std::vector<int>& slots) const {
    const auto it = std::find(frame_ids.begin(), frame_ids.end(), frame);
    if (it == frame_ids.end())
        throw ValidationError("projection value: frame was not retained");
    check_state(layout, player, slots, "projection value");
    const std::size_t fi = static_cast<std::size_t>(it - frame_ids.begin());
    return values[fi][layout.index(slots[player], others_of(slots, player))];
}

ProjectionTensor project_master(const DomainGrid& grid, const ModelSpec& model, int players,
                                const std::vector<std::size_t>& t_nodes,
                                const SolverConfig& config) {
    const SolverConfig cfg = resolved_solver_config(grid, model, config);
    validate_player_setup(grid, players, cfg);

    const AxisContext ax = make_axis_context(grid, model);
    const std::size_t nloc = ax.op.size();
    const std::size_t nt = snapped_steps(cfg);
    const double dt = cfg.horizon / static_cast<double>(nt);

    std::vector<std::size_t> frames = t_nodes;
    if (frames.empty())
        for (std::size_t f = 0; f <= nt; ++f) frames.push_back(f);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (frames[i] > nt)
            throw ValidationError("projection: frame outside the time grid");
        if (i > 0 && frames[i] <= frames[i - 1])
            throw ValidationError("projection: frames must be strictly ascending");
    }

    ProjectionTensor out;
    out.players = players;
    out.t0 = 0.0;
    out.dt = dt;
    out.h = ax.op.h;
    out.axis_nodes = ax.axis_nodes;
    out.axis_x = ax.axis_x;
    out.layout = make_nash_layout(players, nloc);
    out.frame_ids = frames;
    const RankTables rt = make_rank_tables(out.layout);
    const CouplingCache cc = make_coupling_cache(grid, model, ax, out.layout, rt);

    SolverConfig sub = cfg;
    sub.raw_terminal = true;  // match the player system's terminal data
    sub.dt = dt;
    const double eps_fine = grid.eps_levels.back();

    out.values.assign(frames.size(), {});
    for (std::size_t fi = 0; fi < frames.size(); ++fi) {
        const std::size_t f = frames[fi];
        if (f == nt) {
            out.values[fi] = cc.G_line;
            continue;
        }
        out.values[fi].assign(out.layout.size(), 0.0);
        const double tf = static_cast<double>(f) * dt;
        for (std::size_t r = 0; r < out.layout.multisets; ++r) {
            const MeasureField emp = empirical_of_tuple(grid, ax, rt.tuple_of_rank[r]);
            const LevelSolution sol = solve_mfg_level(grid, eps_fine, model, tf, emp, sub);
            for (std::size_t k = 0; k < nloc; ++k)
                out.values[fi][r * nloc + k] = sol.u.frames[0][ax.axis_nodes[k]];
        }
    }

    LineSolver ls(ax, model, dt);
    std::vector<double> uf, ufn, rfull;
    for (std::size_t fi = 0; fi + 1 < frames.size(); ++fi) {
        if (frames[fi] + 1 != frames[fi + 1]) continue;
        decompress(out.layout, rt, out.values[fi], uf);
        decompress(out.layout, rt, out.values[fi + 1], ufn);
        scheme_defect(ax, out.layout, rt, cc, dt, uf, ufn, ls, rfull);
        double sup = 0.0;
        for (double v : rfull) sup = std::max(sup, std::abs(v));
        out.residual_sup = std::max(out.residual_sup, sup);
        out.residual_frame_ids.push_back(frames[fi]);
        out.residual.emplace_back();
        compress(out.layout, rt, rfull, out.residual.back());
    }
    return out;
}

// ---------------------------------------------------------------- gap study

NashStudy convergence_study(const DomainGrid& grid, const ModelSpec& model,
                            const std::vector<int>& players_list, const MeasureField& m0,
                            std::size_t samples, std::uint64_t seed,
                            const SolverConfig& config) {
    if (players_list.empty())
        throw ValidationError("gap study: need at least one player count");
    for (std::size_t i = 0; i < players_list.size(); ++i) {
        if (players_list[i] < 2 || players_list[i] > 4)
            throw ValidationError("gap study: player counts must be 2, 3, or 4");
        if (i > 0 && players_list[i] <= players_list[i - 1])
            throw ValidationError("gap study: player counts must be ascending");
    }
    if (samples < 1000) throw ValidationError("gap study: need at least 1000 samples");
    if (m0.grid != &grid || m0.density.size() != grid.size())
        throw ValidationError("gap study: the start measure does not live on the grid");
    validate_probability(m0);
    const SolverConfig cfg = resolved_solver_config(grid, model, config);

    NashStudy study;
    study.seed = seed;
    study.samples = samples;

    const double eps_fine = grid.eps_levels.back();
    for (const int N : players_list) {
        const NashTensor nash = solve_nash(grid, model, N, cfg);
        const std::size_t nt = nash.frames() - 1;
        const std::size_t nloc = nash.layout.nloc;

        std::vector<std::size_t> probe_frames = {0};
        if (nt / 2 != 0) probe_frames.push_back(nt / 2);

        SolverConfig sub = cfg;
        sub.raw_terminal = true;
        sub.dt = nash.dt;

        std::unordered_map<std::uint64_t, std::vector<double>> ucache;
        auto uline = [&](std::size_t f, const std::vector<int>& sorted_others)
            -> const std::vector<double>& {
            const std::size_t rank = nash.layout.rank_sorted(sorted_others.data());
            const std::uint64_t key = (static_cast<std::uint64_t>(f) << 32) | rank;
            const auto it = ucache.find(key);
            if (it != ucache.end()) return it->second;
            EmpiricalConfig ec;
            for (int s : sorted_others) ec.points.push_back(grid.nodes[nash.axis_nodes[s]]);
            const MeasureField emp = empirical_measure(grid, ec);
            const LevelSolution sol = solve_mfg_level(
                grid, eps_fine, model, static_cast<double>(f) * nash.dt, emp, sub);
            std::vector<double> line(nloc);
            for (std::size_t k = 0; k < nloc; ++k)
                line[k] = sol.u.frames[0][nash.axis_nodes[k]];
            return ucache.emplace(key, std::move(line)).first->second;
        };

        const double x0 = nash.axis_x.front();
        auto slot_of = [&](double x) {
            const auto s = static_cast<long>(std::lround((x - x0) / nash.h));
            return static_cast<int>(std::min<long>(std::max<long>(s, 0),
                                                   static_cast<long>(nloc) - 1));
        };

        NashGapRow row;
        row.players = N;
        for (int purpose = 1; purpose <= 2; ++purpose) {
            double sup = 0.0;
            std::vector<int> slots(N);
            for (std::size_t s = 0; s < samples; ++s) {
                CounterRng rng(seed, static_cast<std::uint64_t>(purpose), s);
                for (int p = 0; p < N; ++p) {
                    if (purpose == 1) {
                        const auto k = static_cast<std::size_t>(rng.uniform() *
                                                                static_cast<double>(nloc));
                        slots[p] = static_cast<int>(std::min(k, nloc - 1));
                    } else {
                        slots[p] = slot_of(sample_from_density(grid, m0, rng.uniform()).x);
                    }
                }
                std::vector<int> others(slots.begin() + 1, slots.end());
                std::sort(others.begin(), others.end());
                for (const std::size_t f : probe_frames) {
                    const double v = nash.value(f, 0, slots);
                    const double u = uline(f, others)[static_cast<std::size_t>(slots[0])];
                    sup = std::max(sup, std::abs(v - u));
                }
            }
            (purpose == 1 ? row.sup_gap : row.sup_gap_weighted) = sup;
        }

        {
            const LevelSolution sol = solve_mfg_level(grid, eps_fine, model, 0.0, m0, sub);
            std::vector<double> w(nloc, 0.0);
            std::vector<double> xs(N);
            for (std::size_t s = 0; s < samples; ++s) {
                CounterRng rng(seed, 3, s);
                for (int a = 1; a < N; ++a)
                    xs[a] = sample_from_density(grid, m0, rng.uniform()).x;
                for (std::size_t k = 0; k < nloc; ++k) {
                    xs[0] = nash.axis_x[k];
                    w[k] += nash.interpolate(0, 0, xs);
                }
            }
            double gap = 0.0;
            for (std::size_t k = 0; k < nloc; ++k) {
                const int g = nash.axis_nodes[k];
                const double uk = sol.u.frames[0][g];
                gap += std::abs(w[k] / static_cast<double>(samples) - uk) *
                       m0.density[g] * grid.quad_weights[g];
            }
            row.w_gap = gap;
        }
        study.rows.push_back(row);
    }

    if (study.rows.size() >= 2) {
        std::vector<double> Ns, g1, g2, g3;
        bool positive = true;
        for (const auto& r : study.rows) {
            Ns.push_back(static_cast<double>(r.players));
            g1.push_back(r.sup_gap);
            g2.push_back(r.sup_gap_weighted);
            g3.push_back(r.w_gap);
            positive = positive && r.sup_gap > 0.0 && r.sup_gap_weighted > 0.0 && r.w_gap > 0.0;
        }
        if (positive) {
            study.sup_slope = loglog_slope(Ns, g1);
            study.sup_slope_weighted = loglog_slope(Ns, g2);
            study.w_slope = loglog_slope(Ns, g3);
        }
    }
    return study;
}

}  // namespace mfg
