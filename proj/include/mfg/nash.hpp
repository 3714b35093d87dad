#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mfg/geometry.hpp"
#include "mfg/measures.hpp"
#include "mfg/mfg_solver.hpp"
#include "mfg/model.hpp"

namespace mfg {

/// Canonical layout of exchangeable player states: the own axis slot stays
/// explicit while the remaining players enter as a sorted multiset, ranked
/// combinatorially. Storage shrinks from nloc^N to nloc * C(nloc+N-2, N-1)
/// entries and symmetric fields are stored exactly once per orbit.
struct NashLayout {
    int players = 0;
    std::size_t nloc = 0;       // axis slots per player
    std::size_t multisets = 0;  // C(nloc + players - 2, players - 1)
    std::vector<std::vector<std::size_t>> choose;

    /// Rank of an ascending multiset of players-1 slots.
    std::size_t rank_sorted(const int* others) const;
    /// Canonical array slot of (own, others); others are copied and sorted.
    std::size_t index(int own, std::vector<int> others) const;
    std::size_t size() const { return nloc * multisets; }
};

NashLayout make_nash_layout(int players, std::size_t nloc);

/// Value frames of the symmetric player system on the finest subdomain's
/// axis nodes, stored canonically; every player reads the same array through
/// its own coordinate. exchange_defect is the largest asymmetry any frame
/// showed before its orbit averaging, max_step_sweeps the worst per-step
/// coupling iteration count.
struct NashTensor {
    int players = 0;
    double t0 = 0.0;
    double dt = 0.0;
    double h = 0.0;
    std::vector<int> axis_nodes;  // global node ids, ascending
    std::vector<double> axis_x;   // node coordinates along the axis
    NashLayout layout;
    std::vector<std::vector<double>> values;  // one canonical array per frame
    double exchange_defect = 0.0;
    std::size_t max_step_sweeps = 0;

    std::size_t frames() const { return values.size(); }
    /// Value of one player at a node state; slots[p] is player p's axis slot.
    double value(std::size_t frame, int player, const std::vector<int>& slots) const;
    /// Multilinear interpolation at arbitrary positions, clamped to the axis
    /// range; xs[p] is player p's position.
    double interpolate(std::size_t frame, int player, const std::vector<double>& xs) const;
    /// Difference quotient of the player's value along its own axis, central
    /// inside and one-sided at the ends.
    double own_gradient(std::size_t frame, int player, const std::vector<int>& slots) const;
};

/// Solves the player system by backward implicit stepping. Each step runs a
/// damped fixed-point iteration that freezes every player's gradient, then
/// advances by dimensional splitting: the own axis carries the Hamiltonian
/// step with its running-cost source, every other axis the advection and
/// diffusion that player's frozen gradient induces. Frames are orbit
/// averaged back onto the canonical layout, so exchangeability is restored
/// exactly after every step, and the terminal frame is the terminal coupling
/// at the empirical measure of the others with no boundary adjustment.
/// Requires a one-dimensional grid, 2 to 4 players, fully implicit stepping,
/// and cells_per_axis^players within a 2e6 state budget; violations throw
/// ValidationError. A stalled coupling iteration throws ConvergenceError
/// with the per-sweep deltas.
NashTensor solve_nash(const DomainGrid& grid, const ModelSpec& model, int players,
                      const SolverConfig& config = {});

/// The coupled solve's value map evaluated on player states: the entry at
/// (own, others) is the map at (t, own node, empirical measure of the
/// others), directly comparable with a NashTensor frame. residual holds the
/// defect of the player scheme applied to these projected values, one array
/// per retained frame whose successor frame is also retained.
struct ProjectionTensor {
    int players = 0;
    double t0 = 0.0;
    double dt = 0.0;
    double h = 0.0;
    std::vector<int> axis_nodes;
    std::vector<double> axis_x;
    NashLayout layout;
    std::vector<std::size_t> frame_ids;       // retained frames, ascending
    std::vector<std::vector<double>> values;  // canonical array per retained frame
    std::vector<std::size_t> residual_frame_ids;
    std::vector<std::vector<double>> residual;  // orbit means of the defect
    double residual_sup = 0.0;                  // worst |defect| before averaging
    std::string source = "value map projection";

    /// Value at a retained frame; frame is the time index, not the position
    /// in frame_ids.
    double value(std::size_t frame, int player, const std::vector<int>& slots) const;
};

/// Projects the coupled solve onto player states at the given frames (empty
/// means every frame of the player time grid). Each multiset of others pins
/// one empirical measure; a single coupled solve started at the frame's time
/// yields the whole own-axis line, with the terminal data used exactly as
/// the player system uses it. Solves are cached per (frame, multiset).
/// Preconditions match solve_nash.
ProjectionTensor project_master(const DomainGrid& grid, const ModelSpec& model, int players,
                                const std::vector<std::size_t>& t_nodes = {},
                                const SolverConfig& config = {});

struct NashGapRow {
    int players = 0;
    double sup_gap = 0.0;           // worst sampled player-vs-map gap
    double sup_gap_weighted = 0.0;  // same with states drawn from m0
    double w_gap = 0.0;             // L1(m0) gap of the others-averaged value
};

/// Gap table of the player values against the coupled solve's value map
/// across player counts, with log-log slopes fitted over the counts. Slopes
/// stay zero when fewer than two rows exist or a gap vanishes.
struct NashStudy {
    std::vector<NashGapRow> rows;
    double sup_slope = 0.0;
    double sup_slope_weighted = 0.0;
    double w_slope = 0.0;
    std::uint64_t seed = 0;
    std::size_t samples = 0;
};

/// For each player count: solves the player system, samples states at the
/// start and middle frames (uniformly over the canonical slots and with all
/// coordinates drawn from m0, quantized to the axis), and compares against
/// cached value-map lines at the matching empirical measures. The w column
/// averages the player value over the other coordinates drawn from m0 by
/// Monte Carlo and measures the L1(m0) distance to the value map at m0.
/// Draws are counter-based on (seed, purpose, sample), so results are
/// reproducible and independent of evaluation order. Requires at least 1000
/// samples and ascending player counts in {2,3,4}.
NashStudy convergence_study(const DomainGrid& grid, const ModelSpec& model,
                            const std::vector<int>& players_list, const MeasureField& m0,
                            std::size_t samples, std::uint64_t seed,
                            const SolverConfig& config = {});

}  // namespace mfg
