#include "mfg/transport_lp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace mfg {

namespace {

struct FlowEdge {
    int to;
    double cap;
    double cost;
    std::size_t rev;
};

class MinCostFlow {
public:
    explicit MinCostFlow(int n) : adj_(n), pot_(n, 0.0), dist_(n), prev_edge_(n), prev_node_(n) {}

    void add_edge(int u, int v, double cap, double cost) {
        adj_[u].push_back(edges_.size());
        edges_.push_back({v, cap, cost, edges_.size() + 1});
        adj_[v].push_back(edges_.size());
        edges_.push_back({u, 0.0, -cost, edges_.size() - 1});
    }

    /// Sends `amount` units from s to t; returns total cost. Dijkstra with
    /// potentials keeps reduced costs nonnegative, so each path is optimal.
    double run(int s, int t, double amount, double eps) {
        double cost = 0.0;
        std::size_t rounds = 0;
        const std::size_t max_rounds = 8 * adj_.size() + 64;
        while (amount > eps) {
            if (++rounds > max_rounds)
                throw ConvergenceError("solve_transport: augmentation did not terminate", {});
            if (!dijkstra(s, t)) throw ConvergenceError("solve_transport: graph disconnected", {});
            for (std::size_t v = 0; v < adj_.size(); ++v)
                if (dist_[v] < std::numeric_limits<double>::max()) pot_[v] += dist_[v];
            double push = amount;
            for (int v = t; v != s; v = prev_node_[v])
                push = std::min(push, edges_[prev_edge_[v]].cap);
            for (int v = t; v != s; v = prev_node_[v]) {
                auto& e = edges_[prev_edge_[v]];
                e.cap -= push;
                edges_[e.rev].cap += push;
                cost += push * e.cost;
            }
            amount -= push;
        }
        return cost;
    }

    double potential(int v) const { return pot_[v]; }

private:
    bool dijkstra(int s, int t) {
        const double inf = std::numeric_limits<double>::max();
        std::fill(dist_.begin(), dist_.end(), inf);
        dist_[s] = 0.0;
        using Item = std::pair<double, int>;
        std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
        pq.push({0.0, s});
        while (!pq.empty()) {
            const auto [d, u] = pq.top();
            pq.pop();
            if (d > dist_[u]) continue;
            for (std::size_t eid : adj_[u]) {
                const auto& e = edges_[eid];
                if (e.cap <= 1e-15) continue;
                // clamp: rounding in the potentials can leave residual arcs
                // with reduced cost ~ -1e-16, which would cycle forever
                const double rc = std::max(0.0, e.cost + pot_[u] - pot_[e.to]);
                const double nd = d + rc;
                if (nd < dist_[e.to] - 1e-18) {
                    dist_[e.to] = nd;
                    prev_edge_[e.to] = eid;
                    prev_node_[e.to] = u;
                    pq.push({nd, e.to});
                }
            }
        }
        return dist_[t] < inf;
    }

    std::vector<FlowEdge> edges_;
    std::vector<std::vector<std::size_t>> adj_;
    std::vector<double> pot_;
    std::vector<double> dist_;
    std::vector<std::size_t> prev_edge_;
    std::vector<int> prev_node_;
};

double euclid(Vec2 a, Vec2 b) { return std::sqrt(sqr(a.x - b.x) + sqr(a.y - b.y)); }

}  // namespace

TransportSolution solve_transport(const TransportProblem& pb) {
    const int ns = static_cast<int>(pb.src_pos.size());
    const int nt = static_cast<int>(pb.snk_pos.size());
    if (pb.src_mass.size() != static_cast<std::size_t>(ns) ||
        pb.snk_mass.size() != static_cast<std::size_t>(nt))
        throw ValidationError("solve_transport: mass/position size mismatch");
    if (!(pb.box >= 0.0)) throw ValidationError("solve_transport: box must be nonnegative");
    double total_src = 0.0, total_snk = 0.0;
    for (double m : pb.src_mass) {
        if (m < -1e-15) throw ValidationError("solve_transport: negative source mass");
        total_src += std::max(0.0, m);
    }
    for (double m : pb.snk_mass) {
        if (m < -1e-15) throw ValidationError("solve_transport: negative sink mass");
        total_snk += std::max(0.0, m);
    }

    TransportSolution sol;
    sol.phi_src.assign(ns, 0.0);
    sol.phi_snk.assign(nt, 0.0);
    if (total_src + total_snk <= 1e-300) return sol;

    // node layout: S, sources, sinks, virtual-source, virtual-sink, T
    const int S = 0;
    const int src0 = 1;
    const int snk0 = src0 + ns;
    const int vsrc = snk0 + nt;
    const int vsnk = vsrc + 1;
    const int T = vsnk + 1;
    MinCostFlow mcf(T + 1);
    const double inf_cap = total_src + total_snk + 1.0;
    for (int i = 0; i < ns; ++i) {
        mcf.add_edge(S, src0 + i, std::max(0.0, pb.src_mass[i]), 0.0);
        mcf.add_edge(src0 + i, vsnk, inf_cap, pb.box);
        for (int j = 0; j < nt; ++j)
            mcf.add_edge(src0 + i, snk0 + j, inf_cap, euclid(pb.src_pos[i], pb.snk_pos[j]));
    }
    mcf.add_edge(S, vsrc, total_snk, 0.0);
    mcf.add_edge(vsrc, vsnk, inf_cap, 0.0);
    for (int j = 0; j < nt; ++j) {
        mcf.add_edge(vsrc, snk0 + j, inf_cap, pb.box);
        mcf.add_edge(snk0 + j, T, std::max(0.0, pb.snk_mass[j]), 0.0);
    }
    mcf.add_edge(vsnk, T, total_src, 0.0);

    const double scale = std::max(1.0, total_src + total_snk);
    sol.cost = mcf.run(S, T, total_src + total_snk, 1e-13 * scale);

    // Dual recovery, gauged so the virtual node sits at potential zero: sink
    // values come from the flow potentials and are 1-Lipschitz among
    // themselves; source values are their infimal convolution with the ground
    // cost, which flow-arc feasibility pins to the flow potentials wherever
    // mass actually moves. The result is 1-Lipschitz on the support union
    // with |phi| <= box.
    for (int j = 0; j < nt; ++j)
        sol.phi_snk[j] =
            std::clamp(mcf.potential(vsnk) - mcf.potential(snk0 + j), -pb.box, pb.box);
    for (int i = 0; i < ns; ++i) {
        double phi = pb.box;
        for (int j = 0; j < nt; ++j)
            phi = std::min(phi, sol.phi_snk[j] + euclid(pb.src_pos[i], pb.snk_pos[j]));
        sol.phi_src[i] = std::clamp(phi, -pb.box, pb.box);
    }
    return sol;
}

}  // namespace mfg
