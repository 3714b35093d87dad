#pragma once

#include <vector>

#include "mfg/geometry.hpp"

namespace mfg {

/// Optimal transport between two nonnegative mass vectors on point supports,
/// with Euclidean ground cost and a virtual node at cost `box` that absorbs
/// or supplies any mass imbalance. With equal total masses the virtual node
/// is never used (box >= any support distance) and the value is the plain
/// 1-Wasserstein distance; with unequal masses it is the duality value of
///   sup { sum phi d(mu - nu) : Lip(phi) <= 1, |phi| <= box }.
struct TransportProblem {
    std::vector<Vec2> src_pos;
    std::vector<double> src_mass;
    std::vector<Vec2> snk_pos;
    std::vector<double> snk_mass;
    double box = 0.0;
};

struct TransportSolution {
    double cost = 0.0;
    std::vector<double> phi_src;  // optimal dual potential at source supports
    std::vector<double> phi_snk;  // and at sink supports
};

TransportSolution solve_transport(const TransportProblem& problem);

}  // namespace mfg
