#pragma once

#include <cstddef>
#include <vector>

#include "mfg/geometry.hpp"
#include "mfg/linalg.hpp"
#include "mfg/model.hpp"

namespace mfg {

/// One interior face of a masked subdomain: the segment between lattice
/// neighbors that both lie inside the eps-level mask. Faces to outside
/// neighbors are skipped entirely, which is the discrete no-flux condition.
struct MaskFace {
    int gi = -1, gj = -1;  // global node ids, gj on the + side of the axis
    int li = -1, lj = -1;  // local row indices
    int axis = 0;
    Vec2 xf;                 // face midpoint
    double diff = 0.0;       // s * a_axis(xf) / h
    double btilde = 0.0;     // s * b_tilde(xf)[axis]
    double s = 0.0;          // face measure (1 in 1D, h in 2D)
};

/// Spatial operators of one eps-subdomain in local (masked) indexing.
///
/// flux is the weighted conservative generator: w_i dm_i/dt = (flux m)_i,
/// assembled from antisymmetric face fluxes a_f (m_j - m_i)/h + c_f m_upw
/// with the drift upwinded piecewise (b_tilde and H_p switched separately).
/// fp = W^{-1} flux drives the forward equation; transport = W^{-1} flux^T
/// acts on value fields, so <transport u, m>_w = <u, fp m>_w holds by
/// construction and column sums of flux vanish (mass conservation).
struct MaskOperator {
    std::size_t level = 0;
    double h = 0.0;
    std::vector<int> nodes;          // local -> global
    std::vector<int> local_of_node;  // global -> local, -1 outside
    std::vector<double> w;           // quadrature weights, local
    std::vector<MaskFace> faces;

    SpMat flux;
    SpMat fp;
    SpMat transport;
    /// Zero-order Hamiltonian remainder r_i so that the scheme term
    /// -(transport u)_i + r_i reproduces the upwind numerical Hamiltonian
    /// H(x, p) evaluated on the active one-sided slopes (per-axis splitting).
    std::vector<double> eo_remainder;

    std::size_t size() const { return nodes.size(); }
};

/// Geometry, diffusion, and b_tilde caches of the level; drift entries of
/// the matrices are filled by assemble_operator.
MaskOperator make_mask_skeleton(const DomainGrid& grid, std::size_t level, const ModelSpec& model);

/// Face slopes (u_j - u_i)/h of a nodal scalar field (global indexing).
std::vector<double> face_slopes_from_field(const MaskOperator& op,
                                           const std::vector<double>& u);

/// Face slopes from a nodal gradient field: average of the two axis
/// components. Used when only a drift vector field is available.
std::vector<double> face_slopes_from_vectors(const MaskOperator& op,
                                             const std::vector<Vec2>& p_nodes);

/// Builds flux/fp/transport and the Hamiltonian remainder for the given face
/// slopes. The drift through each face is b_tilde(xf) + Hp(xf, p_f e_axis),
/// each piece upwinded by its own sign.
void assemble_operator(MaskOperator& op, const ModelSpec& model,
                       const std::vector<double>& face_p);

}  // namespace mfg
