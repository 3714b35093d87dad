#include "mfg/operators.hpp"

#include <cmath>

namespace mfg {

MaskOperator make_mask_skeleton(const DomainGrid& grid, std::size_t level,
                                const ModelSpec& model) {
    MaskOperator op;
    op.level = level;
    op.h = grid.h;
    const auto& msk = grid.mask(level);
    op.local_of_node.assign(grid.size(), -1);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!msk[i]) continue;
        op.local_of_node[i] = static_cast<int>(op.nodes.size());
        op.nodes.push_back(static_cast<int>(i));
        op.w.push_back(grid.quad_weights[i]);
    }
    const double s_face = grid.dim == 1 ? 1.0 : grid.h;
    for (int gi : op.nodes) {
        const auto nb = grid.neighbors(gi);
        for (int axis = 0; axis < grid.dim; ++axis) {
            const int gj = nb[2 * axis + 1];  // + side only: each face once
            if (gj < 0 || !msk[gj]) continue;
            MaskFace f;
            f.gi = gi;
            f.gj = gj;
            f.li = op.local_of_node[gi];
            f.lj = op.local_of_node[gj];
            f.axis = axis;
            f.xf = {0.5 * (grid.nodes[gi].x + grid.nodes[gj].x),
                    0.5 * (grid.nodes[gi].y + grid.nodes[gj].y)};
            f.s = s_face;
            const Mat2 A = model.a(f.xf);
            f.diff = s_face * (axis == 0 ? A.xx : A.yy) / grid.h;
            const Vec2 bt = model.b_tilde(f.xf);
            f.btilde = s_face * (axis == 0 ? bt.x : bt.y);
            op.faces.push_back(f);
        }
    }
    return op;
}

std::vector<double> face_slopes_from_field(const MaskOperator& op,
                                           const std::vector<double>& u) {
    std::vector<double> p(op.faces.size());
    for (std::size_t k = 0; k < op.faces.size(); ++k)
        p[k] = (u[op.faces[k].gj] - u[op.faces[k].gi]) / op.h;
    return p;
}

std::vector<double> face_slopes_from_vectors(const MaskOperator& op,
                                             const std::vector<Vec2>& p_nodes) {
    std::vector<double> p(op.faces.size());
    for (std::size_t k = 0; k < op.faces.size(); ++k) {
        const MaskFace& f = op.faces[k];
        const Vec2 pi = p_nodes[f.gi], pj = p_nodes[f.gj];
        p[k] = 0.5 * (f.axis == 0 ? pi.x + pj.x : pi.y + pj.y);
    }
    return p;
}

void assemble_operator(MaskOperator& op, const ModelSpec& model,
                       const std::vector<double>& face_p) {
    const std::size_t n = op.size();
    std::vector<std::size_t> ti, tj;
    std::vector<double> tv;
    ti.reserve(6 * op.faces.size());
    tj.reserve(6 * op.faces.size());
    tv.reserve(6 * op.faces.size());
    op.eo_remainder.assign(n, 0.0);

    auto push = [&](int i, int j, double v) {
        ti.push_back(static_cast<std::size_t>(i));
        tj.push_back(static_cast<std::size_t>(j));
        tv.push_back(v);
    };

    for (std::size_t k = 0; k < op.faces.size(); ++k) {
        const MaskFace& f = op.faces[k];
        // diffusion: a_f (m_j - m_i)/h through the face
        push(f.li, f.li, -f.diff);
        push(f.li, f.lj, f.diff);
        push(f.lj, f.lj, -f.diff);
        push(f.lj, f.li, f.diff);
        // b_tilde drift, upwinded by its own sign
        if (f.btilde > 0.0) {
            push(f.li, f.lj, f.btilde);
            push(f.lj, f.lj, -f.btilde);
        } else if (f.btilde < 0.0) {
            push(f.li, f.li, f.btilde);
            push(f.lj, f.li, -f.btilde);
        }
        // Hamiltonian drift: Hp at the one-sided face slope (axis split)
        const double pf = face_p[k];
        const Vec2 pvec = f.axis == 0 ? Vec2{pf, 0.0} : Vec2{0.0, pf};
        const Vec2 hp = model.Hp(f.xf, pvec);
        const double ch = f.s * (f.axis == 0 ? hp.x : hp.y);
        if (ch != 0.0) {
            if (ch > 0.0) {
                push(f.li, f.lj, ch);
                push(f.lj, f.lj, -ch);
            } else {
                push(f.li, f.li, ch);
                push(f.lj, f.li, -ch);
            }
            // zero-order remainder completing -Hp(p)*slope into H(p) at the
            // node the upwind switch feeds, scaled like its transport row;
            // the nodal constant H(x,0) is added by the time steppers
            const double rem = model.H(f.xf, pvec) - model.H(f.xf, {0.0, 0.0}) - (ch / f.s) * pf;
            if (ch > 0.0)
                op.eo_remainder[f.lj] += rem * (f.s * op.h / op.w[f.lj]);
            else
                op.eo_remainder[f.li] += rem * (f.s * op.h / op.w[f.li]);
        }
    }

    op.flux = SpMat::from_triplets(n, ti, tj, tv);
    // fp = W^{-1} flux, transport = W^{-1} flux^T: rows scaled in place so
    // the two matrices stay exact transposes of each other up to the shared
    // row weights
    op.fp = op.flux;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t kk = op.fp.row_ptr[i]; kk < op.fp.row_ptr[i + 1]; ++kk)
            op.fp.val[kk] /= op.w[i];
    op.transport = op.flux.transposed();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t kk = op.transport.row_ptr[i]; kk < op.transport.row_ptr[i + 1]; ++kk)
            op.transport.val[kk] /= op.w[i];
}

}  // namespace mfg
