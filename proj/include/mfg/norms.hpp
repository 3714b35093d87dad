#pragma once

#include <cstdint>
#include <vector>

#include "mfg/geometry.hpp"

namespace mfg {

/// Discrete gradient of a nodal field: central differences where both axis
/// neighbors exist (and lie in the optional mask), one-sided otherwise.
std::vector<Vec2> field_gradient(const DomainGrid& grid, const std::vector<double>& f,
                                 const std::vector<std::uint8_t>* mask = nullptr);

/// Discrete Hessian, same stencil policy as field_gradient.
std::vector<Mat2> field_hessian(const DomainGrid& grid, const std::vector<double>& f,
                                const std::vector<std::uint8_t>* mask = nullptr);

struct HolderBreakdown {
    double sup = 0.0;
    double grad_sup = 0.0;
    double hess_sup = 0.0;
    double quotient = 0.0;  // Hoelder quotient of the top derivative
    double total = 0.0;
};

/// Grid surrogate of the (1+alpha)-Hoelder norm: sup|f| + sup|Df| plus the
/// alpha-quotient of Df over node pairs with |x-y| >= 2h. Used consistently
/// on both sides of every inequality it enters.
HolderBreakdown holder_norm_1a(const DomainGrid& grid, const std::vector<double>& f,
                               double alpha, const std::vector<std::uint8_t>* mask = nullptr);

/// Grid surrogate of the (2+alpha)-Hoelder norm: adds sup|D^2 f| and takes
/// the alpha-quotient of D^2 f over node pairs with |x-y| >= 2h.
HolderBreakdown holder_norm_2a(const DomainGrid& grid, const std::vector<double>& f,
                               double alpha, const std::vector<std::uint8_t>* mask = nullptr);

/// Space-time L^p norm (sum_k dt sum_i |f|^p w_i)^(1/p) of a time-indexed
/// family of nodal fields.
double lp_norm_spacetime(const DomainGrid& grid, const std::vector<std::vector<double>>& flow,
                         double dt, double p, const std::vector<std::uint8_t>* mask = nullptr);

double sup_norm(const std::vector<double>& f);
double sup_norm_masked(const std::vector<double>& f, const std::vector<std::uint8_t>& mask);

}  // namespace mfg
