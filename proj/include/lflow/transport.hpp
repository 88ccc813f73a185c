#pragma once

#include "lflow/lgeodesic.hpp"

namespace lflow {

// Space-time parallel transport along an L-geodesic: the vector field solves
//   nabla^tau_{gammadot} Z = -Ric#_tau(Z),
// which in s = sqrt(tau) time along the stored path is
//   Z' = -Gamma_{s^2}(gamma', Z) - 2 s Ric#_{s^2}(Z).
// The induced map P is an isometry (T_x M, g_{tau1}) -> (T_y M, g_{tau2}).

struct TransportMap {
    Mat matrix;  // coord_dim x coord_dim, acts on tangent components at the source
    Vec source_x, target_x;
    double tau1 = 0.0, tau2 = 0.0;
    double isometry_defect = 0.0;  // max |<P b_i, P b_j>_{tau2} - delta_ij|
};

// Transports xi (tangent at the geodesic start) to the endpoint. RK4 locked
// to the geodesic's stored fine grid: one transport step spans two stored
// nodes so stage midpoints use stored states, never interpolation.
Vec transport_along(const MetricModel& model, const LGeodesic& geod, const Vec& xi);

TransportMap transport_map(const MetricModel& model, const LGeodesic& geod);

inline Vec apply(const TransportMap& map, const Vec& xi) { return map.matrix * xi; }

}  // namespace lflow
