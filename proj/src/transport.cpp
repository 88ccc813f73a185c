#include "lflow/transport.hpp"

#include <cmath>

namespace lflow {

namespace {

Vec transport_rhs(const MetricModel& m, double s, const Vec& x, const Vec& w, const Vec& z) {
    const double tau = s * s;
    return Vec(-m.christoffel(tau, x, w, z) - (2.0 * s) * m.ricci_endo(tau, x, z));
}

}  // namespace

Vec transport_along(const MetricModel& model, const LGeodesic& geod, const Vec& xi) {
    const LPath& p = geod.path;
    if (p.points.size() < 3 || p.points.size() % 2 == 0)
        throw Error("transport_along needs a stored geodesic path (odd node count >= 3)");
    Vec z = model.project_tangent(geod.start, xi);
    for (std::size_t i = 0; i + 2 < p.points.size(); i += 2) {
        const double H = p.s[i + 2] - p.s[i];
        Vec k1 = transport_rhs(model, p.s[i], p.points[i], p.velocities[i], z);
        Vec k2 = transport_rhs(model, p.s[i + 1], p.points[i + 1], p.velocities[i + 1],
                               Vec(z + 0.5 * H * k1));
        Vec k3 = transport_rhs(model, p.s[i + 1], p.points[i + 1], p.velocities[i + 1],
                               Vec(z + 0.5 * H * k2));
        Vec k4 = transport_rhs(model, p.s[i + 2], p.points[i + 2], p.velocities[i + 2],
                               Vec(z + H * k3));
        z += (H / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        z = model.project_tangent(p.points[i + 2], z);
    }
    return z;
}

TransportMap transport_map(const MetricModel& model, const LGeodesic& geod) {
    const int n = model.coord_dim();
    const int d = model.dim();
    Mat basis = orthonormal_basis(model, geod.tau1, geod.start);
    Mat g1 = model.metric(geod.tau1, geod.start);
    Mat g2 = model.metric(geod.tau2, geod.end);

    Mat carried(n, d);
    for (int j = 0; j < d; ++j) carried.col(j) = transport_along(model, geod, Vec(basis.col(j)));

    TransportMap map;
    map.source_x = geod.start;
    map.target_x = geod.end;
    map.tau1 = geod.tau1;
    map.tau2 = geod.tau2;
    // P xi = sum_j (carried b_j) <b_j, xi>_{g_tau1}
    map.matrix = carried * (basis.transpose() * g1);
    double defect = 0.0;
    Mat gram = carried.transpose() * g2 * carried;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            defect = std::max(defect, std::abs(gram(i, j) - (i == j ? 1.0 : 0.0)));
    map.isometry_defect = defect;
    return map;
}

}  // namespace lflow
