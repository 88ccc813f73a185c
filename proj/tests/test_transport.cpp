#include <doctest.h>

#include <cmath>

#include "lflow/rng.hpp"
#include "lflow/transport.hpp"

using namespace lflow;

namespace {

Vec vec2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}
Vec vec3(double a, double b, double c) {
    Vec v(3);
    v << a, b, c;
    return v;
}

}  // namespace

TEST_CASE("flat space transport is exactly the identity") {
    auto flat = make_euclidean(2);
    LGeodesic g = integrate_l_geodesic(*flat, vec2(0, 0), 0.0, vec2(0.7, -0.3), 1.0,
                                       OdeConfig{500, true});
    Vec xi = vec2(0.3, 0.9);
    CHECK((transport_along(*flat, g, xi) - xi).cwiseAbs().maxCoeff() <= 1e-12);
    TransportMap map = transport_map(*flat, g);
    CHECK((map.matrix - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(map.isometry_defect <= 1e-12);
}

TEST_CASE("sphere constant path: Z(tau) = Z(0)/sqrt(c(tau)) with conserved g-norm") {
    auto sph = make_sphere(2);
    Vec x = vec3(0, 0, 1);
    LGeodesic g = integrate_l_geodesic(*sph, x, 0.0, Vec(Vec::Zero(3)), 1.0,
                                       OdeConfig{500, true});
    Vec xi = vec3(0.4, -0.2, 0);
    Vec out = transport_along(*sph, g, xi);
    // d=2: c(1) = 3
    CHECK((out - Vec(xi / std::sqrt(3.0))).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(sph->metric_inner(1.0, x, out, out) ==
          doctest::Approx(sph->metric_inner(0.0, x, xi, xi)).epsilon(1e-10));
    // ambient matrix action equals the scalar contraction on tangent vectors
    TransportMap map = transport_map(*sph, g);
    Vec eta = vec3(-0.1, 0.5, 0);
    CHECK((apply(map, eta) - Vec(eta / std::sqrt(3.0))).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("transport is a g-isometry along random geodesics on all exact models") {
    GaussianStream rng(2718);
    for (auto* id : {"euclidean", "sphere", "hyperbolic"}) {
        auto m = make_model(id, 2);
        int rep = 0, draws = 0;
        while (rep < 6 && draws < 60) {
            ++draws;
            Vec x = m->sample_point(rng);
            Vec z = 0.2 * m->project_tangent(x, rng.gauss_vec(m->coord_dim()));
            double hi = std::isfinite(m->horizon()) ? 0.85 * m->horizon() : 1.0;
            double tau1 = 0.05 * hi, tau2 = hi;
            // fine grid step ~1e-3 per unit s-time
            int steps = (int)std::llround((std::sqrt(tau2) - std::sqrt(tau1)) / 2e-3);
            LGeodesic g;
            try {
                g = integrate_l_geodesic(*m, x, tau1, z, tau2,
                                         OdeConfig{std::max(steps, 100), true});
            } catch (const DomainError&) {
                continue;  // geodesic left the disk: resample
            }
            ++rep;
            TransportMap map = transport_map(*m, g);
            CHECK(map.isometry_defect <= 1e-8);

            Vec xi = m->project_tangent(x, rng.gauss_vec(m->coord_dim()));
            Vec eta = m->project_tangent(x, rng.gauss_vec(m->coord_dim()));
            double before = m->metric_inner(tau1, x, xi, eta);
            double after = m->metric_inner(tau2, g.end, apply(map, xi), apply(map, eta));
            CHECK(after == doctest::Approx(before).epsilon(1e-6));

            // matrix^T g_tau2 matrix recovers g_tau1 on the tangent space
            Mat pulled = map.matrix.transpose() * m->metric(tau2, g.end) * map.matrix;
            Mat basis = orthonormal_basis(*m, tau1, x);
            Mat g1 = m->metric(tau1, x);
            for (int i = 0; i < m->dim(); ++i)
                for (int j = 0; j < m->dim(); ++j) {
                    double a = basis.col(i).dot(pulled * basis.col(j));
                    double b = basis.col(i).dot(g1 * basis.col(j));
                    CHECK(a == doctest::Approx(b).epsilon(1e-8));
                }
        }
        CHECK(rep == 6);
    }
}

TEST_CASE("transport is assembled as a matrix, hence exactly linear") {
    auto sph = make_sphere(2);
    GaussianStream rng(31415);
    Vec x = sph->sample_point(rng);
    Vec z = 0.4 * sph->project_tangent(x, rng.gauss_vec(3));
    LGeodesic g = integrate_l_geodesic(*sph, x, 0.1, z, 0.9, OdeConfig{300, true});
    TransportMap map = transport_map(*sph, g);
    Vec xi = sph->project_tangent(x, rng.gauss_vec(3));
    Vec eta = sph->project_tangent(x, rng.gauss_vec(3));
    Vec combo = apply(map, Vec(2.0 * xi - 3.0 * eta));
    Vec split = 2.0 * apply(map, xi) - 3.0 * apply(map, eta);
    CHECK((combo - split).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("negative control: sqrt(tau) gammadot is not space-time parallel") {
    // along a nonconstant sphere L-geodesic, W = sqrt(tau) gammadot = w(s)/2
    // violates the transport ODE: |(1/2s)(W' + Gamma(w, W)) + Ric# W| stays
    // an order-one quantity, far above the integrator tolerance.
    auto sph = make_sphere(2);
    Vec x = vec3(0, 0, 1);
    Vec z = 0.5 * vec3(1, 0, 0);
    LGeodesic g = integrate_l_geodesic(*sph, x, 0.2, z, 1.0, OdeConfig{400, true});
    const LPath& p = g.path;
    double max_defect = 0.0;
    for (std::size_t k = 2; k + 2 < p.points.size(); k += 16) {
        double s = p.s[k];
        double h = p.s[k + 1] - p.s[k];
        Vec w = p.velocities[k];
        Vec wp = (p.velocities[k + 1] - p.velocities[k - 1]) / (2.0 * h);
        Vec W = 0.5 * w;
        Vec Wp = 0.5 * wp;
        Vec defect = (Wp + sph->christoffel(s * s, p.points[k], w, W)) / (2.0 * s) +
                     sph->ricci_endo(s * s, p.points[k], W);
        max_defect = std::max(max_defect, defect.norm());
    }
    CHECK(max_defect > 10.0 * 1e-8);
    CHECK(max_defect > 0.01);  // order-one violation, not a numerical artifact
}

TEST_CASE("transport requires a stored path") {
    auto flat = make_euclidean(2);
    LGeodesic g = integrate_l_geodesic(*flat, vec2(0, 0), 0.0, vec2(1, 0), 1.0,
                                       OdeConfig{100, false});
    CHECK_THROWS_AS(transport_along(*flat, g, vec2(1, 0)), Error);
}
