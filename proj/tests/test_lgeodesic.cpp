#include <doctest.h>

#include <cmath>
#include <functional>

#include "lflow/lgeodesic.hpp"
#include "lflow/rng.hpp"

using namespace lflow;

namespace {

Vec vec1(double a) {
    Vec v(1);
    v << a;
    return v;
}
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

// independent high-order quadrature for 1-D integrands (composite Simpson)
double simpson(double a, double b, int n, const std::function<double(double)>& f) {
    if (n % 2) ++n;
    double h = (b - a) / n;
    double acc = f(a) + f(b);
    for (int k = 1; k < n; ++k) acc += f(a + k * h) * (k % 2 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

LPath straight_line_path(const Vec& x, const Vec& y, double tau1, double tau2, int n) {
    LPath p;
    p.tau1 = tau1;
    p.tau2 = tau2;
    double s1 = std::sqrt(tau1), s2 = std::sqrt(tau2);
    for (int k = 0; k <= n; ++k) {
        double t = double(k) / n;
        p.s.push_back(s1 + t * (s2 - s1));
        p.points.push_back((1 - t) * x + t * y);
        p.velocities.push_back((y - x) / (s2 - s1));
    }
    return p;
}

LPath constant_path(const Vec& x, double tau1, double tau2, int n) {
    LPath p;
    p.tau1 = tau1;
    p.tau2 = tau2;
    double s1 = std::sqrt(tau1), s2 = std::sqrt(tau2);
    for (int k = 0; k <= n; ++k) {
        p.s.push_back(s1 + (s2 - s1) * k / n);
        p.points.push_back(x);
        p.velocities.push_back(Vec::Zero(x.size()));
    }
    return p;
}

}  // namespace

TEST_CASE("l_length: straight flat path in s-time has L = rho^2 / (2 ds)") {
    auto flat = make_euclidean(1);
    LPath p = straight_line_path(vec1(0), vec1(1), 0.0, 1.0, 400);
    CHECK(l_length(*flat, p) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("l_length: constant path on the expanding sphere") {
    auto sph = make_sphere(2);
    LPath p = constant_path(vec3(0, 0, 1), 0.0, 1.0, 2000);
    // closed form of int_0^1 sqrt(tau) R dtau = int 2 sqrt(tau)/(1+2tau) dtau
    double expect = 2.0 - std::sqrt(2.0) * std::atan(std::sqrt(2.0));
    CHECK(expect == doctest::Approx(0.64897828228792).epsilon(1e-12));
    // independent dense quadrature oracle in s-time: integrand 2 s^2 R(s^2)
    double oracle = simpson(0.0, 1.0, 4000,
                            [](double s) { return 4.0 * s * s / (1.0 + 2.0 * s * s); });
    CHECK(oracle == doctest::Approx(expect).epsilon(1e-10));
    CHECK(l_length(*sph, p) == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("l_length: degenerate interval gives zero") {
    auto flat = make_euclidean(2);
    LPath p;
    p.tau1 = p.tau2 = 0.4;
    p.s.assign(1, std::sqrt(0.4));
    p.points.assign(1, vec2(1, 2));
    p.velocities.assign(1, vec2(0, 0));
    CHECK(l_length(*flat, p) == 0.0);
}

TEST_CASE("integrate_l_geodesic: flat space solution is linear in s") {
    auto flat = make_euclidean(2);
    Vec x = vec2(0.3, -0.1), Z = vec2(0.8, 0.25);
    double tau1 = 0.09, tau2 = 0.81;  // s: 0.3 -> 0.9
    LGeodesic g = integrate_l_geodesic(*flat, x, tau1, Z, tau2, OdeConfig{400, true});
    Vec expect = x + 2.0 * (std::sqrt(tau2) - std::sqrt(tau1)) * Z;
    CHECK((g.end - expect).norm() <= 1e-12);
    CHECK(g.residual <= 1e-12);
    // L closed form: 2 |Z|^2 (s2 - s1)
    CHECK(g.length == doctest::Approx(2.0 * Z.squaredNorm() * 0.6).epsilon(1e-12));
}

TEST_CASE("integrate_l_geodesic: Z = 0 on the sphere stays put") {
    auto sph = make_sphere(2);
    Vec x = vec3(0, 0, 1);
    LGeodesic g = integrate_l_geodesic(*sph, x, 0.0, Vec(Vec::Zero(3)), 1.0);
    CHECK((g.end - x).norm() <= 1e-12);
    CHECK(g.residual <= 1e-10);
    CHECK(g.length ==
          doctest::Approx(2.0 - std::sqrt(2.0) * std::atan(std::sqrt(2.0))).epsilon(1e-10));
}

TEST_CASE("integrate_l_geodesic: hyperbolic near-horizon stays finite with small residual") {
    auto hyp = make_hyperbolic(2);
    Vec x = vec2(0.1, -0.05), Z = vec2(0.12, 0.08);
    LGeodesic g = integrate_l_geodesic(*hyp, x, 0.04, Z, 0.45, OdeConfig{800, true});
    CHECK(std::isfinite(g.length));
    CHECK(g.residual <= 1e-8);
}

TEST_CASE("l_exp propagates the geodesic endpoint") {
    auto flat = make_euclidean(2);
    Vec x = vec2(0, 0), Z = vec2(1, 0);
    CHECK((l_exp(*flat, x, 0.0, Z, 1.0) - vec2(2, 0)).norm() <= 1e-12);
}

TEST_CASE("q_distance: flat closed form and the direct-path oracle") {
    auto flat = make_euclidean(2);
    Vec x = vec2(0, 0), y = vec2(1, 0);
    QResult q = q_distance(*flat, x, 0.0, y, 1.0);
    CHECK(q.value == doctest::Approx(0.5).epsilon(1e-7));
    CHECK_FALSE(q.multiplicity_flag);
    // independent oracle: 200-node discrete path minimization
    DirectResult oracle = direct_q(*flat, x, 0.0, y, 1.0);
    CHECK(std::abs(q.value - oracle.value) <= 1e-3 * (1.0 + std::abs(q.value)));
}

TEST_CASE("q_distance: constant sphere path is the converged global minimizer") {
    auto sph = make_sphere(2);
    Vec x = vec3(0, 0, 1);
    QResult q = q_distance(*sph, x, 0.0, x, 1.0);
    double expect = 2.0 - std::sqrt(2.0) * std::atan(std::sqrt(2.0));
    CHECK(q.value <= expect + 1e-8);
    CHECK(q.value == doctest::Approx(expect).epsilon(1e-8));
    // the Z = 0 start must be among the converged candidates
    bool has_zero = false;
    for (const auto& c : q.candidates) has_zero = has_zero || c.Z.norm() < 1e-6;
    CHECK(has_zero);
    // global minimality per the discrete oracle
    DirectResult oracle = direct_q(*sph, x, 0.0, x, 1.0);
    CHECK(oracle.value >= q.value - 1e-3 * (1.0 + std::abs(q.value)));
}

TEST_CASE("q_distance limit law: 2(sqrt(tau2)-sqrt(tau1)) Q -> rho^2") {
    auto sph = make_sphere(2);
    Vec x = vec3(0, 0, 1);
    double ang = 0.8;
    Vec y = vec3(std::sin(ang), 0, std::cos(ang));
    double tau1 = 0.25;
    double rho2 = std::pow(sph->distance(tau1, x, y), 2);
    double prev_err = std::numeric_limits<double>::infinity();
    for (double gap : {0.1, 0.05, 0.025}) {
        QResult q = q_distance(*sph, x, tau1, y, tau1 + gap);
        double err = std::abs(2.0 * (std::sqrt(tau1 + gap) - std::sqrt(tau1)) * q.value - rho2);
        CHECK(err < prev_err);
        prev_err = err;
        if (gap == 0.025) CHECK(err <= 0.02 * rho2);
    }
}

TEST_CASE("shooting agrees with the direct oracle on random configurations") {
    GaussianStream rng(99);
    ShootConfig shoot;
    shoot.ode_steps = 400;
    for (auto* id : {"euclidean", "sphere", "hyperbolic"}) {
        auto m = make_model(id, 2);
        int done = 0, draws = 0;
        while (done < 20 && draws < 500) {
            ++draws;
            Vec x = m->sample_point(rng);
            Vec y = m->sample_point(rng);
            double hi = std::isfinite(m->horizon()) ? 0.9 * m->horizon() : 1.2;
            double tau1 = 0.3 * hi * rng.uniform();
            double tau2 = tau1 + (0.15 + 0.8 * rng.uniform()) * (hi - tau1);
            if (m->distance(tau1, x, y) > 2.2) continue;
            QResult q = q_distance(*m, x, tau1, y, tau2, shoot);
            DirectResult oracle = direct_q(*m, x, tau1, y, tau2);
            CHECK(std::abs(q.value - oracle.value) <= 1e-3 * (1.0 + std::abs(q.value)));
            ++done;
        }
        CHECK(done == 20);
    }
}

TEST_CASE("geodesic stationarity under compactly supported variations") {
    // holds on the exact-flow models, where the geodesic ODE's -2 Ric# term
    // equals the g^{-1} dg/dtau of the functional's first variation
    GaussianStream rng(123);
    for (auto* id : {"euclidean", "sphere", "hyperbolic"}) {
        auto m = make_model(id, 2);
        Vec x = m->sample_point(rng);
        Vec z_dir = m->project_tangent(x, rng.gauss_vec(m->coord_dim()));
        double hi = std::isfinite(m->horizon()) ? 0.85 * m->horizon() : 1.0;
        LGeodesic g = integrate_l_geodesic(*m, x, 0.1 * hi, Vec(0.25 * z_dir), hi,
                                           OdeConfig{600, true});
        double base = l_length(*m, g.path);
        const double amp = 1e-4;
        const double span = g.path.s.back() - g.path.s.front();
        bool ambient = m->coord_dim() > m->dim();
        for (int rep = 0; rep < 10; ++rep) {
            Vec v = rng.gauss_vec(m->coord_dim());
            v /= v.norm();  // unit direction field: amplitude is exactly amp
            LPath pert = g.path;
            for (std::size_t k = 0; k < pert.points.size(); ++k) {
                double u = (pert.s[k] - pert.s.front()) / span;
                double b = std::sin(M_PI * u) * std::sin(M_PI * u);
                double bp = M_PI * std::sin(2.0 * M_PI * u) / span;
                const Vec& gamma = g.path.points[k];
                const Vec& w = g.path.velocities[k];
                if (ambient) {
                    Vec pv = v - gamma.dot(v) * gamma;
                    Vec dpv = -(w.dot(v)) * gamma - gamma.dot(v) * w;
                    pert.points[k] += amp * b * pv;
                    pert.velocities[k] += amp * (bp * pv + b * dpv);
                } else {
                    pert.points[k] += amp * b * v;
                    pert.velocities[k] += amp * bp * v;
                }
            }
            CHECK(std::abs(l_length(*m, pert) - base) <= 1e-6);
        }
    }
}

TEST_CASE("analytic derivatives: flat closed form") {
    auto flat = make_euclidean(2);
    Vec x = vec2(0.2, 0.1), y = vec2(1.1, -0.4);
    double tau1 = 0.25, tau2 = 1.0;
    double ds = std::sqrt(tau2) - std::sqrt(tau1);
    QResult q = q_distance(*flat, x, tau1, y, tau2);
    // grad2 Q = (y - x) / ds, grad1 Q = -(y - x) / ds
    CHECK((grad2_q(*flat, q).components - Vec((y - x) / ds)).norm() <= 1e-8);
    CHECK((grad1_q(*flat, q).components + Vec((y - x) / ds)).norm() <= 1e-8);
    double rho2 = (y - x).squaredNorm();
    CHECK(dt2_q(*flat, q) ==
          doctest::Approx(-rho2 / (4.0 * std::sqrt(tau2) * ds * ds)).epsilon(1e-8));
    CHECK(dt1_q(*flat, q) ==
          doctest::Approx(rho2 / (4.0 * std::sqrt(tau1) * ds * ds)).epsilon(1e-8));
}

TEST_CASE("analytic derivatives match central finite differences") {
    GaussianStream rng(321);
    ShootConfig shoot;
    shoot.ode_steps = 500;
    for (auto* id : {"euclidean", "sphere", "hyperbolic"}) {
        auto m = make_model(id, 2);
        int done = 0, draws = 0;
        while (done < 4 && draws < 100) {
            ++draws;
            Vec x = m->sample_point(rng);
            Vec y = m->sample_point(rng);
            double hi = std::isfinite(m->horizon()) ? 0.85 * m->horizon() : 1.0;
            double tau1 = 0.1 + 0.15 * rng.uniform() * hi;
            double tau2 = tau1 + (0.3 + 0.4 * rng.uniform()) * (hi - tau1);
            double rho = m->distance(tau1, x, y);
            if (rho < 0.3 || rho > 1.8) continue;
            QResult q = q_distance(*m, x, tau1, y, tau2, shoot);
            if (q.multiplicity_flag) continue;
            Vec warm = q.geodesic.initial_Z;

            auto qval = [&](const Vec& xx, double t1, const Vec& yy, double t2) {
                return q_distance_warm(*m, xx, t1, yy, t2, warm, shoot).value;
            };
            const double h = 1e-4;
            // gradients, tested directionally against g-inner products
            Mat basis2 = orthonormal_basis(*m, tau2, y);
            Vec g2 = grad2_q(*m, q).components;
            for (int j = 0; j < m->dim(); ++j) {
                Vec b = basis2.col(j);
                double fd = (qval(x, tau1, m->project_point(Vec(y + h * b)), tau2) -
                             qval(x, tau1, m->project_point(Vec(y - h * b)), tau2)) /
                            (2 * h);
                double an = m->metric_inner(tau2, y, g2, b);
                CHECK(an == doctest::Approx(fd).epsilon(1e-3));
            }
            Mat basis1 = orthonormal_basis(*m, tau1, x);
            Vec g1 = grad1_q(*m, q).components;
            for (int j = 0; j < m->dim(); ++j) {
                Vec b = basis1.col(j);
                double fd = (qval(m->project_point(Vec(x + h * b)), tau1, y, tau2) -
                             qval(m->project_point(Vec(x - h * b)), tau1, y, tau2)) /
                            (2 * h);
                double an = m->metric_inner(tau1, x, g1, b);
                CHECK(an == doctest::Approx(fd).epsilon(1e-3));
            }
            double fd_t2 = (qval(x, tau1, y, tau2 + h) - qval(x, tau1, y, tau2 - h)) / (2 * h);
            CHECK(dt2_q(*m, q) == doctest::Approx(fd_t2).epsilon(1e-3));
            double fd_t1 = (qval(x, tau1 + h, y, tau2) - qval(x, tau1 - h, y, tau2)) / (2 * h);
            CHECK(dt1_q(*m, q) == doctest::Approx(fd_t1).epsilon(1e-3));
            ++done;
        }
        CHECK(done == 4);
    }
}

TEST_CASE("derivatives at the symmetric sphere configuration") {
    auto sph = make_sphere(2);
    Vec x = vec3(0, 0, 1);
    QResult q = q_distance(*sph, x, 0.0, x, 1.0);
    CHECK(grad2_q(*sph, q).components.norm() <= 1e-7);
    // gammadot = 0: dQ/dtau2 = sqrt(tau2) R(tau2); FD is the arbiter below
    double expect = std::sqrt(1.0) * sph->scalar_curvature(1.0, x);
    CHECK(dt2_q(*sph, q) == doctest::Approx(expect).epsilon(1e-8));
    double h = 1e-4;
    Vec z0 = Vec::Zero(3);
    double fd = (q_distance_warm(*sph, x, 0.0, x, 1.0 + h, z0).value -
                 q_distance_warm(*sph, x, 0.0, x, 1.0 - h, z0).value) /
                (2 * h);
    CHECK(dt2_q(*sph, q) == doctest::Approx(fd).epsilon(1e-6));
}

TEST_CASE("Q can be negative (shrinking hyperbolic, coincident endpoints)") {
    auto hyp = make_hyperbolic(2);
    Vec x = vec2(0.1, 0.2);
    QResult q = q_distance(*hyp, x, 0.05, x, 0.3);
    CHECK(q.value < 0.0);
    CHECK(q_bound_slack(*hyp, q) >= -1e-6);
}

TEST_CASE("Lemma 3.4 lower bound holds on random configurations") {
    GaussianStream rng(555);
    ShootConfig shoot;
    shoot.ode_steps = 300;
    for (auto* id : {"euclidean", "sphere", "hyperbolic"}) {
        auto m = make_model(id, 2);
        int done = 0, draws = 0;
        while (done < 12 && draws < 300) {
            ++draws;
            Vec x = m->sample_point(rng);
            Vec y = m->sample_point(rng);
            double hi = std::isfinite(m->horizon()) ? 0.88 * m->horizon() : 1.3;
            double tau1 = 0.3 * hi * rng.uniform();
            double tau2 = tau1 + (0.1 + 0.85 * rng.uniform()) * (hi - tau1);
            if (m->distance(tau1, x, y) > 2.0) continue;
            QResult q = q_distance(*m, x, tau1, y, tau2, shoot);
            CHECK(q_bound_slack(*m, q) >= -1e-6);
            ++done;
        }
        CHECK(done == 12);
    }
    // equality case: flat space has C0 = 0 and the bound is exactly Q
    auto flat = make_euclidean(2);
    Vec x = vec2(0, 0), y = vec2(1, 1);
    QResult q = q_distance(*flat, x, 0.0, y, 1.0);
    CHECK(std::abs(q_bound_slack(*flat, q)) <= 1e-6);
    // sphere x = y: bound reduces to -(4/3) C0 (tau2^1.5 - tau1^1.5)
    auto sph = make_sphere(2);
    Vec n = vec3(0, 0, 1);
    double b = q_lower_bound(*sph, 0.0, 1.0, n, n, 2.0);
    CHECK(b == doctest::Approx(-(4.0 / 3.0) * 2.0).epsilon(1e-12));
}

TEST_CASE("antipodal sphere endpoints raise the multiplicity flag") {
    auto sph = make_sphere(2);
    QResult q = q_distance(*sph, vec3(0, 0, 1), 0.2, vec3(0, 0, -1), 0.8);
    CHECK(q.multiplicity_flag);
    CHECK(q.candidates.size() >= 2);
    CHECK_THROWS_AS(grad2_q(*sph, q), CutLocusError);
    CHECK_THROWS_AS(dt2_q(*sph, q), CutLocusError);
}

TEST_CASE("dt1_q rejects tau1 = 0") {
    auto flat = make_euclidean(2);
    QResult q = q_distance(*flat, vec2(0, 0), 0.0, vec2(1, 0), 1.0);
    CHECK_THROWS(dt1_q(*flat, q));
}

TEST_CASE("warm start reproduces the cold result") {
    auto sph = make_sphere(2);
    Vec x = vec3(0, 0, 1), y = vec3(std::sin(0.9), 0, std::cos(0.9));
    QResult cold = q_distance(*sph, x, 0.1, y, 0.9);
    QResult warm = q_distance_warm(*sph, x, 0.1, y, 0.9, cold.geodesic.initial_Z);
    CHECK(warm.value == doctest::Approx(cold.value).epsilon(1e-10));
}

TEST_CASE("bump model: grad R drives the geodesic off the constant path") {
    auto bump = make_bump();
    double ang = 0.7;
    Vec x(3);
    x << std::sin(ang), 0.0, std::cos(ang);
    LGeodesic g = integrate_l_geodesic(*bump, x, 0.1, Vec(Vec::Zero(3)), 0.5);
    // with Z = 0 only the 2 s^2 grad R term can move the point, and it does
    CHECK((g.end - x).norm() > 1e-4);
    auto sph = make_sphere(2);
    LGeodesic g0 = integrate_l_geodesic(*sph, x, 0.1, Vec(Vec::Zero(3)), 0.5);
    CHECK((g0.end - x).norm() <= 1e-12);
}
