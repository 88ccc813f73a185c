#pragma once

#include <cstdint>
#include <vector>

#include "lflow/geometry.hpp"

namespace lflow {

// L-geodesics are integrated in the substituted time s = sqrt(tau), where
// the equation is regular down to tau = 0:
//
//     gamma'' = -Gamma(gamma', gamma') + 2 s^2 grad R - 4 s Ric#(gamma')
//
// and the initial datum Z = lim sqrt(tau) dgamma/dtau becomes the genuine
// initial velocity through dgamma/ds(s1) = 2 Z. The L-length transforms to
// integral of  |gamma'|^2_g / 2 + 2 s^2 R  ds.

struct LPath {
    double tau1 = 0.0, tau2 = 0.0;
    std::vector<double> s;        // strictly increasing, s.front()=sqrt(tau1)
    std::vector<Vec> points;      // gamma(s_k)
    std::vector<Vec> velocities;  // dgamma/ds at s_k
};

struct LGeodesic {
    Vec start, end;
    Vec initial_Z;      // dgamma/ds(s1) = 2 Z
    Vec end_velocity;   // dgamma/ds(s2)
    double tau1 = 0.0, tau2 = 0.0;
    double length = 0.0;
    double residual = 0.0;  // Richardson endpoint/length defect
    LPath path;             // fine grid (2 n_steps + 1 nodes) when stored
};

struct OdeConfig {
    int n_steps = 1000;
    bool store_path = true;
};

struct QCandidate {
    Vec Z;
    double length = 0.0;
    double endpoint_error = 0.0;
};

struct QResult {
    double value = 0.0;
    LGeodesic geodesic;               // argmin
    std::vector<QCandidate> candidates;
    bool multiplicity_flag = false;   // cut-locus proxy
    double best_endpoint_error = 0.0;
    Vec x, y;
    double tau1 = 0.0, tau2 = 0.0;
};

struct ShootConfig {
    int ode_steps = 1000;      // RK4 steps covering [sqrt(tau1), sqrt(tau2)]
    int max_iter = 40;         // Levenberg-Marquardt iterations per start
    double jac_step = 1e-5;    // FD step for the endpoint-map Jacobian
    double q_tie_rel = 1e-4;   // tie tolerance 1e-4 (1 + |Q|)
    double z_sep_tol = 1e-2;   // Z separation marking genuine multiplicity
    int n_random_starts = 4;
    bool store_path = true;    // callers needing only Q/velocities switch this off
    std::uint64_t probe_seed = 0xC0FFEEULL;  // fixed: probes identical per call
};

double l_length(const MetricModel& model, const LPath& path);

LGeodesic integrate_l_geodesic(const MetricModel& model, const Vec& x, double tau1,
                               const Vec& Z, double tau2, const OdeConfig& cfg = {});

Vec l_exp(const MetricModel& model, const Vec& x, double tau1, const Vec& Z, double tau2,
          const OdeConfig& cfg = {});

// Multi-start shooting for Q(x,tau1; y,tau2). Throws ShootingError when no
// start converges (callers may fall back to direct_q).
QResult q_distance(const MetricModel& model, const Vec& x, double tau1, const Vec& y,
                   double tau2, const ShootConfig& cfg = {});

// Polishes from a previous minimizer plus two cheap probes; escalates to the
// full multi-start set if nothing converges.
QResult q_distance_warm(const MetricModel& model, const Vec& x, double tau1, const Vec& y,
                        double tau2, const Vec& z_prev, const ShootConfig& cfg = {});

// Analytic first derivatives off the cut locus, from the minimizing
// geodesic's boundary velocity. All throw CutLocusError when the result is
// flagged. In s-velocity terms: grad2 = w(s2), grad1 = -w(s1) = -2Z.
TangentVector grad2_q(const MetricModel& model, const QResult& q);
TangentVector grad1_q(const MetricModel& model, const QResult& q);
double dt2_q(const MetricModel& model, const QResult& q);
double dt1_q(const MetricModel& model, const QResult& q);  // requires tau1 > 0

// Right-hand side of the curvature lower bound
//   Q >= e^{-2 C0 (tau2-tau1)} rho_{tau1}^2 / (2 (sqrt(tau2)-sqrt(tau1)))
//        - (2/3) d C0 (tau2^{3/2} - tau1^{3/2})
double q_lower_bound(const MetricModel& model, double tau1, double tau2, const Vec& x,
                     const Vec& y, double C0);

// Q - q_lower_bound with C0 from curvature_bound(model, tau2).
double q_bound_slack(const MetricModel& model, const QResult& q);

// Discrete-path direct minimizer: the independent oracle for shooting and
// the fallback when shooting fails. Touches only the g and R callbacks
// (position derivatives by finite differences), never Gamma / Ric# / grad R
// or the geodesic ODE.
struct DirectConfig {
    int n_nodes = 200;
    int max_iter = 4000;
    int n_starts = 3;  // base interpolation + perturbed copies
    std::uint64_t seed = 0x5EEDULL;
};

struct DirectResult {
    double value = 0.0;
    std::vector<double> s;
    std::vector<Vec> points;
    double grad_norm = 0.0;
    int iterations = 0;
};

DirectResult direct_q(const MetricModel& model, const Vec& x, double tau1, const Vec& y,
                      double tau2, const DirectConfig& cfg = {});

}  // namespace lflow
