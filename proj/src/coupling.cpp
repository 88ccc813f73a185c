#include "lflow/coupling.hpp"

#include <algorithm>
#include <cmath>

#include "lflow/assignment.hpp"

namespace lflow {

void CouplingConfig::validate(const MetricModel& model) const {
    if (!(tau1_bar > 0.0) || !(tau1_bar < tau2_bar))
        throw Error("coupling requires 0 < tau1_bar < tau2_bar");
    if (!(s_start > 0.0) || !(s_start < t_end))
        throw Error("coupling requires 0 < s_start < t_end");
    if (!(tau2_bar * t_end < model.horizon()))
        throw Error("coupling requires t_end < T / tau2_bar");
    if (!(dt > 0.0) || dt > 1e-2) throw Error("coupling requires 0 < dt <= 1e-2");
    if (wl_batch < 1 || wl_batch > 256) throw Error("wl_batch must be in [1, 256]");
}

std::vector<double> CouplingConfig::clock_grid() const {
    std::vector<double> grid;
    double t = s_start;
    for (int k = 0; k < theta_points; ++k) {
        double snapped = s_start + std::llround((t - s_start) / dt) * dt;
        grid.push_back(std::min(snapped, t_end));
        t *= theta_growth;
    }
    return grid;
}

namespace {

// Composite noise map O = u~^{-1} P u assembled from the refresh-time frames
// and geodesic, then polar-projected onto O(d): increments stay exactly
// standard-normal, so the marginals remain genuine Brownian motions.
Mat assemble_noise_map(const MetricModel& model, const CoupledState& st,
                       const TransportMap& pmap) {
    const int d = model.dim();
    Mat g2 = model.metric(st.Xt.time, st.Xt.x);
    Mat o = st.Xt.frame.transpose() * g2 * (pmap.matrix * st.X.frame);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(o),
                                          Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::MatrixXd orth = svd.matrixU() * svd.matrixV().transpose();
    Mat out(d, d);
    out = orth;
    return out;
}

void refresh_q(const MetricModel& model, CoupledState& st, const CouplingConfig& cfg) {
    st.steps_since_refresh = 0;
    const double tau1 = cfg.tau1_bar * st.t;
    const double tau2 = cfg.tau2_bar * st.t;
    try {
        QResult q = st.have_warm
                        ? q_distance_warm(model, st.X.x, tau1, st.Xt.x, tau2, st.warm_z, cfg.shoot)
                        : q_distance(model, st.X.x, tau1, st.Xt.x, tau2, cfg.shoot);
        st.q = std::move(q);
        st.q_valid = true;
        st.warm_z = st.q.geodesic.initial_Z;
        st.have_warm = true;
        bool usable = !st.q.multiplicity_flag &&
                      st.q.best_endpoint_error <= cfg.cut_fallback_tol;
        if (usable) {
            TransportMap pmap = transport_map(model, st.q.geodesic);
            st.noise_map = assemble_noise_map(model, st, pmap);
            // martingale coefficient: gdot(tau1) = Z/s1, gdot(tau2) = w(s2)/(2 s2)
            const double s1 = std::sqrt(tau1), s2 = std::sqrt(tau2);
            Vec v = cfg.tau1_bar * (pmap.matrix * st.q.geodesic.initial_Z) / s1 -
                    cfg.tau2_bar * st.q.geodesic.end_velocity / (2.0 * s2);
            st.qv_integrand = 8.0 * st.t * model.metric_inner(tau2, st.Xt.x, v, v);
            st.fallback_active = false;
        } else {
            st.fallback_active = true;
            st.qv_integrand = 0.0;
        }
    } catch (const ShootingError&) {
        st.q_valid = false;
        st.fallback_active = true;
        st.qv_integrand = 0.0;
        ++st.q_failures;
    }
}

}  // namespace

CoupledState init_coupling(const MetricModel& model, const Vec& x, const Vec& y,
                           const CouplingConfig& cfg) {
    cfg.validate(model);
    CoupledState st;
    st.t = cfg.s_start;
    st.X = init_frame(model, x, cfg.tau1_bar * cfg.s_start);
    st.Xt = init_frame(model, y, cfg.tau2_bar * cfg.s_start);
    refresh_q(model, st, cfg);
    return st;
}

void coupled_step(const MetricModel& model, CoupledState& st, const Vec& dB,
                  GaussianStream& indep, const CouplingConfig& cfg) {
    const int d = model.dim();
    Vec dBt;
    if (!st.fallback_active) {
        dBt = st.noise_map * dB;
    } else {
        dBt = std::sqrt(cfg.dt) * indep.gauss_vec(d);
        ++st.fallback_steps;
    }
    SdeStepConfig slow{cfg.dt, cfg.tau1_bar, 1};
    SdeStepConfig fast{cfg.dt, cfg.tau2_bar, 1};
    st.X = step(model, st.X, dB, slow);
    st.Xt = step(model, st.Xt, dBt, fast);
    st.t += cfg.dt;
    ++st.total_steps;
    ++st.steps_since_refresh;
    if (st.fallback_active || st.steps_since_refresh >= cfg.q_refresh_every)
        refresh_q(model, st, cfg);
}

TrialRecord run_coupling(const MetricModel& model, const Vec& x, const Vec& y,
                         const CouplingConfig& cfg, std::uint64_t trial_seed) {
    GaussianStream rng(trial_seed);
    CoupledState st = init_coupling(model, x, y, cfg);
    TrialRecord rec;
    rec.clock_grid = cfg.clock_grid();

    const int n_steps = static_cast<int>(std::llround((cfg.t_end - cfg.s_start) / cfg.dt));
    const double sqrt_dt = std::sqrt(cfg.dt);
    std::size_t next_snap = 0;

    auto record = [&]() {
        if (!st.q_valid) return;
        rec.t.push_back(st.t);
        rec.q.push_back(st.q.value);
        rec.j.push_back(model.dim() / std::sqrt(st.t) *
                            (std::sqrt(cfg.tau1_bar) - std::sqrt(cfg.tau2_bar)) -
                        st.q.value / (2.0 * st.t));
        rec.qv.push_back(st.qv_integrand);
        rec.fallback.push_back(st.fallback_active ? 1 : 0);
    };
    auto snapshot = [&]() {
        while (next_snap < rec.clock_grid.size() &&
               st.t >= rec.clock_grid[next_snap] - 0.5 * cfg.dt) {
            rec.x_snap.push_back(st.X.x);
            rec.xt_snap.push_back(st.Xt.x);
            ++next_snap;
        }
    };

    record();
    snapshot();
    for (int k = 0; k < n_steps; ++k) {
        Vec dB = sqrt_dt * rng.gauss_vec(model.dim());
        coupled_step(model, st, dB, rng, cfg);
        if (st.steps_since_refresh == 0) record();
        snapshot();
    }
    if (st.steps_since_refresh != 0) {
        refresh_q(model, st, cfg);
        record();
    }
    rec.fallback_steps = st.fallback_steps;
    rec.total_steps = st.total_steps;
    rec.q_failures = st.q_failures;
    return rec;
}

double empirical_wl(const MetricModel& model, const std::vector<Vec>& samples_x, double tau1,
                    const std::vector<Vec>& samples_y, double tau2, const ShootConfig& shoot_in) {
    const int n = static_cast<int>(samples_x.size());
    if (n == 0 || samples_y.size() != samples_x.size())
        throw Error("empirical_wl needs equal nonempty sample sets");
    if (n > 256) throw Error("empirical_wl caps at 256 samples");
    ShootConfig shoot = shoot_in;
    shoot.store_path = false;  // cost entries never need the geodesic grid

    std::vector<double> cost(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i) {
        Vec warm;
        bool have_warm = false;
        for (int j = 0; j < n; ++j) {
            double value;
            try {
                QResult q = have_warm ? q_distance_warm(model, samples_x[i], tau1, samples_y[j],
                                                        tau2, warm, shoot)
                                      : q_distance(model, samples_x[i], tau1, samples_y[j], tau2,
                                                   shoot);
                value = q.value;
                warm = q.geodesic.initial_Z;
                have_warm = true;
            } catch (const ShootingError&) {
                value = direct_q(model, samples_x[i], tau1, samples_y[j], tau2).value;
                have_warm = false;
            }
            if (!std::isfinite(value)) throw Error("empirical_wl: non-finite cost entry");
            cost[static_cast<std::size_t>(i) * n + j] = value;
        }
    }
    return solve_assignment(cost, n) / n;
}

double theta_value(int d, double tau1_bar, double tau2_bar, double t, double wl) {
    const double gap = std::sqrt(tau2_bar * t) - std::sqrt(tau1_bar * t);
    return 2.0 * gap * wl - 2.0 * d * gap * gap;
}

double theta(const MetricModel& model, double t, const std::vector<Vec>& samples_x,
             const std::vector<Vec>& samples_y, const CouplingConfig& cfg) {
    double wl = empirical_wl(model, samples_x, cfg.tau1_bar * t, samples_y, cfg.tau2_bar * t,
                             cfg.shoot);
    return theta_value(model.dim(), cfg.tau1_bar, cfg.tau2_bar, t, wl);
}

}  // namespace lflow
