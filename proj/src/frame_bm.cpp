#include "lflow/frame_bm.hpp"

#include <cmath>

#include "lflow/rng.hpp"

namespace lflow {

Mat gram_schmidt(const Mat& g, const Mat& frame) {
    Mat out = frame;
    const int d = static_cast<int>(frame.cols());
    for (int i = 0; i < d; ++i) {
        Vec v = out.col(i);
        for (int j = 0; j < i; ++j) {
            Vec b = out.col(j);
            v -= b.dot(g * v) * b;
        }
        double nrm2 = v.dot(g * v);
        if (!(nrm2 > 1e-14)) throw Error("frame degenerated during Gram-Schmidt");
        out.col(i) = v / std::sqrt(nrm2);
    }
    return out;
}

OrthonormalFrame init_frame(const MetricModel& model, const Vec& x, double t0) {
    check_time(model, t0);
    check_point(model, x);
    return OrthonormalFrame{x, orthonormal_basis(model, t0, x), t0};
}

double orthonormality_defect(const MetricModel& model, const OrthonormalFrame& frame) {
    Mat g = model.metric(frame.time, frame.x);
    Mat gram = frame.frame.transpose() * g * frame.frame;
    const int d = static_cast<int>(frame.frame.cols());
    double defect = 0.0;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            defect = std::max(defect, std::abs(gram(i, j) - (i == j ? 1.0 : 0.0)));
    return defect;
}

namespace {

// One Heun stage at (theta, x, E): position displacement from the frozen
// frame plus the horizontal + vertical frame rates.
void stage(const MetricModel& m, double theta, const Vec& x, const Mat& E, const Vec& dB,
           double noise_scale, double dtheta, Vec& dx, Mat& dE) {
    dx = noise_scale * (E * dB);
    const int d = static_cast<int>(E.cols());
    Mat a = E.transpose() * m.metric_dtau(theta, x) * E;
    Mat vert = E * a;
    dE.resize(E.rows(), d);
    for (int i = 0; i < d; ++i)
        dE.col(i) = -m.christoffel(theta, x, dx, Vec(E.col(i))) - 0.5 * dtheta * vert.col(i);
}

}  // namespace

OrthonormalFrame step(const MetricModel& model, const OrthonormalFrame& frame, const Vec& dB,
                      const SdeStepConfig& cfg, bool reorthonormalize, double* pre_gs_defect) {
    const double lambda = cfg.speed_scale;
    const double dtheta = lambda * cfg.dt;
    const double noise_scale = std::sqrt(2.0 * lambda);
    if (!(frame.time + dtheta < model.horizon()))
        throw DomainError("step would cross the flow horizon");

    Vec dx1, dx2;
    Mat dE1, dE2;
    stage(model, frame.time, frame.x, frame.frame, dB, noise_scale, dtheta, dx1, dE1);

    Vec x_pred = model.project_point(Vec(frame.x + dx1));
    Mat e_pred = frame.frame + dE1;
    for (int i = 0; i < e_pred.cols(); ++i)
        e_pred.col(i) = model.project_tangent(x_pred, Vec(e_pred.col(i)));
    stage(model, frame.time + dtheta, x_pred, e_pred, dB, noise_scale, dtheta, dx2, dE2);

    OrthonormalFrame out;
    out.time = frame.time + dtheta;
    out.x = model.project_point(Vec(frame.x + 0.5 * (dx1 + dx2)));
    out.frame = frame.frame + 0.5 * (dE1 + dE2);
    for (int i = 0; i < out.frame.cols(); ++i)
        out.frame.col(i) = model.project_tangent(out.x, Vec(out.frame.col(i)));

    if (!out.x.allFinite() || !out.frame.allFinite())
        throw DomainError("SDE state became non-finite");
    if (!model.in_domain(out.x)) throw DomainError("trajectory exited chart domain");

    if (pre_gs_defect) *pre_gs_defect = orthonormality_defect(model, out);
    if (reorthonormalize)
        out.frame = gram_schmidt(model.metric(out.time, out.x), out.frame);
    return out;
}

BrownianPath simulate_path(const MetricModel& model, const Vec& x, double s0, double t_end,
                           const SdeStepConfig& cfg, std::uint64_t seed) {
    if (!(s0 > 0.0) || !(s0 < t_end)) throw Error("simulate_path requires 0 < s0 < t_end");
    check_time(model, cfg.speed_scale * t_end);

    const int n_steps = static_cast<int>(std::llround((t_end - s0) / cfg.dt));
    if (n_steps < 1) throw Error("simulate_path: empty time grid");

    GaussianStream rng(seed);
    BrownianPath path;
    path.seed = seed;
    OrthonormalFrame f = init_frame(model, x, cfg.speed_scale * s0);
    path.times.push_back(s0);
    path.states.push_back(f);
    path.defects.push_back(0.0);
    const double sqrt_dt = std::sqrt(cfg.dt);
    for (int k = 0; k < n_steps; ++k) {
        Vec dB = sqrt_dt * rng.gauss_vec(model.dim());
        double step_defect = 0.0;
        bool gs = cfg.reorthonormalize_every > 0 && (k + 1) % cfg.reorthonormalize_every == 0;
        f = step(model, f, dB, cfg, gs, &step_defect);
        double state_defect = gs ? orthonormality_defect(model, f) : step_defect;
        path.increments.push_back(dB);
        path.times.push_back(s0 + (k + 1) * cfg.dt);
        path.states.push_back(f);
        path.defects.push_back(state_defect);
        path.max_defect = std::max(path.max_defect, state_defect);
        path.max_step_defect = std::max(path.max_step_defect, step_defect);
    }
    return path;
}

}  // namespace lflow
