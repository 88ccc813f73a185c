#include "lflow/lgeodesic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lflow/rng.hpp"

namespace lflow {

namespace {

struct OdeState {
    Vec x, w;
    double L = 0.0;
};

void geodesic_rhs(const MetricModel& m, double s, const Vec& x, const Vec& w, Vec& dx,
                  Vec& dw, double& dL) {
    const double tau = s * s;
    dx = w;
    dw = -m.christoffel(tau, x, w, w) - (4.0 * s) * m.ricci_endo(tau, x, w);
    if (m.scalar_curvature_position_dependent())
        dw += (2.0 * tau) * m.scalar_curvature_grad(tau, x);
    dL = 0.5 * m.metric_inner(tau, x, w, w) + 2.0 * tau * m.scalar_curvature(tau, x);
}

void rk4_step(const MetricModel& m, double s, double h, OdeState& st) {
    Vec k1x, k1w, k2x, k2w, k3x, k3w, k4x, k4w;
    double k1l, k2l, k3l, k4l;
    geodesic_rhs(m, s, st.x, st.w, k1x, k1w, k1l);
    geodesic_rhs(m, s + 0.5 * h, st.x + 0.5 * h * k1x, st.w + 0.5 * h * k1w, k2x, k2w, k2l);
    geodesic_rhs(m, s + 0.5 * h, st.x + 0.5 * h * k2x, st.w + 0.5 * h * k2w, k3x, k3w, k3l);
    geodesic_rhs(m, s + h, st.x + h * k3x, st.w + h * k3w, k4x, k4w, k4l);
    st.x += (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
    st.w += (h / 6.0) * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
    st.L += (h / 6.0) * (k1l + 2.0 * k2l + 2.0 * k3l + k4l);
    st.x = m.project_point(st.x);
    st.w = m.project_tangent(st.x, st.w);
}

OdeState integrate_core(const MetricModel& m, const Vec& x, double tau1, const Vec& Z,
                        double tau2, int n_steps, LPath* path) {
    const double s1 = std::sqrt(tau1), s2 = std::sqrt(tau2);
    const double h = (s2 - s1) / n_steps;
    OdeState st{x, 2.0 * m.project_tangent(x, Z), 0.0};
    if (path) {
        path->tau1 = tau1;
        path->tau2 = tau2;
        path->s.assign(1, s1);
        path->points.assign(1, st.x);
        path->velocities.assign(1, st.w);
        path->s.reserve(n_steps + 1);
        path->points.reserve(n_steps + 1);
        path->velocities.reserve(n_steps + 1);
    }
    for (int k = 0; k < n_steps; ++k) {
        rk4_step(m, s1 + k * h, h, st);
        if (!st.x.allFinite() || !st.w.allFinite() || !std::isfinite(st.L))
            throw DomainError("L-geodesic blow-up at s=" + std::to_string(s1 + (k + 1) * h));
        if (!m.in_domain(st.x))
            throw DomainError("L-geodesic left chart domain at s=" +
                              std::to_string(s1 + (k + 1) * h));
        if (path) {
            path->s.push_back(s1 + (k + 1) * h);
            path->points.push_back(st.x);
            path->velocities.push_back(st.w);
        }
    }
    return st;
}

}  // namespace

double l_length(const MetricModel& model, const LPath& path) {
    const std::size_t n = path.points.size();
    if (n < 2) return 0.0;
    auto integrand = [&](std::size_t k) {
        const double s = path.s[k];
        const double tau = s * s;
        return 0.5 * model.metric_inner(tau, path.points[k], path.velocities[k],
                                        path.velocities[k]) +
               2.0 * tau * model.scalar_curvature(tau, path.points[k]);
    };
    double total = 0.0;
    double prev = integrand(0);
    for (std::size_t k = 1; k < n; ++k) {
        double cur = integrand(k);
        total += 0.5 * (prev + cur) * (path.s[k] - path.s[k - 1]);
        prev = cur;
    }
    return total;
}

LGeodesic integrate_l_geodesic(const MetricModel& model, const Vec& x, double tau1,
                               const Vec& Z, double tau2, const OdeConfig& cfg) {
    check_time(model, tau1);
    check_time(model, tau2);
    check_point(model, x);
    if (!(tau1 < tau2)) throw Error("integrate_l_geodesic requires tau1 < tau2");

    OdeState coarse = integrate_core(model, x, tau1, Z, tau2, cfg.n_steps, nullptr);
    LPath path;
    OdeState fine =
        integrate_core(model, x, tau1, Z, tau2, 2 * cfg.n_steps, cfg.store_path ? &path : nullptr);

    LGeodesic g;
    g.start = x;
    g.end = fine.x;
    g.initial_Z = model.project_tangent(x, Z);
    g.end_velocity = fine.w;
    g.tau1 = tau1;
    g.tau2 = tau2;
    g.length = fine.L;
    g.residual = std::max((coarse.x - fine.x).cwiseAbs().maxCoeff(),
                          std::abs(coarse.L - fine.L));
    g.path = std::move(path);
    return g;
}

Vec l_exp(const MetricModel& model, const Vec& x, double tau1, const Vec& Z, double tau2,
          const OdeConfig& cfg) {
    OdeConfig c = cfg;
    c.store_path = false;
    return integrate_l_geodesic(model, x, tau1, Z, tau2, c).end;
}

namespace {

struct Shot {
    bool converged = false;
    Vec zeta;    // coordinates in the tangent basis at x
    double L = 0.0;
    double err = std::numeric_limits<double>::infinity();
};

struct ShootContext {
    const MetricModel& model;
    Vec x, y;
    double tau1, tau2;
    Mat basis;  // g_{tau1}-orthonormal columns at x
    double rho;
    const ShootConfig& cfg;

    Vec z_of(const Vec& zeta) const { return basis * zeta; }

    // endpoint mismatch in coordinates; also reports the single-pass length
    Vec residual(const Vec& zeta, double& L) const {
        OdeState st = integrate_core(model, x, tau1, z_of(zeta), tau2, cfg.ode_steps, nullptr);
        L = st.L;
        return st.x - y;
    }
};

Shot polish(const ShootContext& ctx, const Vec& zeta0) {
    const int d = ctx.model.dim();
    const double tol = 1e-8 * (1.0 + ctx.rho);
    Shot shot;
    Vec zeta = zeta0;
    double L = 0.0;
    Vec F;
    try {
        F = ctx.residual(zeta, L);
    } catch (const DomainError&) {
        return shot;
    }
    double err = F.norm();
    double mu = 1e-3;
    for (int iter = 0; iter < ctx.cfg.max_iter && err > tol; ++iter) {
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 4, 4> J(F.size(), d);
        bool jac_ok = true;
        for (int j = 0; j < d && jac_ok; ++j) {
            Vec zj = zeta;
            zj[j] += ctx.cfg.jac_step;
            double Lj;
            try {
                J.col(j) = (ctx.residual(zj, Lj) - F) / ctx.cfg.jac_step;
            } catch (const DomainError&) {
                jac_ok = false;
            }
        }
        if (!jac_ok) break;
        Mat jtj = J.transpose() * J;
        Vec jtf = J.transpose() * F;
        bool improved = false;
        for (int attempt = 0; attempt < 12; ++attempt) {
            Mat a = jtj + mu * Mat::Identity(d, d);
            Vec delta = a.ldlt().solve(-jtf);
            Vec zeta_new = zeta + delta;
            double L_new;
            double err_new = std::numeric_limits<double>::infinity();
            bool ok = true;
            Vec F_new;
            try {
                F_new = ctx.residual(zeta_new, L_new);
                err_new = F_new.norm();
            } catch (const DomainError&) {
                ok = false;
            }
            if (ok && err_new < err) {
                zeta = zeta_new;
                F = F_new;
                err = err_new;
                L = L_new;
                mu = std::max(mu / 3.0, 1e-14);
                improved = true;
                break;
            }
            mu *= 4.0;
        }
        if (!improved) break;
    }
    shot.converged = err <= tol;
    shot.zeta = zeta;
    shot.L = L;
    shot.err = err;
    return shot;
}

// Riemannian-geodesic initial direction at x towards y, as a zeta guess with
// g-norm rho / (2 (s2 - s1)); the exact answer on the flat model.
Vec direction_guess(const ShootContext& ctx) {
    const int d = ctx.model.dim();
    Vec u = ctx.model.project_tangent(ctx.x, Vec(ctx.y - ctx.x));
    double ds = std::sqrt(ctx.tau2) - std::sqrt(ctx.tau1);
    double target = ctx.rho / (2.0 * ds);
    if (ctx.rho < 1e-14) return Vec::Zero(d);
    double un = ctx.model.metric_norm(ctx.tau1, ctx.x, u);
    Vec zeta(d);
    if (un < 1e-10) {
        // antipodal-type degeneracy: aim along the first basis direction
        zeta = Vec::Zero(d);
        zeta[0] = target;
        return zeta;
    }
    Vec Z = u * (target / un);
    Mat g1 = ctx.model.metric(ctx.tau1, ctx.x);
    for (int j = 0; j < d; ++j) zeta[j] = ctx.basis.col(j).dot(g1 * Z);
    return zeta;
}

QResult assemble(const ShootContext& ctx, std::vector<Shot>& shots) {
    std::vector<Shot> good;
    for (auto& s : shots)
        if (s.converged) good.push_back(s);
    if (good.empty()) {
        double best = std::numeric_limits<double>::infinity();
        for (auto& s : shots) best = std::min(best, s.err);
        throw ShootingError("shooting failed: best endpoint residual " + std::to_string(best),
                            best);
    }
    std::sort(good.begin(), good.end(), [](const Shot& a, const Shot& b) { return a.L < b.L; });
    std::vector<Shot> kept;
    for (auto& s : good) {
        bool dup = false;
        for (auto& k : kept)
            if ((ctx.z_of(s.zeta) - ctx.z_of(k.zeta)).norm() < ctx.cfg.z_sep_tol) dup = true;
        if (!dup) kept.push_back(s);
    }

    QResult q;
    q.x = ctx.x;
    q.y = ctx.y;
    q.tau1 = ctx.tau1;
    q.tau2 = ctx.tau2;
    q.best_endpoint_error = kept.front().err;
    for (auto& k : kept)
        q.candidates.push_back({ctx.z_of(k.zeta), k.L, k.err});
    const double tie = ctx.cfg.q_tie_rel * (1.0 + std::abs(kept.front().L));
    for (std::size_t i = 1; i < kept.size(); ++i)
        if (kept[i].L - kept.front().L <= tie) q.multiplicity_flag = true;

    q.geodesic = integrate_l_geodesic(ctx.model, ctx.x, ctx.tau1, ctx.z_of(kept.front().zeta),
                                      ctx.tau2, OdeConfig{ctx.cfg.ode_steps, ctx.cfg.store_path});
    q.value = q.geodesic.length;
    return q;
}

ShootContext make_context(const MetricModel& model, const Vec& x, double tau1, const Vec& y,
                          double tau2, const ShootConfig& cfg) {
    check_time(model, tau1);
    check_time(model, tau2);
    check_point(model, x);
    check_point(model, y);
    if (!(tau1 < tau2)) throw Error("q_distance requires tau1 < tau2");
    return ShootContext{model, x,  y, tau1, tau2, orthonormal_basis(model, tau1, x),
                        model.distance(tau1, x, y), cfg};
}

std::vector<Vec> full_start_list(const ShootContext& ctx) {
    const int d = ctx.model.dim();
    Vec dir = direction_guess(ctx);
    std::vector<Vec> starts = {0.5 * dir, dir, 2.0 * dir, Vec(Vec::Zero(d))};
    GaussianStream probe(ctx.cfg.probe_seed);
    double sigma = 0.5 * (1.0 + dir.norm());
    for (int i = 0; i < ctx.cfg.n_random_starts; ++i)
        starts.push_back(dir + sigma * probe.gauss_vec(d));
    return starts;
}

}  // namespace

QResult q_distance(const MetricModel& model, const Vec& x, double tau1, const Vec& y,
                   double tau2, const ShootConfig& cfg) {
    ShootContext ctx = make_context(model, x, tau1, y, tau2, cfg);
    std::vector<Shot> shots;
    for (const Vec& z0 : full_start_list(ctx)) shots.push_back(polish(ctx, z0));
    return assemble(ctx, shots);
}

QResult q_distance_warm(const MetricModel& model, const Vec& x, double tau1, const Vec& y,
                        double tau2, const Vec& z_prev, const ShootConfig& cfg) {
    ShootContext ctx = make_context(model, x, tau1, y, tau2, cfg);
    const int d = model.dim();
    Mat g1 = model.metric(tau1, x);
    Vec zp = model.project_tangent(x, z_prev);
    Vec zeta_prev(d);
    for (int j = 0; j < d; ++j) zeta_prev[j] = ctx.basis.col(j).dot(g1 * zp);

    std::vector<Shot> shots;
    shots.push_back(polish(ctx, zeta_prev));
    shots.push_back(polish(ctx, direction_guess(ctx)));
    shots.push_back(polish(ctx, Vec(Vec::Zero(d))));
    bool any = false;
    for (auto& s : shots) any = any || s.converged;
    if (!any)
        for (const Vec& z0 : full_start_list(ctx)) shots.push_back(polish(ctx, z0));
    return assemble(ctx, shots);
}

TangentVector grad2_q(const MetricModel& model, const QResult& q) {
    if (q.multiplicity_flag) throw CutLocusError("on L-cut locus: gradient undefined");
    return TangentVector{model.make_point(q.y), q.geodesic.end_velocity};
}

TangentVector grad1_q(const MetricModel& model, const QResult& q) {
    if (q.multiplicity_flag) throw CutLocusError("on L-cut locus: gradient undefined");
    return TangentVector{model.make_point(q.x), Vec(-2.0 * q.geodesic.initial_Z)};
}

double dt2_q(const MetricModel& model, const QResult& q) {
    if (q.multiplicity_flag) throw CutLocusError("on L-cut locus: derivative undefined");
    const double s2 = std::sqrt(q.tau2);
    const Vec& w = q.geodesic.end_velocity;
    double w2 = model.metric_inner(q.tau2, q.geodesic.end, w, w);
    return s2 * model.scalar_curvature(q.tau2, q.geodesic.end) - w2 / (4.0 * s2);
}

double dt1_q(const MetricModel& model, const QResult& q) {
    if (q.multiplicity_flag) throw CutLocusError("on L-cut locus: derivative undefined");
    if (!(q.tau1 > 0.0)) throw Error("dt1_q undefined at tau1 = 0");
    const double s1 = std::sqrt(q.tau1);
    Vec w1 = 2.0 * q.geodesic.initial_Z;
    return model.metric_inner(q.tau1, q.x, w1, w1) / (4.0 * s1) -
           s1 * model.scalar_curvature(q.tau1, q.x);
}

double q_lower_bound(const MetricModel& model, double tau1, double tau2, const Vec& x,
                     const Vec& y, double C0) {
    const double rho = model.distance(tau1, x, y);
    const double ds = std::sqrt(tau2) - std::sqrt(tau1);
    return std::exp(-2.0 * C0 * (tau2 - tau1)) * rho * rho / (2.0 * ds) -
           (2.0 / 3.0) * model.dim() * C0 * (std::pow(tau2, 1.5) - std::pow(tau1, 1.5));
}

double q_bound_slack(const MetricModel& model, const QResult& q) {
    double C0 = model.curvature_bound(q.tau2);
    return q.value - q_lower_bound(model, q.tau1, q.tau2, q.x, q.y, C0);
}

namespace {

// Initial node chain from x to y: slerp for ambient models, linear in charts.
std::vector<Vec> interp_nodes(const MetricModel& m, const Vec& x, const Vec& y, int n_nodes) {
    std::vector<Vec> pts(n_nodes);
    if (m.coord_dim() > m.dim()) {
        double ang = std::acos(std::clamp(x.dot(y), -1.0, 1.0));
        Vec axis = y - x.dot(y) * x;
        double an = axis.norm();
        if (an < 1e-9) {
            int k = std::abs(x[0]) < 0.9 ? 0 : 1;
            axis = m.project_tangent(x, Vec(Vec::Unit(x.size(), k)));
            an = axis.norm();
        }
        axis /= an;
        for (int k = 0; k < n_nodes; ++k) {
            double t = ang * k / (n_nodes - 1);
            pts[k] = std::cos(t) * x + std::sin(t) * axis;
        }
    } else {
        for (int k = 0; k < n_nodes; ++k) {
            double t = double(k) / (n_nodes - 1);
            pts[k] = (1.0 - t) * x + t * y;
        }
    }
    return pts;
}

}  // namespace

DirectResult direct_q(const MetricModel& model, const Vec& x, double tau1, const Vec& y,
                      double tau2, const DirectConfig& cfg) {
    check_time(model, tau1);
    check_time(model, tau2);
    check_point(model, x);
    check_point(model, y);
    if (!(tau1 < tau2)) throw Error("direct_q requires tau1 < tau2");

    const int n = cfg.n_nodes;
    const int cd = model.coord_dim();
    const double s1 = std::sqrt(tau1), s2 = std::sqrt(tau2);
    const double h = (s2 - s1) / (n - 1);
    const bool g_dep = model.metric_position_dependent();
    const bool r_dep = model.scalar_curvature_position_dependent();

    std::vector<double> sg(n);
    for (int k = 0; k < n; ++k) sg[k] = s1 + k * h;

    auto energy = [&](const std::vector<Vec>& p) {
        double e = 0.0;
        for (int k = 0; k + 1 < n; ++k) {
            if (!model.in_domain(p[k + 1])) return std::numeric_limits<double>::infinity();
            Vec d = p[k + 1] - p[k];
            Vec m = 0.5 * (p[k] + p[k + 1]);
            double sm = 0.5 * (sg[k] + sg[k + 1]);
            double tm = sm * sm;
            e += d.dot(model.metric(tm, m) * d) / (2.0 * h) +
                 2.0 * tm * model.scalar_curvature(tm, m) * h;
        }
        return e;
    };

    auto gradient = [&](const std::vector<Vec>& p, std::vector<Vec>& g) {
        for (auto& gi : g) gi = Vec::Zero(cd);
        for (int k = 0; k + 1 < n; ++k) {
            Vec d = p[k + 1] - p[k];
            Vec m = 0.5 * (p[k] + p[k + 1]);
            double sm = 0.5 * (sg[k] + sg[k + 1]);
            double tm = sm * sm;
            Vec kin = model.metric(tm, m) * d / h;
            Vec shared = Vec::Zero(cd);
            if (g_dep) {
                for (int i = 0; i < cd; ++i) {
                    double hf = fd_step(m[i]);
                    Vec mp = m, mm = m;
                    mp[i] += hf;
                    mm[i] -= hf;
                    double t = (d.dot(model.metric(tm, mp) * d) -
                                d.dot(model.metric(tm, mm) * d)) / (2.0 * hf);
                    shared[i] += t / (4.0 * h);
                }
            }
            if (r_dep) {
                for (int i = 0; i < cd; ++i) {
                    double hf = fd_step(m[i]);
                    Vec mp = m, mm = m;
                    mp[i] += hf;
                    mm[i] -= hf;
                    double t = (model.scalar_curvature(tm, mp) -
                                model.scalar_curvature(tm, mm)) / (2.0 * hf);
                    shared[i] += h * tm * t;  // (2 tm * t) * h * 1/2 per endpoint
                }
            }
            if (k > 0) g[k] += -kin + shared;
            if (k + 1 < n - 1) g[k + 1] += kin + shared;
        }
        for (int k = 1; k + 1 < n; ++k) g[k] = model.project_tangent(p[k], g[k]);
    };

    DirectResult best;
    best.value = std::numeric_limits<double>::infinity();

    for (int start = 0; start < cfg.n_starts; ++start) {
        std::vector<Vec> pts = interp_nodes(model, x, y, n);
        if (start > 0) {
            GaussianStream rng(splitmix_combine(cfg.seed, start));
            Vec dir = rng.gauss_vec(cd);
            double amp = 0.3;
            for (int k = 1; k + 1 < n; ++k) {
                Vec q = pts[k] + amp * std::sin(M_PI * k / (n - 1.0)) *
                                     model.project_tangent(pts[k], dir);
                pts[k] = model.project_point(q);
                if (!model.in_domain(pts[k])) pts[k] = interp_nodes(model, x, y, n)[k];
            }
        }

        std::vector<Vec> grad(n), prev_pts, prev_grad;
        double e = energy(pts);
        double step = 1e-2;
        int iters = 0;
        double gnorm2 = 0.0;
        for (int iter = 0; iter < cfg.max_iter; ++iter) {
            iters = iter + 1;
            gradient(pts, grad);
            gnorm2 = 0.0;
            for (int k = 1; k + 1 < n; ++k) gnorm2 += grad[k].squaredNorm();
            if (gnorm2 < 1e-18 * (1.0 + e * e)) break;
            if (!prev_pts.empty()) {
                double sy = 0.0, yy = 0.0;
                for (int k = 1; k + 1 < n; ++k) {
                    Vec sv = pts[k] - prev_pts[k];
                    Vec yv = grad[k] - prev_grad[k];
                    sy += sv.dot(yv);
                    yy += yv.squaredNorm();
                }
                if (yy > 0 && sy > 0) step = std::clamp(sy / yy, 1e-8, 10.0);
            }
            prev_pts = pts;
            prev_grad = grad;
            double trial = step;
            bool moved = false;
            for (int bt = 0; bt < 40; ++bt) {
                std::vector<Vec> cand = prev_pts;
                for (int k = 1; k + 1 < n; ++k)
                    cand[k] = model.project_point(Vec(prev_pts[k] - trial * grad[k]));
                double ec = energy(cand);
                if (ec <= e - 1e-4 * trial * gnorm2) {
                    pts = std::move(cand);
                    e = ec;
                    moved = true;
                    break;
                }
                trial *= 0.5;
            }
            if (!moved) break;
        }
        if (e < best.value) {
            best.value = e;
            best.s = sg;
            best.points = pts;
            best.grad_norm = std::sqrt(gnorm2);
            best.iterations = iters;
        }
    }
    return best;
}

}  // namespace lflow
