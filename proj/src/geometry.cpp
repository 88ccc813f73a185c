#include "lflow/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace lflow {

void check_time(const MetricModel& model, double tau) {
    if (!(tau >= 0.0) || !(tau < model.horizon()))
        throw DomainError("time " + std::to_string(tau) + " outside [0, T) of model " +
                          model.id());
}

void check_point(const MetricModel& model, const Vec& x) {
    if (x.size() != model.coord_dim())
        throw DomainError("coordinate size mismatch for model " + model.id());
    if (!x.allFinite() || !model.in_domain(x))
        throw DomainError("point outside chart domain of model " + model.id());
}

double flow_residual(const MetricModel& model, double tau, const Vec& x) {
    check_time(model, tau);
    check_point(model, x);
    Mat p = model.ambient_projector(x);
    Mat a = model.metric_dtau(tau, x) - 2.0 * model.ricci_form(tau, x);
    Mat r = p.transpose() * a * p;
    return r.cwiseAbs().maxCoeff();
}

double riemannian_distance(const MetricModel& model, double tau, const Vec& x, const Vec& y) {
    check_time(model, tau);
    check_point(model, x);
    check_point(model, y);
    return model.distance(tau, x, y);
}

double curvature_bound(const MetricModel& model, double tau_max) {
    if (!(tau_max >= 0.0) || !(tau_max < model.horizon()))
        throw DomainError("tau_max outside [0, T)");
    return model.curvature_bound(tau_max);
}

Mat orthonormal_basis(const MetricModel& model, double tau, const Vec& x) {
    const int n = model.coord_dim();
    const int d = model.dim();
    Mat g = model.metric(tau, x);
    Mat basis(n, d);
    int found = 0;
    for (int k = 0; k < n && found < d; ++k) {
        Vec v = model.project_tangent(x, Vec(Vec::Unit(n, k)));
        for (int j = 0; j < found; ++j) {
            Vec b = basis.col(j);
            v -= b.dot(g * v) * b;
        }
        double nrm2 = v.dot(g * v);
        if (nrm2 > 1e-12) basis.col(found++) = v / std::sqrt(nrm2);
    }
    if (found < d) throw Error("degenerate metric while building orthonormal basis");
    return basis;
}

namespace {

// |Rm| = sqrt(2d(d-1)) |K|, |Ric| = (d-1) sqrt(d) |K| for constant sectional
// curvature K; the larger prefactor feeds the C0 bound.
double space_form_norm_factor(int d) {
    return std::max(std::sqrt(2.0 * d * (d - 1)), (d - 1) * std::sqrt(double(d)));
}

class EuclideanModel final : public MetricModel {
public:
    explicit EuclideanModel(int d)
        : MetricModel("euclidean:" + std::to_string(d), d, d,
                      std::numeric_limits<double>::infinity(), true) {}

    Mat metric(double, const Vec& x) const override { return Mat::Identity(x.size(), x.size()); }
    Mat metric_dtau(double, const Vec& x) const override { return Mat::Zero(x.size(), x.size()); }
    Vec christoffel(double, const Vec& x, const Vec&, const Vec&) const override {
        return Vec::Zero(x.size());
    }
    Vec ricci_endo(double, const Vec& x, const Vec&) const override { return Vec::Zero(x.size()); }
    Mat ricci_form(double, const Vec& x) const override { return Mat::Zero(x.size(), x.size()); }
    double scalar_curvature(double, const Vec&) const override { return 0.0; }
    Vec scalar_curvature_grad(double, const Vec& x) const override { return Vec::Zero(x.size()); }
    double distance(double, const Vec& x, const Vec& y) const override { return (x - y).norm(); }
    double curvature_bound(double) const override { return 0.0; }
    bool in_domain(const Vec& x) const override { return x.norm() < 1e6; }
    Vec sample_point(GaussianStream& rng) const override { return 1.5 * rng.gauss_vec(dim_); }
    bool metric_position_dependent() const override { return false; }
    bool scalar_curvature_position_dependent() const override { return false; }
};

// Round sphere S^d embedded in R^{d+1}, g_tau = c(tau) g_{S^d(1)} with
// c(tau) = 1 + 2(d-1) tau. Constant rescaling keeps the unit-sphere
// projection connection Gamma(u,v) = (u.v) x.
class SphereModel final : public MetricModel {
public:
    explicit SphereModel(int d)
        : MetricModel("sphere:" + std::to_string(d), d, d + 1,
                      std::numeric_limits<double>::infinity(), true) {}

    double c(double tau) const { return 1.0 + 2.0 * (dim_ - 1) * tau; }

    Mat metric(double tau, const Vec& x) const override {
        return c(tau) * Mat::Identity(x.size(), x.size());
    }
    Mat metric_dtau(double, const Vec& x) const override {
        return 2.0 * (dim_ - 1) * Mat::Identity(x.size(), x.size());
    }
    Vec christoffel(double, const Vec& x, const Vec& u, const Vec& v) const override {
        return u.dot(v) * x;
    }
    Vec ricci_endo(double tau, const Vec& x, const Vec& v) const override {
        return ((dim_ - 1) / c(tau)) * project_tangent(x, v);
    }
    Mat ricci_form(double, const Vec& x) const override {
        return (dim_ - 1) * ambient_projector(x);
    }
    double scalar_curvature(double tau, const Vec&) const override {
        return dim_ * (dim_ - 1) / c(tau);
    }
    Vec scalar_curvature_grad(double, const Vec& x) const override {
        return Vec::Zero(x.size());
    }
    double distance(double tau, const Vec& x, const Vec& y) const override {
        return std::sqrt(c(tau)) * unit_angle(x, y);
    }
    double curvature_bound(double) const override {
        // K = 1/c maximal at tau = 0 where c = 1
        return space_form_norm_factor(dim_);
    }
    bool in_domain(const Vec& x) const override { return std::abs(x.norm() - 1.0) < 1e-6; }
    Vec project_point(const Vec& x) const override { return x / x.norm(); }
    Vec project_tangent(const Vec& x, const Vec& v) const override { return v - x.dot(v) * x; }
    Mat ambient_projector(const Vec& x) const override {
        return Mat::Identity(x.size(), x.size()) - x * x.transpose();
    }
    Vec sample_point(GaussianStream& rng) const override {
        Vec v = rng.gauss_vec(coord_dim_);
        while (v.norm() < 1e-8) v = rng.gauss_vec(coord_dim_);
        return v / v.norm();
    }
    bool metric_position_dependent() const override { return false; }
    bool scalar_curvature_position_dependent() const override { return false; }

    static double unit_angle(const Vec& x, const Vec& y) {
        // robust both near coincident and near antipodal points
        if (x.dot(y) >= 0.0) return 2.0 * std::asin(std::min(1.0, 0.5 * (x - y).norm()));
        return M_PI - 2.0 * std::asin(std::min(1.0, 0.5 * (x + y).norm()));
    }
};

// Poincare disk scaled by c(tau) = 1 - 2(d-1) tau; T = 1/(2(d-1)).
// Base metric lambda(x)^2 I with lambda = 2/(1-|x|^2); the chart is capped
// at |x| < 0.95 to keep the conformal distortion bounded.
class HyperbolicModel final : public MetricModel {
public:
    explicit HyperbolicModel(int d)
        : MetricModel("hyperbolic:" + std::to_string(d), d, d, 1.0 / (2.0 * (d - 1)), true) {}

    double c(double tau) const { return 1.0 - 2.0 * (dim_ - 1) * tau; }
    static double lambda2(const Vec& x) {
        double w = 1.0 - x.squaredNorm();
        return 4.0 / (w * w);
    }

    Mat metric(double tau, const Vec& x) const override {
        return c(tau) * lambda2(x) * Mat::Identity(x.size(), x.size());
    }
    Mat metric_dtau(double, const Vec& x) const override {
        return -2.0 * (dim_ - 1) * lambda2(x) * Mat::Identity(x.size(), x.size());
    }
    Vec christoffel(double, const Vec& x, const Vec& u, const Vec& v) const override {
        // conformal-to-flat: Gamma(u,v) = (dpsi.u) v + (dpsi.v) u - (u.v) dpsi
        Vec dpsi = 2.0 * x / (1.0 - x.squaredNorm());
        return dpsi.dot(u) * v + dpsi.dot(v) * u - u.dot(v) * dpsi;
    }
    Vec ricci_endo(double tau, const Vec&, const Vec& v) const override {
        return (-(dim_ - 1) / c(tau)) * v;
    }
    Mat ricci_form(double, const Vec& x) const override {
        return -(dim_ - 1) * lambda2(x) * Mat::Identity(x.size(), x.size());
    }
    double scalar_curvature(double tau, const Vec&) const override {
        return -dim_ * (dim_ - 1) / c(tau);
    }
    Vec scalar_curvature_grad(double, const Vec& x) const override {
        return Vec::Zero(x.size());
    }
    double distance(double tau, const Vec& x, const Vec& y) const override {
        double a = (x - y).squaredNorm();
        double b = (1.0 - x.squaredNorm()) * (1.0 - y.squaredNorm());
        return std::sqrt(c(tau)) * std::acosh(1.0 + 2.0 * a / b);
    }
    double curvature_bound(double tau_max) const override {
        // |K| = 1/c maximal at the late end where c is smallest
        return space_form_norm_factor(dim_) / c(tau_max);
    }
    bool in_domain(const Vec& x) const override { return x.norm() < 0.95; }
    Vec sample_point(GaussianStream& rng) const override {
        Vec v = rng.gauss_vec(dim_);
        return 0.55 * v / (1.0 + v.norm());
    }
    bool scalar_curvature_position_dependent() const override { return false; }
};

// S^2 with g_tau = (1+2tau) e^{2 phi} g_{S^2}, phi = A exp(kappa (x.p - 1)).
// Not an exact flow; exists to exercise grad R != 0 paths.
class BumpModel final : public MetricModel {
public:
    explicit BumpModel(const BumpParams& params)
        : MetricModel("bump:2", 2, 3, std::numeric_limits<double>::infinity(), false),
          amp_(params.amplitude), kappa_(params.concentration) {
        center_ = Vec::Zero(3);
        center_[2] = 1.0;
    }

    double a(double tau) const { return 1.0 + 2.0 * tau; }
    double phi(double u) const { return amp_ * std::exp(kappa_ * (u - 1.0)); }
    // spherical Laplacian of f(u), u = x.p: (1-u^2) f'' - 2u f'
    double lap_phi(double u) const {
        double f = phi(u);
        return (1.0 - u * u) * kappa_ * kappa_ * f - 2.0 * u * kappa_ * f;
    }
    double conf(double tau, const Vec& x) const {
        return a(tau) * std::exp(2.0 * phi(x.dot(center_)));
    }

    Mat metric(double tau, const Vec& x) const override {
        return conf(tau, x) * Mat::Identity(3, 3);
    }
    Mat metric_dtau(double, const Vec& x) const override {
        return 2.0 * std::exp(2.0 * phi(x.dot(center_))) * Mat::Identity(3, 3);
    }
    Vec christoffel(double, const Vec& x, const Vec& u, const Vec& v) const override {
        // round part (u.v) x plus the conformal correction with
        // grad_{S^2} phi = phi'(u0) (p - u0 x)
        double u0 = x.dot(center_);
        Vec gphi = kappa_ * phi(u0) * (center_ - u0 * x);
        return u.dot(v) * x + gphi.dot(u) * v + gphi.dot(v) * u - u.dot(v) * gphi;
    }
    Vec ricci_endo(double tau, const Vec& x, const Vec& v) const override {
        // dim 2: Ric = (R/2) g
        return 0.5 * scalar_curvature(tau, x) * project_tangent(x, v);
    }
    Mat ricci_form(double tau, const Vec& x) const override {
        return 0.5 * scalar_curvature(tau, x) * conf(tau, x) * ambient_projector(x);
    }
    double scalar_curvature(double tau, const Vec& x) const override {
        double u0 = x.dot(center_);
        return std::exp(-2.0 * phi(u0)) * (2.0 - 2.0 * lap_phi(u0)) / a(tau);
    }
    Vec scalar_curvature_grad(double tau, const Vec& x) const override {
        // R = H(u0)/a with H(u) = e^{-2 phi}(2 - 2 lap_phi); grad_g R =
        // H'(u0) (p - u0 x) / (a^2 e^{2 phi}) since g = a e^{2 phi} g_hat.
        double u0 = x.dot(center_);
        double f = phi(u0);
        double fp = kappa_ * f;
        double lap = lap_phi(u0);
        // d/du lap_phi
        double dlap = (1.0 - u0 * u0) * kappa_ * kappa_ * fp - 2.0 * u0 * kappa_ * kappa_ * f -
                      2.0 * kappa_ * f - 2.0 * u0 * kappa_ * fp;
        double hp = std::exp(-2.0 * f) * (-2.0 * fp * (2.0 - 2.0 * lap) - 2.0 * dlap);
        double aa = a(tau);
        return (hp / (aa * aa * std::exp(2.0 * f))) * (center_ - u0 * x);
    }
    double distance(double tau, const Vec& x, const Vec& y) const override;
    double curvature_bound(double tau_max) const override {
        // dim 2: |Rm| = |R| >= |Ric| = |R|/sqrt(2); R decays in tau, so
        // sup-sample |R| over u at tau = 0.
        (void)tau_max;
        double worst = 0.0;
        for (int i = 0; i <= 400; ++i) {
            double u = -1.0 + 2.0 * i / 400.0;
            double r = std::exp(-2.0 * phi(u)) * (2.0 - 2.0 * lap_phi(u));
            worst = std::max(worst, std::abs(r));
        }
        return worst;
    }
    bool in_domain(const Vec& x) const override { return std::abs(x.norm() - 1.0) < 1e-6; }
    Vec project_point(const Vec& x) const override { return x / x.norm(); }
    Vec project_tangent(const Vec& x, const Vec& v) const override { return v - x.dot(v) * x; }
    Mat ambient_projector(const Vec& x) const override {
        return Mat::Identity(3, 3) - x * x.transpose();
    }
    Vec sample_point(GaussianStream& rng) const override {
        Vec v = rng.gauss_vec(3);
        while (v.norm() < 1e-8) v = rng.gauss_vec(3);
        return v / v.norm();
    }

private:
    double amp_, kappa_;
    Vec center_;
};

// Discrete geodesic energy minimization on the bump sphere: nodes on S^2,
// E = sum w(m_k) |d_k|^2 / (2h), distance = sqrt(2 E_min). Projected
// gradient descent with Barzilai-Borwein steps and backtracking.
double BumpModel::distance(double tau, const Vec& x, const Vec& y) const {
    double ang = SphereModel::unit_angle(x, y);
    if (ang < 1e-12) return 0.0;
    const int n = 64;
    const double h = 1.0 / n;
    std::vector<Vec> pts(n + 1);
    // slerp initial path
    Vec axis = y - x.dot(y) * x;
    double an = axis.norm();
    if (an < 1e-9) {  // antipodal: pick any orthogonal direction
        axis = project_tangent(x, Vec(Vec::Unit(3, std::abs(x[0]) < 0.9 ? 0 : 1)));
        an = axis.norm();
    }
    axis /= an;
    for (int k = 0; k <= n; ++k) {
        double t = ang * k / n;
        pts[k] = std::cos(t) * x + std::sin(t) * axis;
    }
    auto weight = [&](const Vec& m) { return conf(tau, m); };
    auto energy = [&](const std::vector<Vec>& p) {
        double e = 0.0;
        for (int k = 0; k < n; ++k) {
            Vec d = p[k + 1] - p[k];
            e += weight(0.5 * (p[k] + p[k + 1])) * d.squaredNorm() / (2.0 * h);
        }
        return e;
    };
    auto gradient = [&](const std::vector<Vec>& p, std::vector<Vec>& g) {
        for (auto& gi : g) gi = Vec::Zero(3);
        for (int k = 0; k < n; ++k) {
            Vec d = p[k + 1] - p[k];
            Vec m = 0.5 * (p[k] + p[k + 1]);
            double w = weight(m);
            double u0 = m.dot(center_);
            Vec dw = w * 2.0 * kappa_ * phi(u0) * center_;  // ambient d(weight)/dm
            Vec kin = w * d / h;
            Vec wterm = (d.squaredNorm() / (2.0 * h)) * 0.5 * dw;
            if (k > 0) g[k] += -kin + wterm;
            if (k + 1 < n) g[k + 1] += kin + wterm;
        }
        for (int k = 1; k < n; ++k) g[k] = project_tangent(p[k], g[k]);
    };

    std::vector<Vec> grad(n + 1), prev_pts, prev_grad;
    double e = energy(pts);
    double step = 1e-2;
    for (int iter = 0; iter < 600; ++iter) {
        gradient(pts, grad);
        double gnorm2 = 0.0;
        for (int k = 1; k < n; ++k) gnorm2 += grad[k].squaredNorm();
        if (gnorm2 < 1e-18) break;
        if (!prev_pts.empty()) {
            double sy = 0.0, yy = 0.0;
            for (int k = 1; k < n; ++k) {
                Vec sv = pts[k] - prev_pts[k];
                Vec yv = grad[k] - prev_grad[k];
                sy += sv.dot(yv);
                yy += yv.squaredNorm();
            }
            if (yy > 0 && sy > 0) step = std::clamp(sy / yy, 1e-6, 1.0);
        }
        prev_pts = pts;
        prev_grad = grad;
        double trial = step;
        bool moved = false;
        for (int bt = 0; bt < 30; ++bt) {
            std::vector<Vec> cand = prev_pts;
            for (int k = 1; k < n; ++k) {
                Vec q = prev_pts[k] - trial * grad[k];
                cand[k] = q / q.norm();
            }
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
    return std::sqrt(2.0 * e);
}

}  // namespace

std::unique_ptr<MetricModel> make_euclidean(int dim) {
    if (dim < 1 || dim > 3) throw Error("euclidean dimension must be 1..3");
    return std::make_unique<EuclideanModel>(dim);
}
std::unique_ptr<MetricModel> make_sphere(int dim) {
    if (dim < 2 || dim > 3) throw Error("sphere dimension must be 2..3");
    return std::make_unique<SphereModel>(dim);
}
std::unique_ptr<MetricModel> make_hyperbolic(int dim) {
    if (dim < 2 || dim > 3) throw Error("hyperbolic dimension must be 2..3");
    return std::make_unique<HyperbolicModel>(dim);
}
std::unique_ptr<MetricModel> make_bump(const BumpParams& params) {
    return std::make_unique<BumpModel>(params);
}

std::unique_ptr<MetricModel> make_model(const std::string& id, int dim, const BumpParams& bump) {
    if (id == "euclidean") return make_euclidean(dim);
    if (id == "sphere") return make_sphere(dim);
    if (id == "hyperbolic") return make_hyperbolic(dim);
    if (id == "bump") return make_bump(bump);
    throw Error("unknown model id: " + id);
}

}  // namespace lflow
