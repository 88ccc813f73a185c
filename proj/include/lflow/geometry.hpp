#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <string_view>

#include "lflow/common.hpp"
#include "lflow/rng.hpp"

namespace lflow {

struct ChartPoint {
    Vec coords;
    std::uint32_t model_id = 0;
};

struct TangentVector {
    ChartPoint base;
    Vec components;
};

/// A complete time-dependent metric family g_tau on a chart domain, evolving
/// under backwards Ricci flow dg/dtau = 2 Ric (exact_flow == true) or not
/// (the conformal bump, kept for nonzero-grad-R code paths).
///
/// Sphere-type models carry points as unit vectors in R^{d+1} and tangent
/// vectors as ambient vectors orthogonal to the base point; chart models use
/// plain R^d coordinates. coord_dim() tells which. All tensor callbacks act
/// on ambient/chart component vectors.
class MetricModel {
public:
    virtual ~MetricModel() = default;

    int dim() const { return dim_; }
    int coord_dim() const { return coord_dim_; }
    double horizon() const { return horizon_; }
    bool exact_flow() const { return exact_flow_; }
    const std::string& id() const { return id_; }
    std::uint32_t model_tag() const { return tag_; }

    // g_tau at x as a symmetric bilinear form on component vectors. For
    // ambient models the form is meaningful on tangent vectors.
    virtual Mat metric(double tau, const Vec& x) const = 0;
    virtual Mat metric_dtau(double tau, const Vec& x) const = 0;

    // Christoffel contraction Gamma(u, v) of g_tau; the covariant derivative
    // along a curve is D V = dV + Gamma(dx, V).
    virtual Vec christoffel(double tau, const Vec& x, const Vec& u, const Vec& v) const = 0;

    // Ricci curvature: (1,1) action and (0,2) form.
    virtual Vec ricci_endo(double tau, const Vec& x, const Vec& v) const = 0;
    virtual Mat ricci_form(double tau, const Vec& x) const = 0;

    virtual double scalar_curvature(double tau, const Vec& x) const = 0;
    // grad R with respect to g_tau, as a component vector.
    virtual Vec scalar_curvature_grad(double tau, const Vec& x) const = 0;

    // Riemannian distance rho_tau; closed form for euclidean/sphere/
    // hyperbolic, numeric path minimization for the bump model.
    virtual double distance(double tau, const Vec& x, const Vec& y) const = 0;

    // C0 with max_{[0,tau_max]} |Rm| v |Ric| <= C0.
    virtual double curvature_bound(double tau_max) const = 0;

    virtual bool in_domain(const Vec& x) const = 0;

    // Constraint maintenance after ODE/SDE steps: spheres renormalize the
    // point and project tangents, chart models are identity.
    virtual Vec project_point(const Vec& x) const { return x; }
    virtual Vec project_tangent(const Vec& /*x*/, const Vec& v) const { return v; }
    virtual Mat ambient_projector(const Vec& x) const {
        return Mat::Identity(x.size(), x.size());
    }

    // Random chart point, used by property tests and randomized CLI configs.
    virtual Vec sample_point(GaussianStream& rng) const = 0;

    // Let finite-difference consumers (the discrete-path optimizer) skip
    // position derivatives that are identically zero.
    virtual bool metric_position_dependent() const { return true; }
    virtual bool scalar_curvature_position_dependent() const { return true; }

    double metric_inner(double tau, const Vec& x, const Vec& u, const Vec& v) const {
        return u.dot(metric(tau, x) * v);
    }
    double metric_norm(double tau, const Vec& x, const Vec& v) const {
        return std::sqrt(std::max(0.0, metric_inner(tau, x, v, v)));
    }

    ChartPoint make_point(const Vec& coords) const { return ChartPoint{coords, tag_}; }

protected:
    MetricModel(std::string id, int dim, int coord_dim, double horizon, bool exact)
        : id_(std::move(id)), dim_(dim), coord_dim_(coord_dim), horizon_(horizon),
          exact_flow_(exact) {
        std::uint64_t h = 1469598103934665603ULL;
        for (char c : id_) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
        tag_ = static_cast<std::uint32_t>(h ^ (h >> 32));
    }

    std::string id_;
    int dim_;
    int coord_dim_;
    double horizon_;
    bool exact_flow_;
    std::uint32_t tag_ = 0;
};

struct BumpParams {
    double amplitude = 0.3;       // conformal factor exp(2*phi), phi = A exp(kappa(x.p - 1))
    double concentration = 4.0;   // kappa
};

std::unique_ptr<MetricModel> make_euclidean(int dim);
std::unique_ptr<MetricModel> make_sphere(int dim);
std::unique_ptr<MetricModel> make_hyperbolic(int dim);
std::unique_ptr<MetricModel> make_bump(const BumpParams& params = {});

// Factory keyed by the config model ids: euclidean | sphere | hyperbolic | bump.
std::unique_ptr<MetricModel> make_model(const std::string& id, int dim,
                                        const BumpParams& bump = {});

// ||dg/dtau - 2 Ric||_inf over matrix entries, tangentially projected for
// ambient models. Zero (to rounding) iff the flow is exact at (tau, x).
double flow_residual(const MetricModel& model, double tau, const Vec& x);

double riemannian_distance(const MetricModel& model, double tau, const Vec& x, const Vec& y);

double curvature_bound(const MetricModel& model, double tau_max);

// g_tau-orthonormal basis at x (Gram-Schmidt of the projected coordinate
// basis), returned as coord_dim x dim column matrix.
Mat orthonormal_basis(const MetricModel& model, double tau, const Vec& x);

void check_time(const MetricModel& model, double tau);
void check_point(const MetricModel& model, const Vec& x);

}  // namespace lflow
