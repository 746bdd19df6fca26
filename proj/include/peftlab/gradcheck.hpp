#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "peftlab/adapters.hpp"
#include "peftlab/tasks.hpp"
#include "peftlab/train.hpp"

namespace peftlab {

inline constexpr double kGradCheckH = 1e-6;
inline constexpr double kGradCheckTol = 1e-5;

struct GroupReport {
    std::string name;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GroupReport> groups;
    double threshold = kGradCheckTol;

    bool ok() const {
        for (const GroupReport& g : groups)
            if (!(g.max_rel_err < threshold)) return false;
        return true;
    }

    std::string worst_group() const {
        std::string name;
        double worst = -1.0;
        for (const GroupReport& g : groups)
            if (g.max_rel_err > worst) {
                worst = g.max_rel_err;
                name = g.name;
            }
        return name;
    }
};

namespace detail {

// Relative error with the denominator floored at 1, so finite-difference
// roundoff at structural zeros does not register as disagreement. Gradients
// in these checks are O(1) or larger, which keeps the comparison relative
// where it matters.
inline double rel_err(double analytic, double fd) {
    return std::fabs(analytic - fd) /
           std::max({1.0, std::fabs(analytic), std::fabs(fd)});
}

template <typename Objective>
double central_diff(Objective&& f, double* p, double h = kGradCheckH) {
    const double orig = *p;
    *p = orig + h;
    const double up = f();
    *p = orig - h;
    const double down = f();
    *p = orig;
    return (up - down) / (2.0 * h);
}

}  // namespace detail

/// Build an adapter state with generic (non-identity) parameters so every
/// gradient path is exercised.
inline AdapterState make_generic_adapter(AdapterKind kind, Rng& rng, std::size_t n,
                                         std::size_t m, std::size_t r) {
    AdapterInit init{r, /*lora_alpha=*/16.0, /*beta_init=*/1.0, /*b_init_std=*/1e-3,
                     /*dropout_p=*/0.0};
    AdapterState s = init_adapter(kind, rng, FrozenBase(gaussian_init(rng, n, m, 1.0)),
                                  init);
    s.factors.b = gaussian_init(rng, r, m, 0.5);  // leave B=0 init: grads would vanish
    if (kind == AdapterKind::MAP) {
        s.map.alpha = s.base.w_fnorm * (0.8 + 0.4 * rng.uniform());
        s.map.beta = 0.5 + rng.uniform();
    } else if (kind == AdapterKind::DoRA) {
        for (double& v : s.dora.mags) v *= 0.8 + 0.4 * rng.uniform();
    }
    return s;
}

/// Check one adapter's backward pass against central finite differences of
/// the scalar objective sum(<g_y, forward(x)>).
inline GradCheckReport gradcheck_adapter(AdapterKind kind, std::uint64_t seed,
                                         std::size_t n = 8, std::size_t m = 6,
                                         std::size_t r = 2, std::size_t batch = 4,
                                         const std::string& corrupt_group = "") {
    Rng rng(seed);
    AdapterState s = make_generic_adapter(kind, rng, n, m, r);
    Matrix x = gaussian_init(rng, batch, n, 1.0);
    const Matrix g_y = gaussian_init(rng, batch, m, 1.0);

    auto objective = [&]() {
        auto [y, cache] = adapter_forward(x, s);
        return frob_inner(g_y, y);
    };

    auto [y, cache] = adapter_forward(x, s);
    GradBundle g = adapter_backward(g_y, cache, s);
    auto corrupt = [&](const std::string& name, double& v) {
        if (name == corrupt_group) v += 1e-3;
    };
    for (double& v : g.d_a.data) corrupt("A", v);
    for (double& v : g.d_b.data) corrupt("B", v);
    corrupt("alpha", g.d_alpha);
    corrupt("beta", g.d_beta);
    for (double& v : g.d_mags) corrupt("mags", v);

    GradCheckReport report;
    auto check_matrix = [&](const std::string& name, Matrix& param, const Matrix& grad) {
        GroupReport gr{name, 0.0};
        for (std::size_t i = 0; i < param.data.size(); ++i) {
            const double fd = detail::central_diff(objective, &param.data[i]);
            gr.max_rel_err = std::max(gr.max_rel_err, detail::rel_err(grad.data[i], fd));
        }
        report.groups.push_back(gr);
    };
    check_matrix("A", s.factors.a, g.d_a);
    check_matrix("B", s.factors.b, g.d_b);
    if (kind == AdapterKind::MAP) {
        GroupReport ga{"alpha", detail::rel_err(
                                    g.d_alpha, detail::central_diff(objective, &s.map.alpha))};
        GroupReport gb{"beta", detail::rel_err(
                                   g.d_beta, detail::central_diff(objective, &s.map.beta))};
        report.groups.push_back(ga);
        report.groups.push_back(gb);
    } else if (kind == AdapterKind::DoRA) {
        GroupReport gm{"mags", 0.0};
        for (std::size_t j = 0; j < s.dora.mags.size(); ++j) {
            const double fd = detail::central_diff(objective, &s.dora.mags[j]);
            gm.max_rel_err = std::max(gm.max_rel_err, detail::rel_err(g.d_mags[j], fd));
        }
        report.groups.push_back(gm);
    }
    check_matrix("x", x, g.d_x);
    return report;
}

/// End-to-end check of a 2-layer tanh MLP (all layers adapted) against finite
/// differences of the actual training loss.
inline GradCheckReport gradcheck_model(AdapterKind kind, std::uint64_t seed,
                                       std::size_t in_dim = 6, std::size_t hid = 5,
                                       std::size_t out_dim = 3, std::size_t r = 2,
                                       std::size_t batch = 4) {
    Rng rng(seed);
    Model model;
    model.loss = LossKind::MSE;
    model.layers.push_back(make_generic_adapter(kind, rng, in_dim, hid, r));
    model.layers.push_back(make_generic_adapter(kind, rng, hid, out_dim, r));
    const Matrix x = gaussian_init(rng, batch, in_dim, 1.0);
    const Matrix target = gaussian_init(rng, batch, out_dim, 1.0);

    auto objective = [&]() { return evaluate_loss(model, x, &target, nullptr); };
    auto [loss, grads] = loss_and_grad(model, x, &target, nullptr);

    GradCheckReport report;
    for (ParamRef& ref : trainable_params(model)) {
        const std::size_t layer = static_cast<std::size_t>(
            std::stoul(ref.name.substr(5, ref.name.find('.') - 5)));
        const std::vector<double> analytic = grad_for_ref(ref, grads[layer]);
        GroupReport gr{ref.name, 0.0};
        for (std::size_t i = 0; i < ref.size; ++i) {
            const double fd = detail::central_diff(objective, &ref.data[i]);
            gr.max_rel_err = std::max(gr.max_rel_err, detail::rel_err(analytic[i], fd));
        }
        report.groups.push_back(gr);
    }
    return report;
}

}  // namespace peftlab
