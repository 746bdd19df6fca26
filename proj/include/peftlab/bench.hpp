#pragma once

#include <algorithm>
#include <chrono>
#include <vector>

#include "peftlab/gradcheck.hpp"
#include "peftlab/optim.hpp"
#include "peftlab/tasks.hpp"
#include "peftlab/train.hpp"

namespace peftlab {

struct BenchResult {
    double median_step_ms = 0.0;
    long timed_steps = 0;
};

/// Median wall time of a full training step (forward, backward, AdamW update)
/// for one adapter kind at the given shape. Warmup iterations are excluded.
inline BenchResult bench_adapter(AdapterKind kind, std::size_t n, std::size_t m,
                                 std::size_t r, std::size_t batch, long steps,
                                 std::uint64_t seed, long warmup = 20) {
    Rng rng(seed);
    Model model;
    model.loss = LossKind::MSE;
    model.layers.push_back(make_generic_adapter(kind, rng, n, m, r));
    const Matrix x = gaussian_init(rng, batch, n, 1.0);
    const Matrix target = gaussian_init(rng, batch, m, 1.0);
    Optimizer opt(OptKind::AdamW, OptHyper{1e-4});

    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(steps));
    for (long i = 0; i < warmup + steps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        auto [loss, grads] = loss_and_grad(model, x, &target, nullptr);
        std::vector<ParamRef> refs = trainable_params(model);
        std::vector<std::vector<double>> ref_grads;
        ref_grads.reserve(refs.size());
        for (const ParamRef& ref : refs) ref_grads.push_back(grad_for_ref(ref, grads[0]));
        opt.apply(refs, ref_grads, 1e-4);
        const double ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
        if (i >= warmup) times.push_back(ms);
    }
    std::sort(times.begin(), times.end());
    BenchResult res;
    res.timed_steps = static_cast<long>(times.size());
    res.median_step_ms = times[times.size() / 2];
    return res;
}

}  // namespace peftlab
