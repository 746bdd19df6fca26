#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "peftlab/errors.hpp"
#include "peftlab/matrix.hpp"
#include "peftlab/rng.hpp"

namespace peftlab {

// Safety clamp for norm divisions. Persistent clamping after init is a dead
// update and must be treated as an error by the caller, never masked.
inline constexpr double kEpsNorm = 1e-12;

enum class AdapterKind { PlainLoRA, DoRA, MAP };

inline const char* kind_name(AdapterKind k) {
    switch (k) {
        case AdapterKind::PlainLoRA: return "lora";
        case AdapterKind::DoRA: return "dora";
        case AdapterKind::MAP: return "map";
    }
    return "?";
}

/// Frozen base weight with its Frobenius norm cached at construction.
struct FrozenBase {
    Matrix w;
    double w_fnorm = 0.0;

    FrozenBase() = default;
    explicit FrozenBase(Matrix base) : w(std::move(base)), w_fnorm(frob_norm(w)) {
        if (w_fnorm <= 0.0)
            throw ZeroBaseError("frozen base weight has zero Frobenius norm");
    }
};

struct LowRankFactors {
    Matrix a;        // n x r
    Matrix b;        // r x m
    double scaling = 1.0;  // lora_alpha / r; unused by the MAP path
};

/// Learnable magnitudes of the normalized base and update directions.
struct MapParams {
    double alpha = 0.0;
    double beta = 0.0;
};

struct DoraParams {
    std::vector<double> mags;  // one per column of W
};

struct AdapterState {
    AdapterKind kind = AdapterKind::PlainLoRA;
    FrozenBase base;
    LowRankFactors factors;
    MapParams map;     // MAP only
    DoraParams dora;   // DoRA only
    double dropout_p = 0.0;

    std::size_t n() const { return base.w.rows; }
    std::size_t m() const { return base.w.cols; }
    std::size_t r() const { return factors.a.cols; }
};

struct GradBundle {
    Matrix d_a;
    Matrix d_b;
    double d_alpha = 0.0;
    double d_beta = 0.0;
    std::vector<double> d_mags;
    Matrix d_x;
};

/// Quantities saved by a forward pass for the matching backward pass.
struct ForwardCache {
    Matrix x_in;            // input as given (post-dropout copy below when active)
    Matrix x_branch;        // input fed to the x*A branch (dropout applied)
    Matrix drop_mask;       // inverted-dropout mask (empty when inactive)
    bool dropout_active = false;

    Matrix xa;              // x_branch * A
    Matrix xw;              // x_in * W (MAP)
    Matrix x_delta;         // (x_branch*A)*B (MAP)
    double c_delta = 0.0;   // max(||AB||_F, eps) (MAP)
    bool norm_clamped = false;

    Matrix v;               // W + s*AB (DoRA)
    std::vector<double> v_norms;
};

inline std::size_t param_count(AdapterKind kind, std::size_t n, std::size_t m,
                               std::size_t r) {
    const std::size_t lowrank = r * (n + m);
    switch (kind) {
        case AdapterKind::PlainLoRA: return lowrank;
        case AdapterKind::DoRA: return lowrank + m;
        case AdapterKind::MAP: return lowrank + 2;
    }
    return 0;
}

inline std::size_t trainable_count(const AdapterState& s) {
    return param_count(s.kind, s.n(), s.m(), s.r());
}

namespace detail {

inline void check_input(const Matrix& x, const AdapterState& s, const char* op) {
    if (x.cols != s.n())
        throw DimensionError(std::string(op) + ": input has " + std::to_string(x.cols) +
                             " features, layer expects " + std::to_string(s.n()));
}

// Inverted dropout on the update-branch input. Mask entries are 0 or 1/(1-p).
inline void apply_dropout(ForwardCache& cache, const AdapterState& s, Rng* train_rng) {
    cache.x_branch = cache.x_in;
    if (s.dropout_p <= 0.0 || train_rng == nullptr) return;
    cache.drop_mask = Matrix(cache.x_in.rows, cache.x_in.cols);
    const double keep = 1.0 - s.dropout_p;
    for (std::size_t i = 0; i < cache.drop_mask.data.size(); ++i)
        cache.drop_mask.data[i] = (train_rng->uniform() < keep) ? 1.0 / keep : 0.0;
    cache.x_branch = hadamard(cache.x_in, cache.drop_mask);
    cache.dropout_active = true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PlainLoRA: y = x*W + s*(x*A)*B
// ---------------------------------------------------------------------------

inline std::pair<Matrix, ForwardCache> lora_forward(const Matrix& x,
                                                    const AdapterState& s,
                                                    Rng* train_rng = nullptr) {
    detail::check_input(x, s, "lora_forward");
    ForwardCache cache;
    cache.x_in = x;
    detail::apply_dropout(cache, s, train_rng);
    cache.xa = matmul(cache.x_branch, s.factors.a);
    Matrix y = matmul(x, s.base.w);
    const Matrix upd = matmul(cache.xa, s.factors.b);
    for (std::size_t i = 0; i < y.data.size(); ++i)
        y.data[i] += s.factors.scaling * upd.data[i];
    return {std::move(y), std::move(cache)};
}

inline Matrix lora_merge(const AdapterState& s) {
    return add(s.base.w, scale(matmul(s.factors.a, s.factors.b), s.factors.scaling));
}

inline GradBundle lora_backward(const Matrix& g_y, const ForwardCache& cache,
                                const AdapterState& s) {
    if (g_y.rows != cache.x_in.rows || g_y.cols != s.m())
        throw DimensionError("lora_backward: output gradient shape " + g_y.shape_str() +
                             " does not match " + std::to_string(cache.x_in.rows) + "x" +
                             std::to_string(s.m()));
    GradBundle g;
    const double sc = s.factors.scaling;
    const Matrix g_bt = matmul(g_y, transpose(s.factors.b));        // batch x r
    g.d_a = scale(matmul(transpose(cache.x_branch), g_bt), sc);
    g.d_b = scale(matmul(transpose(cache.xa), g_y), sc);
    if (!cache.dropout_active) {
        g.d_x = matmul(g_y, transpose(lora_merge(s)));
    } else {
        g.d_x = matmul(g_y, transpose(s.base.w));
        const Matrix branch = scale(matmul(g_bt, transpose(s.factors.a)), sc);
        const Matrix masked = hadamard(branch, cache.drop_mask);
        for (std::size_t i = 0; i < g.d_x.data.size(); ++i)
            g.d_x.data[i] += masked.data[i];
    }
    return g;
}

// ---------------------------------------------------------------------------
// MAP: y = (alpha/||W||_F)*(x*W) + (beta/||AB||_F)*(x*A)*B
// The LoRA scaling s cancels under the normalization and never enters.
// ---------------------------------------------------------------------------

inline std::pair<Matrix, ForwardCache> map_forward(const Matrix& x,
                                                   const AdapterState& s,
                                                   Rng* train_rng = nullptr) {
    detail::check_input(x, s, "map_forward");
    ForwardCache cache;
    cache.x_in = x;
    detail::apply_dropout(cache, s, train_rng);
    const double nrm = lowrank_frob_norm(s.factors.a, s.factors.b);
    cache.norm_clamped = nrm <= kEpsNorm;
    cache.c_delta = cache.norm_clamped ? kEpsNorm : nrm;
    cache.xw = matmul(x, s.base.w);
    cache.xa = matmul(cache.x_branch, s.factors.a);
    cache.x_delta = matmul(cache.xa, s.factors.b);
    const double cb = s.map.alpha / s.base.w_fnorm;
    const double cu = s.map.beta / cache.c_delta;
    Matrix y(x.rows, s.m());
    for (std::size_t i = 0; i < y.data.size(); ++i)
        y.data[i] = cb * cache.xw.data[i] + cu * cache.x_delta.data[i];
    return {std::move(y), std::move(cache)};
}

inline Matrix map_materialize(const AdapterState& s) {
    const double nrm = lowrank_frob_norm(s.factors.a, s.factors.b);
    const double c = nrm <= kEpsNorm ? kEpsNorm : nrm;
    Matrix w_eff = scale(s.base.w, s.map.alpha / s.base.w_fnorm);
    const Matrix delta = matmul(s.factors.a, s.factors.b);
    for (std::size_t i = 0; i < w_eff.data.size(); ++i)
        w_eff.data[i] += (s.map.beta / c) * delta.data[i];
    return w_eff;
}

// Gradients of sum(<g_y, y>). With Delta = AB, U = Delta/c, G = x^T g_y:
//   d_alpha = <g_y, xW>/||W||_F
//   d_beta  = <G, U>
//   d_Delta = (beta/c) (G - <G,U> U)
//   d_A = d_Delta B^T,  d_B = A^T d_Delta
// d_A and d_B are evaluated in factored form so no n x m intermediate is built.
inline GradBundle map_backward(const Matrix& g_y, const ForwardCache& cache,
                               const AdapterState& s) {
    if (g_y.rows != cache.x_in.rows || g_y.cols != s.m())
        throw DimensionError("map_backward: output gradient shape mismatch");
    if (cache.norm_clamped)
        throw NormUnderflowError(
            "map_backward: ||AB||_F underflowed the clamp; gradient undefined");
    GradBundle g;
    const double c = cache.c_delta;
    const double beta_c = s.map.beta / c;
    g.d_alpha = frob_inner(g_y, cache.xw) / s.base.w_fnorm;
    g.d_beta = frob_inner(g_y, cache.x_delta) / c;

    // d_A = (beta/c) (x^T (g_y B^T) - (d_beta/c) A (B B^T))
    const Matrix g_bt = matmul(g_y, transpose(s.factors.b));
    Matrix d_a = matmul(transpose(cache.x_branch), g_bt);
    const Matrix a_bbt = matmul(s.factors.a, matmul(s.factors.b, transpose(s.factors.b)));
    for (std::size_t i = 0; i < d_a.data.size(); ++i)
        d_a.data[i] = beta_c * (d_a.data[i] - (g.d_beta / c) * a_bbt.data[i]);
    g.d_a = std::move(d_a);

    // d_B = (beta/c) ((xA)^T g_y - (d_beta/c) (A^T A) B)
    Matrix d_b = matmul(transpose(cache.xa), g_y);
    const Matrix ata_b = matmul(matmul(transpose(s.factors.a), s.factors.a), s.factors.b);
    for (std::size_t i = 0; i < d_b.data.size(); ++i)
        d_b.data[i] = beta_c * (d_b.data[i] - (g.d_beta / c) * ata_b.data[i]);
    g.d_b = std::move(d_b);

    if (!cache.dropout_active) {
        g.d_x = matmul(g_y, transpose(map_materialize(s)));
    } else {
        g.d_x = scale(matmul(g_y, transpose(s.base.w)), s.map.alpha / s.base.w_fnorm);
        const Matrix branch =
            scale(matmul(g_bt, transpose(s.factors.a)), beta_c);
        const Matrix masked = hadamard(branch, cache.drop_mask);
        for (std::size_t i = 0; i < g.d_x.data.size(); ++i)
            g.d_x.data[i] += masked.data[i];
    }
    return g;
}

// ---------------------------------------------------------------------------
// DoRA: y = x * (V diag(mags / col_norms(V))),  V = W + s*AB
// ---------------------------------------------------------------------------

namespace detail {

inline Matrix dora_v(const AdapterState& s) {
    return add(s.base.w, scale(matmul(s.factors.a, s.factors.b), s.factors.scaling));
}

inline void check_columns(const std::vector<double>& norms) {
    for (std::size_t j = 0; j < norms.size(); ++j)
        if (norms[j] <= kEpsNorm)
            throw ZeroColumnError("dora: column " + std::to_string(j) +
                                  " of W + s*AB has norm <= eps");
}

}  // namespace detail

inline Matrix dora_materialize(const AdapterState& s) {
    Matrix v = detail::dora_v(s);
    const std::vector<double> norms = col_norms(v);
    detail::check_columns(norms);
    for (std::size_t i = 0; i < v.rows; ++i)
        for (std::size_t j = 0; j < v.cols; ++j)
            v(i, j) *= s.dora.mags[j] / norms[j];
    return v;
}

inline std::pair<Matrix, ForwardCache> dora_forward(const Matrix& x,
                                                    const AdapterState& s,
                                                    Rng* train_rng = nullptr) {
    detail::check_input(x, s, "dora_forward");
    if (s.dropout_p > 0.0 && train_rng != nullptr)
        throw ConfigError("dora: dropout is not supported (normalization couples "
                          "the base and update branches)");
    ForwardCache cache;
    cache.x_in = x;
    cache.x_branch = x;
    cache.v = detail::dora_v(s);
    cache.v_norms = col_norms(cache.v);
    detail::check_columns(cache.v_norms);
    Matrix w_eff = cache.v;
    for (std::size_t i = 0; i < w_eff.rows; ++i)
        for (std::size_t j = 0; j < w_eff.cols; ++j)
            w_eff(i, j) *= s.dora.mags[j] / cache.v_norms[j];
    return {matmul(x, w_eff), std::move(cache)};
}

// Per column j with vhat = v_j/||v_j|| and g_j = (x^T g_y)_{:,j}:
//   d_mags_j = <g_j, vhat>
//   d_v_j    = (mags_j/||v_j||) (g_j - <g_j, vhat> vhat)
// Gradients flow through the column norms exactly; nothing is detached.
inline GradBundle dora_backward(const Matrix& g_y, const ForwardCache& cache,
                                const AdapterState& s) {
    if (g_y.rows != cache.x_in.rows || g_y.cols != s.m())
        throw DimensionError("dora_backward: output gradient shape mismatch");
    detail::check_columns(cache.v_norms);
    GradBundle g;
    const Matrix big_g = matmul(transpose(cache.x_in), g_y);  // n x m
    const std::size_t n = s.n(), m = s.m();
    g.d_mags.assign(m, 0.0);
    Matrix d_v(n, m);
    for (std::size_t j = 0; j < m; ++j) {
        const double vn = cache.v_norms[j];
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            dot += big_g(i, j) * cache.v(i, j) / vn;
        g.d_mags[j] = dot;
        const double k = s.dora.mags[j] / vn;
        for (std::size_t i = 0; i < n; ++i)
            d_v(i, j) = k * (big_g(i, j) - dot * cache.v(i, j) / vn);
    }
    const double sc = s.factors.scaling;
    g.d_a = scale(matmul(d_v, transpose(s.factors.b)), sc);
    g.d_b = scale(matmul(transpose(s.factors.a), d_v), sc);
    g.d_x = matmul(g_y, transpose(dora_materialize(s)));
    return g;
}

// ---------------------------------------------------------------------------
// Kind dispatch and construction
// ---------------------------------------------------------------------------

inline std::pair<Matrix, ForwardCache> adapter_forward(const Matrix& x,
                                                       const AdapterState& s,
                                                       Rng* train_rng = nullptr) {
    switch (s.kind) {
        case AdapterKind::PlainLoRA: return lora_forward(x, s, train_rng);
        case AdapterKind::DoRA: return dora_forward(x, s, train_rng);
        case AdapterKind::MAP: return map_forward(x, s, train_rng);
    }
    throw ConfigError("adapter_forward: unknown kind");
}

inline GradBundle adapter_backward(const Matrix& g_y, const ForwardCache& cache,
                                   const AdapterState& s) {
    switch (s.kind) {
        case AdapterKind::PlainLoRA: return lora_backward(g_y, cache, s);
        case AdapterKind::DoRA: return dora_backward(g_y, cache, s);
        case AdapterKind::MAP: return map_backward(g_y, cache, s);
    }
    throw ConfigError("adapter_backward: unknown kind");
}

/// Dense effective weight W_eff with forward(x) == x * W_eff for all x.
inline Matrix merge(const AdapterState& s) {
    switch (s.kind) {
        case AdapterKind::PlainLoRA: return lora_merge(s);
        case AdapterKind::DoRA: return dora_materialize(s);
        case AdapterKind::MAP: return map_materialize(s);
    }
    throw ConfigError("merge: unknown kind");
}

struct AdapterInit {
    std::size_t r = 4;
    double lora_alpha = 32.0;
    double beta_init = 1.0;
    double b_init_std = 1e-3;  // MAP needs ||AB||_F > 0 at init
    double dropout_p = 0.0;
};

inline AdapterState init_adapter(AdapterKind kind, Rng& rng, FrozenBase base,
                                 const AdapterInit& init) {
    const std::size_t n = base.w.rows;
    const std::size_t m = base.w.cols;
    if (init.r == 0 || init.r > std::min(n, m))
        throw ConfigError("init_adapter: rank must satisfy 1 <= r <= min(n, m)");
    if (init.lora_alpha <= 0.0)
        throw ConfigError("init_adapter: lora_alpha must be positive");
    if (init.dropout_p < 0.0 || init.dropout_p >= 1.0)
        throw ConfigError("init_adapter: dropout_p must be in [0, 1)");

    AdapterState s;
    s.kind = kind;
    s.base = std::move(base);
    s.dropout_p = init.dropout_p;
    s.factors.scaling = init.lora_alpha / static_cast<double>(init.r);
    s.factors.a = kaiming_init(rng, n, init.r);

    if (kind == AdapterKind::MAP) {
        s.factors.b = gaussian_init(rng, init.r, m, init.b_init_std);
        if (lowrank_frob_norm(s.factors.a, s.factors.b) <= kEpsNorm) {
            s.factors.b = gaussian_init(rng, init.r, m, init.b_init_std);  // resample once
            if (lowrank_frob_norm(s.factors.a, s.factors.b) <= kEpsNorm)
                throw DegenerateUpdateError(
                    "init_adapter: MAP update direction degenerate (||AB||_F <= eps) "
                    "after resampling; increase b_init_std");
        }
        s.map.alpha = s.base.w_fnorm;
        s.map.beta = init.beta_init;
    } else {
        s.factors.b = Matrix(init.r, m);  // zeros: identity at init
        if (kind == AdapterKind::DoRA) s.dora.mags = col_norms(s.base.w);
    }
    return s;
}

}  // namespace peftlab
