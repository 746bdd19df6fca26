#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "peftlab/adapters.hpp"
#include "peftlab/matrix.hpp"
#include "peftlab/rng.hpp"

namespace peftlab {

/// Deterministic synthetic dataset with a fixed train/val split.
struct Dataset {
    Matrix x_train, y_train;
    Matrix x_val, y_val;
    std::vector<int> labels_train, labels_val;  // classification only
    bool classification = false;
};

/// Teacher weight built in the magnitude/direction parametric form, so the
/// ground-truth scalars are known exactly.
struct PlantedTarget {
    Matrix w_base;
    Matrix u_hat;   // unit-Frobenius-norm rank-r direction
    Matrix u_a;     // factors whose normalized product is u_hat
    Matrix u_b;
    double a_star = 0.0;
    double b_star = 0.0;
    Matrix w_target;  // a_star * w_base/||w_base|| + b_star * u_hat
};

namespace detail {

inline void split_dataset(const Matrix& x, const Matrix& y, Dataset& out) {
    const std::size_t total = x.rows;
    const std::size_t val = total / 5;  // held-out 20%
    const std::size_t train = total - val;
    out.x_train = Matrix(train, x.cols);
    out.y_train = Matrix(train, y.cols);
    out.x_val = Matrix(val, x.cols);
    out.y_val = Matrix(val, y.cols);
    for (std::size_t i = 0; i < train; ++i)
        for (std::size_t j = 0; j < x.cols; ++j) out.x_train(i, j) = x(i, j);
    for (std::size_t i = 0; i < train; ++i)
        for (std::size_t j = 0; j < y.cols; ++j) out.y_train(i, j) = y(i, j);
    for (std::size_t i = 0; i < val; ++i)
        for (std::size_t j = 0; j < x.cols; ++j) out.x_val(i, j) = x(train + i, j);
    for (std::size_t i = 0; i < val; ++i)
        for (std::size_t j = 0; j < y.cols; ++j) out.y_val(i, j) = y(train + i, j);
}

}  // namespace detail

inline std::pair<Dataset, PlantedTarget> gen_teacher_student(
    Rng& rng, std::size_t n, std::size_t m, std::size_t r, double a_star,
    double b_star, std::size_t samples, double noise_std) {
    PlantedTarget t;
    t.a_star = a_star;
    t.b_star = b_star;
    t.w_base = gaussian_init(rng, n, m, 1.0);
    t.u_a = gaussian_init(rng, n, r, 1.0);
    t.u_b = gaussian_init(rng, r, m, 1.0);
    const Matrix prod = matmul(t.u_a, t.u_b);
    t.u_hat = scale(prod, 1.0 / frob_norm(prod));
    t.w_target = add(scale(t.w_base, a_star / frob_norm(t.w_base)),
                     scale(t.u_hat, b_star));

    Matrix x = gaussian_init(rng, samples, n, 1.0);
    Matrix y = matmul(x, t.w_target);
    if (noise_std > 0.0)
        for (double& v : y.data) v += noise_std * rng.normal();

    Dataset ds;
    detail::split_dataset(x, y, ds);
    return {std::move(ds), std::move(t)};
}

/// Balanced class-conditional Gaussians with means on a circle in the first
/// two feature dimensions. Labels interleave round-robin, so sequential
/// mini-batches stay balanced.
inline Dataset gen_gaussian_blobs(Rng& rng, std::size_t n, std::size_t classes,
                                  std::size_t samples, double radius = 4.0,
                                  double spread = 0.6) {
    if (classes < 2) throw ConfigError("gen_gaussian_blobs: classes must be >= 2");
    if (n < 2) throw ConfigError("gen_gaussian_blobs: need at least 2 features");
    Matrix x(samples, n);
    std::vector<int> labels(samples);
    for (std::size_t i = 0; i < samples; ++i) {
        const int c = static_cast<int>(i % classes);
        labels[i] = c;
        const double theta = 2.0 * M_PI * c / static_cast<double>(classes);
        for (std::size_t j = 0; j < n; ++j) {
            double mean = 0.0;
            if (j == 0) mean = radius * std::cos(theta);
            if (j == 1) mean = radius * std::sin(theta);
            x(i, j) = mean + spread * rng.normal();
        }
    }
    Dataset ds;
    ds.classification = true;
    const std::size_t val = samples / 5;
    const std::size_t train = samples - val;
    ds.x_train = Matrix(train, n);
    ds.x_val = Matrix(val, n);
    for (std::size_t i = 0; i < train; ++i)
        for (std::size_t j = 0; j < n; ++j) ds.x_train(i, j) = x(i, j);
    for (std::size_t i = 0; i < val; ++i)
        for (std::size_t j = 0; j < n; ++j) ds.x_val(i, j) = x(train + i, j);
    ds.labels_train.assign(labels.begin(), labels.begin() + train);
    ds.labels_val.assign(labels.begin() + train, labels.end());
    return ds;
}

// ---------------------------------------------------------------------------
// Small models: a chain of adapted linear layers with tanh between them.
// tanh keeps the map smooth everywhere, which finite-difference checks need.
// ---------------------------------------------------------------------------

enum class LossKind { MSE, CrossEntropy };

struct Model {
    std::vector<AdapterState> layers;
    LossKind loss = LossKind::MSE;

    std::size_t input_dim() const { return layers.front().n(); }
    std::size_t output_dim() const { return layers.back().m(); }
};

struct ModelCache {
    std::vector<ForwardCache> layer_caches;
    std::vector<Matrix> activations;  // tanh outputs fed to the next layer
    Matrix logits;
};

inline Matrix model_forward(const Model& model, const Matrix& x,
                            ModelCache* cache = nullptr, Rng* train_rng = nullptr) {
    Matrix h = x;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto [z, fc] = adapter_forward(h, model.layers[l], train_rng);
        if (cache) cache->layer_caches.push_back(std::move(fc));
        if (l + 1 < model.layers.size()) {
            for (double& v : z.data) v = std::tanh(v);
            if (cache) cache->activations.push_back(z);
        }
        h = std::move(z);
    }
    if (cache) cache->logits = h;
    return h;
}

namespace detail {

inline double mse_loss(const Matrix& pred, const Matrix& target, Matrix* d_pred) {
    require_same_shape(pred, target, "mse");
    const double inv = 1.0 / static_cast<double>(pred.size());
    double loss = 0.0;
    if (d_pred) *d_pred = Matrix(pred.rows, pred.cols);
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double e = pred.data[i] - target.data[i];
        loss += e * e * inv;
        if (d_pred) d_pred->data[i] = 2.0 * e * inv;
    }
    return loss;
}

inline double ce_loss(const Matrix& logits, const std::vector<int>& labels,
                      Matrix* d_logits) {
    if (logits.rows != labels.size())
        throw DimensionError("cross_entropy: batch size mismatch");
    const double inv = 1.0 / static_cast<double>(logits.rows);
    double loss = 0.0;
    if (d_logits) *d_logits = Matrix(logits.rows, logits.cols);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        double mx = logits(i, 0);
        for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, logits(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < logits.cols; ++j) z += std::exp(logits(i, j) - mx);
        const int lab = labels[i];
        loss -= inv * (logits(i, lab) - mx - std::log(z));
        if (d_logits)
            for (std::size_t j = 0; j < logits.cols; ++j) {
                const double p = std::exp(logits(i, j) - mx) / z;
                (*d_logits)(i, j) = inv * (p - (static_cast<int>(j) == lab ? 1.0 : 0.0));
            }
    }
    return loss;
}

}  // namespace detail

/// Loss and per-layer gradients for one batch. `target` carries regression
/// targets; `labels` carries class ids (exactly one must be supplied,
/// matching the model's loss kind).
inline std::pair<double, std::vector<GradBundle>> loss_and_grad(
    const Model& model, const Matrix& x, const Matrix* target,
    const std::vector<int>* labels, Rng* train_rng = nullptr) {
    ModelCache cache;
    const Matrix pred = model_forward(model, x, &cache, train_rng);
    Matrix d_out;
    double loss = 0.0;
    if (model.loss == LossKind::MSE) {
        if (!target) throw ConfigError("loss_and_grad: MSE needs targets");
        loss = detail::mse_loss(pred, *target, &d_out);
    } else {
        if (!labels) throw ConfigError("loss_and_grad: cross-entropy needs labels");
        loss = detail::ce_loss(pred, *labels, &d_out);
    }
    if (!std::isfinite(loss)) throw NumericError("loss_and_grad: non-finite loss");

    std::vector<GradBundle> grads(model.layers.size());
    Matrix g = std::move(d_out);
    for (std::size_t l = model.layers.size(); l-- > 0;) {
        if (l + 1 < model.layers.size()) {
            // back through tanh: dz = dh * (1 - tanh^2)
            const Matrix& act = cache.activations[l];
            for (std::size_t i = 0; i < g.data.size(); ++i)
                g.data[i] *= 1.0 - act.data[i] * act.data[i];
        }
        grads[l] = adapter_backward(g, cache.layer_caches[l], model.layers[l]);
        g = grads[l].d_x;
    }
    return {loss, std::move(grads)};
}

inline double evaluate_loss(const Model& model, const Matrix& x, const Matrix* target,
                            const std::vector<int>* labels) {
    const Matrix pred = model_forward(model, x);
    if (model.loss == LossKind::MSE) return detail::mse_loss(pred, *target, nullptr);
    return detail::ce_loss(pred, *labels, nullptr);
}

inline double evaluate_accuracy(const Model& model, const Matrix& x,
                                const std::vector<int>& labels) {
    const Matrix pred = model_forward(model, x);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.rows; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < pred.cols; ++j)
            if (pred(i, j) > pred(i, best)) best = j;
        if (static_cast<int>(best) == labels[i]) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(pred.rows);
}

}  // namespace peftlab
