#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <tuple>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "peftlab/config.hpp"
#include "peftlab/optim.hpp"
#include "peftlab/tasks.hpp"

namespace peftlab {

struct StepRow {
    long step = 0;
    double lr = 0.0;
    double loss = 0.0;
    bool has_scalars = false;  // alpha/beta populated (MAP only)
    double alpha = 0.0;
    double beta = 0.0;
    bool has_timing = false;
    double step_ms = 0.0;
};

struct RunRecord {
    std::vector<StepRow> rows;
    double final_train_loss = 0.0;
    double final_val_loss = 0.0;
    double final_val_accuracy = -1.0;  // classification only
    std::size_t trainable_params = 0;
    std::string config_hash;
    std::uint64_t seed = 0;
};

/// Everything a run owns: data, model, optimizer, schedule, step cursor.
struct TrainState {
    Dataset data;
    PlantedTarget target;  // teacher_student only
    Model model;
    Optimizer opt;
    Schedule sched;
    Rng train_rng;
    long step = 0;
    long steps_per_epoch = 0;
    long total_steps = 0;
    OptModeCfg mode;

    TrainState() : opt(OptKind::AdamW, OptHyper{}), train_rng(0) {}
};

namespace detail {

inline Matrix slice_rows_wrapped(const Matrix& m, std::size_t start, std::size_t count) {
    Matrix out(count, m.cols);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t src = (start + i) % m.rows;
        for (std::size_t j = 0; j < m.cols; ++j) out(i, j) = m(src, j);
    }
    return out;
}

inline std::vector<int> slice_labels_wrapped(const std::vector<int>& labels,
                                             std::size_t start, std::size_t count) {
    std::vector<int> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = labels[(start + i) % labels.size()];
    return out;
}

}  // namespace detail

/// Trainable tensors of one model, in a fixed deterministic order.
inline std::vector<ParamRef> trainable_params(Model& model) {
    std::vector<ParamRef> refs;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        AdapterState& s = model.layers[l];
        const std::string p = "layer" + std::to_string(l) + ".";
        refs.push_back({p + "A", ParamGroup::FactorA, s.factors.a.data.data(),
                        s.factors.a.size(), true});
        refs.push_back({p + "B", ParamGroup::FactorB, s.factors.b.data.data(),
                        s.factors.b.size(), true});
        if (s.kind == AdapterKind::MAP) {
            refs.push_back({p + "alpha", ParamGroup::MapAlpha, &s.map.alpha, 1, false});
            refs.push_back({p + "beta", ParamGroup::MapBeta, &s.map.beta, 1, false});
        } else if (s.kind == AdapterKind::DoRA) {
            refs.push_back({p + "mags", ParamGroup::DoraMags, s.dora.mags.data(),
                            s.dora.mags.size(), false});
        }
    }
    return refs;
}

inline std::vector<double> grad_for_ref(const ParamRef& ref, const GradBundle& g) {
    switch (ref.group) {
        case ParamGroup::FactorA: return g.d_a.data;
        case ParamGroup::FactorB: return g.d_b.data;
        case ParamGroup::MapAlpha: return {g.d_alpha};
        case ParamGroup::MapBeta: return {g.d_beta};
        case ParamGroup::DoraMags: return g.d_mags;
    }
    throw ConfigError("grad_for_ref: unknown group");
}

inline TrainState build_train_state(const TrainConfig& cfg) {
    validate_config(cfg);
    TrainState st;
    Rng master(cfg.seed);
    Rng data_rng(master.next_u64());
    Rng init_rng(master.next_u64());
    st.train_rng = Rng(master.next_u64());

    if (cfg.task == TaskKind::TeacherStudent) {
        auto [ds, target] = gen_teacher_student(
            data_rng, cfg.n, cfg.m, cfg.r, cfg.a_star, cfg.b_star, cfg.samples,
            cfg.noise_std);
        st.data = std::move(ds);
        st.target = std::move(target);
        AdapterInit init{static_cast<std::size_t>(cfg.r), cfg.lora_alpha, cfg.beta_init,
                         cfg.b_init_std, cfg.dropout_p};
        st.model.loss = LossKind::MSE;
        st.model.layers.push_back(
            init_adapter(cfg.adapter, init_rng, FrozenBase(st.target.w_base), init));
    } else {
        st.data = gen_gaussian_blobs(data_rng, cfg.n, cfg.classes, cfg.samples,
                                     cfg.blob_radius, cfg.blob_spread);
        st.model.loss = LossKind::CrossEntropy;
        AdapterInit init{static_cast<std::size_t>(cfg.r), cfg.lora_alpha, cfg.beta_init,
                         cfg.b_init_std, cfg.dropout_p};
        // Frozen bases stand in for pre-trained weights.
        Matrix w1 = gaussian_init(init_rng, cfg.n, cfg.hidden,
                                  1.0 / std::sqrt(static_cast<double>(cfg.n)));
        Matrix w2 = gaussian_init(init_rng, cfg.hidden, cfg.classes,
                                  1.0 / std::sqrt(static_cast<double>(cfg.hidden)));
        st.model.layers.push_back(
            init_adapter(cfg.adapter, init_rng, FrozenBase(std::move(w1)), init));
        st.model.layers.push_back(
            init_adapter(cfg.adapter, init_rng, FrozenBase(std::move(w2)), init));
    }

    const long train_rows = static_cast<long>(st.data.x_train.rows);
    st.steps_per_epoch = (train_rows + cfg.batch_size - 1) / cfg.batch_size;
    st.total_steps =
        cfg.max_steps > 0 ? cfg.max_steps : cfg.epochs * st.steps_per_epoch;
    st.sched = Schedule{cfg.warmup_steps, st.total_steps, cfg.hyper.lr};
    st.opt = Optimizer(cfg.optimizer, cfg.hyper);
    st.mode = cfg.opt_mode;
    if (st.mode.mode == OptMode::Stepwise)
        st.mode.period = cfg.stepwise_period > 0 ? cfg.stepwise_period : st.steps_per_epoch;
    return st;
}

inline std::string param_norm_report(Model& model) {
    std::ostringstream os;
    for (const ParamRef& ref : trainable_params(model)) {
        double s = 0.0;
        for (std::size_t i = 0; i < ref.size; ++i) s += ref.data[i] * ref.data[i];
        os << " " << ref.name << "=" << std::sqrt(s);
    }
    return os.str();
}

/// Deterministic step loop from st.step to st.total_steps. Mini-batches walk
/// the training set sequentially, so the trajectory depends only on the
/// config and the seed.
inline RunRecord run_training(TrainState& st, const TrainConfig& cfg,
                              long stop_at_step = -1) {
    const long last_step =
        stop_at_step < 0 ? st.total_steps : std::min(stop_at_step, st.total_steps);
    RunRecord rec;
    rec.config_hash = config_hash(cfg);
    rec.seed = cfg.seed;
    for (const AdapterState& s : st.model.layers)
        rec.trainable_params += trainable_count(s);

    const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
    const bool timing = cfg.record_timing;
    Rng* train_rng = cfg.dropout_p > 0.0 ? &st.train_rng : nullptr;

    for (; st.step < last_step; ++st.step) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = schedule_lr(st.sched, st.step);
        const std::size_t start = (static_cast<std::size_t>(st.step) * batch) %
                                  st.data.x_train.rows;
        const Matrix xb = detail::slice_rows_wrapped(st.data.x_train, start, batch);

        double loss = 0.0;
        std::vector<GradBundle> grads;
        try {
            if (st.model.loss == LossKind::MSE) {
                const Matrix yb = detail::slice_rows_wrapped(st.data.y_train, start, batch);
                std::tie(loss, grads) =
                    loss_and_grad(st.model, xb, &yb, nullptr, train_rng);
            } else {
                const std::vector<int> lb =
                    detail::slice_labels_wrapped(st.data.labels_train, start, batch);
                std::tie(loss, grads) =
                    loss_and_grad(st.model, xb, nullptr, &lb, train_rng);
            }
        } catch (const NumericError& e) {
            throw NumericError("training aborted at step " + std::to_string(st.step) +
                               " (lr=" + std::to_string(lr) + "): " + e.what() +
                               "; param norms:" + param_norm_report(st.model));
        }
        const std::set<ParamGroup> groups = active_groups(st.mode, cfg.adapter, st.step);
        if (groups.empty()) throw ConfigError("run_training: empty parameter mask");
        std::vector<ParamRef> refs;
        std::vector<std::vector<double>> ref_grads;
        std::vector<ParamRef> all = trainable_params(st.model);
        // ParamRef names encode the layer; recover the bundle index from the name.
        for (const ParamRef& ref : all) {
            if (!groups.count(ref.group)) continue;
            const std::size_t layer = static_cast<std::size_t>(
                std::stoul(ref.name.substr(5, ref.name.find('.') - 5)));
            refs.push_back(ref);
            ref_grads.push_back(grad_for_ref(ref, grads[layer]));
        }
        st.opt.apply(refs, ref_grads, lr);

        StepRow row;
        row.step = st.step;
        row.lr = lr;
        row.loss = loss;
        if (cfg.adapter == AdapterKind::MAP) {
            row.has_scalars = true;
            row.alpha = st.model.layers[0].map.alpha;
            row.beta = st.model.layers[0].map.beta;
        }
        if (timing) {
            row.has_timing = true;
            row.step_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
        }
        rec.rows.push_back(row);
    }

    if (st.model.loss == LossKind::MSE) {
        rec.final_train_loss =
            evaluate_loss(st.model, st.data.x_train, &st.data.y_train, nullptr);
        rec.final_val_loss =
            evaluate_loss(st.model, st.data.x_val, &st.data.y_val, nullptr);
    } else {
        rec.final_train_loss =
            evaluate_loss(st.model, st.data.x_train, nullptr, &st.data.labels_train);
        rec.final_val_loss =
            evaluate_loss(st.model, st.data.x_val, nullptr, &st.data.labels_val);
        rec.final_val_accuracy =
            evaluate_accuracy(st.model, st.data.x_val, st.data.labels_val);
    }
    return rec;
}

// ---------------------------------------------------------------------------
// metrics.csv: step,lr,loss,alpha,beta,step_ms. LF endings, '.' decimals.
// alpha/beta are blank for non-MAP kinds; step_ms is blank unless timing was
// requested, so default CSVs are byte-deterministic for a given config+seed.
// ---------------------------------------------------------------------------

inline std::string format_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string metrics_csv(const RunRecord& rec) {
    std::string out = "step,lr,loss,alpha,beta,step_ms\n";
    for (const StepRow& r : rec.rows) {
        out += std::to_string(r.step);
        out += ',';
        out += format_metric(r.lr);
        out += ',';
        out += format_metric(r.loss);
        out += ',';
        if (r.has_scalars) {
            out += format_metric(r.alpha);
            out += ',';
            out += format_metric(r.beta);
        } else {
            out += ',';
        }
        out += ',';
        if (r.has_timing) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.3f", r.step_ms);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

inline std::string run_summary(const RunRecord& rec, const TrainConfig& cfg) {
    std::ostringstream os;
    os << "task: " << task_name(cfg.task) << "\n";
    os << "adapter: " << kind_name(cfg.adapter) << "\n";
    os << "seed: " << rec.seed << "\n";
    os << "config_hash: " << rec.config_hash << "\n";
    os << "steps: " << rec.rows.size() << "\n";
    os << "trainable_params: " << rec.trainable_params << "\n";
    os << "final_train_loss: " << format_metric(rec.final_train_loss) << "\n";
    os << "final_val_loss: " << format_metric(rec.final_val_loss) << "\n";
    if (rec.final_val_accuracy >= 0.0)
        os << "final_val_accuracy: " << format_metric(rec.final_val_accuracy) << "\n";
    return os.str();
}

}  // namespace peftlab
