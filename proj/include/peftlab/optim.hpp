#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "peftlab/adapters.hpp"
#include "peftlab/errors.hpp"

namespace peftlab {

enum class ParamGroup { FactorA, FactorB, MapAlpha, MapBeta, DoraMags };

inline const char* group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::FactorA: return "A";
        case ParamGroup::FactorB: return "B";
        case ParamGroup::MapAlpha: return "alpha";
        case ParamGroup::MapBeta: return "beta";
        case ParamGroup::DoraMags: return "mags";
    }
    return "?";
}

/// Non-owning view of one trainable tensor.
struct ParamRef {
    std::string name;
    ParamGroup group;
    double* data = nullptr;
    std::size_t size = 0;
    bool decay = false;  // weight decay applies to A and B only
};

enum class OptKind { SGD, AdamW };

struct OptHyper {
    double lr = 1e-3;  // peak; the schedule supplies the per-step value
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// AdamW with decoupled weight decay, or plain SGD. Moment buffers and the
/// bias-correction counter are kept per tensor so parameters frozen by a
/// stepwise mask stay bit-identical and resume with correct corrections.
class Optimizer {
  public:
    Optimizer(OptKind kind, OptHyper hyper) : kind_(kind), hyper_(hyper) {}

    OptKind kind() const { return kind_; }
    const OptHyper& hyper() const { return hyper_; }
    long step_count() const { return step_count_; }

    struct Slot {
        std::vector<double> m, v;
        long steps = 0;
    };

    void apply(const std::vector<ParamRef>& params,
               const std::vector<std::vector<double>>& grads, double lr) {
        if (params.size() != grads.size())
            throw DimensionError("optimizer: parameter/gradient count mismatch");
        for (std::size_t p = 0; p < params.size(); ++p) {
            const ParamRef& ref = params[p];
            const std::vector<double>& g = grads[p];
            if (g.size() != ref.size)
                throw DimensionError("optimizer: gradient size mismatch for " + ref.name);
            if (kind_ == OptKind::SGD) {
                for (std::size_t i = 0; i < ref.size; ++i) {
                    double upd = g[i];
                    if (ref.decay) upd += hyper_.weight_decay * ref.data[i];
                    ref.data[i] -= lr * upd;
                }
                continue;
            }
            Slot& slot = slots_[ref.name];
            if (slot.m.empty()) {
                slot.m.assign(ref.size, 0.0);
                slot.v.assign(ref.size, 0.0);
            }
            slot.steps += 1;
            const double bc1 = 1.0 - std::pow(hyper_.beta1, slot.steps);
            const double bc2 = 1.0 - std::pow(hyper_.beta2, slot.steps);
            for (std::size_t i = 0; i < ref.size; ++i) {
                slot.m[i] = hyper_.beta1 * slot.m[i] + (1.0 - hyper_.beta1) * g[i];
                slot.v[i] = hyper_.beta2 * slot.v[i] + (1.0 - hyper_.beta2) * g[i] * g[i];
                const double m_hat = slot.m[i] / bc1;
                const double v_hat = slot.v[i] / bc2;
                ref.data[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper_.eps);
                if (ref.decay) ref.data[i] -= lr * hyper_.weight_decay * ref.data[i];
            }
        }
        step_count_ += 1;
    }

    std::map<std::string, Slot>& slots() { return slots_; }
    const std::map<std::string, Slot>& slots() const { return slots_; }
    void set_step_count(long c) { step_count_ = c; }

  private:
    OptKind kind_;
    OptHyper hyper_;
    long step_count_ = 0;
    std::map<std::string, Slot> slots_;
};

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear warmup 0 -> peak, then linear decay -> 0.
// ---------------------------------------------------------------------------

struct Schedule {
    long warmup_steps = 100;
    long total_steps = 0;
    double peak_lr = 1e-3;
};

inline double schedule_lr(const Schedule& s, long step) {
    if (step < 0 || step > s.total_steps)
        throw RangeError("schedule_lr: step " + std::to_string(step) +
                         " outside [0, " + std::to_string(s.total_steps) + "]");
    if (step < s.warmup_steps)
        return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    if (s.total_steps == s.warmup_steps) return s.peak_lr;
    return s.peak_lr * static_cast<double>(s.total_steps - step) /
           static_cast<double>(s.total_steps - s.warmup_steps);
}

// ---------------------------------------------------------------------------
// Joint vs stepwise optimization
// ---------------------------------------------------------------------------

enum class OptMode { Joint, Stepwise };

struct OptModeCfg {
    OptMode mode = OptMode::Joint;
    long period = 1;  // steps per stepwise phase
};

/// Parameter groups updated at a given global step. Stepwise alternates the
/// magnitude scalars (alpha, beta) and the direction factors (A, B) every
/// `period` steps, starting with the scalars.
inline std::set<ParamGroup> active_groups(const OptModeCfg& cfg, AdapterKind kind,
                                          long step) {
    if (cfg.mode == OptMode::Joint) {
        std::set<ParamGroup> all{ParamGroup::FactorA, ParamGroup::FactorB};
        if (kind == AdapterKind::MAP) {
            all.insert(ParamGroup::MapAlpha);
            all.insert(ParamGroup::MapBeta);
        } else if (kind == AdapterKind::DoRA) {
            all.insert(ParamGroup::DoraMags);
        }
        return all;
    }
    if (cfg.period < 1) throw ConfigError("stepwise period must be >= 1");
    if (kind != AdapterKind::MAP)
        throw ConfigError("stepwise optimization alternates (alpha, beta) and (A, B); "
                          "only the MAP adapter has magnitude scalars");
    const bool scalar_phase = ((step / cfg.period) % 2) == 0;
    if (scalar_phase) return {ParamGroup::MapAlpha, ParamGroup::MapBeta};
    return {ParamGroup::FactorA, ParamGroup::FactorB};
}

}  // namespace peftlab
