#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "peftlab/optim.hpp"

using namespace peftlab;

TEST_CASE("schedule: warmup interpolation, peak, endpoint") {
    const Schedule s{100, 1000, 1e-3};
    CHECK(schedule_lr(s, 50) == Catch::Approx(5e-4).margin(1e-18));
    CHECK(schedule_lr(s, 100) == Catch::Approx(1e-3).margin(1e-18));
    CHECK(schedule_lr(s, 1000) == 0.0);
    CHECK(schedule_lr(s, 0) == 0.0);
    CHECK_THROWS_AS(schedule_lr(s, -1), RangeError);
    CHECK_THROWS_AS(schedule_lr(s, 1001), RangeError);
}

TEST_CASE("schedule is piecewise linear with max equal to peak") {
    const Schedule s{40, 300, 2.5e-3};
    double max_seen = 0.0;
    for (long t = 0; t <= 300; ++t) {
        const double lr = schedule_lr(s, t);
        max_seen = std::max(max_seen, lr);
        if (t > 0 && t < 40) {
            // constant slope on the warmup ramp
            const double slope = schedule_lr(s, t) - schedule_lr(s, t - 1);
            CHECK(slope == Catch::Approx(s.peak_lr / 40.0).margin(1e-15));
        }
        if (t > 41) {
            const double slope = schedule_lr(s, t) - schedule_lr(s, t - 1);
            CHECK(slope == Catch::Approx(-s.peak_lr / 260.0).margin(1e-15));
        }
    }
    CHECK(max_seen == Catch::Approx(s.peak_lr).margin(1e-18));
}

TEST_CASE("schedule with zero warmup starts at peak") {
    const Schedule s{0, 10, 1e-2};
    CHECK(schedule_lr(s, 0) == Catch::Approx(1e-2));
}

TEST_CASE("adamw single step hand computation") {
    // m-hat = 1, v-hat = 1 on the first step: p <- 1 - lr * 1/(1 + eps)
    double p = 1.0;
    Optimizer opt(OptKind::AdamW, OptHyper{0.1, 0.9, 0.999, 1e-8, 0.0});
    std::vector<ParamRef> refs{{"p", ParamGroup::FactorA, &p, 1, false}};
    opt.apply(refs, {{1.0}}, 0.1);
    CHECK(p == Catch::Approx(0.9).margin(1e-6));
    CHECK(opt.step_count() == 1);
}

TEST_CASE("adamw: zero gradient and zero decay leaves parameters unchanged") {
    double p = 3.14159;
    Optimizer opt(OptKind::AdamW, OptHyper{0.1});
    std::vector<ParamRef> refs{{"p", ParamGroup::FactorA, &p, 1, true}};
    for (int i = 0; i < 10; ++i) opt.apply(refs, {{0.0}}, 0.1);
    CHECK(p == 3.14159);
}

TEST_CASE("adamw converges on f(p) = p^2") {
    double p = 1.0;
    Optimizer opt(OptKind::AdamW, OptHyper{0.05});
    std::vector<ParamRef> refs{{"p", ParamGroup::FactorA, &p, 1, false}};
    for (int i = 0; i < 100; ++i) opt.apply(refs, {{2.0 * p}}, 0.05);
    CHECK(std::fabs(p) < 0.05);
}

TEST_CASE("adamw step magnitude approaches lr under a constant gradient") {
    double p = 0.0;
    const double lr = 1e-3;
    Optimizer opt(OptKind::AdamW, OptHyper{lr});
    std::vector<ParamRef> refs{{"p", ParamGroup::FactorA, &p, 1, false}};
    double prev = p;
    double last_step = 0.0;
    for (int i = 0; i < 1000; ++i) {
        opt.apply(refs, {{0.37}}, lr);
        last_step = std::fabs(p - prev);
        prev = p;
    }
    CHECK(last_step == Catch::Approx(lr).epsilon(0.01));
}

TEST_CASE("weight decay applies only to decay-tagged parameters") {
    double a = 2.0, scalar = 2.0;
    Optimizer opt(OptKind::AdamW, OptHyper{0.1, 0.9, 0.999, 1e-8, 0.5});
    std::vector<ParamRef> refs{{"A", ParamGroup::FactorA, &a, 1, true},
                               {"alpha", ParamGroup::MapAlpha, &scalar, 1, false}};
    opt.apply(refs, {{0.0}, {0.0}}, 0.1);
    CHECK(a < 2.0);          // decayed
    CHECK(scalar == 2.0);    // untouched
}

TEST_CASE("sgd takes plain gradient steps") {
    double p = 1.0;
    Optimizer opt(OptKind::SGD, OptHyper{});
    std::vector<ParamRef> refs{{"p", ParamGroup::FactorA, &p, 1, false}};
    opt.apply(refs, {{0.5}}, 0.2);
    CHECK(p == Catch::Approx(0.9).margin(1e-15));
}

TEST_CASE("masked parameters stay bit-identical") {
    // Masking = omitting the ref from apply; moments for the omitted tensor
    // must not advance either.
    double a = 1.0, b = -2.0;
    Optimizer opt(OptKind::AdamW, OptHyper{0.01});
    std::vector<ParamRef> both{{"a", ParamGroup::FactorA, &a, 1, false},
                               {"b", ParamGroup::FactorB, &b, 1, false}};
    std::vector<ParamRef> only_a{both[0]};
    const double b_bits = b;
    for (int i = 0; i < 25; ++i) opt.apply(only_a, {{1.0}}, 0.01);
    CHECK(b == b_bits);
    CHECK(opt.slots().count("b") == 0);
    CHECK(a != 1.0);
}

TEST_CASE("active_groups: joint covers the kind's full set") {
    const OptModeCfg joint{OptMode::Joint, 1};
    auto g = active_groups(joint, AdapterKind::MAP, 0);
    CHECK(g.count(ParamGroup::FactorA) == 1);
    CHECK(g.count(ParamGroup::FactorB) == 1);
    CHECK(g.count(ParamGroup::MapAlpha) == 1);
    CHECK(g.count(ParamGroup::MapBeta) == 1);
    auto gd = active_groups(joint, AdapterKind::DoRA, 5);
    CHECK(gd.count(ParamGroup::DoraMags) == 1);
    CHECK(gd.count(ParamGroup::MapAlpha) == 0);
}

TEST_CASE("active_groups: stepwise alternates at phase boundaries") {
    const OptModeCfg sw{OptMode::Stepwise, 10};
    for (long step : {0L, 5L, 9L}) {
        auto g = active_groups(sw, AdapterKind::MAP, step);
        CHECK(g.count(ParamGroup::MapAlpha) == 1);
        CHECK(g.count(ParamGroup::FactorA) == 0);
    }
    for (long step : {10L, 19L}) {
        auto g = active_groups(sw, AdapterKind::MAP, step);
        CHECK(g.count(ParamGroup::FactorA) == 1);
        CHECK(g.count(ParamGroup::MapAlpha) == 0);
    }
    auto g = active_groups(sw, AdapterKind::MAP, 20);  // back to scalars
    CHECK(g.count(ParamGroup::MapBeta) == 1);
    CHECK_THROWS_AS(active_groups(sw, AdapterKind::PlainLoRA, 0), ConfigError);
}
