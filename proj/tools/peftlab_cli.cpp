// Experiment CLI: gradient checking, parameter accounting, deterministic
// training runs, adapter merging, and step-time benchmarks.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "peftlab/bench.hpp"
#include "peftlab/checkpoint.hpp"
#include "peftlab/config.hpp"
#include "peftlab/gradcheck.hpp"
#include "peftlab/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerificationFailure = 1;
constexpr int kExitConfigError = 2;

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw peftlab::Error("cannot write " + path);
    out << content;
}

int run_gradcheck(const std::string& kind_str, std::uint64_t seed, long n, long m,
                  long r, long batch, const std::string& corrupt_group) {
    const peftlab::AdapterKind kind = peftlab::parse_adapter_kind(kind_str);
    const auto adapter_report = peftlab::gradcheck_adapter(
        kind, seed, n, m, r, batch, corrupt_group);
    const auto model_report = peftlab::gradcheck_model(kind, seed + 1);

    bool ok = true;
    auto print = [&](const char* label, const peftlab::GradCheckReport& rep) {
        for (const auto& g : rep.groups) {
            const bool pass = g.max_rel_err < rep.threshold;
            std::printf("%s %-12s max_rel_err=%.3e %s\n", label, g.name.c_str(),
                        g.max_rel_err, pass ? "ok" : "FAIL");
            ok = ok && pass;
        }
    };
    print("adapter", adapter_report);
    print("model  ", model_report);
    if (!ok) {
        std::printf("gradcheck failed: worst group '%s'\n",
                    adapter_report.ok() ? model_report.worst_group().c_str()
                                        : adapter_report.worst_group().c_str());
        return kExitVerificationFailure;
    }
    std::printf("gradcheck passed (threshold %.0e)\n", peftlab::kGradCheckTol);
    return kExitOk;
}

int run_count_params(const std::string& kind_str, long n, long m, long r) {
    const peftlab::AdapterKind kind = peftlab::parse_adapter_kind(kind_str);
    const std::size_t lora = peftlab::param_count(peftlab::AdapterKind::PlainLoRA, n, m, r);
    const std::size_t count = peftlab::param_count(kind, n, m, r);
    std::printf("kind=%s n=%ld m=%ld r=%ld params=%zu lora_baseline=%zu overhead=%+ld "
                "ratio=%.6f\n",
                peftlab::kind_name(kind), n, m, r, count, lora,
                static_cast<long>(count) - static_cast<long>(lora),
                static_cast<double>(count) / static_cast<double>(lora));
    return kExitOk;
}

int run_train(peftlab::TrainConfig cfg, const std::string& out_dir,
              const std::string& resume_path) {
    peftlab::validate_config(cfg);
    std::filesystem::create_directories(out_dir);
    peftlab::TrainState st = peftlab::build_train_state(cfg);
    if (!resume_path.empty()) {
        const peftlab::Checkpoint ck = peftlab::load_checkpoint(resume_path);
        if (peftlab::config_hash(ck.config) != peftlab::config_hash(cfg))
            throw peftlab::ConfigError("resume: checkpoint was produced by a different config");
        peftlab::restore_train_state(st, ck);
    }
    const peftlab::RunRecord rec = peftlab::run_training(st, cfg);

    write_file(out_dir + "/metrics.csv", peftlab::metrics_csv(rec));
    write_file(out_dir + "/summary.txt", peftlab::run_summary(rec, cfg));
    write_file(out_dir + "/config.txt", peftlab::serialize_config(cfg));
    peftlab::save_checkpoint(peftlab::make_checkpoint(st, cfg), out_dir + "/final.ckpt");

    std::printf("%s", peftlab::run_summary(rec, cfg).c_str());
    std::printf("artifacts written to %s\n", out_dir.c_str());
    return kExitOk;
}

int run_merge(const std::string& ckpt_path, const std::string& out_path) {
    const peftlab::Checkpoint ck = peftlab::load_checkpoint(ckpt_path);
    peftlab::write_merged_weights(ck, out_path);
    std::printf("merged weights written to %s (+.bin)\n", out_path.c_str());
    return kExitOk;
}

int run_bench(long n, long m, long r, long batch, long steps, std::uint64_t seed) {
    using peftlab::AdapterKind;
    const AdapterKind kinds[] = {AdapterKind::PlainLoRA, AdapterKind::MAP,
                                 AdapterKind::DoRA};
    double lora_ms = 0.0;
    std::printf("%-6s %12s %8s\n", "kind", "median_ms", "vs_lora");
    for (AdapterKind k : kinds) {
        const peftlab::BenchResult res =
            peftlab::bench_adapter(k, n, m, r, batch, steps, seed);
        if (k == AdapterKind::PlainLoRA) lora_ms = res.median_step_ms;
        std::printf("%-6s %12.4f %8.3f\n", peftlab::kind_name(k), res.median_step_ms,
                    res.median_step_ms / lora_ms);
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Parameter-efficient fine-tuning kernels: LoRA, DoRA, and "
                 "Frobenius-decoupled magnitude/direction adaptation"};
    app.require_subcommand(1);

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "verify analytic gradients against "
                                               "central finite differences");
    std::string gc_kind = "map";
    std::uint64_t gc_seed = 42;
    long gc_n = 8, gc_m = 6, gc_r = 2, gc_batch = 4;
    std::string gc_corrupt;
    gc->add_option("--kind", gc_kind, "adapter kind: lora|dora|map");
    gc->add_option("--seed", gc_seed, "rng seed");
    gc->add_option("--n", gc_n, "input dim");
    gc->add_option("--m", gc_m, "output dim");
    gc->add_option("--r", gc_r, "rank");
    gc->add_option("--batch", gc_batch, "batch size");
    gc->add_option("--corrupt-group", gc_corrupt,
                   "perturb the analytic gradient of one group (checker self-test)")
        ->group("");  // hidden

    // count-params
    auto* cp = app.add_subcommand("count-params", "trainable parameter accounting");
    std::string cp_kind = "map";
    long cp_n = 256, cp_m = 256, cp_r = 8;
    cp->add_option("--kind", cp_kind, "adapter kind: lora|dora|map");
    cp->add_option("--n", cp_n, "rows of W");
    cp->add_option("--m", cp_m, "cols of W");
    cp->add_option("--r", cp_r, "rank");

    // train
    auto* tr = app.add_subcommand("train", "run a deterministic experiment");
    peftlab::TrainConfig cfg;
    std::string tr_config_file, tr_out = "run_out", tr_resume;
    std::string tr_task, tr_adapter, tr_mode;
    std::uint64_t tr_seed = 0;
    tr->add_option("--config", tr_config_file, "key = value config file");
    tr->add_option("--seed", tr_seed, "rng seed")->required();
    tr->add_option("--out", tr_out, "output directory");
    tr->add_option("--resume", tr_resume, "checkpoint to resume from");
    tr->add_option("--task", tr_task, "teacher_student|blobs");
    tr->add_option("--adapter", tr_adapter, "lora|dora|map");
    tr->add_option("--mode", tr_mode, "joint|stepwise");
    tr->add_option("--n", cfg.n, "input dim");
    tr->add_option("--m", cfg.m, "output dim");
    tr->add_option("--r", cfg.r, "rank");
    tr->add_option("--samples", cfg.samples, "dataset size");
    tr->add_option("--blob-radius", cfg.blob_radius, "blobs class-mean radius");
    tr->add_option("--blob-spread", cfg.blob_spread, "blobs within-class spread");
    tr->add_option("--noise-std", cfg.noise_std, "label noise");
    tr->add_option("--a-star", cfg.a_star, "planted base magnitude");
    tr->add_option("--b-star", cfg.b_star, "planted update magnitude");
    tr->add_option("--lr", cfg.hyper.lr, "peak learning rate");
    tr->add_option("--weight-decay", cfg.hyper.weight_decay, "decoupled weight decay");
    tr->add_option("--warmup-steps", cfg.warmup_steps, "linear warmup steps");
    tr->add_option("--epochs", cfg.epochs, "training epochs");
    tr->add_option("--batch-size", cfg.batch_size, "mini-batch size");
    tr->add_option("--max-steps", cfg.max_steps, "override total steps");
    tr->add_option("--lora-alpha", cfg.lora_alpha, "LoRA scaling numerator");
    tr->add_option("--beta-init", cfg.beta_init, "initial MAP beta");
    tr->add_option("--b-init-std", cfg.b_init_std, "MAP B init std");
    tr->add_option("--dropout", cfg.dropout_p, "adapter-branch dropout");
    tr->add_option("--stepwise-period", cfg.stepwise_period,
                   "steps per stepwise phase (0 = one epoch)");
    tr->add_flag("--timing", cfg.record_timing, "record per-step wall time in the CSV");

    // merge
    auto* mg = app.add_subcommand("merge", "materialize adapters into dense weights");
    std::string mg_ckpt, mg_out;
    mg->add_option("checkpoint", mg_ckpt, "checkpoint path")->required();
    mg->add_option("output", mg_out, "output path")->required();

    // bench
    auto* bn = app.add_subcommand("bench", "median step time per adapter kind");
    long bn_n = 512, bn_m = 512, bn_r = 8, bn_batch = 16, bn_steps = 200;
    std::uint64_t bn_seed = 7;
    bn->add_option("--n", bn_n, "rows of W");
    bn->add_option("--m", bn_m, "cols of W");
    bn->add_option("--r", bn_r, "rank");
    bn->add_option("--batch", bn_batch, "batch size");
    bn->add_option("--steps", bn_steps, "timed steps (>=200 recommended)");
    bn->add_option("--seed", bn_seed, "rng seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gc->parsed())
            return run_gradcheck(gc_kind, gc_seed, gc_n, gc_m, gc_r, gc_batch, gc_corrupt);
        if (cp->parsed()) return run_count_params(cp_kind, cp_n, cp_m, cp_r);
        if (tr->parsed()) {
            if (!tr_config_file.empty()) {
                std::ifstream in(tr_config_file);
                if (!in) throw peftlab::ConfigError("cannot open config file: " +
                                                    tr_config_file);
                std::stringstream buf;
                buf << in.rdbuf();
                // The file provides the base; flags passed on the command
                // line override it below.
                peftlab::TrainConfig file_cfg;
                peftlab::parse_config_text(buf.str(), file_cfg);
                auto passed = [&](const char* name) { return tr->count(name) > 0; };
                if (!passed("--n")) cfg.n = file_cfg.n;
                if (!passed("--m")) cfg.m = file_cfg.m;
                if (!passed("--r")) cfg.r = file_cfg.r;
                if (!passed("--samples")) cfg.samples = file_cfg.samples;
                if (!passed("--blob-radius")) cfg.blob_radius = file_cfg.blob_radius;
                if (!passed("--blob-spread")) cfg.blob_spread = file_cfg.blob_spread;
                if (!passed("--noise-std")) cfg.noise_std = file_cfg.noise_std;
                if (!passed("--a-star")) cfg.a_star = file_cfg.a_star;
                if (!passed("--b-star")) cfg.b_star = file_cfg.b_star;
                if (!passed("--lr")) cfg.hyper.lr = file_cfg.hyper.lr;
                if (!passed("--weight-decay"))
                    cfg.hyper.weight_decay = file_cfg.hyper.weight_decay;
                if (!passed("--warmup-steps")) cfg.warmup_steps = file_cfg.warmup_steps;
                if (!passed("--epochs")) cfg.epochs = file_cfg.epochs;
                if (!passed("--batch-size")) cfg.batch_size = file_cfg.batch_size;
                if (!passed("--max-steps")) cfg.max_steps = file_cfg.max_steps;
                if (!passed("--lora-alpha")) cfg.lora_alpha = file_cfg.lora_alpha;
                if (!passed("--beta-init")) cfg.beta_init = file_cfg.beta_init;
                if (!passed("--b-init-std")) cfg.b_init_std = file_cfg.b_init_std;
                if (!passed("--dropout")) cfg.dropout_p = file_cfg.dropout_p;
                if (!passed("--stepwise-period"))
                    cfg.stepwise_period = file_cfg.stepwise_period;
                if (!passed("--timing")) cfg.record_timing = file_cfg.record_timing;
                cfg.task = file_cfg.task;
                cfg.adapter = file_cfg.adapter;
                cfg.opt_mode = file_cfg.opt_mode;
                cfg.optimizer = file_cfg.optimizer;
                cfg.hyper.beta1 = file_cfg.hyper.beta1;
                cfg.hyper.beta2 = file_cfg.hyper.beta2;
                cfg.hyper.eps = file_cfg.hyper.eps;
                cfg.classes = file_cfg.classes;
                cfg.hidden = file_cfg.hidden;
            }
            if (!tr_task.empty())
                cfg.task = tr_task == "blobs" ? peftlab::TaskKind::Blobs
                                              : peftlab::TaskKind::TeacherStudent;
            if (!tr_adapter.empty()) cfg.adapter = peftlab::parse_adapter_kind(tr_adapter);
            if (!tr_mode.empty())
                cfg.opt_mode.mode = tr_mode == "stepwise" ? peftlab::OptMode::Stepwise
                                                          : peftlab::OptMode::Joint;
            cfg.seed = tr_seed;
            return run_train(cfg, tr_out, tr_resume);
        }
        if (mg->parsed()) return run_merge(mg_ckpt, mg_out);
        if (bn->parsed()) return run_bench(bn_n, bn_m, bn_r, bn_batch, bn_steps, bn_seed);
    } catch (const peftlab::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfigError;
    } catch (const peftlab::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitVerificationFailure;
    }
    return kExitOk;
}
