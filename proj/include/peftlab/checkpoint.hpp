#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "peftlab/config.hpp"
#include "peftlab/train.hpp"

namespace peftlab {

// Checkpoint = text manifest at <path> plus raw tensor payload at <path>.bin.
// Payload is little-endian IEEE-754 doubles, so round-trips are exact.
inline constexpr const char* kCheckpointMagic = "peftlab-checkpoint";
inline constexpr const char* kCheckpointVersion = "v1";
inline constexpr const char* kMergedMagic = "peftlab-merged";

namespace detail {

struct TensorEntry {
    std::string name;
    std::size_t rows = 0, cols = 0;
    std::size_t offset = 0;  // in doubles
};

struct SlotEntry {
    std::string name;
    std::size_t size = 0;
    long steps = 0;
    std::size_t m_offset = 0, v_offset = 0;
};

class PayloadWriter {
  public:
    std::size_t append(const double* data, std::size_t count) {
        const std::size_t off = values_.size();
        values_.insert(values_.end(), data, data + count);
        return off;
    }
    void write(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot write payload: " + path);
        out.write(reinterpret_cast<const char*>(values_.data()),
                  static_cast<std::streamsize>(values_.size() * sizeof(double)));
    }

  private:
    std::vector<double> values_;
};

inline std::vector<double> read_payload(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw Error("cannot read payload: " + path);
    const std::streamsize bytes = in.tellg();
    if (bytes % static_cast<std::streamsize>(sizeof(double)) != 0)
        throw Error("payload size is not a multiple of 8 bytes: " + path);
    std::vector<double> values(static_cast<std::size_t>(bytes) / sizeof(double));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(values.data()), bytes);
    if (!in) throw Error("short read on payload: " + path);
    return values;
}

}  // namespace detail

struct Checkpoint {
    TrainConfig config;
    std::string config_hash;
    long step = 0;
    long opt_step_count = 0;
    std::uint64_t train_rng_state = 0;
    std::map<std::string, Matrix> tensors;                  // params + base weights
    std::map<std::string, Optimizer::Slot> slots;           // AdamW moments
};

inline Checkpoint make_checkpoint(const TrainState& st, const TrainConfig& cfg) {
    Checkpoint ck;
    ck.config = cfg;
    ck.config_hash = config_hash(cfg);
    ck.step = st.step;
    ck.opt_step_count = st.opt.step_count();
    ck.train_rng_state = st.train_rng.state();
    for (std::size_t l = 0; l < st.model.layers.size(); ++l) {
        const AdapterState& s = st.model.layers[l];
        const std::string p = "layer" + std::to_string(l) + ".";
        ck.tensors[p + "W"] = s.base.w;
        ck.tensors[p + "A"] = s.factors.a;
        ck.tensors[p + "B"] = s.factors.b;
        if (s.kind == AdapterKind::MAP) {
            Matrix scalars(1, 2);
            scalars(0, 0) = s.map.alpha;
            scalars(0, 1) = s.map.beta;
            ck.tensors[p + "map"] = scalars;
        } else if (s.kind == AdapterKind::DoRA) {
            Matrix mags(1, s.dora.mags.size());
            mags.data = s.dora.mags;
            ck.tensors[p + "mags"] = mags;
        }
    }
    ck.slots = st.opt.slots();
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    detail::PayloadWriter payload;
    std::ostringstream manifest;
    manifest << kCheckpointMagic << " " << kCheckpointVersion << "\n";
    manifest << "config_hash " << ck.config_hash << "\n";
    manifest << "step " << ck.step << "\n";
    manifest << "opt_step_count " << ck.opt_step_count << "\n";
    manifest << "train_rng " << ck.train_rng_state << "\n";
    manifest << "config_begin\n" << serialize_config(ck.config) << "config_end\n";
    for (const auto& [name, t] : ck.tensors) {
        const std::size_t off = payload.append(t.data.data(), t.size());
        manifest << "tensor " << name << " " << t.rows << " " << t.cols << " " << off
                 << "\n";
    }
    for (const auto& [name, slot] : ck.slots) {
        const std::size_t mo = payload.append(slot.m.data(), slot.m.size());
        const std::size_t vo = payload.append(slot.v.data(), slot.v.size());
        manifest << "slot " << name << " " << slot.m.size() << " " << slot.steps << " "
                 << mo << " " << vo << "\n";
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint: " + path);
    out << manifest.str();
    payload.write(path + ".bin");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read checkpoint: " + path);
    std::string magic, version;
    in >> magic >> version;
    if (magic != kCheckpointMagic)
        throw VersionError("not a checkpoint file: " + path);
    if (version != kCheckpointVersion)
        throw VersionError("unsupported checkpoint version '" + version + "'");
    std::string line;
    std::getline(in, line);  // rest of header line

    Checkpoint ck;
    std::vector<detail::TensorEntry> tensors;
    std::vector<detail::SlotEntry> slots;
    std::string config_text;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "config_hash") ls >> ck.config_hash;
        else if (key == "step") ls >> ck.step;
        else if (key == "opt_step_count") ls >> ck.opt_step_count;
        else if (key == "train_rng") ls >> ck.train_rng_state;
        else if (key == "config_begin") {
            while (std::getline(in, line) && line != "config_end")
                config_text += line + "\n";
        } else if (key == "tensor") {
            detail::TensorEntry t;
            ls >> t.name >> t.rows >> t.cols >> t.offset;
            tensors.push_back(t);
        } else if (key == "slot") {
            detail::SlotEntry s;
            ls >> s.name >> s.size >> s.steps >> s.m_offset >> s.v_offset;
            slots.push_back(s);
        } else if (!key.empty()) {
            throw Error("checkpoint manifest: unknown entry '" + key + "'");
        }
    }

    parse_config_text(config_text, ck.config);
    validate_config(ck.config);
    if (config_hash(ck.config) != ck.config_hash)
        throw ConfigError("checkpoint config hash mismatch (tampered or corrupt)");

    const std::vector<double> payload = detail::read_payload(path + ".bin");
    auto take = [&](std::size_t off, std::size_t count) {
        if (off + count > payload.size())
            throw Error("checkpoint payload truncated");
        return std::vector<double>(payload.begin() + static_cast<long>(off),
                                   payload.begin() + static_cast<long>(off + count));
    };
    for (const detail::TensorEntry& t : tensors) {
        Matrix m(t.rows, t.cols);
        m.data = take(t.offset, t.rows * t.cols);
        ck.tensors[t.name] = std::move(m);
    }
    for (const detail::SlotEntry& s : slots) {
        Optimizer::Slot slot;
        slot.m = take(s.m_offset, s.size);
        slot.v = take(s.v_offset, s.size);
        slot.steps = s.steps;
        ck.slots[s.name] = std::move(slot);
    }
    return ck;
}

namespace detail {

inline const Matrix& require_tensor(const Checkpoint& ck, const std::string& name) {
    const auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw Error("checkpoint missing tensor '" + name + "'");
    return it->second;
}

}  // namespace detail

/// Rebuild the model's layers directly from checkpoint tensors (no dataset or
/// RNG replay needed). Used by merge and by resume.
inline Model model_from_checkpoint(const Checkpoint& ck) {
    Model model;
    model.loss = ck.config.task == TaskKind::Blobs ? LossKind::CrossEntropy
                                                   : LossKind::MSE;
    for (std::size_t l = 0;; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        if (!ck.tensors.count(p + "W")) break;
        AdapterState s;
        s.kind = ck.config.adapter;
        s.base = FrozenBase(detail::require_tensor(ck, p + "W"));
        s.factors.a = detail::require_tensor(ck, p + "A");
        s.factors.b = detail::require_tensor(ck, p + "B");
        s.factors.scaling = ck.config.lora_alpha / static_cast<double>(ck.config.r);
        s.dropout_p = ck.config.dropout_p;
        if (s.kind == AdapterKind::MAP) {
            const Matrix& sc = detail::require_tensor(ck, p + "map");
            s.map.alpha = sc(0, 0);
            s.map.beta = sc(0, 1);
        } else if (s.kind == AdapterKind::DoRA) {
            s.dora.mags = detail::require_tensor(ck, p + "mags").data;
        }
        model.layers.push_back(std::move(s));
    }
    if (model.layers.empty()) throw Error("checkpoint holds no layers");
    return model;
}

/// Restore a built TrainState to the checkpointed step. The state must have
/// been built from the identical config.
inline void restore_train_state(TrainState& st, const Checkpoint& ck) {
    Model restored = model_from_checkpoint(ck);
    if (restored.layers.size() != st.model.layers.size())
        throw ConfigError("checkpoint layer count does not match config");
    st.model = std::move(restored);
    st.opt = Optimizer(ck.config.optimizer, ck.config.hyper);
    st.opt.set_step_count(ck.opt_step_count);
    st.opt.slots() = ck.slots;
    st.train_rng.set_state(ck.train_rng_state);
    st.step = ck.step;
}

/// Write materialized effective weights for every layer of a checkpoint.
inline void write_merged_weights(const Checkpoint& ck, const std::string& out_path) {
    const Model model = model_from_checkpoint(ck);
    detail::PayloadWriter payload;
    std::ostringstream manifest;
    manifest << kMergedMagic << " " << kCheckpointVersion << "\n";
    manifest << "config_hash " << ck.config_hash << "\n";
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const Matrix w_eff = merge(model.layers[l]);
        const std::size_t off = payload.append(w_eff.data.data(), w_eff.size());
        manifest << "tensor layer" << l << ".W_eff " << w_eff.rows << " " << w_eff.cols
                 << " " << off << "\n";
    }
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw Error("cannot write merged weights: " + out_path);
    out << manifest.str();
    payload.write(out_path + ".bin");
}

/// Read back one merged weight matrix from a file written by
/// write_merged_weights.
inline std::map<std::string, Matrix> load_merged_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read merged weights: " + path);
    std::string magic, version;
    in >> magic >> version;
    if (magic != kMergedMagic) throw VersionError("not a merged-weights file: " + path);
    if (version != kCheckpointVersion)
        throw VersionError("unsupported merged-weights version '" + version + "'");
    std::string line;
    std::getline(in, line);
    std::vector<detail::TensorEntry> entries;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "tensor") {
            detail::TensorEntry t;
            ls >> t.name >> t.rows >> t.cols >> t.offset;
            entries.push_back(t);
        }
    }
    const std::vector<double> payload = detail::read_payload(path + ".bin");
    std::map<std::string, Matrix> out;
    for (const detail::TensorEntry& t : entries) {
        if (t.offset + t.rows * t.cols > payload.size())
            throw Error("merged payload truncated");
        Matrix m(t.rows, t.cols);
        m.data.assign(payload.begin() + static_cast<long>(t.offset),
                      payload.begin() + static_cast<long>(t.offset + t.rows * t.cols));
        out[t.name] = std::move(m);
    }
    return out;
}

}  // namespace peftlab
