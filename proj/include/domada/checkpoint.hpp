#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "binary_io.hpp"
#include "error.hpp"
#include "model.hpp"
#include "optimizer.hpp"

namespace domada {

enum class Phase : std::uint8_t { base = 0, pretrain = 1, sft = 2 };

inline const char* to_string(Phase p) {
    switch (p) {
        case Phase::base: return "base";
        case Phase::pretrain: return "pretrain";
        case Phase::sft: return "sft";
    }
    return "?";
}

/// A model plus whatever is needed to resume training it bit-exactly.
struct Checkpoint {
    Phase phase = Phase::base;
    std::uint64_t step = 0;
    ModelState<float> model;
    std::optional<AdamState<float>> optimizer;

    bool operator==(const Checkpoint&) const = default;
};

// ---------------------------------------------------------------------------
// Checkpoint file, little-endian:
//   "DFCKPT1", u8 phase, u64 step
//   config: u64 vocab_size, d_model, n_layers, n_heads, d_ff, max_seq_len,
//           lora_rank; f64 lora_alpha, lora_dropout; u32 adapted bits;
//           u8 train_embeddings
//   u64 tensor count, then per tensor: u32 name length, name, u32 rank,
//     rank x u64 dims, row-major f32 values
//   u64 FNV-1a checksum of all preceding bytes
// Model tensors come in declaration order. Optimizer moments, when present,
// follow as "optim.m.<name>" / "optim.v.<name>" for each trainable tensor.

inline constexpr std::string_view kCheckpointMagic = "DFCKPT1";

namespace detail {

inline void write_tensor(BinaryWriter& w, const std::string& name, const std::vector<std::uint64_t>& shape,
                         const Matrix<float>& m) {
    w.str32(name);
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) w.u64(d);
    for (float v : m.data) w.f32(v);
}

inline void read_tensor(BinaryReader& r, const std::string& name, const std::vector<std::uint64_t>& shape,
                        Matrix<float>& m) {
    auto got = r.str32();
    if (got != name) throw FormatError("checkpoint: expected tensor '" + name + "', found '" + got + "'");
    const auto rank = r.u32();
    if (rank != shape.size()) throw FormatError("checkpoint: rank mismatch for '" + name + "'");
    std::uint64_t count = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        const auto d = r.u64();
        if (d != shape[i]) throw FormatError("checkpoint: shape mismatch for '" + name + "'");
        count *= d;
    }
    if (count != m.size()) throw FormatError("checkpoint: element count mismatch for '" + name + "'");
    if (count > r.remaining() / 4) throw TruncatedError("checkpoint: tensor '" + name + "' exceeds file");
    for (auto& v : m.data) v = r.f32();
}

inline void write_config(BinaryWriter& w, const ModelConfig& c) {
    w.u64(c.vocab_size);
    w.u64(c.d_model);
    w.u64(c.n_layers);
    w.u64(c.n_heads);
    w.u64(c.d_ff);
    w.u64(c.max_seq_len);
    w.u64(c.lora_rank);
    w.f64(c.lora_alpha);
    w.f64(c.lora_dropout);
    w.u32(c.adapted);
    w.u8(c.train_embeddings ? 1 : 0);
}

inline ModelConfig read_config(BinaryReader& r) {
    ModelConfig c;
    c.vocab_size = r.u64();
    c.d_model = r.u64();
    c.n_layers = r.u64();
    c.n_heads = r.u64();
    c.d_ff = r.u64();
    c.max_seq_len = r.u64();
    c.lora_rank = r.u64();
    c.lora_alpha = r.f64();
    c.lora_dropout = r.f64();
    c.adapted = r.u32();
    c.train_embeddings = r.u8() != 0;
    return c;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
    BinaryWriter w;
    w.raw(kCheckpointMagic);
    w.u8(static_cast<std::uint8_t>(ck.phase));
    w.u64(ck.step);
    detail::write_config(w, ck.model.config);

    std::uint64_t count = 0, trainable = 0;
    visit_tensors(ck.model, [&](const std::string&, const auto&, const Matrix<float>&, bool t) {
        ++count;
        trainable += t ? 1 : 0;
    });
    if (ck.optimizer) count += 2 * trainable;
    w.u64(count);
    visit_tensors(ck.model, [&](const std::string& name, const auto& shape, const Matrix<float>& m, bool) {
        detail::write_tensor(w, name, shape, m);
    });
    if (ck.optimizer) {
        // Moments are written once per trainable tensor, m then v.
        std::vector<const Matrix<float>*> ms, vs;
        visit_tensors(ck.optimizer->m, [&](const std::string&, const auto&, const Matrix<float>& m, bool) { ms.push_back(&m); });
        visit_tensors(ck.optimizer->v, [&](const std::string&, const auto&, const Matrix<float>& m, bool) { vs.push_back(&m); });
        std::size_t i = 0;
        visit_tensors(ck.model, [&](const std::string& name, const auto& shape, const Matrix<float>&, bool t) {
            if (t) {
                detail::write_tensor(w, "optim.m." + name, shape, *ms[i]);
                detail::write_tensor(w, "optim.v." + name, shape, *vs[i]);
            }
            ++i;
        });
    }
    w.seal();
    return w.bytes();
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
    if (!bytes.starts_with("DFCKPT")) throw FormatError("checkpoint: bad magic header");
    if (!bytes.starts_with(kCheckpointMagic)) throw VersionError("checkpoint: unsupported version");
    BinaryReader r(bytes, "checkpoint");
    const bool checksum_ok =
        bytes.size() >= kCheckpointMagic.size() + 8 &&
        BinaryReader(bytes.substr(bytes.size() - 8), "checkpoint").u64() == fnv1a64(bytes.substr(0, bytes.size() - 8));
    Checkpoint ck;
    try {
        r.raw(kCheckpointMagic.size());
        const auto phase = r.u8();
        if (phase > 2) throw FormatError("checkpoint: unknown phase tag");
        ck.phase = static_cast<Phase>(phase);
        ck.step = r.u64();
        auto config = detail::read_config(r);
        try {
            config.validate();
        } catch (const InvalidArgument& e) {
            throw FormatError(std::string("checkpoint: invalid config: ") + e.what());
        }
        // Refuse to allocate more than the file could possibly hold.
        const long double d = config.d_model;
        const long double base_elems = 2.0L * config.vocab_size * d + config.max_seq_len * d +
                                       config.n_layers * (4.0L * d * d + 2.0L * d * config.d_ff + 4.0L * d) + 2.0L * d;
        if (base_elems * 4.0L > static_cast<long double>(r.remaining()))
            throw TruncatedError("checkpoint: tensors exceed file size");
        ck.model = init_model<float>(config, 0);
        const auto count = r.u64();
        std::uint64_t model_tensors = 0, trainable = 0;
        visit_tensors(ck.model, [&](const std::string& name, const auto& shape, Matrix<float>& m, bool t) {
            detail::read_tensor(r, name, shape, m);
            ++model_tensors;
            trainable += t ? 1 : 0;
        });
        if (count == model_tensors + 2 * trainable) {
            AdamState<float> opt = make_adam_state(ck.model);
            opt.step = ck.step;
            std::vector<Matrix<float>*> ms, vs;
            visit_tensors(opt.m, [&](const std::string&, const auto&, Matrix<float>& m, bool) { ms.push_back(&m); });
            visit_tensors(opt.v, [&](const std::string&, const auto&, Matrix<float>& m, bool) { vs.push_back(&m); });
            std::size_t i = 0;
            visit_tensors(ck.model, [&](const std::string& name, const auto& shape, const Matrix<float>&, bool t) {
                if (t) {
                    detail::read_tensor(r, "optim.m." + name, shape, *ms[i]);
                    detail::read_tensor(r, "optim.v." + name, shape, *vs[i]);
                }
                ++i;
            });
            ck.optimizer = std::move(opt);
        } else if (count != model_tensors) {
            throw FormatError("checkpoint: unexpected tensor count");
        }
        r.verify_seal();
    } catch (const FormatError&) {
        if (!checksum_ok) throw ChecksumError("checkpoint: checksum mismatch");
        throw;
    } catch (const InvalidArgument&) {
        if (!checksum_ok) throw ChecksumError("checkpoint: checksum mismatch");
        throw FormatError("checkpoint: inconsistent contents");
    }
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) { write_file(path, serialize_checkpoint(ck)); }
inline Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

/// Bytes of every frozen tensor, in declaration order. Used to verify that
/// training leaves the base model untouched.
inline std::string serialize_base_tensors(const ModelState<float>& model) {
    BinaryWriter w;
    visit_tensors(model, [&](const std::string& name, const auto& shape, const Matrix<float>& m, bool trainable) {
        if (!trainable) detail::write_tensor(w, name, shape, m);
    });
    return w.bytes();
}

}  // namespace domada
