#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "lora.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace domada {

enum class Projection : std::uint32_t { query = 0, key, value, output, ff_in, ff_out };

inline constexpr std::array<Projection, 6> kAllProjections = {Projection::query,  Projection::key,
                                                               Projection::value,  Projection::output,
                                                               Projection::ff_in, Projection::ff_out};

inline const char* projection_name(Projection p) {
    switch (p) {
        case Projection::query: return "query";
        case Projection::key: return "key";
        case Projection::value: return "value";
        case Projection::output: return "output";
        case Projection::ff_in: return "ff_in";
        case Projection::ff_out: return "ff_out";
    }
    return "?";
}

constexpr std::uint32_t projection_bit(Projection p) { return 1u << static_cast<std::uint32_t>(p); }

struct ModelConfig {
    std::uint64_t vocab_size = 4100;
    std::uint64_t d_model = 64;
    std::uint64_t n_layers = 2;
    std::uint64_t n_heads = 4;
    std::uint64_t d_ff = 256;
    std::uint64_t max_seq_len = 256;
    std::uint64_t lora_rank = 8;
    double lora_alpha = 32.0;
    double lora_dropout = 0.1;
    std::uint32_t adapted = projection_bit(Projection::query) | projection_bit(Projection::value);
    bool train_embeddings = false;

    bool adapts(Projection p) const noexcept { return (adapted & projection_bit(p)) != 0; }
    std::uint64_t head_dim() const noexcept { return d_model / n_heads; }

    void validate() const {
        if (vocab_size < 5) throw InvalidArgument("model: vocab_size must cover the special tokens");
        if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
            throw InvalidArgument("model: d_model must be divisible by n_heads");
        if (n_layers == 0 || d_ff == 0) throw InvalidArgument("model: n_layers and d_ff must be positive");
        if (max_seq_len < 2) throw InvalidArgument("model: max_seq_len must be >= 2");
        if (adapted >= (1u << kAllProjections.size())) throw InvalidArgument("model: unknown projection bits");
        if (adapted != 0) {
            const auto bound = std::min(d_model, d_ff);
            if (lora_rank < 1 || lora_rank > bound)
                throw InvalidArgument("model: lora_rank must be in [1, " + std::to_string(bound) + "]");
        }
        if (!(lora_dropout >= 0.0 && lora_dropout < 1.0)) throw InvalidArgument("model: lora_dropout must be in [0, 1)");
    }

    /// sum over adapted layers of r (d1 + d2); embeddings are excluded.
    std::uint64_t adapter_parameter_count() const {
        std::uint64_t per_layer = 0;
        for (auto p : kAllProjections) {
            if (!adapts(p)) continue;
            const bool ff = p == Projection::ff_in || p == Projection::ff_out;
            per_layer += lora_rank * (ff ? d_model + d_ff : 2 * d_model);
        }
        return per_layer * n_layers;
    }

    bool operator==(const ModelConfig&) const = default;
};

template <class T>
struct Block {
    Matrix<T> ln1_gain, ln1_bias;  // 1 x d
    LoraLayer<T> query, key, value, output;
    Matrix<T> ln2_gain, ln2_bias;
    LoraLayer<T> ff_in, ff_out;  // d_ff x d, d x d_ff

    LoraLayer<T>& projection(Projection p) {
        switch (p) {
            case Projection::query: return query;
            case Projection::key: return key;
            case Projection::value: return value;
            case Projection::output: return output;
            case Projection::ff_in: return ff_in;
            case Projection::ff_out: return ff_out;
        }
        return query;
    }
    const LoraLayer<T>& projection(Projection p) const { return const_cast<Block&>(*this).projection(p); }

    bool operator==(const Block&) const = default;
};

/// Pre-norm decoder: token + position embeddings, n_layers blocks of causal
/// multi-head attention and a GELU feed-forward, final norm, untied head.
template <class T>
struct ModelState {
    ModelConfig config;
    Matrix<T> tok_emb;  // V x d
    Matrix<T> pos_emb;  // L x d
    std::vector<Block<T>> blocks;
    Matrix<T> final_gain, final_bias;
    Matrix<T> lm_head;  // V x d

    bool operator==(const ModelState&) const = default;
};

/// Calls f(name, shape, matrix, trainable) for every tensor in declaration
/// order. Adapter factors of non-adapted projections are not visited.
template <class State, class F>
void visit_tensors(State& s, F&& f) {
    using Shape = std::vector<std::uint64_t>;
    const auto& c = s.config;
    const bool emb = c.train_embeddings;
    f(std::string("tok_emb"), Shape{c.vocab_size, c.d_model}, s.tok_emb, emb);
    f(std::string("pos_emb"), Shape{c.max_seq_len, c.d_model}, s.pos_emb, emb);
    auto vec = [&](const std::string& name, auto& m) { f(name, Shape{c.d_model}, m, false); };
    auto linear = [&](const std::string& name, auto& layer, Projection p) {
        f(name + ".weight", Shape{layer.weight.rows, layer.weight.cols}, layer.weight, false);
        if (c.adapts(p)) {
            f(name + ".lora_a", Shape{layer.lora_a.rows, layer.lora_a.cols}, layer.lora_a, true);
            f(name + ".lora_b", Shape{layer.lora_b.rows, layer.lora_b.cols}, layer.lora_b, true);
        }
    };
    for (std::size_t l = 0; l < s.blocks.size(); ++l) {
        auto& b = s.blocks[l];
        const std::string pre = "layers." + std::to_string(l) + ".";
        vec(pre + "ln1.gain", b.ln1_gain);
        vec(pre + "ln1.bias", b.ln1_bias);
        linear(pre + "attn.query", b.query, Projection::query);
        linear(pre + "attn.key", b.key, Projection::key);
        linear(pre + "attn.value", b.value, Projection::value);
        linear(pre + "attn.output", b.output, Projection::output);
        vec(pre + "ln2.gain", b.ln2_gain);
        vec(pre + "ln2.bias", b.ln2_bias);
        linear(pre + "ff.in", b.ff_in, Projection::ff_in);
        linear(pre + "ff.out", b.ff_out, Projection::ff_out);
    }
    vec("final_ln.gain", s.final_gain);
    vec("final_ln.bias", s.final_bias);
    f(std::string("lm_head"), Shape{c.vocab_size, c.d_model}, s.lm_head, false);
}

template <class T>
std::uint64_t trainable_parameter_count(const ModelState<T>& s) {
    std::uint64_t n = 0;
    visit_tensors(s, [&](const std::string&, const auto&, const Matrix<T>& m, bool trainable) {
        if (trainable) n += m.size();
    });
    return n;
}

namespace detail {

template <class T>
Matrix<T> gaussian(std::size_t r, std::size_t c, double stddev, std::uint64_t seed) {
    Matrix<T> m(r, c);
    Rng rng(seed);
    for (auto& v : m.data) v = static_cast<T>(stddev * rng.normal());
    return m;
}

}  // namespace detail

/// Random frozen base plus freshly initialized adapters (B = 0).
template <class T>
ModelState<T> init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    const auto d = config.d_model, V = config.vocab_size;
    std::uint64_t stream = 0;
    auto next_seed = [&] { return derive_seed(seed, ++stream); };
    auto linear = [&](std::size_t out, std::size_t in, Projection p) {
        Matrix<T> w = detail::gaussian<T>(out, in, 1.0 / std::sqrt(static_cast<double>(in)), next_seed());
        const auto adapter_seed = next_seed();
        if (!config.adapts(p)) {
            LoraLayer<T> layer;
            layer.weight = std::move(w);
            return layer;
        }
        return init_lora(std::move(w), config.lora_rank, static_cast<T>(config.lora_alpha), adapter_seed,
                         static_cast<T>(config.lora_dropout));
    };

    ModelState<T> s;
    s.config = config;
    s.tok_emb = detail::gaussian<T>(V, d, 1.0, next_seed());
    s.pos_emb = detail::gaussian<T>(config.max_seq_len, d, 0.1, next_seed());
    for (std::uint64_t l = 0; l < config.n_layers; ++l) {
        Block<T> b;
        b.ln1_gain = Matrix<T>(1, d, T(1));
        b.ln1_bias = Matrix<T>(1, d);
        b.query = linear(d, d, Projection::query);
        b.key = linear(d, d, Projection::key);
        b.value = linear(d, d, Projection::value);
        b.output = linear(d, d, Projection::output);
        b.ln2_gain = Matrix<T>(1, d, T(1));
        b.ln2_bias = Matrix<T>(1, d);
        b.ff_in = linear(config.d_ff, d, Projection::ff_in);
        b.ff_out = linear(d, config.d_ff, Projection::ff_out);
        s.blocks.push_back(std::move(b));
    }
    s.final_gain = Matrix<T>(1, d, T(1));
    s.final_bias = Matrix<T>(1, d);
    s.lm_head = detail::gaussian<T>(V, d, 1.0 / std::sqrt(static_cast<double>(d)), next_seed());
    return s;
}

/// The same model with every adapter removed.
template <class T>
ModelState<T> strip_adapters(const ModelState<T>& s) {
    ModelState<T> out = s;
    out.config.adapted = 0;
    for (auto& b : out.blocks)
        for (auto p : kAllProjections) b.projection(p) = b.projection(p).base();
    return out;
}

/// Gradient buffers shaped like `s`: trainable tensors zero-filled, frozen
/// tensors left empty.
template <class T>
ModelState<T> make_gradients(const ModelState<T>& s) {
    ModelState<T> g = s;
    visit_tensors(g, [](const std::string&, const auto&, Matrix<T>& m, bool trainable) {
        if (trainable)
            m.zero();
        else
            m = Matrix<T>();
    });
    return g;
}

template <class T>
void zero_gradients(ModelState<T>& g) {
    visit_tensors(g, [](const std::string&, const auto&, Matrix<T>& m, bool) { m.zero(); });
}

template <class T>
void accumulate_gradients(ModelState<T>& into, const ModelState<T>& g) {
    std::vector<Matrix<T>*> dst;
    std::vector<const Matrix<T>*> src;
    visit_tensors(into, [&](const std::string&, const auto&, Matrix<T>& m, bool) { dst.push_back(&m); });
    visit_tensors(g, [&](const std::string&, const auto&, const Matrix<T>& m, bool) { src.push_back(&m); });
    for (std::size_t i = 0; i < dst.size(); ++i)
        if (!dst[i]->empty()) add_inplace(*dst[i], *src[i]);
}

// ---------------------------------------------------------------------------
// Forward / backward

template <class T>
struct NormCache {
    Matrix<T> normalized;
    std::vector<T> inv_std;
};

template <class T>
struct BlockCache {
    Matrix<T> input;
    NormCache<T> ln1;
    Matrix<T> h1;
    LoraCache<T> qc, kc, vc, oc, f1c, f2c;
    Matrix<T> q, k, v;
    std::vector<Matrix<T>> probs;  // per head, n x n, zero above the diagonal
    Matrix<T> attn;
    Matrix<T> mid;
    NormCache<T> ln2;
    Matrix<T> h2;
    Matrix<T> pre;  // ff_in output
    Matrix<T> act;  // gelu(pre)
};

template <class T>
struct ForwardCache {
    std::vector<std::uint32_t> tokens;
    std::vector<BlockCache<T>> blocks;
    NormCache<T> lnf;
    Matrix<T> hf;
};

namespace detail {

template <class T>
inline constexpr T kNormEps = T(1e-5);

template <class T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias, NormCache<T>* cache) {
    Matrix<T> y(x.rows, x.cols);
    Matrix<T> xhat(x.rows, x.cols);
    std::vector<T> inv(x.rows);
    const T n = static_cast<T>(x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        auto r = x.row(i);
        T mean = 0;
        for (T v : r) mean += v;
        mean /= n;
        T var = 0;
        for (T v : r) var += (v - mean) * (v - mean);
        var /= n;
        inv[i] = T(1) / std::sqrt(var + kNormEps<T>);
        for (std::size_t j = 0; j < x.cols; ++j) {
            xhat(i, j) = (r[j] - mean) * inv[i];
            y(i, j) = gain.data[j] * xhat(i, j) + bias.data[j];
        }
    }
    if (cache != nullptr) {
        cache->normalized = std::move(xhat);
        cache->inv_std = std::move(inv);
    }
    return y;
}

// Gain and bias are frozen, so only the input gradient is produced.
template <class T>
Matrix<T> layer_norm_backward(const NormCache<T>& cache, const Matrix<T>& gain, const Matrix<T>& dy) {
    const auto& xhat = cache.normalized;
    Matrix<T> dx(dy.rows, dy.cols);
    const T n = static_cast<T>(dy.cols);
    for (std::size_t i = 0; i < dy.rows; ++i) {
        T mean_g = 0, mean_gx = 0;
        for (std::size_t j = 0; j < dy.cols; ++j) {
            const T g = dy(i, j) * gain.data[j];
            mean_g += g;
            mean_gx += g * xhat(i, j);
        }
        mean_g /= n;
        mean_gx /= n;
        for (std::size_t j = 0; j < dy.cols; ++j)
            dx(i, j) = cache.inv_std[i] * (dy(i, j) * gain.data[j] - mean_g - xhat(i, j) * mean_gx);
    }
    return dx;
}

template <class T>
inline constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2 / pi)

template <class T>
T gelu(T x) {
    const T u = kGeluC<T> * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <class T>
T gelu_grad(T x) {
    const T u = kGeluC<T> * (x + T(0.044715) * x * x * x);
    const T t = std::tanh(u);
    return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * kGeluC<T> * (T(1) + T(3 * 0.044715) * x * x);
}

template <class T>
Matrix<T> causal_attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, std::size_t heads,
                           std::vector<Matrix<T>>* probs_out) {
    const std::size_t n = q.rows, d = q.cols, dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Matrix<T> out(n, d);
    if (probs_out != nullptr) probs_out->assign(heads, Matrix<T>(n, n));
    std::vector<T> row(n);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < n; ++i) {
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j <= i; ++j) {
                T s = 0;
                for (std::size_t c = 0; c < dh; ++c) s += q(i, off + c) * k(j, off + c);
                row[j] = s * scale;
                mx = std::max(mx, row[j]);
            }
            T z = 0;
            for (std::size_t j = 0; j <= i; ++j) {
                row[j] = std::exp(row[j] - mx);
                z += row[j];
            }
            for (std::size_t j = 0; j <= i; ++j) {
                const T p = row[j] / z;
                if (probs_out != nullptr) (*probs_out)[h](i, j) = p;
                for (std::size_t c = 0; c < dh; ++c) out(i, off + c) += p * v(j, off + c);
            }
        }
    }
    return out;
}

template <class T>
void causal_attention_backward(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                               const std::vector<Matrix<T>>& probs, const Matrix<T>& dout, Matrix<T>& dq,
                               Matrix<T>& dk, Matrix<T>& dv) {
    const std::size_t n = q.rows, d = q.cols, heads = probs.size(), dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    dq = Matrix<T>(n, d);
    dk = Matrix<T>(n, d);
    dv = Matrix<T>(n, d);
    std::vector<T> dp(n);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        const auto& P = probs[h];
        for (std::size_t i = 0; i < n; ++i) {
            T dot = 0;
            for (std::size_t j = 0; j <= i; ++j) {
                T s = 0;
                for (std::size_t c = 0; c < dh; ++c) s += dout(i, off + c) * v(j, off + c);
                dp[j] = s;
                dot += P(i, j) * s;
                for (std::size_t c = 0; c < dh; ++c) dv(j, off + c) += P(i, j) * dout(i, off + c);
            }
            for (std::size_t j = 0; j <= i; ++j) {
                const T ds = P(i, j) * (dp[j] - dot) * scale;
                for (std::size_t c = 0; c < dh; ++c) {
                    dq(i, off + c) += ds * k(j, off + c);
                    dk(j, off + c) += ds * q(i, off + c);
                }
            }
        }
    }
}

}  // namespace detail

template <class T>
void check_tokens(const ModelConfig& c, std::span<const std::uint32_t> tokens) {
    if (tokens.empty()) throw InvalidArgument("model_forward: empty sequence");
    if (tokens.size() > c.max_seq_len)
        throw InvalidArgument("model_forward: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                              std::to_string(c.max_seq_len));
    for (auto t : tokens)
        if (t >= c.vocab_size) throw InvalidArgument("model_forward: token id " + std::to_string(t) + " out of vocabulary");
}

struct ForwardOptions {
    bool training = false;
    Rng* rng = nullptr;  // dropout source; required for dropout to apply
};

/// Logits (sequence length x vocab_size). Row i depends only on tokens[0..i].
template <class T>
Matrix<T> model_forward(const ModelState<T>& s, std::span<const std::uint32_t> tokens, ForwardOptions opt = {},
                        ForwardCache<T>* cache = nullptr) {
    const auto& c = s.config;
    check_tokens<T>(c, tokens);
    const std::size_t n = tokens.size(), d = c.d_model;
    Rng* rng = opt.training ? opt.rng : nullptr;

    Matrix<T> x(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) x(i, j) = s.tok_emb(tokens[i], j) + s.pos_emb(i, j);

    if (cache != nullptr) {
        cache->tokens.assign(tokens.begin(), tokens.end());
        cache->blocks.assign(s.blocks.size(), BlockCache<T>{});
    }
    for (std::size_t l = 0; l < s.blocks.size(); ++l) {
        const auto& b = s.blocks[l];
        BlockCache<T> local;
        BlockCache<T>& bc = cache != nullptr ? cache->blocks[l] : local;
        const bool keep = cache != nullptr;

        Matrix<T> h1 = detail::layer_norm(x, b.ln1_gain, b.ln1_bias, keep ? &bc.ln1 : nullptr);
        Matrix<T> q = lora_forward(b.query, h1, opt.training, rng, keep ? &bc.qc : nullptr);
        Matrix<T> k = lora_forward(b.key, h1, opt.training, rng, keep ? &bc.kc : nullptr);
        Matrix<T> v = lora_forward(b.value, h1, opt.training, rng, keep ? &bc.vc : nullptr);
        Matrix<T> attn = detail::causal_attention(q, k, v, c.n_heads, keep ? &bc.probs : nullptr);
        Matrix<T> o = lora_forward(b.output, attn, opt.training, rng, keep ? &bc.oc : nullptr);
        Matrix<T> mid = x;
        add_inplace(mid, o);

        Matrix<T> h2 = detail::layer_norm(mid, b.ln2_gain, b.ln2_bias, keep ? &bc.ln2 : nullptr);
        Matrix<T> pre = lora_forward(b.ff_in, h2, opt.training, rng, keep ? &bc.f1c : nullptr);
        Matrix<T> act(pre.rows, pre.cols);
        for (std::size_t i = 0; i < pre.size(); ++i) act.data[i] = detail::gelu(pre.data[i]);
        Matrix<T> f = lora_forward(b.ff_out, act, opt.training, rng, keep ? &bc.f2c : nullptr);
        Matrix<T> out = mid;
        add_inplace(out, f);

        if (keep) {
            bc.input = std::move(x);
            bc.h1 = std::move(h1);
            bc.q = std::move(q);
            bc.k = std::move(k);
            bc.v = std::move(v);
            bc.attn = std::move(attn);
            bc.mid = std::move(mid);
            bc.h2 = std::move(h2);
            bc.pre = std::move(pre);
            bc.act = std::move(act);
        }
        x = std::move(out);
    }
    Matrix<T> hf = detail::layer_norm(x, s.final_gain, s.final_bias, cache != nullptr ? &cache->lnf : nullptr);
    Matrix<T> logits = matmul_nt(hf, s.lm_head);
    if (cache != nullptr) cache->hf = std::move(hf);
    return logits;
}

/// Reverse pass given dL/dlogits. Accumulates into the non-empty tensors of
/// `grads` (see make_gradients).
template <class T>
void model_backward(const ModelState<T>& s, const ForwardCache<T>& cache, const Matrix<T>& dlogits, ModelState<T>& grads) {
    auto slot = [](Matrix<T>& m) { return m.empty() ? nullptr : &m; };
    Matrix<T> dhf = matmul_nn(dlogits, s.lm_head);
    Matrix<T> dx = detail::layer_norm_backward(cache.lnf, s.final_gain, dhf);

    for (std::size_t l = s.blocks.size(); l-- > 0;) {
        const auto& b = s.blocks[l];
        const auto& bc = cache.blocks[l];
        auto& gb = grads.blocks[l];

        // Feed-forward residual branch.
        Matrix<T> dact = lora_backward(b.ff_out, bc.f2c, dx, slot(gb.ff_out.lora_a), slot(gb.ff_out.lora_b));
        for (std::size_t i = 0; i < dact.size(); ++i) dact.data[i] *= detail::gelu_grad(bc.pre.data[i]);
        Matrix<T> dh2 = lora_backward(b.ff_in, bc.f1c, dact, slot(gb.ff_in.lora_a), slot(gb.ff_in.lora_b));
        Matrix<T> dmid = dx;
        add_inplace(dmid, detail::layer_norm_backward(bc.ln2, b.ln2_gain, dh2));

        // Attention residual branch.
        Matrix<T> dattn = lora_backward(b.output, bc.oc, dmid, slot(gb.output.lora_a), slot(gb.output.lora_b));
        Matrix<T> dq, dk, dv;
        detail::causal_attention_backward(bc.q, bc.k, bc.v, bc.probs, dattn, dq, dk, dv);
        Matrix<T> dh1 = lora_backward(b.query, bc.qc, dq, slot(gb.query.lora_a), slot(gb.query.lora_b));
        add_inplace(dh1, lora_backward(b.key, bc.kc, dk, slot(gb.key.lora_a), slot(gb.key.lora_b)));
        add_inplace(dh1, lora_backward(b.value, bc.vc, dv, slot(gb.value.lora_a), slot(gb.value.lora_b)));
        dx = std::move(dmid);
        add_inplace(dx, detail::layer_norm_backward(bc.ln1, b.ln1_gain, dh1));
    }

    if (!grads.tok_emb.empty()) {
        for (std::size_t i = 0; i < cache.tokens.size(); ++i) {
            auto src = dx.row(i);
            auto te = grads.tok_emb.row(cache.tokens[i]);
            for (std::size_t j = 0; j < src.size(); ++j) te[j] += src[j];
        }
    }
    if (!grads.pos_emb.empty()) {
        for (std::size_t i = 0; i < cache.tokens.size(); ++i) {
            auto src = dx.row(i);
            auto pe = grads.pos_emb.row(i);
            for (std::size_t j = 0; j < src.size(); ++j) pe[j] += src[j];
        }
    }
}

}  // namespace domada
