#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "checkpoint.hpp"
#include "corpus_store.hpp"
#include "error.hpp"
#include "loss.hpp"
#include "model.hpp"
#include "optimizer.hpp"
#include "random.hpp"
#include "tokenizer.hpp"
#include "vocabulary.hpp"

namespace domada {

struct TrainConfig {
    Phase phase = Phase::pretrain;
    double learning_rate = 1e-4;
    std::size_t batch_size = 128;
    std::size_t epochs = 2;
    std::size_t max_seq_len = 0;  // 0: use the model's
    std::uint64_t seed = 42;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;
    std::uint64_t max_steps = 0;  // 0: run all epochs; otherwise stop once the step counter reaches it
    std::size_t threads = 1;

    static TrainConfig pretrain_defaults() { return {}; }
    static TrainConfig sft_defaults() {
        TrainConfig c;
        c.phase = Phase::sft;
        c.learning_rate = 5e-5;
        c.epochs = 3;
        return c;
    }

    AdamConfig adam() const { return {learning_rate, beta1, beta2, eps, clip_norm}; }

    void validate() const {
        if (!(learning_rate > 0.0)) throw InvalidArgument("train: learning_rate must be positive");
        if (batch_size == 0) throw InvalidArgument("train: batch_size must be positive");
        if (threads == 0) throw InvalidArgument("train: threads must be positive");
        if (phase == Phase::base) throw InvalidArgument("train: phase must be pretrain or sft");
    }
};

struct SftExample {
    std::string prompt;
    std::string response;
};

/// A training sequence: BOS-prefixed ids whose targets are positions
/// [first_target, tokens.size()).
struct TrainSequence {
    std::vector<std::uint32_t> tokens;
    std::size_t first_target = 1;

    std::size_t target_count() const { return tokens.size() - first_target; }
};

struct LossRecord {
    std::uint64_t step = 0;
    Phase phase = Phase::pretrain;
    double loss = 0.0;
};

struct TrainResult {
    std::vector<LossRecord> history;
    std::vector<std::size_t> rejected;  // SFT examples whose response alone exceeds the length limit
};

/// "step<TAB>phase<TAB>loss" per line.
inline std::string format_loss_history(const std::vector<LossRecord>& history) {
    std::string out;
    char buf[64];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof buf, "%.9g", r.loss);
        out += std::to_string(r.step) + '\t' + to_string(r.phase) + '\t' + buf + '\n';
    }
    return out;
}

/// Documents joined with EOS, cut into BOS-prefixed chunks of at most
/// `max_seq_len` tokens.
inline std::vector<TrainSequence> chunk_corpus(const CorpusStore& corpus, const Vocabulary& vocab,
                                               const Tokenizer& tokenizer, std::size_t max_seq_len) {
    if (max_seq_len < 2) throw InvalidArgument("chunk_corpus: max_seq_len must be >= 2");
    std::vector<std::uint32_t> stream;
    for (const auto& doc : corpus) {
        auto ids = vocab.encode(tokenizer.tokenize(doc.text));
        stream.insert(stream.end(), ids.begin(), ids.end());
        stream.push_back(kEosId);
    }
    std::vector<TrainSequence> out;
    const std::size_t body = max_seq_len - 1;
    for (std::size_t pos = 0; pos < stream.size(); pos += body) {
        TrainSequence s;
        s.tokens.push_back(kBosId);
        const auto end = std::min(stream.size(), pos + body);
        s.tokens.insert(s.tokens.end(), stream.begin() + static_cast<std::ptrdiff_t>(pos),
                        stream.begin() + static_cast<std::ptrdiff_t>(end));
        out.push_back(std::move(s));
    }
    return out;
}

struct EncodedExample {
    std::vector<std::uint32_t> tokens;
    std::size_t prompt_len = 0;
    std::size_t response_len = 0;
};

/// BOS + prompt + response + EOS. Over-long prompts lose tokens from the
/// left; a response that cannot fit on its own is rejected.
inline EncodedExample encode_sft(const SftExample& ex, const Vocabulary& vocab, const Tokenizer& tokenizer,
                                 std::size_t max_seq_len) {
    auto prompt = vocab.encode(tokenizer.tokenize(ex.prompt));
    auto response = vocab.encode(tokenizer.tokenize(ex.response));
    if (response.empty()) throw DataError("sft: empty response");
    response.push_back(kEosId);
    if (1 + response.size() > max_seq_len)
        throw DataError("sft: response of " + std::to_string(response.size()) + " tokens exceeds max_seq_len " +
                        std::to_string(max_seq_len));
    const std::size_t room = max_seq_len - 1 - response.size();
    if (prompt.size() > room) prompt.erase(prompt.begin(), prompt.end() - static_cast<std::ptrdiff_t>(room));
    EncodedExample e;
    e.tokens.push_back(kBosId);
    e.tokens.insert(e.tokens.end(), prompt.begin(), prompt.end());
    e.tokens.insert(e.tokens.end(), response.begin(), response.end());
    e.prompt_len = prompt.size();
    e.response_len = response.size();
    return e;
}

namespace detail {

/// Forward + backward of one sequence into `grads` (which is zeroed first).
inline double sequence_gradient(const ModelState<float>& model, const TrainSequence& seq, float scale,
                                std::uint64_t dropout_seed, ModelState<float>& grads) {
    zero_gradients(grads);
    Rng rng(dropout_seed);
    ForwardCache<float> cache;
    auto logits = model_forward(model, seq.tokens, {true, &rng}, &cache);
    Matrix<float> dlogits(logits.rows, logits.cols);
    const double nll = token_nll_sum(logits, seq.tokens, seq.first_target, seq.tokens.size(), scale, &dlogits);
    model_backward(model, cache, dlogits, grads);
    return nll;
}

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, 0x0e90c4ULL, epoch));
    rng.shuffle(order);
    return order;
}

}  // namespace detail

/// Shared optimization loop. The step counter lives in the checkpoint, so a
/// run interrupted at step j and resumed reproduces an uninterrupted run.
inline TrainResult run_training(Checkpoint& ck, const std::vector<TrainSequence>& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw InvalidArgument("train: no training sequences");
    if (ck.phase != cfg.phase) {
        ck.phase = cfg.phase;
        ck.step = 0;
        ck.optimizer.reset();
    }
    if (!ck.optimizer) ck.optimizer = make_adam_state(ck.model);

    const std::size_t n = data.size();
    const std::uint64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    std::uint64_t total = steps_per_epoch * cfg.epochs;
    if (cfg.max_steps > 0) total = std::min<std::uint64_t>(total, cfg.max_steps);

    TrainResult result;
    ModelState<float> grads = make_gradients(ck.model);
    std::vector<ModelState<float>> scratch(cfg.threads, grads);
    std::vector<double> nll(cfg.threads);
    std::vector<std::size_t> order;
    std::uint64_t order_epoch = UINT64_MAX;

    while (ck.step < total) {
        const std::uint64_t epoch = ck.step / steps_per_epoch;
        const std::uint64_t in_epoch = ck.step % steps_per_epoch;
        if (epoch != order_epoch) {
            order = detail::epoch_order(n, cfg.seed, epoch);
            order_epoch = epoch;
        }
        const std::size_t begin = in_epoch * cfg.batch_size;
        const std::size_t end = std::min(n, begin + cfg.batch_size);
        std::size_t targets = 0;
        for (std::size_t i = begin; i < end; ++i) targets += data[order[i]].target_count();
        if (targets == 0) throw TrainingError("train: batch has no target tokens at step " + std::to_string(ck.step));
        const float scale = 1.0f / static_cast<float>(targets);

        // Items are processed in waves of `threads`; per-item gradients are
        // reduced in item order so results do not depend on the thread count.
        zero_gradients(grads);
        double batch_nll = 0.0;
        for (std::size_t wave = begin; wave < end; wave += cfg.threads) {
            const std::size_t count = std::min(cfg.threads, end - wave);
            auto work = [&](std::size_t t) {
                const std::size_t item = wave + t;
                nll[t] = detail::sequence_gradient(ck.model, data[order[item]], scale,
                                                   derive_seed(cfg.seed, ck.step, item - begin), scratch[t]);
            };
            if (count == 1) {
                work(0);
            } else {
                std::vector<std::jthread> pool;
                for (std::size_t t = 0; t < count; ++t) pool.emplace_back(work, t);
            }
            for (std::size_t t = 0; t < count; ++t) {
                accumulate_gradients(grads, scratch[t]);
                batch_nll += nll[t];
            }
        }
        const double loss = batch_nll / static_cast<double>(targets);
        if (!std::isfinite(loss))
            throw TrainingError("train: non-finite loss at " + std::string(to_string(cfg.phase)) + " step " +
                                std::to_string(ck.step) + " (epoch " + std::to_string(epoch) + ", " +
                                std::to_string(targets) + " targets)");
        adam_step(ck.model, grads, *ck.optimizer, cfg.adam());
        ++ck.step;
        result.history.push_back({ck.step, cfg.phase, loss});
    }
    return result;
}

inline std::size_t effective_seq_len(const ModelState<float>& model, const TrainConfig& cfg) {
    const auto limit = model.config.max_seq_len;
    if (cfg.max_seq_len == 0) return limit;
    if (cfg.max_seq_len > limit) throw InvalidArgument("train: max_seq_len exceeds the model's");
    return cfg.max_seq_len;
}

inline void check_vocabulary(const ModelState<float>& model, const Vocabulary& vocab) {
    if (vocab.size() > model.config.vocab_size)
        throw InvalidArgument("train: vocabulary of " + std::to_string(vocab.size()) + " exceeds model vocab_size " +
                              std::to_string(model.config.vocab_size));
}

/// Causal-LM pretraining of the adapters on `corpus`.
inline TrainResult pretrain(Checkpoint& ck, const CorpusStore& corpus, const Vocabulary& vocab, const Tokenizer& tokenizer,
                            TrainConfig cfg) {
    if (corpus.empty()) throw InvalidArgument("pretrain: empty corpus");
    check_vocabulary(ck.model, vocab);
    cfg.phase = Phase::pretrain;
    auto data = chunk_corpus(corpus, vocab, tokenizer, effective_seq_len(ck.model, cfg));
    return run_training(ck, data, cfg);
}

/// Supervised fine-tuning with the loss restricted to response (+EOS) tokens.
inline TrainResult finetune(Checkpoint& ck, const std::vector<SftExample>& examples, const Vocabulary& vocab,
                            const Tokenizer& tokenizer, TrainConfig cfg) {
    if (examples.empty()) throw InvalidArgument("finetune: no examples");
    check_vocabulary(ck.model, vocab);
    cfg.phase = Phase::sft;
    const auto len = effective_seq_len(ck.model, cfg);
    std::vector<TrainSequence> data;
    std::vector<std::size_t> rejected;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        try {
            auto e = encode_sft(examples[i], vocab, tokenizer, len);
            data.push_back({std::move(e.tokens), 1 + e.prompt_len});
        } catch (const DataError&) {
            rejected.push_back(i);
        }
    }
    if (data.empty()) throw DataError("finetune: every example was rejected");
    auto r = run_training(ck, data, cfg);
    r.rejected = std::move(rejected);
    return r;
}

/// Mean per-token NLL of `data` in evaluation mode.
inline double evaluate_loss(const ModelState<float>& model, const std::vector<TrainSequence>& data) {
    double nll = 0.0;
    std::size_t count = 0;
    for (const auto& s : data) {
        if (s.target_count() == 0) continue;
        auto logits = model_forward(model, s.tokens);
        nll += token_nll_sum(logits, s.tokens, s.first_target, s.tokens.size());
        count += s.target_count();
    }
    if (count == 0) throw InvalidArgument("evaluate_loss: no targets");
    return nll / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradCheckConfig {
    ModelConfig model = [] {
        ModelConfig c;
        c.vocab_size = 24;
        c.d_model = 16;
        c.n_layers = 1;
        c.n_heads = 2;
        c.d_ff = 32;
        c.max_seq_len = 12;
        c.lora_rank = 4;
        c.lora_alpha = 8.0;
        c.lora_dropout = 0.1;
        c.adapted = 0x3f;
        c.train_embeddings = true;
        return c;
    }();
    std::size_t seq_len = 10;
    std::size_t prompt_len = 3;
    double step = 1e-4;
    double tolerance = 1e-5;
    std::uint64_t seed = 7;
};

struct GradCheckEntry {
    std::string variant;  // "fresh" (B = 0) or "perturbed" (random B)
    std::string loss;     // "clm" or "sft"
    std::string tensor;
    double max_rel_error = 0.0;
    double max_abs_grad = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 1e-5;
    double seconds = 0.0;

    double worst() const {
        double w = 0.0;
        for (const auto& e : entries) w = std::max(w, e.max_rel_error);
        return w;
    }
    bool passed() const {
        for (const auto& e : entries)
            if (!(e.max_rel_error < tolerance)) return false;
        return true;
    }
};

/// Per-tensor error: max |analytic - numeric| / max(max |analytic|, max |numeric|),
/// zero when both gradients vanish.
inline double tensor_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
        scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    return scale == 0.0 ? 0.0 : diff / scale;
}

/// Compares reverse-mode gradients with central differences for every
/// trainable tensor of a small double-precision model, for both losses and
/// for adapters at initialization and with B perturbed away from zero.
inline GradCheckReport gradient_check(const GradCheckConfig& cfg = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckReport report;
    report.tolerance = cfg.tolerance;
    if (cfg.seq_len > cfg.model.max_seq_len || cfg.seq_len < cfg.prompt_len + 2)
        throw InvalidArgument("gradient_check: bad sequence length");

    Rng data_rng(derive_seed(cfg.seed, 1));
    std::vector<std::uint32_t> tokens{kBosId};
    while (tokens.size() < cfg.seq_len)
        tokens.push_back(static_cast<std::uint32_t>(kNumSpecial + data_rng.below(cfg.model.vocab_size - kNumSpecial)));

    const std::uint64_t dropout_seed = derive_seed(cfg.seed, 2);
    for (const char* variant : {"fresh", "perturbed"}) {
        auto model = init_model<double>(cfg.model, cfg.seed);
        if (std::string(variant) == "perturbed") {
            Rng rng(derive_seed(cfg.seed, 3));
            for (auto& b : model.blocks)
                for (auto p : kAllProjections)
                    if (b.projection(p).has_adapter())
                        for (auto& v : b.projection(p).lora_b.data) v = 0.1 * rng.normal();
        }
        for (const char* loss_name : {"clm", "sft"}) {
            const std::size_t first = std::string(loss_name) == "clm" ? 1 : 1 + cfg.prompt_len;
            const double inv = 1.0 / static_cast<double>(tokens.size() - first);
            auto loss_of = [&](const ModelState<double>& m) {
                Rng rng(dropout_seed);
                auto logits = model_forward(m, tokens, {true, &rng});
                return token_nll_sum(logits, tokens, first, tokens.size()) * inv;
            };

            ModelState<double> grads = make_gradients(model);
            {
                Rng rng(dropout_seed);
                ForwardCache<double> cache;
                auto logits = model_forward(model, tokens, {true, &rng}, &cache);
                Matrix<double> dlogits(logits.rows, logits.cols);
                token_nll_sum(logits, tokens, first, tokens.size(), inv, &dlogits);
                model_backward(model, cache, dlogits, grads);
            }

            std::vector<Matrix<double>*> params;
            std::vector<std::string> names;
            visit_tensors(model, [&](const std::string& name, const auto&, Matrix<double>& m, bool trainable) {
                params.push_back(trainable ? &m : nullptr);
                names.push_back(name);
            });
            std::vector<const Matrix<double>*> gs;
            visit_tensors(grads, [&](const std::string&, const auto&, const Matrix<double>& m, bool) { gs.push_back(&m); });

            for (std::size_t t = 0; t < params.size(); ++t) {
                if (params[t] == nullptr) continue;
                std::vector<double> numeric(params[t]->size());
                for (std::size_t i = 0; i < numeric.size(); ++i) {
                    double& p = params[t]->data[i];
                    const double saved = p;
                    p = saved + cfg.step;
                    const double up = loss_of(model);
                    p = saved - cfg.step;
                    const double down = loss_of(model);
                    p = saved;
                    numeric[i] = (up - down) / (2.0 * cfg.step);
                }
                GradCheckEntry e{variant, loss_name, names[t], tensor_relative_error(gs[t]->data, numeric), 0.0};
                for (double g : gs[t]->data) e.max_abs_grad = std::max(e.max_abs_grad, std::abs(g));
                report.entries.push_back(std::move(e));
            }
        }
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace domada
