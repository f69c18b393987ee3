#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "model.hpp"
#include "random.hpp"
#include "tokenizer.hpp"
#include "utf8.hpp"
#include "vocabulary.hpp"

namespace domada {

/// Multiple-choice question; option i carries label 'A' + i.
struct McqItem {
    std::string stem;
    std::vector<std::string> options;
    char gold = 'A';

    std::string labels() const {
        std::string l;
        for (std::size_t i = 0; i < options.size(); ++i) l.push_back(static_cast<char>('A' + i));
        return l;
    }

    void validate() const {
        if (options.size() < 2 || options.size() > 5) throw InvalidArgument("mcq: items need 2 to 5 options");
        if (labels().find(gold) == std::string::npos) throw InvalidArgument(std::string("mcq: gold label '") + gold + "' not among options");
    }

    bool operator==(const McqItem&) const = default;
};

inline constexpr std::string_view kOptionsHeader = "回答选项：";
inline constexpr std::string_view kAnswerInstruction = "请分析并给出正确选项。";
inline constexpr std::string_view kDiagnosisInstruction = "请根据以上患者信息选择最可能的诊断。";

/// Five-option item: the gold diagnosis plus four distinct distractors drawn
/// from `pool` without replacement, shuffled into A-E.
inline McqItem build_diagnosis_mcq(const std::string& record, const std::string& gold_diagnosis,
                                   const std::vector<std::string>& pool, std::uint64_t seed) {
    std::vector<std::string> candidates;
    for (const auto& d : pool)
        if (d != gold_diagnosis && std::find(candidates.begin(), candidates.end(), d) == candidates.end())
            candidates.push_back(d);
    if (candidates.size() < 4)
        throw InvalidArgument("build_diagnosis_mcq: distractor pool has " + std::to_string(candidates.size()) +
                              " distinct diagnoses other than the gold one, need 4");
    Rng rng(seed);
    rng.shuffle(candidates);
    std::vector<std::string> options(candidates.begin(), candidates.begin() + 4);
    options.push_back(gold_diagnosis);
    rng.shuffle(options);

    McqItem item;
    item.stem = record + "\n" + std::string(kDiagnosisInstruction);
    item.options = std::move(options);
    const auto pos = std::find(item.options.begin(), item.options.end(), gold_diagnosis) - item.options.begin();
    item.gold = static_cast<char>('A' + pos);
    return item;
}

/// stem, newline, "回答选项：A. x; B. y; ...", newline, instruction.
inline std::string format_prompt(const McqItem& item) {
    std::string out = item.stem;
    out += '\n';
    out += kOptionsHeader;
    for (std::size_t i = 0; i < item.options.size(); ++i) {
        if (i > 0) out += "; ";
        out.push_back(static_cast<char>('A' + i));
        out += ". ";
        out += item.options[i];
    }
    out += '\n';
    out += kAnswerInstruction;
    return out;
}

namespace detail {

inline bool is_ascii_letter(char32_t c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
inline bool is_ascii_alnum(char32_t c) { return is_ascii_letter(c) || (c >= '0' && c <= '9'); }
inline char32_t ascii_upper(char32_t c) { return (c >= 'a' && c <= 'z') ? c - 32 : c; }

inline bool matches_at(const std::u32string& s, std::size_t at, std::u32string_view lit) {
    return s.compare(at, lit.size(), lit) == 0;
}

}  // namespace detail

/// Finds the answer label in a free-text response. Recognized forms:
///   "正确选项是X", "选X", and a standalone capital X followed by "." or "、".
/// The last valid occurrence wins; labels outside `valid_labels` are ignored.
/// Never throws; std::nullopt means ABSTAIN.
inline std::optional<char> extract_option(std::string_view response, std::string_view valid_labels) noexcept {
    try {
        const std::u32string s = utf8::decode(response);
        std::optional<char> best;
        auto consider = [&](char32_t c) {
            c = detail::ascii_upper(c);
            if (c < 'A' || c > 'Z') return;
            if (valid_labels.find(static_cast<char>(c)) != std::string_view::npos) best = static_cast<char>(c);
        };
        auto skip_spaces = [&](std::size_t j) {
            while (j < s.size() && (s[j] == ' ' || s[j] == 0x3000)) ++j;
            return j;
        };
        auto label_at = [&](std::size_t j) {
            return j < s.size() && detail::is_ascii_letter(s[j]) &&
                   (j + 1 == s.size() || !detail::is_ascii_letter(s[j + 1]));
        };
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (detail::matches_at(s, i, U"正确选项是")) {
                const auto j = skip_spaces(i + 5);
                if (label_at(j)) consider(s[j]);
            } else if (s[i] == U'选') {
                const auto j = skip_spaces(i + 1);
                if (label_at(j)) consider(s[j]);
            } else if (s[i] >= 'A' && s[i] <= 'Z' && (i == 0 || !detail::is_ascii_alnum(s[i - 1]))) {
                const auto j = skip_spaces(i + 1);
                if (j < s.size() && (s[j] == '.' || s[j] == U'、' || s[j] == U'．')) consider(s[i]);
            }
        }
        return best;
    } catch (...) {
        return std::nullopt;
    }
}

/// Text in, text out. Lets the harness run without a trained model.
using Responder = std::function<std::string(const std::string& prompt)>;

struct ItemOutcome {
    std::optional<char> predicted;  // nullopt: ABSTAIN
    char gold = 'A';
    bool correct = false;
};

struct EvalReport {
    std::vector<ItemOutcome> items;
    double accuracy = 0.0;
    std::size_t correct_count = 0;
    std::size_t abstain_count = 0;

    std::size_t total() const noexcept { return items.size(); }
};

inline EvalReport evaluate(const Responder& responder, const std::vector<McqItem>& items) {
    if (items.empty()) throw InvalidArgument("evaluate: no items");
    EvalReport report;
    for (const auto& item : items) {
        item.validate();
        const auto response = responder(format_prompt(item));
        ItemOutcome o;
        o.gold = item.gold;
        o.predicted = extract_option(response, item.labels());
        o.correct = o.predicted && *o.predicted == item.gold;
        report.correct_count += o.correct ? 1 : 0;
        report.abstain_count += o.predicted ? 0 : 1;
        report.items.push_back(o);
    }
    report.accuracy = static_cast<double>(report.correct_count) / static_cast<double>(items.size());
    return report;
}

/// Per-item rows followed by "accuracy=<value> n=<count> abstain=<count>".
inline std::string format_report(const EvalReport& r) {
    std::string out = "# item\tpredicted\tgold\tcorrect\n";
    for (std::size_t i = 0; i < r.items.size(); ++i) {
        const auto& o = r.items[i];
        out += std::to_string(i) + '\t' + (o.predicted ? std::string(1, *o.predicted) : std::string("ABSTAIN")) + '\t' +
               o.gold + '\t' + (o.correct ? "1" : "0") + '\n';
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "accuracy=%.6f n=%zu abstain=%zu\n", r.accuracy, r.total(), r.abstain_count);
    return out + buf;
}

// ---------------------------------------------------------------------------
// Greedy decoding with a key/value cache.

/// Incremental evaluation-mode decoder. Feeding tokens one at a time yields
/// the same logits (up to rounding) as model_forward on the whole prefix.
template <class T>
class IncrementalDecoder {
public:
    explicit IncrementalDecoder(const ModelState<T>& model)
        : model_(model), keys_(model.blocks.size()), values_(model.blocks.size()) {}

    std::size_t position() const noexcept { return pos_; }

    /// Appends one token and returns the logits predicting the next one.
    std::vector<T> push(std::uint32_t token) {
        const auto& c = model_.config;
        if (pos_ >= c.max_seq_len) throw InvalidArgument("decoder: context full");
        if (token >= c.vocab_size) throw InvalidArgument("decoder: token id out of vocabulary");
        const std::size_t d = c.d_model, heads = c.n_heads, dh = d / heads;
        const T scale = T(1) / std::sqrt(static_cast<T>(dh));

        Matrix<T> x(1, d);
        for (std::size_t j = 0; j < d; ++j) x(0, j) = model_.tok_emb(token, j) + model_.pos_emb(pos_, j);
        for (std::size_t l = 0; l < model_.blocks.size(); ++l) {
            const auto& b = model_.blocks[l];
            auto h1 = detail::layer_norm(x, b.ln1_gain, b.ln1_bias, static_cast<NormCache<T>*>(nullptr));
            auto q = lora_forward(b.query, h1, false);
            auto k = lora_forward(b.key, h1, false);
            auto v = lora_forward(b.value, h1, false);
            auto& K = keys_[l];
            auto& V = values_[l];
            K.insert(K.end(), k.data.begin(), k.data.end());
            V.insert(V.end(), v.data.begin(), v.data.end());
            const std::size_t n = pos_ + 1;
            Matrix<T> attn(1, d);
            std::vector<T> w(n);
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t off = h * dh;
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j < n; ++j) {
                    T s = 0;
                    for (std::size_t cc = 0; cc < dh; ++cc) s += q(0, off + cc) * K[j * d + off + cc];
                    w[j] = s * scale;
                    mx = std::max(mx, w[j]);
                }
                T z = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    w[j] = std::exp(w[j] - mx);
                    z += w[j];
                }
                for (std::size_t j = 0; j < n; ++j) {
                    const T p = w[j] / z;
                    for (std::size_t cc = 0; cc < dh; ++cc) attn(0, off + cc) += p * V[j * d + off + cc];
                }
            }
            auto o = lora_forward(b.output, attn, false);
            add_inplace(x, o);
            auto h2 = detail::layer_norm(x, b.ln2_gain, b.ln2_bias, static_cast<NormCache<T>*>(nullptr));
            auto pre = lora_forward(b.ff_in, h2, false);
            for (auto& a : pre.data) a = detail::gelu(a);
            add_inplace(x, lora_forward(b.ff_out, pre, false));
        }
        auto hf = detail::layer_norm(x, model_.final_gain, model_.final_bias, static_cast<NormCache<T>*>(nullptr));
        ++pos_;
        return matmul_nt(hf, model_.lm_head).data;
    }

private:
    const ModelState<T>& model_;
    std::vector<std::vector<T>> keys_, values_;
    std::size_t pos_ = 0;
};

struct DecodeConfig {
    std::size_t max_new_tokens = 256;
};

/// Greedy (argmax, lowest id on ties) continuation of `prompt`. The prompt
/// is left-truncated so that generation has room inside max_seq_len.
template <class T>
std::vector<std::uint32_t> greedy_decode(const ModelState<T>& model, std::vector<std::uint32_t> prompt,
                                         const DecodeConfig& cfg) {
    const std::size_t limit = model.config.max_seq_len;
    const std::size_t room = std::min(cfg.max_new_tokens, limit / 2);
    const std::size_t keep = limit - room;
    if (prompt.size() > keep) {
        // Keep BOS, drop the oldest prompt tokens after it.
        std::vector<std::uint32_t> cut{prompt.front()};
        cut.insert(cut.end(), prompt.end() - static_cast<std::ptrdiff_t>(keep - 1), prompt.end());
        prompt = std::move(cut);
    }
    IncrementalDecoder<T> dec(model);
    std::vector<T> logits;
    for (auto t : prompt) logits = dec.push(t);
    std::vector<std::uint32_t> out;
    while (out.size() < cfg.max_new_tokens) {
        const auto next = static_cast<std::uint32_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        if (next == kEosId) break;
        out.push_back(next);
        if (dec.position() >= limit) break;
        logits = dec.push(next);
    }
    return out;
}

/// Responder backed by a model checkpoint.
inline Responder model_responder(const ModelState<float>& model, const Vocabulary& vocab, const Tokenizer& tokenizer,
                                 DecodeConfig cfg = {}) {
    return [&model, &vocab, &tokenizer, cfg](const std::string& prompt) {
        std::vector<std::uint32_t> ids{kBosId};
        auto body = vocab.encode(tokenizer.tokenize(prompt));
        ids.insert(ids.end(), body.begin(), body.end());
        return vocab.decode(greedy_decode(model, std::move(ids), cfg));
    };
}

}  // namespace domada
