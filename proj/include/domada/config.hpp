#pragma once

#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "corpus_store.hpp"
#include "error.hpp"
#include "evaluator.hpp"
#include "keyword_extract.hpp"
#include "model.hpp"
#include "retrieval.hpp"
#include "trainer.hpp"

namespace domada {

/// Every tunable of the pipeline. Loaded from a flat key-value file with one
/// section per module; unknown keys are rejected.
struct PipelineConfig {
    std::uint64_t seed = 42;

    struct Paths {
        std::string corpus, store, lexicon, samples, keywords, index, selected, checkpoint, sft_data, exam, report;
    } paths;

    IngestOptions corpus;

    struct Keywords {
        std::size_t top_k = 5;
        std::size_t window = 5;
        double damping = 0.85;
        double tol = 1e-6;
        std::size_t max_iter = 100;
        std::string stopwords;  // comma-separated additions to the default list
    } keywords;

    Bm25Params bm25;
    std::uint64_t budget_tokens = 1'000'000'000;

    ModelConfig model;
    std::size_t vocab_cap = 4096;

    TrainConfig pretrain = TrainConfig::pretrain_defaults();
    TrainConfig sft = TrainConfig::sft_defaults();
    DecodeConfig decode;

    KeywordOptions keyword_options() const {
        KeywordOptions o;
        o.top_k = keywords.top_k;
        o.window = keywords.window;
        o.textrank = {keywords.damping, keywords.tol, keywords.max_iter};
        std::string_view rest = keywords.stopwords;
        while (!rest.empty()) {
            auto comma = rest.find(',');
            auto w = rest.substr(0, comma);
            if (!w.empty()) o.filter.stopwords.emplace(w);
            rest.remove_prefix(comma == std::string_view::npos ? rest.size() : comma + 1);
        }
        return o;
    }
};

namespace detail {

template <class T>
T parse_number(std::string_view key, std::string_view v) {
    T out{};
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        throw DataError("config: bad value '" + std::string(v) + "' for '" + std::string(key) + "'");
    return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw DataError("config: bad boolean '" + std::string(v) + "' for '" + std::string(key) + "'");
}

inline std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

inline std::uint32_t parse_projections(std::string_view key, std::string_view v) {
    std::uint32_t bits = 0;
    while (!v.empty()) {
        auto comma = v.find(',');
        auto name = v.substr(0, comma);
        v.remove_prefix(comma == std::string_view::npos ? v.size() : comma + 1);
        if (name.empty()) continue;
        bool found = false;
        for (auto p : kAllProjections)
            if (name == projection_name(p)) {
                bits |= projection_bit(p);
                found = true;
            }
        if (!found) throw DataError("config: unknown projection '" + std::string(name) + "' in '" + std::string(key) + "'");
    }
    return bits;
}

inline std::string format_projections(std::uint32_t bits) {
    std::string out;
    for (auto p : kAllProjections)
        if (bits & projection_bit(p)) out += (out.empty() ? "" : ",") + std::string(projection_name(p));
    return out;
}

struct Field {
    std::function<void(std::string_view)> set;
    std::function<std::string()> get;
};

// Keys are "section.key"; the global seed has no section.
inline std::vector<std::pair<std::string, Field>> config_fields(PipelineConfig& c) {
    std::vector<std::pair<std::string, Field>> f;
    auto str = [&](std::string key, std::string& ref) {
        f.push_back({key, {[&ref](std::string_view v) { ref = std::string(v); }, [&ref] { return ref; }}});
    };
    auto u64 = [&](std::string key, auto& ref) {
        using R = std::remove_reference_t<decltype(ref)>;
        f.push_back({key, {[&ref, key](std::string_view v) { ref = parse_number<R>(key, v); },
                           [&ref] { return std::to_string(ref); }}});
    };
    auto dbl = [&](std::string key, double& ref) {
        f.push_back({key, {[&ref, key](std::string_view v) { ref = parse_number<double>(key, v); },
                           [&ref] { return format_double(ref); }}});
    };
    auto boolean = [&](std::string key, bool& ref) {
        f.push_back({key, {[&ref, key](std::string_view v) { ref = parse_bool(key, v); },
                           [&ref] { return std::string(ref ? "true" : "false"); }}});
    };
    u64("seed", c.seed);
    str("paths.corpus", c.paths.corpus);
    str("paths.store", c.paths.store);
    str("paths.lexicon", c.paths.lexicon);
    str("paths.samples", c.paths.samples);
    str("paths.keywords", c.paths.keywords);
    str("paths.index", c.paths.index);
    str("paths.selected", c.paths.selected);
    str("paths.checkpoint", c.paths.checkpoint);
    str("paths.sft_data", c.paths.sft_data);
    str("paths.exam", c.paths.exam);
    str("paths.report", c.paths.report);
    u64("corpus.min_tokens", c.corpus.min_tokens);
    u64("keywords.top_k", c.keywords.top_k);
    u64("keywords.window", c.keywords.window);
    dbl("keywords.damping", c.keywords.damping);
    dbl("keywords.tol", c.keywords.tol);
    u64("keywords.max_iter", c.keywords.max_iter);
    str("keywords.stopwords", c.keywords.stopwords);
    dbl("retrieval.k1", c.bm25.k1);
    dbl("retrieval.b", c.bm25.b);
    u64("retrieval.budget_tokens", c.budget_tokens);
    u64("model.vocab_cap", c.vocab_cap);
    u64("model.d_model", c.model.d_model);
    u64("model.n_layers", c.model.n_layers);
    u64("model.n_heads", c.model.n_heads);
    u64("model.d_ff", c.model.d_ff);
    u64("model.max_seq_len", c.model.max_seq_len);
    u64("model.lora_rank", c.model.lora_rank);
    dbl("model.lora_alpha", c.model.lora_alpha);
    dbl("model.lora_dropout", c.model.lora_dropout);
    f.push_back({"model.adapted",
                 {[&c](std::string_view v) { c.model.adapted = parse_projections("model.adapted", v); },
                  [&c] { return format_projections(c.model.adapted); }}});
    boolean("model.train_embeddings", c.model.train_embeddings);
    for (auto [section, tc] : {std::pair<std::string, TrainConfig*>{"pretrain", &c.pretrain}, {"sft", &c.sft}}) {
        dbl(section + ".learning_rate", tc->learning_rate);
        u64(section + ".batch_size", tc->batch_size);
        u64(section + ".epochs", tc->epochs);
        u64(section + ".max_seq_len", tc->max_seq_len);
        dbl(section + ".clip_norm", tc->clip_norm);
        u64(section + ".max_steps", tc->max_steps);
        u64(section + ".threads", tc->threads);
    }
    u64("eval.max_new_tokens", c.decode.max_new_tokens);
    return f;
}

}  // namespace detail

/// Sets one "section.key" (or "seed") from text.
inline void set_config_value(PipelineConfig& c, std::string_view key, std::string_view value) {
    for (auto& [k, field] : detail::config_fields(c))
        if (k == key) return field.set(value);
    throw DataError("config: unknown key '" + std::string(key) + "'");
}

/// Applies "key = value" lines under "[section]" headers on top of `base`.
/// '#' and ';' start comments.
inline PipelineConfig parse_config(std::string_view text, PipelineConfig base = {}) {
    std::string section;
    std::size_t line_no = 0;
    while (!text.empty()) {
        auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        ++line_no;
        auto trim = [](std::string_view s) {
            while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
            while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
            return s;
        };
        line = trim(line);
        if (line.empty() || line.front() == '#' || line.front() == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw DataError("config: line " + std::to_string(line_no) + ": malformed section");
            section = std::string(trim(line.substr(1, line.size() - 2)));
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string_view::npos) throw DataError("config: line " + std::to_string(line_no) + ": expected key = value");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        set_config_value(base, section.empty() ? std::string(key) : section + "." + std::string(key), value);
    }
    return base;
}

/// The fully resolved configuration in the same format parse_config reads.
inline std::string format_config(const PipelineConfig& c) {
    PipelineConfig copy = c;
    std::string out, section;
    for (auto& [key, field] : detail::config_fields(copy)) {
        auto dot = key.find('.');
        std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
        std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
        if (sec != section) {
            out += "\n[" + sec + "]\n";
            section = sec;
        }
        out += name + " = " + field.get() + "\n";
    }
    return out;
}

}  // namespace domada
