#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "utf8.hpp"

namespace domada {

/// Pluggable tokenizer. Implementations must be deterministic; `id()` is
/// persisted next to every store and index built with it.
class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::string id() const = 0;
    virtual std::vector<std::string> tokenize(std::string_view text) const = 0;
};

/// Each CJK codepoint is a token; other letter/digit runs split on whitespace
/// and punctuation and are lowercased. Punctuation itself is discarded.
class CjkCharTokenizer final : public Tokenizer {
public:
    static constexpr const char* kId = "cjk-char-v1";

    std::string id() const override { return kId; }

    std::vector<std::string> tokenize(std::string_view text) const override {
        std::vector<std::string> out;
        std::string run;
        auto flush = [&] {
            if (!run.empty()) {
                out.push_back(std::move(run));
                run.clear();
            }
        };
        for (char32_t c : utf8::decode(text)) {
            if (utf8::is_cjk(c)) {
                flush();
                std::string tok;
                utf8::append(tok, c);
                out.push_back(std::move(tok));
            } else if (utf8::is_word_char(c)) {
                utf8::append(run, utf8::to_lower(c));
            } else {
                flush();
            }
        }
        flush();
        return out;
    }
};

inline std::unique_ptr<Tokenizer> make_tokenizer(std::string_view id) {
    if (id == CjkCharTokenizer::kId) return std::make_unique<CjkCharTokenizer>();
    throw InvalidArgument("unknown tokenizer id '" + std::string(id) + "'");
}

inline std::vector<std::string> tokenize(std::string_view text, const Tokenizer& tokenizer) {
    return tokenizer.tokenize(text);
}

}  // namespace domada
