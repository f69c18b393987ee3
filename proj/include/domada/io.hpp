#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "binary_io.hpp"
#include "corpus_store.hpp"
#include "error.hpp"
#include "evaluator.hpp"
#include "trainer.hpp"

// Line-delimited JSON readers and writers for the text inputs of the
// pipeline: raw corpus records, SFT pairs, exam items and diagnosis records.
namespace domada::io {

using nlohmann::json;

namespace detail {

template <class F>
void for_each_json_line(std::string_view text, const std::string& what, F&& f) {
    std::size_t line_no = 0;
    while (!text.empty()) {
        auto nl = text.find('\n');
        auto line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(what + ": line " + std::to_string(line_no) + ": " + e.what());
        }
        try {
            f(j);
        } catch (const json::exception& e) {
            throw FormatError(what + ": line " + std::to_string(line_no) + ": " + e.what());
        }
    }
}

inline std::string lines_to_jsonl(const std::vector<json>& rows) {
    std::string out;
    for (const auto& r : rows) out += r.dump() + '\n';
    return out;
}

}  // namespace detail

/// {"id": ..., "title": ..., "body": ...}; title optional.
inline std::vector<RawRecord> parse_records(std::string_view text) {
    std::vector<RawRecord> out;
    detail::for_each_json_line(text, "records", [&](const json& j) {
        RawRecord r;
        r.source_id = j.at("id").get<std::string>();
        r.title = j.value("title", "");
        r.body = j.at("body").get<std::string>();
        out.push_back(std::move(r));
    });
    return out;
}

inline std::string format_records(const std::vector<RawRecord>& records) {
    std::vector<json> rows;
    for (const auto& r : records) rows.push_back({{"id", r.source_id}, {"title", r.title}, {"body", r.body}});
    return detail::lines_to_jsonl(rows);
}

/// {"prompt": ..., "response": ...}
inline std::vector<SftExample> parse_sft(std::string_view text) {
    std::vector<SftExample> out;
    detail::for_each_json_line(text, "sft data", [&](const json& j) {
        out.push_back({j.at("prompt").get<std::string>(), j.at("response").get<std::string>()});
    });
    return out;
}

inline std::string format_sft(const std::vector<SftExample>& data) {
    std::vector<json> rows;
    for (const auto& e : data) rows.push_back({{"prompt", e.prompt}, {"response", e.response}});
    return detail::lines_to_jsonl(rows);
}

/// {"stem": ..., "options": [...], "gold": "C"}
inline std::vector<McqItem> parse_exam(std::string_view text) {
    std::vector<McqItem> out;
    detail::for_each_json_line(text, "exam", [&](const json& j) {
        McqItem item;
        item.stem = j.at("stem").get<std::string>();
        item.options = j.at("options").get<std::vector<std::string>>();
        auto gold = j.at("gold").get<std::string>();
        if (gold.size() != 1) throw FormatError("exam: gold must be a single label");
        item.gold = gold[0];
        try {
            item.validate();
        } catch (const InvalidArgument& e) {
            throw FormatError(std::string("exam: ") + e.what());
        }
        out.push_back(std::move(item));
    });
    return out;
}

inline std::string format_exam(const std::vector<McqItem>& items) {
    std::vector<json> rows;
    for (const auto& i : items) rows.push_back({{"stem", i.stem}, {"options", i.options}, {"gold", std::string(1, i.gold)}});
    return detail::lines_to_jsonl(rows);
}

/// One response per line as a JSON string, aligned with exam items.
inline std::vector<std::string> parse_responses(std::string_view text) {
    std::vector<std::string> out;
    detail::for_each_json_line(text, "responses", [&](const json& j) { out.push_back(j.get<std::string>()); });
    return out;
}

struct DiagnosisRecord {
    std::string record;
    std::string diagnosis;
    std::string group;
};

/// {"record": ..., "diagnosis": ..., "group": ...}
inline std::vector<DiagnosisRecord> parse_diagnosis_records(std::string_view text) {
    std::vector<DiagnosisRecord> out;
    detail::for_each_json_line(text, "diagnosis records", [&](const json& j) {
        out.push_back({j.at("record").get<std::string>(), j.at("diagnosis").get<std::string>(), j.at("group").get<std::string>()});
    });
    return out;
}

/// Plain text, one entry per non-blank line.
inline std::vector<std::string> parse_lines(std::string_view text) {
    std::vector<std::string> out;
    while (!text.empty()) {
        auto nl = text.find('\n');
        auto line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") != std::string_view::npos) out.emplace_back(line);
    }
    return out;
}

}  // namespace domada::io
