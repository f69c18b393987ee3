#include <gtest/gtest.h>

#include <domada/evaluator.hpp>

using namespace domada;

namespace {

const std::string kResponse1 =
    "脉在筋骨，乍疏乍密，散乱无序者，称为解索脉。解索脉是指脉搏在筋骨之间出现，乍疏乍密，散乱无序的状态。"
    "脉搏在筋骨之间出现，意味着脉搏在筋骨之间的血管中流动。乍疏乍密，散乱无序的状态，意味着脉搏在筋骨之间出现时，"
    "脉搏的强弱、节律和节奏都不稳定。因此，解索脉是脉搏在筋骨之间出现的一种状态。因此，正确选项是D. 解索脉。";
const std::string kResponse2 =
    "脉是人体经络系统的一部分，在筋骨中运行。脉的形态和结构非常复杂，乍疏乍密，散乱无序。"
    "这种形态和结构的特点与鱼翔脉的形态和结构相似。因此，脉在筋骨，乍疏乍密，散乱无序者，称为鱼翔脉。"
    "因此，正确选项是A. 鱼翔脉。";

McqItem pulse_item() { return {"脉在筋骨，乍疏乍密，散乱无序者，称为", {"鱼翔脉", "虾游脉", "雀啄脉", "解索脉"}, 'D'}; }

}  // namespace

TEST(Prompt, MatchesExamLayout) {
    EXPECT_EQ(format_prompt(pulse_item()),
              "脉在筋骨，乍疏乍密，散乱无序者，称为\n回答选项：A. 鱼翔脉; B. 虾游脉; C. 雀啄脉; D. 解索脉\n"
              "请分析并给出正确选项。");
}

TEST(Extract, WorkedResponses) {
    EXPECT_EQ(extract_option(kResponse1, "ABCD"), 'D');
    EXPECT_EQ(extract_option(kResponse2, "ABCD"), 'A');
}

TEST(Extract, RecognizedForms) {
    EXPECT_EQ(extract_option("正确选项是 c", "ABCD"), 'C');
    EXPECT_EQ(extract_option("我选B", "ABCD"), 'B');
    EXPECT_EQ(extract_option("我选b。", "ABCD"), 'B');
    EXPECT_EQ(extract_option("答案：C、雀啄脉", "ABCD"), 'C');
    EXPECT_EQ(extract_option("B．虾游脉", "ABCD"), 'B');
    EXPECT_EQ(extract_option("A. 鱼翔脉 不对, 正确选项是D", "ABCD"), 'D');  // last match wins
}

TEST(Extract, AbstainsWithoutAValidLabel) {
    EXPECT_EQ(extract_option("", "ABCD"), std::nullopt);
    EXPECT_EQ(extract_option("不知道", "ABCD"), std::nullopt);
    EXPECT_EQ(extract_option("正确选项是E", "ABCD"), std::nullopt);
    EXPECT_EQ(extract_option("Dr. Wang said", "ABCD"), std::nullopt);
    EXPECT_EQ(extract_option("选项很多", "ABCD"), std::nullopt);
    EXPECT_EQ(extract_option("正确选项是Dog", "ABCD"), std::nullopt);
    // An invalid trailing label does not override an earlier valid one.
    EXPECT_EQ(extract_option("正确选项是B，或者选Z", "ABCD"), 'B');
}

TEST(Extract, IsTotalOnArbitraryBytes) {
    Rng rng(13);
    for (int i = 0; i < 20000; ++i) {
        std::string s(rng.below(64), '\0');
        for (auto& c : s) c = static_cast<char>(rng.below(256));
        if (rng.below(4) == 0) s += "正确选项是";
        auto r = extract_option(s, "ABCDE");
        if (r) {
            EXPECT_NE(std::string("ABCDE").find(*r), std::string::npos);
        }
    }
}

TEST(Mcq, ValidatesOptionsAndGold) {
    EXPECT_NO_THROW(pulse_item().validate());
    EXPECT_EQ(pulse_item().labels(), "ABCD");
    EXPECT_THROW((McqItem{"q", {"a"}, 'A'}).validate(), InvalidArgument);
    EXPECT_THROW((McqItem{"q", {"a", "b", "c", "d", "e", "f"}, 'A'}).validate(), InvalidArgument);
    EXPECT_THROW((McqItem{"q", {"a", "b"}, 'C'}).validate(), InvalidArgument);
}

TEST(Mcq, DiagnosisItemHasFiveDistinctOptionsIncludingGold) {
    std::vector<std::string> pool = {"感冒", "咳嗽", "胃痛", "头痛", "眩晕", "失眠", "感冒"};
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto item = build_diagnosis_mcq("患者发热恶寒", "感冒", pool, seed);
        ASSERT_EQ(item.options.size(), 5u);
        EXPECT_NO_THROW(item.validate());
        EXPECT_EQ(item.options[item.gold - 'A'], "感冒");
        std::set<std::string> uniq(item.options.begin(), item.options.end());
        EXPECT_EQ(uniq.size(), 5u);
        EXPECT_EQ(item, build_diagnosis_mcq("患者发热恶寒", "感冒", pool, seed));
    }
    EXPECT_THROW(build_diagnosis_mcq("r", "感冒", {"感冒", "咳嗽", "胃痛", "头痛"}, 1), InvalidArgument);
}

TEST(Evaluate, ScriptedResponders) {
    std::vector<McqItem> items = {pulse_item(), {"问题二", {"甲", "乙", "丙"}, 'B'}, {"问题三", {"x", "y"}, 'A'}};
    std::map<std::string, char> answers;
    for (const auto& it : items) answers[format_prompt(it)] = it.gold;

    auto gold = evaluate([&](const std::string& p) { return std::string("正确选项是") + answers.at(p); }, items);
    EXPECT_EQ(gold.accuracy, 1.0);
    EXPECT_EQ(gold.correct_count, 3u);
    EXPECT_EQ(gold.abstain_count, 0u);

    auto empty = evaluate([](const std::string&) { return std::string(); }, items);
    EXPECT_EQ(empty.accuracy, 0.0);
    EXPECT_EQ(empty.abstain_count, empty.total());

    auto always_a = evaluate([](const std::string&) { return std::string("A."); }, items);
    EXPECT_DOUBLE_EQ(always_a.accuracy, 1.0 / 3.0);
    EXPECT_EQ(always_a.abstain_count, 0u);
    EXPECT_EQ(always_a.correct_count + (always_a.total() - always_a.correct_count), always_a.total());

    EXPECT_THROW(evaluate([](const std::string&) { return std::string(); }, {}), InvalidArgument);
}

TEST(Evaluate, ReportFormat) {
    std::vector<McqItem> items = {pulse_item(), {"q", {"a", "b"}, 'B'}};
    auto r = evaluate([](const std::string& p) { return p.find("鱼翔脉") != std::string::npos ? "选D" : ""; }, items);
    EXPECT_EQ(format_report(r),
              "# item\tpredicted\tgold\tcorrect\n"
              "0\tD\tD\t1\n"
              "1\tABSTAIN\tB\t0\n"
              "accuracy=0.500000 n=2 abstain=1\n");
}

TEST(Evaluate, ModelResponderIsDeterministic) {
    ModelConfig c;
    c.vocab_size = 30;
    c.d_model = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_ff = 16;
    c.max_seq_len = 64;
    c.lora_rank = 2;
    auto model = init_model<float>(c, 3);
    std::vector<std::string> toks;
    for (int i = 0; i < 26; ++i) toks.push_back(std::string(1, static_cast<char>('a' + i)));
    Vocabulary vocab(toks);
    CjkCharTokenizer tok;
    auto responder = model_responder(model, vocab, tok, {.max_new_tokens = 8});
    std::vector<McqItem> items = {pulse_item(), {"q", {"a", "b"}, 'B'}};
    auto a = evaluate(responder, items);
    auto b = evaluate(responder, items);
    EXPECT_EQ(format_report(a), format_report(b));
    EXPECT_EQ(a.total(), 2u);
}
