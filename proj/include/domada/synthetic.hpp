#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "corpus_store.hpp"
#include "evaluator.hpp"
#include "random.hpp"
#include "trainer.hpp"

// Deterministic toy corpus: herbal-medicine documents mixed
// with sports, technology, travel and finance documents. Used by the test
// suites and the `synth` CLI subcommand.
namespace domada::synthetic {

struct Herb {
    const char* name;
    const char* nature;
    const char* organ;
    const char* effect;
};

inline const std::vector<Herb>& herbs() {
    static const std::vector<Herb> h = {
        {"甘草", "甘平", "脾", "补脾益气"},   {"黄芪", "甘温", "肺", "补气升阳"},   {"人参", "甘微温", "脾", "大补元气"},
        {"当归", "甘辛温", "肝", "补血活血"}, {"白术", "苦甘温", "脾", "健脾燥湿"}, {"茯苓", "甘淡平", "心", "利水渗湿"},
        {"川芎", "辛温", "肝", "活血行气"},   {"柴胡", "苦微寒", "肝", "疏肝解郁"}, {"半夏", "辛温", "胃", "燥湿化痰"},
        {"陈皮", "苦辛温", "脾", "理气健脾"}, {"附子", "辛甘热", "肾", "回阳救逆"}, {"桂枝", "辛甘温", "心", "温通经脉"},
        {"麻黄", "辛微苦温", "肺", "发汗解表"}, {"黄连", "苦寒", "心", "清热燥湿"}, {"大黄", "苦寒", "胃", "泻下攻积"},
        {"熟地", "甘微温", "肾", "滋阴补血"}, {"丹参", "苦微寒", "心", "活血祛瘀"}, {"枸杞", "甘平", "肝", "滋补肝肾"},
    };
    return h;
}

inline const std::vector<std::string>& pulses() {
    static const std::vector<std::string> p = {"浮脉", "沉脉", "迟脉", "数脉", "滑脉", "涩脉",
                                               "弦脉", "解索脉", "鱼翔脉", "虾游脉", "雀啄脉", "细脉"};
    return p;
}

inline const std::vector<std::string>& syndromes() {
    static const std::vector<std::string> s = {"气虚证", "血瘀证", "阴虚证", "阳虚证", "湿热证",
                                               "风寒表证", "肝郁气滞", "脾胃虚弱", "痰湿阻络", "心肾不交"};
    return s;
}

inline const std::vector<std::string>& tcm_terms() {
    static const std::vector<std::string> t = {"经络", "气血", "阴阳", "脉象", "辨证", "方剂", "脏腑",
                                               "舌苔", "针灸", "推拿", "药性", "归经", "中医", "本草"};
    return t;
}

struct Topic {
    std::vector<std::string> subjects;
    std::vector<std::string> verbs;
    std::vector<std::string> objects;
};

inline const std::vector<Topic>& general_topics() {
    static const std::vector<Topic> t = {
        {{"球队", "球员", "教练", "队长", "球迷"}, {"赢得", "输掉", "参加", "报道"}, {"联赛", "冠军", "比赛", "进球", "决赛"}},
        {{"公司", "工程师", "用户", "团队", "厂商"}, {"发布", "开发", "测试", "升级"}, {"软件", "芯片", "手机", "网络", "系统"}},
        {{"游客", "城市", "机场", "酒店", "司机"}, {"前往", "参观", "预订", "修建"}, {"公路", "火车", "景点", "博物馆", "广场"}},
        {{"银行", "投资者", "市场", "企业", "政府"}, {"购买", "出售", "提高", "降低"}, {"股票", "价格", "利率", "债券", "预算"}},
    };
    return t;
}

inline const std::vector<std::string>& filler() {
    static const std::vector<std::string> f = {"我们", "可以", "一些", "非常", "时候", "认为", "发展", "今天",
                                               "开始", "通过", "已经", "同时", "重要", "方面", "问题", "情况"};
    return f;
}

template <class V>
const auto& pick(Rng& rng, const V& v) {
    return v[rng.below(v.size())];
}

inline std::string tcm_sentence(Rng& rng) {
    const auto& h = pick(rng, herbs());
    switch (rng.below(5)) {
        case 0: return std::string(h.name) + "性味" + h.nature + "，归" + h.organ + "经，能" + h.effect + "。";
        case 1: return pick(rng, pulses()) + "多见于" + pick(rng, syndromes()) + "，其" + pick(rng, tcm_terms()) + "失调。";
        case 2: {
            const auto& h2 = pick(rng, herbs());
            return "治疗" + pick(rng, syndromes()) + "常用" + h.name + "与" + h2.name + "配伍，以" + h.effect + "。";
        }
        case 3: return pick(rng, tcm_terms()) + "理论认为" + h.organ + "主" + pick(rng, tcm_terms()) + "，" +
                       pick(rng, filler()) + "宜" + h.effect + "。";
        default: return std::string("方剂中") + h.name + "能" + h.effect + "，" + pick(rng, pulses()) + "者慎用。";
    }
}

inline std::string general_sentence(Rng& rng, const Topic& t) {
    return pick(rng, t.subjects) + pick(rng, filler()) + pick(rng, t.verbs) + "了" + pick(rng, t.objects) + "，" +
           pick(rng, filler()) + pick(rng, t.subjects) + pick(rng, t.verbs) + pick(rng, t.objects) + "。";
}

inline std::string tcm_document(Rng& rng) {
    std::string doc;
    const auto sentences = 3 + rng.below(4);
    for (std::uint64_t i = 0; i < sentences; ++i) doc += tcm_sentence(rng);
    return doc;
}

inline std::string general_document(Rng& rng) {
    const auto& topic = pick(rng, general_topics());
    std::string doc;
    const auto sentences = 3 + rng.below(4);
    for (std::uint64_t i = 0; i < sentences; ++i) doc += general_sentence(rng, topic);
    return doc;
}

inline McqItem herb_effect_item(Rng& rng) {
    const auto& all = herbs();
    const auto gold_index = rng.below(all.size());
    const auto& gold = all[gold_index];
    std::vector<std::string> options{gold.name};
    while (options.size() < 4) {
        const auto& h = pick(rng, all);
        if (std::string(h.effect) == gold.effect) continue;
        if (std::find(options.begin(), options.end(), h.name) == options.end()) options.emplace_back(h.name);
    }
    rng.shuffle(options);
    McqItem item;
    item.stem = std::string("下列哪味药能") + gold.effect + "？";
    item.options = options;
    item.gold = static_cast<char>('A' + (std::find(options.begin(), options.end(), gold.name) - options.begin()));
    return item;
}

struct Fixture {
    std::vector<RawRecord> records;
    std::vector<bool> in_domain;  // aligned with records
    std::vector<std::string> samples;
    std::vector<std::string> lexicon;
    std::vector<std::string> validation;  // held-out in-domain documents
    std::vector<McqItem> exam;
    std::vector<SftExample> sft;
};

/// `in_domain` herbal documents and `out_domain` general documents in a
/// seeded random interleaving, plus task samples, a lexicon, held-out
/// validation text, exam items and SFT pairs.
inline Fixture make_fixture(std::size_t in_domain = 200, std::size_t out_domain = 800, std::uint64_t seed = 2023) {
    Fixture f;
    Rng rng(seed);
    std::vector<bool> kinds(in_domain, true);
    kinds.insert(kinds.end(), out_domain, false);
    rng.shuffle(kinds);
    std::size_t n_in = 0, n_out = 0;
    for (bool k : kinds) {
        RawRecord r;
        r.source_id = k ? "tcm-" + std::to_string(n_in++) : "gen-" + std::to_string(n_out++);
        r.title = r.source_id;
        r.body = k ? tcm_document(rng) : general_document(rng);
        f.records.push_back(std::move(r));
        f.in_domain.push_back(k);
    }

    Rng task_rng(derive_seed(seed, 1));
    for (int i = 0; i < 40; ++i) {
        auto item = herb_effect_item(task_rng);
        f.samples.push_back(format_prompt(item) + tcm_sentence(task_rng));
    }
    for (const auto& h : herbs()) f.lexicon.emplace_back(h.name);
    for (const auto& p : pulses()) f.lexicon.push_back(p);
    for (const auto& s : syndromes()) f.lexicon.push_back(s);

    Rng val_rng(derive_seed(seed, 2));
    for (int i = 0; i < 40; ++i) f.validation.push_back(tcm_document(val_rng));

    Rng exam_rng(derive_seed(seed, 3));
    for (int i = 0; i < 20; ++i) f.exam.push_back(herb_effect_item(exam_rng));
    for (int i = 0; i < 60; ++i) {
        auto item = herb_effect_item(exam_rng);
        const auto idx = static_cast<std::size_t>(item.gold - 'A');
        f.sft.push_back({format_prompt(item), std::string("因此，正确选项是") + item.gold + ". " + item.options[idx] + "。"});
    }
    return f;
}

}  // namespace domada::synthetic
