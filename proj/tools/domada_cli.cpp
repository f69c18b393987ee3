// domada: keyword-driven corpus selection and LoRA adaptation of a small
// decoder, one subcommand per pipeline stage.

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <domada/domada.hpp>
#include <domada/io.hpp>

namespace fs = std::filesystem;
using namespace domada;

namespace {

constexpr const char* kVersionText =
    "domada 1.0.0\n"
    "store       DFSTORE 1\n"
    "index       DFIDX1\n"
    "checkpoint  DFCKPT1\n"
    "vocabulary  DFVOCAB1\n"
    "keywords    tsv: keyword count weight provenance\n"
    "tokenizer   cjk-char-v1";

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
};

PipelineConfig resolve_config(const Globals& g) {
    PipelineConfig c;
    if (!g.config_path.empty()) c = parse_config(read_file(g.config_path));
    for (const auto& kv : g.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw InvalidArgument("--set expects key=value, got '" + kv + "'");
        set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (g.seed) c.seed = *g.seed;
    c.pretrain.seed = c.seed;
    c.sft.seed = c.seed;
    return c;
}

template <class T>
CLI::Option* optional_flag(CLI::App* app, const char* name, std::optional<T>& dst, const char* help) {
    return app->add_option_function<T>(name, [&dst](const T& v) { dst = v; }, help);
}

void log_config(const PipelineConfig& c) { std::fprintf(stderr, "# resolved config\n%s\n", format_config(c).c_str()); }

template <class T>
void override_with(T& target, const std::optional<T>& flag) {
    if (flag) target = *flag;
}

std::string need(const std::string& flag_value, const std::string& config_value, const char* what) {
    if (!flag_value.empty()) return flag_value;
    if (!config_value.empty()) return config_value;
    throw InvalidArgument(std::string("missing ") + what);
}

// Refuses to overwrite anything the command reads.
void check_outputs(const std::vector<std::string>& inputs, const std::vector<std::string>& outputs) {
    for (const auto& out : outputs)
        for (const auto& in : inputs) {
            if (in.empty() || out.empty()) continue;
            std::error_code ec;
            if (fs::weakly_canonical(in, ec) == fs::weakly_canonical(out, ec))
                throw InvalidArgument("output '" + out + "' would overwrite input '" + in + "'");
        }
}

std::string vocab_path(const std::string& checkpoint) { return checkpoint + ".vocab"; }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::vector<std::string> texts_of(const std::vector<RawRecord>& records) {
    std::vector<std::string> out;
    for (const auto& r : records) out.push_back(clean_text(r.body));
    return out;
}

struct TrainFlags {
    std::optional<double> lr;
    std::optional<std::size_t> batch_size, epochs, max_seq_len, threads;
    std::optional<std::uint64_t> max_steps;

    void add(CLI::App* sub) {
        optional_flag(sub, "--lr", lr, "learning rate");
        optional_flag(sub, "--batch-size", batch_size, "sequences per optimizer step");
        optional_flag(sub, "--epochs", epochs, "passes over the data");
        optional_flag(sub, "--max-steps", max_steps, "stop once the step counter reaches this (0: all epochs)");
        optional_flag(sub, "--max-seq-len", max_seq_len, "training sequence length (0: model's)");
        optional_flag(sub, "--threads", threads, "worker threads");
    }
    void apply_to(TrainConfig& t) const {
        override_with(t.learning_rate, lr);
        override_with(t.batch_size, batch_size);
        override_with(t.epochs, epochs);
        override_with(t.max_steps, max_steps);
        override_with(t.max_seq_len, max_seq_len);
        override_with(t.threads, threads);
    }
};

void report_training(const TrainResult& r, const Checkpoint& ck) {
    const auto& h = r.history;
    if (!h.empty())
        std::fprintf(stderr, "trained %zu steps: loss %.4f -> %.4f (step counter %llu)\n", h.size(), h.front().loss,
                     h.back().loss, static_cast<unsigned long long>(ck.step));
    else
        std::fprintf(stderr, "no steps taken (step counter already %llu)\n", static_cast<unsigned long long>(ck.step));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Domain keyword extraction, corpus retrieval and LoRA training"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", kVersionText);

    Globals g;
    app.add_option("--config", g.config_path, "pipeline config file")->check(CLI::ExistingFile);
    optional_flag(&app, "--seed", g.seed, "global seed");
    app.add_option("--set", g.overrides, "override a config key, key=value")->take_all();

    // ingest
    auto* ingest_cmd = app.add_subcommand("ingest", "clean and tokenize JSONL records into a store");
    std::string ingest_in, ingest_store;
    std::optional<std::size_t> min_tokens;
    ingest_cmd->add_option("--input", ingest_in, "JSONL records {id, title, body}");
    ingest_cmd->add_option("--store", ingest_store, "output store");
    optional_flag(ingest_cmd, "--min-tokens", min_tokens, "drop documents shorter than this");

    // keywords
    auto* kw_cmd = app.add_subcommand("keywords", "extract weighted domain keywords from task samples");
    std::string kw_samples, kw_lexicon, kw_out;
    std::optional<std::size_t> top_k, window;
    kw_cmd->add_option("--samples", kw_samples, "task samples, one per line");
    kw_cmd->add_option("--lexicon", kw_lexicon, "domain lexicon, one word per line");
    optional_flag(kw_cmd, "--top-k", top_k, "keywords per sample");
    optional_flag(kw_cmd, "--window", window, "co-occurrence window");
    kw_cmd->add_option("--out", kw_out, "keyword file");

    // index
    auto* index_cmd = app.add_subcommand("index", "build a BM25 inverted index over a store");
    std::string index_store, index_out;
    std::optional<double> k1, b;
    index_cmd->add_option("--store", index_store, "input store");
    index_cmd->add_option("--out", index_out, "index file");
    optional_flag(index_cmd, "--k1", k1, "BM25 k1");
    optional_flag(index_cmd, "--b", b, "BM25 b");

    // retrieve
    auto* ret_cmd = app.add_subcommand("retrieve", "select the top-ranked documents within a token budget");
    std::string ret_index, ret_store, ret_keywords, ret_out;
    std::optional<std::uint64_t> budget;
    ret_cmd->add_option("--index", ret_index, "index file");
    ret_cmd->add_option("--store", ret_store, "store the index was built from");
    ret_cmd->add_option("--keywords", ret_keywords, "keyword file");
    optional_flag(ret_cmd, "--budget-tokens", budget, "token budget for the selection");
    ret_cmd->add_option("--out", ret_out, "selected store; provenance goes to <out>.sources");

    // pretrain
    auto* pre_cmd = app.add_subcommand("pretrain", "causal-LM training of the adapters on a store");
    std::string pre_corpus, pre_in, pre_out, pre_validation;
    TrainFlags pre_flags;
    pre_cmd->add_option("--corpus", pre_corpus, "training store");
    pre_cmd->add_option("--in", pre_in, "resume from this checkpoint instead of a fresh model");
    pre_cmd->add_option("--out", pre_out, "output checkpoint; vocabulary goes to <out>.vocab, losses to <out>.loss");
    pre_cmd->add_option("--validation", pre_validation, "JSONL records to report held-out loss on");
    pre_flags.add(pre_cmd);

    // sft
    auto* sft_cmd = app.add_subcommand("sft", "supervised fine-tuning on prompt/response pairs");
    std::string sft_data, sft_in, sft_out;
    TrainFlags sft_flags;
    sft_cmd->add_option("--data", sft_data, "JSONL {prompt, response}");
    sft_cmd->add_option("--in", sft_in, "input checkpoint");
    sft_cmd->add_option("--out", sft_out, "output checkpoint");
    sft_flags.add(sft_cmd);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "score multiple-choice items");
    std::string eval_ckpt, eval_responses, eval_exam, eval_report;
    std::optional<std::size_t> max_new;
    auto* ckpt_opt = eval_cmd->add_option("--checkpoint", eval_ckpt, "model checkpoint");
    auto* resp_opt = eval_cmd->add_option("--responses", eval_responses, "fixed responses, one JSON string per item");
    ckpt_opt->excludes(resp_opt);
    eval_cmd->add_option("--exam", eval_exam, "JSONL {stem, options, gold}");
    eval_cmd->add_option("--report", eval_report, "report file");
    optional_flag(eval_cmd, "--max-new-tokens", max_new, "generation length");

    // gradcheck
    auto* gc_cmd = app.add_subcommand("gradcheck", "compare backward passes with finite differences");

    // diagnosis
    auto* diag_cmd = app.add_subcommand("diagnosis", "build five-option diagnosis items from records");
    std::string diag_in, diag_out;
    diag_cmd->add_option("--records", diag_in, "JSONL {record, diagnosis, group}")->required();
    diag_cmd->add_option("--out", diag_out, "exam file")->required();

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "write the synthetic fixture");
    std::string synth_dir;
    std::size_t n_in = 200, n_out = 800;
    synth_cmd->add_option("--out-dir", synth_dir, "output directory")->required();
    synth_cmd->add_option("--in-domain", n_in, "herbal documents");
    synth_cmd->add_option("--out-domain", n_out, "general documents");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        PipelineConfig cfg = resolve_config(g);
        CjkCharTokenizer tokenizer;

        if (*ingest_cmd) {
            override_with(cfg.corpus.min_tokens, min_tokens);
            log_config(cfg);
            const auto in = need(ingest_in, cfg.paths.corpus, "--input");
            const auto out = need(ingest_store, cfg.paths.store, "--store");
            check_outputs({in}, {out});
            auto store = domada::ingest(io::parse_records(read_file(in)), tokenizer, cfg.corpus);
            save_store(store, out);
            std::fprintf(stderr, "stored %zu documents, %llu tokens\n", store.size(),
                         static_cast<unsigned long long>(store.total_tokens));
        } else if (*kw_cmd) {
            override_with(cfg.keywords.top_k, top_k);
            override_with(cfg.keywords.window, window);
            log_config(cfg);
            const auto samples = need(kw_samples, cfg.paths.samples, "--samples");
            const auto lexicon = kw_lexicon.empty() ? cfg.paths.lexicon : kw_lexicon;
            const auto out = need(kw_out, cfg.paths.keywords, "--out");
            check_outputs({samples, lexicon}, {out});
            auto task = extract_task_keywords(io::parse_lines(read_file(samples)), tokenizer, cfg.keyword_options());
            std::vector<std::string> lex;
            if (!lexicon.empty()) lex = parse_lexicon(read_file(lexicon));
            auto set = fuse(task, lex);
            write_file(out, serialize_keywords(set));
            std::fprintf(stderr, "%zu keywords (%zu from samples, %zu lexicon words)\n", set.entries.size(), task.size(),
                         lex.size());
        } else if (*index_cmd) {
            override_with(cfg.bm25.k1, k1);
            override_with(cfg.bm25.b, b);
            log_config(cfg);
            const auto in = need(index_store, cfg.paths.store, "--store");
            const auto out = need(index_out, cfg.paths.index, "--out");
            check_outputs({in}, {out});
            auto index = build_index(load_store(in), tokenizer, cfg.bm25);
            save_index(index, out);
            std::fprintf(stderr, "indexed %llu documents, %zu terms\n", static_cast<unsigned long long>(index.num_docs()),
                         index.postings.size());
        } else if (*ret_cmd) {
            override_with(cfg.budget_tokens, budget);
            log_config(cfg);
            const auto idx_path = need(ret_index, cfg.paths.index, "--index");
            const auto store_path = need(ret_store, cfg.paths.store, "--store");
            const auto kw_path = need(ret_keywords, cfg.paths.keywords, "--keywords");
            const auto out = need(ret_out, cfg.paths.selected, "--out");
            const auto sources = out + ".sources";
            check_outputs({idx_path, store_path, kw_path}, {out, sources});
            auto index = load_index(idx_path);
            auto store = load_store(store_path);
            if (index.tokenizer_id != store.tokenizer_id)
                throw DataError("index tokenizer '" + index.tokenizer_id + "' does not match store tokenizer '" +
                                store.tokenizer_id + "'");
            auto query = expand_query(parse_keywords(read_file(kw_path)), tokenizer);
            auto sel = select_corpus(index, store, query, cfg.budget_tokens);
            save_store(sel.store, out);
            std::string prov = "# rank\tsource_doc\tscore\ttitle\n";
            for (std::size_t i = 0; i < sel.sources.size(); ++i) {
                const auto& s = sel.sources[i];
                prov += std::to_string(i) + '\t' + std::to_string(s.doc_id) + '\t' + fmt("%.17g", s.score) + '\t' +
                        store[s.doc_id].title + '\n';
            }
            write_file(sources, prov);
            std::fprintf(stderr, "selected %zu of %zu documents, %llu tokens\n", sel.store.size(), store.size(),
                         static_cast<unsigned long long>(sel.store.total_tokens));
        } else if (*pre_cmd) {
            pre_flags.apply_to(cfg.pretrain);
            log_config(cfg);
            const auto corpus_path = need(pre_corpus, cfg.paths.selected, "--corpus");
            const auto out = need(pre_out, cfg.paths.checkpoint, "--out");
            check_outputs({corpus_path, pre_in, pre_in.empty() ? "" : vocab_path(pre_in), pre_validation},
                          {out, vocab_path(out), out + ".loss"});
            auto corpus = load_store(corpus_path);
            Checkpoint ck;
            Vocabulary vocab;
            if (!pre_in.empty()) {
                ck = load_checkpoint(pre_in);
                vocab = load_vocabulary(vocab_path(pre_in));
            } else {
                std::vector<std::string> texts;
                for (const auto& d : corpus) texts.push_back(d.text);
                vocab = build_vocabulary(texts, tokenizer, cfg.vocab_cap);
                cfg.model.vocab_size = vocab.size();
                ck.model = init_model<float>(cfg.model, cfg.seed);
            }
            auto result = pretrain(ck, corpus, vocab, tokenizer, cfg.pretrain);
            report_training(result, ck);
            if (!pre_validation.empty()) {
                auto val = io::parse_records(read_file(pre_validation));
                CorpusStore vs;
                vs.documents.reserve(val.size());
                for (auto& text : texts_of(val)) {
                    Document d;
                    d.doc_id = vs.documents.size();
                    d.token_count = tokenizer.tokenize(text).size();
                    d.text = std::move(text);
                    vs.total_tokens += d.token_count;
                    vs.documents.push_back(std::move(d));
                }
                auto data = chunk_corpus(vs, vocab, tokenizer, effective_seq_len(ck.model, cfg.pretrain));
                std::fprintf(stderr, "validation loss %.6f\n", evaluate_loss(ck.model, data));
            }
            save_checkpoint(ck, out);
            save_vocabulary(vocab, vocab_path(out));
            write_file(out + ".loss", format_loss_history(result.history));
        } else if (*sft_cmd) {
            sft_flags.apply_to(cfg.sft);
            log_config(cfg);
            const auto data = need(sft_data, cfg.paths.sft_data, "--data");
            const auto in = need(sft_in, cfg.paths.checkpoint, "--in");
            if (sft_out.empty()) throw InvalidArgument("missing --out");
            check_outputs({data, in, vocab_path(in)}, {sft_out, vocab_path(sft_out), sft_out + ".loss"});
            auto ck = load_checkpoint(in);
            auto vocab = load_vocabulary(vocab_path(in));
            auto result = finetune(ck, io::parse_sft(read_file(data)), vocab, tokenizer, cfg.sft);
            for (auto i : result.rejected)
                std::fprintf(stderr, "rejected example %zu: response alone exceeds the sequence length\n", i);
            report_training(result, ck);
            save_checkpoint(ck, sft_out);
            save_vocabulary(vocab, vocab_path(sft_out));
            write_file(sft_out + ".loss", format_loss_history(result.history));
        } else if (*eval_cmd) {
            override_with(cfg.decode.max_new_tokens, max_new);
            log_config(cfg);
            const auto exam_path = need(eval_exam, cfg.paths.exam, "--exam");
            const auto out = need(eval_report, cfg.paths.report, "--report");
            auto items = io::parse_exam(read_file(exam_path));
            EvalReport report;
            if (!eval_responses.empty()) {
                check_outputs({exam_path, eval_responses}, {out});
                auto responses = io::parse_responses(read_file(eval_responses));
                if (responses.size() != items.size())
                    throw DataError("responses: " + std::to_string(responses.size()) + " lines for " +
                                    std::to_string(items.size()) + " items");
                std::size_t next = 0;
                report = evaluate([&](const std::string&) { return responses[next++]; }, items);
            } else {
                const auto ckpt = need(eval_ckpt, cfg.paths.checkpoint, "--checkpoint");
                check_outputs({exam_path, ckpt, vocab_path(ckpt)}, {out});
                auto ck = load_checkpoint(ckpt);
                auto vocab = load_vocabulary(vocab_path(ckpt));
                report = evaluate(model_responder(ck.model, vocab, tokenizer, cfg.decode), items);
            }
            const auto text = format_report(report);
            write_file(out, text);
            std::fputs(text.substr(text.rfind('\n', text.size() - 2) + 1).c_str(), stdout);
        } else if (*gc_cmd) {
            log_config(cfg);
            GradCheckConfig gc;
            gc.seed = cfg.seed;
            auto r = gradient_check(gc);
            std::printf("# variant\tloss\ttensor\tmax_rel_error\tmax_abs_grad\n");
            for (const auto& e : r.entries)
                std::printf("%s\t%s\t%s\t%.3e\t%.3e\n", e.variant.c_str(), e.loss.c_str(), e.tensor.c_str(),
                            e.max_rel_error, e.max_abs_grad);
            std::printf("worst=%.3e tolerance=%.0e %s\n", r.worst(), r.tolerance, r.passed() ? "pass" : "FAIL");
            if (!r.passed()) throw TrainingError("gradient check exceeded tolerance: worst " + fmt("%.3e", r.worst()));
        } else if (*diag_cmd) {
            log_config(cfg);
            check_outputs({diag_in}, {diag_out});
            auto records = io::parse_diagnosis_records(read_file(diag_in));
            std::map<std::string, std::vector<std::string>> pools;
            for (const auto& r : records) pools[r.group].push_back(r.diagnosis);
            std::vector<McqItem> items;
            Rng rng(cfg.seed);
            for (const auto& r : records) items.push_back(build_diagnosis_mcq(r.record, r.diagnosis, pools[r.group], rng.next()));
            write_file(diag_out, io::format_exam(items));
        } else if (*synth_cmd) {
            log_config(cfg);
            auto fx = synthetic::make_fixture(n_in, n_out, cfg.seed);
            fs::create_directories(synth_dir);
            const fs::path dir(synth_dir);
            auto join = [](const std::vector<std::string>& lines) {
                std::string s;
                for (const auto& l : lines) s += l + '\n';
                return s;
            };
            std::vector<RawRecord> val;
            for (std::size_t i = 0; i < fx.validation.size(); ++i)
                val.push_back({"val-" + std::to_string(i), "val-" + std::to_string(i), fx.validation[i]});
            std::vector<std::string> gold;
            for (const auto& item : fx.exam) gold.push_back(io::json(std::string("正确选项是") + item.gold).dump());
            write_file((dir / "records.jsonl").string(), io::format_records(fx.records));
            write_file((dir / "samples.txt").string(), join(fx.samples));
            write_file((dir / "lexicon.txt").string(), join(fx.lexicon));
            write_file((dir / "validation.jsonl").string(), io::format_records(val));
            write_file((dir / "exam.jsonl").string(), io::format_exam(fx.exam));
            write_file((dir / "gold_responses.jsonl").string(), join(gold));
            write_file((dir / "sft.jsonl").string(), io::format_sft(fx.sft));
        }
    } catch (const Error& e) {
        std::string msg = e.what();
        for (auto& ch : msg)
            if (ch == '\n') ch = ' ';
        std::fprintf(stderr, "error: %s: %s\n", e.kind(), msg.c_str());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: internal: %s\n", e.what());
        return 1;
    }
    return 0;
}
