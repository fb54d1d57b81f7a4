#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "memeqa/backends.hpp"
#include "memeqa/confound.hpp"
#include "memeqa/corpus.hpp"
#include "memeqa/diversify.hpp"
#include "memeqa/errors.hpp"
#include "memeqa/fusion.hpp"
#include "memeqa/jsonl.hpp"
#include "memeqa/metrics.hpp"
#include "memeqa/pipeline.hpp"
#include "memeqa/service.hpp"
#include "memeqa/text.hpp"

using namespace memeqa;
using nlohmann::json;

namespace {

struct BackendFlags {
    std::string config;
    bool mock = false;
    std::string cache_dir;

    void add(CLI::App* app) {
        app->add_option("--backends", config, "Backend configuration JSON");
        app->add_flag("--mock", mock, "Use the built-in deterministic mock backends");
        app->add_option("--cache-dir", cache_dir, "Response cache directory for --mock");
    }

    BackendSet load() const {
        if (mock) {
            return mock_backend_set(cache_dir.empty() ? std::nullopt
                                                      : std::optional<std::filesystem::path>(cache_dir));
        }
        if (config.empty()) throw ConfigError("pass --backends <config.json> or --mock");
        return load_backends(config);
    }
};

struct PipelineFlags {
    std::string stage1 = "QCM->LE;QCMG->A";
    std::string lecture = "generic";
    std::string templates;
    std::string sep = "[SEP]";

    void add(CLI::App* app) {
        app->add_option("--config", stage1, "Stage-1 prompt configuration")->capture_default_str();
        app->add_option("--lecture", lecture, "Lecture source: generic | entity")
            ->check(CLI::IsMember({"generic", "entity"}))
            ->capture_default_str();
        app->add_option("--templates", templates, "Directory of <name>.txt prompt templates");
        app->add_option("--sep", sep, "Separator expected inside the generated solution")->capture_default_str();
    }

    PipelineOptions options() const {
        PipelineOptions o;
        o.stage1_config = stage1;
        o.sep = sep;
        o.lecture_mode = lecture == "entity" ? LectureMode::entity_specific : LectureMode::generic;
        if (!templates.empty()) o.templates = PromptTemplates::load_dir(templates);
        parse_config(o.stage1_config);
        return o;
    }
};

std::vector<double> parse_ratios(const std::string& text) {
    std::vector<double> out;
    std::stringstream in(text);
    std::string part;
    while (std::getline(in, part, ',')) {
        try {
            out.push_back(std::stod(trim(part)));
        } catch (const std::exception&) {
            throw ConfigError("bad split ratio '" + part + "'");
        }
    }
    return out;
}

std::vector<std::string> parse_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream in(text);
    std::string part;
    while (std::getline(in, part, ',')) out.push_back(trim(part));
    return out;
}

ReviewService* g_service = nullptr;

void on_signal(int) {
    if (g_service) g_service->shutdown();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"memeqa: role-framing meme QA corpora, two-stage pipeline runs and evaluation"};
    app.require_subcommand(1);

    // build-corpus
    auto* build = app.add_subcommand("build-corpus", "Synthesize multiple-choice QA instances from meme records");
    std::string build_in, build_out, build_splits, build_synonyms;
    std::uint64_t build_seed = 0;
    std::size_t build_options = 4;
    build->add_option("--in", build_in, "MemeRecord JSONL")->required();
    build->add_option("--out", build_out, "QAInstance JSONL")->required();
    build->add_option("--seed", build_seed)->capture_default_str();
    build->add_option("--options", build_options, "Options per question")->capture_default_str()->check(CLI::Range(2, 64));
    build->add_option("--splits", build_splits, "train,val,test ratios, e.g. 0.8,0.1,0.1");
    build->add_option("--synonyms", build_synonyms, "Role synonym table JSON");

    // diversify
    auto* div = app.add_subcommand("diversify", "Replace questions with model rephrasings");
    std::string div_in, div_out, div_backend, div_batches;
    std::uint64_t div_seed = 0;
    double div_fraction = 1.0;
    std::size_t div_parallel = 4;
    BackendFlags div_backends;
    div->add_option("--in", div_in)->required();
    div->add_option("--out", div_out)->required();
    div->add_option("--backend", div_backend, "Backend name (default: the diversifier role)");
    div->add_option("--seed", div_seed)->capture_default_str();
    div->add_option("--fraction", div_fraction)->capture_default_str()->check(CLI::Range(0.0, 1.0));
    div->add_option("--parallelism", div_parallel)->capture_default_str();
    div->add_option("--batches", div_batches, "Write every rephrasing batch to this JSONL");
    div_backends.add(div);

    // confound
    auto* conf = app.add_subcommand("confound", "Apply a robustness confounder");
    std::string conf_mode, conf_in, conf_out, conf_memes;
    std::uint64_t conf_seed = 0;
    conf->add_option("--mode", conf_mode)->required()->check(CLI::IsMember({"yesno", "none-all", "none-train"}));
    conf->add_option("--in", conf_in)->required();
    conf->add_option("--out", conf_out)->required();
    conf->add_option("--memes", conf_memes, "MemeRecord JSONL the corpus was built from")->required();
    conf->add_option("--seed", conf_seed)->capture_default_str();

    // run
    auto* run = app.add_subcommand("run", "Run the two-stage pipeline over a corpus (resumable)");
    std::string run_corpus_path, run_memes, run_out;
    std::size_t run_parallel = 1;
    bool run_timing = false, run_quiet = false;
    BackendFlags run_backends;
    PipelineFlags run_pipeline;
    run->add_option("--corpus", run_corpus_path)->required();
    run->add_option("--memes", run_memes, "MemeRecord JSONL")->required();
    run->add_option("--out", run_out, "Trace JSONL")->required();
    run->add_option("--parallelism", run_parallel)->capture_default_str()->check(CLI::Range(1, 256));
    run->add_flag("--timing", run_timing, "Record per-stage timing in traces (breaks byte determinism)");
    run->add_flag("--quiet", run_quiet);
    run_backends.add(run);
    run_pipeline.add(run);

    // ask
    auto* ask = app.add_subcommand("ask", "Answer and explain one ad-hoc question about a meme");
    std::string ask_image, ask_question, ask_options, ask_ocr;
    bool ask_json = false;
    BackendFlags ask_backends;
    PipelineFlags ask_pipeline;
    ask->add_option("--image", ask_image)->required();
    ask->add_option("--question", ask_question)->required();
    ask->add_option("--options", ask_options, "Comma-separated options")->required();
    ask->add_option("--ocr", ask_ocr, "OCR text of the meme");
    ask->add_flag("--json", ask_json, "Print the full trace");
    ask_backends.add(ask);
    ask_pipeline.add(ask);

    // serve
    auto* serve = app.add_subcommand("serve", "Serve the review JSON API");
    int serve_port = 8080;
    std::string serve_host = "127.0.0.1", serve_store = "review-store", serve_corpus, serve_memes, serve_origin = "*";
    BackendFlags serve_backends;
    PipelineFlags serve_pipeline;
    serve->add_option("--port", serve_port)->capture_default_str();
    serve->add_option("--host", serve_host)->capture_default_str();
    serve->add_option("--store", serve_store, "Journal directory")->capture_default_str();
    serve->add_option("--corpus", serve_corpus, "Preload a QAInstance JSONL");
    serve->add_option("--memes", serve_memes, "MemeRecord JSONL for --corpus");
    serve->add_option("--cors-origin", serve_origin)->capture_default_str();
    serve_backends.add(serve);
    serve_pipeline.add(serve);

    // eval
    auto* ev = app.add_subcommand("eval", "Score traces against the corpus");
    std::string ev_traces, ev_corpus, ev_out, ev_csv, ev_embedder;
    std::size_t ev_parallel = 4;
    BackendFlags ev_backends;
    ev->add_option("--traces", ev_traces)->required();
    ev->add_option("--corpus", ev_corpus)->required();
    ev->add_option("--out", ev_out, "Report JSON")->required();
    ev->add_option("--csv", ev_csv, "Also write a one-row CSV table");
    ev->add_option("--embedder", ev_embedder, "Embedding backend name (default: the embedder role)");
    ev->add_option("--parallelism", ev_parallel)->capture_default_str();
    ev_backends.add(ev);

    // fusion-check
    auto* fc = app.add_subcommand("fusion-check", "Verify the gated cross-attention kernel by finite differences");
    int fc_seeds = 20;
    double fc_tol = 1e-4;
    bool fc_per_dim = false;
    fc->add_option("--seeds", fc_seeds)->capture_default_str();
    fc->add_option("--tolerance", fc_tol)->capture_default_str();
    fc->add_flag("--per-dimension", fc_per_dim, "Gate every dimension separately");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*build) {
            CorpusConfig cfg;
            cfg.seed = build_seed;
            cfg.num_options = build_options;
            if (!build_synonyms.empty()) cfg.synonyms = RoleSynonymTable::from_json(json::parse(read_file(build_synonyms)));
            auto result = build_corpus(load_records(build_in), cfg);
            for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
            auto instances = std::move(result.instances);
            if (!build_splits.empty()) instances = split_corpus(std::move(instances), parse_ratios(build_splits), build_seed);
            save_instances(build_out, instances);
            std::cerr << "wrote " << instances.size() << " instances to " << build_out << "\n";
        } else if (*div) {
            auto set = div_backends.load();
            const auto name = div_backend.empty() ? set.roles.diversifier : div_backend;
            if (name.empty()) throw ConfigError("no diversifier backend configured");
            DiversifyOptions opts;
            opts.max_in_flight = div_parallel;
            auto result = diversify_corpus(load_instances(div_in), *set.get(name), div_seed, div_fraction,
                                           PromptTemplates::defaults(), opts);
            save_instances(div_out, result.instances);
            if (!div_batches.empty()) {
                std::string out;
                for (const auto& b : result.batches) {
                    out += jsonl::dump_line({{"original_question", b.original_question},
                                             {"variants", b.variants},
                                             {"chosen_index", b.chosen_index},
                                             {"backend_id", b.backend_id}});
                }
                write_file_atomic(div_batches, out);
            }
            for (const auto& [id, reason] : result.summary.failures) std::cerr << "failed: " << id << ": " << reason << "\n";
            std::cerr << "selected " << result.summary.selected << ", diversified " << result.summary.diversified
                      << ", failed " << result.summary.failures.size() << "\n";
        } else if (*conf) {
            const auto memes = index_records(load_records(conf_memes));
            auto result =
                apply_confound(parse_confound_mode(conf_mode), load_instances(conf_in), memes, conf_seed);
            save_instances(conf_out, result.instances);
            for (const auto& l : result.summary.log) std::cerr << "note: " << l << "\n";
            std::cerr << conf_mode << ": " << result.summary.total << " instances, " << result.summary.transformed
                      << " transformed, " << result.summary.fallbacks << " fallbacks, " << result.summary.skipped
                      << " skipped\n";
        } else if (*run) {
            const auto set = run_backends.load();
            const Pipeline pipeline(set, run_pipeline.options());
            RunOptions opts;
            opts.parallelism = run_parallel;
            opts.include_timing = run_timing;
            if (!run_quiet) {
                opts.progress = [](std::size_t done, std::size_t total) {
                    std::fprintf(stderr, "\r%zu/%zu", done, total);
                };
            }
            const auto s = run_corpus(load_instances(run_corpus_path), index_records(load_records(run_memes)), pipeline,
                                      run_out, opts);
            if (!run_quiet) std::fprintf(stderr, "\n");
            std::cerr << s.total << " instances: " << s.resumed << " resumed, " << s.completed << " completed, "
                      << s.failed << " failed, " << s.unparsed << " unparsed answers\n";
            return s.failed > 0 ? 3 : 0;
        } else if (*ask) {
            const auto set = ask_backends.load();
            const Pipeline pipeline(set, ask_pipeline.options());
            MemeRecord meme;
            meme.meme_id = "ask";
            meme.image_ref = ask_image;
            meme.ocr_text = ask_ocr;
            QAInstance q;
            q.instance_id = "ask";
            q.meme_id = meme.meme_id;
            q.question = ask_question;
            q.options = parse_list(ask_options);
            validate_instance(q);
            const auto trace = pipeline.run(q, meme);
            if (ask_json) std::cout << trace_to_json(trace).dump(2) << "\n";
            else std::cout << trace.final_text << "\n";
            for (const auto& e : trace.errors) std::cerr << "error: " << e << "\n";
            return trace.ok() ? 0 : 3;
        } else if (*serve) {
            const auto set = serve_backends.load();
            ServiceOptions so;
            so.store_dir = serve_store;
            so.cors_origin = serve_origin;
            ReviewService service(set, serve_pipeline.options(), so);
            if (!serve_corpus.empty()) {
                if (serve_memes.empty()) throw ConfigError("--corpus needs --memes");
                service.add_corpus(load_instances(serve_corpus), index_records(load_records(serve_memes)));
            }
            g_service = &service;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            const int port = service.start(serve_host, serve_port);
            std::cerr << "serving on http://" << serve_host << ":" << port << "\n";
            service.wait();
            g_service = nullptr;
        } else if (*ev) {
            std::optional<BackendSet> set;
            Backend* embedder = nullptr;
            if (ev_backends.mock || !ev_backends.config.empty()) {
                set = ev_backends.load();
                const auto name = ev_embedder.empty() ? set->roles.embedder : ev_embedder;
                if (!name.empty()) embedder = set->get(name).get();
            }
            metrics::EvalOptions opts;
            opts.embedder = embedder;
            opts.parallelism = ev_parallel;
            const auto report = metrics::evaluate(load_traces(ev_traces), load_instances(ev_corpus), opts);
            write_file_atomic(ev_out, report_to_json(report).dump(2) + "\n");
            const auto csv = metrics::report_to_csv(report);
            if (!ev_csv.empty()) write_file_atomic(ev_csv, csv);
            std::cout << csv;
        } else if (*fc) {
            bool all = true;
            double worst = 0.0;
            for (int s = 0; s < fc_seeds; ++s) {
                const auto state = fusion::random_state(static_cast<std::uint64_t>(s), 4, 5, 6, 5, 4,
                                                        fc_per_dim ? fusion::GateMode::per_dimension
                                                                   : fusion::GateMode::scalar);
                const auto r = fusion::grad_check(state);
                const bool ok = r.max_relative_error < fc_tol;
                all = all && ok;
                worst = std::max(worst, r.max_relative_error);
                std::printf("%s seed=%d max_rel_err=%.3e max_abs_err=%.3e\n", ok ? "PASS" : "FAIL", s,
                            r.max_relative_error, r.max_absolute_error);
            }
            std::printf("%s fusion grad check: %d seeds, worst %.3e (tolerance %.1e)\n", all ? "PASS" : "FAIL",
                        fc_seeds, worst, fc_tol);
            return all ? 0 : 1;
        }
    } catch (const ConfigParseError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
