#include "memeqa/pipeline.hpp"

#include <chrono>
#include <regex>

#include "memeqa/errors.hpp"
#include "memeqa/text.hpp"

namespace memeqa {

using nlohmann::json;

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

std::string tier_name(AnswerTier t) {
    switch (t) {
        case AnswerTier::unparsed: return "unparsed";
        case AnswerTier::answer_is: return "answer_is";
        case AnswerTier::leading_letter: return "leading_letter";
        case AnswerTier::option_text: return "option_text";
    }
    return "unparsed";
}

AnswerTier parse_tier(const std::string& s) {
    if (s == "answer_is") return AnswerTier::answer_is;
    if (s == "leading_letter") return AnswerTier::leading_letter;
    if (s == "option_text") return AnswerTier::option_text;
    return AnswerTier::unparsed;
}

}  // namespace

json trace_to_json(const PipelineTrace& t, bool include_timing) {
    json j{{"schema", kTraceSchema},
           {"instance_id", t.instance_id},
           {"meme_id", t.meme_id},
           {"question", t.question},
           {"options", t.options},
           {"generic_rationale", t.generic_rationale},
           {"lecture", t.lecture},
           {"stage1",
            {{"solution_prompt", t.stage1.solution_prompt},
             {"generated", t.stage1.generated},
             {"answer_prompt", t.stage1.answer_prompt},
             {"raw_answer", t.stage1.raw_answer}}},
           {"predicted_answer",
            {{"index", t.predicted.index ? json(*t.predicted.index) : json(nullptr)},
             {"surface", t.predicted.surface},
             {"tier", tier_name(t.predicted.tier)},
             {"unparsed", t.predicted.unparsed()}}},
           {"specific_prompt", t.specific_prompt},
           {"specific_rationale", t.specific_rationale},
           {"summarize_prompt", t.summarize_prompt},
           {"explanation", t.explanation},
           {"final_text", t.final_text},
           {"backends", t.backends},
           {"flags", t.flags},
           {"errors", t.errors},
           {"status", t.status}};
    if (include_timing) j["timing_ms"] = t.timing_ms;
    return j;
}

PipelineTrace trace_from_json(const json& j) {
    PipelineTrace t;
    j.at("instance_id").get_to(t.instance_id);
    t.meme_id = j.value("meme_id", "");
    t.question = j.value("question", "");
    t.options = j.value("options", std::vector<std::string>{});
    t.generic_rationale = j.value("generic_rationale", "");
    t.lecture = j.value("lecture", "");
    if (j.contains("stage1")) {
        const auto& s = j["stage1"];
        t.stage1.solution_prompt = s.value("solution_prompt", "");
        t.stage1.generated = s.value("generated", "");
        t.stage1.answer_prompt = s.value("answer_prompt", "");
        t.stage1.raw_answer = s.value("raw_answer", "");
    }
    if (j.contains("predicted_answer")) {
        const auto& p = j["predicted_answer"];
        if (p.contains("index") && !p["index"].is_null()) t.predicted.index = p["index"].get<std::size_t>();
        t.predicted.surface = p.value("surface", "");
        t.predicted.tier = parse_tier(p.value("tier", "unparsed"));
        t.predicted.raw = t.stage1.raw_answer;
    }
    t.specific_prompt = j.value("specific_prompt", "");
    t.specific_rationale = j.value("specific_rationale", "");
    t.summarize_prompt = j.value("summarize_prompt", "");
    t.explanation = j.value("explanation", "");
    t.final_text = j.value("final_text", "");
    t.timing_ms = j.value("timing_ms", std::map<std::string, double>{});
    t.backends = j.value("backends", std::map<std::string, std::string>{});
    t.flags = j.value("flags", std::vector<std::string>{});
    t.errors = j.value("errors", std::vector<std::string>{});
    t.status = j.value("status", "ok");
    return t;
}

std::string final_text(const std::string& answer_surface, const std::string& explanation) {
    return "Answer: " + answer_surface + " BECAUSE " + explanation;
}

bool matches_final_grammar(const std::string& text) {
    static const std::regex grammar(R"(^Answer: .+ BECAUSE .+$)");
    return text.find('\n') == std::string::npos && std::regex_match(text, grammar);
}

std::string rephrase_for_specific(const std::string& question, const std::string& answer_surface) {
    const auto words = split_whitespace(question);
    if (words.size() < 3) {
        throw RephraseError("question needs at least 3 words to rephrase: '" + question + "'");
    }
    return "How is " + answer_surface + " " + join(std::vector<std::string>(words.begin() + 2, words.end()), " ");
}

std::string clean_explanation(const std::string& raw) {
    std::string text = raw;
    static const std::regex blank_line(R"(\r?\n[ \t]*\r?\n)");
    std::smatch m;
    const auto trimmed = trim(text);
    if (std::regex_search(trimmed, m, blank_line)) {
        text = trimmed.substr(0, static_cast<std::size_t>(m.position(0)));
    } else {
        text = trimmed;
    }
    return join(split_whitespace(text), " ");
}

std::string generic_rationale(const MemeRecord& meme, Backend& mm_backend, const PipelineOptions& options) {
    BackendRequest req;
    req.kind = BackendKind::mm_gen;
    req.prompt = options.templates.generic_rationale.render({});
    req.image_ref = meme.image_ref;
    req.params = options.rationale_params;
    try {
        return trim(mm_backend.generate(req).text);
    } catch (const BackendError& e) {
        throw RationaleUnavailable("generic rationale for meme " + meme.meme_id + ": " + e.what());
    } catch (const PreconditionError& e) {
        throw RationaleUnavailable("generic rationale for meme " + meme.meme_id + ": " + e.what());
    }
}

namespace {

BackendRequest answer_request(const std::string& prompt, const MemeRecord& meme, const Backend& backend,
                              const PipelineOptions& options) {
    BackendRequest req;
    req.kind = backend.kind();
    req.prompt = prompt;
    if (backend.kind() == BackendKind::mm_gen) req.image_ref = meme.image_ref;
    req.params = options.answer_params;
    return req;
}

std::string first_line(const std::string& text) {
    const auto t = trim(text);
    return t.substr(0, std::min(t.find('\n'), t.size()));
}

}  // namespace

PredictedAnswer predict_answer(const QAInstance& instance, const MemeRecord& meme, const std::string& lecture,
                               Backend& answer_backend, const PipelineOptions& options, Stage1Exchange* exchange) {
    const auto config = parse_config(options.stage1_config);
    const auto& first = config.stages.front();

    // The answer fields of the instance are never rendered; only question, options and context.
    QAInstance blind = instance;
    blind.correct_index = 0;
    blind.gold_explanation.clear();

    PromptContext ctx;
    ctx.ocr_text = meme.ocr_text;
    ctx.lecture = lecture;

    Stage1Exchange local;
    auto& ex = exchange ? *exchange : local;

    auto req = answer_request(render(first, blind, ctx, options.templates).text, meme, answer_backend, options);
    if (!first.has_input(Element::L) && !lecture.empty()) req.system = lecture;

    std::string raw;
    if (config.stages.size() == 1) {
        ex.answer_prompt = req.prompt;
        raw = answer_backend.generate(req).text;
    } else {
        ex.solution_prompt = req.prompt;
        ex.generated = trim(answer_backend.generate(req).text);

        ctx.generated = ex.generated;
        const auto second = render(config.stages[1], blind, ctx, options.templates).text;
        ex.answer_prompt = second;
        raw = answer_backend.generate(answer_request(second, meme, answer_backend, options)).text;
    }
    ex.raw_answer = raw;

    PredictedAnswer out;
    out.raw = raw;
    const auto parsed = parse_answer(raw, instance.options);
    out.index = parsed.index;
    out.tier = parsed.tier;
    out.surface = parsed.index ? instance.options[*parsed.index] : first_line(raw);
    return out;
}

ExplanationResult explain(const QAInstance& instance, const MemeRecord& meme, const std::string& answer_surface,
                          Backend& mm_backend, Backend& text_backend, const PipelineOptions& options) {
    ExplanationResult out;
    try {
        out.specific_prompt = rephrase_for_specific(instance.question, answer_surface);
    } catch (const RephraseError& e) {
        throw ExplanationUnavailable(e.what());
    }

    try {
        BackendRequest spec;
        spec.kind = BackendKind::mm_gen;
        spec.prompt = out.specific_prompt;
        spec.image_ref = meme.image_ref;
        spec.params = options.rationale_params;
        out.specific_rationale = trim(mm_backend.generate(spec).text);
    } catch (const BackendError& e) {
        throw ExplanationUnavailable(std::string("answer-specific rationale: ") + e.what());
    } catch (const PreconditionError& e) {
        throw ExplanationUnavailable(std::string("answer-specific rationale: ") + e.what());
    }
    if (out.specific_rationale.empty()) out.warnings.push_back("empty answer-specific rationale");

    out.summarize_prompt = options.templates.summarize.render(
        {{"question", instance.question}, {"answer", answer_surface}, {"rationale", out.specific_rationale}});
    try {
        BackendRequest sum;
        sum.kind = BackendKind::text_gen;
        sum.prompt = out.summarize_prompt;
        sum.params = options.summary_params;
        out.explanation = clean_explanation(text_backend.generate(sum).text);
    } catch (const BackendError& e) {
        throw ExplanationUnavailable(std::string("summarization: ") + e.what());
    }
    if (out.explanation.empty()) out.warnings.push_back("empty explanation");
    return out;
}

Pipeline::Pipeline(const BackendSet& backends, PipelineOptions options) : options_(std::move(options)) {
    const auto& r = backends.roles;
    if (r.generic.empty() || r.answer.empty() || r.summarizer.empty()) {
        throw ConfigError("pipeline needs backends for the generic, answer and summarizer roles");
    }
    generic_ = backends.get(r.generic);
    answer_ = backends.get(r.answer);
    specific_ = backends.get(r.specific.empty() ? r.generic : r.specific);
    summarizer_ = backends.get(r.summarizer);
    parse_config(options_.stage1_config);
}

PipelineTrace Pipeline::run(const QAInstance& instance, const MemeRecord& meme) const {
    PipelineTrace t;
    t.instance_id = instance.instance_id;
    t.meme_id = instance.meme_id;
    t.question = instance.question;
    t.options = instance.options;
    t.backends = {{"generic", generic_->id()},
                  {"answer", answer_->id()},
                  {"specific", specific_->id()},
                  {"summarizer", summarizer_->id()}};

    auto clock = std::chrono::steady_clock::now();
    try {
        t.generic_rationale = generic_rationale(meme, *generic_, options_);
    } catch (const RationaleUnavailable& e) {
        t.flags.push_back("rationale_unavailable");
        t.errors.push_back(e.what());
    }
    t.timing_ms["generic_rationale"] = elapsed_ms(clock);

    t.lecture = t.generic_rationale;
    if (options_.lecture_mode == LectureMode::entity_specific) {
        clock = std::chrono::steady_clock::now();
        std::vector<std::string> parts;
        try {
            for (std::size_t i = 0; i < instance.options.size(); ++i) {
                BackendRequest req;
                req.kind = BackendKind::mm_gen;
                req.prompt = rephrase_for_specific(instance.question, instance.options[i]);
                req.image_ref = meme.image_ref;
                req.params = options_.rationale_params;
                parts.push_back("(" + option_letter(i) + ") " + trim(specific_->generate(req).text));
            }
            t.lecture = join(parts, "\n");
        } catch (const Error& e) {
            t.flags.push_back("entity_rationale_unavailable");
            t.errors.push_back(e.what());
        }
        t.timing_ms["entity_rationale"] = elapsed_ms(clock);
    }

    clock = std::chrono::steady_clock::now();
    try {
        t.predicted = predict_answer(instance, meme, t.lecture, *answer_, options_, &t.stage1);
    } catch (const Error& e) {
        t.errors.push_back(std::string("answer prediction: ") + e.what());
        t.status = "failed";
        t.timing_ms["predict_answer"] = elapsed_ms(clock);
        return t;
    }
    t.timing_ms["predict_answer"] = elapsed_ms(clock);
    if (t.predicted.unparsed()) t.flags.push_back("answer_unparsed");

    clock = std::chrono::steady_clock::now();
    try {
        auto ex = explain(instance, meme, t.predicted.surface, *specific_, *summarizer_, options_);
        t.specific_prompt = std::move(ex.specific_prompt);
        t.specific_rationale = std::move(ex.specific_rationale);
        t.summarize_prompt = std::move(ex.summarize_prompt);
        t.explanation = std::move(ex.explanation);
        for (auto& w : ex.warnings) t.flags.push_back(w == "empty explanation" ? "empty_explanation" : "empty_specific_rationale");
    } catch (const ExplanationUnavailable& e) {
        t.flags.push_back("explanation_unavailable");
        t.errors.push_back(e.what());
        t.status = "failed";
    }
    t.timing_ms["explain"] = elapsed_ms(clock);

    t.final_text = final_text(t.predicted.surface, t.explanation);
    return t;
}

}  // namespace memeqa
