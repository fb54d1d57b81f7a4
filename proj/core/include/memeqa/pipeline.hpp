#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "memeqa/backends.hpp"
#include "memeqa/corpus.hpp"
#include "memeqa/prompts.hpp"

namespace memeqa {

inline constexpr const char* kTraceSchema = "memeqa.trace/v1";
inline constexpr const char* kGenericRationalePrompt = "Explain this meme in detail.";

enum class LectureMode { generic, entity_specific };

struct PipelineOptions {
    // Stage-1 answer choreography; one- or two-stage.
    std::string stage1_config = "QCM->LE;QCMG->A";
    // Separator the answer model places between lecture and explanation in G.
    std::string sep = "[SEP]";
    LectureMode lecture_mode = LectureMode::generic;
    GenerationParams answer_params{256, 0.0, {}};
    GenerationParams rationale_params{512, 0.0, {}};
    GenerationParams summary_params{256, 0.0, {}};
    PromptTemplates templates = PromptTemplates::defaults();
};

struct PredictedAnswer {
    std::optional<std::size_t> index;
    std::string surface;
    AnswerTier tier = AnswerTier::unparsed;
    std::string raw;

    bool unparsed() const { return !index.has_value(); }
};

struct Stage1Exchange {
    std::string solution_prompt;
    std::string generated;  // G
    std::string answer_prompt;
    std::string raw_answer;
};

struct PipelineTrace {
    std::string instance_id;
    std::string meme_id;
    std::string question;
    std::vector<std::string> options;
    std::string generic_rationale;
    std::string lecture;
    Stage1Exchange stage1;
    PredictedAnswer predicted;
    std::string specific_prompt;
    std::string specific_rationale;
    std::string summarize_prompt;
    std::string explanation;
    std::string final_text;
    std::map<std::string, double> timing_ms;
    std::map<std::string, std::string> backends;
    std::vector<std::string> flags;
    std::vector<std::string> errors;
    std::string status = "ok";  // ok | failed

    bool ok() const { return status == "ok"; }
};

nlohmann::json trace_to_json(const PipelineTrace& trace, bool include_timing = false);
PipelineTrace trace_from_json(const nlohmann::json& j);

std::string final_text(const std::string& answer_surface, const std::string& explanation);
// True when text reads "Answer: <non-empty> BECAUSE <non-empty>" on a single line.
bool matches_final_grammar(const std::string& text);

// "How is <answer> <question minus its first two words>"; throws RephraseError under 3 words.
std::string rephrase_for_specific(const std::string& question, const std::string& answer_surface);

// Single paragraph: cut at the first blank line, inner whitespace collapsed.
std::string clean_explanation(const std::string& raw);

// Stage-1 lecture: the multimodal backend's description of the meme. Throws RationaleUnavailable.
std::string generic_rationale(const MemeRecord& meme, Backend& mm_backend, const PipelineOptions& options = {});

// Renders the configured stages and parses the answer. Never reads instance.correct_index.
PredictedAnswer predict_answer(const QAInstance& instance, const MemeRecord& meme, const std::string& lecture,
                               Backend& answer_backend, const PipelineOptions& options = {},
                               Stage1Exchange* exchange = nullptr);

struct ExplanationResult {
    std::string specific_prompt;
    std::string specific_rationale;
    std::string summarize_prompt;
    std::string explanation;
    std::vector<std::string> warnings;
};

// Answer-specific rationale, then summarization. Throws ExplanationUnavailable.
ExplanationResult explain(const QAInstance& instance, const MemeRecord& meme, const std::string& answer_surface,
                          Backend& mm_backend, Backend& text_backend, const PipelineOptions& options = {});

// End-to-end orchestration over a backend set's role assignment.
class Pipeline {
public:
    Pipeline(const BackendSet& backends, PipelineOptions options = {});

    // Per-stage failures are recorded on the trace rather than thrown.
    PipelineTrace run(const QAInstance& instance, const MemeRecord& meme) const;

    const PipelineOptions& options() const { return options_; }

private:
    std::shared_ptr<Backend> generic_;
    std::shared_ptr<Backend> answer_;
    std::shared_ptr<Backend> specific_;
    std::shared_ptr<Backend> summarizer_;
    PipelineOptions options_;
};

struct RunOptions {
    std::size_t parallelism = 1;
    bool include_timing = false;
    // Stop after this many new traces without the final rewrite, as if the process died.
    std::optional<std::size_t> stop_after;
    std::function<void(std::size_t done, std::size_t total)> progress;
};

struct RunSummary {
    std::size_t total = 0;
    std::size_t resumed = 0;  // already complete on disk
    std::size_t completed = 0;
    std::size_t failed = 0;
    std::size_t unparsed = 0;
    bool interrupted = false;
};

// Resumable batch run. Traces are appended to `out_path` as they finish; a finished
// run rewrites the file in canonical instance_id order.
RunSummary run_corpus(const std::vector<QAInstance>& instances, const std::map<std::string, MemeRecord>& memes,
                      const Pipeline& pipeline, const std::filesystem::path& out_path, const RunOptions& options = {});

std::vector<PipelineTrace> load_traces(const std::filesystem::path& path);

}  // namespace memeqa
