#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "memeqa/corpus.hpp"

namespace memeqa {

// Prompt-element alphabet: question, context (OCR), multiple options, lecture,
// explanation, answer, generated intermediate text.
enum class Element : char { Q = 'Q', C = 'C', M = 'M', L = 'L', E = 'E', A = 'A', G = 'G' };

std::optional<Element> element_from_char(char c);
inline char element_char(Element e) { return static_cast<char>(e); }

struct PromptStage {
    std::vector<Element> inputs;
    std::vector<Element> outputs;

    bool has_input(Element e) const;
    bool has_output(Element e) const;
    std::string to_string() const;  // e.g. "QCM->LE"
    bool operator==(const PromptStage&) const = default;
};

struct PromptConfig {
    std::vector<PromptStage> stages;  // one or two

    std::string to_string() const;  // stages joined with ';'
    bool operator==(const PromptConfig&) const = default;
};

// Accepts "QCM->LE", "QCM->LE;QCMG->A", with "->" or "→" as the arrow and optional spaces.
// Throws ConfigParseError carrying the offending byte position.
PromptConfig parse_config(std::string_view spec);

// The one- and two-stage configurations compared in the prompting study.
const std::vector<std::string>& study_configurations();

// `{name}` placeholders; `{{` and `}}` are literal braces.
class Template {
public:
    Template() = default;
    explicit Template(std::string text);

    std::string render(const std::map<std::string, std::string>& vars) const;
    const std::vector<std::string>& placeholders() const { return placeholders_; }
    const std::string& text() const { return text_; }

private:
    std::string text_;
    std::vector<std::string> placeholders_;
};

// Template set for every prompt the toolkit sends. Each entry can be overridden
// from a directory of `<name>.txt` files.
struct PromptTemplates {
    Template question{"Question: {question}"};
    Template context{"Context: {context}"};
    Template options{"Options: {options}"};
    Template solution{"Solution: {solution}"};
    Template answer{"The answer is ({letter})"};
    Template generated{"{generated}"};
    Template generic_rationale{"Explain this meme in detail."};
    Template summarize{"Summarize the explanation for {question} based on the {answer}. Explanation: {rationale}"};
    Template diversify;

    static PromptTemplates defaults();
    // Missing files keep their defaults; unknown files are ignored.
    static PromptTemplates load_dir(const std::filesystem::path& dir);
};

// Values for elements that do not live on the instance itself.
struct PromptContext {
    std::optional<std::string> ocr_text;
    std::optional<std::string> lecture;
    std::optional<std::string> explanation;
    std::optional<std::string> generated;
    std::optional<std::size_t> answer_index;
};

struct RenderedPrompt {
    std::string text;
    std::map<char, std::string> slots;  // element -> raw value substituted
};

// One line per element in config order; L and E share a single "Solution:" line.
RenderedPrompt render(const PromptStage& stage, const QAInstance& instance, const PromptContext& context,
                      const PromptTemplates& templates = PromptTemplates::defaults());

// Rebuilds prompt text from a slot map; equals `render(...).text` for the same stage.
std::string render_from_slots(const PromptStage& stage, const std::map<char, std::string>& slots,
                              const PromptTemplates& templates = PromptTemplates::defaults());

// Target text for a stage's outputs, e.g. "Solution: ..." for LE, "The answer is (b)" for A.
std::string render_target(const PromptStage& stage, const QAInstance& instance, const PromptContext& context,
                          const PromptTemplates& templates = PromptTemplates::defaults());

// a..z, then aa, ab, ... az, ba, ...
std::string option_letter(std::size_t index);
std::optional<std::size_t> parse_option_letter(std::string_view letters);
std::string format_options(const std::vector<std::string>& options);

enum class AnswerTier { unparsed = 0, answer_is = 1, leading_letter = 2, option_text = 3 };

struct ParsedAnswer {
    std::optional<std::size_t> index;
    AnswerTier tier = AnswerTier::unparsed;

    bool parsed() const { return index.has_value(); }
};

// Tiered: "answer is (x)", then a bare leading letter, then a unique whole-option mention.
ParsedAnswer parse_answer(std::string_view raw, const std::vector<std::string>& options);

}  // namespace memeqa
