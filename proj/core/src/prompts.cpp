#include "memeqa/prompts.hpp"

#include <cctype>
#include <algorithm>
#include <fstream>
#include <regex>

#include "memeqa/errors.hpp"
#include "memeqa/text.hpp"

namespace memeqa {

std::optional<Element> element_from_char(char c) {
    switch (c) {
        case 'Q': return Element::Q;
        case 'C': return Element::C;
        case 'M': return Element::M;
        case 'L': return Element::L;
        case 'E': return Element::E;
        case 'A': return Element::A;
        case 'G': return Element::G;
        default: return std::nullopt;
    }
}

bool PromptStage::has_input(Element e) const {
    return std::find(inputs.begin(), inputs.end(), e) != inputs.end();
}

bool PromptStage::has_output(Element e) const {
    return std::find(outputs.begin(), outputs.end(), e) != outputs.end();
}

std::string PromptStage::to_string() const {
    std::string s;
    for (auto e : inputs) s.push_back(element_char(e));
    s += "->";
    for (auto e : outputs) s.push_back(element_char(e));
    return s;
}

std::string PromptConfig::to_string() const {
    std::string s;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (i) s += ';';
        s += stages[i].to_string();
    }
    return s;
}

namespace {

class ConfigParser {
public:
    explicit ConfigParser(std::string_view spec) : spec_(spec) {}

    PromptConfig parse() {
        if (trim(spec_).empty()) throw ConfigParseError("empty prompt configuration", 0);
        PromptConfig config;
        while (true) {
            config.stages.push_back(parse_stage(config.stages.size()));
            skip_spaces();
            if (pos_ == spec_.size()) break;
            if (spec_[pos_] != ';') throw ConfigParseError("expected ';' between stages", pos_);
            ++pos_;
            if (config.stages.size() == 2) throw ConfigParseError("at most two stages are supported", pos_ - 1);
        }
        return config;
    }

private:
    PromptStage parse_stage(std::size_t stage_index) {
        PromptStage stage;
        skip_spaces();
        parse_elements(stage.inputs, "input");
        skip_spaces();
        if (spec_.substr(pos_, 2) == "->") {
            pos_ += 2;
        } else if (spec_.substr(pos_, 3) == "\xE2\x86\x92") {
            pos_ += 3;
        } else {
            throw ConfigParseError("expected '->'", pos_);
        }
        skip_spaces();
        const std::size_t outputs_start = pos_;
        parse_elements(stage.outputs, "output");

        if (stage.inputs.empty()) throw ConfigParseError("stage has no input elements", stage_start_);
        if (stage.outputs.empty()) throw ConfigParseError("stage has no output elements", outputs_start);
        for (std::size_t i = 0; i < stage.outputs.size(); ++i) {
            if (stage.has_input(stage.outputs[i])) {
                throw ConfigParseError(std::string("element '") + element_char(stage.outputs[i]) +
                                           "' is both input and output",
                                       output_positions_[i]);
            }
        }
        if (stage_index == 0) {
            for (std::size_t i = 0; i < stage.inputs.size(); ++i) {
                if (stage.inputs[i] == Element::G) {
                    throw ConfigParseError("'G' may only be an input of the second stage", input_positions_[i]);
                }
            }
        }
        return stage;
    }

    void parse_elements(std::vector<Element>& out, const char* what) {
        auto& positions = std::string_view(what) == "input" ? input_positions_ : output_positions_;
        positions.clear();
        if (std::string_view(what) == "input") stage_start_ = pos_;
        while (pos_ < spec_.size()) {
            const char c = spec_[pos_];
            if (c == '-' || c == ';' || c == ' ' || c == '\t' || static_cast<unsigned char>(c) == 0xE2) break;
            const auto e = element_from_char(c);
            if (!e) throw ConfigParseError(std::string("unknown element '") + c + "'", pos_);
            if (std::find(out.begin(), out.end(), *e) != out.end()) {
                throw ConfigParseError(std::string("duplicate ") + what + " element '" + c + "'", pos_);
            }
            out.push_back(*e);
            positions.push_back(pos_);
            ++pos_;
        }
    }

    void skip_spaces() {
        while (pos_ < spec_.size() && (spec_[pos_] == ' ' || spec_[pos_] == '\t')) ++pos_;
    }

    std::string_view spec_;
    std::size_t pos_ = 0;
    std::size_t stage_start_ = 0;
    std::vector<std::size_t> input_positions_;
    std::vector<std::size_t> output_positions_;
};

}  // namespace

PromptConfig parse_config(std::string_view spec) { return ConfigParser(spec).parse(); }

const std::vector<std::string>& study_configurations() {
    static const std::vector<std::string> configs{
        "QCM->A",          "QCML->A",         "QCM->LA",         "QCM->AL",
        "QCM->EA",         "QCM->AE",         "QCML->EA",        "QCM->LE;QCMG->A",
        "QCML->E;QCMG->A", "QCM->E;QCMG->A",  "QCM->L;QCMG->A",
    };
    return configs;
}

Template::Template(std::string text) : text_(std::move(text)) {
    for (std::size_t i = 0; i < text_.size(); ++i) {
        if (text_[i] == '{') {
            if (i + 1 < text_.size() && text_[i + 1] == '{') {
                ++i;
                continue;
            }
            const auto close = text_.find('}', i);
            if (close == std::string::npos) throw ConfigError("unterminated placeholder in template: " + text_);
            auto name = text_.substr(i + 1, close - i - 1);
            if (std::find(placeholders_.begin(), placeholders_.end(), name) == placeholders_.end()) {
                placeholders_.push_back(name);
            }
            i = close;
        }
    }
}

std::string Template::render(const std::map<std::string, std::string>& vars) const {
    std::string out;
    out.reserve(text_.size());
    for (std::size_t i = 0; i < text_.size(); ++i) {
        const char c = text_[i];
        if (c == '{' && i + 1 < text_.size() && text_[i + 1] == '{') {
            out.push_back('{');
            ++i;
        } else if (c == '}' && i + 1 < text_.size() && text_[i + 1] == '}') {
            out.push_back('}');
            ++i;
        } else if (c == '{') {
            const auto close = text_.find('}', i);
            const auto name = text_.substr(i + 1, close - i - 1);
            const auto it = vars.find(name);
            if (it == vars.end()) throw RenderError("template variable {" + name + "} has no value", '?');
            out += it->second;
            i = close;
        } else {
            out.push_back(c);
        }
    }
    return out;
}

PromptTemplates PromptTemplates::defaults() {
    PromptTemplates t;
    t.diversify = Template(
        "You are helping to build a question-answering dataset about memes. Every question asks which "
        "entity a meme portrays in a particular connotative role: glorified as a hero, vilified as a "
        "villain, or victimised as a victim. Questions can name the role through a synonym.\n"
        "Rewrite the following question in 5 different ways without changing the meaning of the question. "
        "Answer with a numbered list of exactly 5 rewritten questions and nothing else.\n"
        "Question: {question}");
    return t;
}

PromptTemplates PromptTemplates::load_dir(const std::filesystem::path& dir) {
    auto t = defaults();
    const std::pair<const char*, Template PromptTemplates::*> entries[] = {
        {"question", &PromptTemplates::question},
        {"context", &PromptTemplates::context},
        {"options", &PromptTemplates::options},
        {"solution", &PromptTemplates::solution},
        {"answer", &PromptTemplates::answer},
        {"generated", &PromptTemplates::generated},
        {"generic_rationale", &PromptTemplates::generic_rationale},
        {"summarize", &PromptTemplates::summarize},
        {"diversify", &PromptTemplates::diversify},
    };
    for (const auto& [name, member] : entries) {
        const auto path = dir / (std::string(name) + ".txt");
        if (!std::filesystem::exists(path)) continue;
        auto text = read_file(path);
        // Editors add a trailing newline; templates are single values.
        while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
        t.*member = Template(std::move(text));
    }
    return t;
}

std::string option_letter(std::size_t index) {
    if (index < 26) return std::string(1, static_cast<char>('a' + index));
    index -= 26;
    if (index >= 26 * 26) throw PreconditionError("too many options to letter");
    return std::string{static_cast<char>('a' + index / 26), static_cast<char>('a' + index % 26)};
}

std::optional<std::size_t> parse_option_letter(std::string_view letters) {
    const auto lowered = to_lower(letters);
    if (lowered.size() == 1 && lowered[0] >= 'a' && lowered[0] <= 'z') {
        return static_cast<std::size_t>(lowered[0] - 'a');
    }
    if (lowered.size() == 2 && std::all_of(lowered.begin(), lowered.end(), [](char c) { return c >= 'a' && c <= 'z'; })) {
        return 26 + static_cast<std::size_t>(lowered[0] - 'a') * 26 + static_cast<std::size_t>(lowered[1] - 'a');
    }
    return std::nullopt;
}

std::string format_options(const std::vector<std::string>& options) {
    std::string out;
    for (std::size_t i = 0; i < options.size(); ++i) {
        if (i) out += ' ';
        out += "(" + option_letter(i) + ") " + options[i];
    }
    return out;
}

namespace {

std::string require(const std::optional<std::string>& value, Element e, const char* what) {
    if (!value) {
        throw RenderError(std::string("prompt element '") + element_char(e) + "' (" + what + ") has no source",
                          element_char(e));
    }
    return *value;
}

std::map<char, std::string> collect_slots(const std::vector<Element>& elements, const QAInstance& instance,
                                          const PromptContext& ctx) {
    std::map<char, std::string> slots;
    for (auto e : elements) {
        switch (e) {
            case Element::Q: slots['Q'] = instance.question; break;
            case Element::C: slots['C'] = require(ctx.ocr_text, e, "context"); break;
            case Element::M:
                if (instance.options.empty()) throw RenderError("prompt element 'M' has no options", 'M');
                slots['M'] = format_options(instance.options);
                break;
            case Element::L: slots['L'] = require(ctx.lecture, e, "lecture"); break;
            case Element::E: slots['E'] = require(ctx.explanation, e, "explanation"); break;
            case Element::A: {
                if (!ctx.answer_index || *ctx.answer_index >= instance.options.size()) {
                    throw RenderError("prompt element 'A' (answer) has no source", 'A');
                }
                slots['A'] = option_letter(*ctx.answer_index);
                break;
            }
            case Element::G: slots['G'] = require(ctx.generated, e, "generated text"); break;
        }
    }
    return slots;
}

std::string solution_text(const std::vector<Element>& elements, const std::map<char, std::string>& slots) {
    std::vector<std::string> parts;
    for (auto e : elements) {
        if (e == Element::L || e == Element::E) parts.push_back(slots.at(element_char(e)));
    }
    return join(parts, " ");
}

std::string render_lines(const std::vector<Element>& elements, const std::map<char, std::string>& slots,
                         const PromptTemplates& t) {
    std::vector<std::string> lines;
    bool solution_done = false;
    for (auto e : elements) {
        const auto& v = slots.at(element_char(e));
        switch (e) {
            case Element::Q: lines.push_back(t.question.render({{"question", v}})); break;
            case Element::C: lines.push_back(t.context.render({{"context", v}})); break;
            case Element::M: lines.push_back(t.options.render({{"options", v}})); break;
            case Element::L:
            case Element::E:
                if (!solution_done) {
                    lines.push_back(t.solution.render({{"solution", solution_text(elements, slots)}}));
                    solution_done = true;
                }
                break;
            case Element::A: lines.push_back(t.answer.render({{"letter", v}})); break;
            case Element::G: lines.push_back(t.generated.render({{"generated", v}})); break;
        }
    }
    return join(lines, "\n");
}

}  // namespace

RenderedPrompt render(const PromptStage& stage, const QAInstance& instance, const PromptContext& context,
                      const PromptTemplates& templates) {
    RenderedPrompt out;
    out.slots = collect_slots(stage.inputs, instance, context);
    out.text = render_lines(stage.inputs, out.slots, templates);
    return out;
}

std::string render_from_slots(const PromptStage& stage, const std::map<char, std::string>& slots,
                              const PromptTemplates& templates) {
    for (auto e : stage.inputs) {
        if (!slots.count(element_char(e))) {
            throw RenderError(std::string("slot '") + element_char(e) + "' missing", element_char(e));
        }
    }
    return render_lines(stage.inputs, slots, templates);
}

std::string render_target(const PromptStage& stage, const QAInstance& instance, const PromptContext& context,
                          const PromptTemplates& templates) {
    const auto slots = collect_slots(stage.outputs, instance, context);
    return render_lines(stage.outputs, slots, templates);
}

namespace {

bool is_word_char(char c) {
    const auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) || u >= 0x80;
}

bool contains_phrase(const std::string& haystack, const std::string& needle) {
    if (needle.empty()) return false;
    std::size_t pos = haystack.find(needle);
    while (pos != std::string::npos) {
        const bool left = pos == 0 || !is_word_char(haystack[pos - 1]) || !is_word_char(needle.front());
        const std::size_t end = pos + needle.size();
        const bool right = end >= haystack.size() || !is_word_char(haystack[end]) || !is_word_char(needle.back());
        if (left && right) return true;
        pos = haystack.find(needle, pos + 1);
    }
    return false;
}

}  // namespace

ParsedAnswer parse_answer(std::string_view raw, const std::vector<std::string>& options) {
    if (options.empty()) throw PreconditionError("parse_answer needs a non-empty option list");
    const std::string text(raw);

    static const std::regex answer_is(R"(answer\s+is\s*:?\s*\(\s*([A-Za-z]{1,2})\s*\))", std::regex::icase);
    std::smatch m;
    if (std::regex_search(text, m, answer_is)) {
        const auto idx = parse_option_letter(m[1].str());
        if (idx && *idx < options.size()) return {idx, AnswerTier::answer_is};
    }

    static const std::regex leading(R"(^\s*(?:\(\s*([A-Za-z]{1,2})\s*\)|([A-Za-z]{1,2})\s*[).:](?:\s|$)|([A-Za-z]{1,2})\s*$))");
    if (std::regex_search(text, m, leading)) {
        std::string letters;
        for (int g = 1; g <= 3; ++g) {
            if (m[g].matched) letters = m[g].str();
        }
        const auto idx = parse_option_letter(letters);
        if (idx && *idx < options.size()) return {idx, AnswerTier::leading_letter};
    }

    const auto hay = normalize_name(text);
    std::vector<std::size_t> hits;
    for (std::size_t i = 0; i < options.size(); ++i) {
        if (contains_phrase(hay, normalize_name(options[i]))) hits.push_back(i);
    }
    if (hits.empty()) return {};
    std::size_t best = hits.front();
    for (auto i : hits) {
        if (normalize_name(options[i]).size() > normalize_name(options[best]).size()) best = i;
    }
    const auto best_key = normalize_name(options[best]);
    for (auto i : hits) {
        if (i == best) continue;
        const auto key = normalize_name(options[i]);
        // A shorter hit inside the winning option is the same mention; anything else is a tie.
        if (key.size() == best_key.size() || !contains_phrase(best_key, key)) return {};
    }
    return {best, AnswerTier::option_text};
}

}  // namespace memeqa
