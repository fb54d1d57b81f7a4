#include "memeqa/diversify.hpp"

#include <mutex>
#include <regex>
#include <sstream>

#include "memeqa/errors.hpp"
#include "memeqa/parallel.hpp"
#include "memeqa/text.hpp"

namespace memeqa {

std::vector<std::string> parse_variants(std::string_view raw) {
    static const std::regex item(R"(^\s*(?:\d{1,2}\s*[.)]|[-*])\s*(.+?)\s*$)");
    std::vector<std::string> out;
    std::istringstream in{std::string(raw)};
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto bullet = line.find("\u2022");
        if (bullet != std::string::npos && trim(line.substr(0, bullet)).empty()) line.replace(bullet, 3, "-");
        std::smatch m;
        std::string text;
        if (std::regex_match(line, m, item)) {
            text = m[1].str();
        } else {
            continue;
        }
        if (text.size() >= 2 && (text.front() == '"' || text.front() == '\'') && text.back() == text.front()) {
            text = text.substr(1, text.size() - 2);
        }
        text = trim(text);
        if (!text.empty()) out.push_back(std::move(text));
    }
    return out;
}

RephrasingBatch rephrase_question(const std::string& question, Backend& backend, std::uint64_t rng_seed,
                                  const PromptTemplates& templates, const DiversifyOptions& options) {
    if (trim(question).empty()) throw PreconditionError("cannot rephrase an empty question");

    BackendRequest req;
    req.kind = BackendKind::text_gen;
    req.prompt = templates.diversify.render({{"question", question}});
    req.params.max_tokens = options.max_tokens;
    req.params.temperature = options.temperature;

    std::string raw;
    for (int attempt = 0; attempt < 2; ++attempt) {
        if (attempt == 1) req.params.temperature = options.temperature + options.retry_temperature_bump;
        raw = backend.generate(req).text;
        auto variants = parse_variants(raw);
        if (variants.size() >= kRephrasingCount) {
            variants.resize(kRephrasingCount);
            RephrasingBatch batch;
            batch.original_question = question;
            batch.variants = std::move(variants);
            batch.chosen_index = Rng(rng_seed).index(kRephrasingCount);
            batch.backend_id = backend.id();
            return batch;
        }
    }
    throw DiversificationFailed("backend " + backend.id() + " returned fewer than 5 rephrasings for: " + question,
                                raw);
}

DiversifyResult diversify_corpus(const std::vector<QAInstance>& instances, Backend& backend, std::uint64_t rng_seed,
                                 double fraction, const PromptTemplates& templates, const DiversifyOptions& options) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw PreconditionError("fraction must lie in [0, 1]");

    DiversifyResult result;
    result.instances = instances;

    std::vector<std::size_t> selected;
    std::vector<std::uint64_t> seeds(instances.size());
    for (std::size_t i = 0; i < instances.size(); ++i) {
        Rng rng(derive_seed(rng_seed, {instances[i].instance_id, "diversify"}));
        if (rng.unit() < fraction) selected.push_back(i);
        seeds[i] = rng.engine()();
    }
    result.summary.selected = selected.size();

    std::vector<std::optional<RephrasingBatch>> batches(selected.size());
    std::vector<std::string> errors(selected.size());
    parallel_for(selected.size(), options.max_in_flight, [&](std::size_t k) {
        const auto i = selected[k];
        try {
            batches[k] = rephrase_question(instances[i].question, backend, seeds[i], templates, options);
        } catch (const DiversificationFailed& e) {
            errors[k] = e.what();
        } catch (const BackendError& e) {
            errors[k] = e.what();
        }
    });

    for (std::size_t k = 0; k < selected.size(); ++k) {
        auto& q = result.instances[selected[k]];
        if (!batches[k]) {
            result.summary.failures.emplace_back(q.instance_id, errors[k]);
            continue;
        }
        q.question = batches[k]->chosen();
        q.provenance.diversified = true;
        result.batches.push_back(std::move(*batches[k]));
        ++result.summary.diversified;
    }
    return result;
}

}  // namespace memeqa
