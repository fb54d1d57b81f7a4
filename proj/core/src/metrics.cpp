#include "memeqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "memeqa/errors.hpp"
#include "memeqa/parallel.hpp"
#include "memeqa/stemmer.hpp"
#include "memeqa/text.hpp"

namespace memeqa::metrics {

using nlohmann::json;

double accuracy(const std::vector<std::optional<std::size_t>>& predictions, const std::vector<std::size_t>& golds) {
    if (predictions.size() != golds.size()) throw PreconditionError("accuracy: predictions and golds differ in length");
    if (golds.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) hits += predictions[i] && *predictions[i] == golds[i];
    return static_cast<double>(hits) / static_cast<double>(golds.size());
}

namespace {

using Tokens = std::vector<std::string>;

std::map<Tokens, std::size_t> ngram_counts(const Tokens& t, std::size_t n) {
    std::map<Tokens, std::size_t> out;
    if (t.size() < n) return out;
    for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Tokens(t.begin() + i, t.begin() + i + n)];
    return out;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double f_beta(double p, double r, double beta) {
    const double b2 = beta * beta;
    const double denom = b2 * p + r;
    return denom > 0.0 ? (1.0 + b2) * p * r / denom : 0.0;
}

}  // namespace

BleuResult bleu_detail(std::string_view hyp, std::string_view ref, int n) {
    if (n < 1 || n > 4) throw PreconditionError("bleu order must lie in 1..4");
    const auto h = tokenize(hyp);
    const auto r = tokenize(ref);
    BleuResult out;
    if (h.empty()) {
        out.empty_hypothesis = true;
        return out;
    }
    double log_sum = 0.0;
    for (std::size_t k = 1; k <= static_cast<std::size_t>(n); ++k) {
        const std::size_t total = h.size() >= k ? h.size() - k + 1 : 0;
        const std::size_t ref_total = r.size() >= k ? r.size() - k + 1 : 0;
        if (total == 0 && ref_total == 0) continue;
        const auto hc = ngram_counts(h, k);
        const auto rc = ngram_counts(r, k);
        std::size_t matched = 0;
        for (const auto& [gram, count] : hc) {
            const auto it = rc.find(gram);
            if (it != rc.end()) matched += std::min(count, it->second);
        }
        const double p = matched > 0 ? static_cast<double>(matched) / static_cast<double>(total)
                                     : kBleuEpsilon / static_cast<double>(std::max<std::size_t>(total, 1));
        out.precisions.push_back(p);
        log_sum += std::log(p);
    }
    const double c = static_cast<double>(h.size());
    const double rl = static_cast<double>(r.size());
    out.brevity_penalty = c > rl ? 1.0 : std::exp(1.0 - rl / c);
    out.score = out.brevity_penalty * std::exp(log_sum / static_cast<double>(out.precisions.size()));
    return out;
}

double bleu(std::string_view hyp, std::string_view ref, int n) { return bleu_detail(hyp, ref, n).score; }

PRF rouge_l_detail(std::string_view hyp, std::string_view ref) {
    const auto h = tokenize(hyp);
    const auto r = tokenize(ref);
    PRF out;
    if (h.empty() || r.empty()) return out;
    const double lcs = static_cast<double>(lcs_length(h, r));
    out.precision = lcs / static_cast<double>(h.size());
    out.recall = lcs / static_cast<double>(r.size());
    out.f1 = f_beta(out.precision, out.recall, 1.0);
    return out;
}

double rouge_l(std::string_view hyp, std::string_view ref) { return rouge_l_detail(hyp, ref).f1; }

MeteorResult meteor_detail(std::string_view hyp, std::string_view ref) {
    const auto h = tokenize(hyp);
    const auto r = tokenize(ref);
    MeteorResult out;
    if (h.empty() || r.empty()) return out;

    std::vector<int> to_ref(h.size(), -1);
    std::vector<bool> ref_used(r.size(), false);
    auto stage = [&](auto&& key) {
        std::vector<std::string> hk(h.size()), rk(r.size());
        for (std::size_t i = 0; i < h.size(); ++i) hk[i] = key(h[i]);
        for (std::size_t j = 0; j < r.size(); ++j) rk[j] = key(r[j]);
        for (std::size_t i = 0; i < h.size(); ++i) {
            if (to_ref[i] >= 0) continue;
            for (std::size_t j = 0; j < r.size(); ++j) {
                if (!ref_used[j] && hk[i] == rk[j]) {
                    to_ref[i] = static_cast<int>(j);
                    ref_used[j] = true;
                    break;
                }
            }
        }
    };
    stage([](const std::string& t) { return t; });
    stage([](const std::string& t) { return porter_stem(t); });

    int last_h = -2, last_r = -2;
    for (std::size_t i = 0; i < h.size(); ++i) {
        if (to_ref[i] < 0) continue;
        ++out.matches;
        if (static_cast<int>(i) != last_h + 1 || to_ref[i] != last_r + 1) ++out.chunks;
        last_h = static_cast<int>(i);
        last_r = to_ref[i];
    }
    if (out.matches == 0) return out;

    const double m = static_cast<double>(out.matches);
    out.precision = m / static_cast<double>(h.size());
    out.recall = m / static_cast<double>(r.size());
    out.fmean = 10.0 * out.precision * out.recall / (out.recall + 9.0 * out.precision);
    out.penalty = 0.5 * std::pow(static_cast<double>(out.chunks) / m, 3.0);
    out.score = out.fmean * (1.0 - out.penalty);
    return out;
}

double meteor(std::string_view hyp, std::string_view ref) { return meteor_detail(hyp, ref).score; }

ChrfResult chrf(std::string_view hyp, std::string_view ref, int max_n, double beta) {
    if (max_n < 1) throw PreconditionError("chrf order must be positive");
    const auto h = utf8_decode(hyp);
    const auto r = utf8_decode(ref);
    auto counts = [](const std::u32string& s, std::size_t n) {
        std::map<std::u32string, std::size_t> out;
        for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[s.substr(i, n)];
        return out;
    };
    double p_sum = 0.0, r_sum = 0.0;
    int orders = 0;
    for (std::size_t n = 1; n <= static_cast<std::size_t>(max_n); ++n) {
        const std::size_t ht = h.size() >= n ? h.size() - n + 1 : 0;
        const std::size_t rt = r.size() >= n ? r.size() - n + 1 : 0;
        if (ht == 0 && rt == 0) continue;
        const auto hc = counts(h, n);
        const auto rc = counts(r, n);
        std::size_t matched = 0;
        for (const auto& [gram, c] : hc) {
            const auto it = rc.find(gram);
            if (it != rc.end()) matched += std::min(c, it->second);
        }
        p_sum += ht ? static_cast<double>(matched) / static_cast<double>(ht) : 0.0;
        r_sum += rt ? static_cast<double>(matched) / static_cast<double>(rt) : 0.0;
        ++orders;
    }
    ChrfResult out;
    if (orders == 0) return out;
    out.precision = p_sum / orders;
    out.recall = r_sum / orders;
    out.score = f_beta(out.precision, out.recall, beta);
    out.score100 = 100.0 * out.score;
    return out;
}

PRF bertscore_from_vectors(const TokenVectors& hyp, const TokenVectors& ref) {
    PRF out;
    if (hyp.empty() || ref.empty()) return out;
    auto unit = [](const std::vector<double>& v) {
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        std::vector<double> u(v);
        if (n > 0.0)
            for (auto& x : u) x /= n;
        return u;
    };
    std::vector<std::vector<double>> hu, ru;
    for (const auto& v : hyp) hu.push_back(unit(v));
    for (const auto& v : ref) ru.push_back(unit(v));
    std::vector<double> best_h(hu.size(), -1.0), best_r(ru.size(), -1.0);
    for (std::size_t i = 0; i < hu.size(); ++i) {
        for (std::size_t j = 0; j < ru.size(); ++j) {
            if (hu[i].size() != ru[j].size()) throw ProtocolError("bertscore: embedding dimensions differ");
            const double c = std::inner_product(hu[i].begin(), hu[i].end(), ru[j].begin(), 0.0);
            best_h[i] = std::max(best_h[i], c);
            best_r[j] = std::max(best_r[j], c);
        }
    }
    out.precision = std::accumulate(best_h.begin(), best_h.end(), 0.0) / static_cast<double>(best_h.size());
    out.recall = std::accumulate(best_r.begin(), best_r.end(), 0.0) / static_cast<double>(best_r.size());
    out.f1 = (out.precision + out.recall) > 0.0 ? 2.0 * out.precision * out.recall / (out.precision + out.recall) : 0.0;
    return out;
}

std::optional<PRF> bertscore(std::string_view hyp, std::string_view ref, Backend* embedder) {
    if (!embedder) return std::nullopt;
    const auto vecs = embedder->embed({std::string(hyp), std::string(ref)});
    return bertscore_from_vectors(vecs.at(0), vecs.at(1));
}

template <typename T>
EditCounts align(const std::vector<T>& hyp, const std::vector<T>& ref) {
    // Cell: (cost, hits); lower cost wins, ties prefer more hits.
    struct Cell {
        std::size_t cost;
        std::size_t hits;
    };
    auto better = [](const Cell& a, const Cell& b) { return a.cost < b.cost || (a.cost == b.cost && a.hits > b.hits); };
    const std::size_t n = ref.size(), m = hyp.size();
    std::vector<Cell> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = {j, 0};
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = {i, 0};
        for (std::size_t j = 1; j <= m; ++j) {
            const bool same = ref[i - 1] == hyp[j - 1];
            Cell best{prev[j - 1].cost + (same ? 0 : 1), prev[j - 1].hits + (same ? 1 : 0)};
            const Cell del{prev[j].cost + 1, prev[j].hits};
            const Cell ins{cur[j - 1].cost + 1, cur[j - 1].hits};
            if (better(del, best)) best = del;
            if (better(ins, best)) best = ins;
            cur[j] = best;
        }
        std::swap(prev, cur);
    }
    const auto [cost, hits] = prev[m];
    // H+S+D = n, H+S+I = m, S+D+I = cost.
    EditCounts e;
    e.hits = hits;
    e.insertions = cost - (n - hits);
    e.deletions = cost - (m - hits);
    e.substitutions = n - hits - e.deletions;
    return e;
}

template EditCounts align<std::string>(const std::vector<std::string>&, const std::vector<std::string>&);
template EditCounts align<char32_t>(const std::vector<char32_t>&, const std::vector<char32_t>&);

EditCounts word_edit_counts(std::string_view hyp, std::string_view ref) { return align(tokenize(hyp), tokenize(ref)); }

EditCounts char_edit_counts(std::string_view hyp, std::string_view ref) {
    const auto h = normalize_chars(hyp);
    const auto r = normalize_chars(ref);
    return align(std::vector<char32_t>(h.begin(), h.end()), std::vector<char32_t>(r.begin(), r.end()));
}

ErrorRates error_rates(std::string_view hyp, std::string_view ref) {
    ErrorRates out;
    out.words = word_edit_counts(hyp, ref);
    out.chars = char_edit_counts(hyp, ref);
    const auto& w = out.words;
    if (w.ref_length() > 0) {
        const double n = static_cast<double>(w.ref_length());
        const double m = static_cast<double>(w.hyp_length());
        const double hits = static_cast<double>(w.hits);
        out.wer = static_cast<double>(w.errors()) / n;
        out.mer = static_cast<double>(w.errors()) / static_cast<double>(w.ref_length() + w.insertions);
        out.wip = m > 0 ? (hits / n) * (hits / m) : 0.0;
        out.wil = 1.0 - *out.wip;
    }
    if (out.chars.ref_length() > 0) {
        out.cer = static_cast<double>(out.chars.errors()) / static_cast<double>(out.chars.ref_length());
    }
    return out;
}

const std::vector<std::string>& generation_metric_names() {
    static const std::vector<std::string> names{"BLEU-1", "BLEU-4", "ROUGE-L", "METEOR", "CHRF", "BERTScore"};
    return names;
}

const std::vector<std::string>& error_metric_names() {
    static const std::vector<std::string> names{"WER", "MER", "WIL", "WIP", "CER"};
    return names;
}

Aggregate aggregate(const std::vector<std::optional<double>>& values) {
    Aggregate a;
    double sum = 0.0;
    for (const auto& v : values)
        if (v) {
            sum += *v;
            ++a.count;
        }
    if (a.count == 0) return a;
    const double mean = sum / static_cast<double>(a.count);
    a.mean = mean;
    if (a.count > 1) {
        double ss = 0.0;
        for (const auto& v : values)
            if (v) ss += (*v - mean) * (*v - mean);
        a.std = std::sqrt(ss / static_cast<double>(a.count - 1));
    } else {
        a.std = 0.0;
    }
    return a;
}

MetricReport evaluate(const std::vector<PipelineTrace>& traces, const std::vector<QAInstance>& corpus,
                      const EvalOptions& options) {
    std::map<std::string, const PipelineTrace*> by_id;
    for (const auto& t : traces) by_id[t.instance_id] = &t;

    MetricReport report;
    report.instances = corpus.size();
    report.per_instance.resize(corpus.size());

    parallel_for(corpus.size(), options.parallelism, [&](std::size_t i) {
        const auto& q = corpus[i];
        auto& s = report.per_instance[i];
        s.instance_id = q.instance_id;
        s.gold = q.correct_index;
        const auto it = by_id.find(q.instance_id);
        std::vector<std::string> all = generation_metric_names();
        all.push_back("CHRF_100");
        for (const auto& e : error_metric_names()) all.push_back(e);
        for (const auto& name : all) s.values[name] = std::nullopt;
        if (it == by_id.end()) return;

        const auto& t = *it->second;
        s.predicted = t.predicted.index;
        s.correct = s.predicted && *s.predicted == q.correct_index;
        if (trim(q.gold_explanation).empty()) return;

        const auto& hyp = t.explanation;
        const auto& ref = q.gold_explanation;
        s.values["BLEU-1"] = bleu(hyp, ref, 1);
        s.values["BLEU-4"] = bleu(hyp, ref, 4);
        s.values["ROUGE-L"] = rouge_l(hyp, ref);
        s.values["METEOR"] = meteor(hyp, ref);
        const auto c = chrf(hyp, ref);
        s.values["CHRF"] = c.score;
        s.values["CHRF_100"] = c.score100;
        if (const auto b = bertscore(hyp, ref, options.embedder)) s.values["BERTScore"] = b->f1;
        const auto er = error_rates(hyp, ref);
        s.values["WER"] = er.wer;
        s.values["MER"] = er.mer;
        s.values["WIL"] = er.wil;
        s.values["WIP"] = er.wip;
        s.values["CER"] = er.cer;
    });

    std::vector<std::optional<std::size_t>> predictions;
    std::vector<std::size_t> golds;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& s = report.per_instance[i];
        predictions.push_back(s.predicted);
        golds.push_back(s.gold);
        const auto it = by_id.find(s.instance_id);
        if (it == by_id.end()) {
            ++report.missing_traces;
            continue;
        }
        if (it->second->predicted.unparsed()) ++report.unparsed;
        if (!it->second->ok()) ++report.failed_traces;
    }
    report.accuracy = accuracy(predictions, golds);

    if (!report.per_instance.empty()) {
        for (const auto& [name, _] : report.per_instance.front().values) {
            std::vector<std::optional<double>> column;
            for (const auto& s : report.per_instance) column.push_back(s.values.at(name));
            report.aggregates[name] = aggregate(column);
        }
    }

    report.notes.push_back("hypothesis = trace explanation, reference = gold explanation");
    report.notes.push_back("METEOR: exact and Porter-stem matching only, no synonym stage");
    report.notes.push_back("CHRF: n=1..6, beta=2, whitespace kept; CHRF on 0-1, CHRF_100 on 0-100");
    report.notes.push_back("BLEU: add-epsilon smoothing (1e-9) on zero match counts");
    if (!options.embedder) report.notes.push_back("BERTScore: N/A (no embedding backend configured)");
    return report;
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json report_to_json(const MetricReport& r) {
    json aggregates = json::object();
    for (const auto& [name, a] : r.aggregates) {
        aggregates[name] = {{"mean", opt(a.mean)}, {"std", opt(a.std)}, {"count", a.count}};
    }
    json per = json::array();
    for (const auto& s : r.per_instance) {
        json values = json::object();
        for (const auto& [k, v] : s.values) values[k] = opt(v);
        per.push_back({{"instance_id", s.instance_id},
                       {"predicted", s.predicted ? json(*s.predicted) : json(nullptr)},
                       {"gold", s.gold},
                       {"correct", s.correct},
                       {"metrics", values}});
    }
    auto columns = json::array({"Accuracy"});
    for (const auto& n : generation_metric_names()) columns.push_back(n);
    for (const auto& n : error_metric_names()) columns.push_back(n);
    return {{"schema", kReportSchema},
            {"accuracy", r.accuracy},
            {"instances", r.instances},
            {"unparsed", r.unparsed},
            {"missing_traces", r.missing_traces},
            {"failed_traces", r.failed_traces},
            {"columns", columns},
            {"aggregates", aggregates},
            {"per_instance", per},
            {"notes", r.notes}};
}

std::string report_to_csv(const MetricReport& r) {
    std::vector<std::string> header{"Accuracy"};
    for (const auto& n : generation_metric_names()) header.push_back(n);
    for (const auto& n : error_metric_names()) header.push_back(n);

    auto fmt = [](std::optional<double> v) {
        if (!v) return std::string("N/A");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", *v);
        return std::string(buf);
    };
    std::vector<std::string> row{fmt(r.accuracy)};
    for (std::size_t i = 1; i < header.size(); ++i) {
        const auto it = r.aggregates.find(header[i]);
        row.push_back(fmt(it == r.aggregates.end() ? std::nullopt : it->second.mean));
    }
    return join(header, ",") + "\n" + join(row, ",") + "\n";
}

}  // namespace memeqa::metrics
