#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <sstream>

#include "memeqa/errors.hpp"
#include "memeqa/metrics.hpp"
#include "memeqa/text.hpp"
#include "oracles.hpp"

using namespace memeqa;
using namespace memeqa::metrics;

namespace {

constexpr double kTol = 1e-6;

}  // namespace

// ---- hand-computed pairs ----

TEST(Bleu, ClippedUnigramPrecision) {
    // "the" x7 against a reference holding it twice: 2/7, no brevity penalty (7 > 6).
    EXPECT_NEAR(bleu("the the the the the the the", "the cat is on the mat", 1), 2.0 / 7.0, kTol);
}

TEST(Bleu, IdenticalIsOne) {
    EXPECT_NEAR(bleu("the cat sat on the mat", "the cat sat on the mat", 4), 1.0, kTol);
}

TEST(Bleu, BrevityPenalty) {
    const auto r = bleu_detail("the cat", "the cat sat on the mat", 1);
    EXPECT_NEAR(r.brevity_penalty, std::exp(-2.0), kTol);
    EXPECT_NEAR(r.score, std::exp(-2.0), kTol);
}

TEST(Bleu, ZeroOrderSmoothedNotSkipped) {
    const auto r = bleu_detail("the cat", "the cat sat on the mat", 4);
    ASSERT_EQ(r.precisions.size(), 4u);
    EXPECT_DOUBLE_EQ(r.precisions[2], kBleuEpsilon);
    EXPECT_NEAR(r.score, std::exp(-2.0) * std::sqrt(kBleuEpsilon), 1e-12);
}

TEST(Bleu, OrdersAbsentOnBothSidesSkipped) {
    const auto r = bleu_detail("hello world", "hello world", 4);
    EXPECT_EQ(r.precisions.size(), 2u);
    EXPECT_NEAR(r.score, 1.0, kTol);
}

TEST(Bleu, EmptyHypothesis) {
    const auto r = bleu_detail("", "the cat", 4);
    EXPECT_TRUE(r.empty_hypothesis);
    EXPECT_EQ(r.score, 0.0);
    EXPECT_THROW(bleu("a", "a", 5), PreconditionError);
}

TEST(RougeL, WorkedExamples) {
    EXPECT_NEAR(rouge_l("police killed the gunman", "police kill the gunman"), 0.75, kTol);
    EXPECT_NEAR(rouge_l("the gunman kill police", "police kill the gunman"), 0.5, kTol);
    const auto d = rouge_l_detail("a b", "a b c d");
    EXPECT_NEAR(d.precision, 1.0, kTol);
    EXPECT_NEAR(d.recall, 0.5, kTol);
    EXPECT_NEAR(d.f1, 2.0 / 3.0, kTol);
    EXPECT_EQ(rouge_l("", "a"), 0.0);
}

TEST(Meteor, Identical) {
    const auto m = meteor_detail("the cat sat on the mat", "the cat sat on the mat");
    EXPECT_EQ(m.chunks, 1u);
    EXPECT_NEAR(m.score, 1.0 - 0.5 / 216.0, kTol);
}

TEST(Meteor, ScrambledOrderMaxFragmentation) {
    const auto m = meteor_detail("the cat sat on the mat", "on the mat sat the cat");
    EXPECT_EQ(m.matches, 6u);
    EXPECT_EQ(m.chunks, 6u);
    EXPECT_NEAR(m.score, 0.5, kTol);
}

TEST(Meteor, StemStage) {
    const auto m = meteor_detail("the cats running", "the cat runs");
    EXPECT_EQ(m.matches, 3u);
    EXPECT_EQ(m.chunks, 1u);
    EXPECT_NEAR(m.score, 1.0 - 0.5 / 27.0, kTol);
}

TEST(Meteor, PartialMatchFmean) {
    // m = 2, P = 2/3, R = 2/4, one chunk.
    const auto m = meteor_detail("a b x", "a b c d");
    const double p = 2.0 / 3.0, r = 0.5;
    const double fmean = 10 * p * r / (r + 9 * p);
    EXPECT_NEAR(m.fmean, fmean, kTol);
    EXPECT_NEAR(m.score, fmean * (1 - 0.5 * std::pow(0.5, 3)), kTol);
    EXPECT_EQ(meteor("x", "y"), 0.0);
}

TEST(Chrf, WorkedExamples) {
    EXPECT_NEAR(chrf("ab", "ab").score, 1.0, kTol);
    EXPECT_NEAR(chrf("ab", "ac").score, 0.25, kTol);
    EXPECT_NEAR(chrf("a", "ab").score, 0.625 / 2.25, kTol);
    EXPECT_NEAR(chrf("ab", "ac").score100, 25.0, kTol);
    EXPECT_LT(chrf("ab", "AB").score, 1.0);  // case kept
    EXPECT_EQ(chrf("", "").score, 0.0);
}

TEST(ErrorRates, SubstitutionAndInsertion) {
    const auto e = error_rates("a x c d e", "a b c d");
    EXPECT_EQ(e.words, (EditCounts{3, 1, 0, 1}));
    EXPECT_NEAR(*e.wer, 0.5, kTol);
    EXPECT_NEAR(*e.mer, 0.4, kTol);
    EXPECT_NEAR(*e.wip, 0.45, kTol);
    EXPECT_NEAR(*e.wil, 0.55, kTol);
}

TEST(ErrorRates, TiePrefersHits) {
    const auto e = error_rates("b a", "a b");
    EXPECT_EQ(e.words, (EditCounts{1, 0, 1, 1}));
    EXPECT_NEAR(*e.wer, 1.0, kTol);
    EXPECT_NEAR(*e.mer, 2.0 / 3.0, kTol);
    EXPECT_NEAR(*e.wip, 0.25, kTol);
}

TEST(ErrorRates, CharacterLevel) {
    EXPECT_NEAR(*error_rates("Hello  World", "hello world").cer, 0.0, kTol);
    EXPECT_NEAR(*error_rates("abc", "abd").cer, 1.0 / 3.0, kTol);
    EXPECT_NEAR(*error_rates("", "abcd").cer, 1.0, kTol);
}

TEST(ErrorRates, EmptyReferenceIsNA) {
    const auto e = error_rates("something", "");
    EXPECT_FALSE(e.wer);
    EXPECT_FALSE(e.mer);
    EXPECT_FALSE(e.wil);
    EXPECT_FALSE(e.wip);
    EXPECT_FALSE(e.cer);
    const auto empty_hyp = error_rates("", "a b");
    EXPECT_NEAR(*empty_hyp.wer, 1.0, kTol);
    EXPECT_NEAR(*empty_hyp.wip, 0.0, kTol);
}

TEST(BertScore, FromVectors) {
    const auto s = bertscore_from_vectors({{1, 0}, {0, 1}}, {{2, 0}});
    EXPECT_NEAR(s.precision, 0.5, kTol);
    EXPECT_NEAR(s.recall, 1.0, kTol);
    EXPECT_NEAR(s.f1, 2.0 / 3.0, kTol);
    EXPECT_THROW(bertscore_from_vectors({{1, 0}}, {{1, 0, 0}}), ProtocolError);
    EXPECT_EQ(bertscore_from_vectors({}, {{1.0}}).f1, 0.0);
}

TEST(BertScore, MockEmbedder) {
    BackendOptions o;
    o.id = "embed";
    o.kind = BackendKind::embed;
    auto e = make_mock_backend(o);
    EXPECT_NEAR(bertscore("the cat sat", "the cat sat", e.get())->f1, 1.0, 1e-12);
    EXPECT_LT(bertscore("the cat sat", "a dog ran", e.get())->f1, 0.9);
    EXPECT_FALSE(bertscore("a", "b", nullptr));
}

TEST(Accuracy, UnparsedIsWrong) {
    EXPECT_NEAR(accuracy({0, 1, std::nullopt}, {0, 2, 1}), 1.0 / 3.0, kTol);
    EXPECT_EQ(accuracy({}, {}), 0.0);
    EXPECT_THROW(accuracy({0}, {}), PreconditionError);
}

TEST(Aggregate, MeanAndSampleStd) {
    const auto a = aggregate({1.0, 2.0, 3.0, std::nullopt});
    EXPECT_EQ(a.count, 3u);
    EXPECT_NEAR(*a.mean, 2.0, kTol);
    EXPECT_NEAR(*a.std, 1.0, kTol);
    EXPECT_FALSE(aggregate({std::nullopt}).mean);
}

TEST(HandCases, AllMatch) {
    ASSERT_GE(oracles::hand_cases().size(), 12u);
    for (const auto& c : oracles::hand_cases()) {
        EXPECT_NEAR(oracles::evaluate_case(c), c.expected, kTol) << oracles::metric_name(c.metric) << ": " << c.derivation;
    }
}

// ---- property tests against the oracles ----

TEST(MetricProperties, BleuMatchesOracle) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 1500; ++i) {
        const auto h = oracles::random_sentence(rng, 9, 5), r = oracles::random_sentence(rng, 9, 5);
        for (int n : {1, 2, 4}) {
            const double v = bleu(h, r, n);
            EXPECT_NEAR(v, oracles::bleu(tokenize(h), tokenize(r), n), 1e-9) << h << " | " << r;
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0 + 1e-12);
        }
    }
}

TEST(MetricProperties, RougeMatchesOracle) {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 1500; ++i) {
        const auto h = oracles::random_sentence(rng, 8, 4), r = oracles::random_sentence(rng, 8, 4);
        const auto ht = tokenize(h), rt = tokenize(r);
        const auto d = rouge_l_detail(h, r);
        if (ht.empty() || rt.empty()) {
            EXPECT_EQ(d.f1, 0.0);
            continue;
        }
        const double l = double(oracles::lcs(ht, rt));
        const double p = l / ht.size(), rc = l / rt.size();
        EXPECT_NEAR(d.f1, p + rc > 0 ? 2 * p * rc / (p + rc) : 0.0, 1e-12);
        EXPECT_NEAR(rouge_l(h, r), rouge_l(r, h), 1e-12);
    }
}

TEST(MetricProperties, AlignmentMatchesExhaustiveSearch) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 1200; ++i) {
        const auto h = tokenize(oracles::random_sentence(rng, 6, 3)), r = tokenize(oracles::random_sentence(rng, 6, 3));
        const auto e = align(h, r);
        const auto o = oracles::align(h, r);
        EXPECT_EQ(e.hits, o.hits);
        EXPECT_EQ(e.errors(), o.cost);
        EXPECT_EQ(e.ref_length(), r.size());
        EXPECT_EQ(e.hyp_length(), h.size());
        if (!r.empty()) {
            const auto rates = error_rates(join(h, " "), join(r, " "));
            EXPECT_NEAR(*rates.wer, double(o.cost) / r.size(), 1e-12);
            EXPECT_GE(*rates.wip, 0.0);
            EXPECT_LE(*rates.wip, 1.0);
            EXPECT_LE(*rates.mer, 1.0);
            EXPECT_NEAR(*rates.wil + *rates.wip, 1.0, 1e-12);
        }
    }
}

TEST(MetricProperties, ChrfMatchesOracle) {
    std::mt19937_64 rng(4);
    for (int i = 0; i < 1200; ++i) {
        const auto h = oracles::random_sentence(rng, 6, 4), r = oracles::random_sentence(rng, 6, 4);
        const auto c = chrf(h, r);
        EXPECT_NEAR(c.score, oracles::chrf(h, r), 1e-12) << h << " | " << r;
        EXPECT_NEAR(c.score100, 100 * c.score, 1e-9);
    }
}

TEST(MetricProperties, MeteorBoundsAndIdentity) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 1200; ++i) {
        const auto h = oracles::random_sentence(rng, 8, 5), r = oracles::random_sentence(rng, 8, 5);
        const auto m = meteor_detail(h, r);
        EXPECT_GE(m.score, 0.0);
        EXPECT_LE(m.score, 1.0);
        EXPECT_LE(m.chunks, m.matches);
        EXPECT_LE(m.matches, std::min(tokenize(h).size(), tokenize(r).size()));
        const auto n = tokenize(h).size();
        if (n) EXPECT_NEAR(meteor(h, h), 1.0 - 0.5 / double(n * n * n), 1e-12);
    }
}

// ---- corpus-level evaluation ----

namespace {

PipelineTrace trace(const std::string& id, std::optional<std::size_t> pred, const std::string& expl) {
    PipelineTrace t;
    t.instance_id = id;
    t.predicted.index = pred;
    t.explanation = expl;
    return t;
}

QAInstance gold(const std::string& id, std::size_t idx, const std::string& expl) {
    QAInstance q;
    q.instance_id = id;
    q.correct_index = idx;
    q.gold_explanation = expl;
    q.options = {"a", "b", "c"};
    return q;
}

}  // namespace

TEST(Evaluate, AccuracyMissingAndEmptyGold) {
    const std::vector<QAInstance> corpus{gold("q1", 0, "the cat sat on the mat"), gold("q2", 1, "x y"),
                                         gold("q3", 2, ""), gold("q4", 0, "never run")};
    const std::vector<PipelineTrace> traces{trace("q1", 0, "the cat sat on the mat"), trace("q2", std::nullopt, "z"),
                                            trace("q3", 2, "anything")};
    const auto r = evaluate(traces, corpus);
    EXPECT_NEAR(r.accuracy, 0.5, kTol);
    EXPECT_EQ(r.missing_traces, 1u);
    EXPECT_EQ(r.unparsed, 1u);
    EXPECT_NEAR(*r.per_instance[0].values.at("BLEU-4"), 1.0, kTol);
    for (const auto& [name, v] : r.per_instance[2].values) EXPECT_FALSE(v) << name;
    for (const auto& [name, v] : r.per_instance[3].values) EXPECT_FALSE(v) << name;
    EXPECT_FALSE(r.per_instance[0].values.at("BERTScore"));
    EXPECT_EQ(r.aggregates.at("BLEU-1").count, 2u);
    EXPECT_NEAR(*r.aggregates.at("WER").mean, (0.0 + 1.0) / 2.0, kTol);
}

TEST(Evaluate, ParallelMatchesSerial) {
    std::vector<QAInstance> corpus;
    std::vector<PipelineTrace> traces;
    std::mt19937_64 rng(6);
    for (int i = 0; i < 50; ++i) {
        const auto id = "q" + std::to_string(i);
        corpus.push_back(gold(id, i % 3, oracles::random_sentence(rng, 10, 6)));
        traces.push_back(trace(id, (i * 7) % 3, oracles::random_sentence(rng, 10, 6)));
    }
    EvalOptions par;
    par.parallelism = 8;
    EXPECT_EQ(report_to_json(evaluate(traces, corpus)), report_to_json(evaluate(traces, corpus, par)));
}

TEST(Report, CsvColumnsAndNA) {
    const auto r = evaluate({trace("q1", 0, "a b")}, {gold("q1", 0, "a b")});
    const auto csv = report_to_csv(r);
    std::istringstream in(csv);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    EXPECT_EQ(header, "Accuracy,BLEU-1,BLEU-4,ROUGE-L,METEOR,CHRF,BERTScore,WER,MER,WIL,WIP,CER");
    EXPECT_EQ(row.rfind("1.0000,1.0000,1.0000,1.0000,", 0), 0u) << row;
    EXPECT_NE(row.find(",N/A,0.0000,"), std::string::npos) << row;

    const auto j = report_to_json(r);
    EXPECT_EQ(j["schema"], kReportSchema);
    EXPECT_EQ(j["columns"].size(), 12u);
    EXPECT_TRUE(j["aggregates"]["BERTScore"]["mean"].is_null());
}

TEST(MetricProperties, DisjointVocabularyFloors) {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 1000; ++i) {
        auto h = oracles::random_sentence(rng, 8, 4);
        auto r = oracles::random_sentence(rng, 8, 4);
        // Shift the reference into letters the hypothesis never uses.
        for (auto& ch : r)
            if (ch != ' ') ch = char(ch + 10);
        if (tokenize(h).empty() || tokenize(r).empty()) continue;
        EXPECT_LE(bleu(h, r, 1), kBleuEpsilon * (1 + 1e-9));
        EXPECT_EQ(rouge_l(h, r), 0.0);
        EXPECT_EQ(meteor(h, r), 0.0);
        const auto e = error_rates(h, r);
        EXPECT_EQ(e.words.hits, 0u);
        EXPECT_NEAR(*e.wip, 0.0, 1e-15);
        EXPECT_NEAR(*e.wil, 1.0, 1e-15);
    }
}

TEST(MetricProperties, IdenticalStringsMaximal) {
    std::mt19937_64 rng(8);
    for (int i = 0; i < 1000; ++i) {
        const auto s = oracles::random_sentence(rng, 10, 6);
        if (tokenize(s).empty()) continue;
        EXPECT_NEAR(bleu(s, s, 1), 1.0, 1e-12);
        EXPECT_NEAR(bleu(s, s, 4), 1.0, 1e-12);
        EXPECT_NEAR(rouge_l(s, s), 1.0, 1e-12);
        EXPECT_NEAR(chrf(s, s).score, 1.0, 1e-12);
        const auto e = error_rates(s, s);
        EXPECT_EQ(*e.wer, 0.0);
        EXPECT_EQ(*e.mer, 0.0);
        EXPECT_EQ(*e.wil, 0.0);
        EXPECT_EQ(*e.wip, 1.0);
        EXPECT_EQ(*e.cer, 0.0);
    }
}
