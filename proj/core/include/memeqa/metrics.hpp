#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "memeqa/backends.hpp"
#include "memeqa/corpus.hpp"
#include "memeqa/pipeline.hpp"

namespace memeqa::metrics {

inline constexpr const char* kReportSchema = "memeqa.report/v1";
inline constexpr double kBleuEpsilon = 1e-9;

// Unparsed predictions are nullopt and always count as wrong.
double accuracy(const std::vector<std::optional<std::size_t>>& predictions, const std::vector<std::size_t>& golds);

struct BleuResult {
    double score = 0.0;
    std::vector<double> precisions;  // per order actually scored
    double brevity_penalty = 0.0;
    bool empty_hypothesis = false;
};

// Clipped modified n-gram precision for orders 1..n, geometric mean, brevity penalty.
// Orders absent from both sides are skipped; zero match counts get add-epsilon smoothing.
BleuResult bleu_detail(std::string_view hyp, std::string_view ref, int n);
double bleu(std::string_view hyp, std::string_view ref, int n);

struct PRF {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// LCS over shared tokens, beta = 1.
PRF rouge_l_detail(std::string_view hyp, std::string_view ref);
double rouge_l(std::string_view hyp, std::string_view ref);

struct MeteorResult {
    double score = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double fmean = 0.0;
    double penalty = 0.0;
    std::size_t matches = 0;
    std::size_t chunks = 0;
};

// Exact then Porter-stem matching, left to right; no synonym stage.
MeteorResult meteor_detail(std::string_view hyp, std::string_view ref);
double meteor(std::string_view hyp, std::string_view ref);

struct ChrfResult {
    double score = 0.0;     // 0..1
    double score100 = 0.0;  // 0..100
    double precision = 0.0;
    double recall = 0.0;
};

// Character n-grams over code points, whitespace kept, case kept. Precision and recall
// are averaged over orders present on either side, then combined as F_beta.
ChrfResult chrf(std::string_view hyp, std::string_view ref, int max_n = 6, double beta = 2.0);

// Greedy max-cosine matching between token vectors of each side.
PRF bertscore_from_vectors(const TokenVectors& hyp, const TokenVectors& ref);
std::optional<PRF> bertscore(std::string_view hyp, std::string_view ref, Backend* embedder);

struct EditCounts {
    std::size_t hits = 0;
    std::size_t substitutions = 0;
    std::size_t deletions = 0;
    std::size_t insertions = 0;

    std::size_t ref_length() const { return hits + substitutions + deletions; }
    std::size_t hyp_length() const { return hits + substitutions + insertions; }
    std::size_t errors() const { return substitutions + deletions + insertions; }
    bool operator==(const EditCounts&) const = default;
};

// Minimum-cost alignment with unit costs; among minimum-cost alignments the one
// with the most hits is reported.
template <typename T>
EditCounts align(const std::vector<T>& hyp, const std::vector<T>& ref);

EditCounts word_edit_counts(std::string_view hyp, std::string_view ref);
EditCounts char_edit_counts(std::string_view hyp, std::string_view ref);

struct ErrorRates {
    std::optional<double> wer;
    std::optional<double> mer;
    std::optional<double> wil;
    std::optional<double> wip;
    std::optional<double> cer;
    EditCounts words;
    EditCounts chars;
};

// Every rate is nullopt when the reference is empty.
ErrorRates error_rates(std::string_view hyp, std::string_view ref);

// Metric names in report order: Table-2 generation columns, then error rates.
const std::vector<std::string>& generation_metric_names();
const std::vector<std::string>& error_metric_names();

struct InstanceScores {
    std::string instance_id;
    std::optional<std::size_t> predicted;
    std::size_t gold = 0;
    bool correct = false;
    std::map<std::string, std::optional<double>> values;  // nullopt = N/A
};

struct Aggregate {
    std::optional<double> mean;
    std::optional<double> std;  // sample standard deviation
    std::size_t count = 0;
};

struct MetricReport {
    double accuracy = 0.0;
    std::size_t instances = 0;
    std::size_t unparsed = 0;
    std::size_t missing_traces = 0;
    std::size_t failed_traces = 0;
    std::vector<InstanceScores> per_instance;
    std::map<std::string, Aggregate> aggregates;
    std::vector<std::string> notes;
};

struct EvalOptions {
    Backend* embedder = nullptr;  // BERTScore is N/A without one
    std::size_t parallelism = 1;
};

// Scores each corpus instance against its trace: accuracy from the predicted index,
// generation metrics and error rates with the trace explanation as hypothesis and the
// gold explanation as reference. Instances without a trace count as wrong and unscored.
MetricReport evaluate(const std::vector<PipelineTrace>& traces, const std::vector<QAInstance>& corpus,
                      const EvalOptions& options = {});

Aggregate aggregate(const std::vector<std::optional<double>>& values);

nlohmann::json report_to_json(const MetricReport& report);
// Header plus one row of means; Table-2 column order followed by the error rates.
std::string report_to_csv(const MetricReport& report);

}  // namespace memeqa::metrics
