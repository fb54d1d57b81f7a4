#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "memeqa/metrics.hpp"
#include "memeqa/text.hpp"

namespace memeqa::oracles {

double bleu(const std::vector<std::string>& h, const std::vector<std::string>& r, int n) {
    if (h.empty()) return 0.0;
    auto grams = [](const std::vector<std::string>& t, std::size_t k) {
        std::map<std::string, int> m;
        for (std::size_t i = 0; i + k <= t.size(); ++i) {
            std::string key;
            for (std::size_t j = 0; j < k; ++j) key += t[i + j] + '\x1f';
            ++m[key];
        }
        return m;
    };
    double log_sum = 0;
    int used = 0;
    for (int k = 1; k <= n; ++k) {
        const int ht = std::max(0, int(h.size()) - k + 1), rt = std::max(0, int(r.size()) - k + 1);
        if (ht == 0 && rt == 0) continue;
        auto hg = grams(h, k), rg = grams(r, k);
        int match = 0;
        for (auto& [g, c] : hg) match += std::min(c, rg[g]);
        const double p = match ? double(match) / ht : metrics::kBleuEpsilon / std::max(ht, 1);
        log_sum += std::log(p);
        ++used;
    }
    const double c = double(h.size()), rl = double(r.size());
    return (c > rl ? 1.0 : std::exp(1 - rl / c)) * std::exp(log_sum / used);
}

namespace {

std::size_t lcs_from(const std::vector<std::string>& a, const std::vector<std::string>& b, std::size_t i,
                     std::size_t j) {
    if (i == a.size() || j == b.size()) return 0;
    if (a[i] == b[j]) return 1 + lcs_from(a, b, i + 1, j + 1);
    return std::max(lcs_from(a, b, i + 1, j), lcs_from(a, b, i, j + 1));
}

Alignment align_from(const std::vector<std::string>& h, const std::vector<std::string>& r, std::size_t a,
                     std::size_t b) {
    if (b == r.size()) return {h.size() - a, 0, 0, 0, h.size() - a};
    if (a == h.size()) return {r.size() - b, 0, 0, r.size() - b, 0};
    auto diag = align_from(h, r, a + 1, b + 1);
    if (h[a] == r[b]) {
        ++diag.hits;
    } else {
        ++diag.cost;
        ++diag.substitutions;
    }
    auto del = align_from(h, r, a, b + 1);
    ++del.cost;
    ++del.deletions;
    auto ins = align_from(h, r, a + 1, b);
    ++ins.cost;
    ++ins.insertions;
    Alignment best = diag;
    for (const auto& o : {del, ins}) {
        if (o.cost < best.cost || (o.cost == best.cost && o.hits > best.hits)) best = o;
    }
    return best;
}

}  // namespace

std::size_t lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) { return lcs_from(a, b, 0, 0); }

double rouge_l(const std::vector<std::string>& h, const std::vector<std::string>& r) {
    if (h.empty() || r.empty()) return 0.0;
    const double l = double(lcs(h, r));
    const double p = l / double(h.size()), rc = l / double(r.size());
    return p + rc > 0 ? 2 * p * rc / (p + rc) : 0.0;
}

Alignment align(const std::vector<std::string>& h, const std::vector<std::string>& r) { return align_from(h, r, 0, 0); }

double chrf(const std::string& h, const std::string& r, int max_n, double beta) {
    double ps = 0, rs = 0;
    int orders = 0;
    for (int n = 1; n <= max_n; ++n) {
        const int ht = std::max(0, int(h.size()) - n + 1), rt = std::max(0, int(r.size()) - n + 1);
        if (!ht && !rt) continue;
        std::map<std::string, int> hc, rc;
        for (int i = 0; i < ht; ++i) ++hc[h.substr(i, n)];
        for (int i = 0; i < rt; ++i) ++rc[r.substr(i, n)];
        int m = 0;
        for (auto& [g, c] : hc) m += std::min(c, rc[g]);
        ps += ht ? double(m) / ht : 0;
        rs += rt ? double(m) / rt : 0;
        ++orders;
    }
    if (!orders) return 0;
    const double p = ps / orders, rr = rs / orders, b2 = beta * beta;
    return b2 * p + rr > 0 ? (1 + b2) * p * rr / (b2 * p + rr) : 0;
}

std::string random_sentence(std::mt19937_64& rng, std::size_t max_len, int vocab) {
    std::uniform_int_distribution<std::size_t> len(0, max_len);
    std::uniform_int_distribution<int> word(0, vocab - 1);
    std::string s;
    const auto n = len(rng);
    for (std::size_t i = 0; i < n; ++i) {
        if (i) s += ' ';
        s += std::string(1, char('a' + word(rng)));
        if (word(rng) == 0) s += 's';
    }
    return s;
}

NaiveFusion naive_fusion(const fusion::State& s) {
    using fusion::Matrix;
    const auto& H = s.h_language;
    const auto& V = s.v_vision;
    const auto& w = s.weights;
    const int tt = int(H.rows()), ti = int(V.rows()), d = int(H.cols()), dv = int(V.cols()), dk = int(w.w_q.cols());
    Matrix q = Matrix::Zero(tt, dk), k = Matrix::Zero(ti, dk), vp = Matrix::Zero(ti, d);
    for (int i = 0; i < tt; ++i)
        for (int c = 0; c < dk; ++c)
            for (int j = 0; j < d; ++j) q(i, c) += H(i, j) * w.w_q(j, c);
    for (int i = 0; i < ti; ++i) {
        for (int c = 0; c < dk; ++c)
            for (int j = 0; j < dv; ++j) k(i, c) += V(i, j) * w.w_k(j, c);
        for (int c = 0; c < d; ++c)
            for (int j = 0; j < dv; ++j) vp(i, c) += V(i, j) * w.w_v(j, c);
    }
    NaiveFusion n;
    n.attention_weights = Matrix::Zero(tt, ti);
    n.attention = Matrix::Zero(tt, d);
    for (int i = 0; i < tt; ++i) {
        std::vector<double> sc(ti);
        for (int j = 0; j < ti; ++j) {
            double dot = 0;
            for (int c = 0; c < dk; ++c) dot += q(i, c) * k(j, c);
            sc[j] = dot / std::sqrt(double(dk));
        }
        const double mx = *std::max_element(sc.begin(), sc.end());
        double z = 0;
        for (auto& x : sc) z += (x = std::exp(x - mx));
        for (int j = 0; j < ti; ++j) n.attention_weights(i, j) = sc[j] / z;
        for (int c = 0; c < d; ++c)
            for (int j = 0; j < ti; ++j) n.attention(i, c) += n.attention_weights(i, j) * vp(j, c);
    }
    const int g = int(w.w_g.cols());
    n.fused = Matrix::Zero(tt, d);
    for (int i = 0; i < tt; ++i) {
        std::vector<double> lam(g);
        for (int c = 0; c < g; ++c) {
            double u = w.b_g(c);
            for (int j = 0; j < d; ++j) u += H(i, j) * w.w_g(j, c) + n.attention(i, j) * w.w_g(d + j, c);
            lam[c] = 1.0 / (1.0 + std::exp(-u));
        }
        for (int c = 0; c < d; ++c) {
            const double l = g == 1 ? lam[0] : lam[c];
            n.fused(i, c) = (1 - l) * H(i, c) + l * n.attention(i, c);
        }
    }
    return n;
}

const std::vector<HandCase>& hand_cases() {
    using M = Metric;
    static const std::vector<HandCase> cases{
        {M::bleu1, "the the the the the the the", "the cat is on the mat", 2.0 / 7.0, "clip 7 -> 2, c > r"},
        {M::bleu1, "the cat", "the cat sat on the mat", std::exp(-2.0), "p1 = 1, BP = e^(1 - 6/2)"},
        {M::bleu4, "the cat sat on the mat", "the cat sat on the mat", 1.0, "identical"},
        {M::bleu4, "a b c d e", "a b c d f", std::pow(4.0 / 5 * 3.0 / 4 * 2.0 / 3 * 1.0 / 2, 0.25),
         "p = 4/5, 3/4, 2/3, 1/2"},
        {M::rouge_l, "police killed the gunman", "police kill the gunman", 0.75, "LCS 3 of 4 both ways"},
        {M::rouge_l, "the gunman kill police", "police kill the gunman", 0.5, "LCS 2 of 4"},
        {M::meteor, "the cat sat on the mat", "on the mat sat the cat", 0.5, "m = 6, six chunks"},
        {M::meteor, "the cats running", "the cat runs", 1.0 - 0.5 / 27.0, "stem matches, one chunk"},
        {M::meteor, "a b x", "a b c d", (10.0 * (2.0 / 3) * 0.5 / (0.5 + 9 * 2.0 / 3)) * (1 - 0.5 * 0.125),
         "m = 2, P = 2/3, R = 1/2, one chunk"},
        {M::chrf, "ab", "ac", 0.25, "n=1: P = R = 1/2; n=2: 0; F2 of (1/4, 1/4)"},
        {M::chrf, "a", "ab", 0.625 / 2.25, "P = (1 + 0)/2, R = (1/2 + 0)/2"},
        {M::wer, "a x c d e", "a b c d", 0.5, "S = 1, I = 1 over N = 4"},
        {M::mer, "a x c d e", "a b c d", 0.4, "2 / (H + S + D + I) = 2/5"},
        {M::wip, "a x c d e", "a b c d", 0.45, "(3/4)(3/5)"},
        {M::wil, "b a", "a b", 0.75, "tie -> H = 1, WIP = 1/4"},
        {M::cer, "abc", "abd", 1.0 / 3.0, "one substitution over 3"},
    };
    return cases;
}

double evaluate_case(const HandCase& c) {
    switch (c.metric) {
        case Metric::bleu1: return metrics::bleu(c.hyp, c.ref, 1);
        case Metric::bleu4: return metrics::bleu(c.hyp, c.ref, 4);
        case Metric::rouge_l: return metrics::rouge_l(c.hyp, c.ref);
        case Metric::meteor: return metrics::meteor(c.hyp, c.ref);
        case Metric::chrf: return metrics::chrf(c.hyp, c.ref).score;
        case Metric::wer: return *metrics::error_rates(c.hyp, c.ref).wer;
        case Metric::mer: return *metrics::error_rates(c.hyp, c.ref).mer;
        case Metric::wil: return *metrics::error_rates(c.hyp, c.ref).wil;
        case Metric::wip: return *metrics::error_rates(c.hyp, c.ref).wip;
        case Metric::cer: return *metrics::error_rates(c.hyp, c.ref).cer;
    }
    return 0.0;
}

const char* metric_name(Metric m) {
    switch (m) {
        case Metric::bleu1: return "BLEU-1";
        case Metric::bleu4: return "BLEU-4";
        case Metric::rouge_l: return "ROUGE-L";
        case Metric::meteor: return "METEOR";
        case Metric::chrf: return "CHRF";
        case Metric::wer: return "WER";
        case Metric::mer: return "MER";
        case Metric::wil: return "WIL";
        case Metric::wip: return "WIP";
        case Metric::cer: return "CER";
    }
    return "?";
}

}  // namespace memeqa::oracles
