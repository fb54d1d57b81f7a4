#include "memeqa/fusion.hpp"

#include <cmath>
#include <random>

#include "memeqa/errors.hpp"

namespace memeqa::fusion {

namespace {

std::string dims(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void require_shape(bool ok, const std::string& message) {
    if (!ok) throw PreconditionError("dimension mismatch: " + message);
}

Matrix row_softmax(const Matrix& s) {
    Matrix p(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const double mx = s.row(i).maxCoeff();
        p.row(i) = (s.row(i).array() - mx).exp().matrix();
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

Matrix sigmoid(const Matrix& u) { return (1.0 / (1.0 + (-u.array()).exp())).matrix(); }

// Broadcasts a [T × 1] gate over d columns, or passes a [T × d] gate through.
Matrix expand_gate(const Matrix& lambda, Eigen::Index cols) {
    if (lambda.cols() == cols) return lambda;
    return lambda.replicate(1, cols);
}

void check_weights(const Matrix& h, const Matrix& v, const Weights& w) {
    require_shape(w.w_q.rows() == h.cols(), "w_q " + dims(w.w_q) + " vs H " + dims(h));
    require_shape(w.w_k.rows() == v.cols(), "w_k " + dims(w.w_k) + " vs V " + dims(v));
    require_shape(w.w_q.cols() == w.w_k.cols(), "w_q and w_k disagree on d_k");
    require_shape(w.w_v.rows() == v.cols() && w.w_v.cols() == h.cols(), "w_v " + dims(w.w_v));
}

}  // namespace

void require_finite(const Matrix& m, const std::string& what) {
    if (!m.allFinite()) throw NumericError(what + " has non-finite entries");
}

Attention cross_attend(const Matrix& h, const Matrix& v, const Weights& w) {
    require_shape(h.rows() > 0 && v.rows() > 0, "empty input");
    check_weights(h, v, w);
    require_finite(h, "H_language");
    require_finite(v, "V_vision");

    const Matrix q = h * w.w_q;
    const Matrix k = v * w.w_k;
    const Matrix vp = v * w.w_v;
    const double scale = 1.0 / std::sqrt(static_cast<double>(w.w_q.cols()));
    Attention out;
    out.weights = row_softmax((q * k.transpose()) * scale);
    out.output = out.weights * vp;
    return out;
}

Fused fuse(const Matrix& h, const Matrix& a, const Matrix& w_g, const Vector& b_g) {
    require_shape(h.rows() == a.rows() && h.cols() == a.cols(), "H " + dims(h) + " vs H_attn " + dims(a));
    require_shape(w_g.rows() == 2 * h.cols(), "w_g rows must equal 2d");
    require_shape(w_g.cols() == 1 || w_g.cols() == h.cols(), "w_g must have 1 or d columns");
    require_shape(b_g.size() == w_g.cols(), "b_g length must match w_g columns");
    require_finite(h, "H_language");
    require_finite(a, "H_attn");

    Matrix z(h.rows(), 2 * h.cols());
    z << h, a;
    const Matrix u = (z * w_g).rowwise() + b_g.transpose();
    Fused out;
    out.lambda = sigmoid(u);
    const Matrix lam = expand_gate(out.lambda, h.cols());
    out.output = ((1.0 - lam.array()) * h.array() + lam.array() * a.array()).matrix();
    return out;
}

Forward forward(const State& s) {
    Forward f;
    f.attention = cross_attend(s.h_language, s.v_vision, s.weights);
    f.fused = fuse(s.h_language, f.attention.output, s.weights.w_g, s.weights.b_g);
    f.loss = f.fused.output.squaredNorm();
    return f;
}

Gradients gradients(const State& s) {
    const auto& h = s.h_language;
    const auto& v = s.v_vision;
    const auto& w = s.weights;
    const auto f = forward(s);
    const Matrix& p = f.attention.weights;
    const Matrix& a = f.attention.output;
    const Matrix& lambda = f.fused.lambda;
    const Eigen::Index d = h.cols();
    const double scale = 1.0 / std::sqrt(static_cast<double>(w.w_q.cols()));

    const Matrix d_f = 2.0 * f.fused.output;
    const Matrix diff = a - h;

    Matrix d_lambda;
    if (w.gate_mode() == GateMode::scalar) {
        d_lambda = (d_f.array() * diff.array()).rowwise().sum().matrix();
    } else {
        d_lambda = (d_f.array() * diff.array()).matrix();
    }
    const Matrix d_u = (d_lambda.array() * lambda.array() * (1.0 - lambda.array())).matrix();

    Matrix z(h.rows(), 2 * d);
    z << h, a;
    Gradients g;
    g.w_g = z.transpose() * d_u;
    g.b_g = d_u.colwise().sum().transpose();

    const Matrix d_z = d_u * w.w_g.transpose();
    const Matrix d_a = (d_f.array() * expand_gate(lambda, d).array()).matrix() + d_z.rightCols(d);

    const Matrix q = h * w.w_q;
    const Matrix k = v * w.w_k;
    const Matrix vp = v * w.w_v;

    const Matrix d_p = d_a * vp.transpose();
    g.w_v = v.transpose() * (p.transpose() * d_a);

    const Vector row_dot = (d_p.array() * p.array()).rowwise().sum();
    const Matrix d_s = (p.array() * (d_p.colwise() - row_dot).array()).matrix();
    const Matrix d_q = d_s * k * scale;
    const Matrix d_k = d_s.transpose() * q * scale;
    g.w_q = h.transpose() * d_q;
    g.w_k = v.transpose() * d_k;

    for (const auto* m : {&g.w_q, &g.w_k, &g.w_v, &g.w_g}) require_finite(*m, "gradient");
    if (!g.b_g.allFinite()) throw NumericError("gradient has non-finite entries");
    return g;
}

GradCheck grad_check(const State& state, double h, double floor) {
    const auto analytic = gradients(state);
    GradCheck out;

    auto probe = [&](const std::string& name, auto select, const auto& grad) {
        State work = state;
        auto& param = select(work.weights);
        double worst = 0.0;
        for (Eigen::Index i = 0; i < param.size(); ++i) {
            const double saved = param.data()[i];
            param.data()[i] = saved + h;
            const double up = forward(work).loss;
            param.data()[i] = saved - h;
            const double down = forward(work).loss;
            param.data()[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double exact = grad.data()[i];
            if (!std::isfinite(numeric)) throw NumericError("non-finite finite difference for " + name);
            const double abs_err = std::abs(exact - numeric);
            const double rel = abs_err / std::max({std::abs(exact), std::abs(numeric), floor});
            worst = std::max(worst, rel);
            out.max_absolute_error = std::max(out.max_absolute_error, abs_err);
        }
        out.per_parameter[name] = worst;
        out.max_relative_error = std::max(out.max_relative_error, worst);
    };

    probe("w_q", [](Weights& w) -> Matrix& { return w.w_q; }, analytic.w_q);
    probe("w_k", [](Weights& w) -> Matrix& { return w.w_k; }, analytic.w_k);
    probe("w_v", [](Weights& w) -> Matrix& { return w.w_v; }, analytic.w_v);
    probe("w_g", [](Weights& w) -> Matrix& { return w.w_g; }, analytic.w_g);
    probe("b_g", [](Weights& w) -> Vector& { return w.b_g; }, analytic.b_g);
    return out;
}

State random_state(std::uint64_t seed, int t_text, int t_img, int d, int d_v, int d_k, GateMode mode) {
    if (t_text <= 0 || t_img <= 0 || d <= 0 || d_v <= 0 || d_k <= 0) {
        throw PreconditionError("fusion dimensions must be positive");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto fill = [&](Eigen::Index rows, Eigen::Index cols, double scale) {
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng) * scale;
        return m;
    };
    const int g = mode == GateMode::scalar ? 1 : d;
    State s;
    s.h_language = fill(t_text, d, 1.0);
    s.v_vision = fill(t_img, d_v, 1.0);
    s.weights.w_q = fill(d, d_k, 1.0 / std::sqrt(d));
    s.weights.w_k = fill(d_v, d_k, 1.0 / std::sqrt(d_v));
    s.weights.w_v = fill(d_v, d, 1.0 / std::sqrt(d_v));
    s.weights.w_g = fill(2 * d, g, 1.0 / std::sqrt(2.0 * d));
    s.weights.b_g = fill(g, 1, 0.1);
    return s;
}

}  // namespace memeqa::fusion
