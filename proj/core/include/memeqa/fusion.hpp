#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <Eigen/Dense>

namespace memeqa::fusion {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class GateMode { scalar, per_dimension };

// Single-head weights. Shapes, with d = text width and d_v = vision width:
//   w_q [d × d_k], w_k [d_v × d_k], w_v [d_v × d], w_g [2d × g], b_g [g], g = 1 or d.
struct Weights {
    Matrix w_q;
    Matrix w_k;
    Matrix w_v;
    Matrix w_g;
    Vector b_g;

    GateMode gate_mode() const { return w_g.cols() == 1 ? GateMode::scalar : GateMode::per_dimension; }
};

struct State {
    Matrix h_language;  // [T_text × d]
    Matrix v_vision;    // [T_img × d_v]
    Weights weights;
};

struct Attention {
    Matrix output;   // [T_text × d]
    Matrix weights;  // [T_text × T_img], rows sum to 1
};

// softmax(Q Kᵀ / sqrt(d_k)) · V_proj with Q = H w_q, K = V w_k, V_proj = V w_v.
Attention cross_attend(const Matrix& h_language, const Matrix& v_vision, const Weights& weights);

struct Fused {
    Matrix output;  // (1 − λ) ⊙ H + λ ⊙ H_attn
    Matrix lambda;  // [T_text × g], strictly inside (0, 1)
};

// λ = sigmoid([H ; H_attn] w_g + b_g) per text position (or per dimension when g = d).
Fused fuse(const Matrix& h_language, const Matrix& h_attn, const Matrix& w_g, const Vector& b_g);

struct Forward {
    Attention attention;
    Fused fused;
    double loss = 0.0;  // sum of squares of the fused output
};

Forward forward(const State& state);

struct Gradients {
    Matrix w_q;
    Matrix w_k;
    Matrix w_v;
    Matrix w_g;
    Vector b_g;
};

// Analytic gradients of the sum-of-squares loss with respect to every weight.
Gradients gradients(const State& state);

struct GradCheck {
    double max_relative_error = 0.0;
    double max_absolute_error = 0.0;
    std::map<std::string, double> per_parameter;  // max relative error by weight name
};

// Central differences with step h against the analytic gradients.
// Relative error per entry: |a − n| / max(|a|, |n|, floor).
GradCheck grad_check(const State& state, double h = 1e-5, double floor = 1e-8);

// Seeded standard-normal state; weights scaled by 1/sqrt(fan_in).
State random_state(std::uint64_t seed, int t_text, int t_img, int d, int d_v, int d_k,
                   GateMode mode = GateMode::scalar);

// Throws NumericError when any entry is NaN or infinite.
void require_finite(const Matrix& m, const std::string& what);

}  // namespace memeqa::fusion
