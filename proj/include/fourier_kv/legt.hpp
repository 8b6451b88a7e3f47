#pragma once

// HiPPO-LegT: online projection of the trailing window of length theta onto
// the first N normalized (shifted) Legendre polynomials,
//   P~_n(x) = sqrt(2n+1) * P_n(2x - 1),  x in [0, 1),
// x = 0 being the oldest end of the window. Continuous dynamics are
//   c' = -(1/theta) A c + (1/theta) B f,
//   A[n][j] = sqrt(2n+1) sqrt(2j+1) * (1 if j <= n else (-1)^(n-j)),
//   B[n]    = sqrt(2n+1),
// discretized with the bilinear transform at a step of one token.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "fourier_kv/matrix.hpp"

namespace fourier_kv {

/// Shifted, normalized Legendre polynomials P~_0..P~_{order-1} at x in [0, 1].
inline void legendre_values(std::size_t order, double x, std::span<double> out) {
    const double z = 2.0 * x - 1.0;
    double p_prev = 1.0;
    double p = z;
    for (std::size_t n = 0; n < order; ++n) {
        double pn;
        if (n == 0) {
            pn = 1.0;
        } else if (n == 1) {
            pn = z;
        } else {
            // (n) P_n = (2n-1) z P_{n-1} - (n-1) P_{n-2}
            const double next = ((2.0 * n - 1.0) * z * p - (n - 1.0) * p_prev) / static_cast<double>(n);
            p_prev = p;
            p = next;
            pn = next;
        }
        out[n] = std::sqrt(2.0 * n + 1.0) * pn;
    }
}

/// Discrete transition pair (A_bar, B_bar) for a given order and window.
class LegTOperator {
public:
    LegTOperator(std::size_t order, double window) : order_(order), window_(window) {
        if (order == 0) throw std::invalid_argument("LegTOperator: order must be >= 1");
        if (!(window > 0.0)) throw std::invalid_argument("LegTOperator: window must be > 0");
        const auto n = static_cast<Eigen::Index>(order);
        Eigen::MatrixXd a(n, n);
        Eigen::VectorXd b(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double ri = std::sqrt(2.0 * i + 1.0);
            b(i) = ri / window;
            for (Eigen::Index j = 0; j < n; ++j) {
                const double rj = std::sqrt(2.0 * j + 1.0);
                const double sign = (j <= i) ? 1.0 : (((j - i) % 2 == 0) ? 1.0 : -1.0);
                a(i, j) = -ri * rj * sign / window;
            }
        }
        const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
        const Eigen::PartialPivLU<Eigen::MatrixXd> lu(eye - 0.5 * a);
        a_bar_ = lu.solve(eye + 0.5 * a);
        b_bar_ = lu.solve(b);
    }

    std::size_t order() const noexcept { return order_; }
    double window() const noexcept { return window_; }
    const Eigen::MatrixXd& a_bar() const noexcept { return a_bar_; }
    const Eigen::VectorXd& b_bar() const noexcept { return b_bar_; }

private:
    std::size_t order_;
    double window_;
    Eigen::MatrixXd a_bar_;
    Eigen::VectorXd b_bar_;
};

struct LegTState {
    MatrixD coeffs;  // order x D
    std::size_t token_count = 0;

    LegTState() = default;
    LegTState(std::size_t order, std::size_t dims) : coeffs(order, dims) {}

    std::size_t dims() const noexcept { return coeffs.cols(); }

    /// Sets the state to the fixed point of a history held constant at `value`.
    /// A e_0 = B, so that fixed point is value * e_0.
    void prime(std::span<const float> value) {
        if (value.size() != dims()) throw std::invalid_argument("LegTState::prime: width mismatch");
        coeffs.set_zero();
        for (std::size_t d = 0; d < dims(); ++d) coeffs(0, d) = value[d];
    }
};

inline void legt_fold(LegTState& state, const LegTOperator& op, std::span<const float> value) {
    if (state.coeffs.rows() != op.order())
        throw std::invalid_argument("legt_fold: state order does not match operator");
    if (value.size() != state.dims()) throw std::invalid_argument("legt_fold: width mismatch");
    const std::size_t n = op.order();
    std::vector<double> next(n);
    for (std::size_t d = 0; d < state.dims(); ++d) {
        for (std::size_t i = 0; i < n; ++i) {
            double acc = op.b_bar()(static_cast<Eigen::Index>(i)) * static_cast<double>(value[d]);
            for (std::size_t j = 0; j < n; ++j)
                acc += op.a_bar()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) *
                       state.coeffs(j, d);
            next[i] = acc;
        }
        for (std::size_t i = 0; i < n; ++i) state.coeffs(i, d) = next[i];
    }
    ++state.token_count;
}

/// Evaluates the window approximation at relative offsets in [0, 1).
inline MatrixD legt_reconstruct(const LegTState& state, std::span<const double> offsets) {
    const std::size_t order = state.coeffs.rows();
    MatrixD out(offsets.size(), state.dims());
    std::vector<double> p(order);
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        const double x = offsets[i];
        if (!(x >= 0.0 && x < 1.0)) throw std::out_of_range("legt_reconstruct: offset outside [0,1)");
        legendre_values(order, x, p);
        for (std::size_t n = 0; n < order; ++n) {
            const double pn = p[n];
            auto src = state.coeffs.row(n);
            auto dst = out.row(i);
            for (std::size_t d = 0; d < dst.size(); ++d) dst[d] += pn * src[d];
        }
    }
    return out;
}

/// Offsets of the last `count` tokens of a window of `window` tokens, token
/// centers at (j + 0.5) / window.
inline std::vector<double> trailing_offsets(std::size_t count, std::size_t window) {
    std::vector<double> off(count);
    const std::size_t skip = window - count;
    for (std::size_t j = 0; j < count; ++j)
        off[j] = (static_cast<double>(skip + j) + 0.5) / static_cast<double>(window);
    return off;
}

}  // namespace fourier_kv
