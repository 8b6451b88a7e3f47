#pragma once

// Reference computations used only by tests. Nothing here calls into the
// library's compression or attention paths.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

/// cos/sin of 2*pi*n*t/T with the argument reduced in long double.
inline long double fourier_entry(std::size_t row, long long t, std::size_t T) {
    const long double n = static_cast<long double>(row / 2);
    const long double frac = std::fmod(n * static_cast<long double>(t), static_cast<long double>(T)) /
                             static_cast<long double>(T);
    const long double ph = 2.0L * std::numbers::pi_v<long double> * frac;
    return row % 2 == 0 ? std::cos(ph) : std::sin(ph);
}

/// coeffs[r][d] = sum_t f_r(t) x[t][d], direct double loop.
inline std::vector<std::vector<double>> direct_fourier_sum(std::size_t k, std::size_t T,
                                                           const std::vector<std::vector<float>>& x, long long start) {
    const std::size_t D = x.empty() ? 0 : x[0].size();
    std::vector<std::vector<double>> c(2 * k, std::vector<double>(D, 0.0));
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t r = 0; r < 2 * k; ++r)
            for (std::size_t d = 0; d < D; ++d)
                c[r][d] += static_cast<double>(fourier_entry(r, start + static_cast<long long>(i), T)) * x[i][d];
    return c;
}

/// Least-squares projection of y (length L, positions start..) onto the span
/// of cos/sin orders 0..k-1 with period T; returns the fitted values.
inline std::vector<double> fourier_ls_fit(const std::vector<double>& y, std::size_t k, std::size_t T, long long start) {
    const auto L = static_cast<Eigen::Index>(y.size());
    std::vector<std::size_t> cols;
    for (std::size_t r = 0; r < 2 * k; ++r) {
        const std::size_t n = r / 2;
        if (r % 2 == 1 && (n == 0 || 2 * n == T)) continue;  // identically zero rows
        cols.push_back(r);
    }
    Eigen::MatrixXd A(L, static_cast<Eigen::Index>(cols.size()));
    Eigen::VectorXd b(L);
    for (Eigen::Index i = 0; i < L; ++i) {
        b(i) = y[static_cast<std::size_t>(i)];
        for (std::size_t j = 0; j < cols.size(); ++j)
            A(i, static_cast<Eigen::Index>(j)) = static_cast<double>(fourier_entry(cols[j], start + i, T));
    }
    const Eigen::VectorXd coef = A.colPivHouseholderQr().solve(b);
    const Eigen::VectorXd fit = A * coef;
    return {fit.data(), fit.data() + fit.size()};
}

/// Least-squares fit by shifted Legendre polynomials of degree < order at the
/// given offsets in [0,1); uses std::legendre.
inline std::vector<double> legendre_ls_fit(const std::vector<double>& y, const std::vector<double>& offsets,
                                           std::size_t order) {
    const auto L = static_cast<Eigen::Index>(y.size());
    Eigen::MatrixXd A(L, static_cast<Eigen::Index>(order));
    Eigen::VectorXd b(L);
    for (Eigen::Index i = 0; i < L; ++i) {
        b(i) = y[static_cast<std::size_t>(i)];
        for (std::size_t n = 0; n < order; ++n)
            A(i, static_cast<Eigen::Index>(n)) = std::legendre(static_cast<unsigned>(n), 2.0 * offsets[static_cast<std::size_t>(i)] - 1.0);
    }
    const Eigen::VectorXd coef = A.colPivHouseholderQr().solve(b);
    const Eigen::VectorXd fit = A * coef;
    return {fit.data(), fit.data() + fit.size()};
}

inline double mse(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return a.empty() ? 0.0 : s / static_cast<double>(a.size());
}

/// Two-pass softmax attention in long double for one query.
inline std::vector<double> naive_attention(const std::vector<float>& q, const std::vector<std::vector<float>>& k,
                                           const std::vector<std::vector<float>>& v) {
    const long double scale = 1.0L / std::sqrt(static_cast<long double>(q.size()));
    std::vector<long double> s(k.size());
    long double mx = -INFINITY;
    for (std::size_t j = 0; j < k.size(); ++j) {
        long double acc = 0;
        for (std::size_t i = 0; i < q.size(); ++i) acc += static_cast<long double>(q[i]) * k[j][i];
        s[j] = acc * scale;
        if (s[j] > mx) mx = s[j];
    }
    long double den = 0;
    for (auto& x : s) {
        x = std::exp(x - mx);
        den += x;
    }
    std::vector<double> out(v[0].size(), 0.0);
    for (std::size_t c = 0; c < out.size(); ++c) {
        long double acc = 0;
        for (std::size_t j = 0; j < k.size(); ++j) acc += s[j] / den * v[j][c];
        out[c] = static_cast<double>(acc);
    }
    return out;
}

inline std::vector<float> random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(nd(rng));
    return v;
}

}  // namespace oracle
