#include <algorithm>
#include <cmath>
#include <iostream>

#include "brainattr/metrics.hpp"

namespace brainattr {

namespace {

// Continued-fraction evaluation of the regularized incomplete beta function
// (Lentz's method), standard formulation.
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-14;
    constexpr double kTiny = 1e-300;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

double reg_incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

double student_t_two_sided_p(double t, int64_t df) {
    if (df < 1) throw invalid_input("t-test: degrees of freedom must be >= 1");
    const double dfd = static_cast<double>(df);
    return reg_incomplete_beta(dfd / 2.0, 0.5, dfd / (dfd + t * t));
}

PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw invalid_input("paired t-test: need >= 2 pairs of equal length");
    PairedTest result;
    result.n = static_cast<int64_t>(a.size());
    const double n = static_cast<double>(a.size());
    double mean = 0.0;
    for (size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
    mean /= n;
    double var = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i] - mean;
        var += d * d;
    }
    var /= (n - 1.0);
    if (var == 0.0) {
        std::cerr << "warning: zero-variance paired differences; p defined as 1\n";
        result.t_stat = 0.0;
        result.p_value = 1.0;
        return result;
    }
    result.t_stat = mean / std::sqrt(var / n);
    result.p_value = student_t_two_sided_p(result.t_stat, result.n - 1);
    return result;
}

std::vector<double> bh_adjust(const std::vector<double>& p_values) {
    const size_t n = p_values.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t x, size_t y) { return p_values[x] < p_values[y]; });

    std::vector<double> adjusted(n, 0.0);
    double running_min = 1.0;
    for (size_t k = n; k >= 1; --k) {
        const size_t idx = order[k - 1];
        const double scaled = p_values[idx] * static_cast<double>(n) / static_cast<double>(k);
        running_min = std::min(running_min, scaled);
        adjusted[idx] = std::min(1.0, running_min);
    }
    return adjusted;
}

}  // namespace brainattr
