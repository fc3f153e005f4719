// Exact small-sample paired statistics: Wilcoxon signed-rank, Holm step-down
// correction, Spearman rank correlation.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "votelab/error.hpp"

namespace votelab {

enum class Alternative { less, greater, two_sided };

// 1-based ranks with ties mid-ranked.
inline std::vector<double> midranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

struct WilcoxonResult {
    double p = 1.0;
    double w_plus = 0.0;   // sum of ranks of positive differences
    int n_used = 0;        // sample size after zero removal
    bool exact = true;     // false when the normal approximation was used
    bool all_zero = false; // every difference was zero; p forced to 1
};

// Paired signed-rank test. Zero differences are dropped, ties in |diff| are
// mid-ranked. Exact p by the full sign-assignment null for n <= 25 (computed
// by subset-sum counting over doubled integer ranks, identical to 2^n
// enumeration); normal approximation with continuity and tie correction
// above.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& diffs,
                                           Alternative alternative) {
    std::vector<double> nonzero;
    for (double d : diffs)
        if (d != 0.0) nonzero.push_back(d);

    WilcoxonResult res;
    if (nonzero.empty()) {
        res.all_zero = true;
        res.p = 1.0;
        return res;
    }
    const std::size_t n = nonzero.size();
    res.n_used = static_cast<int>(n);

    std::vector<double> abs(n);
    for (std::size_t i = 0; i < n; ++i) abs[i] = std::abs(nonzero[i]);
    const std::vector<double> ranks = midranks(abs);

    double w_plus = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (nonzero[i] > 0.0) w_plus += ranks[i];
    res.w_plus = w_plus;

    if (n <= 25) {
        // Doubled mid-ranks are integers; count sign assignments by their
        // doubled rank sum.
        std::vector<std::int64_t> r2(n);
        std::int64_t total2 = 0;
        for (std::size_t i = 0; i < n; ++i) {
            r2[i] = std::llround(2.0 * ranks[i]);
            total2 += r2[i];
        }
        std::vector<double> count(static_cast<std::size_t>(total2) + 1, 0.0);
        count[0] = 1.0;
        std::int64_t reach = 0;
        for (std::size_t i = 0; i < n; ++i) {
            reach += r2[i];
            for (std::int64_t s = reach; s >= r2[i]; --s)
                count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - r2[i])];
        }
        const double denom = std::ldexp(1.0, static_cast<int>(n));  // 2^n
        const auto w2 = std::llround(2.0 * w_plus);
        double p_le = 0.0, p_ge = 0.0;
        for (std::int64_t s = 0; s <= total2; ++s) {
            if (s <= w2) p_le += count[static_cast<std::size_t>(s)];
            if (s >= w2) p_ge += count[static_cast<std::size_t>(s)];
        }
        p_le /= denom;
        p_ge /= denom;
        switch (alternative) {
            case Alternative::less: res.p = p_le; break;
            case Alternative::greater: res.p = p_ge; break;
            case Alternative::two_sided: res.p = std::min(1.0, 2.0 * std::min(p_le, p_ge)); break;
        }
    } else {
        res.exact = false;
        const double dn = static_cast<double>(n);
        const double mean = dn * (dn + 1.0) / 4.0;
        double var = dn * (dn + 1.0) * (2.0 * dn + 1.0) / 24.0;
        // tie correction over groups of equal |diff|
        std::vector<double> sorted = abs;
        std::sort(sorted.begin(), sorted.end());
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
            const double t = static_cast<double>(j - i + 1);
            var -= t * (t * t - 1.0) / 48.0;
            i = j + 1;
        }
        const double sd = std::sqrt(var);
        auto phi = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
        const double p_le = phi((w_plus - mean + 0.5) / sd);
        const double p_ge = 1.0 - phi((w_plus - mean - 0.5) / sd);
        switch (alternative) {
            case Alternative::less: res.p = p_le; break;
            case Alternative::greater: res.p = p_ge; break;
            case Alternative::two_sided: res.p = std::min(1.0, 2.0 * std::min(p_le, p_ge)); break;
        }
    }
    return res;
}

// Holm step-down adjustment; output aligned with the input order.
inline std::vector<double> holm_correct(const std::vector<double>& pvals) {
    const std::size_t m = pvals.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return pvals[a] < pvals[b]; });
    std::vector<double> adjusted(m, 0.0);
    double running = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double stepped = static_cast<double>(m - i) * pvals[order[i]];
        running = std::max(running, std::min(1.0, stepped));
        adjusted[order[i]] = running;
    }
    return adjusted;
}

struct SpearmanResult {
    double rho = 0.0;
    bool defined = true;  // false when either side has zero rank variance
};

// Pearson correlation of mid-ranked values.
inline SpearmanResult spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw InvalidInput("spearman: need equal lengths >= 2");
    const std::vector<double> rx = midranks(x);
    const std::vector<double> ry = midranks(y);
    const std::size_t n = x.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return {0.0, false};
    return {sxy / std::sqrt(sxx * syy), true};
}

}  // namespace votelab
