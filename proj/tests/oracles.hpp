#pragma once

// Slow, obviously-correct reference implementations shared by the unit and
// acceptance tests.

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "relrec/metrics.hpp"

namespace relrec::testing {

inline double ref_dcg(const std::vector<int>& g, std::size_t k) {
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += (std::exp2(g[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    return s;
}

// Ideal DCG as the maximum over every ordering of the grades.
inline double ref_ndcg(const std::vector<int>& grades, std::size_t k) {
    if (k == 0 || k > grades.size()) k = grades.size();
    std::vector<int> perm = grades;
    std::sort(perm.begin(), perm.end());
    double best = 0.0;
    do {
        best = std::max(best, ref_dcg(perm, k));
    } while (std::next_permutation(perm.begin(), perm.end()));
    if (best <= 0.0) return 0.0;
    return ref_dcg(grades, k) / best;
}

// Walks every distinct score as a threshold and counts from scratch.
inline double ref_pr_auc(const std::vector<double>& scores, const std::vector<int>& labels, Interpolation interp) {
    std::size_t positives = 0;
    for (int l : labels) positives += l > 0;
    if (positives == 0) return 0.0;
    std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
    const double npos = static_cast<double>(positives);
    double area = 0.0, prev_recall = 0.0, prev_precision = -1.0;
    std::size_t prev_tp = 0;
    for (double t : thresholds) {
        std::size_t tp = 0, fp = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] >= t) (labels[i] > 0 ? tp : fp) += 1;
        }
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        const double recall = static_cast<double>(tp) / npos;
        if (interp == Interpolation::step) {
            area += static_cast<double>(tp - prev_tp) / npos * precision;
        } else {
            if (prev_precision < 0.0) prev_precision = precision;
            area += (recall - prev_recall) * (precision + prev_precision) / 2.0;
        }
        prev_tp = tp;
        prev_recall = recall;
        prev_precision = precision;
    }
    return area;
}

// Calls fn on every vector of length n over the alphabet.
template <class T, class Fn>
void for_each_vector(std::size_t n, const std::vector<T>& alphabet, Fn fn) {
    std::vector<std::size_t> idx(n, 0);
    std::vector<T> v(n, alphabet.front());
    while (true) {
        fn(v);
        std::size_t i = 0;
        while (i < n && ++idx[i] == alphabet.size()) {
            idx[i] = 0;
            v[i] = alphabet[0];
            ++i;
        }
        if (i == n) return;
        v[i] = alphabet[idx[i]];
    }
}


}  // namespace relrec::testing
