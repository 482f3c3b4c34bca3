#pragma once
// Latent-space clustering: Lloyd's k-means with k-means++ seeding and
// restarts, the Student-t soft assignment Q, its sharpened frequency-
// normalized target P, and elbow-based selection of the cluster count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "lechpe/autodiff.hpp"
#include "lechpe/matrix.hpp"
#include "lechpe/rng.hpp"

namespace lechpe {

struct ClusterConfig {
    int k = 10;
    int kmeans_max_iters = 100;
    int kmeans_restarts = 5;
    std::uint64_t seed = 0;

    void validate() const {
        if (k < 2) throw std::invalid_argument("ClusterConfig: k must be >= 2");
        if (kmeans_max_iters < 1 || kmeans_restarts < 1)
            throw std::invalid_argument("ClusterConfig: iters and restarts must be >= 1");
    }
};

struct KmeansResult {
    Matrix centers;               // K x dim
    std::vector<int> assignment;  // per point, 0-based
    double wcss = 0.0;
    std::vector<double> wcss_per_iter;  // of the winning restart
};

namespace detail {

inline double sqdist_row(const Matrix& a, int i, const Matrix& b, int j) {
    double s = 0.0;
    for (int d = 0; d < a.cols(); ++d) {
        const double diff = a(i, d) - b(j, d);
        s += diff * diff;
    }
    return s;
}

inline Matrix kmeanspp_seed(const Matrix& points, int k, Rng& rng) {
    const int n = points.rows();
    Matrix centers(k, points.cols());
    std::vector<double> dist2(static_cast<std::size_t>(n),
                              std::numeric_limits<double>::infinity());
    int first = rng.uniform_int(0, n - 1);
    for (int d = 0; d < points.cols(); ++d) centers(0, d) = points(first, d);
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            dist2[static_cast<std::size_t>(i)] =
                std::min(dist2[static_cast<std::size_t>(i)], sqdist_row(points, i, centers, c - 1));
            total += dist2[static_cast<std::size_t>(i)];
        }
        int pick;
        if (total <= 0.0) {
            pick = rng.uniform_int(0, n - 1);  // all remaining points coincide with centers
        } else {
            double target = rng.uniform() * total;
            pick = n - 1;
            for (int i = 0; i < n; ++i) {
                target -= dist2[static_cast<std::size_t>(i)];
                if (target <= 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        for (int d = 0; d < points.cols(); ++d) centers(c, d) = points(pick, d);
    }
    return centers;
}

inline KmeansResult lloyd(const Matrix& points, Matrix centers, int max_iters) {
    const int n = points.rows();
    const int k = centers.rows();
    KmeansResult res;
    res.assignment.assign(static_cast<std::size_t>(n), -1);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    double prev_obj = std::numeric_limits<double>::infinity();

    for (int iter = 0; iter < max_iters; ++iter) {
        // assignment step
        bool changed = false;
        double obj = 0.0;
        std::fill(counts.begin(), counts.end(), 0);
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = sqdist_row(points, i, centers, 0);
            for (int j = 1; j < k; ++j) {
                const double d = sqdist_row(points, i, centers, j);
                if (d < best_d) {
                    best_d = d;
                    best = j;
                }
            }
            if (res.assignment[static_cast<std::size_t>(i)] != best) changed = true;
            res.assignment[static_cast<std::size_t>(i)] = best;
            counts[static_cast<std::size_t>(best)]++;
            obj += best_d;
        }

        // empty clusters grab the point farthest from its current center
        for (int j = 0; j < k; ++j) {
            if (counts[static_cast<std::size_t>(j)] > 0) continue;
            int far = -1;
            double far_d = -1.0;
            for (int i = 0; i < n; ++i) {
                const int a = res.assignment[static_cast<std::size_t>(i)];
                if (counts[static_cast<std::size_t>(a)] <= 1) continue;
                const double d = sqdist_row(points, i, centers, a);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            if (far < 0) break;  // fewer distinct points than clusters
            counts[static_cast<std::size_t>(res.assignment[static_cast<std::size_t>(far)])]--;
            res.assignment[static_cast<std::size_t>(far)] = j;
            counts[static_cast<std::size_t>(j)] = 1;
            for (int d = 0; d < points.cols(); ++d) centers(j, d) = points(far, d);
            obj -= far_d;
            changed = true;
        }

        if (obj > prev_obj + 1e-9 * std::max(1.0, prev_obj)) {
            throw std::logic_error("kmeans: objective increased across an iteration");
        }
        prev_obj = obj;
        res.wcss_per_iter.push_back(obj);

        if (!changed && iter > 0) break;

        // update step: centers move to member means
        Matrix sums(k, points.cols(), 0.0);
        for (int i = 0; i < n; ++i) {
            const int a = res.assignment[static_cast<std::size_t>(i)];
            for (int d = 0; d < points.cols(); ++d) sums(a, d) += points(i, d);
        }
        for (int j = 0; j < k; ++j) {
            if (counts[static_cast<std::size_t>(j)] == 0) continue;
            for (int d = 0; d < points.cols(); ++d)
                centers(j, d) = sums(j, d) / counts[static_cast<std::size_t>(j)];
        }
    }

    res.centers = std::move(centers);
    res.wcss = prev_obj;
    return res;
}

}  // namespace detail

inline KmeansResult kmeans(const Matrix& latents, const ClusterConfig& config) {
    config.validate();
    const int n = latents.rows();
    if (n < config.k) {
        throw std::invalid_argument("kmeans: " + std::to_string(n) + " points for k = " +
                                    std::to_string(config.k));
    }
    if (config.k > n / 10) {
        std::cerr << "[lechpe] kmeans: k = " << config.k << " is not small against n = " << n
                  << " (want k <= n/10)\n";
    }
    KmeansResult best;
    best.wcss = std::numeric_limits<double>::infinity();
    for (int r = 0; r < config.kmeans_restarts; ++r) {
        Rng rng(mix_seed(config.seed, 0xC0FFEE00ULL + static_cast<std::uint64_t>(r)));
        auto res = detail::lloyd(latents, detail::kmeanspp_seed(latents, config.k, rng),
                                 config.kmeans_max_iters);
        if (res.wcss < best.wcss) best = std::move(res);
    }
    return best;
}

struct SoftAssignment {
    Matrix q;  // N x K, rows sum to 1

    void validate() const {
        for (int i = 0; i < q.rows(); ++i) {
            double s = 0.0;
            for (int j = 0; j < q.cols(); ++j) {
                const double v = q(i, j);
                if (!(v > 0.0) || v > 1.0)
                    throw std::logic_error("SoftAssignment: entry out of (0, 1]");
                s += v;
            }
            if (std::fabs(s - 1.0) > 1e-9)
                throw std::logic_error("SoftAssignment: row sum " + std::to_string(s));
        }
    }
};

struct TargetDistribution {
    Matrix p;  // N x K, rows sum to 1
};

// Graph version of the Student-t soft assignment: (1 + ||l_i - c_j||^2)^-1,
// normalized per sample across clusters. Differentiable in both inputs.
inline ad::Var soft_assign_graph(const ad::Var& latents, const ad::Var& centers) {
    return ad::normalize_rows(ad::inv_one_plus(ad::pairwise_sqdist(latents, centers)));
}

inline SoftAssignment soft_assign(const Matrix& latents, const Matrix& centers) {
    SoftAssignment out;
    out.q = soft_assign_graph(ad::constant(latents), ad::constant(centers))->value;
    out.validate();
    return out;
}

// p_ij = (q_ij^2 / f_j) / sum_j' (q_ij'^2 / f_j') with soft frequencies
// f_j = sum_i q_ij. Pure: no gradient tracking, the result is a constant
// target for the KL loss.
inline TargetDistribution target_distribution(const SoftAssignment& soft) {
    const Matrix& q = soft.q;
    const int n = q.rows(), k = q.cols();
    std::vector<double> freq(static_cast<std::size_t>(k), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) freq[static_cast<std::size_t>(j)] += q(i, j);
    for (double& f : freq) f = std::max(f, 1e-12);

    TargetDistribution out;
    out.p = Matrix(n, k);
    for (int i = 0; i < n; ++i) {
        double rowsum = 0.0;
        for (int j = 0; j < k; ++j) {
            out.p(i, j) = q(i, j) * q(i, j) / freq[static_cast<std::size_t>(j)];
            rowsum += out.p(i, j);
        }
        for (int j = 0; j < k; ++j) out.p(i, j) /= rowsum;
    }
    return out;
}

struct ElbowReport {
    std::vector<int> candidate_ks;
    std::vector<double> wcss;
    int chosen_k = 0;
    double curvature = 0.0;   // max second difference relative to the smallest-K WCSS
    bool low_confidence = false;
};

// Runs k-means per candidate K and picks the interior candidate maximizing
// the discrete second difference of the WCSS curve. A curve whose best second
// difference is below 5% of the smallest-K WCSS has no clear elbow and is
// flagged low-confidence.
inline ElbowReport elbow_select(const Matrix& latents, std::vector<int> candidate_ks,
                                const ClusterConfig& config) {
    std::sort(candidate_ks.begin(), candidate_ks.end());
    candidate_ks.erase(std::unique(candidate_ks.begin(), candidate_ks.end()),
                       candidate_ks.end());
    if (candidate_ks.size() < 3) {
        throw std::invalid_argument(
            "elbow_select: need at least 3 distinct candidates for a second difference");
    }
    for (int k : candidate_ks) {
        if (k > latents.rows()) {
            throw std::invalid_argument("elbow_select: candidate k = " + std::to_string(k) +
                                        " exceeds " + std::to_string(latents.rows()) + " points");
        }
    }
    ElbowReport report;
    report.candidate_ks = candidate_ks;
    for (int k : candidate_ks) {
        ClusterConfig c = config;
        c.k = k;
        report.wcss.push_back(kmeans(latents, c).wcss);
    }
    for (std::size_t i = 1; i + 1 < report.wcss.size(); ++i) {
        if (report.wcss[i] > report.wcss[i - 1] + 1e-9 * std::max(1.0, report.wcss[i - 1])) {
            std::cerr << "[lechpe] elbow_select: WCSS increased at k = "
                      << report.candidate_ks[i] << " (restart noise)\n";
        }
    }
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_i = 1;
    for (std::size_t i = 1; i + 1 < report.wcss.size(); ++i) {
        const double second_diff =
            report.wcss[i - 1] - 2.0 * report.wcss[i] + report.wcss[i + 1];
        if (second_diff > best) {
            best = second_diff;
            best_i = i;
        }
    }
    report.chosen_k = report.candidate_ks[best_i];
    const double scale = std::max(report.wcss.front(), 1e-300);
    report.curvature = std::max(best, 0.0) / scale;
    report.low_confidence = report.curvature < 0.05;
    return report;
}

}  // namespace lechpe
