#pragma once
// Scalar objectives: per-angle cross-entropy over softmax bins, expected-value
// angle decoding with MSE regression, their alpha-weighted combination, the
// KL clustering loss against a constant target, and the beta-weighted total.

#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lechpe/autodiff.hpp"
#include "lechpe/bins.hpp"
#include "lechpe/matrix.hpp"

namespace lechpe {

struct LossWeights {
    double alpha = 1.0;  // regression trade-off within each angle loss
    double beta = 0.0;   // clustering weight; 0 is stage-1 semantics

    void validate() const {
        if (alpha < 0.0 || beta < 0.0)
            throw std::invalid_argument("LossWeights: alpha and beta must be >= 0");
    }
};

struct LossReport {
    double l_class_yaw = 0, l_reg_yaw = 0, l_yaw = 0;
    double l_class_pitch = 0, l_reg_pitch = 0, l_pitch = 0;
    double l_class_roll = 0, l_reg_roll = 0, l_roll = 0;
    double l_clustering = 0;
    double beta = 0;
    double total = 0;

    // total must reproduce the beta-weighted sum to 1e-10 relative
    bool decomposition_holds() const {
        const double expect = l_yaw + l_pitch + l_roll + beta * l_clustering;
        const double denom = std::max({std::fabs(expect), std::fabs(total), 1.0});
        return std::fabs(total - expect) <= 1e-10 * denom;
    }
};

inline void require_row_stochastic(const Matrix& m, const char* what, double tol = 1e-6) {
    for (int i = 0; i < m.rows(); ++i) {
        double s = 0.0;
        for (int j = 0; j < m.cols(); ++j) s += m(i, j);
        if (std::fabs(s - 1.0) > tol) {
            throw std::invalid_argument(std::string(what) + ": row " + std::to_string(i) +
                                        " sums to " + std::to_string(s));
        }
    }
}

// mean over the batch of -sum_i t_i log S(y_i). Labels must be one-hot rows.
inline ad::Var cross_entropy(const ad::Var& probs, const Matrix& onehot) {
    require_row_stochastic(probs->value, "cross_entropy: probs");
    if (!probs->value.same_shape(onehot)) {
        throw std::invalid_argument("cross_entropy: label shape " + onehot.shape_str() +
                                    " does not match probs " + probs->value.shape_str());
    }
    for (int i = 0; i < onehot.rows(); ++i) {
        int active = 0;
        for (int j = 0; j < onehot.cols(); ++j) {
            const double t = onehot(i, j);
            if (t == 1.0) ++active;
            else if (t != 0.0)
                throw std::invalid_argument("cross_entropy: label row " + std::to_string(i) +
                                            " is not one-hot");
        }
        if (active != 1) {
            throw std::invalid_argument("cross_entropy: label row " + std::to_string(i) + " has " +
                                        std::to_string(active) + " active bins");
        }
    }
    return ad::cross_entropy_mean(probs, onehot);
}

// Nx1 column of predicted angles in degrees: r * sum_i S(y_i) (i - (1+C)/2)
inline ad::Var expected_angle(const ad::Var& probs, const AngleBinSpec& spec) {
    require_row_stochastic(probs->value, "expected_angle: probs");
    if (probs->value.cols() != spec.num_bins) {
        throw std::invalid_argument("expected_angle: probs have " +
                                    std::to_string(probs->value.cols()) + " columns, spec has " +
                                    std::to_string(spec.num_bins) + " bins");
    }
    return ad::matmul(probs, ad::constant(decode_weights(spec), "decode_weights"));
}

inline ad::Var mse_regression(const ad::Var& pred, const std::vector<double>& gt_deg) {
    if (pred->value.cols() != 1 || pred->value.rows() != static_cast<int>(gt_deg.size())) {
        throw std::invalid_argument("mse_regression: prediction " + pred->value.shape_str() +
                                    " vs " + std::to_string(gt_deg.size()) + " ground truths");
    }
    return ad::mse_mean(pred, Matrix::col_vector(gt_deg));
}

inline Matrix one_hot_bins(const std::vector<double>& angles_deg, const AngleBinSpec& spec) {
    Matrix t(static_cast<int>(angles_deg.size()), spec.num_bins, 0.0);
    for (int i = 0; i < t.rows(); ++i) {
        t(i, angle_to_bin(angles_deg[static_cast<std::size_t>(i)], spec) - 1) = 1.0;
    }
    return t;
}

struct AngleLossTerms {
    ad::Var l_class;
    ad::Var l_reg;
    ad::Var combined;  // l_class + alpha * l_reg
};

// The full per-angle objective: softmax, cross-entropy against the binned
// ground truth, expected-value decoding, MSE against the ground truth in
// degrees. Out-of-range ground-truth angles are rejected.
inline AngleLossTerms angle_loss(const ad::Var& logits, const std::vector<double>& gt_deg,
                                 const AngleBinSpec& spec, double alpha) {
    if (alpha < 0.0) throw std::invalid_argument("angle_loss: alpha must be >= 0");
    auto probs = ad::softmax_rows(logits);
    AngleLossTerms terms;
    terms.l_class = cross_entropy(probs, one_hot_bins(gt_deg, spec));
    terms.l_reg = mse_regression(expected_angle(probs, spec), gt_deg);
    terms.combined = ad::add(terms.l_class, ad::scale(terms.l_reg, alpha));
    return terms;
}

// KL(P || Q) with P a constant target; gradients flow into Q only. Clamped
// Q entries (below 1e-12 where P > 0) are reported on stderr.
inline ad::Var kl_clustering(const ad::Var& q, const Matrix& p) {
    if (!q->value.same_shape(p)) {
        throw std::invalid_argument("kl_clustering: Q " + q->value.shape_str() +
                                    " vs P " + p.shape_str());
    }
    require_row_stochastic(q->value, "kl_clustering: Q");
    require_row_stochastic(p, "kl_clustering: P");
    int clamped = 0;
    auto loss = ad::kl_div_const_target(q, p, &clamped);
    if (clamped > 0) {
        std::cerr << "[lechpe] kl_clustering: clamped " << clamped
                  << " near-zero Q entries with P > 0\n";
    }
    return loss;
}

struct TotalLoss {
    ad::Var node;       // scalar L_total
    LossReport report;  // every component, as plain numbers
};

// L_total = L_yaw + L_pitch + L_roll + beta * L_clustering. Pass a null
// clustering node for stage-1 semantics (beta is then ignored as 0).
inline TotalLoss total_loss(const AngleLossTerms& yaw, const AngleLossTerms& pitch,
                            const AngleLossTerms& roll, const ad::Var& l_clustering,
                            const LossWeights& weights) {
    weights.validate();
    auto angles = ad::add(ad::add(yaw.combined, pitch.combined), roll.combined);
    TotalLoss out;
    if (l_clustering) {
        out.node = ad::add(angles, ad::scale(l_clustering, weights.beta));
        out.report.l_clustering = ad::scalar_value(l_clustering);
        out.report.beta = weights.beta;
    } else {
        out.node = angles;
    }
    out.report.l_class_yaw = ad::scalar_value(yaw.l_class);
    out.report.l_reg_yaw = ad::scalar_value(yaw.l_reg);
    out.report.l_yaw = ad::scalar_value(yaw.combined);
    out.report.l_class_pitch = ad::scalar_value(pitch.l_class);
    out.report.l_reg_pitch = ad::scalar_value(pitch.l_reg);
    out.report.l_pitch = ad::scalar_value(pitch.combined);
    out.report.l_class_roll = ad::scalar_value(roll.l_class);
    out.report.l_reg_roll = ad::scalar_value(roll.l_reg);
    out.report.l_roll = ad::scalar_value(roll.combined);
    out.report.total = ad::scalar_value(out.node);
    return out;
}

}  // namespace lechpe
