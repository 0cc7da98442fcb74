#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "slcf/errors.hpp"
#include "slcf/panel.hpp"

namespace slcf {

/// One weighted regression block: rows of one cluster (individual) with
/// its weighting matrix inverse W = V~^-1.
struct GlsBlock {
    Matrix x;
    Vector y;
    Matrix w;  // T_a x T_a, identity allowed
};

namespace detail {

inline std::string collinear_column_message(const Matrix& xtx) {
    // Column-pivoted QR exposes which columns fall outside the numeric rank.
    Eigen::ColPivHouseholderQR<Matrix> qr(xtx);
    const Index rank = qr.rank();
    std::string msg = "rank-deficient design (rank " + std::to_string(rank) + " of " +
                      std::to_string(xtx.cols()) + "); dependent columns:";
    const auto perm = qr.colsPermutation().indices();
    for (Index j = rank; j < xtx.cols(); ++j)
        msg += " " + std::to_string(perm(j));
    return msg;
}

}  // namespace detail

/// Solves (sum_i X_i' W_i X_i) theta = sum_i X_i' W_i y_i. Throws
/// numeric_error naming the collinear columns when the normal matrix is
/// rank deficient.
inline Vector gls_solve(const std::vector<GlsBlock>& blocks) {
    if (blocks.empty()) throw numeric_error("gls_solve: no blocks");
    const Index p = blocks.front().x.cols();
    Matrix xtx = Matrix::Zero(p, p);
    Vector xty = Vector::Zero(p);
    Index rows = 0;
    for (const auto& b : blocks) {
        const Matrix wx = b.w * b.x;
        xtx.noalias() += b.x.transpose() * wx;
        xty.noalias() += wx.transpose() * b.y;
        rows += b.y.size();
    }
    if (rows < p) throw numeric_error("gls_solve: fewer rows than parameters");
    Eigen::FullPivLU<Matrix> lu(xtx);
    lu.setThreshold(1e-10);
    if (lu.rank() < p) throw numeric_error("gls_solve: " + detail::collinear_column_message(xtx));
    return lu.solve(xty);
}

/// Cluster-robust sandwich pieces normalized by n: J = (1/n) sum X'WX and
/// meat = (1/n) sum phi phi' with per-cluster scores phi_i = X_i'W e_i.
/// Both are symmetric; meat is PSD by construction.
struct SandwichParts {
    Matrix j;
    Matrix meat;
    Index n = 0;  // normalization count (rows by default)
};

inline SandwichParts cluster_sandwich_parts(const std::vector<GlsBlock>& blocks,
                                            const Vector& theta, Index n_override = -1) {
    const Index p = blocks.front().x.cols();
    SandwichParts parts;
    parts.j = Matrix::Zero(p, p);
    parts.meat = Matrix::Zero(p, p);
    Index rows = 0;
    for (const auto& b : blocks) {
        const Matrix wx = b.w * b.x;
        parts.j.noalias() += b.x.transpose() * wx;
        const Vector resid = b.y - b.x * theta;
        const Vector phi = wx.transpose() * resid;
        parts.meat.noalias() += phi * phi.transpose();
        rows += b.y.size();
    }
    parts.n = n_override > 0 ? n_override : rows;
    const double inv_n = 1.0 / static_cast<double>(parts.n);
    parts.j *= inv_n;
    parts.meat *= inv_n;
    parts.j = 0.5 * (parts.j + parts.j.transpose()).eval();
    parts.meat = 0.5 * (parts.meat + parts.meat.transpose()).eval();
    return parts;
}

/// J^-1 meat J^-1; the variance of sqrt(n)(theta_hat - theta). Standard
/// errors are sqrt(diag / n).
inline Matrix sandwich(const Matrix& j, const Matrix& meat) {
    Eigen::FullPivLU<Matrix> lu(j);
    lu.setThreshold(1e-12);
    if (lu.rank() < j.cols()) throw numeric_error("sandwich: singular J");
    const Matrix jinv = lu.inverse();
    Matrix sigma = jinv * meat * jinv;
    sigma = 0.5 * (sigma + sigma.transpose()).eval();
    return sigma;
}

inline Matrix cluster_sandwich(const std::vector<GlsBlock>& blocks, const Vector& theta,
                               Index n_override = -1) {
    const SandwichParts parts = cluster_sandwich_parts(blocks, theta, n_override);
    return sandwich(parts.j, parts.meat);
}

/// 95% normal confidence interval used by every estimator in the project.
struct Ci95 {
    double lo = 0.0, hi = 0.0;
    bool covers(double value) const { return lo <= value && value <= hi; }
};

inline Ci95 ci95(double estimate, double se) {
    return {estimate - 1.96 * se, estimate + 1.96 * se};
}

}  // namespace slcf
