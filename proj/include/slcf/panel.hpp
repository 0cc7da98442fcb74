#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "slcf/errors.hpp"

namespace slcf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Observations for one individual: T_i rows of outcome, endogenous
/// regressor, exogenous regressors and instruments.
struct IndividualBlock {
    std::string id;
    Vector y;
    Vector x1;
    Matrix x_exog;  // T_i x (K-1), zero columns allowed
    Matrix z;       // T_i x L

    Index rows() const { return y.size(); }
};

/// Grouped panel. Row counts may differ across individuals (unbalanced
/// panels); column counts may not.
struct PanelDataset {
    std::vector<IndividualBlock> individuals;
    Index n_exog = 0;  // K-1
    Index n_inst = 0;  // L

    Index n_individuals() const { return static_cast<Index>(individuals.size()); }

    // N_T = sum_i T_i
    Index total_rows() const {
        Index n = 0;
        for (const auto& b : individuals) n += b.rows();
        return n;
    }

    bool balanced() const {
        for (const auto& b : individuals)
            if (b.rows() != individuals.front().rows()) return false;
        return !individuals.empty();
    }
};

namespace detail {
inline bool all_finite(const Matrix& m) { return m.allFinite(); }
inline bool all_finite(const Vector& v) { return v.allFinite(); }
}  // namespace detail

/// Checks the dataset invariants: T_i in [2, t_max], consistent column
/// counts, finite entries. Throws data_error with the offending block id.
inline void validate_panel(const PanelDataset& data, Index t_max = 10000) {
    if (data.individuals.empty()) throw data_error("panel has no individuals");
    if (data.n_inst < 1) throw data_error("panel needs at least one instrument column");
    for (const auto& b : data.individuals) {
        const Index t = b.rows();
        if (t < 2) throw data_error("individual '" + b.id + "' has T_i < 2");
        if (t > t_max) throw data_error("individual '" + b.id + "' exceeds T_max");
        if (b.x1.size() != t || b.x_exog.rows() != t || b.z.rows() != t)
            throw data_error("individual '" + b.id + "' has inconsistent row counts");
        if (b.x_exog.cols() != data.n_exog)
            throw data_error("individual '" + b.id + "' has wrong exogenous column count");
        if (b.z.cols() != data.n_inst)
            throw data_error("individual '" + b.id + "' has wrong instrument column count");
        if (!detail::all_finite(b.y) || !detail::all_finite(b.x1) ||
            !detail::all_finite(b.x_exog) || !detail::all_finite(b.z))
            throw data_error("individual '" + b.id + "' has non-finite entries");
    }
}

/// Fixed-effect-removing transformation. FirstDifference maps T rows to
/// T-1 consecutive differences; Within demeans and keeps T rows.
enum class TransformKind { first_difference, within };

inline Index transformed_rows(TransformKind kind, Index t) {
    return kind == TransformKind::first_difference ? t - 1 : t;
}

/// (T-1) x T difference operator: row t maps v to v[t+1] - v[t], so the
/// output is the sequence of consecutive differences v_t - v_{t-1}.
inline Matrix fd_matrix(Index t) {
    if (t < 2) throw dimension_error("fd_matrix requires T >= 2");
    Matrix d = Matrix::Zero(t - 1, t);
    for (Index r = 0; r < t - 1; ++r) {
        d(r, r) = -1.0;
        d(r, r + 1) = 1.0;
    }
    return d;
}

/// T x T demeaning projection I - J/T (symmetric, idempotent, annihilates
/// constants).
inline Matrix within_matrix(Index t) {
    if (t < 2) throw dimension_error("within_matrix requires T >= 2");
    Matrix w = Matrix::Constant(t, t, -1.0 / static_cast<double>(t));
    w.diagonal().array() += 1.0;
    return w;
}

/// Weighting matrix V~ = M M'. For first differences this is the
/// tridiagonal (2, -1) matrix; the within projection is singular, so the
/// within case uses the identity instead.
inline Matrix vtilde_matrix(TransformKind kind, Index t) {
    if (t < 2) throw dimension_error("vtilde_matrix requires T >= 2");
    if (kind == TransformKind::within) return Matrix::Identity(t, t);
    Matrix v = Matrix::Zero(t - 1, t - 1);
    for (Index r = 0; r < t - 1; ++r) {
        v(r, r) = 2.0;
        if (r > 0) v(r, r - 1) = -1.0;
        if (r + 1 < t - 1) v(r, r + 1) = -1.0;
    }
    return v;
}

inline Matrix transform_matrix(TransformKind kind, Index t) {
    return kind == TransformKind::first_difference ? fd_matrix(t) : within_matrix(t);
}

/// One transformed block: M y, M x1, M x_exog plus the attached weighting
/// matrix. Instruments are not transformed here; first-stage features are
/// built from levels (see first_stage_design).
struct TransformedBlock {
    Vector ty;
    Vector tx1;
    Matrix tx_exog;
    Matrix vtilde;
};

struct TransformedPanel {
    std::vector<TransformedBlock> blocks;
    TransformKind kind = TransformKind::first_difference;
};

inline TransformedPanel transform(const PanelDataset& data, TransformKind kind) {
    validate_panel(data);
    TransformedPanel out;
    out.kind = kind;
    out.blocks.reserve(data.individuals.size());
    for (const auto& b : data.individuals) {
        const Matrix m = transform_matrix(kind, b.rows());
        TransformedBlock tb;
        tb.ty = m * b.y;
        tb.tx1 = m * b.x1;
        tb.tx_exog = m * b.x_exog;
        tb.vtilde = vtilde_matrix(kind, b.rows());
        out.blocks.push_back(std::move(tb));
    }
    return out;
}

struct FirstStageOptions {
    // Balanced panels only: condition the within first stage on the full
    // per-period stack instead of (current values, individual means).
    bool within_full_stack = false;
};

/// Feature matrix, target vector and row origin for learning the
/// transformed conditional mean of x1.
///
/// FirstDifference: target dx1_{it}, features (x~_it, x~_{it-1}, z_it,
/// z_{it-1}), one row per (i, t >= 2). Within: target within-transformed
/// x1_{it}, features (x~_it, z_it, per-individual means of x~ and z).
struct FirstStageDesign {
    Matrix X;
    Vector y;
    // (individual index, row within the transformed block)
    std::vector<std::pair<Index, Index>> row_origin;

    Index rows() const { return y.size(); }
};

inline FirstStageDesign first_stage_design(const PanelDataset& data, TransformKind kind,
                                           const FirstStageOptions& opts = {}) {
    validate_panel(data);
    const Index ke = data.n_exog;
    const Index l = data.n_inst;
    FirstStageDesign out;

    Index total = 0;
    for (const auto& b : data.individuals) total += transformed_rows(kind, b.rows());

    Index cols;
    if (kind == TransformKind::first_difference) {
        cols = 2 * (ke + l);
    } else if (opts.within_full_stack) {
        if (!data.balanced())
            throw data_error("within_full_stack requires a balanced panel");
        cols = data.individuals.front().rows() * (ke + l);
    } else {
        cols = 2 * (ke + l);
    }

    out.X.resize(total, cols);
    out.y.resize(total);
    out.row_origin.reserve(total);

    Index row = 0;
    for (Index i = 0; i < data.n_individuals(); ++i) {
        const auto& b = data.individuals[static_cast<std::size_t>(i)];
        const Index t = b.rows();
        if (kind == TransformKind::first_difference) {
            for (Index s = 1; s < t; ++s) {
                out.y(row) = b.x1(s) - b.x1(s - 1);
                Index c = 0;
                for (Index k = 0; k < ke; ++k) out.X(row, c++) = b.x_exog(s, k);
                for (Index k = 0; k < ke; ++k) out.X(row, c++) = b.x_exog(s - 1, k);
                for (Index k = 0; k < l; ++k) out.X(row, c++) = b.z(s, k);
                for (Index k = 0; k < l; ++k) out.X(row, c++) = b.z(s - 1, k);
                out.row_origin.emplace_back(i, s - 1);
                ++row;
            }
        } else {
            const double x1_mean = b.x1.mean();
            const Eigen::RowVectorXd exog_mean =
                ke > 0 ? Eigen::RowVectorXd(b.x_exog.colwise().mean())
                       : Eigen::RowVectorXd(0);
            const Eigen::RowVectorXd z_mean = b.z.colwise().mean();
            for (Index s = 0; s < t; ++s) {
                out.y(row) = b.x1(s) - x1_mean;
                Index c = 0;
                if (opts.within_full_stack) {
                    for (Index p = 0; p < t; ++p)
                        for (Index k = 0; k < ke; ++k) out.X(row, c++) = b.x_exog(p, k);
                    for (Index p = 0; p < t; ++p)
                        for (Index k = 0; k < l; ++k) out.X(row, c++) = b.z(p, k);
                } else {
                    for (Index k = 0; k < ke; ++k) out.X(row, c++) = b.x_exog(s, k);
                    for (Index k = 0; k < l; ++k) out.X(row, c++) = b.z(s, k);
                    for (Index k = 0; k < ke; ++k) out.X(row, c++) = exog_mean(k);
                    for (Index k = 0; k < l; ++k) out.X(row, c++) = z_mean(k);
                }
                out.row_origin.emplace_back(i, s);
                ++row;
            }
        }
    }
    return out;
}

}  // namespace slcf
