#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <unordered_map>
#include <vector>

#include "slcf/errors.hpp"
#include "slcf/learners.hpp"
#include "slcf/rng.hpp"

namespace slcf {

/// Assignment of units to K cross-validation folds; sizes differ by at
/// most one.
struct FoldAssignment {
    std::vector<int> fold;  // unit -> fold in [0, K)
    int k = 0;
};

inline FoldAssignment cv_folds(Index n_units, int k, std::uint64_t seed) {
    if (k < 2) throw config_error("cv_folds: K must be >= 2");
    if (n_units < k) throw config_error("cv_folds: need at least K units");
    std::vector<Index> order(static_cast<std::size_t>(n_units));
    std::iota(order.begin(), order.end(), Index{0});
    Rng rng(seed);
    rng.shuffle(order);
    FoldAssignment fa;
    fa.k = k;
    fa.fold.assign(static_cast<std::size_t>(n_units), -1);
    // first (n mod K) folds get the extra unit
    const Index base = n_units / k, extra = n_units % k;
    Index pos = 0;
    for (int f = 0; f < k; ++f) {
        const Index size = base + (f < extra ? 1 : 0);
        for (Index j = 0; j < size; ++j)
            fa.fold[static_cast<std::size_t>(order[static_cast<std::size_t>(pos++)])] = f;
    }
    return fa;
}

/// Least squares over the probability simplex: argmin ||y - Z w||^2 with
/// w >= 0, sum w = 1. Solved exactly by enumerating active sets (the
/// optimum solves the equality-constrained problem on its support); the
/// library is small so 2^m enumeration is cheap.
inline Vector simplex_nnls(const Matrix& z, const Vector& y) {
    const Index m = z.cols();
    if (m < 1) throw config_error("simplex_nnls: need at least one column");
    if (m == 1) return Vector::Ones(1);
    if (m > 20) throw config_error("simplex_nnls: more than 20 columns unsupported");

    const Matrix gram = z.transpose() * z;
    const Vector zty = z.transpose() * y;

    Vector best = Vector::Zero(m);
    double best_obj = std::numeric_limits<double>::infinity();
    bool found = false;

    std::vector<Index> support;
    for (std::uint32_t mask = 1; mask < (1u << m); ++mask) {
        support.clear();
        for (Index j = 0; j < m; ++j)
            if (mask & (1u << j)) support.push_back(j);
        const Index s = static_cast<Index>(support.size());

        // KKT system for min ||y - Z_S w||^2 s.t. 1'w = 1
        Matrix kkt = Matrix::Zero(s + 1, s + 1);
        Vector rhs = Vector::Zero(s + 1);
        for (Index a = 0; a < s; ++a) {
            for (Index b = 0; b < s; ++b) kkt(a, b) = 2.0 * gram(support[a], support[b]);
            kkt(a, s) = 1.0;
            kkt(s, a) = 1.0;
            rhs(a) = 2.0 * zty(support[a]);
        }
        rhs(s) = 1.0;
        const Vector sol = kkt.completeOrthogonalDecomposition().solve(rhs);
        if (!sol.allFinite()) continue;
        // skip inconsistent (singular) systems
        if ((kkt * sol - rhs).norm() > 1e-8 * (1.0 + rhs.norm())) continue;

        bool feasible = true;
        for (Index a = 0; a < s; ++a)
            if (sol(a) < -1e-10) feasible = false;
        if (!feasible) continue;

        Vector w = Vector::Zero(m);
        for (Index a = 0; a < s; ++a) w(support[a]) = std::max(sol(a), 0.0);
        w /= w.sum();
        const double obj = (y - z * w).squaredNorm();
        if (obj < best_obj - 1e-15 || !found) {
            best_obj = obj;
            best = w;
            found = true;
        }
    }
    if (!found) {
        // singular in every direction (e.g. identical columns)
        best = Vector::Constant(m, 1.0 / static_cast<double>(m));
    }
    return best;
}

/// Unconstrained meta-learner variant: plain least squares of y on the
/// level-one predictions.
inline Vector unconstrained_meta(const Matrix& z, const Vector& y) {
    return z.colPivHouseholderQr().solve(y);
}

struct SuperLearnerOptions {
    int folds = 5;
    std::uint64_t seed = 0;
    bool simplex = true;  // false: unconstrained least-squares weights
};

/// Fitted stacking ensemble: base learners refit on the full data, meta
/// weights minimizing cross-validated squared error, and the retained
/// level-one matrix for diagnostics.
struct SuperLearnerModel {
    std::vector<FittedLearner> base_models;
    Vector weights;
    Vector cv_risks;    // per-learner level-one MSE
    Matrix level_one;   // n x m out-of-fold predictions
    bool degenerate = false;  // identical level-one columns; uniform fallback

    Vector predict(const Matrix& x) const {
        Vector out = Vector::Zero(x.rows());
        for (std::size_t j = 0; j < base_models.size(); ++j)
            out += weights(static_cast<Index>(j)) * base_models[j].predict(x);
        return out;
    }

    double level_one_risk(const Vector& y) const {
        return (y - level_one * weights).squaredNorm() / static_cast<double>(y.size());
    }
};

/// Cross-validated stacking. `groups` assigns each row to a unit; rows of
/// one unit always share a fold (pass an empty vector to treat rows as
/// units). Per-fold and refit seeds are derived from `opts.seed` and the
/// learner/fold indices.
inline SuperLearnerModel fit_super_learner(const Matrix& x, const Vector& y,
                                           const std::vector<LearnerSpec>& specs,
                                           const SuperLearnerOptions& opts = {},
                                           const std::vector<Index>& groups = {}) {
    if (specs.empty()) throw config_error("fit_super_learner: empty library");
    if (x.rows() != y.size()) throw dimension_error("fit_super_learner: X rows != y length");

    std::vector<Index> row_unit;
    Index n_units;
    if (groups.empty()) {
        row_unit.resize(static_cast<std::size_t>(x.rows()));
        std::iota(row_unit.begin(), row_unit.end(), Index{0});
        n_units = x.rows();
    } else {
        if (static_cast<Index>(groups.size()) != x.rows())
            throw dimension_error("fit_super_learner: groups size != X rows");
        // relabel units by first appearance
        row_unit.reserve(groups.size());
        std::unordered_map<Index, Index> seen;
        Index next = 0;
        for (Index g : groups) {
            if (g < 0) throw config_error("fit_super_learner: group ids must be non-negative");
            auto [it, inserted] = seen.try_emplace(g, next);
            if (inserted) ++next;
            row_unit.push_back(it->second);
        }
        n_units = next;
    }
    if (n_units < 2 * opts.folds)
        throw config_error("fit_super_learner: need at least 2K units");

    const FoldAssignment fa = cv_folds(n_units, opts.folds, derive_seed(opts.seed, 0xF01D));
    const Index n = x.rows();
    const Index m = static_cast<Index>(specs.size());

    SuperLearnerModel model;
    model.level_one.resize(n, m);

    std::vector<Index> train_rows, test_rows;
    for (int f = 0; f < opts.folds; ++f) {
        train_rows.clear();
        test_rows.clear();
        for (Index r = 0; r < n; ++r) {
            if (fa.fold[static_cast<std::size_t>(row_unit[static_cast<std::size_t>(r)])] == f)
                test_rows.push_back(r);
            else
                train_rows.push_back(r);
        }
        if (test_rows.empty() || train_rows.empty())
            throw numeric_error("fit_super_learner: empty fold");
        Matrix xtr(static_cast<Index>(train_rows.size()), x.cols());
        Vector ytr(static_cast<Index>(train_rows.size()));
        for (std::size_t i = 0; i < train_rows.size(); ++i) {
            xtr.row(static_cast<Index>(i)) = x.row(train_rows[i]);
            ytr(static_cast<Index>(i)) = y(train_rows[i]);
        }
        Matrix xte(static_cast<Index>(test_rows.size()), x.cols());
        for (std::size_t i = 0; i < test_rows.size(); ++i)
            xte.row(static_cast<Index>(i)) = x.row(test_rows[i]);

        for (Index j = 0; j < m; ++j) {
            LearnerSpec spec = specs[static_cast<std::size_t>(j)];
            spec.seed = derive_seed(opts.seed, static_cast<std::uint64_t>(j),
                                    static_cast<std::uint64_t>(f));
            const FittedLearner fitted = fit(spec, xtr, ytr);
            const Vector pred = fitted.predict(xte);
            for (std::size_t i = 0; i < test_rows.size(); ++i)
                model.level_one(test_rows[i], j) = pred(static_cast<Index>(i));
        }
    }

    model.cv_risks.resize(m);
    for (Index j = 0; j < m; ++j)
        model.cv_risks(j) = (y - model.level_one.col(j)).squaredNorm() / static_cast<double>(n);

    // degenerate library: every learner produced the same level-one column
    bool identical = true;
    for (Index j = 1; j < m && identical; ++j)
        if ((model.level_one.col(j) - model.level_one.col(0)).cwiseAbs().maxCoeff() != 0.0)
            identical = false;
    if (m > 1 && identical) {
        model.degenerate = true;
        model.weights = Vector::Constant(m, 1.0 / static_cast<double>(m));
    } else if (opts.simplex) {
        model.weights = simplex_nnls(model.level_one, y);
    } else {
        model.weights = unconstrained_meta(model.level_one, y);
    }

    model.base_models.reserve(static_cast<std::size_t>(m));
    for (Index j = 0; j < m; ++j) {
        LearnerSpec spec = specs[static_cast<std::size_t>(j)];
        spec.seed = derive_seed(opts.seed, static_cast<std::uint64_t>(j), 0xBEEF);
        model.base_models.push_back(fit(spec, x, y));
    }
    return model;
}

inline Vector sl_predict(const SuperLearnerModel& model, const Matrix& x) {
    return model.predict(x);
}

}  // namespace slcf
