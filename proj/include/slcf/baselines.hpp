#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "slcf/errors.hpp"
#include "slcf/estimator.hpp"
#include "slcf/gls.hpp"
#include "slcf/panel.hpp"
#include "slcf/super_learner.hpp"

namespace slcf {

/// Comparator estimate: coefficient vector (beta1 first), individual-
/// clustered sandwich standard errors and 95% intervals.
struct BaselineFit {
    std::string name;
    Vector coef;
    Vector se;
    std::vector<Ci95> ci;

    double beta1() const { return coef(0); }
    double beta1_se() const { return se(0); }
    const Ci95& beta1_ci() const { return ci.front(); }
};

namespace detail {

inline void fill_se_ci(BaselineFit& fit, const Matrix& sigma, Index n) {
    const Index p = fit.coef.size();
    fit.se.resize(p);
    for (Index j = 0; j < p; ++j)
        fit.se(j) = std::sqrt(std::max(sigma(j, j), 0.0) / static_cast<double>(n));
    fit.ci.clear();
    for (Index j = 0; j < p; ++j) fit.ci.push_back(ci95(fit.coef(j), fit.se(j)));
}

// Asymmetric sandwich bread^-1 meat bread^-T for instrument-style scores.
inline Matrix asym_sandwich(const Matrix& bread, const Matrix& meat) {
    Eigen::FullPivLU<Matrix> lu(bread);
    lu.setThreshold(1e-12);
    if (lu.rank() < bread.cols()) throw numeric_error("sandwich: singular bread matrix");
    const Matrix binv = lu.inverse();
    Matrix sigma = binv * meat * binv.transpose();
    sigma = 0.5 * (sigma + sigma.transpose()).eval();
    return sigma;
}

// Meat via the shared cluster routine: blocks carry the residuals as
// outcomes and theta = 0, so phi_i = Z_i' e_i.
inline Matrix score_meat(const std::vector<GlsBlock>& blocks, Index n) {
    const Vector zero = Vector::Zero(blocks.front().x.cols());
    return cluster_sandwich_parts(blocks, zero, n).meat;
}

}  // namespace detail

/// OLS of within-transformed y on within-transformed (x1, x~).
inline BaselineFit wols(const PanelDataset& data) {
    validate_panel(data);
    const TransformedPanel tp = transform(data, TransformKind::within);
    std::vector<GlsBlock> blocks;
    blocks.reserve(tp.blocks.size());
    for (const auto& tb : tp.blocks) {
        GlsBlock g;
        g.y = tb.ty;
        g.x.resize(tb.ty.size(), 1 + data.n_exog);
        g.x.col(0) = tb.tx1;
        if (data.n_exog > 0) g.x.rightCols(data.n_exog) = tb.tx_exog;
        g.w = Matrix::Identity(tb.ty.size(), tb.ty.size());
        blocks.push_back(std::move(g));
    }
    BaselineFit fit;
    fit.name = "WOLS";
    fit.coef = gls_solve(blocks);
    const Index n = data.total_rows();
    detail::fill_se_ci(fit, cluster_sandwich(blocks, fit.coef, n), n);
    return fit;
}

struct W2slsOptions {
    // raw per-variable monomials by default; true adds cross-variable
    // interaction monomials up to the same total degree
    bool interactions = false;
};

namespace detail {

// polynomial expansion of (z, x~) in levels, powers 1..degree
inline Matrix polynomial_levels(const IndividualBlock& b, Index n_exog, Index n_inst,
                                int degree, bool interactions) {
    const Index t = b.rows();
    const Index nv = n_inst + n_exog;
    Matrix vars(t, nv);
    vars.leftCols(n_inst) = b.z;
    if (n_exog > 0) vars.rightCols(n_exog) = b.x_exog;

    if (!interactions) {
        Matrix out(t, nv * degree);
        Index c = 0;
        for (Index v = 0; v < nv; ++v) {
            Vector p = vars.col(v);
            for (int d = 1; d <= degree; ++d) {
                out.col(c++) = p;
                if (d < degree) p = p.cwiseProduct(vars.col(v));
            }
        }
        return out;
    }

    // multi-indices with 1 <= total degree <= degree, lexicographic order
    std::vector<std::vector<int>> exps;
    std::vector<int> cur(static_cast<std::size_t>(nv), 0);
    auto rec = [&](auto&& self, Index v, int remaining) -> void {
        if (v == nv) {
            int total = 0;
            for (int e : cur) total += e;
            if (total >= 1) exps.push_back(cur);
            return;
        }
        for (int e = 0; e <= remaining; ++e) {
            cur[static_cast<std::size_t>(v)] = e;
            self(self, v + 1, remaining - e);
        }
        cur[static_cast<std::size_t>(v)] = 0;
    };
    rec(rec, 0, degree);

    Matrix out(t, static_cast<Index>(exps.size()));
    for (std::size_t c = 0; c < exps.size(); ++c) {
        Vector col = Vector::Ones(t);
        for (Index v = 0; v < nv; ++v)
            for (int e = 0; e < exps[c][static_cast<std::size_t>(v)]; ++e)
                col = col.cwiseProduct(vars.col(v));
        out.col(static_cast<Index>(c)) = col;
    }
    return out;
}

}  // namespace detail

/// Two-stage least squares on within-transformed data. The instrument set
/// is the polynomial expansion of (z, x~) up to `degree`, expanded in
/// levels and then demeaned.
inline BaselineFit w2sls(const PanelDataset& data, int degree, const W2slsOptions& opts = {}) {
    validate_panel(data);
    if (degree < 1) throw config_error("w2sls: degree must be >= 1");

    const Index p = 1 + data.n_exog;
    std::vector<Matrix> xs, zs;
    std::vector<Vector> ys;
    Index n_rows = 0, n_inst_cols = 0;
    for (const auto& b : data.individuals) {
        const Matrix w = within_matrix(b.rows());
        Matrix x(b.rows(), p);
        x.col(0) = w * b.x1;
        if (data.n_exog > 0) x.rightCols(data.n_exog) = w * b.x_exog;
        const Matrix inst =
            w * detail::polynomial_levels(b, data.n_exog, data.n_inst, degree,
                                          opts.interactions);
        xs.push_back(std::move(x));
        zs.push_back(inst);
        ys.push_back(w * b.y);
        n_rows += b.rows();
        n_inst_cols = inst.cols();
    }
    if (n_inst_cols < p) throw numeric_error("w2sls: fewer instruments than regressors");

    Matrix ztz = Matrix::Zero(n_inst_cols, n_inst_cols);
    Matrix ztx = Matrix::Zero(n_inst_cols, p);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        ztz.noalias() += zs[i].transpose() * zs[i];
        ztx.noalias() += zs[i].transpose() * xs[i];
    }
    Eigen::FullPivLU<Matrix> lu(ztz);
    lu.setThreshold(1e-10);
    if (lu.rank() < n_inst_cols)
        throw numeric_error("w2sls: first-stage rank deficiency in the instrument set");
    const Matrix proj = lu.solve(ztx);  // (Z'Z)^-1 Z'X

    // second stage on fitted regressors
    std::vector<GlsBlock> fitted;
    fitted.reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        GlsBlock g;
        g.x = zs[i] * proj;
        g.y = ys[i];
        g.w = Matrix::Identity(g.y.size(), g.y.size());
        fitted.push_back(std::move(g));
    }
    BaselineFit fit;
    fit.name = degree == 1 ? "W2SLS" : "W2SLS_polynomial";
    fit.coef = gls_solve(fitted);

    // classical 2SLS clustered variance: residuals from the structural
    // regressors, scores from the fitted ones
    std::vector<GlsBlock> score_blocks;
    score_blocks.reserve(xs.size());
    Matrix bread = Matrix::Zero(p, p);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        GlsBlock g;
        g.x = fitted[i].x;
        g.y = ys[i] - xs[i] * fit.coef;
        g.w = Matrix::Identity(g.y.size(), g.y.size());
        bread.noalias() += fitted[i].x.transpose() * fitted[i].x;
        score_blocks.push_back(std::move(g));
    }
    bread /= static_cast<double>(n_rows);
    const Matrix meat = detail::score_meat(score_blocks, n_rows);
    detail::fill_se_ci(fit, detail::asym_sandwich(bread, meat), n_rows);
    return fit;
}

/// Shared first-stage machinery for the plug-in estimators: out-of-fold
/// super-learner predictions of the transformed endogenous regressor
/// (or a single full-sample fit when crossfit is off).
struct PluginOptions {
    bool crossfit = true;
    int folds = 5;  // B
    std::vector<LearnerSpec> library = SlcfConfig::default_library();
    int sl_folds = 5;
    bool sl_simplex = true;
    std::uint64_t seed = 0;
    bool within_full_stack = false;
};

struct FirstStagePredictions {
    std::vector<Vector> ghat;  // per individual, aligned with transformed rows
    std::vector<int> fold;     // per individual; all zero when crossfit is off
    int n_folds = 1;
};

inline FirstStagePredictions plugin_first_stage(const PanelDataset& data, TransformKind kind,
                                                const PluginOptions& opts) {
    FirstStageOptions fs_opts;
    fs_opts.within_full_stack = opts.within_full_stack;
    const FirstStageDesign design = first_stage_design(data, kind, fs_opts);
    const Index n_ind = data.n_individuals();

    FirstStagePredictions out;
    out.ghat.resize(static_cast<std::size_t>(n_ind));
    out.fold.assign(static_cast<std::size_t>(n_ind), 0);
    for (Index i = 0; i < n_ind; ++i)
        out.ghat[static_cast<std::size_t>(i)] =
            Vector::Zero(transformed_rows(kind, data.individuals[static_cast<std::size_t>(i)].rows()));

    if (!opts.crossfit) {
        std::vector<Index> groups;
        groups.reserve(static_cast<std::size_t>(design.rows()));
        for (const auto& [ind, row] : design.row_origin) groups.push_back(ind);
        SuperLearnerOptions sl_opts;
        sl_opts.folds = opts.sl_folds;
        sl_opts.seed = derive_seed(opts.seed, 0x6);
        sl_opts.simplex = opts.sl_simplex;
        const SuperLearnerModel model =
            fit_super_learner(design.X, design.y, opts.library, sl_opts, groups);
        const Vector pred = model.predict(design.X);
        for (Index r = 0; r < design.rows(); ++r) {
            const auto [ind, row] = design.row_origin[static_cast<std::size_t>(r)];
            out.ghat[static_cast<std::size_t>(ind)](row) = pred(r);
        }
        return out;
    }

    out.n_folds = opts.folds;
    const auto assignment = cv_folds(n_ind, opts.folds, derive_seed(opts.seed, 0xCF, 0)).fold;
    for (Index i = 0; i < n_ind; ++i)
        out.fold[static_cast<std::size_t>(i)] = assignment[static_cast<std::size_t>(i)];
    for (int b = 0; b < opts.folds; ++b) {
        const auto fs =
            first_stage_residuals(design, assignment, b, opts.library, opts.sl_folds,
                                  opts.sl_simplex, derive_seed(opts.seed, 0, static_cast<std::uint64_t>(b)));
        // predictions = target - residual
        for (const auto& [ind, resid] : fs.residuals) {
            const auto& block = data.individuals[static_cast<std::size_t>(ind)];
            const Matrix m = transform_matrix(kind, block.rows());
            const Vector tx1 = m * block.x1;
            out.ghat[static_cast<std::size_t>(ind)] = tx1 - resid;
        }
    }
    return out;
}

namespace detail {

struct IvParts {
    std::vector<Matrix> z;  // instruments per individual: [ghat, tX~]
    std::vector<Matrix> x;  // regressors: [tx1, tX~]
    std::vector<Vector> y;
    std::vector<int> fold;
    int n_folds = 1;
    Index n_rows = 0;  // N_T
};

inline IvParts build_iv_parts(const PanelDataset& data, TransformKind kind,
                              const FirstStagePredictions& fs) {
    IvParts parts;
    parts.fold = fs.fold;
    parts.n_folds = fs.n_folds;
    const TransformedPanel tp = transform(data, kind);
    const Index p = 1 + data.n_exog;
    for (Index i = 0; i < data.n_individuals(); ++i) {
        const auto& tb = tp.blocks[static_cast<std::size_t>(i)];
        Matrix z(tb.ty.size(), p), x(tb.ty.size(), p);
        z.col(0) = fs.ghat[static_cast<std::size_t>(i)];
        x.col(0) = tb.tx1;
        if (data.n_exog > 0) {
            z.rightCols(data.n_exog) = tb.tx_exog;
            x.rightCols(data.n_exog) = tb.tx_exog;
        }
        parts.z.push_back(std::move(z));
        parts.x.push_back(std::move(x));
        parts.y.push_back(tb.ty);
        parts.n_rows += data.individuals[static_cast<std::size_t>(i)].rows();
    }
    return parts;
}

inline Vector solve_iv_fold(const IvParts& parts, const std::vector<Index>& members) {
    const Index p = parts.x.front().cols();
    Matrix ztx = Matrix::Zero(p, p);
    Vector zty = Vector::Zero(p);
    for (Index i : members) {
        ztx.noalias() += parts.z[static_cast<std::size_t>(i)].transpose() *
                         parts.x[static_cast<std::size_t>(i)];
        zty.noalias() += parts.z[static_cast<std::size_t>(i)].transpose() *
                         parts.y[static_cast<std::size_t>(i)];
    }
    Eigen::JacobiSVD<Matrix> svd(ztx);
    const double smax = svd.singularValues()(0);
    const double smin = svd.singularValues()(svd.singularValues().size() - 1);
    if (!(smax > 0) || smin < 1e-10 * smax)
        throw numeric_error("plug-in estimator: weak fitted instrument (near-singular Z'X)");
    return ztx.fullPivLu().solve(zty);
}

inline BaselineFit finish_iv(const IvParts& parts, const std::string& name,
                             const Vector& beta) {
    const Index p = parts.x.front().cols();
    BaselineFit fit;
    fit.name = name;
    fit.coef = beta;
    Matrix bread = Matrix::Zero(p, p);
    std::vector<GlsBlock> score_blocks;
    for (std::size_t i = 0; i < parts.x.size(); ++i) {
        bread.noalias() += parts.z[i].transpose() * parts.x[i];
        GlsBlock g;
        g.x = parts.z[i];
        g.y = parts.y[i] - parts.x[i] * beta;
        g.w = Matrix::Identity(g.y.size(), g.y.size());
        score_blocks.push_back(std::move(g));
    }
    bread /= static_cast<double>(parts.n_rows);
    const Matrix meat = score_meat(score_blocks, parts.n_rows);
    fill_se_ci(fit, asym_sandwich(bread, meat), parts.n_rows);
    return fit;
}

}  // namespace detail

/// IV estimator instrumenting tx1 with the super-learner first-stage fit;
/// per-fold solutions averaged under cross-fitting.
inline BaselineFit plugin_iv(const PanelDataset& data, TransformKind kind,
                             const PluginOptions& opts = {}) {
    validate_panel(data);
    const FirstStagePredictions fs = plugin_first_stage(data, kind, opts);
    const detail::IvParts parts = detail::build_iv_parts(data, kind, fs);

    Vector beta = Vector::Zero(parts.x.front().cols());
    for (int b = 0; b < parts.n_folds; ++b) {
        std::vector<Index> members;
        for (Index i = 0; i < data.n_individuals(); ++i)
            if (parts.fold[static_cast<std::size_t>(i)] == b) members.push_back(i);
        beta += detail::solve_iv_fold(parts, members);
    }
    beta /= static_cast<double>(parts.n_folds);
    return detail::finish_iv(parts, opts.crossfit ? "PluginIV" : "PluginIV_nocf", beta);
}

/// Regression of the transformed outcome on the first-stage predictions
/// (plus exogenous regressors); per-fold solutions averaged under
/// cross-fitting.
inline BaselineFit naive_plugin_2sls(const PanelDataset& data, TransformKind kind,
                                     const PluginOptions& opts = {}) {
    validate_panel(data);
    const FirstStagePredictions fs = plugin_first_stage(data, kind, opts);
    detail::IvParts parts = detail::build_iv_parts(data, kind, fs);
    // OLS on [ghat, tX~]: regressors and instruments coincide
    parts.x = parts.z;

    Vector beta = Vector::Zero(parts.x.front().cols());
    for (int b = 0; b < parts.n_folds; ++b) {
        std::vector<Index> members;
        for (Index i = 0; i < data.n_individuals(); ++i)
            if (parts.fold[static_cast<std::size_t>(i)] == b) members.push_back(i);
        beta += detail::solve_iv_fold(parts, members);
    }
    beta /= static_cast<double>(parts.n_folds);
    return detail::finish_iv(parts, opts.crossfit ? "Naive2SLS" : "Naive2SLS_nocf", beta);
}

/// Full-sample control-function fit (single partition, in-sample
/// residuals). This is the no-cross-fitting regime of the comparison
/// theorems, where the control-function, IV and naive fits collapse to the
/// same value when the first stage is a full-sample least-squares fit.
inline BaselineFit control_function_nocf(const PanelDataset& data, TransformKind kind,
                                         const PluginOptions& opts_in = {},
                                         Weighting weighting = Weighting::identity) {
    validate_panel(data);
    PluginOptions opts = opts_in;
    opts.crossfit = false;
    const FirstStagePredictions fs = plugin_first_stage(data, kind, opts);
    const TransformedPanel tp = transform(data, kind);
    std::vector<SecondStageBlock> blocks;
    Index n_rows = 0;
    for (Index i = 0; i < data.n_individuals(); ++i) {
        const auto& tb = tp.blocks[static_cast<std::size_t>(i)];
        SecondStageBlock sb;
        sb.ty = tb.ty;
        sb.vtilde = tb.vtilde;
        sb.h.resize(tb.ty.size(), 2 + data.n_exog);
        sb.h.col(0) = tb.tx1;
        if (data.n_exog > 0) sb.h.middleCols(1, data.n_exog) = tb.tx_exog;
        sb.h.col(1 + data.n_exog) = tb.tx1 - fs.ghat[static_cast<std::size_t>(i)];
        blocks.push_back(std::move(sb));
        n_rows += data.individuals[static_cast<std::size_t>(i)].rows();
    }
    BaselineFit fit;
    fit.name = "SLCF_nocf";
    fit.coef = second_stage(blocks, weighting);
    const auto gls_blocks = to_gls_blocks(blocks, weighting);
    detail::fill_se_ci(fit, cluster_sandwich(gls_blocks, fit.coef, n_rows), n_rows);
    return fit;
}

}  // namespace slcf
