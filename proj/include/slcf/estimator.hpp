#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "slcf/errors.hpp"
#include "slcf/gls.hpp"
#include "slcf/panel.hpp"
#include "slcf/rng.hpp"
#include "slcf/super_learner.hpp"

namespace slcf {

enum class Weighting { vtilde, identity };
enum class Aggregate { mean, median };

/// SS repeated partitions of the individual index set into B folds of
/// near-equal size (in individuals).
struct CrossFitPlan {
    int folds_b = 0;
    int splits_ss = 0;
    std::uint64_t seed = 0;
    std::vector<std::vector<int>> assignments;  // [ss][individual] -> fold
};

inline CrossFitPlan make_crossfit_plan(Index n_individuals, int b, int ss,
                                       std::uint64_t seed) {
    if (b < 2) throw config_error("make_crossfit_plan: B must be >= 2");
    if (ss < 1) throw config_error("make_crossfit_plan: SS must be >= 1");
    if (n_individuals < b) throw config_error("make_crossfit_plan: need at least B individuals");
    CrossFitPlan plan;
    plan.folds_b = b;
    plan.splits_ss = ss;
    plan.seed = seed;
    plan.assignments.reserve(static_cast<std::size_t>(ss));
    for (int s = 0; s < ss; ++s)
        plan.assignments.push_back(
            cv_folds(n_individuals, b, derive_seed(seed, 0xCF, static_cast<std::uint64_t>(s)))
                .fold);
    return plan;
}

struct SlcfConfig {
    TransformKind transform = TransformKind::first_difference;
    int folds_b = 5;    // B
    int splits_ss = 10; // SS
    std::vector<LearnerSpec> sl_library;
    int sl_folds = 5;   // K
    Weighting weighting = Weighting::vtilde;
    Aggregate aggregate = Aggregate::mean;
    std::uint64_t seed = 0;
    bool within_full_stack = false;
    bool sl_simplex = true;

    static std::vector<LearnerSpec> default_library() {
        return {LearnerSpec::mean(), LearnerSpec::linear(), LearnerSpec::neural_net()};
    }
};

inline void validate_config(const SlcfConfig& cfg) {
    if (cfg.folds_b < 2) throw config_error("B must be >= 2");
    if (cfg.splits_ss < 1) throw config_error("SS must be >= 1");
    if (cfg.sl_folds < 2) throw config_error("K must be >= 2");
}

/// Out-of-fold first-stage residuals for the individuals of one fold: the
/// super learner is fit on the fold's complement only, so no individual's
/// own rows enter its nuisance fit.
struct FirstStageFoldResult {
    std::vector<std::pair<Index, Vector>> residuals;  // (individual, residual rows)
    Vector weights;
    Vector cv_risks;
    bool degenerate = false;
    std::vector<Index> train_individuals;  // recorded for cross-fit audits
};

inline FirstStageFoldResult first_stage_residuals(const FirstStageDesign& design,
                                                  const std::vector<int>& assignment,
                                                  int fold_b,
                                                  const std::vector<LearnerSpec>& library,
                                                  int sl_folds, bool simplex,
                                                  std::uint64_t seed) {
    std::vector<Index> train_rows, test_rows;
    for (Index r = 0; r < design.rows(); ++r) {
        const Index ind = design.row_origin[static_cast<std::size_t>(r)].first;
        if (assignment[static_cast<std::size_t>(ind)] == fold_b)
            test_rows.push_back(r);
        else
            train_rows.push_back(r);
    }
    if (test_rows.empty()) throw numeric_error("first_stage_residuals: empty fold");
    if (train_rows.empty()) throw numeric_error("first_stage_residuals: empty complement");

    Matrix xtr(static_cast<Index>(train_rows.size()), design.X.cols());
    Vector ytr(static_cast<Index>(train_rows.size()));
    std::vector<Index> groups;
    groups.reserve(train_rows.size());
    FirstStageFoldResult out;
    for (std::size_t i = 0; i < train_rows.size(); ++i) {
        xtr.row(static_cast<Index>(i)) = design.X.row(train_rows[i]);
        ytr(static_cast<Index>(i)) = design.y(train_rows[i]);
        const Index ind = design.row_origin[static_cast<std::size_t>(train_rows[i])].first;
        groups.push_back(ind);
        if (out.train_individuals.empty() || out.train_individuals.back() != ind)
            out.train_individuals.push_back(ind);
    }

    SuperLearnerOptions opts;
    opts.folds = sl_folds;
    opts.seed = seed;
    opts.simplex = simplex;
    const SuperLearnerModel model = fit_super_learner(xtr, ytr, library, opts, groups);
    out.weights = model.weights;
    out.cv_risks = model.cv_risks;
    out.degenerate = model.degenerate;

    Matrix xte(static_cast<Index>(test_rows.size()), design.X.cols());
    for (std::size_t i = 0; i < test_rows.size(); ++i)
        xte.row(static_cast<Index>(i)) = design.X.row(test_rows[i]);
    const Vector pred = model.predict(xte);

    // regroup row residuals per individual, preserving row order
    for (std::size_t i = 0; i < test_rows.size(); ++i) {
        const auto [ind, row_in_block] = design.row_origin[static_cast<std::size_t>(test_rows[i])];
        if (out.residuals.empty() || out.residuals.back().first != ind)
            out.residuals.emplace_back(ind, Vector());
        Vector& v = out.residuals.back().second;
        v.conservativeResize(row_in_block + 1);
        v(row_in_block) = design.y(test_rows[i]) - pred(static_cast<Index>(i));
    }
    return out;
}

/// One fold's second-stage input: transformed outcome, design
/// H~ = [tx1, tX~, tu_hat] and the block weighting matrix.
struct SecondStageBlock {
    Vector ty;
    Matrix h;
    Matrix vtilde;
};

inline std::vector<GlsBlock> to_gls_blocks(const std::vector<SecondStageBlock>& blocks,
                                           Weighting weighting) {
    std::vector<GlsBlock> out;
    out.reserve(blocks.size());
    for (const auto& b : blocks) {
        GlsBlock g;
        g.x = b.h;
        g.y = b.ty;
        g.w = weighting == Weighting::identity
                  ? Matrix::Identity(b.ty.size(), b.ty.size())
                  : Matrix(b.vtilde.llt().solve(Matrix::Identity(b.ty.size(), b.ty.size())));
        out.push_back(std::move(g));
    }
    return out;
}

/// Weighted least squares of ty on H~ across the fold's individuals;
/// equals the solution of the fold's sample moment conditions.
inline Vector second_stage(const std::vector<SecondStageBlock>& blocks,
                           Weighting weighting = Weighting::vtilde) {
    if (blocks.empty()) throw numeric_error("second_stage: no blocks");
    Index rows = 0;
    for (const auto& b : blocks) rows += b.ty.size();
    if (rows < blocks.front().h.cols())
        throw numeric_error("second_stage: fewer rows than coefficients");
    return gls_solve(to_gls_blocks(blocks, weighting));
}

/// Cross-fitted estimate: coefficients (beta1, beta2..., rho), variance
/// with split correction, per-split estimates and first-stage diagnostics.
struct SlcfFit {
    Vector theta;
    Matrix sigma;       // averaged sandwich + split correction
    Vector standard_errors;
    std::vector<Ci95> ci;
    std::vector<Vector> per_split_thetas;
    Matrix correction;  // C
    struct FoldDiagnostics {
        int split = 0, fold = 0;
        Vector weights;
        Vector cv_risks;
        bool degenerate = false;
    };
    std::vector<FoldDiagnostics> first_stage;
    Index n_total = 0;  // N_T
    std::vector<std::string> coef_names;

    double beta1() const { return theta(0); }
    double rho() const { return theta(theta.size() - 1); }
};

/// C = (1/SS) sum_ss (theta_ss - theta)(theta_ss - theta)'. Deviations are
/// taken from the reported aggregate (mean or median).
inline Matrix split_correction(const std::vector<Vector>& per_split_thetas,
                               const Vector& theta) {
    const Index p = theta.size();
    Matrix c = Matrix::Zero(p, p);
    if (per_split_thetas.empty()) return c;
    for (const auto& t : per_split_thetas) {
        const Vector d = t - theta;
        c.noalias() += d * d.transpose();
    }
    c /= static_cast<double>(per_split_thetas.size());
    return c;
}

namespace detail {

inline Vector aggregate_thetas(const std::vector<Vector>& thetas, Aggregate how) {
    const Index p = thetas.front().size();
    Vector out(p);
    if (how == Aggregate::mean) {
        out.setZero();
        for (const auto& t : thetas) out += t;
        out /= static_cast<double>(thetas.size());
        return out;
    }
    std::vector<double> v(thetas.size());
    for (Index j = 0; j < p; ++j) {
        for (std::size_t s = 0; s < thetas.size(); ++s) v[s] = thetas[s](j);
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        out(j) = (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    }
    return out;
}

struct SplitOutcome {
    Vector theta_ss;
    Matrix j_ss;
    Matrix meat_ss;
    std::vector<SlcfFit::FoldDiagnostics> diags;
    // second-stage blocks per fold are kept to re-evaluate the variance at
    // the split aggregate
    std::vector<std::vector<GlsBlock>> fold_blocks;
    std::vector<Index> fold_rows;  // n_{T,b} in original rows
};

}  // namespace detail

/// Averaged per-split sandwich evaluated at theta: J and meat are fold
/// averages of per-individual score outer products (cluster robust).
inline Matrix variance_estimate(const std::vector<std::vector<GlsBlock>>& fold_blocks,
                                const std::vector<Index>& fold_rows, const Vector& theta) {
    const Index p = theta.size();
    Matrix j = Matrix::Zero(p, p), meat = Matrix::Zero(p, p);
    const int b = static_cast<int>(fold_blocks.size());
    for (int f = 0; f < b; ++f) {
        const SandwichParts parts =
            cluster_sandwich_parts(fold_blocks[static_cast<std::size_t>(f)], theta,
                                   fold_rows[static_cast<std::size_t>(f)]);
        j += parts.j;
        meat += parts.meat;
    }
    j /= static_cast<double>(b);
    meat /= static_cast<double>(b);
    return sandwich(j, meat);
}

namespace detail {

inline SplitOutcome run_split(const TransformedPanel& tp, const FirstStageDesign& design,
                              const PanelDataset& data, const std::vector<int>& assignment,
                              const SlcfConfig& cfg, int split_index) {
    const Index p = 1 + data.n_exog + 1;
    SplitOutcome out;
    std::vector<Vector> fold_thetas;

    for (int b = 0; b < cfg.folds_b; ++b) {
        const auto fs = first_stage_residuals(
            design, assignment, b, cfg.sl_library, cfg.sl_folds, cfg.sl_simplex,
            derive_seed(cfg.seed, static_cast<std::uint64_t>(split_index),
                        static_cast<std::uint64_t>(b)));

        std::vector<SecondStageBlock> blocks;
        blocks.reserve(fs.residuals.size());
        Index n_tb = 0;
        for (const auto& [ind, resid] : fs.residuals) {
            const auto& tb = tp.blocks[static_cast<std::size_t>(ind)];
            SecondStageBlock sb;
            sb.ty = tb.ty;
            sb.vtilde = tb.vtilde;
            sb.h.resize(tb.ty.size(), p);
            sb.h.col(0) = tb.tx1;
            if (data.n_exog > 0) sb.h.middleCols(1, data.n_exog) = tb.tx_exog;
            sb.h.col(p - 1) = resid;
            blocks.push_back(std::move(sb));
            n_tb += data.individuals[static_cast<std::size_t>(ind)].rows();
        }
        fold_thetas.push_back(second_stage(blocks, cfg.weighting));
        out.fold_blocks.push_back(to_gls_blocks(blocks, cfg.weighting));
        out.fold_rows.push_back(n_tb);

        SlcfFit::FoldDiagnostics d;
        d.split = split_index;
        d.fold = b;
        d.weights = fs.weights;
        d.cv_risks = fs.cv_risks;
        d.degenerate = fs.degenerate;
        out.diags.push_back(std::move(d));
    }

    out.theta_ss = aggregate_thetas(fold_thetas, Aggregate::mean);
    return out;
}

}  // namespace detail

inline SlcfFit slcf_estimate(const PanelDataset& data, const SlcfConfig& cfg_in) {
    SlcfConfig cfg = cfg_in;
    if (cfg.sl_library.empty()) cfg.sl_library = SlcfConfig::default_library();
    validate_config(cfg);
    validate_panel(data);
    if (cfg.transform == TransformKind::first_difference)
        for (const auto& b : data.individuals)
            if (b.rows() < 2)
                throw data_error("first differences need T_i >= 2 (individual '" + b.id + "')");

    const TransformedPanel tp = transform(data, cfg.transform);
    FirstStageOptions fs_opts;
    fs_opts.within_full_stack = cfg.within_full_stack;
    const FirstStageDesign design = first_stage_design(data, cfg.transform, fs_opts);
    const CrossFitPlan plan =
        make_crossfit_plan(data.n_individuals(), cfg.folds_b, cfg.splits_ss, cfg.seed);

    SlcfFit fit;
    fit.n_total = data.total_rows();
    fit.coef_names.push_back("x1");
    for (Index k = 0; k < data.n_exog; ++k)
        fit.coef_names.push_back("x_exog" + std::to_string(k + 1));
    fit.coef_names.push_back("rho");

    std::vector<detail::SplitOutcome> outcomes;
    outcomes.reserve(static_cast<std::size_t>(cfg.splits_ss));
    for (int s = 0; s < cfg.splits_ss; ++s) {
        try {
            outcomes.push_back(
                detail::run_split(tp, design, data, plan.assignments[static_cast<std::size_t>(s)],
                                  cfg, s));
        } catch (const numeric_error&) {
            // a rank-deficient fold aborts the split; resample the partition
            // once before giving up
            const auto retry = cv_folds(data.n_individuals(), cfg.folds_b,
                                        derive_seed(cfg.seed, 0xCF, static_cast<std::uint64_t>(s),
                                                    0xAB))
                                   .fold;
            outcomes.push_back(detail::run_split(tp, design, data, retry, cfg, s));
        }
    }

    for (auto& o : outcomes) {
        fit.per_split_thetas.push_back(o.theta_ss);
        for (auto& d : o.diags) fit.first_stage.push_back(std::move(d));
    }
    fit.theta = detail::aggregate_thetas(fit.per_split_thetas, cfg.aggregate);
    fit.correction = split_correction(fit.per_split_thetas, fit.theta);

    const Index p = fit.theta.size();
    Matrix sigma_avg = Matrix::Zero(p, p);
    for (const auto& o : outcomes)
        sigma_avg += variance_estimate(o.fold_blocks, o.fold_rows, o.theta_ss);
    sigma_avg /= static_cast<double>(outcomes.size());
    fit.sigma = sigma_avg + fit.correction;

    fit.standard_errors.resize(p);
    for (Index j = 0; j < p; ++j)
        fit.standard_errors(j) =
            std::sqrt(std::max(fit.sigma(j, j), 0.0) / static_cast<double>(fit.n_total));
    for (Index j = 0; j < p; ++j) fit.ci.push_back(ci95(fit.theta(j), fit.standard_errors(j)));
    return fit;
}

/// Numeric Neyman-orthogonality diagnostic. The orthogonalized score is
/// x1' M' A V~^-1 A M omega with A the projection orthogonal to the
/// nuisance-implied control; only A moves with the perturbed nuisance
/// while M omega stays the structural error at theta. For each h in the
/// grid the empirical mean is differentiated by central differences; the
/// naive plug-in score is differentiated the same way for contrast.
struct OrthoBlock {
    Vector tx1;
    Vector ty;
    Matrix tx_exog;  // zero columns allowed
    Vector tu;       // transformed first-stage residual at h = 0
    Vector dir;      // perturbation values per transformed row
    Matrix vinv;     // V~^-1
};

struct OrthoResult {
    std::vector<double> h;
    std::vector<double> orthogonal;  // derivative estimates per h
    std::vector<double> plugin;
};

/// theta = (beta1, beta2..., rho) at (or near) the truth.
inline OrthoResult orthogonality_check(const std::vector<OrthoBlock>& blocks,
                                       const Vector& theta,
                                       const std::vector<double>& h_grid) {
    if (h_grid.empty()) throw config_error("orthogonality_check: empty h grid");
    if (blocks.empty()) throw config_error("orthogonality_check: no blocks");
    const double beta1 = theta(0);
    const double rho = theta(theta.size() - 1);
    const Vector beta2 = theta.segment(1, theta.size() - 2);

    auto mean_scores = [&](double h) {
        double orth = 0.0, plug = 0.0;
        for (const auto& b : blocks) {
            Vector omega = b.ty - b.tx1 * beta1 - rho * b.tu;
            if (b.tx_exog.cols() > 0) omega -= b.tx_exog * beta2;
            const Vector uh = b.tu - h * b.dir;
            const double denom = uh.squaredNorm();
            const Index t = uh.size();
            Matrix a = Matrix::Identity(t, t);
            if (denom > 0) a -= (uh * uh.transpose()) / denom;
            orth += b.tx1.dot(a * (b.vinv * (a * omega)));
            const Vector gh = (b.tx1 - b.tu) + h * b.dir;
            Vector plug_resid = b.ty - gh * beta1;
            if (b.tx_exog.cols() > 0) plug_resid -= b.tx_exog * beta2;
            plug += gh.dot(plug_resid);
        }
        const double inv_n = 1.0 / static_cast<double>(blocks.size());
        return std::pair<double, double>{orth * inv_n, plug * inv_n};
    };

    OrthoResult out;
    for (double h : h_grid) {
        if (!(h > 0)) throw config_error("orthogonality_check: h must be > 0");
        const auto [orth_p, plug_p] = mean_scores(h);
        const auto [orth_m, plug_m] = mean_scores(-h);
        out.h.push_back(h);
        out.orthogonal.push_back((orth_p - orth_m) / (2.0 * h));
        out.plugin.push_back((plug_p - plug_m) / (2.0 * h));
    }
    return out;
}

}  // namespace slcf
