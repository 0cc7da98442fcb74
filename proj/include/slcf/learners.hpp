#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "slcf/errors.hpp"
#include "slcf/panel.hpp"
#include "slcf/rng.hpp"

namespace slcf {

enum class LearnerKind { mean, linear, neural_net, random_forest };
enum class NnOutput { linear, logistic };

struct NeuralNetParams {
    int hidden_units = 2;
    NnOutput output = NnOutput::linear;
    int max_iter = 100;
    double learning_rate = 0.1;  // initial backtracking step
    double l2 = 0.0;
};

struct RandomForestParams {
    int n_trees = 100;
    int min_leaf = 5;
    int mtry = 2;
};

struct LearnerSpec {
    LearnerKind kind = LearnerKind::mean;
    NeuralNetParams nn;
    RandomForestParams rf;
    std::uint64_t seed = 0;

    static LearnerSpec mean() { return {}; }
    static LearnerSpec linear() {
        LearnerSpec s;
        s.kind = LearnerKind::linear;
        return s;
    }
    static LearnerSpec neural_net(NeuralNetParams p = {}, std::uint64_t seed = 0) {
        LearnerSpec s;
        s.kind = LearnerKind::neural_net;
        s.nn = p;
        s.seed = seed;
        return s;
    }
    static LearnerSpec random_forest(RandomForestParams p = {}, std::uint64_t seed = 0) {
        LearnerSpec s;
        s.kind = LearnerKind::random_forest;
        s.rf = p;
        s.seed = seed;
        return s;
    }

    std::string name() const {
        switch (kind) {
            case LearnerKind::mean: return "mean";
            case LearnerKind::linear: return "linear";
            case LearnerKind::neural_net: return "neural_net";
            case LearnerKind::random_forest: return "random_forest";
        }
        return "unknown";
    }
};

inline void validate_spec(const LearnerSpec& spec, Index n_features) {
    if (spec.kind == LearnerKind::neural_net) {
        if (spec.nn.hidden_units < 1) throw config_error("hidden_units must be >= 1");
        if (spec.nn.max_iter < 1) throw config_error("max_iter must be >= 1");
        if (!(spec.nn.learning_rate > 0)) throw config_error("learning_rate must be > 0");
    }
    if (spec.kind == LearnerKind::random_forest) {
        if (spec.rf.n_trees < 1) throw config_error("n_trees must be >= 1");
        if (spec.rf.min_leaf < 1) throw config_error("min_leaf must be >= 1");
        if (spec.rf.mtry < 1 || spec.rf.mtry > n_features)
            throw config_error("mtry must be in [1, feature count]");
    }
}

// Per-feature z-scoring applied inside fit; zero-variance features keep
// scale 1 so standardization is always invertible.
struct Standardization {
    Eigen::RowVectorXd x_mean, x_scale;
    double y_mean = 0.0, y_scale = 1.0;

    Matrix apply(const Matrix& x) const {
        Matrix out = x.rowwise() - x_mean;
        for (Index j = 0; j < out.cols(); ++j) out.col(j) /= x_scale(j);
        return out;
    }
};

inline Standardization make_standardization(const Matrix& x, const Vector& y) {
    Standardization s;
    s.x_mean = x.colwise().mean();
    s.x_scale.resize(x.cols());
    const double n = static_cast<double>(x.rows());
    for (Index j = 0; j < x.cols(); ++j) {
        const double var = (x.col(j).array() - s.x_mean(j)).square().sum() / n;
        const double sd = std::sqrt(var);
        s.x_scale(j) = sd > 0 ? sd : 1.0;
    }
    s.y_mean = y.mean();
    const double yvar = (y.array() - s.y_mean).square().sum() / n;
    const double ysd = std::sqrt(yvar);
    s.y_scale = ysd > 0 ? ysd : 1.0;
    return s;
}

namespace detail {

struct TreeNode {
    // leaf iff feature < 0
    int feature = -1;
    double threshold = 0.0;
    double value = 0.0;
    int left = -1, right = -1;
};

struct Tree {
    std::vector<TreeNode> nodes;

    double predict_row(const Eigen::RowVectorXd& x) const {
        int node = 0;
        while (nodes[static_cast<std::size_t>(node)].feature >= 0) {
            const auto& nd = nodes[static_cast<std::size_t>(node)];
            node = x(nd.feature) <= nd.threshold ? nd.left : nd.right;
        }
        return nodes[static_cast<std::size_t>(node)].value;
    }
};

// Exhaustive split search over midpoints of sorted unique values of the
// chosen features; criterion is within-node SSE reduction. Ties broken by
// (feature, threshold) in lexicographic order.
inline int build_tree_node(Tree& tree, const Matrix& x, const Vector& y,
                           std::vector<int>& idx, int begin, int end, int min_leaf,
                           int mtry, Rng& rng) {
    const int n = end - begin;
    double sum = 0.0;
    for (int i = begin; i < end; ++i) sum += y(idx[static_cast<std::size_t>(i)]);
    const double mean = sum / n;

    const int node_id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    tree.nodes.back().value = mean;
    if (n < 2 * min_leaf) return node_id;

    const int p = static_cast<int>(x.cols());
    std::vector<int> features(static_cast<std::size_t>(p));
    for (int j = 0; j < p; ++j) features[static_cast<std::size_t>(j)] = j;
    // Partial Fisher-Yates picks mtry distinct features; evaluated in
    // sorted order so tie-breaking is deterministic.
    for (int j = 0; j < mtry; ++j) {
        const int k = j + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(p - j)));
        std::swap(features[static_cast<std::size_t>(j)], features[static_cast<std::size_t>(k)]);
    }
    features.resize(static_cast<std::size_t>(mtry));
    std::sort(features.begin(), features.end());

    double parent_sse = 0.0;
    for (int i = begin; i < end; ++i) {
        const double d = y(idx[static_cast<std::size_t>(i)]) - mean;
        parent_sse += d * d;
    }

    int best_feature = -1;
    double best_threshold = 0.0, best_gain = 0.0;
    std::vector<std::pair<double, double>> vals;
    vals.reserve(static_cast<std::size_t>(n));
    for (int f : features) {
        vals.clear();
        for (int i = begin; i < end; ++i) {
            const int r = idx[static_cast<std::size_t>(i)];
            vals.emplace_back(x(r, f), y(r));
        }
        std::sort(vals.begin(), vals.end());
        // prefix sums over the sorted order
        double left_sum = 0.0, left_sq = 0.0;
        double total_sq = 0.0;
        for (const auto& v : vals) total_sq += v.second * v.second;
        for (int i = 0; i + 1 < n; ++i) {
            left_sum += vals[static_cast<std::size_t>(i)].second;
            left_sq += vals[static_cast<std::size_t>(i)].second *
                       vals[static_cast<std::size_t>(i)].second;
            if (vals[static_cast<std::size_t>(i)].first ==
                vals[static_cast<std::size_t>(i + 1)].first)
                continue;  // not a unique-value boundary
            const int nl = i + 1, nr = n - nl;
            if (nl < min_leaf || nr < min_leaf) continue;
            const double right_sum = sum - left_sum;
            const double sse_l = left_sq - left_sum * left_sum / nl;
            const double sse_r = (total_sq - left_sq) - right_sum * right_sum / nr;
            const double gain = parent_sse - sse_l - sse_r;
            if (gain > best_gain) {
                best_gain = gain;
                best_feature = f;
                best_threshold = 0.5 * (vals[static_cast<std::size_t>(i)].first +
                                        vals[static_cast<std::size_t>(i + 1)].first);
            }
        }
    }
    if (best_feature < 0) return node_id;

    const auto mid = std::partition(idx.begin() + begin, idx.begin() + end, [&](int r) {
        return x(r, best_feature) <= best_threshold;
    });
    const int split = static_cast<int>(mid - idx.begin());

    tree.nodes[static_cast<std::size_t>(node_id)].feature = best_feature;
    tree.nodes[static_cast<std::size_t>(node_id)].threshold = best_threshold;
    const int left = build_tree_node(tree, x, y, idx, begin, split, min_leaf, mtry, rng);
    const int right = build_tree_node(tree, x, y, idx, split, end, min_leaf, mtry, rng);
    tree.nodes[static_cast<std::size_t>(node_id)].left = left;
    tree.nodes[static_cast<std::size_t>(node_id)].right = right;
    return node_id;
}

template <typename Derived>
inline auto sigmoid(const Eigen::ArrayBase<Derived>& v) {
    return 1.0 / (1.0 + (-v).exp());
}

}  // namespace detail

/// Immutable fitted model with a deterministic predict. Parameters are
/// variant-specific; standardization records the training-time scaling.
class FittedLearner {
public:
    LearnerSpec spec;
    Standardization std_;
    Index n_features = 0;

    // mean
    double mean_value = 0.0;
    // linear (on standardized features/target)
    Vector coef;
    double intercept = 0.0;
    // neural net (standardized space)
    Matrix w1;  // p x h
    Vector b1;  // h
    Vector w2;  // h
    double b2 = 0.0;
    // forest (standardized space)
    std::vector<detail::Tree> trees;

    Vector predict(const Matrix& x) const {
        if (x.cols() != n_features)
            throw dimension_error("predict: expected " + std::to_string(n_features) +
                                  " features, got " + std::to_string(x.cols()));
        // Predictions are computed row by row with fixed-length dot
        // products so results do not depend on how rows are batched.
        switch (spec.kind) {
            case LearnerKind::mean:
                return Vector::Constant(x.rows(), mean_value);
            case LearnerKind::linear: {
                const Matrix xs = std_.apply(x);
                Vector out(x.rows());
                for (Index r = 0; r < x.rows(); ++r)
                    out(r) = coef.dot(xs.row(r)) + intercept;
                return destandardize(out);
            }
            case LearnerKind::neural_net: {
                const Matrix xs = std_.apply(x);
                Vector out(x.rows());
                for (Index r = 0; r < x.rows(); ++r) out(r) = nn_forward_row(xs.row(r));
                if (spec.nn.output == NnOutput::logistic)
                    out = detail::sigmoid(out.array()).matrix();
                return destandardize(out);
            }
            case LearnerKind::random_forest: {
                const Matrix xs = std_.apply(x);
                Vector out = Vector::Zero(x.rows());
                for (const auto& tree : trees)
                    for (Index r = 0; r < xs.rows(); ++r)
                        out(r) += tree.predict_row(xs.row(r));
                out /= static_cast<double>(trees.size());
                return destandardize(out);
            }
        }
        throw numeric_error("predict: unknown learner kind");
    }

    double nn_forward_row(const Eigen::RowVectorXd& xr) const {
        double out = b2;
        for (Index j = 0; j < w2.size(); ++j) {
            const double a = w1.col(j).dot(xr) + b1(j);
            out += w2(j) / (1.0 + std::exp(-a));
        }
        return out;
    }

private:
    Vector destandardize(const Vector& v) const {
        return (v.array() * std_.y_scale + std_.y_mean).matrix();
    }
};

namespace detail {

inline FittedLearner fit_linear(const LearnerSpec& spec, const Matrix& xs, const Vector& ys) {
    FittedLearner m;
    m.spec = spec;
    Matrix design(xs.rows(), xs.cols() + 1);
    design.col(0).setOnes();
    design.rightCols(xs.cols()) = xs;
    const Vector beta = design.colPivHouseholderQr().solve(ys);
    m.intercept = beta(0);
    m.coef = beta.tail(xs.cols());
    return m;
}

// Full-batch gradient descent on mean squared error with a backtracking
// line search: the step starts at learning_rate each iteration and is
// halved until the loss strictly decreases, which makes the accepted loss
// sequence non-increasing. Weights start U(-0.5, 0.5) from the seeded rng
// in the order W1 (column-major), b1, w2, b2.
inline FittedLearner fit_neural_net(const LearnerSpec& spec, const Matrix& xs,
                                    const Vector& ys) {
    FittedLearner m;
    m.spec = spec;
    const Index n = xs.rows(), p = xs.cols();
    const Index h = spec.nn.hidden_units;
    Rng rng(spec.seed);
    m.w1.resize(p, h);
    for (Index j = 0; j < h; ++j)
        for (Index i = 0; i < p; ++i) m.w1(i, j) = rng.uniform(-0.5, 0.5);
    m.b1.resize(h);
    for (Index j = 0; j < h; ++j) m.b1(j) = rng.uniform(-0.5, 0.5);
    m.w2.resize(h);
    for (Index j = 0; j < h; ++j) m.w2(j) = rng.uniform(-0.5, 0.5);
    m.b2 = rng.uniform(-0.5, 0.5);

    const bool logistic = spec.nn.output == NnOutput::logistic;
    const double l2 = spec.nn.l2;
    const double inv_n = 1.0 / static_cast<double>(n);

    auto loss_of = [&](const Matrix& w1, const Vector& b1, const Vector& w2, double b2) {
        Matrix hm = (xs * w1).rowwise() + b1.transpose();
        hm = sigmoid(hm.array()).matrix();
        Vector out = ((hm * w2).array() + b2).matrix();
        if (logistic) out = sigmoid(out.array()).matrix();
        double loss = (out - ys).squaredNorm() * inv_n;
        if (l2 > 0) loss += l2 * (w1.squaredNorm() + w2.squaredNorm());
        return loss;
    };

    double loss = loss_of(m.w1, m.b1, m.w2, m.b2);
    for (int iter = 0; iter < spec.nn.max_iter; ++iter) {
        Matrix hm = (xs * m.w1).rowwise() + m.b1.transpose();
        hm = sigmoid(hm.array()).matrix();
        Vector out = ((hm * m.w2).array() + m.b2).matrix();
        Vector resid;
        if (logistic) {
            const Vector s = sigmoid(out.array()).matrix();
            resid = ((s - ys).array() * s.array() * (1.0 - s.array())).matrix();
        } else {
            resid = out - ys;
        }
        resid *= 2.0 * inv_n;

        Vector g_w2 = hm.transpose() * resid;
        const double g_b2 = resid.sum();
        const Matrix back =
            ((resid * m.w2.transpose()).array() * hm.array() * (1.0 - hm.array())).matrix();
        Matrix g_w1 = xs.transpose() * back;
        Vector g_b1 = back.colwise().sum().transpose();
        if (l2 > 0) {
            g_w1 += 2.0 * l2 * m.w1;
            g_w2 += 2.0 * l2 * m.w2;
        }

        double step = spec.nn.learning_rate;
        bool accepted = false;
        while (step > 1e-14) {
            const Matrix w1c = m.w1 - step * g_w1;
            const Vector b1c = m.b1 - step * g_b1;
            const Vector w2c = m.w2 - step * g_w2;
            const double b2c = m.b2 - step * g_b2;
            const double cand = loss_of(w1c, b1c, w2c, b2c);
            if (cand < loss) {
                m.w1 = w1c;
                m.b1 = b1c;
                m.w2 = w2c;
                m.b2 = b2c;
                loss = cand;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;  // at a local minimum up to step resolution
    }
    return m;
}

inline FittedLearner fit_forest(const LearnerSpec& spec, const Matrix& xs, const Vector& ys) {
    FittedLearner m;
    m.spec = spec;
    const int n = static_cast<int>(xs.rows());
    m.trees.reserve(static_cast<std::size_t>(spec.rf.n_trees));
    for (int t = 0; t < spec.rf.n_trees; ++t) {
        Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(t)));
        std::vector<int> idx(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            idx[static_cast<std::size_t>(i)] =
                static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n)));
        detail::Tree tree;
        detail::build_tree_node(tree, xs, ys, idx, 0, n, spec.rf.min_leaf, spec.rf.mtry, rng);
        m.trees.push_back(std::move(tree));
    }
    return m;
}

}  // namespace detail

/// Fits one base learner. Training happens in standardized space; the
/// returned model de-standardizes its predictions.
inline FittedLearner fit(const LearnerSpec& spec, const Matrix& x, const Vector& y) {
    if (x.rows() == 0 || y.size() == 0) throw data_error("fit: empty training data");
    if (x.rows() != y.size()) throw dimension_error("fit: X rows != y length");
    if (x.cols() < 1) throw dimension_error("fit: need at least one feature");
    if (!x.allFinite() || !y.allFinite()) throw data_error("fit: non-finite training data");
    validate_spec(spec, x.cols());

    const Standardization std_ = make_standardization(x, y);
    const Matrix xs = std_.apply(x);
    const Vector ys = ((y.array() - std_.y_mean) / std_.y_scale).matrix();

    FittedLearner m;
    switch (spec.kind) {
        case LearnerKind::mean:
            m.spec = spec;
            m.mean_value = y.mean();
            break;
        case LearnerKind::linear:
            m = detail::fit_linear(spec, xs, ys);
            break;
        case LearnerKind::neural_net:
            m = detail::fit_neural_net(spec, xs, ys);
            break;
        case LearnerKind::random_forest:
            m = detail::fit_forest(spec, xs, ys);
            break;
    }
    m.std_ = std_;
    m.n_features = x.cols();
    return m;
}

inline Vector predict(const FittedLearner& model, const Matrix& x) { return model.predict(x); }

}  // namespace slcf
