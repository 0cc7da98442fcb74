#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "slcf/baselines.hpp"
#include "slcf/errors.hpp"
#include "slcf/estimator.hpp"
#include "slcf/panel.hpp"
#include "slcf/parallel.hpp"
#include "slcf/rng.hpp"

namespace slcf {

/// Reduced-form mean: -a|z| - 2 tanh(x2) + z / a. Larger `a` raises the
/// nonlinearity and weakens the linear correlation between x1 and z.
inline double g_fun(double a, double x2, double z) {
    if (!(a > 0)) throw config_error("g_fun: a must be > 0");
    return -a * std::abs(z) - 2.0 * std::tanh(x2) + z / a;
}

struct DgpConfig {
    double a = 1.0;
    Index n = 1000;
    Index t = 2;
    double beta1 = 1.0;
    double beta2 = 1.0;
    double rho = 0.9;
    std::uint64_t seed = 0;
    // optional replacement for the reduced-form mean g(x2, z)
    std::function<double(double, double)> g_override;

    double g(double x2, double z) const {
        return g_override ? g_override(x2, z) : g_fun(a, x2, z);
    }
};

inline void validate_dgp(const DgpConfig& cfg) {
    if (cfg.n < 10) throw config_error("dgp: N must be >= 10");
    if (cfg.t < 2) throw config_error("dgp: T must be >= 2");
    if (!(cfg.a > 0)) throw config_error("dgp: a must be > 0");
}

/// Generated panel plus the hidden truth retained for oracle tests.
struct DgpSample {
    PanelDataset data;
    std::vector<double> alpha;  // per individual
    std::vector<Vector> u;      // per individual, length T
    std::vector<Vector> eps;
};

/// Draws one panel. Order per individual: alpha, then per period zeta
/// (x2 noise), nu (z noise), u, zeta~ (eps noise), all from a single
/// stream seeded by cfg.seed.
inline DgpSample gen_dgp1(const DgpConfig& cfg) {
    validate_dgp(cfg);
    Rng rng(cfg.seed);
    DgpSample out;
    out.data.n_exog = 1;
    out.data.n_inst = 1;
    out.data.individuals.reserve(static_cast<std::size_t>(cfg.n));
    for (Index i = 0; i < cfg.n; ++i) {
        const double alpha = rng.uniform(-1.0, 1.0);
        IndividualBlock b;
        b.id = std::to_string(i + 1);
        b.y.resize(cfg.t);
        b.x1.resize(cfg.t);
        b.x_exog.resize(cfg.t, 1);
        b.z.resize(cfg.t, 1);
        Vector u(cfg.t), eps(cfg.t);
        for (Index s = 0; s < cfg.t; ++s) {
            const double zeta = rng.uniform(-2.0, 2.0);
            const double nu = rng.uniform(-2.0, 2.0);
            const double us = rng.uniform(-1.0, 1.0);
            const double zeta2 = rng.uniform(-1.0, 1.0);
            const double x2 = alpha + zeta;
            const double z = alpha + nu;
            const double x1 = cfg.g(x2, z) + alpha + us;
            const double e = cfg.rho * us + zeta2;
            b.x_exog(s, 0) = x2;
            b.z(s, 0) = z;
            b.x1(s) = x1;
            b.y(s) = cfg.beta1 * x1 + cfg.beta2 * x2 + alpha + e;
            u(s) = us;
            eps(s) = e;
        }
        out.alpha.push_back(alpha);
        out.u.push_back(std::move(u));
        out.eps.push_back(std::move(eps));
        out.data.individuals.push_back(std::move(b));
    }
    return out;
}

struct EstimatorConfig {
    enum class Kind { wols, w2sls, slcf, plugin_iv, naive_2sls };
    std::string name;
    Kind kind = Kind::wols;
    int degree = 1;            // w2sls
    SlcfConfig slcf;           // slcf
    PluginOptions plugin;      // plug-in estimators
    TransformKind transform = TransformKind::first_difference;  // plug-ins

    static EstimatorConfig make_wols() {
        EstimatorConfig e;
        e.name = "WOLS";
        e.kind = Kind::wols;
        return e;
    }
    static EstimatorConfig make_w2sls(int degree) {
        EstimatorConfig e;
        e.name = degree == 1 ? "W2SLS" : "W2SLS_polynomial";
        e.kind = Kind::w2sls;
        e.degree = degree;
        return e;
    }
    static EstimatorConfig make_slcf(TransformKind kind, const SlcfConfig& base = {}) {
        EstimatorConfig e;
        e.name = kind == TransformKind::first_difference ? "FDCF" : "WCF";
        e.kind = Kind::slcf;
        e.slcf = base;
        e.slcf.transform = kind;
        return e;
    }
    static EstimatorConfig make_plugin_iv(TransformKind kind, const PluginOptions& opts = {}) {
        EstimatorConfig e;
        e.name = opts.crossfit ? "PluginIV" : "PluginIV_nocf";
        e.kind = Kind::plugin_iv;
        e.plugin = opts;
        e.transform = kind;
        return e;
    }
    static EstimatorConfig make_naive_2sls(TransformKind kind, const PluginOptions& opts = {}) {
        EstimatorConfig e;
        e.name = "Naive2SLS";
        e.kind = Kind::naive_2sls;
        e.plugin = opts;
        e.transform = kind;
        return e;
    }
};

/// Table layout of the coverage study: WOLS, both W2SLS variants and the
/// two control-function estimators.
inline std::vector<EstimatorConfig> standard_estimators(const SlcfConfig& slcf_base = {}) {
    return {EstimatorConfig::make_wols(), EstimatorConfig::make_w2sls(1),
            EstimatorConfig::make_w2sls(5),
            EstimatorConfig::make_slcf(TransformKind::first_difference, slcf_base),
            EstimatorConfig::make_slcf(TransformKind::within, slcf_base)};
}

struct McConfig {
    DgpConfig dgp;
    int replications = 100;
    std::vector<EstimatorConfig> estimators;
    std::vector<double> a_grid;  // optional sweep
    unsigned threads = 0;
};

struct McRecord {
    int replication = 0;
    std::string estimator;
    double beta1 = 0.0;
    double se = 0.0;
    Ci95 ci;
    double rho = 0.0;
    double rho_se = 0.0;
    bool has_rho = false;
    bool failed = false;
    std::string error;
};

struct EstimatorStats {
    std::string name;
    int n_success = 0;
    int n_failed = 0;
    double mean = 0.0;
    double sd = 0.0;
    double bias = 0.0;
    double rmse = 0.0;
    double coverage = 0.0;  // percent
    bool has_rho = false;
    double mean_rho = 0.0;
    double rho_reject_rate = 0.0;  // percent, H0: rho = 0
};

struct McResult {
    DgpConfig dgp;
    int replications = 0;
    std::vector<McRecord> records;       // replication-major, estimator order
    std::vector<EstimatorStats> stats;
};

namespace detail {

inline McRecord run_one_estimator(const PanelDataset& data, const EstimatorConfig& est,
                                  std::uint64_t seed) {
    McRecord rec;
    rec.estimator = est.name;
    switch (est.kind) {
        case EstimatorConfig::Kind::wols: {
            const BaselineFit f = wols(data);
            rec.beta1 = f.beta1();
            rec.se = f.beta1_se();
            rec.ci = f.beta1_ci();
            break;
        }
        case EstimatorConfig::Kind::w2sls: {
            const BaselineFit f = w2sls(data, est.degree);
            rec.beta1 = f.beta1();
            rec.se = f.beta1_se();
            rec.ci = f.beta1_ci();
            break;
        }
        case EstimatorConfig::Kind::slcf: {
            SlcfConfig cfg = est.slcf;
            cfg.seed = seed;
            const SlcfFit f = slcf_estimate(data, cfg);
            rec.beta1 = f.beta1();
            rec.se = f.standard_errors(0);
            rec.ci = f.ci.front();
            rec.has_rho = true;
            rec.rho = f.rho();
            rec.rho_se = f.standard_errors(f.theta.size() - 1);
            break;
        }
        case EstimatorConfig::Kind::plugin_iv: {
            PluginOptions opts = est.plugin;
            opts.seed = seed;
            const BaselineFit f = plugin_iv(data, est.transform, opts);
            rec.beta1 = f.beta1();
            rec.se = f.beta1_se();
            rec.ci = f.beta1_ci();
            break;
        }
        case EstimatorConfig::Kind::naive_2sls: {
            PluginOptions opts = est.plugin;
            opts.seed = seed;
            const BaselineFit f = naive_plugin_2sls(data, est.transform, opts);
            rec.beta1 = f.beta1();
            rec.se = f.beta1_se();
            rec.ci = f.beta1_ci();
            break;
        }
    }
    return rec;
}

}  // namespace detail

/// Runs R replications, each on an independent panel seeded by
/// derive_seed(master, replication), applies every estimator and
/// aggregates bias / sd / rmse / coverage. Failed replications are
/// recorded and excluded from that estimator's aggregates.
inline McResult run_monte_carlo(const McConfig& cfg) {
    if (cfg.replications < 2) throw config_error("run_monte_carlo: R must be >= 2");
    if (cfg.estimators.empty()) throw config_error("run_monte_carlo: no estimators");
    validate_dgp(cfg.dgp);

    const int r = cfg.replications;
    const std::size_t ne = cfg.estimators.size();
    std::vector<McRecord> records(static_cast<std::size_t>(r) * ne);

    parallel_for(static_cast<std::size_t>(r), cfg.threads, [&](std::size_t rep) {
        DgpConfig dgp = cfg.dgp;
        dgp.seed = derive_seed(cfg.dgp.seed, static_cast<std::uint64_t>(rep));
        const DgpSample sample = gen_dgp1(dgp);
        for (std::size_t e = 0; e < ne; ++e) {
            McRecord& rec = records[rep * ne + e];
            try {
                rec = detail::run_one_estimator(
                    sample.data, cfg.estimators[e],
                    derive_seed(dgp.seed, static_cast<std::uint64_t>(e)));
            } catch (const std::exception& ex) {
                rec.estimator = cfg.estimators[e].name;
                rec.failed = true;
                rec.error = ex.what();
            }
            rec.replication = static_cast<int>(rep);
        }
    });

    McResult out;
    out.dgp = cfg.dgp;
    out.replications = r;
    out.records = std::move(records);

    for (std::size_t e = 0; e < ne; ++e) {
        EstimatorStats st;
        st.name = cfg.estimators[e].name;
        std::vector<const McRecord*> ok;
        for (int rep = 0; rep < r; ++rep) {
            const McRecord& rec = out.records[static_cast<std::size_t>(rep) * ne + e];
            if (rec.failed)
                ++st.n_failed;
            else
                ok.push_back(&rec);
        }
        st.n_success = static_cast<int>(ok.size());
        if (!ok.empty()) {
            const double true_beta1 = cfg.dgp.beta1;
            double sum = 0.0;
            for (const auto* rec : ok) sum += rec->beta1;
            st.mean = sum / st.n_success;
            st.bias = st.mean - true_beta1;
            double ss = 0.0, sq_err = 0.0;
            int covered = 0, rho_rejects = 0;
            double rho_sum = 0.0;
            for (const auto* rec : ok) {
                ss += (rec->beta1 - st.mean) * (rec->beta1 - st.mean);
                sq_err += (rec->beta1 - true_beta1) * (rec->beta1 - true_beta1);
                if (rec->ci.covers(true_beta1)) ++covered;
                if (rec->has_rho) {
                    st.has_rho = true;
                    rho_sum += rec->rho;
                    if (rec->rho_se > 0 && std::abs(rec->rho / rec->rho_se) > 1.96)
                        ++rho_rejects;
                }
            }
            st.sd = st.n_success > 1 ? std::sqrt(ss / (st.n_success - 1)) : 0.0;
            st.rmse = std::sqrt(sq_err / st.n_success);
            st.coverage = 100.0 * covered / st.n_success;
            if (st.has_rho) {
                st.mean_rho = rho_sum / st.n_success;
                st.rho_reject_rate = 100.0 * rho_rejects / st.n_success;
            }
        }
        out.stats.push_back(std::move(st));
    }
    return out;
}

/// One Monte Carlo study per grid point with identical replication seeds,
/// for the mean-estimate-versus-a comparison.
inline std::vector<McResult> sweep_a(const McConfig& cfg) {
    if (cfg.a_grid.empty()) throw config_error("sweep_a: empty grid");
    std::vector<McResult> out;
    out.reserve(cfg.a_grid.size());
    for (double a : cfg.a_grid) {
        McConfig point = cfg;
        point.dgp.a = a;
        point.a_grid.clear();
        out.push_back(run_monte_carlo(point));
    }
    return out;
}

}  // namespace slcf
