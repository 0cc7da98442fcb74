#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "slcf/errors.hpp"
#include "slcf/estimator.hpp"
#include "slcf/simulation.hpp"

namespace slcf {

constexpr int kSchemaVersion = 1;

/// Machine files carry 17 significant digits so estimates round-trip
/// exactly through text.
inline std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string format_short(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

namespace detail {

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write '" + path + "'");
    out << content;
}

}  // namespace detail

/// Long-format per-replication records:
/// schema_version,replication,estimator,coefficient,estimate,se,ci_lo,ci_hi
inline std::string replications_csv(const McResult& result) {
    std::string s = "schema_version,replication,estimator,coefficient,estimate,se,ci_lo,ci_hi\n";
    for (const auto& rec : result.records) {
        if (rec.failed) continue;
        s += std::to_string(kSchemaVersion) + "," + std::to_string(rec.replication) + "," +
             rec.estimator + ",beta1," + format_full(rec.beta1) + "," + format_full(rec.se) +
             "," + format_full(rec.ci.lo) + "," + format_full(rec.ci.hi) + "\n";
        if (rec.has_rho) {
            const Ci95 rci = ci95(rec.rho, rec.rho_se);
            s += std::to_string(kSchemaVersion) + "," + std::to_string(rec.replication) + "," +
                 rec.estimator + ",rho," + format_full(rec.rho) + "," +
                 format_full(rec.rho_se) + "," + format_full(rci.lo) + "," +
                 format_full(rci.hi) + "\n";
        }
    }
    return s;
}

inline nlohmann::ordered_json stats_json(const EstimatorStats& st) {
    nlohmann::ordered_json j;
    j["name"] = st.name;
    j["n_success"] = st.n_success;
    j["n_failed"] = st.n_failed;
    j["mean_beta1"] = st.mean;
    j["sd"] = st.sd;
    j["bias"] = st.bias;
    j["rmse"] = st.rmse;
    j["coverage"] = st.coverage;
    if (st.has_rho) {
        j["mean_rho"] = st.mean_rho;
        j["rho_reject_rate"] = st.rho_reject_rate;
    }
    return j;
}

inline std::string summary_json(const std::vector<McResult>& results) {
    nlohmann::ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["studies"] = nlohmann::ordered_json::array();
    for (const auto& res : results) {
        nlohmann::ordered_json study;
        study["a"] = res.dgp.a;
        study["n"] = res.dgp.n;
        study["t"] = res.dgp.t;
        study["replications"] = res.replications;
        study["seed"] = res.dgp.seed;
        study["estimators"] = nlohmann::ordered_json::array();
        for (const auto& st : res.stats) study["estimators"].push_back(stats_json(st));
        j["studies"].push_back(std::move(study));
    }
    return j.dump(2) + "\n";
}

/// Plot-ready long format for the a-sweep:
/// schema_version,a,estimator,mean_beta1,sd,bias,rmse,coverage
inline std::string plot_data_csv(const std::vector<McResult>& results) {
    std::string s = "schema_version,a,estimator,mean_beta1,sd,bias,rmse,coverage\n";
    for (const auto& res : results) {
        for (const auto& st : res.stats) {
            s += std::to_string(kSchemaVersion) + "," + format_full(res.dgp.a) + "," + st.name +
                 "," + format_full(st.mean) + "," + format_full(st.sd) + "," +
                 format_full(st.bias) + "," + format_full(st.rmse) + "," +
                 format_full(st.coverage) + "\n";
        }
    }
    return s;
}

inline double split_spread(const SlcfFit& fit, Index j) {
    if (fit.per_split_thetas.size() < 2) return 0.0;
    double mean = 0.0;
    for (const auto& t : fit.per_split_thetas) mean += t(j);
    mean /= static_cast<double>(fit.per_split_thetas.size());
    double ss = 0.0;
    for (const auto& t : fit.per_split_thetas) ss += (t(j) - mean) * (t(j) - mean);
    return std::sqrt(ss / static_cast<double>(fit.per_split_thetas.size() - 1));
}

/// schema_version,coefficient,estimate,se,ci_lo,ci_hi,split_sd
inline std::string coefficients_csv(const SlcfFit& fit) {
    std::string s = "schema_version,coefficient,estimate,se,ci_lo,ci_hi,split_sd\n";
    for (Index j = 0; j < fit.theta.size(); ++j) {
        s += std::to_string(kSchemaVersion) + "," + fit.coef_names[static_cast<std::size_t>(j)] +
             "," + format_full(fit.theta(j)) + "," + format_full(fit.standard_errors(j)) + "," +
             format_full(fit.ci[static_cast<std::size_t>(j)].lo) + "," +
             format_full(fit.ci[static_cast<std::size_t>(j)].hi) + "," +
             format_full(split_spread(fit, j)) + "\n";
    }
    return s;
}

inline std::string estimate_json(const SlcfFit& fit, const std::vector<std::string>& learners) {
    nlohmann::ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["n_total"] = fit.n_total;
    j["coefficients"] = nlohmann::ordered_json::array();
    for (Index c = 0; c < fit.theta.size(); ++c) {
        nlohmann::ordered_json cj;
        cj["name"] = fit.coef_names[static_cast<std::size_t>(c)];
        cj["estimate"] = fit.theta(c);
        cj["se"] = fit.standard_errors(c);
        cj["ci_lo"] = fit.ci[static_cast<std::size_t>(c)].lo;
        cj["ci_hi"] = fit.ci[static_cast<std::size_t>(c)].hi;
        cj["split_sd"] = split_spread(fit, c);
        j["coefficients"].push_back(std::move(cj));
    }
    j["per_split_beta1"] = nlohmann::ordered_json::array();
    for (const auto& t : fit.per_split_thetas) j["per_split_beta1"].push_back(t(0));
    j["first_stage"] = nlohmann::ordered_json::object();
    j["first_stage"]["learners"] = learners;
    if (!fit.first_stage.empty()) {
        const Index m = fit.first_stage.front().weights.size();
        Vector wmean = Vector::Zero(m), rmean = Vector::Zero(m);
        for (const auto& d : fit.first_stage) {
            wmean += d.weights;
            rmean += d.cv_risks;
        }
        wmean /= static_cast<double>(fit.first_stage.size());
        rmean /= static_cast<double>(fit.first_stage.size());
        j["first_stage"]["mean_weights"] = std::vector<double>(wmean.data(), wmean.data() + m);
        j["first_stage"]["mean_cv_risks"] = std::vector<double>(rmean.data(), rmean.data() + m);
    }
    return j.dump(2) + "\n";
}

/// schema_version,estimator,beta1,se,ci_lo,ci_hi
inline std::string compare_csv(const std::vector<BaselineFit>& rows) {
    std::string s = "schema_version,estimator,beta1,se,ci_lo,ci_hi\n";
    for (const auto& r : rows) {
        s += std::to_string(kSchemaVersion) + "," + r.name + "," + format_full(r.beta1()) + "," +
             format_full(r.beta1_se()) + "," + format_full(r.beta1_ci().lo) + "," +
             format_full(r.beta1_ci().hi) + "\n";
    }
    return s;
}

/// Minimal CSV reader used to round-trip the artifact's own outputs.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open '" + path + "'");
    CsvTable t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                cells.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        cells.push_back(cur);
        if (first) {
            t.header = cells;
            first = false;
        } else {
            t.rows.push_back(cells);
        }
    }
    return t;
}

}  // namespace slcf
