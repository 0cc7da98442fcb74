// Command-line front end: SLCF estimation on CSV panels, Monte Carlo
// studies and estimator comparisons, driven by a JSON config file.
//
// Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric
// failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "slcf/baselines.hpp"
#include "slcf/csv.hpp"
#include "slcf/estimator.hpp"
#include "slcf/io.hpp"
#include "slcf/simulation.hpp"

using json = nlohmann::json;
using namespace slcf;

namespace {

void check_keys(const json& obj, const std::string& where,
                const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw config_error(where + ": expected an object");
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key))
            throw config_error(where + ": unknown key '" + key + "'");
}

json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw config_error("config '" + path + "': " + e.what());
    }
}

TransformKind parse_transform(const std::string& s) {
    if (s == "fd" || s == "first_difference") return TransformKind::first_difference;
    if (s == "within") return TransformKind::within;
    throw config_error("unknown transform '" + s + "' (use fd|within)");
}

CsvSchema parse_schema(const json& j) {
    check_keys(j, "data.schema", {"id", "time", "y", "x1", "exog", "inst"});
    CsvSchema s;
    s.id = j.value("id", "id");
    s.time = j.value("time", "time");
    s.y = j.value("y", "y");
    s.x1 = j.value("x1", "x1");
    if (j.contains("exog")) s.exog = j.at("exog").get<std::vector<std::string>>();
    if (j.contains("inst")) s.inst = j.at("inst").get<std::vector<std::string>>();
    if (s.inst.empty()) throw config_error("data.schema.inst must name at least one column");
    return s;
}

std::vector<LearnerSpec> parse_library(const json& cfg) {
    NeuralNetParams nn;
    if (cfg.contains("nn")) {
        const json& j = cfg.at("nn");
        check_keys(j, "nn", {"hidden_units", "output", "max_iter", "learning_rate", "l2"});
        nn.hidden_units = j.value("hidden_units", nn.hidden_units);
        nn.max_iter = j.value("max_iter", nn.max_iter);
        nn.learning_rate = j.value("learning_rate", nn.learning_rate);
        nn.l2 = j.value("l2", nn.l2);
        const std::string out = j.value("output", "linear");
        if (out == "linear")
            nn.output = NnOutput::linear;
        else if (out == "logistic")
            nn.output = NnOutput::logistic;
        else
            throw config_error("nn.output must be linear|logistic");
    }
    RandomForestParams rf;
    if (cfg.contains("rf")) {
        const json& j = cfg.at("rf");
        check_keys(j, "rf", {"n_trees", "min_leaf", "mtry"});
        rf.n_trees = j.value("n_trees", rf.n_trees);
        rf.min_leaf = j.value("min_leaf", rf.min_leaf);
        rf.mtry = j.value("mtry", rf.mtry);
    }
    std::vector<std::string> names = {"mean", "linear", "neural_net"};
    if (cfg.contains("library")) names = cfg.at("library").get<std::vector<std::string>>();
    std::vector<LearnerSpec> specs;
    for (const auto& n : names) {
        if (n == "mean")
            specs.push_back(LearnerSpec::mean());
        else if (n == "linear")
            specs.push_back(LearnerSpec::linear());
        else if (n == "neural_net")
            specs.push_back(LearnerSpec::neural_net(nn));
        else if (n == "random_forest")
            specs.push_back(LearnerSpec::random_forest(rf));
        else
            throw config_error("unknown learner '" + n + "'");
    }
    if (specs.empty()) throw config_error("library must not be empty");
    return specs;
}

SlcfConfig parse_slcf(const json& cfg, TransformKind transform) {
    SlcfConfig c;
    c.transform = transform;
    if (!cfg.is_object()) return c;
    check_keys(cfg, "slcf",
               {"B", "SS", "K", "library", "nn", "rf", "weighting", "aggregate", "seed",
                "within_full_stack", "simplex"});
    c.folds_b = cfg.value("B", c.folds_b);
    c.splits_ss = cfg.value("SS", c.splits_ss);
    c.sl_folds = cfg.value("K", c.sl_folds);
    c.seed = cfg.value("seed", c.seed);
    c.within_full_stack = cfg.value("within_full_stack", c.within_full_stack);
    c.sl_simplex = cfg.value("simplex", c.sl_simplex);
    c.sl_library = parse_library(cfg);
    const std::string w = cfg.value("weighting", "vtilde");
    if (w == "vtilde")
        c.weighting = Weighting::vtilde;
    else if (w == "identity")
        c.weighting = Weighting::identity;
    else
        throw config_error("slcf.weighting must be vtilde|identity");
    const std::string agg = cfg.value("aggregate", "mean");
    if (agg == "mean")
        c.aggregate = Aggregate::mean;
    else if (agg == "median")
        c.aggregate = Aggregate::median;
    else
        throw config_error("slcf.aggregate must be mean|median");
    return c;
}

DgpConfig parse_dgp(const json& j) {
    check_keys(j, "dgp", {"a", "N", "T", "R", "seed", "beta1", "beta2", "rho", "a_grid"});
    DgpConfig d;
    d.a = j.value("a", d.a);
    d.n = j.value("N", d.n);
    d.t = j.value("T", d.t);
    d.seed = j.value("seed", d.seed);
    d.beta1 = j.value("beta1", d.beta1);
    d.beta2 = j.value("beta2", d.beta2);
    d.rho = j.value("rho", d.rho);
    return d;
}

struct CommonArgs {
    std::string config_path;
    std::string out_dir = ".";
    std::string data_path;  // optional CSV override
    std::int64_t seed = -1;
    std::string transform;
    unsigned threads = 0;
};

void write_out(const CommonArgs& args, const std::string& name, const std::string& content) {
    std::filesystem::create_directories(args.out_dir);
    detail::write_file((std::filesystem::path(args.out_dir) / name).string(), content);
}

PanelDataset load_panel(const json& cfg, const CommonArgs& args, TransformKind transform) {
    if (!cfg.contains("data") && args.data_path.empty())
        throw config_error("config needs a 'data' section or a CSV argument");
    CsvSchema schema;
    std::string path = args.data_path;
    if (cfg.contains("data")) {
        check_keys(cfg.at("data"), "data", {"csv", "schema"});
        if (path.empty()) path = cfg.at("data").value("csv", "");
        if (cfg.at("data").contains("schema")) schema = parse_schema(cfg.at("data").at("schema"));
    }
    if (path.empty()) throw config_error("no CSV path given (data.csv or positional argument)");
    CsvLoadOptions opts;
    opts.require_consecutive_time = transform == TransformKind::first_difference;
    return load_csv(path, schema, opts);
}

int cmd_estimate(const CommonArgs& args) {
    const json cfg = load_config(args.config_path);
    check_keys(cfg, "config", {"data", "transform", "slcf"});
    TransformKind transform = parse_transform(
        !args.transform.empty() ? args.transform : cfg.value("transform", "fd"));
    SlcfConfig slcf_cfg = parse_slcf(cfg.value("slcf", json::object()), transform);
    if (args.seed >= 0) slcf_cfg.seed = static_cast<std::uint64_t>(args.seed);

    const PanelDataset data = load_panel(cfg, args, transform);
    const SlcfFit fit = slcf_estimate(data, slcf_cfg);

    std::vector<std::string> learner_names;
    for (const auto& s : slcf_cfg.sl_library) learner_names.push_back(s.name());
    write_out(args, "coefficients.csv", coefficients_csv(fit));
    write_out(args, "estimate.json", estimate_json(fit, learner_names));

    std::printf("SLCF estimate (%s transform, N=%lld individuals, N_T=%lld)\n",
                transform == TransformKind::first_difference ? "first-difference" : "within",
                static_cast<long long>(data.n_individuals()),
                static_cast<long long>(fit.n_total));
    std::printf("%-10s %10s %10s %22s %10s\n", "coef", "estimate", "se", "95% CI",
                "split sd");
    for (Index j = 0; j < fit.theta.size(); ++j)
        std::printf("%-10s %10s %10s [%9s, %9s] %10s\n",
                    fit.coef_names[static_cast<std::size_t>(j)].c_str(),
                    format_short(fit.theta(j)).c_str(),
                    format_short(fit.standard_errors(j)).c_str(),
                    format_short(fit.ci[static_cast<std::size_t>(j)].lo).c_str(),
                    format_short(fit.ci[static_cast<std::size_t>(j)].hi).c_str(),
                    format_short(split_spread(fit, j)).c_str());
    if (!fit.first_stage.empty()) {
        const Index m = fit.first_stage.front().weights.size();
        Vector wmean = Vector::Zero(m), rmean = Vector::Zero(m);
        for (const auto& d : fit.first_stage) {
            wmean += d.weights;
            rmean += d.cv_risks;
        }
        wmean /= static_cast<double>(fit.first_stage.size());
        rmean /= static_cast<double>(fit.first_stage.size());
        std::printf("first stage (mean over %zu fold fits):\n", fit.first_stage.size());
        for (Index j = 0; j < m; ++j)
            std::printf("  %-14s weight %-8s cv risk %s\n",
                        learner_names[static_cast<std::size_t>(j)].c_str(),
                        format_short(wmean(j)).c_str(), format_short(rmean(j)).c_str());
    }
    return 0;
}

int cmd_simulate(const CommonArgs& args) {
    const json cfg = load_config(args.config_path);
    check_keys(cfg, "config", {"mc", "estimators", "slcf"});
    if (!cfg.contains("mc")) throw config_error("config needs an 'mc' section");

    McConfig mc;
    mc.dgp = parse_dgp(cfg.at("mc"));
    mc.replications = cfg.at("mc").value("R", 100);
    mc.threads = args.threads;
    if (args.seed >= 0) mc.dgp.seed = static_cast<std::uint64_t>(args.seed);
    if (cfg.at("mc").contains("a_grid"))
        mc.a_grid = cfg.at("mc").at("a_grid").get<std::vector<double>>();

    const SlcfConfig slcf_base =
        parse_slcf(cfg.value("slcf", json::object()), TransformKind::first_difference);
    std::vector<std::string> names = {"WOLS", "W2SLS", "W2SLS_polynomial", "FDCF", "WCF"};
    if (cfg.contains("estimators")) names = cfg.at("estimators").get<std::vector<std::string>>();
    if (names.empty()) throw config_error("estimators must not be empty");
    for (const auto& n : names) {
        if (n == "WOLS")
            mc.estimators.push_back(EstimatorConfig::make_wols());
        else if (n == "W2SLS")
            mc.estimators.push_back(EstimatorConfig::make_w2sls(1));
        else if (n == "W2SLS_polynomial")
            mc.estimators.push_back(EstimatorConfig::make_w2sls(5));
        else if (n == "FDCF")
            mc.estimators.push_back(
                EstimatorConfig::make_slcf(TransformKind::first_difference, slcf_base));
        else if (n == "WCF")
            mc.estimators.push_back(EstimatorConfig::make_slcf(TransformKind::within, slcf_base));
        else
            throw config_error("unknown estimator '" + n + "'");
    }

    std::vector<McResult> results;
    if (mc.a_grid.empty())
        results.push_back(run_monte_carlo(mc));
    else
        results = sweep_a(mc);

    std::string reps;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const std::string body = replications_csv(results[i]);
        if (i == 0)
            reps = body;
        else
            reps += body.substr(body.find('\n') + 1);  // drop the repeated header
    }
    write_out(args, "replications.csv", reps);
    write_out(args, "summary.json", summary_json(results));
    write_out(args, "plot_data.csv", plot_data_csv(results));

    for (const auto& res : results) {
        std::printf("a=%s N=%lld T=%lld R=%d\n", format_short(res.dgp.a).c_str(),
                    static_cast<long long>(res.dgp.n), static_cast<long long>(res.dgp.t),
                    res.replications);
        std::printf("  %-18s %10s %10s %10s %10s %9s %6s\n", "estimator", "mean", "bias",
                    "sd", "rmse", "coverage", "fail");
        for (const auto& st : res.stats)
            std::printf("  %-18s %10s %10s %10s %10s %8s%% %6d\n", st.name.c_str(),
                        format_short(st.mean).c_str(), format_short(st.bias).c_str(),
                        format_short(st.sd).c_str(), format_short(st.rmse).c_str(),
                        format_short(st.coverage).c_str(), st.n_failed);
    }
    return 0;
}

int cmd_compare(const CommonArgs& args) {
    const json cfg = load_config(args.config_path);
    check_keys(cfg, "config",
               {"data", "dgp", "transform", "estimators", "slcf", "plugin", "equivalence_tol"});
    TransformKind transform = parse_transform(
        !args.transform.empty() ? args.transform : cfg.value("transform", "fd"));

    PanelDataset data;
    if (cfg.contains("dgp")) {
        DgpConfig dgp = parse_dgp(cfg.at("dgp"));
        if (args.seed >= 0) dgp.seed = static_cast<std::uint64_t>(args.seed);
        data = gen_dgp1(dgp).data;
    } else {
        data = load_panel(cfg, args, transform);
    }

    SlcfConfig slcf_cfg = parse_slcf(cfg.value("slcf", json::object()), transform);
    if (args.seed >= 0) slcf_cfg.seed = static_cast<std::uint64_t>(args.seed);
    PluginOptions plugin;
    plugin.library = slcf_cfg.sl_library;
    plugin.sl_folds = slcf_cfg.sl_folds;
    plugin.folds = slcf_cfg.folds_b;
    plugin.seed = slcf_cfg.seed;
    if (cfg.contains("plugin")) {
        check_keys(cfg.at("plugin"), "plugin", {"crossfit", "B"});
        plugin.crossfit = cfg.at("plugin").value("crossfit", true);
        plugin.folds = cfg.at("plugin").value("B", plugin.folds);
    }

    if (!cfg.contains("estimators") || cfg.at("estimators").empty())
        throw config_error("compare needs a nonempty 'estimators' list");
    const auto names = cfg.at("estimators").get<std::vector<std::string>>();

    std::vector<BaselineFit> rows;
    for (const auto& n : names) {
        if (n == "WOLS") {
            rows.push_back(wols(data));
        } else if (n == "W2SLS") {
            rows.push_back(w2sls(data, 1));
        } else if (n == "W2SLS_polynomial") {
            rows.push_back(w2sls(data, 5));
        } else if (n == "SLCF") {
            const SlcfFit fit = slcf_estimate(data, slcf_cfg);
            BaselineFit row;
            row.name = transform == TransformKind::first_difference ? "FDCF" : "WCF";
            row.coef = fit.theta;
            row.se = fit.standard_errors;
            row.ci = fit.ci;
            rows.push_back(std::move(row));
        } else if (n == "SLCF_nocf") {
            rows.push_back(control_function_nocf(data, transform, plugin));
        } else if (n == "PluginIV") {
            PluginOptions p = plugin;
            p.crossfit = true;
            rows.push_back(plugin_iv(data, transform, p));
        } else if (n == "PluginIV_nocf") {
            PluginOptions p = plugin;
            p.crossfit = false;
            rows.push_back(plugin_iv(data, transform, p));
        } else if (n == "Naive2SLS") {
            PluginOptions p = plugin;
            p.crossfit = true;
            rows.push_back(naive_plugin_2sls(data, transform, p));
        } else if (n == "Naive2SLS_nocf") {
            PluginOptions p = plugin;
            p.crossfit = false;
            rows.push_back(naive_plugin_2sls(data, transform, p));
        } else {
            throw config_error("unknown estimator '" + n + "'");
        }
    }

    write_out(args, "compare.csv", compare_csv(rows));

    const double tol = cfg.value("equivalence_tol", 1e-6);
    nlohmann::ordered_json flags = nlohmann::ordered_json::array();
    std::printf("%-18s %10s %10s %22s\n", "estimator", "beta1", "se", "95% CI");
    for (const auto& r : rows)
        std::printf("%-18s %10s %10s [%9s, %9s]\n", r.name.c_str(),
                    format_short(r.beta1()).c_str(), format_short(r.beta1_se()).c_str(),
                    format_short(r.beta1_ci().lo).c_str(),
                    format_short(r.beta1_ci().hi).c_str());
    std::printf("pairwise |delta beta1| (tol %.3g):\n", tol);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = i + 1; j < rows.size(); ++j) {
            const double d = std::abs(rows[i].beta1() - rows[j].beta1());
            const bool equivalent = d <= tol;
            std::printf("  %-18s vs %-18s %12s  %s\n", rows[i].name.c_str(),
                        rows[j].name.c_str(), format_short(d).c_str(),
                        equivalent ? "equivalent" : "distinct");
            nlohmann::ordered_json f;
            f["a"] = rows[i].name;
            f["b"] = rows[j].name;
            f["delta_beta1"] = d;
            f["equivalent"] = equivalent;
            flags.push_back(std::move(f));
        }
    nlohmann::ordered_json out;
    out["schema_version"] = kSchemaVersion;
    out["equivalence_tol"] = tol;
    out["pairs"] = std::move(flags);
    write_out(args, "compare.json", out.dump(2) + "\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Super Learner Control Function estimation for panel data"};
    app.require_subcommand(1);

    CommonArgs args;
    auto add_common = [&](CLI::App* sub, bool with_data) {
        sub->add_option("--config", args.config_path, "JSON config file")->required();
        sub->add_option("--seed", args.seed, "override the config seed");
        sub->add_option("--out", args.out_dir, "output directory (default .)");
        sub->add_option("--threads", args.threads, "worker thread cap");
        if (with_data) {
            sub->add_option("csv", args.data_path, "input CSV (overrides data.csv)");
            sub->add_option("--transform", args.transform, "fd|within override");
        }
    };
    CLI::App* est = app.add_subcommand("estimate", "fit the SLCF estimator on a CSV panel");
    add_common(est, true);
    CLI::App* sim = app.add_subcommand("simulate", "run a Monte Carlo study");
    add_common(sim, false);
    CLI::App* cmp = app.add_subcommand("compare", "side-by-side estimator comparison");
    add_common(cmp, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (est->parsed()) return cmd_estimate(args);
        if (sim->parsed()) return cmd_simulate(args);
        if (cmp->parsed()) return cmd_compare(args);
        return 2;
    } catch (const config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const data_error& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const numeric_error& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }
}
