#include <catch2/catch_amalgamated.hpp>

#include "slcf/simulation.hpp"

using namespace slcf;
using Catch::Approx;

TEST_CASE("g_fun evaluates the reduced-form mean exactly") {
    CHECK(g_fun(1.0, 0.0, 0.0) == Approx(0.0).margin(1e-15));
    CHECK(g_fun(2.0, 0.0, 1.0) == Approx(-1.5));            // -2 - 0 + 0.5
    CHECK(g_fun(1.0, 1.0, -1.0) ==
          Approx(-2.0 - 2.0 * std::tanh(1.0)).margin(1e-12));  // ~ -3.52319
    CHECK_THROWS_AS(g_fun(0.0, 1.0, 1.0), config_error);
    CHECK_THROWS_AS(g_fun(-2.0, 1.0, 1.0), config_error);
}

TEST_CASE("dgp sample moments match the uniform-draw design") {
    const DgpConfig cfg{.a = 2.0, .n = 10000, .t = 2, .seed = 31};
    const DgpSample sample = gen_dgp1(cfg);

    // alpha ~ U(-1,1): mean 0, sd 1/sqrt(3); 3-sigma band for the mean
    double alpha_mean = 0.0;
    for (double a : sample.alpha) alpha_mean += a;
    alpha_mean /= static_cast<double>(sample.alpha.size());
    CHECK(std::abs(alpha_mean) < 3.0 / std::sqrt(3.0 * 10000));

    // Var(u) = 1/3
    double u_ss = 0.0;
    Index n_u = 0;
    for (const auto& u : sample.u) {
        u_ss += u.squaredNorm();
        n_u += u.size();
    }
    const double var_u = u_ss / static_cast<double>(n_u);
    CHECK(var_u == Approx(1.0 / 3.0).margin(0.01));

    // Cov(x1, eps) = rho * Var(u) = 0.3
    double cx = 0.0, mx = 0.0, me = 0.0;
    for (Index i = 0; i < cfg.n; ++i) {
        const auto& b = sample.data.individuals[static_cast<std::size_t>(i)];
        for (Index s = 0; s < cfg.t; ++s) {
            mx += b.x1(s);
            me += sample.eps[static_cast<std::size_t>(i)](s);
        }
    }
    mx /= static_cast<double>(n_u);
    me /= static_cast<double>(n_u);
    for (Index i = 0; i < cfg.n; ++i) {
        const auto& b = sample.data.individuals[static_cast<std::size_t>(i)];
        for (Index s = 0; s < cfg.t; ++s)
            cx += (b.x1(s) - mx) * (sample.eps[static_cast<std::size_t>(i)](s) - me);
    }
    cx /= static_cast<double>(n_u);
    CHECK(cx == Approx(0.3).margin(0.03));

    // instrument exogeneity after removing alpha: Cov(dz, deps) ~ 0
    double cov_dz = 0.0;
    for (Index i = 0; i < cfg.n; ++i) {
        const auto& b = sample.data.individuals[static_cast<std::size_t>(i)];
        const double dz = b.z(1, 0) - b.z(0, 0);
        const double de = sample.eps[static_cast<std::size_t>(i)](1) -
                          sample.eps[static_cast<std::size_t>(i)](0);
        cov_dz += dz * de;
    }
    cov_dz /= static_cast<double>(cfg.n);
    CHECK(std::abs(cov_dz) < 0.08);

    // Var(du) = 2/3 (difference of two independent U(-1,1))
    double du_ss = 0.0;
    for (const auto& u : sample.u) {
        const double du = u(1) - u(0);
        du_ss += du * du;
    }
    CHECK(du_ss / static_cast<double>(cfg.n) == Approx(2.0 / 3.0).margin(0.02));
}

TEST_CASE("dgp is deterministic and the g override hook is honored") {
    const DgpConfig cfg{.a = 3.0, .n = 20, .t = 2, .seed = 8};
    const DgpSample s1 = gen_dgp1(cfg);
    const DgpSample s2 = gen_dgp1(cfg);
    for (Index i = 0; i < cfg.n; ++i)
        CHECK((s1.data.individuals[static_cast<std::size_t>(i)].y -
               s2.data.individuals[static_cast<std::size_t>(i)].y)
                  .cwiseAbs()
                  .maxCoeff() == 0.0);

    DgpConfig flat = cfg;
    flat.g_override = [](double, double) { return 0.0; };
    const DgpSample s3 = gen_dgp1(flat);
    // x1 = alpha + u only
    for (Index i = 0; i < 5; ++i) {
        const auto& b = s3.data.individuals[static_cast<std::size_t>(i)];
        for (Index s = 0; s < 2; ++s)
            CHECK(b.x1(s) == Approx(s3.alpha[static_cast<std::size_t>(i)] +
                                    s3.u[static_cast<std::size_t>(i)](s)));
    }
}

TEST_CASE("monte carlo aggregates satisfy the rmse identity and determinism") {
    McConfig cfg;
    cfg.dgp = {.a = 2.0, .n = 60, .t = 2, .seed = 5};
    cfg.replications = 8;
    cfg.estimators = {EstimatorConfig::make_wols(), EstimatorConfig::make_w2sls(1)};
    cfg.threads = 2;

    const McResult res = run_monte_carlo(cfg);
    REQUIRE(res.stats.size() == 2);
    for (const auto& st : res.stats) {
        CHECK(st.n_success == 8);
        CHECK(st.coverage >= 0.0);
        CHECK(st.coverage <= 100.0);
        const double r = static_cast<double>(st.n_success);
        const double lhs = st.rmse * st.rmse;
        const double rhs = st.bias * st.bias + st.sd * st.sd * (r - 1.0) / r;
        CHECK(lhs == Approx(rhs).margin(1e-10));
    }

    // identical config (and threads) reproduces records exactly
    const McResult res2 = run_monte_carlo(cfg);
    REQUIRE(res.records.size() == res2.records.size());
    for (std::size_t i = 0; i < res.records.size(); ++i) {
        CHECK(res.records[i].beta1 == res2.records[i].beta1);
        CHECK(res.records[i].se == res2.records[i].se);
    }

    // single-threaded run is bitwise identical to the threaded one
    McConfig serial = cfg;
    serial.threads = 1;
    const McResult res3 = run_monte_carlo(serial);
    for (std::size_t i = 0; i < res.records.size(); ++i)
        CHECK(res.records[i].beta1 == res3.records[i].beta1);
}

TEST_CASE("replication seeds follow the documented splitting rule") {
    McConfig cfg;
    cfg.dgp = {.a = 2.0, .n = 60, .t = 2, .seed = 99};
    cfg.replications = 4;
    cfg.estimators = {EstimatorConfig::make_wols()};
    const McResult res = run_monte_carlo(cfg);

    // re-run replication 2 in isolation
    DgpConfig dgp = cfg.dgp;
    dgp.seed = derive_seed(cfg.dgp.seed, 2);
    const double beta1 = wols(gen_dgp1(dgp).data).beta1();
    CHECK(res.records[2].beta1 == beta1);
}

TEST_CASE("estimator failures are recorded and excluded with a count") {
    McConfig cfg;
    cfg.dgp = {.a = 2.0, .n = 60, .t = 2, .seed = 7};
    cfg.replications = 4;
    // w2sls with an absurd degree forces a first-stage rank deficiency
    cfg.estimators = {EstimatorConfig::make_wols(), EstimatorConfig::make_w2sls(30)};
    const McResult res = run_monte_carlo(cfg);
    CHECK(res.stats[0].n_failed == 0);
    CHECK(res.stats[1].n_failed == 4);
    CHECK(res.stats[1].n_success == 0);
    for (const auto& rec : res.records)
        if (rec.estimator == "W2SLS_polynomial") CHECK(!rec.error.empty());
}

TEST_CASE("sweep over a reuses the replication seeds per grid point") {
    McConfig cfg;
    cfg.dgp = {.a = 1.0, .n = 60, .t = 2, .seed = 12};
    cfg.replications = 3;
    cfg.estimators = {EstimatorConfig::make_wols()};
    cfg.a_grid = {1.0, 5.0};

    const auto sweep = sweep_a(cfg);
    REQUIRE(sweep.size() == 2);
    const McResult single = run_monte_carlo(cfg);
    for (std::size_t i = 0; i < single.records.size(); ++i)
        CHECK(sweep[0].records[i].beta1 == single.records[i].beta1);
    CHECK(sweep[1].dgp.a == 5.0);
}

