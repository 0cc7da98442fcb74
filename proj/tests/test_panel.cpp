#include <catch2/catch_amalgamated.hpp>

#include "slcf/panel.hpp"
#include "slcf/rng.hpp"

using namespace slcf;
using Catch::Approx;

namespace {

PanelDataset random_panel(Index n, Index t_min, Index t_max, Index n_exog, Index n_inst,
                          std::uint64_t seed) {
    Rng rng(seed);
    PanelDataset data;
    data.n_exog = n_exog;
    data.n_inst = n_inst;
    for (Index i = 0; i < n; ++i) {
        const Index t = t_min + static_cast<Index>(rng.next_below(
                                    static_cast<std::uint64_t>(t_max - t_min + 1)));
        IndividualBlock b;
        b.id = std::to_string(i);
        b.y.resize(t);
        b.x1.resize(t);
        b.x_exog.resize(t, n_exog);
        b.z.resize(t, n_inst);
        for (Index s = 0; s < t; ++s) {
            b.y(s) = rng.uniform(-3, 3);
            b.x1(s) = rng.uniform(-3, 3);
            for (Index k = 0; k < n_exog; ++k) b.x_exog(s, k) = rng.uniform(-3, 3);
            for (Index k = 0; k < n_inst; ++k) b.z(s, k) = rng.uniform(-3, 3);
        }
        data.individuals.push_back(std::move(b));
    }
    return data;
}

}  // namespace

TEST_CASE("fd_matrix produces consecutive differences") {
    const Matrix d = fd_matrix(3);
    Vector v(3);
    v << 1, 3, 6;
    const Vector out = d * v;
    REQUIRE(out.size() == 2);
    CHECK(out(0) == Approx(2.0));
    CHECK(out(1) == Approx(3.0));

    Vector c(2);
    c << 5, 5;
    CHECK((fd_matrix(2) * c)(0) == Approx(0.0));

    for (Index t : {2, 3, 5, 9}) {
        const Vector row_sums = fd_matrix(t).rowwise().sum();
        CHECK(row_sums.cwiseAbs().maxCoeff() == Approx(0.0).margin(1e-15));
    }
    CHECK_THROWS_AS(fd_matrix(1), dimension_error);
}

TEST_CASE("within_matrix demeans, is symmetric idempotent of rank T-1") {
    Vector v(3);
    v << 1, 3, 5;
    const Vector out = within_matrix(3) * v;
    CHECK(out(0) == Approx(-2.0));
    CHECK(out(1) == Approx(0.0).margin(1e-12));
    CHECK(out(2) == Approx(2.0));

    for (Index t : {2, 3, 4}) {
        const Matrix w = within_matrix(t);
        CHECK((w * w - w).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((w - w.transpose()).cwiseAbs().maxCoeff() < 1e-15);
        CHECK((w * Vector::Constant(t, 7.5)).cwiseAbs().maxCoeff() < 1e-12);
        // eigenvalues: T-1 ones and one zero
        Eigen::SelfAdjointEigenSolver<Matrix> eig(w);
        const Vector ev = eig.eigenvalues();
        CHECK(std::abs(ev(0)) < 1e-10);
        for (Index j = 1; j < t; ++j) CHECK(ev(j) == Approx(1.0).margin(1e-10));
    }
    CHECK_THROWS_AS(within_matrix(1), dimension_error);
}

TEST_CASE("vtilde matches D D' for first differences, identity for within") {
    const Matrix v3 = vtilde_matrix(TransformKind::first_difference, 3);
    Matrix expect(2, 2);
    expect << 2, -1, -1, 2;
    CHECK((v3 - expect).cwiseAbs().maxCoeff() < 1e-15);

    const Matrix v2 = vtilde_matrix(TransformKind::first_difference, 2);
    REQUIRE(v2.rows() == 1);
    CHECK(v2(0, 0) == Approx(2.0));

    CHECK((vtilde_matrix(TransformKind::within, 3) - Matrix::Identity(3, 3))
              .cwiseAbs()
              .maxCoeff() == 0.0);

    for (Index t : {2, 3, 4, 7}) {
        const Matrix d = fd_matrix(t);
        CHECK((vtilde_matrix(TransformKind::first_difference, t) - d * d.transpose())
                  .cwiseAbs()
                  .maxCoeff() < 1e-12);
    }
}

TEST_CASE("transform removes per-individual constants and is linear") {
    const PanelDataset data = random_panel(12, 2, 5, 2, 1, 42);

    for (TransformKind kind : {TransformKind::first_difference, TransformKind::within}) {
        const TransformedPanel tp = transform(data, kind);

        // adding any per-individual constant to any column leaves the
        // transformed outcome unchanged
        PanelDataset shifted = data;
        Rng rng(7);
        for (auto& b : shifted.individuals) {
            const double c = rng.uniform(-10, 10);
            b.y.array() += c;
            b.x1.array() += rng.uniform(-10, 10);
            for (Index k = 0; k < shifted.n_exog; ++k)
                b.x_exog.col(k).array() += rng.uniform(-10, 10);
        }
        const TransformedPanel tp2 = transform(shifted, kind);
        for (std::size_t i = 0; i < tp.blocks.size(); ++i) {
            CHECK((tp.blocks[i].ty - tp2.blocks[i].ty).cwiseAbs().maxCoeff() < 1e-12);
            CHECK((tp.blocks[i].tx1 - tp2.blocks[i].tx1).cwiseAbs().maxCoeff() < 1e-12);
        }

        // linearity: transform(2 X + 3 Y) = 2 transform(X) + 3 transform(Y)
        PanelDataset combo = data;
        const PanelDataset other = random_panel(12, 2, 5, 2, 1, 43);
        bool shapes_match = true;
        for (std::size_t i = 0; i < combo.individuals.size(); ++i)
            if (other.individuals[i].rows() != combo.individuals[i].rows())
                shapes_match = false;
        if (shapes_match) {
            for (std::size_t i = 0; i < combo.individuals.size(); ++i)
                combo.individuals[i].y =
                    2.0 * data.individuals[i].y + 3.0 * other.individuals[i].y;
            const TransformedPanel tc = transform(combo, kind);
            const TransformedPanel to = transform(other, kind);
            for (std::size_t i = 0; i < tc.blocks.size(); ++i)
                CHECK((tc.blocks[i].ty - 2.0 * tp.blocks[i].ty - 3.0 * to.blocks[i].ty)
                          .cwiseAbs()
                          .maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("constant-only block transforms to zero") {
    PanelDataset data;
    data.n_exog = 0;
    data.n_inst = 1;
    IndividualBlock b;
    b.id = "c";
    b.y = Vector::Constant(4, 3.25);
    b.x1 = Vector::Constant(4, -1.5);
    b.x_exog.resize(4, 0);
    b.z = Matrix::Ones(4, 1);
    data.individuals.push_back(b);
    data.individuals.push_back(b);  // validator needs nothing more

    for (TransformKind kind : {TransformKind::first_difference, TransformKind::within}) {
        const TransformedPanel tp = transform(data, kind);
        CHECK(tp.blocks[0].ty.cwiseAbs().maxCoeff() < 1e-14);
        CHECK(tp.blocks[0].tx1.cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("T=2 within rows are the halved first difference with flipped sign") {
    const PanelDataset data = random_panel(6, 2, 2, 1, 1, 99);
    const TransformedPanel fd = transform(data, TransformKind::first_difference);
    const TransformedPanel wi = transform(data, TransformKind::within);
    for (std::size_t i = 0; i < fd.blocks.size(); ++i) {
        const double d = fd.blocks[i].ty(0);
        CHECK(wi.blocks[i].ty(0) == Approx(-d / 2.0).margin(1e-12));
        CHECK(wi.blocks[i].ty(1) == Approx(d / 2.0).margin(1e-12));
    }
}

TEST_CASE("first-stage design rows and columns") {
    PanelDataset data = random_panel(1, 3, 3, 1, 1, 5);
    const FirstStageDesign fd = first_stage_design(data, TransformKind::first_difference);
    // N=1, T=3 -> 2 rows with 2(K-1)+2L = 4 columns
    CHECK(fd.rows() == 2);
    CHECK(fd.X.cols() == 4);
    CHECK(fd.row_origin[0] == std::pair<Index, Index>{0, 0});
    CHECK(fd.row_origin[1] == std::pair<Index, Index>{0, 1});

    // targets are the consecutive differences of x1
    const auto& b = data.individuals[0];
    CHECK(fd.y(0) == Approx(b.x1(1) - b.x1(0)));
    CHECK(fd.y(1) == Approx(b.x1(2) - b.x1(1)));
    // feature order: x~_t, x~_{t-1}, z_t, z_{t-1}
    CHECK(fd.X(0, 0) == Approx(b.x_exog(1, 0)));
    CHECK(fd.X(0, 1) == Approx(b.x_exog(0, 0)));
    CHECK(fd.X(0, 2) == Approx(b.z(1, 0)));
    CHECK(fd.X(0, 3) == Approx(b.z(0, 0)));

    const FirstStageDesign wi = first_stage_design(data, TransformKind::within);
    CHECK(wi.rows() == 3);
    CHECK(wi.X.cols() == 4);
    CHECK(wi.y(0) == Approx(b.x1(0) - b.x1.mean()));
    // feature order: x~_t, z_t, mean x~, mean z
    CHECK(wi.X(1, 0) == Approx(b.x_exog(1, 0)));
    CHECK(wi.X(1, 1) == Approx(b.z(1, 0)));
    CHECK(wi.X(1, 2) == Approx(b.x_exog.col(0).mean()));
    CHECK(wi.X(1, 3) == Approx(b.z.col(0).mean()));
}

TEST_CASE("first-stage target vanishes when x1 has no within-individual variation") {
    // x1 = alpha_i: g == 0 and u == 0
    PanelDataset data = random_panel(5, 3, 4, 1, 1, 11);
    for (auto& b : data.individuals) b.x1.setConstant(b.x1(0));
    for (TransformKind kind : {TransformKind::first_difference, TransformKind::within}) {
        const FirstStageDesign d = first_stage_design(data, kind);
        CHECK(d.y.cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("within full stack needs balance and widens the design") {
    PanelDataset balanced = random_panel(4, 3, 3, 1, 1, 21);
    FirstStageOptions opts;
    opts.within_full_stack = true;
    const FirstStageDesign d = first_stage_design(balanced, TransformKind::within, opts);
    CHECK(d.X.cols() == 3 * 2);  // T * (K-1+L)

    PanelDataset unbalanced = random_panel(6, 2, 4, 1, 1, 22);
    bool all_same = true;
    for (const auto& b : unbalanced.individuals)
        if (b.rows() != unbalanced.individuals.front().rows()) all_same = false;
    if (!all_same)
        CHECK_THROWS_AS(first_stage_design(unbalanced, TransformKind::within, opts), data_error);
}

TEST_CASE("panel validation rejects bad blocks") {
    PanelDataset data = random_panel(3, 2, 4, 1, 1, 31);
    validate_panel(data);

    PanelDataset bad = data;
    bad.individuals[1].y(0) = std::nan("");
    CHECK_THROWS_AS(validate_panel(bad), data_error);

    PanelDataset short_block = data;
    short_block.individuals[0].y.resize(1);
    short_block.individuals[0].x1.resize(1);
    short_block.individuals[0].x_exog.resize(1, 1);
    short_block.individuals[0].z.resize(1, 1);
    CHECK_THROWS_AS(validate_panel(short_block), data_error);

    const PanelDataset long_block = random_panel(3, 5, 5, 1, 1, 32);
    CHECK_THROWS_AS(validate_panel(long_block, 3), data_error);  // T_max enforced
}
