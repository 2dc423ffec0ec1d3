#include <catch2/catch_amalgamated.hpp>

#include "camseg/caa.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace camseg;
using Catch::Matchers::WithinAbs;

namespace {

Eigen::MatrixXd random_positive_matrix(int n, uint64_t seed) {
    SplitMix64 rng(seed);
    Eigen::MatrixXd m(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) m(r, c) = 0.05 + rng.uniform01();
    return m;
}

Eigen::MatrixXd random_row_stochastic(int n, uint64_t seed) {
    Eigen::MatrixXd m = random_positive_matrix(n, seed);
    for (int r = 0; r < n; ++r) m.row(r) /= m.row(r).sum();
    return m;
}

}  // namespace

TEST_CASE("sinkhorn leaves the identity untouched") {
    Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(5, 5);
    SinkhornResult res = sinkhorn(eye, 1e-6, 100);
    CHECK(res.iterations == 0);
    CHECK(res.residual == 0.0);
    CHECK(res.matrix == eye);
}

TEST_CASE("sinkhorn on the 2x2 all-ones matrix gives 0.5 everywhere") {
    Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(2, 2);
    SinkhornResult res = sinkhorn(ones, 1e-9, 100);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) CHECK_THAT(res.matrix(r, c), WithinAbs(0.5, 1e-12));
}

TEST_CASE("sinkhorn converges to the long-run oracle on seeded random matrices") {
    // 50 fixtures up to 64x64 against a 10,000-iteration brute-force run
    for (uint64_t seed = 1; seed <= 50; ++seed) {
        const int n = 4 + int(seed % 61);  // 4..64
        Eigen::MatrixXd w = random_positive_matrix(n, seed * 7919);
        SinkhornResult res = sinkhorn(w, 1e-9, 100000);
        REQUIRE(res.residual <= 1e-6);
        Eigen::MatrixXd oracle = oracles::sinkhorn_long_run(w, 10000);
        INFO("seed " << seed << " n " << n);
        CHECK((res.matrix - oracle).cwiseAbs().maxCoeff() < 1e-6);
        // row/col sums within 1e-6 of 1
        CHECK((res.matrix.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
        CHECK((res.matrix.colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("sinkhorn residual is non-increasing across iterations") {
    for (uint64_t seed : {3ull, 17ull, 91ull}) {
        Eigen::MatrixXd w = random_positive_matrix(24, seed);
        SinkhornResult res = sinkhorn(w, 1e-12, 500);
        for (size_t i = 1; i < res.residual_history.size(); ++i)
            CHECK(res.residual_history[i] <= res.residual_history[i - 1] + 1e-15);
    }
}

TEST_CASE("sinkhorn rejects degenerate and malformed inputs") {
    Eigen::MatrixXd zero_row = Eigen::MatrixXd::Ones(3, 3);
    zero_row.row(1).setZero();
    CHECK_THROWS_AS(sinkhorn(zero_row, 1e-6, 100), degenerate_input_error);

    Eigen::MatrixXd zero_col = Eigen::MatrixXd::Ones(3, 3);
    zero_col.col(2).setZero();
    CHECK_THROWS_AS(sinkhorn(zero_col, 1e-6, 100), degenerate_input_error);

    CHECK_THROWS_AS(sinkhorn(Eigen::MatrixXd::Ones(3, 2), 1e-6, 100), std::invalid_argument);

    Eigen::MatrixXd negative = Eigen::MatrixXd::Ones(3, 3);
    negative(0, 0) = -0.1;
    CHECK_THROWS_AS(sinkhorn(negative, 1e-6, 100), std::invalid_argument);
}

TEST_CASE("sinkhorn reports the residual when the iteration budget runs out") {
    Eigen::MatrixXd w = random_positive_matrix(16, 5);
    SinkhornResult res = sinkhorn(w, 1e-14, 2);
    CHECK(res.iterations == 2);
    CHECK(res.residual > 0.0);
}

TEST_CASE("build_affinity") {
    SECTION("symmetric doubly stochastic input is a fixed point") {
        Eigen::MatrixXd m(2, 2);
        m << 0.7, 0.3, 0.3, 0.7;
        AttentionWeights attn;
        attn.values = m;
        AffinityMatrix a = build_affinity(attn, 1e-8, 100);
        CHECK((a.values - m).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(a.sinkhorn_iters_used == 0);
    }
    SECTION("bitwise symmetry, non-negativity, double stochasticity on random inputs") {
        const double tol = 1e-6;
        for (uint64_t seed : {2ull, 11ull, 42ull, 77ull}) {
            AttentionWeights attn;
            attn.values = random_row_stochastic(20, seed);
            AffinityMatrix a = build_affinity(attn, tol, 10000);
            CHECK(a.values == a.values.transpose().eval());
            CHECK(a.values.minCoeff() >= 0.0);
            CHECK(a.residual <= 2 * tol);
            // direct summation stays within 2*tol of 1
            CHECK((a.values.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 2 * tol);
            CHECK((a.values.colwise().sum().array() - 1.0).abs().maxCoeff() <= 2 * tol);
        }
    }
}

TEST_CASE("box_mask geometry") {
    SECTION("single pixel above threshold gives a 1x1 box") {
        MapD cam(4, 4, 0.0);
        cam.at(2, 1) = 0.9;
        BoxMask bm = box_mask(cam, 0.5);
        REQUIRE(bm.boxes.size() == 1);
        CHECK(bm.boxes[0] == std::array<int, 4>{2, 1, 2, 1});
        CHECK(std::count(bm.mask.begin(), bm.mask.end(), 1) == 1);
        CHECK(bm.mask[2 * 4 + 1] == 1);
    }
    SECTION("diagonal neighbors are separate regions under 4-connectivity") {
        MapD cam(4, 4, 0.0);
        cam.at(1, 1) = 1.0;
        cam.at(2, 2) = 1.0;
        BoxMask bm = box_mask(cam, 0.5);
        REQUIRE(bm.boxes.size() == 2);
        CHECK(std::count(bm.mask.begin(), bm.mask.end(), 1) == 2);
    }
    SECTION("an L-shaped region is covered by its full bounding rectangle") {
        MapD cam(5, 5, 0.0);
        // L shape: column 1 rows 1..3 plus row 3 cols 1..3
        cam.at(1, 1) = 1.0;
        cam.at(2, 1) = 1.0;
        cam.at(3, 1) = 1.0;
        cam.at(3, 2) = 1.0;
        cam.at(3, 3) = 1.0;
        BoxMask bm = box_mask(cam, 0.5);
        REQUIRE(bm.boxes.size() == 1);
        CHECK(bm.boxes[0] == std::array<int, 4>{1, 1, 3, 3});
        // the non-activated corner of the rectangle is covered too
        CHECK(bm.mask[1 * 5 + 3] == 1);
        CHECK(std::count(bm.mask.begin(), bm.mask.end(), 1) == 9);
    }
    SECTION("all-below-threshold falls back to an all-ones mask") {
        MapD cam(3, 3, 0.2);
        BoxMask bm = box_mask(cam, 0.9);
        CHECK(bm.boxes.empty());
        CHECK(std::count(bm.mask.begin(), bm.mask.end(), 1) == 9);
    }
}

TEST_CASE("refine is the identity for identity affinity and all-ones mask") {
    CamStack stack;
    stack.class_ids = {0};
    MapD m(3, 3, 0.0);
    SplitMix64 rng(4);
    for (auto& v : m.data) v = rng.uniform01();
    double mx = 0;
    for (double v : m.data) mx = std::max(mx, v);
    for (auto& v : m.data) v /= mx;
    stack.maps = {m};
    stack.normalized = true;

    AffinityMatrix eye;
    eye.values = Eigen::MatrixXd::Identity(9, 9);
    // lambda above every value forces the all-ones fallback mask
    for (int t : {0, 1, 3}) {
        CamStack out = refine(stack, eye, 1.5, t);
        for (size_t i = 0; i < m.data.size(); ++i)
            CHECK_THAT(out.maps[0].data[i], WithinAbs(m.data[i], 1e-12));
    }
}

TEST_CASE("refine conserves mass under an all-ones mask") {
    CamStack stack;
    stack.class_ids = {0};
    MapD m(4, 4, 0.0);
    SplitMix64 rng(9);
    for (auto& v : m.data) v = rng.uniform01();
    double mx = 0;
    for (double v : m.data) mx = std::max(mx, v);
    for (auto& v : m.data) v /= mx;
    stack.maps = {m};
    stack.normalized = true;

    AttentionWeights attn;
    attn.values = random_row_stochastic(16, 31);
    AffinityMatrix a = build_affinity(attn, 1e-9, 10000);

    const double mass_in = std::accumulate(m.data.begin(), m.data.end(), 0.0);
    for (int t : {1, 2, 5}) {
        CamStack out = refine(stack, a, 1.5, t, /*renormalize=*/false);
        const double mass_out =
            std::accumulate(out.maps[0].data.begin(), out.maps[0].data.end(), 0.0);
        CHECK_THAT(mass_out, WithinAbs(mass_in, 1e-5));
    }
}

TEST_CASE("refine matches the dense matrix-power oracle on a 4x4 grid") {
    // hand-built affinity: symmetrized Sinkhorn of a seeded attention
    AttentionWeights attn;
    attn.values = random_row_stochastic(16, 55);
    AffinityMatrix a = build_affinity(attn, 1e-10, 10000);

    CamStack stack;
    stack.class_ids = {0};
    MapD m(4, 4, 0.0);
    SplitMix64 rng(100);
    for (auto& v : m.data) v = rng.uniform01();
    double mx = 0;
    for (double v : m.data) mx = std::max(mx, v);
    for (auto& v : m.data) v /= mx;
    stack.maps = {m};
    stack.normalized = true;

    const double lambda = 0.4;
    for (int t : {0, 1, 2, 3}) {
        CamStack out = refine(stack, a, lambda, t);
        // oracle: explicit matrix power, explicit box mask, explicit renorm
        Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(m.data.data(), 16);
        Eigen::VectorXd propagated = oracles::refine_matrix_power(a.values, v, t);
        BoxMask bm = box_mask(m, lambda);
        for (int i = 0; i < 16; ++i)
            if (!bm.mask[i]) propagated[i] = 0.0;
        const double pmx = propagated.maxCoeff();
        if (pmx > 0) propagated /= pmx;
        for (int i = 0; i < 16; ++i)
            CHECK_THAT(out.maps[0].data[i], WithinAbs(propagated[i], 1e-6));
    }
}

TEST_CASE("pixels outside every box are exactly zero after refinement") {
    CamStack stack;
    stack.class_ids = {0};
    MapD m(4, 4, 0.1);
    m.at(0, 0) = 1.0;  // single above-threshold pixel, box = {0,0,0,0}
    stack.maps = {m};
    stack.normalized = true;

    AttentionWeights attn;
    attn.values = random_row_stochastic(16, 8);
    AffinityMatrix a = build_affinity(attn, 1e-8, 1000);
    CamStack out = refine(stack, a, 0.5, 2);
    for (int i = 1; i < 16; ++i) CHECK(out.maps[0].data[i] == 0.0);
    CHECK(out.maps[0].data[0] > 0.0);
}

TEST_CASE("refine validates dimensions") {
    CamStack stack;
    stack.class_ids = {0};
    stack.maps = {MapD(3, 3, 0.5)};
    stack.normalized = true;
    AffinityMatrix a;
    a.values = Eigen::MatrixXd::Identity(4, 4);
    CHECK_THROWS_AS(refine(stack, a, 0.4, 1), std::invalid_argument);

    CamStack raw = stack;
    raw.normalized = false;
    AffinityMatrix ok;
    ok.values = Eigen::MatrixXd::Identity(9, 9);
    CHECK_THROWS_AS(refine(raw, ok, 0.4, 1), std::invalid_argument);
}
