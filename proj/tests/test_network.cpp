#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "iclstm/network.hpp"
#include "test_util.hpp"

using namespace iclstm;
using testutil::random_convex_model;
using testutil::random_plain_model;
using testutil::vec;

namespace {

// One-layer scalar convex LSTM for the worked examples: n_x=1 so the expanded
// input is [x, -x]; only the positive half is wired. With the forget gate
// closed (Df=0) a constant input yields a constant output.
ModelParams worked_scalar_model(double df) {
    ModelParams m = make_model(Arch::iclstm, 1, {1}, 1);
    auto& l = std::get<IcLstmLayer>(m.layers[0]);
    l.Wx << 1.0, 0.0;
    l.Wh << 0.0;
    l.Df << df; l.Di << 1.0; l.Do << 1.0; l.Dc << 1.0;
    l.Wd << 1.0, 0.0;
    m.Wy << 1.0, 0.0;
    m.output_act = {ActivationKind::linear};
    m.validate();
    return m;
}

}  // namespace

TEST_CASE("expand_input definition") {
    CHECK(expand_input(vec({2, -3})) == vec({2, -3, -2, 3}));
    CHECK(expand_input(vec({0, 0})) == vec({0, 0, 0, 0}));
    CHECK(expand_input(vec({1.5})) == vec({1.5, -1.5}));
    Eigen::VectorXd bad(1);
    bad(0) = std::nan("");
    CHECK_THROWS_AS(expand_input(bad), InvalidArgumentError);
}

TEST_CASE("iclstm cell step hand evaluations") {
    IcLstmLayer p;
    p.Wx = Eigen::MatrixXd::Zero(1, 1);
    p.Wh = Eigen::MatrixXd::Zero(1, 1);
    p.Df = p.Di = p.Do = p.Dc = Eigen::VectorXd::Zero(1);
    p.bf = p.bi = p.bo = p.bc = Eigen::VectorXd::Zero(1);
    p.Wd = Eigen::MatrixXd::Zero(1, 1);
    p.bd = Eigen::VectorXd::Zero(1);
    Activation relu{ActivationKind::relu};

    CellState s;
    s.h = Eigen::MatrixXd::Zero(1, 1);
    s.c = Eigen::MatrixXd::Zero(1, 1);
    Eigen::MatrixXd x(1, 1);
    x << 1.0;
    iclstm_cell_step(p, relu, x, s);
    CHECK(s.h(0, 0) == 0.0);
    CHECK(s.c(0, 0) == 0.0);

    p.Wx << 1.0;
    p.Df << 1.0; p.Di << 1.0; p.Do << 1.0; p.Dc << 1.0;
    s.h.setZero(); s.c.setZero();
    iclstm_cell_step(p, relu, x, s);
    CHECK(s.c(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(s.h(0, 0) == doctest::Approx(1.0).epsilon(1e-14));

    s.h.setZero(); s.c.setZero();
    x << -1.0;
    iclstm_cell_step(p, relu, x, s);
    CHECK(s.c(0, 0) == 0.0);
    CHECK(s.h(0, 0) == 0.0);
}

TEST_CASE("iclstm forward worked example: constant input held for two steps") {
    // Closed forget gate: h=1 each step, z = relu(1) + 1 = 2, y = 2.
    ModelParams m = worked_scalar_model(0.0);
    Eigen::MatrixXd seq(2, 1);
    seq << 1.0, 1.0;
    Eigen::MatrixXd y = forward(m, seq);
    REQUIRE(y.rows() == 2);
    CHECK(y(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(y(1, 0) == doctest::Approx(2.0).epsilon(1e-14));

    // Open forget gate: the cell accumulates, c = [1, 2], so y = [2, 3].
    ModelParams acc = worked_scalar_model(1.0);
    Eigen::MatrixXd y2 = forward(acc, seq);
    CHECK(y2(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(y2(1, 0) == doctest::Approx(3.0).epsilon(1e-14));
}

TEST_CASE("iclstm forward zero-weight model gives zero output") {
    ModelParams m = make_model(Arch::iclstm, 2, {3}, 2);
    m.validate();
    Eigen::MatrixXd seq(3, 2);
    seq << 1, -2, 0.5, 0.5, -1, 3;
    Eigen::MatrixXd y = forward(m, seq);
    CHECK(y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("lstm zero-weight fixed point") {
    ModelParams m = make_model(Arch::lstm, 2, {4}, 1);
    m.by << 0.3;
    Eigen::MatrixXd seq(3, 2);
    seq << 1, 2, -1, 0, 4, 4;
    Eigen::MatrixXd y = forward(m, seq);
    for (int t = 0; t < 3; ++t) CHECK(y(t, 0) == doctest::Approx(0.3).epsilon(1e-14));
}

TEST_CASE("icrnn zero-weight model") {
    ModelParams m = make_model(Arch::icrnn, 2, {3}, 1);
    Eigen::MatrixXd seq(2, 2);
    seq << 1, 2, 3, 4;
    Eigen::MatrixXd y = forward(m, seq);
    CHECK(y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("plain rnn scalar tanh evaluation") {
    ModelParams m = make_model(Arch::rnn, 1, {1}, 1);
    auto& l = std::get<RnnLayer>(m.layers[0]);
    l.Wx << 1.0;
    m.Wy << 1.0;
    Eigen::MatrixXd seq(1, 1);
    seq << 1.0;
    Eigen::MatrixXd y = forward(m, seq);
    CHECK(y(0, 0) == doctest::Approx(std::tanh(1.0)).epsilon(1e-12));
}

TEST_CASE("monotone in each expanded coordinate on a 5-point grid") {
    ModelParams m = random_convex_model(Arch::iclstm, 2, {5}, 2, 42);
    PointModel pm = make_point_model_expanded(m, 3);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    for (int rep = 0; rep < 10; ++rep) {
        Eigen::VectorXd base(4);
        for (int i = 0; i < 4; ++i) base(i) = 2.0 * ud(rng) - 1.0;
        for (int coord = 0; coord < 4; ++coord) {
            Eigen::VectorXd prev;
            for (int k = 0; k < 5; ++k) {
                Eigen::VectorXd x = base;
                x(coord) += 0.5 * k;
                Eigen::VectorXd y = pm.eval(x);
                if (k > 0)
                    CHECK((y - prev).minCoeff() >= -1e-9);
                prev = y;
            }
        }
    }
}

TEST_CASE("lemma-level monotonicity over 500 ordered pairs") {
    for (Arch arch : {Arch::iclstm, Arch::icrnn}) {
        ModelParams m = random_convex_model(arch, 2, {4, 4}, 2, 11);
        PointModel pm = make_point_model_expanded(m, 2);
        std::mt19937_64 rng(13);
        std::uniform_real_distribution<double> ud(0.0, 1.0);
        for (int i = 0; i < 500; ++i) {
            Eigen::VectorXd a(4), d(4);
            for (int j = 0; j < 4; ++j) {
                a(j) = 4.0 * ud(rng) - 2.0;
                d(j) = 2.0 * ud(rng);
            }
            Eigen::VectorXd ya = pm.eval(a), yb = pm.eval(a + d);
            CHECK((yb - ya).minCoeff() >= -1e-9);
        }
    }
}

TEST_CASE("midpoint convexity in original input over 1000 pairs") {
    ModelParams m = random_convex_model(Arch::iclstm, 2, {4}, 1, 99);
    PointModel pm = make_point_model(m, 3);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ud(-2.0, 2.0);
    int violations = 0;
    for (int i = 0; i < 1000; ++i) {
        Eigen::VectorXd a(2), b(2);
        for (int j = 0; j < 2; ++j) { a(j) = ud(rng); b(j) = ud(rng); }
        Eigen::VectorXd ym = pm.eval(0.5 * (a + b));
        Eigen::VectorXd avg = 0.5 * (pm.eval(a) + pm.eval(b));
        for (int k = 0; k < ym.size(); ++k)
            if (ym(k) - avg(k) > 1e-7 * std::max(1.0, std::abs(avg(k)))) ++violations;
    }
    CHECK(violations == 0);
}

TEST_CASE("random plain lstm is not midpoint convex") {
    bool violated = false;
    for (std::uint64_t seed = 1; seed <= 5 && !violated; ++seed) {
        ModelParams m = random_plain_model(Arch::lstm, 2, {6}, 1, seed);
        PointModel pm = make_point_model(m, 3);
        std::mt19937_64 rng(seed + 100);
        std::uniform_real_distribution<double> ud(-2.0, 2.0);
        for (int i = 0; i < 1000 && !violated; ++i) {
            Eigen::VectorXd a(2), b(2);
            for (int j = 0; j < 2; ++j) { a(j) = ud(rng); b(j) = ud(rng); }
            Eigen::VectorXd ym = pm.eval(0.5 * (a + b));
            Eigen::VectorXd avg = 0.5 * (pm.eval(a) + pm.eval(b));
            for (int k = 0; k < ym.size() && !violated; ++k)
                if (ym(k) - avg(k) > 1e-7 * std::max(1.0, std::abs(avg(k)))) violated = true;
        }
    }
    CHECK(violated);
}

TEST_CASE("forward is deterministic bitwise") {
    ModelParams m = random_convex_model(Arch::iclstm, 3, {6}, 2, 5);
    Eigen::MatrixXd seq = Eigen::MatrixXd::Random(4, 3);
    Eigen::MatrixXd y1 = forward(m, seq);
    Eigen::MatrixXd y2 = forward(m, seq);
    CHECK((y1.array() == y2.array()).all());
}

TEST_CASE("validation catches malformed models") {
    ModelParams m = make_model(Arch::iclstm, 2, {3}, 1);
    std::get<IcLstmLayer>(m.layers[0]).Wd = Eigen::MatrixXd::Zero(3, 3);
    CHECK_THROWS_AS(m.validate(), DimensionError);

    ModelParams bad = make_model(Arch::rnn, 2, {3}, 1);
    bad.arch = Arch::lstm;
    CHECK_THROWS_AS(bad.validate(), Error);

    ModelParams act = make_model(Arch::iclstm, 2, {3}, 1);
    act.hidden_act = {ActivationKind::tanh_act};
    CHECK_THROWS_AS(act.validate(), InvalidArgumentError);

    CHECK_THROWS_AS(make_model(Arch::rnn, 0, {3}, 1), InvalidArgumentError);
}

TEST_CASE("forward rejects width mismatch and non-finite input") {
    ModelParams m = make_model(Arch::iclstm, 2, {3}, 1);
    Eigen::MatrixXd seq(2, 3);
    seq.setZero();
    CHECK_THROWS_AS(forward(m, seq), DimensionError);
    Eigen::MatrixXd nan_seq(1, 2);
    nan_seq << 0.0, std::nan("");
    CHECK_THROWS_AS(forward(m, nan_seq), Error);
}

TEST_CASE("param_blocks covers all parameters with constraint flags") {
    ModelParams m = make_model(Arch::iclstm, 2, {3, 3}, 1);
    auto blocks = param_blocks(m);
    CHECK(blocks.size() == 2 * 12 + 2);
    int nonneg = 0;
    for (const auto& b : blocks) nonneg += b.nonneg ? 1 : 0;
    CHECK(nonneg == 2 * 7 + 1);

    ModelParams z = zeros_like(random_convex_model(Arch::icrnn, 2, {3}, 1, 8));
    for (const auto& b : param_blocks(z)) CHECK(b.map().cwiseAbs().maxCoeff() == 0.0);
    CHECK(param_count(m) > 0);
}

TEST_CASE("constraints_satisfied flags negative constrained entries") {
    ModelParams m = random_convex_model(Arch::iclstm, 2, {3}, 1, 21);
    CHECK(m.constraints_satisfied());
    std::get<IcLstmLayer>(m.layers[0]).Wx(0, 0) = -1e-12;
    CHECK(!m.constraints_satisfied());
}
