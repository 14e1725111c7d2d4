#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "iclstm/data.hpp"

using namespace iclstm;
using namespace iclstm::data;

TEST_CASE("scaler maps min-max to the unit interval and inverts exactly") {
    Eigen::MatrixXd rows(3, 2);
    rows << 0.0, -1.0, 5.0, 0.0, 10.0, 3.0;
    Scaler s;
    s.fit(rows);
    const Eigen::MatrixXd scaled = s.transform(rows);
    CHECK(scaled(0, 0) == doctest::Approx(0.0));
    CHECK(scaled(1, 0) == doctest::Approx(0.5));
    CHECK(scaled(2, 0) == doctest::Approx(1.0));
    CHECK((s.inverse(scaled) - rows).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(s.slope()(0) == doctest::Approx(0.1).epsilon(1e-12));

    // Values outside the fit range map outside [0, 1]; nothing clips.
    Eigen::VectorXd probe(2);
    probe << 20.0, -2.0;
    const Eigen::VectorXd out = s.transform(probe);
    CHECK(out(0) == doctest::Approx(2.0));
    CHECK(out(1) == doctest::Approx(-0.25));

    Eigen::MatrixXd degenerate(3, 1);
    degenerate << 2.0, 2.0, 2.0;
    Scaler bad;
    CHECK_THROWS_AS(bad.fit(degenerate), InvalidArgumentError);
}

TEST_CASE("sample_domain is seeded, in-box, and roughly centered") {
    const Box box = solar_sample_box();
    CHECK(sample_domain(box, 0, 1).rows() == 0);
    const Eigen::MatrixXd a = sample_domain(box, 10000, 3);
    const Eigen::MatrixXd b = sample_domain(box, 10000, 3);
    CHECK(a == b);
    CHECK(sample_domain(box, 10000, 4) != a);
    for (Eigen::Index j = 0; j < box.dim(); ++j) {
        CHECK(a.col(j).minCoeff() >= box.lo(j));
        CHECK(a.col(j).maxCoeff() <= box.hi(j));
        const double mid = 0.5 * (box.lo(j) + box.hi(j));
        const double range = box.hi(j) - box.lo(j);
        CHECK(std::abs(a.col(j).mean() - mid) < 0.05 * range);
    }
}

TEST_CASE("cstr states are rejection-sampled inside the stability ellipse") {
    const plants::StabilityRegion region;
    const Eigen::MatrixXd states = sample_cstr_states(region, 500, 11);
    double max_v = 0.0;
    for (int i = 0; i < states.rows(); ++i) {
        const double v = region.lyapunov(states.row(i).transpose());
        CHECK(v <= region.rho);
        max_v = std::max(max_v, v);
    }
    CHECK(max_v > 0.5 * region.rho);  // the sampler reaches the outer region
}

TEST_CASE("toy surfaces match frozen evaluations") {
    CHECK(toy_surface(1, 0.0, 0.0) == doctest::Approx(-1.0));
    CHECK(toy_surface(1, 0.5, -0.5) == doctest::Approx(0.41614683654714239).epsilon(1e-14));
    CHECK(toy_surface(2, 0.0, 0.0) == doctest::Approx(2.0));
    CHECK(toy_surface(2, 0.5, 0.5) == doctest::Approx(-2.0));
    CHECK(toy_surface(2, -0.8, -0.9) == doctest::Approx(3.0));
    CHECK(toy_surface(3, 0.0, 0.0) == doctest::Approx(0.0));
    CHECK(toy_surface(3, 0.3, 0.7) == doctest::Approx(-0.42853531034778142).epsilon(1e-14));
    // Negative x exercises the real cube root in the x^(4/3) term.
    CHECK(toy_surface(3, -0.6, 0.2) == doctest::Approx(1.0764214557051778).epsilon(1e-14));
    CHECK(toy_surface(3, -1.0, -1.0) == doctest::Approx(3.9).epsilon(1e-14));
    CHECK_THROWS_AS(toy_surface(4, 0.0, 0.0), InvalidArgumentError);

    const Eigen::MatrixXd grid = surface_grid(1, 5);
    REQUIRE(grid.rows() == 25);
    CHECK(grid(0, 0) == -1.0);
    CHECK(grid(24, 1) == 1.0);
    CHECK(grid(12, 2) == doctest::Approx(toy_surface(1, 0.0, 0.0)));
}

TEST_CASE("cstr targets: steady state stays put, forcing moves it, blow-up is indexed") {
    plants::CstrSpec spec;
    Eigen::MatrixXd raw(2, 4);
    raw.row(0) << 0.0, 0.0, 0.0, 0.0;
    raw.row(1) << 0.0, 0.0, 3.5, 5e5;
    const BatchSeq targets = make_targets_cstr(spec, raw, 5e-3, 10, 1e-4);
    REQUIRE(targets.size() == 10);
    REQUIRE(targets[0].rows() == 2);
    REQUIRE(targets[0].cols() == 2);
    for (const auto& m : targets) CHECK(m.minCoeff() >= 0.0);
    CHECK(targets[9].row(0).maxCoeff() < 1e-3);  // equilibrium residual drift only
    CHECK((targets[0].row(1) - targets[9].row(1)).cwiseAbs().maxCoeff() > 1e-3);

    // The first sub-instant equals five explicit Euler steps.
    const Eigen::MatrixXd traj = plants::integrate(
        [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
            return plants::cstr_rhs(spec, x, Eigen::Vector2d(3.5, 5e5));
        },
        Eigen::Vector2d::Zero(), 1e-4, 5);
    CHECK((targets[0].row(1).transpose() - traj.row(5).transpose().cwiseAbs()).norm() < 1e-12);

    try {
        make_targets_cstr(spec, raw, 5.0, 10, 0.05);
        FAIL("expected a blow-up");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("sample") != std::string::npos);
    }
}

TEST_CASE("solar targets track the implicit integrator and the current deviation") {
    plants::SolarSpec spec;
    Eigen::MatrixXd raw(1, 7);
    raw << 25.0, 5.0, 1.0, 500.0, 55.0, 0.5, 7.0;
    const BatchSeq targets = make_targets_solar(spec, raw, 60.0, 10, 5e-3);
    REQUIRE(targets.size() == 10);
    REQUIRE(targets[0].cols() == 4);
    for (const auto& m : targets) CHECK(m.col(3).minCoeff() >= 0.0);

    const Eigen::Vector3d xi(500.0, 328.15, 7.0);
    const Eigen::Vector3d first = plants::solar_integrate(spec, Eigen::Vector3d(25.0, 5.0, 1.0),
                                                          0.5, xi, 5e-3, 1200)
                                      .row(1200).transpose();
    CHECK((targets[0].row(0).head<3>().transpose() - first).norm() < 1e-12);
    CHECK(targets[0](0, 3) == doctest::Approx(std::abs(first(1) - 7.0)));

    // A converter with enormous inductance holds i_s at the load: d stays ~0.
    plants::SolarSpec frozen = spec;
    frozen.L = 1e9;
    frozen.Cb = 1e12;
    Eigen::MatrixXd held(1, 7);
    held << 25.0, 7.0, 0.5, 500.0, 55.0, 0.5, 7.0;
    const BatchSeq held_targets = make_targets_solar(frozen, held, 60.0, 10, 5e-3);
    for (const auto& m : held_targets) CHECK(m(0, 3) < 1e-6);
}

TEST_CASE("assembled cstr dataset is shuffled, scaled, and split consistently") {
    plants::CstrSpec spec;
    CstrDataConfig cfg;
    cfg.n_samples = 30;
    const SequenceDataset ds = make_cstr_dataset(spec, cfg, 42);
    CHECK(ds.plant == "cstr");
    CHECK(ds.n_samples() == 30);
    CHECK(ds.n_train == 24);
    CHECK(ds.repeats == 10);
    CHECK(ds.n_raw == 4);
    CHECK(ds.n_targets() == 2);
    CHECK(ds.inputs[0].cols() == 8);

    // The scaler is fit on the training prefix: those rows span [0, 1].
    const Eigen::MatrixXd train = ds.inputs[0].topRows(ds.n_train);
    for (Eigen::Index j = 0; j < train.cols(); ++j) {
        CHECK(train.col(j).minCoeff() == doctest::Approx(0.0));
        CHECK(train.col(j).maxCoeff() == doctest::Approx(1.0));
    }

    const BatchSeq tr_in = ds.train_inputs(), te_in = ds.test_inputs();
    CHECK(tr_in[0].rows() == 24);
    CHECK(te_in[0].rows() == 6);

    const SequenceDataset again = make_cstr_dataset(spec, cfg, 42);
    CHECK(again.raw == ds.raw);
    CHECK(again.inputs[3] == ds.inputs[3]);
    CHECK(again.targets[7] == ds.targets[7]);
    const SequenceDataset other = make_cstr_dataset(spec, cfg, 43);
    CHECK(other.raw != ds.raw);
}

TEST_CASE("solar dataset generation is invariant to the thread count") {
    plants::SolarSpec spec;
    SolarDataConfig cfg;
    cfg.n_samples = 4;
    cfg.n_threads = 1;
    const SequenceDataset a = make_solar_dataset(spec, cfg, 9);
    cfg.n_threads = 3;
    const SequenceDataset b = make_solar_dataset(spec, cfg, 9);
    REQUIRE(a.n_samples() == b.n_samples());
    for (int t = 0; t < a.repeats; ++t) {
        CHECK(a.inputs[t] == b.inputs[t]);
        CHECK(a.targets[t] == b.targets[t]);
    }
}

TEST_CASE("surface dataset wraps the grid as length-1 sequences") {
    const SequenceDataset ds = make_surface_dataset(2, 11, 0.8, 5);
    CHECK(ds.plant == "surface-f2");
    CHECK(ds.repeats == 1);
    CHECK(ds.n_raw == 2);
    CHECK(ds.n_samples() == 121);
    CHECK(ds.n_targets() == 1);
    ds.validate();
    // Reconstruct one physical target and compare with the surface.
    const Eigen::VectorXd y = ds.target_scaler.inverse(
        Eigen::VectorXd(ds.targets[0].row(0).transpose()));
    CHECK(y(0) == doctest::Approx(toy_surface(2, ds.raw(0, 0), ds.raw(0, 1))).epsilon(1e-12));
}

TEST_CASE("dataset round-trips through the binary file bitwise") {
    plants::CstrSpec spec;
    CstrDataConfig cfg;
    cfg.n_samples = 12;
    const SequenceDataset ds = make_cstr_dataset(spec, cfg, 7);
    const std::string path = "test_dataset_roundtrip.bin";
    save_dataset(ds, path);
    const SequenceDataset back = load_dataset(path);
    CHECK(back.plant == ds.plant);
    CHECK(back.seed == ds.seed);
    CHECK(back.n_train == ds.n_train);
    CHECK(back.raw == ds.raw);
    CHECK(back.box.lo == ds.box.lo);
    CHECK(back.input_scaler.lo == ds.input_scaler.lo);
    CHECK(back.input_scaler.hi == ds.input_scaler.hi);
    CHECK(back.target_scaler.hi == ds.target_scaler.hi);
    for (int t = 0; t < ds.repeats; ++t) {
        CHECK(back.inputs[t] == ds.inputs[t]);
        CHECK(back.targets[t] == ds.targets[t]);
    }
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_dataset("no_such_dataset.bin"), IoError);
}

TEST_CASE("csv export writes one row per sample and step") {
    plants::CstrSpec spec;
    CstrDataConfig cfg;
    cfg.n_samples = 5;
    const SequenceDataset ds = make_cstr_dataset(spec, cfg, 3);
    const std::string path = "test_dataset_export.csv";
    export_dataset_csv(ds, path);
    std::ifstream is(path);
    REQUIRE(is.good());
    std::string line;
    int rows = 0;
    std::getline(is, line);
    CHECK(line.rfind("sample,step,is_train,raw0", 0) == 0);
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 50);
    std::remove(path.c_str());
}

TEST_CASE("solar profile is a seeded diurnal bump with staircase load") {
    const Eigen::MatrixXd p = solar_profile(120, 21);
    REQUIRE(p.rows() == 120);
    REQUIRE(p.cols() == 3);
    for (int k = 0; k < 120; ++k) {
        CHECK(p(k, 0) >= 9.0);
        CHECK(p(k, 0) <= 1000.0);
        CHECK(p(k, 1) - 273.15 >= 15.0);
        CHECK(p(k, 1) - 273.15 <= 70.0);
        CHECK(p(k, 2) >= 0.0);
        CHECK(p(k, 2) <= 25.0);
    }
    CHECK(p.col(0).maxCoeff() > 800.0);
    // The dropout dip cuts irradiance around 60% of the horizon.
    const Eigen::MatrixXd clear = solar_profile(120, 21, false);
    CHECK(p(72, 0) < 0.5 * clear(72, 0));
    CHECK(clear.col(2) == p.col(2));
    // Load holds within segments and changes across them.
    CHECK(p(1, 2) == p(2, 2));
    CHECK(p.col(2).maxCoeff() > p.col(2).minCoeff());
    CHECK(solar_profile(120, 21) == p);
}
