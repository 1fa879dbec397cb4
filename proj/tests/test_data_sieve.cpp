#include "test_helpers.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace proxyfactor;
using testing_support::TempDir;

TEST(LoadPanel, ParsesLabelledTable) {
    TempDir dir;
    const auto path = dir.write("p.csv",
                                "series,t1,t2,t3,t4\n"
                                "a,1,2,3,4\n"
                                "b,0.5,-1,2e3,7\n"
                                "c,9,8,7,6.25\n");
    const auto panel = load_panel(path);
    EXPECT_EQ(panel.n_series(), 3);
    EXPECT_EQ(panel.n_periods(), 4);
    EXPECT_EQ(panel.series_ids, (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_EQ(panel.time_ids.back(), "t4");
    EXPECT_DOUBLE_EQ(panel.values(1, 2), 2000.0);
    EXPECT_DOUBLE_EQ(panel.values(2, 3), 6.25);
}

TEST(LoadPanel, ColumnOrientationTransposes) {
    TempDir dir;
    const auto path = dir.write("p.csv", "time,a,b\nt1,1,5\nt2,2,6\nt3,4,1\n");
    const auto panel = load_panel(path, Orientation::series_in_columns);
    EXPECT_EQ(panel.n_series(), 2);
    EXPECT_EQ(panel.n_periods(), 3);
    EXPECT_DOUBLE_EQ(panel.values(1, 0), 5.0);
}

TEST(LoadPanel, NonNumericCellNamesLocation) {
    TempDir dir;
    const auto path = dir.write("p.csv", "series,t1,t2\na,1,2\nb,NA,3\n");
    try {
        load_panel(path);
        FAIL() << "expected input_error";
    } catch (const input_error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("NA"), std::string::npos);
        EXPECT_NE(msg.find("line 3"), std::string::npos);
        EXPECT_NE(msg.find("column 2"), std::string::npos);
    }
}

TEST(LoadPanel, MissingCellsListed) {
    TempDir dir;
    const auto path = dir.write("p.csv", "series,t1,t2\na,1\nb,2,3\nc,4\n");
    try {
        load_panel(path);
        FAIL() << "expected input_error";
    } catch (const input_error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("line 2"), std::string::npos);
        EXPECT_NE(msg.find("line 4"), std::string::npos);
    }
}

TEST(LoadPanel, RejectsDuplicateLabelsAndConstantSeries) {
    TempDir dir;
    EXPECT_THROW(load_panel(dir.write("d.csv", "series,t1,t2\na,1,2\na,3,4\n")), input_error);
    EXPECT_THROW(load_panel(dir.write("c.csv", "series,t1,t2,t3\na,1,2,3\nb,5,5,5\n")), input_error);
    EXPECT_THROW(load_panel(dir.file("missing.csv")), input_error);
}

TEST(LoadPanel, SaveRoundTripIsExact) {
    TempDir dir;
    std::mt19937_64 rng(3);
    PanelMatrix p;
    p.values = testing_support::gaussian(4, 7, rng) * 1e3;
    p.values(0, 0) = 1.0 / 3.0;
    p.series_ids = csv::numbered("s", 4);
    p.time_ids = csv::numbered("t", 7);
    save_panel(p, dir.file("p.csv"));
    const auto back = load_panel(dir.file("p.csv"));
    EXPECT_EQ(back.values, p.values);
    EXPECT_EQ(back.series_ids, p.series_ids);
    EXPECT_EQ(back.time_ids, p.time_ids);
}

TEST(LoadProxies, RejectsConstantProxyAndMisalignment) {
    TempDir dir;
    EXPECT_THROW(load_proxies(dir.write("w.csv", "proxy,t1,t2\nw1,1,1\n")), input_error);
    const auto panel = load_panel(dir.write("p.csv", "series,t1,t2\na,1,2\nb,3,1\n"));
    const auto proxies = load_proxies(dir.write("w2.csv", "proxy,t1,t3\nw1,1,2\n"));
    EXPECT_THROW(require_aligned(panel, proxies), input_error);
}

TEST(Kurtosis, AlternatingSeriesIsMinusTwo) {
    Vector x(10);
    for (Index i = 0; i < 10; ++i) x(i) = i % 2 == 0 ? -1.0 : 1.0;
    EXPECT_NEAR(excess_kurtosis(x), -2.0, 1e-12);
}

TEST(Kurtosis, StudentT5IsNearSix) {
    std::mt19937_64 rng(11);
    std::student_t_distribution<double> t5(5.0);
    Vector x(100000);
    for (auto& v : x) v = t5(rng);
    EXPECT_NEAR(excess_kurtosis(x), 6.0, 0.8);
}

TEST(Kurtosis, AffineInvariance) {
    std::mt19937_64 rng(5);
    const Vector x = testing_support::gaussian(200, 1, rng);
    const Vector y = (-3.5 * x.array() + 12.0).matrix();
    EXPECT_NEAR(excess_kurtosis(x), excess_kurtosis(y), 1e-10);
}

TEST(Kurtosis, ShortSeriesRejected) {
    EXPECT_THROW(excess_kurtosis(Vector::LinSpaced(3, 0.0, 1.0)), config_error);
}

TEST(Kurtosis, ReportCountsStrictlyAboveThreshold) {
    PanelMatrix p;
    p.values.resize(2, 10);
    for (Index t = 0; t < 10; ++t) {
        p.values(0, t) = t % 2 == 0 ? -1.0 : 1.0;
        p.values(1, t) = t == 0 ? 100.0 : 0.0;
    }
    p.series_ids = {"flat", "spike"};
    const auto report = kurtosis_report(p, -2.0);
    EXPECT_EQ(report.count_above, 1u);  // -2 is not strictly above -2
    TempDir dir;
    write_kurtosis_csv(report, dir.file("k.csv"));
    std::ifstream in(dir.file("k.csv"));
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "series_id,excess_kurtosis");
}

TEST(Sieve, LinearFamilyWithIntercept) {
    Matrix w(1, 4);
    w << 0.5, -1.0, 2.0, 3.0;
    SieveSpec spec{SieveFamily::linear, 1, true};
    const auto design = build_design(w, spec);
    ASSERT_EQ(design.dimension(), 2);
    EXPECT_EQ(design.phi.row(0), Matrix::Ones(1, 4));
    EXPECT_EQ(design.phi.row(1), w);
}

TEST(Sieve, FourierDimension) {
    std::mt19937_64 rng(1);
    const auto design = build_design(testing_support::gaussian(5, 100, rng), SieveSpec{});
    EXPECT_EQ(design.dimension(), 26);
    EXPECT_EQ(sieve_dimension(SieveSpec{}, 5), 26);
}

TEST(Sieve, FourierTermOrder) {
    Matrix w(1, 20);
    for (Index t = 0; t < 20; ++t) w(0, t) = static_cast<double>(t);
    const auto design = build_design(w, SieveSpec{SieveFamily::fourier, 3, false});
    const double u = 7.0 / 19.0;
    EXPECT_NEAR(design.phi(0, 7), std::sin(std::numbers::pi * u), 1e-14);
    EXPECT_NEAR(design.phi(1, 7), std::cos(std::numbers::pi * u), 1e-14);
    EXPECT_NEAR(design.phi(2, 7), std::sin(2.0 * std::numbers::pi * u), 1e-14);
}

TEST(Sieve, PolynomialPowersOfRescaledCovariate) {
    Matrix w(1, 10);
    for (Index t = 0; t < 10; ++t) w(0, t) = 2.0 + t;
    const auto design = build_design(w, SieveSpec{SieveFamily::polynomial, 3, true});
    const double u = 4.0 / 9.0;
    EXPECT_NEAR(design.phi(1, 4), u, 1e-14);
    EXPECT_NEAR(design.phi(3, 4), u * u * u, 1e-14);
}

TEST(Sieve, ConstantCovariateRejected) {
    Matrix w = Matrix::Ones(2, 30);
    w.row(0).setLinSpaced(30, 0.0, 1.0);
    EXPECT_THROW(build_design(w, SieveSpec{}), numerical_error);
}

TEST(Sieve, DimensionAboveHalfSampleRejected) {
    std::mt19937_64 rng(2);
    EXPECT_THROW(build_design(testing_support::gaussian(5, 40, rng), SieveSpec{}), config_error);
}

TEST(Sieve, EvaluateMatchesTrainingColumnsAndClamps) {
    std::mt19937_64 rng(9);
    const Matrix w = testing_support::gaussian(3, 60, rng);
    for (auto family : {SieveFamily::fourier, SieveFamily::polynomial, SieveFamily::linear}) {
        const auto design = build_design(w, SieveSpec{family, 4, true});
        for (Index t : {0, 17, 59}) EXPECT_EQ(evaluate(design, w.col(t)), design.phi.col(t));
        Vector below = w.rowwise().minCoeff();
        Vector further = below.array() - 5.0;
        EXPECT_EQ(evaluate(design, further), evaluate(design, below));
        EXPECT_EQ(evaluate_columns(design, w), design.phi);
    }
}

TEST(Sieve, LinearAtZeroIsUnitVector) {
    Matrix w(2, 10);
    w.row(0).setLinSpaced(10, -1.0, 1.0);
    for (Index t = 0; t < 10; ++t) w(1, t) = (t - 4.5) * (t - 4.5) - 5.0;
    const auto design = build_design(w, SieveSpec{SieveFamily::linear, 1, true});
    Vector expected = Vector::Zero(3);
    expected(0) = 1.0;
    EXPECT_EQ(evaluate(design, Vector::Zero(2)), expected);
}
