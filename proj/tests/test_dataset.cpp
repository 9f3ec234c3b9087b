#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

#include "igsr/dataset.hpp"
#include "igsr/simgen.hpp"

using namespace igsr;

namespace {

std::string temp_path(const std::string& name) {
    return std::string("./") + name;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

// 30 rows so every split is non-empty at default fractions.
Dataset numbered_dataset(std::size_t rows = 30) {
    std::vector<double> x(rows), y(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        x[i] = static_cast<double>(i + 1);
        y[i] = 2.0 * x[i];
    }
    return Dataset({"x"}, {{"x", x}}, {"y"}, {{"y", y}});
}

} // namespace

TEST_CASE("load_table reads headered CSV with named targets") {
    const std::string path = temp_path("igsr_test_basic.csv");
    write_file(path, "x,u,y\n1,2,3\n4,5,6\n");
    Dataset d = load_table(path, {"y"});
    CHECK(d.rows() == 2);
    CHECK(d.feature_names() == std::vector<std::string>{"x", "u"});
    CHECK(d.target_names() == std::vector<std::string>{"y"});
    CHECK(d.feature("u")[1] == 5.0);
    CHECK(d.target("y")[0] == 3.0);
    std::remove(path.c_str());
}

TEST_CASE("load_table error paths") {
    CHECK_THROWS_AS(load_table("./does_not_exist.csv", {"y"}), DataError);

    const std::string path = temp_path("igsr_test_bad.csv");
    write_file(path, "x,y\n1,2\nabc,4\n");
    CHECK_THROWS_WITH_AS(load_table(path, {"y"}),
                         doctest::Contains("non-numeric cell 'abc' at row 3"), DataError);
    write_file(path, "x,y\n1,2\n");
    CHECK_THROWS_WITH_AS(load_table(path, {"z"}), doctest::Contains("missing target column"),
                         DataError);
    std::remove(path.c_str());
}

TEST_CASE("save/load round trip is bit identical") {
    std::vector<double> gnarly = {0.1, 1.0 / 3.0, 1e-300, -0.0, 6.33977252002678e-27,
                                  12345.678901234567};
    std::vector<double> y = {1, 2, 3, 4, 5, 6};
    Dataset d({"v"}, {{"v", gnarly}}, {"y"}, {{"y", y}});
    const std::string path = temp_path("igsr_test_roundtrip.csv");
    save_table(d, path);
    Dataset back = load_table(path, {"y"});
    REQUIRE(back.rows() == gnarly.size());
    for (std::size_t i = 0; i < gnarly.size(); ++i)
        CHECK(std::memcmp(&back.feature("v")[i], &gnarly[i], sizeof(double)) == 0);
    std::remove(path.c_str());
}

TEST_CASE("split_dataset is deterministic with exact fractions") {
    Dataset d = numbered_dataset(100);
    Dataset s1 = split_dataset(d, {0.7, 0.15, 0.15}, 42);
    CHECK(s1.rows_of(Split::Train).size() == 70);
    CHECK(s1.rows_of(Split::Validation).size() == 15);
    CHECK(s1.rows_of(Split::Test).size() == 15);

    Dataset s2 = split_dataset(d, {0.7, 0.15, 0.15}, 42);
    CHECK(s1.rows_of(Split::Train) == s2.rows_of(Split::Train));
    CHECK(s1.rows_of(Split::Test) == s2.rows_of(Split::Test));

    Dataset s3 = split_dataset(d, {0.7, 0.15, 0.15}, 43);
    CHECK(s1.rows_of(Split::Train) != s3.rows_of(Split::Train));
}

TEST_CASE("split_dataset validates fractions and emptiness") {
    Dataset d = numbered_dataset(30);
    CHECK_THROWS_AS(split_dataset(d, {0.5, 0.3, 0.3}, 1), DataError);
    CHECK_THROWS_AS(split_dataset(d, {-0.2, 0.6, 0.6}, 1), DataError);
    Dataset tiny = numbered_dataset(2);
    CHECK_THROWS_AS(split_dataset(tiny, {0.5, 0.25, 0.25}, 1), DataError);
}

TEST_CASE("grouped split keeps trajectories whole") {
    const std::size_t trajectories = 10, steps = 60;
    std::vector<double> traj, x, y;
    for (std::size_t t = 0; t < trajectories; ++t)
        for (std::size_t s = 0; s < steps; ++s) {
            traj.push_back(static_cast<double>(t));
            x.push_back(static_cast<double>(s));
            y.push_back(static_cast<double>(s) * 0.5);
        }
    Dataset d({"x", kTrajectoryColumn}, {{"x", x}, {kTrajectoryColumn, traj}}, {"y"},
              {{"y", y}});
    Dataset s = split_dataset(d, {0.7, 0.15, 0.15}, 9);
    for (Split sp : {Split::Train, Split::Validation, Split::Test}) {
        std::set<double> ids;
        for (std::size_t row : s.rows_of(sp)) ids.insert(traj[row]);
        // Every trajectory in this split must have all 60 rows here.
        CHECK(s.rows_of(sp).size() == ids.size() * steps);
    }
}

TEST_CASE("nested validation partitions the validation rows") {
    Dataset d = numbered_dataset(100);
    Dataset s = split_dataset(d, {0.7, 0.15, 0.15}, 5, true);
    const auto& val = s.rows_of(Split::Validation);
    const auto& inner = s.rows_of(Split::ValInner);
    const auto& outer = s.rows_of(Split::ValOuter);
    CHECK(inner.size() + outer.size() == val.size());
    std::set<std::size_t> inner_set(inner.begin(), inner.end());
    for (std::size_t row : outer) CHECK(!inner_set.count(row));
    std::set<std::size_t> all(val.begin(), val.end());
    for (std::size_t row : inner) CHECK(all.count(row));
}

TEST_CASE("design matrix columns equal term evaluation bitwise") {
    std::vector<double> x = {1, 2, 3, 4, 5};
    std::vector<double> y = {1, 4, 9, 16, 25};
    Dataset d({"x"}, {{"x", x}}, {"y"}, {{"y", y}});
    d.assign_split({Split::Train, Split::Train, Split::Train, Split::Validation, Split::Test},
                   false);

    std::vector<Term> terms = {Term::parse("x"), Term::parse("x**2")};
    DesignMatrix m = build_design_matrix(terms, d, Split::Train);
    REQUIRE(m.terms.size() == 2);
    CHECK(m.phi.rows() == 3);
    CHECK(m.phi(0, 0) == 1.0);
    CHECK(m.phi(1, 1) == 4.0);
    CHECK(m.phi(2, 1) == 9.0);

    auto direct = evaluate(terms[1].ast, d.frame(Split::Train), 3);
    for (int i = 0; i < 3; ++i)
        CHECK(std::memcmp(&m.phi(i, 1), &direct[static_cast<std::size_t>(i)], sizeof(double)) ==
              0);
}

TEST_CASE("a simulated export reloads bit-identically") {
    Dataset sim = simulate_pkpd(PkpdVariant::ChemoRadio, 3, PkpdParams{}, 13);
    const std::string path = temp_path("igsr_test_pkpd_roundtrip.csv");
    save_table(sim, path);
    Dataset back = load_table(path, {"dv_dt", "dc_dt"});
    REQUIRE(back.rows() == sim.rows());
    for (const auto& name : sim.feature_names())
        for (std::size_t i = 0; i < sim.rows(); ++i)
            CHECK(std::memcmp(&back.feature(name)[i], &sim.feature(name)[i], sizeof(double)) ==
                  0);
    for (const auto& name : sim.target_names())
        for (std::size_t i = 0; i < sim.rows(); ++i)
            CHECK(std::memcmp(&back.target(name)[i], &sim.target(name)[i], sizeof(double)) == 0);
    std::remove(path.c_str());
}

TEST_CASE("the ten worked candidate terms produce a ten-column design matrix") {
    Dataset d = split_dataset(simulate_pkpd(PkpdVariant::ChemoRadio, 10, PkpdParams{}, 29), {},
                              29);
    std::vector<Term> terms;
    for (const char* src : {"cancer_volume", "chemo_concentration", "chemo_dosage",
                            "radiotherapy_dosage", "np.log(cancer_volume + 1)",
                            "np.sqrt(cancer_volume)", "chemo_dosage * radiotherapy_dosage",
                            "cancer_volume * chemo_concentration",
                            "radiotherapy_dosage / (cancer_volume + 1)",
                            "chemo_dosage / (chemo_concentration + 1)"})
        terms.push_back(Term::parse(src));
    DesignMatrix m = build_design_matrix(terms, d, Split::Train);
    CHECK(m.terms.size() == 10);
    CHECK(m.phi.cols() == 10);
    CHECK(m.rejected.empty());
    for (std::size_t j = 0; j < terms.size(); ++j) {
        auto direct = evaluate(terms[j].ast, d.frame(Split::Train),
                               d.rows_of(Split::Train).size());
        for (Eigen::Index i = 0; i < m.phi.rows(); ++i)
            CHECK(m.phi(i, static_cast<Eigen::Index>(j)) ==
                  direct[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("non-finite terms are rejected split-consistently") {
    // log(x - 5) is finite on train rows but not on the validation row.
    std::vector<double> x = {10, 11, 12, 1, 10};
    std::vector<double> y = {0, 0, 0, 0, 0};
    Dataset d({"x"}, {{"x", x}}, {"y"}, {{"y", y}});
    d.assign_split({Split::Train, Split::Train, Split::Train, Split::Validation, Split::Test},
                   false);

    std::vector<Term> terms = {Term::parse("x"), Term::parse("np.log(x - 5)")};
    DesignMatrix m = build_design_matrix(terms, d, Split::Train);
    CHECK(m.terms.size() == 1);
    REQUIRE(m.rejected.size() == 1);
    CHECK(m.rejected[0].first.source == "np.log(x - 5)");
    CHECK(m.rejected[0].second == "non-finite value on validation");

    std::vector<Term> all_bad = {Term::parse("np.log(x - 50)")};
    CHECK_THROWS_WITH_AS(build_design_matrix(all_bad, d, Split::Train),
                         doctest::Contains("all candidate terms were rejected"), DataError);
}
