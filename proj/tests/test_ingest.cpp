#include "ctm/ingest.hpp"
#include "fixtures.hpp"

#include <doctest.h>

#include <cstring>

using namespace ctm;
using ctm::testing::TempDir;
using ctm::testing::write_text;

namespace {

// Hand-assembled NPY v1.0 file, independent of the writer under test.
std::string npy_bytes(const std::string& descr, const std::string& shape, const std::vector<double>& data,
                      bool fortran = false, char major = 1) {
    std::string header = "{'descr': '" + descr + "', 'fortran_order': " + (fortran ? "True" : "False") +
                         ", 'shape': " + shape + ", }";
    while ((10 + header.size() + 1) % 16 != 0) {
        header += ' ';
    }
    header += '\n';
    std::string out = "\x93NUMPY";
    out += major;
    out += '\0';
    out += static_cast<char>(header.size() & 0xff);
    out += static_cast<char>(header.size() >> 8);
    out += header;
    for (const double v : data) {
        if (descr == "<f4") {
            const float f = static_cast<float>(v);
            out.append(reinterpret_cast<const char*>(&f), sizeof f);
        } else {
            out.append(reinterpret_cast<const char*>(&v), sizeof v);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("npy 2x2 float64 reads exactly") {
    TempDir dir("ingest");
    write_text(dir / "a.npy", npy_bytes("<f8", "(2, 2)", {1.0, 2.0, 3.0, 4.0}));
    const MatrixXr m = read_array(dir / "a.npy");
    REQUIRE(m.rows() == 2);
    REQUIRE(m.cols() == 2);
    CHECK(m(0, 0) == 1.0);
    CHECK(m(0, 1) == 2.0);
    CHECK(m(1, 0) == 3.0);
    CHECK(m(1, 1) == 4.0);
}

TEST_CASE("npy float32 widens exactly") {
    TempDir dir("ingest");
    write_text(dir / "a.npy", npy_bytes("<f4", "(1, 3)", {0.1, -2.5, 1e-3}));
    const MatrixXr m = read_array(dir / "a.npy");
    CHECK(m(0, 0) == static_cast<double>(0.1f));
    CHECK(m(0, 1) == -2.5);
    CHECK(m(0, 2) == static_cast<double>(1e-3f));
}

TEST_CASE("csv with header") {
    TempDir dir("ingest");
    write_text(dir / "a.csv", "a,b\n1,2\n");
    const MatrixXr m = read_array(dir / "a.csv");
    CHECK(m.rows() == 1);
    CHECK(m.cols() == 2);
    CHECK(m(0, 1) == 2.0);
}

TEST_CASE("layout and format errors") {
    TempDir dir("ingest");
    write_text(dir / "vec.npy", npy_bytes("<f8", "(3,)", {1, 2, 3}));
    CHECK_THROWS_AS(read_array(dir / "vec.npy"), LayoutError);

    write_text(dir / "fortran.npy", npy_bytes("<f8", "(2, 1)", {1, 2}, true));
    CHECK_THROWS_AS(read_array(dir / "fortran.npy"), LayoutError);

    write_text(dir / "int.npy", npy_bytes("<i2", "(1, 1)", {}));
    CHECK_THROWS_AS(read_array(dir / "int.npy"), LayoutError);

    write_text(dir / "bad.npy", "NOTNUMPY");
    CHECK_THROWS_AS(read_array(dir / "bad.npy"), FormatError);

    write_text(dir / "ragged.csv", "a,b\n1,2\n3\n");
    CHECK_THROWS_AS(read_array(dir / "ragged.csv"), Error);

    CHECK_THROWS_AS(read_array(dir / "missing.npy"), Error);
}

TEST_CASE("non-finite entry names row and column") {
    TempDir dir("ingest");
    write_text(dir / "nan.npy",
               npy_bytes("<f8", "(2, 2)", {1.0, 2.0, 3.0, std::numeric_limits<double>::quiet_NaN()}));
    try {
        read_array(dir / "nan.npy");
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        const std::string what = e.what();
        CHECK(what.find("row 1") != std::string::npos);
        CHECK(what.find("column 1") != std::string::npos);
    }
    write_text(dir / "inf.csv", "a\n1\ninf\n");
    CHECK_THROWS_AS(read_array(dir / "inf.csv"), ValidationError);
}

TEST_CASE("write/read round trips") {
    TempDir dir("ingest");
    SUBCASE("single entry") {
        MatrixXr x(1, 1);
        x << 1.5;
        write_array(x, dir / "x.npy", ArrayFormat::npy);
        CHECK(read_array(dir / "x.npy") == x);
    }
    SUBCASE("random matrices, npy exact and csv exact via shortest repr") {
        std::mt19937_64 rng(7);
        for (int trial = 0; trial < 20; ++trial) {
            const Index r = 1 + static_cast<Index>(rng() % 9);
            const Index c = 1 + static_cast<Index>(rng() % 9);
            MatrixXr x = ctm::testing::random_matrix(rng, r, c, std::pow(10.0, static_cast<double>(rng() % 20) - 10));
            write_array(x, dir / "x.npy", ArrayFormat::npy);
            CHECK(read_array(dir / "x.npy") == x);
            write_array(x, dir / "x.csv", ArrayFormat::csv);
            const MatrixXr y = read_array(dir / "x.csv");
            CHECK(((y - x).cwiseAbs().array() <= 1e-12 * x.cwiseAbs().array()).all());
        }
    }
    SUBCASE("extreme magnitudes") {
        MatrixXr x(1, 4);
        x << std::numeric_limits<double>::min(), std::numeric_limits<double>::max(), -0.0, 5e-324;
        write_array(x, dir / "x.npy", ArrayFormat::npy);
        const MatrixXr y = read_array(dir / "x.npy");
        CHECK(std::memcmp(x.data(), y.data(), sizeof(double) * 4) == 0);
    }
    SUBCASE("empty matrix is rejected") {
        CHECK_THROWS_AS(write_array(MatrixXr(0, 0), dir / "e.npy", ArrayFormat::npy), ValidationError);
    }
    SUBCASE("unwritable path") {
        MatrixXr x = MatrixXr::Ones(1, 1);
        CHECK_THROWS_AS(write_array(x, dir / "no_such_dir" / "x.npy", ArrayFormat::npy), IoError);
    }
}

TEST_CASE("score vectors are written one per line") {
    TempDir dir("ingest");
    VectorXr s(2);
    s << 0.1, 0.2;
    write_scores(s, dir / "s.csv", ArrayFormat::csv);
    CHECK(ctm::testing::read_text(dir / "s.csv") == "score\n0.1\n0.2\n");
    write_scores(s, dir / "s.npy", ArrayFormat::npy);
    const MatrixXr back = read_array(dir / "s.npy");
    CHECK(back.rows() == 2);
    CHECK(back.cols() == 1);
    CHECK(back(1, 0) == 0.2);
}

TEST_CASE("labels") {
    TempDir dir("ingest");
    write_text(dir / "y.csv", "label\n0\n2\n1\n");
    const LabelVector y = read_labels(dir / "y.csv");
    CHECK(y.num_classes == 3);
    CHECK(y.labels == std::vector<int>{0, 2, 1});
    CHECK(read_labels(dir / "y.csv", 5).num_classes == 5);
    CHECK_THROWS_AS(read_labels(dir / "y.csv", 2), ValidationError);

    write_text(dir / "y.npy", npy_bytes("<f8", "(3,)", {1, 0, 1}));
    CHECK(read_labels(dir / "y.npy").labels == std::vector<int>{1, 0, 1});

    write_text(dir / "frac.csv", "label\n0.5\n1\n");
    CHECK_THROWS_AS(read_labels(dir / "frac.csv"), ValidationError);

    write_labels(y, dir / "out.csv");
    CHECK(read_labels(dir / "out.csv").labels == y.labels);
}

TEST_CASE("format selection") {
    CHECK(format_for_path("a/b.npy") == ArrayFormat::npy);
    CHECK(format_for_path("a/b.csv") == ArrayFormat::csv);
    CHECK(parse_array_format("csv") == ArrayFormat::csv);
    CHECK_THROWS_AS(parse_array_format("parquet"), ValidationError);
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

void touch_arrays(const TempDir& dir) {
    MatrixXr x = MatrixXr::Ones(2, 2);
    for (const char* name : {"tr.npy", "te.npy", "o1.npy", "o2.npy"}) {
        write_array(x, dir / name, ArrayFormat::npy);
    }
    write_text(dir / "y.csv", "label\n0\n1\n");
}

}  // namespace

TEST_CASE("minimal manifest defaults") {
    TempDir dir("manifest");
    touch_arrays(dir);
    write_text(dir / "m.json", R"({"id_train": {"features": "tr.npy", "labels": "y.csv"},
                                   "id_test": {"features": "te.npy"},
                                   "ood_sets": {"textures": "o1.npy"}})");
    const auto m = load_manifest(dir / "m.json");
    CHECK(m.runs == 5);
    CHECK(m.seed == 0);
    REQUIRE(m.ood_sets.size() == 1);
    CHECK(m.ood_sets[0].name == "textures");
    CHECK(m.ood_sets[0].features == dir / "o1.npy");
    REQUIRE(m.methods.size() == 1);
    CHECK(m.methods[0].name == "ctm");
    CHECK(m.warnings.empty());
}

TEST_CASE("knn k=50 reaches the method config") {
    TempDir dir("manifest");
    touch_arrays(dir);
    write_text(dir / "m.json", R"({"id_train": {"features": "tr.npy", "labels": "y.csv"},
                                   "id_test": {"features": "te.npy"},
                                   "ood_sets": [{"name": "a", "features": "o1.npy"},
                                                {"name": "b", "features": "o2.npy"}],
                                   "methods": ["ctm", {"name": "knn", "k": 50}, {"name": "energy", "T": 2}],
                                   "seed": 9, "runs": 3})");
    const auto m = load_manifest(dir / "m.json");
    REQUIRE(m.methods.size() == 3);
    CHECK(m.methods[1].name == "knn");
    CHECK(m.methods[1].k == 50);
    CHECK(m.methods[1].label() == "knn(k=50)");
    CHECK(m.methods[2].temperature == 2.0);
    CHECK(m.seed == 9);
    CHECK(m.runs == 3);
    CHECK(m.ood_sets[1].name == "b");
}

TEST_CASE("manifest contract errors") {
    TempDir dir("manifest");
    touch_arrays(dir);
    const std::string base = R"("id_train": {"features": "tr.npy", "labels": "y.csv"}, )";

    SUBCASE("missing id_test names the key") {
        write_text(dir / "m.json", "{" + base + R"("ood_sets": {"a": "o1.npy"}})");
        try {
            load_manifest(dir / "m.json");
            FAIL("expected SchemaError");
        } catch (const SchemaError& e) {
            CHECK(std::string(e.what()).find("id_test") != std::string::npos);
        }
    }
    SUBCASE("dangling path") {
        write_text(dir / "m.json", "{" + base + R"("id_test": {"features": "te.npy"}, "ood_sets": {"a": "gone.npy"}})");
        CHECK_THROWS_AS(load_manifest(dir / "m.json"), ValidationError);
    }
    SUBCASE("unknown key warns") {
        write_text(dir / "m.json",
                   "{" + base + R"("id_test": {"features": "te.npy"}, "ood_sets": {"a": "o1.npy"}, "colour": "blue"})");
        const auto m = load_manifest(dir / "m.json");
        REQUIRE(m.warnings.size() == 1);
        CHECK(m.warnings[0].find("colour") != std::string::npos);
    }
    SUBCASE("hyperparameter on a method that takes none") {
        write_text(dir / "m.json", "{" + base +
                                       R"("id_test": {"features": "te.npy"}, "ood_sets": {"a": "o1.npy"},
                                          "methods": [{"name": "ctm", "k": 3}]})");
        CHECK_THROWS_AS(load_manifest(dir / "m.json"), SchemaError);
    }
    SUBCASE("knn without k") {
        write_text(dir / "m.json", "{" + base +
                                       R"("id_test": {"features": "te.npy"}, "ood_sets": {"a": "o1.npy"}, "methods": ["knn"]})");
        CHECK_THROWS_AS(load_manifest(dir / "m.json"), SchemaError);
    }
    SUBCASE("bad runs") {
        write_text(dir / "m.json", "{" + base + R"("id_test": {"features": "te.npy"}, "ood_sets": {"a": "o1.npy"}, "runs": 0})");
        CHECK_THROWS_AS(load_manifest(dir / "m.json"), Error);
    }
    SUBCASE("invalid json") {
        write_text(dir / "m.json", "{ not json");
        CHECK_THROWS_AS(load_manifest(dir / "m.json"), FormatError);
    }
    SUBCASE("empty ood sets") {
        write_text(dir / "m.json", "{" + base + R"("id_test": {"features": "te.npy"}, "ood_sets": {}})");
        CHECK_THROWS_AS(load_manifest(dir / "m.json"), Error);
    }
}
