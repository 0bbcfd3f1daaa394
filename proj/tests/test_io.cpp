#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include "kslayers/io.hpp"

using namespace kslayers;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("kslayers_io_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d / name;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("shortest round-trip formatting", "[io]") {
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(1.0) == "1");
    CHECK(format_double(1e-300) == "1e-300");
    std::mt19937_64 g(3);
    for (int i = 0; i < 2000; ++i) {
        const double x = std::ldexp(double(g() >> 11) * 0x1.0p-53 - 0.5, int(g() % 200) - 100);
        CHECK(std::strtod(format_double(x).c_str(), nullptr) == x);
    }
}

TEST_CASE("comment header and table layout", "[io]") {
    const auto h = comment_header({{"lambda", "0.001"}, {"k", "2"}});
    CHECK(h == std::string("# kslayers ") + kVersion + "\n# lambda=0.001\n# k=2\n");
    CsvTable t({"a", "b"});
    t.add_row(std::vector<double>{1.5, -2.0});
    t.add_row(std::vector<std::string>{"x", "y"});
    CHECK(t.rows() == 2);
    CHECK(t.str() == "a,b\n1.5,-2\nx,y\n");
    CHECK_THROWS_AS(t.add_row(std::vector<double>{1.0}), DomainError);
}

TEST_CASE("atomic write replaces the target and leaves no temporary", "[io]") {
    const auto p = scratch("sub/dir/out.txt");
    atomic_write(p, "first\n");
    CHECK(slurp(p) == "first\n");
    atomic_write(p, "second\n");
    CHECK(slurp(p) == "second\n");
    auto tmp = p;
    tmp += ".tmp";
    CHECK_FALSE(fs::exists(tmp));
}

TEST_CASE("profile CSV round trip", "[io]") {
    Profile P;
    for (int i = 0; i <= 50; ++i) {
        const double r = i / 50.0;
        P.r.push_back(r);
        P.u.push_back(std::exp(-3.0 * r) + 1.0 / 3.0);
        P.d1.push_back(-3.0 * std::exp(-3.0 * r));
        P.d2.push_back(9.0 * std::exp(-3.0 * r));
        P.piece.push_back(i < 10 ? kU0 : kU2);
    }
    const auto p = scratch("profile.csv");
    atomic_write(p, profile_table(P).str(comment_header({{"lambda", "0.01"}})));
    const auto Q = read_profile_csv(p);
    CHECK(Q.r == P.r);
    CHECK(Q.u == P.u);
    CHECK(Q.d1 == P.d1);
    CHECK(Q.d2 == P.d2);
    CHECK(Q.piece == P.piece);
}

TEST_CASE("profile CSV validation", "[io]") {
    const auto p = scratch("bad.csv");
    atomic_write(p, "r,v\n0,1\n0.5,1\n1,1\n");
    CHECK_THROWS_AS(read_profile_csv(p), DomainError);
    atomic_write(p, "r,u\n0,1\n0.5\n1,1\n");
    CHECK_THROWS_AS(read_profile_csv(p), DomainError);
    atomic_write(p, "r,u\n0,1\n0.5,1\n0.4,1\n");
    CHECK_THROWS_AS(read_profile_csv(p), DomainError);
    atomic_write(p, "r,u\n0,1\n");
    CHECK_THROWS_AS(read_profile_csv(p), DomainError);
    CHECK_THROWS_AS(read_profile_csv(scratch("missing.csv")), DomainError);
    atomic_write(p, "# comment\nu,r\n1,0\n2,0.5\n3,1\n");
    const auto q = read_profile_csv(p);
    CHECK(q.u == std::vector<double>{1, 2, 3});
    CHECK(q.piece == std::vector<int>{kNone, kNone, kNone});
}
