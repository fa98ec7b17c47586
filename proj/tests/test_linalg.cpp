#include <catch2/catch_amalgamated.hpp>

#include "pwavg/linalg.hpp"

using namespace pwavg::linalg;
using Catch::Approx;

TEST_CASE("LU solve and determinant", "[linalg]") {
    Mat a(3, 3);
    double vals[9] = {2, 1, -1, -3, -1, 2, -2, 1, 2};
    for (int i = 0; i < 9; ++i) a(i / 3, i % 3) = vals[i];
    Lu lu(a);
    REQUIRE_FALSE(lu.singular());
    CHECK(lu.det() == Approx(-1.0));

    Vec b = {8, -11, -3};
    Vec x = lu.solve(b);
    CHECK(x[0] == Approx(2.0));
    CHECK(x[1] == Approx(3.0));
    CHECK(x[2] == Approx(-1.0));

    Mat inv = lu.inverse();
    Mat prod = a.mul(inv);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(prod(i, j) == Approx(i == j ? 1.0 : 0.0).margin(1e-12));
}

TEST_CASE("singular matrix is detected", "[linalg]") {
    Mat a(2, 2);
    a(0, 0) = 1; a(0, 1) = 2; a(1, 0) = 2; a(1, 1) = 4;
    Lu lu(a);
    CHECK(lu.singular());
    CHECK(lu.det() == 0.0);
    Vec b = {1, 1};
    CHECK_THROWS_AS(lu.solve(b), pwavg::SingularError);
}

TEST_CASE("condition estimate of identity is one", "[linalg]") {
    CHECK(cond1(Mat::identity(4)) == Approx(1.0));
}
