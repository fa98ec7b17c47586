#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "pwavg/averaging.hpp"
#include "pwavg/examples.hpp"
#include "pwavg/model.hpp"
#include "test_support.hpp"

using namespace pwavg;
using namespace pwavg::averaging;
using Catch::Approx;
using linalg::Vec;

namespace {

// Brute-force count of the partitions of {1..p} into exactly q blocks, via
// restricted growth strings.
long long count_set_partitions(int p, int q) {
    std::vector<int> assign(static_cast<std::size_t>(p), 0);
    long long count = 0;
    auto rec = [&](auto&& self, int i, int blocks) -> void {
        if (i == p) {
            if (blocks == q) ++count;
            return;
        }
        for (int b = 0; b <= blocks; ++b) {
            assign[static_cast<std::size_t>(i)] = b;
            self(self, i + 1, std::max(blocks, b + 1));
        }
    };
    rec(rec, 0, 0);
    return count;
}

// Number of integer partitions of n.
int partition_count(int n) {
    std::vector<int> p(static_cast<std::size_t>(n) + 1, 0);
    p[0] = 1;
    for (int part = 1; part <= n; ++part)
        for (int s = part; s <= n; ++s) p[s] += p[s - part];
    return p[static_cast<std::size_t>(n)];
}

}  // namespace

TEST_CASE("partition tuple enumeration", "[combinatorics]") {
    SECTION("l = 1") {
        auto t = enumerate_partition_tuples(1);
        REQUIRE(t.size() == 1);
        CHECK(t[0].b == std::vector<int>{1});
        CHECK(t[0].L == 1);
        CHECK(t[0].coeff == Approx(1.0));
    }
    SECTION("l = 2, documented order") {
        auto t = enumerate_partition_tuples(2);
        REQUIRE(t.size() == 2);
        CHECK(t[0].b == std::vector<int>{2, 0});
        CHECK(t[0].L == 2);
        CHECK(t[0].coeff == Approx(0.5));
        CHECK(t[1].b == std::vector<int>{0, 1});
        CHECK(t[1].L == 1);
        CHECK(t[1].coeff == Approx(0.5));
    }
    SECTION("l = 3, documented order") {
        auto t = enumerate_partition_tuples(3);
        REQUIRE(t.size() == 3);
        CHECK(t[0].b == std::vector<int>{3, 0, 0});
        CHECK(t[1].b == std::vector<int>{1, 1, 0});
        CHECK(t[2].b == std::vector<int>{0, 0, 1});
    }
    SECTION("cardinalities are the integer partition counts") {
        for (int l = 1; l <= 6; ++l)
            CHECK(enumerate_partition_tuples(l).size() ==
                  static_cast<std::size_t>(partition_count(l)));
    }
    SECTION("out of range") {
        CHECK_THROWS_AS(enumerate_partition_tuples(0), PreconditionError);
        CHECK_THROWS_AS(enumerate_partition_tuples(7), PreconditionError);
    }
}

TEST_CASE("transverse tuple enumeration excludes the top order", "[combinatorics]") {
    CHECK(enumerate_transverse_tuples(1).empty());
    auto t2 = enumerate_transverse_tuples(2);
    REQUIRE(t2.size() == 1);
    CHECK(t2[0].b == std::vector<int>{2});
    CHECK(t2[0].coeff == Approx(0.5));
    for (int i = 2; i <= 6; ++i)
        CHECK(enumerate_transverse_tuples(i).size() ==
              static_cast<std::size_t>(partition_count(i)) - 1);
}

TEST_CASE("partial Bell polynomials", "[combinatorics]") {
    SECTION("B_{p,p} = x_1^p") {
        for (int p = 1; p <= 5; ++p) {
            std::vector<double> x = {1.7};
            CHECK(bell_partial(p, p, x) == Approx(std::pow(1.7, p)));
        }
    }
    SECTION("B_{p,1} = x_p") {
        std::vector<double> x = {1.1, 2.2, 3.3, 4.4, 5.5, 6.6};
        for (int p = 1; p <= 6; ++p) CHECK(bell_partial(p, 1, x) == Approx(x[p - 1]));
    }
    SECTION("B_{3,2}(x1, x2) = 3 x1 x2") {
        std::vector<double> x = {2.0, 5.0};
        CHECK(bell_partial(3, 2, x) == Approx(30.0));
    }
    SECTION("row sums at ones are the Bell numbers (set-partition oracle)") {
        const long long expected[] = {1, 2, 5, 15, 52, 203};
        std::vector<double> ones(7, 1.0);
        for (int p = 1; p <= 6; ++p) {
            double row = 0.0;
            for (int q = 1; q <= p; ++q) {
                double b = bell_partial(p, q, ones);
                CHECK(b == Approx(static_cast<double>(count_set_partitions(p, q))));
                row += b;
            }
            CHECK(row == Approx(static_cast<double>(expected[p - 1])));
        }
    }
    SECTION("invalid (p, q)") {
        std::vector<double> x = {1.0};
        CHECK_THROWS_AS(bell_partial(2, 3, x), PreconditionError);
        CHECK_THROWS_AS(bell_partial(2, 0, x), PreconditionError);
    }
}

TEST_CASE("derivative tensors from the engine", "[combinatorics][averaging]") {
    const model::LoadedModel lm =
        model::load_system(examples::find_example("fourzone")->config);
    averaging::Engine engine(lm.system);

    SECTION("order zero is the field itself") {
        DerivTensor T = engine.derivative_tensor(0, 0, 0, 0.3, std::vector<double>{1.2, 0.7});
        // zone-1 unperturbed field: (r (sin-cos)/(sin+cos), -r w/(sin+cos))
        const double th = 0.3, r = 1.2, w = 0.7;
        const double gh = std::sin(th) + std::cos(th);
        CHECK(T.a[0] == Approx(r * (std::sin(th) - std::cos(th)) / gh).epsilon(1e-13));
        CHECK(T.a[1] == Approx(-r * w / gh).epsilon(1e-13));
    }

    SECTION("mixed second partial matches finite differences") {
        // second component of the zone-1 unperturbed field is -r w/(sin+cos)
        const double th = 0.2;
        DerivTensor T = engine.derivative_tensor(0, 0, 2, th, std::vector<double>{1.0, 1.0});
        auto field = [&](double r, double w) {
            return -r * w / (std::sin(th) + std::cos(th));
        };
        double h = 1e-4;
        double fd = (field(1 + h, 1 + h) - field(1 + h, 1 - h) - field(1 - h, 1 + h) +
                     field(1 - h, 1 - h)) /
                    (4 * h * h);
        std::vector<int> idx = {0, 1};
        CHECK(T.entry(1, idx) == Approx(fd).margin(1e-5));
        std::vector<int> idx_swapped = {1, 0};
        CHECK(T.entry(1, idx) == T.entry(1, idx_swapped));
    }

    SECTION("linear field has a vanishing second tensor") {
        // build a linear single-zone system inline
        const std::string cfg =
            "[system]\nm = 2\nT = 1\nk = 1\nswitch_times = [0, 1]\n\n"
            "[[zone]]\nrhs_order_0 = [\"x_2\", \"-x_1\"]\nrhs_order_1 = [\"0\", \"0\"]\n\n"
            "[manifold]\nd = 2\nbeta = []\nv_lower = [-1, -1]\nv_upper = [1, 1]\n";
        model::LoadedModel linear = model::load_system(cfg);
        averaging::Engine eng(linear.system);
        DerivTensor T = eng.derivative_tensor(0, 0, 2, 0.5, std::vector<double>{0.3, 0.4});
        for (double v : T.a) CHECK(v == 0.0);
    }
}

TEST_CASE("multilinear contraction", "[combinatorics]") {
    SECTION("order one is the Jacobian-vector product") {
        DerivTensor T;
        T.in_dim = 2;
        T.out_dim = 2;
        T.order = 1;
        T.a = {1.0, 2.0, 3.0, 4.0};  // row-major [[1,2],[3,4]]
        std::vector<Vec> args = {{5.0, 7.0}};
        Vec r = multilinear_contract(T, args);
        CHECK(r[0] == Approx(19.0));
        CHECK(r[1] == Approx(43.0));
    }

    SECTION("symmetric tensor contracted along a direction matches a directional FD") {
        // F(x) = (x1^2 x2, sin(x1) x2^2): d2/ds2 F(x + s v)|_0 = d2F (v, v)
        expr::VarTable vars({"x_1", "x_2"});
        auto f1 = expr::parse_expression("x_1^2*x_2", vars);
        auto f2 = expr::parse_expression("sin(x_1)*x_2^2", vars);
        Vec x = {0.7, 1.3}, v = {0.4, -0.9};
        DerivTensor T;
        T.in_dim = 2;
        T.out_dim = 2;
        T.order = 2;
        T.a.resize(8);
        for (int c = 0; c < 2; ++c) {
            const auto& f = c == 0 ? f1 : f2;
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                    T.a[static_cast<std::size_t>(c) * 4 + static_cast<std::size_t>(i) * 2 + j] =
                        expr::eval(expr::differentiate(expr::differentiate(f, i), j), x);
        }
        std::vector<Vec> args = {v, v};
        Vec direct = multilinear_contract(T, args);
        auto eval_sym = [&](double s, const expr::ExprPtr& f) {
            Vec xs = {x[0] + s * v[0], x[1] + s * v[1]};
            return expr::eval(f, xs);
        };
        const double h = 1e-4;
        for (int c = 0; c < 2; ++c) {
            const auto& f = c == 0 ? f1 : f2;
            double fd = (eval_sym(h, f) - 2.0 * eval_sym(0.0, f) + eval_sym(-h, f)) / (h * h);
            CHECK(direct[c] == Approx(fd).margin(1e-5));
        }
    }

    SECTION("multiset form expands multiplicities") {
        DerivTensor T;
        T.in_dim = 2;
        T.out_dim = 1;
        T.order = 2;
        T.a = {1.0, 2.0, 2.0, 5.0};  // symmetric [[1,2],[2,5]]
        Vec v = {0.5, -1.5};
        std::vector<std::pair<const Vec*, int>> args = {{&v, 2}};
        Vec direct = multilinear_contract(T, args);
        std::vector<Vec> expanded = {v, v};
        CHECK(direct[0] == Approx(multilinear_contract(T, expanded)[0]));
    }

    SECTION("arity mismatch is rejected") {
        DerivTensor T;
        T.in_dim = 2;
        T.out_dim = 2;
        T.order = 2;
        T.a.assign(8, 0.0);
        std::vector<Vec> args = {{1.0, 2.0}};
        CHECK_THROWS_AS(multilinear_contract(T, args), PreconditionError);
    }
}
