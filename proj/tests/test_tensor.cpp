#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "muqar/tensor.hpp"

using namespace muqar;

namespace {

// Reduce any tensor to a scalar through a fixed pseudorandom projection so a
// gradient error anywhere in the output cannot cancel out.
Var project_scalar(const Var& y, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> coeff(y->numel());
    for (double& c : coeff) c = dist(rng);
    return scale(mean(mul(y, constant(y->shape, coeff))), static_cast<double>(y->numel()));
}

Var random_point(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = dist(rng);
    return parameter("p", shape, data);
}

// Samples with |x| in [0.1, 1.1] to stay clear of the relu kink.
Var random_point_away_from_zero(const Shape& shape, Rng& rng) {
    std::uniform_real_distribution<double> mag(0.1, 1.1);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = (sign(rng) ? 1.0 : -1.0) * mag(rng);
    return parameter("p", shape, data);
}

}  // namespace

TEST_CASE("forward op fixtures") {
    SUBCASE("matmul identity") {
        Var id = constant({2, 2}, {1, 0, 0, 1});
        Var m = constant({2, 2}, {3.5, -2, 7, 0.25});
        Var out = matmul(id, m);
        for (int i = 0; i < 4; ++i) CHECK(out->value[i] == m->value[i]);
    }
    SUBCASE("relu definition") {
        Var out = relu(constant({3}, {-1, 0, 2}));
        CHECK(out->value == std::vector<double>{0, 0, 2});
    }
    SUBCASE("l2 normalize divides by euclidean norm") {
        Var out = l2_normalize(constant({2}, {3, 4}));
        CHECK(out->value[0] == doctest::Approx(0.6).epsilon(1e-15));
        CHECK(out->value[1] == doctest::Approx(0.8).epsilon(1e-15));
    }
    SUBCASE("l2 normalize passes zero vector through") {
        Var out = l2_normalize(constant({3}, {0, 0, 0}));
        CHECK(out->value == std::vector<double>{0, 0, 0});
    }
    SUBCASE("global average pool") {
        // [1,2,2] over time axis
        Var out = global_avg_pool(constant({1, 2, 2}, {1, 2, 3, 4}));
        CHECK(out->value == std::vector<double>{2, 3});
    }
    SUBCASE("concat order") {
        Var out = concat({constant({1, 2}, {1, 2}), constant({1, 1}, {9})});
        CHECK(out->value == std::vector<double>{1, 2, 9});
    }
    SUBCASE("slice middle of last axis") {
        Var out = slice(constant({2, 3}, {1, 2, 3, 4, 5, 6}), 1, 1, 2);
        CHECK(out->value == std::vector<double>{2, 3, 5, 6});
    }
    SUBCASE("slice over time axis") {
        Var x = constant({2, 3, 2}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
        Var out = time_step(x, 1);
        CHECK(out->shape == Shape{2, 2});
        CHECK(out->value == std::vector<double>{3, 4, 9, 10});
    }
}

TEST_CASE("shape errors name the op and shapes") {
    Var a = constant({2, 3}, std::vector<double>(6, 1.0));
    Var b = constant({2, 3}, std::vector<double>(6, 1.0));
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), std::runtime_error);
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), std::runtime_error);
    CHECK_THROWS_AS(add(a, constant({2}, {1, 1})), std::runtime_error);
    CHECK_THROWS_AS(concat({a, constant({3, 1}, {1, 1, 1})}), std::runtime_error);
    CHECK_THROWS_AS(slice(a, 1, 2, 5), std::runtime_error);
    CHECK_THROWS_AS(embedding(a, {5}, 1, 1), std::runtime_error);
    CHECK_THROWS_AS(backward(a), std::runtime_error);  // loss must be scalar
}

TEST_CASE("backward fixtures") {
    SUBCASE("gradient of sum is all ones") {
        Var x = parameter("x", {4}, {0.3, -0.2, 1.5, 0.7});
        Var loss = scale(mean(x), 4.0);  // == sum(x)
        backward(loss);
        for (int i = 0; i < 4; ++i) CHECK(x->grad[i] == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("sigmoid derivative at zero is 0.25") {
        Var x = parameter("x", {1}, {0.0});
        backward(mean(sigmoid(x)));
        CHECK(x->grad[0] == doctest::Approx(0.25).epsilon(1e-15));
    }
    SUBCASE("fan-out accumulates additively") {
        Var x = parameter("x", {1}, {2.0});
        Var loss = mean(add(x, x));  // d/dx = 2
        backward(loss);
        CHECK(x->grad[0] == doctest::Approx(2.0).epsilon(1e-15));
    }
}

TEST_CASE("grad_check fixtures") {
    SUBCASE("sigmoid at 0.3") {
        Var x = parameter("x", {1}, {0.3});
        double err = grad_check([](const std::vector<Var>& p) { return mean(sigmoid(p[0])); },
                                {x}, 1e-5);
        CHECK(err < 1e-6);
    }
    SUBCASE("matmul 3x3 seed 7") {
        Rng rng(7);
        Var a = random_point({3, 3}, rng);
        Var b = random_point({3, 3}, rng);
        double err = grad_check(
            [](const std::vector<Var>& p) { return project_scalar(matmul(p[0], p[1]), 7); },
            {a, b}, 1e-5);
        CHECK(err < 1e-4);
    }
    SUBCASE("concat gradient is exact") {
        Rng rng(11);
        Var a = random_point({2, 3}, rng);
        Var b = random_point({2, 2}, rng);
        double err = grad_check(
            [](const std::vector<Var>& p) { return project_scalar(concat({p[0], p[1]}), 11); },
            {a, b}, 1e-5);
        CHECK(err < 1e-9);
    }
}

TEST_CASE("grad_check all op kinds at 10 seeded points") {
    struct OpCase {
        const char* name;
        std::function<double(Rng&)> run;  // returns max rel error at one point
    };

    auto check_unary = [](Rng& rng, const std::function<Var(Var)>& f, bool away_from_zero) {
        Var x = away_from_zero ? random_point_away_from_zero({3, 4}, rng)
                               : random_point({3, 4}, rng);
        const std::uint64_t seed = rng();
        return grad_check(
            [&](const std::vector<Var>& p) { return project_scalar(f(p[0]), seed); }, {x}, 1e-5);
    };

    std::vector<OpCase> cases = {
        {"matmul",
         [](Rng& rng) {
             Var a = random_point({4, 3}, rng), b = random_point({3, 5}, rng);
             const std::uint64_t seed = rng();
             return grad_check(
                 [&](const std::vector<Var>& p) { return project_scalar(matmul(p[0], p[1]), seed); },
                 {a, b}, 1e-5);
         }},
        {"conv1d",
         [](Rng& rng) {
             Var x = random_point({2, 5, 3}, rng);
             Var w = random_point({3, 3, 4}, rng);
             Var b = random_point({4}, rng);
             const std::uint64_t seed = rng();
             return grad_check(
                 [&](const std::vector<Var>& p) {
                     return project_scalar(conv1d(p[0], p[1], p[2]), seed);
                 },
                 {x, w, b}, 1e-5);
         }},
        {"embedding",
         [](Rng& rng) {
             Var table = random_point({6, 3}, rng);
             std::vector<int> idx = {1, 3, 5, 2, 3, 1};
             const std::uint64_t seed = rng();
             return grad_check(
                 [&](const std::vector<Var>& p) {
                     return project_scalar(embedding(p[0], idx, 2, 3, 1), seed);
                 },
                 {table}, 1e-5);
         }},
        {"concat",
         [](Rng& rng) {
             Var a = random_point({2, 3}, rng), b = random_point({2, 4}, rng);
             const std::uint64_t seed = rng();
             return grad_check(
                 [&](const std::vector<Var>& p) { return project_scalar(concat({p[0], p[1]}), seed); },
                 {a, b}, 1e-5);
         }},
        {"add_broadcast",
         [](Rng& rng) {
             Var a = random_point({3, 4}, rng), b = random_point({4}, rng);
             const std::uint64_t seed = rng();
             return grad_check(
                 [&](const std::vector<Var>& p) { return project_scalar(add(p[0], p[1]), seed); },
                 {a, b}, 1e-5);
         }},
        {"sub",
         [](Rng& rng) {
             Var a = random_point({3, 4}, rng), b = random_point({3, 4}, rng);
             const std::uint64_t seed = rng();
             return grad_check(
                 [&](const std::vector<Var>& p) { return project_scalar(sub(p[0], p[1]), seed); },
                 {a, b}, 1e-5);
         }},
        {"mul",
         [](Rng& rng) {
             Var a = random_point({3, 4}, rng), b = random_point({3, 4}, rng);
             const std::uint64_t seed = rng();
             return grad_check(
                 [&](const std::vector<Var>& p) { return project_scalar(mul(p[0], p[1]), seed); },
                 {a, b}, 1e-5);
         }},
        {"scale", [&](Rng& rng) { return check_unary(rng, [](Var x) { return scale(x, -1.7); }, false); }},
        {"relu", [&](Rng& rng) { return check_unary(rng, [](Var x) { return relu(x); }, true); }},
        {"sigmoid", [&](Rng& rng) { return check_unary(rng, [](Var x) { return sigmoid(x); }, false); }},
        {"tanh", [&](Rng& rng) { return check_unary(rng, [](Var x) { return tanh_op(x); }, false); }},
        {"softmax", [&](Rng& rng) { return check_unary(rng, [](Var x) { return softmax(x); }, false); }},
        {"softmax_cross_entropy",
         [](Rng& rng) {
             Var logits = random_point({4, 3}, rng);
             std::vector<int> labels = {0, 2, 1, 2};
             return grad_check(
                 [&](const std::vector<Var>& p) { return softmax_cross_entropy(p[0], labels); },
                 {logits}, 1e-5);
         }},
        {"dropout",
         [](Rng& rng) {
             Var x = random_point({3, 4}, rng);
             const std::uint64_t mask_seed = rng();
             const std::uint64_t proj_seed = rng();
             return grad_check(
                 [&](const std::vector<Var>& p) {
                     Rng mask_rng(mask_seed);  // same mask on every rebuild
                     return project_scalar(dropout(p[0], 0.4, true, mask_rng), proj_seed);
                 },
                 {x}, 1e-5);
         }},
        {"mean", [&](Rng& rng) { return check_unary(rng, [](Var x) { return mean(x); }, false); }},
        {"l2_normalize",
         [&](Rng& rng) { return check_unary(rng, [](Var x) { return l2_normalize(x); }, true); }},
        {"global_avg_pool",
         [](Rng& rng) {
             Var x = random_point({2, 4, 3}, rng);
             const std::uint64_t seed = rng();
             return grad_check(
                 [&](const std::vector<Var>& p) { return project_scalar(global_avg_pool(p[0]), seed); },
                 {x}, 1e-5);
         }},
        {"slice",
         [](Rng& rng) {
             Var x = random_point({2, 3, 4}, rng);
             const std::uint64_t seed = rng();
             return grad_check(
                 [&](const std::vector<Var>& p) {
                     return project_scalar(slice(p[0], 1, 1, 2), seed);
                 },
                 {x}, 1e-5);
         }},
        {"reshape",
         [](Rng& rng) {
             Var x = random_point({2, 6}, rng);
             const std::uint64_t seed = rng();
             return grad_check(
                 [&](const std::vector<Var>& p) {
                     return project_scalar(reshape(p[0], {3, 4}), seed);
                 },
                 {x}, 1e-5);
         }},
    };

    for (const auto& c : cases) {
        CAPTURE(c.name);
        for (int point = 0; point < 10; ++point) {
            Rng rng(0x5eed0000u + 97 * point);
            const double err = c.run(rng);
            CAPTURE(point);
            CHECK(err < 1e-4);
        }
    }
}

TEST_CASE("softmax rows are distributions") {
    Rng rng(21);
    std::uniform_real_distribution<double> dist(-8.0, 8.0);
    std::vector<double> data(7 * 11);
    for (double& v : data) v = dist(rng);
    Var y = softmax(constant({7, 11}, data));
    for (int r = 0; r < 7; ++r) {
        double sum = 0.0;
        for (int c = 0; c < 11; ++c) {
            const double p = y->value[r * 11 + c];
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
            sum += p;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
}

TEST_CASE("dropout statistics and inference identity") {
    const double rate = 0.3;
    const int n = 200000;
    Rng rng(1234);
    Var x = full({n}, 2.0);

    Var y = dropout(x, rate, true, rng);
    int zeros_seen = 0;
    for (int i = 0; i < n; ++i) {
        if (y->value[i] == 0.0) {
            ++zeros_seen;
        } else {
            CHECK(y->value[i] == doctest::Approx(2.0 / (1.0 - rate)).epsilon(1e-12));
        }
    }
    const double frac = static_cast<double>(zeros_seen) / n;
    CHECK(frac == doctest::Approx(rate).epsilon(0.02 / rate));

    // Inference mode passes the input through untouched.
    Var z = dropout(x, rate, false, rng);
    CHECK(z.get() == x.get());
}

TEST_CASE("forward is referentially transparent") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Var x = random_point({4, 6}, rng);
        Var w = random_point({6, 3}, rng);
        Rng drop_rng(99);
        Var y = dropout(relu(matmul(x, w)), 0.25, true, drop_rng);
        return y->value;
    };
    CHECK(run(5) == run(5));
}

TEST_CASE("embedding keeps frozen pad rows untouched") {
    Var table = parameter("t", {4, 2}, {0, 0, 1, 2, 3, 4, 5, 6});
    Var out = embedding(table, {0, 2, 0, 1}, 2, 2, 1);
    backward(project_scalar(out, 3));
    CHECK(table->grad[0] == 0.0);
    CHECK(table->grad[1] == 0.0);
    bool any_nonzero = false;
    for (std::size_t i = 2; i < table->grad.size(); ++i) any_nonzero |= table->grad[i] != 0.0;
    CHECK(any_nonzero);
}

TEST_CASE("backward visits shared subgraphs once") {
    Var x = parameter("x", {2}, {1.0, 2.0});
    Var h = mul(x, x);
    Var loss = mean(add(h, h));  // loss = mean(2x^2), d/dx = 2x
    backward(loss);
    CHECK(x->grad[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(x->grad[1] == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("param store round trip") {
    ParamStore store;
    Rng rng(77);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    std::vector<double> a(12), b(5);
    for (double& v : a) v = dist(rng);
    for (double& v : b) v = dist(rng);
    store.add("layer.w", {3, 4}, a);
    store.add("layer.b", {5}, b);
    CHECK(store.scalar_count() == 17);

    const std::string bin = "tensor_params_test.bin";
    const std::string manifest = "tensor_params_test.json";
    store.save(bin, manifest);

    ParamStore loaded;
    loaded.add("layer.w", {3, 4}, std::vector<double>(12, 0.0));
    loaded.add("layer.b", {5}, std::vector<double>(5, 0.0));
    loaded.load(bin, manifest);
    CHECK(loaded.get("layer.w")->value == a);
    CHECK(loaded.get("layer.b")->value == b);

    ParamStore wrong;
    wrong.add("layer.w", {4, 3}, std::vector<double>(12, 0.0));
    wrong.add("layer.b", {5}, std::vector<double>(5, 0.0));
    CHECK_THROWS_AS(wrong.load(bin, manifest), std::runtime_error);
    std::remove(bin.c_str());
    std::remove(manifest.c_str());
}

TEST_CASE("glorot and recurrent init bounds") {
    Rng rng(3);
    auto g = glorot_uniform(20, 30, 600, rng);
    const double gb = std::sqrt(6.0 / 50.0);
    for (double v : g) {
        CHECK(v <= gb);
        CHECK(v >= -gb);
    }
    auto r = recurrent_uniform(16, 256, rng);
    for (double v : r) {
        CHECK(v <= 0.25);
        CHECK(v >= -0.25);
    }
}
