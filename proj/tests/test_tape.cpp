#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "brainattr/tape.hpp"
#include "helpers.hpp"

using namespace brainattr;
using testutil::GraphSpec;
using testutil::random_tensor;

TEST_CASE("matmul identity") {
    Tape tape;
    const NodeId eye = tape.leaf(Tensor({2, 2}, {1, 0, 0, 1}));
    const NodeId m = tape.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
    const NodeId out = tape.matmul(eye, m);
    CHECK(tape.value(out).values == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("softmax symmetry") {
    Tape tape;
    const NodeId x = tape.leaf(Tensor({1, 2}, {0, 0}));
    const auto& y = tape.value(tape.softmax_last(x));
    CHECK(y.values[0] == doctest::Approx(0.5));
    CHECK(y.values[1] == doctest::Approx(0.5));
}

TEST_CASE("mse of equal inputs is zero") {
    Tape tape;
    const NodeId a = tape.leaf(Tensor({1, 2}, {1, 2}));
    const NodeId b = tape.leaf(Tensor({1, 2}, {1, 2}));
    CHECK(tape.value(tape.mse(a, b)).values[0] == 0.0);
}

TEST_CASE("shape mismatch is rejected") {
    Tape tape;
    const NodeId a = tape.leaf(Tensor({2, 3}, std::vector<double>(6, 1.0)));
    const NodeId b = tape.leaf(Tensor({2, 2}, std::vector<double>(4, 1.0)));
    CHECK_THROWS_AS(tape.matmul(a, b), invalid_input);
    CHECK_THROWS_AS(tape.add(a, b), invalid_input);
    CHECK_THROWS_AS(tape.mse(a, b), invalid_input);
}

TEST_CASE("backward requires scalar loss") {
    Tape tape;
    const NodeId a = tape.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
    CHECK_THROWS_AS(tape.backward(a), invalid_input);
}

TEST_CASE("d(x^2)/dx = 2x") {
    Tape tape;
    const NodeId x = tape.leaf(Tensor::scalar(3.0));
    const NodeId loss = tape.mul(x, x);
    const auto grads = tape.backward(loss);
    CHECK(grads.at(x).values[0] == doctest::Approx(6.0));
}

TEST_CASE("gradient of a constant function is zero") {
    Tape tape;
    const NodeId x = tape.leaf(Tensor::scalar(3.0));
    const NodeId c = tape.leaf(Tensor::scalar(5.0));
    const NodeId loss = tape.mul(c, c);
    const auto grads = tape.backward(loss);
    CHECK_FALSE(grads.has(x));
}

TEST_CASE("mse(Wx, y) gradient matches finite differences") {
    testutil::Rng rng(11);
    GraphSpec spec;
    spec.leaves = {random_tensor(rng, 3, 4), random_tensor(rng, 4, 2), random_tensor(rng, 3, 2)};
    spec.build = [](Tape& t, const std::vector<NodeId>& ids) {
        return t.mse(t.matmul(ids[0], ids[1]), ids[2]);
    };
    CHECK(testutil::fd_relative_error(spec) < 1e-4);
}

TEST_CASE("every op composition matches finite differences") {
    testutil::Rng rng(17);

    SUBCASE("softmax + matmul_nt + scale") {
        GraphSpec spec;
        spec.leaves = {random_tensor(rng, 4, 5), random_tensor(rng, 3, 5), random_tensor(rng, 4, 3)};
        spec.build = [](Tape& t, const std::vector<NodeId>& ids) {
            const NodeId scores = t.scale(t.matmul_nt(ids[0], ids[1]), 0.7);
            return t.mse(t.softmax_last(scores), ids[2]);
        };
        CHECK(testutil::fd_relative_error(spec) < 1e-4);
    }

    SUBCASE("rms_norm + row-broadcast mul + add") {
        GraphSpec spec;
        spec.leaves = {random_tensor(rng, 4, 6), random_tensor(rng, 1, 6), random_tensor(rng, 4, 6)};
        spec.build = [](Tape& t, const std::vector<NodeId>& ids) {
            return t.mse(t.add(t.mul(t.rms_norm(ids[0]), ids[1]), ids[2]),
                         t.leaf(Tensor::zeros(4, 6)));
        };
        CHECK(testutil::fd_relative_error(spec) < 1e-4);
    }

    SUBCASE("silu + sigmoid + elementwise mul") {
        GraphSpec spec;
        spec.leaves = {random_tensor(rng, 5, 4), random_tensor(rng, 5, 4)};
        spec.build = [](Tape& t, const std::vector<NodeId>& ids) {
            return t.mse(t.mul(t.silu(ids[0]), t.sigmoid(ids[1])), t.leaf(Tensor::zeros(5, 4)));
        };
        CHECK(testutil::fd_relative_error(spec) < 1e-4);
    }

    SUBCASE("gather + mean_rows + concat") {
        GraphSpec spec;
        spec.leaves = {random_tensor(rng, 6, 3), random_tensor(rng, 6, 3)};
        spec.build = [](Tape& t, const std::vector<NodeId>& ids) {
            const NodeId g = t.gather_rows(ids[0], {1, 3, 3, 5});
            const NodeId m = t.mean_rows(g);
            const NodeId m2 = t.mean_rows(ids[1]);
            return t.mse(t.concat_cols({m, m2}), t.leaf(Tensor::zeros(1, 6)));
        };
        CHECK(testutil::fd_relative_error(spec) < 1e-4);
    }

    SUBCASE("slice + concat rows") {
        GraphSpec spec;
        spec.leaves = {random_tensor(rng, 3, 8), random_tensor(rng, 2, 4)};
        spec.build = [](Tape& t, const std::vector<NodeId>& ids) {
            const NodeId s = t.slice_cols(ids[0], 2, 4);
            return t.mse(t.concat_rows({s, ids[1]}), t.leaf(Tensor::zeros(5, 4)));
        };
        CHECK(testutil::fd_relative_error(spec) < 1e-4);
    }

    SUBCASE("ssm scan") {
        GraphSpec spec;
        Tensor decay = random_tensor(rng, 1, 4, 0.3);
        for (auto& v : decay.values) v = 0.3 + 0.5 * std::abs(std::tanh(v));
        spec.leaves = {random_tensor(rng, 6, 4), decay, random_tensor(rng, 6, 4)};
        spec.build = [](Tape& t, const std::vector<NodeId>& ids) {
            return t.mse(t.ssm_scan(ids[0], ids[1]), ids[2]);
        };
        CHECK(testutil::fd_relative_error(spec) < 1e-4);
    }

    SUBCASE("cross entropy") {
        GraphSpec spec;
        spec.leaves = {random_tensor(rng, 4, 7)};
        spec.build = [](Tape& t, const std::vector<NodeId>& ids) {
            return t.cross_entropy(ids[0], {2, 0, 5, 1}, {1.0, 0.0, 1.0, 1.0});
        };
        CHECK(testutil::fd_relative_error(spec) < 1e-4);
    }
}

TEST_CASE("gradient of a sum of losses equals the sum of gradients") {
    testutil::Rng rng(23);
    const Tensor x = random_tensor(rng, 3, 3);
    const Tensor y1 = random_tensor(rng, 3, 3);
    const Tensor y2 = random_tensor(rng, 3, 3);

    auto grad_of = [&](bool first, bool second) {
        Tape tape;
        const NodeId xn = tape.leaf(x);
        NodeId loss = -1;
        if (first) loss = tape.mse(xn, tape.leaf(y1));
        if (second) {
            const NodeId l2 = tape.mse(tape.mul(xn, xn), tape.leaf(y2));
            loss = first ? tape.add(loss, l2) : l2;
        }
        return tape.backward(loss).at(xn);
    };

    const Tensor g1 = grad_of(true, false);
    const Tensor g2 = grad_of(false, true);
    const Tensor gsum = grad_of(true, true);
    for (size_t i = 0; i < gsum.values.size(); ++i)
        CHECK(gsum.values[i] == g1.values[i] + g2.values[i]);  // exact
}

TEST_CASE("forward+backward is bit-identical across runs") {
    testutil::Rng rng(31);
    GraphSpec spec;
    spec.leaves = {random_tensor(rng, 4, 4), random_tensor(rng, 4, 4)};
    spec.build = [](Tape& t, const std::vector<NodeId>& ids) {
        return t.mse(t.softmax_last(t.matmul(ids[0], ids[1])), t.leaf(Tensor::zeros(4, 4)));
    };
    const auto a = testutil::autodiff_grads(spec);
    const auto b = testutil::autodiff_grads(spec);
    CHECK(testutil::eval_graph(spec, spec.leaves) == testutil::eval_graph(spec, spec.leaves));
    for (size_t li = 0; li < a.size(); ++li) CHECK(a[li].values == b[li].values);
}

TEST_CASE("scan cost is linear in sequence length") {
    auto scan_cost = [](int64_t t_len) {
        Tape tape;
        const NodeId u = tape.leaf(Tensor::zeros(t_len, 8));
        const NodeId a = tape.leaf(Tensor({1, 8}, std::vector<double>(8, 0.5)));
        tape.ssm_scan(u, a);
        return tape.op_count();
    };
    const double ratio = static_cast<double>(scan_cost(256)) / static_cast<double>(scan_cost(128));
    CHECK(ratio > 1.8);
    CHECK(ratio < 2.2);
}
