#include <doctest.h>

#include "cfrl/teacher.hpp"
#include "test_util.hpp"

using namespace cfrl;
using namespace cfrl::testutil;

TEST_CASE("all-zero parameters map anything to zero") {
    Network net = Network::make({4}, {LayerSpec::dense(3, true), LayerSpec::dense(2)}, 1);
    std::fill(net.params.begin(), net.params.end(), 0.0f);
    auto out = net.forward({1.0f, -2.0f, 3.0f, 0.5f});
    for (float v : out) CHECK(v == 0.0f);
}

TEST_CASE("identity dense layer reproduces its input") {
    Network net = Network::make({3}, {LayerSpec::dense(3)}, 1);
    std::fill(net.params.begin(), net.params.end(), 0.0f);
    for (int i = 0; i < 3; ++i) net.params[i * 3 + i] = 1.0f;
    std::vector<float> x = {0.25f, -1.5f, 2.0f};
    CHECK(net.forward(x) == x);
}

TEST_CASE("two-layer forward matches a hand computation") {
    Network net = Network::make({3}, {LayerSpec::dense(2, true), LayerSpec::dense(2)}, 1);
    // W1 rows per input, columns per output; bias after weights
    std::vector<float> theta = {
        1.0f, -1.0f,  // x0 -> h0, h1
        2.0f, 0.0f,   // x1
        0.0f, 3.0f,   // x2
        0.5f, -0.5f,  // b1
        1.0f, 2.0f,   // h0 -> o0, o1
        -1.0f, 0.0f,  // h1
        0.0f, 1.0f,   // b2
    };
    REQUIRE(net.params.size() == theta.size());
    net.params = theta;
    auto out = net.forward({1.0f, 0.5f, -1.0f});
    // pre1 = (2.5, -4.5) -> relu (2.5, 0); out = (2.5, 6.0)
    CHECK(out[0] == doctest::Approx(2.5).epsilon(1e-6));
    CHECK(out[1] == doctest::Approx(6.0).epsilon(1e-6));
}

TEST_CASE("forward is pure and batched forward matches single") {
    FdCase c = make_fd_case(7, true);
    std::vector<float> x = to_f32(c.input);
    auto a = c.net.forward(x);
    auto b = c.net.forward(x);
    CHECK(a == b);
    Tensor batch({2, 9, 9, 2});
    std::copy(x.begin(), x.end(), batch.ptr());
    std::copy(x.begin(), x.end(), batch.ptr() + x.size());
    Tensor out = c.net.forward_batch(batch);
    for (int j = 0; j < c.net.output_dim(); ++j) {
        CHECK(out.data[j] == a[j]);
        CHECK(out.data[c.net.output_dim() + j] == a[j]);
    }
}

TEST_CASE("shape mismatches are rejected") {
    Network net = Network::make({4}, {LayerSpec::dense(2)}, 1);
    CHECK_THROWS_AS(net.forward({1.0f, 2.0f}), std::invalid_argument);
    CHECK_THROWS_AS(net.grad_params({1, 2, 3, 4}, {1.0f}), std::invalid_argument);
    CHECK_THROWS_AS(Network::make({4}, {LayerSpec::conv(2, 8, 4)}, 1), std::invalid_argument);
}

TEST_CASE("gradients match double-precision finite differences") {
    for (uint64_t seed : {11u, 12u, 13u}) {
        for (bool conv : {false, true}) {
            FdCase c = make_fd_case(seed, conv);
            std::vector<float> an_p = c.net.grad_params(to_f32(c.input), to_f32(c.upstream));
            std::vector<float> an_x = c.net.grad_input(to_f32(c.input), to_f32(c.upstream));
            CHECK(max_rel_err(fd_grad_params(c.net, c.input, c.upstream), an_p) < 1e-4);
            CHECK(max_rel_err(fd_grad_input(c.net, c.input, c.upstream), an_x) < 1e-4);
        }
    }
}

TEST_CASE("zero upstream gives zero gradients") {
    FdCase c = make_fd_case(21, false);
    std::vector<float> zeros(c.net.output_dim(), 0.0f);
    for (float g : c.net.grad_params(to_f32(c.input), zeros)) CHECK(g == 0.0f);
    for (float g : c.net.grad_input(to_f32(c.input), zeros)) CHECK(g == 0.0f);
}

TEST_CASE("dead relu unit blocks gradient flow") {
    Network net = Network::make({3}, {LayerSpec::dense(2, true), LayerSpec::dense(2)}, 1);
    net.params = {1.0f, -1.0f, 2.0f, 0.0f, 0.0f, 3.0f, 0.5f, -0.5f,
                  1.0f, 2.0f, -1.0f, 0.0f, 0.0f, 1.0f};
    // input puts unit 1 at pre-activation -4.5 (dead)
    auto g = net.grad_params({1.0f, 0.5f, -1.0f}, {1.0f, 1.0f});
    // column 1 of W1 and bias 1: indices 1, 3, 5 and 7
    CHECK(g[1] == 0.0f);
    CHECK(g[3] == 0.0f);
    CHECK(g[5] == 0.0f);
    CHECK(g[7] == 0.0f);
    CHECK(g[0] != 0.0f);
}

TEST_CASE("identity layer passes upstream through grad_input") {
    Network net = Network::make({3}, {LayerSpec::dense(3)}, 1);
    std::fill(net.params.begin(), net.params.end(), 0.0f);
    for (int i = 0; i < 3; ++i) net.params[i * 3 + i] = 1.0f;
    std::vector<float> up = {0.5f, -2.0f, 1.0f};
    CHECK(net.grad_input({1, 2, 3}, up) == up);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    AdamState adam;
    std::vector<float> theta = {1.0f, -2.0f};
    std::vector<float> zero = {0.0f, 0.0f};
    adam.step(theta, zero);
    CHECK(theta[0] == 1.0f);
    CHECK(theta[1] == -2.0f);
}

TEST_CASE("adam: first step moves by about -lr in the sign of the gradient") {
    AdamState adam;
    adam.lr = 0.01;
    std::vector<float> theta = {0.0f, 0.0f};
    adam.step(theta, {0.3f, -0.7f});
    CHECK(theta[0] == doctest::Approx(-0.01).epsilon(1e-4));
    CHECK(theta[1] == doctest::Approx(0.01).epsilon(1e-4));
}

TEST_CASE("adam: deterministic and rejects non-finite gradients") {
    AdamState a, b;
    std::vector<float> ta = {1.0f}, tb = {1.0f};
    a.step(ta, {0.5f});
    b.step(tb, {0.5f});
    CHECK(ta == tb);
    std::vector<float> bad = {std::numeric_limits<float>::quiet_NaN()};
    CHECK_THROWS_AS(a.step(ta, bad), std::invalid_argument);
}

TEST_CASE("softmax_t values and properties") {
    auto p = softmax_t(std::vector<double>{0.0, 0.0}, 1.0);
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));

    auto q = softmax_t(std::vector<double>{1.0, 2.0, 3.0}, 1.0);
    CHECK(q[0] == doctest::Approx(0.0900).epsilon(2e-3));
    CHECK(q[1] == doctest::Approx(0.2447).epsilon(2e-3));
    CHECK(q[2] == doctest::Approx(0.6652).epsilon(2e-3));

    auto u = softmax_t(std::vector<double>{5.0, -3.0, 0.7}, 1e6);
    for (double v : u) CHECK(std::abs(v - 1.0 / 3.0) < 1e-3);

    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> val(-5, 5), temp(0.01, 10.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> v(4);
        for (auto& x : v) x = val(rng);
        double tau = temp(rng);
        auto s = softmax_t(v, tau);
        double sum = 0;
        for (double x : s) sum += x;
        CHECK(std::abs(sum - 1.0) < 1e-9);
        CHECK(argmax(s) == argmax(v));
    }
    CHECK_THROWS_AS(softmax_t(std::vector<double>{1.0}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(softmax_t(std::vector<double>{1.0}, -1.0), std::invalid_argument);
}

TEST_CASE("descriptor round-trips and paper-scale stack fits table geometry") {
    auto arch = teacher_arch(64, 128, 5);
    Network net = Network::make({64, 128, 4}, arch, 3);
    CHECK(net.output_dim() == 5);
    CHECK(net.descriptor().find("conv(4,k8,s4)") == 0);
    auto parsed = Network::parse_descriptor(net.descriptor());
    REQUIRE(parsed.size() == arch.size());
    for (size_t i = 0; i < parsed.size(); ++i) {
        CHECK(parsed[i].kind == arch[i].kind);
        CHECK(parsed[i].units == arch[i].units);
        CHECK(parsed[i].relu == arch[i].relu);
    }
    // desk-scale stack still ends in the action head
    Network desk = Network::make({32, 64, 4}, teacher_arch(32, 64, 5), 3);
    CHECK(desk.output_dim() == 5);
}
