// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "stg/numerics/kernels.hpp"

using namespace stg::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> d(-1.f, 1.f);
    std::vector<float> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

void check_close(const std::vector<float>& a, const std::vector<float>& b, float tol) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= tol * (1 + std::abs(b[i])));
}

}  // namespace

TEST_CASE("parallel gemm agrees with the serial reference for every transpose flag") {
    std::mt19937_64 rng(2);
    const std::size_t m = 17, n = 23, k = 9;
    for (bool ta : {false, true})
        for (bool tb : {false, true}) {
            auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
            std::vector<float> c(m * n, 0.5f), ref(m * n, 0.5f);
            gemm(ta, tb, m, n, k, a.data(), b.data(), c.data(), true);
            serial::gemm(ta, tb, m, n, k, a.data(), b.data(), ref.data(), true);
            check_close(c, ref, 1e-5f);
        }
}

TEST_CASE("im2col convolution agrees with the direct loop") {
    std::mt19937_64 rng(4);
    ConvGeometry g{.batch = 3, .in_channels = 4, .height = 11, .width = 9, .out_channels = 5,
                   .kernel = 3, .stride = 2, .padding = 1};
    auto x = random_vec(g.batch * g.in_channels * g.height * g.width, rng);
    auto w = random_vec(g.out_channels * g.patch(), rng);
    auto bias = random_vec(g.out_channels, rng);
    const std::size_t out_n = g.batch * g.out_channels * g.out_height() * g.out_width();
    std::vector<float> y(out_n), ref(out_n);
    conv2d_forward(g, x.data(), w.data(), bias.data(), y.data());
    serial::conv2d_forward(g, x.data(), w.data(), bias.data(), ref.data());
    check_close(y, ref, 1e-5f);
}

TEST_CASE("attention kernel agrees with the reference and masks the future") {
    std::mt19937_64 rng(6);
    const std::size_t groups = 2, seq = 5, heads = 2, d = 8;
    auto q = random_vec(groups * seq * d, rng), k = random_vec(q.size(), rng), v = random_vec(q.size(), rng);
    for (bool causal : {false, true}) {
        std::vector<float> p(groups * heads * seq * seq), pr(p.size()), o(q.size()), orf(q.size());
        attention_forward(groups, seq, heads, d, causal, q.data(), k.data(), v.data(), p.data(), o.data());
        serial::attention_forward(groups, seq, heads, d, causal, q.data(), k.data(), v.data(), pr.data(),
                                  orf.data());
        check_close(p, pr, 1e-5f);
        check_close(o, orf, 1e-5f);
        for (std::size_t r = 0; r < groups * heads * seq; ++r) {
            const std::size_t i = r % seq;
            float total = 0;
            for (std::size_t j = 0; j < seq; ++j) {
                total += p[r * seq + j];
                if (causal && j > i) CHECK(p[r * seq + j] == 0.0f);
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-5));
        }
    }
}

TEST_CASE("kernel results are bit-identical for any thread count") {
    std::mt19937_64 rng(8);
    ConvGeometry g{.batch = 6, .in_channels = 3, .height = 12, .width = 12, .out_channels = 4,
                   .kernel = 3, .stride = 1, .padding = 1};
    auto x = random_vec(g.batch * g.in_channels * g.height * g.width, rng);
    auto w = random_vec(g.out_channels * g.patch(), rng);
    auto bias = random_vec(g.out_channels, rng);
    const std::size_t out_n = g.batch * g.out_channels * g.out_height() * g.out_width();
    auto dy = random_vec(out_n, rng);
    auto run = [&](int threads) {
        set_num_threads(threads);
        std::vector<float> y(out_n), dx(x.size()), dw(w.size()), db(bias.size());
        conv2d_forward(g, x.data(), w.data(), bias.data(), y.data());
        conv2d_backward(g, x.data(), w.data(), dy.data(), dx.data(), dw.data(), db.data());
        std::vector<float> c(64 * 64);
        gemm(false, true, 64, 64, 64, x.data(), x.data() + 100, c.data(), false);
        y.insert(y.end(), dx.begin(), dx.end());
        y.insert(y.end(), dw.begin(), dw.end());
        y.insert(y.end(), c.begin(), c.end());
        return y;
    };
    const auto one = run(1);
    const auto four = run(4);
    set_num_threads(1);
    CHECK(one == four);
}
