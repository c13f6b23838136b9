#include <gtest/gtest.h>

#include <cmath>

#include "dconn/grad_check.hpp"
#include "dconn/ops.hpp"
#include "support.hpp"

namespace dconn {
namespace {

using testing::random_tensor;

// Direct cross-correlation with zero padding (k-1)/2.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t K = w.dim(0), k = w.dim(2);
    const long pad = static_cast<long>(k - 1) / 2;
    const std::size_t Ho = (H + stride - 1) / stride, Wo = (W + stride - 1) / stride;
    std::vector<double> out;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < K; ++o)
            for (std::size_t r = 0; r < Ho; ++r)
                for (std::size_t c = 0; c < Wo; ++c) {
                    double acc = b.data()[o];
                    for (std::size_t i = 0; i < C; ++i)
                        for (std::size_t u = 0; u < k; ++u)
                            for (std::size_t v = 0; v < k; ++v) {
                                const long rr = static_cast<long>(r * stride + u) - pad;
                                const long cc = static_cast<long>(c * stride + v) - pad;
                                if (rr < 0 || cc < 0 || rr >= static_cast<long>(H) || cc >= static_cast<long>(W)) continue;
                                acc += x.at({n, i, static_cast<std::size_t>(rr), static_cast<std::size_t>(cc)}) *
                                       w.at({o, i, u, v});
                            }
                    out.push_back(acc);
                }
    return out;
}

TEST(Conv2d, MatchesDirectLoop) {
    Rng rng(1);
    for (std::size_t stride : {1u, 2u}) {
        for (std::size_t k : {1u, 3u}) {
            Tensor x = random_tensor(rng, {2, 3, 7, 6});
            Tensor w = random_tensor(rng, {4, 3, k, k});
            Tensor b = random_tensor(rng, {4});
            Tensor y = conv2d(x, w, b, stride);
            const auto expect = naive_conv(x, w, b, stride);
            ASSERT_EQ(y.size(), expect.size());
            for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(y.data()[i], expect[i], 1e-12);
        }
    }
}

TEST(Conv2d, ShapeErrors) {
    Tensor x = Tensor::zeros({1, 2, 4, 4});
    EXPECT_THROW(conv2d(x, Tensor::zeros({3, 1, 3, 3}), Tensor::zeros({3})), ShapeError);
    EXPECT_THROW(conv2d(x, Tensor::zeros({3, 2, 3, 3}), Tensor::zeros({2})), ShapeError);
    EXPECT_THROW(conv2d(x, Tensor::zeros({3, 2, 5, 5}), Tensor::zeros({3})), ShapeError);
    EXPECT_THROW(conv2d(x, Tensor::zeros({3, 2, 3, 3}), Tensor::zeros({3}), 3), ShapeError);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
    Rng rng(2);
    Tensor x = random_tensor(rng, {1, 2, 5, 5}, -1, 1, true);
    Tensor w = random_tensor(rng, {3, 2, 3, 3}, -1, 1, true);
    Tensor b = random_tensor(rng, {3}, -1, 1, true);
    Tensor wt = random_tensor(rng, {1, 3, 5, 5});
    auto r = grad_check([&] { return sum(mul(conv2d(x, w, b), wt)); }, {{"x", x}, {"w", w}, {"b", b}});
    EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Sigmoid, GradientAtZeroIsQuarter) {
    Tensor x({1}, {0.0}, true);
    sum(sigmoid(x)).backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);
    auto r = grad_check([&] { return sum(sigmoid(x)); }, {{"x", x}});
    EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(Sigmoid, StrictlyInsideUnitIntervalForModerateInputs) {
    Tensor y = sigmoid(Tensor({4}, {-30.0, -1e-3, 1e-3, 30.0}));
    for (double v : y.data()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
}

TEST(Gap, EachInputReceivesInverseArea) {
    Rng rng(4);
    Tensor x = random_tensor(rng, {2, 3, 4, 5}, -1, 1, true);
    Tensor y = gap(x);
    ASSERT_EQ(y.shape(), (Shape{2, 3}));
    double manual = 0.0;
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 5; ++c) manual += x.at({1, 2, r, c});
    EXPECT_NEAR(y.at({1, 2}), manual / 20.0, 1e-15);
    sum(y).backward();
    for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0 / 20.0);
}

// align_corners=false: source coordinate (i + 0.5) / f - 0.5, clamped to the grid.
double bilinear_oracle(const Tensor& x, std::size_t n, std::size_t ch, std::size_t f, std::size_t r, std::size_t c) {
    const double H = static_cast<double>(x.dim(2)), W = static_cast<double>(x.dim(3));
    auto coord = [&](std::size_t i, double extent) {
        double s = (static_cast<double>(i) + 0.5) / static_cast<double>(f) - 0.5;
        return std::clamp(s, 0.0, extent - 1.0);
    };
    const double sr = coord(r, H), sc = coord(c, W);
    const std::size_t r0 = static_cast<std::size_t>(std::floor(sr)), c0 = static_cast<std::size_t>(std::floor(sc));
    const std::size_t r1 = std::min(r0 + 1, x.dim(2) - 1), c1 = std::min(c0 + 1, x.dim(3) - 1);
    const double fr = sr - static_cast<double>(r0), fc = sc - static_cast<double>(c0);
    return (1 - fr) * ((1 - fc) * x.at({n, ch, r0, c0}) + fc * x.at({n, ch, r0, c1})) +
           fr * ((1 - fc) * x.at({n, ch, r1, c0}) + fc * x.at({n, ch, r1, c1}));
}

TEST(Upsample, MatchesBilinearFormula) {
    Rng rng(5);
    for (std::size_t f : {1u, 2u, 4u}) {
        Tensor x = random_tensor(rng, {1, 2, 3, 4});
        Tensor y = upsample_bilinear(x, f);
        ASSERT_EQ(y.shape(), (Shape{1, 2, 3 * f, 4 * f}));
        for (std::size_t ch = 0; ch < 2; ++ch)
            for (std::size_t r = 0; r < 3 * f; ++r)
                for (std::size_t c = 0; c < 4 * f; ++c)
                    EXPECT_NEAR(y.at({0, ch, r, c}), bilinear_oracle(x, 0, ch, f, r, c), 1e-14);
    }
}

TEST(Upsample, ConstantStaysConstant) {
    Tensor y = upsample_bilinear(Tensor::full({1, 1, 2, 2}, 0.7), 8);
    for (double v : y.data()) EXPECT_NEAR(v, 0.7, 1e-15);
}

TEST(Upsample, GradientMatchesFiniteDifferences3to6) {
    Rng rng(6);
    Tensor x = random_tensor(rng, {1, 1, 3, 3}, -1, 1, true);
    Tensor wt = random_tensor(rng, {1, 1, 6, 6});
    auto r = grad_check([&] { return sum(mul(upsample_bilinear(x, 2), wt)); }, {{"x", x}});
    EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Matmul, MatchesNaiveProductAndGradients) {
    Rng rng(7);
    Tensor a = random_tensor(rng, {4, 4}, -1, 1, true);
    Tensor b = random_tensor(rng, {4, 4}, -1, 1, true);
    Tensor c = matmul(a, b);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            double acc = 0;
            for (std::size_t k = 0; k < 4; ++k) acc += a.at({i, k}) * b.at({k, j});
            EXPECT_NEAR(c.at({i, j}), acc, 1e-14);
        }
    Tensor wt = random_tensor(rng, {4, 4});
    auto r = grad_check([&] { return sum(mul(matmul(a, b), wt)); }, {{"a", a}, {"b", b}});
    EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Matmul, RejectsIncompatibleShapes) {
    EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
    EXPECT_THROW(bmm(Tensor::zeros({2, 2, 3}), Tensor::zeros({3, 3, 2})), ShapeError);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
    Rng rng(8);
    Tensor x = random_tensor(rng, {3, 5}, -4, 4);
    Tensor y = softmax(x, 1);
    Tensor y2 = softmax(add_scalar(x, 100.0), 1);
    for (std::size_t i = 0; i < 3; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 5; ++j) {
            s += y.at({i, j});
            EXPECT_NEAR(y.at({i, j}), y2.at({i, j}), 1e-14);
        }
        EXPECT_NEAR(s, 1.0, 1e-14);
    }
}

TEST(Broadcast, AddMatchesExplicitLoop) {
    Rng rng(9);
    Tensor a = random_tensor(rng, {2, 3, 4});
    Tensor b = random_tensor(rng, {2, 1, 4});
    Tensor c = add(a, b);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(c.at({i, j, k}), a.at({i, j, k}) + b.at({i, 0, k}));
    EXPECT_THROW(add(a, Tensor::zeros({3, 4})), ShapeError);
    EXPECT_THROW(add(a, Tensor::zeros({2, 2, 4})), ShapeError);
}

TEST(Reductions, SumAxisAndMaxAxis) {
    Tensor x({2, 3}, {1, 5, 5, -2, 0, -1});
    Tensor s = sum_axis(x, 1);
    EXPECT_EQ(s.shape(), (Shape{2}));
    EXPECT_EQ(s.data()[0], 11.0);
    Tensor m = max_axis(Tensor({2, 3}, {1, 5, 5, -2, 0, -1}, true), 1, true);
    EXPECT_EQ(m.shape(), (Shape{2, 1}));
    EXPECT_EQ(m.data()[0], 5.0);
    EXPECT_EQ(m.data()[1], 0.0);
}

TEST(Reductions, MaxTieSendsGradientToLowestIndex) {
    Tensor x({1, 3}, {2.0, 2.0, 1.0}, true);
    sum(max_axis(x, 1)).backward();
    const auto g = x.grad();
    EXPECT_EQ(g[0], 1.0);
    EXPECT_EQ(g[1], 0.0);
}

TEST(Shift2d, MatchesIndexDefinition) {
    Rng rng(10);
    Tensor x = random_tensor(rng, {1, 2, 4, 5});
    for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
            Tensor y = shift2d(x, dr, dc);
            for (std::size_t ch = 0; ch < 2; ++ch)
                for (long r = 0; r < 4; ++r)
                    for (long c = 0; c < 5; ++c) {
                        const long sr = r + dr, sc = c + dc;
                        const double expect = (sr < 0 || sc < 0 || sr >= 4 || sc >= 5)
                                                  ? 0.0
                                                  : x.at({0, ch, static_cast<std::size_t>(sr), static_cast<std::size_t>(sc)});
                        EXPECT_EQ(y.at({0, ch, static_cast<std::size_t>(r), static_cast<std::size_t>(c)}), expect);
                    }
        }
}

TEST(Structure, SliceConcatRoundTrip) {
    Rng rng(11);
    Tensor x = random_tensor(rng, {2, 6, 3});
    Tensor back = concat({slice(x, 1, 0, 2), slice(x, 1, 2, 6)}, 1);
    EXPECT_TRUE(std::equal(back.data().begin(), back.data().end(), x.data().begin()));
    Tensor img = random_tensor(rng, {1, 8, 2, 2});
    Tensor again = channel_concat(channel_slice(img, 4));
    EXPECT_TRUE(std::equal(again.data().begin(), again.data().end(), img.data().begin()));
    EXPECT_THROW(channel_slice(img, 3), ShapeError);
    EXPECT_THROW(reshape(img, {3, 3}), ShapeError);
}

TEST(Structure, TransposeLastSwapsIndices) {
    Rng rng(12);
    Tensor x = random_tensor(rng, {2, 3, 4});
    Tensor t = transpose_last(x);
    ASSERT_EQ(t.shape(), (Shape{2, 4, 3}));
    EXPECT_EQ(t.at({1, 3, 2}), x.at({1, 2, 3}));
}

// Property: every op's analytic gradient matches central differences on
// random small inputs drawn from several seeds.
TEST(OpGradients, RandomShapesAcrossSeeds) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(100 + seed);
        const std::size_t n = 1 + rng.below(2), c = 1 + rng.below(3), h = 2 + rng.below(3), w = 2 + rng.below(3);
        Tensor x = random_tensor(rng, {n, c, h, w}, -1, 1, true);
        Tensor y = random_tensor(rng, {n, c, h, w}, 0.5, 1.5, true);
        Tensor wt = random_tensor(rng, {n, c, h * 2, w * 2});
        auto f = [&] {
            Tensor up = upsample_bilinear(mul(sigmoid(x), y), 2);
            Tensor sm = softmax(div(x, y), 1);
            return add(sum(mul(up, wt)), mean(mul(sm, shift2d(x, 1, 0))));
        };
        auto r = grad_check(f, {{"x", x}, {"y", y}});
        EXPECT_LT(r.max_rel_error, 1e-5) << "seed " << seed;
    }
}

}  // namespace
}  // namespace dconn
