#include <gtest/gtest.h>

#include <sstream>

#include "dconn/metrics.hpp"
#include "support.hpp"

namespace dconn {
namespace {

using testing::flood_count;
using testing::mask_from_rows;

SegMask disk(std::size_t side, double cy, double cx, double radius, double hole = 0.0) {
    SegMask m(side, side);
    for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c) {
            const double d2 = (r - cy) * (r - cy) + (c - cx) * (c - cx);
            if (d2 <= radius * radius && d2 >= hole * hole) m.at(r, c) = 1;
        }
    return m;
}

TEST(Betti, Disk) { EXPECT_EQ(betti_numbers(disk(32, 15.5, 15.5, 10)), (Betti{1, 0})); }

TEST(Betti, Annulus) { EXPECT_EQ(betti_numbers(disk(32, 15.5, 15.5, 12, 6)), (Betti{1, 1})); }

TEST(Betti, TwoDisksOneWithHole) {
    SegMask m = disk(40, 10, 10, 7, 3);
    const SegMask other = disk(40, 28, 28, 8);
    for (std::size_t i = 0; i < m.labels.size(); ++i) m.labels[i] |= other.labels[i];
    EXPECT_EQ(betti_numbers(m), (Betti{2, 1}));
}

TEST(Betti, DiagonalTouchIsOneComponent) {
    const SegMask m = mask_from_rows({
        "11...",
        "11...",
        "..11.",
        "..11.",
        ".....",
    });
    EXPECT_EQ(betti_numbers(m).b0, 1u);
}

TEST(Betti, DiagonalGapDoesNotCloseHole) {
    // The centre pixel reaches the outside only diagonally, so under 4-connectivity it is enclosed.
    const SegMask m = mask_from_rows({
        ".....",
        "..1..",
        ".1.1.",
        "..1..",
        ".....",
    });
    EXPECT_EQ(betti_numbers(m), (Betti{1, 1}));
}

TEST(Betti, BorderTouchingBackgroundIsNotAHole) {
    const SegMask m = mask_from_rows({
        "1.1",
        "1.1",
        "111",
    });
    EXPECT_EQ(betti_numbers(m), (Betti{1, 0}));
}

TEST(Betti, EmptyAndFull) {
    EXPECT_EQ(betti_numbers(SegMask(6, 6)), (Betti{0, 0}));
    EXPECT_EQ(betti_numbers(SegMask(6, 6, 1)), (Betti{1, 0}));
}

TEST(Betti, MatchesFloodFillOnRandomMasks) {
    Rng rng(77);
    for (int i = 0; i < 300; ++i) {
        const std::size_t h = 3 + rng.below(30), w = 3 + rng.below(30);
        const SegMask m = (i % 2) ? testing::random_mask(rng, h, w, 2, rng.uniform(0.2, 0.8))
                                  : testing::random_rect_mask(rng, h, w, 1 + rng.below(6));
        for (std::uint8_t cls = 1; cls <= 2; ++cls) {
            const Betti b = betti_numbers(m, cls);
            EXPECT_EQ(b.b0, flood_count(m, cls, true, true, false)) << "mask " << i;
            EXPECT_EQ(b.b1, flood_count(m, cls, false, false, true)) << "mask " << i;
        }
    }
}

TEST(DiceIou, Values) {
    const SegMask truth = mask_from_rows({"11..", "11..", "....", "...."});
    const SegMask pred = mask_from_rows({"1...", "1...", "1...", "1..."});
    const DiceIou s = dice_iou(pred, truth, 1);
    EXPECT_DOUBLE_EQ(s.dice, 2.0 * 2 / (4 + 4));
    EXPECT_DOUBLE_EQ(s.iou, 2.0 / 6);
    const DiceIou same = dice_iou(truth, truth, 1);
    EXPECT_DOUBLE_EQ(same.dice, 1.0);
    EXPECT_DOUBLE_EQ(same.iou, 1.0);
}

TEST(DiceIou, EmptyAgainstEmptyScoresOne) {
    const DiceIou s = dice_iou(SegMask(4, 4), SegMask(4, 4), 1);
    EXPECT_EQ(s.dice, 1.0);
    EXPECT_EQ(s.iou, 1.0);
    const DiceIou miss = dice_iou(SegMask(4, 4), SegMask(4, 4, 1), 1);
    EXPECT_EQ(miss.dice, 0.0);
    EXPECT_EQ(miss.iou, 0.0);
}

TEST(DiceIou, RangeAndRelation) {
    Rng rng(78);
    for (int i = 0; i < 100; ++i) {
        const SegMask a = testing::random_mask(rng, 10, 10), b = testing::random_mask(rng, 10, 10);
        const DiceIou s = dice_iou(a, b, 1);
        EXPECT_GE(s.dice, 0.0);
        EXPECT_LE(s.dice, 1.0);
        EXPECT_NEAR(s.iou, s.dice / (2.0 - s.dice), 1e-12);
    }
}

TEST(DiceIou, ShapeMismatchThrows) { EXPECT_THROW(dice_iou(SegMask(3, 3), SegMask(3, 4), 1), std::invalid_argument); }

TEST(Evaluate, AggregatesMeans) {
    const SegMask ring = disk(20, 9.5, 9.5, 8, 4);
    const SegMask solid = disk(20, 9.5, 9.5, 8);
    const MetricsReport r = evaluate({solid, ring}, {ring, ring}, 1, {"a", "b"});
    ASSERT_EQ(r.rows.size(), 2u);
    EXPECT_EQ(r.rows[0].name, "a");
    EXPECT_EQ(r.rows[0].pred.b1, 0u);
    EXPECT_EQ(r.rows[0].truth.b1, 1u);
    EXPECT_DOUBLE_EQ(r.betti1_error, 0.5);
    EXPECT_DOUBLE_EQ(r.betti0_error, 0.0);
    EXPECT_DOUBLE_EQ(r.dice[0], (r.rows[0].scores.dice + 1.0) / 2);
    EXPECT_DOUBLE_EQ(r.mean_dice, r.dice[0]);
    EXPECT_THROW(evaluate({solid}, {ring, ring}, 1), std::invalid_argument);
}

TEST(Evaluate, ReportFormat) {
    const SegMask m = disk(10, 4.5, 4.5, 3);
    const MetricsReport r = evaluate({m}, {m}, 2, {"x"});
    std::ostringstream out;
    write_report(out, r);
    const std::string s = out.str();
    EXPECT_EQ(s.rfind("image\tclass\tdice\tiou\tb0_pred\tb0_true\tb1_pred\tb1_true\n", 0), 0u);
    EXPECT_NE(s.find("x\t1\t1\t1\t1\t1\t0\t0\n"), std::string::npos);
    EXPECT_NE(s.find("x\t2\t1\t1\t0\t0\t0\t0\n"), std::string::npos);
    for (const char* key : {"[summary]", "images\t1", "dice_class1\t1", "iou_class2\t1", "mean_dice\t1",
                            "mean_iou\t1", "betti0_error\t0", "betti1_error\t0"}) {
        EXPECT_NE(s.find(key), std::string::npos) << key;
    }
}

}  // namespace
}  // namespace dconn
