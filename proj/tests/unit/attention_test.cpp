#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "prefixgroup/attention.hpp"
#include "prefixgroup/flops.hpp"
#include "prefixgroup/model.hpp"
#include "test_support.hpp"

namespace {

using namespace pgtest;
using pg::GroupLayout;

std::vector<double> values_of(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Direct per-query loop: scores, masked softmax, weighted sum of values.
Tensor naive_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask) {
  const std::size_t b = q.size(0), h = q.size(1), sq = q.size(2), skv = k.size(2), d = q.size(3);
  const bool batched = mask.dim() == 3;
  std::vector<double> out(b * h * sq * d, 0.0);
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t hi = 0; hi < h; ++hi) {
      for (std::size_t i = 0; i < sq; ++i) {
        std::vector<double> w(skv, 0.0);
        double mx = -INFINITY;
        for (std::size_t j = 0; j < skv; ++j) {
          const double m = batched ? mask.at({bi, i, j}) : mask.at({i, j});
          if (pg::is_masked(m)) {
            w[j] = NAN;
            continue;
          }
          double s = 0.0;
          for (std::size_t c = 0; c < d; ++c) s += q.at({bi, hi, i, c}) * k.at({bi, hi, j, c});
          w[j] = s / std::sqrt(static_cast<double>(d)) + m;
          mx = std::max(mx, w[j]);
        }
        double z = 0.0;
        for (auto& x : w) {
          x = std::isnan(x) ? 0.0 : std::exp(x - mx);
          z += x;
        }
        if (z == 0.0) continue;
        for (std::size_t j = 0; j < skv; ++j)
          for (std::size_t c = 0; c < d; ++c)
            out[((bi * h + hi) * sq + i) * d + c] += w[j] / z * v.at({bi, hi, j, c});
      }
    }
  }
  return Tensor::from({b, h, sq, d}, out);
}

// Rows [begin, end) of the sequence axis of x [b, h, s, d].
Tensor rows(const Tensor& x, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return pg::index_select(x, 2, idx);
}

Tensor cat_rows(const Tensor& a, const Tensor& b) { return pg::concat<double>({a, b}, 2); }

// ---------------------------------------------------------------------------

TEST(Rope, PositionZeroIsIdentity) {
  const auto x = random_tensor({1, 2, 1, 6}, 1);
  const std::vector<std::int64_t> pos{0};
  EXPECT_EQ(values_of(pg::apply_rope(x, pos, 10000.0)), values_of(x));
}

TEST(Rope, PreservesPairNorms) {
  const auto x = random_tensor({2, 2, 5, 8}, 2);
  const std::vector<std::int64_t> pos{0, 3, 17, 4, 250};
  const auto y = pg::apply_rope(x, pos, 10000.0);
  for (std::size_t i = 0; i < x.numel(); i += 2) {
    const double a = std::hypot(x.data()[i], x.data()[i + 1]);
    const double b = std::hypot(y.data()[i], y.data()[i + 1]);
    EXPECT_NEAR(a, b, 1e-12);
  }
}

TEST(Rope, UnitVectorRotatesByPosition) {
  const auto y = pg::apply_rope(Tensor::from({1, 1, 1, 2}, {1, 0}), std::vector<std::int64_t>{1}, 10000.0);
  EXPECT_NEAR(y.data()[0], std::cos(1.0), 1e-15);
  EXPECT_NEAR(y.data()[1], std::sin(1.0), 1e-15);
}

TEST(Rope, HigherPairsRotateSlower) {
  const auto y = pg::apply_rope(Tensor::from({1, 1, 1, 4}, {1, 0, 1, 0}), std::vector<std::int64_t>{2}, 100.0);
  EXPECT_NEAR(y.data()[2], std::cos(2.0 / 10.0), 1e-15);
  EXPECT_NEAR(y.data()[3], std::sin(2.0 / 10.0), 1e-15);
}

TEST(Rope, RejectsOddHeadDimAndBadPositions) {
  EXPECT_THROW(pg::apply_rope(Tensor::zeros({1, 1, 2, 3}), std::vector<std::int64_t>{0, 1}, 1e4), pg::ConfigError);
  EXPECT_THROW(pg::apply_rope(Tensor::zeros({1, 1, 2, 4}), std::vector<std::int64_t>{0}, 1e4), pg::DimensionError);
}

TEST(Rope, SharedPositionsMatchPerResponseRows) {
  const auto x = random_tensor({1, 2, 6, 4}, 3);
  const GroupLayout layout(2, {2, 2});
  const auto shared = pg::apply_rope(x, pg::position_ids(layout, pg::ForwardMode::shared), 1e4);
  // Rows 4..5 carry positions 2..3, the same as rows 2..3.
  const auto a = pg::apply_rope(rows(x, 4, 6), std::vector<std::int64_t>{2, 3}, 1e4);
  EXPECT_EQ(values_of(rows(shared, 4, 6)), values_of(a));
}

TEST(Rope, GradientMatchesFiniteDifferences) {
  const std::vector<std::int64_t> pos{1, 5, 2};
  const auto r = gradcheck([&](const auto& in) { return weighted_sum(pg::apply_rope(in[0], pos, 100.0)); },
                           {{{1, 2, 3, 4}, random_values(24, 4)}});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

// ---------------------------------------------------------------------------

TEST(CausalAttention, SingleKeyReturnsValue) {
  const auto q = random_tensor({1, 1, 1, 4}, 5);
  const auto k = random_tensor({1, 1, 1, 4}, 6);
  const auto v = random_tensor({1, 1, 1, 4}, 7);
  EXPECT_EQ(values_of(pg::causal_attention(q, k, v, Tensor::zeros({1, 1}))), values_of(v));
}

TEST(CausalAttention, IdenticalKeysAverageCausalWindow) {
  const std::size_t s = 5, d = 4;
  std::vector<double> kv(s * d);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t c = 0; c < d; ++c) kv[i * d + c] = 0.3 * static_cast<double>(c) - 0.5;
  const auto k = Tensor::from({1, 1, s, d}, kv);
  const auto v = random_tensor({1, 1, s, d}, 8);
  const auto out = pg::causal_attention(random_tensor({1, 1, s, d}, 9), k, v, pg::causal_mask<double>(s));
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      double mean = 0.0;
      for (std::size_t j = 0; j <= i; ++j) mean += v.at({0, 0, j, c});
      mean /= static_cast<double>(i + 1);
      EXPECT_NEAR(out.at({0, 0, i, c}), mean, 1e-14);
    }
  }
}

TEST(CausalAttention, MatchesNaiveOracle) {
  const auto q = random_tensor({1, 2, 6, 4}, 10);
  const auto k = random_tensor({1, 2, 6, 4}, 11);
  const auto v = random_tensor({1, 2, 6, 4}, 12);
  const auto mask = pg::causal_mask<double>(6);
  EXPECT_LT(max_abs_diff(pg::causal_attention(q, k, v, mask).data(), naive_attention(q, k, v, mask).data()), 1e-12);
}

TEST(CausalAttention, BatchedMaskMatchesNaiveOracle) {
  const GroupLayout layout(3, {1, 4, 2});
  const auto mask = pg::repeated_masks<double>(layout);
  const std::size_t len = layout.padded_len();
  const auto q = random_tensor({3, 2, len, 4}, 13);
  const auto k = random_tensor({3, 2, len, 4}, 14);
  const auto v = random_tensor({3, 2, len, 4}, 15);
  EXPECT_LT(max_abs_diff(pg::causal_attention(q, k, v, mask).data(), naive_attention(q, k, v, mask).data()), 1e-12);
}

TEST(CausalAttention, MaskShapeMismatchIsDimensionError) {
  const auto x = Tensor::zeros({1, 1, 3, 2});
  EXPECT_THROW(pg::causal_attention(x, x, x, pg::causal_mask<double>(4)), pg::DimensionError);
}

TEST(CausalAttention, GradientMatchesFiniteDifferences) {
  const auto mask = pg::causal_mask<double>(4);
  const auto r = gradcheck(
      [&](const auto& in) { return weighted_sum(pg::causal_attention(in[0], in[1], in[2], mask)); },
      {{{1, 2, 4, 2}, random_values(16, 16)}, {{1, 2, 4, 2}, random_values(16, 17)},
       {{1, 2, 4, 2}, random_values(16, 18)}});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(CausalAttention, GradientWithBlockMaskMatchesFiniteDifferences) {
  const GroupLayout layout(2, {2, 1});
  const auto masks = pg::build_masks<double>(layout);
  const auto r = gradcheck(
      [&](const auto& in) { return weighted_sum(pg::grouped_attention(in[0], in[1], in[2], layout, masks)); },
      {{{1, 1, 5, 2}, random_values(10, 19)}, {{1, 1, 5, 2}, random_values(10, 20)},
       {{1, 1, 5, 2}, random_values(10, 21)}});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(CausalAttention, CountsOnlyVisiblePairs) {
  const std::size_t s = 7, h = 2, d = 4;
  const auto x = Tensor::zeros({1, h, s, d});
  pg::FlopCounter counter;
  {
    pg::FlopScope scope(counter);
    pg::causal_attention(x, x, x, pg::causal_mask<double>(s));
  }
  EXPECT_EQ(counter.tally().attention, 4u * d * h * (s * (s + 1) / 2));
}

// ---------------------------------------------------------------------------

TEST(Masks, SingleTokenSuffixSeesPrefixAndSelf) {
  const auto m = pg::build_masks<double>(GroupLayout(2, {1}));
  ASSERT_EQ(m.suffix_mask.shape(), (Shape{1, 3}));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(m.suffix_mask.at({0, j}), 0.0);
}

TEST(Masks, ResponsesAreIsolated) {
  const auto m = pg::build_masks<double>(GroupLayout(1, {2, 2}));
  // Response 2 occupies suffix rows 2..3; response 1 columns are 1..2.
  for (std::size_t r = 2; r < 4; ++r)
    for (std::size_t j = 1; j < 3; ++j) EXPECT_TRUE(pg::is_masked(m.suffix_mask.at({r, j})));
  // And response 1 cannot see response 2.
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t j = 3; j < 5; ++j) EXPECT_TRUE(pg::is_masked(m.suffix_mask.at({r, j})));
}

TEST(Masks, PrefixMaskIsCausal) {
  const auto m = pg::build_masks<double>(GroupLayout(5, {1, 2}));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(pg::is_masked(m.prefix_mask.at({i, j})), j > i);
}

TEST(Masks, SuffixRowsMatchBaselineCausalRows) {
  pg::Rng rng(77);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<std::size_t> lens(static_cast<std::size_t>(rng.between(1, 5)));
    for (auto& l : lens) l = static_cast<std::size_t>(rng.between(1, 6));
    const GroupLayout layout(static_cast<std::size_t>(rng.between(1, 7)), lens);
    const auto m = pg::build_masks<double>(layout);
    const std::size_t lp = layout.prefix_len();
    for (std::size_t g = 0; g < layout.group_size(); ++g) {
      const auto base = pg::causal_mask<double>(lp + lens[g]);
      for (std::size_t t = 0; t < lens[g]; ++t) {
        const std::size_t row = layout.suffix_begin(g) + t - lp;
        // Baseline column c maps to shared column c (prefix) or begin + c - lp.
        for (std::size_t c = 0; c < lp + lens[g]; ++c) {
          const std::size_t col = c < lp ? c : layout.suffix_begin(g) + (c - lp);
          EXPECT_EQ(pg::is_masked(m.suffix_mask.at({row, col})), pg::is_masked(base.at({lp + t, c})));
        }
        std::size_t visible = 0;
        for (std::size_t col = 0; col < layout.total(); ++col) visible += !pg::is_masked(m.suffix_mask.at({row, col}));
        EXPECT_EQ(visible, lp + t + 1);
      }
    }
  }
}

TEST(Masks, BuildIsPure) {
  const GroupLayout layout(3, {2, 4});
  const auto a = pg::build_masks<double>(layout);
  const auto b = pg::build_masks<double>(layout);
  EXPECT_EQ(values_of(a.prefix_mask), values_of(b.prefix_mask));
  EXPECT_EQ(values_of(a.suffix_mask), values_of(b.suffix_mask));
}

TEST(Masks, RepeatedMaskHidesPadKeys) {
  const GroupLayout layout(2, {1, 3});
  const auto m = pg::repeated_masks<double>(layout);
  ASSERT_EQ(m.shape(), (Shape{2, 5, 5}));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 3; j < 5; ++j) EXPECT_TRUE(pg::is_masked(m.at({0, i, j})));
  EXPECT_FALSE(pg::is_masked(m.at({1, 4, 4})));
}

// ---------------------------------------------------------------------------

TEST(Ungroup, SplitsAtPrefixBoundary) {
  const GroupLayout layout(2, {1, 1});
  const auto x = random_tensor({1, 1, 4, 2}, 30);
  const auto parts = pg::ungroup(x, x, x, layout);
  EXPECT_EQ(values_of(parts.q_prefix), values_of(rows(x, 0, 2)));
  EXPECT_EQ(values_of(parts.q_suffix), values_of(rows(x, 2, 4)));
  EXPECT_EQ(values_of(pg::group(parts.q_prefix, parts.q_suffix, layout)), values_of(x));
  EXPECT_THROW(pg::ungroup(x, x, x, GroupLayout(2, {3})), pg::DimensionError);
}

TEST(Ungroup, SuffixGradientLandsOnSuffixPositions) {
  const GroupLayout layout(2, {1, 2});
  pg::Tape<double> tape;
  auto q = tape.leaf({1, 1, 5, 2}, random_values(10, 31));
  const auto zero = Tensor::zeros({1, 1, 5, 2});
  tape.backward(pg::sum(pg::ungroup(q, zero, zero, layout).q_suffix));
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(q.grad()[i], i < 4 ? 0.0 : 1.0);
}

TEST(BatchRepeatCat, LengthsAdd) {
  const auto c = pg::batch_repeat_cat(Tensor::zeros({1, 2, 2, 4}), Tensor::zeros({1, 2, 3, 4}), 2);
  EXPECT_EQ(c.shape(), (Shape{1, 2, 5, 4}));
  EXPECT_THROW(pg::batch_repeat_cat(Tensor::zeros({1, 2, 2, 4}), Tensor::zeros({1, 2, 3, 4}), 4),
               pg::DimensionError);
}

TEST(BatchRepeatCat, SingleGroupIsPlainConcat) {
  const auto p = random_tensor({1, 1, 2, 3}, 32);
  const auto s = random_tensor({1, 1, 3, 3}, 33);
  EXPECT_EQ(values_of(pg::batch_repeat_cat(p, s, 2)), values_of(cat_rows(p, s)));
}

TEST(BatchRepeatCat, RepeatsPrefixAcrossBatch) {
  const auto p = random_tensor({1, 1, 2, 3}, 34);
  const auto s = random_tensor({3, 1, 4, 3}, 35);
  const auto c = pg::batch_repeat_cat(p, s, 2);
  ASSERT_EQ(c.shape(), (Shape{3, 1, 6, 3}));
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t c2 = 0; c2 < 3; ++c2) EXPECT_EQ(c.at({b, 0, 1, c2}), p.at({0, 0, 1, c2}));
}

// The prefix-key gradient through the shared layout equals the sum of the
// gradients of each response's own baseline attention.
TEST(BatchRepeatCat, PrefixGradientSumsOverResponses) {
  const GroupLayout layout(2, {2, 3});
  const auto q = random_tensor({1, 1, 7, 4}, 36);
  const auto v = random_tensor({1, 1, 7, 4}, 37);
  const auto k_values = random_values(28, 38);
  const auto masks = pg::build_masks<double>(layout);

  pg::Tape<double> tape;
  auto k = tape.leaf({1, 1, 7, 4}, k_values);
  const auto parts = pg::ungroup(q, k, v, layout);
  const auto out = pg::causal_attention(parts.q_suffix, pg::batch_repeat_cat(parts.k_prefix, parts.k_suffix, 2),
                                        pg::batch_repeat_cat(parts.v_prefix, parts.v_suffix, 2), masks.suffix_mask);
  tape.backward(weighted_sum(out, 5));
  const std::vector<double> shared(k.grad().begin(), k.grad().begin() + 8);

  std::vector<double> summed(8, 0.0);
  const auto w = random_tensor({1, 1, 5, 4}, 5);
  for (std::size_t g = 0; g < 2; ++g) {
    pg::Tape<double> t;
    auto kk = t.leaf({1, 1, 7, 4}, k_values);
    const std::size_t b = layout.suffix_begin(g), e = layout.suffix_end(g);
    const auto kg = cat_rows(rows(kk, 0, 2), rows(kk, b, e));
    const auto qg = rows(q, b, e);
    const auto vg = cat_rows(rows(v, 0, 2), rows(v, b, e));
    const std::size_t n = e - b;
    const auto mask = pg::build_masks<double>(GroupLayout(2, {n})).suffix_mask;
    const auto og = pg::causal_attention(qg, kg, vg, mask);
    t.backward(pg::sum(pg::mul(og, rows(w, b - 2, e - 2))));
    for (std::size_t i = 0; i < 8; ++i) summed[i] += kk.grad()[i];
  }
  EXPECT_LT(max_abs_diff(shared, summed), 1e-12);
}

// ---------------------------------------------------------------------------

TEST(GroupedAttention, SingleResponseEqualsFullCausal) {
  const GroupLayout layout(5, {4});
  const auto q = random_tensor({1, 2, 9, 4}, 40);
  const auto k = random_tensor({1, 2, 9, 4}, 41);
  const auto v = random_tensor({1, 2, 9, 4}, 42);
  const auto grouped = pg::grouped_attention(q, k, v, layout, pg::build_masks<double>(layout));
  const auto full = pg::causal_attention(q, k, v, pg::causal_mask<double>(9));
  EXPECT_LT(max_abs_diff(grouped.data(), full.data()), 1e-12);
}

TEST(GroupedAttention, RowsMatchPerResponseBaseline) {
  const GroupLayout layout(4, {2, 3});
  const auto q = random_tensor({1, 2, 9, 4}, 43);
  const auto k = random_tensor({1, 2, 9, 4}, 44);
  const auto v = random_tensor({1, 2, 9, 4}, 45);
  const auto grouped = pg::grouped_attention(q, k, v, layout, pg::build_masks<double>(layout));
  for (std::size_t g = 0; g < 2; ++g) {
    const std::size_t b = layout.suffix_begin(g), e = layout.suffix_end(g);
    auto sample = [&](const Tensor& x) { return cat_rows(rows(x, 0, 4), rows(x, b, e)); };
    const auto base = pg::causal_attention(sample(q), sample(k), sample(v), pg::causal_mask<double>(4 + e - b));
    EXPECT_LT(max_abs_diff(rows(grouped, 0, 4).data(), rows(base, 0, 4).data()), 1e-12);
    EXPECT_LT(max_abs_diff(rows(grouped, b, e).data(), rows(base, 4, 4 + e - b).data()), 1e-12);
  }
}

TEST(GroupedAttention, PerturbingOneResponseLeavesOthersBitIdentical) {
  const GroupLayout layout(3, {2, 3, 2});
  const auto masks = pg::build_masks<double>(layout);
  auto q = random_values(2 * 10 * 4, 46), k = random_values(80, 47), v = random_values(80, 48);
  auto run = [&] {
    return pg::grouped_attention(Tensor::from({1, 2, 10, 4}, q), Tensor::from({1, 2, 10, 4}, k),
                                 Tensor::from({1, 2, 10, 4}, v), layout, masks);
  };
  const auto before = run();
  // Response 2 occupies positions 5..7.
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t t = 5; t < 8; ++t)
      for (std::size_t c = 0; c < 4; ++c) {
        q[(h * 10 + t) * 4 + c] += 0.5;
        k[(h * 10 + t) * 4 + c] -= 0.25;
        v[(h * 10 + t) * 4 + c] *= 3.0;
      }
  const auto after = run();
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t t : {0, 1, 2, 3, 4, 8, 9})
      for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(before.at({0, h, t, c}), after.at({0, h, t, c}));
}

TEST(GroupedAttention, NoGradientAcrossResponses) {
  const GroupLayout layout(2, {3, 2});
  const auto masks = pg::build_masks<double>(layout);
  pg::Tape<double> tape;
  auto q = tape.leaf({1, 1, 7, 2}, random_values(14, 49));
  auto k = tape.leaf({1, 1, 7, 2}, random_values(14, 50));
  auto v = tape.leaf({1, 1, 7, 2}, random_values(14, 51));
  const auto out = pg::grouped_attention(q, k, v, layout, masks);
  // Loss reads only rows of response 1 (positions 2..4).
  tape.backward(weighted_sum(rows(out, 2, 5)));
  for (const auto* t : {&q, &k, &v})
    for (std::size_t i = 5 * 2; i < 7 * 2; ++i) EXPECT_EQ(t->grad()[i], 0.0);
}

TEST(GroupedAttention, PrefixRowsDependOnlyOnPrefix) {
  const GroupLayout layout(3, {2, 2});
  const auto masks = pg::build_masks<double>(layout);
  pg::Tape<double> tape;
  auto x = tape.leaf({1, 1, 7, 2}, random_values(14, 52));
  tape.backward(weighted_sum(rows(pg::grouped_attention(x, x, x, layout, masks), 0, 3)));
  for (std::size_t i = 6; i < 14; ++i) EXPECT_EQ(x.grad()[i], 0.0);
}

}  // namespace
