/*
 * Copyright 2026 The MLFF Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "mlff/rehearsal.hpp"

#include <algorithm>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "mlff/error.hpp"
#include "support/oracles.hpp"

namespace mlff {
namespace {

using testing::brute_force_fps;
using testing::exhaustive_shapley;
using testing::grasp_first_draw;

const Strategy kAll[] = {Strategy::kBalancedRandom, Strategy::kFps, Strategy::kMean,
                         Strategy::kGrasp, Strategy::kAser};

Candidate point(std::uint64_t id, std::uint32_t label, std::vector<float> rep,
                std::uint32_t task = 0) {
  return {id, label, task, std::move(rep)};
}

std::vector<Candidate> line(std::initializer_list<float> xs, std::uint32_t label = 0,
                            std::uint64_t first_id = 0) {
  std::vector<Candidate> out;
  std::uint64_t id = first_id;
  for (float x : xs) out.push_back(point(id++, label, {x}));
  return out;
}

std::vector<Candidate> random_pool(std::size_t n, std::size_t dim, std::uint32_t classes,
                                   std::mt19937_64& rng, std::uint32_t task = 0) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<Candidate> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> rep(dim);
    for (float& v : rep) v = normal(rng);
    out.push_back(point(1000 * task + i, static_cast<std::uint32_t>(rng() % classes), rep, task));
  }
  return out;
}

std::vector<std::uint64_t> ids(const std::vector<Selection>& s) {
  std::vector<std::uint64_t> out;
  for (const auto& x : s) out.push_back(x.sample_id);
  return out;
}

std::vector<Candidate> members_of(const std::vector<Candidate>& pool, std::uint32_t label) {
  std::vector<Candidate> out;
  for (const auto& c : pool) {
    if (c.label == label) out.push_back(c);
  }
  return out;
}

// --- shared properties --------------------------------------------------

TEST(SelectionPropertyTest, SubsetNoDuplicatesExactSizeDeterministic) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pool = random_pool(30, 4, 3, rng);
    for (Strategy s : kAll) {
      for (std::size_t budget : {0, 1, 7, 29, 30, 45}) {
        const auto a = select(s, pool, budget, 99);
        const auto b = select(s, pool, budget, 99);
        EXPECT_EQ(ids(a), ids(b)) << to_string(s);
        EXPECT_EQ(a.size(), std::min<std::size_t>(budget, pool.size())) << to_string(s);
        std::set<std::uint64_t> unique;
        for (const auto& sel : a) {
          unique.insert(sel.sample_id);
          auto it = std::find_if(pool.begin(), pool.end(),
                                 [&](const Candidate& c) { return c.sample_id == sel.sample_id; });
          ASSERT_NE(it, pool.end());
          EXPECT_EQ(it->label, sel.label);
        }
        EXPECT_EQ(unique.size(), a.size()) << to_string(s);
      }
    }
  }
}

TEST(SelectionPropertyTest, ClassCountsDifferByAtMostOneUnlessExhausted) {
  std::mt19937_64 rng(2);
  const auto pool = random_pool(60, 3, 4, rng);
  std::map<std::uint32_t, std::size_t> sizes;
  for (const auto& c : pool) ++sizes[c.label];
  for (Strategy s : kAll) {
    for (std::size_t budget : {4, 10, 23, 41}) {
      std::map<std::uint32_t, std::size_t> got;
      for (const auto& sel : select(s, pool, budget, 5)) ++got[sel.label];
      std::size_t lo = SIZE_MAX, hi = 0;
      for (const auto& [label, n] : sizes) {
        if (got[label] == n) continue;  // exhausted
        lo = std::min(lo, got[label]);
        hi = std::max(hi, got[label]);
      }
      if (hi > 0) EXPECT_LE(hi - lo, 1u) << to_string(s) << " budget " << budget;
    }
  }
}

TEST(SelectionPropertyTest, StrategyNamesRoundTrip) {
  for (Strategy s : kAll) EXPECT_EQ(strategy_from_string(to_string(s)), s);
  EXPECT_EQ(strategy_from_string("none"), Strategy::kNone);
  EXPECT_THROW(strategy_from_string("herding"), ConfigError);
}

// --- balanced random -----------------------------------------------------

TEST(BalancedRandomTest, BudgetFourGivesTwoPerClass) {
  auto pool = line({0, 1, 2, 3, 4}, 0);
  auto other = line({5, 6, 7}, 1, 100);
  pool.insert(pool.end(), other.begin(), other.end());
  std::map<std::uint32_t, int> count;
  for (const auto& s : select_balanced_random(pool, 4, 3)) ++count[s.label];
  EXPECT_EQ(count[0], 2);
  EXPECT_EQ(count[1], 2);
}

TEST(BalancedRandomTest, ExhaustedClassLeavesRemainderToOthers) {
  auto pool = line({0}, 0);
  auto other = line({1, 2, 3, 4, 5}, 1, 10);
  pool.insert(pool.end(), other.begin(), other.end());
  const auto budgets = class_budgets(pool, 4);
  EXPECT_EQ(budgets.at(0), 1u);
  EXPECT_EQ(budgets.at(1), 3u);
}

TEST(BalancedRandomTest, BudgetBeyondPoolReturnsAll) {
  const auto pool = line({0, 1, 2});
  EXPECT_EQ(select_balanced_random(pool, 10, 1).size(), 3u);
}

TEST(BalancedRandomTest, DifferentSeedsDrawDifferentSubsets) {
  std::mt19937_64 rng(3);
  const auto pool = random_pool(100, 2, 2, rng);
  EXPECT_NE(ids(select_balanced_random(pool, 10, 1)), ids(select_balanced_random(pool, 10, 2)));
}

// --- FPS -----------------------------------------------------------------

TEST(FpsTest, OneDimensionalExample) {
  const auto pool = line({0, 1, 10});
  const auto got = select_fps(pool, 2);
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0].sample_id, 1u);  // the point at 1
  EXPECT_EQ(got[1].sample_id, 2u);  // the point at 10
}

TEST(FpsTest, BudgetOneIsNearestToMean) {
  const auto pool = line({-4, 0.5f, 2, 9});
  EXPECT_EQ(select_fps(pool, 1)[0].sample_id, 2u);
}

TEST(FpsTest, MatchesBruteForceGreedy) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const auto pool = random_pool(64, 3, 2, rng);
    const std::size_t budget = 1 + rng() % 40;
    const auto got = select_fps(pool, budget);
    const auto budgets = class_budgets(pool, budget);
    std::vector<std::uint64_t> expected;
    for (const auto& [label, b] : budgets) {
      const auto ref = brute_force_fps(members_of(pool, label), b);
      expected.insert(expected.end(), ref.begin(), ref.end());
    }
    EXPECT_EQ(ids(got), expected) << "trial " << trial;
  }
}

TEST(FpsTest, TranslationInvariant) {
  std::mt19937_64 rng(5);
  auto pool = random_pool(40, 2, 2, rng);
  const auto before = ids(select_fps(pool, 12));
  for (auto& c : pool) {
    c.representation[0] += 0.75f;
    c.representation[1] -= 1.5f;
  }
  EXPECT_EQ(ids(select_fps(pool, 12)), before);
}

// --- mean ----------------------------------------------------------------

TEST(MeanTest, OneDimensionalExample) {
  const auto pool = line({0, 3, 10});
  const auto got = select_mean(pool, 1);
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].sample_id, 1u);
  EXPECT_NEAR(got[0].score, 13.0 / 3.0 - 3.0, 1e-6);
}

TEST(MeanTest, EquidistantTieGoesToLowestId) {
  const auto pool = line({-1, 1, 5, -5});  // mean 0
  EXPECT_EQ(ids(select_mean(pool, 2)), (std::vector<std::uint64_t>{0, 1}));
}

TEST(MeanTest, TranslationInvariantAndFullBudgetTakesAll) {
  std::mt19937_64 rng(6);
  auto pool = random_pool(40, 3, 2, rng);
  const auto before = ids(select_mean(pool, 9));
  for (auto& c : pool) {
    for (float& v : c.representation) v += 2.0f;
  }
  EXPECT_EQ(ids(select_mean(pool, 9)), before);
  EXPECT_EQ(select_mean(pool, 40).size(), 40u);
}

// --- GRASP ---------------------------------------------------------------

TEST(GraspTest, CosineDistanceConventions) {
  const std::vector<float> x{1.0f, 0.0f};
  EXPECT_NEAR(cosine_distance(x, std::vector<double>{2.0, 0.0}), 0.0, 1e-12);
  EXPECT_NEAR(cosine_distance(x, std::vector<double>{0.0, 3.0}), 1.0, 1e-12);
  EXPECT_NEAR(cosine_distance(x, std::vector<double>{-1.0, 0.0}), 2.0, 1e-12);
  EXPECT_EQ(cosine_distance(std::vector<float>{0.0f, 0.0f}, std::vector<double>{1.0, 1.0}), 1.0);
}

TEST(GraspTest, FullBudgetTakesAllForAnySeed) {
  std::mt19937_64 rng(7);
  const auto pool = random_pool(15, 3, 1, rng);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EXPECT_EQ(select_grasp(pool, 15, seed).size(), 15u);
  }
}

TEST(GraspTest, PointAtMeanDominatesFirstDraw) {
  // Mean of the class is (1, 1); the first point lies exactly on it and the
  // others are at cosine distance >= 0.5.
  std::vector<Candidate> pool{point(0, 0, {1.0f, 1.0f}), point(1, 0, {4.0f, -0.5f}),
                              point(2, 0, {-2.0f, 3.5f}), point(3, 0, {1.0f, 0.0f})};
  const auto probs = grasp_first_draw(pool, 1e-8);
  ASSERT_GE(probs[0], 1.0 - 1e-6);
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) hits += select_grasp(pool, 1, seed)[0].sample_id == 0;
  EXPECT_EQ(hits, 1000);
}

TEST(GraspTest, FirstDrawFrequenciesMatchClosedForm) {
  std::mt19937_64 rng(8);
  std::vector<Candidate> pool;
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (std::uint64_t i = 0; i < 6; ++i) {
    pool.push_back(point(i, 0, {2.0f + normal(rng), 1.0f + normal(rng), normal(rng)}));
  }
  const auto probs = grasp_first_draw(pool, 1e-8);
  const int trials = 10000;
  std::vector<int> counts(pool.size(), 0);
  for (int t = 0; t < trials; ++t) ++counts[select_grasp(pool, 1, 1000 + t)[0].sample_id];
  for (std::size_t i = 0; i < pool.size(); ++i) {
    EXPECT_NEAR(counts[i] / double(trials), probs[i], 0.02) << i;
  }
}

TEST(GraspTest, FirstDrawDistributionIsScaleInvariant) {
  std::mt19937_64 rng(9);
  auto pool = random_pool(6, 3, 1, rng);
  for (auto& c : pool) c.representation[0] += 2.0f;
  auto scaled = pool;
  for (auto& c : scaled) {
    for (float& v : c.representation) v *= 8.0f;
  }
  std::vector<int> a(6, 0), b(6, 0);
  for (int t = 0; t < 5000; ++t) {
    ++a[select_grasp(pool, 1, t)[0].sample_id];
    ++b[select_grasp(scaled, 1, t + 50000)[0].sample_id];
  }
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(a[i] / 5000.0, b[i] / 5000.0, 0.03);
}

// --- KNN-Shapley --------------------------------------------------------

TEST(KnnShapleyTest, SingleCandidate) {
  const std::vector<Candidate> same{point(0, 1, {0.0f})};
  EXPECT_DOUBLE_EQ(knn_shapley(same, std::vector<float>{1.0f}, 1, 1)[0], 1.0);
  EXPECT_DOUBLE_EQ(knn_shapley(same, std::vector<float>{1.0f}, 0, 1)[0], 0.0);
}

TEST(KnnShapleyTest, MatchesExhaustiveOracle) {
  std::mt19937_64 rng(10);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (std::size_t n : {1, 2, 5, 8}) {
    for (std::size_t k : {1, 2, 3, 5}) {
      for (int trial = 0; trial < 10; ++trial) {
        const auto pool = random_pool(n, 2, 2, rng);
        const std::vector<float> eval{normal(rng), normal(rng)};
        const std::uint32_t label = rng() % 2;
        const auto got = knn_shapley(pool, eval, label, k);
        const auto want = exhaustive_shapley(pool, eval, label, k);
        for (std::size_t i = 0; i < n; ++i) {
          EXPECT_NEAR(got[i], want[i], 1e-9) << "n=" << n << " k=" << k << " i=" << i;
        }
      }
    }
  }
}

TEST(KnnShapleyTest, OneNearestNeighbourValuesSumToNearestMatch) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pool = random_pool(8, 2, 2, rng);
    const std::vector<float> eval{0.1f, -0.2f};
    const auto values = knn_shapley(pool, eval, 0, 1);
    std::size_t nearest = 0;
    for (std::size_t i = 1; i < pool.size(); ++i) {
      if (testing::euclidean(pool[i].representation, eval) <
          testing::euclidean(pool[nearest].representation, eval)) {
        nearest = i;
      }
    }
    const double total = std::accumulate(values.begin(), values.end(), 0.0);
    EXPECT_NEAR(total, pool[nearest].label == 0 ? 1.0 : 0.0, 1e-12);
  }
}

// --- ASER ----------------------------------------------------------------

// Cooperative minus adversarial mean Shapley value with every other candidate
// as an evaluation point, computed with the exhaustive oracle.
std::vector<double> reference_aser(const std::vector<Candidate>& pool, std::size_t k) {
  const std::size_t n = pool.size();
  std::vector<double> coop(n, 0.0), adv(n, 0.0);
  std::vector<int> coop_n(n, 0), adv_n(n, 0);
  for (std::size_t e = 0; e < n; ++e) {
    std::vector<Candidate> rest;
    std::vector<std::size_t> index;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == e) continue;
      rest.push_back(pool[i]);
      index.push_back(i);
    }
    const auto values = exhaustive_shapley(rest, pool[e].representation, pool[e].label, k);
    for (std::size_t j = 0; j < rest.size(); ++j) {
      const std::size_t i = index[j];
      if (pool[i].label == pool[e].label) {
        coop[i] += values[j];
        ++coop_n[i];
      } else {
        adv[i] += values[j];
        ++adv_n[i];
      }
    }
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = (coop_n[i] ? coop[i] / coop_n[i] : 0.0) - (adv_n[i] ? adv[i] / adv_n[i] : 0.0);
  }
  return out;
}

TEST(AserTest, ScoresMatchExhaustiveOracleWithFullEvalSets) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const auto pool = random_pool(9, 2, 2, rng);
    for (std::size_t k : {1, 3}) {
      const auto got = aser_scores(pool, k, 64, 5);
      const auto want = reference_aser(pool, k);
      for (std::size_t i = 0; i < pool.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-9);
    }
  }
}

TEST(AserTest, BoundaryCandidateOutscoresEquidistantPeer) {
  // Class 0 at -3, 0, 3 (mean 0); class 1 at 4.2, 9, 10. The points at -3
  // and 3 are equally far from their class mean but only 3 is the nearest
  // neighbour of an other-class sample.
  auto pool = line({-3, 0, 3}, 0);
  auto other = line({4.2f, 9, 10}, 1, 10);
  pool.insert(pool.end(), other.begin(), other.end());
  const auto scores = aser_scores(pool, 1, 64, 1);
  const auto want = reference_aser(pool, 1);
  for (std::size_t i = 0; i < pool.size(); ++i) EXPECT_NEAR(scores[i], want[i], 1e-12);
  // Evaluated at 4.2 the boundary point mislabels it: value -1/4.
  const auto at_boundary = knn_shapley(
      std::vector<Candidate>{pool[0], pool[1], pool[2], pool[4], pool[5]}, pool[3].representation, 1, 1);
  EXPECT_NEAR(at_boundary[2], -0.25, 1e-12);
  EXPECT_NEAR(at_boundary[0], 0.0, 1e-12);
  EXPECT_GT(scores[2], scores[0]);
  EXPECT_EQ(select_aser(pool, 2, 1, 64, 1)[0].sample_id, 2u);
}

TEST(AserTest, SingleClassReducesToCooperativeTerm) {
  std::mt19937_64 rng(13);
  const auto pool = random_pool(7, 2, 1, rng);
  const auto got = aser_scores(pool, 2, 64, 3);
  const auto want = reference_aser(pool, 2);
  for (std::size_t i = 0; i < pool.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-9);
  EXPECT_EQ(select_aser(pool, 7, 2, 64, 3).size(), 7u);
}

TEST(AserTest, SubsampledEvalSetsAreSeeded) {
  std::mt19937_64 rng(14);
  const auto pool = random_pool(80, 3, 2, rng);
  EXPECT_EQ(aser_scores(pool, 5, 8, 1), aser_scores(pool, 5, 8, 1));
  EXPECT_NE(aser_scores(pool, 5, 8, 1), aser_scores(pool, 5, 8, 2));
}

// --- buffer --------------------------------------------------------------

TEST(AllocationTest, EqualSplitWithRemainderToEarliest) {
  EXPECT_EQ(equal_allocation(25, 2), (std::vector<std::size_t>{13, 12}));
  EXPECT_EQ(equal_allocation(1000, 5), (std::vector<std::size_t>(5, 200)));
  EXPECT_EQ(equal_allocation(250, 4), (std::vector<std::size_t>{63, 63, 62, 62}));
}

TEST(BufferTest, AllocationsAfterEachTask) {
  std::mt19937_64 rng(15);
  RehearsalBuffer buffer(25, Strategy::kBalancedRandom);
  buffer.update(random_pool(100, 2, 2, rng, 1), 1);
  EXPECT_EQ(buffer.entries().size(), 25u);
  buffer.update(random_pool(100, 2, 2, rng, 2), 2);
  ASSERT_EQ(buffer.allocations().size(), 2u);
  EXPECT_EQ(buffer.allocations()[0].slots, 13u);
  EXPECT_EQ(buffer.allocations()[1].slots, 12u);
  std::map<std::uint32_t, std::size_t> per_task;
  for (const auto& e : buffer.entries()) ++per_task[e.task_id];
  EXPECT_EQ(per_task[1], 13u);
  EXPECT_EQ(per_task[2], 12u);
}

TEST(BufferTest, FiveTasksIntoThousandSlots) {
  std::mt19937_64 rng(16);
  RehearsalBuffer buffer(1000, Strategy::kMean);
  for (std::uint32_t t = 0; t < 5; ++t) buffer.update(random_pool(400, 2, 2, rng, t), t);
  for (const auto& a : buffer.allocations()) EXPECT_EQ(a.slots, 200u);
  EXPECT_EQ(buffer.entries().size(), 1000u);
}

TEST(BufferTest, ShrinkKeepsOnlyPreviouslyHeldEntriesWithOriginalBytes) {
  std::mt19937_64 rng(17);
  for (Strategy s : kAll) {
    RehearsalBuffer buffer(30, s);
    const auto first = random_pool(60, 3, 2, rng, 1);
    buffer.update(first, 1);
    const auto held = buffer.entries();
    for (std::uint32_t t = 2; t <= 4; ++t) {
      buffer.update(random_pool(60, 3, 2, rng, t), t);
      EXPECT_LE(buffer.entries().size(), 30u);
      for (const auto& e : buffer.entries()) {
        if (e.task_id != 1) continue;
        auto it = std::find_if(held.begin(), held.end(),
                               [&](const Candidate& h) { return h.sample_id == e.sample_id; });
        ASSERT_NE(it, held.end()) << to_string(s);
        EXPECT_EQ(it->representation, e.representation);
      }
    }
  }
}

TEST(BufferTest, ProtocolAndConfigErrors) {
  std::mt19937_64 rng(18);
  EXPECT_THROW(RehearsalBuffer(10, Strategy::kNone), ConfigError);
  RehearsalBuffer tiny(1, Strategy::kFps);
  tiny.update(random_pool(5, 2, 2, rng, 1), 1);
  EXPECT_THROW(tiny.update(random_pool(5, 2, 2, rng, 2), 2), ProtocolError);
  RehearsalBuffer twice(10, Strategy::kFps);
  const auto task = random_pool(5, 2, 2, rng, 3);
  twice.update(task, 1);
  EXPECT_THROW(twice.update(task, 1), ProtocolError);
}

TEST(BufferTest, ZeroCapacityIsDisabled) {
  std::mt19937_64 rng(19);
  RehearsalBuffer off(0, Strategy::kNone);
  EXPECT_FALSE(off.enabled());
  off.update(random_pool(5, 2, 2, rng, 1), 1);
  EXPECT_TRUE(off.entries().empty());
}

}  // namespace
}  // namespace mlff
