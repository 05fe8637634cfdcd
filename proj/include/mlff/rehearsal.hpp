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

// Historic-sample buffer and selection strategies. All strategies work on the
// cached concatenated representation of each sample and return at most one
// entry per candidate, grouped by ascending class label. Ties are broken
// towards the lowest sample_id.

#ifndef MLFF_REHEARSAL_HPP_
#define MLFF_REHEARSAL_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string_view>
#include <vector>

namespace mlff {

struct Candidate {
  std::uint64_t sample_id = 0;
  std::uint32_t label = 0;
  std::uint32_t task_id = 0;
  std::vector<float> representation;
};

using BufferEntry = Candidate;

struct Selection {
  std::uint64_t sample_id = 0;
  std::uint32_t label = 0;
  std::uint32_t task_id = 0;
  double score = 0.0;
};

enum class Strategy { kNone, kBalancedRandom, kFps, kMean, kGrasp, kAser };

std::string_view to_string(Strategy s);
Strategy strategy_from_string(std::string_view name);

struct StrategyOptions {
  std::size_t aser_k = 5;
  std::size_t aser_eval_subsample = 64;
  double grasp_epsilon = 1e-8;
};

// Round-robin over classes in ascending label order; per-class counts differ
// by at most one unless a class runs out of members.
std::map<std::uint32_t, std::size_t> class_budgets(std::span<const Candidate> candidates,
                                                   std::size_t budget);

std::vector<Selection> select_balanced_random(std::span<const Candidate> candidates,
                                              std::size_t budget, std::uint64_t seed);

// Greedy max-min (farthest point) per class, seeded at the member nearest to
// the class mean. Scores are the max-min distance at the time of selection
// (distance to the mean for the first pick). Deterministic; `seed` is unused.
std::vector<Selection> select_fps(std::span<const Candidate> candidates, std::size_t budget,
                                  std::uint64_t seed = 0);

// Members closest to their class mean. Scores are those distances.
std::vector<Selection> select_mean(std::span<const Candidate> candidates, std::size_t budget);

// 1 - cos(x, m); defined as 1 when either vector is zero.
double cosine_distance(std::span<const float> x, std::span<const double> m);

// Per class, sequential sampling without replacement with probability
// proportional to 1 / (epsilon + cosine distance to the class mean).
// Scores are the sampling weights.
std::vector<Selection> select_grasp(std::span<const Candidate> candidates, std::size_t budget,
                                    std::uint64_t seed, double epsilon = 1e-8);

// Exact KNN-Shapley value of every candidate for one labeled evaluation
// point, aligned with `candidates`. The utility of a subset S is
// (1/K) * #{of the min(K, |S|) nearest members of S sharing the label}.
std::vector<double> knn_shapley(std::span<const Candidate> candidates,
                                std::span<const float> eval_point, std::uint32_t eval_label,
                                std::size_t k);

// Cooperative minus adversarial mean KNN-Shapley value per candidate, aligned
// with `candidates`. Evaluation sets are seeded per-class subsamples of the
// candidates themselves; a candidate never evaluates itself.
std::vector<double> aser_scores(std::span<const Candidate> candidates, std::size_t k,
                                std::size_t eval_subsample, std::uint64_t seed);

std::vector<Selection> select_aser(std::span<const Candidate> candidates, std::size_t budget,
                                   std::size_t k, std::size_t eval_subsample, std::uint64_t seed);

std::vector<Selection> select(Strategy strategy, std::span<const Candidate> candidates,
                              std::size_t budget, std::uint64_t seed,
                              const StrategyOptions& options = {});

struct TaskAllocation {
  std::uint32_t task_id = 0;
  std::size_t slots = 0;
};

// Capacity split equally across `tasks`, remainder to the earliest tasks.
std::vector<std::size_t> equal_allocation(std::size_t capacity, std::size_t tasks);

class RehearsalBuffer {
 public:
  RehearsalBuffer() = default;
  RehearsalBuffer(std::size_t capacity, Strategy strategy, StrategyOptions options = {});

  // Capacity 0 disables rehearsal: updates are no-ops.
  bool enabled() const noexcept { return capacity_ > 0; }
  std::size_t capacity() const noexcept { return capacity_; }
  Strategy strategy() const noexcept { return strategy_; }
  const std::vector<BufferEntry>& entries() const noexcept { return entries_; }
  const std::vector<TaskAllocation>& allocations() const noexcept { return allocations_; }

  // Admits a finished task: re-divides capacity over all seen tasks, shrinks
  // existing holdings by re-running the strategy on the held entries only,
  // and fills the new task's share from its full training set.
  void update(std::span<const Candidate> finished_task, std::uint64_t seed);

 private:
  std::size_t capacity_ = 0;
  Strategy strategy_ = Strategy::kNone;
  StrategyOptions options_;
  std::vector<BufferEntry> entries_;
  std::vector<TaskAllocation> allocations_;
};

}  // namespace mlff

#endif  // MLFF_REHEARSAL_HPP_
