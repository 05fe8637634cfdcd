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
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "mlff/error.hpp"
#include "mlff/random.hpp"

namespace mlff {
namespace {

// Candidate indices per class, each list sorted by sample_id.
std::map<std::uint32_t, std::vector<std::size_t>> group_by_class(
    std::span<const Candidate> candidates) {
  std::map<std::uint32_t, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < candidates.size(); ++i) out[candidates[i].label].push_back(i);
  for (auto& [_, idx] : out) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return candidates[a].sample_id < candidates[b].sample_id;
    });
  }
  return out;
}

std::vector<double> mean_of(std::span<const Candidate> candidates,
                            std::span<const std::size_t> members) {
  const std::size_t dim = candidates[members.front()].representation.size();
  std::vector<double> mean(dim, 0.0);
  for (std::size_t i : members) {
    const auto& x = candidates[i].representation;
    if (x.size() != dim) throw DataError("representation dims differ within a candidate set");
    for (std::size_t k = 0; k < dim; ++k) mean[k] += x[k];
  }
  for (double& m : mean) m /= static_cast<double>(members.size());
  return mean;
}

double sq_distance(std::span<const float> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = static_cast<double>(a[k]) - b[k];
    s += d * d;
  }
  return s;
}

double sq_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw DataError("representation dims differ");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
    s += d * d;
  }
  return s;
}

Selection make_selection(const Candidate& c, double score) {
  return {c.sample_id, c.label, c.task_id, score};
}

}  // namespace

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kNone:
      return "none";
    case Strategy::kBalancedRandom:
      return "balanced_random";
    case Strategy::kFps:
      return "fps";
    case Strategy::kMean:
      return "mean";
    case Strategy::kGrasp:
      return "grasp";
    case Strategy::kAser:
      return "aser";
  }
  return "unknown";
}

Strategy strategy_from_string(std::string_view name) {
  for (Strategy s : {Strategy::kNone, Strategy::kBalancedRandom, Strategy::kFps, Strategy::kMean,
                     Strategy::kGrasp, Strategy::kAser}) {
    if (name == to_string(s)) return s;
  }
  throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

std::map<std::uint32_t, std::size_t> class_budgets(std::span<const Candidate> candidates,
                                                   std::size_t budget) {
  std::map<std::uint32_t, std::size_t> sizes;
  for (const auto& c : candidates) ++sizes[c.label];
  std::map<std::uint32_t, std::size_t> out;
  for (const auto& [label, _] : sizes) out[label] = 0;
  std::size_t remaining = std::min(budget, candidates.size());
  while (remaining > 0) {
    for (auto& [label, count] : out) {
      if (remaining == 0) break;
      if (count < sizes[label]) {
        ++count;
        --remaining;
      }
    }
  }
  return out;
}

std::vector<Selection> select_balanced_random(std::span<const Candidate> candidates,
                                              std::size_t budget, std::uint64_t seed) {
  const auto budgets = class_budgets(candidates, budget);
  std::vector<Selection> out;
  for (auto [label, members] : group_by_class(candidates)) {
    Rng rng(derive_seed(seed, {label}));
    seeded_shuffle(members, rng);
    for (std::size_t j = 0; j < budgets.at(label); ++j) {
      out.push_back(make_selection(candidates[members[j]], 0.0));
    }
  }
  return out;
}

std::vector<Selection> select_fps(std::span<const Candidate> candidates, std::size_t budget,
                                  std::uint64_t /*seed*/) {
  const auto budgets = class_budgets(candidates, budget);
  std::vector<Selection> out;
  for (const auto& [label, members] : group_by_class(candidates)) {
    const std::size_t want = budgets.at(label);
    if (want == 0) continue;
    const auto mean = mean_of(candidates, members);

    std::size_t first = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < members.size(); ++j) {
      const double d = sq_distance(candidates[members[j]].representation, mean);
      if (d < best) {
        best = d;
        first = j;
      }
    }
    std::vector<bool> taken(members.size(), false);
    std::vector<double> min_d(members.size(), std::numeric_limits<double>::infinity());
    std::size_t pick = first;
    double pick_score = std::sqrt(best);
    for (std::size_t round = 0; round < want; ++round) {
      taken[pick] = true;
      out.push_back(make_selection(candidates[members[pick]], pick_score));
      const auto& anchor = candidates[members[pick]].representation;
      std::size_t next = members.size();
      double far = -1.0;
      for (std::size_t j = 0; j < members.size(); ++j) {
        if (taken[j]) continue;
        min_d[j] = std::min(min_d[j], sq_distance(candidates[members[j]].representation, anchor));
        if (min_d[j] > far) {
          far = min_d[j];
          next = j;
        }
      }
      pick = next;
      pick_score = std::sqrt(far);
    }
  }
  return out;
}

std::vector<Selection> select_mean(std::span<const Candidate> candidates, std::size_t budget) {
  const auto budgets = class_budgets(candidates, budget);
  std::vector<Selection> out;
  for (const auto& [label, members] : group_by_class(candidates)) {
    const std::size_t want = budgets.at(label);
    if (want == 0) continue;
    const auto mean = mean_of(candidates, members);
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t i : members) {
      ranked.emplace_back(sq_distance(candidates[i].representation, mean), i);
    }
    // members are id-sorted, so a stable sort on distance keeps id order on ties.
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t j = 0; j < want; ++j) {
      out.push_back(make_selection(candidates[ranked[j].second], std::sqrt(ranked[j].first)));
    }
  }
  return out;
}

double cosine_distance(std::span<const float> x, std::span<const double> m) {
  double dot = 0.0, nx = 0.0, nm = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    dot += static_cast<double>(x[k]) * m[k];
    nx += static_cast<double>(x[k]) * x[k];
    nm += m[k] * m[k];
  }
  if (nx == 0.0 || nm == 0.0) return 1.0;
  return 1.0 - dot / (std::sqrt(nx) * std::sqrt(nm));
}

std::vector<Selection> select_grasp(std::span<const Candidate> candidates, std::size_t budget,
                                    std::uint64_t seed, double epsilon) {
  if (!(epsilon > 0.0)) throw ConfigError("grasp epsilon must be positive");
  const auto budgets = class_budgets(candidates, budget);
  std::vector<Selection> out;
  for (const auto& [label, members] : group_by_class(candidates)) {
    const std::size_t want = budgets.at(label);
    if (want == 0) continue;
    const auto mean = mean_of(candidates, members);
    std::vector<double> weight(members.size());
    for (std::size_t j = 0; j < members.size(); ++j) {
      const double d = std::max(0.0, cosine_distance(candidates[members[j]].representation, mean));
      weight[j] = 1.0 / (epsilon + d);
    }
    Rng rng(derive_seed(seed, {label}));
    std::vector<bool> taken(members.size(), false);
    for (std::size_t round = 0; round < want; ++round) {
      double total = 0.0;
      for (std::size_t j = 0; j < members.size(); ++j) {
        if (!taken[j]) total += weight[j];
      }
      const double target = uniform01(rng) * total;
      double acc = 0.0;
      std::size_t chosen = members.size();
      for (std::size_t j = 0; j < members.size(); ++j) {
        if (taken[j]) continue;
        chosen = j;  // falls back to the last free member on rounding
        acc += weight[j];
        if (target < acc) break;
      }
      taken[chosen] = true;
      out.push_back(make_selection(candidates[members[chosen]], weight[chosen]));
    }
  }
  return out;
}

namespace {

// KNN-Shapley over all candidates except index `skip` (pass size() to keep
// all). Values for the skipped candidate stay 0.
std::vector<double> knn_shapley_excluding(std::span<const Candidate> candidates,
                                          std::span<const float> eval_point,
                                          std::uint32_t eval_label, std::size_t k,
                                          std::size_t skip) {
  if (k == 0) throw ConfigError("KNN-Shapley needs K >= 1");
  std::vector<double> values(candidates.size(), 0.0);
  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (i == skip) continue;
    order.emplace_back(sq_distance(candidates[i].representation, eval_point), i);
  }
  const std::size_t m = order.size();
  if (m == 0) return values;
  std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return candidates[a.second].sample_id < candidates[b.second].sample_id;
  });
  auto match = [&](std::size_t rank) {
    return candidates[order[rank].second].label == eval_label ? 1.0 : 0.0;
  };

  // The farthest candidate only counts when fewer than K others are present,
  // which gives min(K, M) / (K * M); this is 1/M once M >= K.
  const double kd = static_cast<double>(k);
  const double md = static_cast<double>(m);
  double s = match(m - 1) * std::min(kd, md) / (kd * md);
  values[order[m - 1].second] = s;
  for (std::size_t rank = m - 1; rank-- > 0;) {
    const double i = static_cast<double>(rank + 1);  // 1-based position
    s += (match(rank) - match(rank + 1)) / kd * std::min(kd, i) / i;
    values[order[rank].second] = s;
  }
  return values;
}

}  // namespace

std::vector<double> knn_shapley(std::span<const Candidate> candidates,
                                std::span<const float> eval_point, std::uint32_t eval_label,
                                std::size_t k) {
  return knn_shapley_excluding(candidates, eval_point, eval_label, k, candidates.size());
}

std::vector<double> aser_scores(std::span<const Candidate> candidates, std::size_t k,
                                std::size_t eval_subsample, std::uint64_t seed) {
  const std::size_t m = candidates.size();
  std::vector<double> coop(m, 0.0), adv(m, 0.0);
  std::vector<std::size_t> coop_n(m, 0), adv_n(m, 0);

  for (auto [label, members] : group_by_class(candidates)) {
    Rng rng(derive_seed(seed, {label}));
    seeded_shuffle(members, rng);
    members.resize(std::min(members.size(), eval_subsample));
    std::sort(members.begin(), members.end());

    for (std::size_t e : members) {
      if (m < 2) continue;
      const auto values =
          knn_shapley_excluding(candidates, candidates[e].representation, label, k, e);
      for (std::size_t i = 0; i < m; ++i) {
        if (i == e) continue;
        if (candidates[i].label == label) {
          coop[i] += values[i];
          ++coop_n[i];
        } else {
          adv[i] += values[i];
          ++adv_n[i];
        }
      }
    }
  }

  std::vector<double> scores(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double c = coop_n[i] ? coop[i] / static_cast<double>(coop_n[i]) : 0.0;
    const double a = adv_n[i] ? adv[i] / static_cast<double>(adv_n[i]) : 0.0;
    scores[i] = c - a;
  }
  return scores;
}

std::vector<Selection> select_aser(std::span<const Candidate> candidates, std::size_t budget,
                                   std::size_t k, std::size_t eval_subsample, std::uint64_t seed) {
  if (eval_subsample == 0) throw ConfigError("aser eval_subsample must be positive");
  const auto budgets = class_budgets(candidates, budget);
  std::vector<Selection> out;
  if (candidates.empty() || budget == 0) return out;
  const auto scores = aser_scores(candidates, k, eval_subsample, seed);
  for (const auto& [label, members] : group_by_class(candidates)) {
    std::vector<std::size_t> ranked = members;
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    for (std::size_t j = 0; j < budgets.at(label); ++j) {
      out.push_back(make_selection(candidates[ranked[j]], scores[ranked[j]]));
    }
  }
  return out;
}

std::vector<Selection> select(Strategy strategy, std::span<const Candidate> candidates,
                              std::size_t budget, std::uint64_t seed,
                              const StrategyOptions& options) {
  switch (strategy) {
    case Strategy::kNone:
      return {};
    case Strategy::kBalancedRandom:
      return select_balanced_random(candidates, budget, seed);
    case Strategy::kFps:
      return select_fps(candidates, budget, seed);
    case Strategy::kMean:
      return select_mean(candidates, budget);
    case Strategy::kGrasp:
      return select_grasp(candidates, budget, seed, options.grasp_epsilon);
    case Strategy::kAser:
      return select_aser(candidates, budget, options.aser_k, options.aser_eval_subsample, seed);
  }
  throw ConfigError("unhandled strategy");
}

// ---------------------------------------------------------------------------
// Buffer

std::vector<std::size_t> equal_allocation(std::size_t capacity, std::size_t tasks) {
  if (tasks == 0) return {};
  std::vector<std::size_t> out(tasks, capacity / tasks);
  for (std::size_t i = 0; i < capacity % tasks; ++i) ++out[i];
  return out;
}

RehearsalBuffer::RehearsalBuffer(std::size_t capacity, Strategy strategy, StrategyOptions options)
    : capacity_(capacity), strategy_(strategy), options_(options) {
  if (capacity_ > 0 && strategy_ == Strategy::kNone) {
    throw ConfigError("a nonzero buffer capacity needs a selection strategy");
  }
}

void RehearsalBuffer::update(std::span<const Candidate> finished_task, std::uint64_t seed) {
  if (!enabled()) return;
  if (finished_task.empty()) throw ProtocolError("buffer update with an empty task");
  const std::uint32_t new_task = finished_task.front().task_id;
  for (const auto& a : allocations_) {
    if (a.task_id == new_task) {
      throw ProtocolError("task " + std::to_string(new_task) + " already admitted to the buffer");
    }
  }
  const std::size_t seen = allocations_.size() + 1;
  if (capacity_ < seen) {
    throw ProtocolError("buffer capacity " + std::to_string(capacity_) + " cannot hold " +
                        std::to_string(seen) + " tasks");
  }
  const auto shares = equal_allocation(capacity_, seen);

  std::vector<BufferEntry> next;
  for (std::size_t t = 0; t < allocations_.size(); ++t) {
    const std::uint32_t task = allocations_[t].task_id;
    std::vector<BufferEntry> held;
    for (const auto& e : entries_) {
      if (e.task_id == task) held.push_back(e);
    }
    if (held.size() <= shares[t]) {
      next.insert(next.end(), held.begin(), held.end());
    } else {
      const auto kept = select(strategy_, held, shares[t], derive_seed(seed, {task, seen}), options_);
      for (const auto& s : kept) {
        auto it = std::find_if(held.begin(), held.end(),
                               [&](const BufferEntry& e) { return e.sample_id == s.sample_id; });
        next.push_back(*it);
      }
    }
    allocations_[t].slots = shares[t];
  }

  const auto chosen = select(strategy_, finished_task, shares.back(),
                             derive_seed(seed, {new_task, seen}), options_);
  for (const auto& s : chosen) {
    auto it = std::find_if(finished_task.begin(), finished_task.end(),
                           [&](const Candidate& c) { return c.sample_id == s.sample_id; });
    next.push_back(*it);
  }
  allocations_.push_back({new_task, shares.back()});
  entries_ = std::move(next);
}

}  // namespace mlff
