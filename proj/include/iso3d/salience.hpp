#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "iso3d/model.hpp"
#include "iso3d/occlusion.hpp"

namespace iso3d {

/// Elements whose removal changes the latent representation, plus a
/// saliency score for every examined element. Element positions index the
/// examined input (ascending survivor order when computed on a subset).
struct CriticalSet {
  std::vector<std::uint32_t> members;  ///< ascending
  std::vector<double> scores;          ///< one per examined element

  std::size_t size() const noexcept { return members.size(); }
  bool empty() const noexcept { return members.empty(); }
  bool contains(std::uint32_t element) const;
  double saliency(std::uint32_t element) const { return scores.at(element); }
};

struct SalienceOptions {
  double volumetric_fraction = 0.25;  ///< share of occupied voxels taken as critical
  double latent_tau = 0.0;            ///< point-set latent comparison
  double blackbox_tau = 0.0;          ///< L-infinity logit change threshold
};

/// Point-set rule: a point is critical iff it is the unique maximizer of at
/// least one pooled dimension. Its score is the number of such dimensions
/// plus m / (1 + m), where m sums its lead over the runner-up in them.
CriticalSet critical_set_whitebox(const ForwardTrace& trace);

/// Volumetric rule: each occupied voxel maps to its final-stage activation
/// cell (integer division by the downsampling factor); its score sums, over
/// filters, the activation of that cell wherever it holds the maximum of its
/// pooling window. The top ceil(fraction * occupied) voxels are critical
/// (ties to the lower index).
CriticalSet critical_set_whitebox(const ForwardTrace& trace, const VoxelGrid& grid, double fraction = 0.25);

/// Dispatches on the input family.
CriticalSet critical_set_whitebox(const ForwardTrace& trace, const ModelInput& input,
                                  const SalienceOptions& options = {});

/// Output-only recovery: element i is critical iff removing it moves some
/// logit by more than tau; the score is that L-infinity change. Makes
/// exactly one query per element (none for a single-element input, whose
/// element is critical by definition).
CriticalSet critical_set_blackbox(std::size_t elements, std::span<const float> baseline_logits,
                                  const std::function<std::vector<float>(std::uint32_t removed)>& logits_without,
                                  double tau = 0.0);

/// Black-box critical set of the survivors of an oracle's input.
CriticalSet critical_set_blackbox(QueryOracle& oracle, const Survivors& survivors,
                                  std::span<const float> baseline_logits, double tau = 0.0);

bool latent_equal(std::span<const float> a, std::span<const float> b, double tau = 0.0);

/// Ordering source for ISO. Index 0 is saliency-descending (ties by element
/// index). For at most kExhaustiveRankLimit members the following indices
/// walk the remaining permutations lexicographically; larger sets get
/// seeded shuffles checked against the history of emitted ones; the history
/// is bounded, and reaching the bound counts as exhaustion.
struct RankState {
  std::uint64_t permutation_index = 0;
  std::uint64_t seed = 0;
  std::vector<std::uint32_t> ordering;  ///< last emitted ordering
  std::vector<std::uint64_t> history;   ///< hashes of emitted shuffles
};

inline constexpr std::size_t kExhaustiveRankLimit = 8;

struct RankStep {
  std::optional<std::vector<std::uint32_t>> ordering;  ///< empty when exhausted
  RankState next;

  bool exhausted() const noexcept { return !ordering.has_value(); }
};

RankStep rank(const CriticalSet& critical, const RankState& state);

/// Saliency-descending member order (ties by ascending element index).
std::vector<std::uint32_t> saliency_order(const CriticalSet& critical);

/// CSV `index,x,y,z,saliency,is_member`, one row per element.
void write_salience_csv(std::ostream& out, const OcclusionInput& input, const CriticalSet& critical);

}  // namespace iso3d
