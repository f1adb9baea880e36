#include "iso3d/salience.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "iso3d/error.hpp"
#include "iso3d/rng.hpp"

namespace iso3d {

bool CriticalSet::contains(std::uint32_t element) const {
  return std::binary_search(members.begin(), members.end(), element);
}

CriticalSet critical_set_whitebox(const ForwardTrace& trace) {
  const std::size_t n = trace.rows;
  const std::size_t dims = trace.pooled_latent.size();
  if (n == 0 || trace.per_point_latent.size() != n * dims) {
    throw ShapeError("white-box point critical set needs a point-set trace");
  }
  std::vector<std::size_t> owned(n, 0);
  std::vector<double> lead(n, 0.0);
  for (std::size_t k = 0; k < dims; ++k) {
    const float peak = trace.pooled_latent[k];
    std::size_t achiever = n;
    std::size_t achievers = 0;
    float runner_up = -std::numeric_limits<float>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      const float v = trace.per_point_latent[i * dims + k];
      if (v == peak) {
        ++achievers;
        achiever = i;
      } else {
        runner_up = std::max(runner_up, v);
      }
    }
    if (achievers != 1) continue;
    ++owned[achiever];
    if (n > 1) lead[achiever] += static_cast<double>(peak) - static_cast<double>(runner_up);
  }
  CriticalSet cs;
  cs.scores.resize(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (owned[i] == 0) continue;
    cs.members.push_back(static_cast<std::uint32_t>(i));
    cs.scores[i] = static_cast<double>(owned[i]) + lead[i] / (1.0 + lead[i]);
  }
  return cs;
}

CriticalSet critical_set_whitebox(const ForwardTrace& trace, const VoxelGrid& grid, double fraction) {
  const VolumeTrace& vol = trace.volume;
  if (vol.extent == 0 || vol.activations.size() != vol.filters * vol.extent * vol.extent * vol.extent) {
    throw ShapeError("white-box voxel critical set needs a volumetric trace");
  }
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("critical fraction must lie in [0,1]");
  const std::size_t e = vol.extent;
  const std::size_t volume = e * e * e;
  const auto cells = grid.occupied_cells();

  auto activation = [&](std::size_t f, std::size_t z, std::size_t y, std::size_t x) {
    return vol.activations[f * volume + (z * e + y) * e + x];
  };

  CriticalSet cs;
  cs.scores.resize(cells.size(), 0.0);
  for (std::size_t v = 0; v < cells.size(); ++v) {
    const CellIndex c = grid.cell(cells[v]);
    const std::size_t az = std::min<std::size_t>(static_cast<std::size_t>(c[0]) / vol.downsample, e - 1);
    const std::size_t ay = std::min<std::size_t>(static_cast<std::size_t>(c[1]) / vol.downsample, e - 1);
    const std::size_t ax = std::min<std::size_t>(static_cast<std::size_t>(c[2]) / vol.downsample, e - 1);
    const std::size_t wz = az / vol.pool * vol.pool;
    const std::size_t wy = ay / vol.pool * vol.pool;
    const std::size_t wx = ax / vol.pool * vol.pool;
    double score = 0.0;
    for (std::size_t f = 0; f < vol.filters; ++f) {
      const float own = activation(f, az, ay, ax);
      bool wins = true;
      for (std::size_t a = 0; a < vol.pool && wins; ++a) {
        for (std::size_t b = 0; b < vol.pool && wins; ++b) {
          for (std::size_t d = 0; d < vol.pool && wins; ++d) {
            if (wz + a < e && wy + b < e && wx + d < e && activation(f, wz + a, wy + b, wx + d) > own) wins = false;
          }
        }
      }
      if (wins) score += own;
    }
    cs.scores[v] = score;
  }

  const auto take = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(cells.size())));
  std::vector<std::uint32_t> order(cells.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return cs.scores[a] > cs.scores[b]; });
  cs.members.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(take, order.size())));
  std::sort(cs.members.begin(), cs.members.end());
  return cs;
}

CriticalSet critical_set_whitebox(const ForwardTrace& trace, const ModelInput& input, const SalienceOptions& options) {
  if (const auto* grid = std::get_if<VoxelGrid>(&input)) {
    return critical_set_whitebox(trace, *grid, options.volumetric_fraction);
  }
  return critical_set_whitebox(trace);
}

CriticalSet critical_set_blackbox(std::size_t elements, std::span<const float> baseline_logits,
                                  const std::function<std::vector<float>(std::uint32_t removed)>& logits_without,
                                  double tau) {
  if (elements == 0) throw std::invalid_argument("black-box critical set of an empty input");
  CriticalSet cs;
  cs.scores.assign(elements, 0.0);
  if (elements == 1) {
    cs.members.push_back(0);
    return cs;
  }
  for (std::uint32_t i = 0; i < elements; ++i) {
    const std::vector<float> logits = logits_without(i);
    if (logits.size() != baseline_logits.size()) throw ShapeError("logit vectors differ in length");
    double change = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c) {
      change = std::max(change, std::abs(static_cast<double>(logits[c]) - static_cast<double>(baseline_logits[c])));
    }
    cs.scores[i] = change;
    if (change > tau) cs.members.push_back(i);
  }
  return cs;
}

CriticalSet critical_set_blackbox(QueryOracle& oracle, const Survivors& survivors,
                                  std::span<const float> baseline_logits, double tau) {
  const auto kept = survivors.indices();
  return critical_set_blackbox(
      kept.size(), baseline_logits,
      [&](std::uint32_t position) { return oracle.observe(survivors.without(kept[position])).logits; }, tau);
}

bool latent_equal(std::span<const float> a, std::span<const float> b, double tau) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])) > tau) return false;
  }
  return true;
}

std::vector<std::uint32_t> saliency_order(const CriticalSet& critical) {
  std::vector<std::uint32_t> order = critical.members;
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return critical.scores.at(a) > critical.scores.at(b);
  });
  return order;
}

namespace {

std::uint64_t hash_ordering(std::span<const std::uint32_t> ordering) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint32_t v : ordering) h = mix_seed(h, v);
  return h;
}

constexpr std::size_t kHistoryLimit = 4096;
constexpr int kShuffleAttempts = 64;

}  // namespace

RankStep rank(const CriticalSet& critical, const RankState& state) {
  if (critical.empty()) throw std::invalid_argument("cannot rank an empty critical set");
  const std::vector<std::uint32_t> base = saliency_order(critical);
  RankStep step;
  step.next = state;

  if (state.permutation_index == 0) {
    step.ordering = base;
  } else if (base.size() <= kExhaustiveRankLimit) {
    // Permutation of positions in `base`, recovered from the last ordering.
    std::vector<std::size_t> perm;
    perm.reserve(base.size());
    for (std::uint32_t e : state.ordering) {
      const auto it = std::find(base.begin(), base.end(), e);
      if (it == base.end()) throw std::invalid_argument("rank state does not belong to this critical set");
      perm.push_back(static_cast<std::size_t>(it - base.begin()));
    }
    if (perm.size() != base.size()) throw std::invalid_argument("rank state does not belong to this critical set");
    if (!std::next_permutation(perm.begin(), perm.end())) return step;  // wrapped: all n! emitted
    std::vector<std::uint32_t> ordering;
    ordering.reserve(base.size());
    for (std::size_t p : perm) ordering.push_back(base[p]);
    step.ordering = std::move(ordering);
  } else {
    if (state.history.size() >= kHistoryLimit) return step;
    for (int attempt = 0; attempt < kShuffleAttempts; ++attempt) {
      std::vector<std::uint32_t> ordering = base;
      Rng rng(mix_seed(mix_seed(state.seed, state.permutation_index), static_cast<std::uint64_t>(attempt)));
      for (std::size_t i = ordering.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(ordering[i - 1], ordering[pick(rng)]);
      }
      const std::uint64_t h = hash_ordering(ordering);
      if (ordering == base || std::find(state.history.begin(), state.history.end(), h) != state.history.end()) {
        continue;
      }
      step.next.history.push_back(h);
      step.ordering = std::move(ordering);
      break;
    }
    if (!step.ordering) return step;
  }
  step.next.ordering = *step.ordering;
  step.next.permutation_index = state.permutation_index + 1;
  return step;
}

void write_salience_csv(std::ostream& out, const OcclusionInput& input, const CriticalSet& critical) {
  if (critical.scores.size() != input.size()) throw ShapeError("critical set does not cover the input");
  out << "index,x,y,z,saliency,is_member\n";
  out << std::setprecision(9);
  for (std::uint32_t i = 0; i < input.size(); ++i) {
    const Vec3 p = input.position(i);
    out << i << ',' << p.x << ',' << p.y << ',' << p.z << ',' << critical.scores[i] << ','
        << (critical.contains(i) ? 1 : 0) << '\n';
  }
}

}  // namespace iso3d
