#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "iso3d/salience.hpp"
#include "support.hpp"

using namespace iso3d;

namespace {

CriticalSet with_scores(std::vector<std::uint32_t> members, std::vector<double> scores) {
  CriticalSet cs;
  cs.members = std::move(members);
  cs.scores = std::move(scores);
  return cs;
}

std::vector<std::vector<std::uint32_t>> all_rankings(const CriticalSet& cs, std::uint64_t seed) {
  std::vector<std::vector<std::uint32_t>> out;
  RankState state;
  state.seed = seed;
  for (int guard = 0; guard < 100000; ++guard) {
    RankStep step = rank(cs, state);
    if (step.exhausted()) break;
    out.push_back(*step.ordering);
    state = step.next;
  }
  return out;
}

}  // namespace

TEST_CASE("a single point owns every latent dimension") {
  const Network net = test::toy_point_network(3, 2, 6);
  const CriticalSet cs = critical_set_whitebox(net.forward(PointCloud({{0.3f, 0.6f, 0.9f}})));
  REQUIRE(cs.members == std::vector<std::uint32_t>{0});
  CHECK(cs.saliency(0) == 6.0);
}

TEST_CASE("points tying for a maximum are not critical") {
  // Latent is relu(x): both points reach 0.7.
  const Network net = test::threshold_network();
  const PointCloud c({{0.7f, 0.1f, 0.1f}, {0.7f, 0.9f, 0.9f}, {0.2f, 0.5f, 0.5f}});
  const ForwardTrace t = net.forward(c);
  CHECK(critical_set_whitebox(t).empty());
  for (std::uint32_t i = 0; i < c.size(); ++i) {
    const std::vector<std::uint32_t> keep = [&] {
      std::vector<std::uint32_t> k;
      for (std::uint32_t j = 0; j < c.size(); ++j) {
        if (j != i) k.push_back(j);
      }
      return k;
    }();
    CHECK(latent_equal(net.forward(c.subset(keep)).pooled_latent, t.pooled_latent));
  }
}

TEST_CASE("critical membership is exactly a change in the pooled latent") {
  const Network net = test::toy_point_network(17, 3, 12);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const PointCloud c = test::random_cloud(25, seed);
    const ForwardTrace t = net.forward(c);
    const CriticalSet cs = critical_set_whitebox(t);
    CHECK(cs.size() <= 12);
    for (std::uint32_t i = 0; i < c.size(); ++i) {
      std::vector<std::uint32_t> keep;
      for (std::uint32_t j = 0; j < c.size(); ++j) {
        if (j != i) keep.push_back(j);
      }
      const bool changed = !latent_equal(net.forward(c.subset(keep)).pooled_latent, t.pooled_latent);
      CHECK(changed == cs.contains(i));
      if (cs.contains(i)) {
        CHECK(cs.saliency(i) >= 1.0);
      } else {
        CHECK(cs.saliency(i) == 0.0);
      }
    }
  }
}

TEST_CASE("black-box recovery matches white-box with one query per point") {
  const Network net = test::toy_point_network(23, 3, 10);
  REQUIRE(fcn_weights_nonzero(net));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const OcclusionInput input = OcclusionInput::from_cloud(test::random_cloud(30, seed));
    QueryOracle oracle(net, input);
    const Survivors all = input.all();
    const CriticalSet white = critical_set_whitebox(oracle.trace(all));
    const std::vector<float> baseline = oracle.observe(all).logits;
    const std::uint64_t before = oracle.queries();
    const CriticalSet black = critical_set_blackbox(oracle, all, baseline);
    CHECK(oracle.queries() - before == input.size());
    CHECK(black.members == white.members);
  }
}

TEST_CASE("removing a non-critical point leaves the logits identical") {
  const Network net = test::toy_point_network(8, 2, 6);
  const PointCloud c = test::random_cloud(40, 2);
  const ForwardTrace t = net.forward(c);
  const CriticalSet cs = critical_set_whitebox(t);
  std::size_t checked = 0;
  for (std::uint32_t i = 0; i < c.size(); ++i) {
    if (cs.contains(i)) continue;
    std::vector<std::uint32_t> keep;
    for (std::uint32_t j = 0; j < c.size(); ++j) {
      if (j != i) keep.push_back(j);
    }
    CHECK(net.forward(c.subset(keep)).logits == t.logits);
    ++checked;
  }
  CHECK(checked > 0);
}

TEST_CASE("a one-element input is critical by definition") {
  int calls = 0;
  const std::vector<float> base{1.0f, 2.0f};
  const CriticalSet cs = critical_set_blackbox(1, base, [&](std::uint32_t) {
    ++calls;
    return base;
  });
  CHECK(cs.members == std::vector<std::uint32_t>{0});
  CHECK(calls == 0);
}

TEST_CASE("black-box scores are the largest logit change") {
  const std::vector<float> base{1.0f, 2.0f};
  const CriticalSet cs = critical_set_blackbox(
      3, base,
      [&](std::uint32_t i) {
        if (i == 1) return std::vector<float>{1.5f, 1.0f};
        return base;
      },
      0.0);
  CHECK(cs.members == std::vector<std::uint32_t>{1});
  CHECK(cs.saliency(1) == 1.0);
  CHECK(cs.saliency(0) == 0.0);
}

TEST_CASE("latent comparison tolerance") {
  const std::vector<float> a{1.0f, 2.0f};
  CHECK(latent_equal(a, a));
  const std::vector<float> b{1.0f, 2.0f + 1e-3f};
  CHECK(latent_equal(a, b, 2e-3));
  CHECK_FALSE(latent_equal(a, b, 1e-9));
  CHECK_FALSE(latent_equal(a, std::vector<float>{1.0f}));
  CHECK(latent_equal(std::vector<float>{0.0f}, std::vector<float>{0.5e-9f}, 1e-9));
}

TEST_CASE("first ranking is saliency-descending") {
  const CriticalSet cs = with_scores({0, 1, 2}, {3, 1, 2});
  const RankStep step = rank(cs, RankState{});
  REQUIRE(step.ordering);
  CHECK(*step.ordering == std::vector<std::uint32_t>{0, 2, 1});
  CHECK(saliency_order(with_scores({0, 1, 2}, {1, 1, 1})) == std::vector<std::uint32_t>{0, 1, 2});
}

TEST_CASE("small critical sets enumerate every permutation once") {
  for (std::uint32_t n = 1; n <= 6; ++n) {
    std::vector<std::uint32_t> members;
    std::vector<double> scores;
    for (std::uint32_t i = 0; i < n; ++i) {
      members.push_back(i);
      scores.push_back(static_cast<double>((i * 7) % n));
    }
    const auto orders = all_rankings(with_scores(members, scores), 1);
    std::size_t factorial = 1;
    for (std::size_t k = 2; k <= n; ++k) factorial *= k;
    CHECK(orders.size() == factorial);
    CHECK(std::set<std::vector<std::uint32_t>>(orders.begin(), orders.end()).size() == factorial);
    CHECK(orders.front() == saliency_order(with_scores(members, scores)));
  }
}

TEST_CASE("three members give six orderings then exhaustion") {
  CHECK(all_rankings(with_scores({0, 1, 2}, {3, 1, 2}), 0).size() == 6);
}

TEST_CASE("large critical sets replay the same seeded shuffles") {
  std::vector<std::uint32_t> members(12);
  std::vector<double> scores(12);
  for (std::uint32_t i = 0; i < 12; ++i) {
    members[i] = i;
    scores[i] = i;
  }
  const CriticalSet cs = with_scores(members, scores);
  RankState a, b;
  a.seed = b.seed = 99;
  std::set<std::vector<std::uint32_t>> seen;
  for (int k = 0; k < 50; ++k) {
    RankStep sa = rank(cs, a), sb = rank(cs, b);
    REQUIRE(sa.ordering);
    CHECK(*sa.ordering == *sb.ordering);
    CHECK(seen.insert(*sa.ordering).second);
    a = sa.next;
    b = sb.next;
  }
}

TEST_CASE("ranking an empty critical set is an error") {
  CHECK_THROWS_AS(rank(CriticalSet{}, RankState{}), std::invalid_argument);
}

TEST_CASE("voxel critical sets take the top quarter of occupied cells") {
  const Network net = test::toy_volume_network(5);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const VoxelGrid g = test::random_grid(8, 0.05 + 0.02 * static_cast<double>(seed), seed);
    const ForwardTrace t = net.forward(g);
    const CriticalSet cs = critical_set_whitebox(t, g);
    const std::size_t occupied = g.occupied_count();
    CHECK(cs.size() == static_cast<std::size_t>(std::ceil(0.25 * static_cast<double>(occupied))));
    CHECK(cs.scores.size() == occupied);
    for (std::uint32_t m : cs.members) CHECK(m < occupied);
    // Every member scores at least as high as every non-member.
    double lowest_member = 1e300, highest_other = -1;
    for (std::uint32_t v = 0; v < occupied; ++v) {
      if (cs.contains(v)) {
        lowest_member = std::min(lowest_member, cs.saliency(v));
      } else {
        highest_other = std::max(highest_other, cs.saliency(v));
      }
    }
    CHECK(lowest_member >= highest_other);
  }
}

TEST_CASE("voxel saliency sums the activations that survive the final pool") {
  const Network net = test::toy_volume_network(6);
  const VoxelGrid g = test::random_grid(8, 0.2, 3);
  const ForwardTrace t = net.forward(g);
  const CriticalSet cs = critical_set_whitebox(t, g, 0.5);
  const VolumeTrace& v = t.volume;
  const std::size_t e = v.extent, pe = e / v.pool;
  const auto cells = g.occupied_cells();
  for (std::uint32_t i = 0; i < cells.size(); ++i) {
    const CellIndex c = g.cell(cells[i]);
    const std::size_t z = c[0] / v.downsample, y = c[1] / v.downsample, x = c[2] / v.downsample;
    double expected = 0.0;
    for (std::size_t f = 0; f < v.filters; ++f) {
      const float a = v.activations[((f * e + z) * e + y) * e + x];
      const float pooled = t.pooled_latent[((f * pe + z / v.pool) * pe + y / v.pool) * pe + x / v.pool];
      if (a == pooled) expected += a;
    }
    CHECK(cs.saliency(i) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("salience export has one row per element") {
  const Network net = test::toy_point_network(3);
  const OcclusionInput input = OcclusionInput::from_cloud(test::random_cloud(5, 1));
  const CriticalSet cs = critical_set_whitebox(net.forward(input.cloud()));
  std::stringstream s;
  write_salience_csv(s, input, cs);
  std::string line;
  std::getline(s, line);
  CHECK(line == "index,x,y,z,saliency,is_member");
  int rows = 0, members = 0;
  while (std::getline(s, line)) {
    ++rows;
    members += line.back() == '1';
  }
  CHECK(rows == 5);
  CHECK(members == static_cast<int>(cs.size()));
}
