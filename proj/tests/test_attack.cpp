#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "iso3d/attack.hpp"
#include "iso3d/error.hpp"
#include "iso3d/shapes.hpp"
#include "support.hpp"

using namespace iso3d;

namespace {

// Class 0 strengthens whenever a point is removed, so no occlusion ever
// misclassifies and the confidence gate rejects every removal.
Network stubborn_network() {
  ModelSpec spec;
  spec.family = Family::point_set;
  spec.class_names = test::class_list(2);
  spec.point_widths = {2};
  spec.fc_widths = {2};
  Weights w({{"point.0.weight", test::make_tensor({2, 3}, {1, 0, 0, 0, 1, 0})},
             {"point.0.bias", test::make_tensor({2}, {0, 0})},
             {"fc.0.weight", test::make_tensor({2, 2}, {-1, -1, 0, 0})},
             {"fc.0.bias", test::make_tensor({2}, {0, -1})}});
  return Network(spec, w);
}

const PointCloud kStubbornCloud({{0.4f, 0.1f, 0.5f}, {0.1f, 0.4f, 0.5f}, {0.2f, 0.2f, 0.5f}, {0.3f, 0.3f, 0.1f}});

// Replays an attack log against fresh forward passes.
void replay(const Network& net, const OcclusionInput& input, const AttackResult& r) {
  Survivors x = input.all();
  const Prediction base = predict(net, input.materialize(x));
  auto confidence = [&](const Survivors& s) { return net.forward(input.materialize(s)).probs[base.label]; };
  for (const AttackEvent& e : r.log) {
    const float before = confidence(x);
    CHECK(e.confidence_before == before);
    switch (e.action) {
      case AttackEvent::Action::remove:
        REQUIRE(e.element);
        REQUIRE(x.contains(*e.element));
        x.remove(*e.element);
        CHECK(e.confidence_after <= e.confidence_before);
        break;
      case AttackEvent::Action::restore:
        REQUIRE(e.element);
        REQUIRE_FALSE(x.contains(*e.element));
        x.restore(*e.element);
        CHECK(predict(net, input.materialize(x)).label != base.label);
        break;
      case AttackEvent::Action::restart:
        x = input.all();
        break;
    }
    CHECK(e.confidence_after == confidence(x));
    CHECK(e.predicted == predict(net, input.materialize(x)).label);
    CHECK(x.count() >= 1);
  }
  CHECK(x == r.survivor);
  CHECK(r.occlusion_size == input.size() - r.survivor.count());
  CHECK(r.removed.size() == r.occlusion_size);
  for (std::uint32_t e : r.removed) CHECK_FALSE(r.survivor.contains(e));
  if (r.goal_met) CHECK(predict(net, input.materialize(r.survivor)).label != base.label);
}

}  // namespace

TEST_CASE("an input that already meets the goal is left intact") {
  const Network net = test::threshold_network();
  const OcclusionInput input = OcclusionInput::from_cloud(PointCloud({{0.9f, 0, 0}, {0.1f, 0, 0}}));
  const AttackResult r = iso(net, input, Goal::targeted(1));
  CHECK(r.goal_met);
  CHECK(r.occlusion_size == 0);
  CHECK(r.queries == 1);
}

TEST_CASE("removing the one deciding point flips the class") {
  const Network net = test::threshold_network();
  const OcclusionInput input =
      OcclusionInput::from_cloud(PointCloud({{0.2f, 0.1f, 0.1f}, {0.9f, 0.5f, 0.5f}, {0.3f, 0.7f, 0.2f}}));
  for (AttackMode mode : {AttackMode::white_box, AttackMode::black_box}) {
    IsoOptions o;
    o.mode = mode;
    const AttackResult r = iso(net, input, Goal::untargeted(), o);
    CHECK(r.goal_met);
    CHECK(r.occlusion_size == 1);
    CHECK(r.removed == std::vector<std::uint32_t>{1});
    CHECK(r.before.label == 1);
    CHECK(r.after.label == 0);
    replay(net, input, r);
  }
}

TEST_CASE("two deciding points need two removals") {
  const Network net = test::threshold_network();
  const OcclusionInput input = OcclusionInput::from_cloud(PointCloud(
      {{0.1f, 0, 0}, {0.9f, 0, 0}, {0.2f, 1, 0}, {0.8f, 1, 1}, {0.3f, 0, 1}, {0.25f, 0.5f, 0.5f}}));
  const BruteForceResult b = brute_force_min_occlusion(net, input);
  REQUIRE(b.minimum);
  CHECK(*b.minimum == 2);
  CHECK(b.witness == std::vector<std::uint32_t>{1, 3});
  const AttackResult r = iso(net, input, Goal::untargeted());
  CHECK(r.goal_met);
  CHECK(r.occlusion_size == 2);
  replay(net, input, r);
}

TEST_CASE("a brute-force witness really misclassifies") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Network net = test::toy_point_network(seed, 2, 6);
    const OcclusionInput input = OcclusionInput::from_cloud(test::random_cloud(7, seed + 50));
    const BruteForceResult b = brute_force_min_occlusion(net, input);
    if (!b.minimum) continue;
    Survivors s = input.all();
    for (std::uint32_t e : b.witness) s.remove(e);
    CHECK(b.witness.size() == *b.minimum);
    CHECK(predict(net, input.materialize(s)).label != predict(net, input.materialize(input.all())).label);
  }
}

TEST_CASE("brute force reports when no occlusion works") {
  const Network net = stubborn_network();
  const BruteForceResult b = brute_force_min_occlusion(net, OcclusionInput::from_cloud(kStubbornCloud));
  CHECK_FALSE(b.minimum);
  CHECK(b.queries == 15);  // every non-empty subset
}

TEST_CASE("brute force refuses large inputs") {
  const Network net = test::toy_point_network(1);
  CHECK_THROWS_AS(brute_force_min_occlusion(net, OcclusionInput::from_cloud(test::random_cloud(21, 1))),
                  std::invalid_argument);
}

TEST_CASE("random occlusion on a constant model removes all but one") {
  const Network net = test::threshold_network(0.5f, 0.0f);
  const OcclusionInput input = OcclusionInput::from_cloud(test::random_cloud(20, 4));
  const AttackResult r = random_occlusion(net, input, Goal::untargeted(), 3);
  CHECK_FALSE(r.goal_met);
  CHECK(r.occlusion_size == 19);
  CHECK(r.queries == 20);
  const AttackResult again = random_occlusion(net, input, Goal::untargeted(), 3);
  CHECK(again.removed == r.removed);
  CHECK(random_occlusion(net, input, Goal::untargeted(), 4).removed != r.removed);
}

TEST_CASE("random occlusion stops at the first misclassification") {
  const Network net = test::threshold_network();
  const PointCloud base = test::random_cloud(30, 8);
  std::vector<Vec3> pts(base.points().begin(), base.points().end());
  for (Vec3& p : pts) p.x *= 0.4f;
  pts[0].x = 0.9f;
  const OcclusionInput input = OcclusionInput::from_cloud(PointCloud(pts));
  const AttackResult r = random_occlusion(net, input, Goal::untargeted(), 1);
  REQUIRE(r.goal_met);
  CHECK(r.removed.back() == 0);
  Survivors s = input.all();
  for (std::size_t i = 0; i + 1 < r.removed.size(); ++i) {
    s.remove(r.removed[i]);
    CHECK(predict(net, input.materialize(s)).label == r.before.label);
  }
}

TEST_CASE("the gate rejects every removal on a stubborn model") {
  const Network net = stubborn_network();
  const OcclusionInput input = OcclusionInput::from_cloud(kStubbornCloud);
  Goal g = Goal::untargeted();
  g.time_limit.reset();
  const AttackResult r = iso(net, input, g);
  CHECK_FALSE(r.goal_met);
  CHECK(r.occlusion_size == 0);
  CHECK(r.restarts == 1);  // both orderings of the two-element critical set

  const VerifyResult v = exhaustive_verify(net, input, Goal::untargeted());
  CHECK_FALSE(v.attack.goal_met);
  CHECK(v.certificate.exhausted);
  CHECK(v.certificate.states == 1);
  CHECK(v.certificate.max_cardinality == 2);
  CHECK(v.certificate.permutations_checked == 2);  // 2!
}

TEST_CASE("exhaustive verification refuses large critical sets") {
  const Network net = test::toy_point_network(2, 2, 32);
  const OcclusionInput input = OcclusionInput::from_cloud(test::random_cloud(40, 3));
  try {
    exhaustive_verify(net, input, Goal::untargeted());
    FAIL("expected a refusal");
  } catch (const VerificationRefused& e) {
    CHECK(e.cardinality() > kExhaustiveRankLimit);
    CHECK(std::string(e.what()).find(std::to_string(e.cardinality())) != std::string::npos);
  }
}

TEST_CASE("exhaustive verification never does worse than one ISO run") {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    const Network net = test::toy_point_network(seed + 200, 2, 6);
    const OcclusionInput input = OcclusionInput::from_cloud(test::random_cloud(8, seed));
    const VerifyResult v = exhaustive_verify(net, input, Goal::untargeted());
    Goal g = Goal::untargeted();
    g.time_limit.reset();
    const AttackResult r = iso(net, input, g);
    if (r.goal_met) {
      REQUIRE(v.attack.goal_met);
      CHECK(v.attack.occlusion_size <= r.occlusion_size);
    }
    CHECK(v.certificate.max_cardinality <= 6);
  }
}

TEST_CASE("attack logs replay on trained-like models") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Network net = test::toy_point_network(seed + 40, 3, 16);
    const OcclusionInput input = OcclusionInput::from_cloud(test::random_cloud(40, seed));
    Goal g = Goal::untargeted();
    g.time_limit.reset();
    g.query_limit = 4000;
    const AttackResult r = iso(net, input, g);
    replay(net, input, r);
  }
}

TEST_CASE("white-box and black-box remove identically under element order") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Network net = test::toy_point_network(seed + 70, 3, 16);
    REQUIRE(fcn_weights_nonzero(net));
    const OcclusionInput input = OcclusionInput::from_cloud(test::random_cloud(40, seed));
    IsoOptions white, black;
    white.ranking = black.ranking = Ranking::element_order;
    black.mode = AttackMode::black_box;
    Goal g = Goal::untargeted();
    g.time_limit.reset();
    const AttackResult a = iso(net, input, g, white);
    const AttackResult b = iso(net, input, g, black);
    CHECK(a.removed == b.removed);
    CHECK(a.survivor == b.survivor);
    CHECK(a.goal_met == b.goal_met);
    CHECK(b.queries > a.queries);
  }
}

TEST_CASE("volumetric inputs run through the same attack") {
  const Network net = test::toy_volume_network(12);
  const OcclusionInput input = OcclusionInput::from_grid(test::random_grid(8, 0.08, 2));
  Goal g = Goal::untargeted();
  g.query_limit = 500;
  const AttackResult r = iso(net, input, g);
  CHECK(r.element_count == input.size());
  if (r.goal_met) {
    CHECK(predict(net, input.materialize(r.survivor)).label != r.before.label);
  }
  CHECK(r.survivor.count() >= 1);
}

TEST_CASE("targeted and confidence goals") {
  const Network net = test::toy_point_network(5, 3, 12);
  const OcclusionInput input = OcclusionInput::from_cloud(test::random_cloud(40, 6));
  const Prediction base = predict(net, input.materialize(input.all()));
  const Goal drop = Goal::confidence_drop(0.05);
  const AttackResult r = iso(net, input, drop);
  if (r.goal_met) {
    const ForwardTrace t = net.forward(input.materialize(r.survivor));
    CHECK(base.confidence - t.probs[base.label] > 0.05f);
  }
  const std::size_t other = (base.label + 1) % 3;
  const AttackResult t = iso(net, input, Goal::targeted(other));
  if (t.goal_met) CHECK(predict(net, input.materialize(t.survivor)).label == other);
}

TEST_CASE("goal validation") {
  CHECK_THROWS_AS(Goal::targeted(5).validate(3), std::invalid_argument);
  CHECK_THROWS_AS(Goal::confidence_drop(1.5).validate(3), std::invalid_argument);
  Goal g;
  g.exhaustive = true;
  CHECK_THROWS_AS(g.validate(3), std::invalid_argument);
  g.time_limit.reset();
  CHECK_NOTHROW(g.validate(3));
  g.query_limit = 0;
  CHECK_THROWS_AS(g.validate(3), std::invalid_argument);
}

TEST_CASE("family mismatch is an error") {
  const Network net = test::toy_volume_network(1);
  CHECK_THROWS_AS(iso(net, OcclusionInput::from_cloud(test::random_cloud(5, 1)), Goal::untargeted()), ShapeError);
}

TEST_CASE("budgets stop the attack early") {
  const Network net = test::toy_volume_network(3, 16);
  const OcclusionInput input = OcclusionInput::from_grid(voxelize(synth_shape(ShapeKind::torus, 512, 0.0, 1).cloud, 16));
  Goal g = Goal::untargeted();
  g.time_limit = 0.002;
  const AttackResult r = iso(net, input, g);
  if (!r.goal_met) CHECK(r.budget_expired);
  CHECK(r.elapsed <= 0.002 + r.max_salience_seconds + r.max_query_seconds + 0.005);

  Goal q = Goal::untargeted();
  q.query_limit = 5;
  const AttackResult rq = iso(net, input, q);
  CHECK(rq.queries <= 5);
}

TEST_CASE("attack log round trips") {
  const Network net = test::toy_point_network(41, 3, 16);
  const OcclusionInput input = OcclusionInput::from_cloud(test::random_cloud(30, 2));
  const AttackResult r = iso(net, input, Goal::untargeted());
  std::stringstream s;
  write_attack_log(s, r.log);
  const auto back = read_attack_log(s);
  REQUIRE(back.size() == r.log.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].step == r.log[i].step);
    CHECK(back[i].action == r.log[i].action);
    CHECK(back[i].element == r.log[i].element);
    CHECK(back[i].confidence_before == r.log[i].confidence_before);
    CHECK(back[i].confidence_after == r.log[i].confidence_after);
    CHECK(back[i].predicted == r.log[i].predicted);
  }
  std::stringstream bad("step,action,element_index,confidence_before,confidence_after,predicted_class\n0,jump,1,0,0,0\n");
  CHECK_THROWS_AS(read_attack_log(bad), ParseError);
}
