#include "iso3d/attack.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include "iso3d/error.hpp"
#include "iso3d/rng.hpp"

namespace iso3d {

Goal Goal::untargeted() { return Goal{}; }

Goal Goal::targeted(std::size_t target) {
  Goal g;
  g.kind = Kind::targeted;
  g.target = target;
  return g;
}

Goal Goal::confidence_drop(double drop) {
  Goal g;
  g.kind = Kind::confidence_drop;
  g.drop = drop;
  return g;
}

Goal Goal::unbounded() const {
  Goal g = *this;
  g.time_limit.reset();
  g.query_limit.reset();
  g.exhaustive = true;
  return g;
}

void Goal::validate(std::size_t classes) const {
  if (kind == Kind::targeted && target >= classes) {
    throw std::invalid_argument("target class " + std::to_string(target) + " out of range");
  }
  if (kind == Kind::confidence_drop && !(drop >= 0.0 && drop < 1.0)) {
    throw std::invalid_argument("confidence drop must lie in [0,1)");
  }
  if (time_limit && !(*time_limit > 0.0 && std::isfinite(*time_limit))) {
    throw std::invalid_argument("time limit must be positive");
  }
  if (query_limit && *query_limit == 0) throw std::invalid_argument("query limit must be positive");
  if (exhaustive && time_limit) throw std::invalid_argument("exhaustive mode takes no wall-clock limit");
}

bool Goal::satisfied(const Observation& now, const Prediction& original) const {
  switch (kind) {
    case Kind::untargeted:
      return now.prediction.label != original.label;
    case Kind::targeted:
      return now.prediction.label == target;
    case Kind::confidence_drop:
      return static_cast<double>(original.confidence) - static_cast<double>(now.probs.at(original.label)) > drop;
  }
  return false;
}

namespace {

using Clock = std::chrono::steady_clock;
using Action = AttackEvent::Action;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

// State shared by every attack on one input: the counting oracle, budgets,
// the event log, and the descent/restoration pass.
class Session {
 public:
  Session(const Network& net, const OcclusionInput& input, const Goal& goal, const IsoOptions& options)
      : input_(input), goal_(goal), options_(options), oracle_(net, input), start_(Clock::now()) {
    if (input.size() == 0) throw std::invalid_argument("cannot attack an empty input");
    goal.validate(net.spec().class_names.size());
    if (goal.time_limit) deadline_ = start_ + std::chrono::duration_cast<Clock::duration>(
                                                  std::chrono::duration<double>(*goal.time_limit));
    base_ = oracle_.observe(input.all());
  }

  const Observation& base() const { return base_; }
  std::size_t elements() const { return input_.size(); }
  bool holds(const Observation& o) const { return goal_.satisfied(o, base_.prediction); }
  float confidence(const Observation& o) const { return o.probs[base_.prediction.label]; }

  // False once the wall clock or query budget cannot cover `needed` more queries.
  bool allow(std::uint64_t needed) {
    if (expired_) return false;
    if (deadline_ && Clock::now() >= *deadline_) expired_ = true;
    if (goal_.query_limit && oracle_.queries() + needed > *goal_.query_limit) expired_ = true;
    return !expired_;
  }
  bool expired() const { return expired_; }

  std::uint64_t critical_set_cost(const Survivors& x) const {
    if (options_.mode == AttackMode::white_box) return 1;
    return x.count() > 1 ? x.count() : 0;
  }

  // Critical set of the survivors with members and scores keyed by element.
  CriticalSet critical(const Survivors& x, const Observation& at_x) {
    const auto t0 = Clock::now();
    const auto kept = x.indices();
    CriticalSet local;
    if (options_.mode == AttackMode::white_box) {
      const ForwardTrace trace = oracle_.trace(x);
      if (input_.family() == Family::volumetric) {
        local = critical_set_whitebox(trace, std::get<VoxelGrid>(input_.materialize(x)),
                                      options_.salience.volumetric_fraction);
      } else {
        local = critical_set_whitebox(trace);
      }
    } else {
      local = critical_set_blackbox(oracle_, x, at_x.logits, options_.salience.blackbox_tau);
    }
    CriticalSet keyed;
    keyed.scores.assign(elements(), 0.0);
    for (std::size_t p = 0; p < kept.size(); ++p) keyed.scores[kept[p]] = local.scores[p];
    if (options_.ranking == Ranking::element_order) std::fill(keyed.scores.begin(), keyed.scores.end(), 0.0);
    for (std::uint32_t m : local.members) keyed.members.push_back(kept[m]);
    max_salience_seconds_ = std::max(max_salience_seconds_, seconds_since(t0));
    return keyed;
  }

  void record(Action action, std::optional<std::uint32_t> element, const Observation& before,
              const Observation& after) {
    log_.push_back({log_.size(), action, element, confidence(before), confidence(after), after.prediction.label});
  }

  // One descent over `ordering` then, if the goal holds, restoration over
  // every removed element in removal order. Returns whether anything was
  // removed during the descent.
  bool pass(Survivors& x, Observation& obs, const std::vector<std::uint32_t>& ordering,
            std::vector<std::uint32_t>& removed) {
    bool progress = false;
    for (std::uint32_t e : ordering) {
      if (holds(obs) || x.count() <= 1) break;
      if (!allow(1)) return progress;
      Survivors candidate = x.without(e);
      Observation o = oracle_.observe(candidate);
      if (confidence(o) <= confidence(obs)) {
        record(Action::remove, e, obs, o);
        x = std::move(candidate);
        obs = std::move(o);
        removed.push_back(e);
        progress = true;
      }
    }
    if (!holds(obs)) return progress;
    const std::vector<std::uint32_t> order = removed;
    for (std::uint32_t e : order) {
      if (!allow(1)) return progress;
      Survivors candidate = x.with(e);
      Observation o = oracle_.observe(candidate);
      if (holds(o)) {
        record(Action::restore, e, obs, o);
        x = std::move(candidate);
        obs = std::move(o);
        removed.erase(std::find(removed.begin(), removed.end(), e));
      }
    }
    return progress;
  }

  void restart(const Observation& from) {
    record(Action::restart, std::nullopt, from, base_);
    ++restarts_;
  }

  AttackResult finish(Survivors x, const Observation& obs, std::vector<std::uint32_t> removed) {
    AttackResult r;
    r.element_count = elements();
    r.occlusion_size = elements() - x.count();
    r.survivor = std::move(x);
    r.removed = std::move(removed);
    r.queries = oracle_.queries();
    r.elapsed = seconds_since(start_);
    r.goal_met = holds(obs);
    r.budget_expired = expired_;
    r.before = base_.prediction;
    r.after = obs.prediction;
    r.log = std::move(log_);
    r.restarts = restarts_;
    r.max_salience_seconds = max_salience_seconds_;
    r.max_query_seconds = oracle_.max_query_seconds();
    return r;
  }

  QueryOracle& oracle() { return oracle_; }

 private:
  const OcclusionInput& input_;
  Goal goal_;
  IsoOptions options_;
  QueryOracle oracle_;
  Clock::time_point start_;
  std::optional<Clock::time_point> deadline_;
  bool expired_ = false;
  Observation base_;
  std::vector<AttackEvent> log_;
  std::size_t restarts_ = 0;
  double max_salience_seconds_ = 0.0;
};

}  // namespace

AttackResult iso(const Network& net, const OcclusionInput& input, const Goal& goal, const IsoOptions& options) {
  if (goal.exhaustive) return exhaustive_verify(net, input, goal, options).attack;
  Session s(net, input, goal, options);
  Survivors x = input.all();
  Observation obs = s.base();
  std::vector<std::uint32_t> removed;
  if (s.holds(obs)) return s.finish(std::move(x), obs, std::move(removed));

  RankState root_state;
  root_state.seed = options.seed;
  std::optional<CriticalSet> root_critical;
  bool restarted = false;
  auto back_to_root = [&] {
    s.restart(obs);
    restarted = true;
    x = input.all();
    obs = s.base();
    removed.clear();
  };
  while (true) {
    const bool at_root = x.count() == input.size();
    if (!(at_root && root_critical) && !s.allow(s.critical_set_cost(x))) break;
    CriticalSet cs = at_root && root_critical ? *root_critical : s.critical(x, obs);
    if (at_root) root_critical = cs;
    if (cs.empty()) {
      if (at_root) break;
      back_to_root();
      continue;
    }
    std::vector<std::uint32_t> ordering;
    if (at_root) {
      RankStep step = rank(cs, root_state);
      if (step.exhausted()) break;
      // A stalled root pass retries in place; still a restart.
      if (root_state.permutation_index > 0 && !restarted) s.restart(obs);
      restarted = false;
      root_state = std::move(step.next);
      ordering = std::move(*step.ordering);
    } else {
      ordering = saliency_order(cs);
    }
    const bool progress = s.pass(x, obs, ordering, removed);
    if (s.expired() || s.holds(obs)) break;
    if (!progress && !at_root) back_to_root();
  }
  return s.finish(std::move(x), obs, std::move(removed));
}

AttackResult random_occlusion(const Network& net, const OcclusionInput& input, const Goal& goal,
                              std::uint64_t seed) {
  Session s(net, input, goal, IsoOptions{});
  Survivors x = input.all();
  Observation obs = s.base();
  std::vector<std::uint32_t> order(input.size());
  std::iota(order.begin(), order.end(), 0u);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::uint32_t> removed;
  for (std::uint32_t e : order) {
    if (s.holds(obs) || x.count() <= 1 || !s.allow(1)) break;
    x.remove(e);
    Observation o = s.oracle().observe(x);
    s.record(Action::remove, e, obs, o);
    obs = std::move(o);
    removed.push_back(e);
  }
  return s.finish(std::move(x), obs, std::move(removed));
}

BruteForceResult brute_force_min_occlusion(const Network& net, const OcclusionInput& input, const Goal& goal) {
  const std::size_t n = input.size();
  if (n > kBruteForceLimit) {
    throw std::invalid_argument("brute force is limited to " + std::to_string(kBruteForceLimit) + " elements (got " +
                                std::to_string(n) + "); use iso instead");
  }
  Goal unbounded = goal.unbounded();
  unbounded.exhaustive = false;
  Session s(net, input, unbounded, IsoOptions{});
  BruteForceResult result;
  if (s.holds(s.base())) {
    result.minimum = 0;
    result.queries = s.oracle().queries();
    return result;
  }
  for (std::size_t r = 1; r < n; ++r) {
    std::vector<std::uint32_t> pick(r);
    std::iota(pick.begin(), pick.end(), 0u);
    while (true) {
      Survivors x = input.all();
      for (std::uint32_t e : pick) x.remove(e);
      if (s.holds(s.oracle().observe(x))) {
        result.minimum = r;
        result.witness = pick;
        result.queries = s.oracle().queries();
        return result;
      }
      // Next r-combination of {0..n-1} in lexicographic order.
      std::size_t i = r;
      while (i > 0 && pick[i - 1] == n - r + i - 1) --i;
      if (i == 0) break;
      ++pick[i - 1];
      for (std::size_t j = i; j < r; ++j) pick[j] = pick[j - 1] + 1;
    }
  }
  result.queries = s.oracle().queries();
  return result;
}

VerifyResult exhaustive_verify(const Network& net, const OcclusionInput& input, const Goal& goal,
                               const IsoOptions& options) {
  Goal unbounded = goal.unbounded();
  Session s(net, input, unbounded, options);
  VerifyResult out;
  Certificate& cert = out.certificate;

  struct Best {
    Survivors x;
    Observation obs;
    std::vector<std::uint32_t> removed;
  };
  std::optional<Best> best;
  if (s.holds(s.base())) {
    cert.exhausted = true;
    out.attack = s.finish(input.all(), s.base(), {});
    return out;
  }

  std::set<std::vector<std::uint8_t>> visited;
  std::function<void(const Survivors&, const Observation&, const std::vector<std::uint32_t>&)> explore =
      [&](const Survivors& x, const Observation& obs, const std::vector<std::uint32_t>& removed) {
        if (!visited.emplace(x.mask().begin(), x.mask().end()).second) return;
        const CriticalSet cs = s.critical(x, obs);
        ++cert.states;
        if (cs.size() > kExhaustiveRankLimit) {
          throw VerificationRefused(cs.size(), "critical set of " + std::to_string(cs.size()) +
                                                   " elements exceeds the exhaustive limit of " +
                                                   std::to_string(kExhaustiveRankLimit));
        }
        cert.max_cardinality = std::max(cert.max_cardinality, cs.size());
        if (cs.empty()) return;
        RankState state;
        state.seed = options.seed;
        while (true) {
          RankStep step = rank(cs, state);
          if (step.exhausted()) break;
          state = std::move(step.next);
          ++cert.permutations_checked;
          Survivors x2 = x;
          Observation obs2 = obs;
          std::vector<std::uint32_t> removed2 = removed;
          const bool progress = s.pass(x2, obs2, *step.ordering, removed2);
          if (s.holds(obs2)) {
            if (!best || x2.count() > best->x.count()) best = Best{x2, obs2, removed2};
          } else if (progress) {
            explore(x2, obs2, removed2);
          }
        }
      };
  explore(input.all(), s.base(), {});
  cert.exhausted = true;
  if (best) {
    out.attack = s.finish(std::move(best->x), best->obs, std::move(best->removed));
  } else {
    out.attack = s.finish(input.all(), s.base(), {});
  }
  return out;
}

const char* action_name(AttackEvent::Action action) {
  switch (action) {
    case Action::remove:
      return "remove";
    case Action::restore:
      return "restore";
    case Action::restart:
      return "restart";
  }
  return "?";
}

void write_attack_log(std::ostream& out, const std::vector<AttackEvent>& log) {
  out << "step,action,element_index,confidence_before,confidence_after,predicted_class\n";
  out << std::setprecision(9);
  for (const AttackEvent& e : log) {
    out << e.step << ',' << action_name(e.action) << ',';
    if (e.element) out << *e.element;
    out << ',' << e.confidence_before << ',' << e.confidence_after << ',' << e.predicted << '\n';
  }
}

std::vector<AttackEvent> read_attack_log(std::istream& in) {
  std::vector<AttackEvent> log;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) {
      if (line.rfind("step,action", 0) != 0) throw ParseError(lineno, "missing attack log header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (line.back() == ',') fields.emplace_back();
    if (fields.size() != 6) throw ParseError(lineno, "expected 6 fields");
    try {
      AttackEvent e;
      e.step = std::stoull(fields[0]);
      if (fields[1] == "remove") {
        e.action = Action::remove;
      } else if (fields[1] == "restore") {
        e.action = Action::restore;
      } else if (fields[1] == "restart") {
        e.action = Action::restart;
      } else {
        throw ParseError(lineno, "unknown action '" + fields[1] + "'");
      }
      if (!fields[2].empty()) e.element = static_cast<std::uint32_t>(std::stoul(fields[2]));
      e.confidence_before = std::stof(fields[3]);
      e.confidence_after = std::stof(fields[4]);
      e.predicted = std::stoull(fields[5]);
      log.push_back(e);
    } catch (const std::logic_error&) {
      throw ParseError(lineno, "malformed attack log record");
    }
  }
  return log;
}

}  // namespace iso3d
