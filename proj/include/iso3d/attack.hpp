#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "iso3d/model.hpp"
#include "iso3d/occlusion.hpp"
#include "iso3d/salience.hpp"

namespace iso3d {

/// What the attack is trying to achieve, and when it must give up.
struct Goal {
  enum class Kind { untargeted, targeted, confidence_drop };

  Kind kind = Kind::untargeted;
  std::size_t target = 0;  ///< targeted: the class to reach
  double drop = 0.0;       ///< confidence_drop: required fall in the original class probability
  std::optional<double> time_limit = 2.0;  ///< seconds
  std::optional<std::uint64_t> query_limit;
  bool exhaustive = false;

  static Goal untargeted();
  static Goal targeted(std::size_t target);
  static Goal confidence_drop(double drop);
  /// Same predicate with every budget removed and exhaustive enumeration on.
  Goal unbounded() const;

  /// Throws std::invalid_argument on a malformed goal.
  void validate(std::size_t classes) const;
  /// `original` is the prediction on the unoccluded input.
  bool satisfied(const Observation& now, const Prediction& original) const;
};

enum class AttackMode { white_box, black_box };
/// How a critical set is ordered before descent. `element_order` ignores
/// saliency, which makes white-box and black-box runs remove identically.
enum class Ranking { saliency, element_order };

struct IsoOptions {
  AttackMode mode = AttackMode::white_box;
  Ranking ranking = Ranking::saliency;
  SalienceOptions salience;
  std::uint64_t seed = 0;
};

struct AttackEvent {
  enum class Action { remove, restore, restart };

  std::size_t step = 0;
  Action action = Action::remove;
  std::optional<std::uint32_t> element;
  float confidence_before = 0.0f;  ///< original-class probability
  float confidence_after = 0.0f;
  std::size_t predicted = 0;  ///< class after the event
};

struct AttackResult {
  Survivors survivor;
  std::vector<std::uint32_t> removed;  ///< in removal order
  std::size_t element_count = 0;
  std::size_t occlusion_size = 0;
  std::uint64_t queries = 0;
  double elapsed = 0.0;
  bool goal_met = false;
  bool budget_expired = false;
  Prediction before;
  Prediction after;
  std::vector<AttackEvent> log;
  std::size_t restarts = 0;
  double max_salience_seconds = 0.0;  ///< longest critical-set computation
  double max_query_seconds = 0.0;     ///< longest single forward pass

  double occlusion_fraction() const {
    return element_count == 0 ? 0.0 : static_cast<double>(occlusion_size) / static_cast<double>(element_count);
  }
};

/// Iterative salience occlusion. Each pass recomputes the critical set of
/// the current survivors, walks it in ranked order removing every element
/// whose removal does not raise the original class confidence, and stops as
/// soon as the goal holds; a successful pass then re-adds, in removal order,
/// each element the goal can spare. A pass that removes nothing restarts
/// from the full input with the next ranking of its critical set. A goal
/// with `exhaustive` set is delegated to exhaustive_verify.
AttackResult iso(const Network& net, const OcclusionInput& input, const Goal& goal, const IsoOptions& options = {});

/// Removes elements in a seeded uniform-random order until the goal holds or
/// one element remains. No restoration.
AttackResult random_occlusion(const Network& net, const OcclusionInput& input, const Goal& goal,
                              std::uint64_t seed);

inline constexpr std::size_t kBruteForceLimit = 20;

struct BruteForceResult {
  std::optional<std::size_t> minimum;  ///< empty when no occlusion meets the goal
  std::vector<std::uint32_t> witness;  ///< removed elements, ascending
  std::uint64_t queries = 0;
};

/// Smallest removal set meeting the goal (budgets ignored), by enumerating
/// subsets in order of increasing size. Never removes every element.
BruteForceResult brute_force_min_occlusion(const Network& net, const OcclusionInput& input,
                                           const Goal& goal = Goal::untargeted());

struct Certificate {
  std::uint64_t permutations_checked = 0;
  std::uint64_t states = 0;  ///< distinct survivor sets whose critical set was enumerated
  std::size_t max_cardinality = 0;
  bool exhausted = false;
};

struct VerifyResult {
  AttackResult attack;
  Certificate certificate;
};

/// Runs every ranking of every critical set reachable by the descent and
/// restoration passes, keeping the smallest occlusion that meets the goal.
/// Budgets are ignored. Throws VerificationRefused once a critical set
/// larger than kExhaustiveRankLimit is met.
VerifyResult exhaustive_verify(const Network& net, const OcclusionInput& input, const Goal& goal,
                               const IsoOptions& options = {});

const char* action_name(AttackEvent::Action action);

/// CSV `step,action,element_index,confidence_before,confidence_after,predicted_class`.
void write_attack_log(std::ostream& out, const std::vector<AttackEvent>& log);
std::vector<AttackEvent> read_attack_log(std::istream& in);

}  // namespace iso3d
