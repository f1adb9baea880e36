#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "iso3d/attack.hpp"
#include "iso3d/dataset.hpp"
#include "iso3d/model.hpp"

namespace iso3d {

const char* library_version();

enum class AttackKind { iso, iso_blackbox, random };

const char* attack_kind_name(AttackKind kind);
AttackKind attack_kind_from_name(const std::string& name);

struct RunConfig {
  std::filesystem::path model_path;
  std::filesystem::path dataset_path;
  std::size_t sample_size = 200;
  AttackKind attack = AttackKind::iso;
  Goal goal;  ///< carries the per-input budget
  Ranking ranking = Ranking::saliency;
  SalienceOptions salience;
  std::vector<double> checkpoints{0, 25, 50, 75, 95};  ///< percent of elements removed
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  std::size_t threads = 1;
  /// Labels for reports; derived from the paths when empty.
  std::string model_name;
  std::string dataset_name;

  /// Throws std::invalid_argument on a violated invariant.
  void validate(std::size_t test_size) const;
};

/// Seeded uniform sample of `count` test indices, without replacement, ascending.
std::vector<std::size_t> sample_indices(std::size_t test_size, std::size_t count, std::uint64_t seed);

/// Seed handed to the attack on the input at a given test index.
std::uint64_t input_seed(std::uint64_t run_seed, std::size_t test_index);

struct InputRecord {
  std::size_t test_index = 0;
  std::string source;
  std::size_t label = 0;
  std::size_t clean_prediction = 0;
  bool clean_correct = false;
  bool attacked = false;  ///< only clean-correct inputs are attacked
  bool goal_met = false;
  std::size_t element_count = 0;
  std::size_t occlusion_size = 0;
  std::uint64_t queries = 0;
  double seconds = 0.0;
  std::optional<std::string> error;

  double occlusion_pct() const {
    return element_count == 0 ? 0.0 : 100.0 * static_cast<double>(occlusion_size) / static_cast<double>(element_count);
  }
  /// Whether the input still counts as correctly classified at a checkpoint.
  bool correct_at(double checkpoint_pct) const;
};

struct RobustnessCurve {
  std::string model;
  std::string dataset;
  std::string method;
  std::vector<double> checkpoints;
  std::vector<double> accuracy;  ///< fraction, one per checkpoint
  double mean_queries = 0.0;     ///< over attacked inputs
  double mean_seconds = 0.0;
  std::size_t n_evaluated = 0;
  std::size_t n_errors = 0;
  std::vector<InputRecord> records;  ///< ascending test index
};

/// Aggregates per-input records into the per-checkpoint curve.
void aggregate(RobustnessCurve& curve);

RobustnessCurve evaluate(const Network& net, const Dataset& dataset, const RunConfig& config);
/// Loads the model and dataset named by the config.
RobustnessCurve evaluate(const RunConfig& config);

struct PairedInput {
  std::size_t test_index = 0;
  std::optional<double> occlusion_pct_a;  ///< empty when the attack never succeeded
  std::optional<double> occlusion_pct_b;
};

struct PairedReport {
  std::string method_a;
  std::string method_b;
  std::vector<double> checkpoints;
  std::vector<double> accuracy_a;
  std::vector<double> accuracy_b;
  std::vector<double> delta;  ///< a minus b
  double mean_gap = 0.0;      ///< mean of delta
  std::vector<PairedInput> inputs;
};

/// Requires both curves to cover the same inputs at the same checkpoints.
PairedReport compare(const RobustnessCurve& a, const RobustnessCurve& b);
PairedReport compare(const Network& net, const Dataset& dataset, const RunConfig& a, const RunConfig& b);

struct HistogramBin {
  std::size_t lower = 0;  ///< inclusive
  std::size_t upper = 0;  ///< exclusive
  std::size_t count = 0;
};

struct CardinalitySurvey {
  std::vector<std::size_t> test_indices;
  std::vector<std::size_t> cardinalities;
  std::vector<std::size_t> element_counts;
  std::vector<HistogramBin> histogram;
  double mean = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
};

/// Critical-set size of each sampled test input, computed on the full input.
CardinalitySurvey critical_cardinality_survey(const Network& net, const Dataset& dataset, std::size_t sample_size,
                                              std::uint64_t seed, AttackMode mode = AttackMode::white_box,
                                              const SalienceOptions& salience = {}, std::size_t bin_width = 8);

/// Quantile by linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);

struct CurveRow {
  std::string model;
  std::string dataset;
  std::string method;
  double checkpoint_pct = 0.0;
  double accuracy = 0.0;
  double mean_queries = 0.0;
  double mean_seconds = 0.0;
  std::size_t n_evaluated = 0;
  std::size_t n_errors = 0;

  friend bool operator==(const CurveRow&, const CurveRow&) = default;
};

std::vector<CurveRow> curve_rows(const RobustnessCurve& curve);

/// `model,dataset,method,checkpoint_pct,accuracy,mean_queries,mean_seconds,n_evaluated,n_errors`
void write_curve_csv(std::ostream& out, const std::vector<RobustnessCurve>& curves);
std::vector<CurveRow> read_curve_csv(std::istream& in);
/// One row per curve: model, dataset, method, then accuracy (percent) per checkpoint.
void write_curve_table(std::ostream& out, const std::vector<RobustnessCurve>& curves);
void write_records_csv(std::ostream& out, const RobustnessCurve& curve);
void write_paired_csv(std::ostream& out, const PairedReport& report);
void write_survey_csv(std::ostream& out, const CardinalitySurvey& survey);

/// Config, seeds, sample and tool versions as JSON text.
std::string manifest_json(const RunConfig& config, const std::vector<std::size_t>& sample,
                          const std::string& command, const std::vector<std::string>& outputs);

}  // namespace iso3d
