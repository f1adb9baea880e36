#include "iso3d/eval.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <istream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "iso3d/error.hpp"
#include "iso3d/rng.hpp"
#include "iso3d/train.hpp"

#ifndef ISO3D_VERSION
#define ISO3D_VERSION "unknown"
#endif

namespace iso3d {

const char* library_version() { return ISO3D_VERSION; }

const char* attack_kind_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::iso:
      return "iso";
    case AttackKind::iso_blackbox:
      return "iso-blackbox";
    case AttackKind::random:
      return "random";
  }
  return "?";
}

AttackKind attack_kind_from_name(const std::string& name) {
  for (AttackKind k : {AttackKind::iso, AttackKind::iso_blackbox, AttackKind::random}) {
    if (name == attack_kind_name(k)) return k;
  }
  throw std::invalid_argument("unknown attack kind '" + name + "' (expected iso, iso-blackbox or random)");
}

void RunConfig::validate(std::size_t test_size) const {
  if (checkpoints.empty()) throw std::invalid_argument("at least one checkpoint is required");
  for (double c : checkpoints) {
    if (!(c >= 0.0 && c <= 100.0)) throw std::invalid_argument("checkpoints must lie in [0,100]");
  }
  if (!std::is_sorted(checkpoints.begin(), checkpoints.end())) throw std::invalid_argument("checkpoints must be sorted");
  if (sample_size == 0) throw std::invalid_argument("sample size must be positive");
  if (sample_size > test_size) {
    throw std::invalid_argument("sample size " + std::to_string(sample_size) + " exceeds the test set (" +
                                std::to_string(test_size) + ")");
  }
  if (threads == 0) throw std::invalid_argument("thread count must be positive");
}

std::vector<std::size_t> sample_indices(std::size_t test_size, std::size_t count, std::uint64_t seed) {
  if (count > test_size) throw std::invalid_argument("sample larger than the population");
  std::vector<std::size_t> all(test_size);
  std::iota(all.begin(), all.end(), std::size_t{0});
  Rng rng(mix_seed(seed, 0x5a3d1e));
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, test_size - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

std::uint64_t input_seed(std::uint64_t run_seed, std::size_t test_index) {
  return mix_seed(run_seed, static_cast<std::uint64_t>(test_index) + 1);
}

bool InputRecord::correct_at(double checkpoint_pct) const {
  if (error || !clean_correct) return false;
  return !goal_met || occlusion_pct() > checkpoint_pct;
}

void aggregate(RobustnessCurve& curve) {
  curve.accuracy.assign(curve.checkpoints.size(), 0.0);
  curve.n_evaluated = 0;
  curve.n_errors = 0;
  double queries = 0.0;
  double seconds = 0.0;
  std::size_t attacked = 0;
  for (const InputRecord& r : curve.records) {
    if (r.error) {
      ++curve.n_errors;
      continue;
    }
    ++curve.n_evaluated;
    for (std::size_t c = 0; c < curve.checkpoints.size(); ++c) {
      if (r.correct_at(curve.checkpoints[c])) curve.accuracy[c] += 1.0;
    }
    if (r.attacked) {
      ++attacked;
      queries += static_cast<double>(r.queries);
      seconds += r.seconds;
    }
  }
  if (curve.n_evaluated > 0) {
    for (double& a : curve.accuracy) a /= static_cast<double>(curve.n_evaluated);
  }
  curve.mean_queries = attacked ? queries / static_cast<double>(attacked) : 0.0;
  curve.mean_seconds = attacked ? seconds / static_cast<double>(attacked) : 0.0;
}

namespace {

std::string stem_or(const std::filesystem::path& p, std::string_view fallback) {
  const std::string s = p.stem().string();
  return s.empty() ? std::string(fallback) : s;
}

InputRecord run_one(const Network& net, const LabeledExample& example, std::size_t test_index,
                    const RunConfig& config) {
  InputRecord r;
  r.test_index = test_index;
  r.source = example.source;
  r.label = example.label;
  try {
    const OcclusionInput input = OcclusionInput::for_model(net.spec(), example.input);
    r.element_count = input.size();
    r.clean_prediction = predict(net, input.materialize(input.all())).label;
    r.clean_correct = r.clean_prediction == example.label;
    if (!r.clean_correct) return r;
    const std::uint64_t seed = input_seed(config.seed, test_index);
    AttackResult result;
    if (config.attack == AttackKind::random) {
      result = random_occlusion(net, input, config.goal, seed);
    } else {
      IsoOptions options;
      options.mode = config.attack == AttackKind::iso ? AttackMode::white_box : AttackMode::black_box;
      options.ranking = config.ranking;
      options.salience = config.salience;
      options.seed = seed;
      result = iso(net, input, config.goal, options);
    }
    r.attacked = true;
    r.goal_met = result.goal_met;
    r.occlusion_size = result.occlusion_size;
    r.queries = result.queries;
    r.seconds = result.elapsed;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

}  // namespace

RobustnessCurve evaluate(const Network& net, const Dataset& dataset, const RunConfig& config) {
  config.validate(dataset.test.size());
  if (dataset.classes != net.spec().class_names) throw ShapeError("model and dataset classes differ");
  config.goal.validate(net.spec().class_names.size());

  RobustnessCurve curve;
  curve.model = config.model_name.empty() ? stem_or(config.model_path, family_name(net.family())) : config.model_name;
  curve.dataset = config.dataset_name.empty() ? stem_or(config.dataset_path, "dataset") : config.dataset_name;
  curve.method = attack_kind_name(config.attack);
  curve.checkpoints = config.checkpoints;

  const auto sample = sample_indices(dataset.test.size(), config.sample_size, config.seed);
  curve.records.resize(sample.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < sample.size(); i = next++) {
      curve.records[i] = run_one(net, dataset.test[sample[i]], sample[i], config);
    }
  };
  const std::size_t threads = std::min(config.threads, sample.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  aggregate(curve);
  return curve;
}

RobustnessCurve evaluate(const RunConfig& config) {
  const Network net = load_network(config.model_path);
  const Dataset dataset = load_dataset(config.dataset_path);
  return evaluate(net, dataset, config);
}

PairedReport compare(const RobustnessCurve& a, const RobustnessCurve& b) {
  if (a.checkpoints != b.checkpoints) throw std::invalid_argument("curves use different checkpoints");
  if (a.records.size() != b.records.size()) throw std::invalid_argument("curves cover different samples");
  PairedReport report;
  report.method_a = a.method;
  report.method_b = b.method;
  report.checkpoints = a.checkpoints;
  report.accuracy_a = a.accuracy;
  report.accuracy_b = b.accuracy;
  for (std::size_t c = 0; c < a.checkpoints.size(); ++c) report.delta.push_back(a.accuracy[c] - b.accuracy[c]);
  report.mean_gap = report.delta.empty()
                        ? 0.0
                        : std::accumulate(report.delta.begin(), report.delta.end(), 0.0) /
                              static_cast<double>(report.delta.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const InputRecord& ra = a.records[i];
    const InputRecord& rb = b.records[i];
    if (ra.test_index != rb.test_index) throw std::invalid_argument("curves cover different samples");
    PairedInput p;
    p.test_index = ra.test_index;
    if (ra.attacked && ra.goal_met) p.occlusion_pct_a = ra.occlusion_pct();
    if (rb.attacked && rb.goal_met) p.occlusion_pct_b = rb.occlusion_pct();
    report.inputs.push_back(p);
  }
  return report;
}

PairedReport compare(const Network& net, const Dataset& dataset, const RunConfig& a, const RunConfig& b) {
  if (a.sample_size != b.sample_size || a.seed != b.seed || a.checkpoints != b.checkpoints) {
    throw std::invalid_argument("compared runs must share sample size, seed and checkpoints");
  }
  return compare(evaluate(net, dataset, a), evaluate(net, dataset, b));
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

CardinalitySurvey critical_cardinality_survey(const Network& net, const Dataset& dataset, std::size_t sample_size,
                                              std::uint64_t seed, AttackMode mode, const SalienceOptions& salience,
                                              std::size_t bin_width) {
  if (bin_width == 0) throw std::invalid_argument("bin width must be positive");
  CardinalitySurvey survey;
  survey.test_indices = sample_indices(dataset.test.size(), sample_size, seed);
  for (std::size_t index : survey.test_indices) {
    const OcclusionInput input = OcclusionInput::for_model(net.spec(), dataset.test[index].input);
    QueryOracle oracle(net, input);
    const Survivors all = input.all();
    CriticalSet cs;
    if (mode == AttackMode::white_box) {
      cs = critical_set_whitebox(oracle.trace(all), input.materialize(all), salience);
    } else {
      cs = critical_set_blackbox(oracle, all, oracle.observe(all).logits, salience.blackbox_tau);
    }
    survey.cardinalities.push_back(cs.size());
    survey.element_counts.push_back(input.size());
  }
  if (survey.cardinalities.empty()) return survey;
  std::vector<double> values(survey.cardinalities.begin(), survey.cardinalities.end());
  survey.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  survey.q1 = quantile(values, 0.25);
  survey.median = quantile(values, 0.5);
  survey.q3 = quantile(values, 0.75);
  const std::size_t top = *std::max_element(survey.cardinalities.begin(), survey.cardinalities.end());
  for (std::size_t lower = 0; lower <= top; lower += bin_width) survey.histogram.push_back({lower, lower + bin_width, 0});
  for (std::size_t c : survey.cardinalities) ++survey.histogram[c / bin_width].count;
  return survey;
}

std::vector<CurveRow> curve_rows(const RobustnessCurve& curve) {
  std::vector<CurveRow> rows;
  for (std::size_t c = 0; c < curve.checkpoints.size(); ++c) {
    rows.push_back({curve.model, curve.dataset, curve.method, curve.checkpoints[c], curve.accuracy.at(c),
                    curve.mean_queries, curve.mean_seconds, curve.n_evaluated, curve.n_errors});
  }
  return rows;
}

namespace {

constexpr const char* kCurveHeader =
    "model,dataset,method,checkpoint_pct,accuracy,mean_queries,mean_seconds,n_evaluated,n_errors";

// Fixed-point text of a value, and the value that text parses back to.
std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

void check_field(const std::string& s, std::size_t line) {
  if (s.find_first_of(",\"\n") != std::string::npos) throw ParseError(line, "field contains a separator: " + s);
}

template <class Number>
Number parse_number(const std::string& s, std::size_t line) {
  Number v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw ParseError(line, "bad number '" + s + "'");
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

void write_curve_csv(std::ostream& out, const std::vector<RobustnessCurve>& curves) {
  out << kCurveHeader << '\n';
  for (const RobustnessCurve& curve : curves) {
    for (const CurveRow& row : curve_rows(curve)) {
      check_field(row.model, 0);
      check_field(row.dataset, 0);
      out << row.model << ',' << row.dataset << ',' << row.method << ',' << fixed(row.checkpoint_pct, 2) << ','
          << fixed(row.accuracy, 6) << ',' << fixed(row.mean_queries, 3) << ',' << fixed(row.mean_seconds, 6) << ','
          << row.n_evaluated << ',' << row.n_errors << '\n';
    }
  }
}

std::vector<CurveRow> read_curve_csv(std::istream& in) {
  std::vector<CurveRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) {
      if (line != kCurveHeader) throw ParseError(lineno, "unexpected curve header");
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 9) throw ParseError(lineno, "expected 9 fields, got " + std::to_string(f.size()));
    CurveRow row;
    row.model = f[0];
    row.dataset = f[1];
    row.method = f[2];
    row.checkpoint_pct = parse_number<double>(f[3], lineno);
    row.accuracy = parse_number<double>(f[4], lineno);
    row.mean_queries = parse_number<double>(f[5], lineno);
    row.mean_seconds = parse_number<double>(f[6], lineno);
    row.n_evaluated = parse_number<std::size_t>(f[7], lineno);
    row.n_errors = parse_number<std::size_t>(f[8], lineno);
    rows.push_back(std::move(row));
  }
  if (lineno == 0) throw ParseError(1, "empty curve file");
  return rows;
}

void write_curve_table(std::ostream& out, const std::vector<RobustnessCurve>& curves) {
  std::vector<double> checkpoints = curves.empty() ? RunConfig{}.checkpoints : curves.front().checkpoints;
  std::size_t wm = 5, wd = 7, wa = 6;
  for (const auto& c : curves) {
    if (c.checkpoints != checkpoints) throw std::invalid_argument("table rows must share checkpoints");
    wm = std::max(wm, c.model.size());
    wd = std::max(wd, c.dataset.size());
    wa = std::max(wa, c.method.size());
  }
  out << std::left << std::setw(static_cast<int>(wm) + 2) << "Model" << std::setw(static_cast<int>(wd) + 2)
      << "Dataset" << std::setw(static_cast<int>(wa) + 2) << "Method";
  for (double c : checkpoints) {
    std::ostringstream h;
    h << c << '%';
    out << std::right << std::setw(8) << h.str();
  }
  out << '\n';
  for (const auto& curve : curves) {
    out << std::left << std::setw(static_cast<int>(wm) + 2) << curve.model << std::setw(static_cast<int>(wd) + 2)
        << curve.dataset << std::setw(static_cast<int>(wa) + 2) << curve.method;
    for (double a : curve.accuracy) out << std::right << std::setw(8) << fixed(100.0 * a, 1);
    out << '\n';
  }
}

void write_records_csv(std::ostream& out, const RobustnessCurve& curve) {
  out << "test_index,source,label,clean_prediction,clean_correct,attacked,goal_met,element_count,occlusion_size,"
         "occlusion_pct,queries,seconds,error\n";
  for (const InputRecord& r : curve.records) {
    std::string error = r.error.value_or("");
    std::replace(error.begin(), error.end(), ',', ';');
    std::replace(error.begin(), error.end(), '\n', ' ');
    out << r.test_index << ',' << r.source << ',' << r.label << ',' << r.clean_prediction << ','
        << int(r.clean_correct) << ',' << int(r.attacked) << ',' << int(r.goal_met) << ',' << r.element_count << ','
        << r.occlusion_size << ',' << fixed(r.occlusion_pct(), 4) << ',' << r.queries << ',' << fixed(r.seconds, 6)
        << ',' << error << '\n';
  }
}

void write_paired_csv(std::ostream& out, const PairedReport& report) {
  out << "checkpoint_pct,accuracy_" << report.method_a << ",accuracy_" << report.method_b << ",delta\n";
  for (std::size_t c = 0; c < report.checkpoints.size(); ++c) {
    out << fixed(report.checkpoints[c], 2) << ',' << fixed(report.accuracy_a[c], 6) << ','
        << fixed(report.accuracy_b[c], 6) << ',' << fixed(report.delta[c], 6) << '\n';
  }
  out << "mean_gap,,," << fixed(report.mean_gap, 6) << '\n';
  out << "\ntest_index,occlusion_pct_" << report.method_a << ",occlusion_pct_" << report.method_b << '\n';
  for (const PairedInput& p : report.inputs) {
    out << p.test_index << ',';
    if (p.occlusion_pct_a) out << fixed(*p.occlusion_pct_a, 4);
    out << ',';
    if (p.occlusion_pct_b) out << fixed(*p.occlusion_pct_b, 4);
    out << '\n';
  }
}

void write_survey_csv(std::ostream& out, const CardinalitySurvey& survey) {
  out << "bin_lower,bin_upper,count\n";
  for (const HistogramBin& b : survey.histogram) out << b.lower << ',' << b.upper << ',' << b.count << '\n';
  out << "\nstatistic,value\n";
  out << "inputs," << survey.cardinalities.size() << '\n';
  out << "mean," << fixed(survey.mean, 4) << '\n';
  out << "q1," << fixed(survey.q1, 4) << '\n';
  out << "median," << fixed(survey.median, 4) << '\n';
  out << "q3," << fixed(survey.q3, 4) << '\n';
  out << "\ntest_index,elements,cardinality\n";
  for (std::size_t i = 0; i < survey.cardinalities.size(); ++i) {
    out << survey.test_indices[i] << ',' << survey.element_counts[i] << ',' << survey.cardinalities[i] << '\n';
  }
}

std::string manifest_json(const RunConfig& config, const std::vector<std::size_t>& sample,
                          const std::string& command, const std::vector<std::string>& outputs) {
  using nlohmann::json;
  json goal = {{"kind", config.goal.kind == Goal::Kind::untargeted  ? "untargeted"
                        : config.goal.kind == Goal::Kind::targeted ? "targeted"
                                                                   : "confidence_drop"},
               {"target", config.goal.target},
               {"drop", config.goal.drop},
               {"exhaustive", config.goal.exhaustive}};
  goal["time_limit"] = config.goal.time_limit ? json(*config.goal.time_limit) : json(nullptr);
  goal["query_limit"] = config.goal.query_limit ? json(*config.goal.query_limit) : json(nullptr);
  json m = {
      {"command", command},
      {"config",
       {{"model_path", config.model_path.string()},
        {"dataset_path", config.dataset_path.string()},
        {"sample_size", config.sample_size},
        {"attack", attack_kind_name(config.attack)},
        {"ranking", config.ranking == Ranking::saliency ? "saliency" : "element-order"},
        {"goal", goal},
        {"checkpoints", config.checkpoints},
        {"volumetric_fraction", config.salience.volumetric_fraction},
        {"blackbox_tau", config.salience.blackbox_tau},
        {"threads", config.threads},
        {"output_dir", config.output_dir.string()}}},
      {"seeds", {{"run", config.seed}, {"per_input", "mix_seed(run, test_index + 1)"}}},
      {"sample", sample},
      {"outputs", outputs},
      {"versions",
       {{"iso3d", library_version()},
        {"compiler", __VERSION__},
        {"cplusplus", __cplusplus},
        {"nlohmann_json",
         std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
             std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}}};
  return m.dump(2) + "\n";
}

}  // namespace iso3d
