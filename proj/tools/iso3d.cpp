// Command-line driver: dataset generation, training, attacks and evaluation.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "iso3d/attack.hpp"
#include "iso3d/dataset.hpp"
#include "iso3d/error.hpp"
#include "iso3d/eval.hpp"
#include "iso3d/rng.hpp"
#include "iso3d/salience.hpp"
#include "iso3d/shapes.hpp"
#include "iso3d/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace iso3d;

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void write_text(const fs::path& path, const std::string& text) { open_out(path) << text; }

std::string command_line(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
  return s;
}

json manifest(const std::string& command, json config, const std::vector<std::string>& outputs) {
  return {{"command", command},
          {"config", std::move(config)},
          {"outputs", outputs},
          {"versions", {{"iso3d", library_version()}, {"compiler", __VERSION__}}}};
}

// Goal flags shared by attack, eval, compare and verify.
struct GoalFlags {
  std::string kind = "untargeted";
  std::size_t target = 0;
  double drop = 0.5;
  double time_limit = 2.0;
  std::uint64_t query_limit = 0;

  void add(CLI::App* app) {
    app->add_option("--goal", kind, "untargeted, targeted or confidence-drop")
        ->check(CLI::IsMember({"untargeted", "targeted", "confidence-drop"}));
    app->add_option("--target", target, "target class index for --goal targeted");
    app->add_option("--drop", drop, "required confidence fall for --goal confidence-drop");
    app->add_option("--time-limit", time_limit, "seconds per input; 0 disables");
    app->add_option("--query-limit", query_limit, "forward passes per input; 0 disables");
  }

  Goal goal() const {
    Goal g = kind == "targeted" ? Goal::targeted(target)
             : kind == "confidence-drop" ? Goal::confidence_drop(drop)
                                         : Goal::untargeted();
    g.time_limit = time_limit > 0 ? std::optional<double>(time_limit) : std::nullopt;
    if (query_limit > 0) g.query_limit = query_limit;
    return g;
  }
};

// Selects one input: a cloud file, an OFF mesh, or a test example.
struct InputFlags {
  fs::path data;
  fs::path input;
  std::size_t index = 0;
  std::size_t points = 0;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--data", data, "dataset directory (with --index)");
    app->add_option("--index", index, "test example index");
    app->add_option("--input", input, "a .pc3d cloud or .off mesh instead of a test example");
    app->add_option("--points", points, "keep a seeded sample of this many points (0 keeps all)");
    app->add_option("--seed", seed, "seed for mesh sampling, point subsampling and attacks");
  }

  PointCloud load() const {
    PointCloud cloud;
    if (!input.empty()) {
      if (input.extension() == ".off") {
        cloud = normalize_unit_cube(sample_points(load_off(input.string()), points ? points : 256, seed));
      } else {
        cloud = load_cloud(input);
      }
    } else if (!data.empty()) {
      const Dataset ds = load_dataset(data);
      if (index >= ds.test.size()) throw std::invalid_argument("--index beyond the test set");
      cloud = ds.test[index].input;
    } else {
      throw std::invalid_argument("give --input or --data");
    }
    if (points > 0 && points < cloud.size()) {
      std::vector<std::uint32_t> keep(cloud.size());
      for (std::uint32_t i = 0; i < keep.size(); ++i) keep[i] = i;
      Rng rng(mix_seed(seed, 0x70));
      std::shuffle(keep.begin(), keep.end(), rng);
      keep.resize(points);
      std::sort(keep.begin(), keep.end());
      cloud = cloud.subset(keep);
    }
    return cloud;
  }
};

PointCloud survivor_cloud(const OcclusionInput& input, const Survivors& survivors) {
  std::vector<Vec3> pts;
  for (std::uint32_t e : survivors.indices()) pts.push_back(input.position(e));
  return PointCloud(std::move(pts));
}

json prediction_json(const Prediction& p, const Network& net) {
  return {{"label", p.label}, {"class", net.spec().class_names.at(p.label)}, {"confidence", p.confidence}};
}

json result_json(const AttackResult& r, const Network& net) {
  return {{"goal_met", r.goal_met},
          {"budget_expired", r.budget_expired},
          {"element_count", r.element_count},
          {"occlusion_size", r.occlusion_size},
          {"occlusion_fraction", r.occlusion_fraction()},
          {"queries", r.queries},
          {"elapsed_seconds", r.elapsed},
          {"restarts", r.restarts},
          {"removed", r.removed},
          {"before", prediction_json(r.before, net)},
          {"after", prediction_json(r.after, net)}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial occlusion toolkit for 3D point-set and volumetric classifiers"};
  app.require_subcommand(1);
  const std::string command = command_line(argc, argv);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic shape dataset");
  SyntheticDatasetOptions gen_opts;
  fs::path gen_out;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--train-per-class", gen_opts.train_per_class);
  gen->add_option("--test-per-class", gen_opts.test_per_class);
  gen->add_option("--points", gen_opts.points);
  gen->add_option("--noise", gen_opts.noise_sd, "Gaussian surface noise, in shape units");
  gen->add_option("--seed", gen_opts.seed);

  // train
  auto* tr = app.add_subcommand("train", "train a point-set or volumetric classifier");
  fs::path tr_data, tr_out;
  std::string tr_family = "point-set";
  int tr_resolution = 16;
  TrainOptions tr_opts;
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "weights file; the spec is written beside it")->required();
  tr->add_option("--family", tr_family)->check(CLI::IsMember({"point-set", "volumetric"}));
  tr->add_option("--resolution", tr_resolution, "voxel grid side (volumetric)");
  tr->add_option("--epochs", tr_opts.epochs);
  tr->add_option("--batch-size", tr_opts.batch_size);
  tr->add_option("--lr", tr_opts.learning_rate);
  tr->add_option("--momentum", tr_opts.momentum);
  tr->add_option("--seed", tr_opts.seed);

  // attack
  auto* at = app.add_subcommand("attack", "attack one input; writes the attack log and survivor cloud");
  fs::path at_model, at_out;
  std::string at_kind = "iso";
  bool at_element_order = false;
  GoalFlags at_goal;
  InputFlags at_input;
  at->add_option("--model", at_model)->required();
  at->add_option("--out", at_out, "output directory")->required();
  at->add_option("--attack", at_kind)->check(CLI::IsMember({"iso", "iso-blackbox", "random"}));
  at->add_flag("--element-order", at_element_order, "rank critical sets by element index instead of saliency");
  at_goal.add(at);
  at_input.add(at);

  // eval and compare
  RunConfig ev;
  std::string ev_kind = "iso";
  GoalFlags ev_goal;
  bool ev_element_order = false;
  auto add_run_flags = [&](CLI::App* sub) {
    sub->add_option("--model", ev.model_path)->required();
    sub->add_option("--data", ev.dataset_path)->required();
    sub->add_option("--out", ev.output_dir, "output directory")->required();
    sub->add_option("--sample", ev.sample_size);
    sub->add_option("--checkpoints", ev.checkpoints, "occlusion percentages")->delimiter(',');
    sub->add_option("--seed", ev.seed);
    sub->add_option("--threads", ev.threads);
    sub->add_option("--fraction", ev.salience.volumetric_fraction, "critical share of occupied voxels");
    sub->add_option("--tau", ev.salience.blackbox_tau, "black-box logit tolerance");
    sub->add_flag("--element-order", ev_element_order);
    ev_goal.add(sub);
  };
  auto* eval = app.add_subcommand("eval", "accuracy under occlusion on a test sample");
  add_run_flags(eval);
  eval->add_option("--attack", ev_kind)->check(CLI::IsMember({"iso", "iso-blackbox", "random"}));

  auto* cmp = app.add_subcommand("compare", "paired run of two attacks on the same sample");
  std::string cmp_a = "iso", cmp_b = "random";
  add_run_flags(cmp);
  cmp->add_option("--a", cmp_a)->check(CLI::IsMember({"iso", "iso-blackbox", "random"}));
  cmp->add_option("--b", cmp_b)->check(CLI::IsMember({"iso", "iso-blackbox", "random"}));

  // survey
  auto* sv = app.add_subcommand("survey", "critical-set cardinality histogram");
  fs::path sv_model, sv_data, sv_out;
  std::size_t sv_sample = 200, sv_bin = 8;
  std::uint64_t sv_seed = 0;
  bool sv_blackbox = false;
  SalienceOptions sv_salience;
  sv->add_option("--model", sv_model)->required();
  sv->add_option("--data", sv_data)->required();
  sv->add_option("--out", sv_out, "output directory")->required();
  sv->add_option("--sample", sv_sample);
  sv->add_option("--seed", sv_seed);
  sv->add_option("--bin-width", sv_bin);
  sv->add_option("--fraction", sv_salience.volumetric_fraction);
  sv->add_flag("--blackbox", sv_blackbox);

  // verify
  auto* vf = app.add_subcommand("verify", "exhaustive ISO and/or brute-force minimum occlusion on a small input");
  fs::path vf_model, vf_out;
  std::string vf_mode = "both";
  GoalFlags vf_goal;
  InputFlags vf_input;
  vf->add_option("--model", vf_model)->required();
  vf->add_option("--out", vf_out, "output directory")->required();
  vf->add_option("--mode", vf_mode)->check(CLI::IsMember({"exhaustive", "brute-force", "both"}));
  vf_goal.add(vf);
  vf_input.add(vf);

  // export-salience
  auto* ex = app.add_subcommand("export-salience", "per-element saliency and critical-set membership");
  fs::path ex_model, ex_out;
  bool ex_blackbox = false;
  SalienceOptions ex_salience;
  InputFlags ex_input;
  ex->add_option("--model", ex_model)->required();
  ex->add_option("--out", ex_out, "CSV file")->required();
  ex->add_flag("--blackbox", ex_blackbox);
  ex->add_option("--fraction", ex_salience.volumetric_fraction);
  ex_input.add(ex);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const Dataset ds = make_synthetic_dataset(gen_opts);
      save_dataset(gen_out, ds);
      write_text(gen_out / "manifest.json",
                 manifest(command,
                          {{"train_per_class", gen_opts.train_per_class},
                           {"test_per_class", gen_opts.test_per_class},
                           {"points", gen_opts.points},
                           {"noise_sd", gen_opts.noise_sd},
                           {"seed", gen_opts.seed}},
                          {"classes", "manifest"})
                         .dump(2));
      std::cout << "wrote " << ds.train.size() << " train and " << ds.test.size() << " test examples to " << gen_out
                << '\n';
    } else if (*tr) {
      const Dataset ds = load_dataset(tr_data);
      ModelSpec spec = tr_family == "volumetric" ? ModelSpec::desk_volumetric(ds.classes)
                                                 : ModelSpec::desk_point_set(ds.classes);
      spec.resolution = tr_resolution;
      spec.validate();
      const fs::path log_path = fs::path(tr_out).replace_extension(".log.csv");
      std::ofstream log = open_out(log_path);
      log << "epoch,loss,train_accuracy,test_accuracy\n";
      const TrainResult result = train(spec, ds, tr_opts, [&](const EpochStats& e) {
        log << e.epoch << ',' << e.loss << ',' << e.train_accuracy << ',' << e.test_accuracy << '\n';
        std::cout << "epoch " << e.epoch << " loss " << e.loss << " train " << e.train_accuracy << " test "
                  << e.test_accuracy << '\n';
      });
      save_network(tr_out, Network(spec, result.weights));
      write_text(fs::path(tr_out).replace_extension(".manifest.json"),
                 manifest(command,
                          {{"data", tr_data.string()},
                           {"family", tr_family},
                           {"resolution", tr_resolution},
                           {"epochs", tr_opts.epochs},
                           {"batch_size", tr_opts.batch_size},
                           {"learning_rate", tr_opts.learning_rate},
                           {"momentum", tr_opts.momentum},
                           {"seed", tr_opts.seed}},
                          {tr_out.string(), spec_path_for(tr_out).string(), log_path.string()})
                     .dump(2));
    } else if (*at) {
      const Network net = load_network(at_model);
      const OcclusionInput input = OcclusionInput::for_model(net.spec(), at_input.load());
      const Goal goal = at_goal.goal();
      AttackResult r;
      if (at_kind == "random") {
        r = random_occlusion(net, input, goal, at_input.seed);
      } else {
        IsoOptions options;
        options.mode = at_kind == "iso" ? AttackMode::white_box : AttackMode::black_box;
        options.ranking = at_element_order ? Ranking::element_order : Ranking::saliency;
        options.seed = at_input.seed;
        r = iso(net, input, goal, options);
      }
      fs::create_directories(at_out);
      {
        std::ofstream log = open_out(at_out / "attack_log.csv");
        write_attack_log(log, r.log);
      }
      save_cloud(at_out / "survivor.pc3d", survivor_cloud(input, r.survivor));
      write_text(at_out / "result.json", result_json(r, net).dump(2));
      write_text(at_out / "manifest.json",
                 manifest(command,
                          {{"model", at_model.string()},
                           {"attack", at_kind},
                           {"goal", at_goal.kind},
                           {"time_limit", at_goal.time_limit},
                           {"seed", at_input.seed},
                           {"data", at_input.data.string()},
                           {"index", at_input.index},
                           {"input", at_input.input.string()}},
                          {"attack_log.csv", "survivor.pc3d", "result.json"})
                     .dump(2));
      std::cout << (r.goal_met ? "goal met" : "goal not met") << ": removed " << r.occlusion_size << " of "
                << r.element_count << " elements, " << r.queries << " queries, " << r.elapsed << " s\n";
    } else if (*eval || *cmp) {
      ev.goal = ev_goal.goal();
      ev.ranking = ev_element_order ? Ranking::element_order : Ranking::saliency;
      const Network net = load_network(ev.model_path);
      const Dataset ds = load_dataset(ev.dataset_path);
      std::vector<RobustnessCurve> curves;
      std::vector<std::string> outputs{"curve.csv", "curve.txt"};
      if (*eval) {
        ev.attack = attack_kind_from_name(ev_kind);
        curves.push_back(evaluate(net, ds, ev));
        std::ofstream rec = open_out(ev.output_dir / "records.csv");
        write_records_csv(rec, curves.back());
        outputs.push_back("records.csv");
      } else {
        RunConfig a = ev, b = ev;
        a.attack = attack_kind_from_name(cmp_a);
        b.attack = attack_kind_from_name(cmp_b);
        curves.push_back(evaluate(net, ds, a));
        curves.push_back(evaluate(net, ds, b));
        const PairedReport report = compare(curves[0], curves[1]);
        std::ofstream paired = open_out(ev.output_dir / "compare.csv");
        write_paired_csv(paired, report);
        outputs.push_back("compare.csv");
        std::cout << "mean accuracy gap (" << cmp_a << " - " << cmp_b << "): " << report.mean_gap << '\n';
      }
      {
        std::ofstream csv = open_out(ev.output_dir / "curve.csv");
        write_curve_csv(csv, curves);
        std::ofstream table = open_out(ev.output_dir / "curve.txt");
        write_curve_table(table, curves);
      }
      write_curve_table(std::cout, curves);
      write_text(ev.output_dir / "manifest.json",
                 manifest_json(ev, sample_indices(ds.test.size(), ev.sample_size, ev.seed), command, outputs));
    } else if (*sv) {
      const Network net = load_network(sv_model);
      const Dataset ds = load_dataset(sv_data);
      const CardinalitySurvey survey =
          critical_cardinality_survey(net, ds, sv_sample, sv_seed,
                                      sv_blackbox ? AttackMode::black_box : AttackMode::white_box, sv_salience, sv_bin);
      {
        std::ofstream out = open_out(sv_out / "survey.csv");
        write_survey_csv(out, survey);
      }
      write_text(sv_out / "manifest.json",
                 manifest(command,
                          {{"model", sv_model.string()},
                           {"data", sv_data.string()},
                           {"sample", sv_sample},
                           {"seed", sv_seed},
                           {"blackbox", sv_blackbox},
                           {"bin_width", sv_bin},
                           {"volumetric_fraction", sv_salience.volumetric_fraction}},
                          {"survey.csv"})
                     .dump(2));
      std::cout << "mean " << survey.mean << " q1 " << survey.q1 << " median " << survey.median << " q3 "
                << survey.q3 << '\n';
    } else if (*vf) {
      const Network net = load_network(vf_model);
      const OcclusionInput input = OcclusionInput::for_model(net.spec(), vf_input.load());
      const Goal goal = vf_goal.goal();
      json out = {{"elements", input.size()}};
      if (vf_mode != "brute-force") {
        IsoOptions options;
        options.seed = vf_input.seed;
        try {
          const VerifyResult v = exhaustive_verify(net, input, goal, options);
          out["exhaustive"] = result_json(v.attack, net);
          out["exhaustive"]["certificate"] = {{"permutations_checked", v.certificate.permutations_checked},
                                              {"states", v.certificate.states},
                                              {"max_cardinality", v.certificate.max_cardinality},
                                              {"exhausted", v.certificate.exhausted}};
        } catch (const VerificationRefused& e) {
          out["exhaustive"] = {{"refused", e.what()}, {"cardinality", e.cardinality()}};
        }
      }
      if (vf_mode != "exhaustive") {
        const BruteForceResult b = brute_force_min_occlusion(net, input, goal);
        out["brute_force"] = {{"minimum", b.minimum ? json(*b.minimum) : json(nullptr)},
                              {"witness", b.witness},
                              {"queries", b.queries}};
      }
      fs::create_directories(vf_out);
      write_text(vf_out / "verify.json", out.dump(2));
      write_text(vf_out / "manifest.json",
                 manifest(command, {{"model", vf_model.string()}, {"mode", vf_mode}, {"seed", vf_input.seed}},
                          {"verify.json"})
                     .dump(2));
      std::cout << out.dump(2) << '\n';
    } else if (*ex) {
      const Network net = load_network(ex_model);
      const OcclusionInput input = OcclusionInput::for_model(net.spec(), ex_input.load());
      QueryOracle oracle(net, input);
      const Survivors all = input.all();
      const CriticalSet cs =
          ex_blackbox ? critical_set_blackbox(oracle, all, oracle.observe(all).logits, ex_salience.blackbox_tau)
                      : critical_set_whitebox(oracle.trace(all), input.materialize(all), ex_salience);
      {
        std::ofstream out = open_out(ex_out);
        write_salience_csv(out, input, cs);
      }
      write_text(fs::path(ex_out).replace_extension(".manifest.json"),
                 manifest(command, {{"model", ex_model.string()}, {"blackbox", ex_blackbox}}, {ex_out.string()})
                     .dump(2));
      std::cout << cs.size() << " of " << input.size() << " elements are critical\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
