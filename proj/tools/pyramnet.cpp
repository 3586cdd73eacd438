// pyramnet command-line tool: train, eval, predict, export, convert,
// gradcheck, sweep-k, plus make-synthetic and report helpers.

#include "pyramnet/checkpoint.hpp"
#include "pyramnet/dataset_io.hpp"
#include "pyramnet/errors.hpp"
#include "pyramnet/gradcheck.hpp"
#include "pyramnet/harness.hpp"
#include "pyramnet/log.hpp"
#include "pyramnet/synthetic.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace pyramnet;

namespace {

struct Options {
  RunConfig run;
  std::string task = "classification";
  std::string k = "ceil_f_over_4";
  bool no_gem = false;
  bool no_pan = false;
  bool print_config = false;
  std::string dump_trace;
  bool no_augment = false;
  bool resume = false;
  bool quiet = false;
  // eval / predict / export / convert
  std::string split = "test";
  std::string input;
  std::string output;
  std::string mode = "pred";
  Index points = 1024;
  int label = -1;
  Index txt_features = 3;
  bool label_last = false;
  // sweep-k
  std::string k_values = "2,4,ceil_f_over_4";
  // make-synthetic
  std::string classes;
  Index per_class = 32;
  bool no_end_to_end = false;
};

void add_run_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--task", o.task, "classification | part_seg | scene_seg");
  cmd->add_option("--data", o.run.data_root, "dataset root (default $PYRAMNET_DATA_DIR)");
  cmd->add_option("--epochs", o.run.epochs, "training epochs");
  cmd->add_option("--batch-size", o.run.batch_size, "clouds per batch");
  cmd->add_option("--lr", o.run.lr, "Adam learning rate");
  cmd->add_option("--k", o.k, "GEM neighbour count: ceil_f_over_4 or an integer");
  cmd->add_flag("--no-gem", o.no_gem, "remove both graph embedding modules");
  cmd->add_flag("--no-pan", o.no_pan, "remove the pyramid branch");
  cmd->add_option("--seed", o.run.seed, "random seed");
  cmd->add_option("--checkpoint", o.run.checkpoint, "checkpoint path");
  cmd->add_option("--report", o.run.report, "JSON-lines log / report path");
  cmd->add_flag("--f64-check", o.run.f64, "run in 64-bit arithmetic");
  cmd->add_flag("--print-config", o.print_config, "print the effective configuration and exit");
  cmd->add_option("--dump-trace", o.dump_trace, "write the stage/shape audit of one forward pass");
  cmd->add_option("--eval-every", o.run.eval_every, "epochs between held-out evaluations");
  cmd->add_option("--checkpoint-every", o.run.checkpoint_every, "epochs between checkpoints");
  cmd->add_option("--train-split", o.run.train_split, "training split directory");
  cmd->add_option("--test-split", o.run.test_split, "held-out split directory");
  cmd->add_flag("--no-augment", o.no_augment, "disable rotation and jitter");
  cmd->add_flag("--quiet", o.quiet, "suppress per-epoch progress");
}

void finalize(Options& o) {
  if (o.run.data_root.empty()) {
    if (const char* env = std::getenv("PYRAMNET_DATA_DIR")) o.run.data_root = env;
  }
  const Task task = parse_task(o.task);
  if (task != o.run.model.task) o.run.model = ModelConfig::reference(task);
  o.run.model.k_rule = KRule::parse(o.k);
  o.run.model.enable_gem = !o.no_gem;
  o.run.model.enable_pan = !o.no_pan;
  o.run.model.seed = o.run.seed;
  o.run.augment.enabled = !o.no_augment;
  o.run.validate();
}

std::string require_data_root(const Options& o) {
  if (o.run.data_root.empty()) throw ConfigError("no dataset root: pass --data or set PYRAMNET_DATA_DIR");
  return o.run.data_root;
}

std::optional<Dataset> load_optional_split(const std::string& root, const std::string& split) {
  if (!fs::is_directory(fs::path(root) / split)) return std::nullopt;
  return load_dataset(root, split);
}

template <typename Scalar>
void dump_trace(PyramNet<Scalar>& model, const Dataset& dataset, const std::string& path) {
  NoGradGuard guard;
  std::mt19937_64 rng(0);
  const auto batch = batches<Scalar>(dataset, 1, false, 0).front();
  const auto trace = model.forward(batch.points, false, rng);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write trace '" + path + "'");
  out << trace.shape_report();
}

template <typename Scalar>
int cmd_train(Options& o) {
  Dataset train = load_dataset(require_data_root(o), o.run.train_split);
  const auto test = load_optional_split(o.run.data_root, o.run.test_split);
  o.run.model = model_config_for(o.run, train);
  Trainer<Scalar> trainer(o.run, std::move(train), test);
  if (o.resume) {
    if (o.run.checkpoint.empty()) throw ConfigError("--resume needs --checkpoint");
    trainer.resume(Checkpoint::load(o.run.checkpoint));
    std::cout << "resuming at epoch " << trainer.next_epoch() << '\n';
  }
  if (!o.dump_trace.empty()) dump_trace(trainer.model(), load_dataset(o.run.data_root, o.run.train_split), o.dump_trace);
  const TrainResult result = trainer.run([&o](const EpochRecord& r) {
    if (o.quiet) return;
    std::cout << "epoch " << r.epoch << "  loss " << r.loss << "  train-acc " << r.train.overall_accuracy;
    if (r.train.task != Task::kClassification) std::cout << "  train-mIoU " << r.train.miou;
    if (r.eval) std::cout << "  eval-acc " << r.eval->overall_accuracy << "  eval-mIoU " << r.eval->miou;
    std::cout << "  (" << r.seconds << " s)\n";
  });
  std::cout << "final train metrics\n" << result.final_train.to_text();
  if (result.final_eval) std::cout << "final eval metrics\n" << result.final_eval->to_text();
  if (result.best_eval) std::cout << "best eval metrics (epoch " << result.best_epoch << ")\n" << result.best_eval->to_text();
  return 0;
}

template <typename Scalar>
PyramNet<Scalar> model_for_dataset(const Checkpoint& ck, const Dataset& dataset) {
  ModelConfig cfg = ModelConfig::parse(ck.text(Checkpoint::kConfigRecord));
  if (cfg.task != dataset.task) {
    throw ConfigError("checkpoint task " + to_string(cfg.task) + " does not match dataset task " +
                      to_string(dataset.task));
  }
  cfg.points = dataset.points_per_cloud();
  cfg.features = dataset.features();
  cfg.classes = dataset.num_classes;
  cfg.free_form = true;
  PyramNet<Scalar> model(cfg);
  load_model_state(model, ck);
  return model;
}

template <typename Scalar>
int cmd_eval(Options& o) {
  if (o.run.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  const Checkpoint ck = Checkpoint::load(o.run.checkpoint);
  const Dataset dataset = load_dataset(require_data_root(o), o.split);
  PyramNet<Scalar> model = model_for_dataset<Scalar>(ck, dataset);
  if (!o.dump_trace.empty()) dump_trace(model, dataset, o.dump_trace);
  MetricReport report = evaluate(model, dataset, o.run.batch_size);
  if (ck.has("__state__/next_epoch")) report.epoch = static_cast<int>(ck.integer("__state__/next_epoch")) - 1;
  std::cout << report.to_text();
  const nlohmann::json j{{"type", "eval"}, {"split", o.split}, {"metrics", to_json(report)}};
  std::cout << j.dump() << '\n';
  JsonLog(o.run.report).write(j);
  return 0;
}

PointCloud read_cloud(const Options& o, Index points) {
  const std::string ext = fs::path(o.input).extension().string();
  if (ext == ".pcld") return load_pcld(o.input);
  if (ext == ".txt" || ext == ".csv" || ext == ".xyz") {
    return normalize_unit_sphere(load_txt_cloud(o.input, {o.txt_features, o.label_last}));
  }
  return mesh_to_cloud(o.input, points, o.run.seed);
}

template <typename Scalar>
std::pair<std::vector<int>, Dataset> predict_cloud(const Options& o, const Checkpoint& ck) {
  const ModelConfig cfg = ModelConfig::parse(ck.text(Checkpoint::kConfigRecord));
  Dataset single;
  single.task = cfg.task;
  single.num_classes = cfg.classes;
  for (int c = 0; c < cfg.classes; ++c) single.class_names.push_back("class" + std::to_string(c));
  PointCloud cloud = read_cloud(o, cfg.points);
  // Labels are not needed for inference; keep them only when they are usable.
  if (cfg.task == Task::kClassification) {
    cloud.point_labels.clear();
    if (cloud.cloud_label < 0 || cloud.cloud_label >= cfg.classes) cloud.cloud_label = 0;
  } else {
    const bool usable = static_cast<Index>(cloud.point_labels.size()) == cloud.size() &&
                        std::all_of(cloud.point_labels.begin(), cloud.point_labels.end(),
                                    [&cfg](int l) { return l >= 0 && l < cfg.classes; });
    if (!usable) cloud.point_labels.assign(static_cast<std::size_t>(cloud.size()), 0);
    cloud.cloud_label = -1;
  }
  single.clouds.push_back(std::move(cloud));
  if (single.task == Task::kPartSeg) single.categories.clear();
  single.validate();
  PyramNet<Scalar> model = model_for_dataset<Scalar>(ck, single);
  return {predict(model, single, 1), std::move(single)};
}

template <typename Scalar>
int cmd_predict(Options& o) {
  if (o.run.checkpoint.empty() || o.input.empty()) throw ConfigError("predict needs --checkpoint and --input");
  const Checkpoint ck = Checkpoint::load(o.run.checkpoint);
  const auto [pred, dataset] = predict_cloud<Scalar>(o, ck);
  std::ostringstream out;
  for (int p : pred) out << p << '\n';
  if (o.output.empty()) {
    std::cout << out.str();
  } else {
    std::ofstream file(o.output);
    if (!file) throw DataError("cannot write '" + o.output + "'");
    file << out.str();
  }
  return 0;
}

template <typename Scalar>
int cmd_export(Options& o) {
  if (o.run.checkpoint.empty() || o.input.empty() || o.output.empty()) {
    throw ConfigError("export needs --checkpoint, --input and --output");
  }
  const ExportMode mode = parse_export_mode(o.mode);
  const Checkpoint ck = Checkpoint::load(o.run.checkpoint);
  const ModelConfig cfg = ModelConfig::parse(ck.text(Checkpoint::kConfigRecord));
  if (!is_segmentation(cfg.task)) throw ConfigError("export needs a segmentation checkpoint, got " + to_string(cfg.task));
  const PointCloud original = read_cloud(o, cfg.points);
  const auto [pred, dataset] = predict_cloud<Scalar>(o, ck);
  std::ofstream file(o.output);
  if (!file) throw DataError("cannot write '" + o.output + "'");
  write_colored_obj(file, dataset.clouds[0].points, pred, original.point_labels, mode);
  return 0;
}

int cmd_convert(Options& o) {
  if (o.input.empty() || o.output.empty()) throw ConfigError("convert needs --input and --output");
  PointCloud cloud = read_cloud(o, o.points);
  if (o.label >= 0) cloud.cloud_label = o.label;
  save_pcld(o.output, cloud, parse_task(o.task));
  std::cout << "wrote " << cloud.size() << " x " << cloud.features() << " points to " << o.output << '\n';
  return 0;
}

int cmd_gradcheck(Options& o) {
  const GradCheckSuite suite = GradCheckSuite::standard(!o.no_end_to_end);
  const GradCheckReport report = suite.run(o.run.seed == 0 ? 7 : o.run.seed);
  std::cout << report.to_text();
  return report.passed() ? 0 : static_cast<int>(ExitCode::kCheckFailure);
}

std::vector<KRule> parse_k_values(const std::string& text) {
  std::vector<KRule> rules;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) rules.push_back(KRule::parse(item));
  }
  return rules;
}

template <typename Scalar>
int cmd_sweep_k(Options& o) {
  const Dataset train = load_dataset(require_data_root(o), o.run.train_split);
  const Dataset test = load_dataset(o.run.data_root, o.run.test_split);
  o.run.model = model_config_for(o.run, train);
  const auto rows = sweep_k<Scalar>(o.run, train, test, parse_k_values(o.k_values));
  std::cout << format_sweep(rows);
  for (const auto& r : rows) {
    JsonLog(o.run.report)
        .write({{"type", "sweep"}, {"k", r.k}, {"gem1_k", r.gem1_k}, {"gem2_k", r.gem2_k},
                {"train_accuracy", r.train_accuracy}, {"overall_accuracy", r.overall_accuracy}});
  }
  return 0;
}

int cmd_make_synthetic(Options& o) {
  const Task task = parse_task(o.task);
  std::vector<std::string> names;
  std::istringstream in(o.classes);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) names.push_back(item);
  }
  if (names.empty()) {
    names = task == Task::kClassification ? synthetic_classification_shapes() : synthetic_part_categories();
  }
  const Dataset all = make_synthetic(task, names, o.per_class, o.points, o.run.seed);
  auto [train, test] = split_train_test(all, o.run.seed);
  save_dataset(train, require_data_root(o));
  save_dataset(test, o.run.data_root);
  std::cout << "wrote " << train.clouds.size() << " train and " << test.clouds.size() << " test clouds to "
            << o.run.data_root << '\n';
  return 0;
}

int cmd_report(Options& o) {
  if (o.run.report.empty()) throw ConfigError("report needs --report <log>");
  std::size_t skipped = 0;
  const auto records = read_json_lines(o.run.report, &skipped);
  std::cout << summarize_log(records);
  if (skipped) std::cout << "skipped " << skipped << " malformed line(s)\n";
  return 0;
}

template <typename Scalar>
int dispatch(const std::string& command, Options& o) {
  if (command == "train") return cmd_train<Scalar>(o);
  if (command == "eval") return cmd_eval<Scalar>(o);
  if (command == "predict") return cmd_predict<Scalar>(o);
  if (command == "export") return cmd_export<Scalar>(o);
  if (command == "sweep-k") return cmd_sweep_k<Scalar>(o);
  throw ConfigError("unknown command '" + command + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PyramNet point-cloud classification and segmentation"};
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "train a model");
  add_run_flags(train, o);
  train->add_flag("--resume", o.resume, "continue from --checkpoint");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_run_flags(eval, o);
  eval->add_option("--split", o.split, "split to evaluate");

  auto* predict_cmd = app.add_subcommand("predict", "label one cloud");
  add_run_flags(predict_cmd, o);
  predict_cmd->add_option("--input", o.input, "cloud (.pcld, .txt) or mesh (.off, .obj)");
  predict_cmd->add_option("--output", o.output, "label file (default stdout)");

  auto* export_cmd = app.add_subcommand("export", "write a colored segmentation OBJ");
  add_run_flags(export_cmd, o);
  export_cmd->add_option("--input", o.input, "cloud (.pcld with labels for gt/diff)");
  export_cmd->add_option("--output", o.output, "OBJ path");
  export_cmd->add_option("--mode", o.mode, "pred | gt | diff");

  auto* convert = app.add_subcommand("convert", "mesh or text cloud to a .pcld record");
  convert->add_option("--input", o.input, "mesh (.off, .obj) or text cloud (.txt)")->required();
  convert->add_option("--output", o.output, ".pcld path")->required();
  convert->add_option("--points", o.points, "surface samples per mesh");
  convert->add_option("--label", o.label, "cloud label to store");
  convert->add_option("--task", o.task, "task tag of the record");
  convert->add_option("--seed", o.run.seed, "sampling seed");
  convert->add_option("--txt-features", o.txt_features, "leading text columns kept as attributes");
  convert->add_flag("--label-last", o.label_last, "last text column is a point label");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  gradcheck->add_option("--seed", o.run.seed, "input seed");
  gradcheck->add_flag("--ops-only", o.no_end_to_end, "skip the end-to-end model cases");

  auto* sweep = app.add_subcommand("sweep-k", "train one model per GEM k value");
  add_run_flags(sweep, o);
  sweep->add_option("--k-values", o.k_values, "comma list, e.g. 20,30,ceil_f_over_4");

  auto* synth = app.add_subcommand("make-synthetic", "write a synthetic dataset (80/20 split)");
  synth->add_option("--task", o.task, "classification | part_seg");
  synth->add_option("--data", o.run.data_root, "output root");
  synth->add_option("--classes", o.classes, "comma list of shape names");
  synth->add_option("--per-class", o.per_class, "clouds per class");
  synth->add_option("--points", o.points, "points per cloud");
  synth->add_option("--seed", o.run.seed, "generator seed");

  auto* report = app.add_subcommand("report", "summarize a JSON-lines training log");
  report->add_option("--report", o.run.report, "log path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    const std::string command = app.get_subcommands().front()->get_name();
    o.run.command = command;
    if (command == "convert") return cmd_convert(o);
    if (command == "gradcheck") return cmd_gradcheck(o);
    if (command == "make-synthetic") {
      if (o.run.data_root.empty()) {
        if (const char* env = std::getenv("PYRAMNET_DATA_DIR")) o.run.data_root = env;
      }
      return cmd_make_synthetic(o);
    }
    if (command == "report") return cmd_report(o);
    finalize(o);
    if (o.print_config) {
      std::cout << o.run.format();
      return 0;
    }
    return o.run.f64 ? dispatch<double>(command, o) : dispatch<float>(command, o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kCheckFailure);
  }
}
