// rforge: phantom data, classifier and mask-generator training, relevance
// maps, evaluation and slice export as subcommands.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "rforge/rforge.hpp"

namespace fs = std::filesystem;
using namespace rforge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitMissingInput = 3;
constexpr int kExitFormat = 4;
constexpr int kExitDivergence = 5;
constexpr int kExitDegenerate = 6;
constexpr int kExitOther = 1;

constexpr const char* kExitCodeHelp =
    "Exit codes: 0 ok, 2 config error, 3 missing input, 4 format error, 5 training divergence, "
    "6 degenerate relevance map, 1 other failure.\n"
    "Errors are reported on stderr as one line: error[<category>]: <message>.\n"
    "RELEVANCE_FORGE_SEED, when set, overrides the config 'seed'.";

constexpr const char* kResolvedConfig = "config.resolved.cfg";

int exit_code_for(const std::string& category) {
  if (category == "config") return kExitConfig;
  if (category == "missing-input") return kExitMissingInput;
  if (category == "format" || category == "dimension") return kExitFormat;
  if (category == "divergence") return kExitDivergence;
  if (category == "degenerate-map") return kExitDegenerate;
  return kExitOther;
}

std::string keys_help(const std::vector<std::string>& prefixes) {
  std::string out = "Config keys read:\n";
  for (const auto& k : config_keys()) {
    const std::string key = k.key;
    bool match = false;
    for (const auto& p : prefixes) match = match || key == p || key.rfind(p + ".", 0) == 0;
    if (!match) continue;
    out += "  " + key + " (default " + k.default_value + "): " + k.help + "\n";
  }
  return out;
}

struct Common {
  std::string config;
  std::string out;
};

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : RunConfig::load(c.config);
  cfg.apply_env();
  return cfg;
}

fs::path prepare_out(const Common& c) {
  if (c.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(c.out);
  return c.out;
}

fs::path require_input(const std::string& path, const std::string& what) {
  if (path.empty()) throw MissingInputError(what + " path not given");
  if (!fs::exists(path)) throw MissingInputError(what + " not found: " + path);
  return path;
}

void log(const std::string& line) { std::cerr << line << std::endl; }

// --- subcommands ------------------------------------------------------------

void gen_data(const Common& c) {
  const RunConfig cfg = resolve(c);
  const PhantomSpec spec = cfg.phantom();
  const auto fractions = cfg.split_fractions();
  const fs::path out = prepare_out(c);
  const auto cases = generate(spec);
  std::vector<int> labels;
  for (const auto& pc : cases) labels.push_back(pc.label);
  const DatasetSplit s = split(labels, fractions, cfg.split_seed());
  write_dataset(cases, s, out);
  cfg.write(out / kResolvedConfig);
  log("wrote " + std::to_string(cases.size()) + " cases (train " + std::to_string(s.train.size()) + ", val " +
      std::to_string(s.val.size()) + ", test " + std::to_string(s.test.size()) + ") to " + out.string());
}

void train_classifier_cmd(const Common& c, const std::string& data) {
  const RunConfig cfg = resolve(c);
  const ClassifierSpec spec = cfg.classifier();
  const TrainConfig tc = cfg.classifier_training();
  require_input(data, "dataset");
  const fs::path out = prepare_out(c);
  const LoadedSplit train = load_split(data, SplitPart::kTrain, spec.dims);
  const LoadedSplit val = load_split(data, SplitPart::kVal, spec.dims);
  const auto ts = train.samples(), vs = val.samples();
  auto run = train_classifier<float>(ts, vs, spec, tc, [](const EpochMetrics& m) {
    log("classifier epoch " + std::to_string(m.epoch) + " train_loss " + std::to_string(m.train_loss) +
        " val_auc " + std::to_string(m.val_metric));
  });
  save_params(run.best, out / "classifier.rnet");
  std::ofstream mt(out / "classifier_metrics.tsv");
  write_metrics_tsv(run.metrics, mt, "val_bce");
  cfg.write(out / kResolvedConfig);
  log("best epoch " + std::to_string(run.best_epoch) + " val_auc " +
      std::to_string(run.metrics[run.best_epoch].val_metric) + " (lr " + cfg.get("classifier.lr") + ")");
}

void train_generator_cmd(const Common& c, const std::string& data, const std::string& classifier_path) {
  const RunConfig cfg = resolve(c);
  const GeneratorSpec spec = cfg.generator();
  const TrainConfig tc = cfg.generator_training();
  const LossConfig lc = cfg.loss();
  require_input(data, "dataset");
  const auto classifier = load_params(require_input(classifier_path, "classifier"), "classifier");
  const fs::path out = prepare_out(c);
  const LoadedSplit train = load_split(data, SplitPart::kTrain, spec.dims);
  const LoadedSplit val = load_split(data, SplitPart::kVal, spec.dims);
  const auto ts = train.samples(), vs = val.samples();
  auto run = train_generator<float>(ts, vs, classifier, spec, tc, lc, [](const EpochMetrics& m) {
    log("generator epoch " + std::to_string(m.epoch) + " train_loss " + std::to_string(m.train_loss) +
        " val_loss " + std::to_string(m.val_metric) + " val_gap " + std::to_string(m.val_aux));
  });
  save_params(run.best, out / "generator.rnet");
  std::ofstream mt(out / "generator_metrics.tsv");
  write_metrics_tsv(run.metrics, mt, "val_gap");
  std::ofstream st(out / "generator_steps.tsv");
  st << kBreakdownHeader;
  for (std::size_t i = 0; i < run.steps.size(); ++i) write_breakdown_row(st, i + 1, run.steps[i]);
  cfg.write(out / kResolvedConfig);
  log("best epoch " + std::to_string(run.best_epoch) + " val_loss " +
      std::to_string(run.metrics[run.best_epoch].val_metric) + " (lr " + cfg.get("generator.lr") + ")");
}

void relevance_cmd(const Common& c, const std::string& generator_path, const std::string& input) {
  const RunConfig cfg = resolve(c);
  const RelevanceConfig rc = cfg.relevance();
  const Dims dims = cfg.dims("data.dims");
  const auto generator = load_params(require_input(generator_path, "generator"), "generator");
  const Volume v = preprocess(read_volume(require_input(input, "input volume")), dims);
  const PerturbationMask mask = generate_mask(generator, v);
  const RelevanceMap rm = generate_relevance(v, mask, rc);
  const fs::path out = prepare_out(c);
  write_volume(mask.values(), out / "mask.rvol");
  write_relevance(rm, out);
  cfg.write(out / kResolvedConfig);
  log("wrote relevance map (" + std::to_string(rm.bins) + " bins) to " + out.string());
}

void evaluate_cmd(const Common& c, const std::string& data, const std::string& classifier_path,
                  const std::string& generator_path, const std::string& split_name, unsigned workers) {
  const RunConfig cfg = resolve(c);
  const RelevanceConfig rc = cfg.relevance();
  const Dims dims = cfg.dims("data.dims");
  require_input(data, "dataset");
  const auto classifier = load_params(require_input(classifier_path, "classifier"), "classifier");
  const auto generator = load_params(require_input(generator_path, "generator"), "generator");
  const LoadedSplit part = load_split(data, parse_split_part(split_name), dims, true);
  std::vector<EvalCase> cases;
  for (std::size_t i = 0; i < part.volumes.size(); ++i)
    cases.push_back({case_stem(part.index[i]), part.volumes[i], part.truths[i]});
  const EvalReport rep = evaluate_dataset(cases, generator, classifier, rc, workers);
  const fs::path out = prepare_out(c);
  std::ofstream os(out / "report.tsv");
  write_report_tsv(rep, os);
  if (!os) throw FormatError("failed writing report.tsv");
  cfg.write(out / kResolvedConfig);
  print_report_table(rep, std::cout, rep.bins);
}

void export_slices_cmd(const Common& c, const std::string& input, const std::string& axis_name,
                       std::optional<std::uint32_t> index) {
  const Volume v = read_volume(require_input(input, "input volume"));
  const int axis = axis_name == "z" ? 0 : axis_name == "y" ? 1 : axis_name == "x" ? 2 : -1;
  if (axis < 0) throw ConfigError("--axis must be z, y or x");
  const std::uint32_t at = index.value_or(v.dims()[axis] / 2);
  if (at >= v.dims()[axis]) throw ConfigError("--index out of range for dims " + to_string(v.dims()));
  const fs::path out = prepare_out(c);
  const std::string stem = fs::path(input).stem().string();
  for (std::uint32_t ch = 0; ch < v.channels(); ++ch) {
    const auto name = stem + "_c" + std::to_string(ch) + "_" + axis_name + std::to_string(at) + ".pgm";
    write_pgm(extract_slice(v, ch, axis, at), out / name);
  }
  log("wrote " + std::to_string(v.channels()) + " slice(s) to " + out.string());
}

}  // namespace

int main(int argc, char** argv) {
  enable_flush_to_zero();
  CLI::App app{"Relevance maps for 3D volume classifiers from a learned perturbation-mask generator."};
  app.footer(kExitCodeHelp);
  app.require_subcommand(1);

  Common common;
  const auto add_common = [&](CLI::App* sub, bool with_config = true) {
    if (with_config) sub->add_option("--config", common.config, "key=value config file (defaults apply otherwise)");
    sub->add_option("--out", common.out, "output directory");
  };

  std::string data, classifier_path, generator_path, input, split_name = "test", axis = "z";
  unsigned workers = 1;
  std::optional<std::uint32_t> index;

  auto* gen = app.add_subcommand("gen-data", "generate the phantom dataset and its split");
  add_common(gen);
  gen->footer(keys_help({"seed", "data"}));

  auto* tc = app.add_subcommand("train-classifier", "train the volume classifier; keeps the best-validation-AUC epoch");
  add_common(tc);
  tc->add_option("--data", data, "dataset directory from gen-data");
  tc->footer(keys_help({"seed", "data.dims", "data.channels", "classifier"}));

  auto* tg = app.add_subcommand("train-generator", "train the mask generator against a frozen classifier");
  add_common(tg);
  tg->add_option("--data", data, "dataset directory from gen-data");
  tg->add_option("--classifier", classifier_path, "classifier.rnet");
  tg->footer(keys_help({"seed", "data.dims", "data.channels", "generator", "loss"}));

  auto* rel = app.add_subcommand("relevance", "relevance map for one volume");
  add_common(rel);
  rel->add_option("--generator", generator_path, "generator.rnet");
  rel->add_option("--input", input, "input .rvol volume");
  rel->footer(keys_help({"data.dims", "slic", "relevance"}));

  auto* ev = app.add_subcommand("evaluate", "DSC of the relevance maps and the blank-perturbation baseline");
  add_common(ev);
  ev->add_option("--data", data, "dataset directory from gen-data");
  ev->add_option("--classifier", classifier_path, "classifier.rnet");
  ev->add_option("--generator", generator_path, "generator.rnet");
  ev->add_option("--split", split_name, "train, val or test")->capture_default_str();
  ev->add_option("--workers", workers, "parallel cases (1 keeps everything serial)")->capture_default_str();
  ev->footer(keys_help({"data.dims", "slic", "relevance"}));

  auto* ex = app.add_subcommand("export-slices", "grayscale PGM slices of a volume, one per channel");
  add_common(ex, false);
  ex->add_option("--input", input, "input .rvol volume");
  ex->add_option("--axis", axis, "z, y or x")->capture_default_str();
  ex->add_option("--index", index, "slice index (default: middle)");
  ex->footer("Config keys read: none");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << e.what() << std::endl;
    return kExitConfig;
  }

  try {
    if (*gen) gen_data(common);
    else if (*tc) train_classifier_cmd(common, data);
    else if (*tg) train_generator_cmd(common, data, classifier_path);
    else if (*rel) relevance_cmd(common, generator_path, input);
    else if (*ev) evaluate_cmd(common, data, classifier_path, generator_path, split_name, workers);
    else if (*ex) export_slices_cmd(common, input, axis, index);
  } catch (const Error& e) {
    std::cerr << "error[" << e.category() << "]: " << e.what() << std::endl;
    return exit_code_for(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << std::endl;
    return kExitOther;
  }
  return kExitOk;
}
