// servicemonitor: command-line front end for the detection pipeline.
//
//   parse      decode SMTR/JSONL traces and list resolved functions
//   featurize  traces -> Markov transition features (JSONL or SMFT)
//   gen        synthetic labeled corpus from family profiles
//   train      fit PCA + forest on a labeled feature file, write a model
//   evaluate   stratified k-fold cross-validation report
//   predict    score traces with a trained model
//
// Exit codes: 0 ok, 1 usage, 2 data/format, 3 training infeasible.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "servicemonitor/servicemonitor.hpp"

namespace fs = std::filesystem;
namespace sm = servicemonitor;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitTraining = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code_for(sm::ErrorKind kind) {
  switch (kind) {
    case sm::ErrorKind::kTraining:
    case sm::ErrorKind::kInsufficientData:
    case sm::ErrorKind::kStratification:
      return kExitTraining;
    case sm::ErrorKind::kConfig:
      return kExitUsage;
    default:
      return kExitData;
  }
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw sm::Error(sm::ErrorKind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const fs::path& path) {
  auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

void write_file(const fs::path& path, const void* data, std::size_t size) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw sm::Error(sm::ErrorKind::kIo, "cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw sm::Error(sm::ErrorKind::kIo, "failed writing " + path.string());
}

void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  write_file(path, bytes.data(), bytes.size());
}

void write_file(const fs::path& path, const std::string& text) { write_file(path, text.data(), text.size()); }

/// Writes to `path`, or stdout when it is empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_file(path, text);
  }
}

/// Files as given; directories expand to their *.smtr / *.jsonl files, sorted.
std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        const auto ext = e.path().extension();
        if (e.is_regular_file() && (ext == ".smtr" || ext == ".jsonl")) found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(p);
    }
  }
  return out;
}

std::map<std::string, sm::Label> read_labels(const fs::path& path) {
  std::map<std::string, sm::Label> out;
  std::istringstream in(read_text(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw sm::LineError(sm::ErrorKind::kParse, line_no, path.string() + ": expected app_id<TAB>label");
    auto label = sm::label_from_string(line.substr(tab + 1));
    if (!label) throw sm::LineError(sm::ErrorKind::kLabel, line_no, path.string() + ": unknown label");
    out[line.substr(0, tab)] = *label;
  }
  return out;
}

// --- configuration ----------------------------------------------------------

/// Effective settings after flags > config file > built-in defaults.
struct RunConfig {
  std::string catalog_path;  ///< empty: the built-in catalog
  std::uint64_t seed = 42;
  std::size_t pca_dims = 200;
  std::size_t trees = 500;
  std::optional<std::size_t> mtry;
  std::size_t min_leaf = 1;
  std::size_t folds = 10;
  double threshold = 0.5;
  sm::UnknownPolicy unknown_policy = sm::UnknownPolicy::kSkip;
  std::string output;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["catalog"] = catalog_path.empty() ? nlohmann::ordered_json() : nlohmann::ordered_json(catalog_path);
    j["seed"] = seed;
    j["pca_dims"] = pca_dims;
    j["trees"] = trees;
    j["mtry"] = mtry ? nlohmann::ordered_json(*mtry) : nlohmann::ordered_json();
    j["min_leaf"] = min_leaf;
    j["folds"] = folds;
    j["threshold"] = threshold;
    j["unknown_policy"] = unknown_policy == sm::UnknownPolicy::kSkip ? "skip" : "error";
    j["output"] = output;
    return j;
  }
};

/// Raw flag values; unset when the flag was not given.
struct Flags {
  std::string config_path;
  bool print_config = false;
  std::optional<std::string> catalog;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> pca_dims;
  std::optional<std::size_t> trees;
  std::optional<std::size_t> mtry;
  std::optional<std::size_t> min_leaf;
  std::optional<std::size_t> folds;
  std::optional<double> threshold;
  std::optional<std::string> unknown_policy;
  std::optional<std::string> output;
};

template <typename T>
void merge(std::optional<T>& flag, const nlohmann::json& cfg, const char* key, T& out) {
  if (flag) {
    out = *flag;
  } else if (cfg.contains(key) && !cfg[key].is_null()) {
    try {
      out = cfg[key].get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("config key '") + key + "': " + e.what());
    }
  }
}

RunConfig resolve_config(Flags& f) {
  nlohmann::json cfg = nlohmann::json::object();
  if (!f.config_path.empty()) {
    try {
      cfg = nlohmann::json::parse(read_text(f.config_path));
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("config file " + f.config_path + ": " + e.what());
    }
    if (!cfg.is_object()) throw UsageError("config file must hold a JSON object");
  }
  RunConfig rc;
  merge(f.catalog, cfg, "catalog", rc.catalog_path);
  merge(f.seed, cfg, "seed", rc.seed);
  merge(f.pca_dims, cfg, "pca_dims", rc.pca_dims);
  merge(f.trees, cfg, "trees", rc.trees);
  if (f.mtry) {
    rc.mtry = f.mtry;
  } else if (cfg.contains("mtry") && !cfg["mtry"].is_null()) {
    rc.mtry = cfg["mtry"].get<std::size_t>();
  }
  merge(f.min_leaf, cfg, "min_leaf", rc.min_leaf);
  merge(f.folds, cfg, "folds", rc.folds);
  merge(f.threshold, cfg, "threshold", rc.threshold);
  std::string policy = "skip";
  merge(f.unknown_policy, cfg, "unknown_policy", policy);
  if (policy == "skip") {
    rc.unknown_policy = sm::UnknownPolicy::kSkip;
  } else if (policy == "error") {
    rc.unknown_policy = sm::UnknownPolicy::kError;
  } else {
    throw UsageError("unknown_policy must be 'skip' or 'error'");
  }
  merge(f.output, cfg, "output", rc.output);

  if (rc.pca_dims == 0 || rc.trees == 0 || rc.min_leaf == 0 || rc.folds == 0 || (rc.mtry && *rc.mtry == 0)) {
    throw UsageError("numeric settings must be positive");
  }
  if (!(rc.threshold >= 0.0 && rc.threshold <= 1.0)) throw UsageError("threshold must lie in [0, 1]");
  return rc;
}

sm::ServiceCatalog load_catalog_for(const RunConfig& rc) {
  if (rc.catalog_path.empty()) return sm::default_catalog();
  std::istringstream in(read_text(rc.catalog_path));
  try {
    return sm::load_catalog(in);
  } catch (const sm::Error& e) {
    throw sm::Error(e.kind(), rc.catalog_path + ": " + e.what());
  }
}

sm::PipelineParams pipeline_params(const RunConfig& rc) {
  sm::PipelineParams p;
  p.pca_dims = rc.pca_dims;
  p.forest.tree_count = rc.trees;
  p.forest.mtry = rc.mtry;
  p.forest.min_leaf = rc.min_leaf;
  p.threshold = rc.threshold;
  return p;
}

sm::FunctionTrace load_trace(const fs::path& path, const sm::ServiceCatalog& catalog, sm::UnknownPolicy policy) {
  try {
    const auto records = sm::parse_trace(read_file(path));
    return sm::resolve_events(records, catalog, policy, path.stem().string());
  } catch (const sm::Error& e) {
    throw sm::Error(e.kind(), path.string() + ": " + e.what());
  }
}

std::vector<sm::FeatureVector> load_features(const std::string& path) {
  try {
    return sm::read_features(read_file(path));
  } catch (const sm::Error& e) {
    throw sm::Error(e.kind(), path + ": " + e.what());
  }
}

nlohmann::ordered_json matrix_json(const sm::RowMatrix& m) {
  auto rows = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return rows;
}

// --- subcommands ------------------------------------------------------------

struct ParseArgs {
  std::vector<std::string> inputs;
  bool markov_json = false;
};

int cmd_parse(const RunConfig& rc, const ParseArgs& a) {
  const auto catalog = load_catalog_for(rc);
  std::string out;
  for (const auto& path : expand_inputs(a.inputs)) {
    const auto trace = load_trace(path, catalog, rc.unknown_policy);
    if (a.markov_json) {
      const auto model = sm::build_model(trace, catalog);
      nlohmann::ordered_json j;
      j["app_id"] = trace.app_id;
      j["state_count"] = model.state_count;
      j["fv"] = matrix_json(model.fv);
      j["probabilities"] = matrix_json(model.probabilities);
      out += j.dump() + "\n";
      continue;
    }
    for (std::size_t i = 0; i < trace.events.size(); ++i) {
      const auto& f = catalog[trace.events[i]];
      out += trace.app_id + "\t" + std::to_string(i) + "\t" + f.interface_token + "\t" + f.function_name + "\n";
    }
  }
  emit(rc.output, out);
  return kExitOk;
}

struct FeaturizeArgs {
  std::vector<std::string> inputs;
  std::string labels;
  std::string format = "jsonl";
};

int cmd_featurize(const RunConfig& rc, const FeaturizeArgs& a) {
  const auto catalog = load_catalog_for(rc);
  std::map<std::string, sm::Label> labels;
  if (!a.labels.empty()) labels = read_labels(a.labels);
  const auto paths = expand_inputs(a.inputs);
  std::vector<sm::FeatureVector> vectors(paths.size());
  sm::parallel_for(paths.size(), [&](std::size_t i) {
    auto trace = load_trace(paths[i], catalog, rc.unknown_policy);
    if (auto it = labels.find(trace.app_id); it != labels.end()) trace.label = it->second;
    vectors[i] = sm::featurize(trace, catalog);
  });
  if (a.format == "binary") {
    sm::DatasetMatrix data{std::move(vectors), catalog.content_digest()};
    if (rc.output.empty() || rc.output == "-") throw UsageError("--format binary needs --out FILE");
    write_file(rc.output, sm::write_features_binary(data));
  } else {
    emit(rc.output, sm::write_features_jsonl(vectors));
  }
  return kExitOk;
}

struct GenArgs {
  std::string profiles = "default";
  std::optional<std::size_t> count;
  std::optional<std::size_t> per_profile;
  std::string format = "smtr";
  std::string dump_profiles;
};

int cmd_gen(const RunConfig& rc, const GenArgs& a) {
  const auto catalog = load_catalog_for(rc);
  const auto profiles =
      a.profiles == "default" ? sm::default_profiles(catalog) : sm::profiles_from_json(read_text(a.profiles));
  if (!a.dump_profiles.empty()) {
    write_file(a.dump_profiles, sm::profiles_to_json(profiles));
    if (!a.count && !a.per_profile) return kExitOk;
  }
  if (a.count.has_value() == a.per_profile.has_value()) throw UsageError("give exactly one of --count or --per-profile");
  if (rc.output.empty()) throw UsageError("gen needs --out DIR");
  const auto corpus = a.count ? sm::gen_corpus(profiles, catalog, *a.count, rc.seed)
                              : sm::gen_per_profile(profiles, catalog, *a.per_profile, rc.seed);
  const fs::path dir(rc.output);
  fs::create_directories(dir);
  std::string manifest = "# app_id\tlabel\n";
  for (const auto& t : corpus) {
    if (a.format == "jsonl") {
      write_file(dir / (t.app_id + ".jsonl"), sm::write_trace_jsonl(t.records));
    } else {
      write_file(dir / (t.app_id + ".smtr"), sm::write_trace(t.records));
    }
    manifest += t.app_id + "\t" + std::string(sm::to_string(t.label)) + "\n";
  }
  write_file(dir / "labels.tsv", manifest);
  return kExitOk;
}

struct TrainArgs {
  std::string features;
  std::optional<std::uint64_t> timestamp;
};

std::uint64_t training_timestamp(const TrainArgs& a) {
  if (a.timestamp) return *a.timestamp;
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH"); env != nullptr && *env != '\0') {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError("SOURCE_DATE_EPOCH is not an integer");
    }
  }
  return 0;
}

int cmd_train(const RunConfig& rc, const TrainArgs& a) {
  if (rc.output.empty()) throw UsageError("train needs --out MODEL");
  const auto data = sm::assemble(load_features(a.features));
  const auto bundle = sm::train_bundle(data, pipeline_params(rc), rc.seed, training_timestamp(a));
  write_file(rc.output, sm::save_model(bundle));
  std::cerr << "trained " << bundle.forest.tree_count() << " trees on " << data.size() << " samples, "
            << bundle.pca.k() << " components\n";
  return kExitOk;
}

struct EvaluateArgs {
  std::string features;
  std::string roc_csv;
  bool table = false;
  bool global_pca = false;
  bool per_fold_auc = false;
};

int cmd_evaluate(const RunConfig& rc, const EvaluateArgs& a) {
  const auto data = sm::assemble(load_features(a.features));
  auto params = pipeline_params(rc);
  params.global_pca = a.global_pca;
  params.per_fold_auc = a.per_fold_auc;
  const auto report = sm::cross_validate(data, params, rc.folds, rc.seed);
  if (!a.roc_csv.empty()) write_file(a.roc_csv, sm::roc_csv(report));
  const std::string json = sm::to_json(report).dump(2) + "\n";
  if (a.table) {
    std::cout << sm::format_table(report);
    if (!rc.output.empty() && rc.output != "-") write_file(rc.output, json);
  } else {
    emit(rc.output, json);
  }
  return kExitOk;
}

struct PredictArgs {
  std::string model;
  std::vector<std::string> inputs;
  std::optional<double> threshold;
};

int cmd_predict(const RunConfig& rc, const PredictArgs& a) {
  const auto catalog = load_catalog_for(rc);
  sm::ModelBundle bundle;
  try {
    bundle = sm::load_model(read_file(a.model), &catalog.content_digest());
  } catch (const sm::Error& e) {
    throw sm::Error(e.kind(), a.model + ": " + e.what());
  }
  const double threshold = a.threshold.value_or(bundle.threshold);
  std::string out;
  for (const auto& path : expand_inputs(a.inputs)) {
    const auto v = sm::featurize(load_trace(path, catalog, rc.unknown_policy), catalog);
    const double score = sm::score_vector(bundle, v);
    const auto label = score > threshold ? sm::Label::kMalicious : sm::Label::kBenign;
    out += v.app_id + "\t" + nlohmann::json(score).dump() + "\t" + std::string(sm::to_string(label)) + "\n";
  }
  emit(rc.output, out);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Markov-chain behavioral malware detection over Binder transaction logs"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Flags flags;
  app.add_option("--config", flags.config_path, "JSON config file (flags override it)")->check(CLI::ExistingFile);
  app.add_flag("--print-config", flags.print_config, "Print the effective config as JSON and exit");
  app.add_option("--catalog", flags.catalog, "Service catalog TSV (default: built-in catalog)");
  app.add_option("--seed", flags.seed, "Master random seed (default 42)");
  app.add_option("--unknown-policy", flags.unknown_policy, "Unknown (interface, code) pairs: skip | error")
      ->check(CLI::IsMember({"skip", "error"}));

  auto add_model_flags = [&](CLI::App* sub) {
    sub->add_option("--pca-dims", flags.pca_dims, "PCA components, clamped to data rank (default 200)");
    sub->add_option("--trees", flags.trees, "Trees in the forest (default 500)");
    sub->add_option("--mtry", flags.mtry, "Features tried per split (default floor(sqrt(k)))");
    sub->add_option("--min-leaf", flags.min_leaf, "Minimum samples per leaf (default 1)");
    sub->add_option("--threshold", flags.threshold, "Malicious iff score > threshold (default 0.5)");
  };

  ParseArgs parse_args;
  auto* parse = app.add_subcommand("parse", "Decode traces and list resolved functions in order");
  parse->add_option("inputs", parse_args.inputs, "Trace files or directories")->required();
  parse->add_flag("--markov-json", parse_args.markov_json, "Dump fv and probability matrices as JSON lines");
  parse->add_option("--out,-o", flags.output, "Output file (default stdout)");

  FeaturizeArgs featurize_args;
  auto* featurize = app.add_subcommand("featurize", "Traces to flattened Markov transition features");
  featurize->add_option("inputs", featurize_args.inputs, "Trace files or directories")->required();
  featurize->add_option("--labels", featurize_args.labels, "TSV manifest: app_id<TAB>benign|malicious");
  featurize->add_option("--format", featurize_args.format, "jsonl | binary")->check(CLI::IsMember({"jsonl", "binary"}));
  featurize->add_option("--out,-o", flags.output, "Output file (default stdout)");

  GenArgs gen_args;
  auto* gen = app.add_subcommand("gen", "Generate a labeled synthetic trace corpus");
  gen->add_option("--profiles", gen_args.profiles, "Profile JSON, or 'default' for the shipped profiles");
  gen->add_option("--count", gen_args.count, "Traces to draw, profile picked by weight");
  gen->add_option("--per-profile", gen_args.per_profile, "Exactly this many traces from each profile");
  gen->add_option("--format", gen_args.format, "smtr | jsonl")->check(CLI::IsMember({"smtr", "jsonl"}));
  gen->add_option("--dump-profiles", gen_args.dump_profiles, "Write the resolved profiles as JSON to this file");
  gen->add_option("--out,-o", flags.output, "Output directory");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Fit PCA + random forest and write a model file");
  train->add_option("features", train_args.features, "Labeled feature file (JSONL or SMFT)")->required();
  train->add_option("--timestamp", train_args.timestamp, "Training timestamp to record (default SOURCE_DATE_EPOCH or 0)");
  train->add_option("--out,-o", flags.output, "Model output file")->required();
  add_model_flags(train);

  EvaluateArgs eval_args;
  auto* evaluate = app.add_subcommand("evaluate", "Stratified k-fold cross-validation");
  evaluate->add_option("features", eval_args.features, "Labeled feature file (JSONL or SMFT)")->required();
  evaluate->add_option("--folds", flags.folds, "Number of folds (default 10)");
  evaluate->add_option("--roc-csv", eval_args.roc_csv, "Write pooled ROC points as CSV");
  evaluate->add_flag("--table", eval_args.table, "Print a human-readable table instead of JSON");
  evaluate->add_flag("--global-pca", eval_args.global_pca, "Fit PCA once on all rows instead of per fold");
  evaluate->add_flag("--per-fold-auc", eval_args.per_fold_auc, "Report the mean per-fold AUC");
  evaluate->add_option("--out,-o", flags.output, "Report JSON file (default stdout)");
  add_model_flags(evaluate);

  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "Score traces with a trained model");
  predict->add_option("--model,-m", predict_args.model, "Model file")->required();
  predict->add_option("inputs", predict_args.inputs, "Trace files or directories")->required();
  predict->add_option("--threshold", predict_args.threshold, "Override the model's decision threshold");
  predict->add_option("--out,-o", flags.output, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const RunConfig rc = resolve_config(flags);
    if (flags.print_config) {
      std::cout << rc.to_json().dump(2) << "\n";
      return kExitOk;
    }
    if (parse->parsed()) return cmd_parse(rc, parse_args);
    if (featurize->parsed()) return cmd_featurize(rc, featurize_args);
    if (gen->parsed()) return cmd_gen(rc, gen_args);
    if (train->parsed()) return cmd_train(rc, train_args);
    if (evaluate->parsed()) return cmd_evaluate(rc, eval_args);
    if (predict->parsed()) return cmd_predict(rc, predict_args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const sm::Error& e) {
    std::cerr << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
