// Command-line surface for the modalsurv pipeline: data prep, cross-validated
// training, ensemble inference, and C-index evaluation, all driven by one
// sectioned config file. Exit codes: 0 success, 1 validation error,
// 2 runtime/numeric error.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>

#include "modalsurv/modalsurv.hpp"

namespace {

using namespace modalsurv;
namespace fs = std::filesystem;

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::vector<std::string> resolved_modalities(const RunConfig& cfg) { return cfg.modalities; }

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

void cmd_synth(const RunConfig& cfg) {
  if (cfg.synth.modalities.empty()) {
    throw ValidationError("[synth] modalities is required for the synth command");
  }
  const SyntheticCohort gen = generate_synthetic_cohort(cfg.synth);
  const std::string raw_dir = cfg.output_dir + "/raw";

  save_labels(raw_dir + "/labels.csv", gen.cohort.records);
  for (std::size_t m = 0; m < gen.cohort.modalities.size(); ++m) {
    const ModalityTable t = table_from_cohort(gen.cohort, static_cast<Eigen::Index>(m));
    save_modality_table(raw_dir + "/" + t.name + ".csv", t);
  }
  {
    auto out = std::ofstream(raw_dir + "/oracle_risk.csv", std::ios::binary);
    out << "patient_id,oracle_risk\n";
    for (const auto& [id, risk] : gen.oracle_risk) out << id << "," << fmt_double(risk) << "\n";
  }

  std::vector<double> oracle;
  oracle.reserve(gen.cohort.records.size());
  for (const auto& r : gen.cohort.records) oracle.push_back(gen.oracle_risk.at(r.patient_id));
  const double oracle_c = c_index(oracle, gen.cohort.times(), gen.cohort.events());

  std::printf("synthetic cohort: n=%d events=%zu censored=%.0f%% oracle C=%.3f\n", cfg.synth.n,
              gen.cohort.n_events(), 100.0 * gen.realized_censor_rate, oracle_c);
  std::printf("wrote %s/{labels.csv,oracle_risk.csv", raw_dir.c_str());
  for (const auto& m : gen.cohort.modalities) std::printf(",%s.csv", m.name.c_str());
  std::printf("}\n");
}

// ---------------------------------------------------------------------------
// prep
// ---------------------------------------------------------------------------

Eigen::MatrixXd table_matrix(const ModalityTable& t) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(t.rows.size()), t.dim);
  Eigen::Index i = 0;
  for (const auto& [id, row] : t.rows) x.row(i++) = row.transpose();
  return x;
}

void cmd_prep(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> required{{"[paths] labels", cfg.labels_path}};
  for (const auto& name : resolved_modalities(cfg)) {
    if (name == "clinical" && !cfg.clinical_raw_dir.empty()) {
      required.emplace_back("[paths] clinical_raw", cfg.clinical_raw_dir);
    } else {
      const auto it = cfg.modality_files.find(name);
      required.emplace_back("[paths] modality." + name,
                            it == cfg.modality_files.end() ? "" : it->second);
    }
  }
  require_paths(required);

  const auto records = load_labels(cfg.labels_path);
  const std::string prep = cfg.prep_dir();
  fs::create_directories(prep);

  std::vector<ModalityTable> tables;
  for (const auto& name : resolved_modalities(cfg)) {
    ModalityTable table;
    std::vector<std::string> feature_names;
    if (name == "clinical" && !cfg.clinical_raw_dir.empty()) {
      const ClinicalEncoding enc = encode_clinical(load_clinical_dir(cfg.clinical_raw_dir));
      table = enc.table;
      feature_names = enc.feature_names;
      auto out = std::ofstream(prep + "/exclusions.csv", std::ios::binary);
      out << "patient_id,offending_key\n";
      for (const auto& ex : enc.excluded) out << ex.patient_id << "," << ex.key << "\n";
      std::printf("clinical: encoded %zu patients, excluded %zu (see exclusions.csv)\n",
                  table.rows.size(), enc.excluded.size());
    } else {
      table = load_modality_table(cfg.modality_files.at(name), name);
    }

    const bool reduce = cfg.pca_scope == "cohort" && cfg.pca_k > 0 &&
                        std::find(cfg.pca_modalities.begin(), cfg.pca_modalities.end(), name) !=
                            cfg.pca_modalities.end();
    if (reduce) {
      const Eigen::MatrixXd x = table_matrix(table);
      const PcaModel pca = fit_pca(x, cfg.pca_k);
      save_pca_model(prep + "/pca_" + name + ".txt", pca);
      const Eigen::MatrixXd reduced = apply_pca(pca, x);
      ModalityTable r;
      r.name = name;
      r.dim = reduced.cols();
      Eigen::Index i = 0;
      for (const auto& [id, row] : table.rows) {
        r.rows[id] = reduced.row(i++).transpose();
      }
      std::printf("%s: PCA %lld -> %lld columns (cohort scope)%s\n", name.c_str(),
                  static_cast<long long>(table.dim), static_cast<long long>(r.dim),
                  pca.rank_truncated ? " [rank-truncated]" : "");
      table = std::move(r);
      feature_names.clear();
    }

    save_modality_table(prep + "/" + name + ".csv", table,
                        feature_names.empty() ? nullptr : &feature_names);
    tables.push_back(std::move(table));
  }

  const Cohort cohort = assemble_cohort(records, tables, resolved_modalities(cfg));
  {
    std::string report;
    report += "labels: " + std::to_string(records.size()) + " patients, " +
              std::to_string(cohort.n_events()) + " events in joined cohort\n";
    for (const auto& t : tables) {
      report += "modality " + t.name + ": " + std::to_string(t.rows.size()) + " patients, dim " +
                std::to_string(t.dim) + "\n";
    }
    report += "inner join: " + std::to_string(cohort.size()) + " complete cases\n";
    report += "dropped (incomplete): " + std::to_string(cohort.dropped_patient_ids.size()) + "\n";
    for (const auto& id : cohort.dropped_patient_ids) report += "  " + id + "\n";
    write_text_file(prep + "/alignment_report.txt", report);
    std::fputs(report.c_str(), stdout);
  }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

PipelineOptions pipeline_options(const RunConfig& cfg) {
  PipelineOptions opts;
  opts.k = cfg.k;
  opts.seeds = cfg.seeds;
  opts.fold_seed = cfg.fold_seed;
  opts.workers = cfg.workers;
  if (cfg.pca_scope == "fold" && cfg.pca_k > 0) {
    opts.pca_k = cfg.pca_k;
    opts.pca_modalities = cfg.pca_modalities;
  }
  return opts;
}

void save_bundle(const RunConfig& cfg, const CvResult& cv) {
  const std::string dir = cfg.bundle_dir();
  fs::create_directories(dir);
  save_time_grid(dir + "/grid.txt", cv.grid);

  nlohmann::json manifest;
  manifest["format"] = "modalsurv-bundle-v1";
  manifest["k"] = cv.folds.k;
  manifest["seeds"] = cfg.seeds;
  manifest["bins"] = static_cast<int>(cv.grid.bins());
  manifest["embed_dim"] = cv.train_config.embed_dim;
  manifest["hidden_widths"] = cv.train_config.hidden_widths;
  manifest["grid"] = "grid.txt";
  manifest["ensemble_members"] = cfg.ensemble_members;
  {
    nlohmann::json mods = nlohmann::json::array();
    for (std::size_t m = 0; m < cv.modality_names.size(); ++m) {
      mods.push_back({{"name", cv.modality_names[m]},
                      {"model_dim", cv.transforms[0].per_modality[m].output_dim()}});
    }
    manifest["modalities"] = mods;
  }
  {
    nlohmann::json transforms = nlohmann::json::array();
    for (int f = 0; f < cv.folds.k; ++f) {
      const std::string file = "fold" + std::to_string(f) + ".transforms";
      save_fold_transforms(dir + "/" + file, cv.transforms[static_cast<std::size_t>(f)], cv.modality_names);
      transforms.push_back({{"file", file}, {"fold", f}, {"hash", hash_file(dir + "/" + file)}});
    }
    manifest["transforms"] = transforms;
  }
  {
    nlohmann::json models = nlohmann::json::array();
    for (const auto& member : cv.members) {
      const std::string file =
          "fold" + std::to_string(member.fold) + "_seed" + std::to_string(member.seed_index) + ".model";
      save_model(dir + "/" + file, member.params, cv.modality_names, member.model_seed, "grid.txt");
      models.push_back({{"file", file},
                        {"fold", member.fold},
                        {"seed_index", member.seed_index},
                        {"model_seed", member.model_seed},
                        {"val_c", member.val_c},
                        {"hash", hash_file(dir + "/" + file)}});
    }
    manifest["models"] = models;
  }
  manifest["metadata"] = {{"created", timestamp_utc()}};
  write_text_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

void cmd_train(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> required{{"[paths] labels", cfg.labels_path}};
  for (const auto& name : resolved_modalities(cfg)) {
    required.emplace_back("prep output for " + name + " (run prep first)",
                          cfg.prep_dir() + "/" + name + ".csv");
  }
  require_paths(required);

  const auto records = load_labels(cfg.labels_path);
  std::vector<ModalityTable> tables;
  for (const auto& name : resolved_modalities(cfg)) {
    tables.push_back(load_modality_table(cfg.prep_dir() + "/" + name + ".csv", name));
  }
  const Cohort cohort = assemble_cohort(records, tables, resolved_modalities(cfg));

  FoldAssignment folds;
  if (fs::exists(cfg.folds_file())) {
    folds = load_fold_assignment(cfg.folds_file());
    if (folds.k != cfg.k) {
      throw ValidationError("fold file " + cfg.folds_file() + " has k=" + std::to_string(folds.k) +
                            " but config requests k=" + std::to_string(cfg.k));
    }
    validate_fold_assignment(folds, cohort.records);
    std::printf("reusing fold assignment %s (hash %s)\n", cfg.folds_file().c_str(),
                to_hex(fold_hash(folds)).c_str());
  } else {
    folds = stratified_kfold(cohort.records, cfg.k, cfg.fold_seed);
    save_fold_assignment(cfg.folds_file(), folds);
    std::printf("wrote fold assignment %s (hash %s)\n", cfg.folds_file().c_str(),
                to_hex(fold_hash(folds)).c_str());
  }

  const PipelineOptions opts = pipeline_options(cfg);
  const CvResult cv = run_cv(cohort, cfg.train, opts, &folds);

  save_bundle(cfg, cv);
  {
    auto out = std::ofstream(cfg.output_dir + "/cv_metrics.csv", std::ios::binary);
    out << "fold,c_index\n";
    for (std::size_t f = 0; f < cv.fold_c.size(); ++f) {
      out << f << "," << fmt_double(cv.fold_c[f]) << "\n";
    }
    out << "mean," << fmt_double(cv.mean_c) << "\n";
    out << "std," << fmt_double(cv.std_c) << "\n";
  }
  for (std::size_t f = 0; f < cv.fold_c.size(); ++f) {
    std::printf("fold %zu: C=%.4f\n", f, cv.fold_c[f]);
  }
  std::printf("C-index %.3f±%.2f (k=%d, seeds=%d, %zu models)\n", cv.mean_c, cv.std_c, cv.folds.k,
              cfg.seeds, cv.members.size());

  if (!cfg.grid_subsets.empty()) {
    std::vector<std::uint64_t> hashes;
    const auto rows = modality_grid_eval(cohort, cfg.grid_subsets, cfg.train, opts, cfg.cox_baseline,
                                         &folds, &hashes, cfg.cox_ridge);
    save_results_table(cfg.output_dir + "/results.csv", rows);
    std::printf("\nmodality grid (folds hash %s):\n", to_hex(hashes.empty() ? fold_hash(folds) : hashes[0]).c_str());
    for (const auto& row : rows) {
      std::printf("  %-28s %.3f±%.2f (n_models=%d)\n", row.label.c_str(), row.mean_c, row.std_c, row.n_models);
    }
  }
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct LoadedBundle {
  CvResult cv;  // folds.k, grid, modality_names, transforms, members, train_config
};

LoadedBundle load_bundle(const std::string& dir) {
  require_paths({{"bundle manifest", dir + "/manifest.json"}});
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text_file(dir + "/manifest.json"));
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(dir + "/manifest.json: invalid JSON (" + ex.what() + ")");
  }
  if (manifest.value("format", "") != "modalsurv-bundle-v1") {
    throw ValidationError(dir + "/manifest.json: unsupported bundle format");
  }

  LoadedBundle bundle;
  bundle.cv.folds.k = manifest.at("k").get<int>();
  bundle.cv.grid = load_time_grid(dir + "/" + manifest.at("grid").get<std::string>());
  bundle.cv.train_config.time_bins = manifest.at("bins").get<int>();
  bundle.cv.train_config.embed_dim = manifest.at("embed_dim").get<int>();
  bundle.cv.train_config.hidden_widths = manifest.at("hidden_widths").get<std::vector<int>>();
  for (const auto& m : manifest.at("modalities")) {
    bundle.cv.modality_names.push_back(m.at("name").get<std::string>());
  }
  bundle.cv.transforms.resize(static_cast<std::size_t>(bundle.cv.folds.k));
  for (const auto& t : manifest.at("transforms")) {
    const int fold = t.at("fold").get<int>();
    std::vector<std::string> names;
    bundle.cv.transforms.at(static_cast<std::size_t>(fold)) =
        load_fold_transforms(dir + "/" + t.at("file").get<std::string>(), &names);
    if (names != bundle.cv.modality_names) {
      throw ValidationError(dir + ": transforms for fold " + std::to_string(fold) +
                            " do not match the manifest's modalities");
    }
  }
  std::string grid_ref;
  for (const auto& m : manifest.at("models")) {
    ModelFileData data = load_model(dir + "/" + m.at("file").get<std::string>());
    if (grid_ref.empty()) grid_ref = data.grid_ref;
    if (data.grid_ref != grid_ref) {
      throw ValidationError(dir + ": mismatched grid references across member models");
    }
    if (data.bins != bundle.cv.train_config.time_bins) {
      throw ValidationError(dir + ": member model bin count does not match bundle");
    }
    CvMember member;
    member.fold = m.at("fold").get<int>();
    member.seed_index = m.at("seed_index").get<int>();
    member.model_seed = m.at("model_seed").get<std::uint64_t>();
    member.params = std::move(data.params);
    member.val_c = m.at("val_c").get<double>();
    bundle.cv.members.push_back(std::move(member));
  }
  if (bundle.cv.members.empty()) throw ValidationError(dir + ": bundle has no models");
  return bundle;
}

void cmd_predict(const RunConfig& cfg, std::string bundle_dir, std::string features_dir,
                 std::string out_path) {
  if (bundle_dir.empty()) bundle_dir = cfg.bundle_dir();
  if (features_dir.empty()) features_dir = cfg.prep_dir();
  if (out_path.empty()) out_path = cfg.output_dir + "/predictions.csv";

  const LoadedBundle bundle = load_bundle(bundle_dir);

  std::vector<ModalityTable> tables;
  for (const auto& name : bundle.cv.modality_names) {
    require_paths({{"features for " + name, features_dir + "/" + name + ".csv"}});
    tables.push_back(load_modality_table(features_dir + "/" + name + ".csv", name));
  }

  std::set<std::string> all_ids;
  for (const auto& t : tables) {
    for (const auto& [id, row] : t.rows) all_ids.insert(id);
  }
  std::vector<std::string> incomplete;
  for (const auto& id : all_ids) {
    for (const auto& t : tables) {
      if (!t.rows.count(id)) {
        incomplete.push_back(id + " (missing " + t.name + ")");
        break;
      }
    }
  }
  if (!incomplete.empty()) {
    std::string msg = "predict: " + std::to_string(incomplete.size()) + " patient(s) missing a modality:";
    for (const auto& s : incomplete) msg += "\n  " + s;
    throw ValidationError(msg);
  }

  std::vector<const CvMember*> selected;
  for (const auto& m : bundle.cv.members) {
    if (cfg.ensemble_members == "first_seed" && m.seed_index != 0) continue;
    selected.push_back(&m);
  }
  if (selected.empty()) throw ValidationError("predict: ensemble member selection is empty");

  std::vector<PredictionRow> rows;
  for (const auto& id : all_ids) {
    std::vector<Eigen::VectorXd> raw;
    raw.reserve(tables.size());
    for (const auto& t : tables) raw.push_back(t.rows.at(id));
    const EnsembleResult res = ensemble_predict_raw(bundle.cv, raw, &selected);
    PredictionRow row;
    row.patient_id = id;
    row.expected_time_months = res.expected_time_months;
    row.risk = res.risk;
    row.survival = survival_curve(res.pmf);
    rows.push_back(std::move(row));
  }
  save_predictions(out_path, rows);
  std::printf("wrote %zu predictions (%zu ensemble members) to %s\n", rows.size(), selected.size(),
              out_path.c_str());
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

void cmd_eval(const RunConfig& cfg, std::string predictions_path) {
  if (predictions_path.empty()) predictions_path = cfg.output_dir + "/predictions.csv";
  require_paths({{"[paths] labels", cfg.labels_path}, {"predictions", predictions_path}});

  const auto records = load_labels(cfg.labels_path);
  const auto predictions = load_predictions(predictions_path);
  std::map<std::string, double> risk_of;
  for (const auto& p : predictions) risk_of[p.patient_id] = p.risk;

  std::vector<std::string> missing;
  std::vector<double> risks, times;
  std::vector<char> events;
  for (const auto& r : records) {
    const auto it = risk_of.find(r.patient_id);
    if (it == risk_of.end()) {
      missing.push_back(r.patient_id);
      continue;
    }
    risks.push_back(it->second);
    times.push_back(r.time_months);
    events.push_back(r.event ? 1 : 0);
  }
  if (!missing.empty()) {
    std::string msg = "eval: " + std::to_string(missing.size()) + " labeled patient(s) have no prediction:";
    for (const auto& id : missing) msg += "\n  " + id;
    throw ValidationError(msg);
  }

  const CIndexResult res = c_index_detail(risks, times, events);
  std::printf("C-index: %.4f (comparable pairs: %zu, n=%zu)\n", res.value, res.comparable_pairs,
              risks.size());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"modalsurv: multimodal discrete-time survival prediction"};
  app.require_subcommand(1);

  std::string config_path, bundle_dir, features_dir, out_path, predictions_path;

  auto* prep = app.add_subcommand("prep", "encode and align modality features");
  prep->add_option("-c,--config", config_path, "config file")->required();

  auto* train = app.add_subcommand("train", "stratified CV training and bundle export");
  train->add_option("-c,--config", config_path, "config file")->required();

  auto* predict = app.add_subcommand("predict", "ensemble inference from a trained bundle");
  predict->add_option("-c,--config", config_path, "config file")->required();
  predict->add_option("--bundle", bundle_dir, "bundle directory (default <output>/bundle)");
  predict->add_option("--features", features_dir, "prepared features directory (default <output>/prep)");
  predict->add_option("--out", out_path, "predictions output file (default <output>/predictions.csv)");

  auto* eval = app.add_subcommand("eval", "C-index of a predictions file against labels");
  eval->add_option("-c,--config", config_path, "config file")->required();
  eval->add_option("--predictions", predictions_path, "predictions file (default <output>/predictions.csv)");

  auto* synth = app.add_subcommand("synth", "generate a synthetic cohort with oracle risks");
  synth->add_option("-c,--config", config_path, "config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const RunConfig cfg = load_run_config(config_path);
    if (prep->parsed()) cmd_prep(cfg);
    if (train->parsed()) cmd_train(cfg);
    if (predict->parsed()) cmd_predict(cfg, bundle_dir, features_dir, out_path);
    if (eval->parsed()) cmd_eval(cfg, predictions_path);
    if (synth->parsed()) cmd_synth(cfg);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
