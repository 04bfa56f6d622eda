#ifndef MODALSURV_CONFIG_HPP
#define MODALSURV_CONFIG_HPP

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "modalsurv/common.hpp"
#include "modalsurv/deephit.hpp"
#include "modalsurv/io.hpp"
#include "modalsurv/pipeline.hpp"

namespace modalsurv {

// A single sectioned key-value config file drives every command; flags only
// select the config and the command, which keeps 50-run experiments
// reproducible from one artifact. Unknown sections and keys are rejected and
// all problems are reported at once.
struct RunConfig {
  // [paths]
  std::string labels_path;
  std::string clinical_raw_dir;
  std::string output_dir;
  std::map<std::string, std::string> modality_files;

  // [run]
  std::string task = "custom";  // task1 | task3 | custom
  std::vector<std::string> modalities;
  int k = 5;
  int seeds = 10;
  std::uint64_t fold_seed = 42;
  int pca_k = 0;
  std::vector<std::string> pca_modalities;
  std::string pca_scope = "fold";  // fold | cohort
  std::vector<std::vector<std::string>> grid_subsets;
  std::optional<std::string> cox_baseline;
  double cox_ridge = 0.0;
  std::string ensemble_members = "all";  // all | first_seed
  int workers = 1;

  // [train]
  TrainConfig train;

  // [synth]
  SyntheticSpec synth;

  std::string prep_dir() const { return output_dir + "/prep"; }
  std::string bundle_dir() const { return output_dir + "/bundle"; }
  std::string folds_file() const { return output_dir + "/folds.csv"; }
};

namespace config_detail {

struct Entry {
  std::string key;
  std::string value;
  std::size_t line;
};

inline const std::set<std::string>& known_keys(const std::string& section) {
  static const std::map<std::string, std::set<std::string>> schema = {
      {"paths", {"labels", "clinical_raw", "output"}},  // plus modality.<name>
      {"run",
       {"task", "modalities", "k", "seeds", "fold_seed", "pca_k", "pca_modalities", "pca_scope",
        "grid_subsets", "cox_baseline", "cox_ridge", "ensemble_members", "workers"}},
      {"train",
       {"learning_rate", "time_bins", "dropout", "l2_projection", "alpha_rank", "sigma_rank",
        "max_epochs", "patience", "hidden_widths", "embed_dim", "seed"}},
      {"synth",
       {"n", "censor_rate", "seed", "latent_dim", "linear_strength", "interaction_strength",
        "time_scale_months", "modalities"}},
  };
  static const std::set<std::string> empty;
  const auto it = schema.find(section);
  return it == schema.end() ? empty : it->second;
}

inline std::vector<std::string> parse_name_list(const std::string& value) {
  std::vector<std::string> out;
  for (const auto& part : split(value, ',')) {
    const std::string name = trim(part);
    if (!name.empty()) out.push_back(name);
  }
  return out;
}

}  // namespace config_detail

inline RunConfig load_run_config(const std::string& path) {
  const auto lines = io_detail::read_lines(path);
  std::vector<std::string> errors;
  auto err = [&](std::size_t line, const std::string& msg) {
    errors.push_back(path + ":" + std::to_string(line) + ": " + msg);
  };

  std::map<std::string, std::vector<config_detail::Entry>> sections;
  std::string current;
  bool skipping_unknown_section = false;
  bool saw_section = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string line = trim(lines[i]);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        err(i + 1, "malformed section header");
        skipping_unknown_section = true;
        continue;
      }
      current = trim(line.substr(1, line.size() - 2));
      saw_section = true;
      skipping_unknown_section = config_detail::known_keys(current).empty() && current != "paths";
      if (skipping_unknown_section) {
        err(i + 1, "unknown section [" + current + "]");
      } else {
        sections[current];
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      err(i + 1, "expected 'key = value'");
      continue;
    }
    if (!saw_section) {
      err(i + 1, "key outside of any section");
      continue;
    }
    if (skipping_unknown_section) continue;
    sections[current].push_back({trim(line.substr(0, eq)), trim(line.substr(eq + 1)), i + 1});
  }

  RunConfig cfg;
  auto get = [&](const std::string& section, const std::string& key) -> const config_detail::Entry* {
    const auto sit = sections.find(section);
    if (sit == sections.end()) return nullptr;
    const config_detail::Entry* found = nullptr;
    for (const auto& e : sit->second) {
      if (e.key == key) found = &e;
    }
    return found;
  };
  auto get_double = [&](const std::string& section, const std::string& key, double& target) {
    if (const auto* e = get(section, key)) {
      if (!parse_double(e->value, target)) err(e->line, key + ": expected a number, got '" + e->value + "'");
    }
  };
  auto get_int = [&](const std::string& section, const std::string& key, int& target) {
    if (const auto* e = get(section, key)) {
      long long v = 0;
      if (!parse_long(e->value, v)) {
        err(e->line, key + ": expected an integer, got '" + e->value + "'");
      } else {
        target = static_cast<int>(v);
      }
    }
  };
  auto get_u64 = [&](const std::string& section, const std::string& key, std::uint64_t& target) {
    if (const auto* e = get(section, key)) {
      long long v = 0;
      if (!parse_long(e->value, v) || v < 0) {
        err(e->line, key + ": expected a nonnegative integer, got '" + e->value + "'");
      } else {
        target = static_cast<std::uint64_t>(v);
      }
    }
  };

  // unknown keys, all at once
  for (const auto& [section, entries] : sections) {
    const auto& known = config_detail::known_keys(section);
    for (const auto& e : entries) {
      if (section == "paths" && e.key.rfind("modality.", 0) == 0) {
        const std::string name = e.key.substr(9);
        if (name.empty()) {
          err(e.line, "modality key needs a name: modality.<name>");
        } else {
          cfg.modality_files[name] = e.value;
        }
        continue;
      }
      if (!known.count(e.key)) err(e.line, "unknown key '" + e.key + "' in section [" + section + "]");
    }
  }

  if (const auto* e = get("paths", "labels")) cfg.labels_path = e->value;
  if (const auto* e = get("paths", "clinical_raw")) cfg.clinical_raw_dir = e->value;
  if (const auto* e = get("paths", "output")) cfg.output_dir = e->value;

  if (const auto* e = get("run", "task")) {
    cfg.task = e->value;
    if (cfg.task != "task1" && cfg.task != "task3" && cfg.task != "custom") {
      err(e->line, "task must be task1, task3 or custom");
    }
  }
  if (cfg.task == "task1") {
    cfg.modalities = {"clinical", "mri", "wsi"};
  } else if (cfg.task == "task3") {
    cfg.modalities = {"clinical", "rna", "wsi"};
    cfg.pca_modalities = {"rna"};
  }
  if (const auto* e = get("run", "modalities")) cfg.modalities = config_detail::parse_name_list(e->value);
  if (const auto* e = get("run", "pca_modalities")) cfg.pca_modalities = config_detail::parse_name_list(e->value);
  get_int("run", "k", cfg.k);
  get_int("run", "seeds", cfg.seeds);
  get_u64("run", "fold_seed", cfg.fold_seed);
  get_int("run", "pca_k", cfg.pca_k);
  get_int("run", "workers", cfg.workers);
  get_double("run", "cox_ridge", cfg.cox_ridge);
  if (const auto* e = get("run", "pca_scope")) {
    cfg.pca_scope = e->value;
    if (cfg.pca_scope != "fold" && cfg.pca_scope != "cohort") err(e->line, "pca_scope must be fold or cohort");
  }
  if (const auto* e = get("run", "ensemble_members")) {
    cfg.ensemble_members = e->value;
    if (cfg.ensemble_members != "all" && cfg.ensemble_members != "first_seed") {
      err(e->line, "ensemble_members must be all or first_seed");
    }
  }
  if (const auto* e = get("run", "cox_baseline")) cfg.cox_baseline = e->value;
  if (const auto* e = get("run", "grid_subsets")) {
    for (const auto& group : split(e->value, ';')) {
      const auto names = config_detail::parse_name_list(group);
      if (!names.empty()) cfg.grid_subsets.push_back(names);
    }
    if (cfg.grid_subsets.empty()) err(e->line, "grid_subsets is empty");
  }

  get_double("train", "learning_rate", cfg.train.learning_rate);
  get_int("train", "time_bins", cfg.train.time_bins);
  get_double("train", "dropout", cfg.train.dropout);
  get_double("train", "l2_projection", cfg.train.l2_projection);
  get_double("train", "alpha_rank", cfg.train.alpha_rank);
  get_double("train", "sigma_rank", cfg.train.sigma_rank);
  get_int("train", "max_epochs", cfg.train.max_epochs);
  get_int("train", "patience", cfg.train.patience);
  get_int("train", "embed_dim", cfg.train.embed_dim);
  get_u64("train", "seed", cfg.train.seed);
  if (const auto* e = get("train", "hidden_widths")) {
    cfg.train.hidden_widths.clear();
    for (const auto& part : config_detail::parse_name_list(e->value)) {
      long long v = 0;
      if (!parse_long(part, v) || v < 1) {
        err(e->line, "hidden_widths: expected positive integers, got '" + part + "'");
      } else {
        cfg.train.hidden_widths.push_back(static_cast<int>(v));
      }
    }
  }

  get_int("synth", "n", cfg.synth.n);
  get_double("synth", "censor_rate", cfg.synth.censor_rate);
  get_u64("synth", "seed", cfg.synth.seed);
  get_int("synth", "latent_dim", cfg.synth.latent_dim);
  get_double("synth", "linear_strength", cfg.synth.linear_strength);
  get_double("synth", "interaction_strength", cfg.synth.interaction_strength);
  get_double("synth", "time_scale_months", cfg.synth.time_scale_months);
  if (const auto* e = get("synth", "modalities")) {
    // name:dim:signal|noise[:noise_sd]
    for (const auto& part : config_detail::parse_name_list(e->value)) {
      const auto fields = split(part, ':');
      if (fields.size() < 3 || fields.size() > 4) {
        err(e->line, "synth modality must be name:dim:signal|noise[:noise_sd], got '" + part + "'");
        continue;
      }
      SyntheticModality m;
      m.name = trim(fields[0]);
      long long dim = 0;
      if (m.name.empty() || !parse_long(fields[1], dim) || dim < 1) {
        err(e->line, "bad synth modality '" + part + "'");
        continue;
      }
      m.dim = static_cast<int>(dim);
      const std::string role = trim(fields[2]);
      if (role == "signal") {
        m.signal = true;
      } else if (role == "noise") {
        m.signal = false;
      } else {
        err(e->line, "synth modality role must be signal or noise, got '" + role + "'");
        continue;
      }
      if (fields.size() == 4 && !parse_double(fields[3], m.noise_sd)) {
        err(e->line, "bad synth noise_sd '" + fields[3] + "'");
        continue;
      }
      cfg.synth.modalities.push_back(std::move(m));
    }
  }

  // semantic checks
  if (cfg.output_dir.empty()) errors.push_back(path + ": [paths] output is required");
  if (cfg.modalities.empty()) {
    errors.push_back(path + ": [run] modalities is required when task = custom");
  }
  if (cfg.k < 2) errors.push_back(path + ": [run] k must be >= 2");
  if (cfg.seeds < 1) errors.push_back(path + ": [run] seeds must be >= 1");
  if (cfg.pca_k < 0) errors.push_back(path + ": [run] pca_k must be >= 0");
  if (cfg.workers < 1) errors.push_back(path + ": [run] workers must be >= 1");
  if (cfg.cox_ridge < 0.0) errors.push_back(path + ": [run] cox_ridge must be >= 0");
  if (cfg.train.learning_rate <= 0.0) errors.push_back(path + ": [train] learning_rate must be > 0");
  if (cfg.train.time_bins < 2) errors.push_back(path + ": [train] time_bins must be >= 2");
  if (cfg.train.dropout < 0.0 || cfg.train.dropout >= 1.0) {
    errors.push_back(path + ": [train] dropout must be in [0, 1)");
  }
  if (cfg.train.l2_projection < 0.0) errors.push_back(path + ": [train] l2_projection must be >= 0");
  if (cfg.train.alpha_rank < 0.0) errors.push_back(path + ": [train] alpha_rank must be >= 0");
  if (cfg.train.sigma_rank <= 0.0) errors.push_back(path + ": [train] sigma_rank must be > 0");
  if (cfg.train.max_epochs < 1) errors.push_back(path + ": [train] max_epochs must be >= 1");
  if (cfg.train.patience < 0) errors.push_back(path + ": [train] patience must be >= 0");
  if (cfg.train.embed_dim < 1) errors.push_back(path + ": [train] embed_dim must be >= 1");
  for (const auto& name : cfg.pca_modalities) {
    if (std::find(cfg.modalities.begin(), cfg.modalities.end(), name) == cfg.modalities.end()) {
      errors.push_back(path + ": [run] pca_modalities names '" + name + "' which is not a configured modality");
    }
  }
  for (const auto& subset : cfg.grid_subsets) {
    for (const auto& name : subset) {
      if (std::find(cfg.modalities.begin(), cfg.modalities.end(), name) == cfg.modalities.end()) {
        errors.push_back(path + ": [run] grid_subsets names '" + name + "' which is not a configured modality");
      }
    }
  }

  if (!errors.empty()) {
    std::string joined = "invalid config (" + std::to_string(errors.size()) + " problem(s)):";
    for (const auto& e : errors) joined += "\n  " + e;
    throw ValidationError(joined);
  }
  return cfg;
}

// Path-existence checks for the inputs a command is about to read.
inline void require_paths(const std::vector<std::pair<std::string, std::string>>& labeled_paths) {
  std::vector<std::string> missing;
  for (const auto& [label, p] : labeled_paths) {
    if (p.empty()) {
      missing.push_back(label + " is not configured");
    } else if (!std::filesystem::exists(p)) {
      missing.push_back(label + " does not exist: " + p);
    }
  }
  if (!missing.empty()) {
    std::string joined = "missing inputs (" + std::to_string(missing.size()) + "):";
    for (const auto& m : missing) joined += "\n  " + m;
    throw ValidationError(joined);
  }
}

}  // namespace modalsurv

#endif  // MODALSURV_CONFIG_HPP
