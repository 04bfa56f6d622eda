#ifndef MODALSURV_PIPELINE_HPP
#define MODALSURV_PIPELINE_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "modalsurv/common.hpp"
#include "modalsurv/coxph.hpp"
#include "modalsurv/datamodel.hpp"
#include "modalsurv/deephit.hpp"
#include "modalsurv/preprocess.hpp"
#include "modalsurv/survcore.hpp"

namespace modalsurv {

// ---------------------------------------------------------------------------
// Stratified k-fold assignment
// ---------------------------------------------------------------------------

struct FoldAssignment {
  std::map<std::string, int> fold_of;
  int k = 0;
  std::uint64_t seed = 0;
};

// Within each stratum (event / censored) patients are shuffled by seed and
// dealt round-robin, which keeps per-fold event counts within one patient of
// each other. Patients are taken in canonical sorted-id order first, so the
// assignment depends only on (records, k, seed).
inline FoldAssignment stratified_kfold(const std::vector<SurvivalRecord>& records, int k,
                                       std::uint64_t seed) {
  if (k < 2) throw ValidationError("stratified_kfold: k must be >= 2");
  std::map<std::string, bool> by_id;
  for (const auto& r : records) {
    if (!by_id.emplace(r.patient_id, r.event).second) {
      throw ValidationError("stratified_kfold: duplicate patient_id '" + r.patient_id + "'");
    }
  }
  std::vector<std::string> strata[2];  // [0] censored, [1] events
  for (const auto& [id, event] : by_id) strata[event ? 1 : 0].push_back(id);
  for (int s = 0; s < 2; ++s) {
    if (strata[s].size() < static_cast<std::size_t>(k)) {
      throw ValidationError(std::string("stratified_kfold: ") + (s ? "event" : "censored") +
                            " stratum has " + std::to_string(strata[s].size()) +
                            " members, fewer than k=" + std::to_string(k));
    }
  }

  FoldAssignment fa;
  fa.k = k;
  fa.seed = seed;
  Rng rng(seed);
  for (auto& stratum : {&strata[1], &strata[0]}) {  // events first
    rng.shuffle(*stratum);
    for (std::size_t i = 0; i < stratum->size(); ++i) {
      fa.fold_of[(*stratum)[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    }
  }
  return fa;
}

inline void validate_fold_assignment(const FoldAssignment& fa, const std::vector<SurvivalRecord>& records) {
  if (fa.k < 2) throw ValidationError("fold assignment: k must be >= 2");
  for (const auto& r : records) {
    const auto it = fa.fold_of.find(r.patient_id);
    if (it == fa.fold_of.end()) {
      throw ValidationError("fold assignment: patient '" + r.patient_id + "' has no fold");
    }
    if (it->second < 0 || it->second >= fa.k) {
      throw ValidationError("fold assignment: patient '" + r.patient_id + "' has fold out of range");
    }
  }
}

inline std::uint64_t fold_hash(const FoldAssignment& fa) {
  std::uint64_t h = fnv1a64(std::to_string(fa.k) + ";" + std::to_string(fa.seed));
  for (const auto& [id, fold] : fa.fold_of) h = fnv1a64(id + ":" + std::to_string(fold) + "\n", h);
  return h;
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

struct PipelineOptions {
  int k = 5;
  int seeds = 10;  // independent model-seed repeats per fold
  std::uint64_t fold_seed = 42;
  int pca_k = 0;
  std::vector<std::string> pca_modalities;
  bool pca_full_cohort = false;  // comparison flag: fit PCA on the whole cohort instead of per fold
  int workers = 1;
};

struct FoldTransforms {
  std::vector<ModalityTransform> per_modality;  // aligned with cohort modalities
};

struct CvMember {
  int fold = 0;
  int seed_index = 0;
  std::uint64_t model_seed = 0;
  ModelParams params;
  double val_c = 0.0;  // held-out C-index of the kept checkpoint
};

struct CvResult {
  FoldAssignment folds;
  TimeGrid grid;
  std::vector<std::string> modality_names;
  std::vector<FoldTransforms> transforms;  // per fold
  std::vector<CvMember> members;           // k * seeds entries, fold-major
  std::vector<double> fold_c;              // per fold, seed repeats averaged
  double mean_c = 0.0;
  double std_c = 0.0;  // population std over the fold values
  TrainConfig train_config;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / n)};
}

inline std::vector<Eigen::Index> fold_indices(const Cohort& cohort, const FoldAssignment& fa, int fold,
                                              bool in_fold) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < cohort.size(); ++i) {
    const int f = fa.fold_of.at(cohort.records[static_cast<std::size_t>(i)].patient_id);
    if ((f == fold) == in_fold) idx.push_back(i);
  }
  return idx;
}

}  // namespace detail

// For each fold: fit the per-modality transforms on the training folds, train
// one model per seed repeat, and evaluate on the held-out fold. Fold-level C
// is the mean over the seed repeats; the summary is mean +- std over folds.
inline CvResult run_cv(const Cohort& cohort, const TrainConfig& cfg, const PipelineOptions& opts,
                       const FoldAssignment* reuse = nullptr) {
  if (opts.seeds < 1) throw ValidationError("run_cv: seeds must be >= 1");
  CvResult result;
  result.train_config = cfg;
  if (reuse) {
    validate_fold_assignment(*reuse, cohort.records);
    result.folds = *reuse;
  } else {
    result.folds = stratified_kfold(cohort.records, opts.k, opts.fold_seed);
  }
  const int k = result.folds.k;
  result.grid = build_time_grid(cohort.times(), cfg.time_bins);
  for (const auto& m : cohort.modalities) result.modality_names.push_back(m.name);

  // per-fold transforms and batches
  std::vector<SurvivalBatch> train_batches(static_cast<std::size_t>(k));
  std::vector<SurvivalBatch> val_batches(static_cast<std::size_t>(k));
  result.transforms.resize(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    const auto train_idx = detail::fold_indices(cohort, result.folds, f, false);
    const auto val_idx = detail::fold_indices(cohort, result.folds, f, true);
    if (train_idx.empty() || val_idx.empty()) {
      throw ValidationError("run_cv: fold " + std::to_string(f) + " leaves an empty split");
    }
    const Cohort train = cohort.subset(train_idx);
    const Cohort val = cohort.subset(val_idx);
    if (!has_comparable_pair(val.times(), val.events())) {
      throw NumericError("run_cv: fold " + std::to_string(f) +
                         ": validation C-index undefined (no comparable pairs)");
    }

    auto& ft = result.transforms[static_cast<std::size_t>(f)];
    std::vector<Eigen::MatrixXd> train_feats;
    std::vector<Eigen::MatrixXd> val_feats;
    for (std::size_t m = 0; m < cohort.modalities.size(); ++m) {
      const std::string& name = cohort.modalities[m].name;
      const bool wants_pca = opts.pca_k > 0 &&
                             std::find(opts.pca_modalities.begin(), opts.pca_modalities.end(), name) !=
                                 opts.pca_modalities.end();
      const Eigen::MatrixXd* pca_fit_rows = opts.pca_full_cohort ? &cohort.modalities[m].features : nullptr;
      ft.per_modality.push_back(fit_modality_transform(train.modalities[m].features,
                                                       wants_pca ? opts.pca_k : 0, pca_fit_rows));
      train_feats.push_back(ft.per_modality.back().apply(train.modalities[m].features));
      val_feats.push_back(ft.per_modality.back().apply(val.modalities[m].features));
    }
    train_batches[static_cast<std::size_t>(f)] = make_batch(train_feats, train.times(), train.events(), result.grid);
    val_batches[static_cast<std::size_t>(f)] = make_batch(val_feats, val.times(), val.events(), result.grid);
  }

  // fold x seed jobs are independent
  const int n_jobs = k * opts.seeds;
  result.members.resize(static_cast<std::size_t>(n_jobs));
  std::atomic<int> next_job{0};
  std::atomic<bool> failed{false};
  std::string failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    while (true) {
      const int job = next_job.fetch_add(1);
      if (job >= n_jobs || failed.load()) break;
      const int f = job / opts.seeds;
      const int r = job % opts.seeds;
      try {
        TrainConfig member_cfg = cfg;
        member_cfg.seed = combine_seeds(cfg.seed, static_cast<std::uint64_t>(f), static_cast<std::uint64_t>(r));
        TrainResult tr = train_fold(train_batches[static_cast<std::size_t>(f)],
                                    val_batches[static_cast<std::size_t>(f)], result.grid, member_cfg);
        auto& member = result.members[static_cast<std::size_t>(job)];
        member.fold = f;
        member.seed_index = r;
        member.model_seed = member_cfg.seed;
        member.params = std::move(tr.params);
        member.val_c = tr.best_val_c;
      } catch (const std::exception& ex) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failed.exchange(true)) {
          failure = "run_cv: fold " + std::to_string(f) + " seed " + std::to_string(r) + ": " + ex.what();
        }
      }
    }
  };
  if (opts.workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < opts.workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (failed.load()) throw NumericError(failure);

  result.fold_c.resize(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    double acc = 0.0;
    for (int r = 0; r < opts.seeds; ++r) {
      acc += result.members[static_cast<std::size_t>(f * opts.seeds + r)].val_c;
    }
    result.fold_c[static_cast<std::size_t>(f)] = acc / opts.seeds;
  }
  const auto [mean, sd] = detail::mean_std(result.fold_c);
  result.mean_c = mean;
  result.std_c = sd;
  return result;
}

// ---------------------------------------------------------------------------
// Ensembling
// ---------------------------------------------------------------------------

struct EnsembleResult {
  PmfPrediction pmf;
  double expected_time_months = 0.0;
  double risk = 0.0;
};

// Unweighted mean of member PMFs (a convex combination, hence still a valid
// PMF), expected time over the shared grid, risk = negative expected time.
inline EnsembleResult ensemble_predict(const std::vector<PmfPrediction>& member_pmfs,
                                       const TimeGrid& grid) {
  if (member_pmfs.empty()) throw ValidationError("ensemble_predict: no member predictions");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(grid.bins());
  for (const auto& pmf : member_pmfs) {
    validate_pmf(pmf);
    if (pmf.probs.size() != grid.bins()) {
      throw ValidationError("ensemble_predict: member pmf length does not match grid");
    }
    acc += pmf.probs;
  }
  EnsembleResult out;
  out.pmf.probs = acc / static_cast<double>(member_pmfs.size());
  out.expected_time_months = expected_time(out.pmf, grid);
  out.risk = -out.expected_time_months;
  return out;
}

// Same, with one grid per member; the grids must agree.
inline EnsembleResult ensemble_predict(const std::vector<PmfPrediction>& member_pmfs,
                                       const std::vector<TimeGrid>& member_grids) {
  if (member_grids.empty()) throw ValidationError("ensemble_predict: no member grids");
  for (const auto& g : member_grids) {
    if (g.edges.size() != member_grids.front().edges.size() ||
        (g.edges - member_grids.front().edges).lpNorm<Eigen::Infinity>() != 0.0) {
      throw ValidationError("ensemble_predict: mismatched time grids across members");
    }
  }
  return ensemble_predict(member_pmfs, member_grids.front());
}

// Ensemble prediction for one patient from raw (untransformed) modality
// features, routing each member through its own fold's transforms.
inline EnsembleResult ensemble_predict_raw(const CvResult& cv,
                                           const std::vector<Eigen::VectorXd>& raw_features,
                                           const std::vector<const CvMember*>* member_subset = nullptr) {
  if (raw_features.size() != cv.modality_names.size()) {
    throw ValidationError("ensemble_predict_raw: expected " + std::to_string(cv.modality_names.size()) +
                          " modality feature vectors");
  }
  std::vector<const CvMember*> members;
  if (member_subset) {
    members = *member_subset;
  } else {
    for (const auto& m : cv.members) members.push_back(&m);
  }
  std::vector<PmfPrediction> pmfs;
  pmfs.reserve(members.size());
  for (const CvMember* member : members) {
    const FoldTransforms& ft = cv.transforms[static_cast<std::size_t>(member->fold)];
    std::vector<Eigen::VectorXd> x;
    for (std::size_t m = 0; m < raw_features.size(); ++m) {
      x.push_back(ft.per_modality[m].apply(raw_features[m].transpose()).row(0).transpose());
    }
    pmfs.push_back(forward(x, member->params, cv.train_config, false));
  }
  return ensemble_predict(pmfs, cv.grid);
}

// ---------------------------------------------------------------------------
// Modality-subset evaluation grid
// ---------------------------------------------------------------------------

struct GridEvalRow {
  std::string label;
  double mean_c = 0.0;
  double std_c = 0.0;
  int n_models = 0;
};

inline std::string subset_label(const std::vector<std::string>& subset) {
  std::string label;
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (i) label += "+";
    label += subset[i];
  }
  return label;
}

// One run_cv per modality subset, all with the same fold assignment so the
// rows stay comparable, plus an optional Cox PH baseline row fitted on a
// single modality's standardized features.
inline std::vector<GridEvalRow> modality_grid_eval(const Cohort& cohort,
                                                   const std::vector<std::vector<std::string>>& subsets,
                                                   const TrainConfig& cfg, const PipelineOptions& opts,
                                                   const std::optional<std::string>& cox_baseline_modality = std::nullopt,
                                                   const FoldAssignment* reuse = nullptr,
                                                   std::vector<std::uint64_t>* fold_hashes = nullptr,
                                                   double cox_ridge = 0.0) {
  if (subsets.empty()) throw ValidationError("modality_grid_eval: no subsets given");
  const FoldAssignment folds =
      reuse ? *reuse : stratified_kfold(cohort.records, opts.k, opts.fold_seed);
  validate_fold_assignment(folds, cohort.records);

  std::vector<GridEvalRow> rows;
  if (cox_baseline_modality) {
    const Eigen::Index mi = cohort.modality_index(*cox_baseline_modality);
    std::vector<double> fold_c;
    for (int f = 0; f < folds.k; ++f) {
      const Cohort train = cohort.subset(detail::fold_indices(cohort, folds, f, false));
      const Cohort val = cohort.subset(detail::fold_indices(cohort, folds, f, true));
      const Standardizer st = fit_standardizer(train.modalities[static_cast<std::size_t>(mi)].features);
      CoxOptions cox_opts;
      cox_opts.ridge = cox_ridge;
      const CoxModel model = fit_coxph(apply_standardizer(st, train.modalities[static_cast<std::size_t>(mi)].features),
                                       train.times(), train.events(), cox_opts);
      const Eigen::VectorXd risks =
          cox_risk(model, apply_standardizer(st, val.modalities[static_cast<std::size_t>(mi)].features));
      fold_c.push_back(c_index(std::vector<double>(risks.data(), risks.data() + risks.size()),
                               val.times(), val.events()));
    }
    const auto [mean, sd] = detail::mean_std(fold_c);
    rows.push_back({"coxph:" + *cox_baseline_modality, mean, sd, folds.k});
  }

  for (const auto& subset : subsets) {
    const Cohort sub = cohort.with_modalities(subset);
    const CvResult cv = run_cv(sub, cfg, opts, &folds);
    rows.push_back({subset_label(subset), cv.mean_c, cv.std_c, folds.k * opts.seeds});
    if (fold_hashes) fold_hashes->push_back(fold_hash(cv.folds));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Synthetic cohorts for desk-scale verification
// ---------------------------------------------------------------------------

struct SyntheticModality {
  std::string name;
  int dim = 8;
  bool signal = true;
  double noise_sd = 0.3;
};

struct SyntheticSpec {
  int n = 500;
  double censor_rate = 0.35;
  std::uint64_t seed = 7;
  int latent_dim = 4;
  double linear_strength = 1.0;     // scales the built-in linear weights
  double interaction_strength = 0.0;  // coefficient on z0 * z1
  double time_scale_months = 24.0;
  std::vector<SyntheticModality> modalities;
};

struct SyntheticCohort {
  Cohort cohort;
  std::map<std::string, double> oracle_risk;  // true latent risk per patient
  double realized_censor_rate = 0.0;
};

// Latent risk r = linear combination of latent factors plus an optional
// pairwise interaction z0*z1; event times exponential with rate exp(r);
// independent uniform censoring calibrated to hit the requested rate in
// expectation. Latent factors are dealt round-robin across the signal
// modalities, each embedding its factors through a random linear map with
// noise; roughly half of each signal modality's dimensions are pure-noise
// distractors, and noise modalities carry no signal at all.
inline SyntheticCohort generate_synthetic_cohort(const SyntheticSpec& spec) {
  if (spec.n < 20) throw ValidationError("generate_synthetic_cohort: n must be >= 20");
  if (spec.censor_rate < 0.0 || spec.censor_rate >= 1.0) {
    throw ValidationError("generate_synthetic_cohort: censor_rate must be in [0, 1)");
  }
  if (spec.modalities.empty()) throw ValidationError("generate_synthetic_cohort: no modalities");
  if (spec.latent_dim < 1) throw ValidationError("generate_synthetic_cohort: latent_dim must be >= 1");
  for (const auto& m : spec.modalities) {
    if (m.dim < 1) throw ValidationError("generate_synthetic_cohort: modality dims must be >= 1");
  }

  Rng rng(spec.seed);
  const int L = spec.latent_dim;

  // deal latent factors round-robin across signal modalities
  std::vector<std::size_t> signal_idx;
  for (std::size_t m = 0; m < spec.modalities.size(); ++m) {
    if (spec.modalities[m].signal) signal_idx.push_back(m);
  }
  std::vector<std::vector<int>> factors_of(spec.modalities.size());
  if (!signal_idx.empty()) {
    for (int l = 0; l < L; ++l) factors_of[signal_idx[static_cast<std::size_t>(l) % signal_idx.size()]].push_back(l);
  }

  // per-modality embedding maps (drawn before any patient data)
  std::vector<Eigen::MatrixXd> mixing(spec.modalities.size());
  std::vector<int> n_mixed(spec.modalities.size(), 0);
  for (std::size_t m = 0; m < spec.modalities.size(); ++m) {
    const auto& mod = spec.modalities[m];
    const int nf = static_cast<int>(factors_of[m].size());
    if (!mod.signal || nf == 0) continue;
    n_mixed[m] = std::max(1, (mod.dim + 1) / 2);
    mixing[m].resize(n_mixed[m], nf);
    for (int r = 0; r < n_mixed[m]; ++r) {
      for (int c = 0; c < nf; ++c) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        mixing[m](r, c) = sign * rng.uniform(0.5, 1.5);
      }
    }
  }

  // built-in linear weights with alternating sign and decaying magnitude
  Eigen::VectorXd w(L);
  for (int l = 0; l < L; ++l) w[l] = (l % 2 == 0 ? 1.0 : -1.0) * 1.5 * std::pow(0.8, l);

  const int id_width = static_cast<int>(std::to_string(spec.n).size());
  SyntheticCohort out;
  std::vector<Eigen::MatrixXd> features(spec.modalities.size());
  for (std::size_t m = 0; m < spec.modalities.size(); ++m) {
    features[m].resize(spec.n, spec.modalities[m].dim);
  }
  std::vector<double> event_times(static_cast<std::size_t>(spec.n));

  for (int i = 0; i < spec.n; ++i) {
    Eigen::VectorXd z(L);
    for (int l = 0; l < L; ++l) z[l] = rng.normal();

    double risk = spec.linear_strength * w.dot(z);
    if (L >= 2) risk += spec.interaction_strength * z[0] * z[1];

    char buf[32];
    std::snprintf(buf, sizeof(buf), "SYN%0*d", id_width, i + 1);
    out.oracle_risk[buf] = risk;
    out.cohort.records.push_back({buf, 0.0, true});
    event_times[static_cast<std::size_t>(i)] = rng.exponential(std::exp(risk)) * spec.time_scale_months;

    for (std::size_t m = 0; m < spec.modalities.size(); ++m) {
      const auto& mod = spec.modalities[m];
      for (int dcol = 0; dcol < mod.dim; ++dcol) {
        if (mod.signal && !factors_of[m].empty() && dcol < n_mixed[m]) {
          double value = 0.0;
          for (std::size_t c = 0; c < factors_of[m].size(); ++c) {
            value += mixing[m](dcol, static_cast<Eigen::Index>(c)) * z[factors_of[m][c]];
          }
          features[m](i, dcol) = value + mod.noise_sd * rng.normal();
        } else {
          features[m](i, dcol) = rng.normal();
        }
      }
    }
  }

  // independent uniform censoring: pick c_max so the expected censored
  // fraction matches the requested rate, then draw censor times
  std::size_t censored = 0;
  if (spec.censor_rate > 0.0) {
    auto expected_censored = [&](double c_max) {
      double acc = 0.0;
      for (double t : event_times) acc += std::min(t / c_max, 1.0);
      return acc / static_cast<double>(spec.n);
    };
    double lo = *std::min_element(event_times.begin(), event_times.end()) * 1e-6;
    double hi = *std::max_element(event_times.begin(), event_times.end()) * 1e6;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (expected_censored(mid) > spec.censor_rate) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    const double c_max = 0.5 * (lo + hi);
    for (int i = 0; i < spec.n; ++i) {
      const double censor_time = std::max(rng.uniform() * c_max, 1e-9);
      auto& rec = out.cohort.records[static_cast<std::size_t>(i)];
      if (censor_time < event_times[static_cast<std::size_t>(i)]) {
        rec.event = false;
        rec.time_months = censor_time;
        ++censored;
      } else {
        rec.time_months = event_times[static_cast<std::size_t>(i)];
      }
    }
  } else {
    for (int i = 0; i < spec.n; ++i) {
      out.cohort.records[static_cast<std::size_t>(i)].time_months = event_times[static_cast<std::size_t>(i)];
    }
  }
  out.realized_censor_rate = static_cast<double>(censored) / static_cast<double>(spec.n);

  for (std::size_t m = 0; m < spec.modalities.size(); ++m) {
    out.cohort.modalities.push_back({spec.modalities[m].name, std::move(features[m])});
  }
  return out;
}

}  // namespace modalsurv

#endif  // MODALSURV_PIPELINE_HPP
