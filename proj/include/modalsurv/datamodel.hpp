#ifndef MODALSURV_DATAMODEL_HPP
#define MODALSURV_DATAMODEL_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "modalsurv/common.hpp"

namespace modalsurv {

// One patient's follow-up: observed time in months and whether the event
// (recurrence) was observed or the patient was censored.
struct SurvivalRecord {
  std::string patient_id;
  double time_months = 0.0;
  bool event = false;
};

// Named feature source keyed by patient id. This is the pre-alignment form
// used by loaders and the clinical encoder; a Cohort stores the aligned
// matrix form instead.
struct ModalityTable {
  std::string name;
  Eigen::Index dim = 0;
  std::map<std::string, Eigen::VectorXd> rows;
};

// One modality inside an assembled cohort: row i belongs to records[i].
struct CohortModality {
  std::string name;
  Eigen::MatrixXd features;  // n x dim
};

struct Cohort {
  std::vector<SurvivalRecord> records;  // sorted by patient_id
  std::vector<CohortModality> modalities;
  std::vector<std::string> dropped_patient_ids;  // records absent from >=1 selected modality

  Eigen::Index size() const { return static_cast<Eigen::Index>(records.size()); }

  std::size_t n_events() const {
    std::size_t c = 0;
    for (const auto& r : records) c += r.event ? 1 : 0;
    return c;
  }

  std::vector<double> times() const {
    std::vector<double> t(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) t[i] = records[i].time_months;
    return t;
  }

  std::vector<char> events() const {
    std::vector<char> e(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) e[i] = records[i].event ? 1 : 0;
    return e;
  }

  Eigen::Index modality_index(const std::string& name) const {
    for (std::size_t m = 0; m < modalities.size(); ++m) {
      if (modalities[m].name == name) return static_cast<Eigen::Index>(m);
    }
    throw ValidationError("cohort has no modality named '" + name + "'");
  }

  // Cohort over the same patients restricted to a subset of modalities.
  Cohort with_modalities(const std::vector<std::string>& names) const {
    if (names.empty()) throw ValidationError("modality subset must be nonempty");
    Cohort out;
    out.records = records;
    out.dropped_patient_ids = dropped_patient_ids;
    for (const auto& n : names) out.modalities.push_back(modalities[modality_index(n)]);
    return out;
  }

  // Cohort restricted to a patient index subset, preserving order.
  Cohort subset(const std::vector<Eigen::Index>& idx) const {
    Cohort out;
    out.records.reserve(idx.size());
    for (Eigen::Index i : idx) out.records.push_back(records[i]);
    for (const auto& m : modalities) {
      CohortModality cm;
      cm.name = m.name;
      cm.features.resize(static_cast<Eigen::Index>(idx.size()), m.features.cols());
      for (std::size_t r = 0; r < idx.size(); ++r) cm.features.row(static_cast<Eigen::Index>(r)) = m.features.row(idx[r]);
      out.modalities.push_back(std::move(cm));
    }
    return out;
  }
};

// Discrete distribution over the K time bins; the model's output.
struct PmfPrediction {
  Eigen::VectorXd probs;
};

inline bool is_valid_pmf(const Eigen::VectorXd& p, double tol = 1e-6) {
  if (p.size() == 0) return false;
  if ((p.array() < 0.0).any()) return false;
  if (!p.allFinite()) return false;
  return std::abs(p.sum() - 1.0) <= tol;
}

inline void validate_pmf(const PmfPrediction& pmf, double tol = 1e-6) {
  if (!is_valid_pmf(pmf.probs, tol)) {
    throw NumericError("invalid pmf: entries must be nonnegative and sum to 1 within " + fmt_double(tol));
  }
}

// Inner join of survival records with the selected modality tables.
// Only patients present in the records and in every selected table survive;
// output ordering is canonical (sorted by patient_id) so downstream fold
// assignment is reproducible regardless of input order.
inline Cohort assemble_cohort(const std::vector<SurvivalRecord>& records,
                              const std::vector<ModalityTable>& tables,
                              const std::vector<std::string>& selected_modalities) {
  if (selected_modalities.empty()) throw ValidationError("assemble_cohort: no modalities selected");

  std::map<std::string, const SurvivalRecord*> by_id;
  for (const auto& r : records) {
    if (!by_id.emplace(r.patient_id, &r).second) {
      throw ValidationError("assemble_cohort: duplicate patient_id '" + r.patient_id + "'");
    }
  }

  std::vector<const ModalityTable*> selected;
  for (const auto& name : selected_modalities) {
    const ModalityTable* found = nullptr;
    for (const auto& t : tables) {
      if (t.name == name) {
        found = &t;
        break;
      }
    }
    if (!found) throw ValidationError("assemble_cohort: modality table '" + name + "' not provided");
    selected.push_back(found);
  }

  std::vector<std::string> ids;
  Cohort out;
  for (const auto& [id, rec] : by_id) {
    bool complete = true;
    for (const auto* t : selected) {
      if (!t->rows.count(id)) {
        complete = false;
        break;
      }
    }
    if (complete) {
      ids.push_back(id);
      out.records.push_back(*rec);
    } else {
      out.dropped_patient_ids.push_back(id);
    }
  }
  if (ids.empty()) throw ValidationError("assemble_cohort: no complete cases across selected modalities");

  for (const auto* t : selected) {
    CohortModality cm;
    cm.name = t->name;
    cm.features.resize(static_cast<Eigen::Index>(ids.size()), t->dim);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const Eigen::VectorXd& row = t->rows.at(ids[i]);
      if (row.size() != t->dim) {
        throw ValidationError("assemble_cohort: modality '" + t->name + "' row for '" + ids[i] +
                              "' has length " + std::to_string(row.size()) + ", expected " +
                              std::to_string(t->dim));
      }
      cm.features.row(static_cast<Eigen::Index>(i)) = row;
    }
    out.modalities.push_back(std::move(cm));
  }
  return out;
}

// Back-conversion used when persisting prepared cohorts.
inline ModalityTable table_from_cohort(const Cohort& cohort, Eigen::Index modality) {
  const auto& cm = cohort.modalities.at(static_cast<std::size_t>(modality));
  ModalityTable t;
  t.name = cm.name;
  t.dim = cm.features.cols();
  for (Eigen::Index i = 0; i < cohort.size(); ++i) {
    t.rows[cohort.records[static_cast<std::size_t>(i)].patient_id] = cm.features.row(i).transpose();
  }
  return t;
}

}  // namespace modalsurv

#endif  // MODALSURV_DATAMODEL_HPP
