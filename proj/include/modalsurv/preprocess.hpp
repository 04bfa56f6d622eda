#ifndef MODALSURV_PREPROCESS_HPP
#define MODALSURV_PREPROCESS_HPP

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "modalsurv/common.hpp"
#include "modalsurv/datamodel.hpp"

namespace modalsurv {

// ---------------------------------------------------------------------------
// Clinical variable encoding
// ---------------------------------------------------------------------------

// Raw clinical value as loaded from a per-patient record: a number, a string,
// or missing (null / absent key handled by the caller).
using RawValue = std::variant<std::monostate, double, std::string>;
using RawRecord = std::map<std::string, RawValue>;

// Numeric cast for clinical strings. Plain numbers pass through; mixed-format
// values like "12a" become numeric prefix + 0.1 * (1-based letter index), so
// "12a" -> 12.1, "12b" -> 12.2 and the within-group ordering
// "12a" < "12b" < "13" is preserved. Anything else is unparsable.
inline std::optional<double> parse_mixed_numeric(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  if (parse_double(s, v)) return v;
  if (s.size() >= 2) {
    const char suffix = s.back();
    if (std::isalpha(static_cast<unsigned char>(suffix))) {
      double prefix = 0.0;
      if (parse_double(s.substr(0, s.size() - 1), prefix)) {
        const int letter = std::tolower(static_cast<unsigned char>(suffix)) - 'a' + 1;
        return prefix + 0.1 * letter;
      }
    }
  }
  return std::nullopt;
}

struct ClinicalExclusion {
  std::string patient_id;
  std::string key;  // first offending key, in sorted key order
};

struct ClinicalEncoding {
  ModalityTable table;  // name "clinical"
  std::vector<std::string> feature_names;
  std::vector<ClinicalExclusion> excluded;
};

// Encodes per-patient key -> value maps into a numeric modality table.
// The feature space is the sorted union of keys across patients; a patient
// with any missing or unparsable value is dropped and reported, keeping the
// feature space identical for everyone who remains.
inline ClinicalEncoding encode_clinical(const std::map<std::string, RawRecord>& patients) {
  std::set<std::string> keys;
  for (const auto& [id, rec] : patients) {
    for (const auto& [k, v] : rec) keys.insert(k);
  }
  if (keys.empty()) throw ValidationError("encode_clinical: zero encodable features");

  ClinicalEncoding out;
  out.feature_names.assign(keys.begin(), keys.end());
  out.table.name = "clinical";
  out.table.dim = static_cast<Eigen::Index>(out.feature_names.size());

  for (const auto& [id, rec] : patients) {
    Eigen::VectorXd row(out.table.dim);
    std::optional<std::string> offending;
    for (std::size_t f = 0; f < out.feature_names.size(); ++f) {
      const auto it = rec.find(out.feature_names[f]);
      std::optional<double> value;
      if (it != rec.end()) {
        if (std::holds_alternative<double>(it->second)) {
          const double d = std::get<double>(it->second);
          if (std::isfinite(d)) value = d;
        } else if (std::holds_alternative<std::string>(it->second)) {
          value = parse_mixed_numeric(std::get<std::string>(it->second));
        }
      }
      if (!value) {
        offending = out.feature_names[f];
        break;
      }
      row[static_cast<Eigen::Index>(f)] = *value;
    }
    if (offending) {
      out.excluded.push_back({id, *offending});
    } else {
      out.table.rows[id] = row;
    }
  }
  if (out.table.rows.empty()) {
    throw ValidationError("encode_clinical: all patients excluded (missing or unparsable values)");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Z-score standardization
// ---------------------------------------------------------------------------

// Per-column location/scale fitted from training-fold rows only (the fit
// scope is the pipeline's responsibility). Population standard deviation;
// constant columns (std < 1e-12) standardize to 0.
struct Standardizer {
  Eigen::VectorXd means;
  Eigen::VectorXd stds;

  bool is_constant(Eigen::Index col) const { return stds[col] < 1e-12; }

  std::size_t n_constant() const {
    std::size_t c = 0;
    for (Eigen::Index j = 0; j < stds.size(); ++j) c += is_constant(j) ? 1 : 0;
    return c;
  }
};

inline Standardizer fit_standardizer(const Eigen::MatrixXd& x) {
  if (x.rows() < 2) throw ValidationError("fit_standardizer: need at least 2 rows");
  Standardizer s;
  s.means = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - s.means.transpose();
  s.stds = (centered.array().square().colwise().sum() / static_cast<double>(x.rows())).sqrt();
  return s;
}

inline Eigen::MatrixXd apply_standardizer(const Standardizer& s, const Eigen::MatrixXd& x) {
  if (x.cols() != s.means.size()) {
    throw ValidationError("apply_standardizer: column count mismatch (got " +
                          std::to_string(x.cols()) + ", fitted " + std::to_string(s.means.size()) + ")");
  }
  Eigen::MatrixXd out = x.rowwise() - s.means.transpose();
  for (Eigen::Index j = 0; j < s.stds.size(); ++j) {
    if (s.is_constant(j)) {
      out.col(j).setZero();
    } else {
      out.col(j) /= s.stds[j];
    }
  }
  return out;
}

// x * std + mean; constant columns are restored to their fitted mean.
inline Eigen::MatrixXd invert_standardizer(const Standardizer& s, const Eigen::MatrixXd& z) {
  if (z.cols() != s.means.size()) {
    throw ValidationError("invert_standardizer: column count mismatch");
  }
  Eigen::MatrixXd out = z;
  for (Eigen::Index j = 0; j < s.stds.size(); ++j) {
    out.col(j) = s.is_constant(j) ? Eigen::VectorXd::Zero(z.rows()) : Eigen::VectorXd(z.col(j) * s.stds[j]);
    out.col(j).array() += s.means[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

// Top-k principal directions of the column-centered data by singular value.
// explained_variance uses the population convention sigma^2 / n, matching the
// standardizer. Sign convention: the largest-magnitude loading of each
// component is positive, which makes the decomposition reproducible.
struct PcaModel {
  Eigen::VectorXd mean;                // d
  Eigen::MatrixXd components;          // k x d, orthonormal rows
  Eigen::VectorXd explained_variance;  // k, non-increasing
  Eigen::Index requested_k = 0;
  bool rank_truncated = false;  // fewer components than requested (rank deficiency)

  Eigen::Index k() const { return components.rows(); }
};

inline PcaModel fit_pca(const Eigen::MatrixXd& x, Eigen::Index k) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (k < 1) throw ValidationError("fit_pca: k must be >= 1");
  if (k > std::min(n - 1, d)) {
    throw ValidationError("fit_pca: k=" + std::to_string(k) + " exceeds min(rows-1, cols)=" +
                          std::to_string(std::min(n - 1, d)));
  }

  PcaModel model;
  model.requested_k = k;
  model.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - model.mean.transpose();

  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();

  // drop directions whose singular value is numerically zero
  const double tol = std::max(sv.size() > 0 ? sv[0] : 0.0, 1.0) * 1e-12;
  Eigen::Index rank = 0;
  while (rank < sv.size() && sv[rank] > tol) ++rank;
  const Eigen::Index kept = std::min(k, rank);
  model.rank_truncated = kept < k;

  model.components.resize(kept, d);
  model.explained_variance.resize(kept);
  for (Eigen::Index j = 0; j < kept; ++j) {
    Eigen::VectorXd comp = svd.matrixV().col(j);
    Eigen::Index argmax = 0;
    for (Eigen::Index i = 1; i < d; ++i) {
      if (std::abs(comp[i]) > std::abs(comp[argmax])) argmax = i;
    }
    if (comp[argmax] < 0.0) comp = -comp;
    model.components.row(j) = comp.transpose();
    model.explained_variance[j] = sv[j] * sv[j] / static_cast<double>(n);
  }
  return model;
}

inline Eigen::MatrixXd apply_pca(const PcaModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.mean.size()) {
    throw ValidationError("apply_pca: column count mismatch (got " + std::to_string(x.cols()) +
                          ", fitted " + std::to_string(model.mean.size()) + ")");
  }
  return (x.rowwise() - model.mean.transpose()) * model.components.transpose();
}

// ---------------------------------------------------------------------------
// Per-modality transform chain: optional PCA on the raw features, then
// z-score standardization of the (possibly reduced) features.
// ---------------------------------------------------------------------------

struct ModalityTransform {
  std::optional<PcaModel> pca;
  Standardizer standardizer;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    return apply_standardizer(standardizer, pca ? apply_pca(*pca, x) : x);
  }

  Eigen::Index output_dim() const { return standardizer.means.size(); }
};

inline ModalityTransform fit_modality_transform(const Eigen::MatrixXd& train_rows,
                                                Eigen::Index pca_k = 0,
                                                const Eigen::MatrixXd* pca_fit_rows = nullptr) {
  ModalityTransform t;
  Eigen::MatrixXd reduced = train_rows;
  if (pca_k > 0) {
    t.pca = fit_pca(pca_fit_rows ? *pca_fit_rows : train_rows, pca_k);
    reduced = apply_pca(*t.pca, train_rows);
  }
  t.standardizer = fit_standardizer(reduced);
  return t;
}

}  // namespace modalsurv

#endif  // MODALSURV_PREPROCESS_HPP
