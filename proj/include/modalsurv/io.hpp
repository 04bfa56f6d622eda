#ifndef MODALSURV_IO_HPP
#define MODALSURV_IO_HPP

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "modalsurv/common.hpp"
#include "modalsurv/datamodel.hpp"
#include "modalsurv/deephit.hpp"
#include "modalsurv/pipeline.hpp"
#include "modalsurv/preprocess.hpp"
#include "modalsurv/survcore.hpp"

namespace modalsurv {

namespace io_detail {

inline void fail(const std::string& path, std::size_t line, const std::string& msg) {
  throw ValidationError(path + ":" + std::to_string(line) + ": " + msg);
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline std::ofstream open_out(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write file: " + path);
  return out;
}

inline double parse_number_at(const std::string& path, std::size_t line, const std::string& token,
                              const std::string& what) {
  double v = 0.0;
  if (!parse_double(token, v)) fail(path, line, "expected a finite number for " + what + ", got '" + token + "'");
  return v;
}

}  // namespace io_detail

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  auto out = io_detail::open_out(path);
  out << content;
}

inline std::string hash_file(const std::string& path) {
  return "fnv64:" + to_hex(fnv1a64(read_text_file(path)));
}

// ---------------------------------------------------------------------------
// Survival labels: patient_id,time_months,event
// ---------------------------------------------------------------------------

inline std::vector<SurvivalRecord> load_labels(const std::string& path) {
  const auto lines = io_detail::read_lines(path);
  if (lines.empty()) io_detail::fail(path, 1, "empty labels file");
  if (trim(lines[0]) != "patient_id,time_months,event") {
    io_detail::fail(path, 1, "expected header 'patient_id,time_months,event'");
  }
  std::vector<SurvivalRecord> records;
  std::map<std::string, bool> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto fields = split(lines[i], ',');
    if (fields.size() != 3) io_detail::fail(path, i + 1, "expected 3 fields");
    SurvivalRecord r;
    r.patient_id = trim(fields[0]);
    if (r.patient_id.empty()) io_detail::fail(path, i + 1, "empty patient_id");
    if (!seen.emplace(r.patient_id, true).second) {
      io_detail::fail(path, i + 1, "duplicate patient_id '" + r.patient_id + "'");
    }
    r.time_months = io_detail::parse_number_at(path, i + 1, fields[1], "time_months");
    if (!(r.time_months > 0.0)) io_detail::fail(path, i + 1, "time_months must be > 0");
    const std::string ev = trim(fields[2]);
    if (ev != "0" && ev != "1") io_detail::fail(path, i + 1, "event must be 0 or 1");
    r.event = ev == "1";
    records.push_back(std::move(r));
  }
  if (records.empty()) io_detail::fail(path, 1, "labels file has no rows");
  return records;
}

inline void save_labels(const std::string& path, const std::vector<SurvivalRecord>& records) {
  auto out = io_detail::open_out(path);
  out << "patient_id,time_months,event\n";
  for (const auto& r : records) {
    out << r.patient_id << "," << fmt_double(r.time_months) << "," << (r.event ? 1 : 0) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Modality feature tables: patient_id,<feature columns...>
// ---------------------------------------------------------------------------

inline ModalityTable load_modality_table(const std::string& path, const std::string& name) {
  const auto lines = io_detail::read_lines(path);
  if (lines.empty()) io_detail::fail(path, 1, "empty modality file");
  const auto header = split(lines[0], ',');
  if (header.size() < 2 || trim(header[0]) != "patient_id") {
    io_detail::fail(path, 1, "expected header 'patient_id,<features...>'");
  }
  ModalityTable t;
  t.name = name;
  t.dim = static_cast<Eigen::Index>(header.size()) - 1;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto fields = split(lines[i], ',');
    if (fields.size() != header.size()) {
      io_detail::fail(path, i + 1, "expected " + std::to_string(header.size()) + " fields, got " +
                                       std::to_string(fields.size()));
    }
    const std::string id = trim(fields[0]);
    if (id.empty()) io_detail::fail(path, i + 1, "empty patient_id");
    if (t.rows.count(id)) io_detail::fail(path, i + 1, "duplicate patient_id '" + id + "'");
    Eigen::VectorXd row(t.dim);
    for (Eigen::Index j = 0; j < t.dim; ++j) {
      row[j] = io_detail::parse_number_at(path, i + 1, fields[static_cast<std::size_t>(j) + 1],
                                          "feature " + trim(header[static_cast<std::size_t>(j) + 1]));
    }
    t.rows[id] = std::move(row);
  }
  if (t.rows.empty()) io_detail::fail(path, 1, "modality file has no rows");
  return t;
}

inline void save_modality_table(const std::string& path, const ModalityTable& t,
                                const std::vector<std::string>* feature_names = nullptr) {
  if (feature_names && static_cast<Eigen::Index>(feature_names->size()) != t.dim) {
    throw ValidationError("save_modality_table: feature name count mismatch");
  }
  auto out = io_detail::open_out(path);
  out << "patient_id";
  for (Eigen::Index j = 0; j < t.dim; ++j) {
    out << "," << (feature_names ? (*feature_names)[static_cast<std::size_t>(j)] : "f" + std::to_string(j));
  }
  out << "\n";
  for (const auto& [id, row] : t.rows) {
    out << id;
    for (Eigen::Index j = 0; j < t.dim; ++j) out << "," << fmt_double(row[j]);
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Clinical raw input: one flat JSON object per patient, id = file stem
// ---------------------------------------------------------------------------

inline std::map<std::string, RawRecord> load_clinical_dir(const std::string& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw ValidationError("clinical raw directory does not exist: " + dir);
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("no .json files in clinical raw directory: " + dir);

  std::map<std::string, RawRecord> patients;
  for (const auto& file : files) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(read_text_file(file.string()));
    } catch (const nlohmann::json::exception& ex) {
      throw ValidationError(file.string() + ": invalid JSON (" + ex.what() + ")");
    }
    if (!doc.is_object()) throw ValidationError(file.string() + ": expected a JSON object");
    RawRecord rec;
    for (const auto& [key, value] : doc.items()) {
      if (value.is_number()) {
        rec[key] = value.get<double>();
      } else if (value.is_boolean()) {
        rec[key] = value.get<bool>() ? 1.0 : 0.0;
      } else if (value.is_string()) {
        rec[key] = value.get<std::string>();
      } else {
        rec[key] = std::monostate{};  // null / nested -> missing
      }
    }
    patients[file.stem().string()] = std::move(rec);
  }
  return patients;
}

// ---------------------------------------------------------------------------
// Fold assignment: comment line with k and seed, then patient_id,fold
// ---------------------------------------------------------------------------

inline void save_fold_assignment(const std::string& path, const FoldAssignment& fa) {
  auto out = io_detail::open_out(path);
  out << "# k=" << fa.k << " seed=" << fa.seed << "\n";
  out << "patient_id,fold\n";
  for (const auto& [id, fold] : fa.fold_of) out << id << "," << fold << "\n";
}

inline FoldAssignment load_fold_assignment(const std::string& path) {
  const auto lines = io_detail::read_lines(path);
  if (lines.size() < 3) io_detail::fail(path, 1, "fold file too short");
  FoldAssignment fa;
  {
    long long k = 0, seed = 0;
    const std::string header = trim(lines[0]);
    const auto kpos = header.find("k=");
    const auto spos = header.find("seed=");
    if (header.rfind("#", 0) != 0 || kpos == std::string::npos || spos == std::string::npos ||
        !parse_long(split(header.substr(kpos + 2), ' ')[0], k) ||
        !parse_long(header.substr(spos + 5), seed)) {
      io_detail::fail(path, 1, "expected comment '# k=<k> seed=<seed>'");
    }
    fa.k = static_cast<int>(k);
    fa.seed = static_cast<std::uint64_t>(seed);
  }
  if (trim(lines[1]) != "patient_id,fold") io_detail::fail(path, 2, "expected header 'patient_id,fold'");
  for (std::size_t i = 2; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto fields = split(lines[i], ',');
    if (fields.size() != 2) io_detail::fail(path, i + 1, "expected 2 fields");
    long long fold = 0;
    if (!parse_long(fields[1], fold) || fold < 0 || fold >= fa.k) {
      io_detail::fail(path, i + 1, "fold index out of range");
    }
    const std::string id = trim(fields[0]);
    if (fa.fold_of.count(id)) io_detail::fail(path, i + 1, "duplicate patient_id '" + id + "'");
    fa.fold_of[id] = static_cast<int>(fold);
  }
  return fa;
}

// ---------------------------------------------------------------------------
// Time grid: plain numeric edge list, one edge per line
// ---------------------------------------------------------------------------

inline void save_time_grid(const std::string& path, const TimeGrid& grid) {
  auto out = io_detail::open_out(path);
  for (Eigen::Index i = 0; i < grid.edges.size(); ++i) out << fmt_double(grid.edges[i]) << "\n";
}

inline TimeGrid load_time_grid(const std::string& path) {
  const auto lines = io_detail::read_lines(path);
  std::vector<double> edges;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    edges.push_back(io_detail::parse_number_at(path, i + 1, lines[i], "edge"));
  }
  if (edges.size() < 3) io_detail::fail(path, 1, "grid needs at least 3 edges");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) io_detail::fail(path, i + 1, "edges must be strictly increasing");
  }
  TimeGrid grid;
  grid.edges = Eigen::Map<Eigen::VectorXd>(edges.data(), static_cast<Eigen::Index>(edges.size()));
  grid.midpoints.resize(grid.edges.size() - 1);
  for (Eigen::Index i = 0; i + 1 < grid.edges.size(); ++i) {
    grid.midpoints[i] = 0.5 * (grid.edges[i] + grid.edges[i + 1]);
  }
  return grid;
}

// ---------------------------------------------------------------------------
// PCA model: flat numeric file, mean first, then components row-major
// ---------------------------------------------------------------------------

inline void save_pca_model(const std::string& path, const PcaModel& model) {
  auto out = io_detail::open_out(path);
  out << model.k() << " " << model.mean.size() << "\n";
  for (Eigen::Index j = 0; j < model.mean.size(); ++j) {
    out << (j ? " " : "") << fmt_double(model.mean[j]);
  }
  out << "\n";
  for (Eigen::Index r = 0; r < model.k(); ++r) {
    for (Eigen::Index c = 0; c < model.components.cols(); ++c) {
      out << (c ? " " : "") << fmt_double(model.components(r, c));
    }
    out << "\n";
  }
  for (Eigen::Index r = 0; r < model.k(); ++r) {
    out << (r ? " " : "") << fmt_double(model.explained_variance[r]);
  }
  out << "\n";
}

namespace io_detail {

inline std::vector<double> parse_row(const std::string& path, std::size_t line, const std::string& text,
                                     Eigen::Index expected) {
  std::istringstream ss(text);
  std::vector<double> values;
  std::string token;
  while (ss >> token) values.push_back(parse_number_at(path, line, token, "value"));
  if (static_cast<Eigen::Index>(values.size()) != expected) {
    fail(path, line, "expected " + std::to_string(expected) + " values, got " + std::to_string(values.size()));
  }
  return values;
}

}  // namespace io_detail

inline PcaModel load_pca_model(const std::string& path) {
  const auto lines = io_detail::read_lines(path);
  if (lines.size() < 3) io_detail::fail(path, 1, "pca file too short");
  const auto shape = io_detail::parse_row(path, 1, lines[0], 2);
  const auto k = static_cast<Eigen::Index>(shape[0]);
  const auto d = static_cast<Eigen::Index>(shape[1]);
  if (k < 1 || d < 1 || lines.size() < static_cast<std::size_t>(k) + 3) {
    io_detail::fail(path, 1, "inconsistent pca file shape");
  }
  PcaModel model;
  model.requested_k = k;
  const auto mean = io_detail::parse_row(path, 2, lines[1], d);
  model.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), d);
  model.components.resize(k, d);
  for (Eigen::Index r = 0; r < k; ++r) {
    const auto row = io_detail::parse_row(path, 3 + static_cast<std::size_t>(r),
                                          lines[2 + static_cast<std::size_t>(r)], d);
    model.components.row(r) = Eigen::Map<const Eigen::VectorXd>(row.data(), d).transpose();
  }
  const auto ev = io_detail::parse_row(path, 3 + static_cast<std::size_t>(k),
                                       lines[2 + static_cast<std::size_t>(k)], k);
  model.explained_variance = Eigen::Map<const Eigen::VectorXd>(ev.data(), k);
  return model;
}

// ---------------------------------------------------------------------------
// Per-fold preprocessing transforms
// ---------------------------------------------------------------------------

inline void save_fold_transforms(const std::string& path, const FoldTransforms& ft,
                                 const std::vector<std::string>& modality_names) {
  if (ft.per_modality.size() != modality_names.size()) {
    throw ValidationError("save_fold_transforms: modality name count mismatch");
  }
  auto out = io_detail::open_out(path);
  out << "modalsurv-transforms v1\n";
  out << "modalities " << ft.per_modality.size() << "\n";
  for (std::size_t m = 0; m < ft.per_modality.size(); ++m) {
    const auto& t = ft.per_modality[m];
    out << "modality " << modality_names[m] << "\n";
    if (t.pca) {
      out << "pca " << t.pca->k() << " " << t.pca->mean.size() << "\n";
      for (Eigen::Index j = 0; j < t.pca->mean.size(); ++j) out << (j ? " " : "") << fmt_double(t.pca->mean[j]);
      out << "\n";
      for (Eigen::Index r = 0; r < t.pca->k(); ++r) {
        for (Eigen::Index c = 0; c < t.pca->components.cols(); ++c) {
          out << (c ? " " : "") << fmt_double(t.pca->components(r, c));
        }
        out << "\n";
      }
      for (Eigen::Index r = 0; r < t.pca->k(); ++r) {
        out << (r ? " " : "") << fmt_double(t.pca->explained_variance[r]);
      }
      out << "\n";
    } else {
      out << "pca 0\n";
    }
    out << "standardizer " << t.standardizer.means.size() << "\n";
    for (Eigen::Index j = 0; j < t.standardizer.means.size(); ++j) {
      out << (j ? " " : "") << fmt_double(t.standardizer.means[j]);
    }
    out << "\n";
    for (Eigen::Index j = 0; j < t.standardizer.stds.size(); ++j) {
      out << (j ? " " : "") << fmt_double(t.standardizer.stds[j]);
    }
    out << "\n";
  }
}

inline FoldTransforms load_fold_transforms(const std::string& path,
                                           std::vector<std::string>* modality_names_out = nullptr) {
  const auto lines = io_detail::read_lines(path);
  std::size_t ln = 0;
  auto next_line = [&]() -> const std::string& {
    while (ln < lines.size() && trim(lines[ln]).empty()) ++ln;
    if (ln >= lines.size()) io_detail::fail(path, lines.size(), "unexpected end of file");
    return lines[ln++];
  };
  if (trim(next_line()) != "modalsurv-transforms v1") io_detail::fail(path, 1, "bad transforms header");
  const auto count_fields = split(trim(next_line()), ' ');
  long long n_mod = 0;
  if (count_fields.size() != 2 || count_fields[0] != "modalities" || !parse_long(count_fields[1], n_mod) ||
      n_mod < 1) {
    io_detail::fail(path, ln, "expected 'modalities <count>'");
  }
  FoldTransforms ft;
  for (long long m = 0; m < n_mod; ++m) {
    const auto mod_fields = split(trim(next_line()), ' ');
    if (mod_fields.size() != 2 || mod_fields[0] != "modality") io_detail::fail(path, ln, "expected 'modality <name>'");
    if (modality_names_out) modality_names_out->push_back(mod_fields[1]);

    ModalityTransform t;
    const auto pca_fields = split(trim(next_line()), ' ');
    if (pca_fields.empty() || pca_fields[0] != "pca") io_detail::fail(path, ln, "expected 'pca ...'");
    long long pk = 0;
    if (!parse_long(pca_fields[1], pk) || pk < 0) io_detail::fail(path, ln, "bad pca k");
    if (pk > 0) {
      long long pd = 0;
      if (pca_fields.size() != 3 || !parse_long(pca_fields[2], pd) || pd < 1) {
        io_detail::fail(path, ln, "expected 'pca <k> <d>'");
      }
      PcaModel pca;
      pca.requested_k = pk;
      const auto mean = io_detail::parse_row(path, ln + 1, next_line(), pd);
      pca.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), pd);
      pca.components.resize(pk, pd);
      for (long long r = 0; r < pk; ++r) {
        const auto row = io_detail::parse_row(path, ln + 1, next_line(), pd);
        pca.components.row(r) = Eigen::Map<const Eigen::VectorXd>(row.data(), pd).transpose();
      }
      const auto ev = io_detail::parse_row(path, ln + 1, next_line(), pk);
      pca.explained_variance = Eigen::Map<const Eigen::VectorXd>(ev.data(), pk);
      t.pca = std::move(pca);
    }

    const auto std_fields = split(trim(next_line()), ' ');
    long long sd = 0;
    if (std_fields.size() != 2 || std_fields[0] != "standardizer" || !parse_long(std_fields[1], sd) || sd < 1) {
      io_detail::fail(path, ln, "expected 'standardizer <dim>'");
    }
    const auto means = io_detail::parse_row(path, ln + 1, next_line(), sd);
    const auto stds = io_detail::parse_row(path, ln + 1, next_line(), sd);
    t.standardizer.means = Eigen::Map<const Eigen::VectorXd>(means.data(), sd);
    t.standardizer.stds = Eigen::Map<const Eigen::VectorXd>(stds.data(), sd);
    ft.per_modality.push_back(std::move(t));
  }
  return ft;
}

// ---------------------------------------------------------------------------
// Trained model: versioned flat numeric container with a small header
// ---------------------------------------------------------------------------

struct ModelFileData {
  ModelParams params;
  std::vector<std::string> modality_names;
  std::vector<Eigen::Index> modality_dims;
  int bins = 0;
  int embed = 0;
  std::vector<int> hidden_widths;
  std::uint64_t seed = 0;
  std::string grid_ref;
};

inline void save_model(const std::string& path, const ModelParams& params,
                       const std::vector<std::string>& modality_names, std::uint64_t seed,
                       const std::string& grid_ref) {
  if (static_cast<Eigen::Index>(modality_names.size()) != params.n_modalities()) {
    throw ValidationError("save_model: modality name count mismatch");
  }
  auto out = io_detail::open_out(path);
  out << "modalsurv-model v1\n";
  out << "grid " << grid_ref << "\n";
  out << "seed " << seed << "\n";
  out << "bins " << params.n_bins() << "\n";
  out << "embed " << params.embed_dim() << "\n";
  out << "hidden";
  for (std::size_t l = 0; l + 1 < params.fc_w.size(); ++l) out << " " << params.fc_b[l].size();
  out << "\n";
  out << "modalities " << params.n_modalities() << "\n";
  for (std::size_t m = 0; m < modality_names.size(); ++m) {
    out << "modality " << modality_names[m] << " " << params.proj_w[m].cols() << "\n";
  }
  auto write_matrix = [&](const std::string& name, const Eigen::MatrixXd& w) {
    out << "tensor " << name << " " << w.rows() << " " << w.cols() << "\n";
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) out << (c ? " " : "") << fmt_double(w(r, c));
      out << "\n";
    }
  };
  auto write_vector = [&](const std::string& name, const Eigen::VectorXd& v) {
    out << "tensor " << name << " 1 " << v.size() << "\n";
    for (Eigen::Index j = 0; j < v.size(); ++j) out << (j ? " " : "") << fmt_double(v[j]);
    out << "\n";
  };
  for (std::size_t m = 0; m < modality_names.size(); ++m) {
    write_matrix("proj_w[" + std::to_string(m) + "]", params.proj_w[m]);
    write_vector("proj_b[" + std::to_string(m) + "]", params.proj_b[m]);
  }
  write_matrix("w_q", params.w_q);
  write_matrix("w_k", params.w_k);
  write_matrix("w_v", params.w_v);
  for (std::size_t l = 0; l < params.fc_w.size(); ++l) {
    write_matrix("fc_w[" + std::to_string(l) + "]", params.fc_w[l]);
    write_vector("fc_b[" + std::to_string(l) + "]", params.fc_b[l]);
  }
}

inline ModelFileData load_model(const std::string& path) {
  const auto lines = io_detail::read_lines(path);
  std::size_t ln = 0;
  auto next_line = [&]() -> const std::string& {
    while (ln < lines.size() && trim(lines[ln]).empty()) ++ln;
    if (ln >= lines.size()) io_detail::fail(path, lines.size(), "unexpected end of file");
    return lines[ln++];
  };
  if (trim(next_line()) != "modalsurv-model v1") io_detail::fail(path, 1, "bad model header");

  ModelFileData data;
  auto expect_kv = [&](const std::string& key) {
    const auto fields = split(trim(next_line()), ' ');
    if (fields.size() < 2 || fields[0] != key) io_detail::fail(path, ln, "expected '" + key + " ...'");
    return fields;
  };
  data.grid_ref = expect_kv("grid")[1];
  long long v = 0;
  if (!parse_long(expect_kv("seed")[1], v)) io_detail::fail(path, ln, "bad seed");
  data.seed = static_cast<std::uint64_t>(v);
  if (!parse_long(expect_kv("bins")[1], v) || v < 2) io_detail::fail(path, ln, "bad bins");
  data.bins = static_cast<int>(v);
  if (!parse_long(expect_kv("embed")[1], v) || v < 1) io_detail::fail(path, ln, "bad embed");
  data.embed = static_cast<int>(v);
  {
    const auto fields = split(trim(next_line()), ' ');
    if (fields.empty() || fields[0] != "hidden") io_detail::fail(path, ln, "expected 'hidden ...'");
    for (std::size_t i = 1; i < fields.size(); ++i) {
      if (fields[i].empty()) continue;
      if (!parse_long(fields[i], v) || v < 1) io_detail::fail(path, ln, "bad hidden width");
      data.hidden_widths.push_back(static_cast<int>(v));
    }
  }
  if (!parse_long(expect_kv("modalities")[1], v) || v < 1) io_detail::fail(path, ln, "bad modality count");
  const auto n_mod = static_cast<std::size_t>(v);
  for (std::size_t m = 0; m < n_mod; ++m) {
    const auto fields = split(trim(next_line()), ' ');
    if (fields.size() != 3 || fields[0] != "modality") io_detail::fail(path, ln, "expected 'modality <name> <dim>'");
    if (!parse_long(fields[2], v) || v < 1) io_detail::fail(path, ln, "bad modality dim");
    data.modality_names.push_back(fields[1]);
    data.modality_dims.push_back(static_cast<Eigen::Index>(v));
  }

  auto read_tensor = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    const auto fields = split(trim(next_line()), ' ');
    long long r = 0, c = 0;
    if (fields.size() != 4 || fields[0] != "tensor" || fields[1] != name || !parse_long(fields[2], r) ||
        !parse_long(fields[3], c) || r != rows || c != cols) {
      io_detail::fail(path, ln, "expected 'tensor " + name + " " + std::to_string(rows) + " " +
                                    std::to_string(cols) + "'");
    }
    Eigen::MatrixXd w(rows, cols);
    for (Eigen::Index rr = 0; rr < rows; ++rr) {
      const auto row = io_detail::parse_row(path, ln + 1, next_line(), cols);
      w.row(rr) = Eigen::Map<const Eigen::VectorXd>(row.data(), cols).transpose();
    }
    return w;
  };

  auto& p = data.params;
  for (std::size_t m = 0; m < n_mod; ++m) {
    p.proj_w.push_back(read_tensor("proj_w[" + std::to_string(m) + "]", data.embed, data.modality_dims[m]));
    p.proj_b.push_back(read_tensor("proj_b[" + std::to_string(m) + "]", 1, data.embed).row(0).transpose());
  }
  p.w_q = read_tensor("w_q", data.embed, data.embed);
  p.w_k = read_tensor("w_k", data.embed, data.embed);
  p.w_v = read_tensor("w_v", data.embed, data.embed);
  Eigen::Index prev = static_cast<Eigen::Index>(n_mod) * data.embed;
  for (std::size_t l = 0; l < data.hidden_widths.size(); ++l) {
    p.fc_w.push_back(read_tensor("fc_w[" + std::to_string(l) + "]", data.hidden_widths[l], prev));
    p.fc_b.push_back(
        read_tensor("fc_b[" + std::to_string(l) + "]", 1, data.hidden_widths[l]).row(0).transpose());
    prev = data.hidden_widths[l];
  }
  const std::size_t out_l = data.hidden_widths.size();
  p.fc_w.push_back(read_tensor("fc_w[" + std::to_string(out_l) + "]", data.bins, prev));
  p.fc_b.push_back(read_tensor("fc_b[" + std::to_string(out_l) + "]", 1, data.bins).row(0).transpose());
  return data;
}

// ---------------------------------------------------------------------------
// Predictions: patient_id, expected time, risk, then K survival-curve columns
// ---------------------------------------------------------------------------

struct PredictionRow {
  std::string patient_id;
  double expected_time_months = 0.0;
  double risk = 0.0;
  Eigen::VectorXd survival;  // K
};

inline void save_predictions(const std::string& path, const std::vector<PredictionRow>& rows) {
  if (rows.empty()) throw ValidationError("save_predictions: no rows");
  auto out = io_detail::open_out(path);
  out << "patient_id,expected_time_months,risk";
  for (Eigen::Index j = 0; j < rows.front().survival.size(); ++j) out << ",s" << j;
  out << "\n";
  for (const auto& r : rows) {
    out << r.patient_id << "," << fmt_double(r.expected_time_months) << "," << fmt_double(r.risk);
    for (Eigen::Index j = 0; j < r.survival.size(); ++j) out << "," << fmt_double(r.survival[j]);
    out << "\n";
  }
}

inline std::vector<PredictionRow> load_predictions(const std::string& path) {
  const auto lines = io_detail::read_lines(path);
  if (lines.empty()) io_detail::fail(path, 1, "empty predictions file");
  const auto header = split(lines[0], ',');
  if (header.size() < 4 || trim(header[0]) != "patient_id" || trim(header[1]) != "expected_time_months" ||
      trim(header[2]) != "risk") {
    io_detail::fail(path, 1, "expected header 'patient_id,expected_time_months,risk,s0,...'");
  }
  const auto k = static_cast<Eigen::Index>(header.size()) - 3;
  std::vector<PredictionRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto fields = split(lines[i], ',');
    if (fields.size() != header.size()) io_detail::fail(path, i + 1, "field count mismatch");
    PredictionRow r;
    r.patient_id = trim(fields[0]);
    r.expected_time_months = io_detail::parse_number_at(path, i + 1, fields[1], "expected_time_months");
    r.risk = io_detail::parse_number_at(path, i + 1, fields[2], "risk");
    r.survival.resize(k);
    for (Eigen::Index j = 0; j < k; ++j) {
      r.survival[j] = io_detail::parse_number_at(path, i + 1, fields[static_cast<std::size_t>(j) + 3], "survival");
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) io_detail::fail(path, 1, "predictions file has no rows");
  return rows;
}

// ---------------------------------------------------------------------------
// Results table: subset,mean_c,std_c,n_models
// ---------------------------------------------------------------------------

inline void save_results_table(const std::string& path, const std::vector<GridEvalRow>& rows) {
  auto out = io_detail::open_out(path);
  out << "subset,mean_c,std_c,n_models\n";
  for (const auto& r : rows) {
    out << r.label << "," << fmt_fixed(r.mean_c, 6) << "," << fmt_fixed(r.std_c, 6) << "," << r.n_models << "\n";
  }
}

}  // namespace modalsurv

#endif  // MODALSURV_IO_HPP
