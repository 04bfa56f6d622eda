#include <catch2/catch_amalgamated.hpp>

#include "modalsurv/datamodel.hpp"

using namespace modalsurv;

namespace {

ModalityTable make_table(const std::string& name, Eigen::Index dim,
                         const std::vector<std::string>& ids, std::uint64_t seed = 1) {
  Rng rng(seed);
  ModalityTable t;
  t.name = name;
  t.dim = dim;
  for (const auto& id : ids) {
    Eigen::VectorXd row(dim);
    for (Eigen::Index j = 0; j < dim; ++j) row[j] = rng.normal();
    t.rows[id] = row;
  }
  return t;
}

}  // namespace

TEST_CASE("assemble_cohort: inner join keeps only complete cases") {
  const std::vector<SurvivalRecord> records{{"A", 10, true}, {"B", 20, false}, {"C", 30, true}};
  const std::vector<ModalityTable> tables{make_table("clinical", 3, {"A", "B"}),
                                          make_table("wsi", 2, {"B", "C"})};
  const Cohort cohort = assemble_cohort(records, tables, {"clinical", "wsi"});
  REQUIRE(cohort.size() == 1);
  CHECK(cohort.records[0].patient_id == "B");
  CHECK(cohort.dropped_patient_ids == std::vector<std::string>{"A", "C"});
  REQUIRE(cohort.modalities.size() == 2);
  CHECK(cohort.modalities[0].features.rows() == 1);
}

TEST_CASE("assemble_cohort: identity join preserves sorted order") {
  const std::vector<SurvivalRecord> records{{"B", 20, false}, {"A", 10, true}};
  const std::vector<ModalityTable> tables{make_table("clinical", 2, {"A", "B"})};
  const Cohort cohort = assemble_cohort(records, tables, {"clinical"});
  REQUIRE(cohort.size() == 2);
  CHECK(cohort.records[0].patient_id == "A");
  CHECK(cohort.records[1].patient_id == "B");
  CHECK(cohort.modalities[0].features.row(0).isApprox(tables[0].rows.at("A").transpose()));
}

TEST_CASE("assemble_cohort: 95-patient cohort with 27 events") {
  std::vector<SurvivalRecord> records;
  std::vector<std::string> ids;
  for (int i = 0; i < 95; ++i) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "P%03d", i);
    records.push_back({buf, 1.0 + i, i < 27});
    ids.push_back(buf);
  }
  const std::vector<ModalityTable> tables{make_table("clinical", 4, ids), make_table("mri", 6, ids),
                                          make_table("wsi", 5, ids)};
  const Cohort cohort = assemble_cohort(records, tables, {"clinical", "mri", "wsi"});
  CHECK(cohort.size() == 95);
  CHECK(cohort.n_events() == 27);
  CHECK(cohort.dropped_patient_ids.empty());
}

TEST_CASE("assemble_cohort: errors") {
  const std::vector<SurvivalRecord> records{{"A", 10, true}, {"B", 20, false}};
  const std::vector<ModalityTable> tables{make_table("clinical", 2, {"C", "D"})};
  CHECK_THROWS_WITH(assemble_cohort(records, tables, {"clinical"}),
                    Catch::Matchers::ContainsSubstring("no complete cases"));

  const std::vector<SurvivalRecord> dup{{"A", 10, true}, {"A", 20, false}};
  CHECK_THROWS_WITH(assemble_cohort(dup, tables, {"clinical"}),
                    Catch::Matchers::ContainsSubstring("duplicate"));

  CHECK_THROWS_AS(assemble_cohort(records, tables, {}), ValidationError);
  CHECK_THROWS_AS(assemble_cohort(records, tables, {"nope"}), ValidationError);
}

TEST_CASE("assemble_cohort: invariant to input row order") {
  Rng rng(5);
  std::vector<SurvivalRecord> records;
  std::vector<std::string> ids;
  for (int i = 0; i < 25; ++i) {
    const std::string id = "X" + std::to_string(100 + i);
    records.push_back({id, rng.uniform(1, 50), rng.uniform() < 0.4});
    ids.push_back(id);
  }
  const std::vector<ModalityTable> tables{make_table("m", 3, ids)};
  const Cohort a = assemble_cohort(records, tables, {"m"});

  std::vector<SurvivalRecord> shuffled = records;
  rng.shuffle(shuffled);
  const Cohort b = assemble_cohort(shuffled, tables, {"m"});

  REQUIRE(a.size() == b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    CHECK(a.records[static_cast<std::size_t>(i)].patient_id ==
          b.records[static_cast<std::size_t>(i)].patient_id);
  }
  CHECK(a.modalities[0].features.isApprox(b.modalities[0].features));
  CHECK(a.n_events() + (a.records.size() - a.n_events()) == a.records.size());
}

TEST_CASE("assemble_cohort: modality row length mismatch is rejected") {
  const std::vector<SurvivalRecord> records{{"A", 10, true}, {"B", 5, false}};
  ModalityTable bad = make_table("m", 3, {"A", "B"});
  bad.rows["A"] = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(assemble_cohort(records, {bad}, {"m"}), ValidationError);
}

TEST_CASE("cohort views: modality subsets and patient subsets") {
  std::vector<std::string> ids{"a", "b", "c", "d"};
  const std::vector<SurvivalRecord> records{{"a", 1, true}, {"b", 2, false}, {"c", 3, true}, {"d", 4, false}};
  const std::vector<ModalityTable> tables{make_table("m1", 2, ids), make_table("m2", 3, ids)};
  const Cohort cohort = assemble_cohort(records, tables, {"m1", "m2"});

  const Cohort sub = cohort.with_modalities({"m2"});
  REQUIRE(sub.modalities.size() == 1);
  CHECK(sub.modalities[0].name == "m2");
  CHECK(sub.size() == 4);
  CHECK_THROWS_AS(cohort.with_modalities({"missing"}), ValidationError);
  CHECK_THROWS_AS(cohort.with_modalities({}), ValidationError);

  const Cohort rows = cohort.subset({1, 3});
  REQUIRE(rows.size() == 2);
  CHECK(rows.records[0].patient_id == "b");
  CHECK(rows.records[1].patient_id == "d");
  CHECK(rows.modalities[1].features.row(0).isApprox(cohort.modalities[1].features.row(1)));
}

TEST_CASE("pmf validity contract") {
  Eigen::VectorXd good = Eigen::VectorXd::Constant(4, 0.25);
  CHECK(is_valid_pmf(good));
  CHECK_NOTHROW(validate_pmf(PmfPrediction{good}));

  Eigen::VectorXd off = Eigen::VectorXd::Constant(4, 0.2);
  CHECK_FALSE(is_valid_pmf(off));
  CHECK_THROWS_AS(validate_pmf(PmfPrediction{off}), NumericError);

  Eigen::VectorXd negative(3);
  negative << 0.6, 0.5, -0.1;
  CHECK_FALSE(is_valid_pmf(negative));

  CHECK_FALSE(is_valid_pmf(Eigen::VectorXd()));

  // within tolerance
  Eigen::VectorXd near = good;
  near[0] += 5e-7;
  CHECK(is_valid_pmf(near));
}
