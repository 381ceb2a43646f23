#include "crowdfair/model.hpp"

#include <gtest/gtest.h>

#include <map>

#include "test_support.hpp"

using namespace crowdfair;

TEST(AnnotationMatrix, BuildsDenseMatrixFromRows) {
  const auto m = AnnotationMatrix::from_rows({{0, 0, 1}, {0, 1, 0}, {1, 0, 1}});
  EXPECT_EQ(m.n_tasks(), 2);
  EXPECT_EQ(m.n_workers(), 2);
  EXPECT_EQ(m.n_entries(), 3);
  EXPECT_EQ(m.task_rows(0).size(), 2u);
  EXPECT_EQ(m.task_rows(1).size(), 1u);
}

TEST(AnnotationMatrix, ConflictingDuplicateIsRejected) {
  try {
    AnnotationMatrix::from_rows({{0, 0, 1}, {0, 0, 0}});
    FAIL() << "expected IngestError";
  } catch (const IngestError& e) {
    EXPECT_NE(std::string(e.what()).find("task 0"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("worker 0"), std::string::npos);
  }
}

TEST(AnnotationMatrix, ExactDuplicateCollapses) {
  const auto m = AnnotationMatrix::from_rows({{0, 0, 1}, {0, 0, 1}, {1, 0, 0}});
  EXPECT_EQ(m.n_entries(), 2);
}

TEST(AnnotationMatrix, NonBinaryLabelIsRejected) {
  EXPECT_THROW(AnnotationMatrix::from_rows({{0, 0, 2}}), IngestError);
  EXPECT_THROW(AnnotationMatrix::from_rows({{0, 0, -1}}), IngestError);
}

TEST(AnnotationMatrix, NegativeIdsAreRejected) {
  EXPECT_THROW(AnnotationMatrix::from_rows({{-1, 0, 1}}), IngestError);
  EXPECT_THROW(AnnotationMatrix::from_rows({{0, -3, 1}}), IngestError);
}

TEST(AnnotationMatrix, EmptyRowListIsRejected) {
  EXPECT_THROW(AnnotationMatrix::from_rows({}), IngestError);
}

TEST(AnnotationMatrix, SparseRawIdsRemapDensely) {
  const auto m = AnnotationMatrix::from_rows({{5, 7, 1}, {9, 7, 0}});
  EXPECT_EQ(m.n_tasks(), 2);
  EXPECT_EQ(m.n_workers(), 1);
  EXPECT_EQ(m.task_ids(), (std::vector<RawId>{5, 9}));
  EXPECT_EQ(m.worker_ids(), (std::vector<RawId>{7}));
}

TEST(AnnotationMatrix, UnknownTaskAgainstUniverseIsRejected) {
  EXPECT_THROW(AnnotationMatrix::from_rows({{3, 0, 1}}, {1, 2}), IngestError);
}

TEST(AnnotationMatrix, TaskWithZeroLabelsIsRejected) {
  try {
    AnnotationMatrix::from_rows({{1, 0, 1}}, {1, 2});
    FAIL() << "expected IngestError";
  } catch (const IngestError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
}

TEST(AnnotationMatrix, BlockDesignGivesTwentyLabelsPerTask) {
  // 1000 tasks in 20 blocks of 50; each block labeled by its own pool of 20.
  std::vector<AnnotationRow> rows;
  for (int t = 0; t < 1000; ++t) {
    const int block = t / 50;
    for (int j = 0; j < 20; ++j) rows.emplace_back(t, block * 20 + j, (t + j) % 2);
  }
  const auto m = AnnotationMatrix::from_rows(rows);
  EXPECT_EQ(m.n_tasks(), 1000);
  EXPECT_EQ(m.n_workers(), 400);
  for (TaskId t = 0; t < m.n_tasks(); ++t) ASSERT_EQ(m.task_rows(t).size(), 20u);
  for (WorkerId w = 0; w < m.n_workers(); ++w) ASSERT_EQ(m.worker_label_count(w), 50);
}

TEST(AnnotationMatrix, RoundTripIdentity) {
  testsup::Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = testsup::random_matrix(rng, 25, 8);
    const auto m = AnnotationMatrix::from_rows(inst.rows);
    const auto again = AnnotationMatrix::from_rows(m.to_rows());
    ASSERT_EQ(again.n_tasks(), m.n_tasks());
    ASSERT_EQ(again.n_workers(), m.n_workers());
    ASSERT_EQ(again.n_entries(), m.n_entries());
    ASSERT_EQ(again.task_ids(), m.task_ids());
    ASSERT_EQ(again.worker_ids(), m.worker_ids());
    for (std::int64_t i = 0; i < m.n_entries(); ++i) {
      ASSERT_EQ(again.entries()[i].task, m.entries()[i].task);
      ASSERT_EQ(again.entries()[i].worker, m.entries()[i].worker);
      ASSERT_EQ(again.entries()[i].label, m.entries()[i].label);
    }
  }
}

TEST(AnnotationMatrix, MarginalCountsMatchInputMultiset) {
  testsup::Rng rng(12);
  const auto inst = testsup::random_matrix(rng, 30, 6);
  const auto m = AnnotationMatrix::from_rows(inst.rows);
  std::map<std::int64_t, int> task_counts, worker_counts;
  for (const auto& [t, w, l] : inst.rows) {
    ++task_counts[t];
    ++worker_counts[w];
  }
  for (TaskId t = 0; t < m.n_tasks(); ++t)
    EXPECT_EQ(static_cast<int>(m.task_rows(t).size()), task_counts[m.task_ids()[t]]);
  for (WorkerId w = 0; w < m.n_workers(); ++w)
    EXPECT_EQ(static_cast<int>(m.worker_label_count(w)), worker_counts[m.worker_ids()[w]]);
}

TEST(TaskTable, ValidatesFeatureDimensions) {
  TaskTable t;
  t.group = {"A", "B"};
  t.truth = {1, 0};
  t.features = {{1.0, 2.0}, {3.0}};
  EXPECT_THROW(t.validate(2), ValidationError);
  t.features = {{1.0, 2.0}, {3.0, 4.0}};
  EXPECT_NO_THROW(t.validate(2));
  EXPECT_EQ(t.feature_dim(), 2);
}

TEST(TaskTable, MissingTruthFailsFastWhereRequired) {
  TaskTable t;
  t.group = {"A", "B"};
  t.truth = {1, -1};
  EXPECT_FALSE(t.has_full_truth());
  try {
    t.require_truth("some operation");
    FAIL() << "expected ComputeError";
  } catch (const ComputeError& e) {
    EXPECT_NE(std::string(e.what()).find("some operation"), std::string::npos);
  }
}

TEST(TDResult, PosteriorTieResolvesToPositive) {
  EXPECT_EQ(TDResult::hard_from_posterior(0.5), 1);
  EXPECT_EQ(TDResult::hard_from_posterior(0.4999999), 0);
  EXPECT_EQ(TDResult::hard_from_posterior(1.0), 1);
  EXPECT_EQ(TDResult::hard_from_posterior(0.0), 0);
}
