#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "protoseg/episodes.hpp"
#include "test_util.hpp"

using namespace protoseg;
using protoseg::testing::TempDir;

namespace {

PatchPool make_pool(int subjects, int per_subject) {
  PatchPool pool;
  for (int s = 0; s < subjects; ++s)
    for (int i = 0; i < per_subject; ++i)
      pool.push_back({PatchId{"s" + std::to_string(s), {i, 0, 0}, 0}, Volume3D(Dims{2, 2, 2}),
                      LabelMask(Dims{2, 2, 2}, Spacing{}, 1)});
  return pool;
}

std::vector<std::string> ids(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("case" + std::to_string(i));
  return out;
}

std::set<std::size_t> all_indices(const Episode& ep) {
  std::set<std::size_t> s;
  for (const auto& c : ep.support) s.insert(c.begin(), c.end());
  for (const auto& q : ep.query) s.insert(q.index);
  return s;
}

}  // namespace

TEST(Episode, OneWayOneShot) {
  const PatchPool pool = make_pool(3, 4);
  EpisodeConfig cfg;
  const Episode ep = build_episode(pool, cfg);
  ASSERT_EQ(ep.support.size(), 1u);
  EXPECT_EQ(ep.support_size(), 1u);
  ASSERT_EQ(ep.query.size(), 1u);
  EXPECT_NE(ep.support[0][0], ep.query[0].index);
  EXPECT_EQ(ep.query[0].label, 1);
}

TEST(Episode, ThreeWayFiveShotUsesThreeSubjects) {
  const PatchPool pool = make_pool(5, 7);
  EpisodeConfig cfg{3, 5, 2, ClassFraming::kSubjectAsClass, 9};
  const Episode ep = build_episode(pool, cfg);
  EXPECT_EQ(ep.support_size(), 15u);
  std::set<std::string> subjects;
  for (std::size_t c = 0; c < ep.support.size(); ++c) {
    std::set<std::string> within;
    for (auto i : ep.support[c]) within.insert(pool[i].id.subject);
    EXPECT_EQ(within.size(), 1u);
    subjects.insert(*within.begin());
  }
  EXPECT_EQ(subjects.size(), 3u);
  for (const auto& q : ep.query) {
    ASSERT_GE(q.label, 1);
    ASSERT_LE(q.label, 3);
    EXPECT_EQ(pool[q.index].id.subject, pool[ep.support[static_cast<std::size_t>(q.label - 1)][0]].id.subject);
  }
}

TEST(Episode, SupportAndQueryDisjoint) {
  const PatchPool pool = make_pool(4, 6);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const bool subj = trial % 2;
    EpisodeConfig cfg{subj ? 2 : 1, 3, 2, subj ? ClassFraming::kSubjectAsClass : ClassFraming::kVesselAsClass, 0};
    const Episode ep = build_episode(pool, cfg, rng);
    EXPECT_EQ(all_indices(ep).size(), ep.support_size() + ep.query.size());
  }
}

TEST(Episode, ExactPoolIsDeterministic) {
  const PatchPool pool = make_pool(1, 4);
  EpisodeConfig cfg{1, 3, 1, ClassFraming::kVesselAsClass, 77};
  const Episode a = build_episode(pool, cfg), b = build_episode(pool, cfg);
  EXPECT_EQ(a.support, b.support);
  EXPECT_EQ(a.query[0].index, b.query[0].index);
}

TEST(Episode, InsufficientPool) {
  const PatchPool pool = make_pool(2, 3);
  try {
    build_episode(pool, EpisodeConfig{3, 1, 1, ClassFraming::kSubjectAsClass, 0});  // only 2 subjects
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientData);
  }
  EXPECT_THROW(build_episode(make_pool(1, 3), EpisodeConfig{1, 3, 1, ClassFraming::kVesselAsClass, 0}), Error);
  EXPECT_THROW(build_episode(pool, EpisodeConfig{2, 1, 1, ClassFraming::kVesselAsClass, 0}), Error);
}

TEST(Episode, GroupBySubject) {
  const auto groups = group_by_subject(make_pool(3, 2));
  ASSERT_EQ(groups.size(), 3u);
  EXPECT_EQ(groups.at("s1"), (std::vector<std::size_t>{2, 3}));
}

TEST(Framing, Strings) {
  EXPECT_EQ(class_framing_from_string(to_string(ClassFraming::kSubjectAsClass)), ClassFraming::kSubjectAsClass);
  EXPECT_EQ(class_framing_from_string(to_string(ClassFraming::kVesselAsClass)), ClassFraming::kVesselAsClass);
  EXPECT_THROW(class_framing_from_string("organ"), Error);
}

TEST(Split, FortyTwoSubjects) {
  const SubjectSplit s = split_subjects(ids(42), {0.78, 0.07, 0.15}, 1);
  EXPECT_EQ(s.train.size(), 33u);
  EXPECT_EQ(s.val.size(), 3u);
  EXPECT_EQ(s.test.size(), 6u);
}

TEST(Split, FourSubjects) {
  const SubjectSplit s = split_subjects(ids(4), {0.5, 0.25, 0.25}, 1);
  EXPECT_EQ(s.train.size(), 2u);
  EXPECT_EQ(s.val.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
}

TEST(Split, PartitionAndDeterminism) {
  const SubjectSplit a = split_subjects(ids(20), {0.6, 0.2, 0.2}, 3);
  const SubjectSplit b = split_subjects(ids(20), {0.6, 0.2, 0.2}, 3);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.test, b.test);
  std::vector<std::string> all = a.train;
  all.insert(all.end(), a.val.begin(), a.val.end());
  all.insert(all.end(), a.test.begin(), a.test.end());
  std::sort(all.begin(), all.end());
  auto expect = ids(20);
  std::sort(expect.begin(), expect.end());
  EXPECT_EQ(all, expect);
}

TEST(Split, Errors) {
  EXPECT_THROW(split_subjects(ids(2), {0.5, 0.25, 0.25}, 0), Error);
  EXPECT_THROW(split_subjects(ids(5), {0.5, 0.5, 0.5}, 0), Error);
  EXPECT_THROW(split_subjects({"a", "a", "b"}, {0.4, 0.3, 0.3}, 0), Error);
}

TEST(Folds, BalancedSizes) {
  // Balanced partition of n into k: the first n % k folds hold one extra subject.
  for (int n : {4, 7, 42}) {
    for (int k = 2; k <= std::min(n, 6); ++k) {
      const auto folds = make_folds(ids(n), k, 5);
      ASSERT_EQ(folds.size(), static_cast<std::size_t>(k));
      std::vector<std::size_t> sizes;
      std::set<std::string> seen;
      for (const auto& f : folds) {
        sizes.push_back(f.test.size());
        EXPECT_EQ(f.train.size() + f.test.size(), static_cast<std::size_t>(n));
        for (const auto& t : f.test) {
          EXPECT_TRUE(seen.insert(t).second);
          EXPECT_EQ(std::count(f.train.begin(), f.train.end(), t), 0);
        }
      }
      EXPECT_EQ(seen.size(), static_cast<std::size_t>(n));
      std::sort(sizes.rbegin(), sizes.rend());
      for (int i = 0; i < k; ++i)
        EXPECT_EQ(sizes[static_cast<std::size_t>(i)], static_cast<std::size_t>(n / k + (i < n % k ? 1 : 0)));
    }
  }
}

TEST(Folds, FortyTwoIntoFour) {
  std::vector<std::size_t> sizes;
  for (const auto& f : make_folds(ids(42), 4, 0)) sizes.push_back(f.test.size());
  std::sort(sizes.rbegin(), sizes.rend());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{11, 11, 10, 10}));
}

TEST(Folds, Errors) {
  EXPECT_THROW(make_folds(ids(5), 1, 0), Error);
  EXPECT_THROW(make_folds(ids(3), 4, 0), Error);
}

TEST(Manifests, SplitAndFoldsRoundTrip) {
  TempDir dir("split");
  const SubjectSplit s = split_subjects(ids(10), {0.6, 0.2, 0.2}, 8);
  save_split(s, dir / "split.json");
  const SubjectSplit r = load_split(dir / "split.json");
  EXPECT_EQ(r.train, s.train);
  EXPECT_EQ(r.val, s.val);
  EXPECT_EQ(r.test, s.test);
  const auto folds = make_folds(ids(9), 3, 2);
  save_folds(folds, dir / "folds.json");
  const auto back = load_folds(dir / "folds.json");
  ASSERT_EQ(back.size(), folds.size());
  for (std::size_t i = 0; i < folds.size(); ++i) EXPECT_EQ(back[i].test, folds[i].test);
  EXPECT_THROW(load_split(dir / "absent.json"), Error);
}
