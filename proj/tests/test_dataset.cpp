#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "m3s/dataset.hpp"
#include "support.hpp"

using namespace m3s;

namespace {

std::string csv_with_rows(int rows, int dim, int bad_row = -1) {
  std::ostringstream s;
  s << "id,label";
  for (int j = 0; j < dim; ++j) s << ",f" << j;
  s << "\n";
  for (int i = 0; i < rows; ++i) {
    s << "r" << i << ",A";
    for (int j = 0; j < dim; ++j) s << "," << (i == bad_row && j == 2 ? std::string("abc") : std::to_string(i + j));
    s << "\n";
  }
  return s.str();
}

template <typename F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

FlowDataset blobs(int classes, int per_class) {
  FlowDataset d{2, {}};
  SampleId id = 0;
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < per_class; ++i) d.records.push_back({id++, {double(c), double(i)}, "c" + std::to_string(c)});
  return d;
}

}  // namespace

TEST(LoadRecords, ThreeRowsGiveIdsZeroToTwo) {
  std::istringstream in(csv_with_rows(3, 4));
  const auto d = read_records(in);
  ASSERT_EQ(d.dim, 4u);
  ASSERT_EQ(d.records.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(d.records[i].id, i);
    EXPECT_EQ(d.records[i].true_label, "A");
  }
  EXPECT_EQ(d.records[2].features, (Vec{2, 3, 4, 5}));
}

TEST(LoadRecords, NonNumericCellNamesRowAndColumn) {
  std::istringstream in(csv_with_rows(10, 4, 7));
  const auto msg = error_of([&] { read_records(in); });
  EXPECT_NE(msg.find("row 7"), std::string::npos) << msg;
  EXPECT_NE(msg.find("f2"), std::string::npos) << msg;
}

TEST(LoadRecords, DimensionMismatchIsSchemaError) {
  std::istringstream in(csv_with_rows(2, 4));
  const auto msg = error_of([&] { read_records(in, 5); });
  EXPECT_NE(msg.find("schema"), std::string::npos) << msg;
}

TEST(LoadRecords, RaggedRowAndBadHeader) {
  std::istringstream ragged("id,label,f0,f1\n0,A,1,2\n1,A,1\n");
  EXPECT_NE(error_of([&] { read_records(ragged); }).find("row 1"), std::string::npos);
  std::istringstream header("x,label,f0\n");
  EXPECT_THROW(read_records(header), DataError);
  std::istringstream empty("");
  EXPECT_THROW(read_records(empty), DataError);
  std::istringstream nan("id,label,f0\n0,A,nan\n");
  EXPECT_THROW(read_records(nan), DataError);
}

TEST(LoadRecords, EmptyLabelMeansUnlabeled) {
  std::istringstream in("id,label,f0\n0,,1.5\n1,B,2\n");
  const auto d = read_records(in);
  EXPECT_FALSE(d.records[0].true_label.has_value());
  EXPECT_EQ(d.records[1].true_label, "B");
}

TEST(SaveRecords, RoundTripIsExact) {
  const auto d = synth_gaussians(3, 20, 5, 4.0, 2);
  const auto path = (scratch_dir("dataset_rt") / "d.csv").string();
  save_records(path, d.records, d.dim);
  const auto back = load_records(path);
  ASSERT_EQ(back.records.size(), d.records.size());
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    EXPECT_EQ(back.records[i].features, d.records[i].features);
    EXPECT_EQ(back.records[i].true_label, d.records[i].true_label);
  }
  EXPECT_THROW(load_records((scratch_dir("dataset_missing") / "nope.csv").string()), DataError);
}

TEST(SettingBundle, EighteenLabeledPerKnownClass) {
  const auto d = blobs(3, 100);
  ExperimentSetting s{{"c0", "c1"}, {"c2"}, 0.30, {}, ExpertMode::NoExpert, 4};
  const auto b = make_setting_bundle(d, s);
  std::map<int, int> per;
  for (const auto& lr : b.labeled) ++per[lr.label];
  EXPECT_EQ(per[0], 18);
  EXPECT_EQ(per[1], 18);
  EXPECT_EQ(b.test.size(), 60u);
  EXPECT_EQ(b.validation.size(), 60u);
  // 42 unlabeled per known class plus the 60 training records of c2.
  EXPECT_EQ(b.unlabeled.size(), 42u * 2 + 60u);
  for (const auto& r : b.unlabeled) EXPECT_FALSE(r.true_label.has_value());
}

TEST(SettingBundle, FullFractionWithoutUnknownsLeavesPoolEmpty) {
  const auto d = blobs(2, 50);
  ExperimentSetting s{{"c0", "c1"}, {}, 1.0, {}, ExpertMode::NoExpert, 0};
  const auto b = make_setting_bundle(d, s);
  EXPECT_TRUE(b.unlabeled.empty());
  EXPECT_EQ(b.labeled.size(), 60u);
}

TEST(SettingBundle, PartitionHoldsForManySeeds) {
  const auto d = synth_gaussians(4, 37, 3, 5.0, 1);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ExperimentSetting s{{"class0", "class2"}, {"class1", "class3"}, 0.25, {}, ExpertMode::NoExpert, seed};
    const auto b = make_setting_bundle(d, s);
    std::multiset<SampleId> ids;
    for (const auto& lr : b.labeled) ids.insert(lr.record.id);
    for (const auto& r : b.unlabeled) ids.insert(r.id);
    for (const auto& r : b.validation) ids.insert(r.id);
    for (const auto& r : b.test) ids.insert(r.id);
    ASSERT_EQ(ids.size(), d.records.size());
    ASSERT_EQ(std::set<SampleId>(ids.begin(), ids.end()).size(), d.records.size());
    for (const auto& lr : b.labeled) {
      const auto& name = b.label_set.name(static_cast<std::size_t>(lr.label));
      ASSERT_EQ(b.truth.at(lr.record.id), name);
    }
  }
}

TEST(SettingBundle, SameSeedSamePartition) {
  const auto d = synth_gaussians(3, 40, 3, 5.0, 1);
  ExperimentSetting s{{"class0", "class1"}, {"class2"}, 0.3, {}, ExpertMode::NoExpert, 8};
  const auto a = make_setting_bundle(d, s);
  const auto b = make_setting_bundle(d, s);
  ASSERT_EQ(a.unlabeled.size(), b.unlabeled.size());
  for (std::size_t i = 0; i < a.unlabeled.size(); ++i) EXPECT_EQ(a.unlabeled[i].id, b.unlabeled[i].id);
  for (std::size_t i = 0; i < a.test.size(); ++i) EXPECT_EQ(a.test[i].features, b.test[i].features);
}

TEST(SettingBundle, ConfigurationErrors) {
  const auto d = blobs(2, 20);
  EXPECT_THROW(make_setting_bundle(d, {{"c0", "zz"}, {"c1"}, 0.3, {}, ExpertMode::NoExpert, 0}), ConfigError);
  EXPECT_THROW(make_setting_bundle(d, {{"c0"}, {}, 0.3, {}, ExpertMode::NoExpert, 0}), ConfigError);
  EXPECT_THROW(make_setting_bundle(d, {{"c0"}, {"c0", "c1"}, 0.3, {}, ExpertMode::NoExpert, 0}), ConfigError);
  EXPECT_THROW(make_setting_bundle(d, {{"c0"}, {"c1"}, 0.0, {}, ExpertMode::NoExpert, 0}), ConfigError);
  EXPECT_THROW(make_setting_bundle(d, {{"c0"}, {"c1"}, 0.3, {0.5, 0.2, 0.2}, ExpertMode::NoExpert, 0}), ConfigError);
}

TEST(SettingBundle, StandardizesWithLabeledStatistics) {
  const auto d = synth_gaussians(2, 100, 3, 6.0, 3);
  const auto b = make_setting_bundle(d, {{"class0", "class1"}, {}, 0.5, {}, ExpertMode::NoExpert, 1});
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0;
    for (const auto& lr : b.labeled) m += lr.record.features[j];
    EXPECT_NEAR(m / double(b.labeled.size()), 0.0, 1e-12);
  }
}

TEST(SynthGaussians, Deterministic) {
  const auto a = synth_gaussians(5, 30, 6, 8.0, 12);
  const auto b = synth_gaussians(5, 30, 6, 8.0, 12);
  std::ostringstream sa, sb;
  write_records(sa, a.records, a.dim);
  write_records(sb, b.records, b.dim);
  EXPECT_EQ(sa.str(), sb.str());
}

TEST(SynthGaussians, TwoBlobsSplitByBisector) {
  const auto d = synth_gaussians(2, 50, 2, 10.0, 7);
  ASSERT_EQ(d.records.size(), 100u);
  Vec m0(2, 0.0), m1(2, 0.0);
  for (const auto& r : d.records)
    for (int j = 0; j < 2; ++j) (*r.true_label == "class0" ? m0 : m1)[j] += r.features[j] / 50.0;
  // Perpendicular bisector of the empirical means.
  for (const auto& r : d.records) {
    double s = 0;
    for (int j = 0; j < 2; ++j) s += (r.features[j] - 0.5 * (m0[j] + m1[j])) * (m1[j] - m0[j]);
    EXPECT_EQ(s > 0, *r.true_label == "class1");
  }
}

TEST(SynthGaussians, NearestCentroidOracleAbove99Percent) {
  const auto d = synth_gaussians(5, 200, 20, 8.0, 1);
  std::map<std::string, Vec> means;
  std::map<std::string, int> counts;
  for (const auto& r : d.records) {
    auto& m = means[*r.true_label];
    m.resize(20, 0.0);
    for (int j = 0; j < 20; ++j) m[j] += r.features[j];
    ++counts[*r.true_label];
  }
  for (auto& [k, m] : means)
    for (auto& x : m) x /= counts[k];
  int ok = 0;
  for (const auto& r : d.records) {
    std::string best;
    double bd = 1e300;
    for (const auto& [k, m] : means) {
      double s = 0;
      for (int j = 0; j < 20; ++j) s += (r.features[j] - m[j]) * (r.features[j] - m[j]);
      if (s < bd) bd = s, best = k;
    }
    ok += best == *r.true_label;
  }
  EXPECT_GE(ok / 1000.0, 0.99);
}

TEST(SynthGaussians, MeansPairwiseSeparatedWhenClassesExceedDimension) {
  const auto d = synth_gaussians(6, 400, 2, 5.0, 4);
  std::map<std::string, Vec> means;
  for (const auto& r : d.records) {
    auto& m = means[*r.true_label];
    m.resize(2, 0.0);
    for (int j = 0; j < 2; ++j) m[j] += r.features[j] / 400.0;
  }
  for (auto a = means.begin(); a != means.end(); ++a)
    for (auto b = std::next(a); b != means.end(); ++b) {
      const double dx = a->second[0] - b->second[0], dy = a->second[1] - b->second[1];
      EXPECT_GE(std::sqrt(dx * dx + dy * dy), 5.0 - 0.35);  // sampling error of the empirical means
    }
}

TEST(IscxTor, ReferenceCountsAndSettings) {
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& c : kIscxTorCounts) {
    counts[c.name] = c.count;
    total += c.count;
  }
  EXPECT_EQ(counts.at("VOIP"), 4524u);
  EXPECT_NEAR(4524.0 / double(total), 0.312, 0.001);
  EXPECT_TRUE(check_iscxtor_counts(counts).empty());
  counts["VOIP"] = 10;
  counts["Extra"] = 3;
  EXPECT_EQ(check_iscxtor_counts(counts).size(), 2u);
  EXPECT_EQ(iscxtor_setting(1).known_classes.size(), 3u);
  EXPECT_EQ(iscxtor_setting(2).known_classes.size(), 5u);
  EXPECT_THROW(iscxtor_setting(3), ConfigError);
}

TEST(LabelSet, VersionIncreasesOnAdd) {
  LabelSet s({"a", "b"});
  const auto v = s.version();
  EXPECT_EQ(s.add("c"), 2);
  EXPECT_GT(s.version(), v);
  EXPECT_THROW(s.add("a"), ConfigError);
  EXPECT_THROW(s.add(""), ConfigError);
  EXPECT_EQ(s.index_of("b"), 1);
  EXPECT_FALSE(s.index_of("z"));
}
