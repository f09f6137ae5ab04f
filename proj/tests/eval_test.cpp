#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "m3dvg/eval.hpp"

namespace m3dvg {
namespace {

TEST(Buckets, Distance) {
  EXPECT_EQ(bucket_distance(10.0), Distance::kNear);
  EXPECT_EQ(bucket_distance(0.0), Distance::kNear);
  EXPECT_EQ(bucket_distance(15.0), Distance::kMedium);
  EXPECT_EQ(bucket_distance(34.999), Distance::kMedium);
  EXPECT_EQ(bucket_distance(35.0), Distance::kFar);
  EXPECT_EQ(bucket_distance(50.0), Distance::kFar);
  EXPECT_THROW(bucket_distance(-1.0), ContractError);
}

TEST(Buckets, Difficulty) {
  EXPECT_EQ(bucket_difficulty(Occlusion::kNone, 0.10), Difficulty::kEasy);
  EXPECT_EQ(bucket_difficulty(Occlusion::kSevere, 0.0), Difficulty::kHard);
  EXPECT_EQ(bucket_difficulty(Occlusion::kNone, 0.20), Difficulty::kModerate);
  EXPECT_EQ(bucket_difficulty(Occlusion::kPartial, 0.0), Difficulty::kModerate);
  EXPECT_EQ(bucket_difficulty(Occlusion::kNone, 0.15), Difficulty::kModerate);
  EXPECT_EQ(bucket_difficulty(Occlusion::kNone, 0.30), Difficulty::kModerate);
  EXPECT_EQ(bucket_difficulty(Occlusion::kPartial, 0.31), Difficulty::kHard);
  EXPECT_THROW(bucket_difficulty(Occlusion::kNone, 1.5), ValidationError);
}

TEST(Buckets, OcclusionLevels) {
  EXPECT_EQ(occlusion_from_level(0), Occlusion::kNone);
  EXPECT_EQ(occlusion_from_level(1), Occlusion::kPartial);
  EXPECT_EQ(occlusion_from_level(2), Occlusion::kSevere);
  EXPECT_EQ(occlusion_from_level(3), Occlusion::kSevere);
  EXPECT_THROW(occlusion_from_level(-1), ValidationError);
}

TEST(Buckets, UniquenessIsCategoryScoped) {
  CategoryIndex idx;
  idx.add("img1", "car", "a");
  idx.add("img2", "car", "a");
  idx.add("img2", "car", "b");
  idx.add("img2", "car", "c");
  idx.add("img3", "car", "a");
  idx.add("img3", "pedestrian", "b");
  idx.add("img3", "pedestrian", "c");
  idx.add("img3", "car", "a");  // a second caption for the same object
  EXPECT_EQ(bucket_uniqueness("img1", "car", idx), Uniqueness::kUnique);
  EXPECT_EQ(bucket_uniqueness("img2", "car", idx), Uniqueness::kMultiple);
  EXPECT_EQ(bucket_uniqueness("img3", "car", idx), Uniqueness::kUnique);
  EXPECT_EQ(bucket_uniqueness("img3", "pedestrian", idx), Uniqueness::kMultiple);
  EXPECT_THROW(bucket_uniqueness("img9", "car", idx), ContractError);
}

// A unit cube against a co-centered box stretched along x to length L has
// IoU exactly 1/L.
EvalSample sample(std::string id, double iou, std::string image = "img", double depth = 10.0,
                  Occlusion occ = Occlusion::kNone, double trunc = 0.0) {
  EvalSample s;
  s.sample_id = id;
  s.image_id = std::move(image);
  s.category = "car";
  s.gt = Box3D({1, 1.5, depth}, 1, 1, 1, 0.0);
  s.pred = Box3D({1, 1.5, depth}, 1.0 / iou, 1, 1, 0.0);
  s.depth_gt = depth;
  s.occlusion = occ;
  s.truncation = trunc;
  return s;
}

TEST(Evaluate, HandFixture) {
  std::vector<EvalSample> s{sample("a", 0.3), sample("b", 0.6), sample("c", 0.1)};
  AccuracyTable t = evaluate(s);
  const BucketStats& all = t.at("overall");
  EXPECT_EQ(all.count, 3u);
  EXPECT_EQ(format_pct(all.acc25()), "66.67");
  EXPECT_EQ(format_pct(all.acc50()), "33.33");
  EXPECT_EQ(t.at("multiple").count, 3u);
  EXPECT_EQ(t.at("unique").count, 0u);
  EXPECT_EQ(format_pct(t.at("unique").acc25()), "—");
}

TEST(Evaluate, BoundaryIouCounts) {
  EvalSample s = sample("edge", 0.25);
  ASSERT_EQ(iou_3d(s.gt, s.pred), 0.25);
  AccuracyTable t = evaluate({s});
  EXPECT_EQ(t.at("overall").hits25, 1u);
  EXPECT_EQ(t.at("overall").hits50, 0u);
  EXPECT_EQ(t.at("unique").count, 1u);
}

TEST(Evaluate, PerfectPredictions) {
  std::vector<EvalSample> s;
  for (int i = 0; i < 6; ++i) {
    EvalSample e = sample("s" + std::to_string(i), 1.0, "img" + std::to_string(i % 2), 5.0 + 8 * i);
    s.push_back(e);
  }
  AccuracyTable t = evaluate(s);
  for (const char* name : kScenarios) {
    const BucketStats& b = t.at(name);
    if (b.count == 0) continue;
    EXPECT_EQ(*b.acc25(), 100.0) << name;
    EXPECT_EQ(*b.acc50(), 100.0) << name;
  }
}

std::vector<EvalSample> random_samples(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<EvalSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    double depth = rng.uniform(1, 70);
    EvalSample s;
    s.sample_id = "s" + std::to_string(1000 + i);
    s.image_id = "img" + std::to_string(rng.index(n / 2));
    s.category = rng.uniform() < 0.7 ? "car" : "pedestrian";
    s.object_id = "o" + std::to_string(rng.index(3));
    s.gt = Box3D({rng.uniform(-5, 5), 1.5, depth}, rng.uniform(1, 4), rng.uniform(1, 2), 1.5,
                 rng.uniform(-3, 3));
    s.pred = Box3D({s.gt.center.x + rng.uniform(-1, 1), 1.5 + rng.uniform(-0.3, 0.3),
                    depth + rng.uniform(-1, 1)},
                   s.gt.l * rng.uniform(0.8, 1.2), s.gt.w, s.gt.h, s.gt.yaw + rng.uniform(-0.3, 0.3));
    s.depth_gt = depth;
    s.occlusion = occlusion_from_level(static_cast<int>(rng.index(4)));
    s.truncation = rng.uniform(0, 0.6);
    out.push_back(s);
  }
  return out;
}

TEST(Evaluate, CountsPartitionEachAxis) {
  AccuracyTable t = evaluate(random_samples(300, 1));
  auto c = [&](const char* n) { return t.at(n).count; };
  auto h = [&](const char* n) { return t.at(n).hits50; };
  EXPECT_EQ(c("overall"), 300u);
  EXPECT_EQ(c("unique") + c("multiple"), 300u);
  EXPECT_EQ(c("near") + c("medium") + c("far"), 300u);
  EXPECT_EQ(c("easy") + c("moderate") + c("hard"), 300u);
  // Overall is the count-weighted mean of unique and multiple.
  EXPECT_EQ(h("unique") + h("multiple"), h("overall"));
  EXPECT_EQ(t.at("unique").hits25 + t.at("multiple").hits25, t.at("overall").hits25);
  for (const char* n : kScenarios) EXPECT_GT(c(n), 0u) << n;
}

TEST(Evaluate, ShuffledInputGivesIdenticalBytes) {
  auto s = random_samples(200, 2);
  AccuracyTable t = evaluate(s);
  std::string text = format_tables(t), json = to_json(t).dump(2);
  std::mt19937_64 g(5);
  for (int i = 0; i < 5; ++i) {
    std::shuffle(s.begin(), s.end(), g);
    AccuracyTable u = evaluate(s);
    EXPECT_EQ(format_tables(u), text);
    EXPECT_EQ(to_json(u).dump(2), json);
  }
}

TEST(Evaluate, TableSchema) {
  std::string text = format_tables(evaluate(random_samples(50, 3)), "toy");
  for (const char* h : {"Table 1", "Table 2", "Unique", "Multiple", "Overall", "Near/Easy",
                        "Medium/Moderate", "Far/Hard", "Acc@0.25", "Acc@0.5", "Method", "toy"})
    EXPECT_NE(text.find(h), std::string::npos) << h;
  std::size_t header = text.find("Method");
  std::size_t line_end = text.find('\n', header);
  std::string line = text.substr(header, line_end - header);
  std::size_t n = 0;
  for (std::size_t p = line.find("Acc@"); p != std::string::npos; p = line.find("Acc@", p + 1)) ++n;
  EXPECT_EQ(n, 6u);
}

TEST(Evaluate, Errors) {
  EXPECT_THROW(evaluate(std::vector<EvalSample>{}), ContractError);
  EXPECT_THROW(evaluate({sample("a", 0.5), sample("a", 0.4)}), ValidationError);
}

}  // namespace
}  // namespace m3dvg
