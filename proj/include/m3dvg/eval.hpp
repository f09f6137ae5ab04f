#ifndef M3DVG_EVAL_HPP_
#define M3DVG_EVAL_HPP_

// Grounding accuracy by scenario: uniqueness, distance and difficulty
// buckets, each reported at 3D IoU thresholds 0.25 and 0.5.

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "m3dvg/geometry.hpp"

namespace m3dvg {

enum class Occlusion { kNone, kPartial, kSevere };
enum class Uniqueness { kUnique, kMultiple };
enum class Distance { kNear, kMedium, kFar };
enum class Difficulty { kEasy, kModerate, kHard };

// KITTI integer levels: 0 fully visible, 1 partly occluded, 2 largely
// occluded, 3 unknown. Levels 2 and above count as severe.
inline Occlusion occlusion_from_level(int level) {
  if (level < 0) throw ValidationError("occlusion level must be >= 0, got " + std::to_string(level));
  if (level == 0) return Occlusion::kNone;
  if (level == 1) return Occlusion::kPartial;
  return Occlusion::kSevere;
}

inline int occlusion_level(Occlusion o) { return static_cast<int>(o); }

inline const char* to_string(Uniqueness u) {
  return u == Uniqueness::kUnique ? "unique" : "multiple";
}
inline const char* to_string(Distance d) {
  constexpr const char* names[] = {"near", "medium", "far"};
  return names[static_cast<int>(d)];
}
inline const char* to_string(Difficulty d) {
  constexpr const char* names[] = {"easy", "moderate", "hard"};
  return names[static_cast<int>(d)];
}

// Half-open ranges with boundaries going to the farther bucket.
inline Distance bucket_distance(double depth) {
  if (!(depth >= 0)) throw ContractError("bucket_distance: depth must be >= 0");
  if (depth < 15.0) return Distance::kNear;
  if (depth < 35.0) return Distance::kMedium;
  return Distance::kFar;
}

inline Difficulty bucket_difficulty(Occlusion occ, double truncation) {
  if (!(truncation >= 0.0 && truncation <= 1.0))
    throw ValidationError("truncation must lie in [0, 1]");
  if (occ == Occlusion::kNone && truncation < 0.15) return Difficulty::kEasy;
  if (occ == Occlusion::kSevere || truncation > 0.3) return Difficulty::kHard;
  return Difficulty::kModerate;
}

struct EvalSample {
  std::string sample_id;
  std::string image_id;
  std::string category;
  std::string object_id;  // empty: the sample is its own object
  Box3D gt;
  Box3D pred;
  double depth_gt = 0.0;
  Occlusion occlusion = Occlusion::kNone;
  double truncation = 0.0;

  const std::string& object_key() const { return object_id.empty() ? sample_id : object_id; }
};

// Distinct objects per (image, category).
class CategoryIndex {
 public:
  void add(const std::string& image, const std::string& category, const std::string& object) {
    images_.insert(image);
    objects_[{image, category}].insert(object);
  }

  std::size_t count(const std::string& image, const std::string& category) const {
    if (!images_.count(image))
      throw ContractError("category index has no image '" + image + "'");
    auto it = objects_.find({image, category});
    return it == objects_.end() ? 0 : it->second.size();
  }

  static CategoryIndex from_samples(const std::vector<EvalSample>& samples) {
    CategoryIndex idx;
    for (const auto& s : samples) idx.add(s.image_id, s.category, s.object_key());
    return idx;
  }

 private:
  std::set<std::string> images_;
  std::map<std::pair<std::string, std::string>, std::set<std::string>> objects_;
};

inline Uniqueness bucket_uniqueness(const std::string& image, const std::string& category,
                                    const CategoryIndex& index) {
  return index.count(image, category) == 1 ? Uniqueness::kUnique : Uniqueness::kMultiple;
}

struct BucketStats {
  std::size_t count = 0;
  std::size_t hits25 = 0;
  std::size_t hits50 = 0;

  std::optional<double> acc25() const { return pct(hits25); }
  std::optional<double> acc50() const { return pct(hits50); }

 private:
  std::optional<double> pct(std::size_t hits) const {
    if (count == 0) return std::nullopt;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(count);
  }
};

// The nine reported scenarios in table order.
inline constexpr std::array<const char*, 9> kScenarios = {
    "unique", "multiple", "overall", "near", "medium", "far", "easy", "moderate", "hard"};

struct SampleResult {
  std::string sample_id;
  double iou = 0.0;
  Uniqueness uniqueness = Uniqueness::kUnique;
  Distance distance = Distance::kNear;
  Difficulty difficulty = Difficulty::kEasy;
};

struct AccuracyTable {
  std::map<std::string, BucketStats> buckets;  // keyed by kScenarios
  std::vector<SampleResult> samples;           // sorted by sample_id

  const BucketStats& at(const std::string& name) const { return buckets.at(name); }
};

inline constexpr double kThresholdLoose = 0.25;
inline constexpr double kThresholdStrict = 0.5;

inline AccuracyTable evaluate(std::vector<EvalSample> samples, const CategoryIndex& index) {
  if (samples.empty()) throw ContractError("evaluate: no samples");
  std::sort(samples.begin(), samples.end(),
            [](const EvalSample& a, const EvalSample& b) { return a.sample_id < b.sample_id; });
  for (std::size_t i = 1; i < samples.size(); ++i)
    if (samples[i].sample_id == samples[i - 1].sample_id)
      throw ValidationError("evaluate: duplicate sample_id '" + samples[i].sample_id + "'");
  AccuracyTable table;
  for (const char* name : kScenarios) table.buckets[name];
  for (const EvalSample& s : samples) {
    SampleResult r{s.sample_id, iou_3d(s.gt, s.pred),
                   bucket_uniqueness(s.image_id, s.category, index),
                   bucket_distance(s.depth_gt), bucket_difficulty(s.occlusion, s.truncation)};
    for (const char* name :
         {to_string(r.uniqueness), "overall", to_string(r.distance), to_string(r.difficulty)}) {
      BucketStats& b = table.buckets[name];
      ++b.count;
      b.hits25 += r.iou >= kThresholdLoose;
      b.hits50 += r.iou >= kThresholdStrict;
    }
    table.samples.push_back(r);
  }
  return table;
}

inline AccuracyTable evaluate(const std::vector<EvalSample>& samples) {
  return evaluate(samples, CategoryIndex::from_samples(samples));
}

inline std::string format_pct(std::optional<double> v) {
  if (!v) return "—";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *v);
  return buf;
}

namespace detail {

// Pads to a display width, counting UTF-8 code points rather than bytes.
inline std::string pad(const std::string& s, std::size_t width) {
  std::size_t cols = 0;
  for (unsigned char c : s) cols += (c & 0xC0) != 0x80;
  return s + std::string(width > cols ? width - cols : 0, ' ');
}

}  // namespace detail

// Two aligned plain-text tables: Unique / Multiple / Overall, then
// Near/Easy, Medium/Moderate, Far/Hard with "distance/difficulty" cells.
inline std::string format_tables(const AccuracyTable& t, const std::string& method = "result") {
  auto trim = [](std::string s) {
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s;
  };
  constexpr std::size_t kFirst = 16;
  std::size_t first = std::max(kFirst, method.size() + 2);
  auto header = [&](std::array<const char*, 3> groups, std::size_t half) {
    std::string s = detail::pad("", first);
    for (const char* g : groups) s += detail::pad(g, 2 * half);
    s = trim(s) + "\n" + detail::pad("Method", first);
    for (int i = 0; i < 3; ++i) s += detail::pad("Acc@0.25", half) + detail::pad("Acc@0.5", half);
    return trim(s) + "\n";
  };

  constexpr std::size_t kHalf1 = 10;
  std::string out = "Table 1\n";
  out += header({"Unique", "Multiple", "Overall"}, kHalf1);
  std::string row = detail::pad(method, first), counts = detail::pad("count", first);
  for (const char* b : {"unique", "multiple", "overall"}) {
    const BucketStats& s = t.at(b);
    row += detail::pad(format_pct(s.acc25()), kHalf1) + detail::pad(format_pct(s.acc50()), kHalf1);
    counts += detail::pad(std::to_string(s.count), 2 * kHalf1);
  }
  out += trim(row) + "\n" + trim(counts) + "\n\n";

  constexpr std::size_t kHalf2 = 15;
  out += "Table 2\n";
  out += header({"Near/Easy", "Medium/Moderate", "Far/Hard"}, kHalf2);
  row = detail::pad(method, first);
  counts = detail::pad("count", first);
  const std::array<std::pair<const char*, const char*>, 3> pairs = {
      {{"near", "easy"}, {"medium", "moderate"}, {"far", "hard"}}};
  for (auto [d, h] : pairs) {
    const BucketStats &a = t.at(d), &b = t.at(h);
    row += detail::pad(format_pct(a.acc25()) + "/" + format_pct(b.acc25()), kHalf2);
    row += detail::pad(format_pct(a.acc50()) + "/" + format_pct(b.acc50()), kHalf2);
    counts += detail::pad(std::to_string(a.count) + "/" + std::to_string(b.count), 2 * kHalf2);
  }
  out += trim(row) + "\n" + trim(counts) + "\n";
  return out;
}

inline nlohmann::ordered_json to_json(const AccuracyTable& t) {
  nlohmann::ordered_json j;
  j["thresholds"] = {kThresholdLoose, kThresholdStrict};
  auto& buckets = j["buckets"] = nlohmann::ordered_json::object();
  for (const char* name : kScenarios) {
    const BucketStats& s = t.at(name);
    auto pct = [](std::optional<double> v) -> nlohmann::ordered_json {
      if (!v) return nullptr;
      return *v;
    };
    buckets[name] = {{"count", s.count},
                     {"hits@0.25", s.hits25},
                     {"hits@0.5", s.hits50},
                     {"acc@0.25", pct(s.acc25())},
                     {"acc@0.5", pct(s.acc50())}};
  }
  auto& rows = j["samples"] = nlohmann::ordered_json::array();
  for (const SampleResult& r : t.samples)
    rows.push_back({{"sample_id", r.sample_id},
                    {"iou", r.iou},
                    {"uniqueness", to_string(r.uniqueness)},
                    {"distance", to_string(r.distance)},
                    {"difficulty", to_string(r.difficulty)}});
  return j;
}

}  // namespace m3dvg

#endif  // M3DVG_EVAL_HPP_
