#ifndef M3DVG_IO_ANNOTATIONS_HPP_
#define M3DVG_IO_ANNOTATIONS_HPP_

// Line-delimited JSON records: ground-truth annotations and predictions,
// plus the join that turns them into evaluation samples.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "m3dvg/eval.hpp"
#include "m3dvg/geometry.hpp"
#include "m3dvg/io/calib.hpp"
#include "m3dvg/io/common.hpp"

namespace m3dvg::io {

using Json = nlohmann::ordered_json;

struct AnnotationRecord {
  std::string sample_id;
  std::string image_id;
  std::string caption;
  std::string category;
  Box3D gt_box3d;
  Box2D gt_box2d;
  int occlusion = 0;  // KITTI level 0..3
  double truncation = 0.0;
  std::string calib_ref;
  std::string object_id;  // optional; empty when absent

  bool operator==(const AnnotationRecord&) const = default;
};

inline bool operator==(const Vec3& a, const Vec3& b) { return a.x == b.x && a.y == b.y && a.z == b.z; }
inline bool operator==(const Box3D& a, const Box3D& b) {
  return a.center == b.center && a.l == b.l && a.w == b.w && a.h == b.h && a.yaw == b.yaw;
}
inline bool operator==(const Box2D& a, const Box2D& b) {
  return a.left == b.left && a.top == b.top && a.right == b.right && a.bottom == b.bottom;
}

namespace detail {

// Field access that names the field in every failure.
class Fields {
 public:
  Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ValidationError(where_ + ": record must be a JSON object");
  }

  [[noreturn]] void fail(const std::string& field, const std::string& msg) const {
    throw ValidationError(where_ + ": field '" + field + "': " + msg);
  }

  const Json& get(const std::string& field) const {
    auto it = j_.find(field);
    if (it == j_.end()) fail(field, "missing");
    used_.insert(field);
    return *it;
  }

  bool has(const std::string& field) const { return j_.contains(field); }

  std::string str(const std::string& field, bool nonempty = true) const {
    const Json& v = get(field);
    if (!v.is_string()) fail(field, "expected a string");
    std::string s = v.get<std::string>();
    if (nonempty && s.empty()) fail(field, "must be nonempty");
    return s;
  }

  double num(const std::string& field) const { return number(get(field), field); }

  double number(const Json& v, const std::string& field) const {
    if (!v.is_number()) fail(field, "expected a number");
    double d = v.get<double>();
    if (!std::isfinite(d)) fail(field, "must be finite");
    return d;
  }

  template <std::size_t N>
  std::array<double, N> nums(const Json& v, const std::string& field) const {
    if (!v.is_array() || v.size() != N)
      fail(field, "expected an array of " + std::to_string(N) + " numbers");
    std::array<double, N> out;
    for (std::size_t i = 0; i < N; ++i) out[i] = number(v[i], field);
    return out;
  }

  Box3D box3d(const std::string& field) const {
    const Json& b = get(field);
    if (!b.is_object()) fail(field, "expected an object with center, dims, yaw");
    for (const auto& [k, _] : b.items())
      if (k != "center" && k != "dims" && k != "yaw") fail(field, "unknown key '" + k + "'");
    if (!b.contains("center") || !b.contains("dims") || !b.contains("yaw"))
      fail(field, "needs center, dims and yaw");
    auto c = nums<3>(b["center"], field + ".center");
    auto d = nums<3>(b["dims"], field + ".dims");
    double yaw = number(b["yaw"], field + ".yaw");
    try {
      return Box3D({c[0], c[1], c[2]}, d[0], d[1], d[2], yaw);
    } catch (const Error& e) {
      fail(field, e.what());
    }
  }

  void reject_unknown() const {
    for (const auto& [k, _] : j_.items())
      if (!used_.count(k)) throw ValidationError(where_ + ": unknown field '" + k + "'");
  }

 private:
  const Json& j_;
  std::string where_;
  mutable std::set<std::string> used_;
};

inline Json box3d_json(const Box3D& b) {
  return Json{{"center", {b.center.x, b.center.y, b.center.z}},
              {"dims", {b.l, b.w, b.h}},
              {"yaw", b.yaw}};
}

// Parses each nonblank line as a JSON object and hands it to `fn` with a
// "source:line" location.
template <class F>
void for_each_record(std::string_view text, const std::string& source, F&& fn) {
  auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].find_first_not_of(" \t") == std::string_view::npos) continue;
    std::string where = source + ":" + std::to_string(i + 1);
    Json j;
    try {
      j = Json::parse(lines[i]);
    } catch (const Json::parse_error& e) {
      throw FormatError(where + ": parse error: " + e.what());
    }
    fn(j, where);
  }
}

}  // namespace detail

inline AnnotationRecord annotation_from_json(const Json& j, const std::string& where) {
  detail::Fields f(j, where);
  AnnotationRecord r;
  r.sample_id = f.str("sample_id");
  r.image_id = f.str("image_id");
  r.caption = f.str("caption");
  r.category = f.str("category");
  r.gt_box3d = f.box3d("gt_box3d");
  auto b = f.nums<4>(f.get("gt_box2d"), "gt_box2d");
  try {
    r.gt_box2d = Box2D(b[0], b[1], b[2], b[3]);
  } catch (const Error& e) {
    f.fail("gt_box2d", e.what());
  }
  const Json& occ = f.get("occlusion");
  if (!occ.is_number_integer() || occ.get<int>() < 0 || occ.get<int>() > 3)
    f.fail("occlusion", "expected an integer level 0..3");
  r.occlusion = occ.get<int>();
  r.truncation = f.num("truncation");
  if (r.truncation < 0 || r.truncation > 1) f.fail("truncation", "must lie in [0, 1]");
  r.calib_ref = f.str("calib_ref");
  if (f.has("object_id")) r.object_id = f.str("object_id");
  f.reject_unknown();
  return r;
}

inline Json to_json(const AnnotationRecord& r) {
  Json j{{"sample_id", r.sample_id},
         {"image_id", r.image_id},
         {"caption", r.caption},
         {"category", r.category},
         {"gt_box3d", detail::box3d_json(r.gt_box3d)},
         {"gt_box2d", {r.gt_box2d.left, r.gt_box2d.top, r.gt_box2d.right, r.gt_box2d.bottom}},
         {"occlusion", r.occlusion},
         {"truncation", r.truncation},
         {"calib_ref", r.calib_ref}};
  if (!r.object_id.empty()) j["object_id"] = r.object_id;
  return j;
}

inline std::vector<AnnotationRecord> parse_annotations(std::string_view text,
                                                       const std::string& source = "<memory>") {
  std::vector<AnnotationRecord> out;
  std::map<std::string, std::string> seen;
  detail::for_each_record(text, source, [&](const Json& j, const std::string& where) {
    AnnotationRecord r = annotation_from_json(j, where);
    auto [it, fresh] = seen.emplace(r.sample_id, where);
    if (!fresh)
      throw ValidationError(where + ": duplicate sample_id '" + r.sample_id +
                            "' (first at " + it->second + ")");
    out.push_back(std::move(r));
  });
  return out;
}

inline std::string serialize_annotations(const std::vector<AnnotationRecord>& records) {
  std::string s;
  for (const auto& r : records) s += to_json(r).dump() + "\n";
  return s;
}

inline std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path) {
  return parse_annotations(read_file(path), path.string());
}

inline void save_annotations(const std::filesystem::path& path,
                             const std::vector<AnnotationRecord>& records) {
  write_file_atomic(path, serialize_annotations(records));
}

// A prediction is either a full 3D box or a projected center with depth,
// which needs the sample's calibration to become a box.
struct PredictionRecord {
  std::string sample_id;
  std::optional<Box3D> box3d;
  struct Projected {
    double u, v, depth, l, w, h, yaw;
  };
  std::optional<Projected> projected;

  Box3D resolve(const CameraCalib* calib) const {
    if (box3d) return *box3d;
    if (!calib)
      throw ValidationError("prediction '" + sample_id +
                            "' gives center_2d/depth and needs calibration (pass a calib dir)");
    const Projected& p = *projected;
    return Box3D(backproject_center(p.u, p.v, p.depth, *calib), p.l, p.w, p.h, p.yaw);
  }
};

inline PredictionRecord prediction_from_json(const Json& j, const std::string& where) {
  detail::Fields f(j, where);
  PredictionRecord r;
  r.sample_id = f.str("sample_id");
  if (f.has("box3d")) {
    r.box3d = f.box3d("box3d");
  } else {
    auto c = f.nums<2>(f.get("center_2d"), "center_2d");
    double depth = f.num("depth");
    if (!(depth > 0)) f.fail("depth", "must be positive");
    auto d = f.nums<3>(f.get("dims"), "dims");
    double yaw = f.num("yaw");
    for (double x : d)
      if (!(x > 0)) f.fail("dims", "must be positive");
    r.projected = PredictionRecord::Projected{c[0], c[1], depth, d[0], d[1], d[2], yaw};
  }
  f.reject_unknown();
  return r;
}

inline Json to_json(const PredictionRecord& r) {
  Json j{{"sample_id", r.sample_id}};
  if (r.box3d) {
    j["box3d"] = detail::box3d_json(*r.box3d);
  } else {
    const auto& p = *r.projected;
    j["center_2d"] = {p.u, p.v};
    j["depth"] = p.depth;
    j["dims"] = {p.l, p.w, p.h};
    j["yaw"] = p.yaw;
  }
  return j;
}

inline std::vector<PredictionRecord> parse_predictions(std::string_view text,
                                                       const std::string& source = "<memory>") {
  std::vector<PredictionRecord> out;
  std::set<std::string> seen;
  detail::for_each_record(text, source, [&](const Json& j, const std::string& where) {
    PredictionRecord r = prediction_from_json(j, where);
    if (!seen.insert(r.sample_id).second)
      throw ValidationError(where + ": duplicate prediction for '" + r.sample_id + "'");
    out.push_back(std::move(r));
  });
  return out;
}

inline std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path) {
  return parse_predictions(read_file(path), path.string());
}

inline std::string serialize_predictions(const std::vector<PredictionRecord>& records) {
  std::string s;
  for (const auto& r : records) s += to_json(r).dump() + "\n";
  return s;
}

struct EvalInputs {
  std::vector<EvalSample> samples;
  CategoryIndex index;
};

// Pairs every annotation with its prediction. Every annotation must have
// exactly one prediction and every prediction must match an annotation.
// Calibration files are resolved as calib_dir / calib_ref when needed.
inline EvalInputs join_for_eval(const std::vector<AnnotationRecord>& annotations,
                                const std::vector<PredictionRecord>& predictions,
                                const std::optional<std::filesystem::path>& calib_dir = {}) {
  std::map<std::string, const PredictionRecord*> by_id;
  for (const auto& p : predictions) by_id[p.sample_id] = &p;
  std::map<std::string, CameraCalib> calib_cache;
  EvalInputs in;
  for (const auto& a : annotations) {
    auto it = by_id.find(a.sample_id);
    if (it == by_id.end()) throw ValidationError("no prediction for sample '" + a.sample_id + "'");
    const CameraCalib* calib = nullptr;
    if (!it->second->box3d && calib_dir) {
      auto c = calib_cache.find(a.calib_ref);
      if (c == calib_cache.end())
        c = calib_cache.emplace(a.calib_ref, load_calib(*calib_dir / a.calib_ref)).first;
      calib = &c->second;
    }
    EvalSample s;
    s.sample_id = a.sample_id;
    s.image_id = a.image_id;
    s.category = a.category;
    s.object_id = a.object_id;
    s.gt = a.gt_box3d;
    s.pred = it->second->resolve(calib);
    s.depth_gt = a.gt_box3d.center.z;
    if (s.depth_gt < 0)
      throw ValidationError("sample '" + a.sample_id + "': gt_box3d center is behind the camera");
    s.occlusion = occlusion_from_level(a.occlusion);
    s.truncation = a.truncation;
    in.index.add(s.image_id, s.category, s.object_key());
    in.samples.push_back(std::move(s));
    by_id.erase(it);
  }
  if (!by_id.empty())
    throw ValidationError("prediction for unknown sample '" + by_id.begin()->first + "'");
  return in;
}

}  // namespace m3dvg::io

#endif  // M3DVG_IO_ANNOTATIONS_HPP_
