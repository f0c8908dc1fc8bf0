#pragma once

// Plane-wave image-method ray tracer over extruded building footprints.
//
// Scene coordinates are local east/north/up metres with the ground at z = 0.
// The satellite is a plane-wave source along a unit direction `sat_dir`
// (pointing from the receiver toward the satellite). Paths are traced
// backward from the receiver: the back-propagating direction after the
// reflections is mirrored face by face, which reduces each candidate face
// sequence to a chain of ray/plane intersections.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpdetect/error.hpp"
#include "mpdetect/vec3.hpp"

namespace mpdetect::raytracer
{

/// Segment hits closer than this to either endpoint are not occlusions.
inline constexpr double kOcclusionEpsM = 1e-6;
/// |dot(direction, normal)| below this is grazing incidence.
inline constexpr double kGrazingDot = 1e-9;
/// Distance to a polygon edge treated as "on the boundary".
inline constexpr double kBoundaryTolM = 1e-9;
/// Paths whose vertices agree within this are duplicates.
inline constexpr double kDedupTolM = 1e-6;
inline constexpr double kDefaultReceiverHeightM = 1.5;
inline constexpr int kMaxReflectionOrder = 2;

struct Vec2
{
  double east = 0.0;
  double north = 0.0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

struct Building
{
  std::vector<Vec2> footprint; ///< counter-clockwise, not closed
  double height_m = 0.0;
};

struct Face
{
  std::vector<Vec3> vertices; ///< empty for the infinite ground plane
  Vec3 normal;                ///< unit, outward
  Vec3 anchor;                ///< any point on the plane
  int building = -1;          ///< source building index, -1 for ground
  bool infinite = false;
};

struct Scene
{
  double origin_lat_deg = 0.0;
  double origin_lon_deg = 0.0;
  bool ground_plane = false;
  std::vector<Building> buildings;
  std::vector<Face> faces; ///< walls and roof per building, then ground
};

enum class Handedness
{
  rhcp,
  lhcp
};

inline std::string_view to_string(Handedness h) { return h == Handedness::rhcp ? "RHCP" : "LHCP"; }

/// One traced path. `vertices` runs from the receiver outward: rx, then the
/// reflection nearest the receiver, and so on; the last leg continues toward
/// the satellite along the trace direction. `faces[i]` holds the face index of
/// `vertices[i + 1]`. `length_m` is the extra distance travelled relative to
/// the direct wavefront at the receiver, so a LOS path has length 0.
struct PropagationPath
{
  int prn = 0;
  int order = 0;
  std::vector<int> faces;
  std::vector<Vec3> vertices;
  double length_m = 0.0;
  Handedness handedness = Handedness::rhcp;
};

enum class Condition
{
  los_only,
  los_plus_nlos,
  nlos_only,
  blocked
};

inline std::string_view to_string(Condition c)
{
  switch (c) {
    case Condition::los_only: return "LOS_ONLY";
    case Condition::los_plus_nlos: return "LOS_PLUS_NLOS";
    case Condition::nlos_only: return "NLOS_ONLY";
    case Condition::blocked: return "BLOCKED";
  }
  return "?";
}

inline std::optional<Condition> condition_from_string(std::string_view s)
{
  if (s == "LOS_ONLY") return Condition::los_only;
  if (s == "LOS_PLUS_NLOS") return Condition::los_plus_nlos;
  if (s == "NLOS_ONLY") return Condition::nlos_only;
  if (s == "BLOCKED") return Condition::blocked;
  return std::nullopt;
}

inline bool is_multipath(Condition c)
{
  return c == Condition::los_plus_nlos || c == Condition::nlos_only;
}

struct MultipathLabel
{
  int prn = 0;
  Condition label = Condition::blocked;
  int n_los = 0;
  int n_nlos = 0;
};

inline Handedness handedness_for_order(int order)
{
  return order % 2 == 0 ? Handedness::rhcp : Handedness::lhcp;
}

// ---- scene construction ----------------------------------------------------

namespace detail
{

inline double signed_area(const std::vector<Vec2>& p)
{
  double a = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& u = p[i];
    const auto& v = p[(i + 1) % p.size()];
    a += u.east * v.north - v.east * u.north;
  }
  return 0.5 * a;
}

inline double orient(const Vec2& a, const Vec2& b, const Vec2& c)
{
  return (b.east - a.east) * (c.north - a.north) - (b.north - a.north) * (c.east - a.east);
}

inline bool on_segment(const Vec2& a, const Vec2& b, const Vec2& p)
{
  return std::min(a.east, b.east) <= p.east && p.east <= std::max(a.east, b.east) &&
         std::min(a.north, b.north) <= p.north && p.north <= std::max(a.north, b.north);
}

inline bool segments_intersect(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d)
{
  const double o1 = orient(a, b, c);
  const double o2 = orient(a, b, d);
  const double o3 = orient(c, d, a);
  const double o4 = orient(c, d, b);
  if (((o1 > 0 && o2 < 0) || (o1 < 0 && o2 > 0)) && ((o3 > 0 && o4 < 0) || (o3 < 0 && o4 > 0))) {
    return true;
  }
  return (o1 == 0 && on_segment(a, b, c)) || (o2 == 0 && on_segment(a, b, d)) ||
         (o3 == 0 && on_segment(c, d, a)) || (o4 == 0 && on_segment(c, d, b));
}

/// True when any two edges cross, touch, or overlap other than adjacent edges
/// meeting at their shared vertex.
inline bool self_intersecting(const std::vector<Vec2>& p)
{
  const std::size_t n = p.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = p[i];
    const auto& b = p[(i + 1) % n];
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& c = p[j];
      const auto& d = p[(j + 1) % n];
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) {
        // Collinear fold-back: the far endpoint of one edge lies on the other.
        const auto& shared = j == i + 1 ? b : a;
        const auto& other = j == i + 1 ? d : c;
        const auto& from = j == i + 1 ? a : b;
        if (orient(from, shared, other) == 0 &&
            (on_segment(from, shared, other) || on_segment(shared, other, from))) {
          return true;
        }
        continue;
      }
      if (segments_intersect(a, b, c, d)) {
        return true;
      }
    }
  }
  return false;
}

} // namespace detail

/// Walls (one quad per footprint edge) then the roof polygon, normals outward.
inline std::vector<Face> extrude(const Building& b, int building_index)
{
  std::vector<Face> faces;
  const auto& fp = b.footprint;
  const std::size_t n = fp.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = fp[i];
    const auto& q = fp[(i + 1) % n];
    Face wall;
    wall.vertices = {{p.east, p.north, 0.0}, {q.east, q.north, 0.0}, {q.east, q.north, b.height_m},
                     {p.east, p.north, b.height_m}};
    // Right-hand side of a counter-clockwise edge faces outward.
    wall.normal = normalized(Vec3{q.north - p.north, -(q.east - p.east), 0.0});
    wall.anchor = wall.vertices.front();
    wall.building = building_index;
    faces.push_back(std::move(wall));
  }
  Face roof;
  for (const auto& p : fp) {
    roof.vertices.push_back({p.east, p.north, b.height_m});
  }
  roof.normal = {0.0, 0.0, 1.0};
  roof.anchor = roof.vertices.front();
  roof.building = building_index;
  faces.push_back(std::move(roof));
  return faces;
}

inline Face ground_face()
{
  Face g;
  g.normal = {0.0, 0.0, 1.0};
  g.anchor = {0.0, 0.0, 0.0};
  g.infinite = true;
  return g;
}

inline void validate(Building& b, std::size_t index)
{
  const std::string who = "building " + std::to_string(index) + ": ";
  if (!(b.height_m > 0.0) || !std::isfinite(b.height_m)) {
    throw ValidationError(who + "height must be positive");
  }
  if (b.footprint.size() >= 2 && b.footprint.front() == b.footprint.back()) {
    b.footprint.pop_back();
  }
  if (b.footprint.size() < 3) {
    throw GeometryError(who + "footprint needs at least 3 vertices");
  }
  for (std::size_t i = 0; i < b.footprint.size(); ++i) {
    const auto& p = b.footprint[i];
    if (!std::isfinite(p.east) || !std::isfinite(p.north)) {
      throw GeometryError(who + "non-finite footprint vertex");
    }
    if (p == b.footprint[(i + 1) % b.footprint.size()]) {
      throw GeometryError(who + "repeated footprint vertex " + std::to_string(i));
    }
  }
  if (detail::self_intersecting(b.footprint)) {
    throw GeometryError(who + "footprint is self-intersecting");
  }
  if (!(detail::signed_area(b.footprint) > 0.0)) {
    throw GeometryError(who + "footprint must be counter-clockwise");
  }
}

inline Scene build_scene(std::vector<Building> buildings, bool ground_plane, double origin_lat_deg = 0.0,
                         double origin_lon_deg = 0.0)
{
  Scene s;
  s.origin_lat_deg = origin_lat_deg;
  s.origin_lon_deg = origin_lon_deg;
  s.ground_plane = ground_plane;
  for (std::size_t i = 0; i < buildings.size(); ++i) {
    validate(buildings[i], i);
    auto faces = extrude(buildings[i], static_cast<int>(i));
    s.faces.insert(s.faces.end(), faces.begin(), faces.end());
  }
  if (ground_plane) {
    s.faces.push_back(ground_face());
  }
  s.buildings = std::move(buildings);
  return s;
}

inline Scene load_scene(std::string_view text)
{
  std::vector<Building> buildings;
  bool ground = false;
  double lat = 0.0;
  double lon = 0.0;
  try {
    auto j = nlohmann::json::parse(text);
    if (j.contains("origin")) {
      lat = j["origin"].at("lat").get<double>();
      lon = j["origin"].at("lon").get<double>();
    }
    ground = j.value("ground_plane", false);
    for (const auto& jb : j.at("buildings")) {
      Building b;
      b.height_m = jb.at("height_m").get<double>();
      for (const auto& v : jb.at("footprint")) {
        if (!v.is_array() || v.size() != 2) {
          throw ParseError("scene JSON: footprint vertex must be [east, north]");
        }
        b.footprint.push_back({v[0].get<double>(), v[1].get<double>()});
      }
      buildings.push_back(std::move(b));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("scene JSON: ") + e.what());
  }
  return build_scene(std::move(buildings), ground, lat, lon);
}

inline std::string scene_to_json(const Scene& s)
{
  nlohmann::ordered_json j;
  j["origin"] = {{"lat", s.origin_lat_deg}, {"lon", s.origin_lon_deg}};
  j["ground_plane"] = s.ground_plane;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& b : s.buildings) {
    nlohmann::ordered_json jb;
    auto fp = nlohmann::ordered_json::array();
    for (const auto& p : b.footprint) {
      fp.push_back({p.east, p.north});
    }
    jb["footprint"] = std::move(fp);
    jb["height_m"] = b.height_m;
    arr.push_back(std::move(jb));
  }
  j["buildings"] = std::move(arr);
  return j.dump(2) + "\n";
}

// ---- intersection primitives ----------------------------------------------

namespace detail
{

/// Crossing-number point-in-polygon on the projection that drops the dominant
/// normal axis. Points within kBoundaryTolM of an edge report `on_boundary`.
struct Containment
{
  bool inside = false;
  bool on_boundary = false;
};

inline Containment locate(const Face& f, const Vec3& p)
{
  if (f.infinite) {
    return {true, false};
  }
  const Vec3 an{std::abs(f.normal.x), std::abs(f.normal.y), std::abs(f.normal.z)};
  auto project = [&](const Vec3& v) -> Vec2 {
    if (an.x >= an.y && an.x >= an.z) return {v.y, v.z};
    if (an.y >= an.z) return {v.z, v.x};
    return {v.x, v.y};
  };
  // Edge distance is measured in 3D so the tolerance does not depend on the projection.
  const auto& vs = f.vertices;
  const std::size_t n = vs.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 a = vs[i];
    const Vec3 ab = vs[(i + 1) % n] - a;
    const double t = std::clamp(dot(p - a, ab) / dot(ab, ab), 0.0, 1.0);
    if (norm(p - (a + t * ab)) <= kBoundaryTolM) {
      return {true, true};
    }
  }
  const Vec2 q = project(p);
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2 a = project(vs[i]);
    const Vec2 b = project(vs[j]);
    if ((a.north > q.north) != (b.north > q.north)) {
      const double x = a.east + (q.north - a.north) * (b.east - a.east) / (b.north - a.north);
      if (q.east < x) {
        inside = !inside;
      }
    }
  }
  return {inside, false};
}

/// Ray parameter where origin + t dir meets the face's plane, or nothing for
/// grazing directions.
inline std::optional<double> plane_hit(const Face& f, const Vec3& origin, const Vec3& dir)
{
  const double denom = dot(dir, f.normal);
  if (std::abs(denom) < kGrazingDot) {
    return std::nullopt;
  }
  return dot(f.anchor - origin, f.normal) / denom;
}

} // namespace detail

/// True when a face interior blocks origin + t dir for t in (eps, max_t - eps).
/// Faces listed in `skip` (the ones the segment starts or ends on) are ignored.
inline bool occluded(const Scene& scene, const Vec3& origin, const Vec3& dir, double max_t,
                     std::initializer_list<int> skip = {})
{
  for (std::size_t i = 0; i < scene.faces.size(); ++i) {
    if (std::find(skip.begin(), skip.end(), static_cast<int>(i)) != skip.end()) {
      continue;
    }
    const auto& f = scene.faces[i];
    auto t = detail::plane_hit(f, origin, dir);
    if (!t || !(*t > kOcclusionEpsM) || !(*t < max_t - kOcclusionEpsM)) {
      continue;
    }
    const auto where = detail::locate(f, origin + *t * dir);
    if (where.inside && !where.on_boundary) {
      return true;
    }
  }
  return false;
}

inline bool los_visible(const Scene& scene, const Vec3& rx, const Vec3& sat_dir)
{
  return !occluded(scene, rx, sat_dir, std::numeric_limits<double>::infinity());
}

namespace detail
{

inline void require_unit(const Vec3& d)
{
  if (!(std::abs(norm(d) - 1.0) <= 1e-9)) {
    throw std::invalid_argument("sat_dir must be a unit vector");
  }
}

/// Next reflection vertex when travelling from `from` along `dir` to face `f`.
inline std::optional<Vec3> reflection_vertex(const Face& f, const Vec3& from, const Vec3& dir)
{
  auto t = plane_hit(f, from, dir);
  if (!t || !(*t > kOcclusionEpsM)) {
    return std::nullopt;
  }
  const Vec3 p = from + *t * dir;
  if (!locate(f, p).inside) {
    return std::nullopt;
  }
  return p;
}

inline bool same_path(const PropagationPath& a, const PropagationPath& b)
{
  if (a.order != b.order || a.vertices.size() != b.vertices.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.vertices.size(); ++i) {
    if (norm(a.vertices[i] - b.vertices[i]) > kDedupTolM) {
      return false;
    }
  }
  return true;
}

inline double excess_length(const std::vector<Vec3>& v, const Vec3& sat_dir)
{
  double len = 0.0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    len += norm(v[i] - v[i - 1]);
  }
  return len - dot(v.back() - v.front(), sat_dir);
}

} // namespace detail

/// Enumerates the LOS path and every specular path with up to `max_order`
/// reflections that survives containment and occlusion tests.
inline std::vector<PropagationPath> trace_paths(const Scene& scene, const Vec3& rx, const Vec3& sat_dir,
                                                int max_order = kMaxReflectionOrder, int prn = 0)
{
  if (max_order < 0 || max_order > kMaxReflectionOrder) {
    throw std::invalid_argument("trace_paths: max_order must be 0, 1 or 2");
  }
  detail::require_unit(sat_dir);
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const auto& faces = scene.faces;
  const int n_faces = static_cast<int>(faces.size());

  std::vector<PropagationPath> paths;
  auto emit = [&](std::vector<int> face_ids, std::vector<Vec3> vertices) {
    PropagationPath p;
    p.prn = prn;
    p.order = static_cast<int>(face_ids.size());
    p.handedness = handedness_for_order(p.order);
    p.length_m = detail::excess_length(vertices, sat_dir);
    p.faces = std::move(face_ids);
    p.vertices = std::move(vertices);
    for (const auto& q : paths) {
      if (detail::same_path(q, p)) {
        return;
      }
    }
    paths.push_back(std::move(p));
  };

  if (los_visible(scene, rx, sat_dir)) {
    emit({}, {rx});
  }
  if (max_order >= 1) {
    for (int f = 0; f < n_faces; ++f) {
      const auto& face = faces[f];
      if (!(dot(sat_dir, face.normal) > kGrazingDot)) {
        continue; // wave arrives from behind the face or grazes it
      }
      const Vec3 back = reflect(sat_dir, face.normal);
      auto p = detail::reflection_vertex(face, rx, back);
      if (!p) {
        continue;
      }
      const double leg = norm(*p - rx);
      if (occluded(scene, rx, back, leg, {f}) || occluded(scene, *p, sat_dir, kInf, {f})) {
        continue;
      }
      emit({f}, {rx, *p});
    }
  }
  if (max_order >= 2) {
    // far: first face hit by the incoming wave; near: the face that sends it to rx.
    for (int near = 0; near < n_faces; ++near) {
      for (int far = 0; far < n_faces; ++far) {
        if (near == far) {
          continue;
        }
        const auto& f_near = faces[near];
        const auto& f_far = faces[far];
        if (!(dot(sat_dir, f_far.normal) > kGrazingDot)) {
          continue;
        }
        const Vec3 back_mid = reflect(sat_dir, f_far.normal);
        if (!(dot(back_mid, f_near.normal) > kGrazingDot)) {
          continue;
        }
        const Vec3 back_rx = reflect(back_mid, f_near.normal);
        auto p_near = detail::reflection_vertex(f_near, rx, back_rx);
        if (!p_near) {
          continue;
        }
        auto p_far = detail::reflection_vertex(f_far, *p_near, back_mid);
        if (!p_far) {
          continue;
        }
        if (occluded(scene, rx, back_rx, norm(*p_near - rx), {near}) ||
            occluded(scene, *p_near, back_mid, norm(*p_far - *p_near), {near, far}) ||
            occluded(scene, *p_far, sat_dir, kInf, {far})) {
          continue;
        }
        emit({near, far}, {rx, *p_near, *p_far});
      }
    }
  }
  return paths;
}

inline MultipathLabel label_condition(const std::vector<PropagationPath>& paths, int prn = 0)
{
  MultipathLabel m;
  m.prn = paths.empty() ? prn : paths.front().prn;
  for (const auto& p : paths) {
    if (p.order == 0) {
      m.n_los = 1;
    } else {
      ++m.n_nlos;
    }
  }
  if (m.n_los == 1) {
    m.label = m.n_nlos > 0 ? Condition::los_plus_nlos : Condition::los_only;
  } else {
    m.label = m.n_nlos > 0 ? Condition::nlos_only : Condition::blocked;
  }
  return m;
}

// ---- path reports ----------------------------------------------------------

/// Traced paths and ground-truth label for one (epoch, prn).
struct TraceReport
{
  std::int64_t epoch = 0;
  int prn = 0;
  double elevation_deg = 0.0;
  double azimuth_deg = 0.0;
  MultipathLabel label;
  std::vector<PropagationPath> paths;
};

struct TraceReportFile
{
  Vec3 receiver_enu;
  std::vector<TraceReport> reports;
};

inline std::string reports_to_json(const TraceReportFile& file)
{
  nlohmann::ordered_json j;
  j["receiver_enu"] = {file.receiver_enu.x, file.receiver_enu.y, file.receiver_enu.z};
  auto reports = nlohmann::ordered_json::array();
  for (const auto& r : file.reports) {
    nlohmann::ordered_json jr;
    jr["epoch"] = r.epoch;
    jr["prn"] = r.prn;
    jr["elevation_deg"] = r.elevation_deg;
    jr["azimuth_deg"] = r.azimuth_deg;
    jr["label"] = std::string(to_string(r.label.label));
    jr["n_los"] = r.label.n_los;
    jr["n_nlos"] = r.label.n_nlos;
    auto paths = nlohmann::ordered_json::array();
    for (const auto& p : r.paths) {
      nlohmann::ordered_json jp;
      jp["order"] = p.order;
      jp["handedness"] = std::string(to_string(p.handedness));
      jp["length_m"] = p.length_m;
      jp["faces"] = p.faces;
      auto verts = nlohmann::ordered_json::array();
      for (const auto& v : p.vertices) {
        verts.push_back({v.x, v.y, v.z});
      }
      jp["vertices"] = std::move(verts);
      paths.push_back(std::move(jp));
    }
    jr["paths"] = std::move(paths);
    reports.push_back(std::move(jr));
  }
  j["reports"] = std::move(reports);
  return j.dump(2) + "\n";
}

inline TraceReportFile reports_from_json(std::string_view text)
{
  TraceReportFile file;
  try {
    auto j = nlohmann::json::parse(text);
    const auto& rx = j.at("receiver_enu");
    file.receiver_enu = {rx.at(0).get<double>(), rx.at(1).get<double>(), rx.at(2).get<double>()};
    for (const auto& jr : j.at("reports")) {
      TraceReport r;
      r.epoch = jr.at("epoch").get<std::int64_t>();
      r.prn = jr.at("prn").get<int>();
      r.elevation_deg = jr.at("elevation_deg").get<double>();
      r.azimuth_deg = jr.at("azimuth_deg").get<double>();
      auto cond = condition_from_string(jr.at("label").get<std::string>());
      if (!cond) {
        throw ParseError("path report: unknown label '" + jr.at("label").get<std::string>() + "'");
      }
      r.label = {r.prn, *cond, jr.at("n_los").get<int>(), jr.at("n_nlos").get<int>()};
      for (const auto& jp : jr.at("paths")) {
        PropagationPath p;
        p.prn = r.prn;
        p.order = jp.at("order").get<int>();
        const auto hand = jp.at("handedness").get<std::string>();
        if (hand != "RHCP" && hand != "LHCP") {
          throw ParseError("path report: unknown handedness '" + hand + "'");
        }
        p.handedness = hand == "RHCP" ? Handedness::rhcp : Handedness::lhcp;
        p.length_m = jp.at("length_m").get<double>();
        p.faces = jp.at("faces").get<std::vector<int>>();
        for (const auto& v : jp.at("vertices")) {
          p.vertices.push_back({v.at(0).get<double>(), v.at(1).get<double>(), v.at(2).get<double>()});
        }
        r.paths.push_back(std::move(p));
      }
      file.reports.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("path report JSON: ") + e.what());
  }
  return file;
}

} // namespace mpdetect::raytracer
