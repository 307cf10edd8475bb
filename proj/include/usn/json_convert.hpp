#pragma once

// nlohmann-json conversions for the serialized domain types. Kept out of the
// core headers so only IO translation units pay for the include.

#include "usn/geometry.hpp"
#include "usn/sim_scene.hpp"

#include <json.hpp>

#include <stdexcept>

namespace usn {

using Json = nlohmann::json;

inline Json to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec3_from_json(const Json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

inline Json to_json(const RigidTransform& pose) {
  Json rows = Json::array();
  for (int r = 0; r < 4; ++r) {
    Json row = Json::array();
    for (int c = 0; c < 4; ++c) {
      if (r < 3 && c < 3)
        row.push_back(pose.rotation(r, c));
      else if (r < 3)
        row.push_back(pose.translation(r));
      else
        row.push_back(c == 3 ? 1.0 : 0.0);
    }
    rows.push_back(row);
  }
  return rows;
}

/// Accepts either a 4x4 row-major matrix or the quaternion form
/// {"quaternion": [w,x,y,z], "translation": [x,y,z]}; quaternions are
/// normalized and converted at this boundary.
inline RigidTransform pose_from_json(const Json& j) {
  if (j.is_object() && j.contains("quaternion")) {
    const auto& q = j.at("quaternion");
    if (!q.is_array() || q.size() != 4) throw std::runtime_error("pose: quaternion needs 4 values");
    Eigen::Quaterniond quat(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(),
                            q.at(3).get<double>());
    if (quat.norm() < 1e-12) throw std::runtime_error("pose: zero quaternion");
    quat.normalize();
    RigidTransform pose;
    pose.rotation = quat.toRotationMatrix();
    if (j.contains("translation")) pose.translation = vec3_from_json(j.at("translation"));
    return pose;
  }
  if (!j.is_array() || j.size() != 4) throw std::runtime_error("pose: expected 4x4 array");
  RigidTransform pose;
  for (int r = 0; r < 3; ++r) {
    const auto& row = j.at(r);
    if (!row.is_array() || row.size() != 4) throw std::runtime_error("pose: expected 4x4 array");
    for (int c = 0; c < 3; ++c) pose.rotation(r, c) = row.at(c).get<double>();
    pose.translation(r) = row.at(3).get<double>();
  }
  if (pose.rigidity_error() > 1e-6) {
    throw std::runtime_error("pose: rotation block is not orthonormal");
  }
  pose.rotation = orthonormalized(pose.rotation);
  return pose;
}

inline Json to_json(const CalibrationMap& cal) {
  return {{"width", cal.width},
          {"height", cal.height},
          {"pixel_spacing_u_mm", cal.pixel_spacing_u},
          {"pixel_spacing_v_mm", cal.pixel_spacing_v},
          {"image_origin_in_p_mm", to_json(cal.image_origin_in_p)},
          {"u_axis_in_p", to_json(cal.u_axis_in_p)},
          {"v_axis_in_p", to_json(cal.v_axis_in_p)}};
}

inline CalibrationMap calibration_from_json(const Json& j) {
  CalibrationMap cal;
  cal.width = j.value("width", cal.width);
  cal.height = j.value("height", cal.height);
  cal.pixel_spacing_u = j.value("pixel_spacing_u_mm", cal.pixel_spacing_u);
  cal.pixel_spacing_v = j.value("pixel_spacing_v_mm", cal.pixel_spacing_v);
  if (j.contains("image_origin_in_p_mm")) cal.image_origin_in_p = vec3_from_json(j.at("image_origin_in_p_mm"));
  if (j.contains("u_axis_in_p")) cal.u_axis_in_p = vec3_from_json(j.at("u_axis_in_p"));
  if (j.contains("v_axis_in_p")) cal.v_axis_in_p = vec3_from_json(j.at("v_axis_in_p"));
  if (cal.width < 1 || cal.height < 1 || cal.pixel_spacing_u <= 0 || cal.pixel_spacing_v <= 0) {
    throw std::runtime_error("calibration: invalid size or spacing");
  }
  return cal;
}

inline Json to_json(const NeedleModel& n) {
  return {{"entry_point_mm", to_json(n.entry_point)},
          {"direction", to_json(n.direction)},
          {"inserted_length_mm", n.inserted_length_mm},
          {"diameter_mm", n.diameter_mm}};
}

inline NeedleModel needle_from_json(const Json& j) {
  NeedleModel n;
  if (j.contains("entry_point_mm")) n.entry_point = vec3_from_json(j.at("entry_point_mm"));
  if (j.contains("direction")) n.direction = vec3_from_json(j.at("direction")).normalized();
  n.inserted_length_mm = j.value("inserted_length_mm", n.inserted_length_mm);
  n.diameter_mm = j.value("diameter_mm", n.diameter_mm);
  if (n.inserted_length_mm < 0.0 || n.diameter_mm <= 0.0) {
    throw std::runtime_error("needle: inserted_length must be >= 0 and diameter > 0");
  }
  return n;
}

inline Json to_json(const ProbeModel& p) {
  return {{"footprint_mm", p.footprint_mm},
          {"depth_mm", p.depth_mm},
          {"elevation_width_mm", p.elevation_width_mm},
          {"elevation_slope", p.elevation_slope}};
}

inline ProbeModel probe_from_json(const Json& j) {
  ProbeModel p;
  p.footprint_mm = j.value("footprint_mm", p.footprint_mm);
  p.depth_mm = j.value("depth_mm", p.depth_mm);
  p.elevation_width_mm = j.value("elevation_width_mm", p.elevation_width_mm);
  p.elevation_slope = j.value("elevation_slope", p.elevation_slope);
  if (p.elevation_width(0.0) <= 0.0 || p.elevation_width(p.depth_mm) <= 0.0) {
    throw std::runtime_error("probe: elevation width must stay positive over the depth range");
  }
  return p;
}

inline Json to_json(const DegradationParams& d) {
  return {{"gap_rate", d.gap_rate},
          {"gap_len_min_px", d.gap_len_min_px},
          {"gap_len_max_px", d.gap_len_max_px},
          {"blob_rate", d.blob_rate},
          {"blob_radius_min_px", d.blob_radius_min_px},
          {"blob_radius_max_px", d.blob_radius_max_px},
          {"flip_noise", d.flip_noise},
          {"rng_seed", d.rng_seed}};
}

inline DegradationParams degradation_from_json(const Json& j) {
  DegradationParams d;
  d.gap_rate = j.value("gap_rate", d.gap_rate);
  d.gap_len_min_px = j.value("gap_len_min_px", d.gap_len_min_px);
  d.gap_len_max_px = j.value("gap_len_max_px", d.gap_len_max_px);
  d.blob_rate = j.value("blob_rate", d.blob_rate);
  d.blob_radius_min_px = j.value("blob_radius_min_px", d.blob_radius_min_px);
  d.blob_radius_max_px = j.value("blob_radius_max_px", d.blob_radius_max_px);
  d.flip_noise = j.value("flip_noise", d.flip_noise);
  d.rng_seed = j.value("rng_seed", d.rng_seed);
  if (d.flip_noise < 0.0 || d.flip_noise > 1.0 || d.gap_rate < 0.0 || d.blob_rate < 0.0) {
    throw std::runtime_error("degradation: rates must be non-negative, flip_noise in [0,1]");
  }
  return d;
}

inline Json to_json(const GtAnnotation& gt) {
  return {{"visible", gt.visible},
          {"tip_px", Json::array({gt.tip_px.x(), gt.tip_px.y()})},
          {"shaft_p0_px", Json::array({gt.shaft_p0_px.x(), gt.shaft_p0_px.y()})},
          {"shaft_p1_px", Json::array({gt.shaft_p1_px.x(), gt.shaft_p1_px.y()})},
          {"shaft_length_px", gt.shaft_length_px},
          {"axis_point_mm", to_json(gt.axis_point)},
          {"axis_dir", to_json(gt.axis_dir)}};
}

inline GtAnnotation gt_from_json(const Json& j) {
  GtAnnotation gt;
  gt.visible = j.value("visible", false);
  if (j.contains("tip_px")) gt.tip_px = {j["tip_px"].at(0).get<double>(), j["tip_px"].at(1).get<double>()};
  if (j.contains("shaft_p0_px"))
    gt.shaft_p0_px = {j["shaft_p0_px"].at(0).get<double>(), j["shaft_p0_px"].at(1).get<double>()};
  if (j.contains("shaft_p1_px"))
    gt.shaft_p1_px = {j["shaft_p1_px"].at(0).get<double>(), j["shaft_p1_px"].at(1).get<double>()};
  gt.shaft_length_px = j.value("shaft_length_px", 0.0);
  if (j.contains("axis_point_mm")) gt.axis_point = vec3_from_json(j.at("axis_point_mm"));
  if (j.contains("axis_dir")) gt.axis_dir = vec3_from_json(j.at("axis_dir"));
  return gt;
}

}  // namespace usn
