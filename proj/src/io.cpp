#include "gcalib/io.hpp"

#include "gcalib/error.hpp"

#include "json.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace gcalib {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// small helpers
// ---------------------------------------------------------------------------

void text_position(const std::string& text, std::size_t byte, std::size_t& line, std::size_t& col) {
  line = 1;
  col = 1;
  const std::size_t end = std::min(byte > 0 ? byte - 1 : 0, text.size());
  for (std::size_t i = 0; i < end; ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
}

json parse_scenario_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 0, col = 0;
    text_position(text, e.byte, line, col);
    throw MalformedFieldError("invalid JSON", line, col);
  }
}

[[noreturn]] void malformed(const std::string& what) { throw MalformedFieldError(what, 0, 0); }

const json& field(const json& j, const char* key) {
  if (!j.is_object()) malformed(std::string("expected object holding '") + key + "'");
  auto it = j.find(key);
  if (it == j.end()) malformed(std::string("missing field '") + key + "'");
  return *it;
}

double number(const json& j, const char* what) {
  if (j.is_null()) return std::nan("");
  if (!j.is_number()) malformed(std::string("expected number for ") + what);
  return j.get<double>();
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

template <int N>
json vec_json(const Eigen::Matrix<double, N, 1>& v) {
  json a = json::array();
  for (int i = 0; i < N; ++i) a.push_back(finite_or_null(v(i)));
  return a;
}

template <int N>
Eigen::Matrix<double, N, 1> vec_from(const json& j, const char* what) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(N))
    malformed(std::string("expected array of ") + std::to_string(N) + " for " + what);
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v(i) = number(j[static_cast<std::size_t>(i)], what);
  return v;
}

json mat_json(const Mat3& m) {
  json a = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
  return a;
}

Mat3 mat_from(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 9) malformed(std::string("expected 9 numbers for ") + what);
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = number(j[static_cast<std::size_t>(3 * r + c)], what);
  return m;
}

json transform_json(const RigidTransform& T) {
  return {{"rotation", mat_json(T.rotation)}, {"translation", vec_json<3>(T.translation)}};
}

RigidTransform transform_from(const json& j) {
  RigidTransform T;
  T.rotation = mat_from(field(j, "rotation"), "rotation");
  T.translation = vec_from<3>(field(j, "translation"), "translation");
  return T;
}

json intrinsics_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width},
          {"height", k.height}};
}

CameraIntrinsics intrinsics_from(const json& j) {
  CameraIntrinsics k;
  k.fx = number(field(j, "fx"), "fx");
  k.fy = number(field(j, "fy"), "fy");
  k.cx = number(field(j, "cx"), "cx");
  k.cy = number(field(j, "cy"), "cy");
  const json& w = field(j, "width");
  const json& h = field(j, "height");
  if (!w.is_number_integer() || !h.is_number_integer()) malformed("image size must be integer");
  k.width = w.get<int>();
  k.height = h.get<int>();
  return k;
}

json schedule_json(const std::vector<ExtrinsicPerturbation>& schedule) {
  json a = json::array();
  for (const auto& p : schedule)
    a.push_back({{"time", p.time}, {"ramp", p.ramp}, {"euler", vec_json<3>(p.euler)},
                 {"height_delta", p.height_delta}});
  return a;
}

std::vector<ExtrinsicPerturbation> schedule_from(const json& j) {
  if (!j.is_array()) malformed("schedule must be an array");
  std::vector<ExtrinsicPerturbation> out;
  for (const auto& e : j) {
    ExtrinsicPerturbation p;
    p.time = number(field(e, "time"), "time");
    p.ramp = number(field(e, "ramp"), "ramp");
    p.euler = vec_from<3>(field(e, "euler"), "euler");
    p.height_delta = number(field(e, "height_delta"), "height_delta");
    out.push_back(p);
  }
  return out;
}

long integer(const json& j, const char* what) {
  if (!j.is_number_integer()) malformed(std::string("expected integer for ") + what);
  return j.get<long>();
}

json pixel_json(const PixelPoint& p) { return json::array({p.track_id, p.u, p.v}); }

}  // namespace

// ---------------------------------------------------------------------------
// timestamps
// ---------------------------------------------------------------------------

std::string format_timestamp(double t) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", t);
  return buf;
}

double parse_timestamp(const std::string& s) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    malformed("bad timestamp '" + s + "'");
  return v;
}

namespace {

double timestamp_from(const json& j) {
  if (!j.is_string()) malformed("timestamp must be a decimal string");
  return parse_timestamp(j.get<std::string>());
}

}  // namespace

// ---------------------------------------------------------------------------
// files
// ---------------------------------------------------------------------------

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::IoError, "cannot read " + path);
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

// ---------------------------------------------------------------------------
// scenario
// ---------------------------------------------------------------------------

std::string scenario_to_string(const Scenario& s) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["intrinsics"] = {{"front", intrinsics_json(s.intrinsics)},
                     {"second", s.second_intrinsics ? intrinsics_json(*s.second_intrinsics)
                                                    : json(nullptr)}};
  j["vehicle"] = {{"wheelbase", s.vehicle.wheelbase},
                  {"cg_to_rear", s.vehicle.cg_to_rear},
                  {"cg_height", s.vehicle.cg_height}};

  json wheel = json::array();
  for (const auto& w : s.wheel_samples)
    wheel.push_back(json::array({format_timestamp(w.timestamp), w.speed, w.steering_angle}));
  j["wheel_samples"] = std::move(wheel);

  json frames = json::array();
  for (const auto& kf : s.keyframes) {
    json obs = json::array();
    for (const auto& p : kf.observations) obs.push_back(pixel_json(p));
    json cross = json::array();
    for (const auto& m : kf.cross_matches)
      cross.push_back(json::array({m.p.track_id, m.p.u, m.p.v, m.q.track_id, m.q.u, m.q.v}));
    frames.push_back({{"timestamp", format_timestamp(kf.timestamp)},
                      {"observations", std::move(obs)},
                      {"cross_matches", std::move(cross)}});
  }
  j["keyframes"] = std::move(frames);

  json truth;
  truth["nominal_extrinsic"] = transform_json(s.truth.nominal_extrinsic);
  truth["schedule"] = schedule_json(s.truth.schedule);
  json ext = json::array();
  for (const auto& T : s.truth.extrinsics) ext.push_back(transform_json(T));
  truth["extrinsics"] = std::move(ext);
  json poses = json::array();
  for (const auto& T : s.truth.poses) poses.push_back(transform_json(T));
  truth["poses"] = std::move(poses);
  json labels = json::array();
  for (const auto& l : s.truth.labels) labels.push_back(json::array({l.track_id, l.ground}));
  truth["labels"] = std::move(labels);
  truth["second_extrinsic"] =
      s.truth.second_extrinsic ? transform_json(*s.truth.second_extrinsic) : json(nullptr);
  j["truth"] = std::move(truth);
  return j.dump() + "\n";
}

Scenario scenario_from_string(const std::string& text) {
  const json j = parse_scenario_text(text);
  if (!j.is_object()) malformed("scenario must be a JSON object");
  const json& version = field(j, "schema_version");
  if (!version.is_number_integer() || version.get<long>() != kSchemaVersion)
    throw Error(ErrorCode::SchemaVersionMismatch,
                "expected schema_version " + std::to_string(kSchemaVersion) + ", got " +
                    version.dump());

  Scenario s;
  const json& intr = field(j, "intrinsics");
  s.intrinsics = intrinsics_from(field(intr, "front"));
  if (intr.contains("second") && !intr["second"].is_null())
    s.second_intrinsics = intrinsics_from(intr["second"]);

  const json& veh = field(j, "vehicle");
  s.vehicle.wheelbase = number(field(veh, "wheelbase"), "wheelbase");
  s.vehicle.cg_to_rear = number(field(veh, "cg_to_rear"), "cg_to_rear");
  s.vehicle.cg_height = number(field(veh, "cg_height"), "cg_height");

  const json& wheel = field(j, "wheel_samples");
  if (!wheel.is_array()) malformed("wheel_samples must be an array");
  s.wheel_samples.reserve(wheel.size());
  for (const auto& w : wheel) {
    if (!w.is_array() || w.size() != 3) malformed("wheel sample must be [timestamp, speed, steering]");
    s.wheel_samples.push_back({timestamp_from(w[0]), number(w[1], "speed"), number(w[2], "steering")});
  }

  const json& frames = field(j, "keyframes");
  if (!frames.is_array()) malformed("keyframes must be an array");
  s.keyframes.reserve(frames.size());
  for (const auto& f : frames) {
    KeyframeObservations kf;
    kf.timestamp = timestamp_from(field(f, "timestamp"));
    const json& obs = field(f, "observations");
    if (!obs.is_array()) malformed("observations must be an array");
    kf.observations.reserve(obs.size());
    for (const auto& o : obs) {
      if (!o.is_array() || o.size() != 3) malformed("observation must be [track, u, v]");
      kf.observations.push_back({number(o[1], "u"), number(o[2], "v"), integer(o[0], "track")});
    }
    const json& cross = field(f, "cross_matches");
    if (!cross.is_array()) malformed("cross_matches must be an array");
    for (const auto& c : cross) {
      if (!c.is_array() || c.size() != 6) malformed("cross match must have 6 entries");
      CrossMatch m;
      m.p = {number(c[1], "u"), number(c[2], "v"), integer(c[0], "track")};
      m.q = {number(c[4], "u"), number(c[5], "v"), integer(c[3], "track")};
      kf.cross_matches.push_back(m);
    }
    s.keyframes.push_back(std::move(kf));
  }

  const json& truth = field(j, "truth");
  s.truth.nominal_extrinsic = transform_from(field(truth, "nominal_extrinsic"));
  s.truth.schedule = schedule_from(field(truth, "schedule"));
  for (const auto& T : field(truth, "extrinsics")) s.truth.extrinsics.push_back(transform_from(T));
  for (const auto& T : field(truth, "poses")) s.truth.poses.push_back(transform_from(T));
  for (const auto& l : field(truth, "labels")) {
    if (!l.is_array() || l.size() != 2 || !l[1].is_boolean()) malformed("label must be [track, bool]");
    s.truth.labels.push_back({integer(l[0], "track"), l[1].get<bool>()});
  }
  if (truth.contains("second_extrinsic") && !truth["second_extrinsic"].is_null())
    s.truth.second_extrinsic = transform_from(truth["second_extrinsic"]);

  // content checks the parser alone cannot make
  if (!s.intrinsics.is_valid() || (s.second_intrinsics && !s.second_intrinsics->is_valid()))
    malformed("invalid intrinsics");
  if (!s.vehicle.is_valid()) malformed("invalid vehicle parameters");
  for (std::size_t i = 1; i < s.wheel_samples.size(); ++i)
    if (!(s.wheel_samples[i].timestamp > s.wheel_samples[i - 1].timestamp))
      malformed("wheel sample timestamps must increase");
  for (std::size_t i = 1; i < s.keyframes.size(); ++i)
    if (!(s.keyframes[i].timestamp > s.keyframes[i - 1].timestamp))
      malformed("keyframe timestamps must increase");
  if (s.truth.extrinsics.size() != s.keyframes.size() || s.truth.poses.size() != s.keyframes.size())
    malformed("truth needs one extrinsic and one pose per keyframe");
  for (std::size_t i = 1; i < s.truth.labels.size(); ++i)
    if (!(s.truth.labels[i].track_id > s.truth.labels[i - 1].track_id))
      malformed("labels must be sorted by track id");
  for (const auto& kf : s.keyframes)
    for (const auto& o : kf.observations)
      if (!truth_label(s.truth, o.track_id)) malformed("track " + std::to_string(o.track_id) + " has no label");
  return s;
}

void export_scenario(const Scenario& scenario, const std::string& path) {
  write_text_file(path, scenario_to_string(scenario));
}

Scenario import_scenario(const std::string& path) {
  return scenario_from_string(read_text_file(path));
}

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void bad_config(const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); }

/// Object view that remembers which keys were read so leftovers can be rejected.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) bad_config(path_ + " must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <typename T>
  void read(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) bad_config(name(key) + " must be a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) bad_config(name(key) + " must be an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (it->is_number_unsigned() == false && it->get<long long>() < 0)
            bad_config(name(key) + " must be non-negative");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) bad_config(name(key) + " must be a number");
      }
      out = it->get<T>();
    } catch (const json::exception&) {
      bad_config(name(key) + " has the wrong type");
    }
  }

  template <int N>
  void read_vec(const char* key, Eigen::Matrix<double, N, 1>& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    if (!it->is_array() || it->size() != static_cast<std::size_t>(N))
      bad_config(name(key) + " must be an array of " + std::to_string(N) + " numbers");
    for (int i = 0; i < N; ++i) {
      const json& e = (*it)[static_cast<std::size_t>(i)];
      if (!e.is_number()) bad_config(name(key) + " must hold numbers");
      out(i) = e.get<double>();
    }
  }

  const json* raw(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  Section sub(const char* key) {
    seen_.insert(key);
    return Section(j_.at(key), name(key));
  }

  std::string name(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) bad_config("unknown key " + path_ + "." + it.key());
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_intrinsics(Section s, CameraIntrinsics& k) {
  s.read("fx", k.fx);
  s.read("fy", k.fy);
  s.read("cx", k.cx);
  s.read("cy", k.cy);
  s.read("width", k.width);
  s.read("height", k.height);
  s.finish();
}

void read_extrinsic(Section s, RigidTransform& T) {
  Vec6 xi = xi_from_extrinsic(T);
  s.read_vec<6>("xi", xi);
  s.finish();
  T = extrinsic_from_xi(xi);
}

void read_scenario_config(Section s, ScenarioConfig& c) {
  s.read("seed", c.seed);
  s.read("duration", c.duration);
  s.read("wheel_rate", c.wheel_rate);
  s.read("frame_rate", c.frame_rate);
  if (s.has("trajectory")) {
    Section t = s.sub("trajectory");
    if (const json* kind = t.raw("kind")) {
      if (!kind->is_string()) bad_config("scenario.trajectory.kind must be a string");
      auto k = trajectory_from_string(kind->get<std::string>());
      if (!k) bad_config("unknown trajectory kind " + kind->dump());
      c.trajectory.kind = *k;
    }
    t.read("speed", c.trajectory.speed);
    t.read("steering", c.trajectory.steering);
    t.read("period", c.trajectory.period);
    t.read("drive_time", c.trajectory.drive_time);
    t.read("stop_time", c.trajectory.stop_time);
    t.finish();
  }
  s.read("ground_feature_density", c.ground_feature_density);
  s.read("structure_fraction", c.structure_fraction);
  s.read("pixel_noise_sigma", c.pixel_noise_sigma);
  if (s.has("odometry_noise")) {
    Section o = s.sub("odometry_noise");
    o.read("speed_sigma", c.odometry_noise.speed_sigma);
    o.read("speed_sigma_fraction", c.odometry_noise.speed_sigma_fraction);
    o.read("steering_sigma", c.odometry_noise.steering_sigma);
    o.finish();
  }
  if (const json* sched = s.raw("extrinsic_schedule")) {
    if (!sched->is_array()) bad_config("scenario.extrinsic_schedule must be an array");
    c.extrinsic_schedule.clear();
    for (const auto& e : *sched) {
      Section p(e, "scenario.extrinsic_schedule[]");
      ExtrinsicPerturbation step;
      p.read("time", step.time);
      p.read("ramp", step.ramp);
      p.read_vec<3>("euler", step.euler);
      p.read("height_delta", step.height_delta);
      p.finish();
      c.extrinsic_schedule.push_back(step);
    }
  }
  if (const json* second = s.raw("second_camera")) {
    if (second->is_null() || (second->is_boolean() && !second->get<bool>())) {
      c.second_camera.reset();
    } else if (second->is_boolean()) {
      c.second_camera = ScenarioConfig::default_second_camera();
    } else {
      Section q(*second, "scenario.second_camera");
      SecondCameraConfig cam = ScenarioConfig::default_second_camera();
      if (q.has("extrinsic")) read_extrinsic(q.sub("extrinsic"), cam.ground_from_camera);
      if (q.has("intrinsics")) read_intrinsics(q.sub("intrinsics"), cam.intrinsics);
      q.finish();
      c.second_camera = cam;
    }
  }
  if (s.has("intrinsics")) read_intrinsics(s.sub("intrinsics"), c.intrinsics);
  if (s.has("vehicle")) {
    Section v = s.sub("vehicle");
    v.read("wheelbase", c.vehicle.wheelbase);
    v.read("cg_to_rear", c.vehicle.cg_to_rear);
    v.read("cg_height", c.vehicle.cg_height);
    v.finish();
  }
  if (s.has("nominal_extrinsic")) read_extrinsic(s.sub("nominal_extrinsic"), c.nominal_extrinsic);
  s.read("max_range", c.max_range);
  s.finish();
}

const char* gate_mode_name(GateMode m) {
  return m == GateMode::Literal ? "literal" : "heading_alignment";
}

const char* reference_mode_name(ReferenceMode m) {
  switch (m) {
    case ReferenceMode::Fixed: return "fixed";
    case ReferenceMode::SplitHalf: return "split_half";
    case ReferenceMode::Estimate: break;
  }
  return "estimate";
}

/// Returns whether initial_xi was given explicitly.
bool read_pipeline_config(Section s, PipelineConfig& c) {
  if (s.has("thresholds")) {
    Section t = s.sub("thresholds");
    t.read("dtheta_max", c.thresholds.dtheta_max);
    t.read("eps_g", c.thresholds.eps_g);
    t.read("eps_l", c.thresholds.eps_l);
    t.read("eps_s", c.thresholds.eps_s);
    t.read("eps_h", c.thresholds.eps_h);
    if (const json* mode = t.raw("gate_mode")) {
      const std::string m = mode->is_string() ? mode->get<std::string>() : "";
      if (m == "heading_alignment") c.thresholds.gate_mode = GateMode::HeadingAlignment;
      else if (m == "literal") c.thresholds.gate_mode = GateMode::Literal;
      else bad_config("pipeline.thresholds.gate_mode must be heading_alignment or literal");
    }
    t.finish();
  }
  if (s.has("optimizer")) {
    Section o = s.sub("optimizer");
    o.read("window_size", c.optimizer.window_size);
    o.read("averaging_window", c.optimizer.averaging_window);
    o.read("huber_delta", c.optimizer.huber_delta);
    o.read("max_iterations", c.optimizer.max_iterations);
    o.read("convergence_tol", c.optimizer.convergence_tol);
    o.read("alpha", c.optimizer.alpha);
    o.read_vec<6>("xi_d", c.optimizer.xi_d);
    o.read("feature_cov_px", c.optimizer.feature_cov_px);
    o.read("odometry_sigma", c.optimizer.odometry_sigma);
    o.finish();
  }
  if (s.has("failure")) {
    Section f = s.sub("failure");
    f.read("max_rotation_jump", c.failure.max_rotation_jump);
    f.read("max_translation_jump", c.failure.max_translation_jump);
    f.read("min_features", c.failure.min_features);
    f.read("max_normal_change", c.failure.max_normal_change);
    f.read("max_height_change", c.failure.max_height_change);
    f.read("min_triangulated", c.failure.min_triangulated);
    f.finish();
  }
  if (s.has("keyframes")) {
    Section k = s.sub("keyframes");
    k.read("min_distance", c.keyframes.min_distance);
    k.read("min_speed", c.keyframes.min_speed);
    k.read("max_speed", c.keyframes.max_speed);
    k.read("max_yaw_rate", c.keyframes.max_yaw_rate);
    k.finish();
  }
  if (s.has("epipolar")) {
    Section e = s.sub("epipolar");
    e.read("ransac_iterations", c.epipolar.ransac_iterations);
    e.read("inlier_threshold_px", c.epipolar.inlier_threshold_px);
    e.read("seed", c.epipolar.seed);
    e.finish();
  }
  if (s.has("verification")) {
    Section v = s.sub("verification");
    v.read("max_seed_attempts", c.verification.max_seed_attempts);
    v.read("min_seed_area_px2", c.verification.min_seed_area_px2);
    v.read("max_reprojection_px", c.verification.max_reprojection_px);
    v.read("vote_pairs", c.verification.vote_pairs);
    v.read("pair_pool", c.verification.pair_pool);
    v.read("min_pair_spread_m", c.verification.min_pair_spread_m);
    v.read("min_pair_area_px2", c.verification.min_pair_area_px2);
    v.finish();
  }
  s.read("gating_radius_px", c.gating_radius_px);
  s.read("grid_cols", c.grid_cols);
  s.read("grid_rows", c.grid_rows);
  s.read("per_cell", c.per_cell);
  s.read("max_plane_depth", c.max_plane_depth);
  s.read("prior_decay", c.prior_decay);
  s.read("plane_jump_persistence", c.plane_jump_persistence);
  if (const json* mode = s.raw("reference_mode")) {
    const std::string m = mode->is_string() ? mode->get<std::string>() : "";
    if (m == "estimate") c.reference_mode = ReferenceMode::Estimate;
    else if (m == "split_half") c.reference_mode = ReferenceMode::SplitHalf;
    else if (m == "fixed") c.reference_mode = ReferenceMode::Fixed;
    else bad_config("pipeline.reference_mode must be estimate, split_half or fixed");
  }
  s.read("min_report_samples", c.min_report_samples);
  s.read("gate_stall_limit", c.gate_stall_limit);
  const bool explicit_xi = s.has("initial_xi");
  s.read_vec<6>("initial_xi", c.initial_xi);
  s.read("seed", c.seed);
  s.finish();
  return explicit_xi;
}

json intrinsics_config_json(const CameraIntrinsics& k) { return intrinsics_json(k); }

}  // namespace

ConfigFile config_from_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 0, col = 0;
    text_position(text, e.byte, line, col);
    bad_config("invalid JSON at line " + std::to_string(line) + ", column " + std::to_string(col));
  }
  ConfigFile out;
  Section root(j, "config");
  if (root.has("scenario")) read_scenario_config(root.sub("scenario"), out.scenario);
  bool explicit_xi = false;
  if (root.has("pipeline")) explicit_xi = read_pipeline_config(root.sub("pipeline"), out.pipeline);
  root.finish();
  // The factory extrinsic is the starting guess unless one is given.
  if (!explicit_xi) out.pipeline.initial_xi = xi_from_extrinsic(out.scenario.nominal_extrinsic);
  out.scenario.validate();
  out.pipeline.validate();
  return out;
}

ConfigFile load_config(const std::string& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    bad_config(e.what());
  }
  return config_from_string(text);
}

std::string config_to_string(const ConfigFile& config) {
  const ScenarioConfig& s = config.scenario;
  const PipelineConfig& p = config.pipeline;
  json sc;
  sc["seed"] = s.seed;
  sc["duration"] = s.duration;
  sc["wheel_rate"] = s.wheel_rate;
  sc["frame_rate"] = s.frame_rate;
  sc["trajectory"] = {{"kind", to_string(s.trajectory.kind)},
                      {"speed", s.trajectory.speed},
                      {"steering", s.trajectory.steering},
                      {"period", s.trajectory.period},
                      {"drive_time", s.trajectory.drive_time},
                      {"stop_time", s.trajectory.stop_time}};
  sc["ground_feature_density"] = s.ground_feature_density;
  sc["structure_fraction"] = s.structure_fraction;
  sc["pixel_noise_sigma"] = s.pixel_noise_sigma;
  sc["odometry_noise"] = {{"speed_sigma", s.odometry_noise.speed_sigma},
                          {"speed_sigma_fraction", s.odometry_noise.speed_sigma_fraction},
                          {"steering_sigma", s.odometry_noise.steering_sigma}};
  sc["extrinsic_schedule"] = schedule_json(s.extrinsic_schedule);
  if (s.second_camera)
    sc["second_camera"] = {
        {"extrinsic", {{"xi", vec_json<6>(xi_from_extrinsic(s.second_camera->ground_from_camera))}}},
        {"intrinsics", intrinsics_config_json(s.second_camera->intrinsics)}};
  else
    sc["second_camera"] = nullptr;
  sc["intrinsics"] = intrinsics_config_json(s.intrinsics);
  sc["vehicle"] = {{"wheelbase", s.vehicle.wheelbase},
                   {"cg_to_rear", s.vehicle.cg_to_rear},
                   {"cg_height", s.vehicle.cg_height}};
  sc["nominal_extrinsic"] = {{"xi", vec_json<6>(xi_from_extrinsic(s.nominal_extrinsic))}};
  sc["max_range"] = s.max_range;

  json pc;
  pc["thresholds"] = {{"dtheta_max", p.thresholds.dtheta_max}, {"eps_g", p.thresholds.eps_g},
                      {"eps_l", p.thresholds.eps_l},           {"eps_s", p.thresholds.eps_s},
                      {"eps_h", p.thresholds.eps_h},
                      {"gate_mode", gate_mode_name(p.thresholds.gate_mode)}};
  pc["optimizer"] = {{"window_size", p.optimizer.window_size},
                     {"averaging_window", p.optimizer.averaging_window},
                     {"huber_delta", p.optimizer.huber_delta},
                     {"max_iterations", p.optimizer.max_iterations},
                     {"convergence_tol", p.optimizer.convergence_tol},
                     {"alpha", p.optimizer.alpha},
                     {"xi_d", vec_json<6>(p.optimizer.xi_d)},
                     {"feature_cov_px", p.optimizer.feature_cov_px},
                     {"odometry_sigma", p.optimizer.odometry_sigma}};
  pc["failure"] = {{"max_rotation_jump", p.failure.max_rotation_jump},
                   {"max_translation_jump", p.failure.max_translation_jump},
                   {"min_features", p.failure.min_features},
                   {"max_normal_change", p.failure.max_normal_change},
                   {"max_height_change", p.failure.max_height_change},
                   {"min_triangulated", p.failure.min_triangulated}};
  pc["keyframes"] = {{"min_distance", p.keyframes.min_distance},
                     {"min_speed", p.keyframes.min_speed},
                     {"max_speed", p.keyframes.max_speed},
                     {"max_yaw_rate", p.keyframes.max_yaw_rate}};
  pc["epipolar"] = {{"ransac_iterations", p.epipolar.ransac_iterations},
                    {"inlier_threshold_px", p.epipolar.inlier_threshold_px},
                    {"seed", p.epipolar.seed}};
  pc["verification"] = {{"max_seed_attempts", p.verification.max_seed_attempts},
                        {"min_seed_area_px2", p.verification.min_seed_area_px2},
                        {"max_reprojection_px", p.verification.max_reprojection_px},
                        {"vote_pairs", p.verification.vote_pairs},
                        {"pair_pool", p.verification.pair_pool},
                        {"min_pair_spread_m", p.verification.min_pair_spread_m},
                        {"min_pair_area_px2", p.verification.min_pair_area_px2}};
  pc["gating_radius_px"] = p.gating_radius_px;
  pc["grid_cols"] = p.grid_cols;
  pc["grid_rows"] = p.grid_rows;
  pc["per_cell"] = p.per_cell;
  pc["max_plane_depth"] = p.max_plane_depth;
  pc["prior_decay"] = p.prior_decay;
  pc["plane_jump_persistence"] = p.plane_jump_persistence;
  pc["reference_mode"] = reference_mode_name(p.reference_mode);
  pc["min_report_samples"] = p.min_report_samples;
  pc["gate_stall_limit"] = p.gate_stall_limit;
  pc["initial_xi"] = vec_json<6>(p.initial_xi);
  pc["seed"] = p.seed;

  return json{{"scenario", sc}, {"pipeline", pc}}.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

namespace {

json histogram_json(const Histogram& h) {
  return {{"bin_width", h.bin_width}, {"counts", h.counts}, {"total", h.total}};
}

json plane_json(const std::optional<GroundPlaneEstimate>& p) {
  if (!p) return nullptr;
  return {{"normal", vec_json<3>(p->normal)}, {"height", p->height}, {"inliers", p->inlier_count}};
}

std::optional<GroundPlaneEstimate> plane_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  GroundPlaneEstimate est;
  est.normal = vec_from<3>(field(j, "normal"), "normal");
  est.height = number(field(j, "height"), "height");
  est.inlier_count = static_cast<int>(integer(field(j, "inliers"), "inliers"));
  return est;
}

Histogram histogram_from(const json& j) {
  Histogram h;
  h.bin_width = number(field(j, "bin_width"), "bin_width");
  h.counts = field(j, "counts").get<std::vector<long>>();
  h.total = integer(field(j, "total"), "total");
  return h;
}

}  // namespace

std::string report_to_string(const CalibrationReport& r) {
  json j;
  j["schema_version"] = r.schema_version;
  j["aborted"] = r.aborted;
  j["abort_reason"] = r.abort_reason;

  json events = json::array();
  for (const auto& e : r.events)
    events.push_back({{"timestamp", format_timestamp(e.timestamp)},
                      {"keyframe", e.keyframe},
                      {"xi", vec_json<6>(e.xi)},
                      {"z", vec_json<6>(e.z)},
                      {"samples", e.samples},
                      {"critical", e.critical}});
  j["events"] = std::move(events);

  json frames = json::array();
  for (const auto& k : r.keyframes) {
    json residuals = json::array();
    for (double v : k.residuals) residuals.push_back(finite_or_null(v));
    frames.push_back({{"index", k.index},
                      {"frame", k.frame},
                      {"timestamp", format_timestamp(k.timestamp)},
                      {"candidates", k.candidates},
                      {"selected", k.selected},
                      {"inliers", k.inliers},
                      {"fine", k.fine},
                      {"gated", k.gated},
                      {"suspect", k.suspect},
                      {"plane", plane_json(k.plane)},
                      {"pair_plane", plane_json(k.pair_plane)},
                      {"failure", k.failure.empty() ? json(nullptr) : json(k.failure)},
                      {"transfer_error", finite_or_null(k.transfer_error)},
                      {"residuals", std::move(residuals)},
                      {"window_normal", vec_json<3>(k.window_normal)},
                      {"window_height", k.window_height},
                      {"marginalization_fallback", k.marginalization_fallback},
                      {"gate_restart", k.gate_restart},
                      {"residual_error", k.residual_error ? finite_or_null(*k.residual_error)
                                                          : json(nullptr)}});
  }
  j["keyframes"] = std::move(frames);

  json failures = json::array();
  for (const auto& f : r.failures)
    failures.push_back({{"timestamp", format_timestamp(f.timestamp)},
                        {"keyframe", f.keyframe},
                        {"reason", f.reason}});
  j["failures"] = std::move(failures);

  j["histograms"] = {{"transfer_error", histogram_json(r.transfer_histogram)},
                     {"residual_error", histogram_json(r.residual_histogram)}};
  if (r.truth)
    j["truth"] = {{"delta_roll_deg", r.truth->delta_roll_deg},
                  {"delta_pitch_deg", r.truth->delta_pitch_deg},
                  {"delta_yaw_deg", r.truth->delta_yaw_deg},
                  {"delta_height_cm", r.truth->delta_height_cm},
                  {"events", r.truth->events}};
  else
    j["truth"] = nullptr;
  j["final"] = {{"rotation", mat_json(r.final_result.rotation)},
                {"translation", vec_json<3>(r.final_result.translation)},
                {"xi", vec_json<6>(r.final_result.xi)},
                {"sample_count", r.final_result.sample_count},
                {"reported", r.final_result.reported}};
  return j.dump(2) + "\n";
}

CalibrationReport report_from_string(const std::string& text) {
  const json j = parse_scenario_text(text);
  const json& version = field(j, "schema_version");
  if (!version.is_number_integer() || version.get<long>() != kSchemaVersion)
    throw Error(ErrorCode::SchemaVersionMismatch, "report schema_version " + version.dump());
  CalibrationReport r;
  try {
    r.aborted = field(j, "aborted").get<bool>();
    r.abort_reason = field(j, "abort_reason").get<std::string>();
    for (const auto& e : field(j, "events")) {
      ReportEvent ev;
      ev.timestamp = timestamp_from(field(e, "timestamp"));
      ev.keyframe = static_cast<int>(integer(field(e, "keyframe"), "keyframe"));
      ev.xi = vec_from<6>(field(e, "xi"), "xi");
      ev.z = vec_from<6>(field(e, "z"), "z");
      ev.samples = static_cast<int>(integer(field(e, "samples"), "samples"));
      ev.critical = number(field(e, "critical"), "critical");
      r.events.push_back(ev);
    }
    for (const auto& k : field(j, "keyframes")) {
      KeyframeDiagnostics d;
      d.index = static_cast<int>(integer(field(k, "index"), "index"));
      d.frame = static_cast<int>(integer(field(k, "frame"), "frame"));
      d.timestamp = timestamp_from(field(k, "timestamp"));
      d.candidates = static_cast<int>(integer(field(k, "candidates"), "candidates"));
      d.selected = static_cast<int>(integer(field(k, "selected"), "selected"));
      d.inliers = static_cast<int>(integer(field(k, "inliers"), "inliers"));
      d.fine = static_cast<int>(integer(field(k, "fine"), "fine"));
      d.gated = field(k, "gated").get<bool>();
      d.suspect = field(k, "suspect").get<bool>();
      d.plane = plane_from(field(k, "plane"));
      d.pair_plane = plane_from(field(k, "pair_plane"));
      const json& failure = field(k, "failure");
      if (!failure.is_null()) d.failure = failure.get<std::string>();
      d.transfer_error = number(field(k, "transfer_error"), "transfer_error");
      for (const auto& v : field(k, "residuals")) d.residuals.push_back(number(v, "residual"));
      d.window_normal = vec_from<3>(field(k, "window_normal"), "window_normal");
      d.window_height = number(field(k, "window_height"), "window_height");
      d.marginalization_fallback = field(k, "marginalization_fallback").get<bool>();
      d.gate_restart = field(k, "gate_restart").get<bool>();
      const json& eps_p = field(k, "residual_error");
      if (!eps_p.is_null()) d.residual_error = eps_p.get<double>();
      r.keyframes.push_back(std::move(d));
    }
    for (const auto& f : field(j, "failures"))
      r.failures.push_back({timestamp_from(field(f, "timestamp")),
                            static_cast<int>(integer(field(f, "keyframe"), "keyframe")),
                            field(f, "reason").get<std::string>()});
    const json& hist = field(j, "histograms");
    r.transfer_histogram = histogram_from(field(hist, "transfer_error"));
    r.residual_histogram = histogram_from(field(hist, "residual_error"));
    const json& truth = field(j, "truth");
    if (!truth.is_null()) {
      TruthComparison t;
      t.delta_roll_deg = number(field(truth, "delta_roll_deg"), "delta_roll_deg");
      t.delta_pitch_deg = number(field(truth, "delta_pitch_deg"), "delta_pitch_deg");
      t.delta_yaw_deg = number(field(truth, "delta_yaw_deg"), "delta_yaw_deg");
      t.delta_height_cm = number(field(truth, "delta_height_cm"), "delta_height_cm");
      t.events = static_cast<int>(integer(field(truth, "events"), "events"));
      r.truth = t;
    }
    const json& fin = field(j, "final");
    r.final_result.rotation = mat_from(field(fin, "rotation"), "rotation");
    r.final_result.translation = vec_from<3>(field(fin, "translation"), "translation");
    r.final_result.xi = vec_from<6>(field(fin, "xi"), "xi");
    r.final_result.sample_count = static_cast<int>(integer(field(fin, "sample_count"), "sample_count"));
    r.final_result.reported = field(fin, "reported").get<bool>();
  } catch (const json::type_error& e) {
    malformed(e.what());
  }
  return r;
}

void write_report(const CalibrationReport& report, const std::string& path) {
  write_text_file(path, report_to_string(report));
}

CalibrationReport read_report(const std::string& path) {
  return report_from_string(read_text_file(path));
}

std::string write_keyframe_csv(const CalibrationReport& report, const std::string& directory) {
  std::ostringstream out;
  out << "index,frame,timestamp,candidates,selected,inliers,fine,gated,plane_nx,plane_ny,"
         "plane_nz,plane_height,failure,transfer_error,window_height,residual_error,"
         "marginalization_fallback\n";
  const auto num = [](double v) { return std::isfinite(v) ? format_timestamp(v) : std::string(); };
  for (const auto& k : report.keyframes) {
    out << k.index << ',' << k.frame << ',' << format_timestamp(k.timestamp) << ','
        << k.candidates << ',' << k.selected << ',' << k.inliers << ',' << k.fine << ','
        << (k.gated ? 1 : 0) << ',';
    if (k.plane)
      out << num(k.plane->normal.x()) << ',' << num(k.plane->normal.y()) << ','
          << num(k.plane->normal.z()) << ',' << num(k.plane->height) << ',';
    else
      out << ",,,,";
    out << k.failure << ',' << num(k.transfer_error) << ',' << num(k.window_height) << ','
        << (k.residual_error ? num(*k.residual_error) : std::string()) << ','
        << (k.marginalization_fallback ? 1 : 0) << '\n';
  }
  const std::string path = (std::filesystem::path(directory) / "keyframes.csv").string();
  write_text_file(path, out.str());
  return path;
}

}  // namespace gcalib
