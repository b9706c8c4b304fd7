#ifndef GEOMEM_SCENEGEN_HPP_
#define GEOMEM_SCENEGEN_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "geomem/config.hpp"
#include "geomem/rng.hpp"
#include "geomem/tensor.hpp"

namespace geomem {

inline double wrap_pi(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a < -M_PI) a += 2.0 * M_PI;
  return a;
}

struct Vec3 {
  double x = 0, y = 0, z = 0;
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
};

struct WorldObject {
  int id = 0;
  int cls = 0;
  Vec3 pos;       // meters, world frame; rests on the floor
  double size = 0.5;  // meters (diameter of the bounding sphere)
};

struct World {
  std::vector<WorldObject> objects;
  double room_x = 8.0, room_y = 8.0, room_z = 3.0;
};

struct Pose {
  Vec3 pos;  // eye position
  double yaw = 0;

  Vec3 forward() const { return {std::cos(yaw), std::sin(yaw), 0}; }
  Vec3 right() const { return {std::sin(yaw), -std::cos(yaw), 0}; }
};

struct Trajectory {
  std::vector<Pose> poses;
  std::vector<std::vector<int>> visible;  // object ids per pose
};

enum class TaskKind : std::uint8_t {
  ObjectCount = 0,
  AbsoluteDistance = 1,
  RelativeDistance = 2,
  RelativeDirection = 3,
  AppearanceOrder = 4,
};

inline const char* task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::ObjectCount: return "object_count";
    case TaskKind::AbsoluteDistance: return "absolute_distance";
    case TaskKind::RelativeDistance: return "relative_distance";
    case TaskKind::RelativeDirection: return "relative_direction";
    case TaskKind::AppearanceOrder: return "appearance_order";
  }
  return "?";
}

inline bool task_is_numeric(TaskKind k) {
  return k == TaskKind::ObjectCount || k == TaskKind::AbsoluteDistance;
}

struct QARecord {
  TaskKind kind = TaskKind::ObjectCount;
  std::vector<int> query;                  // classes the question mentions, in role order
  std::vector<std::vector<int>> options;   // per-option payload (classes, or a direction code)
  double numeric_answer = 0;               // numeric kinds
  int answer_index = -1;                   // choice kinds
  std::uint64_t prompt_seed = 0;
};

template <class S>
struct FrameObservationT {
  TensorT<S> F;  // h x w x c visual tokens
  TensorT<S> G;  // h x w x c_g geometry tokens
  TensorT<S> Z;  // h x w x c_v view tokens
  TensorT<S> X;  // H x W x 3 point map, world frame, meters
};

template <class S>
struct EpisodeT {
  World world;
  Trajectory trajectory;
  std::vector<FrameObservationT<S>> frames;
  std::vector<QARecord> qa;
  std::uint64_t seed = 0;
};

// ---- vocabulary ----------------------------------------------------------

// Fixed random unit embedding per class, shared across episodes.
template <class S>
TensorT<S> class_embedding(int cls, int c, std::uint64_t vocab_seed) {
  Rng rng(fnv1a(&cls, sizeof(cls), vocab_seed ^ 0x9d8f3c1aULL));
  TensorT<S> e({c});
  double n2 = 0;
  for (auto& v : e.data) {
    double g = rng.normal();
    v = static_cast<S>(g);
    n2 += g * g;
  }
  const S inv = static_cast<S>(1.0 / std::sqrt(std::max(n2, 1e-12)));
  for (auto& v : e.data) v *= inv;
  return e;
}

template <class S>
TensorT<S> background_embedding(int c, std::uint64_t vocab_seed) {
  return class_embedding<S>(-1, c, vocab_seed);
}

// ---- world & trajectory ---------------------------------------------------

inline World gen_world(std::uint64_t seed, const DataConfig& cfg) {
  Rng rng(seed);
  const double margin = 0.6;
  const double min_sep = 0.8;
  for (int attempt = 0; attempt < 64; ++attempt) {
    World w;
    w.room_x = rng.uniform(cfg.room_min, cfg.room_max);
    w.room_y = rng.uniform(cfg.room_min, cfg.room_max);
    w.room_z = 3.0;
    // Class layout: most worlds contain one deliberately repeated class
    // (multiplicity 2-3) and otherwise pairwise-distinct classes. Accidental
    // repeats would skew the count-question answers toward 1 (constant-guess
    // prior) and starve the pairwise tasks of singleton classes, so classes
    // are drawn without replacement instead of independently.
    const int count = rng.uniform_int(cfg.objects_min, cfg.objects_max);
    int multiplicity = rng.uniform(0.0, 1.0) < 0.9 ? rng.uniform_int(2, 3) : 1;
    if (count < multiplicity + 4) multiplicity = 1;  // keep >= 4 singletons
    const int n_classes = count - multiplicity + 1;
    std::vector<int> deck(static_cast<size_t>(cfg.vocab));
    for (int i = 0; i < cfg.vocab; ++i) deck[static_cast<size_t>(i)] = i;
    for (int i = 0; i < n_classes; ++i)
      std::swap(deck[static_cast<size_t>(i)],
                deck[static_cast<size_t>(rng.uniform_int(i, cfg.vocab - 1))]);
    std::vector<int> slots;
    for (int i = 0; i < multiplicity; ++i) slots.push_back(deck[0]);
    for (int i = 1; i < n_classes; ++i) slots.push_back(deck[static_cast<size_t>(i)]);
    bool ok = true;
    for (int i = 0; i < count; ++i) {
      bool placed = false;
      for (int retry = 0; retry < 100; ++retry) {
        WorldObject o;
        o.id = i;
        o.cls = slots[static_cast<size_t>(i)];
        o.size = rng.uniform(0.3, 0.9);
        o.pos = {rng.uniform(margin, w.room_x - margin), rng.uniform(margin, w.room_y - margin),
                 o.size / 2};
        bool clash = false;
        for (const auto& p : w.objects)
          if ((p.pos - o.pos).norm() < min_sep) clash = true;
        if (!clash) {
          w.objects.push_back(o);
          placed = true;
          break;
        }
      }
      if (!placed) {
        ok = false;
        break;
      }
    }
    if (ok) return w;
  }
  throw DataError("gen_world: cannot place objects after bounded retries");
}

constexpr double kFov = M_PI / 2;       // horizontal field of view
constexpr double kVisRange = 12.0;      // visibility distance cap
constexpr double kEyeHeight = 1.5;

inline bool object_visible(const World&, const WorldObject& o, const Pose& p) {
  const Vec3 d = o.pos - p.pos;
  const double dist = std::sqrt(d.x * d.x + d.y * d.y);
  if (dist > kVisRange || dist < 1e-9) return false;
  const double bearing = std::atan2(d.y, d.x);
  return std::abs(wrap_pi(bearing - p.yaw)) < kFov / 2;
}

inline Trajectory gen_trajectory(const World& w, std::uint64_t seed, int n,
                                 double step_bound = 0.5, double turn_bound = 0.45) {
  if (n < 1) throw DataError("gen_trajectory: N must be >= 1");
  const double margin = 0.4;
  Rng root(seed);
  for (int attempt = 0; attempt < 64; ++attempt) {
    Rng rng = root.fork(static_cast<std::uint64_t>(attempt));
    Trajectory traj;
    Pose p;
    p.pos = {rng.uniform(margin, w.room_x - margin), rng.uniform(margin, w.room_y - margin),
             kEyeHeight};
    p.yaw = rng.uniform(-M_PI, M_PI);
    std::vector<bool> covered(w.objects.size(), false);
    for (int t = 0; t < n; ++t) {
      if (t > 0) {
        const double step = std::clamp(rng.normal() * 0.5 * step_bound, -step_bound, step_bound);
        const double strafe = std::clamp(rng.normal() * 0.25 * step_bound, -step_bound, step_bound);
        double turn = std::clamp(rng.normal() * 0.5 * turn_bound, -turn_bound, turn_bound);
        // steer toward some not-yet-seen object so the walk sweeps the room
        for (size_t oi = 0; oi < w.objects.size(); ++oi) {
          if (covered[oi]) continue;
          const Vec3 d = w.objects[oi].pos - p.pos;
          const double want = wrap_pi(std::atan2(d.y, d.x) - p.yaw);
          turn = std::clamp(want, -turn_bound, turn_bound);
          break;
        }
        p.yaw = wrap_pi(p.yaw + turn);
        Vec3 f = p.forward(), r = p.right();
        p.pos = p.pos + f * step + r * strafe;
        p.pos.x = std::clamp(p.pos.x, margin, w.room_x - margin);
        p.pos.y = std::clamp(p.pos.y, margin, w.room_y - margin);
      }
      traj.poses.push_back(p);
      std::vector<int> vis;
      for (const auto& o : w.objects)
        if (object_visible(w, o, p)) {
          vis.push_back(o.id);
          covered[static_cast<size_t>(o.id)] = true;
        }
      traj.visible.push_back(vis);
    }
    // coverage guarantee: every object seen at least once
    std::vector<bool> seen(w.objects.size(), false);
    for (const auto& vis : traj.visible)
      for (int id : vis) seen[static_cast<size_t>(id)] = true;
    if (std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) return traj;
  }
  throw DataError("gen_trajectory: coverage guarantee unreachable after bounded retries");
}

// ---- rendering ------------------------------------------------------------

struct RayHit {
  Vec3 point;
  int object_id = -1;  // -1: wall/floor/ceiling background
};

// Nearest intersection of a view ray with the room box interior or an object
// bounding sphere.
inline RayHit cast_ray(const World& w, const Vec3& origin, const Vec3& dir) {
  double best_t = 1e30;
  int best_id = -1;
  auto plane = [&](double target, double o, double d) {
    if (std::abs(d) < 1e-12) return;
    const double t = (target - o) / d;
    if (t > 1e-9 && t < best_t) {
      best_t = t;
      best_id = -1;
    }
  };
  plane(dir.x > 0 ? w.room_x : 0.0, origin.x, dir.x);
  plane(dir.y > 0 ? w.room_y : 0.0, origin.y, dir.y);
  plane(dir.z > 0 ? w.room_z : 0.0, origin.z, dir.z);
  for (const auto& o : w.objects) {
    const Vec3 oc = origin - o.pos;
    const double r = o.size / 2;
    const double b = oc.dot(dir);
    const double c0 = oc.dot(oc) - r * r;
    const double disc = b * b - c0;
    if (disc < 0) continue;
    const double t = -b - std::sqrt(disc);
    if (t > 1e-9 && t < best_t) {
      best_t = t;
      best_id = o.id;
    }
  }
  return {origin + dir * best_t, best_id};
}

inline Vec3 pixel_ray(const Pose& p, int row, int col, int ph, int pw) {
  const double tan_h = std::tan(kFov / 2);
  const double tan_v = tan_h * static_cast<double>(ph) / pw;
  const double u = ((col + 0.5) / pw) * 2.0 - 1.0;
  const double v = ((row + 0.5) / ph) * 2.0 - 1.0;
  const Vec3 f = p.forward(), r = p.right(), up{0, 0, 1};
  Vec3 d = f + r * (u * tan_h) + up * (-v * tan_v);
  const double n = d.norm();
  return d * (1.0 / n);
}

// Fixed projection used to map raw geometric patch statistics to geometry
// tokens; seeded by the vocabulary seed so it is shared across episodes.
template <class S>
TensorT<S> geometry_projection(int c_g, std::uint64_t vocab_seed) {
  Rng rng(vocab_seed ^ 0x7b1fa3c5d2e90417ULL);
  TensorT<S> P({c_g, 8});
  for (auto& v : P.data) v = static_cast<S>(0.5 * rng.normal());
  return P;
}

template <class S>
TensorT<S> distractor_projection(int c, std::uint64_t vocab_seed) {
  Rng rng(vocab_seed ^ 0x51ed270b1f203ca9ULL);
  TensorT<S> D({c, 4});
  for (auto& v : D.data) v = static_cast<S>(0.4 * rng.normal());
  return D;
}

// Per-frame token bundle. F carries class coverage + a pose-conditioned
// distractor; G is built from mirror-symmetrized camera-frame statistics so
// it is viewpoint-ambiguous by construction; Z is a sinusoidal encoding of
// (yaw, position) with patch-index modulation; X is the true point map plus
// Gaussian noise.
template <class S>
FrameObservationT<S> render_frame(const World& world, const Pose& pose, const DimsConfig& dims,
                                  double noise, std::uint64_t vocab_seed, Rng rng) {
  const int h = dims.h, w = dims.w, s = dims.patch;
  const int ph = dims.pixel_h(), pw = dims.pixel_w();
  FrameObservationT<S> fr;
  fr.F = TensorT<S>::zeros({h, w, dims.c});
  fr.G = TensorT<S>::zeros({h, w, dims.c_g});
  fr.Z = TensorT<S>::zeros({h, w, dims.c_v});
  fr.X = TensorT<S>::zeros({ph, pw, 3});

  // pixel pass: true hits, then noise on X
  std::vector<RayHit> hits(static_cast<size_t>(ph) * pw);
  for (int r = 0; r < ph; ++r)
    for (int cpx = 0; cpx < pw; ++cpx) {
      RayHit hit = cast_ray(world, pose.pos, pixel_ray(pose, r, cpx, ph, pw));
      hits[static_cast<size_t>(r) * pw + cpx] = hit;
      fr.X.at(r, cpx, 0) = static_cast<S>(hit.point.x + noise * rng.normal());
      fr.X.at(r, cpx, 1) = static_cast<S>(hit.point.y + noise * rng.normal());
      fr.X.at(r, cpx, 2) = static_cast<S>(hit.point.z + noise * rng.normal());
    }

  // per-patch camera-frame statistics (noise-free geometry)
  const Vec3 fwd = pose.forward(), rgt = pose.right();
  std::vector<double> depth(static_cast<size_t>(h) * w), elev(depth.size()), lat(depth.size());
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double sd = 0, se = 0, sl = 0;
      for (int rr = i * s; rr < (i + 1) * s; ++rr)
        for (int cc = j * s; cc < (j + 1) * s; ++cc) {
          const Vec3 q = hits[static_cast<size_t>(rr) * pw + cc].point - pose.pos;
          sd += q.dot(fwd);
          se += q.z;
          sl += q.dot(rgt);
        }
      const double inv = 1.0 / (s * s);
      depth[static_cast<size_t>(i) * w + j] = sd * inv;
      elev[static_cast<size_t>(i) * w + j] = se * inv;
      lat[static_cast<size_t>(i) * w + j] = sl * inv;
    }

  // geometry tokens: statistics symmetrized with the horizontally mirrored
  // patch, so a mirrored pose over a mirrored scene yields identical G
  const TensorT<S> P = geometry_projection<S>(dims.c_g, vocab_seed);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const size_t a = static_cast<size_t>(i) * w + j;
      const size_t b = static_cast<size_t>(i) * w + (w - 1 - j);
      const double raw[8] = {
          0.5 * (depth[a] + depth[b]),
          std::abs(depth[a] - depth[b]),
          0.5 * (elev[a] + elev[b]),
          std::abs(elev[a] - elev[b]),
          0.5 * (std::abs(lat[a]) + std::abs(lat[b])),
          std::abs(std::abs(lat[a]) - std::abs(lat[b])),
          static_cast<double>(i) / h,
          std::abs(j - (w - 1) / 2.0) / w,
      };
      for (int k = 0; k < dims.c_g; ++k) {
        double acc = 0;
        for (int m = 0; m < 8; ++m) acc += static_cast<double>(P.at(k, m)) * raw[m];
        fr.G.at(i, j, k) = static_cast<S>(std::tanh(acc));
      }
    }

  // view tokens: sinusoidal (yaw, position) features, patch-index modulated
  const double R = dims.pos_norm;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double wi = 0.37 * (i + 1), wj = 0.53 * (j + 1);
      for (int k = 0; k < dims.c_v; ++k) {
        const int base = k % 8;
        const double band = std::pow(2.0, k / 8);
        double v = 0;
        switch (base) {
          case 0: v = std::cos(band * pose.yaw); break;
          case 1: v = std::sin(band * pose.yaw); break;
          case 2: v = std::sin(band * (M_PI * pose.pos.x / R + wi)); break;
          case 3: v = std::cos(band * (M_PI * pose.pos.x / R + wi)); break;
          case 4: v = std::sin(band * (M_PI * pose.pos.y / R + wj)); break;
          case 5: v = std::cos(band * (M_PI * pose.pos.y / R + wj)); break;
          case 6: v = std::sin(band * (pose.yaw + wi + wj)); break;
          case 7: v = std::cos(band * (pose.yaw + wi - wj)); break;
        }
        fr.Z.at(i, j, k) = static_cast<S>(v);
      }
    }

  // visual tokens: per-patch class coverage + background + distractor + noise
  const TensorT<S> bg = background_embedding<S>(dims.c, vocab_seed);
  const TensorT<S> D = distractor_projection<S>(dims.c, vocab_seed);
  const double dfeat[4] = {std::cos(pose.yaw), std::sin(pose.yaw), pose.pos.x / R,
                           pose.pos.y / R};
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      std::vector<double> cover(world.objects.size(), 0.0);
      double bg_cover = 0;
      for (int rr = i * s; rr < (i + 1) * s; ++rr)
        for (int cc = j * s; cc < (j + 1) * s; ++cc) {
          const int id = hits[static_cast<size_t>(rr) * pw + cc].object_id;
          if (id < 0)
            bg_cover += 1;
          else
            cover[static_cast<size_t>(id)] += 1;
        }
      const double inv = 1.0 / (s * s);
      // Presence-saturating class weight: a detected object contributes at
      // near-full embedding strength even when it covers few pixels, the way
      // an object-centric backbone feature would. Linear pixel-area weighting
      // leaves the class direction at ~0.1 of the token norm, too weak a
      // similarity margin for anything downstream to attend to.
      for (int k = 0; k < dims.c; ++k) {
        double acc = bg_cover * inv * static_cast<double>(bg[k]);
        for (size_t oi = 0; oi < world.objects.size(); ++oi)
          if (cover[oi] > 0)
            acc += std::min(1.0, 8.0 * cover[oi] * inv) *
                   static_cast<double>(class_embedding<S>(world.objects[oi].cls, dims.c, vocab_seed)[k]);
        double dv = 0;
        for (int m = 0; m < 4; ++m) dv += static_cast<double>(D.at(k, m)) * dfeat[m];
        fr.F.at(i, j, k) = static_cast<S>(acc + 0.25 * dv + noise * rng.normal());
      }
    }
  return fr;
}

// Mirror-pair probe: a world symmetric about the plane x = room_x/2 and a
// pose plus its reflection. Same world, near-identical G, distinct Z.
template <class S>
struct MirrorProbe {
  World world;
  Pose pose_a, pose_b;
};

template <class S>
MirrorProbe<S> gen_mirror_probe(std::uint64_t seed, const DataConfig& cfg) {
  Rng rng(seed ^ 0x3c6ef372fe94f82aULL);
  MirrorProbe<S> pr;
  World& w = pr.world;
  w.room_x = rng.uniform(cfg.room_min, cfg.room_max);
  w.room_y = rng.uniform(cfg.room_min, cfg.room_max);
  const double cx = w.room_x / 2;
  const int half_count = rng.uniform_int(1, 3);
  int id = 0;
  for (int i = 0; i < half_count; ++i) {
    WorldObject o;
    o.cls = rng.uniform_int(0, cfg.vocab - 1);
    o.size = rng.uniform(0.3, 0.9);
    o.pos = {rng.uniform(0.6, cx - 0.4), rng.uniform(0.6, w.room_y - 0.6), o.size / 2};
    o.id = id++;
    w.objects.push_back(o);
    WorldObject m = o;
    m.id = id++;
    m.pos.x = w.room_x - o.pos.x;
    w.objects.push_back(m);
  }
  pr.pose_a.pos = {rng.uniform(0.5, w.room_x - 0.5), rng.uniform(0.5, w.room_y - 0.5), kEyeHeight};
  pr.pose_a.yaw = rng.uniform(-M_PI, M_PI);
  pr.pose_b.pos = {w.room_x - pr.pose_a.pos.x, pr.pose_a.pos.y, kEyeHeight};
  pr.pose_b.yaw = wrap_pi(M_PI - pr.pose_a.yaw);
  return pr;
}

// ---- QA generation --------------------------------------------------------

// center distance minus half-sizes; the generator and the oracle share this
// convention by contract
inline double object_distance(const WorldObject& a, const WorldObject& b) {
  return std::max(0.05, (a.pos - b.pos).norm() - (a.size + b.size) / 2);
}

inline std::vector<int> classes_present(const World& w) {
  std::vector<int> cls;
  for (const auto& o : w.objects) cls.push_back(o.cls);
  std::sort(cls.begin(), cls.end());
  cls.erase(std::unique(cls.begin(), cls.end()), cls.end());
  return cls;
}

inline std::vector<int> singleton_classes(const World& w) {
  std::vector<int> out;
  for (int c : classes_present(w)) {
    int n = 0;
    for (const auto& o : w.objects)
      if (o.cls == c) ++n;
    if (n == 1) out.push_back(c);
  }
  return out;
}

inline const WorldObject& find_instance(const World& w, int cls) {
  for (const auto& o : w.objects)
    if (o.cls == cls) return o;
  throw DataError("find_instance: class not present");
}

// first frame in which any instance of each class becomes visible; -1 if never
inline int first_visible_frame(const World& w, const Trajectory& traj, int cls) {
  for (size_t t = 0; t < traj.visible.size(); ++t)
    for (int id : traj.visible[t])
      if (w.objects[static_cast<size_t>(id)].cls == cls) return static_cast<int>(t);
  return -1;
}

inline std::optional<QARecord> try_make_qa(TaskKind kind, const World& w, const Trajectory& traj,
                                           Rng& rng) {
  QARecord qa;
  qa.kind = kind;
  qa.prompt_seed = rng.next_u64();
  switch (kind) {
    case TaskKind::ObjectCount: {
      auto cls = classes_present(w);
      // Target a repeated class half the time so the answer distribution is
      // not dominated by 1 (which a constant predictor would exploit).
      std::vector<int> repeated;
      for (int c : cls) {
        int n = 0;
        for (const auto& o : w.objects)
          if (o.cls == c) ++n;
        if (n > 1) repeated.push_back(c);
      }
      const auto& pool = (!repeated.empty() && rng.uniform(0.0, 1.0) < 0.7) ? repeated : cls;
      const int c = pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
      int n = 0;
      for (const auto& o : w.objects)
        if (o.cls == c) ++n;
      qa.query = {c};
      qa.numeric_answer = n;
      return qa;
    }
    case TaskKind::AbsoluteDistance: {
      auto sc = singleton_classes(w);
      if (sc.size() < 2) return std::nullopt;
      const int i = rng.uniform_int(0, static_cast<int>(sc.size()) - 1);
      int j = rng.uniform_int(0, static_cast<int>(sc.size()) - 2);
      if (j >= i) ++j;
      qa.query = {sc[static_cast<size_t>(i)], sc[static_cast<size_t>(j)]};
      qa.numeric_answer =
          object_distance(find_instance(w, qa.query[0]), find_instance(w, qa.query[1]));
      return qa;
    }
    case TaskKind::RelativeDistance: {
      auto sc = singleton_classes(w);
      if (sc.size() < 3) return std::nullopt;
      // shuffle, take target + up to 4 candidates
      for (size_t i = sc.size(); i > 1; --i)
        std::swap(sc[i - 1], sc[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
      const int target = sc[0];
      const int ncand = std::min<int>(4, static_cast<int>(sc.size()) - 1);
      const WorldObject& to = find_instance(w, target);
      double best = 1e30;
      int best_idx = -1;
      for (int k = 0; k < ncand; ++k) {
        const int cand = sc[static_cast<size_t>(k) + 1];
        qa.options.push_back({cand});
        const double d = object_distance(to, find_instance(w, cand));
        if (d < best) {
          best = d;
          best_idx = k;
        }
      }
      qa.query = {target};
      qa.answer_index = best_idx;
      return qa;
    }
    case TaskKind::RelativeDirection: {
      auto sc = singleton_classes(w);
      if (sc.size() < 3) return std::nullopt;
      // quadrants: 0 front, 1 left, 2 back, 3 right
      const auto quadrant = [&w](int ca, int cb, int cc) {
        const WorldObject &a = find_instance(w, ca), &b = find_instance(w, cb),
                          &c = find_instance(w, cc);
        const double fwd = std::atan2(b.pos.y - a.pos.y, b.pos.x - a.pos.x);
        const double ang = wrap_pi(std::atan2(c.pos.y - a.pos.y, c.pos.x - a.pos.x) - fwd);
        if (std::abs(ang) <= M_PI / 4) return 0;
        if (ang > M_PI / 4 && ang <= 3 * M_PI / 4) return 1;
        if (ang < -M_PI / 4 && ang >= -3 * M_PI / 4) return 3;
        return 2;
      };
      // Bucket all ordered triples by quadrant, draw the answer quadrant
      // uniformly over the non-empty buckets, then draw a triple from that
      // bucket. Room geometry otherwise makes "front" dominate the answers,
      // which rewards prior-fitting instead of spatial reasoning.
      std::array<std::vector<std::array<int, 3>>, 4> buckets;
      const int n = static_cast<int>(sc.size());
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          for (int k = 0; k < n; ++k) {
            if (i == j || i == k || j == k) continue;
            const std::array<int, 3> tri = {sc[static_cast<size_t>(i)], sc[static_cast<size_t>(j)],
                                            sc[static_cast<size_t>(k)]};
            buckets[static_cast<size_t>(quadrant(tri[0], tri[1], tri[2]))].push_back(tri);
          }
      std::vector<int> avail;
      for (int q = 0; q < 4; ++q)
        if (!buckets[static_cast<size_t>(q)].empty()) avail.push_back(q);
      const auto& pool =
          buckets[static_cast<size_t>(avail[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(avail.size()) - 1))])];
      const auto tri = pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
      qa.query = {tri[0], tri[1], tri[2]};
      qa.options = {{0}, {1}, {2}, {3}};
      qa.answer_index = quadrant(tri[0], tri[1], tri[2]);
      return qa;
    }
    case TaskKind::AppearanceOrder: {
      auto cls = classes_present(w);
      std::vector<std::pair<int, int>> firsts;  // (frame, class)
      for (int c : cls) {
        const int f = first_visible_frame(w, traj, c);
        if (f >= 0) firsts.emplace_back(f, c);
      }
      // need 3 classes with pairwise-distinct first frames
      std::sort(firsts.begin(), firsts.end());
      std::vector<int> chosen;
      int last_frame = -1;
      for (auto& [f, c] : firsts) {
        if (f != last_frame) {
          chosen.push_back(c);
          last_frame = f;
        }
        if (chosen.size() == 3) break;
      }
      if (chosen.size() < 3) return std::nullopt;
      std::vector<int> correct = chosen;  // already in appearance order
      // distractors: other permutations of the same classes
      std::vector<std::vector<int>> perms;
      std::vector<int> p = correct;
      std::sort(p.begin(), p.end());
      do {
        if (p != correct) perms.push_back(p);
      } while (std::next_permutation(p.begin(), p.end()));
      for (size_t i = perms.size(); i > 1; --i)
        std::swap(perms[i - 1], perms[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
      std::vector<std::vector<int>> opts(perms.begin(), perms.begin() + 3);
      opts.push_back(correct);
      for (size_t i = opts.size(); i > 1; --i)
        std::swap(opts[i - 1], opts[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
      qa.options = opts;
      qa.query = correct;  // classes in appearance order define the query set
      std::sort(qa.query.begin(), qa.query.end());
      for (size_t i = 0; i < opts.size(); ++i)
        if (opts[i] == correct) qa.answer_index = static_cast<int>(i);
      return qa;
    }
  }
  return std::nullopt;
}

inline std::vector<QARecord> gen_qa(const World& w, const Trajectory& traj, const DataConfig& cfg,
                                    std::uint64_t seed) {
  Rng rng(seed ^ 0xa24baed4963ee407ULL);
  std::vector<QARecord> out;
  const TaskKind kinds[5] = {TaskKind::ObjectCount, TaskKind::AbsoluteDistance,
                             TaskKind::RelativeDistance, TaskKind::RelativeDirection,
                             TaskKind::AppearanceOrder};
  int made = 0, tries = 0;
  while (made < cfg.qa_per_episode && tries < cfg.qa_per_episode * 4) {
    const TaskKind kind = kinds[tries % 5];
    ++tries;
    auto qa = try_make_qa(kind, w, traj, rng);
    if (qa) {
      out.push_back(*qa);
      ++made;
    }
  }
  return out;
}

// ---- episodes -------------------------------------------------------------

template <class S>
EpisodeT<S> gen_episode(const DimsConfig& dims, const DataConfig& cfg, std::uint64_t episode_index) {
  EpisodeT<S> ep;
  Rng root = Rng(cfg.seed).fork(episode_index);
  ep.seed = root.next_u64();
  ep.world = gen_world(ep.seed ^ 0x1ULL, cfg);
  ep.trajectory = gen_trajectory(ep.world, ep.seed ^ 0x2ULL, dims.frames);
  Rng frame_rng(ep.seed ^ 0x3ULL);
  for (int t = 0; t < dims.frames; ++t)
    ep.frames.push_back(render_frame<S>(ep.world, ep.trajectory.poses[static_cast<size_t>(t)],
                                        dims, cfg.noise, cfg.vocab_seed,
                                        frame_rng.fork(static_cast<std::uint64_t>(t))));
  ep.qa = gen_qa(ep.world, ep.trajectory, cfg, ep.seed ^ 0x4ULL);
  return ep;
}

}  // namespace geomem

#endif  // GEOMEM_SCENEGEN_HPP_
