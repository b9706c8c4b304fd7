#ifndef GEOMEM_EPISODE_IO_HPP_
#define GEOMEM_EPISODE_IO_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "geomem/config.hpp"
#include "geomem/ioutil.hpp"
#include "geomem/scenegen.hpp"

namespace geomem {

constexpr std::uint32_t kDatasetMagic = 0x53444d47u;  // "GMDS"
constexpr std::uint32_t kDatasetVersion = 1;

template <class S>
constexpr std::uint8_t scalar_code() {
  return sizeof(S) == 8 ? 8 : 4;
}

template <class S>
void write_tensor(ByteWriter& w, const TensorT<S>& t) {
  w.pod(static_cast<std::uint8_t>(t.rank()));
  for (int d : t.shape) w.pod(static_cast<std::int32_t>(d));
  w.raw(t.data.data(), t.data.size() * sizeof(S));
}

template <class S>
TensorT<S> read_tensor(ByteReader& r) {
  const int rank = r.pod<std::uint8_t>();
  Shape sh;
  for (int i = 0; i < rank; ++i) sh.push_back(r.pod<std::int32_t>());
  TensorT<S> t(sh);
  r.raw(t.data.data(), t.data.size() * sizeof(S));
  return t;
}

template <class S>
std::vector<std::uint8_t> serialize_episode(const EpisodeT<S>& ep) {
  ByteWriter w;
  w.pod(scalar_code<S>());
  w.pod(ep.seed);
  w.pod(ep.world.room_x);
  w.pod(ep.world.room_y);
  w.pod(ep.world.room_z);
  w.pod(static_cast<std::uint32_t>(ep.world.objects.size()));
  for (const auto& o : ep.world.objects) {
    w.pod(static_cast<std::int32_t>(o.id));
    w.pod(static_cast<std::int32_t>(o.cls));
    w.pod(o.pos.x);
    w.pod(o.pos.y);
    w.pod(o.pos.z);
    w.pod(o.size);
  }
  w.pod(static_cast<std::uint32_t>(ep.trajectory.poses.size()));
  for (size_t t = 0; t < ep.trajectory.poses.size(); ++t) {
    const auto& p = ep.trajectory.poses[t];
    w.pod(p.pos.x);
    w.pod(p.pos.y);
    w.pod(p.pos.z);
    w.pod(p.yaw);
    const auto& vis = ep.trajectory.visible[t];
    w.pod(static_cast<std::uint32_t>(vis.size()));
    for (int id : vis) w.pod(static_cast<std::int32_t>(id));
  }
  w.pod(static_cast<std::uint32_t>(ep.frames.size()));
  for (const auto& fr : ep.frames) {
    write_tensor(w, fr.F);
    write_tensor(w, fr.G);
    write_tensor(w, fr.Z);
    write_tensor(w, fr.X);
  }
  w.pod(static_cast<std::uint32_t>(ep.qa.size()));
  for (const auto& qa : ep.qa) {
    w.pod(static_cast<std::uint8_t>(qa.kind));
    w.pod(static_cast<std::uint32_t>(qa.query.size()));
    for (int c : qa.query) w.pod(static_cast<std::int32_t>(c));
    w.pod(static_cast<std::uint32_t>(qa.options.size()));
    for (const auto& opt : qa.options) {
      w.pod(static_cast<std::uint32_t>(opt.size()));
      for (int c : opt) w.pod(static_cast<std::int32_t>(c));
    }
    w.pod(qa.numeric_answer);
    w.pod(static_cast<std::int32_t>(qa.answer_index));
    w.pod(qa.prompt_seed);
  }
  return w.take();
}

template <class S>
EpisodeT<S> load_episode(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  EpisodeT<S> ep;
  const auto code = r.pod<std::uint8_t>();
  if (code != scalar_code<S>())
    throw DataError("episode scalar width mismatch: record has " + std::to_string(code) +
                    " bytes, expected " + std::to_string(scalar_code<S>()));
  ep.seed = r.pod<std::uint64_t>();
  ep.world.room_x = r.pod<double>();
  ep.world.room_y = r.pod<double>();
  ep.world.room_z = r.pod<double>();
  const auto nobj = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < nobj; ++i) {
    WorldObject o;
    o.id = r.pod<std::int32_t>();
    o.cls = r.pod<std::int32_t>();
    o.pos.x = r.pod<double>();
    o.pos.y = r.pod<double>();
    o.pos.z = r.pod<double>();
    o.size = r.pod<double>();
    ep.world.objects.push_back(o);
  }
  const auto nposes = r.pod<std::uint32_t>();
  for (std::uint32_t t = 0; t < nposes; ++t) {
    Pose p;
    p.pos.x = r.pod<double>();
    p.pos.y = r.pod<double>();
    p.pos.z = r.pod<double>();
    p.yaw = r.pod<double>();
    ep.trajectory.poses.push_back(p);
    const auto nvis = r.pod<std::uint32_t>();
    std::vector<int> vis;
    for (std::uint32_t k = 0; k < nvis; ++k) vis.push_back(r.pod<std::int32_t>());
    ep.trajectory.visible.push_back(vis);
  }
  const auto nframes = r.pod<std::uint32_t>();
  for (std::uint32_t t = 0; t < nframes; ++t) {
    FrameObservationT<S> fr;
    fr.F = read_tensor<S>(r);
    fr.G = read_tensor<S>(r);
    fr.Z = read_tensor<S>(r);
    fr.X = read_tensor<S>(r);
    ep.frames.push_back(std::move(fr));
  }
  const auto nqa = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < nqa; ++i) {
    QARecord qa;
    qa.kind = static_cast<TaskKind>(r.pod<std::uint8_t>());
    const auto nq = r.pod<std::uint32_t>();
    for (std::uint32_t k = 0; k < nq; ++k) qa.query.push_back(r.pod<std::int32_t>());
    const auto nopt = r.pod<std::uint32_t>();
    for (std::uint32_t k = 0; k < nopt; ++k) {
      const auto len = r.pod<std::uint32_t>();
      std::vector<int> opt;
      for (std::uint32_t m = 0; m < len; ++m) opt.push_back(r.pod<std::int32_t>());
      qa.options.push_back(opt);
    }
    qa.numeric_answer = r.pod<double>();
    qa.answer_index = r.pod<std::int32_t>();
    qa.prompt_seed = r.pod<std::uint64_t>();
    ep.qa.push_back(qa);
  }
  return ep;
}

// Dataset file: header + length-prefixed, CRC-tagged episode records.
template <class S>
struct DatasetT {
  DimsConfig dims;
  std::uint64_t config_hash = 0;
  std::vector<EpisodeT<S>> episodes;
};

inline void write_dims(ByteWriter& w, const DimsConfig& d) {
  for (int v : {d.h, d.w, d.patch, d.c, d.c_g, d.c_v, d.frames, d.bands})
    w.pod(static_cast<std::int32_t>(v));
  w.pod(d.pos_norm);
}

inline DimsConfig read_dims(ByteReader& r) {
  DimsConfig d;
  d.h = r.pod<std::int32_t>();
  d.w = r.pod<std::int32_t>();
  d.patch = r.pod<std::int32_t>();
  d.c = r.pod<std::int32_t>();
  d.c_g = r.pod<std::int32_t>();
  d.c_v = r.pod<std::int32_t>();
  d.frames = r.pod<std::int32_t>();
  d.bands = r.pod<std::int32_t>();
  d.pos_norm = r.pod<double>();
  return d;
}

template <class S>
std::vector<std::uint8_t> serialize_dataset(const DatasetT<S>& ds) {
  ByteWriter w;
  w.pod(kDatasetMagic);
  w.pod(kDatasetVersion);
  w.pod(scalar_code<S>());
  write_dims(w, ds.dims);
  w.pod(ds.config_hash);
  w.pod(static_cast<std::uint32_t>(ds.episodes.size()));
  for (const auto& ep : ds.episodes) {
    auto payload = serialize_episode(ep);
    w.pod(static_cast<std::uint32_t>(payload.size()));
    w.raw(payload.data(), payload.size());
    w.pod(crc32(payload.data(), payload.size()));
  }
  return w.take();
}

template <class S>
DatasetT<S> load_dataset(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  if (r.pod<std::uint32_t>() != kDatasetMagic) throw DataError("not a dataset file (bad magic)");
  const auto version = r.pod<std::uint32_t>();
  if (version != kDatasetVersion)
    throw DataError("unsupported dataset version " + std::to_string(version) + " (tool supports " +
                    std::to_string(kDatasetVersion) + ")");
  const auto code = r.pod<std::uint8_t>();
  if (code != scalar_code<S>())
    throw DataError("dataset scalar width mismatch: file has " + std::to_string(code) + " bytes");
  DatasetT<S> ds;
  ds.dims = read_dims(r);
  ds.config_hash = r.pod<std::uint64_t>();
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.pod<std::uint32_t>();
    std::vector<std::uint8_t> payload(len);
    r.raw(payload.data(), len);
    const auto crc = r.pod<std::uint32_t>();
    if (crc != crc32(payload.data(), payload.size()))
      throw DataError("checksum failure in episode record " + std::to_string(i));
    ds.episodes.push_back(load_episode<S>(payload));
  }
  return ds;
}

template <class S>
DatasetT<S> load_dataset_file(const std::string& path) {
  return load_dataset<S>(read_file(path));
}

}  // namespace geomem

#endif  // GEOMEM_EPISODE_IO_HPP_
