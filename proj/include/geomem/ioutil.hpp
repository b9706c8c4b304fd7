#ifndef GEOMEM_IOUTIL_HPP_
#define GEOMEM_IOUTIL_HPP_

#include <cstdint>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "geomem/tensor.hpp"

namespace geomem {

std::uint32_t crc32(const void* bytes, std::size_t n, std::uint32_t seed = 0);

class ByteWriter {
 public:
  template <class T>
  void pod(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  const std::vector<std::uint8_t>& bytes() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }
  std::size_t size() const { return buf_.size(); }

 private:
  std::vector<std::uint8_t> buf_;
};

// Bounds-checked; errors name the byte offset.
class ByteReader {
 public:
  ByteReader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  explicit ByteReader(const std::vector<std::uint8_t>& v) : p_(v.data()), n_(v.size()) {}

  template <class T>
  T pod() {
    static_assert(std::is_trivially_copyable_v<T>);
    need(sizeof(T));
    T v;
    std::memcpy(&v, p_ + off_, sizeof(T));
    off_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(p_ + off_), n);
    off_ += n;
    return s;
  }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, p_ + off_, n);
    off_ += n;
  }
  std::size_t offset() const { return off_; }
  std::size_t remaining() const { return n_ - off_; }

 private:
  void need(std::size_t n) const {
    if (off_ + n > n_)
      throw DataError("truncated record: need " + std::to_string(n) + " bytes at offset " +
                      std::to_string(off_) + ", have " + std::to_string(n_ - off_));
  }
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t off_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const void* data, std::size_t n);
inline void write_file(const std::string& path, const std::vector<std::uint8_t>& v) {
  write_file(path, v.data(), v.size());
}
void write_text_file(const std::string& path, const std::string& text);

// RunManifest: ordered key = value text. Timings vary between runs; the
// artifacts a manifest points to do not.
struct Manifest {
  std::vector<std::pair<std::string, std::string>> entries;

  void set(const std::string& key, const std::string& value) { entries.emplace_back(key, value); }
  std::string get(const std::string& key) const;
  std::string serialize() const;
  static Manifest parse(const std::string& text);
  void save(const std::string& path) const;
  static Manifest load(const std::string& path);
};

std::string hex64(std::uint64_t v);

}  // namespace geomem

#endif  // GEOMEM_IOUTIL_HPP_
