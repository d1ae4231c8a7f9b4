#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "clspool/training.hpp"

namespace clspool {

namespace {

constexpr char kMagic[4] = {'M', 'P', 'B', 'T'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void string(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class Reader {
 public:
  Reader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}

  std::uint32_t u32() {
    need(4, "integer");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string string(const char* what) {
    const std::uint32_t n = u32();
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  bool done() const { return pos_ == size_; }

 private:
  void need(std::size_t n, const char* what) {
    if (size_ - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(const unsigned char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, data, static_cast<uInt>(size));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Model<float>& model, const TrainConfig& cfg) {
  Writer w;
  w.u32(kCheckpointVersion);
  std::string block;
  for (const auto& [k, v] : cfg.to_key_values()) block += k + "=" + v + "\n";
  w.string(block);
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.string(p.name);
    w.u32(static_cast<std::uint32_t>(p.array->rank()));
    for (std::size_t e : p.array->shape()) w.u32(static_cast<std::uint32_t>(e));
    for (float v : p.array->data()) w.f32(v);
  }
  const std::uint32_t crc = crc32_of(w.bytes().data(), w.bytes().size());
  w.u32(crc);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw InputError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  }
  if (bytes.size() < 12) throw FormatError(path.string() + ": checkpoint truncated");
  const unsigned char* body = bytes.data() + 4;
  const std::size_t body_size = bytes.size() - 8;
  Reader header(body, body_size);
  const std::uint32_t version = header.u32();
  if (version != kCheckpointVersion) {
    throw UnsupportedVersionError(path.string() + ": checkpoint version " + std::to_string(version) +
                                  " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t stored = Reader(body + body_size, 4).u32();
  if (crc32_of(body, body_size) != stored) {
    throw ChecksumError(path.string() + ": checksum mismatch (truncated or corrupted)");
  }

  Reader r(body, body_size);
  r.u32();
  std::vector<std::pair<std::string, std::string>> kv;
  {
    std::istringstream lines(r.string("config"));
    std::string line;
    while (std::getline(lines, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("checkpoint config line without '=': " + line);
      kv.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
  }
  Checkpoint ck;
  try {
    ck.config = TrainConfig::from_key_values(kv);
    ck.config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config invalid: ") + e.what());
  }
  std::mt19937_64 rng(0);
  ck.model = Model<float>::initialize(ck.config.encoder, ck.config.head, ck.config.num_classes, rng);

  std::map<std::string, Array<float>*> by_name;
  for (const auto& p : ck.model.parameters()) by_name[p.name] = p.array;
  const std::uint32_t count = r.u32();
  if (count != by_name.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " parameters, model expects " +
                      std::to_string(by_name.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.string("parameter name");
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint has unexpected parameter '" + name + "'");
    const std::uint32_t rank = r.u32();
    Shape shape;
    for (std::uint32_t j = 0; j < rank; ++j) shape.push_back(r.u32());
    Array<float>& dst = *it->second;
    if (shape != dst.shape()) {
      throw FormatError("parameter '" + name + "' has shape " + shape_to_string(shape) + ", expected " +
                        shape_to_string(dst.shape()));
    }
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = r.f32();
    by_name.erase(it);
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint parameters");
  return ck;
}

}  // namespace clspool
