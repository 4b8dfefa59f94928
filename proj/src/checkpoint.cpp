#include "sivs/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sivs/synth_data.hpp"  // crc32

namespace sivs {

namespace {

constexpr char kMagic[4] = {'S', 'I', 'V', 'C'};
constexpr std::uint16_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

template <typename T>
void put(std::string& b, T v) {
  b.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  const std::string& path;
  Reader(const std::string& b, const std::string& p) : buf(b), path(p) {}
  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw DataError("checkpoint truncated: " + path);
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

const CkptRecord* Checkpoint::find(const std::string& name) const {
  for (const CkptRecord& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

void Checkpoint::add(const std::string& name, Shape shape, std::vector<float> data) {
  if (find(name)) throw DataError("checkpoint: duplicate record '" + name + "'");
  if (shape.size() > 255) throw ShapeError("checkpoint: rank > 255 for '" + name + "'");
  if (shape_size(shape) != static_cast<std::int64_t>(data.size()))
    throw ShapeError("checkpoint: payload size does not match shape for '" + name + "'");
  records.push_back(CkptRecord{name, std::move(shape), std::move(data)});
}

float Checkpoint::scalar(const std::string& name) const {
  const CkptRecord* r = find(name);
  if (!r || r->data.size() != 1)
    throw DataError("checkpoint: missing scalar record '" + name + "'");
  return r->data[0];
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::string body;
  put<std::uint16_t>(body, ck.version);
  put<std::uint16_t>(body, 0);  // reserved
  put<std::uint32_t>(body, static_cast<std::uint32_t>(ck.config_text.size()));
  body.append(ck.config_text);
  put<std::uint32_t>(body, static_cast<std::uint32_t>(ck.records.size()));
  for (const CkptRecord& r : ck.records) {
    if (r.name.size() > 0xFFFF) throw DataError("checkpoint: record name too long");
    put<std::uint16_t>(body, static_cast<std::uint16_t>(r.name.size()));
    body.append(r.name);
    put<std::uint8_t>(body, static_cast<std::uint8_t>(r.shape.size()));
    for (std::int64_t e : r.shape) {
      if (e < 0 || e > 0xFFFFFFFFll)
        throw ShapeError("checkpoint: extent out of range for '" + r.name + "'");
      put<std::uint32_t>(body, static_cast<std::uint32_t>(e));
    }
    body.append(reinterpret_cast<const char*>(r.data.data()), r.data.size() * sizeof(float));
  }
  std::string out;
  out.append(kMagic, 4);
  out.append(body);
  put<std::uint32_t>(out, crc32(body.data(), body.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open checkpoint for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("short write: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw DataError("not a checkpoint file (bad magic): " + path);
  // CRC covers everything between magic and the trailing checksum
  std::uint32_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
  const std::uint32_t want = crc32(buf.data() + 4, buf.size() - 8);
  if (stored != want) throw DataError("checkpoint CRC mismatch (file corrupt): " + path);

  Reader r(buf, path);
  r.pos = 4;
  Checkpoint ck;
  ck.version = r.get<std::uint16_t>();
  if (ck.version != kVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(ck.version) + ": " +
                    path);
  r.get<std::uint16_t>();  // reserved
  ck.config_text = r.bytes(r.get<std::uint32_t>());
  const std::uint32_t n = r.get<std::uint32_t>();
  ck.records.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    CkptRecord rec;
    rec.name = r.bytes(r.get<std::uint16_t>());
    const std::uint8_t rank = r.get<std::uint8_t>();
    rec.shape.resize(rank);
    std::int64_t count = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      rec.shape[k] = r.get<std::uint32_t>();
      count *= rec.shape[k];
    }
    r.need(static_cast<std::size_t>(count) * sizeof(float));
    rec.data.resize(static_cast<std::size_t>(count));
    std::memcpy(rec.data.data(), buf.data() + r.pos,
                static_cast<std::size_t>(count) * sizeof(float));
    r.pos += static_cast<std::size_t>(count) * sizeof(float);
    ck.records.push_back(std::move(rec));
  }
  if (r.pos + 4 != buf.size()) throw DataError("trailing bytes after checkpoint: " + path);
  return ck;
}

std::string checkpoint_manifest(const Checkpoint& ck) {
  std::ostringstream o;
  for (const CkptRecord& r : ck.records)
    o << r.name << "  " << shape_str(r.shape) << "  " << r.data.size() << "\n";
  return o.str();
}

void record_params(Checkpoint& ck, const ParamMap<float>& params) {
  for (const auto& [name, p] : params.items)
    ck.add(name, p->shape,
           std::vector<float>(p->data(), p->data() + p->size()));
}

void restore_params(const Checkpoint& ck, ParamMap<float>& params) {
  for (auto& [name, p] : params.items) {
    const CkptRecord* r = ck.find(name);
    if (!r) throw DataError("checkpoint: missing parameter '" + name + "'");
    if (r->shape != p->shape)
      throw DataError("checkpoint: parameter '" + name + "' has shape " +
                      shape_str(r->shape) + ", model expects " + shape_str(p->shape));
    std::memcpy(p->data(), r->data.data(), r->data.size() * sizeof(float));
  }
}

void record_adam(Checkpoint& ck, const Adam<float>& opt, const ParamMap<float>& params) {
  ck.add_scalar("opt.t", static_cast<float>(opt.t));
  for (const auto& [name, p] : params.items) {
    const auto it = opt.moments.find(name);
    if (it == opt.moments.end()) {
      // parameter never stepped; write zero moments so resume is exact
      ck.add("opt.m." + name, p->shape, std::vector<float>(p->size(), 0.f));
      ck.add("opt.v." + name, p->shape, std::vector<float>(p->size(), 0.f));
    } else {
      ck.add("opt.m." + name, p->shape, it->second.first);
      ck.add("opt.v." + name, p->shape, it->second.second);
    }
  }
}

void restore_adam(const Checkpoint& ck, Adam<float>& opt, const ParamMap<float>& params) {
  opt.t = static_cast<std::int64_t>(ck.scalar("opt.t"));
  opt.moments.clear();
  for (const auto& [name, p] : params.items) {
    const CkptRecord* m = ck.find("opt.m." + name);
    const CkptRecord* v = ck.find("opt.v." + name);
    if (!m || !v) throw DataError("checkpoint: missing optimizer moments for '" + name + "'");
    if (static_cast<std::int64_t>(m->data.size()) != p->size() ||
        static_cast<std::int64_t>(v->data.size()) != p->size())
      throw DataError("checkpoint: optimizer moment size mismatch for '" + name + "'");
    opt.moments[name] = {m->data, v->data};
  }
}

}  // namespace sivs
