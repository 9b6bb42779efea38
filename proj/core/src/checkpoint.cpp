#include "slad/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace slad {

namespace {

constexpr char kMagic[8] = {'S', 'L', 'A', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

struct Reader {
  const unsigned char* p;
  const unsigned char* end;

  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end - p) < n) {
      throw IoError("checkpoint: truncated file");
    }
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    p += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
};

}  // namespace

std::size_t Checkpoint::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return entries_.size();
}

void Checkpoint::put(const std::string& name, const Tensor& t) {
  put_raw(name, t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
}

void Checkpoint::put_raw(const std::string& name, Shape shape,
                         std::vector<double> data) {
  if (data.size() != shape_numel(shape)) {
    throw ShapeError("checkpoint: blob '" + name + "' size mismatch");
  }
  if (index_of(name) != entries_.size()) {
    throw IoError("checkpoint: duplicate blob name '" + name + "'");
  }
  entries_.push_back({name, std::move(shape), std::move(data)});
}

bool Checkpoint::has(const std::string& name) const {
  return index_of(name) != entries_.size();
}

const Checkpoint::Entry& Checkpoint::get(const std::string& name) const {
  std::size_t i = index_of(name);
  if (i == entries_.size()) {
    throw IoError("checkpoint: missing blob '" + name + "'");
  }
  return entries_[i];
}

void Checkpoint::load_into(const std::string& name, Tensor& t) const {
  const Entry& e = get(name);
  if (e.shape != t.shape()) {
    throw ShapeError("checkpoint: blob '" + name + "' has shape " +
                     shape_str(e.shape) + ", expected " +
                     shape_str(t.shape()));
  }
  auto dst = t.data_mut();
  std::copy(e.data.begin(), e.data.end(), dst.begin());
}

std::uint64_t Checkpoint::content_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const Entry& e : entries_) {
    h = fnv1a(e.name.data(), e.name.size(), h);
    h = fnv1a(e.shape.data(), e.shape.size() * sizeof(std::size_t), h);
    h = fnv1a(e.data.data(), e.data.size() * sizeof(double), h);
  }
  return h;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::string buf;
  buf.append(kMagic, sizeof(kMagic));
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(entries_.size()));
  for (const Entry& e : entries_) {
    put_u32(buf, static_cast<std::uint32_t>(e.name.size()));
    buf.append(e.name);
    put_u32(buf, static_cast<std::uint32_t>(e.shape.size()));
    for (std::size_t d : e.shape) put_u64(buf, d);
    for (double v : e.data) put_f64(buf, v);
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot write " + path.string());
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("checkpoint: write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot read " + path.string());
  std::string buf((std::istreambuf_iterator<char>(is)),
                  std::istreambuf_iterator<char>());
  Reader r{reinterpret_cast<const unsigned char*>(buf.data()),
           reinterpret_cast<const unsigned char*>(buf.data() + buf.size())};
  r.need(sizeof(kMagic));
  if (std::memcmp(r.p, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("checkpoint: bad magic in " + path.string());
  }
  r.p += sizeof(kMagic);
  std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw IoError("checkpoint: unsupported version " +
                  std::to_string(version));
  }
  std::uint32_t count = r.u32();
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    std::uint32_t name_len = r.u32();
    r.need(name_len);
    e.name.assign(reinterpret_cast<const char*>(r.p), name_len);
    r.p += name_len;
    std::uint32_t ndim = r.u32();
    e.shape.resize(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d) {
      e.shape[d] = static_cast<std::size_t>(r.u64());
    }
    e.data.resize(shape_numel(e.shape));
    for (double& v : e.data) v = r.f64();
    ck.entries_.push_back(std::move(e));
  }
  return ck;
}

void save_encoder(Checkpoint& ck, const std::string& prefix, Encoder& enc) {
  enc.visit_parameters([&](const std::string& name, Tensor& t) {
    ck.put(prefix + "." + name, t);
  });
}

void load_encoder(const Checkpoint& ck, const std::string& prefix,
                  Encoder& enc) {
  enc.visit_parameters([&](const std::string& name, Tensor& t) {
    ck.load_into(prefix + "." + name, t);
  });
}

void save_head(Checkpoint& ck, const std::string& prefix, MlpHead& head) {
  head.visit_parameters([&](const std::string& name, Tensor& t) {
    ck.put(prefix + "." + name, t);
  });
}

void load_head(const Checkpoint& ck, const std::string& prefix,
               MlpHead& head) {
  head.visit_parameters([&](const std::string& name, Tensor& t) {
    ck.load_into(prefix + "." + name, t);
  });
}

void save_lora(Checkpoint& ck, const std::string& prefix,
               const LoraSet& lora) {
  for (const LoraAdapter& ad : lora.adapters) {
    std::string site = prefix + ".qkv.block" + std::to_string(ad.site.block);
    ck.put(site + ".a", ad.a);
    ck.put(site + ".b", ad.b);
  }
}

void load_lora(const Checkpoint& ck, const std::string& prefix,
               LoraSet& lora) {
  for (LoraAdapter& ad : lora.adapters) {
    std::string site = prefix + ".qkv.block" + std::to_string(ad.site.block);
    ck.load_into(site + ".a", ad.a);
    ck.load_into(site + ".b", ad.b);
  }
}

}  // namespace slad
