#include "petri/runio/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

namespace petri {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void tensor(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) u64(d);
    for (float v : t.data()) f32(v);
  }
  void rng(const Rng& r) {
    std::ostringstream ss;
    ss << r;
    str(ss.str());
  }
  void bytes(const std::vector<std::uint8_t>& b) { out_.insert(out_.end(), b.begin(), b.end()); }
  std::vector<std::uint8_t>& data() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  void need(std::size_t k) const {
    if (n_ - pos_ < k) throw CheckpointError("checkpoint truncated");
  }
  std::uint8_t u8() {
    need(1);
    return p_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{p_[pos_++]} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{p_[pos_++]} << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t len = u64();
    need(len);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), len);
    pos_ += len;
    return s;
  }
  Tensor tensor() {
    const std::uint32_t rank = u32();
    if (rank > 8) throw CheckpointError("checkpoint tensor rank out of range");
    grad::Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape.push_back(u64());
      if (shape.back() > (1ull << 32)) throw CheckpointError("checkpoint tensor dimension out of range");
      numel *= shape.back();
    }
    need(numel * 4);
    std::vector<float> data(numel);
    for (float& v : data) v = f32();
    return Tensor(std::move(shape), std::move(data));
  }
  Rng rng() {
    std::istringstream ss(str());
    Rng r;
    ss >> r;
    if (!ss) throw CheckpointError("checkpoint holds a malformed RNG state");
    return r;
  }
  const std::uint8_t* ptr() const { return p_ + pos_; }
  void skip(std::size_t k) {
    need(k);
    pos_ += k;
  }
  bool done() const { return pos_ == n_; }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

std::uint32_t tag(const char* s) {
  return std::uint32_t(std::uint8_t(s[0])) | std::uint32_t(std::uint8_t(s[1])) << 8 |
         std::uint32_t(std::uint8_t(s[2])) << 16 | std::uint32_t(std::uint8_t(s[3])) << 24;
}

std::uint32_t crc(const std::vector<std::uint8_t>& b) {
  return static_cast<std::uint32_t>(crc32(0L, b.data(), static_cast<uInt>(b.size())));
}

std::vector<std::uint8_t> world_payload(const WorldState& w) {
  Writer o;
  const auto& c = w.config;
  o.u64(c.height);
  o.u64(c.width);
  o.u64(c.agents);
  o.u64(c.layout.attack);
  o.u64(c.layout.defense);
  o.u64(c.layout.hidden);
  o.u64(c.hidden_width);
  o.f32(c.alpha);
  o.f64(w.hparams.learning_rate);
  o.i64(w.hparams.batch_size);
  o.i64(w.hparams.steps_per_update);
  o.f64(w.hparams.softmax_temp);
  o.f64(w.hparams.per_hid_upd);
  o.u64(w.steps);
  o.u64(w.segments);
  o.u8(w.healthy ? 1 : 0);
  o.rng(w.rng);
  o.u64(w.agents.size());
  for (const AgentNet& a : w.agents) {
    o.u64(a.params.size());
    for (const Tensor& t : a.params) o.tensor(t);
    o.u64(a.adam.step);
    o.f32(a.adam.beta1);
    o.f32(a.adam.beta2);
    o.f32(a.adam.eps);
    o.u64(a.adam.m.size());
    for (const Tensor& t : a.adam.m) o.tensor(t);
    o.u64(a.adam.v.size());
    for (const Tensor& t : a.adam.v) o.tensor(t);
  }
  o.u64(w.replicas.size());
  for (const Replica& r : w.replicas) {
    o.tensor(r.x);
    o.tensor(r.alive);
    o.rng(r.rng);
  }
  return std::move(o.data());
}

std::size_t bounded(std::uint64_t n, std::uint64_t limit, const char* what) {
  if (n > limit) throw CheckpointError(std::string("checkpoint ") + what + " count out of range");
  return static_cast<std::size_t>(n);
}

WorldState read_world(Reader& in) {
  WorldState w;
  auto& c = w.config;
  c.height = in.u64();
  c.width = in.u64();
  c.agents = in.u64();
  c.layout.attack = in.u64();
  c.layout.defense = in.u64();
  c.layout.hidden = in.u64();
  c.hidden_width = in.u64();
  c.alpha = in.f32();
  w.hparams.learning_rate = in.f64();
  w.hparams.batch_size = in.i64();
  w.hparams.steps_per_update = in.i64();
  w.hparams.softmax_temp = in.f64();
  w.hparams.per_hid_upd = in.f64();
  w.steps = in.u64();
  w.segments = in.u64();
  w.healthy = in.u8() != 0;
  w.rng = in.rng();
  const std::size_t agents = bounded(in.u64(), 1 << 16, "agent");
  for (std::size_t k = 0; k < agents; ++k) {
    AgentNet a;
    const std::size_t np = bounded(in.u64(), 64, "parameter");
    for (std::size_t i = 0; i < np; ++i) a.params.push_back(in.tensor());
    a.adam.step = in.u64();
    a.adam.beta1 = in.f32();
    a.adam.beta2 = in.f32();
    a.adam.eps = in.f32();
    const std::size_t nm = bounded(in.u64(), 64, "moment");
    for (std::size_t i = 0; i < nm; ++i) a.adam.m.push_back(in.tensor());
    const std::size_t nv = bounded(in.u64(), 64, "moment");
    for (std::size_t i = 0; i < nv; ++i) a.adam.v.push_back(in.tensor());
    w.agents.push_back(std::move(a));
  }
  const std::size_t reps = bounded(in.u64(), 1 << 16, "replica");
  for (std::size_t b = 0; b < reps; ++b) {
    Replica r;
    r.x = in.tensor();
    r.alive = in.tensor();
    r.rng = in.rng();
    w.replicas.push_back(std::move(r));
  }
  return w;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& cp) {
  std::vector<std::pair<std::uint32_t, std::vector<std::uint8_t>>> sections;

  const std::string conf = config_to_json(cp.config, -1);
  sections.emplace_back(tag("CONF"), std::vector<std::uint8_t>(conf.begin(), conf.end()));

  Writer meta;
  meta.u64(cp.population.t);
  meta.u64(cp.metrics_cursor);
  meta.u64(cp.summary_cursor);
  meta.u64(cp.population.worlds.size());
  sections.emplace_back(tag("META"), std::move(meta.data()));

  Writer rng;
  rng.rng(cp.population.rng);
  sections.emplace_back(tag("RNG "), std::move(rng.data()));

  Writer arch;
  const Archive& a = cp.population.archive;
  arch.u64(a.capacity());
  arch.u64(a.reset_period());
  arch.u64(a.inserted());
  arch.u64(a.size());
  for (const auto& e : a.entries()) {
    arch.u64(e.size());
    for (double v : e) arch.f64(v);
  }
  sections.emplace_back(tag("ARCH"), std::move(arch.data()));

  for (const WorldState& w : cp.population.worlds) sections.emplace_back(tag("WRLD"), world_payload(w));

  Writer out;
  const char magic[] = "PETRICKP";
  out.bytes(std::vector<std::uint8_t>(magic, magic + 8));
  out.u32(kCheckpointVersion);
  out.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& [t, payload] : sections) {
    out.u32(t);
    out.u64(payload.size());
    out.bytes(payload);
    out.u32(crc(payload));
  }
  return std::move(out.data());
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes.data(), bytes.size());
  in.need(8);
  if (std::memcmp(in.ptr(), "PETRICKP", 8) != 0) throw CheckpointError("not a checkpoint file (bad magic)");
  in.skip(8);
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t count = in.u32();

  // Verify every checksum before decoding anything.
  std::vector<std::pair<std::uint32_t, std::vector<std::uint8_t>>> sections;
  for (std::uint32_t s = 0; s < count; ++s) {
    const std::uint32_t t = in.u32();
    const std::uint64_t len = in.u64();
    in.need(len);
    std::vector<std::uint8_t> payload(in.ptr(), in.ptr() + len);
    in.skip(len);
    if (in.u32() != crc(payload)) throw CheckpointError("checkpoint checksum mismatch in section " + std::to_string(s));
    sections.emplace_back(t, std::move(payload));
  }
  if (!in.done()) throw CheckpointError("trailing bytes after checkpoint sections");
  if (sections.size() < 4 || sections[0].first != tag("CONF") || sections[1].first != tag("META") ||
      sections[2].first != tag("RNG ") || sections[3].first != tag("ARCH")) {
    throw CheckpointError("checkpoint sections missing or out of order");
  }

  Checkpoint cp;
  const auto& conf = sections[0].second;
  cp.config = config_from_json(std::string(conf.begin(), conf.end()));

  Reader meta(sections[1].second.data(), sections[1].second.size());
  cp.population.t = meta.u64();
  cp.metrics_cursor = meta.u64();
  cp.summary_cursor = meta.u64();
  const std::uint64_t worlds = meta.u64();
  if (worlds != sections.size() - 4) throw CheckpointError("checkpoint world count does not match its sections");

  Reader rng(sections[2].second.data(), sections[2].second.size());
  cp.population.rng = rng.rng();

  Reader arch(sections[3].second.data(), sections[3].second.size());
  const std::uint64_t cap = arch.u64(), reset = arch.u64(), inserted = arch.u64();
  const std::size_t n = bounded(arch.u64(), 1 << 24, "archive entry");
  if (cap == 0) throw CheckpointError("checkpoint archive capacity is 0");
  cp.population.archive = Archive(static_cast<std::size_t>(cap), reset);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> e(bounded(arch.u64(), 1 << 16, "descriptor"));
    for (double& v : e) v = arch.f64();
    cp.population.archive.push(std::move(e));
  }
  cp.population.archive.set_inserted(inserted);

  for (std::size_t s = 4; s < sections.size(); ++s) {
    if (sections[s].first != tag("WRLD")) throw CheckpointError("unexpected checkpoint section");
    Reader r(sections[s].second.data(), sections[s].second.size());
    cp.population.worlds.push_back(read_world(r));
    if (!r.done()) throw CheckpointError("world section has trailing bytes");
  }
  return cp;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  const auto bytes = serialize_checkpoint(checkpoint);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write checkpoint " + tmp);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace petri
