#include "sgl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sgl/error.hpp"
#include "sgl/experiment.hpp"

namespace sgl {

namespace {

constexpr char magic[8] = {'S', 'G', 'L', 'C', 'K', 'P', 'T', '1'};

class Writer {
 public:
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    raw(b, 8);
  }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    raw(b, 4);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void vec(const ParamVector& p) {
    u64(p.dim());
    for (double v : p.flat()) f64(v);
  }
  void sampler(const MinibatchSampler::State& s) {
    u64(s.epoch);
    u64(s.position);
  }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Cursor {
 public:
  Cursor(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  const char* take(std::size_t n) {
    if (n > end_ - pos_) throw CheckpointError("checkpoint is truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t u64() {
    const auto* b = reinterpret_cast<const unsigned char*>(take(8));
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    const auto* b = reinterpret_cast<const unsigned char*>(take(4));
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    return std::string(take(n), n);
  }
  ParamVector vec(const LayoutPtr& layout, const char* what) {
    const std::uint64_t n = u64();
    if (n != layout->total())
      throw CheckpointError(std::string("checkpoint ") + what + " has " + std::to_string(n) + " values, network expects " +
                            std::to_string(layout->total()));
    std::vector<double> values(n);
    for (auto& v : values) v = f64();
    return ParamVector(layout, std::move(values));
  }
  MinibatchSampler::State sampler() {
    MinibatchSampler::State s;
    s.epoch = u64();
    s.position = u64();
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.raw(magic, sizeof magic);
  w.u32(checkpoint_version);
  w.u64(c.config_hash);
  w.u64(c.run_seed);
  w.u64(c.group.step);
  w.u64(c.group.learners.size());
  for (const auto& l : c.group.learners) {
    w.u64(l.id);
    w.u64(l.seed);
    w.vec(l.arch);
    w.vec(l.v);
    w.vec(l.w);
    w.vec(l.adam_m);
    w.vec(l.adam_v);
    w.u64(l.adam_t);
    w.str(save_rng(l.rng));
  }
  w.sampler(c.train);
  w.u64(c.val.size());
  for (const auto& s : c.val) w.sampler(s);
  w.sampler(c.unlabeled);
  w.f64(c.best_val_loss);
  w.u64(c.steps_since_best);
  w.u64(fnv1a64(w.bytes()));
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::string& bytes, const Network& net) {
  if (bytes.size() < sizeof magic + 4 + 8) throw CheckpointError("checkpoint is truncated");
  if (std::memcmp(bytes.data(), magic, sizeof magic) != 0) throw CheckpointError("not a checkpoint file (bad magic)");
  const std::size_t body = bytes.size() - 8;
  Cursor tail(bytes, bytes.size());
  tail.take(body);
  if (tail.u64() != fnv1a64(std::string_view(bytes).substr(0, body)))
    throw CheckpointError("checkpoint checksum mismatch (file truncated or corrupted)");

  Cursor in(bytes, body);
  in.take(sizeof magic);
  const std::uint32_t version = in.u32();
  if (version != checkpoint_version)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config_hash = in.u64();
  c.run_seed = in.u64();
  c.group.step = in.u64();
  const std::uint64_t K = in.u64();
  if (K == 0 || K > 1024) throw CheckpointError("checkpoint has an invalid learner count");
  for (std::uint64_t k = 0; k < K; ++k) {
    LearnerState l;
    l.id = in.u64();
    l.seed = in.u64();
    l.arch = in.vec(net.arch_layout(), "architecture");
    l.v = in.vec(net.weight_layout(), "V weights");
    l.w = in.vec(net.weight_layout(), "W weights");
    l.adam_m = in.vec(net.arch_layout(), "Adam first moment");
    l.adam_v = in.vec(net.arch_layout(), "Adam second moment");
    l.adam_t = in.u64();
    try {
      l.rng = load_rng(in.str());
    } catch (const Error& e) {
      throw CheckpointError(std::string("checkpoint generator state: ") + e.what());
    }
    c.group.learners.push_back(std::move(l));
  }
  c.train = in.sampler();
  const std::uint64_t nval = in.u64();
  if (nval > K) throw CheckpointError("checkpoint has an invalid sampler count");
  for (std::uint64_t i = 0; i < nval; ++i) c.val.push_back(in.sampler());
  c.unlabeled = in.sampler();
  c.best_val_loss = in.f64();
  c.steps_since_best = in.u64();
  if (!in.done()) throw CheckpointError("checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ckpt);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const Network& net,
                           std::optional<std::uint64_t> expected_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  Checkpoint c = decode_checkpoint(ss.str(), net);
  if (expected_hash && c.config_hash != *expected_hash) {
    throw CheckpointError("checkpoint " + path.string() + " was written under a different configuration (hash " +
                          std::to_string(c.config_hash) + ", current " + std::to_string(*expected_hash) + ")");
  }
  return c;
}

}  // namespace sgl
