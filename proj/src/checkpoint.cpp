#include "factharness/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "factharness/error.hpp"

namespace factharness::checkpoint {

namespace {

constexpr char kMagic[4] = {'F', 'H', 'C', 'P'};

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t limit) : bytes_(bytes), limit_(limit) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool exhausted() const { return pos_ == limit_; }

 private:
  unsigned char byte() { return static_cast<unsigned char>(bytes_[pos_++]); }
  void need(std::size_t n) {
    if (pos_ + n > limit_) throw ParseError("checkpoint truncated mid-record");
  }

  const std::string& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

void put_config(std::string& out, const m2trans::ModelConfig& c) {
  for (std::size_t field : {c.d, c.heads, c.n_layers, c.n_mem, c.vocab, c.max_len, c.images,
                            c.grid_positions, c.grid_depth, c.ff}) {
    put_u64(out, static_cast<std::uint64_t>(field));
  }
}

m2trans::ModelConfig read_config(Reader& r) {
  m2trans::ModelConfig c;
  for (std::size_t* field : {&c.d, &c.heads, &c.n_layers, &c.n_mem, &c.vocab, &c.max_len,
                             &c.images, &c.grid_positions, &c.grid_depth, &c.ff}) {
    *field = static_cast<std::size_t>(r.u64());
  }
  return c;
}

std::string describe(const m2trans::ModelConfig& c) {
  std::ostringstream s;
  s << "d=" << c.d << " heads=" << c.heads << " n_layers=" << c.n_layers << " n_mem=" << c.n_mem
    << " vocab=" << c.vocab << " max_len=" << c.max_len << " images=" << c.images
    << " grid=" << c.grid_positions << "x" << c.grid_depth << " ff=" << c.ff;
  return s.str();
}

}  // namespace

void save_params(const m2trans::ModelParams& params, const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kFormatVersion);
  put_config(out, params.config);
  put_u32(out, static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& [name, tensor] : params.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(tensor.shape.size()));
    for (std::size_t dim : tensor.shape) put_u64(out, static_cast<std::uint64_t>(dim));
    for (double v : tensor.data) put_f64(out, v);
  }
  put_u64(out, fnv1a(out));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write to checkpoint: " + path);
}

m2trans::ModelParams load_params(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  const std::string bytes = buf.str();

  // checksum gate first: no partial parse of corrupt content
  if (bytes.size() < 4 + 4 + 8) throw ParseError("checkpoint too short to contain a header");
  const std::size_t body = bytes.size() - 8;
  Reader tail(bytes, bytes.size());
  (void)tail.str(body);
  const std::uint64_t stored = tail.u64();
  const std::uint64_t actual = fnv1a(bytes.substr(0, body));
  if (stored != actual) throw ParseError("checkpoint checksum mismatch (file corrupted or truncated)");

  Reader r(bytes, body);
  if (r.str(4) != std::string(kMagic, 4)) throw ParseError("not a checkpoint file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw ParseError("checkpoint format version " + std::to_string(version) +
                     ", this build reads version " + std::to_string(kFormatVersion));
  }

  m2trans::ModelParams params;
  params.config = read_config(r);
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      shape[k] = static_cast<std::size_t>(r.u64());
      numel *= shape[k];
    }
    std::vector<double> data(numel);
    for (std::size_t k = 0; k < numel; ++k) data[k] = r.f64();
    if (params.tensors.count(name)) throw ParseError("duplicate tensor in checkpoint: " + name);
    params.tensors.emplace(std::move(name), diffmath::Tensor(std::move(shape), std::move(data)));
  }
  if (!r.exhausted()) throw ParseError("trailing bytes after last checkpoint tensor");
  return params;
}

m2trans::ModelParams load_params(const std::string& path, const m2trans::ModelConfig& expected) {
  m2trans::ModelParams params = load_params(path);
  if (!(params.config == expected)) {
    throw ConfigError("checkpoint config (" + describe(params.config) +
                      ") does not match run config (" + describe(expected) + ")");
  }
  return params;
}

}  // namespace factharness::checkpoint
