#include "sdpt/formats.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "sdpt/errors.hpp"

namespace sdpt {

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  return f;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  return f;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

// Bounds-checked little-endian reader over an in-memory file image.
class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  std::string take(std::size_t n) {
    if (pos_ + n > data_.size()) throw FormatError("truncated file: " + path_);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32() {
    std::uint32_t v = 0;
    const std::string b = take(4);
    for (int i = 3; i >= 0; --i) v = (v << 8) | std::uint8_t(b[std::size_t(i)]);
    return v;
  }

  std::uint64_t u64() {
    std::uint64_t v = 0;
    const std::string b = take(8);
    for (int i = 7; i >= 0; --i) v = (v << 8) | std::uint8_t(b[std::size_t(i)]);
    return v;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::size_t pos() const { return pos_; }
  std::size_t size() const { return data_.size(); }
  const std::string& bytes() const { return data_; }
  const std::string& path() const { return path_; }

 private:
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

Reader slurp(const std::string& path) {
  std::ifstream f = open_in(path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return Reader(std::move(data), path);
}

void write_all(const std::string& path, const std::string& bytes) {
  std::ofstream f = open_out(path);
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw IoError("short write: " + path);
}

}  // namespace

std::uint32_t crc32(const unsigned char* data, std::size_t n) {
  static const std::array<std::uint32_t, 256> table = make_crc_table();
  std::uint32_t c = 0xffffffffu;
  for (std::size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

void write_ppm(const std::string& path, const Tensor& rgb) {
  if (rgb.ndim() != 3 || rgb.shape()[0] != 3) {
    throw ShapeError("write_ppm: expected (3, h, w), got " + shape_str(rgb.shape()));
  }
  const std::size_t h = rgb.shape()[1], w = rgb.shape()[2];
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const auto& v = rgb.values();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double q = std::lround(std::min(1.0, std::max(0.0, v[(c * h + y) * w + x])) * 255.0);
        out.push_back(char(std::uint8_t(q)));
      }
    }
  }
  write_all(path, out);
}

Tensor read_ppm(const std::string& path) {
  Reader r = slurp(path);
  // Header: magic, width, height, maxval, single whitespace, then raster.
  std::size_t pos = r.pos();
  const std::string& b = r.bytes();
  auto next_token = [&]() {
    while (pos < b.size() && std::isspace(std::uint8_t(b[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < b.size() && !std::isspace(std::uint8_t(b[pos]))) ++pos;
    if (start == pos) throw FormatError("ppm: truncated header in " + path);
    return b.substr(start, pos - start);
  };
  if (next_token() != "P6") throw FormatError("ppm: not a binary P6 file: " + path);
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(next_token());
    h = std::stoul(next_token());
    maxval = std::stoul(next_token());
  } catch (const std::exception&) {
    throw FormatError("ppm: malformed header in " + path);
  }
  if (w == 0 || h == 0) throw FormatError("ppm: empty image in " + path);
  if (maxval != 255) throw FormatError("ppm: only maxval 255 is supported: " + path);
  ++pos;  // single whitespace after maxval
  if (pos + 3 * w * h > b.size()) throw FormatError("ppm: truncated raster in " + path);
  std::vector<double> vals(3 * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        vals[(c * h + y) * w + x] = double(std::uint8_t(b[pos++])) / 255.0;
      }
    }
  }
  return Tensor::from_data({3, h, w}, std::move(vals));
}

void write_pfm(const std::string& path, const Tensor& plane) {
  std::size_t h = 0, w = 0;
  if (plane.ndim() == 2) {
    h = plane.shape()[0];
    w = plane.shape()[1];
  } else if (plane.ndim() == 3 && plane.shape()[0] == 1) {
    h = plane.shape()[1];
    w = plane.shape()[2];
  } else {
    throw ShapeError("write_pfm: expected (h, w) or (1, h, w), got " + shape_str(plane.shape()));
  }
  std::string out = "Pf\n" + std::to_string(w) + " " + std::to_string(h) + "\n-1.0\n";
  const auto& v = plane.values();
  for (std::size_t yi = h; yi-- > 0;) {  // bottom row first
    for (std::size_t x = 0; x < w; ++x) {
      const double d = v[yi * w + x];
      if (!std::isfinite(d)) throw FormatError("pfm: refusing to write non-finite sample");
      put_f32(out, float(d));
    }
  }
  write_all(path, out);
}

Tensor read_pfm(const std::string& path) {
  Reader r = slurp(path);
  const std::string& b = r.bytes();
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < b.size() && std::isspace(std::uint8_t(b[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < b.size() && !std::isspace(std::uint8_t(b[pos]))) ++pos;
    if (start == pos) throw FormatError("pfm: truncated header in " + path);
    return b.substr(start, pos - start);
  };
  const std::string magic = next_token();
  if (magic == "PF") throw FormatError("pfm: color PFM is not supported: " + path);
  if (magic != "Pf") throw FormatError("pfm: bad magic in " + path);
  std::size_t w = 0, h = 0;
  double scale = 0.0;
  try {
    w = std::stoul(next_token());
    h = std::stoul(next_token());
    scale = std::stod(next_token());
  } catch (const std::exception&) {
    throw FormatError("pfm: malformed header in " + path);
  }
  if (w == 0 || h == 0) throw FormatError("pfm: empty image in " + path);
  if (scale >= 0.0) throw FormatError("pfm: big-endian data is not supported: " + path);
  ++pos;  // single whitespace after scale
  if (pos + 4 * w * h > b.size()) throw FormatError("pfm: truncated raster in " + path);
  std::vector<double> vals(h * w);
  for (std::size_t yi = h; yi-- > 0;) {
    for (std::size_t x = 0; x < w; ++x) {
      std::uint32_t bits = 0;
      for (int i = 3; i >= 0; --i) bits = (bits << 8) | std::uint8_t(b[pos + std::size_t(i)]);
      pos += 4;
      float f;
      std::memcpy(&f, &bits, 4);
      if (!std::isfinite(f)) throw FormatError("pfm: non-finite sample in " + path);
      vals[yi * w + x] = double(f);
    }
  }
  return Tensor::from_data({1, h, w}, std::move(vals));
}

void write_flo5(const std::string& path, const FlowField& flow) {
  if (flow.h == 0 || flow.w == 0 || flow.u.size() != flow.h * flow.w ||
      flow.v.size() != flow.h * flow.w || flow.valid.size() != flow.h * flow.w) {
    throw ShapeError("write_flo5: inconsistent flow field");
  }
  std::string out = "FLO5";
  put_u32(out, std::uint32_t(flow.h));
  put_u32(out, std::uint32_t(flow.w));
  for (std::size_t i = 0; i < flow.u.size(); ++i) {
    put_f32(out, float(flow.u[i]));
    put_f32(out, float(flow.v[i]));
  }
  for (std::uint8_t v : flow.valid) out.push_back(char(v ? 1 : 0));
  write_all(path, out);
}

FlowField read_flo5(const std::string& path) {
  Reader r = slurp(path);
  if (r.take(4) != "FLO5") throw FormatError("flo5: bad magic in " + path);
  FlowField f;
  f.h = r.u32();
  f.w = r.u32();
  if (f.h == 0 || f.w == 0) throw FormatError("flo5: empty flow in " + path);
  const std::size_t n = f.h * f.w;
  f.u.resize(n);
  f.v.resize(n);
  f.valid.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    f.u[i] = double(r.f32());
    f.v[i] = double(r.f32());
  }
  for (std::size_t i = 0; i < n; ++i) f.valid[i] = std::uint8_t(r.take(1)[0]) ? 1 : 0;
  if (r.pos() != r.size()) throw FormatError("flo5: trailing bytes in " + path);
  return f;
}

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void write_checkpoint(const std::string& path, const Checkpoint& cp) {
  std::string out = "SDPT";
  put_u32(out, kCheckpointVersion);
  const std::string meta = cp.meta.dump();
  put_u64(out, meta.size());
  out += meta;
  put_u32(out, std::uint32_t(cp.tensors.size()));
  std::uint64_t payload = 0;
  for (const auto& t : cp.tensors) {
    if (t.data.size() != shape_numel(t.shape)) {
      throw ShapeError("checkpoint: tensor " + t.name + " data does not match its shape");
    }
    put_u32(out, std::uint32_t(t.name.size()));
    out += t.name;
    out.push_back(0);  // dtype 0 = f64
    out.push_back(char(std::uint8_t(t.shape.size())));
    for (std::size_t d : t.shape) put_u64(out, d);
    payload += t.data.size();
  }
  put_u64(out, payload * 8);
  for (const auto& t : cp.tensors) {
    for (double v : t.data) put_f64(out, v);
  }
  put_u32(out, crc32(reinterpret_cast<const unsigned char*>(out.data()), out.size()));
  write_all(path, out);
}

Checkpoint read_checkpoint(const std::string& path) {
  Reader r = slurp(path);
  if (r.size() < 4) throw FormatError("checkpoint: truncated file: " + path);
  const std::uint32_t stored = [&] {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | std::uint8_t(r.bytes()[r.size() - 4 + std::size_t(i)]);
    return v;
  }();
  const std::uint32_t actual =
      crc32(reinterpret_cast<const unsigned char*>(r.bytes().data()), r.size() - 4);
  if (stored != actual) throw FormatError("checkpoint: checksum mismatch in " + path);

  if (r.take(4) != "SDPT") throw FormatError("checkpoint: bad magic in " + path);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " in " +
                      path);
  }
  Checkpoint cp;
  const std::uint64_t meta_len = r.u64();
  try {
    cp.meta = nlohmann::json::parse(r.take(meta_len));
  } catch (const nlohmann::json::exception&) {
    throw FormatError("checkpoint: malformed metadata in " + path);
  }
  const std::uint32_t count = r.u32();
  std::uint64_t payload = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.take(r.u32());
    const std::uint8_t dtype = std::uint8_t(r.take(1)[0]);
    if (dtype != 0) throw FormatError("checkpoint: unknown dtype in " + path);
    const std::uint8_t ndim = std::uint8_t(r.take(1)[0]);
    for (std::uint8_t d = 0; d < ndim; ++d) t.shape.push_back(r.u64());
    payload += shape_numel(t.shape);
    cp.tensors.push_back(std::move(t));
  }
  if (r.u64() != payload * 8) throw FormatError("checkpoint: payload size mismatch in " + path);
  for (auto& t : cp.tensors) {
    t.data.resize(shape_numel(t.shape));
    for (double& v : t.data) v = r.f64();
  }
  if (r.pos() + 4 != r.size()) throw FormatError("checkpoint: trailing bytes in " + path);
  return cp;
}

}  // namespace sdpt
