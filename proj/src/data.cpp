#include "l1l1/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <regex>
#include <string>

namespace l1l1 {

static_assert(std::endian::native == std::endian::little, "tensor I/O assumes a little-endian host");

namespace {

constexpr char kRawMagic[] = "MMV1RAW0";
constexpr std::uint32_t kRawVersion = 1;
constexpr char kNpyMagic[] = "\x93NUMPY";

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::kU8: return 1;
    case DType::kF32: return 4;
    case DType::kF64: return 8;
  }
  return 0;
}

struct TensorFile {
  std::filesystem::path path;
  DType dtype{DType::kU8};
  std::vector<std::uint32_t> shape;
  std::string bytes;
  std::size_t payload_offset{0};

  std::size_t count() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t(1), std::multiplies<>());
  }

  double value(std::size_t i) const {
    const char* p = bytes.data() + payload_offset + i * dtype_size(dtype);
    switch (dtype) {
      case DType::kU8: return double(static_cast<unsigned char>(*p)) / 255.0;
      case DType::kF32: {
        float f;
        std::memcpy(&f, p, 4);
        return double(f);
      }
      case DType::kF64: {
        double f;
        std::memcpy(&f, p, 8);
        return f;
      }
    }
    return 0;
  }
};

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
T read_le(const std::string& buf, std::size_t& pos, const std::filesystem::path& path) {
  if (buf.size() < pos + sizeof(T))
    throw FormatError(path.string() + ": truncated header at offset " + std::to_string(pos));
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

void parse_raw(TensorFile& f) {
  std::size_t pos = 8;
  const auto version = read_le<std::uint32_t>(f.bytes, pos, f.path);
  if (version != kRawVersion)
    throw FormatError(f.path.string() + ": unsupported raw_v1 version " + std::to_string(version));
  const auto code = read_le<std::uint8_t>(f.bytes, pos, f.path);
  if (code > 2) throw FormatError(f.path.string() + ": unknown dtype code " + std::to_string(code) + " at offset 12");
  f.dtype = static_cast<DType>(code);
  const auto rank = read_le<std::uint8_t>(f.bytes, pos, f.path);
  for (int i = 0; i < rank; ++i) f.shape.push_back(read_le<std::uint32_t>(f.bytes, pos, f.path));
  f.payload_offset = pos;
}

void parse_npy(TensorFile& f) {
  std::size_t pos = 6;
  const auto major = read_le<std::uint8_t>(f.bytes, pos, f.path);
  const auto minor = read_le<std::uint8_t>(f.bytes, pos, f.path);
  if (major != 1 || minor != 0)
    throw FormatError(f.path.string() + ": only npy version 1.0 is supported (got " + std::to_string(major) + "." +
                      std::to_string(minor) + ")");
  const auto header_len = read_le<std::uint16_t>(f.bytes, pos, f.path);
  if (f.bytes.size() < pos + header_len) throw FormatError(f.path.string() + ": truncated npy header");
  const std::string header = f.bytes.substr(pos, header_len);
  f.payload_offset = pos + header_len;

  std::smatch match;
  if (!std::regex_search(header, match, std::regex(R"('descr'\s*:\s*'([^']*)')")))
    throw FormatError(f.path.string() + ": npy header has no descr");
  const std::string descr = match[1];
  if (descr == "|u1" || descr == "<u1" || descr == "u1")
    f.dtype = DType::kU8;
  else if (descr == "<f4")
    f.dtype = DType::kF32;
  else if (descr == "<f8")
    f.dtype = DType::kF64;
  else
    throw FormatError(f.path.string() + ": unsupported npy dtype '" + descr + "' (accepted: u1, <f4, <f8)");

  if (!std::regex_search(header, match, std::regex(R"('fortran_order'\s*:\s*(True|False))")))
    throw FormatError(f.path.string() + ": npy header has no fortran_order");
  if (match[1] == "True") throw FormatError(f.path.string() + ": Fortran-order npy arrays are not supported");

  if (!std::regex_search(header, match, std::regex(R"('shape'\s*:\s*\(([^)]*)\))")))
    throw FormatError(f.path.string() + ": npy header has no shape");
  const std::string dims = match[1];
  const std::regex number(R"(\d+)");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), number); it != std::sregex_iterator(); ++it)
    f.shape.push_back(std::uint32_t(std::stoul(it->str())));
}

TensorFile read_tensor_file(const std::filesystem::path& path, VideoFormat format) {
  TensorFile f;
  f.path = path;
  f.bytes = slurp(path);
  const bool is_raw = f.bytes.compare(0, 8, kRawMagic, 8) == 0;
  const bool is_npy = f.bytes.compare(0, 6, kNpyMagic, 6) == 0;
  if (format == VideoFormat::kAuto) format = is_raw ? VideoFormat::kRawV1 : is_npy ? VideoFormat::kNpyV1 : format;
  if (format == VideoFormat::kRawV1) {
    if (!is_raw) throw FormatError(path.string() + ": bad raw_v1 magic");
    parse_raw(f);
  } else if (format == VideoFormat::kNpyV1) {
    if (!is_npy) throw FormatError(path.string() + ": bad npy magic");
    parse_npy(f);
  } else {
    throw FormatError(path.string() + ": unrecognised file magic");
  }
  const std::size_t need = f.count() * dtype_size(f.dtype);
  if (f.bytes.size() - f.payload_offset < need)
    throw FormatError(path.string() + ": truncated payload, expected " + std::to_string(need) + " bytes at offset " +
                      std::to_string(f.payload_offset) + ", found " +
                      std::to_string(f.bytes.size() - f.payload_offset));
  return f;
}

struct Geometry {
  std::size_t n, t, h, w;
  bool frames_first;

  std::size_t index(std::size_t seq, std::size_t frame, std::size_t r, std::size_t c) const {
    const std::size_t outer = frames_first ? frame * n + seq : seq * t + frame;
    return (outer * h + r) * w + c;
  }
};

Geometry geometry(const TensorFile& f, VideoLayout layout) {
  if (f.shape.size() == 3) return {1, f.shape[0], f.shape[1], f.shape[2], false};
  if (f.shape.size() != 4)
    throw FormatError(f.path.string() + ": expected a rank-4 video tensor, got rank " + std::to_string(f.shape.size()));
  if (layout == VideoLayout::kFramesFirst) return {f.shape[1], f.shape[0], f.shape[2], f.shape[3], true};
  return {f.shape[0], f.shape[1], f.shape[2], f.shape[3], false};
}

double checked_pixel(const TensorFile& f, std::size_t i) {
  const double v = f.value(i);
  if (!(v >= 0.0 && v <= 1.0))
    throw FormatError(f.path.string() + ": pixel value " + std::to_string(v) + " outside [0, 1] at element " +
                      std::to_string(i));
  return v;
}

void encode(std::string& buf, DType dtype, const std::vector<double>& values) {
  for (double v : values) {
    switch (dtype) {
      case DType::kU8: {
        const auto b = static_cast<unsigned char>(std::clamp(std::lround(v * 255.0), 0L, 255L));
        buf.push_back(static_cast<char>(b));
        break;
      }
      case DType::kF32: {
        const float x = float(v);
        buf.append(reinterpret_cast<const char*>(&x), 4);
        break;
      }
      case DType::kF64: buf.append(reinterpret_cast<const char*>(&v), 8); break;
    }
  }
}

void write_file(const std::filesystem::path& path, const std::string& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(buf.data(), std::streamsize(buf.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

Frame VideoDataset::frame(std::size_t seq, std::size_t t) const {
  Frame f(height, width);
  std::copy_n(pixels.begin() + std::ptrdiff_t(((seq * frames + t) * height) * width), height * width, f.data());
  return f;
}

void VideoDataset::set_frame(std::size_t seq, std::size_t t, const Frame& f) {
  detail::require_dims(std::size_t(f.rows()) == height && std::size_t(f.cols()) == width, "set_frame: wrong frame size");
  std::copy_n(f.data(), height * width, pixels.begin() + std::ptrdiff_t(((seq * frames + t) * height) * width));
}

VideoDataset load_video_tensor(const std::filesystem::path& path, const LoadOptions& opts) {
  const TensorFile f = read_tensor_file(path, opts.format);
  const Geometry g = geometry(f, opts.layout);
  VideoDataset data{g.n, g.t, g.h, g.w, {}, {}};
  data.pixels.resize(f.count());
  std::size_t k = 0;
  for (std::size_t s = 0; s < g.n; ++s)
    for (std::size_t t = 0; t < g.t; ++t)
      for (std::size_t r = 0; r < g.h; ++r)
        for (std::size_t c = 0; c < g.w; ++c) data.pixels[k++] = checked_pixel(f, g.index(s, t, r, c));
  return data;
}

VideoDataset load_downscaled(const std::filesystem::path& path, int factor, const LoadOptions& opts) {
  const TensorFile f = read_tensor_file(path, opts.format);
  const Geometry g = geometry(f, opts.layout);
  if (factor < 1 || g.h % std::size_t(factor) != 0 || g.w % std::size_t(factor) != 0)
    throw DimensionError(path.string() + ": " + std::to_string(g.h) + "x" + std::to_string(g.w) +
                         " frames are not divisible by factor " + std::to_string(factor));
  VideoDataset out{g.n, g.t, g.h / std::size_t(factor), g.w / std::size_t(factor), {}, {}};
  out.pixels.resize(out.num_sequences * out.frames * out.height * out.width);
  Frame frame(g.h, g.w);
  for (std::size_t s = 0; s < g.n; ++s)
    for (std::size_t t = 0; t < g.t; ++t) {
      for (std::size_t r = 0; r < g.h; ++r)
        for (std::size_t c = 0; c < g.w; ++c) frame(Eigen::Index(r), Eigen::Index(c)) = checked_pixel(f, g.index(s, t, r, c));
      out.set_frame(s, t, bilinear_downscale(frame, factor));
    }
  return out;
}

void write_raw_v1(const std::filesystem::path& path, const std::vector<std::uint32_t>& shape, DType dtype,
                  const std::vector<double>& values) {
  if (shape.size() > 255) throw ParameterError("write_raw_v1: rank too large");
  std::string buf(kRawMagic, 8);
  buf.append(reinterpret_cast<const char*>(&kRawVersion), 4);
  buf.push_back(static_cast<char>(dtype));
  buf.push_back(static_cast<char>(shape.size()));
  for (auto s : shape) buf.append(reinterpret_cast<const char*>(&s), 4);
  encode(buf, dtype, values);
  write_file(path, buf);
}

void write_npy_v1(const std::filesystem::path& path, const std::vector<std::uint32_t>& shape, DType dtype,
                  const std::vector<double>& values, bool fortran_order) {
  const char* descr = dtype == DType::kU8 ? "|u1" : dtype == DType::kF32 ? "<f4" : "<f8";
  std::string dims;
  for (auto s : shape) dims += std::to_string(s) + ", ";
  if (shape.size() > 1) dims.resize(dims.size() - 1);
  std::string header = std::string("{'descr': '") + descr + "', 'fortran_order': " + (fortran_order ? "True" : "False") +
                       ", 'shape': (" + dims + "), }";
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');
  std::string buf(kNpyMagic, 6);
  buf.push_back('\x01');
  buf.push_back('\x00');
  const auto len = std::uint16_t(header.size());
  buf.append(reinterpret_cast<const char*>(&len), 2);
  buf += header;
  encode(buf, dtype, values);
  write_file(path, buf);
}

void save_raw_v1(const std::filesystem::path& path, const VideoDataset& data, DType dtype) {
  write_raw_v1(path,
               {std::uint32_t(data.num_sequences), std::uint32_t(data.frames), std::uint32_t(data.height),
                std::uint32_t(data.width)},
               dtype, data.pixels);
}

Frame bilinear_downscale(const Frame& frame, int factor) {
  if (factor < 1) throw ParameterError("bilinear_downscale: factor must be >= 1");
  const Eigen::Index H = frame.rows(), W = frame.cols();
  if (H % factor != 0 || W % factor != 0)
    throw DimensionError("bilinear_downscale: " + std::to_string(H) + "x" + std::to_string(W) +
                         " is not divisible by " + std::to_string(factor));
  Frame out(H / factor, W / factor);
  auto tap = [](double pos, Eigen::Index size, Eigen::Index& lo, Eigen::Index& hi) {
    const double fl = std::floor(pos);
    const double w = pos - fl;
    lo = std::clamp(Eigen::Index(fl), Eigen::Index(0), size - 1);
    hi = std::clamp(Eigen::Index(fl) + 1, Eigen::Index(0), size - 1);
    return w;
  };
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    Eigen::Index y0, y1;
    const double wy = tap((double(i) + 0.5) * factor - 0.5, H, y0, y1);
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      Eigen::Index x0, x1;
      const double wx = tap((double(j) + 0.5) * factor - 0.5, W, x0, x1);
      out(i, j) = (1 - wy) * (1 - wx) * frame(y0, x0) + (1 - wy) * wx * frame(y0, x1) +
                  wy * (1 - wx) * frame(y1, x0) + wy * wx * frame(y1, x1);
    }
  }
  return out;
}

VideoDataset downscale(const VideoDataset& data, int factor) {
  if (factor < 1 || data.height % std::size_t(factor) != 0 || data.width % std::size_t(factor) != 0)
    throw DimensionError("downscale: frame size not divisible by factor");
  VideoDataset out{data.num_sequences, data.frames, data.height / std::size_t(factor),
                   data.width / std::size_t(factor), {}, data.splits};
  out.pixels.resize(out.num_sequences * out.frames * out.height * out.width);
  for (std::size_t s = 0; s < data.num_sequences; ++s)
    for (std::size_t t = 0; t < data.frames; ++t) out.set_frame(s, t, bilinear_downscale(data.frame(s, t), factor));
  return out;
}

Splits make_splits(std::size_t num_sequences, std::array<std::size_t, 3> sizes, std::uint64_t seed) {
  if (sizes[0] + sizes[1] + sizes[2] > num_sequences)
    throw ParameterError("make_splits: split sizes exceed the " + std::to_string(num_sequences) + " sequences");
  std::vector<std::size_t> perm(num_sequences);
  std::iota(perm.begin(), perm.end(), std::size_t(0));
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  Splits s;
  auto it = perm.begin();
  s.train.assign(it, it + std::ptrdiff_t(sizes[0]));
  it += std::ptrdiff_t(sizes[0]);
  s.val.assign(it, it + std::ptrdiff_t(sizes[1]));
  it += std::ptrdiff_t(sizes[1]);
  s.test.assign(it, it + std::ptrdiff_t(sizes[2]));
  return s;
}

std::vector<Eigen::MatrixXd> vectorize(const VideoDataset& data, const std::vector<std::size_t>& indices) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(indices.size());
  const std::size_t n = data.height * data.width;
  for (std::size_t seq : indices) {
    if (seq >= data.num_sequences) throw ParameterError("vectorize: sequence index out of range");
    Eigen::MatrixXd s(Eigen::Index(n), Eigen::Index(data.frames));
    for (std::size_t t = 0; t < data.frames; ++t)
      for (std::size_t r = 0; r < data.height; ++r)
        for (std::size_t c = 0; c < data.width; ++c) s(Eigen::Index(r * data.width + c), Eigen::Index(t)) = data.at(seq, t, r, c);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Eigen::MatrixXd> vectorize(const VideoDataset& data) {
  std::vector<std::size_t> all(data.num_sequences);
  std::iota(all.begin(), all.end(), std::size_t(0));
  return vectorize(data, all);
}

Frame unvectorize(const Eigen::VectorXd& v, std::size_t height, std::size_t width) {
  detail::require_dims(std::size_t(v.size()) == height * width, "unvectorize: length must equal height * width");
  Frame f(height, width);
  std::copy_n(v.data(), v.size(), f.data());
  return f;
}

void SyntheticSpec::validate() const {
  if (n < 1 || d < 1 || m < 1 || T < 1) throw ParameterError("SyntheticSpec: dimensions must be positive");
  if (sparsity < 0 || sparsity > d) throw ParameterError("SyntheticSpec: sparsity must be in [0, d]");
  if (innovation_sparsity < 0 || innovation_sparsity > d)
    throw ParameterError("SyntheticSpec: innovation sparsity must be in [0, d]");
  if (!(amplitude_min > 0) || !(amplitude_max >= amplitude_min))
    throw ParameterError("SyntheticSpec: need 0 < amplitude_min <= amplitude_max");
}

SyntheticSequence generate_synthetic(const SyntheticSpec& spec, const Eigen::MatrixXd& G, const Eigen::MatrixXd& D) {
  spec.validate();
  detail::require_dims(G.rows() == spec.d && G.cols() == spec.d, "generate_synthetic: G must be d x d");
  detail::require_dims(D.rows() == spec.n && D.cols() == spec.d, "generate_synthetic: D must be n x d");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> amplitude(spec.amplitude_min, spec.amplitude_max);
  std::bernoulli_distribution negative(0.5);
  std::vector<Eigen::Index> positions(std::size_t(spec.d));

  auto sparse_vector = [&](Eigen::Index nonzeros) {
    std::iota(positions.begin(), positions.end(), Eigen::Index(0));
    std::shuffle(positions.begin(), positions.end(), rng);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(spec.d);
    for (Eigen::Index i = 0; i < nonzeros; ++i) {
      const double a = amplitude(rng);
      v(positions[std::size_t(i)]) = negative(rng) ? -a : a;
    }
    return v;
  };

  SyntheticSequence out;
  out.codes.resize(spec.d, spec.T);
  out.codes.col(0) = sparse_vector(spec.sparsity);
  for (Eigen::Index t = 1; t < spec.T; ++t) out.codes.col(t) = G * out.codes.col(t - 1) + sparse_vector(spec.innovation_sparsity);
  out.signals = D * out.codes;
  return out;
}

std::vector<Eigen::MatrixXd> generate_synthetic_dataset(const SyntheticSpec& spec, const Eigen::MatrixXd& G,
                                                        const Eigen::MatrixXd& D, std::size_t count) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(count);
  SyntheticSpec s = spec;
  for (std::size_t i = 0; i < count; ++i) {
    s.seed = spec.seed + i;
    out.push_back(generate_synthetic(s, G, D).signals);
  }
  return out;
}

}  // namespace l1l1
