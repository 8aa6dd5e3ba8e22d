#include "l1l1/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "l1l1/errors.hpp"

namespace l1l1 {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic{'L', '1', 'L', '1', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& buf, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.append(bytes, sizeof(T));
}

class Cursor {
 public:
  Cursor(const std::string& buf, const std::filesystem::path& path) : buf_(buf), path_(path) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n)
      throw FormatError(path_.string() + ": truncated checkpoint at offset " + std::to_string(pos_));
  }

  const std::string& buf_;
  std::filesystem::path path_;
  std::size_t pos_{0};
};

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

const CheckpointRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string buf(kMagic.begin(), kMagic.end());
  put<std::uint32_t>(buf, kCheckpointVersion);
  for (std::uint32_t v : {ckpt.dims.m, ckpt.dims.n, ckpt.dims.d, ckpt.dims.K, ckpt.dims.T}) put(buf, v);
  for (const auto& rec : ckpt.records) {
    if (rec.name.size() > 0xFFFF) throw ParameterError("checkpoint: tensor name too long");
    put<std::uint16_t>(buf, std::uint16_t(rec.name.size()));
    buf += rec.name;
    put<std::uint8_t>(buf, std::uint8_t(rec.shape.size()));
    std::size_t count = 1;
    for (auto s : rec.shape) {
      put(buf, s);
      count *= s;
    }
    if (count != rec.data.size()) throw DimensionError("checkpoint: record '" + rec.name + "' shape/data mismatch");
    for (double v : rec.data) put(buf, v);
  }
  // write to a sibling and rename so an interrupted save never clobbers the previous file
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const std::string buf = slurp(path);
  Cursor cur(buf, path);
  if (cur.bytes(kMagic.size()) != std::string(kMagic.begin(), kMagic.end()))
    throw FormatError(path.string() + ": bad checkpoint magic");
  const auto version = cur.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.dims.m = cur.get<std::uint32_t>();
  ckpt.dims.n = cur.get<std::uint32_t>();
  ckpt.dims.d = cur.get<std::uint32_t>();
  ckpt.dims.K = cur.get<std::uint32_t>();
  ckpt.dims.T = cur.get<std::uint32_t>();
  while (!cur.done()) {
    CheckpointRecord rec;
    rec.name = cur.bytes(cur.get<std::uint16_t>());
    const auto rank = cur.get<std::uint8_t>();
    std::size_t count = 1;
    for (int i = 0; i < rank; ++i) {
      rec.shape.push_back(cur.get<std::uint32_t>());
      count *= rec.shape.back();
    }
    rec.data.resize(count);
    for (auto& v : rec.data) v = cur.get<double>();
    ckpt.records.push_back(std::move(rec));
  }
  return ckpt;
}

CheckpointRecord matrix_record(const std::string& name, const Matrix& value) {
  CheckpointRecord rec{name, {std::uint32_t(value.rows()), std::uint32_t(value.cols())}, {}};
  rec.data.reserve(std::size_t(value.size()));
  for (Eigen::Index i = 0; i < value.rows(); ++i)
    for (Eigen::Index j = 0; j < value.cols(); ++j) rec.data.push_back(value(i, j));
  return rec;
}

CheckpointRecord scalar_record(const std::string& name, double value) { return {name, {}, {value}}; }

Matrix record_matrix(const CheckpointRecord& rec) {
  if (rec.shape.size() != 2) throw FormatError("checkpoint record '" + rec.name + "' is not a matrix");
  Matrix m(rec.shape[0], rec.shape[1]);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rec.data[k++];
  return m;
}

namespace {

double scalar_of(const Checkpoint& ckpt, const std::string& name) {
  const auto* r = ckpt.find(name);
  if (!r || r->data.size() != 1) throw FormatError("checkpoint is missing scalar '" + name + "'");
  return r->data[0];
}

TensorList tensors_with_prefix(const Checkpoint& ckpt, const TensorList& like, const std::string& prefix) {
  TensorList out;
  for (const auto& t : like) {
    const auto* r = ckpt.find(prefix + t.name);
    if (!r) throw FormatError("checkpoint is missing tensor '" + prefix + t.name + "'");
    out.push_back({t.name, record_matrix(*r)});
  }
  return out;
}

}  // namespace

void save_train_state(const std::filesystem::path& path, const TrainState& state) {
  if (!state.model) throw ParameterError("save_train_state: no model");
  Checkpoint ckpt;
  ckpt.dims = state.model->dims();
  ckpt.records.push_back(scalar_record("meta.kind", double(int(state.model->kind()))));
  int activation = 0;
  if (const auto* rnn = dynamic_cast<const StackedRnn*>(state.model.get())) activation = int(rnn->activation());
  ckpt.records.push_back(scalar_record("meta.activation", activation));
  ckpt.records.push_back(scalar_record("meta.epoch", state.epoch));
  ckpt.records.push_back(scalar_record("meta.adam_step", double(state.adam.step)));
  ckpt.records.push_back(scalar_record("meta.best_val_psnr_db", state.best_val_psnr_db));
  ckpt.records.push_back(scalar_record("meta.best_epoch", state.best_epoch));
  ckpt.records.push_back(scalar_record("meta.initial_val_psnr_db", state.initial_val_psnr_db));
  for (const auto& t : state.model->parameters()) ckpt.records.push_back(matrix_record(t.name, t.value));
  if (state.adam.step > 0) {
    for (const auto& t : state.adam.first_moment) ckpt.records.push_back(matrix_record("adam.m." + t.name, t.value));
    for (const auto& t : state.adam.second_moment) ckpt.records.push_back(matrix_record("adam.v." + t.name, t.value));
  }
  write_checkpoint(path, ckpt);
}

TrainState load_train_state(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  const auto kind = static_cast<ModelKind>(int(scalar_of(ckpt, "meta.kind")));
  if (kind != ModelKind::kL1L1Rnn && kind != ModelKind::kStackedRnn)
    throw FormatError(path.string() + ": unknown model kind");
  const auto activation = static_cast<Activation>(int(scalar_of(ckpt, "meta.activation")));

  TensorList params;
  for (const auto& r : ckpt.records)
    if (r.name.rfind("meta.", 0) != 0 && r.name.rfind("adam.", 0) != 0) params.push_back({r.name, record_matrix(r)});

  TrainState state;
  state.model = model_from_tensors(kind, ckpt.dims, params, activation);
  state.epoch = int(scalar_of(ckpt, "meta.epoch"));
  state.best_val_psnr_db = scalar_of(ckpt, "meta.best_val_psnr_db");
  state.best_epoch = int(scalar_of(ckpt, "meta.best_epoch"));
  state.initial_val_psnr_db = scalar_of(ckpt, "meta.initial_val_psnr_db");
  state.adam = AdamState::zeros_like(state.model->parameters());
  state.adam.step = std::int64_t(scalar_of(ckpt, "meta.adam_step"));
  if (state.adam.step > 0) {
    state.adam.first_moment = tensors_with_prefix(ckpt, state.model->parameters(), "adam.m.");
    state.adam.second_moment = tensors_with_prefix(ckpt, state.model->parameters(), "adam.v.");
  }
  return state;
}

}  // namespace l1l1
