#include "pyramnet/checkpoint.hpp"

#include "pyramnet/binary_io.hpp"
#include "pyramnet/errors.hpp"

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace pyramnet {

namespace {

constexpr std::array<char, 4> kMagic{'P', 'Y', 'R', 'N'};

std::size_t element_size(DType dtype) {
  switch (dtype) {
    case DType::kF32:
      return 4;
    case DType::kF64:
    case DType::kI64:
      return 8;
    case DType::kText:
      return 1;
  }
  return 0;
}

template <typename T>
std::string pack(const T* data, std::size_t count) {
  std::ostringstream out;
  binary::write_array(out, data, count);
  return out.str();
}

template <typename T>
std::vector<T> unpack(const std::string& bytes, const std::string& name) {
  std::vector<T> values(bytes.size() / sizeof(T));
  std::istringstream in(bytes);
  binary::read_array(in, values.data(), values.size(), name);
  return values;
}

}  // namespace

void Checkpoint::put(CheckpointRecord record) {
  for (auto& existing : records_) {
    if (existing.name == record.name) {
      existing = std::move(record);
      return;
    }
  }
  records_.push_back(std::move(record));
}

void Checkpoint::put_text(const std::string& name, const std::string& text) {
  put({name, DType::kText, {static_cast<Index>(text.size())}, text});
}

void Checkpoint::put_int(const std::string& name, std::int64_t value) {
  put({name, DType::kI64, {1}, pack(&value, 1)});
}

template <typename Scalar>
void Checkpoint::put_array(const std::string& name, const Shape& shape, const Array<Scalar>& values) {
  if (numel(shape) != values.size()) {
    throw InternalError("checkpoint record " + name + ": shape " + to_string(shape) + " does not match " +
                        std::to_string(values.size()) + " values");
  }
  const DType dtype = std::is_same_v<Scalar, float> ? DType::kF32 : DType::kF64;
  put({name, dtype, shape, pack(values.data(), static_cast<std::size_t>(values.size()))});
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& r : records_) {
    if (r.name == name) return true;
  }
  return false;
}

const CheckpointRecord& Checkpoint::get(const std::string& name) const {
  for (const auto& r : records_) {
    if (r.name == name) return r;
  }
  throw LoadError("checkpoint has no record '" + name + "'");
}

std::string Checkpoint::text(const std::string& name) const {
  const auto& r = get(name);
  if (r.dtype != DType::kText) throw LoadError("checkpoint record '" + name + "' is not text");
  return r.bytes;
}

std::int64_t Checkpoint::integer(const std::string& name) const {
  const auto& r = get(name);
  if (r.dtype != DType::kI64 || r.bytes.size() != 8) {
    throw LoadError("checkpoint record '" + name + "' is not an integer");
  }
  return unpack<std::int64_t>(r.bytes, name)[0];
}

template <typename Scalar>
Array<Scalar> Checkpoint::array(const std::string& name, const Shape& expected) const {
  const auto& r = get(name);
  if (r.shape != expected) {
    throw LoadError("checkpoint parameter '" + name + "' has shape " + to_string(r.shape) + ", model expects " +
                    to_string(expected));
  }
  Array<Scalar> out(numel(expected));
  if (r.dtype == DType::kF32) {
    const auto values = unpack<float>(r.bytes, name);
    for (Index i = 0; i < out.size(); ++i) out[i] = static_cast<Scalar>(values[static_cast<std::size_t>(i)]);
  } else if (r.dtype == DType::kF64) {
    const auto values = unpack<double>(r.bytes, name);
    for (Index i = 0; i < out.size(); ++i) out[i] = static_cast<Scalar>(values[static_cast<std::size_t>(i)]);
  } else {
    throw LoadError("checkpoint record '" + name + "' is not floating point");
  }
  return out;
}

void Checkpoint::write(std::ostream& out) const {
  out.write(kMagic.data(), kMagic.size());
  binary::write_le<std::uint32_t>(out, kVersion);
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(records_.size()));
  for (const auto& r : records_) {
    binary::write_string(out, r.name);
    binary::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(r.dtype));
    binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (Index d : r.shape) binary::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    out.write(r.bytes.data(), static_cast<std::streamsize>(r.bytes.size()));
  }
}

Checkpoint Checkpoint::read(std::istream& in, const std::string& name) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw LoadError(name + ": not a checkpoint file");
  const auto version = binary::read_le<std::uint32_t>(in, name);
  if (version != kVersion) throw LoadError(name + ": unsupported checkpoint version " + std::to_string(version));
  const auto count = binary::read_le<std::uint32_t>(in, name);
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    r.name = binary::read_string(in, name);
    const auto dtype = binary::read_le<std::uint8_t>(in, name);
    if (dtype > 3) throw LoadError(name + ": record '" + r.name + "' has unknown dtype");
    r.dtype = static_cast<DType>(dtype);
    const auto rank = binary::read_le<std::uint32_t>(in, name);
    if (rank > 8) throw LoadError(name + ": record '" + r.name + "' has implausible rank");
    for (std::uint32_t d = 0; d < rank; ++d) r.shape.push_back(static_cast<Index>(binary::read_le<std::uint64_t>(in, name)));
    const auto bytes = static_cast<std::size_t>(numel(r.shape)) * element_size(r.dtype);
    if (bytes > (std::size_t{1} << 34)) throw LoadError(name + ": record '" + r.name + "' is implausibly large");
    r.bytes.resize(bytes);
    if (bytes && !in.read(r.bytes.data(), static_cast<std::streamsize>(bytes))) {
      throw LoadError(name + ": truncated while reading '" + r.name + "'");
    }
    ck.records_.push_back(std::move(r));
  }
  return ck;
}

void Checkpoint::save(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint '" + tmp + "'");
    write(out);
    if (!out) throw DataError("write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint '" + path + "'");
  return read(in, path);
}

template <typename Scalar>
Checkpoint model_checkpoint(PyramNet<Scalar>& model) {
  Checkpoint ck;
  ck.put_text(Checkpoint::kConfigRecord, model.config().serialize());
  for (const auto& p : model.parameters()) ck.put_array<Scalar>(p.name, p.tensor.shape(), p.tensor.value());
  for (const auto& b : model.buffers()) ck.put_array<Scalar>(b.name, {b.values->size()}, *b.values);
  return ck;
}

template <typename Scalar>
void load_model_state(PyramNet<Scalar>& model, const Checkpoint& checkpoint) {
  // Validate everything before touching the model.
  std::vector<Array<Scalar>> params, buffers;
  for (const auto& p : model.parameters()) params.push_back(checkpoint.array<Scalar>(p.name, p.tensor.shape()));
  for (const auto& b : model.buffers()) buffers.push_back(checkpoint.array<Scalar>(b.name, {b.values->size()}));
  std::size_t i = 0;
  for (auto& p : model.parameters()) p.tensor.mutable_value() = std::move(params[i++]);
  i = 0;
  for (auto& b : model.buffers()) *b.values = std::move(buffers[i++]);
}

template <typename Scalar>
PyramNet<Scalar> model_from_checkpoint(const Checkpoint& checkpoint) {
  PyramNet<Scalar> model(ModelConfig::parse(checkpoint.text(Checkpoint::kConfigRecord)));
  load_model_state(model, checkpoint);
  return model;
}

#define PYRAMNET_INSTANTIATE(S)                                                                  \
  template void Checkpoint::put_array<S>(const std::string&, const Shape&, const Array<S>&);    \
  template Array<S> Checkpoint::array<S>(const std::string&, const Shape&) const;                \
  template Checkpoint model_checkpoint(PyramNet<S>&);                                            \
  template void load_model_state(PyramNet<S>&, const Checkpoint&);                               \
  template PyramNet<S> model_from_checkpoint(const Checkpoint&);
PYRAMNET_INSTANTIATE(float)
PYRAMNET_INSTANTIATE(double)
#undef PYRAMNET_INSTANTIATE

}  // namespace pyramnet
