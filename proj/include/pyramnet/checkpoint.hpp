#pragma once

// Checkpoint file (little-endian): "PYRN", u32 version, u32 record count, then
// per record: u32 name length, name bytes, u8 dtype, u32 rank, u64 dims[rank],
// raw element data. Records keep insertion order and carry no timestamps, so
// identical state always produces identical bytes.

#include "pyramnet/model.hpp"

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace pyramnet {

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kI64 = 2, kText = 3 };

struct CheckpointRecord {
  std::string name;
  DType dtype = DType::kF32;
  Shape shape;
  std::string bytes;
};

class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;
  static constexpr const char* kConfigRecord = "__config__";

  void put_text(const std::string& name, const std::string& text);
  void put_int(const std::string& name, std::int64_t value);
  template <typename Scalar>
  void put_array(const std::string& name, const Shape& shape, const Array<Scalar>& values);

  bool has(const std::string& name) const;
  const CheckpointRecord& get(const std::string& name) const;  // LoadError when missing
  std::string text(const std::string& name) const;
  std::int64_t integer(const std::string& name) const;
  /// Values converted to Scalar; LoadError naming the record when the shape differs.
  template <typename Scalar>
  Array<Scalar> array(const std::string& name, const Shape& expected) const;

  const std::vector<CheckpointRecord>& records() const { return records_; }

  void write(std::ostream& out) const;
  static Checkpoint read(std::istream& in, const std::string& name = "<checkpoint>");
  /// Writes through a temporary file and renames it into place.
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

 private:
  void put(CheckpointRecord record);
  std::vector<CheckpointRecord> records_;
};

/// Config, parameters and batch-norm statistics of a model.
template <typename Scalar>
Checkpoint model_checkpoint(PyramNet<Scalar>& model);

/// Copies parameters and statistics into an existing model. Throws LoadError
/// naming the first missing or mis-shaped parameter.
template <typename Scalar>
void load_model_state(PyramNet<Scalar>& model, const Checkpoint& checkpoint);

/// Rebuilds the model from the embedded config, then loads its state.
template <typename Scalar>
PyramNet<Scalar> model_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace pyramnet
