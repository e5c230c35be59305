#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ppgn/config.hpp"
#include "ppgn/geometry.hpp"
#include "ppgn/model.hpp"
#include "ppgn/numerics/tensor.hpp"

PPGN_NAMESPACE_BEGIN

inline constexpr char kCheckpointMagic[5] = {'P', 'P', 'G', 'N', '1'};

struct TensorRecord {
  std::string name;
  nn::Shape shape;
  std::vector<float> values;
};

/// Snapshot of every parameter and batch-norm statistic plus what is needed
/// to rebuild the network: the run config text, anchor priors and
/// vocabulary.
///
/// Binary layout (little-endian): magic "PPGN1", u64 fingerprint, i64 step,
/// str config, u32 n + n*(f64 w, f64 h) priors, u32 n + n*str vocabulary,
/// u32 n + n*(str name, u32 rank, rank*u32 dims, f32 values). A str is a
/// u32 byte length followed by the bytes.
struct Checkpoint {
  std::uint64_t config_fingerprint = 0;
  long step = 0;
  std::string config_text;
  std::vector<AnchorWh> anchor_priors;
  std::vector<std::string> vocabulary;
  std::vector<TensorRecord> tensors;
};

/// Copies parameters and buffers out of the model.
Checkpoint capture_checkpoint(const PpgnModel& model, std::uint64_t fingerprint, long step,
                              std::string config_text, std::vector<AnchorWh> priors,
                              std::vector<std::string> vocabulary);

/// Writes tensors back into a model built with the same configuration.
/// Throws InvalidInputError on a missing name or a shape mismatch.
void restore_checkpoint(PpgnModel& model, const Checkpoint& ckpt);

std::vector<char> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

PPGN_NAMESPACE_END
