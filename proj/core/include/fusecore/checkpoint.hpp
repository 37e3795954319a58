#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "fusecore/model.hpp"
#include "fusecore/training.hpp"

namespace fusecore {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::unique_ptr<Model> model;
  // Present when the file was written mid-stage or at the end of a stage.
  std::optional<TrainState> train;
};

// Writes the model (every parameter with its frozen flag), the config, the
// stage bookkeeping and, if given, the optimizer / schedule / loss state.
// The file is written to a temporary name and renamed into place.
void save_checkpoint(const std::string& path, const Model& model, const TrainState* train = nullptr);

// Rebuilds the model from the stored config, re-attaches LoRA adapters found
// in the tensor table and copies every tensor. Throws FormatError on a bad
// file and ContractError when the tensor table does not match the config.
Checkpoint load_checkpoint(const std::string& path);

// Serialised form, used by the file functions and by tests.
std::string encode_checkpoint(const Model& model, const TrainState* train);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

}  // namespace fusecore
