#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "oodattack/models.hpp"

namespace oodattack {

inline constexpr int kCheckpointVersion = 1;

// JSON document: format tag, version, family, architecture, training metadata and every
// state() tensor with its shape. Doubles are written in shortest round-trip form, so a
// reload predicts bit-identically.
std::string checkpoint_to_string(UncertaintyModel& model);
std::unique_ptr<UncertaintyModel> checkpoint_from_string(const std::string& text,
                                                         std::optional<Family> expected = std::nullopt);

void save_checkpoint(UncertaintyModel& model, const std::filesystem::path& path);
// Throws CheckpointError on a missing, truncated or corrupt file, a version mismatch, or a
// family tag different from `expected`.
std::unique_ptr<UncertaintyModel> load_checkpoint(const std::filesystem::path& path,
                                                  std::optional<Family> expected = std::nullopt);

}  // namespace oodattack
