#pragma once

// Named-tensor checkpoint: "LPRC", version byte, model kind, ordered
// key=value metadata and float32 little-endian tensors.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lpr/tensor.hpp"

namespace lpr {

enum class ModelKind : std::uint8_t { detector = 1, recognizer = 2 };

std::string to_string(ModelKind kind);

struct Checkpoint {
    static constexpr std::uint8_t kVersion = 1;

    ModelKind kind = ModelKind::detector;
    std::map<std::string, std::string> metadata;
    std::vector<std::pair<std::string, TensorF>> tensors;

    /// Throws DataError when absent.
    const TensorF& tensor(const std::string& name) const;
    const std::string& meta(const std::string& key) const;
};

std::vector<std::uint8_t> serialize(const Checkpoint& checkpoint);
/// Throws DataError on a bad magic, unknown version or kind, truncation,
/// duplicate tensor names or trailing bytes.
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies each named tensor of `from` into the same-named destination (shapes
/// must agree). Throws DataError naming the first missing or mismatched tensor.
void copy_tensors(std::span<const std::pair<std::string, TensorF>> from,
                  std::span<const std::pair<std::string, TensorF>> into, const std::string& prefix = {});

}  // namespace lpr
