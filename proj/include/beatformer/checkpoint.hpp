#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "beatformer/optimizer.hpp"
#include "beatformer/transformer.hpp"

namespace beatformer {

/// Thrown when a checkpoint was written for a different model configuration.
class CheckpointMismatch : public std::runtime_error {
public:
    CheckpointMismatch(const std::string& expected, const std::string& found);

    const std::string& expected() const { return expected_; }
    const std::string& found() const { return found_; }
    /// Line diff of the two signatures, "- key=old" / "+ key=new".
    std::string diff() const;

private:
    std::string expected_;
    std::string found_;
};

struct CheckpointInfo {
    std::string signature;  // ModelConfig::signature() of the writer
    std::uint64_t config_hash = 0;
    std::uint64_t trunk_hash = 0;
    std::uint64_t epoch = 0;
    bool has_optimizer = false;
};

enum class LoadScope {
    Full,       // every parameter; full config hash must match
    TrunkOnly,  // encoder parameters only; trunk hash must match
};

/// Binary layout (little-endian): "BFCK", u32 version, u64 config hash,
/// u64 trunk hash, u32 signature length + bytes, u64 epoch, u32 parameter
/// count, then per parameter u32 name length + bytes, u32 rank, u64 dims,
/// float32 values; finally a u8 optimizer flag followed, when set, by the
/// Adam step and float32 first/second moments per parameter.
void save_checkpoint(const std::filesystem::path& path, const TransformerModel& model, const AdamState* optimizer,
                     std::uint64_t epoch);

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// Overwrites parameter values in place. Optimizer state is restored only
/// for full loads when both the file and the caller provide it.
CheckpointInfo load_checkpoint(const std::filesystem::path& path, TransformerModel& model, AdamState* optimizer,
                               LoadScope scope = LoadScope::Full);

}  // namespace beatformer
