#pragma once

// Binary checkpoint, little-endian throughout:
//   "QAALNSCK" | u32 version | u32 T | u32 F | u32 zero_mode | u32 d_max
//   | u64 spec hash | u32 epoch | u32 tensor count
//   then per tensor: u32 rank | u32 dims[rank] | u32 count | u32 bits[count]
// Tensors hold encoded LnsScalar patterns in Network::state_tensors() order.

#include "qaalns/nn/network.hpp"

#include <filesystem>

namespace qaalns::nn {

class CheckpointError : public LnsError
{
public:
    using LnsError::LnsError;
};

struct Checkpoint
{
    LnsFormat format;
    std::uint64_t spec_hash = 0;
    std::uint32_t epoch = 0;
    std::vector<Tensor<std::uint32_t>> tensors;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

Checkpoint make_checkpoint(Network<LnsArith>& net, std::uint32_t epoch);
/// Throws CheckpointError when the header or tensor shapes do not fit `net`.
void restore_checkpoint(Network<LnsArith>& net, const Checkpoint& ckpt);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace qaalns::nn
