/* Copyright 2026 The pdsim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// KVCache movement between a prefill sender and a decoding receiver.
//
// Codec: the sender keeps every layer's K/V bytes back to back in one
// contiguous buffer whose per-layer offsets follow from (prompt_len, hidden
// size, element width). The receiver restores that byte stream into the
// fixed-size blocks of its paged pool (RecvScatter).
//
// Latency model: block-fixed transfers pay one control exchange per block,
// block-free transfers pay a single meta exchange for the whole range.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "pdsim/sim_core.h"

namespace pdsim {

struct LayerSegment {
  std::uint64_t offset = 0;
  std::uint64_t length = 0;

  friend bool operator==(const LayerSegment&, const LayerSegment&) = default;
};

struct ContiguousLayout {
  std::vector<LayerSegment> segments;
  std::uint64_t total = 0;

  // Byte range covering layers [first, first + count).
  LayerSegment Range(std::size_t first, std::size_t count) const;
  void Validate() const;
};

// One segment per layer, each bytes_per_elem * 2 * hidden * prompt_len long.
ContiguousLayout LayoutBuffer(std::uint64_t prompt_len,
                              std::uint64_t hidden_size,
                              std::uint64_t num_layers,
                              std::uint64_t bytes_per_elem);

// Packs per-layer tensors into the contiguous buffer. `layers[i]` must be
// exactly segments[i].length bytes (ErrorCode::kLengthMismatch otherwise).
std::vector<std::byte> Pack(std::span<const std::span<const std::byte>> layers,
                            const ContiguousLayout& layout);

// Packs an already concatenated tensor; its length must equal layout.total.
std::vector<std::byte> Pack(std::span<const std::byte> tensor_bytes,
                            const ContiguousLayout& layout);

using BlockId = std::uint32_t;

// Paged receiver memory: `num_blocks` blocks of `block_size` bytes.
class BlockPool {
 public:
  BlockPool(std::uint64_t block_size, std::size_t num_blocks);

  std::uint64_t block_size() const { return block_size_; }
  std::size_t num_blocks() const { return num_blocks_; }
  std::size_t free_blocks() const { return free_list_.size(); }

  // Allocates `count` blocks, or throws kInsufficientBlocks.
  std::vector<BlockId> Allocate(std::size_t count);
  void Release(std::span<const BlockId> ids);

  std::span<std::byte> block(BlockId id);
  std::span<const std::byte> block(BlockId id) const;

 private:
  std::uint64_t block_size_;
  std::size_t num_blocks_;
  std::vector<std::byte> storage_;
  std::vector<BlockId> free_list_;
};

struct BlockTable {
  std::uint64_t block_size = 0;
  std::vector<BlockId> blocks;
  std::uint64_t used_bytes = 0;

  std::uint64_t capacity() const { return blocks.size() * block_size; }
  void Validate() const;
};

// Writes `buffer` into the table's blocks in table order, starting at logical
// byte `dest_offset` (non-zero for per-layer scatter). The last chunk may
// fill a block partially. Throws kInsufficientBlocks if the table is too
// small.
void RecvScatter(std::span<const std::byte> buffer, BlockTable& table,
                 BlockPool& pool, std::uint64_t dest_offset = 0);

// Reads the first `table.used_bytes` bytes back out of the blocks; also the
// sender-side step that turns discrete blocks into a contiguous buffer.
std::vector<std::byte> GatherBlocks(const BlockTable& table,
                                    const BlockPool& pool);

struct LinkModel {
  // Bytes per second for one device-to-device path.
  double bandwidth = 25e9;
  // Seconds per control exchange.
  double control_overhead = 9e-6;
  double hop_conflict_prob = 0.0;
  // A conflict adds a penalty drawn uniformly from [min, max] seconds.
  double conflict_penalty_min = 0.1;
  double conflict_penalty_max = 0.3;

  void Validate() const;

  friend bool operator==(const LinkModel&, const LinkModel&) = default;
};

struct TransferMode {
  enum class Kind { kBlockFixed, kBlockFree };

  Kind kind = Kind::kBlockFree;
  std::uint64_t block_size = 0;

  static TransferMode BlockFixed(std::uint64_t block_size);
  static TransferMode BlockFree();

  // Control exchanges needed for `size` bytes.
  std::uint64_t Messages(std::uint64_t size) const;
  std::string_view name() const;

  friend bool operator==(const TransferMode&, const TransferMode&) = default;
};

struct TransferOutcome {
  double seconds = 0.0;
  double wire_seconds = 0.0;
  double control_seconds = 0.0;
  double penalty_seconds = 0.0;
  std::uint64_t messages = 0;
  bool conflict = false;
};

// messages * c + size / (bandwidth / concurrent) + conflict penalty. With a
// null rng no conflicts are drawn.
TransferOutcome TransferTime(std::uint64_t size, const TransferMode& mode,
                             const LinkModel& link, int concurrent,
                             Rng* rng);

struct RequestTransfer {
  // Time of the slowest sub-transfer.
  double xi = 0.0;
  std::vector<TransferOutcome> sub_transfers;
  std::uint64_t bytes_per_device = 0;
  int conflicts = 0;
};

// A request's KVCache moves as one sub-transfer per device pair, each
// carrying total_bytes / devices.
RequestTransfer RequestTransferTime(std::uint64_t total_bytes, int devices,
                                    const TransferMode& mode,
                                    const LinkModel& link, int concurrent,
                                    Rng* rng);

// Ideal wire time over elapsed time, clamped to [0, 1].
double Utilization(std::uint64_t size, double elapsed, const LinkModel& link);

// Per-layer transfer overlapped with prefill: segment i becomes sendable when
// layer i finishes (uniform layer time) and segments go out one after
// another. Returns the transfer time left after prefill completes.
double PerLayerExposedTime(const ContiguousLayout& layout,
                           double prefill_latency, const TransferMode& mode,
                           const LinkModel& link, int concurrent);

}  // namespace pdsim
