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

#include "pdsim/transfer.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "pdsim/errors.h"

namespace pdsim {

LayerSegment ContiguousLayout::Range(std::size_t first,
                                     std::size_t count) const {
  Require(count >= 1 && first + count <= segments.size(),
          ErrorCode::kInvalidArgument, "layer range out of bounds");
  const LayerSegment& last = segments[first + count - 1];
  const std::uint64_t begin = segments[first].offset;
  return LayerSegment{begin, last.offset + last.length - begin};
}

void ContiguousLayout::Validate() const {
  std::uint64_t expected = 0;
  for (const auto& seg : segments) {
    if (seg.length == 0) {
      Throw(ErrorCode::kInvalidArgument, "layout segment has zero length");
    }
    if (seg.offset != expected) {
      Throw(ErrorCode::kInvalidArgument, "layout segments are not contiguous");
    }
    expected += seg.length;
  }
  if (expected != total) {
    Throw(ErrorCode::kInvalidArgument, "layout total != sum of lengths");
  }
}

ContiguousLayout LayoutBuffer(std::uint64_t prompt_len,
                              std::uint64_t hidden_size,
                              std::uint64_t num_layers,
                              std::uint64_t bytes_per_elem) {
  Require(prompt_len >= 1 && hidden_size >= 1 && num_layers >= 1 &&
              bytes_per_elem >= 1,
          ErrorCode::kInvalidArgument, "layout dimensions must be >= 1");
  const std::uint64_t per_layer = bytes_per_elem * 2 * hidden_size * prompt_len;
  ContiguousLayout layout;
  layout.segments.reserve(num_layers);
  for (std::uint64_t layer = 0; layer < num_layers; ++layer) {
    layout.segments.push_back({layer * per_layer, per_layer});
  }
  layout.total = per_layer * num_layers;
  return layout;
}

std::vector<std::byte> Pack(std::span<const std::span<const std::byte>> layers,
                            const ContiguousLayout& layout) {
  if (layers.size() != layout.segments.size()) {
    Throw(ErrorCode::kLengthMismatch,
          "expected " + std::to_string(layout.segments.size()) +
              " layers, got " + std::to_string(layers.size()));
  }
  std::vector<std::byte> buffer(layout.total);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSegment& seg = layout.segments[i];
    if (layers[i].size() != seg.length) {
      Throw(ErrorCode::kLengthMismatch,
            "layer " + std::to_string(i) + " has " +
                std::to_string(layers[i].size()) + " bytes, layout expects " +
                std::to_string(seg.length));
    }
    std::memcpy(buffer.data() + seg.offset, layers[i].data(), seg.length);
  }
  return buffer;
}

std::vector<std::byte> Pack(std::span<const std::byte> tensor_bytes,
                            const ContiguousLayout& layout) {
  if (tensor_bytes.size() != layout.total) {
    Throw(ErrorCode::kLengthMismatch,
          "payload has " + std::to_string(tensor_bytes.size()) +
              " bytes, layout expects " + std::to_string(layout.total));
  }
  return std::vector<std::byte>(tensor_bytes.begin(), tensor_bytes.end());
}

BlockPool::BlockPool(std::uint64_t block_size, std::size_t num_blocks)
    : block_size_(block_size),
      num_blocks_(num_blocks),
      storage_(block_size * num_blocks) {
  Require(block_size >= 1, ErrorCode::kInvalidArgument,
          "block size must be >= 1");
  free_list_.reserve(num_blocks);
  // Hand out low ids first.
  for (std::size_t i = num_blocks; i-- > 0;) {
    free_list_.push_back(static_cast<BlockId>(i));
  }
}

std::vector<BlockId> BlockPool::Allocate(std::size_t count) {
  if (count > free_list_.size()) {
    Throw(ErrorCode::kInsufficientBlocks,
          "requested " + std::to_string(count) + " blocks, " +
              std::to_string(free_list_.size()) + " free");
  }
  std::vector<BlockId> ids(free_list_.end() - count, free_list_.end());
  std::reverse(ids.begin(), ids.end());
  free_list_.resize(free_list_.size() - count);
  return ids;
}

void BlockPool::Release(std::span<const BlockId> ids) {
  for (auto it = ids.rbegin(); it != ids.rend(); ++it) {
    Require(*it < num_blocks_, ErrorCode::kInvalidArgument,
            "releasing unknown block");
    free_list_.push_back(*it);
  }
}

std::span<std::byte> BlockPool::block(BlockId id) {
  Require(id < num_blocks_, ErrorCode::kInvalidArgument, "unknown block id");
  return {storage_.data() + static_cast<std::size_t>(id) * block_size_,
          block_size_};
}

std::span<const std::byte> BlockPool::block(BlockId id) const {
  Require(id < num_blocks_, ErrorCode::kInvalidArgument, "unknown block id");
  return {storage_.data() + static_cast<std::size_t>(id) * block_size_,
          block_size_};
}

void BlockTable::Validate() const {
  Require(block_size >= 1, ErrorCode::kInvalidArgument,
          "block table has zero block size");
  Require(used_bytes <= capacity(), ErrorCode::kInvalidArgument,
          "block table used bytes exceed capacity");
  std::vector<BlockId> sorted = blocks;
  std::sort(sorted.begin(), sorted.end());
  Require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
          ErrorCode::kInvalidArgument, "block table repeats a block id");
}

void RecvScatter(std::span<const std::byte> buffer, BlockTable& table,
                 BlockPool& pool, std::uint64_t dest_offset) {
  Require(table.block_size == pool.block_size(), ErrorCode::kInvalidArgument,
          "block table and pool disagree on block size");
  const std::uint64_t end = dest_offset + buffer.size();
  if (end > table.capacity()) {
    Throw(ErrorCode::kInsufficientBlocks,
          std::to_string(end) + " bytes do not fit in " +
              std::to_string(table.blocks.size()) + " blocks of " +
              std::to_string(table.block_size));
  }
  std::uint64_t written = 0;
  while (written < buffer.size()) {
    const std::uint64_t logical = dest_offset + written;
    const std::uint64_t index = logical / table.block_size;
    const std::uint64_t within = logical % table.block_size;
    const std::uint64_t chunk =
        std::min<std::uint64_t>(table.block_size - within, buffer.size() - written);
    std::span<std::byte> dest = pool.block(table.blocks[index]);
    std::memcpy(dest.data() + within, buffer.data() + written, chunk);
    written += chunk;
  }
  table.used_bytes = std::max(table.used_bytes, end);
}

std::vector<std::byte> GatherBlocks(const BlockTable& table,
                                    const BlockPool& pool) {
  Require(table.block_size == pool.block_size(), ErrorCode::kInvalidArgument,
          "block table and pool disagree on block size");
  table.Validate();
  std::vector<std::byte> out(table.used_bytes);
  std::uint64_t read = 0;
  for (BlockId id : table.blocks) {
    if (read >= table.used_bytes) break;
    const std::uint64_t chunk =
        std::min<std::uint64_t>(table.block_size, table.used_bytes - read);
    std::memcpy(out.data() + read, pool.block(id).data(), chunk);
    read += chunk;
  }
  return out;
}

void LinkModel::Validate() const {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
    Throw(ErrorCode::kInvalidArgument, "link bandwidth must be > 0");
  }
  if (!(control_overhead >= 0.0)) {
    Throw(ErrorCode::kInvalidArgument, "control overhead must be >= 0");
  }
  if (!(hop_conflict_prob >= 0.0 && hop_conflict_prob <= 1.0)) {
    Throw(ErrorCode::kInvalidArgument, "conflict probability must be in [0,1]");
  }
  if (!(conflict_penalty_min >= 0.0 &&
        conflict_penalty_max >= conflict_penalty_min)) {
    Throw(ErrorCode::kInvalidArgument, "invalid conflict penalty range");
  }
}

TransferMode TransferMode::BlockFixed(std::uint64_t block_size) {
  Require(block_size >= 1, ErrorCode::kInvalidArgument,
          "block size must be >= 1");
  return TransferMode{Kind::kBlockFixed, block_size};
}

TransferMode TransferMode::BlockFree() {
  return TransferMode{Kind::kBlockFree, 0};
}

std::uint64_t TransferMode::Messages(std::uint64_t size) const {
  if (kind == Kind::kBlockFree) {
    return 1;
  }
  return (size + block_size - 1) / block_size;
}

std::string_view TransferMode::name() const {
  return kind == Kind::kBlockFree ? "block_free" : "block_fixed";
}

TransferOutcome TransferTime(std::uint64_t size, const TransferMode& mode,
                             const LinkModel& link, int concurrent, Rng* rng) {
  Require(size > 0, ErrorCode::kInvalidArgument, "transfer size must be > 0");
  Require(concurrent >= 1, ErrorCode::kInvalidArgument,
          "concurrent transfers must be >= 1");
  TransferOutcome out;
  out.messages = mode.Messages(size);
  out.control_seconds = static_cast<double>(out.messages) * link.control_overhead;
  out.wire_seconds = static_cast<double>(size) / (link.bandwidth / concurrent);
  if (rng != nullptr) {
    // One Bernoulli draw per sub-transfer regardless of mode, so paired
    // block-fixed/block-free runs see identical conflicts.
    out.conflict = UniformUnit(*rng) < link.hop_conflict_prob;
    if (out.conflict) {
      out.penalty_seconds =
          link.conflict_penalty_min +
          UniformUnit(*rng) * (link.conflict_penalty_max - link.conflict_penalty_min);
    }
  }
  out.seconds = out.control_seconds + out.wire_seconds + out.penalty_seconds;
  return out;
}

RequestTransfer RequestTransferTime(std::uint64_t total_bytes, int devices,
                                    const TransferMode& mode,
                                    const LinkModel& link, int concurrent,
                                    Rng* rng) {
  Require(devices >= 1, ErrorCode::kInvalidArgument, "devices must be >= 1");
  Require(total_bytes >= static_cast<std::uint64_t>(devices),
          ErrorCode::kInvalidArgument, "fewer bytes than devices");
  RequestTransfer out;
  const std::uint64_t share = total_bytes / devices;
  const std::uint64_t remainder = total_bytes % devices;
  out.bytes_per_device = share + (remainder > 0 ? 1 : 0);
  out.sub_transfers.reserve(devices);
  for (int d = 0; d < devices; ++d) {
    const std::uint64_t bytes =
        share + (static_cast<std::uint64_t>(d) < remainder ? 1 : 0);
    TransferOutcome sub = TransferTime(bytes, mode, link, concurrent, rng);
    out.xi = std::max(out.xi, sub.seconds);
    out.conflicts += sub.conflict ? 1 : 0;
    out.sub_transfers.push_back(sub);
  }
  return out;
}

double Utilization(std::uint64_t size, double elapsed, const LinkModel& link) {
  Require(elapsed > 0.0, ErrorCode::kInvalidArgument, "elapsed must be > 0");
  const double ideal = static_cast<double>(size) / link.bandwidth;
  return std::clamp(ideal / elapsed, 0.0, 1.0);
}

double PerLayerExposedTime(const ContiguousLayout& layout,
                           double prefill_latency, const TransferMode& mode,
                           const LinkModel& link, int concurrent) {
  Require(!layout.segments.empty(), ErrorCode::kInvalidArgument,
          "layout has no layers");
  Require(prefill_latency >= 0.0, ErrorCode::kInvalidArgument,
          "prefill latency must be >= 0");
  const double layers = static_cast<double>(layout.segments.size());
  double link_free = 0.0;
  for (std::size_t i = 0; i < layout.segments.size(); ++i) {
    const double ready = prefill_latency * static_cast<double>(i + 1) / layers;
    const TransferOutcome seg =
        TransferTime(layout.segments[i].length, mode, link, concurrent, nullptr);
    link_free = std::max(link_free, ready) + seg.seconds;
  }
  return std::max(0.0, link_free - prefill_latency);
}

}  // namespace pdsim
