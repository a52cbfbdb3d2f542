#pragma once

#include "feds2t/federation.hpp"
#include "feds2t/ivfpq.hpp"
#include "feds2t/model.hpp"
#include "feds2t/retrieval.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace feds2t {

using Bytes = std::vector<std::uint8_t>;

// All binary formats are little-endian and carry a 4-byte magic plus a u16
// format version (currently 1). Matrices are written row-major as 32-bit
// floats. The ledger's H_theta / H_delta are the exact sizes these
// serializers produce, header included.
//
// Parameter checkpoint ("FS2T") and adapter checkpoint ("FLRA") share one
// envelope: magic, version, then the ModelConfig as u32 feature_dim, u32
// hidden_dim, u32 vocab_size, u32 lora_target mask, u32 lora_rank, f32
// lora_alpha. FS2T continues with w_enc, embed, w_q, w_h, b_h, w_o, b_o;
// FLRA continues with (a, b) per target in canonical order Enc, Q, H, O.
//
// Datastore ("FMEM"): u32 dim, u64 count, keys row-major f32, values u32.
//
// Index ("FIVF"): u32 dim, u32 ncluster, u32 pq_subspaces, u32 pq_centroids,
// centroids f32, codebooks f32 (PQ mode), then per cluster a u64 entry count
// followed by row ids (u64), values (u32), and codes (u8) or raw vectors
// (f32) depending on mode.

Bytes serialize_parameters(const ModelConfig& config, const ParameterSet& params);
std::pair<ModelConfig, ParameterSet> deserialize_parameters(
    std::span<const std::uint8_t> bytes);

Bytes serialize_adapter(const ModelConfig& config, const LoraAdapter& adapter);
std::pair<ModelConfig, LoraAdapter> deserialize_adapter(
    std::span<const std::uint8_t> bytes);

Bytes serialize_datastore(const Datastore& store);
Datastore deserialize_datastore(std::span<const std::uint8_t> bytes);

Bytes serialize_index(const IvfPqIndex& index);
IvfPqIndex deserialize_index(std::span<const std::uint8_t> bytes);

void write_bytes(const std::filesystem::path& path, const Bytes& bytes);
Bytes read_bytes(const std::filesystem::path& path);

// Generated world on disk: a line-oriented records file plus an f32 frame
// blob. The records file starts with
//   feds2t-dataset 1 vocab=<V> feature_dim=<d_f>
// and then holds one line per example:
//   client=<id> split=<train|dev|test> tokens=<id,id,...>
//     frames_offset=<byte offset into blob> frames_count=<f32 count>
// Frames are stored frame-major: frames_count = d_f * S consecutive floats,
// one frame (d_f values) at a time. client=-1 marks the server-side public
// pretraining split.
struct WorldFile {
  int vocab_size = 0;
  int feature_dim = 0;
  std::optional<ClientDataset> public_set;
  std::vector<ClientDataset> clients;  // ascending client_id
};

void save_world(const std::filesystem::path& records_path,
                const std::filesystem::path& blob_path, const WorldFile& world);
WorldFile load_world(const std::filesystem::path& records_path,
                     const std::filesystem::path& blob_path);

}  // namespace feds2t
