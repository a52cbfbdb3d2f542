#pragma once

#include "feds2t/federation.hpp"
#include "feds2t/types.hpp"

#include <cstdint>
#include <vector>

namespace feds2t {

// Heterogeneous multi-client world: every client shares the token prototype
// matrix but sees it through its own accent transform and samples tokens
// from its own tilted distribution.
struct WorldConfig {
  int vocab_size = 16;
  int feature_dim = 4;
  int num_clients = 2;        // clients that join federation
  int invisible_clients = 0;  // extra clients held out of training
  int train_per_client = 32;
  int dev_per_client = 8;
  int test_per_client = 8;
  double accent_strength = 0;  // sigma_rot in M_c = I + sigma_rot * G_c
  double noise_std = 0;        // frame noise sigma_n
  double domain_bias = 0;      // token-frequency tilt strength
  int min_len = 1;
  int max_len = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

// Shared V x d_f prototype matrix; rows for BOS/EOS/PAD exist but are never
// sampled.
Matrix token_prototypes(const WorldConfig& config);

// M_c = I + accent_strength * G_c with G_c a seeded standard Gaussian.
// Client -1 (the public set) gets the identity.
Matrix client_accent(const WorldConfig& config, int client_id);

// Distribution over the vocabulary for one client: softmax of
// domain_bias * z_{c,v} on real tokens, exact zeros on BOS/EOS/PAD.
// domain_bias = 0 gives the uniform distribution for every client.
Vector client_token_probs(const WorldConfig& config, int client_id);

// All clients, visible first (ids 0..num_clients-1) then invisible. Frames
// are quantized to f32 at generation so in-memory data matches the dataset
// file bit for bit. Fully determined by the seed; a given client's data does
// not depend on how many other clients exist.
std::vector<ClientDataset> generate_world(const WorldConfig& config);

// Homogeneous server-side split (identity accent, uniform tokens) used to
// pretrain the public backbone. client_id is -1.
ClientDataset generate_public_dataset(const WorldConfig& config, int train,
                                      int dev, int test);

}  // namespace feds2t
