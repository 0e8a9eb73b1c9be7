// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "psfl/autodiff.hpp"
#include "psfl/channel.hpp"
#include "psfl/params.hpp"
#include "psfl/tensor.hpp"

namespace psfl::models {

enum class Family { GscM, GscL, GscH, Csc };

std::string family_name(Family f);
Family family_from_string(const std::string& s);
inline bool is_mentor_family(Family f) { return f != Family::Csc; }

/// Published full-scale parameter counts for the reference models. Used only
/// by payload accounting; desk-scale builds are far smaller.
constexpr int64_t full_scale_param_count(Family f) {
  switch (f) {
    case Family::GscM: return 112'442'112;
    case Family::GscL: return 330'287'872;
    case Family::GscH: return 657'924'684;
    case Family::Csc: return 54'721'065;
  }
  return 0;
}

struct ImageSpec {
  int64_t height = 16;
  int64_t width = 16;
  int64_t channels = 1;
  int classes = 10;
};

struct ModelProfile {
  Family family = Family::Csc;
  int depth = 2;  // attention-block count (GSC) or encoder conv count (CSC)
  ImageSpec image;
  int64_t semantic_dim = 32;  // channel-symbol dimensionality, shared by all families

  // GSC (attention) geometry.
  int64_t embed_dim = 16;  // D
  int heads = 2;           // h
  int64_t patch = 4;       // P
  int64_t ff_mult = 2;     // feed-forward width = ff_mult * D
  bool pre_norm = true;    // normalization before each sublayer

  // CSC (convolutional) geometry. The decoder always uses exactly three
  // transposed-convolution layers mirroring the encoder strides.
  std::vector<int64_t> csc_channels = {4, 8};
  int64_t csc_kernel = 3;
  std::vector<int64_t> csc_strides = {2, 2};

  int64_t patches() const { return image.height * image.width / (patch * patch); }
};

ModelProfile desk_profile(Family family, const ImageSpec& image, int64_t semantic_dim = 32);

/// Throws ConfigError on invalid geometry (indivisible dims, bad head count).
void validate_profile(const ModelProfile& profile);

/// Composed semantic encoder, channel encoder, channel decoder, semantic
/// decoder and classifier head. Parameter names carry the component prefix.
struct SCModel {
  ModelProfile profile;
  ParameterSet params;

  int64_t param_count() const { return params.total_count(); }
};

enum class Component {
  SemanticEncoder,
  ChannelEncoder,
  ChannelDecoder,
  SemanticDecoder,
  Classifier
};

/// Component owning a parameter, derived from its name prefix. Every name
/// matches exactly one component.
Component component_of(const std::string& param_name);

/// Normalization scales/offsets and the classifier head are never pruned.
bool is_prunable_param(const std::string& param_name);

/// Deterministic build: same profile and seed give bit-identical parameters.
SCModel build_model(const ModelProfile& profile, uint64_t init_seed);

// ---- forward pass ----------------------------------------------------------

struct ForwardValues {
  ad::Value semantic;        // S, output of the semantic encoder [1, sem]
  ad::Value transmitted;     // X, channel encoder output
  ad::Value received;        // Y, after the channel
  ad::Value chan_decoded;    // C, channel decoder output [1, sem]
  ad::Value reconstruction;  // [H,W,C]
  ad::Value probabilities;   // [classes]
};

/// Builds the full transmit/receive pipeline in `graph`, registering every
/// model parameter as a named differentiable leaf.
ForwardValues sc_forward_graph(ad::Graph& graph, const SCModel& model, const Tensor& image,
                               const channel::ChannelRealization& realization);

struct ForwardResult {
  Tensor semantic;
  Tensor transmitted;
  Tensor received;
  Tensor chan_decoded;
  Tensor reconstruction;
  Tensor probabilities;
};

/// Evaluation-only forward (no gradient bookkeeping kept by the caller).
ForwardResult sc_forward(const SCModel& model, const Tensor& image,
                         const channel::ChannelRealization& realization);

// ---- building blocks (exposed for direct testing) --------------------------

/// Patch embedding: [H,W,C] -> [N, D] with N = H*W/P^2 rows, each the linear
/// map applied to one flattened patch.
ad::Value patch_embed(ad::Value image, ad::Value embed_w, ad::Value embed_b, int64_t patch);

ad::Value add_positional(ad::Value z0, ad::Value positions);

/// softmax(Q K^T / sqrt(d_k)) V with Q = Z Wq, K = Z Wk, V = Z Wv.
ad::Value attention_head(ad::Value z, ad::Value wq, ad::Value wk, ad::Value wv);

struct HeadParams {
  ad::Value wq, wk, wv;
};

ad::Value multi_head_attention(ad::Value z, const std::vector<HeadParams>& heads,
                               ad::Value w_mha);

// ---- checkpoint I/O ---------------------------------------------------------

/// Versioned binary checkpoint: profile metadata header plus named parameter
/// list with shapes, raw little-endian 64-bit values, and prune masks.
void save_checkpoint(const SCModel& model, const std::string& path);
SCModel load_checkpoint(const std::string& path);

}  // namespace psfl::models
