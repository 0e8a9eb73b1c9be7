// SPDX-License-Identifier: Apache-2.0
#include "psfl/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include "psfl/errors.hpp"
#include "psfl/rng.hpp"

namespace psfl::models {

std::string family_name(Family f) {
  switch (f) {
    case Family::GscM: return "GSC-M";
    case Family::GscL: return "GSC-L";
    case Family::GscH: return "GSC-H";
    case Family::Csc: return "CSC";
  }
  return "?";
}

Family family_from_string(const std::string& s) {
  if (s == "GSC-M" || s == "M") return Family::GscM;
  if (s == "GSC-L" || s == "L") return Family::GscL;
  if (s == "GSC-H" || s == "H") return Family::GscH;
  if (s == "CSC") return Family::Csc;
  throw ConfigError("unknown model family: " + s);
}

ModelProfile desk_profile(Family family, const ImageSpec& image, int64_t semantic_dim) {
  ModelProfile p;
  p.family = family;
  p.image = image;
  p.semantic_dim = semantic_dim;
  switch (family) {
    case Family::GscM: p.depth = 2; break;
    case Family::GscL: p.depth = 3; break;
    case Family::GscH: p.depth = 4; break;
    case Family::Csc: p.depth = 2; break;
  }
  return p;
}

void validate_profile(const ModelProfile& p) {
  if (p.depth < 1) throw ConfigError("profile: depth must be >= 1");
  if (p.semantic_dim < 1) throw ConfigError("profile: semantic_dim must be >= 1");
  if (p.image.height < 1 || p.image.width < 1 || p.image.channels < 1 || p.image.classes < 2)
    throw ConfigError("profile: bad image spec");
  if (p.family != Family::Csc) {
    if (p.heads < 1 || p.embed_dim % p.heads != 0)
      throw ConfigError("profile: embed_dim must be divisible by heads");
    if (p.patch < 1 || (p.image.height * p.image.width) % (p.patch * p.patch) != 0)
      throw ConfigError("profile: image area not divisible by patch^2");
    if (p.image.height % p.patch != 0 || p.image.width % p.patch != 0)
      throw ConfigError("profile: image sides not divisible by patch");
    if (p.ff_mult < 1) throw ConfigError("profile: ff_mult must be >= 1");
  } else {
    if (p.csc_channels.size() != 2 || p.csc_strides.size() != 2)
      throw ConfigError("profile: CSC uses exactly two encoder conv layers");
    if (p.csc_kernel < 1 || p.csc_kernel % 2 == 0)
      throw ConfigError("profile: CSC kernel must be odd");
    for (int64_t c : p.csc_channels)
      if (c < 1) throw ConfigError("profile: CSC channels must be >= 1");
    for (int64_t s : p.csc_strides)
      if (s < 1) throw ConfigError("profile: CSC strides must be >= 1");
  }
}

Component component_of(const std::string& name) {
  if (name.rfind("sem_enc.", 0) == 0) return Component::SemanticEncoder;
  if (name.rfind("chan_enc.", 0) == 0) return Component::ChannelEncoder;
  if (name.rfind("chan_dec.", 0) == 0) return Component::ChannelDecoder;
  if (name.rfind("sem_dec.", 0) == 0) return Component::SemanticDecoder;
  if (name.rfind("classifier.", 0) == 0) return Component::Classifier;
  throw std::invalid_argument("component_of: unrecognized parameter name " + name);
}

bool is_prunable_param(const std::string& name) {
  if (name.rfind("classifier.", 0) == 0) return false;
  if (name.find(".ln") != std::string::npos) return false;  // norm scales/offsets
  return true;
}

namespace {

struct Conv2Geometry {
  int64_t h1, w1, h2, w2, pad;
};

Conv2Geometry csc_geometry(const ModelProfile& p) {
  Conv2Geometry g;
  g.pad = (p.csc_kernel - 1) / 2;
  g.h1 = (p.image.height + 2 * g.pad - p.csc_kernel) / p.csc_strides[0] + 1;
  g.w1 = (p.image.width + 2 * g.pad - p.csc_kernel) / p.csc_strides[0] + 1;
  g.h2 = (g.h1 + 2 * g.pad - p.csc_kernel) / p.csc_strides[1] + 1;
  g.w2 = (g.w1 + 2 * g.pad - p.csc_kernel) / p.csc_strides[1] + 1;
  if (g.h1 < 1 || g.w1 < 1 || g.h2 < 1 || g.w2 < 1)
    throw ConfigError("profile: CSC convolutions collapse the image");
  return g;
}

int64_t csc_mid_channels(const ModelProfile& p) { return std::max<int64_t>(1, p.csc_channels[0] / 2); }

class Builder {
public:
  Builder(ParameterSet& params, uint64_t seed) : params_(params), seed_(seed) {}

  void linear(const std::string& prefix, int64_t in, int64_t out) {
    weight(prefix + ".w", {in, out}, 1.0 / std::sqrt(static_cast<double>(in)));
    zero(prefix + ".b", {out});
  }

  void conv(const std::string& prefix, int64_t co, int64_t ci, int64_t k) {
    weight(prefix + ".w", {co, ci, k, k}, 1.0 / std::sqrt(static_cast<double>(ci * k * k)));
    zero(prefix + ".b", {co});
  }

  void tconv(const std::string& prefix, int64_t ci, int64_t co, int64_t k) {
    weight(prefix + ".w", {ci, co, k, k}, 1.0 / std::sqrt(static_cast<double>(ci * k * k)));
    zero(prefix + ".b", {co});
  }

  void norm(const std::string& prefix, int64_t d) {
    Tensor g = Tensor::ones({d});
    params_.add(prefix + ".g", std::move(g), is_prunable_param(prefix + ".g"));
    zero(prefix + ".b", {d});
  }

  void weight(const std::string& name, std::vector<int64_t> shape, double stddev) {
    Rng rng(mix_seed(seed_, {hash_string(name)}));
    params_.add(name, rng.normal_tensor(std::move(shape), 0.0, stddev),
                is_prunable_param(name));
  }

  void zero(const std::string& name, std::vector<int64_t> shape) {
    params_.add(name, Tensor::zeros(std::move(shape)), is_prunable_param(name));
  }

private:
  ParameterSet& params_;
  uint64_t seed_;
};

void add_vit_block(Builder& b, const std::string& prefix, const ModelProfile& p) {
  const int64_t d = p.embed_dim;
  const int64_t dk = d / p.heads;
  b.norm(prefix + ".ln1", d);
  for (int j = 0; j < p.heads; ++j) {
    const std::string hp = prefix + ".attn.h" + std::to_string(j);
    b.weight(hp + ".wq", {d, dk}, 1.0 / std::sqrt(static_cast<double>(d)));
    b.weight(hp + ".wk", {d, dk}, 1.0 / std::sqrt(static_cast<double>(d)));
    b.weight(hp + ".wv", {d, dk}, 1.0 / std::sqrt(static_cast<double>(d)));
  }
  b.linear(prefix + ".attn.proj", d, d);
  b.norm(prefix + ".ln2", d);
  b.linear(prefix + ".ffn.l1", d, p.ff_mult * d);
  b.linear(prefix + ".ffn.l2", p.ff_mult * d, d);
}

}  // namespace

SCModel build_model(const ModelProfile& profile, uint64_t init_seed) {
  validate_profile(profile);
  SCModel m;
  m.profile = profile;
  Builder b(m.params, init_seed);
  const ImageSpec& img = profile.image;
  const int64_t flat_image = img.height * img.width * img.channels;

  if (profile.family != Family::Csc) {
    const int64_t n = profile.patches();
    const int64_t d = profile.embed_dim;
    const int64_t patch_dim = profile.patch * profile.patch * img.channels;
    b.linear("sem_enc.embed", patch_dim, d);
    b.weight("sem_enc.pos", {n, d}, 0.02);
    for (int i = 0; i < profile.depth; ++i)
      add_vit_block(b, "sem_enc.block" + std::to_string(i), profile);
    b.norm("sem_enc.out_ln", d);
    b.linear("sem_enc.head", n * d, profile.semantic_dim);

    b.linear("sem_dec.head", profile.semantic_dim, n * d);
    for (int i = 0; i < profile.depth; ++i)
      add_vit_block(b, "sem_dec.block" + std::to_string(i), profile);
    b.norm("sem_dec.out_ln", d);
    b.linear("sem_dec.out", d, patch_dim);
  } else {
    const auto geo = csc_geometry(profile);
    const int64_t c1 = profile.csc_channels[0], c2 = profile.csc_channels[1];
    const int64_t k = profile.csc_kernel;
    const int64_t flat_feat = c2 * geo.h2 * geo.w2;
    b.conv("sem_enc.conv1", c1, img.channels, k);
    b.conv("sem_enc.conv2", c2, c1, k);
    b.linear("sem_enc.head", flat_feat, profile.semantic_dim);

    b.linear("sem_dec.head", profile.semantic_dim, flat_feat);
    b.tconv("sem_dec.tconv1", c2, c1, k);
    b.tconv("sem_dec.tconv2", c1, csc_mid_channels(profile), k);
    b.tconv("sem_dec.tconv3", csc_mid_channels(profile), img.channels, k);
  }

  const int64_t sem = profile.semantic_dim;
  b.linear("chan_enc.l1", sem, sem);
  b.linear("chan_enc.l2", sem, sem);
  b.linear("chan_dec.l1", sem, sem);
  b.linear("chan_dec.l2", sem, sem);
  b.linear("classifier", flat_image, img.classes);
  return m;
}

// ---- forward ----------------------------------------------------------------

ad::Value patch_embed(ad::Value image, ad::Value embed_w, ad::Value embed_b, int64_t patch) {
  return ad::add_bias(ad::matmul(ad::patchify(image, patch), embed_w), embed_b);
}

ad::Value add_positional(ad::Value z0, ad::Value positions) { return ad::add(z0, positions); }

ad::Value attention_head(ad::Value z, ad::Value wq, ad::Value wk, ad::Value wv) {
  ad::Value q = ad::matmul(z, wq);
  ad::Value k = ad::matmul(z, wk);
  ad::Value v = ad::matmul(z, wv);
  const double dk = static_cast<double>(wq.val().dim(1));
  ad::Value scores = ad::scale(ad::matmul_nt(q, k), 1.0 / std::sqrt(dk));
  return ad::matmul(ad::softmax_rows(scores), v);
}

ad::Value multi_head_attention(ad::Value z, const std::vector<HeadParams>& heads,
                               ad::Value w_mha) {
  std::vector<ad::Value> outs;
  outs.reserve(heads.size());
  for (const HeadParams& h : heads) outs.push_back(attention_head(z, h.wq, h.wk, h.wv));
  return ad::matmul(ad::concat_cols(outs), w_mha);
}

namespace {

struct GraphParams {
  ad::Graph& g;
  const ParameterSet& params;
  std::map<std::string, ad::Value> cache;

  ad::Value operator()(const std::string& name) {
    auto it = cache.find(name);
    if (it != cache.end()) return it->second;
    ad::Value v = g.param(name, params.value(name));
    cache.emplace(name, v);
    return v;
  }
};

ad::Value mlp2(GraphParams& p, const std::string& prefix, ad::Value x) {
  ad::Value h = ad::relu(ad::add_bias(ad::matmul(x, p(prefix + ".l1.w")), p(prefix + ".l1.b")));
  return ad::add_bias(ad::matmul(h, p(prefix + ".l2.w")), p(prefix + ".l2.b"));
}

ad::Value vit_block(GraphParams& p, const std::string& prefix, ad::Value z,
                    const ModelProfile& profile) {
  std::vector<HeadParams> heads;
  for (int j = 0; j < profile.heads; ++j) {
    const std::string hp = prefix + ".attn.h" + std::to_string(j);
    heads.push_back({p(hp + ".wq"), p(hp + ".wk"), p(hp + ".wv")});
  }
  auto attn = [&](ad::Value x) {
    ad::Value a = multi_head_attention(x, heads, p(prefix + ".attn.proj.w"));
    return ad::add_bias(a, p(prefix + ".attn.proj.b"));
  };
  auto ffn = [&](ad::Value x) {
    ad::Value h =
        ad::relu(ad::add_bias(ad::matmul(x, p(prefix + ".ffn.l1.w")), p(prefix + ".ffn.l1.b")));
    return ad::add_bias(ad::matmul(h, p(prefix + ".ffn.l2.w")), p(prefix + ".ffn.l2.b"));
  };
  if (profile.pre_norm) {
    z = ad::add(z, attn(ad::layer_norm(z, p(prefix + ".ln1.g"), p(prefix + ".ln1.b"))));
    z = ad::add(z, ffn(ad::layer_norm(z, p(prefix + ".ln2.g"), p(prefix + ".ln2.b"))));
  } else {
    z = ad::layer_norm(ad::add(z, attn(z)), p(prefix + ".ln1.g"), p(prefix + ".ln1.b"));
    z = ad::layer_norm(ad::add(z, ffn(z)), p(prefix + ".ln2.g"), p(prefix + ".ln2.b"));
  }
  return z;
}

}  // namespace

ForwardValues sc_forward_graph(ad::Graph& graph, const SCModel& model, const Tensor& image,
                               const channel::ChannelRealization& realization) {
  const ModelProfile& profile = model.profile;
  const ImageSpec& img = profile.image;
  if (image.rank() != 3 || image.dim(0) != img.height || image.dim(1) != img.width ||
      image.dim(2) != img.channels)
    throw std::invalid_argument("sc_forward: image shape " + shape_string(image) +
                                " does not match profile");
  if (!std::isinf(realization.snr_db) &&
      realization.unit_noise.numel() != profile.semantic_dim)
    throw std::invalid_argument("sc_forward: channel realization dimension mismatch");

  GraphParams p{graph, model.params, {}};
  ad::Value input = graph.constant(image);

  ForwardValues out;
  if (profile.family != Family::Csc) {
    const int64_t n = profile.patches();
    const int64_t d = profile.embed_dim;
    ad::Value z = patch_embed(input, p("sem_enc.embed.w"), p("sem_enc.embed.b"), profile.patch);
    z = add_positional(z, p("sem_enc.pos"));
    for (int i = 0; i < profile.depth; ++i)
      z = vit_block(p, "sem_enc.block" + std::to_string(i), z, profile);
    z = ad::layer_norm(z, p("sem_enc.out_ln.g"), p("sem_enc.out_ln.b"));
    out.semantic = ad::add_bias(ad::matmul(ad::reshape(z, {1, n * d}), p("sem_enc.head.w")),
                                p("sem_enc.head.b"));

    out.transmitted = mlp2(p, "chan_enc", out.semantic);
    out.received = channel::awgn(out.transmitted, realization);
    out.chan_decoded = mlp2(p, "chan_dec", out.received);

    ad::Value dec = ad::add_bias(ad::matmul(out.chan_decoded, p("sem_dec.head.w")),
                                 p("sem_dec.head.b"));
    ad::Value zd = ad::reshape(dec, {n, d});
    for (int i = 0; i < profile.depth; ++i)
      zd = vit_block(p, "sem_dec.block" + std::to_string(i), zd, profile);
    zd = ad::layer_norm(zd, p("sem_dec.out_ln.g"), p("sem_dec.out_ln.b"));
    ad::Value patches = ad::add_bias(ad::matmul(zd, p("sem_dec.out.w")), p("sem_dec.out.b"));
    out.reconstruction =
        ad::unpatchify(patches, profile.patch, img.height, img.width, img.channels);
  } else {
    const auto geo = csc_geometry(profile);
    const int64_t c2 = profile.csc_channels[1];
    ad::Value x = ad::hwc_to_chw(input);
    ad::Value h1 = ad::relu(ad::conv2d(x, p("sem_enc.conv1.w"), p("sem_enc.conv1.b"),
                                       profile.csc_strides[0], geo.pad));
    ad::Value h2 = ad::relu(ad::conv2d(h1, p("sem_enc.conv2.w"), p("sem_enc.conv2.b"),
                                       profile.csc_strides[1], geo.pad));
    const int64_t flat_feat = c2 * geo.h2 * geo.w2;
    out.semantic = ad::add_bias(
        ad::matmul(ad::reshape(h2, {1, flat_feat}), p("sem_enc.head.w")), p("sem_enc.head.b"));

    out.transmitted = mlp2(p, "chan_enc", out.semantic);
    out.received = channel::awgn(out.transmitted, realization);
    out.chan_decoded = mlp2(p, "chan_dec", out.received);

    ad::Value dec = ad::add_bias(ad::matmul(out.chan_decoded, p("sem_dec.head.w")),
                                 p("sem_dec.head.b"));
    ad::Value zd = ad::reshape(dec, {c2, geo.h2, geo.w2});
    ad::Value t1 = ad::relu(ad::conv_transpose2d(zd, p("sem_dec.tconv1.w"),
                                                 p("sem_dec.tconv1.b"), profile.csc_strides[1],
                                                 geo.pad, geo.h1, geo.w1));
    ad::Value t2 = ad::relu(ad::conv_transpose2d(t1, p("sem_dec.tconv2.w"),
                                                 p("sem_dec.tconv2.b"), profile.csc_strides[0],
                                                 geo.pad, img.height, img.width));
    ad::Value t3 = ad::conv_transpose2d(t2, p("sem_dec.tconv3.w"), p("sem_dec.tconv3.b"), 1,
                                        geo.pad, img.height, img.width);
    out.reconstruction = ad::chw_to_hwc(t3);
  }

  const int64_t flat_image = img.height * img.width * img.channels;
  ad::Value logits = ad::add_bias(
      ad::matmul(ad::reshape(out.reconstruction, {1, flat_image}), p("classifier.w")),
      p("classifier.b"));
  out.probabilities = ad::softmax_rows(ad::reshape(logits, {img.classes}));
  return out;
}

ForwardResult sc_forward(const SCModel& model, const Tensor& image,
                         const channel::ChannelRealization& realization) {
  ad::Graph g;
  ForwardValues v = sc_forward_graph(g, model, image, realization);
  ForwardResult r;
  r.semantic = v.semantic.val();
  r.transmitted = v.transmitted.val();
  r.received = v.received.val();
  r.chan_decoded = v.chan_decoded.val();
  r.reconstruction = v.reconstruction.val();
  r.probabilities = v.probabilities.val();
  return r;
}

// ---- checkpoint I/O ----------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'P', 'S', 'F', 'L', 'C', 'K', 'P', '1'};
constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
void write_raw(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw DataError("checkpoint: truncated file " + path);
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_raw<uint16_t>(out, static_cast<uint16_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const std::string& path) {
  const auto len = read_raw<uint16_t>(in, path);
  std::string s(len, '\0');
  if (len && !in.read(s.data(), len)) throw DataError("checkpoint: truncated file " + path);
  return s;
}

void write_dims(std::ostream& out, const std::vector<int64_t>& dims) {
  write_raw<uint8_t>(out, static_cast<uint8_t>(dims.size()));
  for (int64_t d : dims) write_raw<int64_t>(out, d);
}

std::vector<int64_t> read_dims(std::istream& in, const std::string& path) {
  const auto rank = read_raw<uint8_t>(in, path);
  std::vector<int64_t> dims(rank);
  for (auto& d : dims) d = read_raw<int64_t>(in, path);
  return dims;
}

}  // namespace

void save_checkpoint(const SCModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot write " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_raw<uint32_t>(out, kCheckpointVersion);
  const ModelProfile& p = model.profile;
  write_raw<uint8_t>(out, static_cast<uint8_t>(p.family));
  write_raw<int32_t>(out, p.depth);
  write_raw<int64_t>(out, p.image.height);
  write_raw<int64_t>(out, p.image.width);
  write_raw<int64_t>(out, p.image.channels);
  write_raw<int32_t>(out, p.image.classes);
  write_raw<int64_t>(out, p.semantic_dim);
  write_raw<int64_t>(out, p.embed_dim);
  write_raw<int32_t>(out, p.heads);
  write_raw<int64_t>(out, p.patch);
  write_raw<int64_t>(out, p.ff_mult);
  write_raw<uint8_t>(out, p.pre_norm ? 1 : 0);
  write_dims(out, p.csc_channels);
  write_raw<int64_t>(out, p.csc_kernel);
  write_dims(out, p.csc_strides);

  write_raw<uint32_t>(out, static_cast<uint32_t>(model.params.size()));
  for (const auto& [name, entry] : model.params) {
    write_string(out, name);
    write_dims(out, entry.value.shape());
    write_raw<uint8_t>(out, entry.prunable ? 1 : 0);
    out.write(reinterpret_cast<const char*>(entry.value.data()),
              static_cast<std::streamsize>(entry.value.numel() * sizeof(double)));
    for (int64_t i = 0; i < entry.mask.numel(); ++i)
      write_raw<uint8_t>(out, entry.mask[i] != 0.0 ? 1 : 0);
  }
  if (!out) throw DataError("checkpoint: write failure on " + path);
}

SCModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  const auto version = read_raw<uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version in " + path);

  SCModel m;
  ModelProfile& p = m.profile;
  p.family = static_cast<Family>(read_raw<uint8_t>(in, path));
  p.depth = read_raw<int32_t>(in, path);
  p.image.height = read_raw<int64_t>(in, path);
  p.image.width = read_raw<int64_t>(in, path);
  p.image.channels = read_raw<int64_t>(in, path);
  p.image.classes = read_raw<int32_t>(in, path);
  p.semantic_dim = read_raw<int64_t>(in, path);
  p.embed_dim = read_raw<int64_t>(in, path);
  p.heads = read_raw<int32_t>(in, path);
  p.patch = read_raw<int64_t>(in, path);
  p.ff_mult = read_raw<int64_t>(in, path);
  p.pre_norm = read_raw<uint8_t>(in, path) != 0;
  p.csc_channels = read_dims(in, path);
  p.csc_kernel = read_raw<int64_t>(in, path);
  p.csc_strides = read_dims(in, path);

  const auto count = read_raw<uint32_t>(in, path);
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = read_string(in, path);
    const auto dims = read_dims(in, path);
    const bool prunable = read_raw<uint8_t>(in, path) != 0;
    Tensor value(dims);
    if (!in.read(reinterpret_cast<char*>(value.data()),
                 static_cast<std::streamsize>(value.numel() * sizeof(double))))
      throw DataError("checkpoint: truncated values in " + path);
    Tensor mask(dims);
    for (int64_t j = 0; j < mask.numel(); ++j)
      mask[j] = read_raw<uint8_t>(in, path) != 0 ? 1.0 : 0.0;
    m.params.add(name, std::move(value), prunable);
    m.params.mask(name) = std::move(mask);
  }
  return m;
}

}  // namespace psfl::models
