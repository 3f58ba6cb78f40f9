#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dietcap/rng.hpp"
#include "dietcap/tensor.hpp"
#include "dietcap/vocab.hpp"

namespace dietcap {

// Which encoder streams feed the decoder.
//   GL              global (trainable image encoder) + local (regional features)
//   GlobalOnly      image stream only
//   LocalOnly       regional stream only
//   GLFrozenGlobal  precomputed global vector + local
enum class Variant { GL, GlobalOnly, LocalOnly, GLFrozenGlobal };

std::string_view variant_name(Variant v);  // "gl", "g", "l", "gl-frozen"
Variant parse_variant(std::string_view name);

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t n_regions = 8;
  std::size_t region_dim = 32;
  std::size_t ffn_dim = 256;
  std::size_t vocab_size = 0;
  std::size_t max_caption_len = 30;
  // Width of the stored global vector in GLFrozenGlobal mode.
  std::size_t global_dim = 32;
  // Raster fed to the trainable image encoder (HWC).
  std::size_t image_height = 30;
  std::size_t image_width = 40;
  std::size_t image_channels = 3;
  // Hidden widths of the strided conv stages; a final stage maps to d_model.
  std::vector<std::size_t> conv_channels = {8, 16};
  // Output projection starts at gain * Glorot so first-step logits are near uniform.
  double output_init_gain = 0.1;
  double layer_norm_eps = 1e-5;
  Variant variant = Variant::GL;

  std::size_t head_dim() const { return d_model / n_heads; }
  bool uses_global() const { return variant != Variant::LocalOnly; }
  bool uses_local() const { return variant != Variant::GlobalOnly; }
  bool frozen_global() const { return variant == Variant::GLFrozenGlobal; }

  // Throws ErrorCode::Config.
  void validate() const;

  // 512-wide, 8 heads, 6+6 layers, 36 regions of 2048 features.
  static ModelConfig full_scale(std::size_t vocab_size);

  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);

  bool operator==(const ModelConfig&) const = default;
};

struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<float> pixels;  // HWC, values in [0, 1]
};

// N x D detector features of one image. Rows past the detected count are zero
// and marked invalid so attention skips them.
struct RegionalFeatures {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<float> values;
  std::vector<std::uint8_t> valid;

  // Pads `count` rows of `dim` features up to n_regions.
  static RegionalFeatures padded(std::size_t n_regions, std::size_t dim, std::span<const float> features,
                                 std::size_t count);
  std::size_t valid_count() const;
  bool all_padding() const { return valid_count() == 0; }
};

// Either a raster for the trainable encoder or a precomputed vector.
struct GlobalFeature {
  std::variant<Image, std::vector<float>> value;

  static GlobalFeature from_image(Image image) { return {std::move(image)}; }
  static GlobalFeature from_vector(std::vector<float> v) { return {std::move(v)}; }
  bool is_image() const { return std::holds_alternative<Image>(value); }
};

struct VisualInput {
  std::optional<GlobalFeature> global;
  std::optional<RegionalFeatures> regions;
};

// Rows the decoder attends over: row 0 is the global embedding when the
// variant has one, then the local embeddings.
template <typename T>
struct VisualEmbeddings {
  Tensor<T> rows;
  std::vector<std::uint8_t> key_valid;
  bool all_padding = false;
};

// Collects attention probability matrices during a forward pass (tests).
template <typename T>
struct AttentionProbe {
  std::vector<std::pair<std::string, Tensor<T>>> maps;
};

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> value;
};

template <typename T>
class Captioner {
 public:
  Captioner(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const std::vector<NamedParameter<T>>& parameters() const { return params_; }
  std::vector<Tensor<T>> parameter_tensors() const;
  Tensor<T> parameter(std::string_view name) const;
  // Overwrites parameter values; names and shapes must match exactly.
  void load_parameters(const std::vector<std::pair<std::string, std::vector<float>>>& values);

  VisualEmbeddings<T> encode_local(const RegionalFeatures& features) const;
  Tensor<T> encode_global(const GlobalFeature& global) const;
  VisualEmbeddings<T> encode(const VisualInput& input) const;

  // Logits for every prefix position, [prefix.size() x vocab]. Row t predicts
  // the token after prefix[t].
  Tensor<T> decode_logits(const VisualEmbeddings<T>& embeddings, std::span<const int> prefix) const;
  // Next-token logits after the whole prefix.
  std::vector<T> decode_step(const VisualEmbeddings<T>& embeddings, std::span<const int> prefix) const;

  // Teacher-forced mean cross entropy of one caption.
  Tensor<T> caption_loss(const VisualInput& input, const CaptionTokens& caption) const;

  void set_attention_probe(AttentionProbe<T>* probe) const { probe_ = probe; }

 private:
  struct Linear {
    Tensor<T> weight, bias;
  };
  struct LayerNormParams {
    Tensor<T> gain, bias;
  };
  struct AttentionParams {
    Tensor<T> wq, wk, wv, wo, bo;
  };
  struct EncoderLayer {
    AttentionParams attn;
    LayerNormParams ln1, ln2;
    Linear ff1, ff2;
  };
  struct DecoderLayer {
    AttentionParams self_attn, cross_attn;
    LayerNormParams ln1, ln2, ln3;
    Linear ff1, ff2;
  };

  Tensor<T> make_param(const std::string& name, Shape shape, double init_gain, bool zero);
  Linear make_linear(const std::string& name, std::size_t in, std::size_t out, double gain = 1.0);
  LayerNormParams make_norm(const std::string& name);
  AttentionParams make_attention(const std::string& name);
  EncoderLayer make_encoder_layer(const std::string& name);
  DecoderLayer make_decoder_layer(const std::string& name);

  Tensor<T> apply(const Linear& l, const Tensor<T>& x) const;
  Tensor<T> apply(const LayerNormParams& n, const Tensor<T>& x) const;
  Tensor<T> attend(const AttentionParams& p, const Tensor<T>& queries, const Tensor<T>& keys,
                   std::span<const std::uint8_t> allowed, const std::string& label) const;
  Tensor<T> feed_forward(const Linear& a, const Linear& b, const Tensor<T>& x) const;
  Tensor<T> run_encoder_layer(const EncoderLayer& layer, const Tensor<T>& x, std::span<const std::uint8_t> allowed,
                              const std::string& label) const;
  Tensor<T> image_features(const Image& image) const;

  ModelConfig config_;
  std::vector<NamedParameter<T>> params_;
  Rng* rng_ = nullptr;  // only during construction

  std::vector<Linear> conv_;
  Linear global_proj_;
  EncoderLayer global_encoder_;
  Linear local_proj_;
  std::vector<EncoderLayer> local_encoder_;
  Tensor<T> token_embedding_;
  std::vector<DecoderLayer> decoder_;
  Linear output_;
  std::vector<T> positional_;  // (max_caption_len + 2) x d_model

  mutable AttentionProbe<T>* probe_ = nullptr;
};

// --- decoding ----------------------------------------------------------------

// Argmax decoding; ties go to the lowest id. PAD, BOS and UNK are never
// emitted. At max_len words an EOS is forced and `truncated` is set.
template <typename T>
CaptionTokens greedy_decode(const Captioner<T>& model, const VisualEmbeddings<T>& embeddings, std::size_t max_len);

// Beam search ranking finished hypotheses by length-normalized log-probability
// (sum over emitted tokens including EOS, divided by their count). Equal
// scores go to the lexicographically smaller id sequence. The greedy
// hypothesis always competes in the final ranking, so the result never scores
// below greedy. beam_width == 0 raises ErrorCode::Config.
template <typename T>
CaptionTokens beam_decode(const Captioner<T>& model, const VisualEmbeddings<T>& embeddings, std::size_t beam_width,
                          std::size_t max_len);

// Length-normalized log-probability of a complete caption under the model.
template <typename T>
double sequence_score(const Captioner<T>& model, const VisualEmbeddings<T>& embeddings, const CaptionTokens& caption);

}  // namespace dietcap
