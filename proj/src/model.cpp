#include "dietcap/model.hpp"

#include <cmath>
#include <json.hpp>

#include "dietcap/error.hpp"

namespace dietcap {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::GL: return "gl";
    case Variant::GlobalOnly: return "g";
    case Variant::LocalOnly: return "l";
    case Variant::GLFrozenGlobal: return "gl-frozen";
  }
  return "gl";
}

Variant parse_variant(std::string_view name) {
  if (name == "gl") return Variant::GL;
  if (name == "g") return Variant::GlobalOnly;
  if (name == "l") return Variant::LocalOnly;
  if (name == "gl-frozen") return Variant::GLFrozenGlobal;
  fail(ErrorCode::Config, "unknown variant '" + std::string(name) + "' (expected gl, g, l or gl-frozen)");
}

void ModelConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::Config, "model config: " + what); };
  if (d_model == 0 || n_heads == 0) bad("d_model and n_heads must be positive");
  if (d_model % n_heads != 0) bad("d_model " + std::to_string(d_model) + " not divisible by n_heads " + std::to_string(n_heads));
  if (d_model < 2) bad("d_model must be >= 2 for layer normalization");
  if (max_caption_len < 2) bad("max_caption_len must be >= 2");
  if (vocab_size <= static_cast<std::size_t>(kReservedIds)) bad("vocab_size must exceed the reserved ids");
  if (ffn_dim == 0) bad("ffn_dim must be positive");
  if (uses_local() && (n_regions == 0 || region_dim == 0 || n_enc_layers == 0)) bad("local stream needs regions, features and layers");
  if (n_dec_layers == 0) bad("n_dec_layers must be positive");
  if (uses_global() && !frozen_global()) {
    if (image_height == 0 || image_width == 0 || image_channels == 0) bad("image dimensions must be positive");
  }
  if (frozen_global() && global_dim == 0) bad("global_dim must be positive");
}

ModelConfig ModelConfig::full_scale(std::size_t vocab_size) {
  ModelConfig c;
  c.d_model = 512;
  c.n_heads = 8;
  c.n_enc_layers = 6;
  c.n_dec_layers = 6;
  c.n_regions = 36;
  c.region_dim = 2048;
  c.ffn_dim = 2048;
  c.global_dim = 512;
  c.image_height = 224;
  c.image_width = 224;
  c.conv_channels = {64, 128, 256};
  c.vocab_size = vocab_size;
  return c;
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["d_model"] = d_model;
  j["n_heads"] = n_heads;
  j["n_enc_layers"] = n_enc_layers;
  j["n_dec_layers"] = n_dec_layers;
  j["n_regions"] = n_regions;
  j["region_dim"] = region_dim;
  j["ffn_dim"] = ffn_dim;
  j["vocab_size"] = vocab_size;
  j["max_caption_len"] = max_caption_len;
  j["global_dim"] = global_dim;
  j["image_height"] = image_height;
  j["image_width"] = image_width;
  j["image_channels"] = image_channels;
  j["conv_channels"] = conv_channels;
  j["output_init_gain"] = output_init_gain;
  j["layer_norm_eps"] = layer_norm_eps;
  j["variant"] = std::string(variant_name(variant));
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Config, std::string("model config is not valid JSON: ") + e.what());
  }
  ModelConfig c;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("d_model", c.d_model);
    get("n_heads", c.n_heads);
    get("n_enc_layers", c.n_enc_layers);
    get("n_dec_layers", c.n_dec_layers);
    get("n_regions", c.n_regions);
    get("region_dim", c.region_dim);
    get("ffn_dim", c.ffn_dim);
    get("vocab_size", c.vocab_size);
    get("max_caption_len", c.max_caption_len);
    get("global_dim", c.global_dim);
    get("image_height", c.image_height);
    get("image_width", c.image_width);
    get("image_channels", c.image_channels);
    get("conv_channels", c.conv_channels);
    get("output_init_gain", c.output_init_gain);
    get("layer_norm_eps", c.layer_norm_eps);
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Config, std::string("model config field has the wrong type: ") + e.what());
  }
  return c;
}

RegionalFeatures RegionalFeatures::padded(std::size_t n_regions, std::size_t dim, std::span<const float> features,
                                          std::size_t count) {
  if (count > n_regions) {
    fail(ErrorCode::Dimension, std::to_string(count) + " regions exceed the limit of " + std::to_string(n_regions));
  }
  if (features.size() != count * dim) {
    fail(ErrorCode::Dimension, "regional features: " + std::to_string(features.size()) + " values for " +
                                   std::to_string(count) + " x " + std::to_string(dim));
  }
  RegionalFeatures r;
  r.rows = n_regions;
  r.dim = dim;
  r.values.assign(n_regions * dim, 0.0f);
  std::copy(features.begin(), features.end(), r.values.begin());
  r.valid.assign(n_regions, 0);
  for (std::size_t i = 0; i < count; ++i) r.valid[i] = 1;
  return r;
}

std::size_t RegionalFeatures::valid_count() const {
  std::size_t n = 0;
  for (auto v : valid) n += v ? 1 : 0;
  return n;
}

// --- construction --------------------------------------------------------------

template <typename T>
Captioner<T>::Captioner(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  rng_ = &rng;
  const auto d = config_.d_model;

  if (config_.uses_global()) {
    if (config_.frozen_global()) {
      global_proj_ = make_linear("global.proj", config_.global_dim, d);
    } else {
      std::size_t in = config_.image_channels;
      std::vector<std::size_t> widths = config_.conv_channels;
      widths.push_back(d);
      for (std::size_t i = 0; i < widths.size(); ++i) {
        conv_.push_back(make_linear("global.conv" + std::to_string(i), 9 * in, widths[i]));
        in = widths[i];
      }
    }
    global_encoder_ = make_encoder_layer("global.encoder");
  }
  if (config_.uses_local()) {
    local_proj_ = make_linear("local.proj", config_.region_dim, d);
    for (std::size_t l = 0; l < config_.n_enc_layers; ++l) {
      local_encoder_.push_back(make_encoder_layer("local.encoder." + std::to_string(l)));
    }
  }
  token_embedding_ = make_param("decoder.embed", {config_.vocab_size, d}, 1.0, false);
  for (std::size_t l = 0; l < config_.n_dec_layers; ++l) {
    decoder_.push_back(make_decoder_layer("decoder." + std::to_string(l)));
  }
  output_ = make_linear("decoder.out", d, config_.vocab_size, config_.output_init_gain);
  rng_ = nullptr;

  const auto positions = config_.max_caption_len + 2;
  positional_.assign(positions * d, T(0));
  for (std::size_t pos = 0; pos < positions; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      positional_[pos * d + i] = static_cast<T>(std::sin(pos * freq));
      if (i + 1 < d) positional_[pos * d + i + 1] = static_cast<T>(std::cos(pos * freq));
    }
  }
}

// Glorot-uniform over the first and last dims, or zeros.
template <typename T>
Tensor<T> Captioner<T>::make_param(const std::string& name, Shape shape, double init_gain, bool zero) {
  const auto n = shape_numel(shape);
  std::vector<T> values(n, T(0));
  if (!zero) {
    const double fan_in = static_cast<double>(shape.front());
    const double fan_out = static_cast<double>(shape.back());
    const double limit = init_gain * std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : values) v = static_cast<T>(rng_->uniform(-limit, limit));
  }
  auto t = Tensor<T>::from(std::move(shape), std::move(values), true);
  params_.push_back({name, t});
  return t;
}

template <typename T>
typename Captioner<T>::Linear Captioner<T>::make_linear(const std::string& name, std::size_t in, std::size_t out,
                                                        double gain) {
  Linear l;
  l.weight = make_param(name + ".weight", {in, out}, gain, false);
  l.bias = make_param(name + ".bias", {out}, 0.0, true);
  return l;
}

template <typename T>
typename Captioner<T>::LayerNormParams Captioner<T>::make_norm(const std::string& name) {
  LayerNormParams n;
  n.gain = Tensor<T>::full({config_.d_model}, T(1), true);
  params_.push_back({name + ".gain", n.gain});
  n.bias = make_param(name + ".bias", {config_.d_model}, 0.0, true);
  return n;
}

template <typename T>
typename Captioner<T>::AttentionParams Captioner<T>::make_attention(const std::string& name) {
  const auto d = config_.d_model;
  AttentionParams a;
  a.wq = make_param(name + ".wq", {d, d}, 1.0, false);
  a.wk = make_param(name + ".wk", {d, d}, 1.0, false);
  a.wv = make_param(name + ".wv", {d, d}, 1.0, false);
  a.wo = make_param(name + ".wo", {d, d}, 1.0, false);
  a.bo = make_param(name + ".bo", {d}, 0.0, true);
  return a;
}

template <typename T>
typename Captioner<T>::EncoderLayer Captioner<T>::make_encoder_layer(const std::string& name) {
  EncoderLayer e;
  e.attn = make_attention(name + ".attn");
  e.ln1 = make_norm(name + ".ln1");
  e.ff1 = make_linear(name + ".ff1", config_.d_model, config_.ffn_dim);
  e.ff2 = make_linear(name + ".ff2", config_.ffn_dim, config_.d_model);
  e.ln2 = make_norm(name + ".ln2");
  return e;
}

template <typename T>
typename Captioner<T>::DecoderLayer Captioner<T>::make_decoder_layer(const std::string& name) {
  DecoderLayer l;
  l.self_attn = make_attention(name + ".self");
  l.ln1 = make_norm(name + ".ln1");
  l.cross_attn = make_attention(name + ".cross");
  l.ln2 = make_norm(name + ".ln2");
  l.ff1 = make_linear(name + ".ff1", config_.d_model, config_.ffn_dim);
  l.ff2 = make_linear(name + ".ff2", config_.ffn_dim, config_.d_model);
  l.ln3 = make_norm(name + ".ln3");
  return l;
}

template <typename T>
std::vector<Tensor<T>> Captioner<T>::parameter_tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

template <typename T>
Tensor<T> Captioner<T>::parameter(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.value;
  }
  fail(ErrorCode::Lookup, "no parameter named '" + std::string(name) + "'");
}

template <typename T>
void Captioner<T>::load_parameters(const std::vector<std::pair<std::string, std::vector<float>>>& values) {
  if (values.size() != params_.size()) {
    fail(ErrorCode::Data, "parameter table has " + std::to_string(values.size()) + " entries, model needs " +
                              std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& p = params_[i];
    if (values[i].first != p.name) {
      fail(ErrorCode::Data, "parameter " + std::to_string(i) + " is '" + values[i].first + "', expected '" + p.name + "'");
    }
    auto dst = p.value.mutable_data();
    if (values[i].second.size() != dst.size()) {
      fail(ErrorCode::Data, "parameter '" + p.name + "' has " + std::to_string(values[i].second.size()) +
                                " values, expected " + std::to_string(dst.size()));
    }
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(values[i].second[j]);
  }
}

// --- forward -------------------------------------------------------------------

template <typename T>
Tensor<T> Captioner<T>::apply(const Linear& l, const Tensor<T>& x) const {
  return add_row(matmul(x, l.weight), l.bias);
}

template <typename T>
Tensor<T> Captioner<T>::apply(const LayerNormParams& n, const Tensor<T>& x) const {
  return layer_norm(x, n.gain, n.bias, static_cast<T>(config_.layer_norm_eps));
}

template <typename T>
Tensor<T> Captioner<T>::attend(const AttentionParams& p, const Tensor<T>& queries, const Tensor<T>& keys,
                               std::span<const std::uint8_t> allowed, const std::string& label) const {
  const auto heads = config_.n_heads;
  const auto hd = config_.head_dim();
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(hd));
  const auto q = matmul(queries, p.wq);
  const auto k = matmul(keys, p.wk);
  const auto v = matmul(keys, p.wv);
  std::vector<Tensor<T>> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = slice_cols(q, h * hd, hd);
    const auto kh = slice_cols(k, h * hd, hd);
    const auto vh = slice_cols(v, h * hd, hd);
    const auto scores = scale(matmul(qh, transpose(kh)), inv_scale);
    const auto weights = masked_softmax(scores, allowed);
    if (probe_) probe_->maps.emplace_back(label + ".head" + std::to_string(h), weights);
    outputs.push_back(matmul(weights, vh));
  }
  const auto merged = heads == 1 ? outputs.front() : concat_cols<T>(outputs);
  return add_row(matmul(merged, p.wo), p.bo);
}

template <typename T>
Tensor<T> Captioner<T>::feed_forward(const Linear& a, const Linear& b, const Tensor<T>& x) const {
  return apply(b, relu(apply(a, x)));
}

template <typename T>
Tensor<T> Captioner<T>::run_encoder_layer(const EncoderLayer& layer, const Tensor<T>& x,
                                          std::span<const std::uint8_t> allowed, const std::string& label) const {
  const auto attended = attend(layer.attn, x, x, allowed, label);
  const auto h = apply(layer.ln1, add(x, attended));
  return apply(layer.ln2, add(h, feed_forward(layer.ff1, layer.ff2, h)));
}

template <typename T>
Tensor<T> Captioner<T>::image_features(const Image& image) const {
  if (image.height != config_.image_height || image.width != config_.image_width ||
      image.channels != config_.image_channels ||
      image.pixels.size() != image.height * image.width * image.channels) {
    fail(ErrorCode::Input, "image raster " + std::to_string(image.height) + "x" + std::to_string(image.width) + "x" +
                               std::to_string(image.channels) + " does not match the model input " +
                               std::to_string(config_.image_height) + "x" + std::to_string(config_.image_width) + "x" +
                               std::to_string(config_.image_channels));
  }
  for (float px : image.pixels) {
    if (!std::isfinite(px)) fail(ErrorCode::Input, "image raster has non-finite pixels");
  }
  std::vector<T> pixels(image.pixels.begin(), image.pixels.end());
  auto x = Tensor<T>::from({image.height, image.width, image.channels}, std::move(pixels));
  std::size_t h = image.height, w = image.width;
  for (const auto& stage : conv_) {
    const auto geo = conv_output(h, w, 3, 2, 1);
    const auto cols = im2col(x, 3, 2, 1);
    const auto out = relu(apply(stage, cols));
    h = geo.out_height;
    w = geo.out_width;
    x = reshape(out, {h, w, stage.weight.dim(1)});
  }
  return mean_rows(reshape(x, {h * w, config_.d_model}));
}

template <typename T>
Tensor<T> Captioner<T>::encode_global(const GlobalFeature& global) const {
  if (!config_.uses_global()) fail(ErrorCode::Config, "variant '" + std::string(variant_name(config_.variant)) + "' has no global stream");
  Tensor<T> f;
  if (config_.frozen_global()) {
    const auto* vec = std::get_if<std::vector<float>>(&global.value);
    if (!vec) fail(ErrorCode::Config, "frozen-global variant needs a precomputed global vector, got an image");
    if (vec->size() != config_.global_dim) {
      fail(ErrorCode::Dimension, "global vector has " + std::to_string(vec->size()) + " values, expected " +
                                     std::to_string(config_.global_dim));
    }
    f = apply(global_proj_, Tensor<T>::from({1, vec->size()}, std::vector<T>(vec->begin(), vec->end())));
  } else {
    const auto* img = std::get_if<Image>(&global.value);
    if (!img) fail(ErrorCode::Config, "trainable global stream needs an image raster, got a precomputed vector");
    f = image_features(*img);
  }
  const std::uint8_t allowed[1] = {1};
  return run_encoder_layer(global_encoder_, f, allowed, "global");
}

template <typename T>
VisualEmbeddings<T> Captioner<T>::encode_local(const RegionalFeatures& features) const {
  if (!config_.uses_local()) fail(ErrorCode::Config, "variant '" + std::string(variant_name(config_.variant)) + "' has no local stream");
  if (features.dim != config_.region_dim || features.rows != config_.n_regions ||
      features.values.size() != features.rows * features.dim || features.valid.size() != features.rows) {
    fail(ErrorCode::Dimension, "regional features " + std::to_string(features.rows) + "x" + std::to_string(features.dim) +
                                   " do not match the model's " + std::to_string(config_.n_regions) + "x" +
                                   std::to_string(config_.region_dim));
  }
  for (float v : features.values) {
    if (!std::isfinite(v)) fail(ErrorCode::Input, "regional features contain non-finite values");
  }
  const auto n = features.rows;
  VisualEmbeddings<T> out;
  out.all_padding = features.all_padding();
  // With nothing valid, attention runs unmasked over the zero rows so the
  // output stays defined; the flag tells callers it carries no content.
  out.key_valid = out.all_padding ? std::vector<std::uint8_t>(n, 1) : features.valid;
  std::vector<std::uint8_t> allowed(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) allowed[i * n + j] = out.key_valid[j];

  auto x = apply(local_proj_, Tensor<T>::from({n, features.dim}, std::vector<T>(features.values.begin(), features.values.end())));
  for (std::size_t l = 0; l < local_encoder_.size(); ++l) {
    x = run_encoder_layer(local_encoder_[l], x, allowed, "local." + std::to_string(l));
  }
  out.rows = x;
  return out;
}

template <typename T>
VisualEmbeddings<T> Captioner<T>::encode(const VisualInput& input) const {
  const auto name = std::string(variant_name(config_.variant));
  if (config_.uses_global() && !input.global) fail(ErrorCode::Config, "variant '" + name + "' needs a global input");
  if (config_.uses_local() && !input.regions) fail(ErrorCode::Config, "variant '" + name + "' needs regional features");
  if (!config_.uses_local()) {
    VisualEmbeddings<T> out;
    out.rows = encode_global(*input.global);
    out.key_valid = {1};
    return out;
  }
  auto local = encode_local(*input.regions);
  if (!config_.uses_global()) return local;
  const auto global = encode_global(*input.global);
  VisualEmbeddings<T> out;
  const Tensor<T> parts[2] = {global, local.rows};
  out.rows = concat_rows<T>(parts);
  out.key_valid.push_back(1);
  if (local.all_padding) {
    out.key_valid.insert(out.key_valid.end(), input.regions->valid.begin(), input.regions->valid.end());
  } else {
    out.key_valid.insert(out.key_valid.end(), local.key_valid.begin(), local.key_valid.end());
  }
  return out;
}

template <typename T>
Tensor<T> Captioner<T>::decode_logits(const VisualEmbeddings<T>& embeddings, std::span<const int> prefix) const {
  const auto d = config_.d_model;
  if (prefix.empty() || prefix.front() != kBosId) fail(ErrorCode::Usage, "decoder prefix must start with BOS");
  if (prefix.size() > config_.max_caption_len + 1) {
    fail(ErrorCode::Length, "decoder prefix of " + std::to_string(prefix.size()) + " tokens exceeds " +
                                std::to_string(config_.max_caption_len + 1));
  }
  if (!embeddings.rows.defined() || embeddings.rows.dim(1) != d) fail(ErrorCode::Dimension, "visual embeddings do not match d_model");
  const auto len = prefix.size();
  const auto mem = embeddings.rows.dim(0);
  if (embeddings.key_valid.size() != mem) fail(ErrorCode::Dimension, "visual embedding mask does not match its rows");

  std::vector<T> pe(positional_.begin(), positional_.begin() + len * d);
  auto x = add(embedding(token_embedding_, prefix), Tensor<T>::from({len, d}, std::move(pe)));

  std::vector<std::uint8_t> causal(len * len, 0);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j <= i; ++j) causal[i * len + j] = 1;
  std::vector<std::uint8_t> cross(len * mem);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j < mem; ++j) cross[i * mem + j] = embeddings.key_valid[j];

  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    const auto& layer = decoder_[l];
    const auto tag = "decoder." + std::to_string(l);
    const auto h1 = apply(layer.ln1, add(x, attend(layer.self_attn, x, x, causal, tag + ".self")));
    const auto h2 = apply(layer.ln2, add(h1, attend(layer.cross_attn, h1, embeddings.rows, cross, tag + ".cross")));
    x = apply(layer.ln3, add(h2, feed_forward(layer.ff1, layer.ff2, h2)));
  }
  return apply(output_, x);
}

template <typename T>
std::vector<T> Captioner<T>::decode_step(const VisualEmbeddings<T>& embeddings, std::span<const int> prefix) const {
  const auto logits = decode_logits(embeddings, prefix);
  const auto v = config_.vocab_size;
  const auto data = logits.data();
  return std::vector<T>(data.end() - static_cast<std::ptrdiff_t>(v), data.end());
}

template <typename T>
Tensor<T> Captioner<T>::caption_loss(const VisualInput& input, const CaptionTokens& caption) const {
  if (caption.ids.size() < 2 || caption.ids.front() != kBosId || caption.ids.back() != kEosId) {
    fail(ErrorCode::Data, "caption tokens must start with BOS and end with EOS");
  }
  const auto emb = encode(input);
  const std::span<const int> ids(caption.ids);
  const auto logits = decode_logits(emb, ids.first(ids.size() - 1));
  return cross_entropy(logits, ids.subspan(1));
}

template class Captioner<float>;
template class Captioner<double>;

}  // namespace dietcap
