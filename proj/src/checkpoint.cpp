#include "dietcap/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "dietcap/error.hpp"

namespace dietcap {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr char kMagic[4] = {'G', 'L', 'T', 'C'};
constexpr std::uint8_t kDtypeF32 = 0;

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      fail(ErrorCode::Data, std::string("checkpoint truncated while reading ") + what);
    }
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    std::memcpy(&v, take(4, what).data(), 4);
    return v;
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

template <typename T>
Checkpoint Checkpoint::capture(const Captioner<T>& model, const Vocabulary& vocab) {
  Checkpoint c;
  c.config = model.config();
  c.vocab = vocab;
  for (const auto& p : model.parameters()) {
    const auto data = p.value.data();
    c.parameters.push_back({p.name, p.value.shape(), std::vector<float>(data.begin(), data.end())});
  }
  return c;
}

template <typename T>
Captioner<T> Checkpoint::instantiate() const {
  Captioner<T> model(config, 0);
  const auto& expected = model.parameters();
  if (expected.size() != parameters.size()) {
    fail(ErrorCode::Data, "checkpoint has " + std::to_string(parameters.size()) + " parameters, model expects " +
                              std::to_string(expected.size()));
  }
  std::vector<std::pair<std::string, std::vector<float>>> values;
  values.reserve(parameters.size());
  for (std::size_t i = 0; i < parameters.size(); ++i) {
    if (parameters[i].shape != expected[i].value.shape()) {
      fail(ErrorCode::Data, "parameter '" + parameters[i].name + "' has shape " + shape_string(parameters[i].shape) +
                                ", model expects " + shape_string(expected[i].value.shape()));
    }
    values.emplace_back(parameters[i].name, parameters[i].values);
  }
  model.load_parameters(values);
  return model;
}

std::string Checkpoint::serialize() const {
  nlohmann::ordered_json header;
  header["config"] = nlohmann::ordered_json::parse(config.to_json());
  header["vocab"] = vocab.words();
  const auto blob = header.dump();

  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(blob.size()));
  out += blob;
  for (const auto& p : parameters) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    out.push_back(static_cast<char>(kDtypeF32));
    put_u32(out, static_cast<std::uint32_t>(p.shape.size()));
    for (auto d : p.shape) put_u32(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(p.values.data()), p.values.size() * sizeof(float));
  }
  return out;
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != std::string_view(kMagic, 4)) fail(ErrorCode::Data, "not a checkpoint (bad magic)");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) fail(ErrorCode::Data, "unsupported checkpoint version " + std::to_string(version));
  const auto blob_len = r.u32("header length");
  const auto blob = r.take(blob_len, "header");

  Checkpoint c;
  try {
    const auto header = nlohmann::json::parse(blob);
    c.config = ModelConfig::from_json(header.at("config").dump());
    c.vocab = Vocabulary(header.at("vocab").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Data, std::string("checkpoint header is malformed: ") + e.what());
  }

  while (!r.done()) {
    ParameterRecord p;
    const auto name_len = r.u32("parameter name length");
    p.name = std::string(r.take(name_len, "parameter name"));
    const auto dtype = static_cast<std::uint8_t>(r.take(1, "dtype")[0]);
    if (dtype != kDtypeF32) fail(ErrorCode::Data, "parameter '" + p.name + "' has unknown dtype " + std::to_string(dtype));
    const auto rank = r.u32("rank");
    for (std::uint32_t i = 0; i < rank; ++i) p.shape.push_back(r.u32("dims"));
    const auto n = shape_numel(p.shape);
    const auto raw = r.take(n * sizeof(float), "parameter values");
    p.values.resize(n);
    std::memcpy(p.values.data(), raw.data(), raw.size());
    c.parameters.push_back(std::move(p));
  }
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write checkpoint " + path.string());
  const auto bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

template Checkpoint Checkpoint::capture(const Captioner<float>&, const Vocabulary&);
template Checkpoint Checkpoint::capture(const Captioner<double>&, const Vocabulary&);
template Captioner<float> Checkpoint::instantiate() const;
template Captioner<double> Checkpoint::instantiate() const;

}  // namespace dietcap
