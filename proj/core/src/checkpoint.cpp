#include <cstring>
#include <fstream>

#include <zlib.h>

#include "json.hpp"
#include "thermaco/training.hpp"

namespace thermaco::train {

namespace {

constexpr char kMagic[4] = {'T', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

using json = nlohmann::ordered_json;

template <typename V>
void put(std::string& out, V v) {
  for (std::size_t i = 0; i < sizeof(V); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

std::uint32_t crc_of(const std::string& name, const void* data, std::size_t bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(name.data()), static_cast<uInt>(name.size()));
  crc = crc32(crc, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(bytes));
  return static_cast<std::uint32_t>(crc);
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  template <typename V>
  V get(const std::string& what) {
    need(sizeof(V), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(V); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(V);
    return static_cast<V>(v);
  }
  std::string take(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const std::string& what) {
    if (pos_ + n > bytes_.size()) throw ChecksumError("checkpoint is truncated while reading " + what);
  }
  std::string bytes_;
  std::size_t pos_ = 0;
};

json model_to_json(const ModelConfig& m) {
  json blocks = json::array();
  for (const auto& b : m.thermal.blocks) blocks.push_back({{"channels", b.channels}, {"stride", b.stride}});
  const auto& t = m.thermal;
  return {{"thermal",
           {{"frames", t.frames},
            {"height", t.height},
            {"width", t.width},
            {"stem_channels", t.stem_channels},
            {"stem_kernel", t.stem_kernel},
            {"stem_stride", t.stem_stride},
            {"blocks", blocks},
            {"pool_height", t.pool_height},
            {"pool_width", t.pool_width},
            {"attention_layers", t.attention_layers},
            {"attention_heads", t.attention_heads},
            {"feedforward_dim", t.feedforward_dim},
            {"dropout", t.dropout},
            {"positional_encoding", t.positional_encoding}}},
          {"eda",
           {{"input_dim", m.eda.input_dim},
            {"hidden_dim", m.eda.hidden_dim},
            {"output_dim", m.eda.output_dim},
            {"dropout", m.eda.dropout}}},
          {"classifier",
           {{"hidden_dim", m.classifier.hidden_dim},
            {"classes", m.classifier.classes},
            {"dropout", m.classifier.dropout}}}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  const auto& t = j.at("thermal");
  m.thermal.frames = t.at("frames");
  m.thermal.height = t.at("height");
  m.thermal.width = t.at("width");
  m.thermal.stem_channels = t.at("stem_channels");
  m.thermal.stem_kernel = t.at("stem_kernel");
  m.thermal.stem_stride = t.at("stem_stride");
  m.thermal.blocks.clear();
  for (const auto& b : t.at("blocks")) m.thermal.blocks.push_back({b.at("channels"), b.at("stride")});
  m.thermal.pool_height = t.at("pool_height");
  m.thermal.pool_width = t.at("pool_width");
  m.thermal.attention_layers = t.at("attention_layers");
  m.thermal.attention_heads = t.at("attention_heads");
  m.thermal.feedforward_dim = t.at("feedforward_dim");
  m.thermal.dropout = t.at("dropout");
  m.thermal.positional_encoding = t.at("positional_encoding");
  const auto& e = j.at("eda");
  m.eda.input_dim = e.at("input_dim");
  m.eda.hidden_dim = e.at("hidden_dim");
  m.eda.output_dim = e.at("output_dim");
  m.eda.dropout = e.at("dropout");
  const auto& c = j.at("classifier");
  m.classifier.hidden_dim = c.at("hidden_dim");
  m.classifier.classes = c.at("classes");
  m.classifier.dropout = c.at("dropout");
  return m;
}

}  // namespace

void save_checkpoint(ModelBundle<float>& bundle, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory '" + dir.string() + "'");
  const auto params = bundle.parameters();

  std::string blob(kMagic, kMagic + 4);
  put<std::uint32_t>(blob, kVersion);
  put<std::uint32_t>(blob, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    put<std::uint32_t>(blob, static_cast<std::uint32_t>(p->name.size()));
    blob += p->name;
    put<std::uint32_t>(blob, static_cast<std::uint32_t>(p->shape.size()));
    for (int d : p->shape) put<std::uint32_t>(blob, static_cast<std::uint32_t>(d));
    put<std::uint64_t>(blob, p->size());
    for (float v : p->value) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put<std::uint32_t>(blob, bits);
    }
    put<std::uint32_t>(blob, crc_of(p->name, blob.data() + blob.size() - 4 * p->size(), 4 * p->size()));
  }
  {
    std::ofstream os(dir / "params.bin", std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write '" + (dir / "params.bin").string() + "'");
    os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  }

  json cfg;
  cfg["format"] = "thermaco-checkpoint";
  cfg["version"] = kVersion;
  cfg["trainer_kind"] = trainer_kind_name(bundle.kind);
  cfg["alpha"] = bundle.weights.alpha;
  cfg["beta"] = bundle.weights.beta;
  cfg["seed"] = bundle.seed;
  cfg["model"] = model_to_json(bundle.config);
  cfg["arrays"] = params.size();
  std::ofstream os(dir / "config.json", std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + (dir / "config.json").string() + "'");
  os << cfg.dump(2) << "\n";
}

ModelBundle<float> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream cs(dir / "config.json", std::ios::binary);
  if (!cs) throw IoError("missing checkpoint config '" + (dir / "config.json").string() + "'");
  json cfg;
  try {
    cfg = json::parse(cs);
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint config: " + std::string(e.what()));
  }
  ModelBundle<float> bundle;
  try {
    if (cfg.at("format") != "thermaco-checkpoint") throw IoError("not a checkpoint config");
    bundle = ModelBundle<float>(model_from_json(cfg.at("model")), trainer_kind_from_name(cfg.at("trainer_kind")),
                                loss::LossWeights{cfg.at("alpha").get<double>(), cfg.at("beta").get<double>()},
                                cfg.at("seed").get<std::uint64_t>());
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint config: " + std::string(e.what()));
  }

  std::ifstream bs(dir / "params.bin", std::ios::binary);
  if (!bs) throw IoError("missing checkpoint blob '" + (dir / "params.bin").string() + "'");
  Reader r(std::string((std::istreambuf_iterator<char>(bs)), std::istreambuf_iterator<char>()));
  if (r.take(4, "magic") != std::string(kMagic, 4)) throw IoError("checkpoint blob has a bad magic");
  if (r.get<std::uint32_t>("version") != kVersion) throw IoError("unsupported checkpoint version");
  auto params = bundle.parameters();
  const auto count = r.get<std::uint32_t>("array count");
  if (count != params.size()) {
    throw IoError("checkpoint holds " + std::to_string(count) + " arrays, model expects " + std::to_string(params.size()));
  }
  for (auto* p : params) {
    const auto name = r.take(r.get<std::uint32_t>("array name length"), "array name");
    if (name != p->name) throw IoError("checkpoint array '" + name + "' found where '" + p->name + "' was expected");
    const auto ndims = r.get<std::uint32_t>("array '" + name + "' rank");
    std::vector<int> shape;
    for (std::uint32_t i = 0; i < ndims; ++i) shape.push_back(static_cast<int>(r.get<std::uint32_t>("array '" + name + "' shape")));
    if (shape != p->shape) throw IoError("checkpoint array '" + name + "' has the wrong shape");
    const auto n = r.get<std::uint64_t>("array '" + name + "' size");
    if (n != p->size()) throw IoError("checkpoint array '" + name + "' has the wrong size");
    const std::string raw = r.take(4 * n, "array '" + name + "' data");
    const auto stored = r.get<std::uint32_t>("array '" + name + "' checksum");
    if (stored != crc_of(name, raw.data(), raw.size())) throw ChecksumError("checksum mismatch in checkpoint array '" + name + "'");
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[4 * i + b])) << (8 * b);
      std::memcpy(&p->value[i], &bits, 4);
    }
  }
  if (!r.done()) throw IoError("checkpoint blob has trailing bytes");
  return bundle;
}

}  // namespace thermaco::train
