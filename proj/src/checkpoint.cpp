#include "gradet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gradet {

namespace {

constexpr char kMagic[8] = {'G', 'D', 'T', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint8_t kF32 = 1;
constexpr std::uint8_t kF64 = 2;

template <typename U>
void put(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return value;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("checkpoint is truncated");
  }
  std::string bytes_;
  std::size_t pos_ = 0;
};

void put_tensor(std::string& out, const std::string& name, const Shape& shape, const Vector<Real>& values) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put<std::uint8_t>(out, sizeof(Real) == 4 ? kF32 : kF64);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
  for (Index d : shape) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  for (Index i = 0; i < values.size(); ++i) {
    if constexpr (sizeof(Real) == 4) {
      put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
    } else {
      put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(static_cast<double>(values[i])));
    }
  }
}

struct RawTensor {
  Shape shape;
  Vector<Real> values;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header = {{"format", "gradet-checkpoint"},
                           {"format_version", kCheckpointVersion},
                           {"config", to_json(ckpt.params.config)},
                           {"tokenizer", {{"type", to_string(ckpt.tokenizer_kind)}, {"data", ckpt.tokenizer_data}}}};
  if (ckpt.train) {
    header["train"] = {{"stage", ckpt.train->stage},
                       {"epochs_completed", ckpt.train->epochs_completed},
                       {"step", ckpt.train->step},
                       {"adam_step", ckpt.train->adam.step}};
  } else {
    header["train"] = nullptr;
  }
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, header_text.size());
  out += header_text;

  std::size_t count = ckpt.params.tensors.size();
  if (ckpt.train) count += ckpt.train->adam.m.size() + ckpt.train->adam.v.size();
  put<std::uint64_t>(out, count);
  for (const auto& [name, t] : ckpt.params.tensors) put_tensor(out, name, t.shape(), t.value());
  if (ckpt.train) {
    for (const auto& [name, m] : ckpt.train->adam.m) put_tensor(out, "adam.m." + name, {m.size()}, m);
    for (const auto& [name, v] : ckpt.train->adam.v) put_tensor(out, "adam.v." + name, {v.size()}, v);
  }

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream file(tmp, std::ios::binary);
    if (!file) throw std::runtime_error("cannot write " + tmp);
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw std::runtime_error("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw FormatError("cannot open checkpoint " + path.string());
  std::ostringstream buffer;
  buffer << file.rdbuf();
  Reader in(buffer.str());

  if (in.take(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw FormatError(path.string() + " is not a checkpoint");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = in.get<std::uint64_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.take(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }

  std::map<std::string, RawTensor> raw;
  const auto count = in.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = in.take(in.get<std::uint32_t>());
    const auto dtype = in.get<std::uint8_t>();
    if (dtype != kF32 && dtype != kF64) throw FormatError("checkpoint tensor '" + name + "': unknown dtype");
    const auto rank = in.get<std::uint32_t>();
    RawTensor t;
    for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(static_cast<Index>(in.get<std::uint64_t>()));
    t.values.resize(numel(t.shape));
    for (Index k = 0; k < t.values.size(); ++k) {
      t.values[k] = dtype == kF32 ? static_cast<Real>(std::bit_cast<float>(in.get<std::uint32_t>()))
                                  : static_cast<Real>(std::bit_cast<double>(in.get<std::uint64_t>()));
    }
    raw.emplace(name, std::move(t));
  }
  if (!in.done()) throw FormatError("checkpoint has trailing bytes");

  Checkpoint ckpt;
  ModelConfig stored;
  try {
    stored = model_config_from_json(header.at("config"));
    stored.validate();
    ckpt.tokenizer_kind = parse_tokenizer_kind(header.at("tokenizer").at("type").get<std::string>());
    ckpt.tokenizer_data = header.at("tokenizer").at("data").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  } catch (const UsageError& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }

  const ModelConfig config = expected.value_or(stored);
  for (const auto& [name, shape] : param_shapes(config)) {
    auto it = raw.find(name);
    if (it == raw.end()) throw CheckpointMismatch(name, "missing");
    if (it->second.shape != shape) {
      throw CheckpointMismatch(name, "shape " + to_string(it->second.shape) + " does not match expected " +
                                         to_string(shape));
    }
    ckpt.params.tensors.emplace(name, Tensor<Real>(shape, std::move(it->second.values), true));
  }
  if (expected && !(stored == *expected)) {
    throw FormatError("checkpoint config does not match the requested config");
  }
  ckpt.params.config = config;

  if (header.contains("train") && !header["train"].is_null()) {
    const auto& tj = header["train"];
    TrainState state;
    state.stage = tj.value("stage", "");
    state.epochs_completed = tj.value("epochs_completed", std::int64_t{0});
    state.step = tj.value("step", std::int64_t{0});
    state.adam.step = tj.value("adam_step", std::int64_t{0});
    for (auto& [name, t] : raw) {
      if (name.rfind("adam.m.", 0) == 0) state.adam.m.emplace(name.substr(7), std::move(t.values));
      if (name.rfind("adam.v.", 0) == 0) state.adam.v.emplace(name.substr(7), std::move(t.values));
    }
    ckpt.train = std::move(state);
  }
  return ckpt;
}

}  // namespace gradet
