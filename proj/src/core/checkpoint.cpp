#include "efaprune/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "efaprune/error.hpp"
#include "efaprune/report.hpp"

namespace efaprune {

namespace {

constexpr char kMagic[8] = {'E', 'F', 'A', 'P', 'R', 'U', 'N', 'E'};
constexpr std::size_t kHeaderSize = 8 + 4 + 8;

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_le(const std::string& in, std::size_t offset, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + static_cast<std::size_t>(i)])) << (8 * i);
  return v;
}

std::string tensor_bytes(const Tensor& t) {
  std::string out;
  out.reserve(t.size() * 8);
  for (double d : t.values()) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_le(out, bits, 8);
  }
  return out;
}

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

const char* const kGroups[] = {"parameters", "buffers", "momentum"};

ParamStore& group_store(Checkpoint& cp, const std::string& group) {
  if (group == "parameters") return cp.parameters;
  if (group == "buffers") return cp.buffers;
  if (group == "momentum") return cp.momentum;
  fail(ErrorCode::integrity, "unknown tensor group '" + group + "'");
}

const ParamStore& group_store(const Checkpoint& cp, const std::string& group) {
  return group_store(const_cast<Checkpoint&>(cp), group);
}

}  // namespace

Checkpoint make_checkpoint(const TrainState& state) {
  Checkpoint cp;
  cp.architecture = architecture_of(state.model);
  cp.parameters = state.model.parameters;
  cp.buffers = state.model.buffers;
  cp.momentum = state.momentum;
  cp.seed = state.model.seed;
  cp.epoch = state.epoch;
  cp.loss_curve = state.loss_curve;
  cp.train_accuracy = state.train_accuracy;
  return cp;
}

TrainState to_train_state(const Checkpoint& cp) {
  TrainState s;
  s.model.layers = cp.architecture.layers;
  s.model.input = cp.architecture.input;
  s.model.num_classes = cp.architecture.num_classes;
  s.model.parameters = cp.parameters;
  s.model.buffers = cp.buffers;
  s.model.seed = cp.seed;
  validate(s.model);
  s.momentum = cp.momentum;
  s.epoch = cp.epoch;
  s.loss_curve = cp.loss_curve;
  s.train_accuracy = cp.train_accuracy;
  return s;
}

std::string encode_checkpoint(const Checkpoint& cp) {
  Json tensors = Json::array();
  std::string payload;
  for (const char* group : kGroups) {
    for (const auto& [name, t] : group_store(cp, group)) {
      const std::string bytes = tensor_bytes(t);
      tensors.push_back({{"name", name},
                         {"group", group},
                         {"shape", t.shape()},
                         {"bytes", bytes.size()},
                         {"crc32", crc_of(bytes.data(), bytes.size())}});
      payload += bytes;
    }
  }
  const Json meta = {{"format_version", kCheckpointVersion},
                     {"architecture", to_json(cp.architecture)},
                     {"seed", cp.seed},
                     {"epoch", cp.epoch},
                     {"loss_curve", cp.loss_curve},
                     {"train_accuracy", cp.train_accuracy},
                     {"tensors", std::move(tensors)}};
  const std::string text = dump_canonical(meta);
  std::string out(kMagic, sizeof kMagic);
  put_le(out, kCheckpointVersion, 4);
  put_le(out, text.size(), 8);
  out += text;
  out += payload;
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin) {
  require(bytes.size() >= sizeof kMagic, ErrorCode::truncated, origin + ": truncated before the magic bytes");
  require(std::memcmp(bytes.data(), kMagic, sizeof kMagic) == 0, ErrorCode::bad_magic,
          origin + ": bad magic at offset 0 (expected \"EFAPRUNE\")");
  require(bytes.size() >= kHeaderSize, ErrorCode::truncated, origin + ": truncated header");
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 8, 4));
  require(version == kCheckpointVersion, ErrorCode::unsupported_version,
          origin + ": file version " + std::to_string(version) + ", this reader supports version " +
              std::to_string(kCheckpointVersion));
  const std::uint64_t meta_len = get_le(bytes, 12, 8);
  require(meta_len <= bytes.size() - kHeaderSize, ErrorCode::truncated,
          origin + ": metadata length " + std::to_string(meta_len) + " overruns the file");
  Json meta;
  try {
    meta = Json::parse(bytes.substr(kHeaderSize, meta_len));
  } catch (const Json::exception& e) {
    fail(ErrorCode::integrity, origin + ": unreadable metadata: " + e.what());
  }
  Checkpoint cp;
  std::size_t offset = kHeaderSize + meta_len;
  try {
    require(meta.at("format_version").get<std::uint32_t>() == version, ErrorCode::integrity,
            origin + ": metadata version disagrees with the header");
    cp.architecture = architecture_from_json(meta.at("architecture"));
    cp.seed = meta.at("seed").get<std::uint64_t>();
    cp.epoch = meta.at("epoch").get<std::size_t>();
    cp.loss_curve = meta.at("loss_curve").get<std::vector<double>>();
    cp.train_accuracy = meta.at("train_accuracy").get<std::vector<double>>();
    for (const auto& t : meta.at("tensors")) {
      const std::string name = t.at("name").get<std::string>();
      const Shape shape = t.at("shape").get<Shape>();
      const std::size_t declared = t.at("bytes").get<std::size_t>();
      require(!shape.empty() && declared == shape_volume(shape) * 8, ErrorCode::count_mismatch,
              origin + ": tensor " + name + " declares " + std::to_string(declared) + " bytes for shape " +
                  shape_string(shape));
      require(declared <= bytes.size() - offset, ErrorCode::truncated,
              origin + ": payload of " + name + " overruns the file");
      const std::uint32_t crc = crc_of(bytes.data() + offset, declared);
      require(crc == t.at("crc32").get<std::uint32_t>(), ErrorCode::integrity,
              origin + ": CRC32 mismatch in tensor " + name);
      Tensor tensor(shape);
      for (std::size_t i = 0; i < tensor.size(); ++i) {
        const std::uint64_t bits = get_le(bytes, offset + 8 * i, 8);
        std::memcpy(&tensor[i], &bits, 8);
      }
      offset += declared;
      group_store(cp, t.at("group").get<std::string>())[name] = std::move(tensor);
    }
  } catch (const Json::exception& e) {
    fail(ErrorCode::integrity, origin + ": malformed metadata: " + e.what());
  }
  require(offset == bytes.size(), ErrorCode::count_mismatch,
          origin + ": " + std::to_string(bytes.size() - offset) + " bytes beyond the declared payload");
  return cp;
}

void save_checkpoint(const std::string& path, const Checkpoint& cp) { write_text_file(path, encode_checkpoint(cp)); }

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path);
  std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes, path);
}

}  // namespace efaprune
