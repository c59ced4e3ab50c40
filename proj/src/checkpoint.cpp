#include "sftmix/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "sftmix/errors.hpp"

namespace sftmix {

namespace {

std::uint64_t fnv1a64(const unsigned char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string to_hex(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void append_doubles_le(std::string& out, const DenseArray& a) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    put_u64_le(out, std::bit_cast<std::uint64_t>(a[i]));
  }
}

}  // namespace

nlohmann::ordered_json model_config_to_json(const ModelConfig& config) {
  nlohmann::ordered_json j;
  j["vocab_size"] = config.vocab_size;
  j["d_model"] = config.d_model;
  j["n_layers"] = config.n_layers;
  j["n_heads"] = config.n_heads;
  j["d_ff"] = config.d_ff;
  j["max_seq_len"] = config.max_seq_len;
  j["init_seed"] = config.init_seed;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;  // absent keys keep the defaults
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.init_seed = j.value("init_seed", c.init_seed);
  c.validate();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  std::string payload;
  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  auto add_group = [&](const char* prefix,
                       const std::vector<std::pair<std::string, DenseArray>>& arrays) {
    for (const auto& [name, a] : arrays) {
      nlohmann::ordered_json entry;
      entry["name"] = std::string(prefix) + name;
      entry["shape"] = a.shape();
      manifest.push_back(entry);
      append_doubles_le(payload, a);
    }
  };
  add_group("p:", data.params);
  add_group("m:", data.adam_m);
  add_group("v:", data.adam_v);

  nlohmann::ordered_json header;
  header["model"] = model_config_to_json(data.model);
  header["step"] = data.step;
  header["rng_algorithm"] = "mt19937_64";
  header["rng_state"] = data.rng_state;
  header["arrays"] = manifest;
  header["checksum"] =
      to_hex(fnv1a64(reinterpret_cast<const unsigned char*>(payload.data()), payload.size()));
  const std::string header_text = header.dump();

  std::string blob;
  blob.append(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32_le(blob, kCheckpointVersion);
  put_u64_le(blob, header_text.size());
  blob += header_text;
  blob += payload;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("checkpoint write failed: " + path.string());
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const std::size_t prefix = sizeof kCheckpointMagic + 4 + 8;
  if (blob.size() < prefix) throw FormatError("checkpoint truncated: " + path.string());
  if (std::memcmp(blob.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw FormatError("not a checkpoint file (bad magic): " + path.string());
  }
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
  const std::uint32_t version = get_u32_le(bytes + sizeof kCheckpointMagic);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint format version " + std::to_string(version) +
                      " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t header_len = get_u64_le(bytes + sizeof kCheckpointMagic + 4);
  if (blob.size() < prefix + header_len) throw FormatError("checkpoint header truncated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(prefix, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header unparseable: ") + e.what());
  }

  const std::string payload = blob.substr(prefix + header_len);
  const std::string want_sum = header.at("checksum").get<std::string>();
  const std::string got_sum =
      to_hex(fnv1a64(reinterpret_cast<const unsigned char*>(payload.data()), payload.size()));
  if (want_sum != got_sum) {
    throw IntegrityError("checkpoint payload checksum mismatch: " + path.string());
  }

  CheckpointData data;
  data.model = model_config_from_json(header.at("model"));
  data.step = header.at("step").get<long>();
  data.rng_state = header.at("rng_state").get<std::string>();

  std::size_t offset = 0;
  const auto* pb = reinterpret_cast<const unsigned char*>(payload.data());
  for (const auto& entry : header.at("arrays")) {
    const std::string full_name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    const std::size_t count = shape_product(shape);
    if (offset + count * 8 > payload.size()) throw FormatError("checkpoint payload truncated");
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
      values[i] = std::bit_cast<double>(get_u64_le(pb + offset + i * 8));
    }
    offset += count * 8;
    DenseArray array(shape, std::move(values));
    if (full_name.size() < 2 || full_name[1] != ':') {
      throw FormatError("checkpoint array with unqualified name: " + full_name);
    }
    const std::string name = full_name.substr(2);
    switch (full_name[0]) {
      case 'p': data.params.emplace_back(name, std::move(array)); break;
      case 'm': data.adam_m.emplace_back(name, std::move(array)); break;
      case 'v': data.adam_v.emplace_back(name, std::move(array)); break;
      default: throw FormatError("checkpoint array with unknown group: " + full_name);
    }
  }
  if (offset != payload.size()) throw FormatError("checkpoint payload has trailing bytes");
  return data;
}

}  // namespace sftmix
