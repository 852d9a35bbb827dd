#include "ntta/checkpoint.hpp"

#include <limits>
#include <map>
#include <set>

#include "binio.hpp"

namespace ntta {

namespace {

constexpr char kMagic[4] = {'N', 'C', 'K', 'P'};
constexpr std::size_t kTrailer = 4 + 8;  // config length + checksum

using Kind = CheckpointError::Kind;

struct Named {
  std::string name;
  Tensor<float> tensor;
};

std::vector<Named> state_of(const Model<float>& model) {
  std::vector<Named> out;
  for (const auto& p : model.parameters()) out.push_back({p.name, p.tensor});
  for (const auto& b : model.buffers()) out.push_back({b.name, b.tensor});
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model, const ExperimentConfig& config) {
  const auto state = state_of(model);
  detail::ByteWriter w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(state.size()));
  for (const auto& [name, t] : state) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max())
      throw ContractError("checkpoint: tensor name too long: " + name);
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.text(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (float v : t.data()) w.f32(v);
  }
  const std::string text = config.serialize();
  w.text(text);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.u64(detail::fnv1a64(w.buffer()));
  return std::move(w.buffer());
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const ExperimentConfig& config) {
  detail::write_file(path, encode_checkpoint(model, config));
}

LoadedCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const ExperimentConfig* target, bool partial) {
  detail::ByteReader head(bytes);
  try {
    for (char c : kMagic)
      if (head.u8("magic") != static_cast<std::uint8_t>(c)) throw CheckpointError(Kind::corrupt, "checkpoint: bad magic", 0);
  } catch (const CheckpointError&) {
    throw;
  } catch (const FormatError& e) {
    throw CheckpointError(Kind::corrupt, e.what(), e.offset());
  }
  const std::size_t version_at = head.offset();
  std::uint16_t version = 0;
  std::uint32_t count = 0;
  try {
    version = head.u16("version");
    if (version != kCheckpointVersion)
      throw CheckpointError(Kind::version_mismatch,
                            "checkpoint: version " + std::to_string(version) + ", expected " +
                                std::to_string(kCheckpointVersion),
                            version_at);
    count = head.u32("tensor count");
  } catch (const CheckpointError&) {
    throw;
  } catch (const FormatError& e) {
    throw CheckpointError(Kind::corrupt, e.what(), e.offset());
  }
  if (bytes.size() < head.offset() + kTrailer)
    throw CheckpointError(Kind::corrupt, "checkpoint: truncated trailer", bytes.size());

  // Trailer: config text sits right before its length field.
  detail::ByteReader tail(bytes.subspan(bytes.size() - kTrailer));
  const std::uint32_t config_len = tail.u32("config length");
  const std::uint64_t stored_sum = tail.u64("checksum");
  const std::size_t body_end = bytes.size() - kTrailer;
  if (config_len > body_end - head.offset())
    throw CheckpointError(Kind::corrupt, "checkpoint: config length exceeds file", body_end);
  const std::size_t config_at = body_end - config_len;

  ExperimentConfig embedded;
  try {
    embedded = ExperimentConfig::parse(
        std::string(reinterpret_cast<const char*>(bytes.data() + config_at), config_len));
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::corrupt, std::string("checkpoint: embedded config: ") + e.what(), config_at);
  }
  const ExperimentConfig& cfg = target ? *target : embedded;
  LoadedCheckpoint out{cfg, Model<float>(cfg.model_config(), 0), {}};

  std::map<std::string, Tensor<float>> expected;
  for (auto& [name, t] : state_of(out.model)) expected.emplace(name, t);
  std::set<std::string> seen;

  detail::ByteReader r(bytes.first(config_at));
  r.text(head.offset(), "header");
  try {
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::size_t entry_at = r.offset();
      const std::string name = r.text(r.u16("name length"), "tensor name");
      const std::size_t rank = r.u8("rank");
      Shape shape(rank);
      for (auto& e : shape) e = r.u32("extent");
      const std::size_t n = numel_of(shape);
      auto it = expected.find(name);
      if (it == expected.end()) {
        if (!partial)
          throw CheckpointError(Kind::extra_tensor, "checkpoint: unexpected tensor '" + name + "'", entry_at, name);
        r.need(n * 4, "tensor payload");
        r.text(n * 4, "tensor payload");
        out.skipped.push_back(name);
        continue;
      }
      if (!seen.insert(name).second)
        throw CheckpointError(Kind::corrupt, "checkpoint: duplicate tensor '" + name + "'", entry_at, name);
      auto& dst = it->second;
      if (shape != dst.shape())
        throw CheckpointError(Kind::shape_mismatch,
                              "checkpoint: tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                                  shape_str(dst.shape()),
                              entry_at, name);
      auto data = dst.data();
      for (std::size_t j = 0; j < n; ++j) data[j] = r.f32("tensor payload");
    }
  } catch (const CheckpointError&) {
    throw;
  } catch (const FormatError& e) {
    throw CheckpointError(Kind::corrupt, e.what(), e.offset());
  }
  if (r.remaining() != 0)
    throw CheckpointError(Kind::corrupt, "checkpoint: trailing bytes before config", r.offset());
  for (const auto& [name, t] : state_of(out.model))
    if (!seen.count(name))
      throw CheckpointError(Kind::missing_tensor, "checkpoint: missing tensor '" + name + "'", config_at, name);

  if (detail::fnv1a64(bytes.first(bytes.size() - 8)) != stored_sum)
    throw CheckpointError(Kind::checksum_mismatch, "checkpoint: checksum mismatch", bytes.size() - 8);
  return out;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ExperimentConfig* target, bool partial) {
  const auto bytes = detail::read_file(path);
  return decode_checkpoint(bytes, target, partial);
}

}  // namespace ntta
