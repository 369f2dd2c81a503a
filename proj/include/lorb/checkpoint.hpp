#ifndef LORB_CHECKPOINT_HPP_
#define LORB_CHECKPOINT_HPP_

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lorb/encoder.hpp"
#include "lorb/serde.hpp"
#include "lorb/vocab.hpp"

namespace lorb {

// Checkpoint container, version 1:
//   magic "LORB", u64 version
//   u64 tensor count
//   per tensor (sorted by name): u64 name length, name bytes, u64 rank,
//     u64 dims[rank], f64 data[numel]   (all integers and floats LE)
//   frozen-flag bitmap, one bit per tensor in file order (set = frozen)
//   u64 json length, canonical JSON {"adaptation","encoder","vocab"}
// Round trips are bit-exact.

namespace ckpt_detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) {
  put_u64(out, std::bit_cast<std::uint64_t>(d));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  std::uint64_t u64() {
    if (pos + 8 > buf.size()) throw ParseError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i]))
           << (8 * i);
    pos += 8;
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::string bytes(std::size_t n) {
    if (pos + n > buf.size()) throw ParseError("checkpoint: truncated file");
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace ckpt_detail

inline std::string serialize_checkpoint(const ScoringModel& model,
                                        const Vocabulary& vocab) {
  using ckpt_detail::put_f64;
  using ckpt_detail::put_u64;
  std::string out = "LORB";
  put_u64(out, 1);  // version
  const auto& params = model.parameters();
  put_u64(out, params.size());
  std::vector<bool> frozen;
  for (const auto& [name, t] : params) {
    put_u64(out, name.size());
    out += name;
    put_u64(out, t.rank());
    for (std::size_t d : t.shape()) put_u64(out, d);
    for (double v : t.values()) put_f64(out, v);
    frozen.push_back(!t.requires_grad());
  }
  std::string bitmap((frozen.size() + 7) / 8, '\0');
  for (std::size_t i = 0; i < frozen.size(); ++i) {
    if (frozen[i]) bitmap[i / 8] |= static_cast<char>(1u << (i % 8));
  }
  out += bitmap;

  nlohmann::json meta;
  meta["encoder"] = model.config();
  if (model.adaptation()) {
    meta["adaptation"] = *model.adaptation();
  } else {
    meta["adaptation"] = nullptr;
  }
  meta["vocab"] = vocab.regular_tokens();
  const std::string js = meta.dump();
  put_u64(out, js.size());
  out += js;
  return out;
}

struct Checkpoint {
  ScoringModel model;
  Vocabulary vocab;
};

inline Checkpoint deserialize_checkpoint(const std::string& buf) {
  ckpt_detail::Reader r{buf};
  if (r.bytes(4) != "LORB") throw ParseError("checkpoint: bad magic");
  const std::uint64_t version = r.u64();
  if (version != 1) {
    throw ParseError(strcat("checkpoint: unsupported version ", version));
  }
  const std::uint64_t count = r.u64();
  std::vector<std::pair<std::string, Tensor>> tensors;
  tensors.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t name_len = r.u64();
    std::string name = r.bytes(name_len);
    const std::uint64_t rank = r.u64();
    Shape shape(rank);
    for (std::uint64_t d = 0; d < rank; ++d) shape[d] = r.u64();
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = r.f64();
    tensors.emplace_back(std::move(name),
                         Tensor::from_values(std::move(shape), std::move(data)));
  }
  const std::string bitmap = r.bytes((count + 7) / 8);
  for (std::uint64_t i = 0; i < count; ++i) {
    const bool frozen =
        (static_cast<unsigned char>(bitmap[i / 8]) >> (i % 8)) & 1u;
    tensors[i].second.set_requires_grad(!frozen);
  }
  const std::uint64_t js_len = r.u64();
  const nlohmann::json meta = nlohmann::json::parse(r.bytes(js_len));

  Checkpoint ck;
  EncoderConfig cfg = meta.at("encoder").get<EncoderConfig>();
  // init validates the config; storage is then replaced wholesale.
  ck.model = ScoringModel::init(cfg);
  std::vector<std::string> names;
  for (const auto& [name, t] : ck.model.parameters()) names.push_back(name);
  for (const std::string& n : names) ck.model.remove_parameter(n);
  for (auto& [name, t] : tensors) ck.model.insert_parameter(name, t);
  if (!meta.at("adaptation").is_null()) {
    ck.model.adaptation() = meta.at("adaptation").get<AdaptationConfig>();
  }
  ck.vocab = Vocabulary::from_tokens(
      meta.at("vocab").get<std::vector<std::string>>());
  return ck;
}

inline void save_checkpoint(const std::string& path, const ScoringModel& model,
                            const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(strcat("cannot write checkpoint: ", path));
  const std::string buf = serialize_checkpoint(model, vocab);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(strcat("cannot open checkpoint: ", path));
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(buf);
}

}  // namespace lorb

#endif  // LORB_CHECKPOINT_HPP_
