#ifndef LORB_MANIFEST_HPP_
#define LORB_MANIFEST_HPP_

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lorb/errors.hpp"

namespace lorb {

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    throw IoError("sha256: digest computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

inline std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(strcat("cannot open input for digest: ", path));
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  return sha256_hex(content);
}

// Records what a command ran with. The digest covers command, resolved
// config, seed and input digests -- everything that determines the outputs.
// Timestamps and wall-clock are volatile run metadata and stay out of it.
struct RunManifest {
  std::string command;
  nlohmann::json resolved_config;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> inputs;  // (path, digest)
  std::vector<std::string> outputs;
  std::string created_at;
  double wall_clock_seconds = 0.0;

  void add_input(const std::string& path) {
    inputs.emplace_back(path, file_digest(path));
  }

  std::string digest() const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = resolved_config;
    j["seed"] = seed;
    nlohmann::json ins = nlohmann::json::array();
    for (const auto& [path, d] : inputs) ins.push_back(d);
    j["inputs"] = ins;
    return sha256_hex(j.dump());
  }

  nlohmann::json to_json() const {
    nlohmann::json ins = nlohmann::json::array();
    for (const auto& [path, d] : inputs) {
      ins.push_back({{"path", path}, {"sha256", d}});
    }
    return {{"command", command},
            {"config", resolved_config},
            {"seed", seed},
            {"inputs", ins},
            {"outputs", outputs},
            {"digest", digest()},
            {"created_at", created_at},
            {"wall_clock_seconds", wall_clock_seconds}};
  }

  void stamp_time() {
    const std::time_t now =
        std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    created_at = buf;
  }

  void write(const std::filesystem::path& dir) const {
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) {
      throw IoError(strcat("cannot write manifest under ", dir.string()));
    }
    out << to_json().dump(2) << "\n";
  }
};

}  // namespace lorb

#endif  // LORB_MANIFEST_HPP_
