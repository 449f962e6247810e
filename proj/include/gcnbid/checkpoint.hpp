#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcnbid/nn.hpp"
#include "gcnbid/rl.hpp"

namespace gcnbid::checkpoint {

inline constexpr const char* kFormat = "gcnbid-checkpoint";
inline constexpr int kVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json network_to_json(const nn::Network& net);
nn::Network network_from_json(const nlohmann::json& j);

nlohmann::json agent_to_json(const rl::Agent& agent);
/// The replay buffer is not persisted; a restored agent starts with an empty one.
rl::Agent agent_from_json(const nlohmann::json& j);

struct Checkpoint {
  rl::Method method = rl::Method::gcn;
  std::string scenario;
  std::vector<rl::Agent> agents;
};

std::string dump(const Checkpoint& ckpt);
/// Throws CheckpointError on any malformed or mismatched content.
Checkpoint parse(const std::string& text);

void save(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load(const std::filesystem::path& path);

}  // namespace gcnbid::checkpoint
