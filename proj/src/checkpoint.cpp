#include "gcnbid/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace gcnbid::checkpoint {

using nlohmann::json;

namespace {

std::string activation_name(nn::Activation a) { return a == nn::Activation::relu ? "relu" : "identity"; }

nn::Activation parse_activation(const std::string& s) {
  if (s == "relu") return nn::Activation::relu;
  if (s == "identity") return nn::Activation::identity;
  throw CheckpointError(fmt::format("unknown activation '{}'", s));
}

json matrix_to_json(const nn::Tensor2& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()},
          {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

nn::Tensor2 matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<nn::Index>();
  const auto cols = j.at("cols").get<nn::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size())
    throw CheckpointError(fmt::format("matrix {}x{} with {} values", rows, cols, data.size()));
  nn::Tensor2 m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

}  // namespace

json network_to_json(const nn::Network& net) {
  json j{{"gcn", json::array()}, {"head", json::array()}};
  for (const auto& l : net.gcn_layers)
    j["gcn"].push_back({{"activation", activation_name(l.activation)}, {"weights", matrix_to_json(l.weights)}});
  for (const auto& l : net.head_layers) {
    nn::Tensor2 bias = l.bias;
    j["head"].push_back({{"activation", activation_name(l.activation)},
                         {"weights", matrix_to_json(l.weights)},
                         {"bias", matrix_to_json(bias)}});
  }
  return j;
}

nn::Network network_from_json(const json& j) {
  nn::Network net;
  for (const auto& l : j.at("gcn"))
    net.gcn_layers.push_back({matrix_from_json(l.at("weights")), parse_activation(l.at("activation"))});
  for (const auto& l : j.at("head")) {
    nn::Tensor2 bias = matrix_from_json(l.at("bias"));
    if (bias.rows() != 1) throw CheckpointError("bias must be a single row");
    net.head_layers.push_back(
        {matrix_from_json(l.at("weights")), bias.row(0), parse_activation(l.at("activation"))});
  }
  try {
    net.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(e.what());
  }
  return net;
}

json agent_to_json(const rl::Agent& a) {
  std::ostringstream rng;
  rng << a.rng;
  return {{"id", a.id},
          {"k_max", a.k_max},
          {"method", rl::to_string(a.method)},
          {"gamma", a.gamma},
          {"lr_critic", a.lr_critic},
          {"lr_actor", a.lr_actor},
          {"batch_size", a.batch_size},
          {"buffer_capacity", a.buffer.capacity()},
          {"rng_state", rng.str()},
          {"actor", network_to_json(a.actor)},
          {"critic", network_to_json(a.critic)},
          {"target_actor", network_to_json(a.target_actor)},
          {"target_critic", network_to_json(a.target_critic)}};
}

rl::Agent agent_from_json(const json& j) {
  rl::Agent a;
  a.id = j.at("id").get<int>();
  a.k_max = j.at("k_max").get<double>();
  a.method = rl::parse_method(j.at("method").get<std::string>());
  a.gamma = j.at("gamma").get<double>();
  a.lr_critic = j.at("lr_critic").get<double>();
  a.lr_actor = j.at("lr_actor").get<double>();
  a.batch_size = j.at("batch_size").get<std::size_t>();
  if (!(a.k_max >= 1.0) || !(a.gamma >= 0.0 && a.gamma < 1.0) || !(a.lr_critic > 0.0) ||
      !(a.lr_actor > 0.0) || a.batch_size == 0)
    throw CheckpointError("agent hyperparameters out of range");
  a.buffer = rl::ReplayBuffer(j.at("buffer_capacity").get<std::size_t>());
  std::istringstream rng(j.at("rng_state").get<std::string>());
  rng >> a.rng;
  if (!rng) throw CheckpointError("bad rng state");
  a.actor = network_from_json(j.at("actor"));
  a.critic = network_from_json(j.at("critic"));
  a.target_actor = network_from_json(j.at("target_actor"));
  a.target_critic = network_from_json(j.at("target_critic"));
  if (a.actor.parameter_count() != a.target_actor.parameter_count() ||
      a.critic.parameter_count() != a.target_critic.parameter_count())
    throw CheckpointError("target network shapes differ from online networks");
  return a;
}

std::string dump(const Checkpoint& ckpt) {
  json j{{"format", kFormat},
         {"version", kVersion},
         {"method", rl::to_string(ckpt.method)},
         {"scenario", ckpt.scenario},
         {"agents", json::array()}};
  for (const auto& a : ckpt.agents) j["agents"].push_back(agent_to_json(a));
  return j.dump(1) + "\n";
}

Checkpoint parse(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != kFormat) throw CheckpointError("not a gcnbid checkpoint");
    if (j.at("version").get<int>() != kVersion)
      throw CheckpointError(fmt::format("unsupported checkpoint version {}", j.at("version").dump()));
    Checkpoint c;
    c.method = rl::parse_method(j.at("method").get<std::string>());
    c.scenario = j.value("scenario", "");
    for (const auto& a : j.at("agents")) c.agents.push_back(agent_from_json(a));
    if (c.agents.empty()) throw CheckpointError("checkpoint holds no agents");
    for (const auto& a : c.agents)
      if (a.method != c.method) throw CheckpointError("agent method differs from checkpoint method");
    return c;
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(fmt::format("corrupted checkpoint: {}", e.what()));
  }
}

void save(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(fmt::format("cannot write {}", path.string()));
  out << dump(ckpt);
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(fmt::format("cannot open checkpoint {}", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

}  // namespace gcnbid::checkpoint
