#include "swarm_dmpc/transport.hpp"

#include <algorithm>
#include <stdexcept>

#include <json.hpp>

namespace swarm_dmpc {

namespace {

const char* kind_name(Message::Kind kind) {
  return kind == Message::Kind::TrajectoryShare ? "trajectory_share" : "edge_result";
}

Message::Kind kind_from_name(const std::string& name) {
  if (name == "trajectory_share") return Message::Kind::TrajectoryShare;
  if (name == "edge_result") return Message::Kind::EdgeResult;
  throw std::invalid_argument("unknown message kind: " + name);
}

}  // namespace

std::string serialize_message(const Message& msg) {
  nlohmann::json j;
  j["kind"] = kind_name(msg.kind);
  j["from"] = msg.from;
  j["to"] = msg.to;
  j["iteration"] = msg.iteration;
  j["cycle"] = msg.cycle;
  if (msg.kind == Message::Kind::EdgeResult) {
    j["edge"] = {msg.edge_i, msg.edge_j};
  }
  j["payload"] = std::vector<double>(msg.payload.data(), msg.payload.data() + msg.payload.size());
  const std::string body = j.dump();
  return std::to_string(body.size()) + "\n" + body + "\n";
}

Message deserialize_message(std::string_view buffer, size_t& offset) {
  const size_t eol = buffer.find('\n', offset);
  if (eol == std::string_view::npos) throw std::invalid_argument("missing length prefix");
  const size_t length = std::stoul(std::string(buffer.substr(offset, eol - offset)));
  if (eol + 1 + length > buffer.size()) throw std::invalid_argument("truncated record");
  const auto j = nlohmann::json::parse(buffer.substr(eol + 1, length));
  offset = eol + 1 + length + 1;  // skip trailing newline

  Message msg;
  msg.kind = kind_from_name(j.at("kind").get<std::string>());
  msg.from = j.at("from").get<int>();
  msg.to = j.at("to").get<int>();
  msg.iteration = j.at("iteration").get<int>();
  msg.cycle = j.at("cycle").get<long>();
  if (j.contains("edge")) {
    msg.edge_i = j["edge"][0].get<int>();
    msg.edge_j = j["edge"][1].get<int>();
  }
  const auto data = j.at("payload").get<std::vector<double>>();
  msg.payload = Eigen::Map<const Eigen::VectorXd>(data.data(), data.size());
  return msg;
}

DirectTransport::DirectTransport(int num_agents) {
  boxes_.reserve(num_agents);
  for (int i = 0; i < num_agents; ++i) boxes_.push_back(std::make_unique<Mailbox>());
}

void DirectTransport::send(Message msg) {
  if (msg.to < 0 || msg.to >= static_cast<int>(boxes_.size())) {
    throw std::invalid_argument("message recipient out of range");
  }
  auto& box = *boxes_[msg.to];
  std::lock_guard<std::mutex> lock(box.mu);
  box.messages.push_back(std::move(msg));
}

std::vector<Message> DirectTransport::receive(int agent, Message::Kind kind, int iteration) {
  auto& box = *boxes_.at(agent);
  std::vector<Message> out;
  {
    std::lock_guard<std::mutex> lock(box.mu);
    auto it = box.messages.begin();
    while (it != box.messages.end()) {
      if (it->kind == kind && it->iteration == iteration) {
        out.push_back(std::move(*it));
        it = box.messages.erase(it);
      } else {
        ++it;
      }
    }
  }
  std::sort(out.begin(), out.end(),
            [](const Message& a, const Message& b) { return a.from < b.from; });
  return out;
}

}  // namespace swarm_dmpc
