#ifndef SWARM_DMPC_TRANSPORT_HPP
#define SWARM_DMPC_TRANSPORT_HPP

#include <Eigen/Dense>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

namespace swarm_dmpc {

/// Neighbor-to-neighbor payload. TrajectoryShare carries the sender's updated
/// trajectory xi; EdgeResult carries the concatenated edge copies
/// [z^{ij,i}; z^{ij,j}] for the edge (edge_i, edge_j), edge_i < edge_j.
struct Message {
  enum class Kind { TrajectoryShare, EdgeResult };

  Kind kind = Kind::TrajectoryShare;
  int from = -1;
  int to = -1;
  int iteration = 0;
  long cycle = 0;
  int edge_i = -1;
  int edge_j = -1;
  Eigen::VectorXd payload;
};

/// Length-prefixed JSON record ("<decimal byte count>\n<json>\n"), the wire
/// format a networked transport would use.
std::string serialize_message(const Message& msg);

/// Parses one record produced by serialize_message; advances `offset` past it.
Message deserialize_message(std::string_view buffer, size_t& offset);

/// Message fabric between agents. Implementations must accept concurrent
/// senders and receivers.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(Message msg) = 0;
  /// Drains messages addressed to `agent` matching kind and iteration,
  /// sorted by sender id (deterministic regardless of arrival order).
  virtual std::vector<Message> receive(int agent, Message::Kind kind, int iteration) = 0;
};

/// In-process transport backed by per-recipient mailboxes.
class DirectTransport : public Transport {
 public:
  explicit DirectTransport(int num_agents);
  void send(Message msg) override;
  std::vector<Message> receive(int agent, Message::Kind kind, int iteration) override;

 private:
  struct Mailbox {
    std::mutex mu;
    std::vector<Message> messages;
  };
  std::vector<std::unique_ptr<Mailbox>> boxes_;
};

}  // namespace swarm_dmpc

#endif  // SWARM_DMPC_TRANSPORT_HPP
