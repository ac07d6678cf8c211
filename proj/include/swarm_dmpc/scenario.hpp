#ifndef SWARM_DMPC_SCENARIO_HPP
#define SWARM_DMPC_SCENARIO_HPP

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "swarm_dmpc/consensus.hpp"
#include "swarm_dmpc/dynamics.hpp"
#include "swarm_dmpc/planner.hpp"
#include "swarm_dmpc/qp.hpp"
#include "swarm_dmpc/safety.hpp"

namespace swarm_dmpc {

/// Additive plant-state offset applied every cycle in [start_cycle, end_cycle].
struct PushEvent {
  int agent = 0;
  long start_cycle = 0;
  long end_cycle = 0;
  Eigen::Vector3d delta = Eigen::Vector3d::Zero();
};

enum class SolverMode { Distributed, Centralized, Decoupled };

const char* to_string(SolverMode mode);
const char* to_string(EdgeCbfMode mode);

struct GoalTolerance {
  double position = 0.1;
  double heading = 0.2;
};

/// Complete closed-loop configuration; see docs/scenario-schema.md for the
/// JSON form and defaults.
struct Scenario {
  std::string name;
  int horizon = 50;
  double ts = 0.1;
  long duration = 100;
  unsigned seed = 1;
  std::vector<std::pair<AgentState, AgentState>> agents;  // (start, goal)
  std::vector<Obstacle> obstacles;
  InteractionGraph graph;
  CostWeights weights;
  SafetyParams safety;
  AdmmConfig admm;
  InputBounds bounds;
  QpSettings qp;
  EdgeCbfMode edge_cbf = EdgeCbfMode::AllSteps;
  SolverMode solver = SolverMode::Distributed;
  double obstacle_activation_radius = 3.0;
  GoalTolerance goal_tolerance;
  std::vector<PushEvent> disturbances;

  int num_agents() const { return static_cast<int>(agents.size()); }
};

/// Parses a scenario, applying defaults for omitted fields. Unknown keys are
/// schema errors. Throws std::invalid_argument with the collected diagnostics.
Scenario scenario_from_json(const nlohmann::json& j);

/// Reads and parses a scenario file.
Scenario load_scenario(const std::string& path);

/// Effective configuration with all defaults materialized.
nlohmann::json scenario_to_json(const Scenario& s);

/// Semantic checks (initial safety, parameter ranges). Empty result = valid.
std::vector<std::string> validate_scenario(const Scenario& s);

/// Sets a dotted-path key ("admm.rho") to `value`, parsed as JSON when
/// possible and kept as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& dotted_key,
                    const std::string& value);

}  // namespace swarm_dmpc

#endif  // SWARM_DMPC_SCENARIO_HPP
