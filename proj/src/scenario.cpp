#include "swarm_dmpc/scenario.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace swarm_dmpc {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& where, std::vector<std::string>& errors) {
  if (!j.is_object()) return;
  for (const auto& [key, value] : j.items()) {
    if (allowed.find(key) == allowed.end()) {
      errors.push_back("unknown key '" + key + "' in " + where);
    }
  }
}

Eigen::Vector3d vec3(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) {
    throw std::invalid_argument(where + " must be an array of 3 numbers");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Eigen::Vector2d vec2(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) {
    throw std::invalid_argument(where + " must be an array of 2 numbers");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

const char* to_string(SolverMode mode) {
  switch (mode) {
    case SolverMode::Distributed: return "distributed";
    case SolverMode::Centralized: return "centralized";
    case SolverMode::Decoupled: return "decoupled";
  }
  return "unknown";
}

const char* to_string(EdgeCbfMode mode) {
  return mode == EdgeCbfMode::AllSteps ? "all_steps" : "first_step";
}

Scenario scenario_from_json(const json& j) {
  std::vector<std::string> errors;
  check_keys(j,
             {"name", "horizon", "ts", "duration", "seed", "agents", "obstacles",
              "graph", "weights", "safety", "admm", "bounds", "qp", "edge_cbf",
              "solver", "obstacle_activation_radius", "goal_tolerance",
              "disturbances"},
             "scenario", errors);

  Scenario s;
  try {
    s.name = j.value("name", std::string("unnamed"));
    s.horizon = j.value("horizon", 50);
    s.ts = j.value("ts", 0.1);
    s.duration = j.value("duration", 100L);
    s.seed = j.value("seed", 1u);

    if (!j.contains("agents") || !j["agents"].is_array() || j["agents"].empty()) {
      errors.push_back("scenario needs a non-empty 'agents' array");
    } else {
      for (size_t a = 0; a < j["agents"].size(); ++a) {
        const json& ja = j["agents"][a];
        check_keys(ja, {"start", "goal"}, "agents[" + std::to_string(a) + "]", errors);
        const Eigen::Vector3d start = vec3(ja.at("start"), "agent start");
        const Eigen::Vector3d goal = vec3(ja.at("goal"), "agent goal");
        s.agents.emplace_back(AgentState::from_vec(start), AgentState::from_vec(goal));
      }
    }

    for (const json& jo : j.value("obstacles", json::array())) {
      s.obstacles.push_back(Obstacle{vec2(jo, "obstacle")});
    }

    if (!j.contains("graph") || (j["graph"].is_string() && j["graph"] == "complete")) {
      s.graph = InteractionGraph::complete(std::max<int>(1, s.num_agents()));
    } else if (j["graph"].is_object() && j["graph"].contains("edges")) {
      check_keys(j["graph"], {"edges"}, "graph", errors);
      std::vector<std::pair<int, int>> edges;
      for (const json& je : j["graph"]["edges"]) {
        edges.emplace_back(je.at(0).get<int>(), je.at(1).get<int>());
      }
      s.graph = InteractionGraph::from_edges(std::max<int>(1, s.num_agents()), edges);
    } else {
      errors.push_back("graph must be \"complete\" or {\"edges\": [[i,j],...]}");
    }

    if (j.contains("weights")) {
      const json& jw = j["weights"];
      check_keys(jw, {"Q", "R", "P", "phi"}, "weights", errors);
      if (jw.contains("Q")) s.weights.Q = vec3(jw["Q"], "weights.Q").asDiagonal();
      if (jw.contains("R")) s.weights.R = vec2(jw["R"], "weights.R").asDiagonal();
      if (jw.contains("P")) {
        s.weights.P = vec3(jw["P"], "weights.P").asDiagonal();
      } else if (jw.contains("Q")) {
        s.weights.P = 10.0 * s.weights.Q;
      }
      s.weights.phi_weight = jw.value("phi", 5.0);
    }

    if (j.contains("safety")) {
      check_keys(j["safety"], {"d_th", "alpha"}, "safety", errors);
      s.safety.d_th = j["safety"].value("d_th", 0.5);
      s.safety.alpha_slope = j["safety"].value("alpha", 0.3);
    }

    if (j.contains("admm")) {
      const json& ja = j["admm"];
      check_keys(ja, {"rho", "max_iter", "residual_stop", "reset_duals_each_cycle"},
                 "admm", errors);
      s.admm.rho = ja.value("rho", 20.0);
      s.admm.max_admm_iter = ja.value("max_iter", 15);
      s.admm.reset_duals_each_cycle = ja.value("reset_duals_each_cycle", false);
      if (ja.contains("residual_stop") && !ja["residual_stop"].is_null()) {
        check_keys(ja["residual_stop"], {"eps_primal", "eps_dual"}, "admm.residual_stop",
                   errors);
        s.admm.residual_stop = {ja["residual_stop"].value("eps_primal", 1e-3),
                                ja["residual_stop"].value("eps_dual", 1e-3)};
      }
    }

    if (j.contains("bounds")) {
      const json& jb = j["bounds"];
      check_keys(jb, {"v", "omega"}, "bounds", errors);
      if (jb.contains("v")) {
        const Eigen::Vector2d v = vec2(jb["v"], "bounds.v");
        s.bounds.v_min = v[0];
        s.bounds.v_max = v[1];
      }
      if (jb.contains("omega")) {
        const Eigen::Vector2d w = vec2(jb["omega"], "bounds.omega");
        s.bounds.omega_min = w[0];
        s.bounds.omega_max = w[1];
      }
    }

    if (j.contains("qp")) {
      const json& jq = j["qp"];
      check_keys(jq, {"eps_abs", "eps_rel", "max_iter"}, "qp", errors);
      s.qp.eps_abs = jq.value("eps_abs", 1e-6);
      s.qp.eps_rel = jq.value("eps_rel", 1e-6);
      s.qp.max_iter = jq.value("max_iter", 200);
    }

    const std::string edge_cbf = j.value("edge_cbf", std::string("all_steps"));
    if (edge_cbf == "all_steps") {
      s.edge_cbf = EdgeCbfMode::AllSteps;
    } else if (edge_cbf == "first_step") {
      s.edge_cbf = EdgeCbfMode::FirstStep;
    } else {
      errors.push_back("edge_cbf must be all_steps or first_step");
    }

    const std::string solver = j.value("solver", std::string("distributed"));
    if (solver == "distributed") {
      s.solver = SolverMode::Distributed;
    } else if (solver == "centralized") {
      s.solver = SolverMode::Centralized;
    } else if (solver == "decoupled") {
      s.solver = SolverMode::Decoupled;
    } else {
      errors.push_back("solver must be distributed, centralized or decoupled");
    }

    s.obstacle_activation_radius = j.value("obstacle_activation_radius", 3.0);

    if (j.contains("goal_tolerance")) {
      check_keys(j["goal_tolerance"], {"position", "heading"}, "goal_tolerance", errors);
      s.goal_tolerance.position = j["goal_tolerance"].value("position", 0.1);
      s.goal_tolerance.heading = j["goal_tolerance"].value("heading", 0.2);
    }

    for (const json& jd : j.value("disturbances", json::array())) {
      check_keys(jd, {"agent", "start_cycle", "end_cycle", "delta"}, "disturbances[]",
                 errors);
      PushEvent push;
      push.agent = jd.at("agent").get<int>();
      push.start_cycle = jd.at("start_cycle").get<long>();
      push.end_cycle = jd.at("end_cycle").get<long>();
      push.delta = vec3(jd.at("delta"), "disturbance delta");
      s.disturbances.push_back(push);
    }
  } catch (const json::exception& e) {
    errors.push_back(std::string("malformed scenario: ") + e.what());
  } catch (const std::invalid_argument& e) {
    errors.push_back(e.what());
  }

  if (!errors.empty()) {
    std::ostringstream msg;
    msg << "invalid scenario:";
    for (const auto& e : errors) msg << "\n  - " << e;
    throw std::invalid_argument(msg.str());
  }
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open scenario file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("scenario JSON parse error in " + path + ": " + e.what());
  }
  return scenario_from_json(j);
}

nlohmann::json scenario_to_json(const Scenario& s) {
  json j;
  j["name"] = s.name;
  j["horizon"] = s.horizon;
  j["ts"] = s.ts;
  j["duration"] = s.duration;
  j["seed"] = s.seed;
  j["agents"] = json::array();
  for (const auto& [start, goal] : s.agents) {
    j["agents"].push_back({{"start", {start.px, start.py, start.theta}},
                           {"goal", {goal.px, goal.py, goal.theta}}});
  }
  j["obstacles"] = json::array();
  for (const auto& o : s.obstacles) j["obstacles"].push_back({o.center.x(), o.center.y()});
  json edges = json::array();
  for (const auto& [a, b] : s.graph.edges) edges.push_back({a, b});
  j["graph"] = {{"edges", edges}};
  j["weights"] = {{"Q", {s.weights.Q(0, 0), s.weights.Q(1, 1), s.weights.Q(2, 2)}},
                  {"R", {s.weights.R(0, 0), s.weights.R(1, 1)}},
                  {"P", {s.weights.P(0, 0), s.weights.P(1, 1), s.weights.P(2, 2)}},
                  {"phi", s.weights.phi_weight}};
  j["safety"] = {{"d_th", s.safety.d_th}, {"alpha", s.safety.alpha_slope}};
  j["admm"] = {{"rho", s.admm.rho},
               {"max_iter", s.admm.max_admm_iter},
               {"reset_duals_each_cycle", s.admm.reset_duals_each_cycle}};
  if (s.admm.residual_stop.has_value()) {
    j["admm"]["residual_stop"] = {{"eps_primal", s.admm.residual_stop->first},
                                  {"eps_dual", s.admm.residual_stop->second}};
  } else {
    j["admm"]["residual_stop"] = nullptr;
  }
  j["bounds"] = {{"v", {s.bounds.v_min, s.bounds.v_max}},
                 {"omega", {s.bounds.omega_min, s.bounds.omega_max}}};
  j["qp"] = {{"eps_abs", s.qp.eps_abs}, {"eps_rel", s.qp.eps_rel}, {"max_iter", s.qp.max_iter}};
  j["edge_cbf"] = to_string(s.edge_cbf);
  j["solver"] = to_string(s.solver);
  j["obstacle_activation_radius"] = s.obstacle_activation_radius;
  j["goal_tolerance"] = {{"position", s.goal_tolerance.position},
                         {"heading", s.goal_tolerance.heading}};
  j["disturbances"] = json::array();
  for (const auto& d : s.disturbances) {
    j["disturbances"].push_back({{"agent", d.agent},
                                 {"start_cycle", d.start_cycle},
                                 {"end_cycle", d.end_cycle},
                                 {"delta", {d.delta[0], d.delta[1], d.delta[2]}}});
  }
  return j;
}

std::vector<std::string> validate_scenario(const Scenario& s) {
  std::vector<std::string> v;
  auto fail = [&](const std::string& msg) { v.push_back(msg); };

  if (s.num_agents() < 1) fail("at least one agent required");
  if (s.horizon < 1) fail("horizon must be >= 1");
  if (!(s.ts > 0.0)) fail("ts must be positive");
  if (s.duration < 1) fail("duration must be >= 1");
  if (!(s.safety.d_th > 0.0)) fail("d_th must be positive");
  if (!(s.safety.alpha_slope > 0.0 && s.safety.alpha_slope < 1.0)) {
    fail("alpha must lie in (0, 1)");
  }
  if (!(s.admm.rho > 0.0)) fail("rho must be positive");
  if (s.admm.max_admm_iter < 1) fail("admm.max_iter must be >= 1");
  if (!(s.weights.phi_weight > 0.0)) fail("phi must be positive");
  for (int d = 0; d < 3; ++d) {
    if (!(s.weights.Q(d, d) > 0.0)) fail("Q must be positive definite");
    if (!(s.weights.P(d, d) > 0.0)) fail("P must be positive definite");
  }
  for (int d = 0; d < 2; ++d) {
    if (!(s.weights.R(d, d) > 0.0)) fail("R must be positive definite");
  }
  if (!(s.bounds.v_min < s.bounds.v_max)) fail("bounds.v must satisfy min < max");
  if (!(s.bounds.omega_min < s.bounds.omega_max)) fail("bounds.omega must satisfy min < max");
  if (!(s.qp.eps_abs > 0.0) || !(s.qp.eps_rel > 0.0)) fail("qp tolerances must be positive");
  if (s.qp.max_iter < 1) fail("qp.max_iter must be >= 1");
  if (s.graph.num_nodes != s.num_agents()) fail("graph node count differs from agent count");

  for (int a = 0; a < s.num_agents(); ++a) {
    for (int b = a + 1; b < s.num_agents(); ++b) {
      const double dist =
          (s.agents[a].first.position() - s.agents[b].first.position()).norm();
      if (dist < s.safety.d_th) {
        std::ostringstream msg;
        msg << "initial inter-agent distance " << dist << " between agents " << a
            << " and " << b << " is below d_th=" << s.safety.d_th;
        fail(msg.str());
      }
    }
    for (size_t o = 0; o < s.obstacles.size(); ++o) {
      const double dist = (s.agents[a].first.position() - s.obstacles[o].center).norm();
      if (dist < s.safety.d_th) {
        std::ostringstream msg;
        msg << "agent " << a << " starts at distance " << dist << " from obstacle " << o
            << ", below d_th=" << s.safety.d_th;
        fail(msg.str());
      }
    }
  }

  for (const auto& d : s.disturbances) {
    if (d.agent < 0 || d.agent >= s.num_agents()) fail("disturbance agent out of range");
    if (d.start_cycle > d.end_cycle) fail("disturbance start_cycle exceeds end_cycle");
    if (!d.delta.allFinite()) fail("disturbance delta must be finite");
  }
  return v;
}

void apply_override(nlohmann::json& j, const std::string& dotted_key,
                    const std::string& value) {
  json* at = &j;
  size_t begin = 0;
  while (true) {
    const size_t dot = dotted_key.find('.', begin);
    const std::string part = dotted_key.substr(begin, dot - begin);
    if (part.empty()) throw std::invalid_argument("empty key segment in " + dotted_key);
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, false);
      (*at)[part] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    at = &(*at)[part];
    begin = dot + 1;
  }
}

}  // namespace swarm_dmpc
