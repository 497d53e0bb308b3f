#pragma once
// Scenario files: one JSON document describing plant, synthesis, realization,
// architecture, disturbance program, and simulation length. Parsing reports
// schema violations with the offending path and field. Every derived output
// embeds the FNV-1a hash of the raw scenario bytes.

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sls/json_io.hpp"
#include "sls/lti.hpp"
#include "sls/synthesis.hpp"

namespace sls {

class ScenarioError : public std::runtime_error {
 public:
  ScenarioError(const std::string& path, const std::string& what)
      : std::runtime_error("scenario error at " + path + ": " + what) {}
};

inline uint64_t fnv1a_hash(const std::string& bytes) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hash_hex(uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// Chain topology: tridiagonal A, diagonal B.
inline LtiSystem make_chain_plant(int n, double a_diag, double a_off, double b_diag) {
  detail::require(n >= 1, "chain generator: n must be positive");
  MatrixXd A = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    A(i, i) = a_diag;
    if (i + 1 < n) {
      A(i, i + 1) = a_off;
      A(i + 1, i) = a_off;
    }
  }
  return LtiSystem::state_feedback_plant(A, MatrixXd::Identity(n, n) * b_diag);
}

// w x h lattice: 4-neighbor coupling, diagonal B.
inline LtiSystem make_grid_plant(int w, int h, double a_diag, double a_off, double b_diag) {
  detail::require(w >= 1 && h >= 1, "grid generator: dimensions must be positive");
  const int n = w * h;
  MatrixXd A = MatrixXd::Zero(n, n);
  auto at = [&](int r, int c) { return r * w + c; };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      A(at(r, c), at(r, c)) = a_diag;
      if (c + 1 < w) A(at(r, c), at(r, c + 1)) = A(at(r, c + 1), at(r, c)) = a_off;
      if (r + 1 < h) A(at(r, c), at(r + 1, c)) = A(at(r + 1, c), at(r, c)) = a_off;
    }
  return LtiSystem::state_feedback_plant(A, MatrixXd::Identity(n, n) * b_diag);
}

struct DisturbanceProgram {
  enum class Kind { impulse, step, random };
  Kind kind = Kind::impulse;
  std::string channel = "d_x";  // impulse/step target channel
  int index = 0;
  long time = 0;
  double amplitude = 1.0;
  uint64_t seed = 0;                              // random kind
  std::vector<std::string> channels = {"d_x"};    // random kind targets
};

// Platform-independent uniform draw in [-amplitude, amplitude].
inline double uniform_symmetric(std::mt19937_64& gen, double amplitude) {
  const double canon = static_cast<double>(gen() >> 11) * 0x1.0p-53;
  return (2.0 * canon - 1.0) * amplitude;
}

struct DisturbanceSequences {
  std::vector<VectorXd> d_x, d_y;
};

inline DisturbanceSequences generate_disturbances(const DisturbanceProgram& p, const LtiSystem& sys, int t_sim) {
  DisturbanceSequences out;
  out.d_x.assign(static_cast<size_t>(t_sim), VectorXd::Zero(sys.nx()));
  out.d_y.assign(static_cast<size_t>(t_sim), VectorXd::Zero(sys.ny()));
  auto channel_dim = [&](const std::string& ch) { return ch == "d_x" ? sys.nx() : sys.ny(); };
  auto channel_of = [&](const std::string& ch) -> std::vector<VectorXd>& {
    return ch == "d_x" ? out.d_x : out.d_y;
  };
  switch (p.kind) {
    case DisturbanceProgram::Kind::impulse: {
      detail::require(p.index >= 0 && p.index < channel_dim(p.channel), "impulse index out of range");
      if (p.time >= 0 && p.time < t_sim) channel_of(p.channel)[static_cast<size_t>(p.time)](p.index) = p.amplitude;
      break;
    }
    case DisturbanceProgram::Kind::step: {
      detail::require(p.index >= 0 && p.index < channel_dim(p.channel), "step index out of range");
      for (long t = std::max(p.time, 0l); t < t_sim; ++t)
        channel_of(p.channel)[static_cast<size_t>(t)](p.index) = p.amplitude;
      break;
    }
    case DisturbanceProgram::Kind::random: {
      std::mt19937_64 gen(p.seed);
      const bool want_dx = std::find(p.channels.begin(), p.channels.end(), "d_x") != p.channels.end();
      const bool want_dy = std::find(p.channels.begin(), p.channels.end(), "d_y") != p.channels.end();
      for (int t = 0; t < t_sim; ++t) {
        if (want_dx)
          for (int i = 0; i < sys.nx(); ++i) out.d_x[static_cast<size_t>(t)](i) = uniform_symmetric(gen, p.amplitude);
        if (want_dy)
          for (int i = 0; i < sys.ny(); ++i) out.d_y[static_cast<size_t>(t)](i) = uniform_symmetric(gen, p.amplitude);
      }
      break;
    }
  }
  return out;
}

struct Scenario {
  LtiSystem plant;
  bool output_feedback = false;
  std::string route = "sf_h2";  // sf_h2 | of_quadruple | of_youla
  SynthesisSpec spec;
  ClosedLoopWeights youla;
  std::string realization = "sf_simplified";
  std::string architecture = "sf.centralized";
  DisturbanceProgram disturbance;
  int t_sim = 100;
  uint64_t hash = 0;
  std::string hash_hex_str;
};

namespace detail {

template <typename T>
T get_field(const json& j, const std::string& path, const std::string& key) {
  if (!j.contains(key)) throw ScenarioError(path, "missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ScenarioError(path + "." + key, e.what());
  }
}

template <typename T>
T get_or(const json& j, const std::string& path, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ScenarioError(path + "." + key, e.what());
  }
}

}  // namespace detail

inline Scenario parse_scenario(const std::string& raw) {
  json j;
  try {
    j = json::parse(raw);
  } catch (const json::exception& e) {
    throw ScenarioError("$", e.what());
  }
  Scenario sc;
  sc.hash = fnv1a_hash(raw);
  sc.hash_hex_str = hash_hex(sc.hash);

  if (!j.contains("plant")) throw ScenarioError("$", "missing field 'plant'");
  const json& plant = j.at("plant");
  if (plant.contains("generator")) {
    const json& g = plant.at("generator");
    const auto kind = detail::get_field<std::string>(g, "plant.generator", "kind");
    const double a_diag = detail::get_field<double>(g, "plant.generator", "a_diag");
    const double a_off = detail::get_field<double>(g, "plant.generator", "a_off");
    const double b_diag = detail::get_or<double>(g, "plant.generator", "b_diag", 1.0);
    if (kind == "chain") {
      sc.plant = make_chain_plant(detail::get_field<int>(g, "plant.generator", "n"), a_diag, a_off, b_diag);
    } else if (kind == "grid") {
      sc.plant = make_grid_plant(detail::get_field<int>(g, "plant.generator", "w"),
                                 detail::get_field<int>(g, "plant.generator", "h"), a_diag, a_off, b_diag);
    } else {
      throw ScenarioError("plant.generator.kind", "unknown generator '" + kind + "'");
    }
  } else if (plant.contains("explicit")) {
    try {
      sc.plant = system_from_json(plant.at("explicit"), "plant.explicit");
    } catch (const std::invalid_argument& e) {
      throw ScenarioError("plant.explicit", e.what());
    }
  } else {
    throw ScenarioError("plant", "needs either 'generator' or 'explicit'");
  }

  if (plant.contains("c_rows")) {
    const auto rows = detail::get_field<std::vector<int>>(plant, "plant", "c_rows");
    MatrixXd C = MatrixXd::Zero(static_cast<long>(rows.size()), sc.plant.nx());
    for (size_t r = 0; r < rows.size(); ++r) {
      if (rows[r] < 0 || rows[r] >= sc.plant.nx())
        throw ScenarioError("plant.c_rows[" + std::to_string(r) + "]", "row index out of range");
      C(static_cast<long>(r), rows[r]) = 1.0;
    }
    sc.plant = LtiSystem::output_feedback_plant(sc.plant.A, sc.plant.B, C,
                                                MatrixXd::Zero(static_cast<long>(rows.size()), sc.plant.nu()));
  }
  sc.output_feedback = !sc.plant.is_state_feedback();

  if (!j.contains("synthesis")) throw ScenarioError("$", "missing field 'synthesis'");
  const json& syn = j.at("synthesis");
  sc.route = detail::get_or<std::string>(syn, "synthesis", "route", sc.output_feedback ? "of_youla" : "sf_h2");
  if (sc.route != "sf_h2" && sc.route != "of_quadruple" && sc.route != "of_youla")
    throw ScenarioError("synthesis.route", "unknown route '" + sc.route + "'");
  if (sc.route == "sf_h2" && sc.output_feedback)
    throw ScenarioError("synthesis.route", "sf_h2 needs a state-feedback plant (no c_rows)");
  const int T = detail::get_field<int>(syn, "synthesis", "horizon");
  if (T < 1) throw ScenarioError("synthesis.horizon", "must be >= 1");
  sc.spec = SynthesisSpec::h2(T, sc.plant.nx(), sc.plant.nu());
  sc.spec.q_sqrt *= std::sqrt(detail::get_or<double>(syn, "synthesis", "q_weight", 1.0));
  sc.spec.r_sqrt *= std::sqrt(detail::get_or<double>(syn, "synthesis", "r_weight", 1.0));
  const auto terminal = detail::get_or<std::string>(syn, "synthesis", "terminal", "hard");
  if (terminal == "soft") {
    sc.spec.terminal = SynthesisSpec::Terminal::soft;
    sc.spec.soft_penalty = detail::get_or<double>(syn, "synthesis", "soft_penalty", 10.0);
  } else if (terminal != "hard") {
    throw ScenarioError("synthesis.terminal", "expected 'hard' or 'soft'");
  }
  if (syn.contains("bandwidth")) {
    const int d = detail::get_field<int>(syn, "synthesis", "bandwidth");
    if (d < 0) throw ScenarioError("synthesis.bandwidth", "must be >= 0");
    sc.spec.pattern = SparsityPattern::banded_sf(sc.plant.nx(), sc.plant.nu(), d);
  }
  if (syn.contains("youla")) {
    const json& y = syn.at("youla");
    sc.youla.w_xx = detail::get_or<double>(y, "synthesis.youla", "w_xx", 1.0);
    sc.youla.w_xy = detail::get_or<double>(y, "synthesis.youla", "w_xy", 0.0);
    sc.youla.w_ux = detail::get_or<double>(y, "synthesis.youla", "w_ux", 0.0);
    sc.youla.w_uy = detail::get_or<double>(y, "synthesis.youla", "w_uy", 0.0);
    sc.youla.eval_horizon = detail::get_or<int>(y, "synthesis.youla", "eval_horizon", 0);
  } else {
    sc.youla.w_xx = 1.0;
    sc.youla.w_ux = 0.1;
  }

  sc.realization = detail::get_or<std::string>(j, "$", "realization",
                                               sc.output_feedback ? "of_simplified" : "sf_simplified");
  if (sc.realization != "sf_standard" && sc.realization != "sf_simplified" &&
      sc.realization != "of_standard" && sc.realization != "of_simplified")
    throw ScenarioError("realization", "unknown realization '" + sc.realization + "'");

  sc.architecture = detail::get_or<std::string>(j, "$", "architecture",
                                                sc.output_feedback ? "of.centralized" : "sf.centralized");

  if (j.contains("disturbance")) {
    const json& d = j.at("disturbance");
    const auto kind = detail::get_field<std::string>(d, "disturbance", "kind");
    if (kind == "impulse") {
      sc.disturbance.kind = DisturbanceProgram::Kind::impulse;
    } else if (kind == "step") {
      sc.disturbance.kind = DisturbanceProgram::Kind::step;
    } else if (kind == "random") {
      sc.disturbance.kind = DisturbanceProgram::Kind::random;
    } else {
      throw ScenarioError("disturbance.kind", "expected impulse, step, or random");
    }
    sc.disturbance.channel = detail::get_or<std::string>(d, "disturbance", "channel", "d_x");
    if (sc.disturbance.channel != "d_x" && sc.disturbance.channel != "d_y")
      throw ScenarioError("disturbance.channel", "expected 'd_x' or 'd_y'");
    sc.disturbance.index = detail::get_or<int>(d, "disturbance", "index", 0);
    sc.disturbance.time = detail::get_or<long>(d, "disturbance", "time", 0);
    sc.disturbance.amplitude = detail::get_or<double>(d, "disturbance", "amplitude", 1.0);
    sc.disturbance.seed = detail::get_or<uint64_t>(d, "disturbance", "seed", 0);
    sc.disturbance.channels =
        detail::get_or<std::vector<std::string>>(d, "disturbance", "channels", {"d_x"});
    for (const auto& ch : sc.disturbance.channels)
      if (ch != "d_x" && ch != "d_y") throw ScenarioError("disturbance.channels", "expected 'd_x' or 'd_y'");
  }

  sc.t_sim = detail::get_or<int>(j, "$", "t_sim", 100);
  if (sc.t_sim < 1) throw ScenarioError("t_sim", "must be >= 1");
  return sc;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ScenarioError(path, "cannot open scenario file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

}  // namespace sls
