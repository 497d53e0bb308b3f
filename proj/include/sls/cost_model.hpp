#pragma once
// Closed-form per-step flop and scalar-memory counts for the deployment
// architectures (dense worst case, published formulas reproduced verbatim),
// instrumented measurement of built networks, and reconciliation between the
// two. Where the published counts follow different conventions than the
// scalar-exact instrumentation (vector additions counted as units, the shape
// of the -Bu product, feedthrough tap counts), reconciliation surfaces the
// difference with a note instead of silently correcting either side.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sls/network.hpp"

namespace sls {

namespace cost {

// --- state feedback, dense worst case ---

inline long long centralized_sf_flops(long long nx, long long nu, long long T) {
  return (nx + nu) * (2 * nx - 1) + T * nu * (2 * nx - 1) + T + 1;
}

inline long long centralized_sf_memory(long long nx, long long nu, long long T) {
  return nx * nx + nx * nu + 2 * nx + T * nx * nu + (T + 1) * nx + nu;
}

inline long long original_sf_flops(long long nx, long long nu, long long T) {
  return (T - 1) * nx * (2 * nx - 1) + T * nu * (2 * nx - 1) + (T - 1);
}

inline long long original_sf_memory(long long nx, long long nu, long long T) {
  return (T - 1) * nx * nx + T * nx * nu + (T + 2) * nx + nu;
}

// Multipliers of every distributed state-feedback deployment: the A columns
// at the sensors, the B columns at the actuators, and the Phi_u taps.
inline long long distributed_sf_multiplier_memory(long long nx, long long nu, long long T) {
  return nx * nx + nx * nu + T * nx * nu;
}

inline long long naive_sf_sensor_buffers(long long nx) { return nx + 4; }
inline long long naive_sf_actuator_buffers(long long nx, long long T) { return (T + 1) * nx + 1; }

inline long long naive_sf_buffer_memory(long long nx, long long nu, long long T) {
  return (T + 1) * nx * nu + nx * nx + 4 * nx + nu;
}

inline long long memconserv_sf_sensor_buffers(long long nx, long long nu, long long T) {
  return nx + nu + T + 3;
}
inline long long memconserv_sf_actuator_buffers(long long nx) { return nx + 1; }

inline long long memconserv_sf_buffer_memory(long long nx, long long nu, long long T) {
  return 2 * nx * nu + nx * nx + (T + 3) * nx + nu;
}

// The published savings of the memory-conservative deployment over the naive
// one; reconciliation re-derives the same quantity from the two buffer
// formulas independently rather than trusting either expression.
inline long long distributed_sf_buffer_difference(long long nx, long long nu, long long T) {
  return (T - 1) * nx * (nu - 1);
}

// --- output feedback, dense worst case ---

inline long long original_of_flops(long long nx, long long nu, long long ny, long long T) {
  return (nu + ny) * (2 * nu - 1) + (T * nu + (T - 1) * nx) * (2 * nx - 1) +
         (nu + T * nx) * (2 * ny - 1) + 4 * T - 1;
}

inline long long original_of_memory(long long nx, long long nu, long long ny, long long T) {
  return nu * (nu + 2 * ny) + (T - 1) * (nu + nx) * (nx + ny) + (T + 1) * ny + T * nx + 2 * nu;
}

inline long long centralized_of_flops(long long nx, long long nu, long long ny, long long T) {
  return 2 * (nx + ny) * (nx + nu - 1) + T * nu * (2 * nx - 1) + T + 2;
}

inline long long centralized_of_memory(long long nx, long long nu, long long ny, long long T) {
  return T * nu * ny + (nu + nx) * (nx + ny) + (T + 1) * ny + 2 * nx + nu;
}

}  // namespace cost

struct PredictedCosts {
  std::optional<long long> flops;
  std::optional<long long> memory;
  std::map<std::string, long long> breakdown;
};

struct MeasuredCosts {
  long long flops_per_step = 0;
  long long memory = 0;
  long long multiplier_memory = 0;
  long long buffer_memory = 0;
  long long messages_per_step = 0;
  std::map<std::string, long long> per_node_flops;
};

struct ReconcileEntry {
  std::string term;
  long long predicted = 0;
  long long measured = 0;
  bool matched = false;
  std::string note;
};

struct CostReport {
  std::string architecture;
  int nx = 0, nu = 0, ny = 0, horizon = 0;
  bool single_point_of_failure = false;
  PredictedCosts predicted;
  std::optional<MeasuredCosts> measured;
  std::vector<ReconcileEntry> reconciliation;
  std::vector<std::string> notes;
};

// Literal evaluation of the published state-feedback cost formulas for one
// architecture id ("sf.centralized", "sf.original", "sf.global_state",
// "sf.naive", "sf.memconserv").
inline CostReport predict_sf_costs(const std::string& kind, int nx, int nu, int T) {
  detail::require(nx >= 1 && nu >= 1 && T >= 1, "predict_sf_costs: dimensions must be positive");
  CostReport r;
  r.architecture = kind;
  r.nx = nx;
  r.nu = nu;
  r.ny = nx;
  r.horizon = T;
  auto& b = r.predicted.breakdown;
  if (kind == "sf.centralized") {
    r.single_point_of_failure = true;
    r.predicted.flops = cost::centralized_sf_flops(nx, nu, T);
    r.predicted.memory = cost::centralized_sf_memory(nx, nu, T);
  } else if (kind == "sf.original") {
    r.single_point_of_failure = true;
    r.predicted.flops = cost::original_sf_flops(nx, nu, T);
    r.predicted.memory = cost::original_sf_memory(nx, nu, T);
  } else if (kind == "sf.global_state" || kind == "sf.naive" || kind == "sf.memconserv") {
    r.single_point_of_failure = kind == "sf.global_state";
    const long long mult = cost::distributed_sf_multiplier_memory(nx, nu, T);
    long long buffers = 0;
    if (kind == "sf.memconserv") {
      buffers = cost::memconserv_sf_buffer_memory(nx, nu, T);
      b["per_sensor_buffers"] = cost::memconserv_sf_sensor_buffers(nx, nu, T);
      b["per_actuator_buffers"] = cost::memconserv_sf_actuator_buffers(nx);
    } else {
      buffers = cost::naive_sf_buffer_memory(nx, nu, T);
      b["per_sensor_buffers"] = cost::naive_sf_sensor_buffers(nx);
      b["per_actuator_buffers"] = cost::naive_sf_actuator_buffers(nx, T);
      if (kind == "sf.global_state") buffers += nx;  // the keeper's stacked delta
    }
    b["multiplier_memory"] = mult;
    b["buffer_memory"] = buffers;
    b["buffer_difference_vs_naive"] =
        cost::naive_sf_buffer_memory(nx, nu, T) - cost::memconserv_sf_buffer_memory(nx, nu, T);
    b["buffer_difference_published"] = cost::distributed_sf_buffer_difference(nx, nu, T);
    r.predicted.memory = mult + buffers;
    r.notes.push_back("no published flop count for distributed deployments");
  } else {
    throw std::invalid_argument("predict_sf_costs: unknown architecture " + kind);
  }
  return r;
}

// Literal evaluation of the published output-feedback formulas
// ("of.centralized" and "of.original"; the distributed variants have no
// published closed forms).
inline CostReport predict_of_costs(const std::string& kind, int nx, int nu, int ny, int T) {
  detail::require(nx >= 1 && nu >= 1 && ny >= 1 && T >= 1, "predict_of_costs: dimensions must be positive");
  CostReport r;
  r.architecture = kind;
  r.nx = nx;
  r.nu = nu;
  r.ny = ny;
  r.horizon = T;
  if (kind == "of.centralized") {
    r.single_point_of_failure = true;
    r.predicted.flops = cost::centralized_of_flops(nx, nu, ny, T);
    r.predicted.memory = cost::centralized_of_memory(nx, nu, ny, T);
  } else if (kind == "of.original") {
    r.single_point_of_failure = true;
    r.predicted.flops = cost::original_of_flops(nx, nu, ny, T);
    r.predicted.memory = cost::original_of_memory(nx, nu, ny, T);
  } else if (kind == "of.global_state" || kind == "of.sensor_side" || kind == "of.actuator_side") {
    r.single_point_of_failure = kind == "of.global_state";
    r.notes.push_back("no published closed-form costs for this deployment");
  } else {
    throw std::invalid_argument("predict_of_costs: unknown architecture " + kind);
  }
  return r;
}

// Structure-only measurement: a scratch copy of the network runs zero-input
// steps, so the counters reflect topology and component inventory alone.
inline MeasuredCosts measure_costs(const Network& net, int steps = 8) {
  detail::require(steps >= 1, "measure_costs: needs at least one step");
  Network scratch = net;
  scratch.reset();
  for (long t = 0; t < steps; ++t) scratch.step(t, VectorXd::Zero(scratch.input_dim));
  MeasuredCosts m;
  m.flops_per_step = scratch.counters().flops / steps;
  m.memory = scratch.memory_scalars();
  m.multiplier_memory = scratch.multiplier_scalars();
  m.buffer_memory = scratch.buffer_scalars();
  long last_step_msgs = 0;
  for (const auto& msg : scratch.ledger())
    if (msg.t == steps - 1) ++last_step_msgs;
  m.messages_per_step = last_step_msgs;
  for (const auto& [id, flops] : scratch.counters().flops_per_node)
    m.per_node_flops[scratch.node(id).name] = flops / steps;
  return m;
}

// Term-by-term comparison of the published predictions against the
// instrumented measurement. Known convention differences are explained in the
// note field; an entry only reads matched=false without a note when the gap
// is genuinely unaccounted for.
inline std::vector<ReconcileEntry> reconcile(const CostReport& report) {
  detail::require(report.measured.has_value(), "reconcile: needs a measured side");
  const auto& meas = *report.measured;
  const long long nx = report.nx, nu = report.nu, ny = report.ny, T = report.horizon;
  std::vector<ReconcileEntry> out;

  if (report.predicted.memory) {
    ReconcileEntry e{"memory", *report.predicted.memory, meas.memory, false, ""};
    e.matched = e.predicted == e.measured;
    if (!e.matched && report.architecture == "of.centralized") {
      // Published tap count is T; the realization stores taps 0..T. With
      // D = 0 the unused D block offsets the extra tap exactly.
      const long long tap_gap = nu * ny;
      if (e.measured - e.predicted == tap_gap)
        e.note = "feedthrough tap convention: published count stores T taps plus a D block, "
                 "the deployment stores T+1 taps and no D block when D = 0";
    }
    out.push_back(e);
  }
  const auto& bd = report.predicted.breakdown;
  if (bd.count("multiplier_memory")) {
    ReconcileEntry e{"multiplier_memory", bd.at("multiplier_memory"), meas.multiplier_memory, false, ""};
    e.matched = e.predicted == e.measured;
    out.push_back(e);
  }
  if (bd.count("buffer_memory")) {
    ReconcileEntry e{"buffer_memory", bd.at("buffer_memory"), meas.buffer_memory, false, ""};
    e.matched = e.predicted == e.measured;
    out.push_back(e);
  }
  if (report.predicted.flops) {
    ReconcileEntry e{"flops_per_step", *report.predicted.flops, meas.flops_per_step, false, ""};
    e.matched = e.predicted == e.measured;
    if (!e.matched) {
      long long explained = 0;
      std::string note;
      if (report.architecture == "sf.centralized") {
        // The published count prices the -Bu product as an nu x nx map and
        // counts vector additions as single operations.
        const long long bu_shape = nu * (2 * nx - 1) - nx * (2 * nu - 1);
        const long long additions = (T + 1) - (2 * nx + (T - 1) * nu);
        explained = bu_shape + additions;
        note = "published -Bu term has transposed shape (" + std::to_string(bu_shape) +
               ") and additions are counted per vector (" + std::to_string(additions) + ")";
      } else if (report.architecture == "sf.original") {
        const long long additions = (T - 1) - (nx + (T - 1) * nu + (T - 2) * nx);
        explained = additions;
        note = "published count tallies additions per vector (" + std::to_string(additions) + ")";
      } else if (report.architecture == "of.centralized") {
        note = "published convolution term uses N_x in place of N_y and stores T taps; "
               "additions are counted per vector";
      }
      if (!note.empty() && (explained == 0 || e.predicted - e.measured == explained)) {
        e.note = note;
      }
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace sls
