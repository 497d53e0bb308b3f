#pragma once
// JSON serialization for the core value types. Matrices are row-major nested
// arrays with explicit dimensions; spectral series carry an explicit
// start_tau. nlohmann::json keeps object keys sorted and prints doubles with
// a round-trip-exact representation, so serialization is deterministic.

#include <json.hpp>

#include <string>

#include "sls/cost_model.hpp"
#include "sls/lti.hpp"
#include "sls/network.hpp"
#include "sls/spectral.hpp"
#include "sls/stability.hpp"
#include "sls/synthesis.hpp"

namespace sls {

using nlohmann::json;

inline json to_json(const MatrixXd& m) {
  json rows = json::array();
  for (long i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (long j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

inline MatrixXd matrix_from_json(const json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data"))
    throw std::invalid_argument(where + ": expected {rows, cols, data}");
  const long rows = j.at("rows").get<long>();
  const long cols = j.at("cols").get<long>();
  const auto& data = j.at("data");
  if (!data.is_array() || static_cast<long>(data.size()) != rows)
    throw std::invalid_argument(where + ".data: expected " + std::to_string(rows) + " rows");
  MatrixXd m(rows, cols);
  for (long i = 0; i < rows; ++i) {
    const auto& row = data.at(static_cast<size_t>(i));
    if (!row.is_array() || static_cast<long>(row.size()) != cols)
      throw std::invalid_argument(where + ".data[" + std::to_string(i) + "]: expected " + std::to_string(cols) + " entries");
    for (long jc = 0; jc < cols; ++jc) m(i, jc) = row.at(static_cast<size_t>(jc)).get<double>();
  }
  return m;
}

inline json to_json(const SpectralSeries& s) {
  json elems = json::array();
  for (int tau = s.start_tau(); tau <= s.horizon(); ++tau) elems.push_back(to_json(s.tap(tau)).at("data"));
  return json{{"start_tau", s.start_tau()}, {"rows", s.rows()}, {"cols", s.cols()}, {"elements", std::move(elems)}};
}

inline SpectralSeries series_from_json(const json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("start_tau") || !j.contains("rows") || !j.contains("cols") || !j.contains("elements"))
    throw std::invalid_argument(where + ": expected {start_tau, rows, cols, elements}");
  const int start = j.at("start_tau").get<int>();
  const long rows = j.at("rows").get<long>();
  const long cols = j.at("cols").get<long>();
  std::vector<MatrixXd> elems;
  for (size_t k = 0; k < j.at("elements").size(); ++k) {
    json wrapped{{"rows", rows}, {"cols", cols}, {"data", j.at("elements").at(k)}};
    elems.push_back(matrix_from_json(wrapped, where + ".elements[" + std::to_string(k) + "]"));
  }
  if (elems.empty()) throw std::invalid_argument(where + ".elements: needs at least one tap");
  return SpectralSeries(start, std::move(elems));
}

inline json to_json(const LtiSystem& sys) {
  return json{{"A", to_json(sys.A)}, {"B", to_json(sys.B)}, {"C", to_json(sys.C)}, {"D", to_json(sys.D)},
              {"nx", sys.nx()}, {"nu", sys.nu()}, {"ny", sys.ny()}};
}

inline LtiSystem system_from_json(const json& j, const std::string& where) {
  for (const char* key : {"A", "B", "C", "D"})
    if (!j.contains(key)) throw std::invalid_argument(where + ": missing matrix " + key);
  auto sys = LtiSystem::output_feedback_plant(
      matrix_from_json(j.at("A"), where + ".A"), matrix_from_json(j.at("B"), where + ".B"),
      matrix_from_json(j.at("C"), where + ".C"), matrix_from_json(j.at("D"), where + ".D"));
  return sys;
}

inline json to_json(const SystemResponseSF& r) {
  return json{{"phi_x", to_json(r.phi_x)}, {"phi_u", to_json(r.phi_u)}};
}

inline json to_json(const SystemResponseOF& r) {
  return json{{"phi_xx", to_json(r.phi_xx)}, {"phi_xy", to_json(r.phi_xy)},
              {"phi_ux", to_json(r.phi_ux)}, {"phi_uy", to_json(r.phi_uy)},
              {"truncated", r.truncated},    {"tail_norm", r.tail_norm}};
}

inline json to_json(const CostReport& r) {
  json pred;
  if (r.predicted.flops) pred["flops_per_step"] = *r.predicted.flops;
  if (r.predicted.memory) pred["memory_scalars"] = *r.predicted.memory;
  if (!r.predicted.breakdown.empty()) pred["breakdown"] = r.predicted.breakdown;
  json out{{"architecture", r.architecture},
           {"dims", {{"nx", r.nx}, {"nu", r.nu}, {"ny", r.ny}, {"horizon", r.horizon}}},
           {"single_point_of_failure", r.single_point_of_failure},
           {"predicted", std::move(pred)},
           {"notes", r.notes}};
  if (r.measured) {
    out["measured"] = json{{"flops_per_step", r.measured->flops_per_step},
                           {"memory_scalars", r.measured->memory},
                           {"multiplier_memory", r.measured->multiplier_memory},
                           {"buffer_memory", r.measured->buffer_memory},
                           {"messages_per_step", r.measured->messages_per_step},
                           {"per_node_flops", r.measured->per_node_flops}};
  }
  if (!r.reconciliation.empty()) {
    json entries = json::array();
    for (const auto& e : r.reconciliation)
      entries.push_back(json{{"term", e.term}, {"predicted", e.predicted}, {"measured", e.measured},
                             {"matched", e.matched}, {"note", e.note}});
    out["reconciliation"] = std::move(entries);
  }
  return out;
}

inline json to_json(const Network& net) {
  json nodes = json::array();
  for (const auto& [id, n] : net.nodes()) {
    json comps = json::array();
    for (const auto& comp : n.components) {
      json c{{"stage", comp.stage}};
      if (const auto* b = std::get_if<BufferOp>(&comp.op)) {
        c["kind"] = "buffer";
        c["name"] = b->name;
        c["dim"] = b->dim;
      } else if (const auto* d = std::get_if<DelayBufferOp>(&comp.op)) {
        c["kind"] = "delay_buffer";
        c["name"] = d->name;
        c["dim"] = d->dim;
        c["delay"] = d->delay;
      } else if (const auto* m = std::get_if<MultiplierOp>(&comp.op)) {
        c["kind"] = "multiplier";
        c["out"] = m->out;
        c["gain"] = to_json(m->gain);
      } else if (const auto* a = std::get_if<AdderOp>(&comp.op)) {
        c["kind"] = "adder";
        c["out"] = a->out;
        c["arity"] = a->ins.size();
      } else if (const auto* ds = std::get_if<DisseminatorOp>(&comp.op)) {
        c["kind"] = "disseminator";
        json routes = json::array();
        for (const auto& r : ds->routes)
          routes.push_back(json{{"target", r.target}, {"port", r.port}, {"label", r.label},
                                {"payload_dim", r.src_indices.size()}});
        c["routes"] = std::move(routes);
      } else if (const auto* cl = std::get_if<CollectorOp>(&comp.op)) {
        c["kind"] = "collector";
        c["port"] = cl->port;
        c["dim"] = cl->dim;
        c["mode"] = cl->mode == CollectorOp::Mode::stack ? "stack" : "parts";
      } else if (std::get_if<SenseOp>(&comp.op)) {
        c["kind"] = "sense";
      } else if (std::get_if<ActuateOp>(&comp.op)) {
        c["kind"] = "actuate";
      }
      comps.push_back(std::move(c));
    }
    nodes.push_back(json{{"id", id}, {"name", n.name}, {"role", to_string(n.role)}, {"site", n.site},
                         {"memory_scalars", net.node_memory_scalars(id)}, {"components", std::move(comps)}});
  }
  return json{{"input_dim", net.input_dim}, {"output_dim", net.output_dim},
              {"senses_output", net.senses_output}, {"nodes", std::move(nodes)}};
}

inline json ledger_to_json(const Network& net) {
  json msgs = json::array();
  for (const auto& m : net.ledger()) {
    json payload = json::array();
    for (long i = 0; i < m.payload.size(); ++i) payload.push_back(m.payload(i));
    msgs.push_back(json{{"t", m.t}, {"stage", m.stage}, {"source", net.node(m.source).name},
                        {"target", net.node(m.target).name}, {"label", m.label},
                        {"dim", m.payload.size()}, {"payload", std::move(payload)}});
  }
  return json{{"messages", std::move(msgs)}};
}

inline json to_json(const ProbeGrid& g) {
  json rows = json::array();
  for (int c = 0; c < 4; ++c) {
    json row;
    row["channel"] = to_string(static_cast<InjectionChannel>(c));
    for (int s = 0; s < 4; ++s) {
      const auto& e = g.entries[static_cast<size_t>(c)][static_cast<size_t>(s)];
      row[to_string(static_cast<ObservedSignal>(s))] =
          json{{"peak", e.peak}, {"tail", e.tail}, {"decayed", e.decayed}};
    }
    rows.push_back(std::move(row));
  }
  return json{{"horizon", g.horizon}, {"steps", g.steps}, {"tol", g.tol}, {"grid", std::move(rows)},
              {"all_decayed", g.all_decayed()}};
}

}  // namespace sls
