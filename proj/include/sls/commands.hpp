#pragma once
// The five pipeline commands behind the CLI verbs. Each command reads one
// scenario, writes its artifacts under an output directory, and returns the
// process exit code: 0 success, 1 usage/schema error, 2 infeasible synthesis,
// 3 comparison mismatch beyond tolerance. Outputs are deterministic for a
// fixed scenario file: CSV floats use 17 significant digits and every file
// embeds the scenario hash.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sls/architecture.hpp"
#include "sls/cost_model.hpp"
#include "sls/json_io.hpp"
#include "sls/scenario.hpp"
#include "sls/stability.hpp"

namespace sls {

struct CommandOptions {
  std::string scenario_path;
  std::string out_dir = ".";
  std::optional<uint64_t> seed;           // overrides disturbance.seed
  std::optional<double> tol;              // overrides comparison/probe tolerance
  std::vector<std::string> architectures; // overrides the scenario architecture (compare)
};

namespace cli_detail {

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_file(const std::string& dir, const std::string& name, const std::string& contents) {
  std::filesystem::create_directories(dir);
  const auto path = std::filesystem::path(dir) / name;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << contents;
}

inline void write_json(const std::string& dir, const std::string& name, json j, const Scenario& sc) {
  j["scenario_hash"] = sc.hash_hex_str;
  write_file(dir, name, j.dump(2) + "\n");
}

struct SynthesisArtifacts {
  std::optional<SfSynthesisResult> sf;
  std::optional<SystemResponseOF> of_quadruple;
  std::optional<SpectralSeries> phi_uy;
  double objective = 0.0;
};

inline SynthesisArtifacts run_synthesis(const Scenario& sc) {
  SynthesisArtifacts a;
  if (sc.route == "sf_h2") {
    a.sf = synth_sf_h2(sc.plant, sc.spec);
    a.objective = a.sf->objective;
  } else if (sc.route == "of_quadruple") {
    auto res = synth_of_h2_quadruple(sc.plant, sc.spec);
    a.of_quadruple = res.response;
    a.phi_uy = res.response.phi_uy;
    a.objective = res.objective;
  } else {  // of_youla
    double obj = 0.0;
    a.phi_uy = synth_of_youla(sc.plant, sc.spec, sc.youla, &obj);
    a.objective = obj;
  }
  return a;
}

inline std::unique_ptr<Controller> make_reference_controller(const Scenario& sc, const SynthesisArtifacts& a) {
  if (sc.route == "sf_h2") {
    if (sc.realization == "sf_standard")
      return std::make_unique<SfStandardController>(a.sf->response);
    return std::make_unique<SfSimplifiedController>(sc.plant, a.sf->response.phi_u);
  }
  if (sc.realization == "of_standard") {
    detail::require(a.of_quadruple.has_value(), "of_standard realization needs the quadruple route");
    return std::make_unique<OfStandardController>(*a.of_quadruple, sc.plant.D);
  }
  return std::make_unique<OfSimplifiedController>(sc.plant, *a.phi_uy);
}

inline Network build_architecture(const std::string& id, const Scenario& sc, const SynthesisArtifacts& a) {
  if (id.rfind("sf.", 0) == 0) {
    detail::require(a.sf.has_value(), "state-feedback architectures need the sf_h2 route");
    if (id == "sf.centralized") return build_centralized_sf(sc.plant, a.sf->response);
    if (id == "sf.original") return build_original_sf(sc.plant, a.sf->response);
    if (id == "sf.global_state") return build_global_state_sf(sc.plant, a.sf->response);
    if (id == "sf.naive") return build_naive_distributed_sf(sc.plant, a.sf->response);
    if (id == "sf.memconserv") return build_memconserv_distributed_sf(sc.plant, a.sf->response);
  } else {
    detail::require(a.phi_uy.has_value(), "output-feedback architectures need a Phi_uy route");
    if (id == "of.centralized") return build_centralized_of(sc.plant, *a.phi_uy);
    if (id == "of.global_state") return build_global_state_of(sc.plant, *a.phi_uy);
    if (id == "of.sensor_side") return build_sensor_side_of(sc.plant, *a.phi_uy);
    if (id == "of.actuator_side") return build_actuator_side_of(sc.plant, *a.phi_uy);
  }
  throw ScenarioError("architecture", "unknown architecture '" + id + "'");
}

inline std::string trace_csv(const Trace& tr, const Scenario& sc) {
  std::ostringstream os;
  os << "# scenario_hash=" << sc.hash_hex_str << "\n";
  const auto& x = tr.channel("x");
  const auto& u = tr.channel("u");
  const auto& y = tr.channel("y");
  const auto& dx = tr.channel("d_x");
  const auto& dy = tr.channel("d_y");
  os << "t";
  for (int i = 0; i < x.dim(); ++i) os << ",x" << i;
  for (int i = 0; i < u.dim(); ++i) os << ",u" << i;
  for (int i = 0; i < y.dim(); ++i) os << ",y" << i;
  for (int i = 0; i < dx.dim(); ++i) os << ",dx" << i;
  for (int i = 0; i < dy.dim(); ++i) os << ",dy" << i;
  os << "\n";
  for (long t = 0; t < x.size(); ++t) {
    os << t;
    for (const auto* sig : {&x, &u, &y, &dx, &dy}) {
      const VectorXd v = sig->at(t);
      for (long i = 0; i < v.size(); ++i) os << "," << format_double(v(i));
    }
    os << "\n";
  }
  return os.str();
}

inline std::string ledger_csv(const Network& net, const Scenario& sc) {
  return "# scenario_hash=" + sc.hash_hex_str + "\n" + net.ledger_csv();
}

inline Scenario load_with_overrides(const CommandOptions& opt) {
  Scenario sc = load_scenario(opt.scenario_path);
  if (opt.seed) sc.disturbance.seed = *opt.seed;
  return sc;
}

}  // namespace cli_detail

// synthesize: response series + achievability report.
inline int cmd_synthesize(const CommandOptions& opt) {
  const Scenario sc = cli_detail::load_with_overrides(opt);
  auto art = cli_detail::run_synthesis(sc);
  json out{{"route", sc.route}, {"objective", art.objective}};
  if (art.sf) {
    out["response"] = to_json(art.sf->response);
    const auto rep = validate_sf_achievability(art.sf->response, sc.plant);
    out["achievability"] = json{{"first_tap", rep.first_tap},
                                {"recursion", rep.recursion},
                                {"terminal", rep.terminal},
                                {"within_1e-9", rep.within(1e-9)}};
    out["terminal_residual"] = art.sf->terminal_residual;
    out["kkt_gradient_norm"] = art.sf->kkt_gradient_norm;
  } else if (art.of_quadruple) {
    out["response"] = to_json(*art.of_quadruple);
    const auto rep = validate_of_achievability(*art.of_quadruple, sc.plant);
    out["achievability"] = json{{"interior", rep.interior}, {"boundary", rep.boundary}};
  } else {
    out["phi_uy"] = to_json(*art.phi_uy);
    const auto quad = quadruple_from_phiuy(sc.plant, *art.phi_uy,
                                           std::max(4 * sc.spec.horizon, sc.spec.horizon + 8));
    const auto rep = validate_of_achievability(quad, sc.plant);
    out["achievability"] = json{{"interior", rep.interior},
                                {"boundary", rep.boundary},
                                {"tail_norm", quad.tail_norm}};
  }
  cli_detail::write_json(opt.out_dir, "response.json", std::move(out), sc);
  return 0;
}

// simulate: closed-loop trace plus the message ledger of the deployed network.
inline int cmd_simulate(const CommandOptions& opt) {
  const Scenario sc = cli_detail::load_with_overrides(opt);
  auto art = cli_detail::run_synthesis(sc);
  Network net = cli_detail::build_architecture(sc.architecture, sc, art);
  const auto issues = net.validate_wiring();
  if (!issues.empty()) throw std::runtime_error("wiring validation failed: " + issues.front());
  const auto dist = generate_disturbances(sc.disturbance, sc.plant, sc.t_sim);
  const Trace tr = network_closed_loop(sc.plant, net, dist.d_x, dist.d_y, sc.t_sim);
  cli_detail::write_file(opt.out_dir, "trace.csv", cli_detail::trace_csv(tr, sc));
  cli_detail::write_file(opt.out_dir, "ledger.csv", cli_detail::ledger_csv(net, sc));
  cli_detail::write_json(opt.out_dir, "ledger.json", ledger_to_json(net), sc);
  cli_detail::write_json(opt.out_dir, "network.json", to_json(net), sc);
  return 0;
}

// compare: per-architecture max deviation from the monolithic reference.
inline int cmd_compare(const CommandOptions& opt) {
  const Scenario sc = cli_detail::load_with_overrides(opt);
  const double tol = opt.tol.value_or(1e-9);
  auto art = cli_detail::run_synthesis(sc);
  auto ref_ctl = cli_detail::make_reference_controller(sc, art);
  const auto dist = generate_disturbances(sc.disturbance, sc.plant, sc.t_sim);
  const Trace ref = reference_closed_loop(sc.plant, *ref_ctl, dist.d_x, dist.d_y, sc.t_sim);

  std::vector<std::string> archs = opt.architectures;
  if (archs.empty()) archs.push_back(sc.architecture);

  json rows = json::array();
  std::ostringstream csv;
  csv << "# scenario_hash=" << sc.hash_hex_str << "\n";
  csv << "architecture,max_rel_dev_x,max_rel_dev_u\n";
  double worst = 0.0;
  for (const auto& id : archs) {
    Network net = cli_detail::build_architecture(id, sc, art);
    const Trace got = network_closed_loop(sc.plant, net, dist.d_x, dist.d_y, sc.t_sim);
    const double dev_x = max_relative_deviation(got.channel("x"), ref.channel("x"));
    const double dev_u = max_relative_deviation(got.channel("u"), ref.channel("u"));
    worst = std::max({worst, dev_x, dev_u});
    rows.push_back(json{{"architecture", id}, {"max_rel_dev_x", dev_x}, {"max_rel_dev_u", dev_u}});
    csv << id << "," << cli_detail::format_double(dev_x) << "," << cli_detail::format_double(dev_u) << "\n";
  }
  json out{{"tolerance", tol}, {"worst", worst}, {"deviations", std::move(rows)}};
  cli_detail::write_json(opt.out_dir, "compare.json", std::move(out), sc);
  cli_detail::write_file(opt.out_dir, "compare.csv", csv.str());
  return worst <= tol ? 0 : 3;
}

// costs: published predictions, instrumented measurement, reconciliation.
inline int cmd_costs(const CommandOptions& opt) {
  const Scenario sc = cli_detail::load_with_overrides(opt);
  auto art = cli_detail::run_synthesis(sc);
  const int T = sc.route == "sf_h2" ? art.sf->response.phi_u.horizon() : art.phi_uy->horizon();
  CostReport report = sc.architecture.rfind("sf.", 0) == 0
                          ? predict_sf_costs(sc.architecture, sc.plant.nx(), sc.plant.nu(), T)
                          : predict_of_costs(sc.architecture, sc.plant.nx(), sc.plant.nu(), sc.plant.ny(), T);
  Network net = cli_detail::build_architecture(sc.architecture, sc, art);
  report.measured = measure_costs(net);
  report.reconciliation = reconcile(report);

  cli_detail::write_json(opt.out_dir, "costs.json", to_json(report), sc);
  std::ostringstream csv;
  csv << "# scenario_hash=" << sc.hash_hex_str << "\n";
  csv << "key,value\n";
  csv << "architecture," << report.architecture << "\n";
  csv << "single_point_of_failure," << (report.single_point_of_failure ? "yes" : "no") << "\n";
  if (report.predicted.flops) csv << "predicted_flops_per_step," << *report.predicted.flops << "\n";
  if (report.predicted.memory) csv << "predicted_memory_scalars," << *report.predicted.memory << "\n";
  csv << "measured_flops_per_step," << report.measured->flops_per_step << "\n";
  csv << "measured_memory_scalars," << report.measured->memory << "\n";
  csv << "measured_multiplier_memory," << report.measured->multiplier_memory << "\n";
  csv << "measured_buffer_memory," << report.measured->buffer_memory << "\n";
  csv << "messages_per_step," << report.measured->messages_per_step << "\n";
  for (const auto& e : report.reconciliation)
    csv << "reconcile_" << e.term << "," << (e.matched ? "match" : (e.note.empty() ? "unexplained" : "explained"))
        << "\n";
  cli_detail::write_file(opt.out_dir, "costs.csv", csv.str());
  return 0;
}

// probe: the 4 x 4 internal-stability grid for output-feedback scenarios.
inline int cmd_probe(const CommandOptions& opt) {
  const Scenario sc = cli_detail::load_with_overrides(opt);
  if (sc.route == "sf_h2")
    throw ScenarioError("synthesis.route", "probe needs an output-feedback route (of_youla or of_quadruple)");
  auto art = cli_detail::run_synthesis(sc);
  OfSimplifiedController ctl(sc.plant, *art.phi_uy);
  const int horizon = std::max(4 * sc.spec.horizon, 50);
  const double tol = opt.tol.value_or(1e-6);
  const auto grid = internal_stability_probe(sc.plant, ctl, horizon, tol);
  cli_detail::write_file(opt.out_dir, "probe.csv",
                         "# scenario_hash=" + sc.hash_hex_str + "\n" + grid.tails_csv());
  cli_detail::write_json(opt.out_dir, "probe.json", to_json(grid), sc);
  return grid.all_decayed() ? 0 : 3;
}

// Shared error-to-exit-code mapping for the CLI and tests.
inline int run_command(const std::string& verb, const CommandOptions& opt) {
  try {
    if (verb == "synthesize") return cmd_synthesize(opt);
    if (verb == "simulate") return cmd_simulate(opt);
    if (verb == "compare") return cmd_compare(opt);
    if (verb == "costs") return cmd_costs(opt);
    if (verb == "probe") return cmd_probe(opt);
    std::cerr << "unknown command: " << verb << "\n";
    return 1;
  } catch (const InfeasibleSynthesis& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const ScenarioError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
}

}  // namespace sls
