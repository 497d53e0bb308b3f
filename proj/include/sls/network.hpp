#pragma once
// Deployment-layer simulation: node programs composed of basic components
// (buffers, delay buffers, multipliers, adders, disseminator/collector pairs)
// exchanging messages under a deterministic staged schedule.
//
// Execution model per timestep: delay buffers publish their stored values
// first, then components run stage by stage (nodes in ascending id, components
// in declaration order). A message sent at stage s is consumable by collectors
// at stages > s of the same step; values needed next step go through delay
// buffers, which all latch once at the end of the step.
//
// Instrumentation counts scalar flops (multiplier m x n costs m(2n-1), an
// adder of k m-vectors costs (k-1)m), scalar memory (buffers, delay slots,
// multiplier matrices), scalar writes, and every message in an append-only
// ledger.

#include <Eigen/Dense>

#include <deque>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "sls/lti.hpp"

namespace sls {

enum class NodeRole { sensor, actuator, global_state_keeper, controller, custom };

inline const char* to_string(NodeRole r) {
  switch (r) {
    case NodeRole::sensor: return "sensor";
    case NodeRole::actuator: return "actuator";
    case NodeRole::global_state_keeper: return "gsk";
    case NodeRole::controller: return "controller";
    default: return "custom";
  }
}

struct SenseOp {
  std::string out;
  std::vector<int> indices;  // slice of the external input vector
};

struct ActuateOp {
  std::string in;
  std::vector<int> indices;  // slice of the network output vector
};

struct BufferOp {
  std::string name;
  std::string in;
  int dim = 0;
};

struct DelayBufferOp {
  std::string name;
  std::string in;
  int dim = 0;
  int delay = 1;
  std::deque<VectorXd> slots;  // runtime state, delay entries
};

struct MultiplierOp {
  std::string out;
  std::string in;
  MatrixXd gain;
};

struct AdderOp {
  std::string out;
  std::vector<std::string> ins;  // unset inputs read as zero
  int dim = 0;
};

struct DisseminatorRoute {
  int target = -1;
  std::string port;
  std::vector<int> src_indices;
  std::vector<int> dst_indices;  // stack collectors: positions in the output
  std::string label;
};

struct DisseminatorOp {
  std::string in;
  int in_dim = 0;
  std::vector<DisseminatorRoute> routes;
};

struct CollectorOp {
  enum class Mode { stack, parts };
  std::string out;
  std::string port;
  int dim = 0;  // stack: assembled dim; parts: dim of each part
  Mode mode = Mode::stack;
};

using ComponentOp =
    std::variant<SenseOp, ActuateOp, BufferOp, DelayBufferOp, MultiplierOp, AdderOp, DisseminatorOp, CollectorOp>;

struct Component {
  int stage = 0;
  ComponentOp op;
};

struct Message {
  long t = 0;
  int stage = 0;
  int source = -1;
  int target = -1;
  std::string port;
  std::string label;
  VectorXd payload;
  std::vector<int> dst_indices;
};

class NodeProgram {
 public:
  int id = -1;
  std::string name;
  NodeRole role = NodeRole::custom;
  int site = -1;  // physical site index for locality audits; -1 = off-graph
  bool failed = false;
  std::vector<Component> components;

  NodeProgram& sense(int stage, std::string out, std::vector<int> idx) {
    components.push_back({stage, SenseOp{std::move(out), std::move(idx)}});
    return *this;
  }
  NodeProgram& actuate(int stage, std::string in, std::vector<int> idx) {
    components.push_back({stage, ActuateOp{std::move(in), std::move(idx)}});
    return *this;
  }
  NodeProgram& buffer(int stage, std::string name, std::string in, int dim) {
    components.push_back({stage, BufferOp{std::move(name), std::move(in), dim}});
    return *this;
  }
  NodeProgram& delay(std::string name, std::string in, int dim, int steps = 1) {
    DelayBufferOp d{std::move(name), std::move(in), dim, steps, {}};
    d.slots.assign(static_cast<size_t>(steps), VectorXd::Zero(dim));
    components.push_back({0, std::move(d)});
    return *this;
  }
  NodeProgram& multiply(int stage, std::string out, std::string in, MatrixXd gain) {
    components.push_back({stage, MultiplierOp{std::move(out), std::move(in), std::move(gain)}});
    return *this;
  }
  NodeProgram& add(int stage, std::string out, std::vector<std::string> ins, int dim) {
    components.push_back({stage, AdderOp{std::move(out), std::move(ins), dim}});
    return *this;
  }
  NodeProgram& disseminate(int stage, std::string in, int in_dim, std::vector<DisseminatorRoute> routes) {
    components.push_back({stage, DisseminatorOp{std::move(in), in_dim, std::move(routes)}});
    return *this;
  }
  NodeProgram& collect(int stage, CollectorOp op) {
    components.push_back({stage, std::move(op)});
    return *this;
  }

  // runtime
  std::map<std::string, VectorXd> vars;
  std::map<std::string, std::vector<Message>> mailbox;  // keyed by port
};

struct NetworkCounters {
  long long flops = 0;
  long long scalar_writes = 0;
  long long messages = 0;
  std::map<int, long long> flops_per_node;
};

class Network {
 public:
  int input_dim = 0;          // external signal fed to sensors each step
  int output_dim = 0;         // assembled actuator output
  bool senses_output = false; // sensors sample y rather than x

  NodeProgram& add_node(int id, std::string name, NodeRole role, int site = -1) {
    detail::require(nodes_.find(id) == nodes_.end(), "Network: duplicate node id");
    NodeProgram& n = nodes_[id];
    n.id = id;
    n.name = std::move(name);
    n.role = role;
    n.site = site;
    return n;
  }

  NodeProgram& node(int id) {
    auto it = nodes_.find(id);
    detail::require(it != nodes_.end(), "Network: unknown node id");
    return it->second;
  }
  const NodeProgram& node(int id) const {
    auto it = nodes_.find(id);
    detail::require(it != nodes_.end(), "Network: unknown node id");
    return it->second;
  }
  const std::map<int, NodeProgram>& nodes() const { return nodes_; }

  void fail_node(int id) { node(id).failed = true; }

  const std::vector<Message>& ledger() const { return ledger_; }
  const NetworkCounters& counters() const { return counters_; }
  long cross_step_consumptions() const { return cross_step_consumptions_; }

  // Static scalar-memory inventory: buffers + delay slots + multiplier matrices.
  long long memory_scalars() const {
    long long total = 0;
    for (const auto& [id, n] : nodes_) total += node_memory_scalars(id);
    return total;
  }

  long long node_memory_scalars(int id) const {
    long long total = 0;
    for (const auto& comp : node(id).components) {
      if (const auto* b = std::get_if<BufferOp>(&comp.op)) total += b->dim;
      if (const auto* d = std::get_if<DelayBufferOp>(&comp.op)) total += static_cast<long long>(d->dim) * d->delay;
      if (const auto* m = std::get_if<MultiplierOp>(&comp.op)) total += m->gain.size();
    }
    return total;
  }

  long long node_multiplier_scalars(int id) const {
    long long total = 0;
    for (const auto& comp : node(id).components)
      if (const auto* m = std::get_if<MultiplierOp>(&comp.op)) total += m->gain.size();
    return total;
  }

  long long multiplier_scalars() const {
    long long total = 0;
    for (const auto& [id, n] : nodes_) total += node_multiplier_scalars(id);
    return total;
  }

  long long buffer_scalars() const { return memory_scalars() - multiplier_scalars(); }

  // Analytic per-step flop count; every component executes once per step.
  long long flops_per_step() const {
    long long total = 0;
    for (const auto& [id, n] : nodes_)
      for (const auto& comp : n.components) {
        if (const auto* m = std::get_if<MultiplierOp>(&comp.op))
          total += m->gain.rows() * (2 * m->gain.cols() - 1);
        if (const auto* a = std::get_if<AdderOp>(&comp.op))
          if (a->ins.size() > 1) total += static_cast<long long>(a->ins.size() - 1) * a->dim;
      }
    return total;
  }

  std::vector<std::string> validate_wiring() const {
    std::vector<std::string> issues;
    // Routes grouped by (target, port).
    std::map<std::pair<int, std::string>, std::vector<const DisseminatorRoute*>> routed;
    for (const auto& [id, n] : nodes_)
      for (const auto& comp : n.components)
        if (const auto* d = std::get_if<DisseminatorOp>(&comp.op))
          for (const auto& r : d->routes) {
            if (nodes_.find(r.target) == nodes_.end()) {
              issues.push_back("node " + n.name + " disseminates to absent node id " + std::to_string(r.target));
              continue;
            }
            routed[{r.target, r.port}].push_back(&r);
            if (r.src_indices.empty())
              issues.push_back("node " + n.name + " has an empty route payload on port " + r.port);
          }
    for (const auto& [id, n] : nodes_) {
      std::set<std::string> ports_here;
      for (const auto& comp : n.components) {
        const auto* cItem = std::get_if<CollectorOp>(&comp.op);
        if (!cItem) continue;
        ports_here.insert(cItem->port);
        const auto key = std::make_pair(id, cItem->port);
        auto it = routed.find(key);
        if (it == routed.end()) {
          issues.push_back("collector port " + cItem->port + " on node " + n.name + " is never fed");
          continue;
        }
        if (cItem->mode == CollectorOp::Mode::stack) {
          std::map<int, int> covered;
          for (const auto* r : it->second) {
            if (r->dst_indices.size() != r->src_indices.size())
              issues.push_back("route into " + n.name + ":" + cItem->port + " has mismatched index sets");
            for (int k : r->dst_indices) covered[k]++;
          }
          for (int k = 0; k < cItem->dim; ++k) {
            const int c = covered.count(k) ? covered[k] : 0;
            if (c != 1)
              issues.push_back("collector " + n.name + ":" + cItem->port + " index " + std::to_string(k) +
                               " written " + std::to_string(c) + " times per step");
          }
        } else {
          for (const auto* r : it->second)
            if (static_cast<int>(r->src_indices.size()) != cItem->dim)
              issues.push_back("parts collector " + n.name + ":" + cItem->port + " expects dim " +
                               std::to_string(cItem->dim) + " payloads");
        }
      }
      // Every routed port must land on an actual collector.
      for (const auto& [key, rs] : routed)
        if (key.first == id && ports_here.find(key.second) == ports_here.end())
          issues.push_back("messages target port " + key.second + " on node " + n.name + " which has no collector");
    }
    return issues;
  }

  // One synchronized timestep. `external` carries the sensed plant signal
  // (state for SF architectures, measurement for OF); the return value is the
  // assembled actuator output.
  VectorXd step(long t, const VectorXd& external) {
    detail::require(external.size() == input_dim, "Network::step: external input dimension mismatch");
    VectorXd output = VectorXd::Zero(output_dim);

    int max_stage = 0;
    for (auto& [id, n] : nodes_)
      for (auto& comp : n.components) {
        max_stage = std::max(max_stage, comp.stage);
        if (auto* d = std::get_if<DelayBufferOp>(&comp.op)) {
          if (!n.failed) write_var(n, d->name, d->slots.front());
        }
      }

    for (int stage = 0; stage <= max_stage; ++stage)
      for (auto& [id, n] : nodes_) {
        if (n.failed) continue;
        for (auto& comp : n.components) {
          if (comp.stage != stage) continue;
          execute(t, stage, n, comp.op, external, output);
        }
      }

    for (auto& [id, n] : nodes_)
      for (auto& comp : n.components)
        if (auto* d = std::get_if<DelayBufferOp>(&comp.op)) {
          if (n.failed) continue;
          d->slots.push_back(read_var(n, d->in, d->dim));
          d->slots.pop_front();
        }
    return output;
  }

  // Clears runtime state, counters, and the ledger; the wiring stays.
  void reset() {
    for (auto& [id, n] : nodes_) {
      n.vars.clear();
      n.mailbox.clear();
      for (auto& comp : n.components)
        if (auto* d = std::get_if<DelayBufferOp>(&comp.op))
          d->slots.assign(static_cast<size_t>(d->delay), VectorXd::Zero(d->dim));
    }
    ledger_.clear();
    counters_ = {};
    cross_step_consumptions_ = 0;
  }

  // Inspection helper for tests and exports; zero when absent.
  VectorXd read_node_var(int id, const std::string& name, int dim) const {
    const auto& n = node(id);
    auto it = n.vars.find(name);
    if (it == n.vars.end()) return VectorXd::Zero(dim);
    return it->second;
  }

  std::string ledger_csv() const {
    std::ostringstream os;
    os << "t,source,target,label,dim\n";
    for (const auto& m : ledger_)
      os << m.t << "," << node(m.source).name << "," << node(m.target).name << "," << m.label << ","
         << m.payload.size() << "\n";
    return os.str();
  }

 private:
  static VectorXd slice(const VectorXd& v, const std::vector<int>& idx) {
    VectorXd out(static_cast<long>(idx.size()));
    for (size_t k = 0; k < idx.size(); ++k) out[static_cast<long>(k)] = v[idx[k]];
    return out;
  }

  VectorXd read_var(const NodeProgram& n, const std::string& name, int expect_dim) const {
    auto it = n.vars.find(name);
    if (it == n.vars.end()) return VectorXd::Zero(expect_dim);
    detail::require(it->second.size() == expect_dim,
                    "Network: dimension mismatch reading " + name + " on node " + n.name);
    return it->second;
  }

  void write_var(NodeProgram& n, const std::string& name, VectorXd value) {
    counters_.scalar_writes += value.size();
    n.vars[name] = std::move(value);
  }

  void execute(long t, int stage, NodeProgram& n, ComponentOp& op, const VectorXd& external, VectorXd& output) {
    if (auto* s = std::get_if<SenseOp>(&op)) {
      write_var(n, s->out, slice(external, s->indices));
    } else if (auto* a = std::get_if<ActuateOp>(&op)) {
      const VectorXd v = read_var(n, a->in, static_cast<int>(a->indices.size()));
      for (size_t k = 0; k < a->indices.size(); ++k) output[a->indices[k]] = v[static_cast<long>(k)];
    } else if (auto* b = std::get_if<BufferOp>(&op)) {
      write_var(n, b->name, read_var(n, b->in, b->dim));
    } else if (std::get_if<DelayBufferOp>(&op)) {
      // published before stage 0, latched after the last stage
    } else if (auto* m = std::get_if<MultiplierOp>(&op)) {
      const VectorXd v = read_var(n, m->in, static_cast<int>(m->gain.cols()));
      counters_.flops += m->gain.rows() * (2 * m->gain.cols() - 1);
      counters_.flops_per_node[n.id] += m->gain.rows() * (2 * m->gain.cols() - 1);
      write_var(n, m->out, m->gain * v);
    } else if (auto* ad = std::get_if<AdderOp>(&op)) {
      VectorXd acc = VectorXd::Zero(ad->dim);
      for (const auto& in : ad->ins) acc += read_var(n, in, ad->dim);
      if (ad->ins.size() > 1) {
        const long long cost = static_cast<long long>(ad->ins.size() - 1) * ad->dim;
        counters_.flops += cost;
        counters_.flops_per_node[n.id] += cost;
      }
      write_var(n, ad->out, std::move(acc));
    } else if (auto* d = std::get_if<DisseminatorOp>(&op)) {
      const VectorXd v = read_var(n, d->in, d->in_dim);
      for (const auto& r : d->routes) {
        const VectorXd payload = slice(v, r.src_indices);
        if (r.target == n.id) {
          // Local move, not a network message.
          n.mailbox[r.port].push_back({t, stage, n.id, n.id, r.port, r.label, payload, r.dst_indices});
          continue;
        }
        auto& target = nodes_.at(r.target);
        Message msg{t, stage, n.id, r.target, r.port, r.label, payload, r.dst_indices};
        ledger_.push_back(msg);
        ++counters_.messages;
        if (!target.failed) target.mailbox[r.port].push_back(std::move(msg));
      }
    } else if (auto* cl = std::get_if<CollectorOp>(&op)) {
      auto& box = n.mailbox[cl->port];
      if (cl->mode == CollectorOp::Mode::stack) {
        VectorXd acc = VectorXd::Zero(cl->dim);
        for (const auto& msg : box) {
          if (msg.t != t) ++cross_step_consumptions_;
          for (size_t k = 0; k < msg.dst_indices.size(); ++k)
            acc[msg.dst_indices[k]] = msg.payload[static_cast<long>(k)];
        }
        write_var(n, cl->out, std::move(acc));
      } else {
        for (const auto& msg : box) {
          if (msg.t != t) ++cross_step_consumptions_;
          write_var(n, cl->out + "_" + std::to_string(msg.source), msg.payload);
        }
      }
      box.clear();
    }
  }

  std::map<int, NodeProgram> nodes_;
  std::vector<Message> ledger_;
  NetworkCounters counters_;
  long cross_step_consumptions_ = 0;
};

}  // namespace sls
