#include "tts/netgraph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <set>

#include "tts/error.hpp"
#include "tts/util.hpp"

namespace tts {

namespace {

const char* kind_name(BlockKind k) {
  switch (k) {
    case BlockKind::kInput: return "input";
    case BlockKind::kOutput: return "output";
    case BlockKind::kDense: return "dense";
    case BlockKind::kConcat: return "concat";
    case BlockKind::kDelayLine: return "delay_line";
    case BlockKind::kRecurrentBuffer: return "recurrent_buffer";
    case BlockKind::kTransform: return "transform";
  }
  return "?";
}

bool kind_from(const std::string& s, BlockKind& out) {
  static const std::map<std::string, BlockKind> table = {
      {"input", BlockKind::kInput},
      {"output", BlockKind::kOutput},
      {"dense", BlockKind::kDense},
      {"concat", BlockKind::kConcat},
      {"delay_line", BlockKind::kDelayLine},
      {"recurrent_buffer", BlockKind::kRecurrentBuffer},
      {"transform", BlockKind::kTransform},
  };
  auto it = table.find(s);
  if (it == table.end()) return false;
  out = it->second;
  return true;
}

[[noreturn]] void parse_fail(size_t line_no, const std::string& why) {
  throw Error(ErrorCode::kParse,
              "topology line " + std::to_string(line_no) + ": " + why);
}

uint64_t parse_u64(const std::string& s, size_t line_no) {
  try {
    size_t pos = 0;
    uint64_t v = std::stoull(s, &pos, 10);
    if (pos != s.size()) parse_fail(line_no, "bad integer '" + s + "'");
    return v;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    parse_fail(line_no, "bad integer '" + s + "'");
  }
}

int parse_pos_int(const std::string& s, size_t line_no, const std::string& key) {
  uint64_t v = parse_u64(s, line_no);
  if (v < 1 || v > 1000000)
    parse_fail(line_no, key + " must be a positive integer, got '" + s + "'");
  return static_cast<int>(v);
}

}  // namespace

GraphSpec GraphSpec::parse(const std::string& text) {
  GraphSpec spec;
  bool in_graph = false;
  bool seen_graph = false;
  BlockSpec* cur = nullptr;
  auto lines = split(text, '\n');
  for (size_t i = 0; i < lines.size(); ++i) {
    size_t line_no = i + 1;
    std::string line = lines[i];
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') parse_fail(line_no, "unterminated section header");
      std::string inner = trim(line.substr(1, line.size() - 2));
      if (inner == "graph") {
        if (seen_graph) parse_fail(line_no, "duplicate [graph] section");
        seen_graph = true;
        in_graph = true;
        cur = nullptr;
      } else if (inner.rfind("block ", 0) == 0) {
        std::string name = trim(inner.substr(6));
        if (name.empty() || name.find_first_of(" \t,@[]=") != std::string::npos)
          parse_fail(line_no, "bad block name '" + name + "'");
        spec.blocks.emplace_back();
        cur = &spec.blocks.back();
        cur->name = name;
        in_graph = false;
      } else {
        parse_fail(line_no, "unknown section [" + inner + "]");
      }
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) parse_fail(line_no, "expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty()) parse_fail(line_no, "empty key");
    if (in_graph) {
      if (key == "seed") {
        spec.seed = parse_u64(val, line_no);
      } else if (key == "output") {
        spec.output = val;
      } else {
        parse_fail(line_no, "unknown [graph] key '" + key + "'");
      }
    } else if (cur != nullptr) {
      if (key == "kind") {
        if (!kind_from(val, cur->kind))
          parse_fail(line_no, "unknown block kind '" + val + "'");
      } else if (key == "width") {
        cur->width = parse_pos_int(val, line_no, key);
      } else if (key == "in_width") {
        cur->in_width = parse_pos_int(val, line_no, key);
      } else if (key == "depth") {
        cur->depth = parse_pos_int(val, line_no, key);
      } else if (key == "activation") {
        if (val == "sigmoid") {
          cur->activation = Activation::kSigmoid;
        } else if (val == "linear") {
          cur->activation = Activation::kLinear;
        } else {
          parse_fail(line_no, "unknown activation '" + val + "'");
        }
      } else if (key == "fn") {
        cur->fn = val;
      } else if (key == "teacher") {
        if (val == "true") {
          cur->teacher = true;
        } else if (val == "false") {
          cur->teacher = false;
        } else {
          parse_fail(line_no, "teacher must be true or false");
        }
      } else if (key == "inputs") {
        cur->inputs.clear();
        cur->recurrent.clear();
        for (auto& item : split(val, ',')) {
          std::string name = trim(item);
          bool rec = false;
          if (!name.empty() && name.front() == '@') {
            rec = true;
            name = trim(name.substr(1));
          }
          if (name.empty()) parse_fail(line_no, "empty input name");
          cur->inputs.push_back(name);
          cur->recurrent.push_back(rec);
        }
      } else {
        parse_fail(line_no, "unknown block key '" + key + "'");
      }
    } else {
      parse_fail(line_no, "key outside any section");
    }
  }
  if (!seen_graph) throw Error(ErrorCode::kParse, "topology: missing [graph] section");
  return spec;
}

namespace {

std::string spec_body(const GraphSpec& spec) {
  std::string s;
  for (const auto& b : spec.blocks) {
    s += "\n[block " + b.name + "]\n";
    s += "kind = " + std::string(kind_name(b.kind)) + "\n";
    switch (b.kind) {
      case BlockKind::kInput:
        s += "width = " + std::to_string(b.width) + "\n";
        break;
      case BlockKind::kDense:
        s += "width = " + std::to_string(b.width) + "\n";
        if (b.in_width >= 0) s += "in_width = " + std::to_string(b.in_width) + "\n";
        s += std::string("activation = ") +
             (b.activation == Activation::kSigmoid ? "sigmoid" : "linear") + "\n";
        break;
      case BlockKind::kDelayLine:
        s += "depth = " + std::to_string(b.depth) + "\n";
        break;
      case BlockKind::kRecurrentBuffer:
        s += "depth = " + std::to_string(b.depth) + "\n";
        if (b.teacher) s += "teacher = true\n";
        break;
      case BlockKind::kTransform:
        s += "fn = " + b.fn + "\n";
        break;
      default:
        break;
    }
    if (!b.inputs.empty()) {
      s += "inputs = ";
      for (size_t i = 0; i < b.inputs.size(); ++i) {
        if (i) s += ", ";
        if (b.recurrent[i]) s += "@";
        s += b.inputs[i];
      }
      s += "\n";
    }
  }
  return s;
}

}  // namespace

std::string GraphSpec::serialize() const {
  return "[graph]\nseed = " + std::to_string(seed) + "\noutput = " + output +
         "\n" + spec_body(*this);
}

std::string GraphSpec::canonical_topology() const {
  return "[graph]\noutput = " + output + "\n" + spec_body(*this);
}

int Graph::index_of(const std::string& name) const {
  for (size_t i = 0; i < blocks.size(); ++i)
    if (blocks[i].name == name) return static_cast<int>(i);
  throw Error(ErrorCode::kArgument, "unknown block '" + name + "'");
}

size_t Graph::n_parameters() const {
  size_t n = 0;
  for (const auto& b : blocks) n += b.w.size() + b.b.size();
  return n;
}

std::array<uint8_t, 32> Graph::digest() const {
  return sha256(spec.canonical_topology());
}

namespace {

[[noreturn]] void build_fail(const std::string& why) {
  throw Error(ErrorCode::kModel, "topology: " + why);
}

std::string edge_name(const std::string& src, const std::string& dst) {
  return "edge " + src + " -> " + dst;
}

}  // namespace

Graph build_graph(const GraphSpec& spec) {
  Graph g;
  g.spec = spec;
  std::map<std::string, int> index;
  for (size_t i = 0; i < spec.blocks.size(); ++i) {
    if (!index.emplace(spec.blocks[i].name, static_cast<int>(i)).second)
      build_fail("duplicate block name '" + spec.blocks[i].name + "'");
  }
  const int n = static_cast<int>(spec.blocks.size());
  if (n == 0) build_fail("no blocks");

  g.blocks.resize(n);
  for (int i = 0; i < n; ++i) {
    const BlockSpec& bs = spec.blocks[i];
    Block& b = g.blocks[i];
    b.name = bs.name;
    b.kind = bs.kind;
    b.depth = bs.depth;
    b.teacher = bs.teacher;
    b.activation = bs.activation;
    switch (bs.kind) {
      case BlockKind::kInput:
        if (bs.width < 1) build_fail("input block " + bs.name + " requires width");
        if (!bs.inputs.empty())
          build_fail("input block " + bs.name + " takes no inputs");
        b.width = bs.width;
        break;
      case BlockKind::kDense:
        if (bs.width < 1) build_fail("dense block " + bs.name + " requires width");
        b.width = bs.width;
        break;
      case BlockKind::kRecurrentBuffer:
        if (bs.teacher && bs.inputs.size() != 1)
          build_fail("teacher-forced buffer " + bs.name +
                     " requires exactly one input");
        break;
      case BlockKind::kTransform:
        if (bs.fn != "identity")
          build_fail("block " + bs.name + ": unknown transform fn '" + bs.fn + "'");
        break;
      default:
        break;
    }
    if (bs.kind != BlockKind::kInput && bs.inputs.empty())
      build_fail("block " + bs.name + " has no inputs");
    for (size_t k = 0; k < bs.inputs.size(); ++k) {
      auto it = index.find(bs.inputs[k]);
      if (it == index.end())
        build_fail(edge_name(bs.inputs[k], bs.name) + ": unknown source block '" +
                   bs.inputs[k] + "'");
      bool rec = bs.recurrent[k];
      if (bs.kind == BlockKind::kRecurrentBuffer && !rec)
        build_fail(edge_name(bs.inputs[k], bs.name) +
                   ": recurrent_buffer inputs must be recurrent (@" +
                   bs.inputs[k] + ")");
      b.in.push_back(Edge{it->second, rec, 0});
    }
    if (bs.kind == BlockKind::kInput) g.input_blocks.push_back(i);
  }

  int n_outputs = 0;
  for (int i = 0; i < n; ++i)
    if (g.blocks[i].kind == BlockKind::kOutput) ++n_outputs;
  if (n_outputs != 1) build_fail("exactly one output block required, found " +
                                 std::to_string(n_outputs));
  if (spec.output.empty()) build_fail("[graph] output not set");
  auto oit = index.find(spec.output);
  if (oit == index.end()) build_fail("output block '" + spec.output + "' not defined");
  g.output_block = oit->second;
  if (g.blocks[g.output_block].kind != BlockKind::kOutput)
    build_fail("block '" + spec.output + "' is not of kind output");

  // evaluation order over non-recurrent edges
  std::vector<int> indeg(n, 0);
  for (int i = 0; i < n; ++i)
    for (const Edge& e : g.blocks[i].in)
      if (!e.recurrent) ++indeg[i];
  std::vector<int> queue;
  for (int i = 0; i < n; ++i)
    if (indeg[i] == 0) queue.push_back(i);
  for (size_t head = 0; head < queue.size(); ++head) {
    int u = queue[head];
    g.order.push_back(u);
    for (int i = 0; i < n; ++i)
      for (const Edge& e : g.blocks[i].in)
        if (!e.recurrent && e.src == u && --indeg[i] == 0) queue.push_back(i);
  }
  if (static_cast<int>(g.order.size()) != n) {
    for (int i = 0; i < n; ++i)
      if (indeg[i] > 0)
        build_fail("cycle without a recurrent edge through block '" +
                   g.blocks[i].name + "'");
  }

  // output widths, then gathered input widths
  std::vector<bool> known(n, false);
  for (int i = 0; i < n; ++i)
    known[i] = g.blocks[i].kind == BlockKind::kInput ||
               g.blocks[i].kind == BlockKind::kDense;
  for (int pass = 0; pass < n; ++pass) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      Block& b = g.blocks[i];
      if (known[i]) continue;
      bool ready = true;
      int total = 0;
      for (const Edge& e : b.in) {
        if (!known[e.src]) { ready = false; break; }
        total += g.blocks[e.src].width;
      }
      if (!ready) continue;
      switch (b.kind) {
        case BlockKind::kDelayLine:
        case BlockKind::kRecurrentBuffer:
          b.width = b.depth * total;
          break;
        default:
          b.width = total;
          break;
      }
      known[i] = true;
      changed = true;
    }
    if (!changed) break;
  }
  for (int i = 0; i < n; ++i)
    if (!known[i])
      build_fail("cannot resolve width of block '" + g.blocks[i].name +
                 "' (circular width dependency)");
  for (int i = 0; i < n; ++i) {
    Block& b = g.blocks[i];
    b.in_width = 0;
    for (Edge& e : b.in) {
      e.width = g.blocks[e.src].width;
      b.in_width += e.width;
    }
    if (b.kind == BlockKind::kDense && spec.blocks[i].in_width >= 0 &&
        spec.blocks[i].in_width != b.in_width) {
      if (b.in.size() == 1) {
        build_fail(edge_name(spec.blocks[i].inputs[0], b.name) + ": width " +
                   std::to_string(b.in_width) + " does not match declared input width " +
                   std::to_string(spec.blocks[i].in_width));
      }
      build_fail("block " + b.name + ": inputs supply width " +
                 std::to_string(b.in_width) + ", declared " +
                 std::to_string(spec.blocks[i].in_width));
    }
  }

  Rng rng(spec.seed);
  for (int i = 0; i < n; ++i) {
    Block& b = g.blocks[i];
    if (b.kind != BlockKind::kDense) continue;
    double s = 1.0 / std::sqrt(static_cast<double>(b.in_width));
    b.w.resize(static_cast<size_t>(b.width) * b.in_width);
    for (auto& v : b.w) v = rng.uniform(-s, s);
    b.b.assign(b.width, 0.0);
  }
  return g;
}

GraphState make_state(const Graph& g) {
  GraphState st;
  st.prev_out.resize(g.blocks.size());
  st.delay.resize(g.blocks.size());
  st.buffer.resize(g.blocks.size());
  for (size_t i = 0; i < g.blocks.size(); ++i)
    st.prev_out[i].assign(g.blocks[i].width, 0.0);
  return st;
}

namespace {

struct StepRec {
  std::vector<std::vector<double>> gathered;
  std::vector<std::vector<double>> out;
};

void gather_inputs(const Block& b,
                   const std::vector<std::vector<double>>& outs,
                   const GraphState& st, std::vector<double>& x) {
  x.clear();
  x.reserve(b.in_width);
  for (const Edge& e : b.in) {
    const auto& v = e.recurrent ? st.prev_out[e.src] : outs[e.src];
    x.insert(x.end(), v.begin(), v.end());
  }
}

// One step with full activation records kept for backpropagation.
void forward_full(const Graph& g, GraphState& st, const StepInputs& inputs,
                  const std::vector<double>* teacher, StepRec& rec) {
  const size_t n = g.blocks.size();
  if (inputs.size() != g.input_blocks.size())
    throw Error(ErrorCode::kArgument,
                "expected " + std::to_string(g.input_blocks.size()) +
                    " input vectors, got " + std::to_string(inputs.size()));
  rec.gathered.resize(n);
  rec.out.resize(n);
  for (int idx : g.order) {
    const Block& b = g.blocks[idx];
    auto& x = rec.gathered[idx];
    auto& y = rec.out[idx];
    switch (b.kind) {
      case BlockKind::kInput: {
        size_t slot = 0;
        while (g.input_blocks[slot] != idx) ++slot;
        const auto& v = inputs[slot];
        if (static_cast<int>(v.size()) != b.width)
          throw Error(ErrorCode::kArgument,
                      "input block " + b.name + ": expected width " +
                          std::to_string(b.width) + ", got " +
                          std::to_string(v.size()));
        x.clear();
        y = v;
        break;
      }
      case BlockKind::kDense: {
        gather_inputs(b, rec.out, st, x);
        y.assign(b.width, 0.0);
        for (int i = 0; i < b.width; ++i) {
          const double* row = b.w.data() + static_cast<size_t>(i) * b.in_width;
          double acc = b.b[i];
          for (int j = 0; j < b.in_width; ++j) acc += row[j] * x[j];
          y[i] = b.activation == Activation::kSigmoid
                     ? 1.0 / (1.0 + std::exp(-acc))
                     : acc;
        }
        break;
      }
      case BlockKind::kDelayLine: {
        gather_inputs(b, rec.out, st, x);
        auto& dq = st.delay[idx];
        dq.push_back(x);
        if (static_cast<int>(dq.size()) > b.depth) dq.pop_front();
        y.assign(b.width, 0.0);
        size_t off = static_cast<size_t>(b.depth - dq.size()) * b.in_width;
        for (const auto& item : dq) {
          std::copy(item.begin(), item.end(), y.begin() + off);
          off += b.in_width;
        }
        break;
      }
      case BlockKind::kRecurrentBuffer: {
        x.clear();
        const auto& dq = st.buffer[idx];
        y.assign(b.width, 0.0);
        size_t off = static_cast<size_t>(b.depth - dq.size()) * b.in_width;
        for (const auto& item : dq) {
          std::copy(item.begin(), item.end(), y.begin() + off);
          off += b.in_width;
        }
        break;
      }
      default: {  // output, concat, transform(identity)
        gather_inputs(b, rec.out, st, x);
        y = x;
        break;
      }
    }
  }
  // push this step's source values into recurrent buffers
  for (size_t idx = 0; idx < n; ++idx) {
    const Block& b = g.blocks[idx];
    if (b.kind != BlockKind::kRecurrentBuffer) continue;
    std::vector<double> pushed;
    if (b.teacher && teacher != nullptr) {
      if (static_cast<int>(teacher->size()) != b.in_width)
        throw Error(ErrorCode::kArgument,
                    "buffer " + b.name + ": teacher width " +
                        std::to_string(teacher->size()) + ", expected " +
                        std::to_string(b.in_width));
      pushed = *teacher;
    } else {
      pushed.reserve(b.in_width);
      for (const Edge& e : b.in) {
        const auto& v = rec.out[e.src];
        pushed.insert(pushed.end(), v.begin(), v.end());
      }
    }
    auto& dq = st.buffer[idx];
    dq.push_back(std::move(pushed));
    if (static_cast<int>(dq.size()) > b.depth) dq.pop_front();
  }
  for (size_t i = 0; i < n; ++i) st.prev_out[i] = rec.out[i];
}

}  // namespace

std::vector<double> forward_step(const Graph& g, GraphState& state,
                                 const StepInputs& inputs,
                                 const std::vector<double>* teacher) {
  StepRec rec;
  forward_full(g, state, inputs, teacher, rec);
  return rec.out[g.output_block];
}

std::vector<std::vector<double>> forward_sequence(
    const Graph& g, const std::vector<StepInputs>& inputs,
    const std::vector<std::vector<double>>* teacher) {
  GraphState st = make_state(g);
  std::vector<std::vector<double>> out;
  out.reserve(inputs.size());
  StepRec rec;
  for (size_t t = 0; t < inputs.size(); ++t) {
    const std::vector<double>* tv =
        teacher != nullptr ? &(*teacher)[t] : nullptr;
    forward_full(g, st, inputs[t], tv, rec);
    out.push_back(rec.out[g.output_block]);
  }
  return out;
}

double weighted_euclidean(const std::vector<double>& y,
                          const std::vector<double>& t,
                          const std::vector<double>& w) {
  if (y.size() != t.size() || y.size() != w.size())
    throw Error(ErrorCode::kArgument,
                "loss length mismatch: y " + std::to_string(y.size()) + ", t " +
                    std::to_string(t.size()) + ", w " + std::to_string(w.size()));
  double acc = 0.0;
  for (size_t i = 0; i < y.size(); ++i) {
    double d = y[i] - t[i];
    acc += w[i] * d * d;
  }
  return acc;
}

Gradients backward_sequence(const Graph& g,
                            const std::vector<StepInputs>& inputs,
                            const std::vector<std::vector<double>>& targets,
                            const std::vector<double>& loss_weights,
                            const std::vector<std::vector<double>>* teacher) {
  const size_t n = g.blocks.size();
  const size_t T = inputs.size();
  if (targets.size() != T)
    throw Error(ErrorCode::kArgument, "targets/inputs length mismatch");

  std::vector<StepRec> recs(T);
  GraphState st = make_state(g);
  for (size_t t = 0; t < T; ++t) {
    const std::vector<double>* tv = teacher != nullptr ? &(*teacher)[t] : nullptr;
    forward_full(g, st, inputs[t], tv, recs[t]);
  }

  Gradients grads;
  grads.w.resize(n);
  grads.b.resize(n);
  for (size_t i = 0; i < n; ++i) {
    grads.w[i].assign(g.blocks[i].w.size(), 0.0);
    grads.b[i].assign(g.blocks[i].b.size(), 0.0);
  }
  // d loss / d block output, per step; allocated on first touch
  std::vector<std::vector<std::vector<double>>> go(T);
  for (auto& v : go) v.resize(n);
  auto deposit = [&](int t, int blk, const double* src, int len) {
    if (t < 0) return;
    auto& acc = go[t][blk];
    if (acc.empty()) acc.assign(g.blocks[blk].width, 0.0);
    for (int i = 0; i < len; ++i) acc[i] += src[i];
  };
  // route a gradient on block b's gathered input back to its sources,
  // as seen from step t
  auto distribute = [&](const Block& b, int t, const double* gin) {
    int off = 0;
    for (const Edge& e : b.in) {
      deposit(t - (e.recurrent ? 1 : 0), e.src, gin + off, e.width);
      off += e.width;
    }
  };

  for (int t = static_cast<int>(T) - 1; t >= 0; --t) {
    const auto& y = recs[t].out[g.output_block];
    if (targets[t].size() != y.size() || loss_weights.size() != y.size())
      throw Error(ErrorCode::kArgument, "target/weight width mismatch at step " +
                                            std::to_string(t));
    grads.loss += weighted_euclidean(y, targets[t], loss_weights);
    {
      auto& acc = go[t][g.output_block];
      if (acc.empty()) acc.assign(y.size(), 0.0);
      for (size_t i = 0; i < y.size(); ++i)
        acc[i] += 2.0 * loss_weights[i] * (y[i] - targets[t][i]);
    }
    for (auto it = g.order.rbegin(); it != g.order.rend(); ++it) {
      int idx = *it;
      const Block& b = g.blocks[idx];
      auto& gout = go[t][idx];
      if (gout.empty()) continue;
      switch (b.kind) {
        case BlockKind::kInput:
          break;
        case BlockKind::kDense: {
          const auto& x = recs[t].gathered[idx];
          const auto& yb = recs[t].out[idx];
          std::vector<double> gin(b.in_width, 0.0);
          auto& gw = grads.w[idx];
          auto& gb = grads.b[idx];
          for (int i = 0; i < b.width; ++i) {
            double delta = gout[i];
            if (b.activation == Activation::kSigmoid)
              delta *= yb[i] * (1.0 - yb[i]);
            if (delta == 0.0) continue;
            const size_t row = static_cast<size_t>(i) * b.in_width;
            gb[i] += delta;
            for (int j = 0; j < b.in_width; ++j) {
              gw[row + j] += delta * x[j];
              gin[j] += b.w[row + j] * delta;
            }
          }
          distribute(b, t, gin.data());
          break;
        }
        case BlockKind::kDelayLine: {
          // slice j is this block's gathered input from step t-depth+1+j
          for (int j = 0; j < b.depth; ++j) {
            int tau = t - (b.depth - 1) + j;
            if (tau < 0) continue;
            distribute(b, tau, gout.data() + static_cast<size_t>(j) * b.in_width);
          }
          break;
        }
        case BlockKind::kRecurrentBuffer: {
          // slice j is the value pushed at step t-depth+j
          if (b.teacher && teacher != nullptr) break;
          for (int j = 0; j < b.depth; ++j) {
            int tau = t - b.depth + j;
            if (tau < 0) continue;
            const double* slice = gout.data() + static_cast<size_t>(j) * b.in_width;
            int off = 0;
            for (const Edge& e : b.in) {
              deposit(tau, e.src, slice + off, e.width);
              off += e.width;
            }
          }
          break;
        }
        default:
          distribute(b, t, gout.data());
          break;
      }
    }
  }

  grads.inputs.resize(T);
  for (size_t t = 0; t < T; ++t) {
    grads.inputs[t].resize(g.input_blocks.size());
    for (size_t s = 0; s < g.input_blocks.size(); ++s) {
      int idx = g.input_blocks[s];
      auto& gi = go[t][idx];
      grads.inputs[t][s] =
          gi.empty() ? std::vector<double>(g.blocks[idx].width, 0.0) : gi;
    }
  }
  return grads;
}

namespace {

// Gradient of one step's loss with the stored temporal context held
// constant, applied immediately: per-step stochastic descent.
void train_step(Graph& g, const StepRec& rec, const std::vector<double>& target,
                const std::vector<double>& lw, double lr, double momentum,
                std::vector<std::vector<double>>& vw,
                std::vector<std::vector<double>>& vb,
                std::vector<std::vector<double>>& gloc) {
  const size_t n = g.blocks.size();
  for (auto& v : gloc) v.clear();
  gloc.resize(n);
  {
    const auto& y = rec.out[g.output_block];
    auto& seed = gloc[g.output_block];
    seed.assign(y.size(), 0.0);
    for (size_t i = 0; i < y.size(); ++i)
      seed[i] = 2.0 * lw[i] * (y[i] - target[i]);
  }
  auto spread = [&](const Block& b, const double* gin) {
    int off = 0;
    for (const Edge& e : b.in) {
      if (!e.recurrent) {
        auto& acc = gloc[e.src];
        if (acc.empty()) acc.assign(g.blocks[e.src].width, 0.0);
        for (int i = 0; i < e.width; ++i) acc[i] += gin[off + i];
      }
      off += e.width;
    }
  };
  for (auto it = g.order.rbegin(); it != g.order.rend(); ++it) {
    int idx = *it;
    Block& b = g.blocks[idx];
    auto& gout = gloc[idx];
    if (gout.empty()) continue;
    switch (b.kind) {
      case BlockKind::kInput:
      case BlockKind::kRecurrentBuffer:
        break;
      case BlockKind::kDense: {
        const auto& x = rec.gathered[idx];
        const auto& y = rec.out[idx];
        std::vector<double> gin(b.in_width, 0.0);
        auto& vwi = vw[idx];
        auto& vbi = vb[idx];
        for (int i = 0; i < b.width; ++i) {
          double delta = gout[i];
          if (b.activation == Activation::kSigmoid) delta *= y[i] * (1.0 - y[i]);
          const size_t row = static_cast<size_t>(i) * b.in_width;
          for (int j = 0; j < b.in_width; ++j) gin[j] += b.w[row + j] * delta;
          vbi[i] = momentum * vbi[i] - lr * delta;
          b.b[i] += vbi[i];
          for (int j = 0; j < b.in_width; ++j) {
            vwi[row + j] = momentum * vwi[row + j] - lr * delta * x[j];
            b.w[row + j] += vwi[row + j];
          }
        }
        spread(b, gin.data());
        break;
      }
      case BlockKind::kDelayLine: {
        // only the newest slice is this step's input
        spread(b, gout.data() + static_cast<size_t>(b.depth - 1) * b.in_width);
        break;
      }
      default:
        spread(b, gout.data());
        break;
    }
  }
}

int context_horizon(const Graph& g) {
  int c = 1;
  for (const auto& b : g.blocks)
    if (b.kind == BlockKind::kDelayLine || b.kind == BlockKind::kRecurrentBuffer)
      c = std::max(c, b.depth);
  return c;
}

}  // namespace

std::vector<double> train(Graph& g, const Dataset& data,
                          const TrainingSchedule& schedule,
                          const std::vector<double>& loss_weights) {
  if (data.empty()) throw Error(ErrorCode::kArgument, "empty dataset");
  for (const auto& seq : data) {
    if (seq.inputs.empty() || seq.inputs.size() != seq.targets.size())
      throw Error(ErrorCode::kArgument, "dataset sequence with mismatched or empty frames");
  }
  if (schedule.epochs < 0 || schedule.mode_mix < 0.0 || schedule.mode_mix > 1.0)
    throw Error(ErrorCode::kArgument, "bad training schedule");

  const size_t n = g.blocks.size();
  std::vector<std::vector<double>> vw(n), vb(n), gloc(n);
  for (size_t i = 0; i < n; ++i) {
    vw[i].assign(g.blocks[i].w.size(), 0.0);
    vb[i].assign(g.blocks[i].b.size(), 0.0);
  }
  const int horizon = context_horizon(g);
  std::vector<std::pair<size_t, size_t>> frames;
  for (size_t s = 0; s < data.size(); ++s)
    for (size_t t = 0; t < data[s].inputs.size(); ++t) frames.emplace_back(s, t);

  Rng rng(schedule.seed);
  std::vector<double> history;
  StepRec rec;
  for (int e = 0; e < schedule.epochs; ++e) {
    const double lr = schedule.lr0 * std::pow(schedule.lr_decay, e);
    const double momentum =
        schedule.momentum0 * std::pow(schedule.momentum_decay, e);
    const bool sequential =
        std::floor((e + 1) * schedule.mode_mix) > std::floor(e * schedule.mode_mix);
    double loss_sum = 0.0;
    if (sequential) {
      for (const auto& seq : data) {
        GraphState st = make_state(g);
        for (size_t t = 0; t < seq.inputs.size(); ++t) {
          forward_full(g, st, seq.inputs[t], &seq.targets[t], rec);
          loss_sum += weighted_euclidean(rec.out[g.output_block], seq.targets[t],
                                         loss_weights);
          train_step(g, rec, seq.targets[t], loss_weights, lr, momentum, vw, vb,
                     gloc);
        }
      }
    } else {
      auto visit = frames;
      rng.shuffle(visit);
      for (const auto& [s, t] : visit) {
        const auto& seq = data[s];
        GraphState st = make_state(g);
        size_t from = t > static_cast<size_t>(horizon) ? t - horizon : 0;
        for (size_t tau = from; tau < t; ++tau)
          forward_full(g, st, seq.inputs[tau], &seq.targets[tau], rec);
        forward_full(g, st, seq.inputs[t], &seq.targets[t], rec);
        loss_sum += weighted_euclidean(rec.out[g.output_block], seq.targets[t],
                                       loss_weights);
        train_step(g, rec, seq.targets[t], loss_weights, lr, momentum, vw, vb,
                   gloc);
      }
    }
    history.push_back(loss_sum / static_cast<double>(frames.size()));
  }
  return history;
}

size_t QuantizedWeights::code_bytes() const {
  size_t n = 0;
  for (const auto& b : blocks) n += b.codes.size();
  return n;
}

QuantizedWeights quantize(const Graph& g) {
  QuantizedWeights q;
  q.digest = g.digest();
  for (const auto& b : g.blocks) {
    if (b.kind != BlockKind::kDense) continue;
    QuantizedBlock qb;
    qb.codes.reserve(b.w.size() + b.b.size());
    double mn = b.w.empty() ? 0.0 : b.w[0];
    double mx = mn;
    auto scan = [&](const std::vector<double>& v) {
      for (double x : v) {
        mn = std::min(mn, x);
        mx = std::max(mx, x);
      }
    };
    scan(b.w);
    scan(b.b);
    auto encode = [&](const std::vector<double>& v) {
      for (double x : v) {
        long c = std::lround(x / qb.scale) + qb.zero_point;
        qb.codes.push_back(static_cast<uint8_t>(std::clamp(c, 0L, 255L)));
      }
    };
    if (mx == mn) {
      // degenerate range: constant block stored exactly
      if (mn == 0.0) {
        qb.scale = 0.0;
        qb.zero_point = 0;
        qb.codes.assign(b.w.size() + b.b.size(), 0);
      } else {
        qb.scale = mn;
        qb.zero_point = 0;
        qb.codes.assign(b.w.size() + b.b.size(), 1);
      }
    } else {
      qb.scale = (mx - mn) / 255.0;
      qb.zero_point = static_cast<int32_t>(std::lround(-mn / qb.scale));
      encode(b.w);
      encode(b.b);
    }
    q.blocks.push_back(std::move(qb));
  }
  return q;
}

void dequantize(const QuantizedWeights& q, Graph& g) {
  if (q.digest != g.digest())
    throw Error(ErrorCode::kModel, "quantized weights digest does not match topology");
  size_t bi = 0;
  for (auto& b : g.blocks) {
    if (b.kind != BlockKind::kDense) continue;
    if (bi >= q.blocks.size())
      throw Error(ErrorCode::kModel, "quantized weights missing blocks");
    const QuantizedBlock& qb = q.blocks[bi++];
    if (qb.codes.size() != b.w.size() + b.b.size())
      throw Error(ErrorCode::kModel, "quantized block size mismatch for " + b.name);
    size_t k = 0;
    for (auto& v : b.w) v = qb.scale * (qb.codes[k++] - qb.zero_point);
    for (auto& v : b.b) v = qb.scale * (qb.codes[k++] - qb.zero_point);
  }
  if (bi != q.blocks.size())
    throw Error(ErrorCode::kModel, "quantized weights have extra blocks");
}

std::vector<double> tap_saliency(const Graph& g, const Dataset& data,
                                 const std::vector<TapRange>& taps,
                                 const std::vector<double>& loss_weights) {
  if (data.empty()) throw Error(ErrorCode::kArgument, "empty dataset");
  if (taps.empty()) throw Error(ErrorCode::kArgument, "empty tap layout");
  struct Resolved { size_t slot; int offset; int width; };
  std::vector<Resolved> res;
  for (const auto& tap : taps) {
    int idx = g.index_of(tap.input_block);
    if (g.blocks[idx].kind != BlockKind::kInput)
      throw Error(ErrorCode::kArgument,
                  "tap " + tap.label + ": block " + tap.input_block + " is not an input");
    if (tap.offset < 0 || tap.width < 1 ||
        tap.offset + tap.width > g.blocks[idx].width)
      throw Error(ErrorCode::kArgument,
                  "tap " + tap.label + ": range outside input block " + tap.input_block);
    size_t slot = 0;
    while (g.input_blocks[slot] != idx) ++slot;
    res.push_back({slot, tap.offset, tap.width});
  }
  std::vector<double> acc(taps.size(), 0.0);
  size_t n_frames = 0;
  for (const auto& seq : data) {
    Gradients grad = backward_sequence(g, seq.inputs, seq.targets, loss_weights,
                                       &seq.targets);
    n_frames += seq.inputs.size();
    for (const auto& step : grad.inputs)
      for (size_t k = 0; k < res.size(); ++k) {
        const auto& gi = step[res[k].slot];
        for (int j = 0; j < res[k].width; ++j)
          acc[k] += std::abs(gi[res[k].offset + j]);
      }
  }
  double total = 0.0;
  for (size_t k = 0; k < acc.size(); ++k) {
    acc[k] /= static_cast<double>(n_frames);
    total += acc[k];
  }
  if (total > 0.0)
    for (auto& v : acc) v /= total;
  return acc;
}

Normalization Normalization::fit(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw Error(ErrorCode::kArgument, "no rows to normalize");
  Normalization n;
  n.lo = rows[0];
  n.hi = rows[0];
  for (const auto& r : rows) {
    if (r.size() != n.lo.size())
      throw Error(ErrorCode::kArgument, "inconsistent row widths");
    for (size_t i = 0; i < r.size(); ++i) {
      n.lo[i] = std::min(n.lo[i], r[i]);
      n.hi[i] = std::max(n.hi[i], r[i]);
    }
  }
  return n;
}

std::vector<double> Normalization::apply(const std::vector<double>& raw) const {
  if (raw.size() != lo.size())
    throw Error(ErrorCode::kArgument, "normalization width mismatch");
  std::vector<double> out(raw.size());
  for (size_t i = 0; i < raw.size(); ++i)
    out[i] = hi[i] == lo[i] ? 0.5
                            : 0.1 + 0.8 * (raw[i] - lo[i]) / (hi[i] - lo[i]);
  return out;
}

std::vector<double> Normalization::invert(const std::vector<double>& scaled) const {
  if (scaled.size() != lo.size())
    throw Error(ErrorCode::kArgument, "normalization width mismatch");
  std::vector<double> out(scaled.size());
  for (size_t i = 0; i < scaled.size(); ++i)
    out[i] = hi[i] == lo[i] ? lo[i]
                            : lo[i] + (scaled[i] - 0.1) / 0.8 * (hi[i] - lo[i]);
  return out;
}

namespace {

constexpr char kMagic[4] = {'N', 'N', 'B', 'G'};
constexpr uint16_t kVersion = 1;

void put_u16(std::string& s, uint16_t v) {
  char b[2];
  std::memcpy(b, &v, 2);
  s.append(b, 2);
}

void put_i32(std::string& s, int32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  s.append(b, 4);
}

void put_f64(std::string& s, double v) {
  char b[8];
  std::memcpy(b, &v, 8);
  s.append(b, 8);
}

void put_f32(std::string& s, float v) {
  char b[4];
  std::memcpy(b, &v, 4);
  s.append(b, 4);
}

struct Cursor {
  const uint8_t* p;
  size_t left;
  void need(size_t n) const {
    if (left < n) throw Error(ErrorCode::kFormat, "truncated model file");
  }
  void take(void* out, size_t n) {
    need(n);
    std::memcpy(out, p, n);
    p += n;
    left -= n;
  }
  uint16_t u16() { uint16_t v; take(&v, 2); return v; }
  int32_t i32() { int32_t v; take(&v, 4); return v; }
  float f32() { float v; take(&v, 4); return v; }
  double f64() { double v; take(&v, 8); return v; }
  uint8_t u8() { uint8_t v; take(&v, 1); return v; }
};

std::vector<const Block*> dense_blocks(const Graph& g) {
  std::vector<const Block*> out;
  for (const auto& b : g.blocks)
    if (b.kind == BlockKind::kDense) out.push_back(&b);
  return out;
}

}  // namespace

void save_model(const std::string& path, const Graph& g,
                const Normalization& norm, bool quantized) {
  if (norm.lo.size() != norm.hi.size())
    throw Error(ErrorCode::kArgument, "bad normalization");
  std::string out;
  out.append(kMagic, 4);
  put_u16(out, kVersion);
  auto digest = g.digest();
  out.append(reinterpret_cast<const char*>(digest.data()), digest.size());
  out.push_back(quantized ? 1 : 0);
  put_u16(out, static_cast<uint16_t>(norm.lo.size()));
  for (size_t i = 0; i < norm.lo.size(); ++i) {
    put_f64(out, norm.lo[i]);
    put_f64(out, norm.hi[i]);
  }
  auto dense = dense_blocks(g);
  put_u16(out, static_cast<uint16_t>(dense.size()));
  for (const Block* b : dense) {
    put_u16(out, static_cast<uint16_t>(b->width));
    put_u16(out, static_cast<uint16_t>(b->in_width));
  }
  if (quantized) {
    QuantizedWeights q = quantize(g);
    for (const auto& qb : q.blocks) {
      put_f64(out, qb.scale);
      put_i32(out, qb.zero_point);
      out.append(reinterpret_cast<const char*>(qb.codes.data()), qb.codes.size());
    }
  } else {
    for (const Block* b : dense) {
      for (double v : b->w) put_f32(out, static_cast<float>(v));
      for (double v : b->b) put_f32(out, static_cast<float>(v));
    }
  }
  write_binary_file(path, out);
}

namespace {

ModelInfo read_header(Cursor& c) {
  char magic[4];
  c.take(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw Error(ErrorCode::kFormat, "not a model file (bad magic)");
  uint16_t version = c.u16();
  if (version != kVersion)
    throw Error(ErrorCode::kFormat,
                "unsupported model version " + std::to_string(version));
  ModelInfo info;
  c.take(info.digest.data(), info.digest.size());
  info.quantized = c.u8() != 0;
  uint16_t n_norm = c.u16();
  info.norm.lo.resize(n_norm);
  info.norm.hi.resize(n_norm);
  for (uint16_t i = 0; i < n_norm; ++i) {
    info.norm.lo[i] = c.f64();
    info.norm.hi[i] = c.f64();
  }
  return info;
}

}  // namespace

ModelInfo load_model(const std::string& path, Graph& g) {
  auto bytes = read_binary_file(path);
  Cursor c{bytes.data(), bytes.size()};
  ModelInfo info = read_header(c);
  if (info.digest != g.digest())
    throw Error(ErrorCode::kModel,
                "model file topology digest does not match the given topology");
  auto dense = dense_blocks(g);
  uint16_t n_blocks = c.u16();
  if (n_blocks != dense.size())
    throw Error(ErrorCode::kModel, "model file block count mismatch");
  for (const Block* b : dense) {
    uint16_t w = c.u16();
    uint16_t in = c.u16();
    if (w != b->width || in != b->in_width)
      throw Error(ErrorCode::kModel, "model file dimensions mismatch for " + b->name);
  }
  if (info.quantized) {
    QuantizedWeights q;
    q.digest = info.digest;
    for (const Block* b : dense) {
      QuantizedBlock qb;
      qb.scale = c.f64();
      qb.zero_point = c.i32();
      qb.codes.resize(static_cast<size_t>(b->width) * b->in_width + b->width);
      c.take(qb.codes.data(), qb.codes.size());
      q.blocks.push_back(std::move(qb));
    }
    dequantize(q, g);
  } else {
    for (auto& b : g.blocks) {
      if (b.kind != BlockKind::kDense) continue;
      for (auto& v : b.w) v = c.f32();
      for (auto& v : b.b) v = c.f32();
    }
  }
  return info;
}

ModelInfo peek_model(const std::string& path) {
  auto bytes = read_binary_file(path);
  Cursor c{bytes.data(), bytes.size()};
  return read_header(c);
}

}  // namespace tts
