#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

namespace tts {

enum class BlockKind {
  kInput,
  kOutput,
  kDense,
  kConcat,
  kDelayLine,
  kRecurrentBuffer,
  kTransform
};

enum class Activation { kLinear, kSigmoid };

struct BlockSpec {
  std::string name;
  BlockKind kind = BlockKind::kConcat;
  int width = 0;       // input: declared; dense: output width
  int in_width = -1;   // dense only; -1 = take whatever the inputs supply
  int depth = 1;       // delay_line, recurrent_buffer
  Activation activation = Activation::kSigmoid;
  std::string fn = "identity";  // transform
  bool teacher = false;         // recurrent_buffer teacher forcing
  std::vector<std::string> inputs;
  std::vector<bool> recurrent;  // parallel to inputs; true = one-step delay
};

// Declarative topology. The text form is the on-disk interface; the digest
// covers everything except the seed, so retrained weights can be matched to
// the structure that produced them.
struct GraphSpec {
  uint64_t seed = 1;
  std::string output;
  std::vector<BlockSpec> blocks;

  static GraphSpec parse(const std::string& text);
  std::string serialize() const;
  std::string canonical_topology() const;
};

struct Edge {
  int src = -1;
  bool recurrent = false;
  int width = 0;
};

struct Block {
  std::string name;
  BlockKind kind = BlockKind::kConcat;
  int width = 0;     // output width
  int in_width = 0;  // gathered input width
  int depth = 1;
  Activation activation = Activation::kLinear;
  bool teacher = false;
  std::vector<Edge> in;
  std::vector<double> w;  // dense: width x in_width, row-major
  std::vector<double> b;
};

struct Graph {
  GraphSpec spec;
  std::vector<Block> blocks;
  std::vector<int> order;         // evaluation order over non-recurrent edges
  std::vector<int> input_blocks;  // declaration order
  int output_block = -1;

  int index_of(const std::string& name) const;  // throws on unknown name
  size_t n_parameters() const;
  std::array<uint8_t, 32> digest() const;
};

Graph build_graph(const GraphSpec& spec);

// Per-step inputs, ordered like Graph::input_blocks.
using StepInputs = std::vector<std::vector<double>>;

struct GraphState {
  std::vector<std::vector<double>> prev_out;           // per block, t-1 value
  std::vector<std::deque<std::vector<double>>> delay;  // delay_line history
  std::vector<std::deque<std::vector<double>>> buffer;  // recurrent_buffer
};

GraphState make_state(const Graph& g);

// One time step. teacher, when given, is pushed into teacher-forced
// recurrent buffers in place of the value their sources produced.
std::vector<double> forward_step(const Graph& g, GraphState& state,
                                 const StepInputs& inputs,
                                 const std::vector<double>* teacher = nullptr);

std::vector<std::vector<double>> forward_sequence(
    const Graph& g, const std::vector<StepInputs>& inputs,
    const std::vector<std::vector<double>>* teacher = nullptr);

double weighted_euclidean(const std::vector<double>& y,
                          const std::vector<double>& t,
                          const std::vector<double>& w);

struct Gradients {
  std::vector<std::vector<double>> w;  // per block, dense blocks non-empty
  std::vector<std::vector<double>> b;
  // per step, per input block: d loss / d input
  std::vector<std::vector<std::vector<double>>> inputs;
  double loss = 0.0;
};

// Full backpropagation through time over one sequence, truncated at its
// boundaries. Teacher-forced buffer contents are constants.
Gradients backward_sequence(const Graph& g,
                            const std::vector<StepInputs>& inputs,
                            const std::vector<std::vector<double>>& targets,
                            const std::vector<double>& loss_weights,
                            const std::vector<std::vector<double>>* teacher =
                                nullptr);

struct Sequence {
  std::vector<StepInputs> inputs;
  std::vector<std::vector<double>> targets;
};

using Dataset = std::vector<Sequence>;

struct TrainingSchedule {
  int epochs = 1;
  double lr0 = 0.1;
  double lr_decay = 1.0;
  double momentum0 = 0.0;
  double momentum_decay = 1.0;
  double mode_mix = 0.5;  // fraction of epochs run sequentially
  uint64_t seed = 1;
};

// Per-step stochastic gradient descent with momentum. Sequential epochs walk
// utterances in order carrying state; random epochs visit frames in shuffled
// order, rebuilding each frame's short context from inputs and teacher
// values. Returns mean loss per epoch.
std::vector<double> train(Graph& g, const Dataset& data,
                          const TrainingSchedule& schedule,
                          const std::vector<double>& loss_weights);

struct QuantizedBlock {
  double scale = 0.0;
  int32_t zero_point = 0;
  std::vector<uint8_t> codes;  // weights row-major, then biases
};

struct QuantizedWeights {
  std::array<uint8_t, 32> digest{};
  std::vector<QuantizedBlock> blocks;  // dense blocks in graph order
  size_t code_bytes() const;
};

QuantizedWeights quantize(const Graph& g);
void dequantize(const QuantizedWeights& q, Graph& g);

struct TapRange {
  std::string label;
  std::string input_block;
  int offset = 0;
  int width = 0;
};

// Mean L1 of d loss / d(tap inputs) over the dataset, normalized to sum 1.
std::vector<double> tap_saliency(const Graph& g, const Dataset& data,
                                 const std::vector<TapRange>& taps,
                                 const std::vector<double>& loss_weights);

// Per-dimension affine map of raw values onto [0.1, 0.9], fitted on
// training data and stored with every model file.
struct Normalization {
  std::vector<double> lo, hi;

  static Normalization fit(const std::vector<std::vector<double>>& rows);
  std::vector<double> apply(const std::vector<double>& raw) const;
  std::vector<double> invert(const std::vector<double>& scaled) const;
};

// Model files ("NNBG"): digest-stamped weight payloads, float32 for
// checkpoints or 8-bit quantized for deployment. Topology travels
// separately; the digest binds the two.
void save_model(const std::string& path, const Graph& g,
                const Normalization& norm, bool quantized);

struct ModelInfo {
  bool quantized = false;
  Normalization norm;
  std::array<uint8_t, 32> digest{};
};

// Reads weights into a graph whose digest must match the file's.
ModelInfo load_model(const std::string& path, Graph& g);

// Header probe only; no weights are touched.
ModelInfo peek_model(const std::string& path);

}  // namespace tts
