#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "smartsense/data.hpp"
#include "smartsense/tape.hpp"

namespace smartsense {

struct Ablations {
  bool act_off = false;
  bool seq_off = false;
  bool reg_off = false;
};

struct ModelConfig {
  int d = 50;       // embedding dimensionality
  int layers = 2;   // transformer layers per encoder
  int heads = 2;    // attention heads
  int window = 10;  // window length W
  double dropout_p = 0.1;
  int n_dev = 0;
  int n_ctrl = 0;
  int n_dow = 7;
  int n_hour = 8;
  bool layer_norm_enabled = true;
  Ablations ablations;
  double lambda_reg = 1.0;
  int negatives = 5;  // negative samples per positive pair
  double lr = 0.001;
  double l2 = 1e-5;
  int batch_size = 1024;
  bool tie_output = false;

  int head_dim() const { return d / heads; }
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// One self-attention layer. Weight matrices are d x d; the feed-forward pair
// is d x 4d and 4d x d with column-vector biases; two layer-norm gain/bias
// pairs are d x 1.
struct QteLayerWeights {
  Matrix wq, wk, wv, wo;
  Matrix fnn_w1, fnn_b1, fnn_w2, fnn_b2;
  Matrix ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

// One queried transformer encoder: L self-attention layers plus the
// query-attention projection. wh is query_dim x d, bh is query_dim x 1.
struct QteWeights {
  std::vector<QteLayerWeights> layers;
  Matrix wh, bh;
  int query_dim = 0;
};

struct ModelParams {
  Matrix dev_embed;    // n_dev x d
  Matrix ctrl_embed;   // n_ctrl x d
  Matrix dow_embed;    // 7 x d
  Matrix hour_embed;   // 8 x d
  Matrix out_embed;    // n_ctrl x d; unused when tied
  Matrix global_query; // d x 1
  Matrix pos_embed;    // (W-1) x d
  QteWeights action_qte;
  QteWeights sequence_qte;
  bool tied_output = false;

  // Seeded uniform(-0.05, 0.05) for embeddings and weights, zeros for
  // biases, ones for layer-norm gains.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  // Output matrix used for prediction (ctrl_embed when tied).
  const Matrix& output_matrix() const {
    return tied_output ? ctrl_embed : out_embed;
  }

  // Visits every trainable tensor in a fixed canonical order.
  template <typename F>
  void visit(F&& f) {
    f("dev_embed", dev_embed);
    f("ctrl_embed", ctrl_embed);
    f("dow_embed", dow_embed);
    f("hour_embed", hour_embed);
    if (!tied_output) f("out_embed", out_embed);
    f("global_query", global_query);
    f("pos_embed", pos_embed);
    const auto visit_qte = [&](const std::string& prefix, QteWeights& qte) {
      for (std::size_t l = 0; l < qte.layers.size(); ++l) {
        QteLayerWeights& layer = qte.layers[l];
        const std::string base = prefix + ".layer" + std::to_string(l) + ".";
        f(base + "wq", layer.wq);
        f(base + "wk", layer.wk);
        f(base + "wv", layer.wv);
        f(base + "wo", layer.wo);
        f(base + "fnn_w1", layer.fnn_w1);
        f(base + "fnn_b1", layer.fnn_b1);
        f(base + "fnn_w2", layer.fnn_w2);
        f(base + "fnn_b2", layer.fnn_b2);
        f(base + "ln1_gain", layer.ln1_gain);
        f(base + "ln1_bias", layer.ln1_bias);
        f(base + "ln2_gain", layer.ln2_gain);
        f(base + "ln2_bias", layer.ln2_bias);
      }
      f(prefix + ".wh", qte.wh);
      f(prefix + ".bh", qte.bh);
    };
    visit_qte("action_qte", action_qte);
    visit_qte("sequence_qte", sequence_qte);
  }

  std::vector<Matrix*> tensors();
  std::vector<std::string> tensor_names();
};

// Tape leaves for every trainable tensor, in ModelParams::visit order.
struct QteLayerVars {
  Tape::Var wq, wk, wv, wo;
  Tape::Var fnn_w1, fnn_b1, fnn_w2, fnn_b2;
  Tape::Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

struct QteVars {
  std::vector<QteLayerVars> layers;
  Tape::Var wh, bh;
  int query_dim = 0;
};

struct ParamVars {
  Tape::Var dev, ctrl, dow, hour, out, global_query, pos;
  QteVars action, sequence;
  std::vector<Tape::Var> flat;  // visit order, for gradient extraction

  static ParamVars leaves(Tape& tape, ModelParams& params);
};

// Attention matrices recorded during a forward pass, for exports and
// invariant checks. Entries are (N*k) x k with one k x k block per input.
struct ForwardTrace {
  std::vector<std::vector<Tape::Var>> action_attention;  // [layer][head]
  std::vector<std::vector<Tape::Var>> seq_attention;     // [layer][head]
  Tape::Var action_alpha;  // (B*(W-1)) x 4 query-attention weights
  Tape::Var seq_alpha;     // B x (W-1)
};

// Context-aware action encoder over a batch of events; returns M x d.
Tape::Var encode_actions_graph(Tape& tape, const ParamVars& vars,
                               const ModelConfig& config,
                               std::span<const ActionEvent> events, Mode mode,
                               Rng& rng, ForwardTrace* trace);

// Context-attentive sequence encoder over B stacked histories; actions is
// (B*(W-1)) x d and targets holds (dow, hour_bin) per history. Returns B x d.
Tape::Var encode_sequences_graph(Tape& tape, const ParamVars& vars,
                                 const ModelConfig& config, Tape::Var actions,
                                 std::span<const std::pair<int, int>> targets,
                                 Mode mode, Rng& rng, ForwardTrace* trace);

// Full batched forward to control logits (B x n_ctrl).
Tape::Var forward_logits_graph(Tape& tape, const ParamVars& vars,
                               const ModelConfig& config,
                               std::span<const Instance> batch, Mode mode,
                               Rng& rng, ForwardTrace* trace);

struct AttentionResult {
  Matrix hidden;                        // k x d
  std::vector<Matrix> head_attention;   // h matrices, k x k row-stochastic
};

// One self-attention layer applied to a k x d input.
AttentionResult self_attention_block(const Matrix& x,
                                     const QteLayerWeights& weights,
                                     const ModelConfig& config, Mode mode,
                                     Rng& rng);

// Softmax-weighted sum of the rows of h; scores are q^T tanh(wh h_i + bh).
Vector query_attention(const Matrix& h, const Vector& query, const Matrix& wh,
                       const Vector& bh);

Vector encode_action(const ActionEvent& event, ModelParams& params,
                     const ModelConfig& config, Mode mode, Rng& rng);

Vector encode_sequence(const Matrix& action_vecs, int target_dow,
                       int target_hour_bin, ModelParams& params,
                       const ModelConfig& config, Mode mode, Rng& rng);

// Probability vector over controls (positive, sums to 1).
Vector predict_controls(const Instance& instance, ModelParams& params,
                        const ModelConfig& config, Mode mode, Rng& rng);

// Head-averaged attention of the final action-encoder layer, eval mode.
Matrix export_action_attention(const ActionEvent& event, ModelParams& params,
                               const ModelConfig& config);

// Sequence query-attention weights over the W-1 history events, eval mode.
Vector export_sequence_attention(const Instance& instance, ModelParams& params,
                                 const ModelConfig& config);

// Cosine similarities between rows; zero-norm rows give 0 with diagonal 1.
Matrix embedding_similarity(const Matrix& table);

enum class CheckpointDtype { kFloat64, kFloat32 };

void save_checkpoint(const std::string& path, ModelParams& params,
                     const ModelConfig& config,
                     const std::optional<Vocabulary>& vocab,
                     CheckpointDtype dtype = CheckpointDtype::kFloat64);

struct Checkpoint {
  ModelParams params;
  ModelConfig config;
  std::optional<Vocabulary> vocab;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace smartsense
