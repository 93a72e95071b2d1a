#include "smartsense/model.hpp"

#include <cmath>
#include <fstream>

#include "smartsense/numeric.hpp"

namespace smartsense {

using nlohmann::json;

void ModelConfig::validate() const {
  if (d <= 0 || heads <= 0 || d % heads != 0) {
    throw UsageError("config: d must be positive and divisible by heads");
  }
  if (layers <= 0) throw UsageError("config: layers must be positive");
  if (window < 2) throw UsageError("config: window must be at least 2");
  if (n_dev <= 0 || n_ctrl <= 0 || n_dow <= 0 || n_hour <= 0) {
    throw UsageError("config: vocabulary sizes must be positive");
  }
  if (dropout_p < 0.0 || dropout_p >= 1.0) {
    throw UsageError("config: dropout_p must be in [0, 1)");
  }
  if (lambda_reg < 0.0) throw UsageError("config: lambda_reg must be >= 0");
  if (negatives < 0) throw UsageError("config: negatives must be >= 0");
  if (batch_size <= 0) throw UsageError("config: batch_size must be positive");
}

json ModelConfig::to_json() const {
  return json{{"d", d},
              {"layers", layers},
              {"heads", heads},
              {"window", window},
              {"dropout_p", dropout_p},
              {"n_dev", n_dev},
              {"n_ctrl", n_ctrl},
              {"n_dow", n_dow},
              {"n_hour", n_hour},
              {"layer_norm_enabled", layer_norm_enabled},
              {"act_off", ablations.act_off},
              {"seq_off", ablations.seq_off},
              {"reg_off", ablations.reg_off},
              {"lambda_reg", lambda_reg},
              {"negatives", negatives},
              {"lr", lr},
              {"l2", l2},
              {"batch_size", batch_size},
              {"tie_output", tie_output}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig config;
  const auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("d", config.d);
  get("layers", config.layers);
  get("heads", config.heads);
  get("window", config.window);
  get("dropout_p", config.dropout_p);
  get("n_dev", config.n_dev);
  get("n_ctrl", config.n_ctrl);
  get("n_dow", config.n_dow);
  get("n_hour", config.n_hour);
  get("layer_norm_enabled", config.layer_norm_enabled);
  get("act_off", config.ablations.act_off);
  get("seq_off", config.ablations.seq_off);
  get("reg_off", config.ablations.reg_off);
  get("lambda_reg", config.lambda_reg);
  get("negatives", config.negatives);
  get("lr", config.lr);
  get("l2", config.l2);
  get("batch_size", config.batch_size);
  get("tie_output", config.tie_output);
  return config;
}

namespace {

Matrix uniform_matrix(Index rows, Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Index c = 0; c < cols; ++c) {
    for (Index r = 0; r < rows; ++r) {
      m(r, c) = next_uniform(rng, -0.05, 0.05);
    }
  }
  return m;
}

QteWeights init_qte(const ModelConfig& config, int query_dim, Rng& rng) {
  QteWeights qte;
  qte.query_dim = query_dim;
  qte.layers.resize(config.layers);
  const Index d = config.d;
  for (QteLayerWeights& layer : qte.layers) {
    layer.wq = uniform_matrix(d, d, rng);
    layer.wk = uniform_matrix(d, d, rng);
    layer.wv = uniform_matrix(d, d, rng);
    layer.wo = uniform_matrix(d, d, rng);
    layer.fnn_w1 = uniform_matrix(d, 4 * d, rng);
    layer.fnn_b1 = Matrix::Zero(4 * d, 1);
    layer.fnn_w2 = uniform_matrix(4 * d, d, rng);
    layer.fnn_b2 = Matrix::Zero(d, 1);
    layer.ln1_gain = Matrix::Ones(d, 1);
    layer.ln1_bias = Matrix::Zero(d, 1);
    layer.ln2_gain = Matrix::Ones(d, 1);
    layer.ln2_bias = Matrix::Zero(d, 1);
  }
  qte.wh = uniform_matrix(query_dim, d, rng);
  qte.bh = Matrix::Zero(query_dim, 1);
  return qte;
}

void check_event(const ActionEvent& event, const ModelConfig& config) {
  if (event.device < 0 || event.device >= config.n_dev ||
      event.control < 0 || event.control >= config.n_ctrl ||
      event.dow < 0 || event.dow >= config.n_dow || event.hour_bin < 0 ||
      event.hour_bin >= config.n_hour) {
    throw UsageError("event index out of vocabulary range");
  }
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ModelParams params;
  params.tied_output = config.tie_output;
  params.dev_embed = uniform_matrix(config.n_dev, config.d, rng);
  params.ctrl_embed = uniform_matrix(config.n_ctrl, config.d, rng);
  params.dow_embed = uniform_matrix(config.n_dow, config.d, rng);
  params.hour_embed = uniform_matrix(config.n_hour, config.d, rng);
  params.out_embed = config.tie_output
                         ? Matrix()
                         : uniform_matrix(config.n_ctrl, config.d, rng);
  params.global_query = uniform_matrix(config.d, 1, rng);
  params.pos_embed = uniform_matrix(config.window - 1, config.d, rng);
  params.action_qte = init_qte(config, config.d, rng);
  params.sequence_qte = init_qte(config, 2 * config.d, rng);
  return params;
}

std::vector<Matrix*> ModelParams::tensors() {
  std::vector<Matrix*> out;
  visit([&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<std::string> ModelParams::tensor_names() {
  std::vector<std::string> out;
  visit([&](const std::string& name, Matrix&) { out.push_back(name); });
  return out;
}

ParamVars ParamVars::leaves(Tape& tape, ModelParams& params) {
  ParamVars vars;
  params.visit([&](const std::string&, Matrix& tensor) {
    vars.flat.push_back(tape.leaf(tensor));
  });
  // Mirror of ModelParams::visit order.
  std::size_t at = 0;
  const auto next = [&]() { return vars.flat.at(at++); };
  vars.dev = next();
  vars.ctrl = next();
  vars.dow = next();
  vars.hour = next();
  vars.out = params.tied_output ? vars.ctrl : next();
  vars.global_query = next();
  vars.pos = next();
  const auto read_qte = [&](QteVars& q, const QteWeights& w) {
    q.query_dim = w.query_dim;
    q.layers.resize(w.layers.size());
    for (QteLayerVars& layer : q.layers) {
      layer.wq = next();
      layer.wk = next();
      layer.wv = next();
      layer.wo = next();
      layer.fnn_w1 = next();
      layer.fnn_b1 = next();
      layer.fnn_w2 = next();
      layer.fnn_b2 = next();
      layer.ln1_gain = next();
      layer.ln1_bias = next();
      layer.ln2_gain = next();
      layer.ln2_bias = next();
    }
    q.wh = next();
    q.bh = next();
  };
  read_qte(vars.action, params.action_qte);
  read_qte(vars.sequence, params.sequence_qte);
  return vars;
}

namespace {

Tape::Var maybe_dropout(Tape& tape, Tape::Var v, const ModelConfig& config,
                        Mode mode, Rng& rng) {
  if (mode == Mode::kEval || config.dropout_p == 0.0) return v;
  const Matrix& shape = tape.value(v);
  return tape.mask(v, dropout_mask(shape.rows(), shape.cols(),
                                   config.dropout_p, rng));
}

// One self-attention layer over (N*k) x d stacked blocks.
Tape::Var attention_layer_graph(Tape& tape, const QteLayerVars& w,
                                Tape::Var x, Index k,
                                const ModelConfig& config, Mode mode, Rng& rng,
                                std::vector<Tape::Var>* attention_out) {
  const Index dh = config.head_dim();
  std::vector<Tape::Var> heads;
  heads.reserve(config.heads);
  for (int h = 0; h < config.heads; ++h) {
    const Index at = h * dh;
    Tape::Var q = tape.matmul(x, tape.slice_cols(w.wq, at, dh));
    Tape::Var key = tape.matmul(x, tape.slice_cols(w.wk, at, dh));
    Tape::Var v = tape.matmul(x, tape.slice_cols(w.wv, at, dh));
    Tape::Var scores = tape.block_matmul_nt(
        q, key, k, k, 1.0 / std::sqrt(static_cast<double>(dh)));
    Tape::Var attention = tape.softmax_rows(scores);
    if (attention_out != nullptr) attention_out->push_back(attention);
    heads.push_back(tape.block_matmul(attention, v, k, k));
  }
  Tape::Var xbar = tape.matmul(tape.concat_cols(heads), w.wo);

  Tape::Var res1 = tape.add(x, maybe_dropout(tape, xbar, config, mode, rng));
  if (config.layer_norm_enabled) {
    res1 = tape.layer_norm(res1, w.ln1_gain, w.ln1_bias, kLayerNormEps);
  }
  Tape::Var hidden = tape.relu(
      tape.add_row_broadcast(tape.matmul(res1, w.fnn_w1), w.fnn_b1));
  Tape::Var fnn =
      tape.add_row_broadcast(tape.matmul(hidden, w.fnn_w2), w.fnn_b2);
  Tape::Var out = tape.add(res1, maybe_dropout(tape, fnn, config, mode, rng));
  if (config.layer_norm_enabled) {
    out = tape.layer_norm(out, w.ln2_gain, w.ln2_bias, kLayerNormEps);
  }
  return out;
}

// Query-attention summary of (N*k) x d hidden blocks down to N x d. The
// query is either one global column vector or one row per block.
Tape::Var query_attention_graph(Tape& tape, const QteVars& qte, Tape::Var h,
                                Index k, std::optional<Tape::Var> global_query,
                                std::optional<Tape::Var> query_rows,
                                Tape::Var* alpha_out) {
  Tape::Var projected = tape.tanh(tape.add_row_broadcast(
      tape.matmul(h, tape.transpose(qte.wh)), qte.bh));
  Tape::Var beta;
  if (global_query.has_value()) {
    beta = tape.matmul(projected, *global_query);
  } else {
    beta = tape.rowwise_dot(projected, tape.repeat_rows(*query_rows, k));
  }
  Tape::Var alpha = tape.softmax_rows(tape.fold_rows(beta, k));
  if (alpha_out != nullptr) *alpha_out = alpha;
  return tape.block_matmul(alpha, h, 1, k);
}

}  // namespace

Tape::Var encode_actions_graph(Tape& tape, const ParamVars& vars,
                               const ModelConfig& config,
                               std::span<const ActionEvent> events, Mode mode,
                               Rng& rng, ForwardTrace* trace) {
  std::vector<Index> dev_idx, ctrl_idx, dow_idx, hour_idx;
  dev_idx.reserve(events.size());
  ctrl_idx.reserve(events.size());
  dow_idx.reserve(events.size());
  hour_idx.reserve(events.size());
  for (const ActionEvent& event : events) {
    check_event(event, config);
    dev_idx.push_back(event.device);
    ctrl_idx.push_back(event.control);
    dow_idx.push_back(event.dow);
    hour_idx.push_back(event.hour_bin);
  }
  Tape::Var e_dev = tape.gather_rows(vars.dev, std::move(dev_idx));
  Tape::Var e_ctrl = tape.gather_rows(vars.ctrl, std::move(ctrl_idx));
  Tape::Var e_dow = tape.gather_rows(vars.dow, std::move(dow_idx));
  Tape::Var e_hour = tape.gather_rows(vars.hour, std::move(hour_idx));

  if (config.ablations.act_off) {
    return tape.scale(
        tape.add(tape.add(tape.add(e_dev, e_ctrl), e_dow), e_hour), 0.25);
  }

  Tape::Var x = tape.interleave_rows({e_dev, e_ctrl, e_dow, e_hour});
  for (int l = 0; l < config.layers; ++l) {
    std::vector<Tape::Var>* attn = nullptr;
    if (trace != nullptr) {
      trace->action_attention.emplace_back();
      attn = &trace->action_attention.back();
    }
    x = attention_layer_graph(tape, vars.action.layers[l], x, 4, config, mode,
                              rng, attn);
  }
  return query_attention_graph(tape, vars.action, x, 4, vars.global_query,
                               std::nullopt,
                               trace != nullptr ? &trace->action_alpha
                                                : nullptr);
}

Tape::Var encode_sequences_graph(Tape& tape, const ParamVars& vars,
                                 const ModelConfig& config, Tape::Var actions,
                                 std::span<const std::pair<int, int>> targets,
                                 Mode mode, Rng& rng, ForwardTrace* trace) {
  const Index ww = config.window - 1;
  const Index batch = static_cast<Index>(targets.size());
  if (tape.value(actions).rows() != ww * batch) {
    throw UsageError("encode_sequences: action row count must be B*(W-1)");
  }
  Tape::Var x = tape.add(actions, tape.tile_rows(vars.pos, batch));
  for (int l = 0; l < config.layers; ++l) {
    std::vector<Tape::Var>* attn = nullptr;
    if (trace != nullptr) {
      trace->seq_attention.emplace_back();
      attn = &trace->seq_attention.back();
    }
    x = attention_layer_graph(tape, vars.sequence.layers[l], x, ww, config,
                              mode, rng, attn);
  }

  std::optional<Tape::Var> query_rows;
  if (config.ablations.seq_off) {
    query_rows = tape.constant(Matrix::Zero(batch, 2 * config.d));
  } else {
    std::vector<Index> dow_idx, hour_idx;
    dow_idx.reserve(targets.size());
    hour_idx.reserve(targets.size());
    for (const auto& [dow, hour_bin] : targets) {
      if (dow < 0 || dow >= config.n_dow || hour_bin < 0 ||
          hour_bin >= config.n_hour) {
        throw UsageError("target context index out of range");
      }
      dow_idx.push_back(dow);
      hour_idx.push_back(hour_bin);
    }
    Tape::Var z_dow = tape.gather_rows(vars.dow, std::move(dow_idx));
    Tape::Var z_hour = tape.gather_rows(vars.hour, std::move(hour_idx));
    query_rows = tape.concat_cols({z_dow, z_hour});
  }
  return query_attention_graph(tape, vars.sequence, x, ww, std::nullopt,
                               query_rows,
                               trace != nullptr ? &trace->seq_alpha : nullptr);
}

Tape::Var forward_logits_graph(Tape& tape, const ParamVars& vars,
                               const ModelConfig& config,
                               std::span<const Instance> batch, Mode mode,
                               Rng& rng, ForwardTrace* trace) {
  const std::size_t ww = static_cast<std::size_t>(config.window) - 1;
  std::vector<ActionEvent> events;
  events.reserve(batch.size() * ww);
  std::vector<std::pair<int, int>> targets;
  targets.reserve(batch.size());
  for (const Instance& instance : batch) {
    if (instance.history.size() != ww) {
      throw UsageError("instance history length must be W-1");
    }
    events.insert(events.end(), instance.history.begin(),
                  instance.history.end());
    targets.emplace_back(instance.target_dow, instance.target_hour_bin);
  }
  Tape::Var actions =
      encode_actions_graph(tape, vars, config, events, mode, rng, trace);
  Tape::Var summary = encode_sequences_graph(tape, vars, config, actions,
                                             targets, mode, rng, trace);
  return tape.matmul(summary, tape.transpose(vars.out));
}

AttentionResult self_attention_block(const Matrix& x,
                                     const QteLayerWeights& weights,
                                     const ModelConfig& config, Mode mode,
                                     Rng& rng) {
  if (x.rows() < 1 || x.cols() != config.d) {
    throw UsageError("self_attention_block: input must be k x d with k >= 1");
  }
  Tape tape;
  QteLayerVars vars;
  vars.wq = tape.constant(weights.wq);
  vars.wk = tape.constant(weights.wk);
  vars.wv = tape.constant(weights.wv);
  vars.wo = tape.constant(weights.wo);
  vars.fnn_w1 = tape.constant(weights.fnn_w1);
  vars.fnn_b1 = tape.constant(weights.fnn_b1);
  vars.fnn_w2 = tape.constant(weights.fnn_w2);
  vars.fnn_b2 = tape.constant(weights.fnn_b2);
  vars.ln1_gain = tape.constant(weights.ln1_gain);
  vars.ln1_bias = tape.constant(weights.ln1_bias);
  vars.ln2_gain = tape.constant(weights.ln2_gain);
  vars.ln2_bias = tape.constant(weights.ln2_bias);
  Tape::Var input = tape.constant(x);
  std::vector<Tape::Var> attention;
  Tape::Var out = attention_layer_graph(tape, vars, input, x.rows(), config,
                                        mode, rng, &attention);
  AttentionResult result;
  result.hidden = tape.value(out);
  result.head_attention.reserve(attention.size());
  for (Tape::Var a : attention) {
    result.head_attention.push_back(tape.value(a));
  }
  return result;
}

Vector query_attention(const Matrix& h, const Vector& query, const Matrix& wh,
                       const Vector& bh) {
  if (wh.cols() != h.cols() || wh.rows() != query.size() ||
      bh.size() != query.size()) {
    throw UsageError("query_attention: shape mismatch");
  }
  Matrix projected = (h * wh.transpose()).rowwise() + bh.transpose();
  projected = projected.array().tanh().matrix();
  Vector beta = projected * query;
  const Matrix alpha = softmax_rows(beta.transpose());
  return h.transpose() * alpha.row(0).transpose();
}

namespace {

Rng eval_rng() { return Rng(0); }

}  // namespace

Vector encode_action(const ActionEvent& event, ModelParams& params,
                     const ModelConfig& config, Mode mode, Rng& rng) {
  Tape tape;
  ParamVars vars = ParamVars::leaves(tape, params);
  const ActionEvent events[1] = {event};
  Tape::Var out =
      encode_actions_graph(tape, vars, config, events, mode, rng, nullptr);
  return tape.value(out).row(0).transpose();
}

Vector encode_sequence(const Matrix& action_vecs, int target_dow,
                       int target_hour_bin, ModelParams& params,
                       const ModelConfig& config, Mode mode, Rng& rng) {
  if (action_vecs.rows() != config.window - 1 ||
      action_vecs.cols() != config.d) {
    throw UsageError("encode_sequence: expected (W-1) x d action matrix");
  }
  Tape tape;
  ParamVars vars = ParamVars::leaves(tape, params);
  Tape::Var actions = tape.constant(action_vecs);
  const std::pair<int, int> targets[1] = {{target_dow, target_hour_bin}};
  Tape::Var out = encode_sequences_graph(tape, vars, config, actions, targets,
                                         mode, rng, nullptr);
  return tape.value(out).row(0).transpose();
}

Vector predict_controls(const Instance& instance, ModelParams& params,
                        const ModelConfig& config, Mode mode, Rng& rng) {
  Tape tape;
  ParamVars vars = ParamVars::leaves(tape, params);
  const Instance batch[1] = {instance};
  Tape::Var logits =
      forward_logits_graph(tape, vars, config, batch, mode, rng, nullptr);
  return softmax_rows(tape.value(logits)).row(0).transpose();
}

Matrix export_action_attention(const ActionEvent& event, ModelParams& params,
                               const ModelConfig& config) {
  Tape tape;
  ParamVars vars = ParamVars::leaves(tape, params);
  ForwardTrace trace;
  Rng rng = eval_rng();
  const ActionEvent events[1] = {event};
  encode_actions_graph(tape, vars, config, events, Mode::kEval, rng, &trace);
  if (trace.action_attention.empty()) {
    throw UsageError("attention export requires the action encoder (act_off "
                     "disables it)");
  }
  const std::vector<Tape::Var>& last = trace.action_attention.back();
  Matrix mean = Matrix::Zero(4, 4);
  for (Tape::Var head : last) {
    mean += tape.value(head);
  }
  return mean / static_cast<double>(last.size());
}

Vector export_sequence_attention(const Instance& instance, ModelParams& params,
                                 const ModelConfig& config) {
  Tape tape;
  ParamVars vars = ParamVars::leaves(tape, params);
  ForwardTrace trace;
  Rng rng = eval_rng();
  const Instance batch[1] = {instance};
  forward_logits_graph(tape, vars, config, batch, Mode::kEval, rng, &trace);
  return tape.value(trace.seq_alpha).row(0).transpose();
}

Matrix embedding_similarity(const Matrix& table) {
  const Index n = table.rows();
  const Vector norms = table.rowwise().norm();
  Matrix sim = table * table.transpose();
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const double denom = norms(i) * norms(j);
      sim(i, j) = denom > 0.0 ? sim(i, j) / denom : 0.0;
    }
  }
  sim.diagonal().setOnes();
  return sim;
}

namespace {

constexpr int kCheckpointVersion = 1;

const char* dtype_name(CheckpointDtype dtype) {
  return dtype == CheckpointDtype::kFloat64 ? "f64" : "f32";
}

std::size_t dtype_size(CheckpointDtype dtype) {
  return dtype == CheckpointDtype::kFloat64 ? 8 : 4;
}

void write_tensor(std::ofstream& out, const Matrix& m, CheckpointDtype dtype) {
  // Row-major little-endian values.
  if (dtype == CheckpointDtype::kFloat64) {
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) {
        const double v = m(r, c);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
    }
  } else {
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) {
        const float v = static_cast<float>(m(r, c));
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
    }
  }
}

void read_tensor(std::ifstream& in, Matrix& m, CheckpointDtype dtype) {
  if (dtype == CheckpointDtype::kFloat64) {
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) {
        double v = 0.0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        m(r, c) = v;
      }
    }
  } else {
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) {
        float v = 0.0f;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        m(r, c) = static_cast<double>(v);
      }
    }
  }
}

json vocab_json(const Vocabulary& vocab) {
  json controls = json::array();
  for (const auto& [device, control] : vocab.controls()) {
    controls.push_back({device, control});
  }
  return json{{"devices", vocab.devices()}, {"controls", controls}};
}

}  // namespace

void save_checkpoint(const std::string& path, ModelParams& params,
                     const ModelConfig& config,
                     const std::optional<Vocabulary>& vocab,
                     CheckpointDtype dtype) {
  json directory = json::array();
  std::size_t offset = 0;
  params.visit([&](const std::string& name, Matrix& m) {
    directory.push_back({{"name", name},
                         {"rows", m.rows()},
                         {"cols", m.cols()},
                         {"dtype", dtype_name(dtype)},
                         {"offset", offset}});
    offset += static_cast<std::size_t>(m.size()) * dtype_size(dtype);
  });
  json header{{"format_version", kCheckpointVersion},
              {"config", config.to_json()},
              {"tensors", directory}};
  if (vocab.has_value()) header["vocab"] = vocab_json(*vocab);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path + ": cannot open for writing");
  out << header.dump() << "\n";
  params.visit([&](const std::string&, Matrix& m) {
    write_tensor(out, m, dtype);
  });
  if (!out) throw ParseError(path + ": write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open file");
  std::string header_line;
  if (!std::getline(in, header_line)) {
    throw ParseError(path + ": missing checkpoint header");
  }
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::exception& e) {
    throw ParseError(path + ": bad header: " + e.what());
  }
  if (header.at("format_version").get<int>() != kCheckpointVersion) {
    throw ParseError(path + ": unsupported format version");
  }
  Checkpoint checkpoint;
  checkpoint.config = ModelConfig::from_json(header.at("config"));
  checkpoint.params = ModelParams::init(checkpoint.config, 0);
  if (header.contains("vocab")) {
    Vocabulary vocab;
    for (const auto& name : header.at("vocab").at("devices")) {
      vocab.add_device(name.get<std::string>());
    }
    for (const auto& pair : header.at("vocab").at("controls")) {
      vocab.add_control(pair.at(0).get<std::string>(),
                        pair.at(1).get<std::string>());
    }
    checkpoint.vocab = std::move(vocab);
  }

  const json& directory = header.at("tensors");
  std::size_t slot = 0;
  checkpoint.params.visit([&](const std::string& name, Matrix& m) {
    if (slot >= directory.size()) {
      throw ParseError(path + ": tensor directory too short");
    }
    const json& entry = directory[slot++];
    if (entry.at("name").get<std::string>() != name ||
        entry.at("rows").get<Index>() != m.rows() ||
        entry.at("cols").get<Index>() != m.cols()) {
      throw ParseError(path + ": tensor directory mismatch at " + name);
    }
    const std::string dtype_str = entry.at("dtype").get<std::string>();
    const CheckpointDtype dtype = dtype_str == "f64"
                                      ? CheckpointDtype::kFloat64
                                      : CheckpointDtype::kFloat32;
    read_tensor(in, m, dtype);
  });
  if (!in) throw ParseError(path + ": truncated tensor data");
  return checkpoint;
}

}  // namespace smartsense
