#include "finchat/tinylm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace finchat {

using nlohmann::json;

void ModelConfig::validate() const {
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0) {
        throw Error("model config: dimensions must be positive");
    }
    if (d_model % n_heads != 0) throw Error("model config: d_model must be divisible by n_heads");
    if (context_length <= 0 || context_length > 1024) {
        throw Error("model config: context_length must be in [1,1024]");
    }
    if (vocab_size < Tokenizer::kReservedCount) throw Error("model config: vocab_size too small");
    if (n_prefix < 0 || knowledge_dim <= 0) throw Error("model config: invalid prefix settings");
}

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

Mat& ParamStore::add(const std::string& name, Mat tensor) {
    if (index_.count(name)) throw Error("duplicate parameter tensor: " + name);
    index_[name] = names_.size();
    names_.push_back(name);
    tensors_.push_back(std::move(tensor));
    return tensors_.back();
}

Mat& ParamStore::at(const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter tensor: " + name);
    return tensors_[it->second];
}

const Mat& ParamStore::at(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter tensor: " + name);
    return tensors_[it->second];
}

std::int64_t ParamStore::total_elements() const {
    std::int64_t n = 0;
    for (const Mat& t : tensors_) n += static_cast<std::int64_t>(t.size());
    return n;
}

bool ParamStore::same_shape_as(const ParamStore& other) const {
    if (names_ != other.names_) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        if (tensors_[i].rows() != other.tensors_[i].rows() ||
            tensors_[i].cols() != other.tensors_[i].cols()) {
            return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace {

Mat gauss_mat(Rng& rng, int rows, int cols, double std_dev) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng_gauss(rng) * std_dev;
    return m;
}

std::string layer_key(int layer, const char* suffix) {
    return "L" + std::to_string(layer) + "." + suffix;
}

}  // namespace

ParamStore init_parameters(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng = make_rng(seed, "init");
    const double std_dev = 0.08;
    const int d = config.d_model;

    ParamStore params;
    params.add("tok_emb", gauss_mat(rng, config.vocab_size, d, std_dev));
    params.add("pos_emb", gauss_mat(rng, config.context_length, d, std_dev));
    for (int l = 0; l < config.n_layers; ++l) {
        params.add(layer_key(l, "ln1.g"), Mat::Ones(1, d));
        params.add(layer_key(l, "ln1.b"), Mat::Zero(1, d));
        params.add(layer_key(l, "attn.wq"), gauss_mat(rng, d, d, std_dev));
        params.add(layer_key(l, "attn.bq"), Mat::Zero(1, d));
        params.add(layer_key(l, "attn.wk"), gauss_mat(rng, d, d, std_dev));
        params.add(layer_key(l, "attn.bk"), Mat::Zero(1, d));
        params.add(layer_key(l, "attn.wv"), gauss_mat(rng, d, d, std_dev));
        params.add(layer_key(l, "attn.bv"), Mat::Zero(1, d));
        params.add(layer_key(l, "attn.wo"), gauss_mat(rng, d, d, std_dev));
        params.add(layer_key(l, "attn.bo"), Mat::Zero(1, d));
        params.add(layer_key(l, "ln2.g"), Mat::Ones(1, d));
        params.add(layer_key(l, "ln2.b"), Mat::Zero(1, d));
        params.add(layer_key(l, "ff.w1"), gauss_mat(rng, d, config.d_ff, std_dev));
        params.add(layer_key(l, "ff.b1"), Mat::Zero(1, config.d_ff));
        params.add(layer_key(l, "ff.w2"), gauss_mat(rng, config.d_ff, d, std_dev));
        params.add(layer_key(l, "ff.b2"), Mat::Zero(1, d));
    }
    params.add("final_ln.g", Mat::Ones(1, d));
    params.add("final_ln.b", Mat::Zero(1, d));
    params.add("out.w", gauss_mat(rng, d, config.vocab_size, std_dev));
    params.add("out.b", Mat::Zero(1, config.vocab_size));
    // Zero projection keeps prefix fusion inert until trained.
    params.add("knowledge_proj.w", Mat::Zero(config.knowledge_dim, config.n_prefix * d));
    return params;
}

// ---------------------------------------------------------------------------
// Binding
// ---------------------------------------------------------------------------

Var BoundParams::at(const std::string& name) const {
    const auto it = vars.find(name);
    if (it == vars.end()) throw Error("unbound parameter tensor: " + name);
    return it->second;
}

BoundParams bind_params(Tape& tape, const ParamStore& params, bool needs_grad) {
    BoundParams bound;
    for (const std::string& name : params.names()) {
        bound.vars[name] = tape.leaf(params.at(name), needs_grad);
    }
    return bound;
}

ParamStore collect_grads(const Tape& tape, const BoundParams& bound, const ParamStore& params) {
    ParamStore grads;
    for (const std::string& name : params.names()) {
        grads.add(name, tape.grad(bound.at(name)));
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Transformer graph
// ---------------------------------------------------------------------------

Var transformer_logits(Tape& tape, const BoundParams& bound, const ModelConfig& config,
                       const std::vector<int>& token_ids,
                       const std::vector<double>& fact_embedding) {
    config.validate();
    if (token_ids.empty()) throw Error("forward: empty token sequence");
    const int n = static_cast<int>(token_ids.size());
    if (n > config.context_length) {
        throw Error("sequence too long: " + std::to_string(n) + " > context_length " +
                    std::to_string(config.context_length));
    }
    for (int id : token_ids) {
        if (id < 0 || id >= config.vocab_size) throw Error("forward: token id out of range");
    }

    // Prefix pseudo-token rows from the fused fact embedding. All-zero rows
    // are masked out of attention entirely so a zero projection is an exact
    // no-op.
    int prefix = 0;
    std::vector<bool> alive;
    Var prefix_rows{};
    if (!fact_embedding.empty()) {
        if (static_cast<int>(fact_embedding.size()) != config.knowledge_dim) {
            throw Error("forward: fact embedding dimension mismatch");
        }
        prefix = config.n_prefix;
        Mat fact(1, config.knowledge_dim);
        for (int i = 0; i < config.knowledge_dim; ++i) fact(0, i) = fact_embedding[static_cast<std::size_t>(i)];
        const Var fact_var = tape.constant(std::move(fact));
        const Var projected = tape.matmul(fact_var, bound.at("knowledge_proj.w"));
        prefix_rows = tape.reshape(projected, prefix, config.d_model);
        alive.resize(static_cast<std::size_t>(prefix));
        const Mat& rows = tape.value(prefix_rows);
        for (int r = 0; r < prefix; ++r) {
            alive[static_cast<std::size_t>(r)] = rows.row(r).cwiseAbs().maxCoeff() > 0.0;
        }
    }

    std::vector<int> positions(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) positions[static_cast<std::size_t>(i)] = i;
    Var x = tape.add(tape.gather_rows(bound.at("tok_emb"), token_ids),
                     tape.gather_rows(bound.at("pos_emb"), positions));
    if (prefix > 0) x = tape.concat_rows({prefix_rows, x});

    const int dh = config.d_model / config.n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    for (int l = 0; l < config.n_layers; ++l) {
        const Var norm1 = tape.layer_norm(x, bound.at(layer_key(l, "ln1.g")),
                                          bound.at(layer_key(l, "ln1.b")));
        const Var q = tape.add_rowvec(tape.matmul(norm1, bound.at(layer_key(l, "attn.wq"))),
                                      bound.at(layer_key(l, "attn.bq")));
        const Var k = tape.add_rowvec(tape.matmul(norm1, bound.at(layer_key(l, "attn.wk"))),
                                      bound.at(layer_key(l, "attn.bk")));
        const Var v = tape.add_rowvec(tape.matmul(norm1, bound.at(layer_key(l, "attn.wv"))),
                                      bound.at(layer_key(l, "attn.bv")));
        std::vector<Var> heads;
        heads.reserve(static_cast<std::size_t>(config.n_heads));
        for (int h = 0; h < config.n_heads; ++h) {
            const Var qh = tape.slice_cols(q, h * dh, dh);
            const Var kh = tape.slice_cols(k, h * dh, dh);
            const Var vh = tape.slice_cols(v, h * dh, dh);
            const Var scores = tape.mul_scalar(tape.matmul_nt(qh, kh), scale);
            const Var attn = tape.causal_softmax(scores, prefix, alive);
            heads.push_back(tape.matmul(attn, vh));
        }
        const Var ctx = config.n_heads == 1 ? heads[0] : tape.concat_cols(heads);
        const Var attn_out = tape.add_rowvec(tape.matmul(ctx, bound.at(layer_key(l, "attn.wo"))),
                                             bound.at(layer_key(l, "attn.bo")));
        x = tape.add(x, attn_out);

        const Var norm2 = tape.layer_norm(x, bound.at(layer_key(l, "ln2.g")),
                                          bound.at(layer_key(l, "ln2.b")));
        const Var hidden = tape.gelu(tape.add_rowvec(tape.matmul(norm2, bound.at(layer_key(l, "ff.w1"))),
                                                     bound.at(layer_key(l, "ff.b1"))));
        const Var ff_out = tape.add_rowvec(tape.matmul(hidden, bound.at(layer_key(l, "ff.w2"))),
                                           bound.at(layer_key(l, "ff.b2")));
        x = tape.add(x, ff_out);
    }

    const Var final_norm = tape.layer_norm(x, bound.at("final_ln.g"), bound.at("final_ln.b"));
    Var logits = tape.add_rowvec(tape.matmul(final_norm, bound.at("out.w")), bound.at("out.b"));
    if (prefix > 0) logits = tape.slice_rows(logits, prefix, n);
    return logits;
}

Mat forward(const ModelConfig& config, const ParamStore& params, const std::vector<int>& token_ids,
            const std::vector<double>& fact_embedding) {
    Tape tape;
    const BoundParams bound = bind_params(tape, params, /*needs_grad=*/false);
    return tape.value(transformer_logits(tape, bound, config, token_ids, fact_embedding));
}

// ---------------------------------------------------------------------------
// Log-probabilities and cross-entropy
// ---------------------------------------------------------------------------

namespace {

std::vector<int> strip_trailing_pad(std::vector<int> ids) {
    while (!ids.empty() && ids.back() == Tokenizer::kPad) ids.pop_back();
    return ids;
}

}  // namespace

Var log_prob_node(Tape& tape, const BoundParams& bound, const ModelConfig& config,
                  const std::vector<int>& prompt_ids, const std::vector<int>& completion_ids,
                  const std::vector<double>& fact_embedding) {
    const std::vector<int> completion = strip_trailing_pad(completion_ids);
    if (completion.empty()) return tape.constant(Mat::Zero(1, 1));
    if (prompt_ids.empty()) throw Error("log_prob: prompt must be non-empty");

    std::vector<int> sequence = prompt_ids;
    sequence.insert(sequence.end(), completion.begin(), completion.end());
    if (static_cast<int>(sequence.size()) > config.context_length) {
        throw Error("log_prob: sequence too long: " + std::to_string(sequence.size()) +
                    " > context_length " + std::to_string(config.context_length));
    }

    const Var logits = transformer_logits(tape, bound, config, sequence, fact_embedding);
    const Var log_probs = tape.log_softmax_rows(logits);
    std::vector<std::pair<int, int>> picks;
    picks.reserve(completion.size());
    const int prompt_len = static_cast<int>(prompt_ids.size());
    for (std::size_t t = 0; t < completion.size(); ++t) {
        picks.emplace_back(prompt_len - 1 + static_cast<int>(t), completion[t]);
    }
    return tape.sum_all(tape.gather_entries(log_probs, picks));
}

double log_prob(const ModelConfig& config, const ParamStore& params,
                const std::vector<int>& prompt_ids, const std::vector<int>& completion_ids,
                const std::vector<double>& fact_embedding) {
    Tape tape;
    const BoundParams bound = bind_params(tape, params, /*needs_grad=*/false);
    return tape.value(log_prob_node(tape, bound, config, prompt_ids, completion_ids, fact_embedding))(0, 0);
}

namespace {

std::int64_t completion_token_count(const std::vector<CeBatchItem>& batch) {
    std::int64_t count = 0;
    for (const CeBatchItem& item : batch) {
        count += static_cast<std::int64_t>(strip_trailing_pad(item.completion).size());
    }
    return count;
}

Var loss_ce_node(Tape& tape, const BoundParams& bound, const ModelConfig& config,
                 const std::vector<CeBatchItem>& batch) {
    if (batch.empty()) throw Error("loss_ce: empty batch");
    const std::int64_t tokens = completion_token_count(batch);
    if (tokens == 0) throw Error("loss_ce: batch has no completion tokens");
    Var total{};
    for (const CeBatchItem& item : batch) {
        const Var lp = log_prob_node(tape, bound, config, item.prompt, item.completion,
                                     item.fact_embedding);
        total = total.valid() ? tape.add(total, lp) : lp;
    }
    return tape.mul_scalar(total, -1.0 / static_cast<double>(tokens));
}

}  // namespace

double loss_ce(const ModelConfig& config, const ParamStore& params,
               const std::vector<CeBatchItem>& batch) {
    Tape tape;
    const BoundParams bound = bind_params(tape, params, /*needs_grad=*/false);
    return tape.value(loss_ce_node(tape, bound, config, batch))(0, 0);
}

LossAndGrads loss_ce_with_grads(const ModelConfig& config, const ParamStore& params,
                                const std::vector<CeBatchItem>& batch) {
    Tape tape;
    const BoundParams bound = bind_params(tape, params, /*needs_grad=*/true);
    const Var loss = loss_ce_node(tape, bound, config, batch);
    tape.backward(loss);
    LossAndGrads result;
    result.value = tape.value(loss)(0, 0);
    result.grads = collect_grads(tape, bound, params);
    return result;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

AdamState make_adam_state(const ParamStore& params) {
    AdamState state;
    for (const std::string& name : params.names()) {
        const Mat& p = params.at(name);
        state.m.add(name, Mat::Zero(p.rows(), p.cols()));
        state.v.add(name, Mat::Zero(p.rows(), p.cols()));
    }
    return state;
}

void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state, double lr,
               double weight_decay, double beta1, double beta2, double eps) {
    if (!params.same_shape_as(grads) || !params.same_shape_as(state.m)) {
        throw Error("adam_step: shape mismatch");
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (const std::string& name : params.names()) {
        Mat& p = params.at(name);
        const Mat& g = grads.at(name);
        Mat& m = state.m.at(name);
        Mat& v = state.v.at(name);
        if (weight_decay != 0.0) p -= (lr * weight_decay) * p;
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
        const Mat m_hat = m / bc1;
        const Mat v_hat = v / bc2;
        p.array() -= lr * m_hat.array() / (v_hat.array().sqrt() + eps);
    }
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

void SamplerConfig::validate() const {
    if (temperature <= 0.0) throw Error("sampler: temperature must be positive");
    if (top_k < 1) throw Error("sampler: top_k must be >= 1");
    if (max_target_length < 0) throw Error("sampler: max_target_length must be >= 0");
}

int sample_from_logits(const std::vector<double>& logits, const SamplerConfig& config, Rng& rng) {
    config.validate();
    if (logits.empty()) throw Error("sample_from_logits: empty logits");
    const int n = static_cast<int>(logits.size());

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return logits[static_cast<std::size_t>(a)] > logits[static_cast<std::size_t>(b)]; });
    const int k = std::min(config.top_k, n);
    if (!config.do_sample || k == 1) return order[0];

    double maxv = logits[static_cast<std::size_t>(order[0])] / config.temperature;
    std::vector<double> probs(static_cast<std::size_t>(k));
    double total = 0.0;
    for (int i = 0; i < k; ++i) {
        probs[static_cast<std::size_t>(i)] =
            std::exp(logits[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] / config.temperature - maxv);
        total += probs[static_cast<std::size_t>(i)];
    }
    const double draw = rng_real(rng) * total;
    double acc = 0.0;
    for (int i = 0; i < k; ++i) {
        acc += probs[static_cast<std::size_t>(i)];
        if (draw < acc) return order[static_cast<std::size_t>(i)];
    }
    return order[static_cast<std::size_t>(k - 1)];
}

std::vector<int> sample(const ModelConfig& config, const ParamStore& params,
                        const std::vector<int>& prompt_ids, const SamplerConfig& sampler, Rng& rng) {
    sampler.validate();
    if (prompt_ids.empty()) throw Error("sample: empty prompt");
    if (static_cast<int>(prompt_ids.size()) > config.context_length) {
        throw Error("sample: prompt does not fit context");
    }
    std::vector<int> sequence = prompt_ids;
    std::vector<int> generated;
    for (int step = 0; step < sampler.max_target_length; ++step) {
        if (static_cast<int>(sequence.size()) >= config.context_length) break;
        const Mat logits = forward(config, params, sequence);
        const Eigen::Index last = logits.rows() - 1;
        std::vector<double> row(static_cast<std::size_t>(logits.cols()));
        for (Eigen::Index c = 0; c < logits.cols(); ++c) row[static_cast<std::size_t>(c)] = logits(last, c);
        const int token = sample_from_logits(row, sampler, rng);
        if (token == Tokenizer::kEos) break;
        generated.push_back(token);
        sequence.push_back(token);
    }
    return generated;
}

std::vector<int> sample(const ModelConfig& config, const ParamStore& params,
                        const std::vector<int>& prompt_ids, const SamplerConfig& sampler) {
    Rng rng = make_rng(sampler.seed, "sampling");
    return sample(config, params, prompt_ids, sampler, rng);
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

namespace {

void append_le_double(std::string& out, double value) {
    std::uint64_t bits;
    std::memcpy(&bits, &value, sizeof(bits));
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

double read_le_double(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
    double value;
    std::memcpy(&value, &bits, sizeof(value));
    return value;
}

json config_to_json(const ModelConfig& c) {
    return json{{"d_model", c.d_model},       {"n_layers", c.n_layers},
                {"n_heads", c.n_heads},       {"d_ff", c.d_ff},
                {"context_length", c.context_length}, {"vocab_size", c.vocab_size},
                {"n_prefix", c.n_prefix},     {"knowledge_dim", c.knowledge_dim}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.context_length = j.at("context_length").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.n_prefix = j.at("n_prefix").get<int>();
    c.knowledge_dim = j.at("knowledge_dim").get<int>();
    return c;
}

}  // namespace

void save_checkpoint(const ModelCheckpoint& checkpoint, const std::string& path) {
    std::string blob;
    blob.reserve(static_cast<std::size_t>(checkpoint.params.total_elements()) * 8);
    json tensors = json::array();
    for (const std::string& name : checkpoint.params.names()) {
        const Mat& t = checkpoint.params.at(name);
        tensors.push_back(json{{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
        for (Eigen::Index i = 0; i < t.size(); ++i) append_le_double(blob, t.data()[i]);
    }

    const std::string blob_name = std::filesystem::path(path).filename().string() + ".bin";
    json manifest{
        {"format", "finchat-checkpoint-v1"},
        {"kind", "tinylm"},
        {"config", config_to_json(checkpoint.config)},
        {"tokenizer", checkpoint.tokenizer.tokens()},
        {"meta",
         json{{"seed", checkpoint.meta.seed},
              {"steps", checkpoint.meta.steps},
              {"stage", checkpoint.meta.stage},
              {"epoch_losses", checkpoint.meta.epoch_losses},
              {"epoch_margins", checkpoint.meta.epoch_margins}}},
        {"tensors", tensors},
        {"blob", blob_name},
        {"blob_bytes", blob.size()},
        {"checksum_fnv1a", fnv1a64_bytes(blob.data(), blob.size())},
    };
    const std::string blob_path = (std::filesystem::path(path).parent_path() / blob_name).string();
    write_file(blob_path.empty() ? blob_name : blob_path, blob);
    write_file(path, manifest.dump(2) + "\n");
}

ModelCheckpoint load_checkpoint(const std::string& path) {
    json manifest;
    try {
        manifest = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw Error("checkpoint " + path + ": parse error: " + e.what());
    }
    if (manifest.value("format", "") != "finchat-checkpoint-v1" ||
        manifest.value("kind", "") != "tinylm") {
        throw Error("checkpoint " + path + ": unknown format");
    }

    const std::string blob_name = manifest.at("blob").get<std::string>();
    const std::string blob_path = (std::filesystem::path(path).parent_path() / blob_name).string();
    const std::string blob = read_file(blob_path.empty() ? blob_name : blob_path);
    if (blob.size() != manifest.at("blob_bytes").get<std::size_t>()) {
        throw Error("checkpoint " + path + ": blob size mismatch");
    }
    if (fnv1a64_bytes(blob.data(), blob.size()) != manifest.at("checksum_fnv1a").get<std::uint64_t>()) {
        throw Error("checkpoint " + path + ": checksum mismatch");
    }

    ModelCheckpoint checkpoint;
    checkpoint.config = config_from_json(manifest.at("config"));
    checkpoint.tokenizer = Tokenizer::from_token_list(manifest.at("tokenizer").get<std::vector<std::string>>());
    const json& meta = manifest.at("meta");
    checkpoint.meta.seed = meta.at("seed").get<std::uint64_t>();
    checkpoint.meta.steps = meta.at("steps").get<std::int64_t>();
    checkpoint.meta.stage = meta.at("stage").get<std::string>();
    checkpoint.meta.epoch_losses = meta.at("epoch_losses").get<std::vector<double>>();
    checkpoint.meta.epoch_margins = meta.at("epoch_margins").get<std::vector<double>>();

    const auto* p = reinterpret_cast<const unsigned char*>(blob.data());
    std::size_t offset = 0;
    for (const json& t : manifest.at("tensors")) {
        const auto rows = t.at("rows").get<Eigen::Index>();
        const auto cols = t.at("cols").get<Eigen::Index>();
        Mat tensor(rows, cols);
        const std::size_t bytes = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * 8;
        if (offset + bytes > blob.size()) throw Error("checkpoint " + path + ": blob truncated");
        for (Eigen::Index i = 0; i < tensor.size(); ++i) {
            tensor.data()[i] = read_le_double(p + offset + static_cast<std::size_t>(i) * 8);
        }
        offset += bytes;
        checkpoint.params.add(t.at("name").get<std::string>(), std::move(tensor));
    }
    if (offset != blob.size()) throw Error("checkpoint " + path + ": trailing blob bytes");
    return checkpoint;
}

}  // namespace finchat
