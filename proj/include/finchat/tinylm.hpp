#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "finchat/autodiff.hpp"
#include "finchat/common.hpp"
#include "finchat/tokenizer.hpp"

namespace finchat {

struct ModelConfig {
    int d_model = 128;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 512;
    int context_length = 256;
    int vocab_size = 0;
    // Embedding-prefix fusion: number of pseudo-token slots and the fused
    // fact-embedding dimension they are projected from.
    int n_prefix = 4;
    int knowledge_dim = 256;

    void validate() const;
};

// Ordered collection of named parameter tensors. Order is fixed at
// construction and defines the checkpoint blob layout.
class ParamStore {
public:
    Mat& add(const std::string& name, Mat tensor);
    Mat& at(const std::string& name);
    const Mat& at(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    const std::vector<std::string>& names() const { return names_; }
    std::size_t size() const { return names_.size(); }
    std::int64_t total_elements() const;
    bool same_shape_as(const ParamStore& other) const;

private:
    std::vector<std::string> names_;
    std::vector<Mat> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Gaussian init (std 0.08) for weights, zeros for biases, ones for
// layer-norm gains, zeros for the knowledge projection; all draws come from
// the "init" substream of `seed`.
ParamStore init_parameters(const ModelConfig& config, std::uint64_t seed);

// Parameters leased onto a tape (as differentiable leaves, or frozen
// constants for reference policies).
struct BoundParams {
    std::unordered_map<std::string, Var> vars;
    Var at(const std::string& name) const;
};
BoundParams bind_params(Tape& tape, const ParamStore& params, bool needs_grad = true);
// Gradients read back from a swept tape, shaped like `params`.
ParamStore collect_grads(const Tape& tape, const BoundParams& bound, const ParamStore& params);

// Causal decoder-only transformer (pre-layer-norm, learned absolute
// positions, untied output head). Returns next-token logits for every real
// token position; `fact_embedding`, when non-empty, is projected into
// n_prefix pseudo-token rows that act as attention-only memory (all-zero
// rows are masked out like padding).
Var transformer_logits(Tape& tape, const BoundParams& bound, const ModelConfig& config,
                       const std::vector<int>& token_ids,
                       const std::vector<double>& fact_embedding = {});

// Inference-only forward pass (positions x vocab).
Mat forward(const ModelConfig& config, const ParamStore& params, const std::vector<int>& token_ids,
            const std::vector<double>& fact_embedding = {});

// Sum over completion positions of log softmax(logits)[next token]; prompt
// positions are excluded and trailing <pad> ids are ignored.
double log_prob(const ModelConfig& config, const ParamStore& params,
                const std::vector<int>& prompt_ids, const std::vector<int>& completion_ids,
                const std::vector<double>& fact_embedding = {});
// Graph-building flavour used by the training losses. Returns a 1x1 node.
Var log_prob_node(Tape& tape, const BoundParams& bound, const ModelConfig& config,
                  const std::vector<int>& prompt_ids, const std::vector<int>& completion_ids,
                  const std::vector<double>& fact_embedding = {});

struct CeBatchItem {
    std::vector<int> prompt;
    std::vector<int> completion;
    std::vector<double> fact_embedding;  // empty unless prefix fusion is used
};

// Mean negative log-likelihood over completion tokens only.
double loss_ce(const ModelConfig& config, const ParamStore& params,
               const std::vector<CeBatchItem>& batch);

struct LossAndGrads {
    double value = 0.0;
    ParamStore grads;
};
LossAndGrads loss_ce_with_grads(const ModelConfig& config, const ParamStore& params,
                                const std::vector<CeBatchItem>& batch);

// ---------------------------------------------------------------------------
// Optimizer: Adam with bias correction and decoupled weight decay
// (p <- p - lr*wd*p applied before the Adam update).
// ---------------------------------------------------------------------------

struct AdamState {
    ParamStore m;
    ParamStore v;
    std::int64_t t = 0;
};

AdamState make_adam_state(const ParamStore& params);
void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state, double lr,
               double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

struct SamplerConfig {
    double temperature = 1.0;
    int top_k = 5;
    int max_target_length = 1024;
    bool do_sample = true;
    std::uint64_t seed = 0;

    void validate() const;
};

// Draw one token: logits/temperature, keep the top_k logits (ties broken
// toward the lower id), renormalize, sample from the caller's stream (or
// argmax when do_sample is false / top_k == 1).
int sample_from_logits(const std::vector<double>& logits, const SamplerConfig& config, Rng& rng);

// Autoregressive generation; stops at <eos>, max_target_length generated
// tokens, or the context boundary. The returned ids exclude the prompt and
// the terminating <eos>.
std::vector<int> sample(const ModelConfig& config, const ParamStore& params,
                        const std::vector<int>& prompt_ids, const SamplerConfig& sampler);
std::vector<int> sample(const ModelConfig& config, const ParamStore& params,
                        const std::vector<int>& prompt_ids, const SamplerConfig& sampler, Rng& rng);

// ---------------------------------------------------------------------------
// Checkpoints: JSON manifest (config, tokenizer, seeds, tensor directory)
// plus a little-endian binary blob of raw float64 data, checksummed.
// ---------------------------------------------------------------------------

struct TrainingMeta {
    std::uint64_t seed = 0;
    std::int64_t steps = 0;
    std::string stage;  // "init" | "sft" | "dpo"
    std::vector<double> epoch_losses;
    std::vector<double> epoch_margins;
};

struct ModelCheckpoint {
    ModelConfig config;
    ParamStore params;
    Tokenizer tokenizer;
    TrainingMeta meta;
};

void save_checkpoint(const ModelCheckpoint& checkpoint, const std::string& path);
ModelCheckpoint load_checkpoint(const std::string& path);

}  // namespace finchat
