#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "splitsim/channel.hpp"
#include "splitsim/matrix.hpp"
#include "splitsim/mlp.hpp"
#include "splitsim/rng.hpp"
#include "splitsim/tokenizer.hpp"

namespace splitsim {

// Shape constants of the toy decoder-only transformer.
struct LmConfig {
    std::size_t layers = 8;   // L
    std::size_t d_in = 64;    // context length (tokens)
    std::size_t d_mid = 64;   // model width
    std::size_t heads = 4;    // attention heads
    std::size_t d_ff = 256;   // feed-forward width
    std::size_t vocab = 0;    // V (set once a vocabulary exists)

    void validate() const;
    std::size_t head_dim() const { return d_mid / heads; }
};

// One pre-layer-norm block: x += MHA(LN1(x)); x += FFN(LN2(x)).
struct BlockParams {
    Matrix wq, wk, wv, wo;              // (d_mid x d_mid) each
    Matrix bq, bk, bv, bo;              // (1 x d_mid)
    Matrix ln1_g, ln1_b, ln2_g, ln2_b;  // (1 x d_mid)
    Matrix w1, b1;                      // (d_mid x d_ff), (1 x d_ff)
    Matrix w2, b2;                      // (d_ff x d_mid), (1 x d_mid)
};

struct LmParams {
    LmConfig config;
    Matrix tok_emb;  // (V x d_mid)
    Matrix pos_emb;  // (d_in x d_mid)
    std::vector<BlockParams> blocks;
    Matrix lnf_g, lnf_b;  // final layer norm
    Matrix head_w;        // (d_mid x V)
    Matrix head_b;        // (1 x V)

    std::vector<std::pair<std::string, Matrix*>> named_params();
    std::vector<Matrix*> param_refs();
    std::vector<const Matrix*> param_refs() const;
};

LmParams lm_init(const LmConfig& config, RngStream& rng);

// --- Forward paths ----------------------------------------------------------

// Device side: embeddings + blocks 1..p. Output is the intermediate tensor
// (len x d_mid) handed to the channel. Requires 1 <= p <= L-1.
Matrix lm_forward_ue(const LmParams& params, const TokenSeq& tokens, std::size_t p);

// Edge side: blocks p+1..L, final norm, projection to logits (len x V).
Matrix lm_forward_edge(const LmParams& params, const Matrix& intermediate, std::size_t p);

// Reference path: all blocks with no channel in between.
Matrix lm_forward_full(const LmParams& params, const TokenSeq& tokens);

// Applies one transformer block (0-based index) to an intermediate tensor.
// Lets evaluation caches extend a device-side prefix layer by layer.
Matrix lm_apply_block(const LmParams& params, const Matrix& x, std::size_t block_index);

// --- Training ---------------------------------------------------------------

// Mean next-token cross entropy of a token window plus its gradient w.r.t.
// every parameter (written into grads, which must mirror params' layout).
double lm_loss_and_grad(const LmParams& params, const TokenSeq& tokens, LmParams& grads);

LmParams lm_grads_like(const LmParams& params);

struct LmTrainOptions {
    std::size_t steps = 2000;
    std::size_t batch = 16;
    double lr = 1e-3;
    double clip_norm = 0.5;
    unsigned threads = 4;
    std::size_t report_every = 100;
    std::function<void(std::size_t step, double loss)> on_step;  // optional
};

struct LmTrainResult {
    LmParams params;
    Vocabulary vocab;
    std::vector<double> loss_history;  // one entry per step
    double final_train_ppl = 0.0;      // exp of trailing mean loss
};

// Character-level training on a UTF-8 corpus (>= 1e4 characters). Builds the
// vocabulary, streams batches of random windows, Adam + global-norm clipping.
// Throws Runtime (with the step index) if the loss turns non-finite.
LmTrainResult train_lm(const std::string& corpus_text, LmConfig config,
                       const LmTrainOptions& opts, RngStream& rng);

// --- Perplexity -------------------------------------------------------------

struct PplResult {
    double ppl = 0.0;          // exp of the grand mean NLL over everything
    double mean_nll = 0.0;
    double stderr_ppl = 0.0;   // spread of per-trial PPL replicates
    std::size_t positions = 0;
    std::size_t clamped = 0;   // log-probs clamped at log(1e-12)
    std::vector<double> per_trial_ppl;
};

// Split-path perplexity: device half -> channel (once per sequence per
// trial) -> edge half. Sequences fan out across threads; reduction order is
// fixed so results are independent of the thread count.
PplResult perplexity(const LmParams& params, const std::vector<TokenSeq>& corpus,
                     std::size_t p, const ChannelParams& channel, RngStream& rng,
                     std::size_t n_trials, unsigned threads = 1);

// Single-sequence helper used by the heavier evaluation loops: consumes a
// precomputed intermediate tensor for the device half.
double sequence_nll_through_channel(const LmParams& params, const TokenSeq& tokens,
                                    const Matrix& ue_out, std::size_t p,
                                    const ChannelParams& channel, RngStream& rng,
                                    std::size_t* clamped = nullptr);

// Clean full-model perplexity (no split, no channel).
PplResult perplexity_full(const LmParams& params, const std::vector<TokenSeq>& corpus);

// --- Cost model ---------------------------------------------------------------

// Per-layer FLOPs: 3*d_in*d_mid^2/k + 2*d_in^2*d_mid/k + 9*d_in*d_mid^2,
// exact in integer arithmetic (d_mid is divisible by k).
std::uint64_t flops_per_layer(const LmConfig& config);

// Device-side load for split point p: p * flops_per_layer. Requires 1 <= p <= L.
std::uint64_t c_ue(const LmConfig& config, std::size_t p);

// --- Checkpoints ---------------------------------------------------------------

nlohmann::json lm_to_json(const LmParams& params, const Vocabulary& vocab);
std::pair<LmParams, Vocabulary> lm_from_json(const nlohmann::json& j);

}  // namespace splitsim
