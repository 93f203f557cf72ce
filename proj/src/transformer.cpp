#include "splitsim/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "splitsim/checkpoint.hpp"
#include "splitsim/errors.hpp"
#include "splitsim/parallel.hpp"

namespace splitsim {

namespace {
constexpr double kLnEps = 1e-5;
constexpr double kLogProbFloor = -27.631021115928547;  // log(1e-12)
}  // namespace

void LmConfig::validate() const {
    if (layers < 2) raise(ErrorKind::InvalidParameter, "lm config: layers must be >= 2");
    if (d_in == 0 || d_mid == 0 || heads == 0 || d_ff == 0 || vocab == 0)
        raise(ErrorKind::InvalidParameter, "lm config: all dimensions must be positive");
    if (d_mid % heads != 0)
        raise(ErrorKind::InvalidParameter, "lm config: d_mid must be divisible by heads");
}

std::vector<std::pair<std::string, Matrix*>> LmParams::named_params() {
    std::vector<std::pair<std::string, Matrix*>> out;
    out.emplace_back("tok_emb", &tok_emb);
    out.emplace_back("pos_emb", &pos_emb);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        BlockParams& b = blocks[l];
        const std::string pfx = "block" + std::to_string(l) + ".";
        out.emplace_back(pfx + "wq", &b.wq);
        out.emplace_back(pfx + "bq", &b.bq);
        out.emplace_back(pfx + "wk", &b.wk);
        out.emplace_back(pfx + "bk", &b.bk);
        out.emplace_back(pfx + "wv", &b.wv);
        out.emplace_back(pfx + "bv", &b.bv);
        out.emplace_back(pfx + "wo", &b.wo);
        out.emplace_back(pfx + "bo", &b.bo);
        out.emplace_back(pfx + "ln1_g", &b.ln1_g);
        out.emplace_back(pfx + "ln1_b", &b.ln1_b);
        out.emplace_back(pfx + "ln2_g", &b.ln2_g);
        out.emplace_back(pfx + "ln2_b", &b.ln2_b);
        out.emplace_back(pfx + "w1", &b.w1);
        out.emplace_back(pfx + "b1", &b.b1);
        out.emplace_back(pfx + "w2", &b.w2);
        out.emplace_back(pfx + "b2", &b.b2);
    }
    out.emplace_back("lnf_g", &lnf_g);
    out.emplace_back("lnf_b", &lnf_b);
    out.emplace_back("head_w", &head_w);
    out.emplace_back("head_b", &head_b);
    return out;
}

std::vector<Matrix*> LmParams::param_refs() {
    std::vector<Matrix*> refs;
    for (auto& [name, m] : named_params()) refs.push_back(m);
    return refs;
}

std::vector<const Matrix*> LmParams::param_refs() const {
    std::vector<const Matrix*> refs;
    auto& self = const_cast<LmParams&>(*this);
    for (auto& [name, m] : self.named_params()) refs.push_back(m);
    return refs;
}

LmParams lm_init(const LmConfig& config, RngStream& rng) {
    config.validate();
    const std::size_t d = config.d_mid, v = config.vocab, ff = config.d_ff;
    LmParams p;
    p.config = config;
    auto randn = [&rng](Matrix& m, double std) {
        for (double& x : m.data) x = rng.gaussian(0.0, std);
    };
    const double base = 0.02;
    // residual-feeding projections get an extra 1/sqrt(2L) to keep the
    // stream variance flat with depth
    const double resid = base / std::sqrt(2.0 * static_cast<double>(config.layers));

    p.tok_emb.resize(v, d);
    randn(p.tok_emb, base);
    p.pos_emb.resize(config.d_in, d);
    randn(p.pos_emb, base);
    p.blocks.resize(config.layers);
    for (BlockParams& b : p.blocks) {
        b.wq.resize(d, d);
        randn(b.wq, base);
        b.wk.resize(d, d);
        randn(b.wk, base);
        b.wv.resize(d, d);
        randn(b.wv, base);
        b.wo.resize(d, d);
        randn(b.wo, resid);
        b.bq.resize(1, d);
        b.bk.resize(1, d);
        b.bv.resize(1, d);
        b.bo.resize(1, d);
        b.ln1_g.resize(1, d);
        b.ln1_g.fill(1.0);
        b.ln1_b.resize(1, d);
        b.ln2_g.resize(1, d);
        b.ln2_g.fill(1.0);
        b.ln2_b.resize(1, d);
        b.w1.resize(d, ff);
        randn(b.w1, base);
        b.b1.resize(1, ff);
        b.w2.resize(ff, d);
        randn(b.w2, resid);
        b.b2.resize(1, d);
    }
    p.lnf_g.resize(1, d);
    p.lnf_g.fill(1.0);
    p.lnf_b.resize(1, d);
    p.head_w.resize(d, v);
    randn(p.head_w, base);
    p.head_b.resize(1, v);
    return p;
}

// ---------------------------------------------------------------------------
// layer norm

namespace {

struct LnCache {
    Matrix xhat;
    std::vector<double> inv_std;
};

Matrix ln_forward(const Matrix& x, const Matrix& gamma, const Matrix& beta,
                  LnCache* cache) {
    const std::size_t n = x.rows, d = x.cols;
    Matrix out(n, d);
    if (cache) {
        cache->xhat.resize(n, d);
        cache->inv_std.assign(n, 0.0);
    }
    for (std::size_t r = 0; r < n; ++r) {
        const double* xr = x.row(r);
        double mean = 0.0;
        for (std::size_t c = 0; c < d; ++c) mean += xr[c];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double dv = xr[c] - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        double* o = out.row(r);
        for (std::size_t c = 0; c < d; ++c) {
            const double xh = (xr[c] - mean) * inv;
            o[c] = gamma.data[c] * xh + beta.data[c];
            if (cache) cache->xhat.at(r, c) = xh;
        }
        if (cache) cache->inv_std[r] = inv;
    }
    return out;
}

// Returns dL/dx; accumulates gamma/beta grads.
Matrix ln_backward(const Matrix& dy, const LnCache& cache, const Matrix& gamma,
                   Matrix& dgamma, Matrix& dbeta) {
    const std::size_t n = dy.rows, d = dy.cols;
    Matrix dx(n, d);
    for (std::size_t r = 0; r < n; ++r) {
        const double* g = dy.row(r);
        const double* xh = cache.xhat.row(r);
        double sum_gg = 0.0, sum_ggx = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double gg = g[c] * gamma.data[c];
            sum_gg += gg;
            sum_ggx += gg * xh[c];
            dgamma.data[c] += g[c] * xh[c];
            dbeta.data[c] += g[c];
        }
        const double inv = cache.inv_std[r];
        const double mean_gg = sum_gg / static_cast<double>(d);
        const double mean_ggx = sum_ggx / static_cast<double>(d);
        double* out = dx.row(r);
        for (std::size_t c = 0; c < d; ++c) {
            const double gg = g[c] * gamma.data[c];
            out[c] = inv * (gg - mean_gg - xh[c] * mean_ggx);
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// attention + block

void copy_head(const Matrix& src, std::size_t head, std::size_t dh, Matrix& dst) {
    dst.resize(src.rows, dh);
    const std::size_t off = head * dh;
    for (std::size_t r = 0; r < src.rows; ++r) {
        const double* s = src.row(r) + off;
        double* d = dst.row(r);
        for (std::size_t c = 0; c < dh; ++c) d[c] = s[c];
    }
}

void add_head(Matrix& dst, std::size_t head, std::size_t dh, const Matrix& src) {
    const std::size_t off = head * dh;
    for (std::size_t r = 0; r < src.rows; ++r) {
        double* d = dst.row(r) + off;
        const double* s = src.row(r);
        for (std::size_t c = 0; c < dh; ++c) d[c] += s[c];
    }
}

struct BlockCache {
    Matrix x_in;
    LnCache ln1;
    Matrix a;  // ln1 output
    Matrix q, k, v;
    std::vector<Matrix> probs;  // per head, causal softmax rows
    Matrix concat;              // heads stitched back together, pre-wo
    Matrix x_mid;
    LnCache ln2;
    Matrix f;   // ln2 output
    Matrix z1;  // pre-relu
    Matrix h1;  // relu(z1)
};

Matrix block_forward(const BlockParams& b, const LmConfig& cfg, const Matrix& x,
                     BlockCache* cache) {
    const std::size_t len = x.rows, d = cfg.d_mid, dh = cfg.head_dim();
    if (cache) cache->x_in = x;

    LnCache ln1_local;
    Matrix a = ln_forward(x, b.ln1_g, b.ln1_b, cache ? &cache->ln1 : &ln1_local);

    Matrix q = matmul(a, b.wq);
    add_row_vector(q, b.bq);
    Matrix k = matmul(a, b.wk);
    add_row_vector(k, b.bk);
    Matrix v = matmul(a, b.wv);
    add_row_vector(v, b.bv);

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix concat(len, d);
    if (cache) cache->probs.assign(cfg.heads, Matrix());
    Matrix qh, kh, vh;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        copy_head(q, h, dh, qh);
        copy_head(k, h, dh, kh);
        copy_head(v, h, dh, vh);
        Matrix scores = matmul_nt(qh, kh);  // len x len
        // causal softmax over the prefix of each row
        for (std::size_t i = 0; i < len; ++i) {
            double* row = scores.row(i);
            double mx = -1e308;
            for (std::size_t j = 0; j <= i; ++j) {
                row[j] *= scale;
                mx = std::max(mx, row[j]);
            }
            double sum = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
                row[j] = std::exp(row[j] - mx);
                sum += row[j];
            }
            const double inv = 1.0 / sum;
            for (std::size_t j = 0; j <= i; ++j) row[j] *= inv;
            for (std::size_t j = i + 1; j < len; ++j) row[j] = 0.0;
        }
        Matrix oh = matmul(scores, vh);  // len x dh
        add_head(concat, h, dh, oh);
        if (cache) cache->probs[h] = std::move(scores);
    }

    Matrix attn = matmul(concat, b.wo);
    add_row_vector(attn, b.bo);
    Matrix x_mid = x;
    add_inplace(x_mid, attn);

    LnCache ln2_local;
    Matrix f = ln_forward(x_mid, b.ln2_g, b.ln2_b, cache ? &cache->ln2 : &ln2_local);
    Matrix z1 = matmul(f, b.w1);
    add_row_vector(z1, b.b1);
    Matrix h1 = z1;
    for (double& vv : h1.data) vv = vv > 0.0 ? vv : 0.0;
    Matrix ffn = matmul(h1, b.w2);
    add_row_vector(ffn, b.b2);

    Matrix out = x_mid;
    add_inplace(out, ffn);

    if (cache) {
        cache->a = std::move(a);
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->concat = std::move(concat);
        cache->x_mid = std::move(x_mid);
        cache->f = std::move(f);
        cache->z1 = std::move(z1);
        cache->h1 = std::move(h1);
    }
    return out;
}

void colsum_into(const Matrix& m, Matrix& acc) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* row = m.row(r);
        for (std::size_t c = 0; c < m.cols; ++c) acc.data[c] += row[c];
    }
}

// dL/d(block output) -> dL/d(block input); accumulates parameter grads.
Matrix block_backward(const BlockParams& b, const LmConfig& cfg, const BlockCache& cache,
                      const Matrix& dout, BlockParams& gb) {
    const std::size_t len = dout.rows, d = cfg.d_mid, dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // FFN branch: out = x_mid + relu(f w1 + b1) w2 + b2
    Matrix dz1 = matmul_nt(dout, b.w2);  // dL/dh1 first
    matmul_tn_acc(cache.h1, dout, gb.w2);
    colsum_into(dout, gb.b2);
    for (std::size_t i = 0; i < dz1.data.size(); ++i)
        if (cache.z1.data[i] <= 0.0) dz1.data[i] = 0.0;
    matmul_tn_acc(cache.f, dz1, gb.w1);
    colsum_into(dz1, gb.b1);
    Matrix df = matmul_nt(dz1, b.w1);

    Matrix dx_mid = ln_backward(df, cache.ln2, b.ln2_g, gb.ln2_g, gb.ln2_b);
    add_inplace(dx_mid, dout);  // residual

    // attention branch: x_mid = x_in + concat wo + bo
    Matrix dconcat = matmul_nt(dx_mid, b.wo);
    matmul_tn_acc(cache.concat, dx_mid, gb.wo);
    colsum_into(dx_mid, gb.bo);

    Matrix dq(len, d), dk(len, d), dv(len, d);
    Matrix qh, kh, vh, doh;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        copy_head(cache.q, h, dh, qh);
        copy_head(cache.k, h, dh, kh);
        copy_head(cache.v, h, dh, vh);
        copy_head(dconcat, h, dh, doh);
        const Matrix& probs = cache.probs[h];

        Matrix dprobs = matmul_nt(doh, vh);    // dL/dP, len x len
        Matrix dvh = matmul_tn(probs, doh);    // len x dh
        // softmax backward, rows restricted to the causal prefix
        Matrix ds(len, len);
        for (std::size_t i = 0; i < len; ++i) {
            const double* p = probs.row(i);
            const double* dp = dprobs.row(i);
            double dot = 0.0;
            for (std::size_t j = 0; j <= i; ++j) dot += dp[j] * p[j];
            double* out = ds.row(i);
            for (std::size_t j = 0; j <= i; ++j) out[j] = p[j] * (dp[j] - dot) * scale;
        }
        Matrix dqh = matmul(ds, kh);
        Matrix dkh = matmul_tn(ds, qh);
        add_head(dq, h, dh, dqh);
        add_head(dk, h, dh, dkh);
        add_head(dv, h, dh, dvh);
    }

    matmul_tn_acc(cache.a, dq, gb.wq);
    colsum_into(dq, gb.bq);
    matmul_tn_acc(cache.a, dk, gb.wk);
    colsum_into(dk, gb.bk);
    matmul_tn_acc(cache.a, dv, gb.wv);
    colsum_into(dv, gb.bv);

    Matrix da = matmul_nt(dq, b.wq);
    Matrix tmp = matmul_nt(dk, b.wk);
    add_inplace(da, tmp);
    tmp = matmul_nt(dv, b.wv);
    add_inplace(da, tmp);

    Matrix dx_in = ln_backward(da, cache.ln1, b.ln1_g, gb.ln1_g, gb.ln1_b);
    add_inplace(dx_in, dx_mid);  // residual
    return dx_in;
}

Matrix embed(const LmParams& params, const TokenSeq& tokens) {
    const LmConfig& cfg = params.config;
    if (tokens.empty()) raise(ErrorKind::InvalidInput, "empty token sequence");
    if (tokens.size() > cfg.d_in)
        raise(ErrorKind::InvalidInput, "sequence longer than the model context");
    Matrix x(tokens.size(), cfg.d_mid);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const TokenId t = tokens[i];
        if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab)
            raise(ErrorKind::InvalidInput, "token id out of vocabulary range");
        const double* te = params.tok_emb.row(static_cast<std::size_t>(t));
        const double* pe = params.pos_emb.row(i);
        double* xr = x.row(i);
        for (std::size_t c = 0; c < cfg.d_mid; ++c) xr[c] = te[c] + pe[c];
    }
    return x;
}

Matrix head_forward(const LmParams& params, const Matrix& x, LnCache* lnf_cache,
                    Matrix* xf_out) {
    Matrix xf = ln_forward(x, params.lnf_g, params.lnf_b, lnf_cache);
    Matrix logits = matmul(xf, params.head_w);
    add_row_vector(logits, params.head_b);
    if (xf_out) *xf_out = std::move(xf);
    return logits;
}

}  // namespace

Matrix lm_forward_ue(const LmParams& params, const TokenSeq& tokens, std::size_t p) {
    const LmConfig& cfg = params.config;
    if (p < 1 || p > cfg.layers - 1)
        raise(ErrorKind::InvalidSplit, "splitting point must lie in [1, L-1]");
    Matrix x = embed(params, tokens);
    for (std::size_t l = 0; l < p; ++l)
        x = block_forward(params.blocks[l], cfg, x, nullptr);
    return x;
}

Matrix lm_forward_edge(const LmParams& params, const Matrix& intermediate, std::size_t p) {
    const LmConfig& cfg = params.config;
    if (p < 1 || p > cfg.layers - 1)
        raise(ErrorKind::InvalidSplit, "splitting point must lie in [1, L-1]");
    check_shape(intermediate.cols == cfg.d_mid, "intermediate tensor width");
    Matrix x = intermediate;
    for (std::size_t l = p; l < cfg.layers; ++l)
        x = block_forward(params.blocks[l], cfg, x, nullptr);
    return head_forward(params, x, nullptr, nullptr);
}

Matrix lm_forward_full(const LmParams& params, const TokenSeq& tokens) {
    Matrix x = embed(params, tokens);
    for (std::size_t l = 0; l < params.config.layers; ++l)
        x = block_forward(params.blocks[l], params.config, x, nullptr);
    return head_forward(params, x, nullptr, nullptr);
}

Matrix lm_apply_block(const LmParams& params, const Matrix& x, std::size_t block_index) {
    if (block_index >= params.config.layers)
        raise(ErrorKind::InvalidParameter, "lm_apply_block: block index out of range");
    check_shape(x.cols == params.config.d_mid, "lm_apply_block input width");
    return block_forward(params.blocks[block_index], params.config, x, nullptr);
}

LmParams lm_grads_like(const LmParams& params) {
    LmParams g;
    g.config = params.config;
    g.tok_emb.resize(params.tok_emb.rows, params.tok_emb.cols);
    g.pos_emb.resize(params.pos_emb.rows, params.pos_emb.cols);
    g.blocks.resize(params.blocks.size());
    for (std::size_t l = 0; l < params.blocks.size(); ++l) {
        const BlockParams& b = params.blocks[l];
        BlockParams& gb = g.blocks[l];
        auto like = [](const Matrix& m) { return Matrix(m.rows, m.cols); };
        gb.wq = like(b.wq);
        gb.wk = like(b.wk);
        gb.wv = like(b.wv);
        gb.wo = like(b.wo);
        gb.bq = like(b.bq);
        gb.bk = like(b.bk);
        gb.bv = like(b.bv);
        gb.bo = like(b.bo);
        gb.ln1_g = like(b.ln1_g);
        gb.ln1_b = like(b.ln1_b);
        gb.ln2_g = like(b.ln2_g);
        gb.ln2_b = like(b.ln2_b);
        gb.w1 = like(b.w1);
        gb.b1 = like(b.b1);
        gb.w2 = like(b.w2);
        gb.b2 = like(b.b2);
    }
    g.lnf_g.resize(1, params.config.d_mid);
    g.lnf_b.resize(1, params.config.d_mid);
    g.head_w.resize(params.head_w.rows, params.head_w.cols);
    g.head_b.resize(1, params.head_b.cols);
    return g;
}

double lm_loss_and_grad(const LmParams& params, const TokenSeq& tokens, LmParams& grads) {
    const LmConfig& cfg = params.config;
    if (tokens.size() < 2)
        raise(ErrorKind::InvalidInput, "need at least two tokens for next-token loss");
    TokenSeq input(tokens.begin(), tokens.end() - 1);
    if (input.size() > cfg.d_in)
        raise(ErrorKind::InvalidInput, "window longer than the model context");

    Matrix x = embed(params, input);
    std::vector<BlockCache> caches(cfg.layers);
    for (std::size_t l = 0; l < cfg.layers; ++l)
        x = block_forward(params.blocks[l], cfg, x, &caches[l]);

    LnCache lnf_cache;
    Matrix xf;
    Matrix logits = head_forward(params, x, &lnf_cache, &xf);

    // cross entropy and dL/dlogits
    const std::size_t n_pos = input.size();
    const double inv_pos = 1.0 / static_cast<double>(n_pos);
    Matrix dlogits(logits.rows, logits.cols);
    std::vector<double> logp(cfg.vocab);
    double nll = 0.0;
    for (std::size_t i = 0; i < n_pos; ++i) {
        const TokenId target = tokens[i + 1];
        if (target < 0 || static_cast<std::size_t>(target) >= cfg.vocab)
            raise(ErrorKind::InvalidInput, "target token id out of range");
        log_softmax_row(logits.row(i), cfg.vocab, logp.data());
        nll -= logp[static_cast<std::size_t>(target)];
        double* drow = dlogits.row(i);
        for (std::size_t c = 0; c < cfg.vocab; ++c) drow[c] = std::exp(logp[c]) * inv_pos;
        drow[static_cast<std::size_t>(target)] -= inv_pos;
    }

    // head + final norm backward
    matmul_tn_acc(xf, dlogits, grads.head_w);
    colsum_into(dlogits, grads.head_b);
    Matrix dxf = matmul_nt(dlogits, params.head_w);
    Matrix dx = ln_backward(dxf, lnf_cache, params.lnf_g, grads.lnf_g, grads.lnf_b);

    for (std::size_t l = cfg.layers; l-- > 0;)
        dx = block_backward(params.blocks[l], cfg, caches[l], dx, grads.blocks[l]);

    // embedding scatter
    for (std::size_t i = 0; i < n_pos; ++i) {
        const double* drow = dx.row(i);
        double* te = grads.tok_emb.row(static_cast<std::size_t>(input[i]));
        double* pe = grads.pos_emb.row(i);
        for (std::size_t c = 0; c < cfg.d_mid; ++c) {
            te[c] += drow[c];
            pe[c] += drow[c];
        }
    }
    return nll * inv_pos;
}

LmTrainResult train_lm(const std::string& corpus_text, LmConfig config,
                       const LmTrainOptions& opts, RngStream& rng) {
    if (corpus_text.size() < 10000)
        raise(ErrorKind::InvalidInput, "corpus too small: need at least 1e4 characters");
    Vocabulary vocab = Vocabulary::build(corpus_text);
    config.vocab = vocab.size();
    config.validate();
    TokenSeq corpus = vocab.encode(corpus_text);
    const std::size_t window = config.d_in + 1;
    if (corpus.size() < window + 1)
        raise(ErrorKind::InvalidInput, "corpus shorter than one training window");

    RngStream init_rng = rng.derive("lm.init");
    LmTrainResult result;
    result.vocab = vocab;
    result.params = lm_init(config, init_rng);
    LmParams& params = result.params;

    AdamConfig adam_cfg;
    adam_cfg.alpha = opts.lr;
    AdamState adam(adam_cfg, as_const_refs(params.param_refs()));

    const std::size_t batch = std::max<std::size_t>(1, opts.batch);
    std::vector<LmParams> grad_slots;
    grad_slots.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) grad_slots.push_back(lm_grads_like(params));
    std::vector<double> losses(batch, 0.0);

    LmParams total = lm_grads_like(params);
    auto total_refs = total.param_refs();

    for (std::size_t step = 0; step < opts.steps; ++step) {
        RngStream batch_rng = rng.derive("lm.batch", step);
        std::vector<TokenSeq> windows(batch);
        for (std::size_t i = 0; i < batch; ++i) {
            const std::size_t off = static_cast<std::size_t>(batch_rng.uniform_int(
                0, static_cast<std::int64_t>(corpus.size() - window)));
            windows[i].assign(corpus.begin() + off, corpus.begin() + off + window);
        }

        parallel_for(batch, opts.threads, [&](std::size_t i) {
            for (Matrix* g : grad_slots[i].param_refs()) g->fill(0.0);
            losses[i] = lm_loss_and_grad(params, windows[i], grad_slots[i]);
        });

        double step_loss = 0.0;
        for (double l : losses) step_loss += l;
        step_loss /= static_cast<double>(batch);
        if (!std::isfinite(step_loss))
            raise(ErrorKind::Runtime,
                  "lm training diverged at step " + std::to_string(step));

        for (Matrix* g : total_refs) g->fill(0.0);
        const double inv_batch = 1.0 / static_cast<double>(batch);
        for (std::size_t i = 0; i < batch; ++i) {
            auto slot_refs = grad_slots[i].param_refs();
            for (std::size_t j = 0; j < total_refs.size(); ++j) {
                const Matrix& src = *slot_refs[j];
                Matrix& dst = *total_refs[j];
                for (std::size_t k = 0; k < src.data.size(); ++k)
                    dst.data[k] += src.data[k] * inv_batch;
            }
        }
        clip_global_norm(total_refs, opts.clip_norm);
        adam.step(params.param_refs(), as_const_refs(total_refs));

        result.loss_history.push_back(step_loss);
        if (opts.on_step) opts.on_step(step, step_loss);
    }

    const std::size_t tail = std::min<std::size_t>(100, result.loss_history.size());
    double tail_mean = 0.0;
    if (tail > 0) {
        for (std::size_t i = result.loss_history.size() - tail;
             i < result.loss_history.size(); ++i)
            tail_mean += result.loss_history[i];
        tail_mean /= static_cast<double>(tail);
    }
    result.final_train_ppl = std::exp(tail_mean);
    return result;
}

double sequence_nll_through_channel(const LmParams& params, const TokenSeq& tokens,
                                    const Matrix& ue_out, std::size_t p,
                                    const ChannelParams& channel, RngStream& rng,
                                    std::size_t* clamped) {
    Matrix corrupted = ue_out;
    apply_channel_inplace(corrupted, channel, rng);
    Matrix logits = lm_forward_edge(params, corrupted, p);

    const std::size_t n_pos = tokens.size() - 1;
    std::vector<double> logp(params.config.vocab);
    double nll = 0.0;
    for (std::size_t i = 0; i < n_pos; ++i) {
        log_softmax_row(logits.row(i), params.config.vocab, logp.data());
        double lp = logp[static_cast<std::size_t>(tokens[i + 1])];
        if (!(lp >= kLogProbFloor)) {  // also catches NaN
            lp = kLogProbFloor;
            if (clamped) ++*clamped;
        }
        nll -= lp;
    }
    return nll;
}

PplResult perplexity(const LmParams& params, const std::vector<TokenSeq>& corpus,
                     std::size_t p, const ChannelParams& channel, RngStream& rng,
                     std::size_t n_trials, unsigned threads) {
    if (corpus.empty()) raise(ErrorKind::InvalidInput, "perplexity: empty corpus");
    if (n_trials < 1) raise(ErrorKind::InvalidParameter, "perplexity: n_trials >= 1");
    channel.validate();

    struct SeqAccum {
        std::vector<double> trial_nll;
        std::size_t positions = 0;
        std::size_t clamped = 0;
    };
    std::vector<SeqAccum> acc(corpus.size());
    const std::uint64_t base_stream = rng.next_u64();  // advances caller stream

    parallel_for(corpus.size(), threads, [&](std::size_t s) {
        const TokenSeq& seq = corpus[s];
        if (seq.size() < 2)
            raise(ErrorKind::InvalidInput, "perplexity: sequences need >= 2 tokens");
        SeqAccum& a = acc[s];
        a.positions = seq.size() - 1;
        a.trial_nll.assign(n_trials, 0.0);
        const Matrix ue_out = lm_forward_ue(params, seq, p);
        RngStream seq_rng(rng.seed(), base_stream);
        RngStream chan_rng = seq_rng.derive("ppl.seq", s);
        for (std::size_t t = 0; t < n_trials; ++t) {
            RngStream trial_rng = chan_rng.derive(t);
            a.trial_nll[t] = sequence_nll_through_channel(params, seq, ue_out, p,
                                                          channel, trial_rng, &a.clamped);
        }
    });

    PplResult res;
    const std::size_t n_seq = corpus.size();
    std::size_t total_positions = 0;
    for (const SeqAccum& a : acc) total_positions += a.positions;

    double grand = 0.0;
    res.per_trial_ppl.assign(n_trials, 0.0);
    for (std::size_t t = 0; t < n_trials; ++t) {
        double trial_sum = 0.0;
        for (std::size_t s = 0; s < n_seq; ++s) trial_sum += acc[s].trial_nll[t];
        grand += trial_sum;
        res.per_trial_ppl[t] = std::exp(trial_sum / static_cast<double>(total_positions));
    }
    for (const SeqAccum& a : acc) res.clamped += a.clamped;

    res.positions = total_positions * n_trials;
    res.mean_nll = grand / static_cast<double>(res.positions);
    res.ppl = std::exp(res.mean_nll);
    if (n_trials > 1) {
        double mean = 0.0;
        for (double v : res.per_trial_ppl) mean += v;
        mean /= static_cast<double>(n_trials);
        double var = 0.0;
        for (double v : res.per_trial_ppl) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n_trials - 1);
        res.stderr_ppl = std::sqrt(var / static_cast<double>(n_trials));
    }
    return res;
}

PplResult perplexity_full(const LmParams& params, const std::vector<TokenSeq>& corpus) {
    if (corpus.empty()) raise(ErrorKind::InvalidInput, "perplexity: empty corpus");
    PplResult res;
    double nll = 0.0;
    std::size_t positions = 0;
    std::vector<double> logp(params.config.vocab);
    for (const TokenSeq& seq : corpus) {
        if (seq.size() < 2)
            raise(ErrorKind::InvalidInput, "perplexity: sequences need >= 2 tokens");
        Matrix logits = lm_forward_full(params, seq);
        for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
            log_softmax_row(logits.row(i), params.config.vocab, logp.data());
            double lp = logp[static_cast<std::size_t>(seq[i + 1])];
            if (!(lp >= kLogProbFloor)) {
                lp = kLogProbFloor;
                ++res.clamped;
            }
            nll -= lp;
            ++positions;
        }
    }
    res.positions = positions;
    res.mean_nll = nll / static_cast<double>(positions);
    res.ppl = std::exp(res.mean_nll);
    res.per_trial_ppl = {res.ppl};
    return res;
}

std::uint64_t flops_per_layer(const LmConfig& config) {
    config.validate();
    const std::uint64_t d_in = config.d_in, d_mid = config.d_mid, kappa = config.heads;
    const std::uint64_t d_over_k = d_mid / kappa;  // exact: d_mid % kappa == 0
    const std::uint64_t attn_proj = 3 * d_in * d_mid * d_over_k;
    const std::uint64_t attn_scores = 2 * d_in * d_in * d_over_k;
    const std::uint64_t ffn = 9 * d_in * d_mid * d_mid;
    return attn_proj + attn_scores + ffn;
}

std::uint64_t c_ue(const LmConfig& config, std::size_t p) {
    if (p < 1 || p > config.layers)
        raise(ErrorKind::InvalidSplit, "c_ue: p must lie in [1, L]");
    return static_cast<std::uint64_t>(p) * flops_per_layer(config);
}

nlohmann::json lm_to_json(const LmParams& params, const Vocabulary& vocab) {
    nlohmann::json j;
    j["format"] = "splitsim-lm-v1";
    j["config"] = {{"layers", params.config.layers}, {"d_in", params.config.d_in},
                   {"d_mid", params.config.d_mid},   {"heads", params.config.heads},
                   {"d_ff", params.config.d_ff},     {"vocab", params.config.vocab}};
    j["vocab"] = vocab.to_map();
    nlohmann::json p;
    auto& self = const_cast<LmParams&>(params);
    for (auto& [name, m] : self.named_params()) p[name] = matrix_to_json(*m);
    j["params"] = std::move(p);
    return j;
}

std::pair<LmParams, Vocabulary> lm_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "splitsim-lm-v1")
        raise(ErrorKind::InvalidInput, "not a splitsim lm checkpoint");
    LmConfig cfg;
    const auto& c = j.at("config");
    cfg.layers = c.at("layers").get<std::size_t>();
    cfg.d_in = c.at("d_in").get<std::size_t>();
    cfg.d_mid = c.at("d_mid").get<std::size_t>();
    cfg.heads = c.at("heads").get<std::size_t>();
    cfg.d_ff = c.at("d_ff").get<std::size_t>();
    cfg.vocab = c.at("vocab").get<std::size_t>();
    cfg.validate();

    Vocabulary vocab = Vocabulary::from_map(
        j.at("vocab").get<std::map<std::string, TokenId>>());
    if (vocab.size() != cfg.vocab)
        raise(ErrorKind::InvalidInput, "vocabulary size does not match config");

    RngStream dummy(0);
    LmParams params = lm_init(cfg, dummy);
    const auto& p = j.at("params");
    for (auto& [name, m] : params.named_params()) {
        Matrix loaded = matrix_from_json(p.at(name));
        if (!loaded.same_shape(*m))
            raise(ErrorKind::InvalidInput, "checkpoint matrix has wrong shape: " + name);
        *m = std::move(loaded);
    }
    return {std::move(params), std::move(vocab)};
}

}  // namespace splitsim
