#pragma once

#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "seqseg/common.hpp"

namespace seqseg {

using Mat = Eigen::MatrixXd;

// Classification head: boundary probability per pooled sentence encoding
// (sequence labeling), or a single decision from the [CLS] state
// (cross-segment baseline).
enum class ClassifierHead { sentence_mean, cls_token };

inline const char* to_string(ClassifierHead h) {
    return h == ClassifierHead::sentence_mean ? "sentence_mean" : "cls_token";
}

inline ClassifierHead head_from_string(const std::string& s) {
    if (s == "sentence_mean") return ClassifierHead::sentence_mean;
    if (s == "cls_token") return ClassifierHead::cls_token;
    throw DataError("unknown classifier head '" + s + "'");
}

struct ModelConfig {
    int vocab_size = 0;
    int phone_vocab_size = 0;
    int d_model = 32;
    int n_layers = 2;
    int n_heads = 2;
    int d_ff = 64;
    int max_seq_len = 512;
    double dropout_rate = 0.1;
    bool use_phone = false;
    ClassifierHead head = ClassifierHead::sentence_mean;
};

inline void validate_config(const ModelConfig& c) {
    if (c.vocab_size < 5) throw DataError("model config: vocab_size must cover the specials");
    if (c.d_model < 1 || c.n_heads < 1 || c.d_ff < 1 || c.n_layers < 0)
        throw DataError("model config: non-positive dimension");
    if (c.d_model % c.n_heads != 0)
        throw DataError("model config: d_model must be divisible by n_heads");
    if (c.max_seq_len < 8) throw DataError("model config: max_seq_len must be >= 8");
    if (c.dropout_rate < 0.0 || c.dropout_rate >= 1.0)
        throw DataError("model config: dropout_rate outside [0,1)");
    if (c.use_phone && c.phone_vocab_size < 1)
        throw DataError("model config: use_phone requires phone_vocab_size >= 1");
}

struct EncoderLayer {
    Mat ln1_gain, ln1_bias;       // 1 x d
    Mat wq, wk, wv, wo;           // d x d
    Mat bq, bk, bv, bo;           // 1 x d
    Mat ln2_gain, ln2_bias;       // 1 x d
    Mat w1, b1;                   // d x d_ff, 1 x d_ff
    Mat w2, b2;                   // d_ff x d, 1 x d
};

struct SegModel {
    ModelConfig config;
    Mat token_emb;                // vocab_size x d
    Mat pos_emb;                  // max_seq_len x d
    Mat seg_emb;                  // 2 x d
    Mat phone_emb;                // phone_vocab_size x d (0x0 unless use_phone)
    std::vector<EncoderLayer> layers;
    Mat cls_w;                    // d x 2
    Mat cls_b;                    // 1 x 2

    std::vector<std::pair<std::string, Mat*>> tensors() {
        std::vector<std::pair<std::string, Mat*>> out;
        out.emplace_back("token_emb", &token_emb);
        out.emplace_back("pos_emb", &pos_emb);
        out.emplace_back("seg_emb", &seg_emb);
        if (config.use_phone) out.emplace_back("phone_emb", &phone_emb);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            auto& lay = layers[l];
            std::string p = "layer" + std::to_string(l) + ".";
            out.emplace_back(p + "ln1_gain", &lay.ln1_gain);
            out.emplace_back(p + "ln1_bias", &lay.ln1_bias);
            out.emplace_back(p + "wq", &lay.wq);
            out.emplace_back(p + "bq", &lay.bq);
            out.emplace_back(p + "wk", &lay.wk);
            out.emplace_back(p + "bk", &lay.bk);
            out.emplace_back(p + "wv", &lay.wv);
            out.emplace_back(p + "bv", &lay.bv);
            out.emplace_back(p + "wo", &lay.wo);
            out.emplace_back(p + "bo", &lay.bo);
            out.emplace_back(p + "ln2_gain", &lay.ln2_gain);
            out.emplace_back(p + "ln2_bias", &lay.ln2_bias);
            out.emplace_back(p + "w1", &lay.w1);
            out.emplace_back(p + "b1", &lay.b1);
            out.emplace_back(p + "w2", &lay.w2);
            out.emplace_back(p + "b2", &lay.b2);
        }
        out.emplace_back("cls_w", &cls_w);
        out.emplace_back("cls_b", &cls_b);
        return out;
    }

    std::vector<std::pair<std::string, const Mat*>> tensors() const {
        auto mut = const_cast<SegModel*>(this)->tensors();
        std::vector<std::pair<std::string, const Mat*>> out;
        out.reserve(mut.size());
        for (auto& [name, p] : mut) out.emplace_back(name, p);
        return out;
    }

    bool all_finite() const {
        for (const auto& [name, p] : tensors()) {
            if (!p->allFinite()) return false;
        }
        return true;
    }
};

// Truncated normal (std 0.02) for embeddings and linear weights, zeros for
// biases, ones for layer-norm gains.
inline SegModel init_model(const ModelConfig& config, std::uint64_t seed) {
    validate_config(config);
    SegModel m;
    m.config = config;
    Rng rng(seed);
    auto trunc = [&](int rows, int cols) {
        Mat t(rows, cols);
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) t(r, c) = rng.truncated_normal(0.02);
        }
        return t;
    };
    int d = config.d_model;
    m.token_emb = trunc(config.vocab_size, d);
    m.pos_emb = trunc(config.max_seq_len, d);
    m.seg_emb = trunc(2, d);
    m.phone_emb = config.use_phone ? trunc(config.phone_vocab_size, d) : Mat(0, 0);
    m.layers.resize(config.n_layers);
    for (auto& lay : m.layers) {
        lay.ln1_gain = Mat::Ones(1, d);
        lay.ln1_bias = Mat::Zero(1, d);
        lay.wq = trunc(d, d);
        lay.bq = Mat::Zero(1, d);
        lay.wk = trunc(d, d);
        lay.bk = Mat::Zero(1, d);
        lay.wv = trunc(d, d);
        lay.bv = Mat::Zero(1, d);
        lay.wo = trunc(d, d);
        lay.bo = Mat::Zero(1, d);
        lay.ln2_gain = Mat::Ones(1, d);
        lay.ln2_bias = Mat::Zero(1, d);
        lay.w1 = trunc(d, config.d_ff);
        lay.b1 = Mat::Zero(1, config.d_ff);
        lay.w2 = trunc(config.d_ff, d);
        lay.b2 = Mat::Zero(1, d);
    }
    m.cls_w = trunc(d, 2);
    m.cls_b = Mat::Zero(1, 2);
    return m;
}

inline SegModel zeros_like(const SegModel& model) {
    SegModel g = model;
    for (auto& [name, p] : g.tensors()) p->setZero();
    return g;
}

// ---------------------------------------------------------------------------
// Window input
// ---------------------------------------------------------------------------

struct WindowInput {
    std::vector<int> token_ids;                    // position 0 is [CLS]
    std::vector<std::pair<int, int>> sentence_spans;
    std::vector<std::vector<int>> phone_ids;       // per token; empty list = no phone term

    int length() const { return static_cast<int>(token_ids.size()); }
};

using SentenceProbs = std::vector<double>;

inline void validate_window(const WindowInput& w, const ModelConfig& config) {
    int len = w.length();
    if (len < 1) throw DataError("window has no tokens");
    if (len > config.max_seq_len) throw DataError("window exceeds max_seq_len");
    for (int id : w.token_ids) {
        if (id < 0 || id >= config.vocab_size) throw DataError("token id out of range");
    }
    if (!w.phone_ids.empty()) {
        if (static_cast<int>(w.phone_ids.size()) != len)
            throw DataError("phone id plan length mismatch");
        if (config.use_phone) {
            for (const auto& ids : w.phone_ids) {
                for (int p : ids) {
                    if (p < 0 || p >= config.phone_vocab_size)
                        throw DataError("phone id out of range");
                }
            }
        }
    }
    int prev_end = 1;  // spans live in [1, len): CLS belongs to no span
    for (const auto& [start, end] : w.sentence_spans) {
        if (start < prev_end || end <= start || end > len)
            throw DataError("invalid sentence span");
        prev_end = end;
    }
}

// ---------------------------------------------------------------------------
// Forward pass with caches (needed by the exact backward pass)
// ---------------------------------------------------------------------------

struct DropoutPlan {
    double rate = 0.0;
    Rng* rng = nullptr;
    bool active() const { return rng != nullptr && rate > 0.0; }
};

namespace nn {

inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440));
}

inline double gelu_grad(double x) {
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    return 0.5 * (1.0 + std::erf(x * 0.70710678118654752440)) +
           x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

struct LayerNormCache {
    Mat xhat;                 // normalized input
    Eigen::VectorXd inv_std;  // per row
};

inline Mat layernorm_forward(const Mat& x, const Mat& gain, const Mat& bias,
                             LayerNormCache& cache) {
    constexpr double eps = 1e-5;
    const int rows = static_cast<int>(x.rows());
    const int d = static_cast<int>(x.cols());
    cache.xhat.resize(rows, d);
    cache.inv_std.resize(rows);
    Mat y(rows, d);
    for (int r = 0; r < rows; ++r) {
        double mean = x.row(r).mean();
        double var = (x.row(r).array() - mean).square().sum() / d;
        double inv_std = 1.0 / std::sqrt(var + eps);
        cache.inv_std(r) = inv_std;
        cache.xhat.row(r) = (x.row(r).array() - mean) * inv_std;
        y.row(r) = cache.xhat.row(r).cwiseProduct(gain.row(0)) + bias.row(0);
    }
    return y;
}

inline Mat layernorm_backward(const Mat& dy, const LayerNormCache& cache, const Mat& gain,
                              Mat& dgain, Mat& dbias) {
    const int rows = static_cast<int>(dy.rows());
    const int d = static_cast<int>(dy.cols());
    dgain += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    dbias += dy.colwise().sum();
    Mat dx(rows, d);
    for (int r = 0; r < rows; ++r) {
        Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(gain.row(0));
        double m1 = dxhat.mean();
        double m2 = dxhat.cwiseProduct(cache.xhat.row(r)).mean();
        dx.row(r) = cache.inv_std(r) *
                    (dxhat.array() - m1 - cache.xhat.row(r).array() * m2).matrix();
    }
    return dx;
}

inline Mat dropout_mask(int rows, int cols, const DropoutPlan& plan) {
    Mat mask(rows, cols);
    double keep = 1.0 - plan.rate;
    double scale = 1.0 / keep;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            mask(r, c) = plan.rng->uniform() < keep ? scale : 0.0;
        }
    }
    return mask;
}

struct LayerCache {
    LayerNormCache ln1;
    Mat ln1_out;
    Mat q, k, v;                  // L x d
    std::vector<Mat> attn_probs;  // per head, L x L
    Mat ctx;                      // L x d
    Mat drop1;                    // empty when dropout is off
    Mat x_mid;
    LayerNormCache ln2;
    Mat ln2_out;
    Mat ffn_pre;                  // L x d_ff
    Mat ffn_act;                  // L x d_ff
    Mat drop2;
};

}  // namespace nn

struct ForwardCache {
    Mat embedded;                    // L x d
    std::vector<nn::LayerCache> layers;
    Mat encoded;                     // L x d
    Mat pooled;                      // n x d
    Mat logits;                      // n x 2
    Mat probs;                       // n x 2
};

// Input representation: token + position + segment embeddings, plus the mean
// of the source word's phone embeddings replicated to each of its tokens.
inline Mat embed_input(const WindowInput& w, const SegModel& m) {
    validate_window(w, m.config);
    const int len = w.length();
    const int d = m.config.d_model;
    Mat x(len, d);
    for (int t = 0; t < len; ++t) {
        x.row(t) = m.token_emb.row(w.token_ids[t]) + m.pos_emb.row(t) + m.seg_emb.row(0);
        if (m.config.use_phone && !w.phone_ids.empty() && !w.phone_ids[t].empty()) {
            const auto& ids = w.phone_ids[t];
            Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(d);
            for (int p : ids) mean += m.phone_emb.row(p);
            x.row(t) += mean / static_cast<double>(ids.size());
        }
    }
    return x;
}

namespace nn {

inline Mat encoder_layer_forward(const Mat& x_in, const EncoderLayer& lay, int n_heads,
                                 const std::vector<bool>* key_valid, const DropoutPlan& plan,
                                 LayerCache& cache) {
    const int len = static_cast<int>(x_in.rows());
    const int d = static_cast<int>(x_in.cols());
    const int dh = d / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    cache.ln1_out = layernorm_forward(x_in, lay.ln1_gain, lay.ln1_bias, cache.ln1);
    cache.q = cache.ln1_out * lay.wq;
    cache.q.rowwise() += lay.bq.row(0);
    cache.k = cache.ln1_out * lay.wk;
    cache.k.rowwise() += lay.bk.row(0);
    cache.v = cache.ln1_out * lay.wv;
    cache.v.rowwise() += lay.bv.row(0);

    cache.attn_probs.assign(n_heads, Mat());
    cache.ctx.resize(len, d);
    for (int h = 0; h < n_heads; ++h) {
        auto qh = cache.q.middleCols(h * dh, dh);
        auto kh = cache.k.middleCols(h * dh, dh);
        auto vh = cache.v.middleCols(h * dh, dh);
        Mat scores = qh * kh.transpose() * scale;
        if (key_valid) {
            for (int j = 0; j < len; ++j) {
                if (!(*key_valid)[j]) scores.col(j).setConstant(-1e30);
            }
        }
        Mat& probs = cache.attn_probs[h];
        probs.resize(len, len);
        for (int r = 0; r < len; ++r) {
            double mx = scores.row(r).maxCoeff();
            Eigen::RowVectorXd e = (scores.row(r).array() - mx).exp();
            probs.row(r) = e / e.sum();
        }
        cache.ctx.middleCols(h * dh, dh) = probs * vh;
    }

    Mat attn_out = cache.ctx * lay.wo;
    attn_out.rowwise() += lay.bo.row(0);
    if (plan.active()) {
        cache.drop1 = dropout_mask(len, d, plan);
        attn_out = attn_out.cwiseProduct(cache.drop1);
    }
    cache.x_mid = x_in + attn_out;

    cache.ln2_out = layernorm_forward(cache.x_mid, lay.ln2_gain, lay.ln2_bias, cache.ln2);
    cache.ffn_pre = cache.ln2_out * lay.w1;
    cache.ffn_pre.rowwise() += lay.b1.row(0);
    cache.ffn_act = cache.ffn_pre.unaryExpr([](double t) { return gelu(t); });
    Mat ffn_out = cache.ffn_act * lay.w2;
    ffn_out.rowwise() += lay.b2.row(0);
    if (plan.active()) {
        cache.drop2 = dropout_mask(len, d, plan);
        ffn_out = ffn_out.cwiseProduct(cache.drop2);
    }
    Mat x_out = cache.x_mid + ffn_out;
    if (!x_out.allFinite()) throw NumericError("numerical overflow");
    return x_out;
}

inline Mat encoder_layer_backward(const Mat& dx_out, const EncoderLayer& lay, int n_heads,
                                  const LayerCache& cache, EncoderLayer& grad) {
    const int len = static_cast<int>(dx_out.rows());
    const int d = static_cast<int>(dx_out.cols());
    const int dh = d / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // feed-forward sublayer
    Mat dffn_out = dx_out;
    if (cache.drop2.size() > 0) dffn_out = dffn_out.cwiseProduct(cache.drop2);
    grad.w2 += cache.ffn_act.transpose() * dffn_out;
    grad.b2 += dffn_out.colwise().sum();
    Mat dffn_act = dffn_out * lay.w2.transpose();
    Mat dffn_pre =
        dffn_act.cwiseProduct(cache.ffn_pre.unaryExpr([](double t) { return gelu_grad(t); }));
    grad.w1 += cache.ln2_out.transpose() * dffn_pre;
    grad.b1 += dffn_pre.colwise().sum();
    Mat dln2_out = dffn_pre * lay.w1.transpose();

    Mat dx_mid = dx_out;  // residual
    dx_mid += layernorm_backward(dln2_out, cache.ln2, lay.ln2_gain, grad.ln2_gain, grad.ln2_bias);

    // attention sublayer
    Mat dattn_out = dx_mid;
    if (cache.drop1.size() > 0) dattn_out = dattn_out.cwiseProduct(cache.drop1);
    grad.wo += cache.ctx.transpose() * dattn_out;
    grad.bo += dattn_out.colwise().sum();
    Mat dctx = dattn_out * lay.wo.transpose();

    Mat dq(len, d), dk(len, d), dv(len, d);
    for (int h = 0; h < n_heads; ++h) {
        auto qh = cache.q.middleCols(h * dh, dh);
        auto kh = cache.k.middleCols(h * dh, dh);
        auto vh = cache.v.middleCols(h * dh, dh);
        auto dctx_h = dctx.middleCols(h * dh, dh);
        const Mat& probs = cache.attn_probs[h];
        Mat dprobs = dctx_h * vh.transpose();
        dv.middleCols(h * dh, dh) = probs.transpose() * dctx_h;
        // softmax backward, row-wise
        Mat dscores(len, len);
        for (int r = 0; r < len; ++r) {
            double dot = dprobs.row(r).dot(probs.row(r));
            dscores.row(r) = probs.row(r).cwiseProduct(
                (dprobs.row(r).array() - dot).matrix());
        }
        dq.middleCols(h * dh, dh) = dscores * kh * scale;
        dk.middleCols(h * dh, dh) = dscores.transpose() * qh * scale;
    }

    grad.wq += cache.ln1_out.transpose() * dq;
    grad.bq += dq.colwise().sum();
    grad.wk += cache.ln1_out.transpose() * dk;
    grad.bk += dk.colwise().sum();
    grad.wv += cache.ln1_out.transpose() * dv;
    grad.bv += dv.colwise().sum();
    Mat dln1_out = dq * lay.wq.transpose() + dk * lay.wk.transpose() + dv * lay.wv.transpose();

    Mat dx_in = dx_mid;  // residual
    dx_in += layernorm_backward(dln1_out, cache.ln1, lay.ln1_gain, grad.ln1_gain, grad.ln1_bias);
    return dx_in;
}

}  // namespace nn

// Pre-norm self-attention + feed-forward stack. An empty stack is identity.
inline Mat encode(const Mat& x, const std::vector<bool>* key_valid, const SegModel& m,
                  const DropoutPlan& plan, ForwardCache* cache = nullptr) {
    if (key_valid && static_cast<int>(key_valid->size()) != x.rows())
        throw DataError("attention mask length mismatch");
    Mat h = x;
    if (!h.allFinite()) throw NumericError("numerical overflow");
    if (cache) cache->layers.resize(m.layers.size());
    nn::LayerCache scratch;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        nn::LayerCache& lc = cache ? cache->layers[l] : scratch;
        h = nn::encoder_layer_forward(h, m.layers[l], m.config.n_heads, key_valid, plan, lc);
    }
    return h;
}

inline Mat encode(const Mat& x, const std::vector<bool>* key_valid, const SegModel& m,
                  bool train_mode = false, Rng* rng = nullptr) {
    DropoutPlan plan;
    if (train_mode) {
        plan.rate = m.config.dropout_rate;
        plan.rng = rng;
    }
    return encode(x, key_valid, m, plan);
}

// Mean of the hidden states inside each sentence span.
inline Mat pool_sentences(const Mat& h, const std::vector<std::pair<int, int>>& spans) {
    Mat pooled(static_cast<int>(spans.size()), h.cols());
    for (std::size_t i = 0; i < spans.size(); ++i) {
        auto [start, end] = spans[i];
        if (end <= start || start < 0 || end > h.rows()) throw DataError("empty or invalid span");
        pooled.row(static_cast<int>(i)) =
            h.middleRows(start, end - start).colwise().mean();
    }
    return pooled;
}

namespace nn {

inline Mat softmax_rows(const Mat& logits) {
    Mat out(logits.rows(), logits.cols());
    for (int r = 0; r < logits.rows(); ++r) {
        double mx = logits.row(r).maxCoeff();
        Eigen::RowVectorXd e = (logits.row(r).array() - mx).exp();
        out.row(r) = e / e.sum();
    }
    return out;
}

// Rows selected by the classifier head: pooled sentence encodings or the
// [CLS] hidden state.
inline Mat head_states(const Mat& encoded, const WindowInput& w, const SegModel& m) {
    if (m.config.head == ClassifierHead::cls_token) return encoded.topRows(1);
    if (w.sentence_spans.empty()) throw DataError("window has no sentence spans");
    return pool_sentences(encoded, w.sentence_spans);
}

}  // namespace nn

// Boundary probability per row of S (softmax class 1).
inline SentenceProbs classify(const Mat& s, const SegModel& m) {
    Mat logits = s * m.cls_w;
    logits.rowwise() += m.cls_b.row(0);
    Mat probs = nn::softmax_rows(logits);
    SentenceProbs out(probs.rows());
    for (int r = 0; r < probs.rows(); ++r) out[r] = probs(r, 1);
    return out;
}

inline SentenceProbs forward(const WindowInput& w, const SegModel& m, bool train_mode = false,
                             Rng* rng = nullptr) {
    Mat x = embed_input(w, m);
    Mat h = encode(x, nullptr, m, train_mode, rng);
    return classify(nn::head_states(h, w, m), m);
}

// Mean softmax cross-entropy over the head's decisions, computed via
// log-softmax for stability.
inline double compute_loss(const WindowInput& w, const std::vector<bool>& labels,
                           const SegModel& m) {
    Mat x = embed_input(w, m);
    Mat h = encode(x, nullptr, m, DropoutPlan{});
    Mat s = nn::head_states(h, w, m);
    if (static_cast<int>(labels.size()) != s.rows())
        throw DataError("label count does not match sentence count");
    Mat logits = s * m.cls_w;
    logits.rowwise() += m.cls_b.row(0);
    double loss = 0.0;
    for (int r = 0; r < logits.rows(); ++r) {
        double mx = logits.row(r).maxCoeff();
        double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
        loss -= logits(r, labels[r] ? 1 : 0) - lse;
    }
    return loss / static_cast<double>(logits.rows());
}

struct BackwardResult {
    double loss = 0.0;
    SegModel grads;
};

// Exact gradients for the forward computation. The dropout plan, when active,
// applies the same realized masks in both directions; the default plan is
// dropout-free.
inline BackwardResult backward(const WindowInput& w, const std::vector<bool>& labels,
                               const SegModel& m, const DropoutPlan& plan = DropoutPlan{}) {
    ForwardCache cache;
    cache.embedded = embed_input(w, m);
    cache.encoded = encode(cache.embedded, nullptr, m, plan, &cache);
    cache.pooled = nn::head_states(cache.encoded, w, m);
    const int n = static_cast<int>(cache.pooled.rows());
    if (static_cast<int>(labels.size()) != n)
        throw DataError("label count does not match sentence count");

    cache.logits = cache.pooled * m.cls_w;
    cache.logits.rowwise() += m.cls_b.row(0);
    cache.probs = nn::softmax_rows(cache.logits);

    BackwardResult result;
    result.grads = zeros_like(m);

    double loss = 0.0;
    Mat dlogits = cache.probs;
    for (int r = 0; r < n; ++r) {
        int y = labels[r] ? 1 : 0;
        double mx = cache.logits.row(r).maxCoeff();
        double lse = mx + std::log((cache.logits.row(r).array() - mx).exp().sum());
        loss -= cache.logits(r, y) - lse;
        dlogits(r, y) -= 1.0;
    }
    result.loss = loss / n;
    dlogits /= static_cast<double>(n);

    result.grads.cls_w += cache.pooled.transpose() * dlogits;
    result.grads.cls_b += dlogits.colwise().sum();
    Mat dpooled = dlogits * m.cls_w.transpose();

    // un-pool into hidden state gradients
    Mat dh = Mat::Zero(cache.encoded.rows(), cache.encoded.cols());
    if (m.config.head == ClassifierHead::cls_token) {
        dh.row(0) = dpooled.row(0);
    } else {
        for (std::size_t i = 0; i < w.sentence_spans.size(); ++i) {
            auto [start, end] = w.sentence_spans[i];
            double inv = 1.0 / static_cast<double>(end - start);
            for (int r = start; r < end; ++r) {
                dh.row(r) += dpooled.row(static_cast<int>(i)) * inv;
            }
        }
    }

    for (int l = static_cast<int>(m.layers.size()) - 1; l >= 0; --l) {
        dh = nn::encoder_layer_backward(dh, m.layers[l], m.config.n_heads, cache.layers[l],
                                        result.grads.layers[l]);
    }

    // embedding gradients
    const int len = w.length();
    for (int t = 0; t < len; ++t) {
        result.grads.token_emb.row(w.token_ids[t]) += dh.row(t);
        result.grads.pos_emb.row(t) += dh.row(t);
        result.grads.seg_emb.row(0) += dh.row(t);
        if (m.config.use_phone && !w.phone_ids.empty() && !w.phone_ids[t].empty()) {
            const auto& ids = w.phone_ids[t];
            double inv = 1.0 / static_cast<double>(ids.size());
            for (int p : ids) result.grads.phone_emb.row(p) += dh.row(t) * inv;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic, config JSON, then named tensors with shapes.
// Doubles are stored raw (row-major), so save/load round-trips exactly.
// ---------------------------------------------------------------------------

namespace detail_ckpt {

constexpr char kMagic[8] = {'S', 'S', 'E', 'G', 'M', 'D', 'L', '1'};

inline void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace detail_ckpt

inline void save_model(const SegModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(detail_ckpt::kMagic, 8);

    nlohmann::ordered_json cfg;
    cfg["vocab_size"] = m.config.vocab_size;
    cfg["phone_vocab_size"] = m.config.phone_vocab_size;
    cfg["d_model"] = m.config.d_model;
    cfg["n_layers"] = m.config.n_layers;
    cfg["n_heads"] = m.config.n_heads;
    cfg["d_ff"] = m.config.d_ff;
    cfg["max_seq_len"] = m.config.max_seq_len;
    cfg["dropout_rate"] = m.config.dropout_rate;
    cfg["use_phone"] = m.config.use_phone;
    cfg["head"] = to_string(m.config.head);
    std::string cfg_str = cfg.dump();
    detail_ckpt::write_u64(out, cfg_str.size());
    out.write(cfg_str.data(), static_cast<std::streamsize>(cfg_str.size()));

    auto named = m.tensors();
    detail_ckpt::write_u64(out, named.size());
    for (const auto& [name, p] : named) {
        detail_ckpt::write_u64(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail_ckpt::write_u64(out, static_cast<std::uint64_t>(p->rows()));
        detail_ckpt::write_u64(out, static_cast<std::uint64_t>(p->cols()));
        for (Eigen::Index r = 0; r < p->rows(); ++r) {
            for (Eigen::Index c = 0; c < p->cols(); ++c) {
                double v = (*p)(r, c);
                out.write(reinterpret_cast<const char*>(&v), sizeof(double));
            }
        }
    }
    if (!out) throw DataError("write failed: " + path);
}

inline SegModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, detail_ckpt::kMagic, 8) != 0)
        throw DataError("not a model checkpoint: " + path);

    std::uint64_t cfg_len = detail_ckpt::read_u64(in);
    std::string cfg_str(cfg_len, '\0');
    in.read(cfg_str.data(), static_cast<std::streamsize>(cfg_len));
    if (!in) throw DataError("truncated checkpoint: " + path);
    nlohmann::json cfg;
    try {
        cfg = nlohmann::json::parse(cfg_str);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad checkpoint config: " + std::string(e.what()));
    }
    ModelConfig config;
    config.vocab_size = cfg.at("vocab_size").get<int>();
    config.phone_vocab_size = cfg.at("phone_vocab_size").get<int>();
    config.d_model = cfg.at("d_model").get<int>();
    config.n_layers = cfg.at("n_layers").get<int>();
    config.n_heads = cfg.at("n_heads").get<int>();
    config.d_ff = cfg.at("d_ff").get<int>();
    config.max_seq_len = cfg.at("max_seq_len").get<int>();
    config.dropout_rate = cfg.at("dropout_rate").get<double>();
    config.use_phone = cfg.at("use_phone").get<bool>();
    config.head = head_from_string(cfg.at("head").get<std::string>());
    validate_config(config);

    SegModel m = init_model(config, 0);
    auto named = m.tensors();
    std::uint64_t n_tensors = detail_ckpt::read_u64(in);
    if (n_tensors != named.size()) throw DataError("checkpoint tensor count mismatch");
    for (auto& [name, p] : named) {
        std::uint64_t name_len = detail_ckpt::read_u64(in);
        std::string stored(name_len, '\0');
        in.read(stored.data(), static_cast<std::streamsize>(name_len));
        if (stored != name) throw DataError("checkpoint tensor name mismatch: " + stored);
        std::uint64_t rows = detail_ckpt::read_u64(in);
        std::uint64_t cols = detail_ckpt::read_u64(in);
        if (rows != static_cast<std::uint64_t>(p->rows()) ||
            cols != static_cast<std::uint64_t>(p->cols())) {
            throw DataError("checkpoint shape mismatch for tensor " + name);
        }
        for (Eigen::Index r = 0; r < p->rows(); ++r) {
            for (Eigen::Index c = 0; c < p->cols(); ++c) {
                double v;
                in.read(reinterpret_cast<char*>(&v), sizeof(double));
                (*p)(r, c) = v;
            }
        }
        if (!in) throw DataError("truncated checkpoint: " + path);
    }
    if (!m.all_finite()) throw DataError("checkpoint contains non-finite parameters");
    return m;
}

}  // namespace seqseg
