#include "fcni/lm.hpp"

#include <algorithm>
#include <cmath>

#include "fcni/error.hpp"
#include "fcni/rng.hpp"

namespace fcni {

namespace {

constexpr double kLnEps = 1e-6;

Matrix glorot(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (auto& v : m.data) v = rng.uniform(-limit, limit);
    return m;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
           x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

// y = g * (x - mu) * rstd + b, computed row-wise; xhat and rstd are cached.
void layernorm(const Matrix& x, const Matrix& g, const Matrix& b, Matrix& y, Matrix& xhat,
               std::vector<double>& rstd) {
    const std::size_t d = x.cols;
    y = Matrix(x.rows, d);
    xhat = Matrix(x.rows, d);
    rstd.assign(x.rows, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        double mu = kern::sum(xi, d) / static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            double c = xi[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        double r = 1.0 / std::sqrt(var + kLnEps);
        rstd[i] = r;
        double* xh = xhat.row(i);
        double* yi = y.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            xh[j] = (xi[j] - mu) * r;
            yi[j] = g(0, j) * xh[j] + b(0, j);
        }
    }
}

// Accumulates dx into d_x; gradient for scale/offset into dg/db when given.
void layernorm_backward(const Matrix& dy, const Matrix& xhat, const std::vector<double>& rstd,
                        const Matrix& g, Matrix& d_x, Matrix* dg, Matrix* db) {
    const std::size_t d = dy.cols;
    std::vector<double> dxhat(d);
    for (std::size_t i = 0; i < dy.rows; ++i) {
        const double* dyi = dy.row(i);
        const double* xh = xhat.row(i);
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            dxhat[j] = dyi[j] * g(0, j);
            m1 += dxhat[j];
            m2 += dxhat[j] * xh[j];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        double* dxi = d_x.row(i);
        for (std::size_t j = 0; j < d; ++j)
            dxi[j] += rstd[i] * (dxhat[j] - m1 - xh[j] * m2);
        if (dg)
            for (std::size_t j = 0; j < d; ++j) {
                (*dg)(0, j) += dyi[j] * xh[j];
                (*db)(0, j) += dyi[j];
            }
    }
}

void linear(const Matrix& x, const Matrix& w, const Matrix& b, Matrix& y) {
    la::matmul(x, w, y);
    la::add_row_broadcast(y, b.row(0));
}

}  // namespace

LmParams LmParams::init(const LmConfig& cfg, std::uint64_t seed) {
    if (cfg.vocab == 0) throw config_error("language model vocabulary size not set");
    if (cfg.d_model % cfg.heads != 0)
        throw config_error("head count must divide the model width");
    Rng rng(seed);
    LmParams p;
    p.cfg = cfg;
    p.tok_emb = glorot(cfg.vocab, cfg.d_model, rng);
    p.pos_emb = glorot(cfg.max_seq, cfg.d_model, rng);
    p.fcn_null = Matrix(1, cfg.d_model);
    p.blocks.resize(cfg.blocks);
    for (auto& b : p.blocks) {
        b.wq = glorot(cfg.d_model, cfg.d_model, rng);
        b.wk = glorot(cfg.d_model, cfg.d_model, rng);
        b.wv = glorot(cfg.d_model, cfg.d_model, rng);
        b.wo = glorot(cfg.d_model, cfg.d_model, rng);
        b.bq = Matrix(1, cfg.d_model);
        b.bk = Matrix(1, cfg.d_model);
        b.bv = Matrix(1, cfg.d_model);
        b.bo = Matrix(1, cfg.d_model);
        b.ln1_g = Matrix(1, cfg.d_model, 1.0);
        b.ln1_b = Matrix(1, cfg.d_model);
        b.ln2_g = Matrix(1, cfg.d_model, 1.0);
        b.ln2_b = Matrix(1, cfg.d_model);
        b.fc1 = glorot(cfg.d_model, cfg.ffn_hidden, rng);
        b.fb1 = Matrix(1, cfg.ffn_hidden);
        b.fc2 = glorot(cfg.ffn_hidden, cfg.d_model, rng);
        b.fb2 = Matrix(1, cfg.d_model);
    }
    p.lnf_g = Matrix(1, cfg.d_model, 1.0);
    p.lnf_b = Matrix(1, cfg.d_model);
    p.head = glorot(cfg.d_model, cfg.vocab, rng);
    return p;
}

void LmParams::for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn) {
    fn("lm.tok_emb", tok_emb);
    fn("lm.pos_emb", pos_emb);
    fn("lm.fcn_null", fcn_null);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        auto& b = blocks[i];
        std::string pre = "lm.block" + std::to_string(i) + ".";
        fn(pre + "wq", b.wq);
        fn(pre + "wk", b.wk);
        fn(pre + "wv", b.wv);
        fn(pre + "wo", b.wo);
        fn(pre + "bq", b.bq);
        fn(pre + "bk", b.bk);
        fn(pre + "bv", b.bv);
        fn(pre + "bo", b.bo);
        fn(pre + "ln1_g", b.ln1_g);
        fn(pre + "ln1_b", b.ln1_b);
        fn(pre + "ln2_g", b.ln2_g);
        fn(pre + "ln2_b", b.ln2_b);
        fn(pre + "fc1", b.fc1);
        fn(pre + "fb1", b.fb1);
        fn(pre + "fc2", b.fc2);
        fn(pre + "fb2", b.fb2);
    }
    fn("lm.lnf_g", lnf_g);
    fn("lm.lnf_b", lnf_b);
    fn("lm.head", head);
}

void LmParams::zero_like_from(const LmParams& shape) {
    cfg = shape.cfg;
    auto zero = [](const Matrix& m) { return Matrix(m.rows, m.cols); };
    tok_emb = zero(shape.tok_emb);
    pos_emb = zero(shape.pos_emb);
    fcn_null = zero(shape.fcn_null);
    blocks.resize(shape.blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& s = shape.blocks[i];
        auto& b = blocks[i];
        b.wq = zero(s.wq);
        b.wk = zero(s.wk);
        b.wv = zero(s.wv);
        b.wo = zero(s.wo);
        b.bq = zero(s.bq);
        b.bk = zero(s.bk);
        b.bv = zero(s.bv);
        b.bo = zero(s.bo);
        b.ln1_g = zero(s.ln1_g);
        b.ln1_b = zero(s.ln1_b);
        b.ln2_g = zero(s.ln2_g);
        b.ln2_b = zero(s.ln2_b);
        b.fc1 = zero(s.fc1);
        b.fb1 = zero(s.fb1);
        b.fc2 = zero(s.fc2);
        b.fb2 = zero(s.fb2);
    }
    lnf_g = zero(shape.lnf_g);
    lnf_b = zero(shape.lnf_b);
    head = zero(shape.head);
}

Assembled assemble_input(const std::vector<int>& prompt_ids,
                         const std::vector<const FcnTokenSequence*>& fcns,
                         const std::vector<int>& answer_ids, const LmParams& params) {
    const std::size_t d = params.cfg.d_model;
    std::size_t placeholders = 0;
    for (int id : prompt_ids)
        if (id == Tokenizer::kFcn) ++placeholders;
    const bool null_mode = fcns.empty();
    if (!null_mode && placeholders != fcns.size())
        throw invalid_input("prompt has " + std::to_string(placeholders) +
                            " placeholders but " + std::to_string(fcns.size()) +
                            " FCN token sequences were provided");

    Assembled a;
    auto push_word = [&](int id) {
        a.ids.push_back(id);
        a.src.push_back({PosSrc::Kind::word, id, 0, 0});
    };

    push_word(Tokenizer::kBos);
    std::size_t next_fcn = 0;
    for (int id : prompt_ids) {
        if (id == Tokenizer::kFcn && !null_mode) {
            const FcnTokenSequence* seq = fcns[next_fcn];
            Span span{a.ids.size(), a.ids.size() + seq->count()};
            for (std::size_t i = 0; i < seq->count(); ++i) {
                a.ids.push_back(Tokenizer::kFcn);
                a.src.push_back({PosSrc::Kind::fcnvec, Tokenizer::kFcn, next_fcn, i});
            }
            a.fcn_spans.push_back(span);
            ++next_fcn;
        } else if (id == Tokenizer::kFcn) {
            a.fcn_spans.push_back({a.ids.size(), a.ids.size() + 1});
            a.ids.push_back(Tokenizer::kFcn);
            a.src.push_back({PosSrc::Kind::nullvec, Tokenizer::kFcn, 0, 0});
        } else {
            push_word(id);
        }
    }
    a.answer_span.begin = a.ids.size();
    for (int id : answer_ids) push_word(id);
    if (!answer_ids.empty()) push_word(Tokenizer::kEos);
    a.answer_span.end = a.ids.size();

    const std::size_t s = a.ids.size();
    if (s > params.cfg.max_seq)
        throw invalid_input("assembled sequence length " + std::to_string(s) +
                            " exceeds max_seq " + std::to_string(params.cfg.max_seq));

    a.emb = Matrix(s, d);
    for (std::size_t t = 0; t < s; ++t) {
        const PosSrc& src = a.src[t];
        const double* base = nullptr;
        switch (src.kind) {
            case PosSrc::Kind::word: base = params.tok_emb.row(static_cast<std::size_t>(src.token_id)); break;
            case PosSrc::Kind::fcnvec: base = fcns[src.fcn_seq]->tokens.row(src.fcn_idx); break;
            case PosSrc::Kind::nullvec: base = params.fcn_null.row(0); break;
        }
        double* dst = a.emb.row(t);
        std::copy(base, base + d, dst);
        kern::axpy(1.0, params.pos_emb.row(t), dst, d);
    }
    return a;
}

std::vector<bool> answer_mask_of(const Assembled& a) {
    std::vector<bool> mask(a.ids.size(), false);
    for (std::size_t t = a.answer_span.begin; t < a.answer_span.end; ++t) mask[t] = true;
    return mask;
}

const Matrix& lm_forward(const Matrix& emb, const LmParams& params, LmCache& cache,
                         AttentionTensor* attention) {
    const std::size_t s = emb.rows;
    const std::size_t d = params.cfg.d_model;
    const std::size_t h = params.cfg.heads;
    const std::size_t dh = d / h;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    if (s < 1) throw invalid_input("lm_forward: empty sequence");

    cache.x0 = emb;
    cache.blocks.assign(params.cfg.blocks, {});
    if (attention) {
        attention->layers = params.cfg.blocks;
        attention->heads = h;
        attention->seq = s;
        attention->maps.assign(params.cfg.blocks * h, Matrix(s, s));
    }

    Matrix x = emb;
    for (std::size_t l = 0; l < params.cfg.blocks; ++l) {
        const auto& bp = params.blocks[l];
        auto& bc = cache.blocks[l];
        bc.x_in = x;

        layernorm(x, bp.ln1_g, bp.ln1_b, bc.ln1_out, bc.ln1_xhat, bc.ln1_rstd);
        linear(bc.ln1_out, bp.wq, bp.bq, bc.q);
        linear(bc.ln1_out, bp.wk, bp.bk, bc.k);
        linear(bc.ln1_out, bp.wv, bp.bv, bc.v);

        bc.probs.assign(h, Matrix(s, s));
        bc.ctx = Matrix(s, d);
        std::vector<double> scores(s);
        for (std::size_t head = 0; head < h; ++head) {
            const std::size_t off = head * dh;
            Matrix& p = bc.probs[head];
            for (std::size_t qpos = 0; qpos < s; ++qpos) {
                const double* qv = bc.q.row(qpos) + off;
                for (std::size_t kpos = 0; kpos <= qpos; ++kpos)
                    scores[kpos] = kern::dot(qv, bc.k.row(kpos) + off, dh) * inv_sqrt_dh;
                double m = kern::vmax(scores.data(), qpos + 1);
                double z = 0.0;
                for (std::size_t kpos = 0; kpos <= qpos; ++kpos) {
                    scores[kpos] = std::exp(scores[kpos] - m);
                    z += scores[kpos];
                }
                double* prow = p.row(qpos);
                double* crow = bc.ctx.row(qpos) + off;
                const double inv_z = 1.0 / z;
                for (std::size_t kpos = 0; kpos <= qpos; ++kpos) {
                    prow[kpos] = scores[kpos] * inv_z;
                    kern::axpy(prow[kpos], bc.v.row(kpos) + off, crow, dh);
                }
            }
            if (attention) attention->at(l, head) = p;
        }

        Matrix attn_out;
        linear(bc.ctx, bp.wo, bp.bo, attn_out);
        bc.x_mid = x;
        for (std::size_t i = 0; i < bc.x_mid.size(); ++i) bc.x_mid.data[i] += attn_out.data[i];

        layernorm(bc.x_mid, bp.ln2_g, bp.ln2_b, bc.ln2_out, bc.ln2_xhat, bc.ln2_rstd);
        linear(bc.ln2_out, bp.fc1, bp.fb1, bc.ffn_z);
        bc.ffn_a = Matrix(bc.ffn_z.rows, bc.ffn_z.cols);
        for (std::size_t i = 0; i < bc.ffn_z.size(); ++i)
            bc.ffn_a.data[i] = gelu(bc.ffn_z.data[i]);
        Matrix ffn_out;
        linear(bc.ffn_a, bp.fc2, bp.fb2, ffn_out);

        x = bc.x_mid;
        for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += ffn_out.data[i];
    }

    layernorm(x, params.lnf_g, params.lnf_b, cache.h_final, cache.lnf_xhat, cache.lnf_rstd);
    la::matmul(cache.h_final, params.head, cache.logits);
    return cache.logits;
}

double masked_loss(const Matrix& logits, const std::vector<int>& target_ids,
                   const std::vector<bool>& answer_mask) {
    const std::size_t s = logits.rows;
    if (target_ids.size() != s || answer_mask.size() != s)
        throw invalid_input("masked_loss: length mismatch");
    double loss = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 1; t < s; ++t) {
        if (!answer_mask[t]) continue;
        const double* row = logits.row(t - 1);
        double m = kern::vmax(row, logits.cols);
        double z = 0.0;
        for (std::size_t j = 0; j < logits.cols; ++j) z += std::exp(row[j] - m);
        loss += std::log(z) - (row[static_cast<std::size_t>(target_ids[t])] - m);
        ++count;
    }
    if (count == 0) throw invalid_input("masked_loss: mask selects no positions");
    return loss / static_cast<double>(count);
}

double masked_loss_backward(const Matrix& logits, const std::vector<int>& target_ids,
                            const std::vector<bool>& answer_mask, Matrix& d_logits) {
    const std::size_t s = logits.rows;
    if (target_ids.size() != s || answer_mask.size() != s)
        throw invalid_input("masked_loss: length mismatch");
    std::size_t count = 0;
    for (std::size_t t = 1; t < s; ++t)
        if (answer_mask[t]) ++count;
    if (count == 0) throw invalid_input("masked_loss: mask selects no positions");

    d_logits = Matrix(s, logits.cols);
    const double inv_count = 1.0 / static_cast<double>(count);
    double loss = 0.0;
    for (std::size_t t = 1; t < s; ++t) {
        if (!answer_mask[t]) continue;
        const double* row = logits.row(t - 1);
        double* drow = d_logits.row(t - 1);
        double m = kern::vmax(row, logits.cols);
        double z = 0.0;
        for (std::size_t j = 0; j < logits.cols; ++j) z += std::exp(row[j] - m);
        const double inv_z = 1.0 / z;
        for (std::size_t j = 0; j < logits.cols; ++j)
            drow[j] += std::exp(row[j] - m) * inv_z * inv_count;
        const std::size_t y = static_cast<std::size_t>(target_ids[t]);
        drow[y] -= inv_count;
        loss += std::log(z) - (row[y] - m);
    }
    return loss / static_cast<double>(count);
}

Matrix lm_backward(const Matrix& d_logits, const LmCache& cache, const LmParams& params,
                   LmParams* grads) {
    const std::size_t s = d_logits.rows;
    const std::size_t d = params.cfg.d_model;
    const std::size_t h = params.cfg.heads;
    const std::size_t dh = d / h;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    // Output head and final norm.
    Matrix d_h;
    la::matmul_nt(d_logits, params.head, d_h);
    if (grads) la::matmul_tn_acc(cache.h_final, d_logits, grads->head);
    Matrix d_x(s, d);
    layernorm_backward(d_h, cache.lnf_xhat, cache.lnf_rstd, params.lnf_g, d_x,
                       grads ? &grads->lnf_g : nullptr, grads ? &grads->lnf_b : nullptr);

    for (std::size_t l = params.cfg.blocks; l-- > 0;) {
        const auto& bp = params.blocks[l];
        const auto& bc = cache.blocks[l];
        LmBlockParams* bg = grads ? &grads->blocks[l] : nullptr;

        // Feed-forward branch: x_out = x_mid + fc2(gelu(fc1(ln2(x_mid)))).
        Matrix d_a;
        la::matmul_nt(d_x, bp.fc2, d_a);
        if (bg) {
            la::matmul_tn_acc(bc.ffn_a, d_x, bg->fc2);
            la::colsum_acc(d_x, bg->fb2.row(0));
        }
        Matrix d_z = d_a;
        for (std::size_t i = 0; i < d_z.size(); ++i)
            d_z.data[i] *= gelu_grad(bc.ffn_z.data[i]);
        Matrix d_ln2;
        la::matmul_nt(d_z, bp.fc1, d_ln2);
        if (bg) {
            la::matmul_tn_acc(bc.ln2_out, d_z, bg->fc1);
            la::colsum_acc(d_z, bg->fb1.row(0));
        }
        layernorm_backward(d_ln2, bc.ln2_xhat, bc.ln2_rstd, bp.ln2_g, d_x,
                           bg ? &bg->ln2_g : nullptr, bg ? &bg->ln2_b : nullptr);

        // Attention branch: x_mid = x_in + wo(attend(ln1(x_in))).
        Matrix d_ctx;
        la::matmul_nt(d_x, bp.wo, d_ctx);
        if (bg) {
            la::matmul_tn_acc(bc.ctx, d_x, bg->wo);
            la::colsum_acc(d_x, bg->bo.row(0));
        }

        Matrix d_q(s, d), d_k(s, d), d_v(s, d);
        std::vector<double> dp(s), ds(s);
        for (std::size_t head = 0; head < h; ++head) {
            const std::size_t off = head * dh;
            const Matrix& p = bc.probs[head];
            for (std::size_t qpos = 0; qpos < s; ++qpos) {
                const double* prow = p.row(qpos);
                const double* dctx = d_ctx.row(qpos) + off;
                double dot_pp = 0.0;
                for (std::size_t kpos = 0; kpos <= qpos; ++kpos) {
                    dp[kpos] = kern::dot(dctx, bc.v.row(kpos) + off, dh);
                    kern::axpy(prow[kpos], dctx, d_v.row(kpos) + off, dh);
                    dot_pp += dp[kpos] * prow[kpos];
                }
                double* dq = d_q.row(qpos) + off;
                const double* qv = bc.q.row(qpos) + off;
                for (std::size_t kpos = 0; kpos <= qpos; ++kpos) {
                    ds[kpos] = prow[kpos] * (dp[kpos] - dot_pp) * inv_sqrt_dh;
                    kern::axpy(ds[kpos], bc.k.row(kpos) + off, dq, dh);
                    kern::axpy(ds[kpos], qv, d_k.row(kpos) + off, dh);
                }
            }
        }

        Matrix d_ln1;
        la::matmul_nt(d_q, bp.wq, d_ln1);
        Matrix tmp;
        la::matmul_nt(d_k, bp.wk, tmp);
        for (std::size_t i = 0; i < d_ln1.size(); ++i) d_ln1.data[i] += tmp.data[i];
        la::matmul_nt(d_v, bp.wv, tmp);
        for (std::size_t i = 0; i < d_ln1.size(); ++i) d_ln1.data[i] += tmp.data[i];
        if (bg) {
            la::matmul_tn_acc(bc.ln1_out, d_q, bg->wq);
            la::matmul_tn_acc(bc.ln1_out, d_k, bg->wk);
            la::matmul_tn_acc(bc.ln1_out, d_v, bg->wv);
            la::colsum_acc(d_q, bg->bq.row(0));
            la::colsum_acc(d_k, bg->bk.row(0));
            la::colsum_acc(d_v, bg->bv.row(0));
        }
        layernorm_backward(d_ln1, bc.ln1_xhat, bc.ln1_rstd, bp.ln1_g, d_x,
                           bg ? &bg->ln1_g : nullptr, bg ? &bg->ln1_b : nullptr);
    }
    return d_x;
}

DecodeResult decode(const Assembled& prompt, const LmParams& params, const DecodeMode& mode,
                    std::size_t max_len) {
    const std::size_t d = params.cfg.d_model;
    Matrix emb = prompt.emb;
    DecodeResult out;
    Rng rng(mode.seed);
    LmCache cache;

    for (std::size_t step = 0; step < max_len; ++step) {
        if (emb.rows >= params.cfg.max_seq) break;
        const Matrix& logits = lm_forward(emb, params, cache);
        const double* row = logits.row(logits.rows - 1);
        const std::size_t v = logits.cols;

        std::size_t tok;
        if (mode.kind == DecodeMode::Kind::greedy || mode.temperature < 1e-12) {
            tok = 0;
            for (std::size_t j = 1; j < v; ++j)
                if (row[j] > row[tok]) tok = j;
        } else {
            double m = kern::vmax(row, v);
            std::vector<double> p(v);
            double z = 0.0;
            for (std::size_t j = 0; j < v; ++j) {
                p[j] = std::exp((row[j] - m) / mode.temperature);
                z += p[j];
            }
            double u = rng.uniform01() * z;
            double acc = 0.0;
            tok = v - 1;
            for (std::size_t j = 0; j < v; ++j) {
                acc += p[j];
                if (u < acc) {
                    tok = j;
                    break;
                }
            }
        }

        if (tok == static_cast<std::size_t>(Tokenizer::kEos)) {
            out.hit_eos = true;
            break;
        }
        out.answer_ids.push_back(static_cast<int>(tok));

        Matrix next(emb.rows + 1, d);
        std::copy(emb.data.begin(), emb.data.end(), next.data.begin());
        double* dst = next.row(emb.rows);
        std::copy(params.tok_emb.row(tok), params.tok_emb.row(tok) + d, dst);
        kern::axpy(1.0, params.pos_emb.row(emb.rows), dst, d);
        emb = std::move(next);
    }
    return out;
}

}  // namespace fcni
