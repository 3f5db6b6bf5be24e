#include "fcni/training.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "fcni/error.hpp"
#include "fcni/io.hpp"
#include "fcni/rng.hpp"

namespace fcni {

using nlohmann::json;

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw config_error("learning rate must be positive");
    if (warmup_ratio < 0.0 || warmup_ratio >= 1.0)
        throw config_error("warmup ratio must be in [0, 1)");
    if (batch_size < 1 || epochs < 1) throw config_error("batch size and epochs must be >= 1");
    if (stage < 0 || stage > 2) throw config_error("stage must be 0, 1 or 2");
}

namespace {

struct ExampleResult {
    double loss = 0.0;
    Grads grads;
};

// Forward + backward for a single example.
ExampleResult example_backward(const Model& model, const TrainExample& ex,
                               const ParamPartition& part) {
    ExampleResult out;
    out.grads.has_encoder = part.train_encoder;
    out.grads.has_lm = part.train_lm;
    if (part.train_encoder) out.grads.encoder.zero_like_from(model.encoder);
    if (part.train_lm) out.grads.lm.zero_like_from(model.lm);

    std::vector<EncodeCache> enc_caches(ex.fcns.size());
    std::vector<FcnTokenSequence> seqs(ex.fcns.size());
    std::vector<const FcnTokenSequence*> seq_ptrs;
    for (std::size_t i = 0; i < ex.fcns.size(); ++i) {
        seqs[i] = encode(*ex.fcns[i], model.partition, model.encoder, model.tau, &enc_caches[i]);
        seq_ptrs.push_back(&seqs[i]);
    }

    Assembled a = assemble_input(ex.prompt_ids, seq_ptrs, ex.answer_ids, model.lm);
    LmCache cache;
    const Matrix& logits = lm_forward(a.emb, model.lm, cache);
    Matrix d_logits;
    out.loss = masked_loss_backward(logits, a.ids, answer_mask_of(a), d_logits);
    Matrix d_emb =
        lm_backward(d_logits, cache, model.lm, part.train_lm ? &out.grads.lm : nullptr);

    // Scatter embedding gradients back to their sources.
    std::vector<Matrix> d_tokens(ex.fcns.size());
    for (std::size_t i = 0; i < ex.fcns.size(); ++i)
        d_tokens[i] = Matrix(seqs[i].count(), model.lm.cfg.d_model);
    const std::size_t d = model.lm.cfg.d_model;
    for (std::size_t t = 0; t < a.seq(); ++t) {
        const double* row = d_emb.row(t);
        if (part.train_lm)
            kern::axpy(1.0, row, out.grads.lm.pos_emb.row(t), d);
        switch (a.src[t].kind) {
            case PosSrc::Kind::word:
                if (part.train_lm)
                    kern::axpy(1.0, row,
                               out.grads.lm.tok_emb.row(static_cast<std::size_t>(a.src[t].token_id)),
                               d);
                break;
            case PosSrc::Kind::nullvec:
                if (part.train_lm) kern::axpy(1.0, row, out.grads.lm.fcn_null.row(0), d);
                break;
            case PosSrc::Kind::fcnvec:
                if (part.train_encoder)
                    kern::axpy(1.0, row, d_tokens[a.src[t].fcn_seq].row(a.src[t].fcn_idx), d);
                break;
        }
    }
    if (part.train_encoder)
        for (std::size_t i = 0; i < ex.fcns.size(); ++i)
            encode_backward(d_tokens[i], enc_caches[i], model.encoder, out.grads.encoder);
    return out;
}

void accumulate(Matrix& into, const Matrix& from, double scale) {
    kern::axpy(scale, from.data.data(), into.data.data(), into.size());
}

void accumulate_grads(Grads& into, Grads& from, double scale) {
    if (into.has_encoder) {
        Matrix* dst[8];
        std::size_t i = 0;
        into.encoder.for_each_tensor([&](const std::string&, Matrix& m) { dst[i++] = &m; });
        i = 0;
        from.encoder.for_each_tensor(
            [&](const std::string&, Matrix& m) { accumulate(*dst[i++], m, scale); });
    }
    if (into.has_lm) {
        std::vector<Matrix*> dst;
        into.lm.for_each_tensor([&](const std::string&, Matrix& m) { dst.push_back(&m); });
        std::size_t i = 0;
        from.lm.for_each_tensor(
            [&](const std::string&, Matrix& m) { accumulate(*dst[i++], m, scale); });
    }
}

// Runs fn(i) for i in [0, n) over the given worker count.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min(threads, n);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    for (auto& t : pool) t.join();
}

}  // namespace

Grads backward(const Model& model, const std::vector<TrainExample>& batch,
               const ParamPartition& partition, std::size_t threads, double* mean_loss) {
    if (batch.empty()) throw invalid_input("backward: empty batch");

    std::vector<ExampleResult> slots(batch.size());
    parallel_for(batch.size(), threads,
                 [&](std::size_t i) { slots[i] = example_backward(model, batch[i], partition); });

    Grads total;
    total.has_encoder = partition.train_encoder;
    total.has_lm = partition.train_lm;
    if (total.has_encoder) total.encoder.zero_like_from(model.encoder);
    if (total.has_lm) total.lm.zero_like_from(model.lm);

    const double scale = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (auto& slot : slots) {  // fixed example order
        if (!std::isfinite(slot.loss))
            throw training_error("non-finite loss in batch of size " +
                                 std::to_string(batch.size()));
        loss += slot.loss * scale;
        accumulate_grads(total, slot.grads, scale);
    }
    if (mean_loss) *mean_loss = loss;
    return total;
}

double batch_loss(const Model& model, const std::vector<TrainExample>& batch,
                  std::size_t threads) {
    if (batch.empty()) throw invalid_input("batch_loss: empty batch");
    std::vector<double> losses(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t i) {
        const TrainExample& ex = batch[i];
        std::vector<FcnTokenSequence> seqs(ex.fcns.size());
        std::vector<const FcnTokenSequence*> ptrs;
        for (std::size_t j = 0; j < ex.fcns.size(); ++j) {
            seqs[j] = encode(*ex.fcns[j], model.partition, model.encoder, model.tau);
            ptrs.push_back(&seqs[j]);
        }
        Assembled a = assemble_input(ex.prompt_ids, ptrs, ex.answer_ids, model.lm);
        LmCache cache;
        losses[i] = masked_loss(lm_forward(a.emb, model.lm, cache), a.ids, answer_mask_of(a));
    });
    double total = 0.0;
    for (double l : losses) total += l;
    return total / static_cast<double>(batch.size());
}

double lr_factor(std::size_t step_index, std::size_t total_steps, double warmup_ratio) {
    if (total_steps == 0) return 0.0;
    std::size_t warm = 0;
    if (warmup_ratio > 0.0)
        warm = std::max<std::size_t>(
            1, static_cast<std::size_t>(warmup_ratio * static_cast<double>(total_steps)));
    if (step_index < warm)
        return static_cast<double>(step_index) / static_cast<double>(warm);
    if (total_steps <= warm + 1) return step_index + 1 >= total_steps ? 0.0 : 1.0;
    double u = static_cast<double>(step_index - warm) /
               static_cast<double>(total_steps - 1 - warm);
    return 0.5 * (1.0 + std::cos(M_PI * u));
}

OptimizerState OptimizerState::init(const Model& model, const ParamPartition& partition) {
    OptimizerState s;
    s.has_encoder = partition.train_encoder;
    s.has_lm = partition.train_lm;
    if (s.has_encoder) {
        s.m_enc.zero_like_from(model.encoder);
        s.v_enc.zero_like_from(model.encoder);
    }
    if (s.has_lm) {
        s.m_lm.zero_like_from(model.lm);
        s.v_lm.zero_like_from(model.lm);
    }
    return s;
}

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void adam_update_tensor(Matrix& p, const Matrix& g, Matrix& m, Matrix& v, double lr,
                        double weight_decay, double bc1, double bc2) {
    for (std::size_t i = 0; i < p.size(); ++i) {
        m.data[i] = kBeta1 * m.data[i] + (1.0 - kBeta1) * g.data[i];
        v.data[i] = kBeta2 * v.data[i] + (1.0 - kBeta2) * g.data[i] * g.data[i];
        double mhat = m.data[i] / bc1;
        double vhat = v.data[i] / bc2;
        p.data[i] -= lr * (mhat / (std::sqrt(vhat) + kAdamEps) + weight_decay * p.data[i]);
    }
}

template <typename Params>
void adam_update_params(Params& params, Params& grads, Params& m, Params& v, double lr,
                        double weight_decay, double bc1, double bc2) {
    std::vector<Matrix*> ps, gs, ms, vs;
    params.for_each_tensor([&](const std::string&, Matrix& t) { ps.push_back(&t); });
    grads.for_each_tensor([&](const std::string&, Matrix& t) { gs.push_back(&t); });
    m.for_each_tensor([&](const std::string&, Matrix& t) { ms.push_back(&t); });
    v.for_each_tensor([&](const std::string&, Matrix& t) { vs.push_back(&t); });
    for (std::size_t i = 0; i < ps.size(); ++i)
        adam_update_tensor(*ps[i], *gs[i], *ms[i], *vs[i], lr, weight_decay, bc1, bc2);
}

}  // namespace

void adam_step(Model& model, const Grads& grads, OptimizerState& state, const TrainConfig& config,
               std::size_t step_index, std::size_t total_steps) {
    const double lr =
        config.learning_rate * lr_factor(step_index, total_steps, config.warmup_ratio);
    ++state.step;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
    Grads& g = const_cast<Grads&>(grads);  // visitor is non-const; tensors are not modified
    if (state.has_encoder && grads.has_encoder)
        adam_update_params(model.encoder, g.encoder, state.m_enc, state.v_enc, lr,
                           config.weight_decay, bc1, bc2);
    if (state.has_lm && grads.has_lm)
        adam_update_params(model.lm, g.lm, state.m_lm, state.v_lm, lr, config.weight_decay, bc1,
                           bc2);
}

TrainSummary train(Model& model, const std::vector<TrainExample>& dataset,
                   const TrainConfig& config, const std::filesystem::path& log_path) {
    config.validate();
    if (dataset.empty()) throw dataset_error("training dataset is empty");
    const ParamPartition part = ParamPartition::for_stage(config.stage);

    TrainSummary summary;
    summary.initial_loss = batch_loss(model, dataset, config.threads);

    const std::size_t batches_per_epoch =
        (dataset.size() + config.batch_size - 1) / config.batch_size;
    const std::size_t total_steps = batches_per_epoch * config.epochs;

    std::ofstream log;
    if (!log_path.empty()) {
        if (log_path.has_parent_path()) std::filesystem::create_directories(log_path.parent_path());
        log.open(log_path, std::ios::trunc);
    }

    OptimizerState state = OptimizerState::init(model, part);
    std::size_t step = 0;
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffle_rng(Rng::derive(config.seed, 0xe90c + epoch));
        shuffle_rng.shuffle(order);
        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            std::vector<TrainExample> batch;
            const std::size_t lo = b * config.batch_size;
            const std::size_t hi = std::min(dataset.size(), lo + config.batch_size);
            for (std::size_t i = lo; i < hi; ++i) batch.push_back(dataset[order[i]]);

            double loss = 0.0;
            Grads grads = backward(model, batch, part, config.threads, &loss);
            adam_step(model, grads, state, config, step, total_steps);
            if (log.is_open()) {
                json j{{"step", step},
                       {"lr", config.learning_rate * lr_factor(step, total_steps, config.warmup_ratio)},
                       {"loss", loss}};
                log << j.dump() << "\n";
            }
            ++step;
        }
    }
    summary.steps = step;
    summary.final_loss = batch_loss(model, dataset, config.threads);
    return summary;
}

GradCheckReport gradient_check(Model& model, const std::vector<TrainExample>& batch,
                               const ParamPartition& partition, double h) {
    GradCheckReport report;
    double loss0 = 0.0;
    Grads grads = backward(model, batch, partition, 1, &loss0);

    // Distance of rectifier pre-activations from the kink; finite differences
    // are only trustworthy when no perturbation can cross it.
    double margin = 1e9;
    for (const auto& ex : batch)
        for (const FcnMatrix* fcn : ex.fcns) {
            EncodeCache cache;
            encode(*fcn, model.partition, model.encoder, model.tau, &cache);
            for (double z : cache.z1.data) margin = std::min(margin, std::fabs(z));
            for (double z : cache.proj_z.data) margin = std::min(margin, std::fabs(z));
        }
    report.min_relu_margin = margin;

    auto check_params = [&](auto& params, auto& grad_params) {
        std::vector<std::pair<std::string, Matrix*>> tensors;
        params.for_each_tensor(
            [&](const std::string& name, Matrix& m) { tensors.push_back({name, &m}); });
        std::vector<Matrix*> grad_tensors;
        grad_params.for_each_tensor(
            [&](const std::string&, Matrix& m) { grad_tensors.push_back(&m); });

        for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
            GradCheckEntry entry;
            entry.tensor = tensors[ti].first;
            Matrix& tensor = *tensors[ti].second;
            const Matrix& analytic = *grad_tensors[ti];
            for (std::size_t i = 0; i < tensor.size(); ++i) {
                const double saved = tensor.data[i];
                const double step = h * std::max(1.0, std::fabs(saved));
                tensor.data[i] = saved + step;
                double lp = batch_loss(model, batch, 1);
                tensor.data[i] = saved - step;
                double lm = batch_loss(model, batch, 1);
                tensor.data[i] = saved;
                double fd = (lp - lm) / (2.0 * step);
                double an = analytic.data[i];
                double denom = std::max(std::fabs(fd), std::fabs(an));
                // Entries far below the gradient scale are numerically zero on
                // both sides; comparing their ratio only measures roundoff.
                double rel = denom < 1e-7 ? 0.0 : std::fabs(fd - an) / denom;
                entry.max_rel_err = std::max(entry.max_rel_err, rel);
            }
            report.worst = std::max(report.worst, entry.max_rel_err);
            report.entries.push_back(std::move(entry));
        }
    };

    if (partition.train_encoder) check_params(model.encoder, grads.encoder);
    if (partition.train_lm) check_params(model.lm, grads.lm);
    return report;
}

void save_checkpoint(const std::filesystem::path& dir, const Model& model, int stage,
                     std::size_t step, const std::string& config_hash) {
    std::filesystem::create_directories(dir);
    Model& m = const_cast<Model&>(model);  // visitor is non-const; tensors are not modified

    std::vector<io::NamedTensor> enc;
    m.encoder.for_each_tensor([&](const std::string& name, Matrix& t) {
        enc.push_back({name,
                       {static_cast<std::uint32_t>(t.rows), static_cast<std::uint32_t>(t.cols)},
                       t.data});
    });
    io::write_named_tensors(dir / "encoder.ntf", enc);

    std::vector<io::NamedTensor> lm;
    m.lm.for_each_tensor([&](const std::string& name, Matrix& t) {
        lm.push_back({name,
                      {static_cast<std::uint32_t>(t.rows), static_cast<std::uint32_t>(t.cols)},
                      t.data});
    });
    io::write_named_tensors(dir / "lm.ntf", lm);

    model.tokenizer.save(dir / "vocab.txt");
    model.partition.save_csv(dir / "partition.csv");
    std::ostringstream meta;
    meta << "stage: " << stage << "\n"
         << "step: " << step << "\n"
         << "config_hash: " << config_hash << "\n"
         << "tau: " << io::format_double(model.tau) << "\n"
         << "heads: " << model.lm.cfg.heads << "\n"
         << "blocks: " << model.lm.cfg.blocks << "\n";
    io::atomic_write_bytes(dir / "meta.txt", meta.str());
}

Model load_checkpoint(const std::filesystem::path& dir) {
    Model model;
    model.tokenizer = Tokenizer::load(dir / "vocab.txt");
    model.partition = AtlasPartition::load_csv(dir / "partition.csv");

    std::size_t heads = 4, blocks = 0;
    {
        std::istringstream meta(io::read_bytes(dir / "meta.txt"));
        std::string line;
        while (std::getline(meta, line)) {
            auto colon = line.find(':');
            if (colon == std::string::npos) continue;
            std::string key = line.substr(0, colon);
            std::string value = line.substr(colon + 1);
            if (key == "tau") model.tau = std::stod(value);
            if (key == "heads") heads = std::stoul(value);
            if (key == "blocks") blocks = std::stoul(value);
        }
    }

    auto enc = io::read_named_tensors(dir / "encoder.ntf");
    auto find = [](const std::vector<io::NamedTensor>& v, const std::string& name) -> const io::NamedTensor& {
        for (const auto& t : v)
            if (t.name == name) return t;
        throw io_error("checkpoint tensor missing: " + name);
    };
    auto to_matrix = [](const io::NamedTensor& t) {
        Matrix m(t.dims.at(0), t.dims.at(1));
        m.data = t.data;
        return m;
    };

    model.encoder.gcn_w1 = to_matrix(find(enc, "enc.gcn_w1"));
    model.encoder.gcn_b1 = to_matrix(find(enc, "enc.gcn_b1"));
    model.encoder.gcn_w2 = to_matrix(find(enc, "enc.gcn_w2"));
    model.encoder.gcn_b2 = to_matrix(find(enc, "enc.gcn_b2"));
    model.encoder.proj_w1 = to_matrix(find(enc, "enc.proj_w1"));
    model.encoder.proj_b1 = to_matrix(find(enc, "enc.proj_b1"));
    model.encoder.proj_w2 = to_matrix(find(enc, "enc.proj_w2"));
    model.encoder.proj_b2 = to_matrix(find(enc, "enc.proj_b2"));
    model.encoder.cfg.d = model.encoder.gcn_w1.rows;
    model.encoder.cfg.gcn_hidden = model.encoder.gcn_w1.cols;
    model.encoder.cfg.proj_hidden = model.encoder.proj_w1.cols;
    model.encoder.cfg.d_model = model.encoder.proj_w2.cols;

    auto lm = io::read_named_tensors(dir / "lm.ntf");
    model.lm.tok_emb = to_matrix(find(lm, "lm.tok_emb"));
    model.lm.pos_emb = to_matrix(find(lm, "lm.pos_emb"));
    model.lm.fcn_null = to_matrix(find(lm, "lm.fcn_null"));
    model.lm.lnf_g = to_matrix(find(lm, "lm.lnf_g"));
    model.lm.lnf_b = to_matrix(find(lm, "lm.lnf_b"));
    model.lm.head = to_matrix(find(lm, "lm.head"));
    model.lm.blocks.resize(blocks);
    for (std::size_t i = 0; i < blocks; ++i) {
        std::string pre = "lm.block" + std::to_string(i) + ".";
        auto& b = model.lm.blocks[i];
        b.wq = to_matrix(find(lm, pre + "wq"));
        b.wk = to_matrix(find(lm, pre + "wk"));
        b.wv = to_matrix(find(lm, pre + "wv"));
        b.wo = to_matrix(find(lm, pre + "wo"));
        b.bq = to_matrix(find(lm, pre + "bq"));
        b.bk = to_matrix(find(lm, pre + "bk"));
        b.bv = to_matrix(find(lm, pre + "bv"));
        b.bo = to_matrix(find(lm, pre + "bo"));
        b.ln1_g = to_matrix(find(lm, pre + "ln1_g"));
        b.ln1_b = to_matrix(find(lm, pre + "ln1_b"));
        b.ln2_g = to_matrix(find(lm, pre + "ln2_g"));
        b.ln2_b = to_matrix(find(lm, pre + "ln2_b"));
        b.fc1 = to_matrix(find(lm, pre + "fc1"));
        b.fb1 = to_matrix(find(lm, pre + "fb1"));
        b.fc2 = to_matrix(find(lm, pre + "fc2"));
        b.fb2 = to_matrix(find(lm, pre + "fb2"));
    }
    model.lm.cfg.d_model = model.lm.tok_emb.cols;
    model.lm.cfg.vocab = model.lm.tok_emb.rows;
    model.lm.cfg.max_seq = model.lm.pos_emb.rows;
    model.lm.cfg.blocks = blocks;
    model.lm.cfg.heads = heads;
    model.lm.cfg.ffn_hidden = blocks ? model.lm.blocks[0].fc1.cols : 0;
    return model;
}

}  // namespace fcni
