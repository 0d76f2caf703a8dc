#include "amt/train.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "amt/errors.hpp"

namespace amt {

AdamOpt::AdamOpt(const Model& m, AdamConfig cfg) : acfg_(cfg) {
    for (const std::string& name : m.tensor_names()) {
        const Eigen::MatrixXd& w = m.tensor(name);
        mv_[name] = {Eigen::MatrixXd::Zero(w.rows(), w.cols()),
                     Eigen::MatrixXd::Zero(w.rows(), w.cols())};
    }
}

void AdamOpt::step(Model& m, double lr) {
    if (mv_.empty()) throw UsageError("optimizer not attached to a model");
    ++t_;
    const double bc1 = 1.0 - std::pow(acfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(acfg_.beta2, double(t_));
    for (auto& [name, mv] : mv_) {
        const Eigen::MatrixXd& g = m.grad(name);
        Eigen::MatrixXd& mom = mv.first;
        Eigen::MatrixXd& vel = mv.second;
        mom = acfg_.beta1 * mom + (1.0 - acfg_.beta1) * g;
        vel = acfg_.beta2 * vel.array().matrix() + (1.0 - acfg_.beta2) * g.array().square().matrix();
        m.tensor(name).array() -=
            lr * (mom.array() / bc1) / ((vel.array() / bc2).sqrt() + acfg_.eps);
    }
}

double LrSchedule::at(long step) const {
    if (step < 1) throw UsageError("schedule steps count from 1");
    if (warmup > 0 && step <= warmup) return peak * double(step) / double(warmup);
    if (step >= total) return floor;
    const double span = double(std::max<long>(1, total - warmup));
    const double prog = double(step - warmup) / span;
    return floor + 0.5 * (peak - floor) * (1.0 + std::cos(M_PI * prog));
}

TrainExample example_from_pair(const TrainingPair& p, const Vocab& vocab, bool augment,
                               Rng* rng) {
    TokenSeq tgt = p.target_tokens;
    if (augment) {
        if (!rng) throw UsageError("augmentation needs a random source");
        tgt = shuffle_tokens(tgt, *rng);
    }
    TrainExample ex;
    ex.frames = p.frames;
    ex.n_valid_frames = p.n_valid_frames;
    ex.prior = p.prior;
    ex.labels = vocab.ids(tgt);
    if (ex.labels.empty() || ex.labels.back() != Vocab::kEosId)
        throw DataError("target token sequence must end with EOS");
    ex.dec_in.reserve(ex.labels.size());
    ex.dec_in.push_back(Vocab::kSosId);
    ex.dec_in.insert(ex.dec_in.end(), ex.labels.begin(), ex.labels.end() - 1);
    ex.tag = "w" + std::to_string(p.window_index);
    return ex;
}

StepResult train_step(Model& model, const Vocab& vocab, const std::vector<TrainingPair>& batch,
                      AdamOpt& opt, const LrSchedule& sched, bool augment, Rng& rng) {
    if (batch.empty()) throw UsageError("empty batch");
    std::vector<TrainExample> exs;
    exs.reserve(batch.size());
    for (const TrainingPair& p : batch) exs.push_back(example_from_pair(p, vocab, augment, &rng));

    long total = 0;
    for (const TrainExample& ex : exs)
        for (int id : ex.labels) total += id != Vocab::kPadId ? 1 : 0;
    if (total == 0) throw DataError("batch carries no loss-bearing tokens");

    model.zero_grad();
    double sum_ce = 0.0;
    for (TrainExample& ex : exs)
        sum_ce += model.forward_backward(ex, 1.0 / double(total), nullptr, &rng);

    StepResult res;
    res.loss = sum_ce / double(total);
    res.tokens = total;
    if (!std::isfinite(res.loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << opt.t() + 1 << "; batch:";
        for (const TrainExample& ex : exs) msg << ' ' << ex.tag;
        throw NumericError(msg.str());
    }
    res.lr = sched.at(opt.t() + 1);
    opt.step(model, res.lr);
    return res;
}

double dataset_loss(const Model& model, const Vocab& vocab,
                    const std::vector<TrainingPair>& pairs) {
    if (pairs.empty()) throw UsageError("no pairs to evaluate");
    double sum = 0.0;
    long total = 0;
    for (const TrainingPair& p : pairs) {
        TrainExample ex = example_from_pair(p, vocab, false, nullptr);
        long n = 0;
        sum += model.example_loss_sum(ex, &n);
        total += n;
    }
    return sum / double(total);
}

double token_accuracy(const Model& model, const Vocab& vocab,
                      const std::vector<TrainingPair>& pairs) {
    if (pairs.empty()) throw UsageError("no pairs to evaluate");
    long hits = 0, total = 0;
    for (const TrainingPair& p : pairs) {
        TrainExample ex = example_from_pair(p, vocab, false, nullptr);
        MemoryBlock mem = model.embed_memory(ex.prior);
        Eigen::MatrixXd enc = model.encode_frames(ex.frames, ex.n_valid_frames);
        Eigen::MatrixXd logits = model.decode_logits(ex.dec_in, enc, ex.n_valid_frames, mem);
        for (long t = 0; t < logits.rows(); ++t) {
            const int label = ex.labels[std::size_t(t)];
            if (label == Vocab::kPadId) continue;
            Eigen::Index arg = 0;
            logits.row(t).maxCoeff(&arg);
            ++total;
            hits += int(arg) == label ? 1 : 0;
        }
    }
    return total > 0 ? double(hits) / double(total) : 0.0;
}

namespace {

constexpr char kMagic[9] = "AMTCKPT1";

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"d_model", c.d_model},
            {"encoder_layers", c.encoder_layers},
            {"decoder_layers", c.decoder_layers},
            {"attn_heads", c.attn_heads},
            {"ff_dim", c.ff_dim},
            {"memory_heads", c.memory_heads},
            {"l_agg", c.l_agg},
            {"n_f", c.n_f},
            {"n_t", c.n_t},
            {"frame_dim", c.frame_dim},
            {"vocab", c.vocab},
            {"dropout", c.dropout},
            {"share_memory_embedding", c.share_memory_embedding}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d_model = j.at("d_model").get<int>();
    c.encoder_layers = j.at("encoder_layers").get<int>();
    c.decoder_layers = j.at("decoder_layers").get<int>();
    c.attn_heads = j.at("attn_heads").get<int>();
    c.ff_dim = j.at("ff_dim").get<int>();
    c.memory_heads = j.at("memory_heads").get<int>();
    c.l_agg = j.at("l_agg").get<int>();
    c.n_f = j.at("n_f").get<int>();
    c.n_t = j.at("n_t").get<int>();
    c.frame_dim = j.at("frame_dim").get<int>();
    c.vocab = j.at("vocab").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.share_memory_embedding = j.at("share_memory_embedding").get<bool>();
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, long step,
                     const AdamOpt* opt) {
    nlohmann::json header;
    header["config"] = config_to_json(model.config());
    header["step"] = step;
    const bool with_adam = opt != nullptr && opt->attached();
    header["adam"] = with_adam;
    header["adam_t"] = with_adam ? opt->t() : 0;

    nlohmann::json tensors = nlohmann::json::array();
    std::vector<std::pair<std::string, const Eigen::MatrixXd*>> blobs;
    for (const std::string& name : model.tensor_names()) blobs.push_back({name, &model.tensor(name)});
    if (with_adam) {
        for (const auto& [name, mv] : opt->state()) {
            blobs.push_back({"adam.m." + name, &mv.first});
            blobs.push_back({"adam.v." + name, &mv.second});
        }
    }
    std::uint64_t offset = 0;
    for (const auto& [name, mat] : blobs) {
        tensors.push_back({{"name", name},
                           {"rows", mat->rows()},
                           {"cols", mat->cols()},
                           {"offset", offset}});
        offset += std::uint64_t(mat->size());
    }
    header["tensors"] = std::move(tensors);
    const std::string head = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(kMagic, 8);
    const std::uint64_t hlen = head.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(head.data(), std::streamsize(head.size()));
    for (const auto& [name, mat] : blobs)
        out.write(reinterpret_cast<const char*>(mat->data()),
                  std::streamsize(std::size_t(mat->size()) * sizeof(double)));
    if (!out) throw DataError("short write while saving checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw DataError("not a checkpoint file: " + path);
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    if (!in || hlen == 0 || hlen > (1u << 26)) throw DataError("corrupt checkpoint header");
    std::string head(hlen, '\0');
    in.read(head.data(), std::streamsize(hlen));
    if (!in) throw DataError("truncated checkpoint header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(head);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad checkpoint header: ") + e.what());
    }

    ModelConfig cfg;
    long step = 0;
    bool with_adam = false;
    long adam_t = 0;
    try {
        cfg = config_from_json(header.at("config"));
        step = header.at("step").get<long>();
        with_adam = header.at("adam").get<bool>();
        adam_t = header.at("adam_t").get<long>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad checkpoint header: ") + e.what());
    }

    Checkpoint ck{Model(cfg, 0)};
    ck.step = step;
    if (with_adam) {
        ck.has_adam = true;
        ck.opt = AdamOpt(ck.model);
        ck.opt.set_t(adam_t);
    }

    std::set<std::string> loaded;
    std::uint64_t expect_offset = 0;
    for (const auto& entry : header.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const long rows = entry.at("rows").get<long>();
        const long cols = entry.at("cols").get<long>();
        if (entry.at("offset").get<std::uint64_t>() != expect_offset)
            throw DataError("checkpoint tensor offsets out of order at " + name);
        expect_offset += std::uint64_t(rows) * std::uint64_t(cols);

        Eigen::MatrixXd* dst = nullptr;
        if (name.rfind("adam.m.", 0) == 0 || name.rfind("adam.v.", 0) == 0) {
            if (with_adam) {
                auto it = ck.opt.state().find(name.substr(7));
                if (it == ck.opt.state().end())
                    throw DataError("optimizer tensor refers to unknown parameter: " + name);
                dst = name[5] == 'm' ? &it->second.first : &it->second.second;
            }
        } else {
            if (!ck.model.has_tensor(name))
                throw DataError("checkpoint tensor unknown to this config: " + name);
            dst = &ck.model.tensor(name);
            loaded.insert(name);
        }
        if (dst == nullptr) throw DataError("unexpected optimizer tensor: " + name);
        if (dst->rows() != rows || dst->cols() != cols)
            throw DataError("checkpoint shape mismatch for " + name + ": got " +
                            std::to_string(rows) + "x" + std::to_string(cols) + ", want " +
                            std::to_string(dst->rows()) + "x" + std::to_string(dst->cols()));
        in.read(reinterpret_cast<char*>(dst->data()),
                std::streamsize(std::size_t(dst->size()) * sizeof(double)));
        if (!in) throw DataError("truncated checkpoint payload at " + name);
    }
    for (const std::string& name : ck.model.tensor_names())
        if (!loaded.count(name)) throw DataError("checkpoint is missing tensor: " + name);
    return ck;
}

}  // namespace amt
