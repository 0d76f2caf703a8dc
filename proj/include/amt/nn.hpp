#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "amt/rng.hpp"

namespace amt {

struct ModelConfig {
    int d_model = 96;
    int encoder_layers = 2;
    int decoder_layers = 2;
    int attn_heads = 6;
    int ff_dim = 192;
    int memory_heads = 6;
    int l_agg = 64;
    int n_f = 256;
    int n_t = 1024;
    int frame_dim = 512;
    int vocab = 468;
    double dropout = 0.1;
    bool share_memory_embedding = false;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct MemoryBlock {
    Eigen::MatrixXd values;  // l_agg x d_model
};

struct TrainExample {
    Eigen::MatrixXd frames;  // n_f x frame_dim
    int n_valid_frames = 0;
    std::vector<int> prior;    // n_t ids, PAD padded
    std::vector<int> dec_in;   // starts with SOS
    std::vector<int> labels;   // same length as dec_in; PAD labels carry no loss
    std::string tag;
};

class Model {
public:
    Model(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    int cross_key_length() const { return cfg_.n_f + cfg_.l_agg; }

    const std::vector<std::string>& tensor_names() const { return names_; }
    bool has_tensor(const std::string& name) const { return index_.count(name) > 0; }
    Eigen::MatrixXd& tensor(const std::string& name);
    const Eigen::MatrixXd& tensor(const std::string& name) const;
    Eigen::MatrixXd& grad(const std::string& name);
    void zero_grad();
    std::size_t param_count() const;

    MemoryBlock embed_memory(const std::vector<int>& prior_ids) const;
    Eigen::MatrixXd encode_frames(const Eigen::MatrixXd& frames, int n_valid_frames) const;
    Eigen::MatrixXd decode_logits(const std::vector<int>& target_in, const Eigen::MatrixXd& enc,
                                  int enc_valid_frames, const MemoryBlock& mem) const;

    // Teacher-forced loss over one example. Returns the unweighted sum of token
    // cross-entropies; counted gets the number of loss-carrying positions.
    double example_loss_sum(const TrainExample& ex, long* counted = nullptr) const;

    // Same forward plus backprop; gradients accumulate scaled by grad_scale.
    // dropout_rng enables dropout masks (training mode) when non-null.
    double forward_backward(const TrainExample& ex, double grad_scale, long* counted = nullptr,
                            Rng* dropout_rng = nullptr);

    const Eigen::MatrixXd& positional_table() const { return pos_; }

private:
    friend class IncrementalDecoder;

    struct AttnP {
        int wq, bq, wk, wv, bv, wo, bo;
    };
    struct LnP {
        int g, b;
    };
    struct FfnP {
        int w1, b1, w2, b2;
    };
    struct EncLayerP {
        LnP ln1;
        AttnP attn;
        LnP ln2;
        FfnP ffn;
    };
    struct DecLayerP {
        LnP ln1;
        AttnP self;
        LnP ln2;
        AttnP cross;
        LnP ln3;
        FfnP ffn;
    };

    int add_tensor(const std::string& name, int rows, int cols, std::uint64_t seed, bool xavier,
                   double constant = 0.0);
    AttnP add_attn(const std::string& prefix, std::uint64_t seed);
    LnP add_ln(const std::string& prefix, std::uint64_t seed);
    FfnP add_ffn(const std::string& prefix, std::uint64_t seed);
    int find(const std::string& name) const;

    struct Trace;
    double run_example(const TrainExample& ex, bool backward, double grad_scale, long* counted,
                       Rng* dropout_rng);
    Eigen::MatrixXd fwd_memory(const std::vector<int>& prior, Trace& tr, Rng* drng) const;
    Eigen::MatrixXd fwd_encoder(const Eigen::MatrixXd& frames, int n_valid, Trace& tr,
                                Rng* drng) const;
    Eigen::MatrixXd fwd_decoder(const std::vector<int>& dec_in, const Eigen::MatrixXd& enc,
                                int enc_valid, const Eigen::MatrixXd& mem, Trace& tr,
                                Rng* drng) const;

    const Eigen::MatrixXd& v(int h) const { return values_[std::size_t(h)]; }
    Eigen::MatrixXd& g(int h) { return grads_[std::size_t(h)]; }

    ModelConfig cfg_;
    std::vector<std::string> names_;
    std::vector<Eigen::MatrixXd> values_;
    std::vector<Eigen::MatrixXd> grads_;
    std::map<std::string, int> index_;

    int enc_in_w_ = -1, enc_in_b_ = -1;
    std::vector<EncLayerP> enc_layers_;
    LnP enc_lnf_{};
    int dec_embed_ = -1;
    std::vector<DecLayerP> dec_layers_;
    LnP dec_lnf_{};
    int out_w_ = -1, out_b_ = -1;
    int mem_embed_ = -1;
    AttnP mem_attn_{};
    LnP mem_ln_{};

    Eigen::MatrixXd pos_;  // max(n_t, n_f) x d_model sinusoidal table
};

struct GradCheckReport {
    std::map<std::string, double> per_tensor;  // tensor-norm relative error
    double max_rel_error = 0.0;
};

GradCheckReport gradient_check(const ModelConfig& cfg, std::uint64_t seed, double h = 1e-5);

ModelConfig gradcheck_config();

}  // namespace amt
