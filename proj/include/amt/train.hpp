#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "amt/nn.hpp"
#include "amt/segmenter.hpp"

namespace amt {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamOpt {
public:
    AdamOpt() = default;
    AdamOpt(const Model& m, AdamConfig cfg = {});

    void step(Model& m, double lr);
    long t() const { return t_; }
    void set_t(long t) { t_ = t; }
    bool attached() const { return !mv_.empty(); }
    const AdamConfig& config() const { return acfg_; }
    std::map<std::string, std::pair<Eigen::MatrixXd, Eigen::MatrixXd>>& state() { return mv_; }
    const std::map<std::string, std::pair<Eigen::MatrixXd, Eigen::MatrixXd>>& state() const {
        return mv_;
    }

private:
    AdamConfig acfg_{};
    long t_ = 0;
    std::map<std::string, std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> mv_;
};

struct LrSchedule {
    double peak = 2e-4;
    double floor = 2e-5;
    long warmup = 100;
    long total = 1000;

    double at(long step) const;  // step counts from 1
};

struct StepResult {
    double loss = 0.0;
    double lr = 0.0;
    long tokens = 0;
};

TrainExample example_from_pair(const TrainingPair& p, const Vocab& vocab, bool augment,
                               Rng* rng);

StepResult train_step(Model& model, const Vocab& vocab, const std::vector<TrainingPair>& batch,
                      AdamOpt& opt, const LrSchedule& sched, bool augment, Rng& rng);

double dataset_loss(const Model& model, const Vocab& vocab,
                    const std::vector<TrainingPair>& pairs);
double token_accuracy(const Model& model, const Vocab& vocab,
                      const std::vector<TrainingPair>& pairs);

void save_checkpoint(const std::string& path, const Model& model, long step,
                     const AdamOpt* opt = nullptr);

struct Checkpoint {
    long step = 0;
    Model model;
    bool has_adam = false;
    AdamOpt opt;

    explicit Checkpoint(Model m) : model(std::move(m)) {}
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace amt
