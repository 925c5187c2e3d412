#pragma once

#include <iosfwd>
#include <optional>

#include "skelmamba/data.hpp"
#include "skelmamba/model.hpp"

namespace skelmamba {

struct TrainConfig {
    int64_t epochs = 200;          // paper recipe uses 500
    int64_t batch_size = 32;       // paper recipe uses 128
    double weight_decay = 5e-4;
    int64_t warmup_epochs = 25;
    double lr_start = 1e-7;
    double lr_peak = 1e-3;
    double lr_floor = 1e-7;
    double clip_norm = 1.0;
    double label_smoothing = 0.1;
    uint64_t seed = 0;
    double stop_at_train_acc = -1.0;  // early stop once reached; <0 disables

    void validate() const;
};

// Mean over the batch of cross-entropy against (1-a)*onehot + a/K.
Tensor label_smooth_ce(const Tensor& logits, const std::vector<int64_t>& labels,
                       double alpha);

// Linear warmup at per-step granularity, then cosine annealing per epoch with
// a floor.
double lr_at(int64_t epoch, int64_t step, int64_t steps_per_epoch,
             const TrainConfig& cfg);

// Scales every gradient by threshold/norm when the global l2 norm exceeds
// the threshold; returns the factor applied.
double clip_grads(ParamList& params, double threshold);

struct AdamState {
    std::vector<std::vector<double>> m, v;
    int64_t t = 0;
    void init(const ParamList& params);
};

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    bool bias_correction = true;
};

// Decoupled weight decay then Adam update from accumulated gradients.
void adamw_step(ParamList& params, AdamState& state, double lr,
                double weight_decay, const AdamHyper& hyper = {});

struct EpochMetrics {
    int64_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = -1.0;  // <0 when no validation set
    int64_t wall_ms = 0;
};

struct EvalResult {
    double top1 = 0.0;
    int64_t num_classes = 0;
    std::vector<int64_t> confusion;  // [true, predicted], row major

    double recomputed_top1() const;
};

struct TrainResult {
    std::vector<EpochMetrics> log;
    double final_train_acc = 0.0;
    double final_val_acc = -1.0;
};

struct TrainOptions {
    std::ostream* metrics_out = nullptr;  // JSONL sink, one record per epoch
    bool with_timestamps = true;          // false zeroes wall_ms
    Modality modality = Modality::Joints;
};

// [B?, T, V, 3] batch of preprocessed (resampled, normalized, modality
// derived) inputs for the given sample indices.
Tensor make_batch(const Dataset& ds, const std::vector<int64_t>& indices,
                  int64_t t_in, Modality modality, bool train_mode,
                  uint64_t seed, int64_t epoch, std::vector<int64_t>* labels);

TrainResult train(ModelParams& model, const Dataset& train_ds,
                  const Dataset* val_ds, const TrainConfig& cfg,
                  const TrainOptions& opts = {});

EvalResult evaluate(ModelParams& model, const Dataset& ds,
                    Modality modality = Modality::Joints,
                    Tensor* probabilities = nullptr);

std::string metrics_line(const EpochMetrics& m);

}  // namespace skelmamba
