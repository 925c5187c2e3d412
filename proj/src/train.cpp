#include "skelmamba/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace skelmamba {

void TrainConfig::validate() const {
    if (epochs < 1 || batch_size < 1)
        throw ConfigError("train config: epochs and batch size must be positive");
    if (weight_decay < 0.0 || clip_norm <= 0.0)
        throw ConfigError("train config: invalid weight decay or clip norm");
    if (warmup_epochs < 0 || warmup_epochs >= epochs)
        throw ConfigError("train config: warmup epochs must be below total epochs");
    if (lr_start <= 0.0 || lr_peak <= 0.0 || lr_floor <= 0.0)
        throw ConfigError("train config: learning rates must be positive");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
        throw ConfigError("train config: label smoothing must be in [0,1)");
}

Tensor label_smooth_ce(const Tensor& logits, const std::vector<int64_t>& labels,
                       double alpha) {
    if (!logits.defined() || logits.shape().size() != 2)
        throw ShapeError("label_smooth_ce: logits must be [B,K]");
    if (alpha < 0.0 || alpha >= 1.0)
        throw DomainError("label_smooth_ce: alpha must be in [0,1)");
    const int64_t b = logits.shape()[0];
    const int64_t k = logits.shape()[1];
    if (static_cast<int64_t>(labels.size()) != b)
        throw ShapeError("label_smooth_ce: need one label per row");
    std::vector<double> target(b * k, alpha / static_cast<double>(k));
    for (int64_t i = 0; i < b; ++i) {
        if (labels[i] < 0 || labels[i] >= k)
            throw DomainError("label_smooth_ce: label " +
                              std::to_string(labels[i]) + " out of range [0," +
                              std::to_string(k) + ")");
        target[i * k + labels[i]] += 1.0 - alpha;
    }
    Tensor q = Tensor::from({b, k}, std::move(target));
    Tensor lsm = log_softmax(logits);
    return scale(sum(mul(q, lsm)), -1.0 / static_cast<double>(b));
}

double lr_at(int64_t epoch, int64_t step, int64_t steps_per_epoch,
             const TrainConfig& cfg) {
    const double pos = static_cast<double>(epoch) +
                       (steps_per_epoch > 0
                            ? static_cast<double>(step) /
                                  static_cast<double>(steps_per_epoch)
                            : 0.0);
    if (cfg.warmup_epochs > 0 && pos < static_cast<double>(cfg.warmup_epochs)) {
        const double p = pos / static_cast<double>(cfg.warmup_epochs);
        return cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * p;
    }
    const double span =
        static_cast<double>(cfg.epochs) - static_cast<double>(cfg.warmup_epochs);
    const double p =
        span > 0.0
            ? (pos - static_cast<double>(cfg.warmup_epochs)) / span
            : 1.0;
    const double cosine = cfg.lr_peak * 0.5 * (1.0 + std::cos(M_PI * p));
    return std::max(cfg.lr_floor, cosine);
}

double clip_grads(ParamList& params, double threshold) {
    double sq = 0.0;
    for (ParamRef& p : params) {
        for (double g : p.tensor.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm <= threshold || norm == 0.0) return 1.0;
    const double factor = threshold / norm;
    for (ParamRef& p : params) {
        auto& g = p.tensor.grad_buf();
        for (double& x : g) x *= factor;
    }
    return factor;
}

void AdamState::init(const ParamList& params) {
    m.clear();
    v.clear();
    for (const ParamRef& p : params) {
        m.emplace_back(p.tensor.numel(), 0.0);
        v.emplace_back(p.tensor.numel(), 0.0);
    }
    t = 0;
}

void adamw_step(ParamList& params, AdamState& state, double lr,
                double weight_decay, const AdamHyper& hy) {
    if (state.m.size() != params.size())
        throw UsageError("adamw_step: state not initialized for this parameter "
                         "list");
    ++state.t;
    const double bc1 =
        hy.bias_correction ? 1.0 - std::pow(hy.beta1, static_cast<double>(state.t))
                           : 1.0;
    const double bc2 =
        hy.bias_correction ? 1.0 - std::pow(hy.beta2, static_cast<double>(state.t))
                           : 1.0;
    for (size_t i = 0; i < params.size(); ++i) {
        ParamRef& p = params[i];
        auto theta = p.tensor.mutable_data();
        auto& g = p.tensor.grad_buf();
        auto& m = state.m[i];
        auto& v = state.v[i];
        const double wd = p.decay ? weight_decay : 0.0;
        for (size_t j = 0; j < theta.size(); ++j) {
            theta[j] -= lr * wd * theta[j];  // decoupled decay
            m[j] = hy.beta1 * m[j] + (1.0 - hy.beta1) * g[j];
            v[j] = hy.beta2 * v[j] + (1.0 - hy.beta2) * g[j] * g[j];
            const double mh = m[j] / bc1;
            const double vh = v[j] / bc2;
            theta[j] -= lr * mh / (std::sqrt(vh) + hy.eps);
        }
    }
}

// ---- batching -------------------------------------------------------------------

Tensor make_batch(const Dataset& ds, const std::vector<int64_t>& indices,
                  int64_t t_in, Modality modality, bool train_mode,
                  uint64_t seed, int64_t epoch, std::vector<int64_t>* labels) {
    const int64_t b = static_cast<int64_t>(indices.size());
    if (b < 1) throw UsageError("make_batch: empty index list");
    const int64_t v = ds.topology.num_joints;
    Tensor x = Tensor::zeros({b, t_in, v, 3});
    auto span = x.mutable_data();
    if (labels) labels->resize(b);
    for (int64_t i = 0; i < b; ++i) {
        const SkeletonSequence& raw = ds.samples[indices[i]];
        SkeletonSequence seq;
        if (train_mode) {
            Rng rng = Rng::keyed(seed, Rng::hash_str(raw.id),
                                 static_cast<uint64_t>(epoch));
            seq = resample(raw, t_in, &rng);
        } else {
            seq = resample(raw, t_in);
        }
        normalize_sequence(seq, ds.topology);
        std::vector<double> frames = modality_frames(seq, ds.topology, modality);
        std::copy(frames.begin(), frames.end(),
                  span.begin() + i * t_in * v * 3);
        if (labels) (*labels)[i] = raw.label;
    }
    return x;
}

// ---- evaluate -------------------------------------------------------------------

double EvalResult::recomputed_top1() const {
    int64_t total = 0, correct = 0;
    for (int64_t i = 0; i < num_classes; ++i)
        for (int64_t j = 0; j < num_classes; ++j) {
            total += confusion[i * num_classes + j];
            if (i == j) correct += confusion[i * num_classes + j];
        }
    return total > 0 ? static_cast<double>(correct) / static_cast<double>(total)
                     : 0.0;
}

EvalResult evaluate(ModelParams& model, const Dataset& ds, Modality modality,
                    Tensor* probabilities) {
    if (ds.samples.empty()) throw UsageError("evaluate: empty dataset");
    NoGradGuard ng;
    const int64_t k = model.cfg.num_classes;
    EvalResult res;
    res.num_classes = k;
    res.confusion.assign(k * k, 0);
    std::vector<double> probs;
    const int64_t total = static_cast<int64_t>(ds.samples.size());
    const int64_t chunk = 32;
    int64_t correct = 0;
    for (int64_t at = 0; at < total; at += chunk) {
        const int64_t n = std::min(chunk, total - at);
        std::vector<int64_t> idx(n);
        for (int64_t i = 0; i < n; ++i) idx[i] = at + i;
        std::vector<int64_t> labels;
        Tensor x = make_batch(ds, idx, model.cfg.t_in, modality, false, 0, 0,
                              &labels);
        Tensor logits = model_forward(x, model, false);
        Tensor lsm = log_softmax(logits);
        for (int64_t i = 0; i < n; ++i) {
            int64_t arg = 0;
            double best = -1e300;
            for (int64_t j = 0; j < k; ++j) {
                const double l = lsm.data()[i * k + j];
                if (l > best) {
                    best = l;
                    arg = j;
                }
                if (probabilities) probs.push_back(std::exp(l));
            }
            if (labels[i] < 0 || labels[i] >= k)
                throw DomainError("evaluate: label out of range");
            res.confusion[labels[i] * k + arg] += 1;
            if (arg == labels[i]) ++correct;
        }
        Tape::get().clear();
    }
    res.top1 = static_cast<double>(correct) / static_cast<double>(total);
    if (probabilities)
        *probabilities = Tensor::from({total, k}, std::move(probs));
    return res;
}

// ---- train loop -----------------------------------------------------------------

std::string metrics_line(const EpochMetrics& m) {
    char buf[320];
    if (m.val_acc >= 0.0) {
        std::snprintf(buf, sizeof(buf),
                      "{\"epoch\":%lld,\"lr\":%.17g,\"train_loss\":%.17g,"
                      "\"train_acc\":%.17g,\"val_acc\":%.17g,\"wall_ms\":%lld}",
                      static_cast<long long>(m.epoch), m.lr, m.train_loss,
                      m.train_acc, m.val_acc, static_cast<long long>(m.wall_ms));
    } else {
        std::snprintf(buf, sizeof(buf),
                      "{\"epoch\":%lld,\"lr\":%.17g,\"train_loss\":%.17g,"
                      "\"train_acc\":%.17g,\"val_acc\":null,\"wall_ms\":%lld}",
                      static_cast<long long>(m.epoch), m.lr, m.train_loss,
                      m.train_acc, static_cast<long long>(m.wall_ms));
    }
    return std::string(buf);
}

TrainResult train(ModelParams& model, const Dataset& train_ds,
                  const Dataset* val_ds, const TrainConfig& cfg,
                  const TrainOptions& opts) {
    cfg.validate();
    if (train_ds.samples.empty()) throw UsageError("train: empty dataset");
    std::vector<bool> seen(model.cfg.num_classes, false);
    for (const SkeletonSequence& s : train_ds.samples) {
        if (s.label < 0 || s.label >= model.cfg.num_classes)
            throw DomainError("train: sample '" + s.id + "' label out of range");
        seen[s.label] = true;
    }
    for (int64_t c = 0; c < model.cfg.num_classes; ++c)
        if (!seen[c])
            throw DomainError("train: class " + std::to_string(c) +
                              " has no training samples");

    ParamList params = model.parameters();
    AdamState adam;
    adam.init(params);
    const int64_t n = static_cast<int64_t>(train_ds.samples.size());
    const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    TrainResult result;

    std::vector<int64_t> order(n);
    for (int64_t i = 0; i < n; ++i) order[i] = i;

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng shuffle_rng = Rng::keyed(cfg.seed, Rng::hash_str("shuffle"),
                                     static_cast<uint64_t>(epoch));
        for (int64_t i = n - 1; i > 0; --i) {
            const int64_t j = shuffle_rng.uniform_int(i + 1);
            std::swap(order[i], order[j]);
        }
        double loss_sum = 0.0;
        int64_t correct = 0;
        int64_t global_step = 0;
        for (int64_t at = 0; at < n; at += cfg.batch_size, ++global_step) {
            const int64_t bsz = std::min(cfg.batch_size, n - at);
            std::vector<int64_t> idx(order.begin() + at, order.begin() + at + bsz);
            std::vector<int64_t> labels;
            Tensor x = make_batch(train_ds, idx, model.cfg.t_in, opts.modality,
                                  true, cfg.seed, epoch, &labels);
            Tensor logits = model_forward(x, model, true);
            Tensor loss = label_smooth_ce(logits, labels, cfg.label_smoothing);
            const double loss_val = loss.item();
            if (!std::isfinite(loss_val))
                throw NumericError("train: loss diverged at epoch " +
                                   std::to_string(epoch) + " step " +
                                   std::to_string(global_step));
            loss_sum += loss_val * static_cast<double>(bsz);
            for (int64_t i = 0; i < bsz; ++i) {
                int64_t arg = 0;
                double best = -1e300;
                for (int64_t j = 0; j < model.cfg.num_classes; ++j) {
                    const double l = logits.data()[i * model.cfg.num_classes + j];
                    if (l > best) {
                        best = l;
                        arg = j;
                    }
                }
                if (arg == labels[i]) ++correct;
            }
            for (ParamRef& p : params) p.tensor.zero_grad();
            backward(loss);
            clip_grads(params, cfg.clip_norm);
            const double lr = lr_at(epoch, global_step, steps_per_epoch, cfg);
            adamw_step(params, adam, lr, cfg.weight_decay);
            Tape::get().clear();
        }
        EpochMetrics em;
        em.epoch = epoch;
        em.lr = lr_at(epoch, 0, steps_per_epoch, cfg);
        em.train_loss = loss_sum / static_cast<double>(n);
        em.train_acc = static_cast<double>(correct) / static_cast<double>(n);
        if (val_ds) em.val_acc = evaluate(model, *val_ds, opts.modality).top1;
        const auto t1 = std::chrono::steady_clock::now();
        em.wall_ms =
            opts.with_timestamps
                ? std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0)
                      .count()
                : 0;
        result.log.push_back(em);
        if (opts.metrics_out) {
            (*opts.metrics_out) << metrics_line(em) << "\n";
            opts.metrics_out->flush();
        }
        result.final_train_acc = em.train_acc;
        result.final_val_acc = em.val_acc;
        if (cfg.stop_at_train_acc > 0.0 && em.train_acc >= cfg.stop_at_train_acc)
            break;
    }
    return result;
}

}  // namespace skelmamba
