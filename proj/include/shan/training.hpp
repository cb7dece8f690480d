#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "shan/autodiff.hpp"
#include "shan/hazegen.hpp"
#include "shan/metrics.hpp"
#include "shan/network.hpp"
#include "shan/ops.hpp"
#include "shan/rng.hpp"

namespace shan {

struct TrainConfig {
    std::size_t steps = 2000;
    std::size_t batch = 4;
    std::size_t patch = 64;
    double lr_base = 2e-4;
    double lr_max = 3e-4;
    double momentum_base = 0.8;
    double momentum_max = 0.9;
    std::size_t cycle_half_steps = 2000;
    double eps_charbonnier = 1e-3;
    std::uint64_t seed = 0;
    std::size_t log_every = 10;
    std::size_t checkpoint_every = 0; // 0: only at the end

    void validate() const {
        if (!(lr_base > 0 && lr_base <= lr_max)) throw ArgumentError("TrainConfig: need 0 < lr_base <= lr_max");
        if (!(momentum_base > 0 && momentum_base <= momentum_max && momentum_max < 1))
            throw ArgumentError("TrainConfig: need 0 < momentum_base <= momentum_max < 1");
        if (!(eps_charbonnier > 0)) throw ArgumentError("TrainConfig: eps_charbonnier must be positive");
        if (batch == 0 || cycle_half_steps == 0 || log_every == 0)
            throw ArgumentError("TrainConfig: batch, cycle_half_steps and log_every must be >= 1");
        if (patch == 0 || patch % 4 != 0) throw ArgumentError("TrainConfig: patch must be divisible by 4");
    }

    KeyValues to_kv() const {
        KeyValues kv;
        auto d = [](double v) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.17g", v);
            return std::string(buf);
        };
        kv["steps"] = std::to_string(steps);
        kv["batch"] = std::to_string(batch);
        kv["patch"] = std::to_string(patch);
        kv["lr_base"] = d(lr_base);
        kv["lr_max"] = d(lr_max);
        kv["momentum_base"] = d(momentum_base);
        kv["momentum_max"] = d(momentum_max);
        kv["cycle_half_steps"] = std::to_string(cycle_half_steps);
        kv["eps_charbonnier"] = d(eps_charbonnier);
        kv["seed"] = std::to_string(seed);
        kv["log_every"] = std::to_string(log_every);
        kv["checkpoint_every"] = std::to_string(checkpoint_every);
        return kv;
    }

    void apply(const KeyValues& kv) {
        for (const auto& [key, value] : kv) {
            auto num = [&] { return static_cast<std::size_t>(std::stoull(value)); };
            if (key == "steps") steps = num();
            else if (key == "batch") batch = num();
            else if (key == "patch") patch = num();
            else if (key == "lr_base") lr_base = std::stod(value);
            else if (key == "lr_max") lr_max = std::stod(value);
            else if (key == "momentum_base") momentum_base = std::stod(value);
            else if (key == "momentum_max") momentum_max = std::stod(value);
            else if (key == "cycle_half_steps") cycle_half_steps = num();
            else if (key == "eps_charbonnier") eps_charbonnier = std::stod(value);
            else if (key == "seed") seed = std::stoull(value);
            else if (key == "log_every") log_every = num();
            else if (key == "checkpoint_every") checkpoint_every = num();
            else throw ArgumentError("TrainConfig: unknown key '" + key + "'");
        }
    }
};

/// L_char(S, gt) + L_char(D, gt).
template <typename T>
Var<T> total_loss(const Var<T>& pseudo, const Var<T>& final, const Var<T>& gt, T eps) {
    return add(charbonnier(pseudo, gt, eps), charbonnier(final, gt, eps));
}

struct Schedule {
    double lr;
    double beta1;
};

/// Triangular cyclic learning rate (gamma 1), momentum cycled in anti-phase.
inline Schedule cyclic_lr(std::size_t step, const TrainConfig& cfg) {
    const double half = static_cast<double>(cfg.cycle_half_steps);
    const double s = static_cast<double>(step);
    const double cycle = std::floor(1.0 + s / (2.0 * half));
    const double x = std::abs(s / half - 2.0 * cycle + 1.0);
    const double scale = std::max(0.0, 1.0 - x);
    return {cfg.lr_base + (cfg.lr_max - cfg.lr_base) * scale,
            cfg.momentum_max - (cfg.momentum_max - cfg.momentum_base) * scale};
}

/// Adam with bias correction; beta1 may change from step to step.
template <typename T>
class Adam {
public:
    explicit Adam(double beta2 = 0.999, double eps = 1e-8) : beta2_(beta2), eps_(eps) {}

    void step(ParameterSet<T>& params, double lr, double beta1) {
        bool any = false;
        for (const auto& [_, v] : params) any = any || !v.grad().empty();
        if (!any) throw GradError("adam_step: no parameter has a gradient; run backward first");
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (const auto& [name, v] : params) {
            Var<T> var = v;
            auto& slot = slots_[name];
            auto& value = var.mutable_value();
            if (slot.m.empty()) {
                slot.m = Tensor<T>(value.shape());
                slot.v = Tensor<T>(value.shape());
            }
            const auto& g = var.grad();
            const bool has_grad = !g.empty();
            for (std::size_t i = 0; i < value.numel(); ++i) {
                const double gi = has_grad ? static_cast<double>(g[i]) : 0.0;
                const double m = beta1 * slot.m[i] + (1.0 - beta1) * gi;
                const double s = beta2_ * slot.v[i] + (1.0 - beta2_) * gi * gi;
                slot.m[i] = static_cast<T>(m);
                slot.v[i] = static_cast<T>(s);
                value[i] -= static_cast<T>(lr * (m / bc1) / (std::sqrt(s / bc2) + eps_));
            }
        }
    }

    std::uint64_t steps() const { return step_; }
    const Tensor<T>& first_moment(const std::string& name) const { return slots_.at(name).m; }
    const Tensor<T>& second_moment(const std::string& name) const { return slots_.at(name).v; }

private:
    struct Slot {
        Tensor<T> m, v;
    };
    double beta2_, eps_;
    std::uint64_t step_ = 0;
    std::map<std::string, Slot> slots_;
};

template <typename T>
struct Batch {
    Tensor<T> hazy;  // N x 3 x P x P
    Tensor<T> clean;
};

/// Stacks C x H x W images into N x C x H x W.
template <typename T>
Tensor<T> stack_images(const std::vector<const Tensor<T>*>& images) {
    const Shape& s = images.at(0)->shape();
    Tensor<T> out(Shape{images.size(), s[0], s[1], s[2]});
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i]->shape() != s) throw ShapeError("stack_images", "shape", "images differ in size");
        std::copy(images[i]->data().begin(), images[i]->data().end(), out.data().begin() + i * images[i]->numel());
    }
    return out;
}

/// Draws a seeded batch: random images, random crops, random rotation/flip.
template <typename T>
Batch<T> sample_batch(const std::vector<HazyPair<T>>& data, const TrainConfig& cfg, SplitMix64& rng) {
    static constexpr Augment kOps[] = {Augment::none, Augment::rot90, Augment::rot180, Augment::rot270,
                                       Augment::hflip};
    std::vector<HazyPair<T>> picked;
    picked.reserve(cfg.batch);
    for (std::size_t b = 0; b < cfg.batch; ++b) {
        const auto& src = data[rng.below(data.size())];
        auto patch = extract_patches(src, cfg.patch, 1, rng.next()).front();
        picked.push_back(augment(patch, kOps[rng.below(5)]));
    }
    std::vector<const Tensor<T>*> hz, cl;
    for (const auto& p : picked) {
        hz.push_back(&p.hazy);
        cl.push_back(&p.clean);
    }
    return {stack_images(hz), stack_images(cl)};
}

struct LogRow {
    std::size_t step;
    double lr;
    double loss;
    double psnr;
};

struct TrainResult {
    std::vector<LogRow> log;
    double last_loss = 0;
};

/// Hooks for the caller: a log sink and a checkpoint writer.
struct TrainHooks {
    std::function<void(const LogRow&)> on_log;
    std::function<void(std::size_t step)> on_checkpoint;
};

/// Forward pass of one batch and its loss on the active tape (if any).
template <typename T>
std::pair<ModelOutput<T>, Var<T>> forward_loss(const Model<T>& model, const Batch<T>& batch, T eps) {
    Var<T> x(batch.hazy), gt(batch.clean);
    auto out = model(x);
    return {out, total_loss(out.pseudo, out.final, gt, eps)};
}

/// Seeded, deterministic training: batch -> forward -> loss -> backward ->
/// cyclic schedule -> Adam. Logs step 0, every log_every steps and the last step.
template <typename T>
TrainResult train_loop(Model<T>& model, const std::vector<HazyPair<T>>& data, const TrainConfig& cfg,
                       const TrainHooks& hooks = {}) {
    cfg.validate();
    if (data.empty()) throw DataError("train_loop: dataset is empty");
    SplitMix64 rng(derive_seed(cfg.seed, 0x7EA1));
    Adam<T> adam;
    TrainResult result;
    const T eps = static_cast<T>(cfg.eps_charbonnier);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Batch<T> batch = sample_batch(data, cfg, rng);
        model.params().zero_grad();
        GradTape<T> tape;
        TapeScope<T> scope(tape);
        auto [out, loss] = forward_loss(model, batch, eps);
        const double lv = static_cast<double>(loss.value()[0]);
        if (!std::isfinite(lv)) {
            tape.clear();
            std::string op = "unknown";
            try {
                FiniteCheckScope check;
                forward_loss(model, batch, eps);
            } catch (const NonFiniteError& e) {
                op = e.op();
            }
            throw Error("training diverged at step " + std::to_string(step) +
                        ": loss is not finite; first non-finite value produced by op '" + op + "'");
        }
        backward(loss);
        const Schedule sched = cyclic_lr(step, cfg);
        adam.step(model.params(), sched.lr, sched.beta1);
        result.last_loss = lv;
        if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            LogRow row{step, sched.lr, lv, psnr(out.final.value(), batch.clean)};
            result.log.push_back(row);
            if (hooks.on_log) hooks.on_log(row);
        }
        if (hooks.on_checkpoint && cfg.checkpoint_every && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 != cfg.steps)
            hooks.on_checkpoint(step + 1);
    }
    if (hooks.on_checkpoint) hooks.on_checkpoint(cfg.steps);
    return result;
}

struct EvalRow {
    std::string id;
    double psnr;
    double ssim;
    double loss;
};

/// Runs the model on each pair (no tape) and scores D(x) against the clean image.
template <typename T>
std::vector<EvalRow> evaluate(const Model<T>& model, const std::vector<HazyPair<T>>& data, T eps = T(1e-3)) {
    std::vector<EvalRow> rows;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& p = data[i];
        Batch<T> b{stack_images<T>({&p.hazy}), stack_images<T>({&p.clean})};
        auto [out, loss] = forward_loss(model, b, eps);
        Tensor<T> final = out.final.value().reshaped(p.clean.shape());
        rows.push_back({std::to_string(i), psnr(final, p.clean), ssim(final, p.clean),
                        static_cast<double>(loss.value()[0])});
    }
    return rows;
}

} // namespace shan
