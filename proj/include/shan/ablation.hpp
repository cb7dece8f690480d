#pragma once

#include <string>
#include <vector>

#include "shan/network.hpp"
#include "shan/training.hpp"

namespace shan {

struct AblationStep {
    std::string label;
    ModelConfig config;
};

/// Configuration ladders. Table 1 varies the shallow-layer components on the
/// shallow network alone; table 3 varies SHA internals in the full model;
/// table 4 adds the deep layers and then the density map.
inline std::vector<AblationStep> ablation_ladder(int table, const ModelConfig& base = {}) {
    std::vector<AblationStep> out;
    if (table == 1) {
        ModelConfig s = base;
        s.use_deep = false;
        s.use_density = false;
        ModelConfig b = s;
        b.use_sha = b.use_fa = b.use_cot = b.use_aff = false;
        out.push_back({"base", b});
        ModelConfig fa = b;
        fa.use_fa = true;
        out.push_back({"base+fa", fa});
        ModelConfig sha = b;
        sha.use_sha = true;
        out.push_back({"base+sha", sha});
        ModelConfig cot = sha;
        cot.use_cot = true;
        out.push_back({"base+sha+cot", cot});
        ModelConfig aff = cot;
        aff.use_aff = true;
        out.push_back({"base+sha+cot+aff", aff});
    } else if (table == 3) {
        ModelConfig avg = base;
        avg.sha_maxpool = avg.sha_shuffle = false;
        out.push_back({"avgpool", avg});
        ModelConfig mx = avg;
        mx.sha_maxpool = true;
        out.push_back({"avgpool+maxpool", mx});
        ModelConfig sh = mx;
        sh.sha_shuffle = true;
        out.push_back({"avgpool+maxpool+shuffle", sh});
        ModelConfig k1 = sh;
        k1.sha_restore_kernel = 1;
        out.push_back({"restore_k1", k1});
        ModelConfig k3 = sh;
        k3.sha_restore_kernel = 3;
        out.push_back({"restore_k3", k3});
    } else if (table == 4) {
        ModelConfig sh = base;
        sh.use_deep = false;
        sh.use_density = false;
        out.push_back({"shallow", sh});
        ModelConfig deep = base;
        deep.use_deep = true;
        deep.use_density = false;
        out.push_back({"shallow+deep", deep});
        ModelConfig full = base;
        full.use_deep = true;
        full.use_density = true;
        out.push_back({"shallow+deep+density", full});
    } else {
        throw ArgumentError("ablation: table must be 1, 3 or 4, got " + std::to_string(table));
    }
    return out;
}

struct AblationRow {
    std::string label;
    std::size_t params = 0;
    double final_loss = 0; // mean total loss over the training set after training
    double psnr = 0;       // mean PSNR of D(x) over the training set
};

struct EvalSummary {
    double loss = 0;
    double psnr = 0;
    double ssim = 0;
};

inline EvalSummary summarize(const std::vector<EvalRow>& rows) {
    EvalSummary s;
    for (const auto& r : rows) {
        s.loss += r.loss;
        s.psnr += r.psnr;
        s.ssim += r.ssim;
    }
    const double n = static_cast<double>(rows.size());
    return {s.loss / n, s.psnr / n, s.ssim / n};
}

/// Trains every rung with the same data, seed and budget.
inline std::vector<AblationRow> run_ablation(int table, const std::vector<HazyPair<float>>& data,
                                             const TrainConfig& train, const ModelConfig& base = {},
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
    std::vector<AblationRow> rows;
    for (const auto& step : ablation_ladder(table, base)) {
        Model<float> model(step.config);
        train_loop(model, data, train);
        const auto s = summarize(evaluate(model, data, static_cast<float>(train.eps_charbonnier)));
        rows.push_back({step.label, model.params().element_count(), s.loss, s.psnr});
        if (on_row) on_row(rows.back());
    }
    return rows;
}

} // namespace shan
