#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "shan/attention.hpp"
#include "shan/blocks.hpp"
#include "shan/network.hpp"

namespace shan {

/// FLOPs count a multiply-accumulate as 2 operations.
inline constexpr const char* kFlopConvention = "FLOPs count one multiply-accumulate as 2 ops";

struct PaperCost {
    std::string module;
    std::string flops; // as printed in the comparison table
    std::string params;
};

/// Reference figures from the published comparison (C = 64; resolution unstated).
inline const std::vector<PaperCost>& paper_costs() {
    static const std::vector<PaperCost> table = {
        {"se", "4.195M", "512"},      {"eca", "4.195M", "3"},         {"cbam", "10.619M", "1.122K"},
        {"fa", "38.864M", "1.625K"},  {"swrca", "2424.311M", "41.088K"}, {"sha", "15.29M", "5.192K"},
    };
    return table;
}

inline std::optional<PaperCost> paper_cost(const std::string& module) {
    for (const auto& p : paper_costs())
        if (p.module == module) return p;
    return std::nullopt;
}

struct CostReport {
    std::string module;
    std::size_t channels = 0, height = 0, width = 0;
    std::size_t params = 0;
    std::uint64_t flops = 0;
    std::optional<PaperCost> paper;
    std::string note;
};

inline const std::vector<std::string>& cost_modules() {
    static const std::vector<std::string> m = {"sha", "se", "fa", "mhab", "mhac", "full"};
    return m;
}

/// Allocates the module at C channels, counts its parameter elements and
/// evaluates its analytic FLOPs for a 1 x C x H x W input (1 x 3 x H x W for "full",
/// whose shallow width is C).
inline CostReport count_cost(const std::string& module, std::size_t channels, std::size_t h, std::size_t w,
                             const ModelConfig& base = {}) {
    if (channels == 0 || h == 0 || w == 0) throw ArgumentError("count_cost: channels, H and W must be >= 1");
    CostReport r;
    r.module = module;
    r.channels = channels;
    r.height = h;
    r.width = w;
    ParameterSet<double> set;
    SplitMix64 rng(0);
    ParamBuilder<double> b(set, rng);
    BlockConfig bc;
    bc.channels = channels;
    bc.sha = base.sha(channels);
    bc.cot_kernel = base.cot_kernel;
    bc.cot_groups = base.cot_groups;
    if (module == "sha") {
        SHA<double> m(b, base.sha(channels));
        r.flops = m.flops(1, h, w);
    } else if (module == "se") {
        SE<double> m(b, channels);
        r.flops = m.flops(1, h, w);
    } else if (module == "fa") {
        FA<double> m(b, channels);
        r.flops = m.flops(1, h, w);
    } else if (module == "mhab") {
        MHAB<double> m(b, bc);
        r.flops = m.flops(1, h, w);
    } else if (module == "mhac") {
        MHAC<double> m(b, bc);
        r.flops = m.flops(1, h, w);
    } else if (module == "full") {
        ModelConfig cfg = base;
        cfg.shallow_channels = channels;
        Model<double> m(cfg);
        r.params = m.params().element_count();
        r.flops = m.flops(1, h, w);
    } else {
        std::string known;
        for (const auto& k : cost_modules()) known += (known.empty() ? "" : ", ") + k;
        throw ArgumentError("count_cost: unknown module '" + module + "' (expected one of " + known + ")");
    }
    if (module != "full") r.params = set.element_count();
    r.paper = paper_cost(module);
    if (module == "sha" && r.paper)
        r.note = "convention mismatch: the published 5.192K does not follow from the stated layers; "
                 "the count here is the allocated element count";
    return r;
}

inline void print_cost(std::ostream& os, const CostReport& r) {
    os << "module " << r.module << "\n";
    os << "input 1x" << (r.module == "full" ? 3 : r.channels) << "x" << r.height << "x" << r.width << "\n";
    os << "params " << r.params << "\n";
    os << "flops " << r.flops << "\n";
    os << "convention " << kFlopConvention << "\n";
    if (r.paper) os << "paper_params " << r.paper->params << "\npaper_flops " << r.paper->flops << "\n";
    if (!r.note.empty()) os << "note " << r.note << "\n";
}

} // namespace shan
