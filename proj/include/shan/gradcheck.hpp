#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "shan/attention.hpp"
#include "shan/blocks.hpp"
#include "shan/network.hpp"
#include "shan/ops.hpp"
#include "shan/rng.hpp"

namespace shan {

struct GradCheckOptions {
    double step = 1e-4;
    double tolerance = 1e-3;
    double floor = 1e-5;                // denominator floor of the relative error
    std::size_t samples_per_tensor = 8; // entries probed per input tensor (all if smaller)
    double kink_shrink = 100;           // re-probe step divisor when the stencil straddles a kink
    std::uint64_t seed = 1;
};

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0;
    std::size_t checked = 0;
    std::size_t kinks = 0; // entries re-probed at a smaller step because of a kink
    std::string worst; // "input[i] #j: analytic a vs numeric n"
    bool passed(double tol) const { return max_rel_error < tol; }
};

inline double grad_rel_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares reverse-mode gradients of loss = sum(f() * R) (R fixed, random)
/// with central differences for sampled entries of every input.
inline GradCheckResult grad_check(const std::string& name, const std::function<Var<double>()>& f,
                                  std::vector<Var<double>> inputs, const GradCheckOptions& opt = {}) {
    SplitMix64 rng(derive_seed(opt.seed, std::hash<std::string>{}(name)));
    Tensor<double> r_t = f().value();
    for (auto& v : r_t.storage()) v = rng.uniform(-1.0, 1.0);
    const Var<double> r(r_t);
    auto loss_of = [&] { return sum(mul(f(), r)); };

    for (auto& in : inputs) {
        in.node()->requires_grad = true;
        in.mutable_grad() = Tensor<double>();
    }
    {
        GradTape<double> tape;
        TapeScope<double> scope(tape);
        backward(loss_of());
    }

    GradCheckResult res;
    res.name = name;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        Var<double> in = inputs[i];
        const std::size_t n = in.numel();
        std::vector<std::size_t> idx;
        if (n <= opt.samples_per_tensor) {
            for (std::size_t j = 0; j < n; ++j) idx.push_back(j);
        } else {
            for (std::size_t s = 0; s < opt.samples_per_tensor; ++s) idx.push_back(rng.below(n));
        }
        const Tensor<double> g = in.grad();
        for (std::size_t j : idx) {
            auto central = [&](double h) {
                auto& val = in.mutable_value()[j];
                const double orig = val;
                val = orig + h;
                const double lp = loss_of().value()[0];
                val = orig - h;
                const double lm = loss_of().value()[0];
                val = orig;
                return (lp - lm) / (2 * h);
            };
            const double analytic = g.empty() ? 0.0 : g[j];
            double numeric = central(opt.step);
            double e = grad_rel_error(analytic, numeric, opt.floor);
            if (e >= opt.tolerance) {
                // A ReLU6 corner or max-pool switch inside [x-h, x+h] breaks the
                // central difference; a much smaller stencil sees only one side.
                const double fine = central(opt.step / opt.kink_shrink);
                const double e_fine = grad_rel_error(analytic, fine, opt.floor);
                if (e_fine < opt.tolerance && grad_rel_error(numeric, fine, opt.floor) >= opt.tolerance) {
                    ++res.kinks;
                    numeric = fine;
                    e = e_fine;
                }
            }
            ++res.checked;
            if (e >= res.max_rel_error) {
                res.max_rel_error = e;
                res.worst = "input[" + std::to_string(i) + "] #" + std::to_string(j) + ": analytic " +
                            std::to_string(analytic) + " vs numeric " + std::to_string(numeric);
            }
        }
    }
    return res;
}

struct GradCheckCase {
    std::string name; // "group/variant"; the group is what --module selects
    std::function<GradCheckResult(const GradCheckOptions&)> run;

    std::string group() const { return name.substr(0, name.find('/')); }
};

namespace detail {

inline Var<double> random_var(SplitMix64& rng, Shape s, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.storage()) v = rng.uniform(lo, hi);
    return Var<double>::leaf(std::move(t));
}

// Values kept away from activation kinks so finite differences stay on one side.
inline Var<double> random_var_avoiding(SplitMix64& rng, Shape s, std::vector<double> kinks, double margin) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.storage()) {
        bool ok = false;
        while (!ok) {
            v = rng.uniform(-8.0, 8.0);
            ok = std::all_of(kinks.begin(), kinks.end(), [&](double k) { return std::abs(v - k) > margin; });
        }
    }
    return Var<double>::leaf(std::move(t));
}

inline std::vector<Var<double>> with_params(std::vector<Var<double>> inputs, const ParameterSet<double>& set) {
    for (const auto& [_, v] : set) inputs.push_back(v);
    return inputs;
}

// Parameters get nonzero random values so no path is trivially dead.
inline void randomize(ParameterSet<double>& set, SplitMix64& rng, double scale = 0.5) {
    for (const auto& [_, v] : set) {
        Var<double> p = v;
        for (auto& x : p.mutable_value().storage()) x = rng.uniform(-scale, scale);
    }
}

template <typename Make>
GradCheckCase module_case(std::string name, Shape input, Make make) {
    return {name, [name, input, make](const GradCheckOptions& opt) {
                SplitMix64 rng(derive_seed(opt.seed, std::hash<std::string>{}(name)));
                ParameterSet<double> set;
                ParamBuilder<double> b(set, rng);
                auto fn = make(b);
                randomize(set, rng);
                Var<double> x = random_var(rng, input);
                return grad_check(
                    name, [&] { return fn(x); }, with_params({x}, set), opt);
            }};
}

} // namespace detail

/// Every differentiable op and composite block, at double precision.
inline std::vector<GradCheckCase> gradcheck_cases() {
    using detail::random_var;
    using V = Var<double>;
    std::vector<GradCheckCase> cases;

    auto op_case = [&](std::string name, std::function<GradCheckResult(SplitMix64&, const GradCheckOptions&)> body) {
        cases.push_back({name, [name, body](const GradCheckOptions& opt) {
                             SplitMix64 rng(derive_seed(opt.seed, std::hash<std::string>{}(name)));
                             return body(rng, opt);
                         }});
    };

    op_case("add/broadcast", [](SplitMix64& rng, const GradCheckOptions& o) {
        V a = random_var(rng, {2, 3, 4, 5}), b = random_var(rng, {1, 3, 1, 5});
        return grad_check("add/broadcast", [&] { return add(a, b); }, {a, b}, o);
    });
    op_case("mul/broadcast", [](SplitMix64& rng, const GradCheckOptions& o) {
        V a = random_var(rng, {2, 3, 4, 1}), b = random_var(rng, {2, 1, 1, 5});
        return grad_check("mul/broadcast", [&] { return mul(a, b); }, {a, b}, o);
    });
    op_case("mul/same", [](SplitMix64& rng, const GradCheckOptions& o) {
        V a = random_var(rng, {2, 3, 4, 4});
        return grad_check("mul/same", [&] { return mul(a, a); }, {a}, o);
    });
    op_case("sub/same", [](SplitMix64& rng, const GradCheckOptions& o) {
        V a = random_var(rng, {1, 2, 3, 4}), b = random_var(rng, {1, 2, 3, 4});
        return grad_check("sub/same", [&] { return sub(a, b); }, {a, b}, o);
    });
    op_case("affine/scale_shift", [](SplitMix64& rng, const GradCheckOptions& o) {
        V a = random_var(rng, {1, 2, 3, 4});
        return grad_check("affine/scale_shift", [&] { return affine(a, 2.5, -0.5); }, {a}, o);
    });
    op_case("sum/all", [](SplitMix64& rng, const GradCheckOptions& o) {
        V a = random_var(rng, {2, 3, 4});
        return grad_check("sum/all", [&] { return sum(a); }, {a}, o);
    });
    op_case("mean/all", [](SplitMix64& rng, const GradCheckOptions& o) {
        V a = random_var(rng, {2, 3, 4});
        return grad_check("mean/all", [&] { return mean(a); }, {a}, o);
    });
    const std::pair<const char*, Activation> acts[] = {{"relu", Activation::relu},
                                                       {"relu6", Activation::relu6},
                                                       {"elu", Activation::elu},
                                                       {"tanh", Activation::tanh},
                                                       {"sigmoid", Activation::sigmoid}};
    for (auto [label, kind] : acts) {
        const std::string name = std::string("activation/") + label;
        op_case(name, [name, kind](SplitMix64& rng, const GradCheckOptions& o) {
            V a = detail::random_var_avoiding(rng, {1, 2, 4, 4}, {0.0, 6.0}, 10 * o.step);
            return grad_check(name, [&] { return apply_activation(a, kind); }, {a}, o);
        });
    }

    struct ConvVariant {
        const char* label;
        std::size_t cin, cout, kh, kw, stride, ph, pw, groups;
        PadMode mode;
        bool bias;
    };
    const ConvVariant convs[] = {
        {"zero3x3", 3, 4, 3, 3, 1, 1, 1, 1, PadMode::zero, true},
        {"reflect3x3", 3, 2, 3, 3, 1, 1, 1, 1, PadMode::reflect, true},
        {"stride2", 2, 3, 3, 3, 2, 1, 1, 1, PadMode::zero, true},
        {"grouped", 4, 4, 3, 3, 1, 1, 1, 2, PadMode::zero, false},
        {"pointwise", 4, 3, 1, 1, 1, 0, 0, 1, PadMode::zero, true},
        {"row1x3", 4, 2, 1, 3, 1, 0, 1, 1, PadMode::zero, false},
    };
    for (const auto& cv : convs) {
        const std::string name = std::string("conv2d/") + cv.label;
        op_case(name, [name, cv](SplitMix64& rng, const GradCheckOptions& o) {
            V x = random_var(rng, {2, cv.cin, 6, 7});
            V w = random_var(rng, {cv.cout, cv.cin / cv.groups, cv.kh, cv.kw});
            V b = random_var(rng, {cv.cout});
            std::vector<V> in = {x, w};
            if (cv.bias) in.push_back(b);
            return grad_check(
                name,
                [&] { return conv2d_ex(x, w, cv.bias ? &b : nullptr, cv.stride, cv.ph, cv.pw, cv.mode, cv.groups); },
                in, o);
        });
    }

    op_case("reshape/flat", [](SplitMix64& rng, const GradCheckOptions& o) {
        V a = random_var(rng, {2, 3, 4});
        return grad_check("reshape/flat", [&] { return reshape(a, Shape{4, 6}); }, {a}, o);
    });
    op_case("concat/axis3", [](SplitMix64& rng, const GradCheckOptions& o) {
        V a = random_var(rng, {1, 2, 3, 2}), b = random_var(rng, {1, 2, 3, 4});
        return grad_check("concat/axis3", [&] { return concat<double>({a, b}, 3); }, {a, b}, o);
    });
    op_case("concat/axis1", [](SplitMix64& rng, const GradCheckOptions& o) {
        V a = random_var(rng, {2, 2, 3, 2}), b = random_var(rng, {2, 1, 3, 2});
        return grad_check("concat/axis1", [&] { return concat<double>({a, b}, 1); }, {a, b}, o);
    });
    op_case("slice/axis3", [](SplitMix64& rng, const GradCheckOptions& o) {
        V a = random_var(rng, {1, 2, 3, 6});
        return grad_check("slice/axis3", [&] { return slice(a, 3, 2, 3); }, {a}, o);
    });
    op_case("channel_shuffle/g2", [](SplitMix64& rng, const GradCheckOptions& o) {
        V a = random_var(rng, {2, 6, 2, 3});
        return grad_check("channel_shuffle/g2", [&] { return channel_shuffle(a, 2); }, {a}, o);
    });
    for (auto axis : {PoolAxis::horizontal, PoolAxis::vertical})
        for (auto kind : {PoolKind::avg, PoolKind::max}) {
            const std::string name = std::string("directional_pool/") +
                                     (axis == PoolAxis::horizontal ? "h_" : "v_") +
                                     (kind == PoolKind::avg ? "avg" : "max");
            op_case(name, [name, axis, kind](SplitMix64& rng, const GradCheckOptions& o) {
                V a = random_var(rng, {2, 3, 4, 5});
                return grad_check(name, [&] { return directional_pool(a, axis, kind); }, {a}, o);
            });
        }
    op_case("global_avg_pool/basic", [](SplitMix64& rng, const GradCheckOptions& o) {
        V a = random_var(rng, {2, 3, 4, 5});
        return grad_check("global_avg_pool/basic", [&] { return global_avg_pool(a); }, {a}, o);
    });
    op_case("instance_norm/basic", [](SplitMix64& rng, const GradCheckOptions& o) {
        V a = random_var(rng, {2, 3, 4, 5});
        return grad_check("instance_norm/basic", [&] { return instance_norm(a, 1e-5); }, {a}, o);
    });
    op_case("upsample_nearest/x2", [](SplitMix64& rng, const GradCheckOptions& o) {
        V a = random_var(rng, {1, 2, 3, 4});
        return grad_check("upsample_nearest/x2", [&] { return upsample_nearest(a, 2); }, {a}, o);
    });
    op_case("softmax/axis1", [](SplitMix64& rng, const GradCheckOptions& o) {
        V a = random_var(rng, {2, 5, 3, 3}, -3, 3);
        return grad_check("softmax/axis1", [&] { return softmax(a, 1); }, {a}, o);
    });
    op_case("local_aggregate/k3", [](SplitMix64& rng, const GradCheckOptions& o) {
        V v = random_var(rng, {1, 4, 4, 5}), w = random_var(rng, {1, 2 * 9, 4, 5});
        return grad_check("local_aggregate/k3", [&] { return local_aggregate(v, w, 3, 2); }, {v, w}, o);
    });
    op_case("charbonnier/eps1e-3", [](SplitMix64& rng, const GradCheckOptions& o) {
        V x = random_var(rng, {1, 3, 4, 4}), y = random_var(rng, {1, 3, 4, 4});
        return grad_check("charbonnier/eps1e-3", [&] { return charbonnier(x, y, 1e-3); }, {x, y}, o);
    });

    SHAConfig sha8;
    sha8.channels = 8;
    cases.push_back(detail::module_case("sha/c8", {2, 8, 5, 6}, [sha8](ParamBuilder<double> b) {
        SHA<double> m(b, sha8);
        return [m](const V& x) { return m(x); };
    }));
    SHAConfig sha8_plain = sha8;
    sha8_plain.enable_maxpool = false;
    sha8_plain.enable_shuffle = false;
    cases.push_back(detail::module_case("sha/no_max_no_shuffle", {1, 8, 4, 4}, [sha8_plain](ParamBuilder<double> b) {
        SHA<double> m(b, sha8_plain);
        return [m](const V& x) { return m(x); };
    }));
    cases.push_back(detail::module_case("se/c16", {2, 16, 4, 4}, [](ParamBuilder<double> b) {
        SE<double> m(b, 16);
        return [m](const V& x) { return m(x); };
    }));
    cases.push_back(detail::module_case("fa/c8", {2, 8, 4, 4}, [](ParamBuilder<double> b) {
        FA<double> m(b, 8);
        return [m](const V& x) { return m(x); };
    }));
    BlockConfig bc;
    bc.channels = 8;
    bc.sha = sha8;
    cases.push_back(detail::module_case("mhab/c8", {1, 8, 5, 5}, [bc](ParamBuilder<double> b) {
        MHAB<double> m(b, bc);
        return [m](const V& x) { return m(x); };
    }));
    cases.push_back(detail::module_case("cot/c8", {1, 8, 5, 5}, [](ParamBuilder<double> b) {
        CoT<double> m(b, 8, 3, 4);
        return [m](const V& x) { return m(x); };
    }));
    cases.push_back(detail::module_case("mhac/c8", {1, 8, 5, 5}, [bc](ParamBuilder<double> b) {
        MHAC<double> m(b, bc);
        return [m](const V& x) { return m(x); };
    }));
    cases.push_back(detail::module_case("aff/pair", {1, 4, 3, 3}, [](ParamBuilder<double> b) {
        AFF<double> m(b);
        SplitMix64 side(99);
        V other = detail::random_var(side, {1, 4, 3, 3});
        return [m, other](const V& x) { return m(x, mul(other, x)); };
    }));
    cases.push_back(detail::module_case("tail/c8", {1, 8, 4, 4}, [](ParamBuilder<double> b) {
        Tail<double> m(b, 8, 2);
        return [m](const V& x) { return m(x); };
    }));

    auto small_model = [] {
        ModelConfig c;
        c.shallow_channels = 16;
        c.shallow_blocks = 2;
        c.deep_channels = 8;
        c.deep_blocks = 2;
        c.density_channels = 8;
        return c;
    };
    cases.push_back({"density/c8", [small_model](const GradCheckOptions& opt) {
                         SplitMix64 rng(derive_seed(opt.seed, 0xD5));
                         ParameterSet<double> set;
                         ParamBuilder<double> b(set, rng);
                         DensityModule<double> m(b, small_model());
                         detail::randomize(set, rng);
                         V s = detail::random_var(rng, {1, 3, 6, 8}), x = detail::random_var(rng, {1, 3, 6, 8});
                         return grad_check(
                             "density/c8", [&] { return m(s, x).map; }, detail::with_params({s, x}, set), opt);
                     }});
    cases.push_back({"full/16x16", [small_model](const GradCheckOptions& opt) {
                         Model<double> model(small_model());
                         SplitMix64 rng(derive_seed(opt.seed, 0xF0));
                         detail::randomize(model.params(), rng, 0.3);
                         V x = detail::random_var(rng, {1, 3, 16, 16}, 0.0, 1.0);
                         // both outputs, so every stage contributes to the loss
                         return grad_check(
                             "full/16x16",
                             [&] {
                                 auto out = model(x);
                                 return concat<double>({out.pseudo, out.final, out.density.map}, 1);
                             },
                             detail::with_params({x}, model.params()), opt);
                     }});
    return cases;
}

inline std::vector<std::string> gradcheck_groups() {
    std::vector<std::string> g;
    for (const auto& c : gradcheck_cases())
        if (std::find(g.begin(), g.end(), c.group()) == g.end()) g.push_back(c.group());
    return g;
}

/// Runs every case whose group equals `group` (all cases when empty).
inline std::vector<GradCheckResult> run_gradcheck(const std::string& group = "", const GradCheckOptions& opt = {}) {
    std::vector<GradCheckResult> out;
    for (const auto& c : gradcheck_cases())
        if (group.empty() || c.group() == group) out.push_back(c.run(opt));
    if (out.empty()) throw ArgumentError("gradcheck: unknown module '" + group + "'");
    return out;
}

} // namespace shan
