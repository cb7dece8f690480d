// shan: synthesize data, train, dehaze, evaluate and account for cost.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "shan/shan.hpp"

namespace {

using namespace shan;

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kDataError = 2;

// Splits a key=value config into train keys and "model."-prefixed model keys.
void load_config(const std::string& path, TrainConfig& train, ModelConfig& model) {
    if (path.empty()) return;
    KeyValues tk, mk;
    for (const auto& [k, v] : read_kv(path)) {
        if (k.rfind("model.", 0) == 0) mk[k.substr(6)] = v;
        else tk[k] = v;
    }
    train.apply(tk);
    model.apply(mk);
    train.validate();
    model.validate();
}

// Mirrors the bottom/right edges so both extents become multiples of `m`.
Tensor<float> reflect_pad_to(const Tensor<float>& img, std::size_t m) {
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    const std::size_t ph = (h + m - 1) / m * m, pw = (w + m - 1) / m * m;
    if (ph == h && pw == w) return img;
    auto mirror = [](std::size_t i, std::size_t n) {
        if (n == 1) return std::size_t{0};
        const std::size_t period = 2 * (n - 1);
        i %= period;
        return i < n ? i : period - i;
    };
    Tensor<float> out(Shape{c, ph, pw});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < ph; ++y)
            for (std::size_t x = 0; x < pw; ++x)
                out[(ch * ph + y) * pw + x] = img[(ch * h + mirror(y, h)) * w + mirror(x, w)];
    return out;
}

Tensor<float> crop_to(const Tensor<float>& img, std::size_t h, std::size_t w) {
    const std::size_t c = img.dim(0), ih = img.dim(1), iw = img.dim(2);
    if (ih == h && iw == w) return img;
    Tensor<float> out(Shape{c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out[(ch * h + y) * w + x] = img[(ch * ih + y) * iw + x];
    return out;
}

Tensor<float> batch_item(const Var<float>& v) {
    const auto& s = v.shape();
    return v.value().reshaped(Shape{s[1], s[2], s[3]});
}

int cmd_synth(std::size_t scenes, std::size_t size, std::uint64_t seed, std::size_t test_scenes,
              const std::string& out) {
    write_dataset(out, "train", synthesize_dataset<float>(scenes, size, seed));
    if (test_scenes > 0) write_dataset(out, "test", synthesize_dataset<float>(test_scenes, size, derive_seed(seed, 0x7E57)));
    std::cout << "wrote " << scenes << " train and " << test_scenes << " test pairs of " << size << "x" << size
              << " to " << out << "\n";
    return kOk;
}

int cmd_init(const std::string& config, const std::string& out, bool zero) {
    TrainConfig tc;
    ModelConfig mc;
    load_config(config, tc, mc);
    Model<float> model(mc);
    if (zero) model.params().fill(0.0f);
    save_checkpoint(out, model);
    std::cout << "wrote " << out << " (" << model.params().element_count() << " parameters)\n";
    return kOk;
}

int cmd_train(const std::string& data_dir, const std::string& split, const std::string& config,
              const std::string& out, std::string metrics, std::optional<std::size_t> steps) {
    TrainConfig tc;
    ModelConfig mc;
    load_config(config, tc, mc);
    if (steps) tc.steps = *steps;
    tc.validate();
    const auto data = pairs_of(read_dataset(data_dir, split));
    for (const auto& p : data)
        if (p.hazy.dim(1) < tc.patch || p.hazy.dim(2) < tc.patch)
            throw DataError("training images are smaller than patch " + std::to_string(tc.patch));
    Model<float> model(mc);
    if (metrics.empty()) metrics = out + ".tsv";
    std::ofstream log(metrics);
    if (!log) throw DataError("cannot write metrics log '" + metrics + "'");
    log << "step\tlr\tloss\tpsnr\n" << std::setprecision(9);
    TrainHooks hooks;
    hooks.on_log = [&](const LogRow& r) {
        log << r.step << '\t' << r.lr << '\t' << r.loss << '\t' << r.psnr << '\n';
        log.flush();
        std::cout << "step " << r.step << " lr " << r.lr << " loss " << r.loss << " psnr " << r.psnr << "\n";
    };
    hooks.on_checkpoint = [&](std::size_t) { save_checkpoint(out, model); };
    train_loop(model, data, tc, hooks);
    std::cout << "checkpoint " << out << "\nmetrics " << metrics << "\n";
    return kOk;
}

int cmd_dehaze(const std::string& ckpt, const std::string& in, const std::string& out, const std::string& density,
               const std::string& pseudo) {
    Model<float> model = load_checkpoint<float>(ckpt);
    const Tensor<float> img = read_ppm(in);
    const std::size_t h = img.dim(1), w = img.dim(2);
    Tensor<float> padded = reflect_pad_to(img, model.config().downsample_factor);
    Var<float> x(padded.reshaped(Shape{1, 3, padded.dim(1), padded.dim(2)}));
    auto res = model(x);
    write_ppm(out, crop_to(batch_item(res.final), h, w));
    if (!pseudo.empty()) write_ppm(pseudo, crop_to(batch_item(res.pseudo), h, w));
    if (!density.empty()) write_ppm(density, colorjet_render(crop_to(batch_item(res.density.map), h, w)));
    return kOk;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& split,
             const std::string& report) {
    Model<float> model = load_checkpoint<float>(ckpt);
    const auto entries = read_dataset(data_dir, split);
    const auto rows = evaluate(model, pairs_of(entries));
    std::ofstream os(report);
    if (!os) throw DataError("cannot write report '" + report + "'");
    os << "id\tpsnr\tssim\n" << std::setprecision(9);
    double mp = 0, ms = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        os << entries[i].id << '\t' << rows[i].psnr << '\t' << rows[i].ssim << '\n';
        mp += rows[i].psnr;
        ms += rows[i].ssim;
    }
    const double n = static_cast<double>(rows.size());
    std::cout << "images " << rows.size() << "\nmean_psnr " << mp / n << "\nmean_ssim " << ms / n
              << "\ncolor_space rgb\nreport " << report << "\n";
    return kOk;
}

int cmd_count(const std::string& module, std::size_t channels, std::vector<std::size_t> hw) {
    print_cost(std::cout, count_cost(module, channels, hw.at(0), hw.at(1)));
    return kOk;
}

int cmd_gradcheck(const std::string& module) {
    GradCheckOptions opt;
    bool ok = true;
    double worst = 0;
    for (const auto& r : run_gradcheck(module, opt)) {
        const bool pass = r.passed(opt.tolerance);
        ok = ok && pass;
        worst = std::max(worst, r.max_rel_error);
        std::cout << (pass ? "ok   " : "FAIL ") << std::left << std::setw(28) << r.name << " max_rel_error "
                  << std::scientific << std::setprecision(3) << r.max_rel_error << std::defaultfloat << " ("
                  << r.checked << " entries";
        if (r.kinks) std::cout << ", " << r.kinks << " re-probed at kinks";
        std::cout << ")";
        if (!pass) std::cout << " worst " << r.worst;
        std::cout << "\n";
    }
    std::cout << "max_rel_error " << worst << " tolerance " << opt.tolerance << "\n";
    return ok ? kOk : kDataError;
}

int cmd_ablate(int table, const std::string& data_dir, const std::string& split, const std::string& config,
               std::optional<std::size_t> steps, const std::string& out) {
    TrainConfig tc;
    ModelConfig mc;
    load_config(config, tc, mc);
    if (steps) tc.steps = *steps;
    const auto data = pairs_of(read_dataset(data_dir, split));
    std::ofstream file;
    if (!out.empty()) {
        file.open(out);
        if (!file) throw DataError("cannot write '" + out + "'");
    }
    std::ostream& os = out.empty() ? std::cout : file;
    os << "config\tparams\tloss\tpsnr\n" << std::setprecision(9);
    run_ablation(table, data, tc, mc, [&](const AblationRow& r) {
        os << r.label << '\t' << r.params << '\t' << r.final_loss << '\t' << r.psnr << '\n';
        os.flush();
    });
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Density-aware single image dehazing: data synthesis, training, inference and evaluation"};
    app.require_subcommand(1);

    std::size_t scenes = 8, size = 64, test_scenes = 2;
    std::uint64_t seed = 0;
    std::string out, data, config, ckpt, in, density, pseudo, report, module, metrics, split;
    std::size_t channels = 64;
    std::vector<std::size_t> hw{256, 256};
    bool zero = false;
    int table = 1;
    std::optional<std::size_t> steps;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic hazy dataset");
    synth->add_option("--scenes", scenes, "Number of training scenes")->check(CLI::PositiveNumber);
    synth->add_option("--size", size, "Scene height and width")->check(CLI::Range(16, 4096));
    synth->add_option("--seed", seed, "Generator seed");
    synth->add_option("--test-scenes", test_scenes, "Number of held-out scenes");
    synth->add_option("--out", out, "Output directory")->required();

    auto* init = app.add_subcommand("init", "Write an untrained checkpoint");
    init->add_option("--config", config, "key=value config file")->check(CLI::ExistingFile);
    init->add_option("--out", out, "Checkpoint path")->required();
    init->add_flag("--zero", zero, "Zero every parameter (identity model)");

    auto* train = app.add_subcommand("train", "Train a model");
    train->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    train->add_option("--split", split, "Dataset split")->default_val("train");
    train->add_option("--config", config, "key=value config (model.* keys set the architecture)")
        ->check(CLI::ExistingFile);
    train->add_option("--out", out, "Checkpoint path")->required();
    train->add_option("--metrics", metrics, "Metrics TSV (default: <out>.tsv)");
    train->add_option("--steps", steps, "Override the number of steps");

    auto* dehaze = app.add_subcommand("dehaze", "Dehaze one PPM image");
    dehaze->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    dehaze->add_option("--in", in, "Input PPM")->required()->check(CLI::ExistingFile);
    dehaze->add_option("--out", out, "Output PPM")->required();
    dehaze->add_option("--emit-density", density, "Write the density map as a jet-coloured PPM");
    dehaze->add_option("--emit-pseudo", pseudo, "Write the shallow-layer output as a PPM");

    auto* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
    eval->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    eval->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--split", split, "Dataset split")->default_val("test");
    eval->add_option("--report", report, "Report TSV")->required();

    auto* count = app.add_subcommand("count", "Parameter and FLOP count of a module");
    count->add_option("--module", module, "sha, se, fa, mhab, mhac or full")->required();
    count->add_option("--channels", channels, "Channels")->check(CLI::PositiveNumber);
    count->add_option("--hw", hw, "Input height and width")->expected(2)->check(CLI::PositiveNumber);

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient check");
    grad->add_option("--module", module, "Restrict to one group (e.g. sha, conv2d, full)");

    auto* ablate = app.add_subcommand("ablate", "Train an ablation ladder and tabulate final losses");
    ablate->add_option("--table", table, "Ladder: 1, 3 or 4")->required()->check(CLI::IsMember({1, 3, 4}));
    ablate->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    ablate->add_option("--split", split, "Dataset split")->default_val("train");
    ablate->add_option("--config", config, "key=value config")->check(CLI::ExistingFile);
    ablate->add_option("--steps", steps, "Steps per configuration");
    ablate->add_option("--out", out, "Output TSV (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*synth) return cmd_synth(scenes, size, seed, test_scenes, out);
        if (*init) return cmd_init(config, out, zero);
        if (*train) return cmd_train(data, split, config, out, metrics, steps);
        if (*dehaze) return cmd_dehaze(ckpt, in, out, density, pseudo);
        if (*eval) return cmd_eval(ckpt, data, split, report);
        if (*count) return cmd_count(module, channels, hw);
        if (*grad) return cmd_gradcheck(module);
        if (*ablate) return cmd_ablate(table, data, split, config, steps, out);
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    }
    return kUsage;
}
