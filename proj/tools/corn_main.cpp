// corn: generate / train / eval / ablate from the command line.
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <vector>

#include "CLI11.hpp"
#include "corn/trainer.hpp"

namespace {

using corn::RunConfig;

// Flags are applied after the profile and the config file, and only when given.
struct Overrides {
    std::vector<std::function<void(RunConfig&)>> setters;

    template <typename T, typename Apply>
    void add(CLI::App& app, const std::string& name, const std::string& help, Apply apply) {
        auto value = std::make_shared<T>();
        auto* opt = app.add_option(name, *value, help);
        setters.push_back([value, opt, apply](RunConfig& c) {
            if (opt->count() > 0) apply(c, *value);
        });
    }

    void add_flag(CLI::App& app, const std::string& name, const std::string& help,
                  std::function<void(RunConfig&, bool)> apply) {
        auto value = std::make_shared<bool>(false);
        auto* opt = app.add_option(name, *value, help);
        setters.push_back([value, opt, apply](RunConfig& c) {
            if (opt->count() > 0) apply(c, *value);
        });
    }

    void apply(RunConfig& c) const {
        for (const auto& s : setters) s(c);
    }
};

struct Common {
    std::string profile = "toy";
    std::string config_file;
    Overrides overrides;
};

void add_dataset_flags(CLI::App& app, Common& common) {
    auto& o = common.overrides;
    o.add<std::uint64_t>(app, "--seed", "run seed", [](RunConfig& c, auto v) { c.seed = v; });
    o.add<std::string>(app, "--data-dir", "dataset directory", [](RunConfig& c, auto v) { c.data_dir = v; });
    o.add<double>(app, "--test-fraction", "fraction of samples held out for testing",
                  [](RunConfig& c, auto v) { c.test_fraction = v; });
    o.add<double>(app, "--labeled-fraction", "fraction of training samples that keep masks",
                  [](RunConfig& c, auto v) { c.labeled_fraction = v; });
}

void add_generator_flags(CLI::App& app, Common& common) {
    auto& o = common.overrides;
    o.add<std::size_t>(app, "--count", "number of samples", [](RunConfig& c, auto v) { c.dataset.count = v; });
    o.add<std::size_t>(app, "--size", "image side length", [](RunConfig& c, auto v) { c.dataset.size = v; });
    o.add<std::uint64_t>(app, "--dataset-seed", "generator seed", [](RunConfig& c, auto v) { c.dataset.seed = v; });
    o.add<double>(app, "--difficulty", "0 = clean, 1 = hardest", [](RunConfig& c, auto v) { c.dataset.difficulty = v; });
}

void add_training_flags(CLI::App& app, Common& common) {
    auto& o = common.overrides;
    o.add<std::size_t>(app, "--crop-size", "training crop side", [](RunConfig& c, auto v) { c.crop_size = v; });
    o.add<std::size_t>(app, "--hidden", "hidden channels H", [](RunConfig& c, auto v) { c.hidden = v; });
    o.add<std::size_t>(app, "--classes", "segmentation classes C", [](RunConfig& c, auto v) { c.classes = v; });
    o.add<std::size_t>(app, "--proj-dim", "embedding dimension c'", [](RunConfig& c, auto v) { c.proj_dim = v; });
    o.add<double>(app, "--lr", "learning rate", [](RunConfig& c, auto v) { c.lr = v; });
    o.add<double>(app, "--momentum", "SGD momentum", [](RunConfig& c, auto v) { c.momentum = v; });
    o.add<double>(app, "--weight-decay", "L2 weight decay", [](RunConfig& c, auto v) { c.weight_decay = v; });
    o.add<std::size_t>(app, "--iterations", "training iterations (t_max)", [](RunConfig& c, auto v) { c.iterations = v; });
    o.add<double>(app, "--lambda-c", "CPS weight base", [](RunConfig& c, auto v) { c.lambda_c = v; });
    o.add<double>(app, "--lambda-d", "consistency weight base", [](RunConfig& c, auto v) { c.lambda_d = v; });
    o.add<double>(app, "--beta", "ramp ceiling", [](RunConfig& c, auto v) { c.beta = v; });
    o.add<std::size_t>(app, "--pool-slots", "pool slots per labeled instance", [](RunConfig& c, auto v) { c.pool_slots = v; });
    o.add<double>(app, "--alpha", "pool fusion weight on the old embedding", [](RunConfig& c, auto v) { c.alpha = v; });
    o.add<std::size_t>(app, "--anchors", "anchors per class (j)", [](RunConfig& c, auto v) { c.anchors_per_class = v; });
    o.add<std::size_t>(app, "--unlabeled", "unlabeled pixels per class (i)",
                       [](RunConfig& c, auto v) { c.unlabeled_per_class = v; });
    o.add<double>(app, "--low-conf-fraction", "share of anchors from low-confidence slots",
                  [](RunConfig& c, auto v) { c.low_conf_fraction = v; });
    o.add_flag(app, "--ccm", "enable the CORAL consistency module (true/false)",
               [](RunConfig& c, bool v) { c.ccm_on = v; });
    o.add_flag(app, "--dfp", "enable the dynamic feature pool (true/false)", [](RunConfig& c, bool v) { c.dfp_on = v; });
    o.add<std::string>(app, "--similarity", "coral | cosine",
                       [](RunConfig& c, auto v) { c.similarity = corn::parse_similarity(v); });
    o.add<std::string>(app, "--out-dir", "output directory", [](RunConfig& c, auto v) { c.out_dir = v; });
}

void add_common(CLI::App& app, Common& common) {
    app.add_option("--profile", common.profile, "toy | paper")->check(CLI::IsMember({"toy", "paper"}));
    app.add_option("--config", common.config_file, "JSON config; flags override it")->check(CLI::ExistingFile);
}

RunConfig resolve_unchecked(const Common& common) {
    RunConfig c = common.profile == "paper" ? RunConfig::paper_profile() : RunConfig::toy_profile();
    if (!common.config_file.empty()) {
        std::ifstream in(common.config_file);
        if (!in) throw std::runtime_error("cannot read config " + common.config_file);
        std::stringstream ss;
        ss << in.rdbuf();
        c = corn::config_from_json(ss.str(), c);
    }
    common.overrides.apply(c);
    return c;
}

// Bad values in the config file or flags are usage errors, not runtime failures.
RunConfig resolve(const Common& common) {
    try {
        return resolve_unchecked(common);
    } catch (const std::invalid_argument& e) {
        throw CLI::ValidationError("config", e.what());
    }
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::stringstream is(item);
        T v{};
        if (!(is >> v) || !is.eof()) throw CLI::ValidationError(what, "cannot parse '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw CLI::ValidationError(what, "empty list");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CORN semi-supervised segmentation toolkit"};
    app.require_subcommand(1);

    Common gen, tr, ev, ab;

    auto* generate = app.add_subcommand("generate", "write a synthetic dataset");
    add_common(*generate, gen);
    add_dataset_flags(*generate, gen);
    add_generator_flags(*generate, gen);

    auto* train = app.add_subcommand("train", "train both branches and write checkpoint + loss.csv");
    add_common(*train, tr);
    add_dataset_flags(*train, tr);
    add_training_flags(*train, tr);
    bool quiet = false;
    train->add_flag("--quiet", quiet, "no progress output");

    auto* eval = app.add_subcommand("eval", "score a checkpoint on the test split");
    std::string checkpoint, eval_data = "data", eval_out = "metrics.csv";
    double eval_test_fraction = 0.2;
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--data-dir", eval_data, "dataset directory");
    eval->add_option("--out", eval_out, "metrics CSV path");
    eval->add_option("--test-fraction", eval_test_fraction, "fraction of samples held out for testing");

    auto* ablate = app.add_subcommand("ablate", "train the four-variant grid and write ablation.csv");
    add_common(*ablate, ab);
    add_dataset_flags(*ablate, ab);
    add_training_flags(*ablate, ab);
    std::string fractions = "0.05,0.1,0.2", seeds = "0";
    ablate->add_option("--fractions", fractions, "comma-separated labeled fractions");
    ablate->add_option("--seeds", seeds, "comma-separated seeds averaged per row");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*generate) {
            const auto c = resolve(gen);
            corn::cmd_generate(c);
            std::printf("wrote %zu samples to %s\n", c.dataset.count, c.data_dir.string().c_str());
        } else if (*train) {
            const auto c = resolve(tr);
            const std::size_t every = std::max<std::size_t>(1, c.iterations / 20);
            corn::cmd_train(c, [&](const corn::LossRecord& r) {
                if (quiet || (r.iter % every != 0 && r.iter + 1 != c.iterations)) return;
                std::printf("iter %6zu  L_s %.5f  l_c %.5f  l_d %.5f  total %.5f\n", r.iter, r.supervised, r.cps,
                            r.consistency, r.total);
                std::fflush(stdout);
            });
            std::printf("wrote %s\n", c.out_dir.string().c_str());
        } else if (*eval) {
            const auto rows = corn::cmd_eval(checkpoint, eval_data, eval_out, eval_test_fraction);
            const auto& m = rows.back();
            std::printf("%zu test samples  dice %.4f  jaccard %.4f  hd95 %.4f  asd %.4f\n", rows.size() - 1, m.dice,
                        m.jaccard, m.hd95, m.asd);
        } else if (*ablate) {
            const auto c = resolve(ab);
            const auto fr = parse_list<double>(fractions, "--fractions");
            const auto sd = parse_list<std::uint64_t>(seeds, "--seeds");
            const auto dataset = corn::load_dataset(c.data_dir);
            const auto rows = corn::run_ablation(c, dataset.samples, fr, sd, [](const corn::AblationRow& r) {
                std::printf("%.2f %-8s dice %.4f  hd95 %.4f\n", r.labeled_fraction, r.variant.name.c_str(), r.mean.dice,
                            r.mean.hd95);
                std::fflush(stdout);
            });
            std::filesystem::create_directories(c.out_dir);
            std::ofstream out(c.out_dir / "ablation.csv", std::ios::binary);
            corn::write_ablation_csv(out, rows);
            if (!out) throw std::runtime_error("failed writing ablation.csv");
        }
    } catch (const CLI::ValidationError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
