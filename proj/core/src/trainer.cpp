#include "corn/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace corn {

using nlohmann::json;

RunConfig RunConfig::toy_profile() { return RunConfig{}; }

RunConfig RunConfig::paper_profile() {
    RunConfig c;
    c.proj_dim = 64;
    c.anchors_per_class = 256;
    c.unlabeled_per_class = 12800;
    c.iterations = 15000;
    return c;
}

std::string similarity_name(Similarity s) { return s == Similarity::coral ? "coral" : "cosine"; }

Similarity parse_similarity(const std::string& name) {
    if (name == "coral") return Similarity::coral;
    if (name == "cosine") return Similarity::cosine;
    throw std::invalid_argument("unknown similarity '" + name + "' (expected coral|cosine)");
}

std::string to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["seed"] = c.seed;
    j["data_dir"] = c.data_dir.string();
    j["count"] = c.dataset.count;
    j["size"] = c.dataset.size;
    j["dataset_seed"] = c.dataset.seed;
    j["difficulty"] = c.dataset.difficulty;
    j["test_fraction"] = c.test_fraction;
    j["labeled_fraction"] = c.labeled_fraction;
    j["crop_size"] = c.crop_size;
    j["hidden"] = c.hidden;
    j["classes"] = c.classes;
    j["proj_dim"] = c.proj_dim;
    j["lr"] = c.lr;
    j["momentum"] = c.momentum;
    j["weight_decay"] = c.weight_decay;
    j["iterations"] = c.iterations;
    j["lambda_c"] = c.lambda_c;
    j["lambda_d"] = c.lambda_d;
    j["beta"] = c.beta;
    j["pool_slots"] = c.pool_slots;
    j["alpha"] = c.alpha;
    j["anchors_per_class"] = c.anchors_per_class;
    j["unlabeled_per_class"] = c.unlabeled_per_class;
    j["low_conf_fraction"] = c.low_conf_fraction;
    j["ccm_on"] = c.ccm_on;
    j["dfp_on"] = c.dfp_on;
    j["similarity"] = similarity_name(c.similarity);
    j["out_dir"] = c.out_dir.string();
    return j.dump(2);
}

RunConfig config_from_json(const std::string& json_text, RunConfig base) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
    RunConfig c = base;
    if (j.contains("profile")) {
        const auto p = j.at("profile").get<std::string>();
        if (p == "paper") {
            c = RunConfig::paper_profile();
        } else if (p != "toy") {
            throw std::invalid_argument("config: unknown profile '" + p + "'");
        }
    }
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "profile") continue;
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "data_dir") c.data_dir = v.get<std::string>();
            else if (key == "count") c.dataset.count = v.get<std::size_t>();
            else if (key == "size") c.dataset.size = v.get<std::size_t>();
            else if (key == "dataset_seed") c.dataset.seed = v.get<std::uint64_t>();
            else if (key == "difficulty") c.dataset.difficulty = v.get<double>();
            else if (key == "test_fraction") c.test_fraction = v.get<double>();
            else if (key == "labeled_fraction") c.labeled_fraction = v.get<double>();
            else if (key == "crop_size") c.crop_size = v.get<std::size_t>();
            else if (key == "hidden") c.hidden = v.get<std::size_t>();
            else if (key == "classes") c.classes = v.get<std::size_t>();
            else if (key == "proj_dim") c.proj_dim = v.get<std::size_t>();
            else if (key == "lr") c.lr = v.get<double>();
            else if (key == "momentum") c.momentum = v.get<double>();
            else if (key == "weight_decay") c.weight_decay = v.get<double>();
            else if (key == "iterations") c.iterations = v.get<std::size_t>();
            else if (key == "lambda_c") c.lambda_c = v.get<double>();
            else if (key == "lambda_d") c.lambda_d = v.get<double>();
            else if (key == "beta") c.beta = v.get<double>();
            else if (key == "pool_slots") c.pool_slots = v.get<std::size_t>();
            else if (key == "alpha") c.alpha = v.get<double>();
            else if (key == "anchors_per_class") c.anchors_per_class = v.get<std::size_t>();
            else if (key == "unlabeled_per_class") c.unlabeled_per_class = v.get<std::size_t>();
            else if (key == "low_conf_fraction") c.low_conf_fraction = v.get<double>();
            else if (key == "ccm_on") c.ccm_on = v.get<bool>();
            else if (key == "dfp_on") c.dfp_on = v.get<bool>();
            else if (key == "similarity") c.similarity = parse_similarity(v.get<std::string>());
            else if (key == "out_dir") c.out_dir = v.get<std::string>();
            else throw std::invalid_argument("config: unknown key '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    return c;
}

BatchImages BatchImages::from(const MiniBatch& batch) {
    BatchImages out;
    for (const auto& c : batch.labeled) {
        out.labeled.push_back(c.image);
        out.masks.push_back(c.mask);
        out.instances.push_back(c.instance);
    }
    for (const auto& c : batch.unlabeled) out.unlabeled.push_back(c.image);
    return out;
}

std::vector<ForwardOutput> forward_batch(const DualModelState& state, const BatchImages& images) {
    std::vector<ForwardOutput> out;
    out.reserve(images.size());
    for (const auto& img : images.labeled) out.push_back(forward(state, img));
    for (const auto& img : images.unlabeled) out.push_back(forward(state, img));
    return out;
}

namespace {

void add_scaled(Matrix& dst, const Matrix& src, double scale) {
    if (dst.empty()) dst = Matrix(src.rows(), src.cols());
    for (std::size_t i = 0; i < src.size(); ++i) dst.data()[i] += scale * src.data()[i];
}

// Stacks the rows of the given matrices.
Matrix stack(const std::vector<const Matrix*>& parts) {
    std::size_t rows = 0;
    const std::size_t cols = parts.front()->cols();
    for (const auto* p : parts) rows += p->rows();
    Matrix out(rows, cols);
    std::size_t r = 0;
    for (const auto* p : parts) {
        for (std::size_t k = 0; k < p->rows(); ++k, ++r) std::copy(p->row(k).begin(), p->row(k).end(), out.row(r).begin());
    }
    return out;
}

Matrix gather(const std::vector<ForwardOutput>& forwards, std::size_t first_unlabeled,
              const std::vector<std::pair<std::size_t, std::size_t>>& selection, bool main_branch) {
    const auto& probe = main_branch ? forwards[first_unlabeled].main.embed : forwards[first_unlabeled].aux.embed;
    Matrix out(selection.size(), probe.cols());
    for (std::size_t r = 0; r < selection.size(); ++r) {
        const auto& f = forwards[first_unlabeled + selection[r].first];
        const auto& z = main_branch ? f.main.embed : f.aux.embed;
        const auto src = z.row(selection[r].second);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

std::vector<int> flatten(const LabelMap& m) { return m.labels; }

}  // namespace

ObjectiveValue evaluate_objective(const DualModelState& state, const std::vector<ForwardOutput>& forwards,
                                  const BatchImages& images, const StepPlan& plan, const LossWeights& weights,
                                  Gradients* grads) {
    const std::size_t n_lab = images.labeled.size();
    const std::size_t n_all = images.size();
    if (forwards.size() != n_all) throw std::invalid_argument("evaluate_objective: forward count mismatch");
    if (n_lab == 0) throw std::invalid_argument("evaluate_objective: batch has no labeled images");
    if (plan.pseudo_main.size() != n_all || plan.pseudo_aux.size() != n_all) {
        throw std::invalid_argument("evaluate_objective: plan does not match batch");
    }

    ObjectiveValue v;
    v.lambdas = rampup_weight(weights);
    std::vector<OutputGrads> out_grads(n_all);

    for (std::size_t k = 0; k < n_lab; ++k) {
        const auto term = supervised_loss_grad(forwards[k].main.probs, forwards[k].aux.probs, flatten(images.masks[k]));
        v.supervised += term.value / static_cast<double>(n_lab);
        add_scaled(out_grads[k].probs_main, term.grad_p1, 1.0 / static_cast<double>(n_lab));
        add_scaled(out_grads[k].probs_aux, term.grad_p2, 1.0 / static_cast<double>(n_lab));
    }
    for (std::size_t k = 0; k < n_all; ++k) {
        const auto term = cps_loss_grad(forwards[k].main.probs, forwards[k].aux.probs, plan.pseudo_main[k],
                                        plan.pseudo_aux[k]);
        const double scale = v.lambdas.lambda_c / static_cast<double>(n_all);
        v.cps += term.value / static_cast<double>(n_all);
        add_scaled(out_grads[k].probs_main, term.grad_p1, scale);
        add_scaled(out_grads[k].probs_aux, term.grad_p2, scale);
    }
    if (plan.consistency_active()) {
        const FeatureMatrix zm(gather(forwards, n_lab, plan.selection, true));
        const FeatureMatrix za(gather(forwards, n_lab, plan.selection, false));
        const auto term = consistency_term(zm, za, *plan.anchors, plan.similarity);
        v.consistency = term.value;
        for (std::size_t r = 0; r < plan.selection.size(); ++r) {
            const auto [img, px] = plan.selection[r];
            auto& og = out_grads[n_lab + img];
            const auto& f = forwards[n_lab + img];
            if (og.embed_main.empty()) og.embed_main = Matrix(f.main.embed.rows(), f.main.embed.cols());
            if (og.embed_aux.empty()) og.embed_aux = Matrix(f.aux.embed.rows(), f.aux.embed.cols());
            for (std::size_t d = 0; d < zm.dim(); ++d) {
                og.embed_main(px, d) += v.lambdas.lambda_d * term.grad_main(r, d);
                og.embed_aux(px, d) += v.lambdas.lambda_d * term.grad_aux(r, d);
            }
        }
    }
    v.total = v.supervised + v.lambdas.lambda_c * v.cps + v.lambdas.lambda_d * v.consistency;

    if (grads != nullptr) {
        for (std::size_t k = 0; k < n_all; ++k) backward(state, forwards[k], out_grads[k], *grads);
    }
    return v;
}

StepPlan make_plan(const RunConfig& config, const std::vector<ForwardOutput>& forwards, const BatchImages& images,
                   FeaturePool* pool, Rng& rng) {
    StepPlan plan;
    for (const auto& f : forwards) {
        plan.pseudo_main.push_back(argmax_rows(f.main.probs));
        plan.pseudo_aux.push_back(argmax_rows(f.aux.probs));
    }
    const bool consistency = config.ccm_on || config.dfp_on;
    if (!consistency || images.unlabeled.empty()) return plan;
    plan.similarity = config.ccm_on ? config.similarity : Similarity::cosine;

    const std::size_t n_lab = images.labeled.size();
    std::vector<const Matrix*> p1, p2, zm, za;
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (std::size_t k = n_lab; k < forwards.size(); ++k) {
        p1.push_back(&forwards[k].main.probs);
        p2.push_back(&forwards[k].aux.probs);
        zm.push_back(&forwards[k].main.embed);
        za.push_back(&forwards[k].aux.embed);
        offsets.push_back(offset);
        offset += forwards[k].main.probs.rows();
    }
    const Matrix p1_all = stack(p1);
    const FeatureMatrix zm_all(stack(zm));
    const FeatureMatrix za_all(stack(za));

    std::optional<UnlabeledSelection> sel;
    if (config.dfp_on) {
        sel = sample_unlabeled(p1_all, stack(p2), zm_all, za_all, config.unlabeled_per_class);
    } else {
        sel = sample_unlabeled_uniform(p1_all, zm_all, za_all, config.unlabeled_per_class, rng);
    }
    if (!sel) return plan;

    if (config.dfp_on) {
        if (pool == nullptr) throw std::invalid_argument("make_plan: dfp_on requires a feature pool");
        if (pool->ready()) plan.anchors = pool->sample_anchors(config.anchors_per_class, config.low_conf_fraction).features;
    } else {
        // Pool-free anchors straight from the labeled crops, no correctness filter.
        std::vector<const Matrix*> lab;
        std::vector<int> labels;
        Matrix mean_embed;
        std::vector<Matrix> merged;
        for (std::size_t k = 0; k < n_lab; ++k) {
            Matrix m = forwards[k].main.embed;
            for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = 0.5 * (m.data()[i] + forwards[k].aux.embed.data()[i]);
            merged.push_back(std::move(m));
            labels.insert(labels.end(), images.masks[k].labels.begin(), images.masks[k].labels.end());
        }
        for (const auto& m : merged) lab.push_back(&m);
        const auto anchors = sample_anchors_uniform(FeatureMatrix(stack(lab)), labels, config.classes,
                                                    config.anchors_per_class, rng);
        if (anchors) plan.anchors = anchors->features;
    }

    for (const std::size_t pos : sel->positions) {
        std::size_t img = offsets.size() - 1;
        while (offsets[img] > pos) --img;
        plan.selection.emplace_back(img, pos - offsets[img]);
    }
    return plan;
}

void update_pool_from_batch(FeaturePool& pool, const std::vector<ForwardOutput>& forwards, const BatchImages& images) {
    for (std::size_t k = 0; k < images.labeled.size(); ++k) {
        const auto& f = forwards[k];
        const auto pred1 = argmax_rows(f.main.probs);
        const auto pred2 = argmax_rows(f.aux.probs);
        std::vector<double> conf(pred1.size());
        for (std::size_t i = 0; i < conf.size(); ++i) {
            const auto r1 = f.main.probs.row(i);
            const auto r2 = f.aux.probs.row(i);
            conf[i] = std::min(*std::max_element(r1.begin(), r1.end()), *std::max_element(r2.begin(), r2.end()));
        }
        pool.update(images.instances[k], FeatureMatrix(f.main.embed), FeatureMatrix(f.aux.embed), pred1, pred2,
                    images.masks[k].labels, conf);
    }
}

TrainResult train(const RunConfig& config, const LabeledSplit& data, const ProgressFn& progress) {
    if (config.iterations == 0) throw std::invalid_argument("train: iterations must be >= 1");
    if (data.labeled.empty()) throw std::invalid_argument("train: no labeled samples");
    const Arch arch = config.arch();
    TrainResult result{init_model(arch, mix_seed(config.seed, 101), mix_seed(config.seed, 102)),
                       FeaturePool(data.labeled.size(), config.pool_slots, config.classes, config.proj_dim,
                                   config.alpha, mix_seed(config.seed, 103)),
                       {}};
    Rng sampler(mix_seed(config.seed, 104));
    const std::uint64_t batch_seed = mix_seed(config.seed, 105);
    result.curve.reserve(config.iterations);

    for (std::size_t t = 0; t < config.iterations; ++t) {
        const BatchImages images = BatchImages::from(crop_batch(data, config.crop_size, mix_seed(batch_seed, t)));
        const auto forwards = forward_batch(result.state, images);
        const StepPlan plan = make_plan(config, forwards, images, config.dfp_on ? &result.pool : nullptr, sampler);
        const LossWeights weights{config.lambda_c, config.lambda_d, config.beta, t, config.iterations};
        Gradients grads = zero_gradients(arch);
        const auto value = evaluate_objective(result.state, forwards, images, plan, weights, &grads);
        if (!std::isfinite(value.total)) {
            throw std::runtime_error("diverged at iteration " + std::to_string(t) + ": non-finite loss (L_s=" +
                                     std::to_string(value.supervised) + ", l_c=" + std::to_string(value.cps) +
                                     ", l_d=" + std::to_string(value.consistency) + ")");
        }
        LossRecord rec{t, value.supervised, value.cps, value.consistency, value.lambdas.lambda_c,
                       value.lambdas.lambda_d, value.total};
        result.curve.push_back(rec);
        if (progress) progress(rec);
        try {
            sgd_step(result.state, grads, config.sgd());
        } catch (const std::runtime_error& e) {
            throw std::runtime_error(std::string(e.what()) + " at iteration " + std::to_string(t));
        }
        if (config.dfp_on) update_pool_from_batch(result.pool, forwards, images);
    }
    return result;
}

void write_loss_csv(std::ostream& out, const std::vector<LossRecord>& curve) {
    out << "iter,L_s,l_c,l_d,lambda_c,lambda_d,total\n";
    char buf[256];
    for (const auto& r : curve) {
        std::snprintf(buf, sizeof(buf), "%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.iter, r.supervised, r.cps,
                      r.consistency, r.lambda_c, r.lambda_d, r.total);
        out << buf;
    }
}

std::vector<double> smoothed_consistency(const std::vector<LossRecord>& curve, std::size_t window) {
    if (window == 0) throw std::invalid_argument("smoothed_consistency: window must be >= 1");
    std::vector<double> out(curve.size());
    double sum = 0.0;
    for (std::size_t t = 0; t < curve.size(); ++t) {
        sum += curve[t].consistency;
        if (t >= window) sum -= curve[t - window].consistency;
        out[t] = sum / static_cast<double>(std::min(t + 1, window));
    }
    return out;
}

std::vector<MetricRow> evaluate(const DualModelState& state, const std::vector<SegSample>& samples) {
    std::vector<MetricRow> rows;
    rows.reserve(samples.size());
    for (const auto& s : samples) {
        const auto labels = argmax_rows(predict_probs(state.arch, state.main.params, s.image));
        LabelMap pred(s.image.height, s.image.width);
        pred.labels = labels;
        rows.push_back(evaluate_pair(std::to_string(s.id), BinaryMask::from_labels(pred), BinaryMask::from_labels(s.mask)));
    }
    return rows;
}

LabeledSplit make_training_split(const RunConfig& config, const std::vector<SegSample>& train_samples) {
    return split(train_samples, config.labeled_fraction, mix_seed(config.seed, 100));
}

void cmd_generate(const RunConfig& config) {
    auto samples = generate_dataset(config.dataset);
    const auto parts = train_test_split(samples, config.test_fraction);
    // The labeled flags are informational; tiny datasets may not admit a split at all.
    std::optional<LabeledSplit> lab;
    try {
        lab = make_training_split(config, parts.train);
    } catch (const std::invalid_argument&) {
    }
    for (auto& s : samples) {
        s.labeled = lab && std::any_of(lab->labeled.begin(), lab->labeled.end(),
                                       [&](const LabeledSample& l) { return l.id == s.id; });
    }
    save_dataset(config.data_dir, samples,
                 DatasetManifest{config.dataset, config.test_fraction, config.labeled_fraction, mix_seed(config.seed, 100)});
}

namespace {

template <typename Fn>
void write_file(const std::filesystem::path& path, Fn&& fn) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    fn(out);
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

TrainResult cmd_train(const RunConfig& config, const ProgressFn& progress) {
    const auto dataset = load_dataset(config.data_dir);
    const auto parts = train_test_split(dataset.samples, config.test_fraction);
    auto result = train(config, make_training_split(config, parts.train), progress);
    std::filesystem::create_directories(config.out_dir);
    write_file(config.out_dir / "checkpoint.bin", [&](std::ostream& o) { save_checkpoint(result.state, o); });
    write_file(config.out_dir / "pool.bin", [&](std::ostream& o) { result.pool.save(o); });
    write_file(config.out_dir / "loss.csv", [&](std::ostream& o) { write_loss_csv(o, result.curve); });
    write_file(config.out_dir / "config.json", [&](std::ostream& o) { o << to_json(config) << '\n'; });
    return result;
}

std::vector<MetricRow> cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                                const std::filesystem::path& out_csv, double test_fraction) {
    std::ifstream in(checkpoint, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + checkpoint.string());
    const auto state = load_checkpoint(in);
    const auto dataset = load_dataset(data_dir);
    auto rows = evaluate(state, train_test_split(dataset.samples, test_fraction).test);
    if (rows.empty()) throw std::runtime_error("test split is empty");
    rows.push_back(mean_row(rows));
    if (out_csv.has_parent_path()) std::filesystem::create_directories(out_csv.parent_path());
    write_file(out_csv, [&](std::ostream& o) { write_metrics_csv(o, rows); });
    return rows;
}

std::vector<AblationVariant> ablation_variants() {
    return {{"baseline", false, false}, {"ccm", true, false}, {"dfp", false, true}, {"corn", true, true}};
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<SegSample>& dataset,
                                      const std::vector<double>& fractions, const std::vector<std::uint64_t>& seeds,
                                      const std::function<void(const AblationRow&)>& on_row) {
    if (fractions.empty() || seeds.empty()) throw std::invalid_argument("run_ablation: need fractions and seeds");
    const auto parts = train_test_split(dataset, base.test_fraction);
    std::vector<AblationRow> rows;
    for (const double f : fractions) {
        for (const auto& variant : ablation_variants()) {
            AblationRow row;
            row.labeled_fraction = f;
            row.variant = variant;
            row.seeds = seeds;
            std::vector<MetricRow> per_seed;
            for (const auto seed : seeds) {
                RunConfig cfg = base;
                cfg.seed = seed;
                cfg.labeled_fraction = f;
                cfg.ccm_on = variant.ccm_on;
                cfg.dfp_on = variant.dfp_on;
                const auto data = make_training_split(cfg, parts.train);
                row.labeled = data.labeled.size();
                row.unlabeled = data.unlabeled.size();
                const auto result = train(cfg, data);
                per_seed.push_back(mean_row(evaluate(result.state, parts.test)));
            }
            row.mean = mean_row(per_seed);
            row.mean.id = variant.name;
            if (on_row) on_row(row);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
    out << "labeled_fraction,labeled,unlabeled,variant,baseline,ccm,dfp,seeds,dice,jaccard,hd95,asd\n";
    char buf[256];
    for (const auto& r : rows) {
        std::string seeds;
        for (std::size_t k = 0; k < r.seeds.size(); ++k) seeds += (k ? ";" : "") + std::to_string(r.seeds[k]);
        std::snprintf(buf, sizeof(buf), "%.4g,%zu,%zu,%s,1,%d,%d,", r.labeled_fraction, r.labeled, r.unlabeled,
                      r.variant.name.c_str(), r.variant.ccm_on ? 1 : 0, r.variant.dfp_on ? 1 : 0);
        out << buf << seeds;
        std::snprintf(buf, sizeof(buf), ",%.10g,%.10g,%.10g,%.10g\n", r.mean.dice, r.mean.jaccard, r.mean.hd95, r.mean.asd);
        out << buf;
    }
}

std::vector<AblationRow> cmd_ablate(const RunConfig& config, const std::vector<double>& fractions,
                                    const std::vector<std::uint64_t>& seeds) {
    const auto dataset = load_dataset(config.data_dir);
    const auto rows = run_ablation(config, dataset.samples, fractions, seeds);
    std::filesystem::create_directories(config.out_dir);
    write_file(config.out_dir / "ablation.csv", [&](std::ostream& o) { write_ablation_csv(o, rows); });
    return rows;
}

}  // namespace corn
