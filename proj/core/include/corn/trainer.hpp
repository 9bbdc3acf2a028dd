#pragma once

// Training orchestration: run configuration, the per-step objective with its
// frozen step plan, the full training loop, evaluation and the ablation grid.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "corn/data.hpp"
#include "corn/losses.hpp"
#include "corn/metrics.hpp"
#include "corn/model.hpp"
#include "corn/pool.hpp"

namespace corn {

struct RunConfig {
    std::uint64_t seed = 0;

    // dataset
    std::filesystem::path data_dir = "data";
    DatasetParams dataset{};
    double test_fraction = 0.2;
    double labeled_fraction = 0.05;
    std::size_t crop_size = 24;

    // architecture
    std::size_t hidden = 8;
    std::size_t classes = 2;
    std::size_t proj_dim = 8;  // c'

    // optimizer
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::size_t iterations = 3000;  // t_max

    // loss weights
    double lambda_c = 0.1;
    double lambda_d = 0.1;
    double beta = 1.0;

    // feature pool and samplers
    std::size_t pool_slots = 4;            // N per labeled instance
    double alpha = 0.9;                    // fusion weight on the old embedding
    std::size_t anchors_per_class = 8;     // j
    std::size_t unlabeled_per_class = 64;  // i
    double low_conf_fraction = 0.1;

    // ablation switches
    bool ccm_on = true;
    bool dfp_on = true;
    Similarity similarity = Similarity::coral;

    std::filesystem::path out_dir = "runs/default";

    Arch arch() const { return {1, hidden, classes, proj_dim}; }
    SgdConfig sgd() const { return {lr, momentum, weight_decay}; }

    /// Desk-scale defaults (c' = 8, j = 8, i = 64).
    static RunConfig toy_profile();
    /// Full-scale CCM values (c' = 64, j = 256, i = 12800).
    static RunConfig paper_profile();
};

std::string to_json(const RunConfig& config);
/// Overlays the fields present in `json_text` onto `base`. Unknown keys throw.
RunConfig config_from_json(const std::string& json_text, RunConfig base = RunConfig::toy_profile());

std::string similarity_name(Similarity s);
Similarity parse_similarity(const std::string& name);

/// One mini-batch as images, with ground truth for the labeled part only.
struct BatchImages {
    std::vector<Image> labeled;
    std::vector<LabelMap> masks;
    std::vector<std::size_t> instances;  ///< pool instance id per labeled image
    std::vector<Image> unlabeled;

    std::size_t size() const noexcept { return labeled.size() + unlabeled.size(); }
    static BatchImages from(const MiniBatch& batch);
};

/// Everything the objective holds constant within one step: pseudo-labels,
/// the selected unlabeled pixel positions and the anchors.
struct StepPlan {
    std::vector<std::vector<int>> pseudo_main;  ///< per image, labeled first
    std::vector<std::vector<int>> pseudo_aux;
    std::vector<std::pair<std::size_t, std::size_t>> selection;  ///< (unlabeled image, pixel)
    std::optional<FeatureMatrix> anchors;
    Similarity similarity = Similarity::coral;

    bool consistency_active() const { return anchors.has_value() && !selection.empty(); }
};

struct ObjectiveValue {
    double supervised = 0.0;
    double cps = 0.0;
    double consistency = 0.0;
    RampedWeights lambdas;
    double total = 0.0;
};

/// forwards must hold forward(state, image) for every image of `images`,
/// labeled first. When `grads` is non-null the exact gradient of `total` is
/// accumulated into it.
ObjectiveValue evaluate_objective(const DualModelState& state, const std::vector<ForwardOutput>& forwards,
                                  const BatchImages& images, const StepPlan& plan, const LossWeights& weights,
                                  Gradients* grads);

std::vector<ForwardOutput> forward_batch(const DualModelState& state, const BatchImages& images);

/// Pseudo-labels from the forward pass plus the unlabeled selection and anchors
/// chosen per the ablation switches. `pool` is consulted when dfp_on.
StepPlan make_plan(const RunConfig& config, const std::vector<ForwardOutput>& forwards, const BatchImages& images,
                   FeaturePool* pool, Rng& rng);

/// Harvests the labeled part of a batch into the pool.
void update_pool_from_batch(FeaturePool& pool, const std::vector<ForwardOutput>& forwards, const BatchImages& images);

struct LossRecord {
    std::size_t iter = 0;
    double supervised = 0.0;
    double cps = 0.0;
    double consistency = 0.0;
    double lambda_c = 0.0;
    double lambda_d = 0.0;
    double total = 0.0;
};

struct TrainResult {
    DualModelState state;
    FeaturePool pool;
    std::vector<LossRecord> curve;
};

using ProgressFn = std::function<void(const LossRecord&)>;

/// The full training loop. Throws std::runtime_error("diverged ...") on a non-finite loss.
TrainResult train(const RunConfig& config, const LabeledSplit& data, const ProgressFn& progress = {});

void write_loss_csv(std::ostream& out, const std::vector<LossRecord>& curve);

/// Trailing moving average of the consistency column; entry t averages
/// iterations max(0, t - window + 1)..t.
std::vector<double> smoothed_consistency(const std::vector<LossRecord>& curve, std::size_t window);

/// Main-branch argmax on each sample, scored against its mask. Rows are
/// per sample, in input order.
std::vector<MetricRow> evaluate(const DualModelState& state, const std::vector<SegSample>& samples);

/// The labeled split used for a run: seeded from the run seed.
LabeledSplit make_training_split(const RunConfig& config, const std::vector<SegSample>& train);

// Subcommand bodies; each throws on failure.
void cmd_generate(const RunConfig& config);
TrainResult cmd_train(const RunConfig& config, const ProgressFn& progress = {});
std::vector<MetricRow> cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                                const std::filesystem::path& out_csv, double test_fraction = 0.2);

struct AblationVariant {
    std::string name;
    bool ccm_on;
    bool dfp_on;
};
/// baseline, +CCM, +DFP, +CCM+DFP in that order.
std::vector<AblationVariant> ablation_variants();

struct AblationRow {
    double labeled_fraction = 0.0;
    std::size_t labeled = 0;
    std::size_t unlabeled = 0;
    AblationVariant variant;
    std::vector<std::uint64_t> seeds;
    MetricRow mean;  ///< averaged over seeds
};

/// Trains every variant at every fraction for each seed on one shared dataset.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<SegSample>& dataset,
                                      const std::vector<double>& fractions, const std::vector<std::uint64_t>& seeds,
                                      const std::function<void(const AblationRow&)>& on_row = {});
void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);
std::vector<AblationRow> cmd_ablate(const RunConfig& config, const std::vector<double>& fractions,
                                    const std::vector<std::uint64_t>& seeds);

}  // namespace corn
