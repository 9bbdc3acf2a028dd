#pragma once

// Toy dual-branch segmentation network: per branch two 3x3 conv + ReLU
// layers, a 1x1 class head with softmax, and a 1x1 projection head on the
// penultimate features. Gradients are computed by hand in reverse mode.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "corn/image.hpp"
#include "corn/numerics.hpp"

namespace corn {

struct Arch {
    std::size_t in_channels = 1;
    std::size_t hidden = 8;
    std::size_t classes = 2;
    std::size_t proj_dim = 8;

    std::size_t parameter_count() const;
    bool operator==(const Arch&) const = default;
};

/// Offsets of each tensor inside a branch's flat parameter vector.
struct ParamLayout {
    explicit ParamLayout(const Arch& arch);

    std::size_t conv1_w, conv1_b;  // hidden x in x 3 x 3, hidden
    std::size_t conv2_w, conv2_b;  // hidden x hidden x 3 x 3, hidden
    std::size_t head_w, head_b;    // classes x hidden, classes
    std::size_t proj_w, proj_b;    // proj_dim x hidden, proj_dim
    std::size_t total;
};

struct Branch {
    std::vector<double> params;
    std::vector<double> velocity;

    bool operator==(const Branch&) const = default;
};

struct DualModelState {
    Arch arch;
    Branch main;
    Branch aux;
    std::uint64_t version = 0;  ///< incremented by every optimizer step

    bool operator==(const DualModelState&) const = default;
};

/// Two independently initialized branches. Conv weights are He-uniform,
/// head weights uniform in +-1/sqrt(hidden), biases zero.
/// Throws if seed_main == seed_aux.
DualModelState init_model(const Arch& arch, std::uint64_t seed_main, std::uint64_t seed_aux);

/// A state with every parameter set to zero.
DualModelState zero_model(const Arch& arch);

struct BranchForward {
    Matrix probs;   ///< S x classes
    Matrix embed;   ///< S x proj_dim
    std::vector<double> pre1, act1, pre2, act2;  ///< hidden x H x W activations
};

struct ForwardOutput {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> input;
    BranchForward main;
    BranchForward aux;
    std::uint64_t version = 0;
};

ForwardOutput forward(const DualModelState& state, const Image& image);

/// Class probabilities of one branch only (inference).
Matrix predict_probs(const Arch& arch, const std::vector<double>& params, const Image& image);

/// Loss gradients on the forward outputs. Empty matrices stand for zero.
struct OutputGrads {
    Matrix probs_main;
    Matrix probs_aux;
    Matrix embed_main;
    Matrix embed_aux;
};

struct Gradients {
    std::vector<double> main;
    std::vector<double> aux;
};

Gradients zero_gradients(const Arch& arch);

/// Accumulates parameter gradients for one image into `grads`.
/// Throws "stale cache" if the state has stepped since the forward pass.
void backward(const DualModelState& state, const ForwardOutput& output, const OutputGrads& output_grads,
              Gradients& grads);

struct SgdConfig {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
};

/// v <- momentum * v + g + weight_decay * theta; theta <- theta - lr * v.
/// Throws "diverged" on a non-finite gradient.
void sgd_step(DualModelState& state, const Gradients& grads, const SgdConfig& config = {});

/// Versioned little-endian checkpoint ("CRN1").
void save_checkpoint(const DualModelState& state, std::ostream& out);
DualModelState load_checkpoint(std::istream& in);

}  // namespace corn
