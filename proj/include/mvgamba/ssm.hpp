#pragma once

#include "mvgamba/config.hpp"
#include "mvgamba/diff.hpp"
#include "mvgamba/optim.hpp"
#include "mvgamba/tokenizer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mvg {

/// Diagonal selective scan over T steps, E channels and N states:
///   h_t = exp(delta_t A) h_{t-1} + delta_t B_t u_t,   h_{-1} = 0
///   y_t = C_t . h_t + D u_t
/// Shapes: u, delta [T, E]; A [E, N] (negative); B, C [T, N]; D [E].
/// Rejects non-positive delta.
template <typename T>
Var<T> selective_scan(const Var<T>& u, const Var<T>& delta, const Var<T>& a, const Var<T>& b, const Var<T>& c,
                      const Var<T>& d);

template <typename T>
struct SsmBlockParams {
    Var<T> norm;         // [C]
    Var<T> in_proj;      // [2E, C]
    Var<T> conv_weight;  // [E, K]
    Var<T> conv_bias;    // [E]
    Var<T> x_proj;       // [R + 2N, E]
    Var<T> dt_proj;      // [E, R]
    Var<T> dt_bias;      // [E]
    Var<T> a_log;        // [E, N], A = -exp(a_log)
    Var<T> skip;         // [E]
    Var<T> out_proj;     // [C, E]
    std::size_t dt_rank = 0;
    std::size_t state = 0;

    void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct ReconstructorParams {
    std::vector<SsmBlockParams<T>> blocks;
    Var<T> final_norm;  // [C]

    void collect(ParamList<T>& out) const;
};

template <typename T>
SsmBlockParams<T> init_ssm_block(const ModelConfig& config, std::uint64_t seed, std::size_t index);
template <typename T>
ReconstructorParams<T> init_reconstructor(const ModelConfig& config, std::uint64_t seed);

/// Pre-norm selective-scan block with gated output and residual add.
template <typename T>
Var<T> mamba_block(const Var<T>& x, const SsmBlockParams<T>& params);

/// All blocks followed by the final RMS norm; length is preserved.
template <typename T>
Var<T> reconstructor_forward(const Var<T>& tokens, const ReconstructorParams<T>& params);
template <typename T>
TokenSequence<T> reconstructor_forward(const TokenSequence<T>& seq, const ReconstructorParams<T>& params);

/// Self-attention FLOPs: 4 L D^2 + 2 L^2 D.
double attention_flops(double length, double width);
/// Selective-scan FLOPs: 3 L (2D) N for the scan plus L (2D) N for the readout.
double ssm_flops(double length, double width, double state);

}  // namespace mvg
