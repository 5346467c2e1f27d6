#pragma once

#include "mvgamba/diff.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvg {

template <typename T>
struct NamedParam {
    std::string name;
    Var<T> var;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
void zero_grads(const ParamList<T>& params);

/// Raised when a gradient contains NaN or infinity; no parameter is modified.
class NonFiniteGradient : public std::runtime_error {
public:
    explicit NonFiniteGradient(std::string parameter)
        : std::runtime_error("non-finite gradient in parameter " + parameter), parameter_(std::move(parameter)) {}
    const std::string& parameter() const { return parameter_; }

private:
    std::string parameter_;
};

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

/// AdamW with decoupled weight decay and bias-corrected moments. State is
/// keyed by parameter name, so registration order does not matter.
template <typename T>
class AdamW {
public:
    struct Moments {
        std::vector<T> m;
        std::vector<T> v;
    };

    explicit AdamW(AdamWConfig config = {}) : config_(config) {}

    void step(const ParamList<T>& params) { step(params, config_.lr); }
    void step(const ParamList<T>& params, double lr);

    const AdamWConfig& config() const { return config_; }
    std::int64_t steps() const { return t_; }
    void set_steps(std::int64_t t) { t_ = t; }
    std::map<std::string, Moments>& moments() { return state_; }
    const std::map<std::string, Moments>& moments() const { return state_; }

private:
    AdamWConfig config_;
    std::int64_t t_ = 0;
    std::map<std::string, Moments> state_;
};

/// Linear warm-up from 0 to peak, then cosine decay from peak to floor.
double lr_at(double epoch, double total_epochs, double warmup_epochs, double peak, double floor);

/// Scales all gradients by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the norm before clipping.
template <typename T>
double clip_grad_norm(const ParamList<T>& params, double max_norm);

// Checkpoints: little-endian "MVGB", u32 version, u32 count, then per tensor
// {u32 name length, name bytes, u32 ndim, u32 dims[ndim], f32 data[]}.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

template <typename T>
NamedTensor to_named_tensor(const std::string& name, const Var<T>& var);

/// Copies the parameters and the optimizer state (under "opt/") into tensors.
template <typename T>
std::vector<NamedTensor> export_state(const ParamList<T>& params, const AdamW<T>* optimizer);
/// Restores values (and optimizer state when given). Every parameter must be
/// present with a matching shape.
template <typename T>
void import_state(const std::vector<NamedTensor>& tensors, const ParamList<T>& params, AdamW<T>* optimizer);

}  // namespace mvg
