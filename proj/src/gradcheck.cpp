#include "mvgamba/gradcheck.hpp"

#include "mvgamba/ops.hpp"
#include "mvgamba/rng.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mvg {

std::string GradCheckReport::summary() const {
    std::ostringstream os;
    os << "checked " << coordinates << " coordinates, max rel error " << max_rel_error << ", " << failures.size()
       << " failures";
    for (std::size_t i = 0; i < std::min<std::size_t>(failures.size(), 5); ++i) {
        const auto& f = failures[i];
        os << "\n  input " << f.input << " [" << f.index << "]: analytic " << f.analytic << " numeric " << f.numeric;
    }
    return os.str();
}

GradCheckReport grad_check(const GradCheckFn& fn, const std::vector<Var<double>>& inputs,
                           const GradCheckOptions& options) {
    for (const auto& in : inputs) {
        if (!in.defined() || !in.requires_grad() || !in.node().is_leaf()) {
            throw std::invalid_argument("grad_check: inputs must be parameter leaves");
        }
    }
    Rng rng(options.seed, "gradcheck");
    std::vector<double> weights;
    auto scalarize = [&](const Var<double>& out) {
        if (weights.empty()) {
            weights.resize(out.size());
            if (out.size() == 1) {
                weights[0] = 1.0;
            } else {
                for (double& w : weights) w = rng.uniform(-1.0, 1.0);
            }
        }
        return weighted_sum(out, weights);
    };

    for (auto in : inputs) in.zero_grad();
    const Var<double> loss = scalarize(fn(inputs));
    backward(loss);

    GradCheckReport report;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Var<double> in = inputs[k];
        const std::vector<double> analytic(in.grad().begin(), in.grad().end());
        std::vector<std::size_t> coords(in.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (options.max_coordinates > 0 && coords.size() > options.max_coordinates) {
            Rng pick(options.seed, "gradcheck-coords", k);
            for (std::size_t i = 0; i < options.max_coordinates; ++i) {
                std::swap(coords[i], coords[i + pick.below(coords.size() - i)]);
            }
            coords.resize(options.max_coordinates);
        }
        auto values = in.mutable_value();
        for (const std::size_t i : coords) {
            const double saved = values[i];
            values[i] = saved + options.step;
            const double plus = scalarize(fn(inputs)).item();
            values[i] = saved - options.step;
            const double minus = scalarize(fn(inputs)).item();
            values[i] = saved;
            const double numeric = (plus - minus) / (2.0 * options.step);
            const double a = analytic[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), options.magnitude_floor});
            const double err = std::abs(a - numeric) / denom;
            report.max_rel_error = std::max(report.max_rel_error, err);
            ++report.coordinates;
            if (!(err < options.tolerance)) report.failures.push_back({k, i, a, numeric, err});
        }
    }
    return report;
}

}  // namespace mvg
