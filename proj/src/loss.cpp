#include "mvgamba/loss.hpp"

#include "mvgamba/ops.hpp"
#include "mvgamba/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace mvg {

void LossWeights::validate() const {
    if (!(mask >= 0.0 && perceptual >= 0.0 && reg >= 0.0)) {
        throw std::invalid_argument("loss weights must be non-negative");
    }
}

PerceptualImpl parse_perceptual(const std::string& text) {
    if (text == "off") return PerceptualImpl::kOff;
    if (text == "random-features") return PerceptualImpl::kRandomFeatures;
    throw std::invalid_argument("unknown perceptual loss '" + text + "' (expected off or random-features)");
}

std::string to_string(PerceptualImpl impl) { return impl == PerceptualImpl::kOff ? "off" : "random-features"; }

template <typename T>
Var<T> rgb_mse(const Var<T>& pred, const Var<T>& gt) {
    if (pred.shape() != gt.shape()) {
        throw std::invalid_argument("rgb_mse: shapes " + shape_string(pred.shape()) + " and " +
                                    shape_string(gt.shape()) + " differ");
    }
    return mse(pred, gt);
}

template <typename T>
Var<T> mask_mse(const Var<T>& pred_alpha, const Var<T>& gt_alpha) {
    if (pred_alpha.shape() != gt_alpha.shape()) {
        throw std::invalid_argument("mask_mse: shapes " + shape_string(pred_alpha.shape()) + " and " +
                                    shape_string(gt_alpha.shape()) + " differ");
    }
    return mse(pred_alpha, gt_alpha);
}

template <typename T>
Var<T> opacity_reg(const Var<T>& opacity) {
    return add_scalar(neg(mean(opacity)), T(1));
}

namespace {

constexpr std::size_t kPerceptualSize = 256;
constexpr std::size_t kFeatureWidths[] = {8, 16, 16};

template <typename T>
const std::vector<std::vector<T>>& feature_kernels() {
    static const std::vector<std::vector<T>> kernels = [] {
        std::vector<std::vector<T>> ks;
        std::size_t cin = 3;
        for (std::size_t layer = 0; layer < std::size(kFeatureWidths); ++layer) {
            const std::size_t cout = kFeatureWidths[layer];
            Rng rng(1234, "perceptual", layer);
            std::vector<T> k(cout * 9 * cin);
            const double std = std::sqrt(2.0 / static_cast<double>(9 * cin));
            for (T& v : k) v = static_cast<T>(std * rng.normal());
            ks.push_back(std::move(k));
            cin = cout;
        }
        return ks;
    }();
    return kernels;
}

template <typename T>
std::vector<Var<T>> features(const Var<T>& image) {
    std::vector<Var<T>> out;
    Var<T> x = resize_bilinear(image, kPerceptualSize, kPerceptualSize);
    const auto& ks = feature_kernels<T>();
    for (std::size_t layer = 0; layer < ks.size(); ++layer) {
        x = relu(conv3x3_fixed(x, ks[layer], kFeatureWidths[layer]));
        out.push_back(x);
        if (layer + 1 < ks.size()) x = avg_pool2(x);
    }
    return out;
}

}  // namespace

template <typename T>
Var<T> perceptual(const Var<T>& pred, const Var<T>& gt, PerceptualImpl impl) {
    if (pred.shape() != gt.shape() || pred.rank() != 3 || pred.dim(2) != 3) {
        throw std::invalid_argument("perceptual: expected two [H, W, 3] images of equal shape");
    }
    if (impl == PerceptualImpl::kOff) return Var<T>::scalar(T(0));
    const auto fp = features(pred);
    const auto fg = features(gt.detach());
    Var<T> total = mse(fp[0], fg[0]);
    for (std::size_t i = 1; i < fp.size(); ++i) total = add(total, mse(fp[i], fg[i]));
    return total;
}

template <typename T>
LossReport<T> composite_loss(const std::vector<Var<T>>& renders, const std::vector<ViewTarget>& targets,
                             const Var<T>& opacity, const LossWeights& weights, PerceptualImpl impl) {
    weights.validate();
    if (renders.empty()) throw std::invalid_argument("composite_loss: no views");
    if (renders.size() != targets.size()) throw std::invalid_argument("composite_loss: renders and targets differ in count");
    LossReport<T> report;
    Var<T> views_total;
    const T inv_views = T(1) / static_cast<T>(renders.size());
    for (std::size_t v = 0; v < renders.size(); ++v) {
        const ViewTarget& tg = targets[v];
        const std::size_t h = static_cast<std::size_t>(tg.rgb.height), w = static_cast<std::size_t>(tg.rgb.width);
        if (tg.rgb.channels != 3 || tg.alpha.channels != 1 || tg.alpha.pixels() != tg.rgb.pixels()) {
            throw std::invalid_argument("composite_loss: target " + std::to_string(v) + " is malformed");
        }
        if (renders[v].shape() != Shape{h * w, 4}) {
            throw std::invalid_argument("composite_loss: render " + std::to_string(v) + " has shape " +
                                        shape_string(renders[v].shape()));
        }
        const Var<T> rgb = slice_cols(renders[v], 0, 3);
        const Var<T> alpha = slice_cols(renders[v], 3, 4);
        const Var<T> gt_rgb = Var<T>::constant({h * w, 3}, std::vector<T>(tg.rgb.data.begin(), tg.rgb.data.end()));
        const Var<T> gt_alpha = Var<T>::constant({h * w, 1}, std::vector<T>(tg.alpha.data.begin(), tg.alpha.data.end()));
        const Var<T> l_rgb = rgb_mse(rgb, gt_rgb);
        const Var<T> l_mask = mask_mse(alpha, gt_alpha);
        Var<T> term = add(l_rgb, scale(l_mask, static_cast<T>(weights.mask)));
        ViewLoss vl{static_cast<double>(l_rgb.item()), static_cast<double>(l_mask.item()), 0.0};
        if (impl != PerceptualImpl::kOff && weights.perceptual > 0.0) {
            const Var<T> l_perc = perceptual(reshape(rgb, {h, w, 3}), reshape(gt_rgb, {h, w, 3}), impl);
            term = add(term, scale(l_perc, static_cast<T>(weights.perceptual)));
            vl.perceptual = static_cast<double>(l_perc.item());
        }
        report.per_view.push_back(vl);
        report.rgb_mse += vl.rgb / static_cast<double>(renders.size());
        report.mask_mse += vl.mask / static_cast<double>(renders.size());
        report.perceptual += vl.perceptual / static_cast<double>(renders.size());
        views_total = v == 0 ? term : add(views_total, term);
    }
    const Var<T> reg = opacity_reg(opacity);
    report.opacity_reg = static_cast<double>(reg.item());
    report.total_var = add(scale(views_total, inv_views), scale(reg, static_cast<T>(weights.reg)));
    report.total = static_cast<double>(report.total_var.item());
    return report;
}

#define MVG_INSTANTIATE_LOSS(T)                                                                        \
    template Var<T> rgb_mse(const Var<T>&, const Var<T>&);                                             \
    template Var<T> mask_mse(const Var<T>&, const Var<T>&);                                            \
    template Var<T> opacity_reg(const Var<T>&);                                                        \
    template Var<T> perceptual(const Var<T>&, const Var<T>&, PerceptualImpl);                          \
    template LossReport<T> composite_loss(const std::vector<Var<T>>&, const std::vector<ViewTarget>&,  \
                                          const Var<T>&, const LossWeights&, PerceptualImpl);

MVG_INSTANTIATE_LOSS(float)
MVG_INSTANTIATE_LOSS(double)

}  // namespace mvg
