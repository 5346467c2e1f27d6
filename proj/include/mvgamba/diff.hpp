#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mvg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until a gradient reaches this node
    bool requires_grad = false;
    std::string name;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return !backward_fn; }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
    /// Gradient buffer of parent i, or nullptr if it does not need one.
    T* parent_grad(std::size_t i) {
        Node& p = *parents[i];
        if (!p.requires_grad) return nullptr;
        p.ensure_grad();
        return p.grad.data();
    }
};

/// Handle to a node of the differentiation graph. Copies share the node.
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    /// Leaf that accumulates gradients.
    static Var parameter(Shape shape, std::vector<T> values, std::string name = {});
    /// Leaf that never receives gradients.
    static Var constant(Shape shape, std::vector<T> values);
    static Var zeros(Shape shape, bool requires_grad = false, std::string name = {});
    static Var scalar(T v) { return constant({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }
    const std::string& name() const { return node_->name; }

    std::span<const T> value() const { return node_->value; }
    std::span<T> mutable_value() { return node_->value; }
    T item() const;

    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

    Node<T>& node() const { return *node_; }
    const std::shared_ptr<Node<T>>& ptr() const { return node_; }

    /// Same values, no history.
    Var detach() const { return constant(shape(), node_->value); }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Creates a result node. The backward function is only kept when some
/// parent requires a gradient.
template <typename T>
Var<T> make_result(Shape shape, std::vector<T> value, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward_fn);

/// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls;
/// interior gradients are recomputed on every call.
template <typename T>
void backward(const Var<T>& loss);

extern template class Var<float>;
extern template class Var<double>;

}  // namespace mvg
