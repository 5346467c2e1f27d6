#include "mvgamba/diff.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace mvg {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (const std::size_t d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
    os << ']';
    return os.str();
}

namespace {

template <typename T>
std::shared_ptr<Node<T>> make_leaf(Shape shape, std::vector<T> values, bool requires_grad, std::string name) {
    if (shape_numel(shape) != values.size()) {
        throw std::invalid_argument("tensor " + name + " has " + std::to_string(values.size()) +
                                    " values for shape " + shape_string(shape));
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    node->name = std::move(name);
    return node;
}

}  // namespace

template <typename T>
Var<T> Var<T>::parameter(Shape shape, std::vector<T> values, std::string name) {
    return Var(make_leaf<T>(std::move(shape), std::move(values), true, std::move(name)));
}

template <typename T>
Var<T> Var<T>::constant(Shape shape, std::vector<T> values) {
    return Var(make_leaf<T>(std::move(shape), std::move(values), false, {}));
}

template <typename T>
Var<T> Var<T>::zeros(Shape shape, bool requires_grad, std::string name) {
    std::vector<T> values(shape_numel(shape), T(0));
    return Var(make_leaf<T>(std::move(shape), std::move(values), requires_grad, std::move(name)));
}

template <typename T>
T Var<T>::item() const {
    if (size() != 1) {
        throw std::invalid_argument("item() on tensor of shape " + shape_string(shape()));
    }
    return node_->value[0];
}

template <typename T>
Var<T> make_result(Shape shape, std::vector<T> value, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward_fn) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool needs = false;
    for (const auto& p : parents) needs = needs || (p.defined() && p.requires_grad());
    if (needs) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (auto& p : parents) {
            // Undefined optional inputs are replaced by inert constants so
            // indices stay aligned with the backward function.
            node->parents.push_back(p.defined() ? p.ptr() : std::make_shared<Node<T>>());
        }
        node->backward_fn = std::move(backward_fn);
    }
    return Var<T>(std::move(node));
}

template <typename T>
void backward(const Var<T>& loss) {
    if (loss.size() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
    }
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS: parents land before children.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(&loss.node(), 0);
    visited.insert(&loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node<T>* n : order) {
        if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
    }
    loss.node().ensure_grad();
    loss.node().grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (!n->is_leaf()) n->backward_fn(*n);
    }
}

template class Var<float>;
template class Var<double>;
template Var<float> make_result(Shape, std::vector<float>, std::vector<Var<float>>, std::function<void(Node<float>&)>);
template Var<double> make_result(Shape, std::vector<double>, std::vector<Var<double>>,
                                 std::function<void(Node<double>&)>);
template void backward(const Var<float>&);
template void backward(const Var<double>&);

}  // namespace mvg
