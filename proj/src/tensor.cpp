#include "nodule/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "nodule/errors.hpp"

namespace nodule {

int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ValidationError(cat("nonpositive dimension in shape ", shape_str(shape)));
        n *= d;
    }
    return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    int64_t n = numel_of(shape);
    impl->shape = std::move(shape);
    impl->data.assign(static_cast<size_t>(n), value);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data, bool requires_grad) {
    int64_t n = numel_of(shape);
    if (n != static_cast<int64_t>(data.size()))
        throw ValidationError(cat("data length ", data.size(), " does not match shape ",
                                  shape_str(shape)));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

float* Tensor::grad_data() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
    return impl_->grad.data();
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

float Tensor::item() const {
    if (numel() != 1) throw ValidationError(cat("item() on tensor of ", numel(), " elements"));
    return impl_->data[0];
}

namespace {
thread_local int g_no_grad_depth = 0;
}

bool grad_enabled() { return g_no_grad_depth == 0; }
NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw ValidationError(cat("backward requires a scalar loss, got shape ",
                                  shape_str(loss.shape())));
    TensorImpl* root = loss.impl().get();
    if (!root->node)
        throw ValidationError("backward requires a recorded forward graph");
    if (root->node->consumed)
        throw ValidationError("backward called twice on the same graph");

    // Iterative post-order DFS; order is fixed by input order, so the
    // traversal (and hence accumulation order) is deterministic.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> seen;
    std::vector<std::pair<TensorImpl*, size_t>> stack;
    seen.insert(root);
    stack.emplace_back(root, 0);
    while (!stack.empty()) {
        auto& [t, next] = stack.back();
        if (next < t->node->inputs.size()) {
            TensorImpl* in = t->node->inputs[next].get();
            ++next;
            if (in->node && !seen.count(in)) {
                seen.insert(in);
                stack.emplace_back(in, 0);
            }
        } else {
            order.push_back(t);
            stack.pop_back();
        }
    }

    if (root->grad.empty()) root->grad.assign(1, 0.0f);
    root->grad[0] += 1.0f;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* t = *it;
        if (!t->grad.empty()) t->node->backward_fn(*t);
        t->node->consumed = true;
    }
}

}  // namespace nodule
