#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace nodule {

struct TensorImpl;

// One recorded forward op. Kept alive by the output tensor; holds its
// inputs alive so backward can reach the whole graph from the loss.
struct Node {
    const char* op_name = "";
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    // Reads out.grad, accumulates into the inputs' grad buffers.
    std::function<void(TensorImpl& out)> backward_fn;
    bool consumed = false;
};

struct TensorImpl {
    std::vector<int> shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::shared_ptr<Node> node;  // producer; null for leaves and constants
};

// Dense rank-N float32 tensor, row-major. Value type over shared storage:
// copies alias the same buffer. Immutable after forward construction
// except the grad buffer.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<float> data,
                            bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape[i]; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

    float* data() { return impl_->data.data(); }
    const float* data() const { return impl_->data.data(); }
    std::vector<float>& vec() { return impl_->data; }
    const std::vector<float>& vec() const { return impl_->data; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    bool has_grad() const { return !impl_->grad.empty(); }
    // Allocates a zeroed grad buffer on first use.
    float* grad_data();
    const std::vector<float>& grad_vec() const { return impl_->grad; }
    void zero_grad();

    float item() const;

    std::shared_ptr<TensorImpl>& impl() { return impl_; }
    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

int64_t numel_of(const std::vector<int>& shape);

// Reverse topological traversal from a scalar loss; gradients accumulate
// (the caller zeroes between steps). A graph can be walked once.
void backward(const Tensor& loss);

// Thread-local switch: while disabled, ops do not record nodes.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

}  // namespace nodule
