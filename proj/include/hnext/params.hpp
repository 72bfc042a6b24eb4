#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "hnext/errors.hpp"

namespace hnext {

// Named real tensor with a gradient buffer of the same shape. Shapes are
// fixed at creation.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;

    std::size_t numel() const { return data.size(); }

    static Tensor zeros(std::vector<std::size_t> shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        Tensor t;
        t.shape = std::move(shape);
        t.data.assign(n, 0.0);
        t.grad.assign(n, 0.0);
        return t;
    }
};

// Keyed parameter set; iteration order is the lexicographic key order, which
// fixes the serialization and optimizer traversal order.
class ParamStore {
public:
    Tensor& add(const std::string& name, std::vector<std::size_t> shape) {
        auto [it, inserted] = tensors_.emplace(name, Tensor::zeros(std::move(shape)));
        if (!inserted) throw ParameterError("duplicate parameter: " + name);
        return it->second;
    }

    Tensor& get(const std::string& name) {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw ParameterError("unknown parameter: " + name);
        return it->second;
    }
    const Tensor& get(const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw ParameterError("unknown parameter: " + name);
        return it->second;
    }
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

    void zero_grad() {
        for (auto& [name, t] : tensors_) std::fill(t.grad.begin(), t.grad.end(), 0.0);
    }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& [name, t] : tensors_) n += t.numel();
        return n;
    }

    auto begin() { return tensors_.begin(); }
    auto end() { return tensors_.end(); }
    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }

private:
    std::map<std::string, Tensor> tensors_;
};

}  // namespace hnext
