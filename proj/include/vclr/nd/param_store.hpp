#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vclr/nd/tensor.hpp"

namespace vclr::nd {

// Named trainable tensors in insertion order.
class ParamStore {
   public:
    struct Entry {
        std::string name;
        Tensor tensor;
    };

    // Registers a leaf; it is marked requires_grad. Duplicate names throw.
    Tensor& add(std::string name, Tensor tensor);

    bool contains(std::string_view name) const;
    const Tensor& get(std::string_view name) const;
    Tensor& get(std::string_view name);

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t parameter_count() const;

    // Deep copy; the clone shares no storage with this store.
    ParamStore clone() const;
    void zero_grads();

    // Names whose presence or shape differ between the two stores.
    std::vector<std::string> layout_diff(const ParamStore& other) const;

    std::int64_t step = 0;

   private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace vclr::nd
