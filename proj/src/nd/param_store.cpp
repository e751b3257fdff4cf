#include "vclr/nd/param_store.hpp"

#include "vclr/error.hpp"

namespace vclr::nd {

Tensor& ParamStore::add(std::string name, Tensor tensor) {
    if (index_.contains(name)) throw Error(ErrorKind::Shape, "ParamStore: duplicate parameter '" + name + "'");
    if (!tensor.is_leaf()) throw Error(ErrorKind::Shape, "ParamStore: parameter '" + name + "' is not a leaf");
    tensor.set_requires_grad(true);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(tensor)});
    return entries_.back().tensor;
}

bool ParamStore::contains(std::string_view name) const { return index_.contains(std::string(name)); }

const Tensor& ParamStore::get(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw Error(ErrorKind::Shape, "ParamStore: no parameter '" + std::string(name) + "'");
    return entries_[it->second].tensor;
}

Tensor& ParamStore::get(std::string_view name) {
    return const_cast<Tensor&>(static_cast<const ParamStore&>(*this).get(name));
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

ParamStore ParamStore::clone() const {
    ParamStore out;
    for (const auto& e : entries_) out.add(e.name, e.tensor.detach());
    out.step = step;
    return out;
}

void ParamStore::zero_grads() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

std::vector<std::string> ParamStore::layout_diff(const ParamStore& other) const {
    std::vector<std::string> diff;
    for (const auto& e : entries_)
        if (!other.contains(e.name) || other.get(e.name).shape() != e.tensor.shape()) diff.push_back(e.name);
    for (const auto& e : other.entries_)
        if (!contains(e.name)) diff.push_back(e.name);
    return diff;
}

}  // namespace vclr::nd
