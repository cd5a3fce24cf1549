#include "prba/parameters.hpp"

#include <cmath>

namespace prba {

void ParameterSet::add(const std::string& name, ad::Matrix value, bool trainable) {
    if (contains(name)) throw InvalidArgument("duplicate parameter name '" + name + "'");
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(value), trainable});
}

const ad::Matrix& ParameterSet::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
    return entries_[it->second].value;
}

ad::Matrix& ParameterSet::get_mutable(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
    return entries_[it->second].value;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
    return n;
}

ad::Matrix init_uniform(Rng& rng, ad::Index rows, ad::Index cols, ad::Index fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    ad::Matrix m(rows, cols);
    for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -bound, bound);
    return m;
}

ad::Matrix init_normal(Rng& rng, ad::Index rows, ad::Index cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    ad::Matrix m(rows, cols);
    for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

Bindings::Bindings(const ParameterSet& params, bool track)
    : params_(&params), track_(track), leaves_(params.size()) {}

const ad::Tensor& Bindings::operator[](const std::string& name) {
    std::size_t i = 0;
    for (; i < params_->size(); ++i)
        if (params_->entry(i).name == name) break;
    if (i == params_->size()) throw InvalidArgument("unknown parameter '" + name + "'");
    if (!leaves_[i].defined()) {
        const auto& e = params_->entry(i);
        leaves_[i] = (track_ && e.trainable) ? ad::Tensor::parameter(e.value)
                                             : ad::Tensor::constant(e.value);
    }
    return leaves_[i];
}

std::vector<ad::Matrix> Bindings::gradients() const {
    std::vector<ad::Matrix> out;
    out.reserve(leaves_.size());
    for (std::size_t i = 0; i < leaves_.size(); ++i) {
        const auto& v = params_->entry(i).value;
        if (leaves_[i].defined() && leaves_[i].grad().size() != 0)
            out.push_back(leaves_[i].grad());
        else
            out.push_back(ad::Matrix::Zero(v.rows(), v.cols()));
    }
    return out;
}

}  // namespace prba
