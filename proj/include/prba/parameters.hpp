#pragma once

#include <map>
#include <string>
#include <vector>

#include "prba/autodiff.hpp"
#include "prba/random.hpp"

namespace prba {

// Ordered bundle of named tensors for one policy on one side.
class ParameterSet {
public:
    struct Entry {
        std::string name;
        ad::Matrix value;
        bool trainable = true;
    };

    void add(const std::string& name, ad::Matrix value, bool trainable = true);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const ad::Matrix& get(const std::string& name) const;
    ad::Matrix& get_mutable(const std::string& name);
    const Entry& entry(std::size_t i) const { return entries_[i]; }
    Entry& entry(std::size_t i) { return entries_[i]; }
    std::size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t scalar_count() const;

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
ad::Matrix init_uniform(Rng& rng, ad::Index rows, ad::Index cols, ad::Index fan_in);
ad::Matrix init_normal(Rng& rng, ad::Index rows, ad::Index cols, double stddev);

// Per-tape leaves for a ParameterSet. Trainable entries become gradient
// leaves when `track` is set; everything else is a constant.
class Bindings {
public:
    Bindings(const ParameterSet& params, bool track);

    const ad::Tensor& operator[](const std::string& name);
    const ParameterSet& parameters() const { return *params_; }

    // Gradients aligned with params.entries(); zero for untouched entries.
    std::vector<ad::Matrix> gradients() const;

private:
    const ParameterSet* params_;
    bool track_;
    std::vector<ad::Tensor> leaves_;
};

}  // namespace prba
