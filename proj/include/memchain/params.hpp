#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "memchain/errors.hpp"
#include "memchain/tensor.hpp"

namespace memchain {

/// Named trainable (or frozen) tensors with stable integer ids. Iteration
/// order is registration order, which every consumer relies on for
/// reproducibility.
class ParamStore {
public:
    ParamId add(const std::string& name, Tensor value, bool trainable = true) {
        if (index_.count(name))
            throw ContractError("param '" + name + "' registered twice");
        ParamId id = static_cast<ParamId>(values_.size());
        index_[name] = id;
        names_.push_back(name);
        values_.push_back(std::move(value));
        trainable_.push_back(trainable);
        return id;
    }

    std::size_t size() const { return values_.size(); }
    const std::string& name(ParamId id) const { return names_.at(id); }
    Tensor& value(ParamId id) { return values_.at(id); }
    const Tensor& value(ParamId id) const { return values_.at(id); }
    bool trainable(ParamId id) const { return trainable_.at(id); }

    bool has(const std::string& name) const { return index_.count(name) > 0; }
    ParamId id_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown param '" + name + "'");
        return it->second;
    }

    const std::vector<Tensor>& values() const { return values_; }

    std::size_t coordinate_count(bool trainable_only = true) const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < values_.size(); ++i)
            if (!trainable_only || trainable_[i]) n += values_[i].size();
        return n;
    }

private:
    std::unordered_map<std::string, ParamId> index_;
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::vector<bool> trainable_;
};

}  // namespace memchain
