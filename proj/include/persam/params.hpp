#pragma once

#include <string>
#include <vector>

#include "persam/errors.hpp"
#include "persam/tensor.hpp"

namespace persam {

// The five trainable-parameter groups; each carries its own learning rate.
enum class ParamGroup { kExtractor, kClinical, kEncoder, kAggregator, kClassifier };

inline const char* param_group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::kExtractor: return "extractor";
        case ParamGroup::kClinical: return "clinical";
        case ParamGroup::kEncoder: return "encoder";
        case ParamGroup::kAggregator: return "aggregator";
        case ParamGroup::kClassifier: return "classifier";
    }
    return "?";
}

inline ParamGroup param_group_from_name(const std::string& s) {
    if (s == "extractor") return ParamGroup::kExtractor;
    if (s == "clinical") return ParamGroup::kClinical;
    if (s == "encoder") return ParamGroup::kEncoder;
    if (s == "aggregator") return ParamGroup::kAggregator;
    if (s == "classifier") return ParamGroup::kClassifier;
    throw ConfigError("unknown parameter group '" + s + "'");
}

struct Parameter {
    std::string name;
    ParamGroup group;
    Tensor tensor;
};

// Flat registry of every trainable tensor in a model; the optimizer and the
// checkpoint code both walk it by name.
class ParameterStore {
public:
    Tensor add(const std::string& name, ParamGroup group, Shape shape,
               std::vector<double> data) {
        for (const auto& p : params_)
            if (p.name == name) throw ConfigError("duplicate parameter name '" + name + "'");
        Tensor t(std::move(shape), std::move(data), /*requires_grad=*/true);
        params_.push_back({name, group, t});
        return t;
    }

    const std::vector<Parameter>& all() const { return params_; }
    std::vector<Parameter>& all() { return params_; }

    const Parameter& find(const std::string& name) const {
        for (const auto& p : params_)
            if (p.name == name) return p;
        throw ConfigError("no parameter named '" + name + "'");
    }

    void zero_grads() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.tensor.numel();
        return n;
    }

    bool has_group(ParamGroup g) const {
        for (const auto& p : params_)
            if (p.group == g) return true;
        return false;
    }

private:
    std::vector<Parameter> params_;
};

}  // namespace persam
