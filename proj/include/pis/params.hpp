#pragma once

#include <map>
#include <set>
#include <stdexcept>
#include <string>

#include "pis/tensor.hpp"

namespace pis {

// Ordered, named parameter store. Names are dotted paths ("text.S.0.down.w")
// and stay stable across save/load; the trainable set drives both gradient
// tracking and optimizer updates.
template <class T = float>
struct ParameterGroupT {
    std::map<std::string, TensorT<T>> entries;
    std::set<std::string> trainable;

    void add(const std::string& name, TensorT<T> t) {
        if (entries.count(name)) throw std::invalid_argument("params: duplicate name " + name);
        entries.emplace(name, std::move(t));
    }

    TensorT<T>& at(const std::string& name) {
        auto it = entries.find(name);
        if (it == entries.end()) throw std::invalid_argument("params: unknown name " + name);
        return it->second;
    }

    const TensorT<T>& at(const std::string& name) const {
        auto it = entries.find(name);
        if (it == entries.end()) throw std::invalid_argument("params: unknown name " + name);
        return it->second;
    }

    bool has(const std::string& name) const { return entries.count(name) != 0; }

    // Marks the set and syncs per-tensor gradient tracking to it.
    void set_trainable(const std::set<std::string>& names) {
        for (const auto& n : names)
            if (!entries.count(n)) throw std::invalid_argument("params: trainable name not present: " + n);
        trainable = names;
        for (auto& [name, t] : entries) t.set_requires_grad(trainable.count(name) != 0);
    }

    void set_all_trainable() {
        std::set<std::string> names;
        for (auto& [name, t] : entries) names.insert(name);
        set_trainable(names);
    }

    void zero_grad() {
        for (auto& [name, t] : entries) t.zero_grad();
    }

    std::set<std::string> names_with_prefix(const std::string& prefix) const {
        std::set<std::string> out;
        for (const auto& [name, t] : entries)
            if (name.rfind(prefix, 0) == 0) out.insert(name);
        return out;
    }
};

using ParameterGroup = ParameterGroupT<float>;

}  // namespace pis
