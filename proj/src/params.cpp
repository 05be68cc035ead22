#include "polarfuse/params.hpp"

#include <stdexcept>

namespace polarfuse {

void ParamStore::add(const std::string& name, Tensor value, bool trainable) {
    if (name.empty()) throw std::invalid_argument("ParamStore::add: empty name");
    auto [it, inserted] = entries_.emplace(name, ParamEntry{std::move(value), trainable});
    (void)it;
    if (!inserted) throw std::invalid_argument("ParamStore::add: duplicate name '" + name + "'");
}

Tensor& ParamStore::get(const std::string& name) { return entry(name).value; }

const Tensor& ParamStore::get(const std::string& name) const { return entry(name).value; }

ParamEntry& ParamStore::entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end())
        throw std::invalid_argument("ParamStore: unknown name '" + name + "'");
    return it->second;
}

const ParamEntry& ParamStore::entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end())
        throw std::invalid_argument("ParamStore: unknown name '" + name + "'");
    return it->second;
}

std::vector<std::string> ParamStore::freeze_prefix(const std::string& prefix) {
    std::vector<std::string> hit;
    for (auto& [name, e] : entries_) {
        if (starts_with(name, prefix)) {
            e.trainable = false;
            hit.push_back(name);
        }
    }
    return hit;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, e] : entries_) {
        (void)e;
        out.push_back(name);
    }
    return out;
}

ParamStore ParamStore::zeros_like() const {
    ParamStore out;
    for (const auto& [name, e] : entries_)
        out.add(name, Tensor(e.value.dims(), 0.0), e.trainable);
    return out;
}

bool starts_with(const std::string& s, const std::string& prefix) {
    return s.size() >= prefix.size() && s.compare(0, prefix.size(), prefix) == 0;
}

}  // namespace polarfuse
