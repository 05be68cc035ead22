#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "polarfuse/tensor.hpp"

namespace polarfuse {

struct ParamEntry {
    Tensor value;
    bool trainable = true;
};

// Ordered name -> tensor map; iteration is lexicographic by name, so every
// walk over parameters is deterministic.
class ParamStore {
public:
    using const_iterator = std::map<std::string, ParamEntry>::const_iterator;
    using iterator = std::map<std::string, ParamEntry>::iterator;

    void add(const std::string& name, Tensor value, bool trainable = true);
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    ParamEntry& entry(const std::string& name);
    const ParamEntry& entry(const std::string& name) const;

    bool trainable(const std::string& name) const { return entry(name).trainable; }
    void set_trainable(const std::string& name, bool flag) { entry(name).trainable = flag; }
    // Marks every entry whose name starts with `prefix` non-trainable;
    // returns the affected names.
    std::vector<std::string> freeze_prefix(const std::string& prefix);

    std::size_t count() const { return entries_.size(); }
    std::vector<std::string> names() const;

    const_iterator begin() const { return entries_.begin(); }
    const_iterator end() const { return entries_.end(); }
    iterator begin() { return entries_.begin(); }
    iterator end() { return entries_.end(); }

    // Zero-filled clone with identical names/dims; used for gradients.
    ParamStore zeros_like() const;

private:
    std::map<std::string, ParamEntry> entries_;
};

bool starts_with(const std::string& s, const std::string& prefix);

}  // namespace polarfuse
