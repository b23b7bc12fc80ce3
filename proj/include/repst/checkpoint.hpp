#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "repst/tensor.hpp"

namespace repst {

// Named parameter tensors with frozen/trainable flags. Values are held as
// doubles in memory; the on-disk container stores 32-bit little-endian floats
// with a trailing FNV-1a digest over all payload bytes.
//
// File layout:
//   magic "RPSTCKPT" | version u16 | entry_count u32
//   per entry: name_len u16, name bytes, ndim u8, dims u32 each,
//              frozen u8, payload f32 row-major
//   digest u64 (FNV-1a over payloads in file order)
class ParamStore {
  public:
    struct Entry {
        std::string name;
        Tensor value;
        bool frozen = false;
    };

    void add(const std::string& name, Tensor value, bool frozen);
    bool contains(const std::string& name) const;
    Tensor& value(const std::string& name);
    const Tensor& value(const std::string& name) const;
    bool is_frozen(const std::string& name) const;

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    // Digest of every entry's f32 payload in store order.
    std::uint64_t digest_all() const;
    // Digest restricted to frozen entries; the invariant checked around
    // training runs.
    std::uint64_t digest_frozen() const;

  private:
    const Entry& find(const std::string& name) const;
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

void save_checkpoint(const ParamStore& store, const std::string& path);
ParamStore load_checkpoint(const std::string& path);

std::uint64_t fnv1a64(const unsigned char* data, std::size_t len, std::uint64_t seed);

}  // namespace repst
