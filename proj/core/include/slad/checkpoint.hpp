#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "slad/encoder.hpp"
#include "slad/heads.hpp"

namespace slad {

/// Named parameter blobs with shapes. On disk: an 8-byte magic, a version
/// word, then length-prefixed entries with little-endian f64 payloads.
class Checkpoint {
 public:
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> data;
  };

  void put(const std::string& name, const Tensor& t);
  void put_raw(const std::string& name, Shape shape, std::vector<double> data);
  bool has(const std::string& name) const;
  const Entry& get(const std::string& name) const;
  /// Copies the stored blob into `t`; shapes must agree.
  void load_into(const std::string& name, Tensor& t) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::uint64_t content_hash() const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<Entry> entries_;
  std::size_t index_of(const std::string& name) const;
};

void save_encoder(Checkpoint& ck, const std::string& prefix, Encoder& enc);
void load_encoder(const Checkpoint& ck, const std::string& prefix,
                  Encoder& enc);
void save_head(Checkpoint& ck, const std::string& prefix, MlpHead& head);
void load_head(const Checkpoint& ck, const std::string& prefix, MlpHead& head);
/// Adapter blobs carry their site in the name: <prefix>.qkv.block<i>.{a,b}.
void save_lora(Checkpoint& ck, const std::string& prefix, const LoraSet& lora);
void load_lora(const Checkpoint& ck, const std::string& prefix, LoraSet& lora);

}  // namespace slad
