#pragma once

#include <string>
#include <vector>

#include "slad/common.hpp"

namespace slad {

enum class MappingKind { First, Last, Even };

const char* to_string(MappingKind kind);
MappingKind mapping_from_string(const std::string& name);

/// Injective assignment of each student block to a teacher block. g is
/// strictly increasing with range inside [0, teacher_depth).
struct BlockMapping {
  MappingKind kind = MappingKind::Even;
  std::size_t teacher_depth = 0;
  std::vector<std::size_t> g;  // indexed by student block

  std::size_t operator()(std::size_t student_block) const {
    return g.at(student_block);
  }
  std::size_t student_depth() const { return g.size(); }
};

/// First: g(i)=i. Last: g(i)=n_t-n_s+i. Even: g(i)=round(i*n_t/n_s) with
/// half-down ties; for n_t = 2*n_s this is exactly g(i)=2i.
BlockMapping block_mapping(MappingKind kind, std::size_t student_depth,
                           std::size_t teacher_depth);

}  // namespace slad
