#include "slad/mapping.hpp"

#include <cmath>

namespace slad {

const char* to_string(MappingKind kind) {
  switch (kind) {
    case MappingKind::First:
      return "first";
    case MappingKind::Last:
      return "last";
    case MappingKind::Even:
      return "even";
  }
  return "?";
}

MappingKind mapping_from_string(const std::string& name) {
  if (name == "first" || name == "First") return MappingKind::First;
  if (name == "last" || name == "Last") return MappingKind::Last;
  if (name == "even" || name == "Even") return MappingKind::Even;
  throw ConfigError("mapping: unknown kind '" + name +
                    "' (expected first|last|even)");
}

BlockMapping block_mapping(MappingKind kind, std::size_t student_depth,
                           std::size_t teacher_depth) {
  if (student_depth == 0 || teacher_depth == 0) {
    throw ConfigError("block_mapping: depths must be positive");
  }
  if (student_depth > teacher_depth) {
    throw ConfigError("block_mapping: student depth " +
                      std::to_string(student_depth) +
                      " exceeds teacher depth " +
                      std::to_string(teacher_depth));
  }
  BlockMapping m;
  m.kind = kind;
  m.teacher_depth = teacher_depth;
  m.g.resize(student_depth);
  for (std::size_t i = 0; i < student_depth; ++i) {
    switch (kind) {
      case MappingKind::First:
        m.g[i] = i;
        break;
      case MappingKind::Last:
        m.g[i] = teacher_depth - student_depth + i;
        break;
      case MappingKind::Even: {
        double x = static_cast<double>(i) * static_cast<double>(teacher_depth) /
                   static_cast<double>(student_depth);
        // round, ties toward the lower block; consecutive values differ by
        // n_t/n_s >= 1 so the map stays injective
        m.g[i] = static_cast<std::size_t>(std::ceil(x - 0.5));
        break;
      }
    }
  }
  return m;
}

}  // namespace slad
