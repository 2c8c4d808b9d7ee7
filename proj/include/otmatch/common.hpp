#pragma once

namespace otmatch {

enum class Direction { S2T, T2S };
enum class Matcher { Emd, Chamfer };

inline const char* to_string(Direction d) {
  return d == Direction::S2T ? "S2T" : "T2S";
}
inline const char* to_string(Matcher m) {
  return m == Matcher::Emd ? "emd" : "chamfer";
}

}  // namespace otmatch
