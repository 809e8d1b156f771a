#pragma once

#include <string>
#include <vector>

#include "sare/errors.hpp"

namespace sare::toy {

// Fixed synthetic vocabulary: object tokens occupy the dense range
// [0, n_objects), followed by function tokens. Token names exist only for
// human-readable dumps.
class Vocab {
 public:
  explicit Vocab(int n_objects) : n_objects_(n_objects) {
    if (n_objects < 1) throw ConfigError("Vocab: need at least one object token");
  }

  int n_objects() const { return n_objects_; }
  int size() const { return n_objects_ + kNumFunctionTokens; }

  int bos() const { return n_objects_ + 0; }
  int eos() const { return n_objects_ + 1; }
  int conj() const { return n_objects_ + 2; }      // "and"
  int describe() const { return n_objects_ + 3; }  // standard caption prompt
  int list_all() const { return n_objects_ + 4; }  // exhaustive-listing prompt
  int ask() const { return n_objects_ + 5; }       // existence-question prompt
  int yes() const { return n_objects_ + 6; }
  int no() const { return n_objects_ + 7; }

  bool is_object(int tok) const { return tok >= 0 && tok < n_objects_; }
  bool is_valid(int tok) const { return tok >= 0 && tok < size(); }

  std::string name(int tok) const {
    if (is_object(tok)) return "obj" + std::to_string(tok);
    switch (tok - n_objects_) {
      case 0: return "<bos>";
      case 1: return "<eos>";
      case 2: return "and";
      case 3: return "<describe>";
      case 4: return "<listall>";
      case 5: return "<ask>";
      case 6: return "yes";
      case 7: return "no";
      default: return "<invalid>";
    }
  }

  static constexpr int kNumFunctionTokens = 8;

 private:
  int n_objects_;
};

}  // namespace sare::toy
