#pragma once

#include <cstddef>
#include <vector>

namespace subquant {

// Channel ordering: mapping()[new_position] == old_channel.
class Permutation {
 public:
  Permutation() = default;
  explicit Permutation(std::vector<std::size_t> mapping);  // throws ShapeError unless bijective

  static Permutation identity(std::size_t channels);

  std::size_t size() const { return mapping_.size(); }
  std::size_t operator[](std::size_t new_pos) const { return mapping_[new_pos]; }
  const std::vector<std::size_t>& mapping() const { return mapping_; }
  bool is_identity() const;

  // (a.then(b))[i] == a[b[i]]: applying a, then b, equals applying the result.
  Permutation then(const Permutation& next) const;
  Permutation inverse() const;

  void swap_positions(std::size_t a, std::size_t b);

  friend bool operator==(const Permutation&, const Permutation&) = default;
  friend auto operator<=>(const Permutation&, const Permutation&) = default;

 private:
  std::vector<std::size_t> mapping_;
};

bool is_bijection(const std::vector<std::size_t>& mapping);

}  // namespace subquant
