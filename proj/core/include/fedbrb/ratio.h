#pragma once

#include <compare>
#include <cstddef>
#include <string>

namespace fedbrb {

// Width ratio of a sub-model: one of 1, 1/2, 1/4, 1/8, 1/16.
class Ratio {
 public:
  static constexpr int kMaxLog2Denominator = 4;

  constexpr Ratio() = default;
  // Throws std::invalid_argument outside 0..4.
  static Ratio from_log2_denominator(int log2_denominator);
  static constexpr Ratio full() { return Ratio(); }

  int log2_denominator() const { return log2_den_; }
  std::size_t denominator() const { return std::size_t{1} << log2_den_; }
  double value() const { return 1.0 / static_cast<double>(denominator()); }

  // The size letter a..e.
  char letter() const { return static_cast<char>('a' + log2_den_); }
  // "1", "1/2", ...
  std::string to_string() const;

  // Ordered by value: 1/16 < 1/8 < ... < 1.
  friend constexpr std::strong_ordering operator<=>(Ratio a, Ratio b) {
    return b.log2_den_ <=> a.log2_den_;
  }
  friend constexpr bool operator==(Ratio a, Ratio b) = default;

 private:
  explicit constexpr Ratio(int log2_den) : log2_den_(log2_den) {}
  int log2_den_ = 0;
};

// a -> 1, b -> 1/2, c -> 1/4, d -> 1/8, e -> 1/16.
Ratio ratio_from_letter(char letter);

// width * ratio; throws std::invalid_argument unless it divides evenly.
std::size_t scale_width(std::size_t width, Ratio ratio);

}  // namespace fedbrb
