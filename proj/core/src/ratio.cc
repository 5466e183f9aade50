#include <stdexcept>
#include <string>

#include "fedbrb/ratio.h"

namespace fedbrb {

Ratio Ratio::from_log2_denominator(int log2_denominator) {
  if (log2_denominator < 0 || log2_denominator > kMaxLog2Denominator) {
    throw std::invalid_argument("ratio denominator must be 2^0..2^4, got 2^" +
                                std::to_string(log2_denominator));
  }
  return Ratio(log2_denominator);
}

std::string Ratio::to_string() const {
  if (log2_den_ == 0) return "1";
  return "1/" + std::to_string(denominator());
}

Ratio ratio_from_letter(char letter) {
  if (letter < 'a' || letter > 'e') {
    throw std::invalid_argument(std::string("size letter must be a..e, got '") + letter + "'");
  }
  return Ratio::from_log2_denominator(letter - 'a');
}

std::size_t scale_width(std::size_t width, Ratio ratio) {
  if (width % ratio.denominator() != 0) {
    throw std::invalid_argument("width " + std::to_string(width) + " is not divisible by " +
                                std::to_string(ratio.denominator()));
  }
  return width / ratio.denominator();
}

}  // namespace fedbrb
