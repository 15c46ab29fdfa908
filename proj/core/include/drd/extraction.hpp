#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace drd::extraction {

// Exact rational with int64 numerator/denominator, always reduced, den > 0.
// Arithmetic that would overflow is rejected at parse time, in which case the
// answer is compared as text only.
struct Rational {
  long long num = 0;
  long long den = 1;
  bool operator==(const Rational&) const = default;
};

// Parses integers ("42", "-7"), decimals ("10.50"), and fractions ("5/6").
// Returns nullopt for anything else or on overflow.
std::optional<Rational> parse_rational(std::string_view s);

struct NormalizedAnswer {
  std::string canonical;
  std::optional<Rational> numeric;
  bool operator==(const NormalizedAnswer&) const = default;
};

// Canonicalizes a raw answer string:
//   - trims whitespace,
//   - strips leading currency symbols ($ / euro / pound),
//   - drops thousands-separator commas between digits,
//   - strips trailing sentence punctuation,
//   - uppercases single option letters A-J,
//   - attaches an exact rational when the remainder parses as one; the
//     canonical text is then the reduced rendering ("1234", "5/6").
// Returns nullopt when nothing is left after stripping. Idempotent:
// normalize(x.canonical) == x.
std::optional<NormalizedAnswer> normalize(std::string_view raw);

// Finds the LAST case-insensitive "the answer is" marker and normalizes the
// first whitespace-delimited token after it. Deterministic and total: absent
// marker, empty capture, or empty normalization all yield nullopt.
std::optional<NormalizedAnswer> extract_final_answer(std::string_view text);

// Exact rational equality when both sides are numeric; case-insensitive
// canonical comparison otherwise.
bool answers_equal(const NormalizedAnswer& a, const NormalizedAnswer& b);
// Normalizes both sides first; false when either side does not normalize.
bool answers_equal(std::string_view a, std::string_view b);

// Strict comparison count/total > threshold with the threshold read as the
// exact decimal it was written as (so 14/20 is NOT greater than 0.7).
bool exceeds_strict(std::uint64_t count, std::uint64_t total, double threshold);

}  // namespace drd::extraction
