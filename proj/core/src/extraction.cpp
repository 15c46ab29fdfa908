#include "drd/extraction.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

namespace drd::extraction {

namespace {

using i128 = __int128;

constexpr long long kMaxLL = 9223372036854775807LL;

bool fits_ll(i128 v) { return v <= i128(kMaxLL) && v >= -i128(kMaxLL); }

std::optional<Rational> make_reduced(i128 num, i128 den) {
  if (den == 0) return std::nullopt;
  if (den < 0) {
    num = -num;
    den = -den;
  }
  i128 a = num < 0 ? -num : num;
  i128 b = den;
  while (b != 0) {
    i128 t = a % b;
    a = b;
    b = t;
  }
  if (a != 0) {
    num /= a;
    den /= a;
  }
  if (!fits_ll(num) || !fits_ll(den)) return std::nullopt;
  return Rational{static_cast<long long>(num), static_cast<long long>(den)};
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Parses [+-]?digits or [+-]?digits.digits into num/den (den a power of ten).
bool parse_decimal(std::string_view s, i128& num, i128& den) {
  std::size_t i = 0;
  bool neg = false;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
    neg = s[i] == '-';
    ++i;
  }
  if (i >= s.size() || !is_digit(s[i])) return false;
  i128 n = 0;
  int digits = 0;
  while (i < s.size() && is_digit(s[i])) {
    n = n * 10 + (s[i] - '0');
    if (++digits > 27) return false;
    ++i;
  }
  i128 d = 1;
  if (i < s.size() && s[i] == '.') {
    ++i;
    if (i >= s.size() || !is_digit(s[i])) return false;
    while (i < s.size() && is_digit(s[i])) {
      n = n * 10 + (s[i] - '0');
      d *= 10;
      if (++digits > 27) return false;
      ++i;
    }
  }
  if (i != s.size()) return false;
  num = neg ? -n : n;
  den = d;
  return true;
}

std::string render(const Rational& r) {
  std::string out = std::to_string(r.num);
  if (r.den != 1) {
    out += "/";
    out += std::to_string(r.den);
  }
  return out;
}

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v';
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

bool strip_currency_prefix(std::string& s) {
  static const std::string_view symbols[] = {"$", "\xE2\x82\xAC", "\xC2\xA3"};
  for (std::string_view sym : symbols) {
    if (s.size() >= sym.size() && std::string_view(s).substr(0, sym.size()) == sym) {
      s.erase(0, sym.size());
      return true;
    }
  }
  return false;
}

char ascii_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

}  // namespace

std::optional<Rational> parse_rational(std::string_view s) {
  const std::size_t slash = s.find('/');
  if (slash != std::string_view::npos) {
    i128 n1, d1, n2, d2;
    if (!parse_decimal(s.substr(0, slash), n1, d1)) return std::nullopt;
    if (!parse_decimal(s.substr(slash + 1), n2, d2)) return std::nullopt;
    if (n2 == 0) return std::nullopt;
    // (n1/d1) / (n2/d2) = n1*d2 / (d1*n2)
    return make_reduced(n1 * d2, d1 * n2);
  }
  i128 n, d;
  if (!parse_decimal(s, n, d)) return std::nullopt;
  return make_reduced(n, d);
}

std::optional<NormalizedAnswer> normalize(std::string_view raw) {
  std::string s{trim(raw)};
  while (strip_currency_prefix(s)) {
    s = std::string(trim(s));
  }
  // Thousands separators: a comma with digits on both sides.
  std::string no_commas;
  no_commas.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == ',' && i > 0 && i + 1 < s.size() && is_digit(s[i - 1]) &&
        is_digit(s[i + 1])) {
      continue;
    }
    no_commas.push_back(s[i]);
  }
  s = std::move(no_commas);
  static constexpr std::string_view kTrailing = ".!?,;:";
  while (!s.empty() && kTrailing.find(s.back()) != std::string_view::npos) {
    s.pop_back();
  }
  s = std::string(trim(s));
  if (s.empty()) return std::nullopt;

  if (s.size() == 1) {
    const char c = ascii_lower(s[0]);
    if (c >= 'a' && c <= 'j') {
      NormalizedAnswer out;
      out.canonical = std::string(1, static_cast<char>(c - 'a' + 'A'));
      return out;
    }
  }

  NormalizedAnswer out;
  if (auto r = parse_rational(s)) {
    out.numeric = *r;
    out.canonical = render(*r);
  } else {
    out.canonical = std::move(s);
  }
  return out;
}

std::optional<NormalizedAnswer> extract_final_answer(std::string_view text) {
  static constexpr std::string_view kMarker = "the answer is";
  std::size_t last = std::string_view::npos;
  if (text.size() >= kMarker.size()) {
    for (std::size_t i = 0; i + kMarker.size() <= text.size(); ++i) {
      bool hit = true;
      for (std::size_t j = 0; j < kMarker.size(); ++j) {
        if (ascii_lower(text[i + j]) != kMarker[j]) {
          hit = false;
          break;
        }
      }
      if (hit) last = i;
    }
  }
  if (last == std::string_view::npos) return std::nullopt;
  std::size_t i = last + kMarker.size();
  while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == ':')) {
    ++i;
  }
  std::size_t end = i;
  while (end < text.size() && !is_space(text[end])) ++end;
  if (end == i) return std::nullopt;
  return normalize(text.substr(i, end - i));
}

bool answers_equal(const NormalizedAnswer& a, const NormalizedAnswer& b) {
  if (a.numeric && b.numeric) return *a.numeric == *b.numeric;
  if (a.canonical.size() != b.canonical.size()) return false;
  for (std::size_t i = 0; i < a.canonical.size(); ++i) {
    if (ascii_lower(a.canonical[i]) != ascii_lower(b.canonical[i])) return false;
  }
  return true;
}

bool answers_equal(std::string_view a, std::string_view b) {
  auto na = normalize(a);
  auto nb = normalize(b);
  if (!na || !nb) return false;
  return answers_equal(*na, *nb);
}

bool exceeds_strict(std::uint64_t count, std::uint64_t total, double threshold) {
  if (total == 0) return false;
  // Recover the decimal the threshold was written as (shortest round-trip
  // rendering), then compare exactly by cross-multiplication.
  const std::string repr = nlohmann::json(threshold).dump();
  std::string_view s = repr;
  bool neg = false;
  std::size_t i = 0;
  if (i < s.size() && (s[i] == '-' || s[i] == '+')) {
    neg = s[i] == '-';
    ++i;
  }
  i128 num = 0;
  i128 den = 1;
  bool exact = true;
  int digits = 0;
  bool seen_point = false;
  long long exponent = 0;
  for (; i < s.size(); ++i) {
    const char c = s[i];
    if (is_digit(c)) {
      if (digits < 27) {
        num = num * 10 + (c - '0');
        if (seen_point) den *= 10;
        ++digits;
      } else {
        exact = false;
        break;
      }
    } else if (c == '.') {
      seen_point = true;
    } else if (c == 'e' || c == 'E') {
      exponent = std::stoll(std::string(s.substr(i + 1)));
      break;
    } else {
      exact = false;
      break;
    }
  }
  if (exact) {
    while (exponent > 0 && digits < 27) {
      num *= 10;
      --exponent;
      ++digits;
    }
    while (exponent < 0 && digits < 27) {
      den *= 10;
      ++exponent;
      ++digits;
    }
    if (exponent != 0) exact = false;
  }
  if (!exact) {
    return static_cast<long double>(count) / static_cast<long double>(total) >
           static_cast<long double>(threshold);
  }
  if (neg) num = -num;
  // count/total > num/den  <=>  count*den > num*total
  return i128(count) * den > num * i128(total);
}

}  // namespace drd::extraction
