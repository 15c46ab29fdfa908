#include "drd/synthtask.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "drd/error.hpp"
#include "drd/extraction.hpp"

namespace drd::synthtask {

double accuracy_at(const TeacherErrorModel& model, double temperature) {
  const double a = model.base_accuracy - model.temperature_slope * temperature;
  return std::min(1.0, std::max(model.accuracy_floor, a));
}

namespace {

constexpr long long kMaxValue = 99;

void validate(const SynthConfig& c) {
  if (c.query_count <= 0) throw ConfigError("synth: query_count must be positive");
  if (c.operand_min < 0 || c.operand_max < c.operand_min) {
    throw ConfigError("synth: bad operand range");
  }
  if (c.operand_max > kMaxValue) throw ConfigError("synth: operand_max above 99");
  if (c.min_operands < 2 || c.max_operands < c.min_operands) {
    throw ConfigError("synth: operand count range must be within [2, ...]");
  }
}

std::string query_text(const ParsedProblem& p) {
  std::string out = "Q: Start with " + std::to_string(p.start) + ". ";
  for (const auto& [op, b] : p.steps) {
    out += (op == '+' ? "Add " : "Remove ") + std::to_string(b) + ". ";
  }
  out += "What is the total?\nA: ";
  return out;
}

struct RenderedStep {
  long long lhs;
  char op;
  long long operand;
  long long rhs;
};

std::string render_response(const std::vector<RenderedStep>& steps, long long final_answer) {
  std::string out;
  int k = 1;
  for (const auto& s : steps) {
    out += "Step " + std::to_string(k) + ": " + std::to_string(s.lhs) + " " + s.op +
           " " + std::to_string(s.operand) + " = " + std::to_string(s.rhs) + ". ";
    ++k;
  }
  out += "The answer is " + std::to_string(final_answer) + ".";
  return out;
}

}  // namespace

std::vector<corpus::Query> generate_queries(const SynthConfig& config) {
  validate(config);
  Rng rng(derive_seed(config.seed, "synth-queries"));
  std::vector<corpus::Query> out;
  out.reserve(static_cast<std::size_t>(config.query_count));
  const long long lo = config.operand_min;
  const long long hi = config.operand_max;
  auto uniform_operand = [&rng](long long a, long long b) {
    return a + static_cast<long long>(rng.below(static_cast<std::uint64_t>(b - a + 1)));
  };
  for (int i = 0; i < config.query_count; ++i) {
    ParsedProblem p;
    p.start = uniform_operand(lo, hi);
    const int operands = config.min_operands +
                         static_cast<int>(rng.below(static_cast<std::uint64_t>(
                             config.max_operands - config.min_operands + 1)));
    long long cur = p.start;
    for (int s = 0; s < operands - 1; ++s) {
      bool plus = rng.below(2) == 0;
      // Keep every partial inside [0, 99]; flip the operator when the drawn
      // one has no feasible operand.
      long long add_hi = std::min(hi, kMaxValue - cur);
      long long sub_hi = std::min(hi, cur);
      if (plus && add_hi < lo) plus = false;
      if (!plus && sub_hi < lo) plus = true;
      const long long bound = plus ? add_hi : sub_hi;
      if (bound < lo) throw ConfigError("synth: operand range infeasible");
      const long long b = uniform_operand(lo, bound);
      cur = plus ? cur + b : cur - b;
      p.steps.emplace_back(plus ? '+' : '-', b);
      p.partials.push_back(cur);
    }
    p.answer = cur;
    corpus::Query q;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "synth-%06d", i);
    q.id = buf;
    q.text = query_text(p);
    q.oracle_answer = std::to_string(p.answer);
    out.push_back(std::move(q));
  }
  return out;
}

std::optional<ParsedProblem> parse_problem(std::string_view prompt) {
  static constexpr std::string_view kStart = "Start with ";
  const std::size_t pos = prompt.rfind(kStart);
  if (pos == std::string_view::npos) return std::nullopt;
  std::size_t i = pos + kStart.size();
  auto read_number = [&prompt, &i]() -> std::optional<long long> {
    std::size_t j = i;
    long long v = 0;
    while (j < prompt.size() && prompt[j] >= '0' && prompt[j] <= '9') {
      v = v * 10 + (prompt[j] - '0');
      ++j;
    }
    if (j == i) return std::nullopt;
    i = j;
    return v;
  };
  ParsedProblem p;
  const auto start = read_number();
  if (!start) return std::nullopt;
  p.start = *start;
  long long cur = p.start;
  while (true) {
    if (prompt.compare(i, 2, ". ") != 0) break;
    i += 2;
    char op = 0;
    if (prompt.compare(i, 4, "Add ") == 0) {
      op = '+';
      i += 4;
    } else if (prompt.compare(i, 7, "Remove ") == 0) {
      op = '-';
      i += 7;
    } else {
      break;
    }
    const auto b = read_number();
    if (!b) return std::nullopt;
    cur = op == '+' ? cur + *b : cur - *b;
    p.steps.emplace_back(op, *b);
    p.partials.push_back(cur);
  }
  p.answer = cur;
  return p;
}

std::vector<long long> wrong_final_candidates(long long truth) {
  std::vector<long long> raw{truth + 1, truth - 1, truth + 2, truth - 2,
                             truth + 10, truth - 10};
  if (truth >= 10 && truth <= 99) {
    const long long swapped = (truth % 10) * 10 + truth / 10;
    raw.push_back(swapped);
  }
  std::vector<long long> out;
  for (long long c : raw) {
    if (c < 0 || c > kMaxValue || c == truth) continue;
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  }
  return out;
}

std::string simulated_teacher_generate(std::string_view prompt, double temperature,
                                       const TeacherErrorModel& model, Rng& rng) {
  const auto parsed = parse_problem(prompt);
  if (!parsed) {
    throw BackendError("simulated teacher cannot parse problem from prompt");
  }
  const ParsedProblem& p = *parsed;
  const bool correct = rng.uniform01() < accuracy_at(model, temperature);

  // Real computation steps, possibly with one corrupted result whose delta
  // carries through every later step (those stay arithmetically true).
  std::vector<RenderedStep> steps;
  long long final_answer = p.answer;
  if (correct) {
    long long lhs = p.start;
    for (std::size_t s = 0; s < p.steps.size(); ++s) {
      steps.push_back({lhs, p.steps[s].first, p.steps[s].second, p.partials[s]});
      lhs = p.partials[s];
    }
  } else {
    const auto candidates = wrong_final_candidates(p.answer);
    final_answer = candidates[rng.below(candidates.size())];
    const long long delta = final_answer - p.answer;
    // Choose the earliest step whose downstream values all stay renderable;
    // the last step always works because the candidate list is range-checked.
    std::size_t corrupt_at = p.steps.size() - 1;
    for (std::size_t s = 0; s < p.steps.size(); ++s) {
      bool ok = true;
      for (std::size_t j = s; j < p.partials.size(); ++j) {
        const long long v = p.partials[j] + delta;
        if (v < 0 || v > kMaxValue) {
          ok = false;
          break;
        }
      }
      if (ok) {
        corrupt_at = s;
        break;
      }
    }
    long long lhs = p.start;
    for (std::size_t s = 0; s < p.steps.size(); ++s) {
      const long long rhs = p.partials[s] + (s >= corrupt_at ? delta : 0);
      steps.push_back({lhs, p.steps[s].first, p.steps[s].second, rhs});
      lhs = rhs;
    }
  }

  // Verbosity: restatement fillers ("v + 0 = v" or "v - 0 = v"), more of them
  // at higher temperature. Slots draw independently so the count is binomial;
  // form and position draw per filler so verbose responses rarely repeat.
  int fillers = 0;
  const double p_fill = std::min(1.0, std::max(0.0, temperature) * model.filler_rate);
  for (int slot = 0; slot < model.max_fillers; ++slot) {
    if (rng.uniform01() < p_fill) ++fillers;
  }
  for (int f = 0; f < fillers; ++f) {
    // Insert after a random existing step (restating that step's result).
    const std::size_t at = rng.below(steps.size());
    const long long v = steps[at].rhs;
    const char op = rng.below(2) == 0 ? '+' : '-';
    steps.insert(steps.begin() + static_cast<std::ptrdiff_t>(at) + 1,
                 {v, op, 0, v});
  }
  return render_response(steps, final_answer);
}

const std::vector<std::string>& vocabulary_tokens() {
  static const std::vector<std::string> tokens = {
      "<bos>", "<eos>", "<pad>",
      "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
      "Q: ", "A: ", "Start with ", "Add ", "Remove ", "What is the total?",
      "\n", "Step ", ": ", " + ", " - ", " = ", ". ", "The answer is ", ".",
  };
  return tokens;
}

double oracle_accuracy(const std::function<std::string(const corpus::Query&)>& respond,
                       std::span<const corpus::Query> queries) {
  if (queries.empty()) throw ConfigError("oracle_accuracy: no queries");
  std::size_t hits = 0;
  for (const auto& q : queries) {
    if (!q.oracle_answer) {
      throw ConfigError("oracle_accuracy: query " + q.id + " has no oracle answer");
    }
    const auto truth = extraction::normalize(*q.oracle_answer);
    if (!truth) throw ConfigError("oracle_accuracy: empty oracle for " + q.id);
    const auto got = extraction::extract_final_answer(respond(q));
    if (got && extraction::answers_equal(*got, *truth)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

double oracle_accuracy(const std::vector<corpus::GenerationRecord>& records,
                       std::span<const corpus::Query> queries) {
  std::map<std::string, const corpus::GenerationRecord*> by_query;
  for (const auto& r : records) {
    by_query.emplace(r.query_id, &r);
  }
  return oracle_accuracy(
      [&by_query](const corpus::Query& q) -> std::string {
        const auto it = by_query.find(q.id);
        if (it == by_query.end()) {
          throw ConfigError("oracle_accuracy: no record for query " + q.id);
        }
        return it->second->text;
      },
      queries);
}

}  // namespace drd::synthtask
