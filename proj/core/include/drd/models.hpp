#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drd/numerics.hpp"
#include "drd/rng.hpp"

namespace drd::models {

// Small fixed vocabulary over the synthetic task's charset: a few dozen
// word-level tokens plus digits, with reserved BOS/EOS/PAD up front.
// Tokenization is greedy longest-match; detokenization is concatenation.
class Vocabulary {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kPad = 2;

  // `tokens` is the full id-ordered list; the first three entries must be the
  // reserved markers "<bos>", "<eos>", "<pad>".
  explicit Vocabulary(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const;
  std::optional<int> id_of(std::string_view token) const;

  // Throws ConfigError naming the byte offset when the text cannot be covered
  // by vocabulary tokens.
  std::vector<int> tokenize(std::string_view text) const;
  // Concatenates non-reserved tokens.
  std::string detokenize(std::span<const int> ids) const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
};

struct SampledResponse {
  std::vector<int> tokens;        // includes the terminal EOS when emitted
  std::vector<double> logprobs;   // log-prob of each emitted token under the
                                  // sampling distribution (temperature 1 for
                                  // greedy decode bookkeeping)
};

struct LoadedPolicy;
struct LoadedReward;

// Single-cell recurrent language model:
//   h_t = tanh(w_xh * embed[x_t] + w_hh * h_{t-1} + b_h)
//   z_t = w_out * h_t + b_out
// ~1e4 parameters at the default sizes (embed 32, hidden 64, vocab ~30).
class PolicyModel {
 public:
  PolicyModel(Vocabulary vocab, int embed_dim, int hidden_dim,
              std::uint64_t init_seed);
  PolicyModel(Vocabulary vocab, int embed_dim, int hidden_dim,
              numerics::ParamStore params);

  const Vocabulary& vocab() const { return vocab_; }
  int embed_dim() const { return embed_dim_; }
  int hidden_dim() const { return hidden_dim_; }
  numerics::ParamStore& params() { return params_; }
  const numerics::ParamStore& params() const { return params_; }

  // Autoregressive sampling primed with BOS + prompt. temperature == 0 decodes
  // greedily (argmax, lowest token id wins ties); otherwise draws from
  // softmax(z / temperature). Stops at EOS or after max_new_tokens.
  SampledResponse sample(std::span<const int> prompt, double temperature,
                         int max_new_tokens, Rng& rng) const;

  // Log-probabilities (temperature 1) of each response token given the
  // prompt. Bit-identical to the taped training path.
  std::vector<double> sequence_logprob(std::span<const int> prompt,
                                       std::span<const int> response) const;

  // Full temperature-1 log-distribution over the vocabulary at every response
  // position; same kernel as the taped log_softmax, so divergences computed
  // against it start at exactly zero.
  std::vector<std::vector<double>> response_log_distributions(
      std::span<const int> prompt, std::span<const int> response) const;

  // Hidden states while consuming BOS + prompt + response: entry t is the
  // state from which response token t is predicted; one extra final entry is
  // the state after consuming the whole response.
  std::vector<std::vector<double>> response_hidden_states(
      std::span<const int> prompt, std::span<const int> response) const;

  // Taped forward: logits for every response position, for training losses.
  std::vector<numerics::Value> response_logits(numerics::Tape& tape,
                                               std::span<const int> prompt,
                                               std::span<const int> response) const;
  // Taped forward that also exposes the per-position hidden states (used by
  // the value head during policy optimization).
  std::vector<numerics::Value> response_logits(numerics::Tape& tape,
                                               std::span<const int> prompt,
                                               std::span<const int> response,
                                               std::vector<numerics::Value>* hiddens) const;

  void save(const std::filesystem::path& path, const std::string& meta_json,
            const numerics::AdamState* adam = nullptr) const;
  static LoadedPolicy load(const std::filesystem::path& path);

  PolicyModel clone() const;

 private:
  Vocabulary vocab_;
  int embed_dim_;
  int hidden_dim_;
  numerics::ParamStore params_;
};

// Policy trunk plus a scalar head read at the last non-PAD position.
class RewardModel {
 public:
  RewardModel(Vocabulary vocab, int embed_dim, int hidden_dim,
              numerics::ParamStore params);

  // Copies the warm-up student's trunk (embedding + cell) and attaches a
  // zero-initialized scalar head, so initial scores are exactly 0.
  static RewardModel init_from_policy(const PolicyModel& policy);

  const Vocabulary& vocab() const { return vocab_; }
  numerics::ParamStore& params() { return params_; }
  const numerics::ParamStore& params() const { return params_; }

  // Score of (prompt, response); trailing PAD tokens are ignored.
  double score(std::span<const int> prompt, std::span<const int> response) const;
  double score_text(std::string_view prompt_text, std::string_view response_text) const;

  numerics::Value score_taped(numerics::Tape& tape, std::span<const int> prompt,
                              std::span<const int> response) const;

  void save(const std::filesystem::path& path, const std::string& meta_json,
            const numerics::AdamState* adam = nullptr) const;
  static LoadedReward load(const std::filesystem::path& path);

  RewardModel clone() const;

 private:
  Vocabulary vocab_;
  int embed_dim_;
  int hidden_dim_;
  numerics::ParamStore params_;
};

struct LoadedPolicy {
  PolicyModel model;
  std::optional<numerics::AdamState> adam;
  std::string meta_json;
};

struct LoadedReward {
  RewardModel model;
  std::optional<numerics::AdamState> adam;
  std::string meta_json;
};

// Adds a zero-initialized per-position scalar value head ("w_val"/"b_val") to
// a policy's parameter store if not already present.
void ensure_value_head(PolicyModel& policy);
bool has_value_head(const PolicyModel& policy);

// Untaped per-position value estimates for a response (one per response
// token, evaluated at the state the token was emitted from).
std::vector<double> value_estimates(const PolicyModel& policy,
                                    std::span<const int> prompt,
                                    std::span<const int> response);

// Greedy (temperature 0) response text for a prompt.
std::string greedy_response_text(const PolicyModel& policy,
                                 std::string_view prompt_text,
                                 int max_new_tokens);

}  // namespace drd::models
