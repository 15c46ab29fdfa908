#include "drd/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "drd/error.hpp"

namespace drd::models {

using numerics::Param;
using numerics::ParamStore;
using numerics::Shape;
using numerics::Tape;
using numerics::Value;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 4) throw ConfigError("vocabulary too small");
  if (tokens_[kBos] != "<bos>" || tokens_[kEos] != "<eos>" || tokens_[kPad] != "<pad>") {
    throw ConfigError("vocabulary must start with <bos>, <eos>, <pad>");
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw ConfigError("empty vocabulary token");
    if (!seen.insert(tokens_[i]).second) {
      throw ConfigError("duplicate vocabulary token: '" + tokens_[i] + "'");
    }
  }
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw ConfigError("token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocabulary::id_of(std::string_view token) const {
  for (int i = 0; i < size(); ++i) {
    if (tokens_[static_cast<std::size_t>(i)] == token) return i;
  }
  return std::nullopt;
}

std::vector<int> Vocabulary::tokenize(std::string_view text) const {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    int best = -1;
    std::size_t best_len = 0;
    for (int id = 3; id < size(); ++id) {
      const std::string& t = tokens_[static_cast<std::size_t>(id)];
      if (t.size() > best_len && text.compare(pos, t.size(), t) == 0) {
        best = id;
        best_len = t.size();
      }
    }
    if (best < 0) {
      throw ConfigError("cannot tokenize text at byte " + std::to_string(pos) +
                        ": '" + std::string(text.substr(pos, 12)) + "'");
    }
    out.push_back(best);
    pos += best_len;
  }
  return out;
}

std::string Vocabulary::detokenize(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= size()) throw ConfigError("detokenize: id out of range");
    if (id < 3) continue;
    out += tokens_[static_cast<std::size_t>(id)];
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  json j = tokens_;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write vocabulary: " + path.string());
  out << j.dump(2) << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocabulary: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed vocabulary " + path.string() + ": " + e.what());
  }
  return Vocabulary(j.get<std::vector<std::string>>());
}

// ---------------------------------------------------------------------------
// Shared trunk helpers. The untaped routines below mirror the taped graph
// operation-for-operation so both paths produce identical doubles.

namespace {

struct TrunkRef {
  const Param* embed;  // V x D
  const Param* w_xh;   // H x D
  const Param* w_hh;   // H x H
  const Param* b_h;    // H x 1
};

TrunkRef trunk_of(const ParamStore& ps) {
  return TrunkRef{&ps.at("embed"), &ps.at("w_xh"), &ps.at("w_hh"), &ps.at("b_h")};
}

struct Scratch {
  std::vector<double> t1, t2;
};

void advance_hidden(const TrunkRef& t, int token, std::vector<double>& h,
                    Scratch& s) {
  const std::size_t d = t.w_xh->shape.cols;
  const std::size_t hd = t.w_xh->shape.rows;
  s.t1.resize(hd);
  s.t2.resize(hd);
  const double* e = t.embed->value.data() + static_cast<std::size_t>(token) * d;
  numerics::kernels::matmul(t.w_xh->value.data(), hd, d, e, 1, s.t1.data());
  numerics::kernels::matmul(t.w_hh->value.data(), hd, hd, h.data(), 1, s.t2.data());
  for (std::size_t i = 0; i < hd; ++i) {
    h[i] = std::tanh((s.t1[i] + s.t2[i]) + t.b_h->value[i]);
  }
}

void logits_from_hidden(const ParamStore& ps, const std::vector<double>& h,
                        std::vector<double>& z) {
  const Param& w_out = ps.at("w_out");
  const Param& b_out = ps.at("b_out");
  const std::size_t v = w_out.shape.rows;
  z.resize(v);
  numerics::kernels::matmul(w_out.value.data(), v, w_out.shape.cols, h.data(), 1,
                            z.data());
  for (std::size_t i = 0; i < v; ++i) z[i] = z[i] + b_out.value[i];
}

// Taped single step matching advance_hidden exactly.
Value taped_step(Tape& tape, Value embed_leaf, Value w_xh, Value w_hh, Value b_h,
                 int token, Value h) {
  Value e = tape.embedding_row(embed_leaf, static_cast<std::size_t>(token));
  Value t1 = tape.matmul(w_xh, e);
  Value t2 = tape.matmul(w_hh, h);
  Value pre = tape.add(tape.add(t1, t2), b_h);
  return tape.tanh_op(pre);
}

int argmax_lowest(const std::vector<double>& z) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(z.size()); ++i) {
    if (z[static_cast<std::size_t>(i)] > z[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

void validate_tokens(std::span<const int> toks, int vocab_size, const char* what) {
  for (int t : toks) {
    if (t < 0 || t >= vocab_size) {
      throw ConfigError(std::string(what) + ": token id " + std::to_string(t) +
                        " outside vocabulary");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// PolicyModel

PolicyModel::PolicyModel(Vocabulary vocab, int embed_dim, int hidden_dim,
                         std::uint64_t init_seed)
    : vocab_(std::move(vocab)), embed_dim_(embed_dim), hidden_dim_(hidden_dim) {
  const auto v = static_cast<std::size_t>(vocab_.size());
  const auto d = static_cast<std::size_t>(embed_dim_);
  const auto h = static_cast<std::size_t>(hidden_dim_);
  Param& embed = params_.add("embed", v, d);
  Param& w_xh = params_.add("w_xh", h, d);
  Param& w_hh = params_.add("w_hh", h, h);
  params_.add("b_h", h, 1);
  Param& w_out = params_.add("w_out", v, h);
  params_.add("b_out", v, 1);
  Rng rng(derive_seed(init_seed, "policy-init"));
  const double stddev = 0.08;
  for (Param* p : {&embed, &w_xh, &w_hh, &w_out}) {
    for (double& x : p->value) x = rng.normal(0.0, stddev);
  }
}

PolicyModel::PolicyModel(Vocabulary vocab, int embed_dim, int hidden_dim,
                         ParamStore params)
    : vocab_(std::move(vocab)),
      embed_dim_(embed_dim),
      hidden_dim_(hidden_dim),
      params_(std::move(params)) {
  for (const char* name : {"embed", "w_xh", "w_hh", "b_h", "w_out", "b_out"}) {
    if (!params_.has(name)) {
      throw ConfigError(std::string("policy parameters missing ") + name);
    }
  }
}

PolicyModel PolicyModel::clone() const {
  return PolicyModel(vocab_, embed_dim_, hidden_dim_, params_.clone_values());
}

SampledResponse PolicyModel::sample(std::span<const int> prompt, double temperature,
                                    int max_new_tokens, Rng& rng) const {
  if (temperature < 0.0) throw ConfigError("sample: negative temperature");
  validate_tokens(prompt, vocab_.size(), "sample prompt");
  const TrunkRef trunk = trunk_of(params_);
  Scratch scratch;
  std::vector<double> h(static_cast<std::size_t>(hidden_dim_), 0.0);
  advance_hidden(trunk, Vocabulary::kBos, h, scratch);
  for (int t : prompt) advance_hidden(trunk, t, h, scratch);

  SampledResponse out;
  std::vector<double> z, zt, lp, probs;
  for (int step = 0; step < max_new_tokens; ++step) {
    logits_from_hidden(params_, h, z);
    const std::size_t v = z.size();
    int chosen;
    if (temperature == 0.0) {
      chosen = argmax_lowest(z);
      lp.resize(v);
      numerics::kernels::log_softmax(z.data(), v, lp.data());
    } else {
      zt.resize(v);
      for (std::size_t i = 0; i < v; ++i) zt[i] = z[i] / temperature;
      lp.resize(v);
      numerics::kernels::log_softmax(zt.data(), v, lp.data());
      probs.resize(v);
      for (std::size_t i = 0; i < v; ++i) probs[i] = std::exp(lp[i]);
      const double u = rng.uniform01();
      double cum = 0.0;
      chosen = static_cast<int>(v) - 1;
      for (std::size_t i = 0; i < v; ++i) {
        cum += probs[i];
        if (u < cum) {
          chosen = static_cast<int>(i);
          break;
        }
      }
    }
    out.tokens.push_back(chosen);
    out.logprobs.push_back(lp[static_cast<std::size_t>(chosen)]);
    if (chosen == Vocabulary::kEos) break;
    advance_hidden(trunk, chosen, h, scratch);
  }
  return out;
}

std::vector<double> PolicyModel::sequence_logprob(std::span<const int> prompt,
                                                  std::span<const int> response) const {
  validate_tokens(prompt, vocab_.size(), "sequence_logprob prompt");
  validate_tokens(response, vocab_.size(), "sequence_logprob response");
  const TrunkRef trunk = trunk_of(params_);
  Scratch scratch;
  std::vector<double> h(static_cast<std::size_t>(hidden_dim_), 0.0);
  advance_hidden(trunk, Vocabulary::kBos, h, scratch);
  for (int t : prompt) advance_hidden(trunk, t, h, scratch);
  std::vector<double> out;
  out.reserve(response.size());
  std::vector<double> z;
  for (int tok : response) {
    logits_from_hidden(params_, h, z);
    const double lse = numerics::kernels::logsumexp(z.data(), z.size());
    out.push_back(z[static_cast<std::size_t>(tok)] - lse);
    advance_hidden(trunk, tok, h, scratch);
  }
  return out;
}

std::vector<std::vector<double>> PolicyModel::response_log_distributions(
    std::span<const int> prompt, std::span<const int> response) const {
  validate_tokens(prompt, vocab_.size(), "log distribution prompt");
  validate_tokens(response, vocab_.size(), "log distribution response");
  const TrunkRef trunk = trunk_of(params_);
  Scratch scratch;
  std::vector<double> h(static_cast<std::size_t>(hidden_dim_), 0.0);
  advance_hidden(trunk, Vocabulary::kBos, h, scratch);
  for (int t : prompt) advance_hidden(trunk, t, h, scratch);
  std::vector<std::vector<double>> out;
  out.reserve(response.size());
  std::vector<double> z;
  for (int tok : response) {
    logits_from_hidden(params_, h, z);
    std::vector<double> lp(z.size());
    numerics::kernels::log_softmax(z.data(), z.size(), lp.data());
    out.push_back(std::move(lp));
    advance_hidden(trunk, tok, h, scratch);
  }
  return out;
}

std::vector<std::vector<double>> PolicyModel::response_hidden_states(
    std::span<const int> prompt, std::span<const int> response) const {
  validate_tokens(prompt, vocab_.size(), "hidden prompt");
  validate_tokens(response, vocab_.size(), "hidden response");
  const TrunkRef trunk = trunk_of(params_);
  Scratch scratch;
  std::vector<double> h(static_cast<std::size_t>(hidden_dim_), 0.0);
  advance_hidden(trunk, Vocabulary::kBos, h, scratch);
  for (int t : prompt) advance_hidden(trunk, t, h, scratch);
  std::vector<std::vector<double>> out;
  out.reserve(response.size() + 1);
  out.push_back(h);
  for (int tok : response) {
    advance_hidden(trunk, tok, h, scratch);
    out.push_back(h);
  }
  return out;
}

std::vector<Value> PolicyModel::response_logits(Tape& tape,
                                                std::span<const int> prompt,
                                                std::span<const int> response) const {
  return response_logits(tape, prompt, response, nullptr);
}

std::vector<Value> PolicyModel::response_logits(
    Tape& tape, std::span<const int> prompt, std::span<const int> response,
    std::vector<Value>* hiddens) const {
  validate_tokens(prompt, vocab_.size(), "response_logits prompt");
  validate_tokens(response, vocab_.size(), "response_logits response");
  auto& ps = const_cast<ParamStore&>(params_);
  Value embed = tape.leaf(ps.at("embed"));
  Value w_xh = tape.leaf(ps.at("w_xh"));
  Value w_hh = tape.leaf(ps.at("w_hh"));
  Value b_h = tape.leaf(ps.at("b_h"));
  Value w_out = tape.leaf(ps.at("w_out"));
  Value b_out = tape.leaf(ps.at("b_out"));

  Value h = tape.constant(std::vector<double>(static_cast<std::size_t>(hidden_dim_), 0.0),
                          Shape{static_cast<std::size_t>(hidden_dim_), 1});
  h = taped_step(tape, embed, w_xh, w_hh, b_h, Vocabulary::kBos, h);
  for (int t : prompt) h = taped_step(tape, embed, w_xh, w_hh, b_h, t, h);

  std::vector<Value> logits;
  logits.reserve(response.size());
  for (std::size_t j = 0; j < response.size(); ++j) {
    if (hiddens) hiddens->push_back(h);
    Value z = tape.add(tape.matmul(w_out, h), b_out);
    logits.push_back(z);
    h = taped_step(tape, embed, w_xh, w_hh, b_h, response[j], h);
  }
  return logits;
}

void PolicyModel::save(const std::filesystem::path& path, const std::string& meta_json,
                       const numerics::AdamState* adam) const {
  json meta = meta_json.empty() ? json::object() : json::parse(meta_json);
  json model;
  model["kind"] = "policy";
  model["embed_dim"] = embed_dim_;
  model["hidden_dim"] = hidden_dim_;
  json toks = json::array();
  for (int i = 0; i < vocab_.size(); ++i) toks.push_back(vocab_.token(i));
  model["vocab"] = std::move(toks);
  meta["model"] = std::move(model);
  numerics::save_checkpoint(path, params_, adam, meta.dump());
}

LoadedPolicy PolicyModel::load(const std::filesystem::path& path) {
  numerics::LoadedCheckpoint ck = numerics::load_checkpoint(path);
  json meta = json::parse(ck.meta_json);
  if (!meta.contains("model") || meta["model"].value("kind", "") != "policy") {
    throw IoError("checkpoint is not a policy model: " + path.string());
  }
  const json& m = meta["model"];
  Vocabulary vocab(m.at("vocab").get<std::vector<std::string>>());
  PolicyModel model(std::move(vocab), m.at("embed_dim").get<int>(),
                    m.at("hidden_dim").get<int>(), std::move(ck.params));
  return LoadedPolicy{std::move(model), std::move(ck.adam), meta.dump()};
}

// ---------------------------------------------------------------------------
// RewardModel

RewardModel::RewardModel(Vocabulary vocab, int embed_dim, int hidden_dim,
                         ParamStore params)
    : vocab_(std::move(vocab)),
      embed_dim_(embed_dim),
      hidden_dim_(hidden_dim),
      params_(std::move(params)) {
  for (const char* name : {"embed", "w_xh", "w_hh", "b_h", "w_head", "b_head"}) {
    if (!params_.has(name)) {
      throw ConfigError(std::string("reward parameters missing ") + name);
    }
  }
}

RewardModel RewardModel::init_from_policy(const PolicyModel& policy) {
  const ParamStore& src = policy.params();
  ParamStore ps;
  for (const char* name : {"embed", "w_xh", "w_hh", "b_h"}) {
    const Param& s = src.at(name);
    Param& d = ps.add(name, s.shape.rows, s.shape.cols);
    d.value = s.value;
  }
  ps.add("w_head", 1, static_cast<std::size_t>(policy.hidden_dim()));
  ps.add("b_head", 1, 1);
  return RewardModel(policy.vocab(), policy.embed_dim(), policy.hidden_dim(),
                     std::move(ps));
}

RewardModel RewardModel::clone() const {
  return RewardModel(vocab_, embed_dim_, hidden_dim_, params_.clone_values());
}

namespace {
std::span<const int> strip_trailing_pad(std::span<const int> toks) {
  std::size_t n = toks.size();
  while (n > 0 && toks[n - 1] == Vocabulary::kPad) --n;
  return toks.subspan(0, n);
}
}  // namespace

double RewardModel::score(std::span<const int> prompt,
                          std::span<const int> response) const {
  validate_tokens(prompt, vocab_.size(), "rm prompt");
  validate_tokens(response, vocab_.size(), "rm response");
  response = strip_trailing_pad(response);
  const TrunkRef trunk = trunk_of(params_);
  Scratch scratch;
  std::vector<double> h(static_cast<std::size_t>(hidden_dim_), 0.0);
  advance_hidden(trunk, Vocabulary::kBos, h, scratch);
  for (int t : prompt) advance_hidden(trunk, t, h, scratch);
  for (int t : response) advance_hidden(trunk, t, h, scratch);
  const Param& w = params_.at("w_head");
  const Param& b = params_.at("b_head");
  double s = 0.0;
  numerics::kernels::matmul(w.value.data(), 1, w.shape.cols, h.data(), 1, &s);
  return s + b.value[0];
}

double RewardModel::score_text(std::string_view prompt_text,
                               std::string_view response_text) const {
  std::vector<int> p = vocab_.tokenize(prompt_text);
  std::vector<int> r = vocab_.tokenize(response_text);
  r.push_back(Vocabulary::kEos);
  return score(p, r);
}

Value RewardModel::score_taped(Tape& tape, std::span<const int> prompt,
                               std::span<const int> response) const {
  validate_tokens(prompt, vocab_.size(), "rm prompt");
  validate_tokens(response, vocab_.size(), "rm response");
  response = strip_trailing_pad(response);
  auto& ps = const_cast<ParamStore&>(params_);
  Value embed = tape.leaf(ps.at("embed"));
  Value w_xh = tape.leaf(ps.at("w_xh"));
  Value w_hh = tape.leaf(ps.at("w_hh"));
  Value b_h = tape.leaf(ps.at("b_h"));
  Value w_head = tape.leaf(ps.at("w_head"));
  Value b_head = tape.leaf(ps.at("b_head"));

  Value h = tape.constant(std::vector<double>(static_cast<std::size_t>(hidden_dim_), 0.0),
                          Shape{static_cast<std::size_t>(hidden_dim_), 1});
  h = taped_step(tape, embed, w_xh, w_hh, b_h, Vocabulary::kBos, h);
  for (int t : prompt) h = taped_step(tape, embed, w_xh, w_hh, b_h, t, h);
  for (int t : response) h = taped_step(tape, embed, w_xh, w_hh, b_h, t, h);
  return tape.add(tape.matmul(w_head, h), b_head);
}

void RewardModel::save(const std::filesystem::path& path, const std::string& meta_json,
                       const numerics::AdamState* adam) const {
  json meta = meta_json.empty() ? json::object() : json::parse(meta_json);
  json model;
  model["kind"] = "reward";
  model["embed_dim"] = embed_dim_;
  model["hidden_dim"] = hidden_dim_;
  json toks = json::array();
  for (int i = 0; i < vocab_.size(); ++i) toks.push_back(vocab_.token(i));
  model["vocab"] = std::move(toks);
  meta["model"] = std::move(model);
  numerics::save_checkpoint(path, params_, adam, meta.dump());
}

LoadedReward RewardModel::load(const std::filesystem::path& path) {
  numerics::LoadedCheckpoint ck = numerics::load_checkpoint(path);
  json meta = json::parse(ck.meta_json);
  if (!meta.contains("model") || meta["model"].value("kind", "") != "reward") {
    throw IoError("checkpoint is not a reward model: " + path.string());
  }
  const json& m = meta["model"];
  Vocabulary vocab(m.at("vocab").get<std::vector<std::string>>());
  RewardModel model(std::move(vocab), m.at("embed_dim").get<int>(),
                    m.at("hidden_dim").get<int>(), std::move(ck.params));
  return LoadedReward{std::move(model), std::move(ck.adam), meta.dump()};
}

// ---------------------------------------------------------------------------
// Value head

void ensure_value_head(PolicyModel& policy) {
  if (!policy.params().has("w_val")) {
    policy.params().add("w_val", 1, static_cast<std::size_t>(policy.hidden_dim()));
    policy.params().add("b_val", 1, 1);
  }
}

bool has_value_head(const PolicyModel& policy) {
  return policy.params().has("w_val");
}

std::vector<double> value_estimates(const PolicyModel& policy,
                                    std::span<const int> prompt,
                                    std::span<const int> response) {
  if (!has_value_head(policy)) {
    throw ConfigError("value_estimates: policy has no value head");
  }
  const auto hiddens = policy.response_hidden_states(prompt, response);
  const Param& w = policy.params().at("w_val");
  const Param& b = policy.params().at("b_val");
  std::vector<double> out;
  out.reserve(response.size());
  for (std::size_t t = 0; t < response.size(); ++t) {
    double s = 0.0;
    numerics::kernels::matmul(w.value.data(), 1, w.shape.cols, hiddens[t].data(), 1, &s);
    out.push_back(s + b.value[0]);
  }
  return out;
}

std::string greedy_response_text(const PolicyModel& policy,
                                 std::string_view prompt_text,
                                 int max_new_tokens) {
  const std::vector<int> prompt = policy.vocab().tokenize(prompt_text);
  Rng rng(0);
  const SampledResponse r = policy.sample(prompt, 0.0, max_new_tokens, rng);
  return policy.vocab().detokenize(r.tokens);
}

}  // namespace drd::models
