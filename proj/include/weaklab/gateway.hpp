#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "httplib.h"
#include "weaklab/corpus.hpp"
#include "weaklab/digest.hpp"
#include "weaklab/error.hpp"
#include "weaklab/json_io.hpp"
#include "weaklab/prompt.hpp"

namespace weaklab {

/// Parameters of one completion call. Raw-completion contract: the chat
/// format is already embedded in the rendered prompt, so the wire carries a
/// prompt string in and generated text out.
struct GenerationRequest {
  std::string model_id;
  std::string prompt;
  std::uint32_t max_new_tokens = 128;
  std::uint32_t top_k = 1;
  std::vector<std::string> stop = {"</s>"};
};

struct GenerationResult {
  std::string text;
  double latency = 0;  // seconds; mocks report 0 so artifacts stay byte-stable
  bool from_cache = false;
};

/// SHA-256 over the canonical serialization of the request. 64 lowercase hex.
inline std::string cache_key(const GenerationRequest& req) {
  const json canonical{{"model_id", req.model_id},
                       {"prompt", req.prompt},
                       {"max_new_tokens", req.max_new_tokens},
                       {"top_k", req.top_k},
                       {"stop", req.stop}};
  return sha256_hex(dump_json(canonical));
}

struct CompletionOutcome {
  bool ok = false;
  std::string text;
  double latency = 0;
  std::string error;
  int http_status = 0;
  bool transport_failure = false;  // retryable
};

class CompletionBackend {
public:
  virtual ~CompletionBackend() = default;
  virtual CompletionOutcome complete(const GenerationRequest& req) = 0;
  virtual std::string describe() const = 0;
};

// ---------------------------------------------------------------------------
// Remote backend: POST {base_url}/v1/completions with
// {"model", "prompt", "max_tokens", "top_k", "stop"}, expecting
// {"choices":[{"text": ...}]}.
// ---------------------------------------------------------------------------

class HttpBackend : public CompletionBackend {
public:
  explicit HttpBackend(std::string base_url, double timeout_seconds = 120.0)
      : timeout_seconds_(timeout_seconds) {
    auto rest = std::string_view(base_url);
    const auto scheme_end = rest.find("://");
    std::size_t path_start = std::string_view::npos;
    if (scheme_end != std::string_view::npos)
      path_start = rest.find('/', scheme_end + 3);
    else
      path_start = rest.find('/');
    if (path_start == std::string_view::npos) {
      host_ = base_url;
    } else {
      host_ = std::string(rest.substr(0, path_start));
      path_prefix_ = std::string(rest.substr(path_start));
      while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    }
  }

  CompletionOutcome complete(const GenerationRequest& req) override {
    CompletionOutcome out;
    const json body{{"model", req.model_id},
                    {"prompt", req.prompt},
                    {"max_tokens", req.max_new_tokens},
                    {"top_k", req.top_k},
                    {"stop", req.stop}};
    const auto t0 = std::chrono::steady_clock::now();

    // One client per call keeps this trivially safe under the batch pool.
    httplib::Client client(host_);
    const auto timeout = std::chrono::duration<double>(timeout_seconds_);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));

    auto res = client.Post(path_prefix_ + "/v1/completions", dump_json(body),
                           "application/json");
    out.latency = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!res) {
      out.transport_failure = true;
      out.error = "transport failure: " + httplib::to_string(res.error());
      return out;
    }
    if (res->status < 200 || res->status >= 300) {
      out.http_status = res->status;
      out.error = "server returned status " + std::to_string(res->status) + ": " +
                  res->body.substr(0, 200);
      return out;
    }
    const json j = json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array() ||
        j["choices"].empty() || !j["choices"][0].contains("text")) {
      out.error = "malformed completion response: " + res->body.substr(0, 200);
      return out;
    }
    out.text = j["choices"][0]["text"].get<std::string>();
    out.ok = true;
    return out;
  }

  std::string describe() const override { return "http:" + host_ + path_prefix_; }

private:
  std::string host_;
  std::string path_prefix_;
  double timeout_seconds_;
};

// ---------------------------------------------------------------------------
// Deterministic mocks for desk-scale verification.
// ---------------------------------------------------------------------------

/// Always returns the same text.
class FixedMock : public CompletionBackend {
public:
  explicit FixedMock(std::string text = "[]") : text_(std::move(text)) {}

  CompletionOutcome complete(const GenerationRequest&) override {
    return {true, text_, 0.0, "", 0, false};
  }

  std::string describe() const override { return "mock:fixed"; }

private:
  std::string text_;
};

namespace detail {

/// The final `<s>[INST] ... [/INST]` turn of a rendered prompt.
inline std::optional<std::string> input_sentence_of(std::string_view prompt) {
  constexpr std::string_view open = "<s>[INST] ";
  constexpr std::string_view close = " [/INST]";
  if (prompt.size() < close.size() || prompt.substr(prompt.size() - close.size()) != close)
    return std::nullopt;
  const auto body = prompt.substr(0, prompt.size() - close.size());
  const auto pos = body.rfind(open);
  if (pos == std::string_view::npos) return std::nullopt;
  return std::string(body.substr(pos + open.size()));
}

}  // namespace detail

/// Answers with the serialized gold labels of the prompt's input sentence,
/// turning the downstream pipeline into an exact oracle against gold.
class EchoGoldMock : public CompletionBackend {
public:
  explicit EchoGoldMock(const Corpus& corpus) {
    for (const Note& note : corpus)
      for (const Sentence& s : note.sentences)
        by_sentence_[s.text] = serialize_labels(label_pairs(gold_in_sentence(note, s.index)));
  }

  CompletionOutcome complete(const GenerationRequest& req) override {
    const auto sentence = detail::input_sentence_of(req.prompt);
    if (!sentence) return {false, "", 0.0, "prompt does not end with an input turn", 0, false};
    const auto it = by_sentence_.find(*sentence);
    if (it == by_sentence_.end())
      return {false, "", 0.0, "sentence not in the gold index: " + *sentence, 0, false};
    return {true, it->second, 0.0, "", 0, false};
  }

  std::string describe() const override { return "mock:echo-gold"; }

private:
  std::unordered_map<std::string, std::string> by_sentence_;
};

/// Replays responses from a JSON-Lines script of {"sentence": ..., "text": ...}.
class FileScriptedMock : public CompletionBackend {
public:
  explicit FileScriptedMock(const std::filesystem::path& script) {
    const auto lines = split_lines(read_file(script));
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      json j = json::parse(lines[i], nullptr, false);
      if (j.is_discarded() || !j.contains("sentence") || !j.contains("text"))
        throw ParseError("malformed mock script line in " + script.string(), i + 1);
      by_sentence_[j["sentence"].get<std::string>()] = j["text"].get<std::string>();
    }
  }

  CompletionOutcome complete(const GenerationRequest& req) override {
    const auto sentence = detail::input_sentence_of(req.prompt);
    if (!sentence) return {false, "", 0.0, "prompt does not end with an input turn", 0, false};
    const auto it = by_sentence_.find(*sentence);
    if (it == by_sentence_.end())
      return {false, "", 0.0, "sentence not in the mock script: " + *sentence, 0, false};
    return {true, it->second, 0.0, "", 0, false};
  }

  std::string describe() const override { return "mock:file"; }

private:
  std::unordered_map<std::string, std::string> by_sentence_;
};

/// Simulates transport failures on a deterministic, seed-reproducible subset
/// of prompts; everything else is delegated to the inner backend.
class FaultInjectMock : public CompletionBackend {
public:
  FaultInjectMock(double fault_rate, std::uint64_t seed,
                  std::shared_ptr<CompletionBackend> inner = nullptr)
      : fault_rate_(fault_rate),
        seed_(seed),
        inner_(inner ? std::move(inner) : std::make_shared<FixedMock>("[]")) {
    if (fault_rate_ < 0 || fault_rate_ > 1)
      throw ConfigError("fault rate must lie in [0, 1]");
  }

  CompletionOutcome complete(const GenerationRequest& req) override {
    const auto digest = sha256_hex(std::to_string(seed_) + "|" + req.prompt);
    std::uint64_t bits = 0;
    for (int i = 0; i < 16; ++i)
      bits = bits * 16 + static_cast<std::uint64_t>(
                             digest[i] <= '9' ? digest[i] - '0' : digest[i] - 'a' + 10);
    const double u = static_cast<double>(bits) / std::pow(2.0, 64.0);
    if (u < fault_rate_)
      return {false, "", 0.0, "transport failure: injected fault", 0, true};
    return inner_->complete(req);
  }

  std::string describe() const override { return "mock:fault"; }

private:
  double fault_rate_;
  std::uint64_t seed_;
  std::shared_ptr<CompletionBackend> inner_;
};

// ---------------------------------------------------------------------------
// Gateway: caching + retry + bounded-parallel batch execution.
// ---------------------------------------------------------------------------

struct RetryPolicy {
  double base_seconds = 1.0;
  double factor = 2.0;
  int max_attempts = 5;
};

class Gateway {
public:
  explicit Gateway(std::shared_ptr<CompletionBackend> backend,
                   std::optional<std::filesystem::path> cache_dir = std::nullopt,
                   RetryPolicy retry = {})
      : backend_(std::move(backend)), cache_dir_(std::move(cache_dir)), retry_(retry) {}

  /// Cache-through completion. Transport failures are retried with
  /// exponential backoff; protocol errors (non-2xx, malformed body) are not.
  GenerationResult generate(const GenerationRequest& req) {
    const std::string key = cache_key(req);
    if (auto cached = lookup_cache(key)) {
      cache_hits_.fetch_add(1, std::memory_order_relaxed);
      return *cached;
    }
    CompletionOutcome outcome;
    for (int attempt = 1; attempt <= retry_.max_attempts; ++attempt) {
      outcome = backend_->complete(req);
      if (outcome.ok) break;
      if (!outcome.transport_failure)
        throw GatewayError(outcome.error, attempt, outcome.http_status);
      if (attempt == retry_.max_attempts)
        throw GatewayError(outcome.error + " (after " + std::to_string(attempt) +
                               " attempts)",
                           attempt);
      const double delay = retry_.base_seconds * std::pow(retry_.factor, attempt - 1);
      if (delay > 0) std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    }
    GenerationResult result{outcome.text, outcome.latency, false};
    store_cache(key, req, result);
    cache_misses_.fetch_add(1, std::memory_order_relaxed);
    return result;
  }

  struct BatchEntry {
    bool ok = false;
    GenerationResult result;
    std::string error;
  };

  /// Render one prompt per sentence and run them through `generate` with at
  /// most `parallelism` requests in flight. Results come back in input order;
  /// per-sentence failures fill their slot and the batch continues.
  std::vector<BatchEntry> run_batch(const std::vector<std::string>& sentences,
                                    const PromptTemplate& tpl,
                                    const GenerationRequest& defaults,
                                    std::size_t parallelism) {
    if (parallelism < 1) throw Error("run_batch: parallelism must be >= 1");
    std::vector<BatchEntry> entries(sentences.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      while (true) {
        const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
        if (i >= sentences.size()) return;
        BatchEntry& slot = entries[i];
        try {
          GenerationRequest req = defaults;
          req.prompt = render_inference_prompt(tpl, sentences[i]);
          slot.result = generate(req);
          slot.ok = true;
        } catch (const std::exception& e) {
          slot.ok = false;
          slot.error = e.what();
        }
      }
    };
    const std::size_t workers = std::min(parallelism, std::max<std::size_t>(sentences.size(), 1));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return entries;
  }

  std::size_t cache_hits() const { return cache_hits_.load(std::memory_order_relaxed); }
  std::size_t cache_misses() const { return cache_misses_.load(std::memory_order_relaxed); }
  std::string describe_backend() const { return backend_->describe(); }

private:
  std::filesystem::path cache_path(const std::string& key) const {
    return *cache_dir_ / key.substr(0, 2) / (key + ".json");
  }

  std::optional<GenerationResult> lookup_cache(const std::string& key) const {
    if (!cache_dir_) return std::nullopt;
    const auto path = cache_path(key);
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) return std::nullopt;
    const json j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded() || !j.contains("text")) return std::nullopt;
    GenerationResult r;
    r.text = j["text"].get<std::string>();
    r.latency = j.value("latency", 0.0);
    r.from_cache = true;
    return r;
  }

  void store_cache(const std::string& key, const GenerationRequest& req,
                   const GenerationResult& result) const {
    if (!cache_dir_) return;
    const json j{{"request",
                  {{"model_id", req.model_id},
                   {"prompt", req.prompt},
                   {"max_new_tokens", req.max_new_tokens},
                   {"top_k", req.top_k},
                   {"stop", req.stop}}},
                 {"text", result.text},
                 {"latency", result.latency}};
    write_file_atomic(cache_path(key), dump_json(j) + "\n");
  }

  std::shared_ptr<CompletionBackend> backend_;
  std::optional<std::filesystem::path> cache_dir_;
  RetryPolicy retry_;
  std::atomic<std::size_t> cache_hits_{0};
  std::atomic<std::size_t> cache_misses_{0};
};

}  // namespace weaklab
