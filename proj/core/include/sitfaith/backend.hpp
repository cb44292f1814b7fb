#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "sitfaith/util.hpp"

namespace sitfaith::backend {

enum class Role { System, User, Assistant };

std::string role_name(Role role);
Role role_from_name(const std::string& name);

struct Message {
    Role role = Role::User;
    std::string text;

    bool operator==(const Message&) const = default;
};

struct GenerationRequest {
    std::vector<Message> messages;
    double temperature = 0.0;
    int max_tokens = 256;
    int n_samples = 1;
    bool want_logprobs = false;
    std::optional<std::uint64_t> seed;

    /// Throws on violated invariants (empty messages, n_samples > 1 at
    /// temperature 0, non-positive limits).
    void validate() const;

    bool operator==(const GenerationRequest&) const = default;
};

struct TokenLogprob {
    std::string token;
    double logprob = 0.0;  // <= 0

    bool operator==(const TokenLogprob&) const = default;
};

struct Sample {
    std::string text;
    std::optional<std::vector<TokenLogprob>> logprobs;

    bool operator==(const Sample&) const = default;
};

struct GenerationResponse {
    std::vector<Sample> samples;
    std::string model_id;
    bool cached = false;
    int retries = 0;

    const Sample& single() const {
        if (samples.size() != 1) throw Error("expected exactly one sample");
        return samples.front();
    }
};

struct BackendConfig {
    std::string endpoint = "https://api.openai.com";
    std::string model = "gpt-4o-mini";
    std::string api_key;          // falls back to $OPENAI_API_KEY
    int max_concurrent = 4;       // >= 1
    int retry_limit = 5;
    int backoff_base_ms = 500;    // exponential with jitter, capped at 30 s
    std::string cache_dir;        // empty disables caching

    void validate() const;
};

/// Cache key: digest over everything that can change the response.
std::string request_digest(const GenerationRequest& request, const std::string& model_id);

/// Transport-level interface. Implementations return raw responses; caching,
/// validation, and concurrency live in Client.
class Backend {
public:
    virtual ~Backend() = default;
    virtual GenerationResponse generate_raw(const GenerationRequest& request) = 0;
    virtual std::string model_id() const = 0;
};

// --- scripted mock ---------------------------------------------------------

/// One scripted reply. `replies` are consumed round-robin across the samples
/// of a request (sample i gets replies[i % size]).
struct ScriptEntry {
    std::string digest;     // exact request digest, or
    std::string substring;  // substring of the concatenated message texts
    std::vector<Sample> replies;
};

struct MockScript {
    std::vector<ScriptEntry> entries;

    std::string to_jsonl() const;
    static MockScript from_jsonl(const std::string& text);
};

/// Deterministic scripted backend. Unmatched requests throw; two entries with
/// the same matcher are rejected at registration; a request matching more
/// than one substring entry is ambiguous and throws.
class MockBackend final : public Backend {
public:
    explicit MockBackend(std::string model_id = "mock");
    explicit MockBackend(const MockScript& script, std::string model_id = "mock");

    /// Registers a reply for requests whose message text contains `substring`.
    void script_substring(const std::string& substring, std::vector<Sample> replies);
    void script_substring(const std::string& substring, const std::string& reply);
    /// Registers a reply for the exact request digest.
    void script_digest(const std::string& digest, std::vector<Sample> replies);
    void script_request(const GenerationRequest& request, std::vector<Sample> replies);
    void script_request(const GenerationRequest& request, const std::string& reply);

    GenerationResponse generate_raw(const GenerationRequest& request) override;
    std::string model_id() const override { return model_id_; }

    // Instrumentation for tests.
    int call_count() const { return calls_.load(); }
    int max_in_flight() const { return max_in_flight_.load(); }
    void set_latency_ms(int ms) { latency_ms_ = ms; }

private:
    void add_entry(ScriptEntry entry);
    const ScriptEntry* find(const GenerationRequest& request) const;

    std::string model_id_;
    std::vector<ScriptEntry> entries_;
    std::atomic<int> calls_{0};
    std::atomic<int> in_flight_{0};
    std::atomic<int> max_in_flight_{0};
    int latency_ms_ = 0;
};

// --- HTTP backend -----------------------------------------------------------

/// OpenAI-compatible chat-completions client. Retries 429/5xx and transport
/// errors with exponential backoff (jittered, capped at 30 s).
class HttpBackend final : public Backend {
public:
    explicit HttpBackend(BackendConfig config);

    GenerationResponse generate_raw(const GenerationRequest& request) override;
    std::string model_id() const override { return config_.model; }

private:
    BackendConfig config_;
    std::string host_;
    int port_ = 0;
    bool tls_ = false;
    std::string path_prefix_;
};

// --- client ------------------------------------------------------------------

/// Request-level entry point: validation, response cache (one JSON file per
/// request digest), and bounded-concurrency dispatch. All results are values;
/// the cache is safe for concurrent readers with serialized writers.
class Client {
public:
    Client(std::shared_ptr<Backend> backend, BackendConfig config);

    GenerationResponse generate(const GenerationRequest& request);

    /// generate with request.n_samples = k.
    GenerationResponse sample_n(GenerationRequest request, int k);

    /// Runs `fn(i)` for i in [0, count) on at most max_concurrent threads.
    /// Exceptions are captured and rethrown on the caller thread (first one
    /// by index). Results must be written into pre-sized storage by `fn`.
    void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) const;

    std::string digest(const GenerationRequest& request) const {
        return request_digest(request, backend_->model_id());
    }
    const BackendConfig& config() const { return config_; }

private:
    std::optional<GenerationResponse> cache_lookup(const std::string& digest) const;
    void cache_store(const std::string& digest, const GenerationRequest& request,
                     const GenerationResponse& response);

    std::shared_ptr<Backend> backend_;
    BackendConfig config_;
    mutable std::mutex cache_write_mutex_;
};

}  // namespace sitfaith::backend
