#include "sitfaith/backend.hpp"

#include <httplib.h>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <random>

namespace sitfaith::backend {

using nlohmann::json;
using nlohmann::ordered_json;

std::string role_name(Role role) {
    switch (role) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
    }
    throw Error("unknown role");
}

Role role_from_name(const std::string& name) {
    if (name == "system") return Role::System;
    if (name == "user") return Role::User;
    if (name == "assistant") return Role::Assistant;
    throw Error("unknown role: " + name);
}

void GenerationRequest::validate() const {
    if (messages.empty()) throw Error("generation request has no messages");
    if (temperature < 0.0) throw Error("temperature must be >= 0");
    if (max_tokens <= 0) throw Error("max_tokens must be positive");
    if (n_samples <= 0) throw Error("n_samples must be positive");
    if (n_samples > 1 && temperature <= 0.0) {
        throw Error("n_samples > 1 requires temperature > 0");
    }
}

void BackendConfig::validate() const {
    if (max_concurrent < 1) throw Error("max_concurrent must be >= 1");
    if (retry_limit < 0) throw Error("retry_limit must be >= 0");
}

namespace {

ordered_json request_json(const GenerationRequest& request, const std::string& model_id) {
    ordered_json messages = ordered_json::array();
    for (const Message& m : request.messages) {
        messages.push_back({{"role", role_name(m.role)}, {"content", m.text}});
    }
    ordered_json body = {
        {"model", model_id},
        {"messages", std::move(messages)},
        {"temperature", request.temperature},
        {"max_tokens", request.max_tokens},
        {"n", request.n_samples},
        {"logprobs", request.want_logprobs},
    };
    if (request.seed) body["seed"] = *request.seed;
    return body;
}

ordered_json sample_json(const Sample& sample) {
    ordered_json out = {{"text", sample.text}};
    if (sample.logprobs) {
        ordered_json lps = ordered_json::array();
        for (const TokenLogprob& tl : *sample.logprobs) {
            lps.push_back(ordered_json::array({tl.token, tl.logprob}));
        }
        out["logprobs"] = std::move(lps);
    } else {
        out["logprobs"] = nullptr;
    }
    return out;
}

Sample sample_from_json(const json& j) {
    Sample s;
    s.text = j.at("text").get<std::string>();
    if (j.contains("logprobs") && !j.at("logprobs").is_null()) {
        std::vector<TokenLogprob> lps;
        for (const auto& pair : j.at("logprobs")) {
            lps.push_back({pair.at(0).get<std::string>(), pair.at(1).get<double>()});
        }
        s.logprobs = std::move(lps);
    }
    return s;
}

std::string concatenated_text(const GenerationRequest& request) {
    std::string all;
    for (const Message& m : request.messages) {
        all += m.text;
        all += '\n';
    }
    return all;
}

}  // namespace

std::string request_digest(const GenerationRequest& request, const std::string& model_id) {
    return util::sha256_hex(request_json(request, model_id).dump());
}

// --- MockBackend -------------------------------------------------------------

MockBackend::MockBackend(std::string model_id) : model_id_(std::move(model_id)) {}

MockBackend::MockBackend(const MockScript& script, std::string model_id)
    : model_id_(std::move(model_id)) {
    for (const ScriptEntry& entry : script.entries) add_entry(entry);
}

void MockBackend::add_entry(ScriptEntry entry) {
    if (entry.digest.empty() == entry.substring.empty()) {
        throw Error("script entry needs exactly one of digest or substring");
    }
    if (entry.replies.empty()) throw Error("script entry has no replies");
    for (const ScriptEntry& existing : entries_) {
        if (!entry.digest.empty() && existing.digest == entry.digest) {
            throw Error("duplicate script matcher (digest " + entry.digest + ")");
        }
        if (!entry.substring.empty() && existing.substring == entry.substring) {
            throw Error("duplicate script matcher (substring \"" + entry.substring + "\")");
        }
    }
    entries_.push_back(std::move(entry));
}

void MockBackend::script_substring(const std::string& substring, std::vector<Sample> replies) {
    add_entry(ScriptEntry{"", substring, std::move(replies)});
}

void MockBackend::script_substring(const std::string& substring, const std::string& reply) {
    script_substring(substring, std::vector<Sample>{Sample{reply, std::nullopt}});
}

void MockBackend::script_digest(const std::string& digest, std::vector<Sample> replies) {
    add_entry(ScriptEntry{digest, "", std::move(replies)});
}

void MockBackend::script_request(const GenerationRequest& request, std::vector<Sample> replies) {
    script_digest(request_digest(request, model_id_), std::move(replies));
}

void MockBackend::script_request(const GenerationRequest& request, const std::string& reply) {
    script_request(request, std::vector<Sample>{Sample{reply, std::nullopt}});
}

const ScriptEntry* MockBackend::find(const GenerationRequest& request) const {
    const std::string digest = request_digest(request, model_id_);
    for (const ScriptEntry& entry : entries_) {
        if (!entry.digest.empty() && entry.digest == digest) return &entry;
    }
    const std::string text = concatenated_text(request);
    const ScriptEntry* match = nullptr;
    for (const ScriptEntry& entry : entries_) {
        if (entry.substring.empty()) continue;
        if (text.find(entry.substring) == std::string::npos) continue;
        if (match != nullptr) {
            throw Error("ambiguous mock script: request matches both \"" + match->substring +
                        "\" and \"" + entry.substring + "\"");
        }
        match = &entry;
    }
    return match;
}

GenerationResponse MockBackend::generate_raw(const GenerationRequest& request) {
    int now = in_flight_.fetch_add(1) + 1;
    int seen = max_in_flight_.load();
    while (now > seen && !max_in_flight_.compare_exchange_weak(seen, now)) {
    }
    calls_.fetch_add(1);
    if (latency_ms_ > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(latency_ms_));
    }
    struct Release {
        std::atomic<int>& counter;
        ~Release() { counter.fetch_sub(1); }
    } release{in_flight_};

    const ScriptEntry* entry = find(request);
    if (entry == nullptr) {
        throw Error("unmatched mock request, digest " + request_digest(request, model_id_) +
                    ", first line: " +
                    util::split_lines(concatenated_text(request)).front());
    }
    GenerationResponse response;
    response.model_id = model_id_;
    for (int i = 0; i < request.n_samples; ++i) {
        Sample sample = entry->replies[static_cast<std::size_t>(i) % entry->replies.size()];
        if (!request.want_logprobs) {
            sample.logprobs.reset();
        } else if (!sample.logprobs) {
            throw Error("mock script entry has no logprobs but want_logprobs was set (matcher " +
                        (entry->digest.empty() ? entry->substring : entry->digest) + ")");
        }
        response.samples.push_back(std::move(sample));
    }
    return response;
}

std::string MockScript::to_jsonl() const {
    std::string out;
    for (const ScriptEntry& entry : entries) {
        ordered_json j;
        if (!entry.digest.empty()) j["digest"] = entry.digest;
        if (!entry.substring.empty()) j["substring"] = entry.substring;
        ordered_json replies = ordered_json::array();
        for (const Sample& s : entry.replies) replies.push_back(sample_json(s));
        j["replies"] = std::move(replies);
        out += j.dump();
        out += '\n';
    }
    return out;
}

MockScript MockScript::from_jsonl(const std::string& text) {
    MockScript script;
    int line_no = 0;
    for (const std::string& line : util::split_lines(text)) {
        ++line_no;
        if (util::trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error("mock script line " + std::to_string(line_no) + ": " + e.what());
        }
        ScriptEntry entry;
        entry.digest = j.value("digest", "");
        entry.substring = j.value("substring", "");
        for (const auto& r : j.at("replies")) entry.replies.push_back(sample_from_json(r));
        script.entries.push_back(std::move(entry));
    }
    return script;
}

// --- HttpBackend --------------------------------------------------------------

HttpBackend::HttpBackend(BackendConfig config) : config_(std::move(config)) {
    config_.validate();
    std::string url = config_.endpoint;
    if (url.rfind("https://", 0) == 0) {
        tls_ = true;
        url = url.substr(8);
    } else if (url.rfind("http://", 0) == 0) {
        url = url.substr(7);
    } else {
        throw Error("endpoint must start with http:// or https://: " + config_.endpoint);
    }
    std::size_t slash = url.find('/');
    std::string hostport = slash == std::string::npos ? url : url.substr(0, slash);
    path_prefix_ = slash == std::string::npos ? "" : url.substr(slash);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    std::size_t colon = hostport.find(':');
    if (colon == std::string::npos) {
        host_ = hostport;
        port_ = tls_ ? 443 : 80;
    } else {
        host_ = hostport.substr(0, colon);
        port_ = std::stoi(hostport.substr(colon + 1));
    }
    if (config_.api_key.empty()) {
        if (const char* env = std::getenv("OPENAI_API_KEY")) config_.api_key = env;
    }
}

namespace {

bool retryable_status(int status) {
    return status == 429 || status == 500 || status == 502 || status == 503 || status == 504;
}

int backoff_ms(int attempt, int base_ms) {
    static thread_local std::mt19937_64 jitter_rng{std::random_device{}()};
    double delay = static_cast<double>(base_ms) * std::pow(2.0, attempt);
    delay = std::min(delay, 30000.0);
    double jitter = static_cast<double>(jitter_rng() % 1000) / 1000.0;
    return static_cast<int>(delay * (0.5 + 0.5 * jitter));
}

GenerationResponse parse_chat_completion(const std::string& body, bool want_logprobs,
                                         const std::string& model) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw Error(std::string("malformed chat-completions response: ") + e.what());
    }
    if (!j.contains("choices") || !j.at("choices").is_array() || j.at("choices").empty()) {
        throw Error("malformed chat-completions response: missing choices");
    }
    GenerationResponse response;
    response.model_id = j.value("model", model);
    for (const auto& choice : j.at("choices")) {
        Sample sample;
        sample.text = choice.at("message").at("content").get<std::string>();
        if (want_logprobs) {
            if (!choice.contains("logprobs") || choice.at("logprobs").is_null()) {
                throw Error("logprobs requested but endpoint omitted them");
            }
            std::vector<TokenLogprob> lps;
            for (const auto& tok : choice.at("logprobs").at("content")) {
                lps.push_back({tok.at("token").get<std::string>(),
                               tok.at("logprob").get<double>()});
            }
            sample.logprobs = std::move(lps);
        }
        response.samples.push_back(std::move(sample));
    }
    return response;
}

}  // namespace

GenerationResponse HttpBackend::generate_raw(const GenerationRequest& request) {
    // Endpoints following the OPENAI_BASE_URL convention already carry /v1.
    const std::string path = path_prefix_.ends_with("/v1")
                                 ? path_prefix_ + "/chat/completions"
                                 : path_prefix_ + "/v1/chat/completions";
    const std::string body = request_json(request, config_.model).dump();
    httplib::Headers headers;
    if (!config_.api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + config_.api_key);
    }

    std::string last_error;
    for (int attempt = 0; attempt <= config_.retry_limit; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(backoff_ms(attempt - 1, config_.backoff_base_ms)));
        }
        httplib::Result result;
        if (tls_) {
            httplib::SSLClient client(host_, port_);
            client.set_read_timeout(120, 0);
            result = client.Post(path, headers, body, "application/json");
        } else {
            httplib::Client client(host_, port_);
            client.set_read_timeout(120, 0);
            result = client.Post(path, headers, body, "application/json");
        }
        if (!result) {
            last_error = "transport error: " + httplib::to_string(result.error());
            continue;
        }
        if (result->status == 200) {
            GenerationResponse response =
                parse_chat_completion(result->body, request.want_logprobs, config_.model);
            response.retries = attempt;
            return response;
        }
        if (retryable_status(result->status)) {
            last_error = "HTTP " + std::to_string(result->status);
            continue;
        }
        throw Error("HTTP " + std::to_string(result->status) + " from " + host_ + path +
                    ": " + result->body.substr(0, 256));
    }
    throw Error("request failed after " + std::to_string(config_.retry_limit) +
                " retries: " + last_error);
}

// --- Client --------------------------------------------------------------------

Client::Client(std::shared_ptr<Backend> backend, BackendConfig config)
    : backend_(std::move(backend)), config_(std::move(config)) {
    config_.validate();
    if (!config_.cache_dir.empty()) {
        std::filesystem::create_directories(config_.cache_dir);
    }
}

std::optional<GenerationResponse> Client::cache_lookup(const std::string& digest) const {
    if (config_.cache_dir.empty()) return std::nullopt;
    const std::string path = config_.cache_dir + "/" + digest + ".json";
    if (!std::filesystem::exists(path)) return std::nullopt;
    json j = json::parse(util::read_file(path));
    GenerationResponse response;
    response.model_id = j.at("response").at("model_id").get<std::string>();
    response.retries = j.at("response").value("retries", 0);
    for (const auto& s : j.at("response").at("samples")) {
        response.samples.push_back(sample_from_json(s));
    }
    response.cached = true;
    return response;
}

void Client::cache_store(const std::string& digest, const GenerationRequest& request,
                         const GenerationResponse& response) {
    if (config_.cache_dir.empty()) return;
    ordered_json samples = ordered_json::array();
    for (const Sample& s : response.samples) samples.push_back(sample_json(s));
    ordered_json j = {
        {"request", request_json(request, backend_->model_id())},
        {"response",
         {{"model_id", response.model_id},
          {"retries", response.retries},
          {"samples", std::move(samples)}}},
    };
    std::lock_guard<std::mutex> lock(cache_write_mutex_);
    util::write_file_atomic(config_.cache_dir + "/" + digest + ".json", j.dump(2));
}

GenerationResponse Client::generate(const GenerationRequest& request) {
    request.validate();
    const std::string digest = request_digest(request, backend_->model_id());
    if (auto cached = cache_lookup(digest)) {
        return *cached;
    }
    GenerationResponse response = backend_->generate_raw(request);
    if (static_cast<int>(response.samples.size()) != request.n_samples) {
        throw Error("backend returned " + std::to_string(response.samples.size()) +
                    " samples, expected " + std::to_string(request.n_samples));
    }
    if (request.want_logprobs) {
        for (const Sample& s : response.samples) {
            if (!s.logprobs) throw Error("logprobs requested but backend omitted them");
        }
    }
    cache_store(digest, request, response);
    return response;
}

GenerationResponse Client::sample_n(GenerationRequest request, int k) {
    request.n_samples = k;
    return generate(request);
}

void Client::parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) const {
    if (count == 0) return;
    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(config_.max_concurrent), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::optional<std::pair<std::size_t, std::string>> first_error;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error || i < first_error->first) {
                        first_error = {i, e.what()};
                    }
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();
    if (first_error) {
        throw Error("task " + std::to_string(first_error->first) + " failed: " +
                    first_error->second);
    }
}

}  // namespace sitfaith::backend
