#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sitfaith {

/// Error type thrown throughout the library. Messages are expected to carry
/// enough context (instance id, stage, line number) to be actionable.
class Error : public std::runtime_error {
public:
    explicit Error(std::string message) : std::runtime_error(std::move(message)) {}
};

namespace util {

// --- string helpers ------------------------------------------------------

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
bool starts_with_ci(std::string_view text, std::string_view prefix);
std::vector<std::string> split_lines(std::string_view text);
std::vector<std::string> split_whitespace(std::string_view text);

/// First non-empty line of `text`, trimmed. Throws Error when there is none.
std::string first_nonempty_line(std::string_view text);
/// Last non-empty line of `text`, trimmed. Throws Error when there is none.
std::string last_nonempty_line(std::string_view text);

/// Fixed one-decimal formatting with half-up rounding, e.g. 54.25 -> "54.3".
std::string format_fixed1(double value);

// --- hashing --------------------------------------------------------------

/// Hex-encoded SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

// --- deterministic RNG ----------------------------------------------------

/// Seeded RNG with platform-independent sampling helpers. std::shuffle and
/// std::uniform_int_distribution are implementation-defined, so shuffling and
/// bounded draws are done by hand here.
class DetRng {
public:
    explicit DetRng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform draw in [0, bound) via rejection sampling.
    std::uint64_t next_below(std::uint64_t bound);

    /// Uniform double in [0, 1).
    double next_double();

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

// --- filesystem helpers ----------------------------------------------------

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);
/// Write via a temp file + rename so concurrent readers never see a partial file.
void write_file_atomic(const std::string& path, std::string_view content);

}  // namespace util
}  // namespace sitfaith
