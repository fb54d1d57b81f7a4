#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

namespace memeqa {

// UTF-8 helpers. Malformed bytes decode as U+FFFD.
std::u32string utf8_decode(std::string_view text);
std::string utf8_encode(std::u32string_view text);
void utf8_append(std::string& out, char32_t cp);

bool is_unicode_space(char32_t cp);
bool is_unicode_punct(char32_t cp);
char32_t simple_lower(char32_t cp);

std::string to_lower(std::string_view text);
std::string trim(std::string_view text);

// Whitespace-only split (no punctuation handling).
std::vector<std::string> split_whitespace(std::string_view text);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Case-insensitive, whitespace-collapsed key used to compare entity surface names.
std::string normalize_name(std::string_view name);

// Shared word tokenizer for every word-level metric: lowercase, split on Unicode
// whitespace, and emit each punctuation character as its own token.
std::vector<std::string> tokenize(std::string_view text);

// Lowercased, whitespace-collapsed code points; the character stream for CER.
std::u32string normalize_chars(std::string_view text);

// FNV-1a 64-bit, stable across platforms and runs.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

// Derives a per-item seed from a root seed and a list of string keys.
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::string_view> keys);

std::string read_file(const std::filesystem::path& path);
// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace memeqa
