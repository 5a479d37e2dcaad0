#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace imagerag {

// Reference to an image: a local file path, an http(s) URL, or a data URI.
struct ImageRef {
    std::string uri;

    bool operator==(const ImageRef&) const = default;
};

bool is_remote_uri(std::string_view uri);
bool is_data_uri(std::string_view uri);

// Sequential double-precision dot product of two equal-length float spans.
double dot(std::span<const float> a, std::span<const float> b);

double l2_norm(std::span<const float> v);

// Returns v / |v|. Throws UsageError when |v| is zero or not finite.
std::vector<float> normalized(std::span<const float> v);

// Hex-encoded SHA-256 digest.
std::string sha256_hex(std::string_view data);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

// Deterministic pseudo-random unit vector derived from a string key. Stable
// across platforms (FNV-1a seed into mt19937_64, manual float conversion).
std::vector<float> hashed_unit_vector(std::string_view key, std::size_t dimension);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s); // ASCII only

} // namespace imagerag
