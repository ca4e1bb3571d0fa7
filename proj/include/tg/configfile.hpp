#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tg/errors.hpp"

namespace tg {

// key=value config file, '#' starts a comment, blank lines ignored.
// Consumers declare the keys they accept; anything else is a named-key error.
class KeyValues {
  public:
    KeyValues() = default;
    static KeyValues parse_file(const std::string& path);
    static KeyValues parse_text(const std::string& text);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;

    std::string get_str(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;

    // Throws ConfigError naming the first key not in `known`.
    void require_known(const std::vector<std::string>& known) const;

    std::string to_text() const;
    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  private:
    std::vector<std::pair<std::string, std::string>> entries_;
    const std::string* find(const std::string& key) const;
};

}  // namespace tg
