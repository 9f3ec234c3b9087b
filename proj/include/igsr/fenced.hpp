#pragma once

// Extraction of marker-prefixed fenced blocks from LLM replies. The wire
// format is a marker token (TERMS or DECISION) followed by a triple-backtick
// fence; replies sometimes close with four backticks, so any run of three or
// more closes the block.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "igsr/common.hpp"

namespace igsr {

struct FencedBlock {
    std::string content;                 // between the fences, trailing newline dropped
    std::vector<std::string> warnings;   // e.g. extra blocks ignored
};

namespace detail {

inline bool is_fence(std::string_view line) {
    std::string t = trim(line);
    if (t.size() < 3) return false;
    for (char c : t)
        if (c != '`') return false;
    return true;
}

} // namespace detail

// Returns the first <marker> ... ``` block, or nullopt when none exists.
// Later blocks with the same marker are ignored with a warning.
inline std::optional<FencedBlock> extract_marked_block(std::string_view text,
                                                       std::string_view marker) {
    auto lines = split_lines(text);
    std::optional<FencedBlock> found;
    int extra = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string t = trim(lines[i]);
        bool marked = false;
        std::size_t fence_line = i;
        if (t == marker) {
            // Marker on its own line; the fence must open on the next line.
            if (i + 1 < lines.size() && detail::is_fence(lines[i + 1])) {
                marked = true;
                fence_line = i + 1;
            }
        } else if (starts_with(t, marker)) {
            // Marker glued to the fence: "TERMS```" style.
            std::string rest = trim(t.substr(marker.size()));
            if (detail::is_fence(rest)) {
                marked = true;
                // Block content starts on the following line.
            } else {
                continue;
            }
        } else {
            continue;
        }
        if (!marked) continue;

        std::string content;
        std::size_t j = fence_line + 1;
        bool closed = false;
        for (; j < lines.size(); ++j) {
            if (detail::is_fence(lines[j])) {
                closed = true;
                break;
            }
            content += lines[j];
            content += '\n';
        }
        if (!closed) continue;
        if (!content.empty()) content.pop_back();
        if (!found) {
            found = FencedBlock{std::move(content), {}};
        } else {
            ++extra;
        }
        i = j;
    }
    if (found && extra > 0)
        found->warnings.push_back("reply contains " + std::to_string(extra + 1) + " " +
                                  std::string(marker) + " blocks; using the first");
    return found;
}

} // namespace igsr
