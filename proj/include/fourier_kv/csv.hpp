#pragma once

// Minimal RFC 4180 writer: header row, LF line ends, fields quoted
// only when they contain a comma, quote or newline.

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>

namespace fourier_kv {

class CsvWriter {
public:
    CsvWriter(const std::string& path, std::initializer_list<std::string_view> header) : out_(path, std::ios::trunc) {
        if (!out_) throw std::runtime_error("cannot open " + path + " for writing");
        bool first = true;
        for (auto h : header) {
            if (!first) out_ << ',';
            out_ << quote(h);
            first = false;
        }
        out_ << '\n';
    }

    template <typename... Ts>
    void row(const Ts&... fields) {
        bool first = true;
        ((out_ << (first ? "" : ",") << format(fields), first = false), ...);
        out_ << '\n';
        if (!out_) throw std::runtime_error("CSV write failed");
    }

    static std::string quote(std::string_view s) {
        if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
        std::string q = "\"";
        for (char c : s) {
            if (c == '"') q += '"';
            q += c;
        }
        return q + '"';
    }

private:
    template <typename T>
    static std::string format(const T& v) {
        if constexpr (std::is_floating_point_v<T>) {
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(v));
            return buf;
        } else if constexpr (std::is_arithmetic_v<T>) {
            return std::to_string(v);
        } else {
            return quote(std::string_view(v));
        }
    }

    std::ofstream out_;
};

}  // namespace fourier_kv
