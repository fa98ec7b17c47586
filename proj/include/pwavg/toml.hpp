#pragma once

#include <cctype>
#include <charconv>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pwavg/errors.hpp"

// A small TOML reader covering the subset this project's configs use:
// [table] and [[array-of-table]] headers (dotted names allowed), bare keys,
// basic "..." strings, floats/integers, booleans, and (possibly multi-line)
// arrays with optional trailing commas.

namespace pwavg::toml {

struct Value;
using Array = std::vector<Value>;

struct Value {
    std::variant<double, bool, std::string, Array> v;
    bool is_integer = false;  // numeric value written without '.' or exponent
    int line = 0;

    bool is_number() const { return std::holds_alternative<double>(v); }
    bool is_bool() const { return std::holds_alternative<bool>(v); }
    bool is_string() const { return std::holds_alternative<std::string>(v); }
    bool is_array() const { return std::holds_alternative<Array>(v); }

    double as_number() const { return std::get<double>(v); }
    bool as_bool() const { return std::get<bool>(v); }
    const std::string& as_string() const { return std::get<std::string>(v); }
    const Array& as_array() const { return std::get<Array>(v); }
};

struct Table {
    std::map<std::string, Value> kv;
    int line = 0;

    bool has(const std::string& key) const { return kv.count(key) > 0; }
    const Value* find(const std::string& key) const {
        auto it = kv.find(key);
        return it == kv.end() ? nullptr : &it->second;
    }
};

struct Document {
    std::map<std::string, Table> tables;                    // "system", "system.params", ...
    std::map<std::string, std::vector<Table>> table_arrays; // "zone" -> one table per [[zone]]

    const Table* find_table(const std::string& name) const {
        auto it = tables.find(name);
        return it == tables.end() ? nullptr : &it->second;
    }
};

namespace detail {

class Reader {
public:
    explicit Reader(std::string_view text) : text_(text) {}

    Document parse() {
        Document doc;
        Table* current = &doc.tables[""];  // root table for stray keys
        while (!at_end()) {
            skip_blank();
            if (at_end()) break;
            if (peek() == '[') {
                bool is_array = text_.substr(pos_, 2) == "[[";
                pos_ += is_array ? 2 : 1;
                std::string name = read_table_name();
                skip_ws();
                expect(']');
                if (is_array) expect(']');
                end_of_line();
                if (is_array) {
                    doc.table_arrays[name].push_back(Table{{}, line_});
                    current = &doc.table_arrays[name].back();
                } else {
                    if (doc.tables.count(name))
                        fail("duplicate table [" + name + "]");
                    current = &doc.tables[name];
                    current->line = line_;
                }
            } else {
                std::string key = read_key();
                skip_ws();
                expect('=');
                skip_ws();
                Value v = read_value();
                end_of_line();
                if (current->kv.count(key)) fail("duplicate key '" + key + "'");
                current->kv.emplace(std::move(key), std::move(v));
            }
        }
        doc.tables.erase("");  // only created if stray root keys appeared
        return doc;
    }

private:
    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigError(msg, "line " + std::to_string(line_));
    }

    bool at_end() const { return pos_ >= text_.size(); }
    char peek() const { return text_[pos_]; }

    void skip_ws() {
        while (!at_end() && (peek() == ' ' || peek() == '\t')) ++pos_;
    }

    void skip_comment() {
        if (!at_end() && peek() == '#')
            while (!at_end() && peek() != '\n') ++pos_;
    }

    void newline() {
        if (!at_end() && peek() == '\r') ++pos_;
        if (!at_end() && peek() == '\n') { ++pos_; ++line_; }
    }

    void skip_blank() {
        while (!at_end()) {
            skip_ws();
            skip_comment();
            if (at_end()) return;
            if (peek() == '\n' || peek() == '\r') { newline(); continue; }
            return;
        }
    }

    void end_of_line() {
        skip_ws();
        skip_comment();
        if (at_end()) return;
        if (peek() != '\n' && peek() != '\r') fail("unexpected trailing characters");
        newline();
    }

    void expect(char c) {
        if (at_end() || peek() != c) fail(std::string("expected '") + c + "'");
        ++pos_;
    }

    static bool is_key_char(char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
    }

    std::string read_key() {
        skip_ws();
        std::size_t start = pos_;
        while (!at_end() && is_key_char(peek())) ++pos_;
        if (pos_ == start) fail("expected a key");
        return std::string(text_.substr(start, pos_ - start));
    }

    std::string read_table_name() {
        skip_ws();
        std::string name = read_key();
        while (!at_end() && peek() == '.') {
            ++pos_;
            name += '.';
            name += read_key();
        }
        return name;
    }

    Value read_value() {
        skip_ws();
        if (at_end()) fail("expected a value");
        char c = peek();
        if (c == '"') return read_string();
        if (c == '[') return read_array();
        if (text_.substr(pos_, 4) == "true") { pos_ += 4; return Value{true, false, line_}; }
        if (text_.substr(pos_, 5) == "false") { pos_ += 5; return Value{false, false, line_}; }
        return read_number();
    }

    Value read_string() {
        expect('"');
        std::string out;
        while (!at_end() && peek() != '"') {
            char c = peek();
            if (c == '\n') fail("unterminated string");
            if (c == '\\') {
                ++pos_;
                if (at_end()) fail("unterminated escape");
                char esc = peek();
                if (esc == '"') out += '"';
                else if (esc == '\\') out += '\\';
                else fail("unsupported escape sequence");
                ++pos_;
            } else {
                out += c;
                ++pos_;
            }
        }
        expect('"');
        return Value{std::move(out), false, line_};
    }

    Value read_number() {
        std::size_t start = pos_;
        if (!at_end() && (peek() == '+' || peek() == '-')) ++pos_;
        bool fractional = false;
        while (!at_end()) {
            char c = peek();
            if (std::isdigit(static_cast<unsigned char>(c))) { ++pos_; continue; }
            if (c == '.' || c == 'e' || c == 'E') { fractional = true; ++pos_; continue; }
            if (c == '+' || c == '-') {
                char prev = text_[pos_ - 1];
                if (prev == 'e' || prev == 'E') { ++pos_; continue; }
            }
            break;
        }
        if (pos_ == start) fail("expected a value");
        double v = 0.0;
        auto res = std::from_chars(text_.data() + start, text_.data() + pos_, v);
        if (res.ec != std::errc{} || res.ptr != text_.data() + pos_) fail("malformed number");
        return Value{v, !fractional, line_};
    }

    Value read_array() {
        expect('[');
        Array items;
        while (true) {
            skip_blank();
            if (at_end()) fail("unterminated array");
            if (peek() == ']') { ++pos_; break; }
            items.push_back(read_value());
            skip_blank();
            if (!at_end() && peek() == ',') { ++pos_; continue; }
            skip_blank();
            if (at_end() || peek() != ']') fail("expected ',' or ']' in array");
        }
        return Value{std::move(items), false, line_};
    }

    std::string_view text_;
    std::size_t pos_ = 0;
    int line_ = 1;
};

}  // namespace detail

inline Document parse(std::string_view text) { return detail::Reader(text).parse(); }

}  // namespace pwavg::toml
