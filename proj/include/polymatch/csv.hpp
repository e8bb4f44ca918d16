#pragma once
// Minimal RFC-4180 reader/writer.

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "polymatch/error.hpp"

namespace polymatch::csv {

class ParseError : public Error {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& msg)
        : Error(source + ":" + std::to_string(line) + ": " + msg), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

struct Row {
    std::vector<std::string> fields;
    std::size_t line = 0;  // 1-based physical line where the row starts
};

// Parses the whole text. Quoted fields may contain separators, doubled
// quotes and line breaks. A trailing newline does not produce an empty row;
// blank lines are skipped.
std::vector<Row> parse(std::string_view text, const std::string& source_name = "<csv>");

std::vector<Row> read_file(const std::string& path);

// Quotes the field only when needed.
std::string escape(std::string_view field);

void write_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace polymatch::csv
