#include "polymatch/csv.hpp"

#include <fstream>
#include <ostream>
#include <sstream>

namespace polymatch::csv {

std::vector<Row> parse(std::string_view text, const std::string& source_name) {
    std::vector<Row> rows;
    Row current;
    std::string field;
    bool in_quotes = false;
    bool field_was_quoted = false;
    bool row_has_content = false;
    std::size_t line = 1;
    current.line = 1;

    auto end_field = [&] {
        current.fields.push_back(std::move(field));
        field.clear();
        field_was_quoted = false;
    };
    auto end_row = [&] {
        if (row_has_content || !current.fields.empty()) {
            end_field();
            rows.push_back(std::move(current));
        }
        current = Row{};
        field.clear();
        field_was_quoted = false;
        row_has_content = false;
    };

    // Skip a UTF-8 byte order mark.
    std::size_t i = 0;
    if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") i = 3;

    for (; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"':
                if (!field.empty() || field_was_quoted) {
                    throw ParseError(source_name, line, "unexpected quote inside unquoted field");
                }
                in_quotes = true;
                field_was_quoted = true;
                row_has_content = true;
                break;
            case ',':
                end_field();
                row_has_content = true;
                break;
            case '\r':
                break;
            case '\n':
                end_row();
                ++line;
                current.line = line;
                break;
            default:
                if (field_was_quoted) {
                    throw ParseError(source_name, line, "characters after closing quote");
                }
                field.push_back(c);
                row_has_content = true;
        }
    }
    if (in_quotes) throw ParseError(source_name, line, "unterminated quoted field");
    end_row();
    return rows;
}

std::vector<Row> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path);
}

std::string escape(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string out;
    out.reserve(field.size() + 2);
    out.push_back('"');
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

void write_row(std::ostream& out, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out << ',';
        out << escape(fields[i]);
    }
    out << '\n';
}

}  // namespace polymatch::csv
