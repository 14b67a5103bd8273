#include "fairstep/csv.hpp"

#include "fairstep/error.hpp"

#include <algorithm>

namespace fairstep::csv {

Reader::Reader(std::istream& in, std::string source_name) : in_(in), source_(std::move(source_name)) {}

bool Reader::next(std::vector<std::string>& fields)
{
    fields.clear();
    int c = in_.peek();
    if (c == std::char_traits<char>::eof()) {
        return false;
    }
    record_line_ = line_;
    std::string field;
    bool in_quotes = false;
    bool field_was_quoted = false;
    while (true) {
        c = in_.get();
        if (c == std::char_traits<char>::eof()) {
            if (in_quotes) {
                throw IngestError(source_, record_line_, "<record>", "unterminated quoted field");
            }
            fields.push_back(std::move(field));
            return true;
        }
        char ch = static_cast<char>(c);
        if (in_quotes) {
            if (ch == '"') {
                if (in_.peek() == '"') {
                    in_.get();
                    field.push_back('"');
                } else {
                    in_quotes = false;
                }
            } else {
                if (ch == '\n') {
                    ++line_;
                }
                field.push_back(ch);
            }
            continue;
        }
        switch (ch) {
        case '"':
            if (!field.empty() || field_was_quoted) {
                throw IngestError(source_, record_line_, "<record>", "stray quote inside unquoted field");
            }
            in_quotes = true;
            field_was_quoted = true;
            break;
        case ',':
            fields.push_back(std::move(field));
            field.clear();
            field_was_quoted = false;
            break;
        case '\r':
            if (in_.peek() == '\n') {
                break;
            }
            [[fallthrough]];
        case '\n':
            ++line_;
            fields.push_back(std::move(field));
            return true;
        default:
            field.push_back(ch);
        }
    }
}

std::optional<std::size_t> Header::index_of(const std::string& name) const
{
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(it - names.begin());
}

Header read_header(Reader& reader, const std::vector<std::string>& required)
{
    Header header;
    if (!reader.next(header.names)) {
        throw IngestError(reader.source(), 1, "<header>", "empty file");
    }
    if (!header.names.empty() && header.names.front().starts_with("\xEF\xBB\xBF")) {
        header.names.front().erase(0, 3);
    }
    for (const auto& name : required) {
        if (!header.index_of(name)) {
            throw IngestError(reader.source(), 1, name, "required column missing from header");
        }
    }
    return header;
}

std::string quote(const std::string& field)
{
    bool needs = field.find_first_of(",\"\r\n;") != std::string::npos;
    if (!needs) {
        return field;
    }
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') {
            out += "\"\"";
        } else {
            out.push_back(c);
        }
    }
    out.push_back('"');
    return out;
}

} // namespace fairstep::csv
