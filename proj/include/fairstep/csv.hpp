#pragma once

#include <istream>
#include <optional>
#include <string>
#include <vector>

namespace fairstep::csv {

// Minimal RFC 4180 reader: quoted fields, doubled quotes, LF or CRLF.
class Reader {
public:
    Reader(std::istream& in, std::string source_name);

    /// Reads the next record. Returns false at end of input.
    bool next(std::vector<std::string>& fields);

    /// Line number (1-based) where the last returned record started.
    std::size_t line() const noexcept { return record_line_; }
    const std::string& source() const noexcept { return source_; }

private:
    std::istream& in_;
    std::string source_;
    std::size_t line_ = 1;
    std::size_t record_line_ = 0;
};

/// Reads a header row and checks that every required column is present.
/// Returns column indices for `required` followed by `optional_columns`
/// (nullopt when an optional column is absent).
struct Header {
    std::vector<std::string> names;
    std::optional<std::size_t> index_of(const std::string& name) const;
};

Header read_header(Reader& reader, const std::vector<std::string>& required);

std::string quote(const std::string& field);

} // namespace fairstep::csv
