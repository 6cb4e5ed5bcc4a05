#pragma once

#include <stdexcept>
#include <string>

namespace hybridcap {

// Every recoverable failure in the library surfaces as this type. The CLI
// turns it into a structured error record and a nonzero exit code.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Format/IO error tied to a location in an input file.
class ParseError : public Error {
public:
    ParseError(const std::string& path, std::size_t line, const std::string& what)
        : Error(path + ":" + std::to_string(line) + ": " + what),
          path_(path),
          line_(line) {}

    const std::string& path() const { return path_; }
    std::size_t line() const { return line_; }

private:
    std::string path_;
    std::size_t line_;
};

}  // namespace hybridcap
