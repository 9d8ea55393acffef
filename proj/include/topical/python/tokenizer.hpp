#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace topical::python {

/// Raised for any input CPython would reject with a SyntaxError (or a
/// ValueError for NUL bytes / bad encoding) at parse time.
class SyntaxError : public std::runtime_error {
 public:
  SyntaxError(int line, const std::string& message)
      : std::runtime_error("line " + std::to_string(line) + ": " + message), line_(line) {}

  [[nodiscard]] int line() const noexcept { return line_; }

 private:
  int line_;
};

enum class TokenType { Name, Number, String, Op, Newline, Indent, Dedent, EndMarker };

struct Token {
  TokenType type;
  std::string text;  // exact source spelling (strings keep prefix and quotes)
  int line = 0;
  int col = 0;
};

/// Splits Python 3.10 source into logical tokens, emitting INDENT/DEDENT and
/// NEWLINE the way the reference tokenizer does. Comments and non-logical
/// newlines are dropped.
std::vector<Token> tokenize(std::string_view source);

/// True if `s` is valid UTF-8.
bool is_valid_utf8(std::string_view s);

}  // namespace topical::python
