#include "topical/python/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <regex>

namespace topical::python {

namespace {

constexpr int kEof = -1;
constexpr int kTabSize = 8;
constexpr std::size_t kMaxIndent = 100;
constexpr std::size_t kMaxParenLevel = 200;

bool is_ident_start(int c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || c >= 128;
}

bool is_ident_char(int c) { return is_ident_start(c) || (c >= '0' && c <= '9'); }

bool is_digit(int c) { return c >= '0' && c <= '9'; }

bool is_xdigit(int c) {
  return is_digit(c) || (c >= 'a' && c <= 'f') || (c >= 'A' && c <= 'F');
}

std::string normalize_newlines(std::string_view src) {
  std::string out;
  out.reserve(src.size() + 1);
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i] == '\r') {
      out.push_back('\n');
      if (i + 1 < src.size() && src[i + 1] == '\n') ++i;
    } else {
      out.push_back(src[i]);
    }
  }
  if (!out.empty() && out.back() != '\n') out.push_back('\n');
  return out;
}

class Lexer {
 public:
  explicit Lexer(std::string src) : src_(std::move(src)) {}

  std::vector<Token> run() {
    while (true) {
      if (at_bol_) {
        at_bol_ = false;
        if (handle_indentation()) continue;
      }
      if (!next_token()) break;
    }
    return std::move(tokens_);
  }

 private:
  int peek(std::size_t ahead = 0) const {
    const std::size_t i = pos_ + ahead;
    return i < src_.size() ? static_cast<unsigned char>(src_[i]) : kEof;
  }

  int get() {
    const int c = peek();
    if (c != kEof) {
      ++pos_;
      if (c == '\n') {
        ++line_;
        line_start_ = pos_;
      }
    }
    return c;
  }

  [[noreturn]] void fail(const std::string& msg) const { throw SyntaxError(line_, msg); }

  void emit(TokenType type, std::size_t start, int line, int col) {
    tokens_.push_back(Token{type, src_.substr(start, pos_ - start), line, col});
  }

  void emit_text(TokenType type, std::string text) {
    tokens_.push_back(Token{type, std::move(text), line_, 0});
  }

  // Returns true when the line was blank and fully consumed.
  bool handle_indentation() {
    int col = 0;
    int altcol = 0;
    while (true) {
      const int c = peek();
      if (c == ' ') {
        ++col;
        ++altcol;
      } else if (c == '\t') {
        col = (col / kTabSize + 1) * kTabSize;
        altcol = altcol + 1;
      } else if (c == '\f') {
        col = altcol = 0;
      } else {
        break;
      }
      get();
    }
    const int c = peek();
    const bool blank = (c == '#' || c == '\n' || c == kEof);
    if (blank) {
      if (c == '#') {
        while (peek() != '\n' && peek() != kEof) get();
      }
      if (peek() == '\n') {
        get();
        at_bol_ = true;
        return true;
      }
      return false;  // EOF: let next_token finish
    }
    if (!parens_.empty()) return false;

    if (col == indents_.back()) {
      if (altcol != alt_indents_.back()) fail("inconsistent use of tabs and spaces in indentation");
    } else if (col > indents_.back()) {
      if (indents_.size() >= kMaxIndent) fail("too many levels of indentation");
      if (altcol <= alt_indents_.back()) fail("inconsistent use of tabs and spaces in indentation");
      indents_.push_back(col);
      alt_indents_.push_back(altcol);
      emit_text(TokenType::Indent, "");
    } else {
      while (indents_.size() > 1 && col < indents_.back()) {
        indents_.pop_back();
        alt_indents_.pop_back();
        emit_text(TokenType::Dedent, "");
      }
      if (col != indents_.back()) fail("unindent does not match any outer indentation level");
      if (altcol != alt_indents_.back()) fail("inconsistent use of tabs and spaces in indentation");
    }
    return false;
  }

  void finish() {
    if (!parens_.empty()) {
      throw SyntaxError(parens_.back().second,
                        std::string("'") + parens_.back().first + "' was never closed");
    }
    if (!tokens_.empty() && tokens_.back().type != TokenType::Newline &&
        tokens_.back().type != TokenType::Dedent && tokens_.back().type != TokenType::Indent) {
      emit_text(TokenType::Newline, "");
    }
    while (indents_.size() > 1) {
      indents_.pop_back();
      emit_text(TokenType::Dedent, "");
    }
    emit_text(TokenType::EndMarker, "");
  }

  // Returns false once ENDMARKER has been emitted.
  bool next_token() {
    int c = peek();
    while (c == ' ' || c == '\t' || c == '\f') {
      get();
      c = peek();
    }
    if (c == '#') {
      while (peek() != '\n' && peek() != kEof) get();
      c = peek();
    }
    if (c == kEof) {
      finish();
      return false;
    }
    const std::size_t start = pos_;
    const int line = line_;
    const int col = static_cast<int>(pos_ - line_start_);

    if (c == '\n') {
      get();
      if (parens_.empty()) {
        tokens_.push_back(Token{TokenType::Newline, "", line, col});
        at_bol_ = true;
      }
      return true;
    }

    if (is_ident_start(c)) {
      if (lex_string_prefix()) {
        lex_string_body();
        emit(TokenType::String, start, line, col);
        return true;
      }
      while (is_ident_char(peek())) get();
      emit(TokenType::Name, start, line, col);
      return true;
    }

    if (is_digit(c) || (c == '.' && is_digit(peek(1)))) {
      lex_number();
      emit(TokenType::Number, start, line, col);
      return true;
    }

    if (c == '"' || c == '\'') {
      lex_string_body();
      emit(TokenType::String, start, line, col);
      return true;
    }

    if (c == '\\') {
      get();
      if (peek() != '\n') fail("unexpected character after line continuation character");
      get();
      if (peek() == kEof) fail("unexpected EOF while parsing");
      return true;
    }

    lex_operator();
    emit(TokenType::Op, start, line, col);
    return true;
  }

  // Consumes a string prefix if the identifier at the cursor is one and is
  // immediately followed by a quote.
  bool lex_string_prefix() {
    bool saw_b = false, saw_r = false, saw_u = false, saw_f = false;
    std::size_t i = 0;
    while (true) {
      const int c = peek(i);
      if (!(saw_b || saw_u || saw_f) && (c == 'b' || c == 'B')) {
        saw_b = true;
      } else if (!(saw_b || saw_u || saw_r || saw_f) && (c == 'u' || c == 'U')) {
        saw_u = true;
      } else if (!(saw_r || saw_u) && (c == 'r' || c == 'R')) {
        saw_r = true;
      } else if (!(saw_f || saw_b || saw_u) && (c == 'f' || c == 'F')) {
        saw_f = true;
      } else {
        break;
      }
      ++i;
      const int q = peek(i);
      if (q == '"' || q == '\'') {
        for (std::size_t k = 0; k < i; ++k) get();
        return true;
      }
    }
    return false;
  }

  void lex_string_body() {
    const int quote = get();
    int quote_size = 1;
    int end_quote_size = 0;
    if (peek() == quote) {
      if (peek(1) == quote) {
        get();
        get();
        quote_size = 3;
      } else {
        get();
        end_quote_size = 1;  // empty string
      }
    }
    int c = 0;
    const int start_line = line_;
    while (end_quote_size != quote_size) {
      c = get();
      if (c == kEof || (quote_size == 1 && c == '\n')) {
        throw SyntaxError(start_line, quote_size == 1 ? "unterminated string literal"
                                                      : "unterminated triple-quoted string literal");
      }
      if (c == quote) {
        ++end_quote_size;
      } else {
        end_quote_size = 0;
        if (c == '\\') {
          if (get() == kEof) {
            throw SyntaxError(start_line, "unterminated string literal");
          }
        }
      }
    }
  }

  void verify_end_of_number(int c, const char* kind) {
    bool keyword_follows = false;
    auto lookahead = [this](std::string_view rest) {
      for (std::size_t i = 0; i < rest.size(); ++i) {
        if (peek(1 + i) != static_cast<unsigned char>(rest[i])) return false;
      }
      return true;
    };
    switch (c) {
      case 'a': keyword_follows = lookahead("nd"); break;
      case 'e': keyword_follows = lookahead("lse"); break;
      case 'f': keyword_follows = lookahead("or"); break;
      case 'i': {
        const int c2 = peek(1);
        keyword_follows = (c2 == 'f' || c2 == 'n' || c2 == 's');
        break;
      }
      case 'o': keyword_follows = lookahead("r"); break;
      case 'n': keyword_follows = lookahead("ot"); break;
      default: break;
    }
    if (!keyword_follows && is_ident_char(c)) fail(std::string("invalid ") + kind + " literal");
  }

  // Consumes digits after the first one; returns the first non-digit.
  int decimal_tail() {
    while (true) {
      while (is_digit(peek())) get();
      if (peek() != '_') break;
      get();
      if (!is_digit(peek())) fail("invalid decimal literal");
    }
    return peek();
  }

  void lex_radix(const char* kind, bool (*valid)(int)) {
    do {
      if (peek() == '_') get();
      if (!valid(peek())) {
        if (is_digit(peek())) {
          fail(std::string("invalid digit '") + static_cast<char>(peek()) + "' in " + kind + " literal");
        }
        fail(std::string("invalid ") + kind + " literal");
      }
      while (valid(peek())) get();
    } while (peek() == '_');
    if (is_digit(peek())) {
      fail(std::string("invalid digit '") + static_cast<char>(peek()) + "' in " + kind + " literal");
    }
    verify_end_of_number(peek(), kind);
  }

  void lex_fraction_and_exponent(int c) {
    if (c == '.') {
      get();
      if (is_digit(peek())) {
        get();
        c = decimal_tail();
      } else {
        c = peek();
      }
    }
    if (c == 'e' || c == 'E') {
      const int next = peek(1);
      if (next == '+' || next == '-') {
        get();
        get();
        if (!is_digit(peek())) fail("invalid decimal literal");
        get();
        c = decimal_tail();
      } else if (is_digit(next)) {
        get();
        get();
        c = decimal_tail();
      } else {
        verify_end_of_number(c, "decimal");
        return;  // 'e' starts a following keyword
      }
    }
    if (c == 'j' || c == 'J') {
      get();
      verify_end_of_number(peek(), "imaginary");
    } else {
      verify_end_of_number(c, "decimal");
    }
  }

  void lex_number() {
    int c = peek();
    if (c == '.') {
      lex_fraction_and_exponent(c);
      return;
    }
    if (c == '0') {
      get();
      c = peek();
      if (c == 'x' || c == 'X') {
        get();
        lex_radix("hexadecimal", [](int ch) { return is_xdigit(ch); });
        return;
      }
      if (c == 'o' || c == 'O') {
        get();
        lex_radix("octal", [](int ch) { return ch >= '0' && ch <= '7'; });
        return;
      }
      if (c == 'b' || c == 'B') {
        get();
        lex_radix("binary", [](int ch) { return ch == '0' || ch == '1'; });
        return;
      }
      bool nonzero = false;
      while (true) {
        if (peek() == '_') {
          get();
          if (!is_digit(peek())) fail("invalid decimal literal");
        }
        if (peek() != '0') break;
        get();
      }
      c = peek();
      if (is_digit(c)) {
        nonzero = true;
        get();
        c = decimal_tail();
      }
      if (c == '.' || c == 'e' || c == 'E' || c == 'j' || c == 'J') {
        lex_fraction_and_exponent(c);
        return;
      }
      if (nonzero) {
        fail("leading zeros in decimal integer literals are not permitted");
      }
      verify_end_of_number(c, "decimal");
      return;
    }
    get();
    c = decimal_tail();
    lex_fraction_and_exponent(c);
  }

  void lex_operator() {
    static constexpr std::array<std::string_view, 5> three{"**=", "//=", "...", ">>=", "<<="};
    static constexpr std::array<std::string_view, 20> two{
        "**", "//", "<<", ">>", "<=", ">=", "==", "!=", "->", ":=", "+=", "-=",
        "*=", "/=", "%=", "&=", "|=", "^=", "@=", "<>"};
    auto matches = [this](std::string_view op) {
      for (std::size_t i = 0; i < op.size(); ++i) {
        if (peek(i) != static_cast<unsigned char>(op[i])) return false;
      }
      return true;
    };
    for (auto op : three) {
      if (matches(op)) {
        get();
        get();
        get();
        return;
      }
    }
    for (auto op : two) {
      if (matches(op)) {
        get();
        get();
        return;
      }
    }
    const int c = peek();
    switch (c) {
      case '(':
      case '[':
      case '{':
        if (parens_.size() >= kMaxParenLevel) fail("too many nested parentheses");
        parens_.emplace_back(static_cast<char>(c), line_);
        get();
        return;
      case ')':
      case ']':
      case '}': {
        if (parens_.empty()) fail(std::string("unmatched '") + static_cast<char>(c) + "'");
        const char open = parens_.back().first;
        const char expected = open == '(' ? ')' : open == '[' ? ']' : '}';
        if (c != expected) {
          fail(std::string("closing parenthesis '") + static_cast<char>(c) +
               "' does not match opening parenthesis '" + open + "'");
        }
        parens_.pop_back();
        get();
        return;
      }
      case '+': case '-': case '*': case '/': case '%': case '@': case '&': case '|':
      case '^': case '~': case '<': case '>': case ',': case ':': case ';': case '.':
      case '=':
        get();
        return;
      default:
        break;
    }
    if (c == '!') fail("invalid syntax");
    fail("invalid character in identifier");
  }

  std::string src_;
  std::size_t pos_ = 0;
  std::size_t line_start_ = 0;
  int line_ = 1;
  bool at_bol_ = true;
  std::vector<int> indents_{0};
  std::vector<int> alt_indents_{0};
  std::vector<std::pair<char, int>> parens_;
  std::vector<Token> tokens_;
};

}  // namespace

bool is_valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000) ||
        cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      return false;
    }
    i += extra + 1;
  }
  return true;
}

namespace {

std::optional<std::string> coding_cookie(std::string_view line) {
  static const std::regex re(R"(^[ \t\f]*#.*?coding[:=][ \t]*([-\w.]+))");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(line.begin(), line.end(), m, re)) return std::nullopt;
  return m[1].str();
}

bool blank_or_comment(std::string_view line) {
  const auto k = line.find_first_not_of(" \t\f\r");
  return k == std::string_view::npos || line[k] == '#';
}

enum class Encoding { Utf8, Ascii, SingleByte };

Encoding classify_encoding(std::string name) {
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) {
    return c == '_' ? '-' : static_cast<char>(std::tolower(c));
  });
  auto starts = [&](std::string_view p) { return name.rfind(p, 0) == 0; };
  if (name == "utf-8" || starts("utf-8-") || name == "utf8") return Encoding::Utf8;
  if (name == "ascii" || name == "us-ascii") return Encoding::Ascii;
  static const std::regex single(
      R"((latin-?[0-9]*|l[0-9]|iso-?8859-[0-9]+|iso-latin-1|cp12[0-9][0-9]|windows-12[0-9][0-9]|koi8-[ru]|mac-?roman|cp437|cp850|cp866)(-.*)?)");
  if (std::regex_match(name, single)) return Encoding::SingleByte;
  throw SyntaxError(1, "unknown encoding: " + name);
}

// Transcodes bytes >= 0x80 as Latin-1. For other single-byte code pages
// this changes which characters appear but not the token structure.
std::string single_byte_to_utf8(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (const char c : s) {
    const auto b = static_cast<unsigned char>(c);
    if (b < 0x80) {
      out.push_back(c);
    } else {
      out.push_back(static_cast<char>(0xC0 | (b >> 6)));
      out.push_back(static_cast<char>(0x80 | (b & 0x3F)));
    }
  }
  return out;
}

}  // namespace

std::vector<Token> tokenize(std::string_view source) {
  if (source.find('\0') != std::string_view::npos) {
    throw SyntaxError(1, "source code cannot contain null bytes");
  }
  const bool bom = source.substr(0, 3) == "\xEF\xBB\xBF";
  if (bom) source.remove_prefix(3);

  const auto nl1 = source.find('\n');
  const std::string_view line1 = source.substr(0, nl1);
  std::optional<std::string> cookie = coding_cookie(line1);
  if (!cookie && nl1 != std::string_view::npos && blank_or_comment(line1)) {
    const auto rest = source.substr(nl1 + 1);
    cookie = coding_cookie(rest.substr(0, rest.find('\n')));
  }
  const Encoding enc = cookie ? classify_encoding(*cookie) : Encoding::Utf8;
  if (bom && enc != Encoding::Utf8) throw SyntaxError(1, "encoding problem: utf-8");

  std::string decoded;
  if (enc == Encoding::SingleByte) {
    decoded = single_byte_to_utf8(source);
    source = decoded;
  } else if (enc == Encoding::Ascii) {
    for (const char c : source) {
      if (static_cast<unsigned char>(c) >= 0x80) throw SyntaxError(1, "non-ascii byte in ascii source");
    }
  }
  // comment bytes are never decoded, so only token text has to be utf-8
  auto tokens = Lexer(normalize_newlines(source)).run();
  for (const auto& t : tokens) {
    if (!is_valid_utf8(t.text)) throw SyntaxError(t.line, "invalid utf-8");
  }
  return tokens;
}

}  // namespace topical::python
