#include "topical/python/parser.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <optional>
#include <unordered_set>

namespace topical::python {

namespace {

constexpr int kMaxDepth = 400;
constexpr int kMaxFStringNesting = 2;

const std::unordered_set<std::string_view>& keywords() {
  static const std::unordered_set<std::string_view> kw{
      "False", "None",   "True",    "and",      "as",     "assert", "async", "await",
      "break", "class",  "continue", "def",     "del",    "elif",   "else",  "except",
      "finally", "for",  "from",    "global",   "if",     "import", "in",    "is",
      "lambda", "nonlocal", "not",  "or",       "pass",   "raise",  "return", "try",
      "while", "with",   "yield"};
  return kw;
}

bool is_keyword(std::string_view s) { return keywords().contains(s); }

NodePtr make(NodeKind kind, int line) { return std::make_unique<Node>(kind, line); }

struct StringPrefix {
  bool bytes = false;
  bool raw = false;
  bool fstring = false;
  std::size_t prefix_len = 0;
  std::size_t quote_len = 1;
};

StringPrefix classify_string(std::string_view tok) {
  StringPrefix p;
  std::size_t i = 0;
  while (i < tok.size() && tok[i] != '\'' && tok[i] != '"') {
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(tok[i])));
    if (c == 'b') p.bytes = true;
    if (c == 'r') p.raw = true;
    if (c == 'f') p.fstring = true;
    ++i;
  }
  p.prefix_len = i;
  if (tok.size() >= i + 6 && tok[i] == tok[i + 1] && tok[i] == tok[i + 2]) p.quote_len = 3;
  return p;
}

std::string_view string_body(std::string_view tok, const StringPrefix& p) {
  return tok.substr(p.prefix_len + p.quote_len, tok.size() - p.prefix_len - 2 * p.quote_len);
}

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

class Parser {
 public:
  Parser(std::vector<Token> tokens, int line_offset = 0)
      : toks_(std::move(tokens)), line_offset_(line_offset) {}

  NodePtr parse_file() {
    auto module = make(NodeKind::Module, 1);
    while (!at(TokenType::EndMarker)) {
      if (at(TokenType::Indent)) fail("unexpected indent");
      if (at(TokenType::Dedent)) fail("unexpected unindent");
      parse_statement(module->body);
    }
    return module;
  }

  // Parses the inside of an f-string replacement field, wrapped in parens.
  NodePtr parse_fstring_expression() {
    expect_op("(");
    NodePtr expr = at_kw("yield") ? parse_yield_expr() : parse_star_expressions(/*named=*/true);
    expect_op(")");
    if (at(TokenType::Newline)) advance();
    if (!at(TokenType::EndMarker)) fail("f-string: invalid syntax");
    return expr;
  }

 private:
  // ---------------------------------------------------------------- helpers
  const Token& cur() const { return toks_[pos_]; }
  const Token& ahead(std::size_t k) const {
    return toks_[std::min(pos_ + k, toks_.size() - 1)];
  }
  int line() const { return cur().line + line_offset_; }

  [[noreturn]] void fail(const std::string& msg) const { throw SyntaxError(line(), msg); }

  bool at(TokenType t) const { return cur().type == t; }
  bool at_op(std::string_view op) const { return cur().type == TokenType::Op && cur().text == op; }
  bool at_kw(std::string_view kw) const { return cur().type == TokenType::Name && cur().text == kw; }
  bool at_name() const { return cur().type == TokenType::Name && !is_keyword(cur().text); }
  bool ahead_op(std::size_t k, std::string_view op) const {
    return ahead(k).type == TokenType::Op && ahead(k).text == op;
  }
  bool ahead_kw(std::size_t k, std::string_view kw) const {
    return ahead(k).type == TokenType::Name && ahead(k).text == kw;
  }

  const Token& advance() {
    const Token& t = toks_[pos_];
    if (pos_ + 1 < toks_.size()) ++pos_;
    return t;
  }

  void expect_op(std::string_view op) {
    if (!at_op(op)) fail("expected '" + std::string(op) + "'");
    advance();
  }

  void expect_kw(std::string_view kw) {
    if (!at_kw(kw)) fail("expected '" + std::string(kw) + "'");
    advance();
  }

  void expect(TokenType t, const char* what) {
    if (!at(t)) fail(std::string("expected ") + what);
    advance();
  }

  std::string expect_name() {
    if (!at_name()) fail("invalid syntax");
    return advance().text;
  }

  struct DepthGuard {
    explicit DepthGuard(Parser& p) : parser(p) {
      if (++parser.depth_ > kMaxDepth) parser.fail("too many nested expressions");
    }
    ~DepthGuard() { --parser.depth_; }
    Parser& parser;
  };

  bool starts_expression() const {
    const Token& t = cur();
    switch (t.type) {
      case TokenType::Number:
      case TokenType::String:
        return true;
      case TokenType::Name:
        if (!is_keyword(t.text)) return true;
        return t.text == "not" || t.text == "lambda" || t.text == "await" || t.text == "None" ||
               t.text == "True" || t.text == "False";
      case TokenType::Op:
        return t.text == "(" || t.text == "[" || t.text == "{" || t.text == "-" || t.text == "+" ||
               t.text == "~" || t.text == "...";
      default:
        return false;
    }
  }

  bool at_augassign() const {
    static constexpr std::array<std::string_view, 13> ops{"+=", "-=", "*=", "@=", "/=", "%=", "&=",
                                                          "|=", "^=", "<<=", ">>=", "**=", "//="};
    if (cur().type != TokenType::Op) return false;
    return std::find(ops.begin(), ops.end(), cur().text) != ops.end();
  }

  // ------------------------------------------------------------- statements
  void parse_statement(NodeList& out) {
    DepthGuard guard(*this);
    if (at_op("@")) {
      out.push_back(parse_decorated());
      return;
    }
    if (at_kw("def")) {
      out.push_back(parse_funcdef({}, false));
      return;
    }
    if (at_kw("class")) {
      out.push_back(parse_classdef({}));
      return;
    }
    if (at_kw("async")) {
      if (ahead_kw(1, "def")) {
        advance();
        out.push_back(parse_funcdef({}, true));
        return;
      }
      if (ahead_kw(1, "for")) {
        advance();
        out.push_back(parse_for(true));
        return;
      }
      if (ahead_kw(1, "with")) {
        advance();
        out.push_back(parse_with(true));
        return;
      }
      fail("invalid syntax");
    }
    if (at_kw("if")) {
      out.push_back(parse_if());
      return;
    }
    if (at_kw("while")) {
      out.push_back(parse_while());
      return;
    }
    if (at_kw("for")) {
      out.push_back(parse_for(false));
      return;
    }
    if (at_kw("try")) {
      out.push_back(parse_try());
      return;
    }
    if (at_kw("with")) {
      out.push_back(parse_with(false));
      return;
    }
    if (cur().type == TokenType::Name && cur().text == "match") {
      const std::size_t save = pos_;
      try {
        out.push_back(parse_match());
        return;
      } catch (const SyntaxError&) {
        pos_ = save;
      }
    }
    parse_simple_statements(out);
  }

  void parse_simple_statements(NodeList& out) {
    out.push_back(parse_simple_statement());
    while (at_op(";")) {
      advance();
      if (at(TokenType::Newline)) break;
      out.push_back(parse_simple_statement());
    }
    expect(TokenType::Newline, "newline");
  }

  void parse_block(NodeList& body) {
    if (at(TokenType::Newline)) {
      advance();
      if (!at(TokenType::Indent)) fail("expected an indented block");
      advance();
      while (!at(TokenType::Dedent)) {
        if (at(TokenType::EndMarker)) fail("unexpected EOF");
        if (at(TokenType::Indent)) fail("unexpected indent");
        parse_statement(body);
      }
      advance();
      return;
    }
    parse_simple_statements(body);
  }

  NodePtr parse_simple_statement() {
    const int ln = line();
    if (at_kw("pass")) {
      advance();
      return make(NodeKind::Pass, ln);
    }
    if (at_kw("break")) {
      advance();
      return make(NodeKind::Break, ln);
    }
    if (at_kw("continue")) {
      advance();
      return make(NodeKind::Continue, ln);
    }
    if (at_kw("return")) {
      advance();
      auto node = make(NodeKind::Return, ln);
      if (starts_expression() || at_op("*")) node->children.push_back(parse_star_expressions());
      return node;
    }
    if (at_kw("raise")) {
      advance();
      auto node = make(NodeKind::Raise, ln);
      if (starts_expression()) {
        node->children.push_back(parse_expression());
        if (at_kw("from")) {
          advance();
          node->children.push_back(parse_expression());
        }
      }
      return node;
    }
    if (at_kw("global") || at_kw("nonlocal")) {
      auto node = make(at_kw("global") ? NodeKind::Global : NodeKind::Nonlocal, ln);
      advance();
      node->aliases.push_back({expect_name(), ""});
      while (at_op(",")) {
        advance();
        node->aliases.push_back({expect_name(), ""});
      }
      return node;
    }
    if (at_kw("del")) return parse_del();
    if (at_kw("assert")) {
      advance();
      auto node = make(NodeKind::Assert, ln);
      node->children.push_back(parse_expression());
      if (at_op(",")) {
        advance();
        node->children.push_back(parse_expression());
      }
      return node;
    }
    if (at_kw("import")) return parse_import();
    if (at_kw("from")) return parse_from_import();
    return parse_expression_statement();
  }

  NodePtr parse_expression_statement() {
    const int ln = line();
    NodePtr first = at_kw("yield") ? parse_yield_expr() : parse_star_expressions();

    if (at_op(":")) {
      advance();
      if (first->is(NodeKind::Tuple)) fail("only single target (not tuple) can be annotated");
      if (first->is(NodeKind::List)) fail("only single target (not list) can be annotated");
      if (!(first->is(NodeKind::Name) || first->is(NodeKind::Attribute) ||
            first->is(NodeKind::Subscript))) {
        fail("illegal target for annotation");
      }
      auto node = make(NodeKind::AnnAssign, ln);
      node->children.push_back(std::move(first));
      node->children.push_back(parse_expression());
      if (at_op("=")) {
        advance();
        node->children.push_back(at_kw("yield") ? parse_yield_expr() : parse_star_expressions());
      }
      return node;
    }

    if (at_op("=")) {
      auto node = make(NodeKind::Assign, ln);
      node->children.push_back(std::move(first));
      while (at_op("=")) {
        advance();
        node->children.push_back(at_kw("yield") ? parse_yield_expr() : parse_star_expressions());
      }
      for (std::size_t i = 0; i + 1 < node->children.size(); ++i) {
        check_target(*node->children[i], TargetMode::Assign);
      }
      return node;
    }

    if (at_augassign()) {
      if (!(first->is(NodeKind::Name) || first->is(NodeKind::Attribute) ||
            first->is(NodeKind::Subscript))) {
        fail("illegal expression for augmented assignment");
      }
      auto node = make(NodeKind::AugAssign, ln);
      node->text = advance().text;
      node->children.push_back(std::move(first));
      node->children.push_back(at_kw("yield") ? parse_yield_expr() : parse_star_expressions());
      return node;
    }

    auto node = make(NodeKind::ExprStmt, ln);
    node->children.push_back(std::move(first));
    return node;
  }

  NodePtr parse_del() {
    auto node = make(NodeKind::Delete, line());
    advance();
    while (true) {
      if (at_op("*")) fail("cannot delete starred");
      auto target = parse_bitwise_or();
      check_target(*target, TargetMode::Delete);
      node->children.push_back(std::move(target));
      if (!at_op(",")) break;
      advance();
      if (at(TokenType::Newline) || at_op(";")) break;
    }
    if (!(at(TokenType::Newline) || at_op(";"))) fail("invalid syntax");
    return node;
  }

  std::string parse_dotted_name() {
    std::string name = expect_name();
    while (at_op(".")) {
      advance();
      name += ".";
      name += expect_name();
    }
    return name;
  }

  NodePtr parse_import() {
    auto node = make(NodeKind::Import, line());
    advance();
    while (true) {
      ImportAlias alias;
      alias.name = parse_dotted_name();
      if (at_kw("as")) {
        advance();
        alias.asname = expect_name();
      }
      node->aliases.push_back(std::move(alias));
      if (!at_op(",")) break;
      advance();
    }
    return node;
  }

  NodePtr parse_from_import() {
    auto node = make(NodeKind::ImportFrom, line());
    advance();
    while (at_op(".") || at_op("...")) {
      node->level += at_op(".") ? 1 : 3;
      advance();
    }
    if (!at_kw("import")) {
      node->text = parse_dotted_name();
    } else if (node->level == 0) {
      fail("invalid syntax");
    }
    expect_kw("import");
    if (at_op("*")) {
      advance();
      node->aliases.push_back({"*", ""});
      return node;
    }
    const bool parens = at_op("(");
    if (parens) advance();
    while (true) {
      ImportAlias alias;
      alias.name = expect_name();
      if (at_kw("as")) {
        advance();
        alias.asname = expect_name();
      }
      node->aliases.push_back(std::move(alias));
      if (!at_op(",")) break;
      advance();
      if (parens && at_op(")")) break;
      if (!parens && !at_name()) fail("trailing comma not allowed without surrounding parentheses");
    }
    if (parens) expect_op(")");
    return node;
  }

  NodePtr parse_decorated() {
    NodeList decorators;
    while (at_op("@")) {
      advance();
      decorators.push_back(parse_named_expression());
      expect(TokenType::Newline, "newline");
    }
    if (at_kw("def")) return parse_funcdef(std::move(decorators), false);
    if (at_kw("class")) return parse_classdef(std::move(decorators));
    if (at_kw("async") && ahead_kw(1, "def")) {
      advance();
      return parse_funcdef(std::move(decorators), true);
    }
    fail("invalid syntax");
  }

  NodePtr parse_funcdef(NodeList decorators, bool is_async) {
    auto node = make(is_async ? NodeKind::AsyncFunctionDef : NodeKind::FunctionDef, line());
    expect_kw("def");
    node->text = expect_name();
    node->decorators = std::move(decorators);
    expect_op("(");
    node->children.push_back(parse_parameters(/*annotations=*/true, ")"));
    expect_op(")");
    if (at_op("->")) {
      advance();
      node->children.push_back(parse_expression());
    }
    expect_op(":");
    parse_block(node->body);
    return node;
  }

  NodePtr parse_parameters(bool annotations, std::string_view closer) {
    auto args = make(NodeKind::Arguments, line());
    bool seen_slash = false;
    bool seen_default = false;
    bool seen_star = false;
    bool seen_kwargs = false;
    bool need_named = false;
    int count = 0;
    auto parse_annotation = [&](Node& arg) {
      if (annotations && at_op(":")) {
        advance();
        arg.children.push_back(parse_expression());
      }
    };
    while (!at_op(closer)) {
      if (at_op("/")) {
        if (seen_slash || seen_star || seen_kwargs || count == 0) fail("invalid syntax");
        advance();
        seen_slash = true;
      } else if (at_op("*")) {
        if (seen_star || seen_kwargs) fail("invalid syntax");
        advance();
        seen_star = true;
        if (at_name()) {
          auto arg = make(NodeKind::Arg, line());
          arg->text = advance().text;
          parse_annotation(*arg);
          if (at_op("=")) fail("var-positional argument cannot have default value");
          args->children.push_back(std::move(arg));
        } else {
          need_named = true;
        }
      } else if (at_op("**")) {
        if (seen_kwargs) fail("invalid syntax");
        advance();
        auto arg = make(NodeKind::Arg, line());
        arg->text = expect_name();
        parse_annotation(*arg);
        if (at_op("=")) fail("var-keyword argument cannot have default value");
        args->children.push_back(std::move(arg));
        seen_kwargs = true;
      } else if (at_name()) {
        if (seen_kwargs) fail("invalid syntax");
        auto arg = make(NodeKind::Arg, line());
        arg->text = advance().text;
        parse_annotation(*arg);
        if (at_op("=")) {
          advance();
          arg->children.push_back(parse_expression());
          if (!seen_star) seen_default = true;
        } else if (seen_default && !seen_star) {
          fail("non-default argument follows default argument");
        }
        if (seen_star) need_named = false;
        args->children.push_back(std::move(arg));
      } else {
        fail("invalid syntax");
      }
      ++count;
      if (!at_op(",")) break;
      advance();
    }
    if (need_named) fail("named arguments must follow bare *");
    return args;
  }

  NodePtr parse_classdef(NodeList decorators) {
    auto node = make(NodeKind::ClassDef, line());
    expect_kw("class");
    node->text = expect_name();
    node->decorators = std::move(decorators);
    if (at_op("(")) {
      advance();
      parse_call_arguments(*node, /*allow_genexp=*/false);
    }
    expect_op(":");
    parse_block(node->body);
    return node;
  }

  NodePtr parse_if() {
    auto node = make(NodeKind::If, line());
    advance();  // 'if' or 'elif'
    node->children.push_back(parse_named_expression());
    expect_op(":");
    parse_block(node->body);
    if (at_kw("elif")) {
      node->orelse.push_back(parse_if());
    } else if (at_kw("else")) {
      advance();
      expect_op(":");
      parse_block(node->orelse);
    }
    return node;
  }

  NodePtr parse_while() {
    auto node = make(NodeKind::While, line());
    advance();
    node->children.push_back(parse_named_expression());
    expect_op(":");
    parse_block(node->body);
    if (at_kw("else")) {
      advance();
      expect_op(":");
      parse_block(node->orelse);
    }
    return node;
  }

  NodePtr parse_star_targets() {
    const int ln = line();
    NodeList items;
    bool trailing_comma = false;
    while (true) {
      NodePtr item;
      if (at_op("*")) {
        const int sl = line();
        advance();
        if (at_op("*")) fail("invalid syntax");
        item = make(NodeKind::Starred, sl);
        item->children.push_back(parse_bitwise_or());
      } else {
        item = parse_bitwise_or();
      }
      items.push_back(std::move(item));
      trailing_comma = false;
      if (!at_op(",")) break;
      advance();
      trailing_comma = true;
      if (!(starts_expression() || at_op("*")) || at_kw("not") || at_kw("lambda")) break;
    }
    NodePtr result;
    if (items.size() == 1 && !trailing_comma) {
      result = std::move(items.front());
    } else {
      result = make(NodeKind::Tuple, ln);
      result->children = std::move(items);
    }
    check_target(*result, TargetMode::Assign);
    return result;
  }

  NodePtr parse_for(bool is_async) {
    auto node = make(is_async ? NodeKind::AsyncFor : NodeKind::For, line());
    expect_kw("for");
    node->children.push_back(parse_star_targets());
    expect_kw("in");
    node->children.push_back(parse_star_expressions());
    expect_op(":");
    parse_block(node->body);
    if (at_kw("else")) {
      advance();
      expect_op(":");
      parse_block(node->orelse);
    }
    return node;
  }

  NodePtr parse_try() {
    auto node = make(NodeKind::Try, line());
    advance();
    expect_op(":");
    parse_block(node->body);
    while (at_kw("except")) {
      auto handler = make(NodeKind::ExceptHandler, line());
      advance();
      if (!at_op(":")) {
        handler->children.push_back(parse_expression());
        if (at_kw("as")) {
          advance();
          handler->text = expect_name();
        }
      }
      expect_op(":");
      parse_block(handler->body);
      node->handlers.push_back(std::move(handler));
    }
    if (!node->handlers.empty() && at_kw("else")) {
      advance();
      expect_op(":");
      parse_block(node->orelse);
    }
    if (at_kw("finally")) {
      advance();
      expect_op(":");
      parse_block(node->finalbody);
    }
    if (node->handlers.empty() && node->finalbody.empty()) {
      fail("expected 'except' or 'finally' block");
    }
    return node;
  }

  NodePtr parse_with_item() {
    auto item = make(NodeKind::WithItem, line());
    item->children.push_back(parse_expression());
    if (at_kw("as")) {
      advance();
      NodePtr target;
      if (at_op("*")) {
        const int sl = line();
        advance();
        target = make(NodeKind::Starred, sl);
        target->children.push_back(parse_bitwise_or());
      } else {
        target = parse_bitwise_or();
      }
      check_target(*target, TargetMode::Assign);
      if (!(at_op(",") || at_op(")") || at_op(":"))) fail("invalid syntax");
      item->children.push_back(std::move(target));
    }
    return item;
  }

  NodePtr parse_with(bool is_async) {
    auto node = make(is_async ? NodeKind::AsyncWith : NodeKind::With, line());
    expect_kw("with");
    bool done = false;
    if (at_op("(")) {
      const std::size_t save = pos_;
      try {
        advance();
        NodeList items;
        while (true) {
          items.push_back(parse_with_item());
          if (!at_op(",")) break;
          advance();
          if (at_op(")")) break;
        }
        expect_op(")");
        if (!at_op(":")) fail("invalid syntax");
        node->children = std::move(items);
        done = true;
      } catch (const SyntaxError&) {
        pos_ = save;
      }
    }
    if (!done) {
      while (true) {
        node->children.push_back(parse_with_item());
        if (!at_op(",")) break;
        advance();
      }
    }
    expect_op(":");
    parse_block(node->body);
    return node;
  }

  // ------------------------------------------------------------------ match
  NodePtr parse_match() {
    auto node = make(NodeKind::Match, line());
    advance();  // 'match'
    {
      const int ln = line();
      auto subject = parse_star_named_expression();
      if (at_op(",")) {
        auto tuple = make(NodeKind::Tuple, ln);
        tuple->children.push_back(std::move(subject));
        while (at_op(",")) {
          advance();
          if (at_op(":")) break;
          tuple->children.push_back(parse_star_named_expression());
        }
        subject = std::move(tuple);
      } else if (subject->is(NodeKind::Starred)) {
        fail("invalid syntax");
      }
      node->children.push_back(std::move(subject));
    }
    expect_op(":");
    expect(TokenType::Newline, "newline");
    expect(TokenType::Indent, "indent");
    if (!(cur().type == TokenType::Name && cur().text == "case")) fail("expected 'case'");
    while (cur().type == TokenType::Name && cur().text == "case") {
      auto kase = make(NodeKind::MatchCase, line());
      advance();
      parse_patterns();
      if (at_kw("if")) {
        advance();
        kase->children.push_back(parse_named_expression());
      }
      expect_op(":");
      parse_block(kase->body);
      node->handlers.push_back(std::move(kase));
    }
    expect(TokenType::Dedent, "dedent");
    return node;
  }

  void parse_patterns() {
    parse_maybe_star_pattern();
    if (at_op(",")) {
      while (at_op(",")) {
        advance();
        if (at_op(":") || at_kw("if")) break;
        parse_maybe_star_pattern();
      }
    }
  }

  void parse_maybe_star_pattern() {
    if (at_op("*")) {
      advance();
      expect_name();
      return;
    }
    parse_pattern();
  }

  void parse_pattern() {
    DepthGuard guard(*this);
    parse_closed_pattern();
    while (at_op("|")) {
      advance();
      parse_closed_pattern();
    }
    if (at_kw("as")) {
      advance();
      const std::string name = expect_name();
      if (name == "_") fail("cannot use '_' as a target");
      if (at_op(".") || at_op("(") || at_op("=")) fail("invalid pattern target");
    }
  }

  static bool is_imaginary(std::string_view number) {
    return !number.empty() && (number.back() == 'j' || number.back() == 'J');
  }

  // signed_number ['+'|'-' imaginary]
  void parse_number_pattern() {
    if (at_op("-")) advance();
    if (!at(TokenType::Number)) fail("invalid syntax");
    const bool first_imag = is_imaginary(advance().text);
    if (at_op("+") || at_op("-")) {
      advance();
      if (!at(TokenType::Number)) fail("invalid syntax");
      if (first_imag) fail("real number required in complex literal");
      if (!is_imaginary(advance().text)) fail("imaginary number required in complex literal");
    }
  }

  void parse_string_pattern() {
    auto s = parse_strings();
    if (s->is(NodeKind::JoinedStr)) fail("patterns may only match literals and attribute lookups");
  }

  void parse_class_pattern_args() {
    expect_op("(");
    bool seen_keyword = false;
    while (!at_op(")")) {
      if (at_name() && ahead_op(1, "=")) {
        advance();
        advance();
        parse_pattern();
        seen_keyword = true;
      } else {
        if (seen_keyword) fail("positional patterns follow keyword patterns");
        parse_pattern();
      }
      if (!at_op(",")) break;
      advance();
    }
    expect_op(")");
  }

  void parse_closed_pattern() {
    if (at_op("-") || at(TokenType::Number)) {
      parse_number_pattern();
      return;
    }
    if (at(TokenType::String)) {
      parse_string_pattern();
      return;
    }
    if (at_kw("None") || at_kw("True") || at_kw("False")) {
      advance();
      return;
    }
    if (at_name()) {
      advance();
      bool dotted = false;
      while (at_op(".")) {
        advance();
        expect_name();
        dotted = true;
      }
      if (at_op("(")) {
        parse_class_pattern_args();
        return;
      }
      if (!dotted && at_op("=")) fail("invalid syntax");
      return;
    }
    if (at_op("(")) {
      advance();
      if (at_op(")")) {
        advance();
        return;
      }
      bool starred = at_op("*");
      parse_maybe_star_pattern();
      bool sequence = starred;
      while (at_op(",")) {
        sequence = true;
        advance();
        if (at_op(")")) break;
        parse_maybe_star_pattern();
      }
      (void)sequence;
      expect_op(")");
      return;
    }
    if (at_op("[")) {
      advance();
      while (!at_op("]")) {
        parse_maybe_star_pattern();
        if (!at_op(",")) break;
        advance();
      }
      expect_op("]");
      return;
    }
    if (at_op("{")) {
      advance();
      while (!at_op("}")) {
        if (at_op("**")) {
          advance();
          const std::string name = expect_name();
          if (name == "_") fail("invalid syntax");
          if (at_op(",")) advance();
          if (!at_op("}")) fail("invalid syntax");
          break;
        }
        if (at_op("-") || at(TokenType::Number)) {
          parse_number_pattern();
        } else if (at(TokenType::String)) {
          parse_string_pattern();
        } else if (at_kw("None") || at_kw("True") || at_kw("False")) {
          advance();
        } else if (at_name() && ahead_op(1, ".")) {
          advance();
          while (at_op(".")) {
            advance();
            expect_name();
          }
        } else {
          fail("invalid syntax");
        }
        expect_op(":");
        parse_pattern();
        if (!at_op(",")) break;
        advance();
      }
      expect_op("}");
      return;
    }
    fail("invalid syntax");
  }

  // ------------------------------------------------------------ expressions
  NodePtr parse_yield_expr() {
    const int ln = line();
    expect_kw("yield");
    if (at_kw("from")) {
      advance();
      auto node = make(NodeKind::YieldFrom, ln);
      node->children.push_back(parse_expression());
      return node;
    }
    auto node = make(NodeKind::Yield, ln);
    if (starts_expression() || at_op("*")) node->children.push_back(parse_star_expressions());
    return node;
  }

  NodePtr parse_star_expressions(bool named = false) {
    const int ln = line();
    auto first = named ? parse_star_named_expression() : parse_star_expression();
    if (!at_op(",")) return first;
    auto tuple = make(NodeKind::Tuple, ln);
    tuple->children.push_back(std::move(first));
    while (at_op(",")) {
      advance();
      if (!(starts_expression() || at_op("*"))) break;
      tuple->children.push_back(named ? parse_star_named_expression() : parse_star_expression());
    }
    return tuple;
  }

  NodePtr parse_star_expression() {
    if (at_op("*")) {
      auto node = make(NodeKind::Starred, line());
      advance();
      node->children.push_back(parse_bitwise_or());
      return node;
    }
    return parse_expression();
  }

  NodePtr parse_star_named_expression() {
    if (at_op("*")) {
      auto node = make(NodeKind::Starred, line());
      advance();
      node->children.push_back(parse_bitwise_or());
      return node;
    }
    return parse_named_expression();
  }

  NodePtr parse_named_expression() {
    if (at_name() && ahead_op(1, ":=")) {
      auto node = make(NodeKind::NamedExpr, line());
      auto target = make(NodeKind::Name, line());
      target->text = advance().text;
      advance();
      node->children.push_back(std::move(target));
      node->children.push_back(parse_expression());
      return node;
    }
    auto expr = parse_expression();
    if (at_op(":=")) fail("cannot use assignment expressions with this target");
    return expr;
  }

  NodePtr parse_expression() {
    DepthGuard guard(*this);
    if (at_kw("lambda")) return parse_lambda();
    const int ln = line();
    auto body = parse_disjunction();
    if (at_kw("if")) {
      advance();
      auto node = make(NodeKind::IfExp, ln);
      node->children.push_back(std::move(body));
      node->children.push_back(parse_disjunction());
      expect_kw("else");
      node->children.push_back(parse_expression());
      return node;
    }
    return body;
  }

  NodePtr parse_lambda() {
    auto node = make(NodeKind::Lambda, line());
    expect_kw("lambda");
    node->children.push_back(parse_parameters(/*annotations=*/false, ":"));
    expect_op(":");
    node->children.push_back(parse_expression());
    return node;
  }

  NodePtr parse_disjunction() {
    auto left = parse_conjunction();
    if (!at_kw("or")) return left;
    auto node = make(NodeKind::BoolOp, left->line);
    node->text = "or";
    node->children.push_back(std::move(left));
    while (at_kw("or")) {
      advance();
      node->children.push_back(parse_conjunction());
    }
    return node;
  }

  NodePtr parse_conjunction() {
    auto left = parse_inversion();
    if (!at_kw("and")) return left;
    auto node = make(NodeKind::BoolOp, left->line);
    node->text = "and";
    node->children.push_back(std::move(left));
    while (at_kw("and")) {
      advance();
      node->children.push_back(parse_inversion());
    }
    return node;
  }

  NodePtr parse_inversion() {
    DepthGuard guard(*this);
    if (at_kw("not")) {
      auto node = make(NodeKind::UnaryOp, line());
      node->text = "not";
      advance();
      node->children.push_back(parse_inversion());
      return node;
    }
    return parse_comparison();
  }

  bool at_compare_op() const {
    if (cur().type == TokenType::Op) {
      const auto& t = cur().text;
      return t == "==" || t == "!=" || t == "<" || t == ">" || t == "<=" || t == ">=";
    }
    if (at_kw("in") || at_kw("is")) return true;
    return at_kw("not") && ahead_kw(1, "in");
  }

  NodePtr parse_comparison() {
    auto left = parse_bitwise_or();
    if (!at_compare_op()) return left;
    auto node = make(NodeKind::Compare, left->line);
    node->children.push_back(std::move(left));
    while (at_compare_op()) {
      if (at_kw("not")) {
        advance();
        advance();
      } else if (at_kw("is")) {
        advance();
        if (at_kw("not")) advance();
      } else {
        advance();
      }
      node->children.push_back(parse_bitwise_or());
    }
    return node;
  }

  template <typename Next>
  NodePtr parse_binary(std::initializer_list<std::string_view> ops, Next next) {
    auto left = (this->*next)();
    while (cur().type == TokenType::Op &&
           std::find(ops.begin(), ops.end(), cur().text) != ops.end()) {
      auto node = make(NodeKind::BinOp, left->line);
      node->text = advance().text;
      node->children.push_back(std::move(left));
      node->children.push_back((this->*next)());
      left = std::move(node);
    }
    return left;
  }

  NodePtr parse_bitwise_or() { return parse_binary({"|"}, &Parser::parse_bitwise_xor); }
  NodePtr parse_bitwise_xor() { return parse_binary({"^"}, &Parser::parse_bitwise_and); }
  NodePtr parse_bitwise_and() { return parse_binary({"&"}, &Parser::parse_shift); }
  NodePtr parse_shift() { return parse_binary({"<<", ">>"}, &Parser::parse_sum); }
  NodePtr parse_sum() { return parse_binary({"+", "-"}, &Parser::parse_term); }
  NodePtr parse_term() { return parse_binary({"*", "/", "//", "%", "@"}, &Parser::parse_factor); }

  NodePtr parse_factor() {
    DepthGuard guard(*this);
    if (at_op("+") || at_op("-") || at_op("~")) {
      auto node = make(NodeKind::UnaryOp, line());
      node->text = advance().text;
      node->children.push_back(parse_factor());
      return node;
    }
    return parse_power();
  }

  NodePtr parse_power() {
    auto base = parse_await_primary();
    if (!at_op("**")) return base;
    auto node = make(NodeKind::BinOp, base->line);
    node->text = advance().text;
    node->children.push_back(std::move(base));
    node->children.push_back(parse_factor());
    return node;
  }

  NodePtr parse_await_primary() {
    if (at_kw("await")) {
      auto node = make(NodeKind::Await, line());
      advance();
      node->children.push_back(parse_primary());
      return node;
    }
    return parse_primary();
  }

  NodePtr parse_primary() {
    auto node = parse_atom();
    while (true) {
      if (at_op(".")) {
        advance();
        auto attr = make(NodeKind::Attribute, node->line);
        attr->text = expect_name();
        attr->children.push_back(std::move(node));
        node = std::move(attr);
      } else if (at_op("(")) {
        auto call = make(NodeKind::Call, line());
        advance();
        call->children.push_back(std::move(node));
        parse_call_arguments(*call, /*allow_genexp=*/true);
        node = std::move(call);
      } else if (at_op("[")) {
        auto sub = make(NodeKind::Subscript, node->line);
        advance();
        sub->children.push_back(std::move(node));
        sub->children.push_back(parse_slices());
        expect_op("]");
        node = std::move(sub);
      } else {
        return node;
      }
    }
  }

  // Arguments after the opening parenthesis; consumes the closing one.
  void parse_call_arguments(Node& call, bool allow_genexp) {
    bool seen_keyword = false;
    bool seen_double_star = false;
    int count = 0;
    while (!at_op(")")) {
      const int ln = line();
      if (at_op("*")) {
        if (seen_double_star) fail("iterable argument unpacking follows keyword argument unpacking");
        advance();
        auto node = make(NodeKind::Starred, ln);
        node->children.push_back(parse_expression());
        if (at_kw("for") || at_kw("async")) fail("iterable unpacking cannot be used in comprehension");
        call.children.push_back(std::move(node));
      } else if (at_op("**")) {
        advance();
        auto node = make(NodeKind::DoubleStarred, ln);
        node->children.push_back(parse_expression());
        call.children.push_back(std::move(node));
        seen_double_star = true;
      } else if (cur().type == TokenType::Name && ahead_op(1, "=")) {
        if (is_keyword(cur().text)) fail("cannot assign to " + cur().text);
        auto node = make(NodeKind::Keyword, ln);
        node->text = advance().text;
        advance();
        node->children.push_back(parse_expression());
        call.children.push_back(std::move(node));
        seen_keyword = true;
      } else {
        auto expr = parse_named_expression();
        if (at_kw("for") || at_kw("async")) {
          if (!allow_genexp || count != 0) fail("Generator expression must be parenthesized");
          auto gen = make(NodeKind::GeneratorExp, ln);
          gen->children.push_back(std::move(expr));
          parse_comprehension_clauses(*gen);
          if (!at_op(")")) fail("Generator expression must be parenthesized");
          call.children.push_back(std::move(gen));
          ++count;
          break;
        }
        if (at_op("=")) fail("expression cannot contain assignment, perhaps you meant \"==\"?");
        if (seen_keyword || seen_double_star) {
          fail("positional argument follows keyword argument");
        }
        call.children.push_back(std::move(expr));
      }
      ++count;
      if (!at_op(",")) break;
      advance();
    }
    expect_op(")");
  }

  NodePtr parse_slice() {
    const int ln = line();
    NodePtr lower;
    if (!at_op(":")) {
      if (at_op("*")) fail("invalid syntax");
      lower = parse_named_expression();
      if (!at_op(":")) return lower;
    }
    auto slice = make(NodeKind::Slice, ln);
    if (lower) slice->children.push_back(std::move(lower));
    advance();  // ':'
    if (!at_op(":") && !at_op(",") && !at_op("]")) slice->children.push_back(parse_expression());
    if (at_op(":")) {
      advance();
      if (!at_op(",") && !at_op("]")) slice->children.push_back(parse_expression());
    }
    return slice;
  }

  NodePtr parse_slices() {
    const int ln = line();
    auto first = parse_slice();
    if (!at_op(",")) return first;
    auto tuple = make(NodeKind::Tuple, ln);
    tuple->children.push_back(std::move(first));
    while (at_op(",")) {
      advance();
      if (at_op("]")) break;
      tuple->children.push_back(parse_slice());
    }
    return tuple;
  }

  void parse_comprehension_clauses(Node& comp) {
    bool any = false;
    while (at_kw("for") || (at_kw("async") && ahead_kw(1, "for"))) {
      any = true;
      auto clause = make(NodeKind::Comprehension, line());
      if (at_kw("async")) advance();
      advance();  // 'for'
      clause->children.push_back(parse_star_targets());
      expect_kw("in");
      clause->children.push_back(parse_disjunction());
      while (at_kw("if")) {
        advance();
        clause->children.push_back(parse_disjunction());
      }
      comp.children.push_back(std::move(clause));
    }
    if (!any) fail("invalid syntax");
  }

  NodePtr parse_atom() {
    DepthGuard guard(*this);
    const Token& t = cur();
    const int ln = line();
    switch (t.type) {
      case TokenType::Name: {
        if (t.text == "True" || t.text == "False" || t.text == "None") {
          auto node = make(NodeKind::Constant, ln);
          node->text = advance().text;
          return node;
        }
        if (is_keyword(t.text)) fail("invalid syntax");
        auto node = make(NodeKind::Name, ln);
        node->text = advance().text;
        return node;
      }
      case TokenType::Number: {
        auto node = make(NodeKind::Constant, ln);
        node->text = advance().text;
        return node;
      }
      case TokenType::String:
        return parse_strings();
      case TokenType::Op:
        if (t.text == "(") return parse_paren();
        if (t.text == "[") return parse_list();
        if (t.text == "{") return parse_brace();
        if (t.text == "...") {
          advance();
          auto node = make(NodeKind::Constant, ln);
          node->text = "...";
          return node;
        }
        break;
      default:
        break;
    }
    fail("invalid syntax");
  }

  NodePtr parse_paren() {
    const int ln = line();
    expect_op("(");
    if (at_op(")")) {
      advance();
      auto node = make(NodeKind::Tuple, ln);
      node->parenthesized = true;
      return node;
    }
    if (at_kw("yield")) {
      auto node = parse_yield_expr();
      expect_op(")");
      node->parenthesized = true;
      return node;
    }
    auto first = parse_star_named_expression();
    if (at_kw("for") || at_kw("async")) {
      if (first->is(NodeKind::Starred)) fail("iterable unpacking cannot be used in comprehension");
      auto gen = make(NodeKind::GeneratorExp, ln);
      gen->children.push_back(std::move(first));
      parse_comprehension_clauses(*gen);
      expect_op(")");
      gen->parenthesized = true;
      return gen;
    }
    if (at_op(",")) {
      auto tuple = make(NodeKind::Tuple, ln);
      tuple->children.push_back(std::move(first));
      while (at_op(",")) {
        advance();
        if (at_op(")")) break;
        tuple->children.push_back(parse_star_named_expression());
      }
      expect_op(")");
      tuple->parenthesized = true;
      return tuple;
    }
    expect_op(")");
    if (first->is(NodeKind::Starred)) fail("cannot use starred expression here");
    first->parenthesized = true;
    return first;
  }

  NodePtr parse_list() {
    const int ln = line();
    expect_op("[");
    auto node = make(NodeKind::List, ln);
    if (at_op("]")) {
      advance();
      return node;
    }
    auto first = parse_star_named_expression();
    if (at_kw("for") || at_kw("async")) {
      if (first->is(NodeKind::Starred)) fail("iterable unpacking cannot be used in comprehension");
      auto comp = make(NodeKind::ListComp, ln);
      comp->children.push_back(std::move(first));
      parse_comprehension_clauses(*comp);
      expect_op("]");
      return comp;
    }
    node->children.push_back(std::move(first));
    while (at_op(",")) {
      advance();
      if (at_op("]")) break;
      node->children.push_back(parse_star_named_expression());
    }
    expect_op("]");
    return node;
  }

  NodePtr parse_brace() {
    const int ln = line();
    expect_op("{");
    if (at_op("}")) {
      advance();
      return make(NodeKind::Dict, ln);
    }
    auto parse_dict_rest = [&](NodePtr dict) {
      while (at_op(",")) {
        advance();
        if (at_op("}")) break;
        if (at_op("**")) {
          advance();
          auto ds = make(NodeKind::DoubleStarred, line());
          ds->children.push_back(parse_bitwise_or());
          dict->children.push_back(std::move(ds));
          continue;
        }
        dict->children.push_back(parse_expression());
        expect_op(":");
        dict->children.push_back(parse_expression());
      }
      expect_op("}");
      return dict;
    };
    if (at_op("**")) {
      advance();
      auto dict = make(NodeKind::Dict, ln);
      auto ds = make(NodeKind::DoubleStarred, line());
      ds->children.push_back(parse_bitwise_or());
      dict->children.push_back(std::move(ds));
      if (at_kw("for") || at_kw("async")) fail("dict unpacking cannot be used in dict comprehension");
      return parse_dict_rest(std::move(dict));
    }
    auto first = parse_star_named_expression();
    if (at_op(":")) {
      if (first->is(NodeKind::Starred)) fail("invalid syntax");
      if (first->is(NodeKind::NamedExpr) && !first->parenthesized) fail("invalid syntax");
      advance();
      auto value = parse_expression();
      if (at_kw("for") || at_kw("async")) {
        auto comp = make(NodeKind::DictComp, ln);
        comp->children.push_back(std::move(first));
        comp->children.push_back(std::move(value));
        parse_comprehension_clauses(*comp);
        expect_op("}");
        return comp;
      }
      auto dict = make(NodeKind::Dict, ln);
      dict->children.push_back(std::move(first));
      dict->children.push_back(std::move(value));
      return parse_dict_rest(std::move(dict));
    }
    if (at_kw("for") || at_kw("async")) {
      if (first->is(NodeKind::Starred)) fail("iterable unpacking cannot be used in comprehension");
      auto comp = make(NodeKind::SetComp, ln);
      comp->children.push_back(std::move(first));
      parse_comprehension_clauses(*comp);
      expect_op("}");
      return comp;
    }
    auto set = make(NodeKind::Set, ln);
    set->children.push_back(std::move(first));
    while (at_op(",")) {
      advance();
      if (at_op("}")) break;
      set->children.push_back(parse_star_named_expression());
    }
    expect_op("}");
    return set;
  }

  // ---------------------------------------------------------------- strings
  void check_escapes(std::string_view body, bool bytes) {
    auto is_hex = [](char c) { return std::isxdigit(static_cast<unsigned char>(c)) != 0; };
    for (std::size_t i = 0; i + 1 < body.size(); ++i) {
      if (body[i] != '\\') continue;
      const char e = body[++i];
      std::size_t width = 0;
      if (e == 'x') width = 2;
      if (!bytes && e == 'u') width = 4;
      if (!bytes && e == 'U') width = 8;
      if (width) {
        std::uint32_t cp = 0;
        for (std::size_t k = 1; k <= width; ++k) {
          if (i + k >= body.size() || !is_hex(body[i + k])) fail("(unicode error) truncated escape");
          const char h = static_cast<char>(std::tolower(static_cast<unsigned char>(body[i + k])));
          cp = cp * 16 + static_cast<std::uint32_t>(h <= '9' ? h - '0' : h - 'a' + 10);
        }
        if (cp > 0x10FFFF) fail("(unicode error) illegal Unicode character");
        i += width;
      } else if (!bytes && e == 'N') {
        if (i + 1 >= body.size() || body[i + 1] != '{') fail("(unicode error) malformed \\N character escape");
        const auto close = body.find('}', i + 2);
        if (close == std::string_view::npos || close == i + 2) {
          fail("(unicode error) malformed \\N character escape");
        }
        i = close;
      }
    }
  }

  NodePtr parse_strings() {
    const int ln = line();
    bool any_bytes = false;
    bool any_text = false;
    bool any_f = false;
    std::string value;
    NodeList fields;
    while (at(TokenType::String)) {
      const Token& tok = advance();
      const StringPrefix p = classify_string(tok.text);
      const std::string_view body = string_body(tok.text, p);
      if (p.bytes) {
        any_bytes = true;
        for (const char c : body) {
          if (static_cast<unsigned char>(c) >= 0x80) {
            fail("bytes can only contain ASCII literal characters");
          }
        }
      } else {
        any_text = true;
      }
      if (!p.raw) check_escapes(body, p.bytes);
      if (p.fstring) {
        any_f = true;
        check_fstring(body, 0, p.raw, tok.line + line_offset_, 0, fields);
      }
      if (!p.bytes && !p.fstring) value += decode_string_literal(body, p.raw);
    }
    if (any_bytes && any_text) fail("cannot mix bytes and nonbytes literals");
    auto node = make(any_bytes ? NodeKind::Bytes : any_f ? NodeKind::JoinedStr : NodeKind::Str, ln);
    node->text = std::move(value);
    node->children = std::move(fields);
    return node;
  }

  std::size_t check_fstring(std::string_view s, std::size_t i, bool raw, int ln, int nesting,
                            NodeList& fields);

  // ---------------------------------------------------------------- targets
  enum class TargetMode { Assign, Delete };

  void check_target(const Node& node, TargetMode mode, bool in_sequence = false) {
    switch (node.kind) {
      case NodeKind::Name:
      case NodeKind::Attribute:
      case NodeKind::Subscript:
        return;
      case NodeKind::Tuple:
      case NodeKind::List:
        for (const auto& child : node.children) check_target(*child, mode, true);
        return;
      case NodeKind::Starred:
        if (mode == TargetMode::Delete) fail("cannot delete starred");
        (void)in_sequence;
        if (node.children.front()->is(NodeKind::Starred)) fail("invalid syntax");
        check_target(*node.children.front(), mode, true);
        return;
      case NodeKind::Call:
        fail(mode == TargetMode::Delete ? "cannot delete function call"
                                         : "cannot assign to function call");
      case NodeKind::Yield:
      case NodeKind::YieldFrom:
        fail("assignment to yield expression not possible");
      default:
        fail(mode == TargetMode::Delete ? "cannot delete expression"
                                         : "cannot assign to expression");
    }
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  int depth_ = 0;
  int line_offset_ = 0;
};

NodePtr parse_fstring_field(std::string_view expr, int ln) {
  bool blank = std::all_of(expr.begin(), expr.end(), [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f';
  });
  if (blank) throw SyntaxError(ln, "f-string: empty expression not allowed");
  std::string wrapped = "(";
  wrapped += expr;
  wrapped += ")";
  std::vector<Token> tokens;
  try {
    tokens = tokenize(wrapped);
  } catch (const SyntaxError& e) {
    throw SyntaxError(ln, std::string("f-string: ") + e.what());
  }
  return Parser(std::move(tokens), ln - 1).parse_fstring_expression();
}

// Scans an f-string body (without prefix and quotes). `nesting` counts how
// many replacement fields enclose this text. Returns the index of the '}'
// closing a format spec, or the end of `s` at the top level.
std::size_t Parser::check_fstring(std::string_view s, std::size_t i, bool raw, int ln, int nesting,
                                  NodeList& fields) {
  const std::size_t n = s.size();
  while (i < n) {
    const char c = s[i];
    if (c == '\\' && !raw) {
      if (i + 1 < n && s[i + 1] == 'N' && i + 2 < n && s[i + 2] == '{') {
        const auto close = s.find('}', i + 3);
        if (close == std::string_view::npos) fail("f-string: malformed \\N character escape");
        i = close + 1;
        continue;
      }
      i += 2;
      continue;
    }
    if (c == '}') {
      if (nesting > 0) return i;
      if (i + 1 < n && s[i + 1] == '}') {
        i += 2;
        continue;
      }
      throw SyntaxError(ln, "f-string: single '}' is not allowed");
    }
    if (c != '{') {
      ++i;
      continue;
    }
    if (nesting == 0 && i + 1 < n && s[i + 1] == '{') {
      i += 2;
      continue;
    }
    if (nesting >= kMaxFStringNesting) throw SyntaxError(ln, "f-string: expressions nested too deeply");
    // Replacement field: find the end of the expression.
    ++i;
    const std::size_t expr_start = i;
    std::vector<char> brackets;
    char quote = 0;
    int quote_len = 0;
    std::size_t expr_end = std::string_view::npos;
    while (i < n) {
      const char ch = s[i];
      if (ch == '\\') throw SyntaxError(ln, "f-string expression part cannot include a backslash");
      if (quote) {
        if (ch == quote) {
          if (quote_len == 3) {
            if (i + 2 < n && s[i + 1] == quote && s[i + 2] == quote) {
              i += 3;
              quote = 0;
              continue;
            }
          } else {
            quote = 0;
          }
        }
        ++i;
        continue;
      }
      if (ch == '\'' || ch == '"') {
        quote = ch;
        if (i + 2 < n && s[i + 1] == ch && s[i + 2] == ch) {
          quote_len = 3;
          i += 3;
        } else {
          quote_len = 1;
          ++i;
        }
        continue;
      }
      if (ch == '[' || ch == '(' || ch == '{') {
        brackets.push_back(ch);
        ++i;
        continue;
      }
      if (ch == '#') throw SyntaxError(ln, "f-string expression part cannot include '#'");
      if (brackets.empty()) {
        if (ch == '!' && i + 1 < n && s[i + 1] == '=') {
          i += 2;
          continue;
        }
        if (ch == '=' && i + 1 < n && s[i + 1] == '=') {
          i += 2;
          continue;
        }
        if ((ch == '<' || ch == '>') && i + 1 < n && s[i + 1] == '=') {
          i += 2;
          continue;
        }
        if (ch == '!' || ch == ':' || ch == '}' || ch == '=') {
          expr_end = i;
          break;
        }
      }
      if (ch == ']' || ch == ')' || ch == '}') {
        if (brackets.empty()) throw SyntaxError(ln, std::string("f-string: unmatched '") + ch + "'");
        const char open = brackets.back();
        if ((ch == ']' && open != '[') || (ch == ')' && open != '(') || (ch == '}' && open != '{')) {
          throw SyntaxError(ln, "f-string: closing parenthesis does not match");
        }
        brackets.pop_back();
      }
      ++i;
    }
    if (quote) throw SyntaxError(ln, "f-string: unterminated string");
    if (expr_end == std::string_view::npos) {
      throw SyntaxError(ln, brackets.empty() ? "f-string: expecting '}'" : "f-string: unmatched bracket");
    }
    fields.push_back(parse_fstring_field(s.substr(expr_start, expr_end - expr_start), ln));
    if (s[i] == '=') {
      ++i;
      while (i < n && (s[i] == ' ' || s[i] == '\t' || s[i] == '\n' || s[i] == '\f' || s[i] == '\r')) ++i;
      if (i >= n) throw SyntaxError(ln, "f-string: expecting '}'");
    }
    if (s[i] == '!') {
      ++i;
      if (i >= n) throw SyntaxError(ln, "f-string: expecting '}'");
      const char conv = s[i];
      if (conv != 's' && conv != 'r' && conv != 'a') {
        throw SyntaxError(ln, "f-string: invalid conversion character");
      }
      ++i;
      if (i >= n || (s[i] != ':' && s[i] != '}')) throw SyntaxError(ln, "f-string: expecting '}'");
    }
    if (i < n && s[i] == ':') i = check_fstring(s, i + 1, raw, ln, nesting + 1, fields);
    if (i >= n || s[i] != '}') throw SyntaxError(ln, "f-string: expecting '}'");
    ++i;
  }
  if (nesting > 0) throw SyntaxError(ln, "f-string: expecting '}'");
  return n;
}

}  // namespace

std::string decode_string_literal(std::string_view body, bool raw) {
  if (raw) return std::string(body);
  std::string out;
  out.reserve(body.size());
  for (std::size_t i = 0; i < body.size(); ++i) {
    const char c = body[i];
    if (c != '\\' || i + 1 >= body.size()) {
      out.push_back(c);
      continue;
    }
    const char e = body[++i];
    switch (e) {
      case '\n': break;
      case '\\': out.push_back('\\'); break;
      case '\'': out.push_back('\''); break;
      case '"': out.push_back('"'); break;
      case 'a': out.push_back('\a'); break;
      case 'b': out.push_back('\b'); break;
      case 'f': out.push_back('\f'); break;
      case 'n': out.push_back('\n'); break;
      case 'r': out.push_back('\r'); break;
      case 't': out.push_back('\t'); break;
      case 'v': out.push_back('\v'); break;
      case 'x':
      case 'u':
      case 'U': {
        const std::size_t width = e == 'x' ? 2 : e == 'u' ? 4 : 8;
        std::uint32_t cp = 0;
        std::size_t k = 0;
        for (; k < width && i + 1 + k < body.size(); ++k) {
          const char h = body[i + 1 + k];
          int v = -1;
          if (h >= '0' && h <= '9') v = h - '0';
          if (h >= 'a' && h <= 'f') v = h - 'a' + 10;
          if (h >= 'A' && h <= 'F') v = h - 'A' + 10;
          if (v < 0) break;
          cp = cp * 16 + static_cast<std::uint32_t>(v);
        }
        if (k != width || cp > 0x10FFFF) {
          out.push_back('\\');
          out.push_back(e);
          break;
        }
        append_utf8(out, cp);
        i += width;
        break;
      }
      default:
        if (e >= '0' && e <= '7') {
          std::uint32_t cp = static_cast<std::uint32_t>(e - '0');
          std::size_t k = 0;
          while (k < 2 && i + 1 < body.size() && body[i + 1] >= '0' && body[i + 1] <= '7') {
            cp = cp * 8 + static_cast<std::uint32_t>(body[++i] - '0');
            ++k;
          }
          append_utf8(out, cp);
        } else {
          out.push_back('\\');
          out.push_back(e);
        }
    }
  }
  return out;
}

std::string clean_docstring(std::string_view doc) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (true) {
    const auto nl = doc.find('\n', start);
    std::string ln(doc.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start));
    // expand tabs to 8 columns like str.expandtabs()
    std::string expanded;
    for (const char c : ln) {
      if (c == '\t') {
        expanded.append(8 - expanded.size() % 8, ' ');
      } else {
        expanded.push_back(c);
      }
    }
    lines.push_back(std::move(expanded));
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  // str.isspace() over ASCII
  auto lstrip_len = [](const std::string& s) {
    std::size_t k = 0;
    while (k < s.size() && (s[k] == ' ' || (s[k] >= '\t' && s[k] <= '\r') || (s[k] >= '\x1c' && s[k] <= '\x1f'))) ++k;
    return k;
  };
  std::size_t margin = std::string::npos;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t content = lstrip_len(lines[i]);
    if (content < lines[i].size()) margin = std::min(margin, content);
  }
  if (!lines.empty()) lines[0].erase(0, lstrip_len(lines[0]));
  if (margin != std::string::npos) {
    for (std::size_t i = 1; i < lines.size(); ++i) {
      lines[i].erase(0, std::min(margin, lines[i].size()));
    }
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  std::size_t first = 0;
  while (first < lines.size() && lines[first].empty()) ++first;
  std::string out;
  for (std::size_t i = first; i < lines.size(); ++i) {
    if (i > first) out.push_back('\n');
    out += lines[i];
  }
  return out;
}

const Node* docstring_node(const Node& def) {
  if (def.body.empty()) return nullptr;
  const Node& first = *def.body.front();
  if (!first.is(NodeKind::ExprStmt)) return nullptr;
  const Node& expr = *first.children.front();
  if (!expr.is(NodeKind::Str)) return nullptr;
  return &expr;
}

NodePtr parse_module(std::string_view source) {
  return Parser(tokenize(source)).parse_file();
}

std::string_view to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::Module: return "Module";
    case NodeKind::FunctionDef: return "FunctionDef";
    case NodeKind::AsyncFunctionDef: return "AsyncFunctionDef";
    case NodeKind::ClassDef: return "ClassDef";
    case NodeKind::Return: return "Return";
    case NodeKind::Delete: return "Delete";
    case NodeKind::Assign: return "Assign";
    case NodeKind::AugAssign: return "AugAssign";
    case NodeKind::AnnAssign: return "AnnAssign";
    case NodeKind::For: return "For";
    case NodeKind::AsyncFor: return "AsyncFor";
    case NodeKind::While: return "While";
    case NodeKind::If: return "If";
    case NodeKind::With: return "With";
    case NodeKind::AsyncWith: return "AsyncWith";
    case NodeKind::WithItem: return "WithItem";
    case NodeKind::Match: return "Match";
    case NodeKind::MatchCase: return "MatchCase";
    case NodeKind::Raise: return "Raise";
    case NodeKind::Try: return "Try";
    case NodeKind::ExceptHandler: return "ExceptHandler";
    case NodeKind::Assert: return "Assert";
    case NodeKind::Import: return "Import";
    case NodeKind::ImportFrom: return "ImportFrom";
    case NodeKind::Global: return "Global";
    case NodeKind::Nonlocal: return "Nonlocal";
    case NodeKind::ExprStmt: return "Expr";
    case NodeKind::Pass: return "Pass";
    case NodeKind::Break: return "Break";
    case NodeKind::Continue: return "Continue";
    case NodeKind::BoolOp: return "BoolOp";
    case NodeKind::NamedExpr: return "NamedExpr";
    case NodeKind::BinOp: return "BinOp";
    case NodeKind::UnaryOp: return "UnaryOp";
    case NodeKind::Lambda: return "Lambda";
    case NodeKind::IfExp: return "IfExp";
    case NodeKind::Dict: return "Dict";
    case NodeKind::Set: return "Set";
    case NodeKind::ListComp: return "ListComp";
    case NodeKind::SetComp: return "SetComp";
    case NodeKind::DictComp: return "DictComp";
    case NodeKind::GeneratorExp: return "GeneratorExp";
    case NodeKind::Comprehension: return "comprehension";
    case NodeKind::Await: return "Await";
    case NodeKind::Yield: return "Yield";
    case NodeKind::YieldFrom: return "YieldFrom";
    case NodeKind::Compare: return "Compare";
    case NodeKind::Call: return "Call";
    case NodeKind::Keyword: return "keyword";
    case NodeKind::Constant: return "Constant";
    case NodeKind::Str: return "Str";
    case NodeKind::JoinedStr: return "JoinedStr";
    case NodeKind::Bytes: return "Bytes";
    case NodeKind::Attribute: return "Attribute";
    case NodeKind::Subscript: return "Subscript";
    case NodeKind::Starred: return "Starred";
    case NodeKind::DoubleStarred: return "DoubleStarred";
    case NodeKind::Name: return "Name";
    case NodeKind::List: return "List";
    case NodeKind::Tuple: return "Tuple";
    case NodeKind::Slice: return "Slice";
    case NodeKind::Arguments: return "arguments";
    case NodeKind::Arg: return "arg";
  }
  return "?";
}

}  // namespace topical::python
