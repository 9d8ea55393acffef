#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace topical::python {

enum class NodeKind {
  // statements
  Module,
  FunctionDef,
  AsyncFunctionDef,
  ClassDef,
  Return,
  Delete,
  Assign,
  AugAssign,
  AnnAssign,
  For,
  AsyncFor,
  While,
  If,
  With,
  AsyncWith,
  WithItem,
  Match,
  MatchCase,
  Raise,
  Try,
  ExceptHandler,
  Assert,
  Import,
  ImportFrom,
  Global,
  Nonlocal,
  ExprStmt,
  Pass,
  Break,
  Continue,
  // expressions
  BoolOp,
  NamedExpr,
  BinOp,
  UnaryOp,
  Lambda,
  IfExp,
  Dict,
  Set,
  ListComp,
  SetComp,
  DictComp,
  GeneratorExp,
  Comprehension,
  Await,
  Yield,
  YieldFrom,
  Compare,
  Call,
  Keyword,
  Constant,
  Str,
  JoinedStr,
  Bytes,
  Attribute,
  Subscript,
  Starred,
  DoubleStarred,
  Name,
  List,
  Tuple,
  Slice,
  Arguments,
  Arg,
};

std::string_view to_string(NodeKind kind);

struct ImportAlias {
  std::string name;
  std::string asname;
};

struct Node;
using NodePtr = std::unique_ptr<Node>;
using NodeList = std::vector<NodePtr>;

/// Untyped syntax tree node. Only the fields a given kind needs are filled:
/// `text` holds identifiers, attribute names, operators and decoded string
/// values; `children` holds sub-expressions in source order; statement blocks
/// live in `body`, `orelse`, `handlers` and `finalbody`.
struct Node {
  NodeKind kind;
  int line = 0;
  std::string text;
  NodeList children;
  NodeList decorators;
  NodeList body;
  NodeList orelse;
  NodeList handlers;
  NodeList finalbody;
  std::vector<ImportAlias> aliases;
  int level = 0;  // relative import depth
  bool parenthesized = false;

  Node(NodeKind k, int ln) : kind(k), line(ln) {}

  [[nodiscard]] bool is(NodeKind k) const { return kind == k; }
};

/// Calls `fn(node)` on every node reachable from `root`, parents first.
template <typename Fn>
void walk(const Node& root, Fn&& fn) {
  fn(root);
  for (const auto* list : {&root.decorators, &root.children, &root.body, &root.handlers,
                           &root.orelse, &root.finalbody}) {
    for (const auto& child : *list) walk(*child, fn);
  }
}

}  // namespace topical::python
