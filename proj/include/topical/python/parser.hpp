#pragma once

#include <string_view>

#include "topical/python/ast.hpp"
#include "topical/python/tokenizer.hpp"

namespace topical::python {

/// Parses a Python 3.10 module. Accepts exactly the programs CPython's
/// `ast.parse` accepts (up to Unicode identifier classification, where any
/// non-ASCII code point is treated as an identifier character) and throws
/// SyntaxError otherwise. Semantic checks CPython defers to the compiler
/// (`break` outside a loop, duplicate arguments, ...) are not performed.
NodePtr parse_module(std::string_view source);

/// Evaluates the escape sequences of a single (non-raw) string literal body.
std::string decode_string_literal(std::string_view body, bool raw);

/// Mirrors `inspect.cleandoc`: strips leading/trailing blank lines and the
/// common indentation of all lines after the first.
std::string clean_docstring(std::string_view doc);

/// Returns the docstring of a Module, ClassDef or FunctionDef node, if any.
const Node* docstring_node(const Node& def);

}  // namespace topical::python
