#pragma once

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "qtat/error.hpp"

namespace qtat {

/// Closed-form scalar expression in x1..x3.
/// Grammar: + - * / ^ (right associative), unary minus, parentheses,
/// sin cos tan exp log sqrt abs tanh, constants pi and e.
class Expression {
 public:
  Expression() : Expression(0.0) {}
  explicit Expression(double constant) : root_(std::make_shared<Node>()), text_(num_text(constant)) {
    root_->kind = Kind::Number;
    root_->value = constant;
  }

  static Expression parse(const std::string& text, std::size_t max_dim = 3) {
    Parser p{text, 0, max_dim};
    Expression e;
    e.root_ = p.parse_expr();
    p.skip_ws();
    if (p.pos != text.size()) p.fail("unexpected '" + std::string(1, text[p.pos]) + "'");
    e.text_ = text;
    return e;
  }

  double operator()(std::span<const double> x) const { return eval(*root_, x); }
  const std::string& text() const { return text_; }

  bool is_constant() const { return root_->kind == Kind::Number; }

  /// Highest variable index referenced (0 when the expression is constant).
  std::size_t max_variable() const { return max_var(*root_); }

 private:
  enum class Kind { Number, Var, Neg, Add, Sub, Mul, Div, Pow, Call };

  struct Node {
    Kind kind = Kind::Number;
    double value = 0.0;
    std::size_t var = 0;
    double (*fn)(double) = nullptr;
    std::shared_ptr<Node> lhs, rhs;
  };

  static std::string num_text(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }

  static double eval(const Node& n, std::span<const double> x) {
    switch (n.kind) {
      case Kind::Number: return n.value;
      case Kind::Var:
        if (n.var >= x.size()) throw InvalidData("expression uses x" + std::to_string(n.var + 1) + " in a lower-dimensional setting");
        return x[n.var];
      case Kind::Neg: return -eval(*n.lhs, x);
      case Kind::Add: return eval(*n.lhs, x) + eval(*n.rhs, x);
      case Kind::Sub: return eval(*n.lhs, x) - eval(*n.rhs, x);
      case Kind::Mul: return eval(*n.lhs, x) * eval(*n.rhs, x);
      case Kind::Div: return eval(*n.lhs, x) / eval(*n.rhs, x);
      case Kind::Pow: return std::pow(eval(*n.lhs, x), eval(*n.rhs, x));
      case Kind::Call: return n.fn(eval(*n.lhs, x));
    }
    return 0.0;
  }

  static std::size_t max_var(const Node& n) {
    std::size_t m = n.kind == Kind::Var ? n.var + 1 : 0;
    if (n.lhs) m = std::max(m, max_var(*n.lhs));
    if (n.rhs) m = std::max(m, max_var(*n.rhs));
    return m;
  }

  struct Parser {
    const std::string& s;
    std::size_t pos;
    std::size_t max_dim;

    [[noreturn]] void fail(const std::string& msg) const {
      throw ConfigError("expression '" + s + "': " + msg + " at column " + std::to_string(pos + 1));
    }

    void skip_ws() {
      while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }

    bool accept(char c) {
      skip_ws();
      if (pos < s.size() && s[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }

    static std::shared_ptr<Node> binary(Kind k, std::shared_ptr<Node> a, std::shared_ptr<Node> b) {
      auto n = std::make_shared<Node>();
      n->kind = k;
      n->lhs = std::move(a);
      n->rhs = std::move(b);
      // fold constants so constant coefficients stay recognizable
      if (n->lhs->kind == Kind::Number && n->rhs->kind == Kind::Number) {
        double v = eval(*n, {});
        n = std::make_shared<Node>();
        n->value = v;
      }
      return n;
    }

    std::shared_ptr<Node> parse_expr() {
      auto lhs = parse_term();
      for (;;) {
        if (accept('+')) lhs = binary(Kind::Add, lhs, parse_term());
        else if (accept('-')) lhs = binary(Kind::Sub, lhs, parse_term());
        else return lhs;
      }
    }

    std::shared_ptr<Node> parse_term() {
      auto lhs = parse_unary();
      for (;;) {
        if (accept('*')) lhs = binary(Kind::Mul, lhs, parse_unary());
        else if (accept('/')) lhs = binary(Kind::Div, lhs, parse_unary());
        else return lhs;
      }
    }

    std::shared_ptr<Node> parse_unary() {
      if (accept('-')) {
        auto inner = parse_unary();
        if (inner->kind == Kind::Number) {
          inner->value = -inner->value;
          return inner;
        }
        auto n = std::make_shared<Node>();
        n->kind = Kind::Neg;
        n->lhs = inner;
        return n;
      }
      if (accept('+')) return parse_unary();
      return parse_power();
    }

    std::shared_ptr<Node> parse_power() {
      auto base = parse_primary();
      if (accept('^')) return binary(Kind::Pow, base, parse_unary());
      return base;
    }

    std::shared_ptr<Node> parse_primary() {
      skip_ws();
      if (pos >= s.size()) fail("unexpected end of input");
      char c = s[pos];
      if (c == '(') {
        ++pos;
        auto e = parse_expr();
        if (!accept(')')) fail("expected ')'");
        return e;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        const char* begin = s.c_str() + pos;
        char* end = nullptr;
        double v = std::strtod(begin, &end);
        if (end == begin) fail("bad number");
        pos += static_cast<std::size_t>(end - begin);
        auto n = std::make_shared<Node>();
        n->value = v;
        return n;
      }
      if (std::isalpha(static_cast<unsigned char>(c))) {
        std::size_t start = pos;
        while (pos < s.size() && (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_')) ++pos;
        std::string id = s.substr(start, pos - start);
        auto n = std::make_shared<Node>();
        if (id == "pi") {
          n->value = std::numbers::pi;
          return n;
        }
        if (id == "e") {
          n->value = std::numbers::e;
          return n;
        }
        if (id.size() >= 2 && id[0] == 'x' && std::isdigit(static_cast<unsigned char>(id[1]))) {
          std::size_t k = std::stoul(id.substr(1));
          if (k < 1 || k > max_dim) fail("variable " + id + " out of range");
          n->kind = Kind::Var;
          n->var = k - 1;
          return n;
        }
        double (*fn)(double) = nullptr;
        if (id == "sin") fn = [](double v) { return std::sin(v); };
        else if (id == "cos") fn = [](double v) { return std::cos(v); };
        else if (id == "tan") fn = [](double v) { return std::tan(v); };
        else if (id == "exp") fn = [](double v) { return std::exp(v); };
        else if (id == "log") fn = [](double v) { return std::log(v); };
        else if (id == "sqrt") fn = [](double v) { return std::sqrt(v); };
        else if (id == "abs") fn = [](double v) { return std::abs(v); };
        else if (id == "tanh") fn = [](double v) { return std::tanh(v); };
        else fail("unknown identifier '" + id + "'");
        if (!accept('(')) fail("expected '(' after " + id);
        n->kind = Kind::Call;
        n->fn = fn;
        n->lhs = parse_expr();
        if (!accept(')')) fail("expected ')'");
        if (n->lhs->kind == Kind::Number) {
          double v = fn(n->lhs->value);
          n = std::make_shared<Node>();
          n->value = v;
        }
        return n;
      }
      fail("unexpected '" + std::string(1, c) + "'");
    }
  };

  std::shared_ptr<Node> root_;
  std::string text_;
};

}  // namespace qtat
