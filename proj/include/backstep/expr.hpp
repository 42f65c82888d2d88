#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>

namespace backstep {

// Error raised by Expr::parse, carries the byte offset of the offending token.
class ExprParseError : public std::runtime_error {
public:
    ExprParseError(std::string msg, std::size_t offset)
        : std::runtime_error(std::move(msg)), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

// Error raised by Expr::eval on points outside the expression domain
// (division by zero, sqrt of a negative number, 0^negative, ...).
class ExprDomainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Immutable symbolic expression in one variable z.
//
// Node set: real constants, z, unary {neg, exp, sin, cos, sqrt} and binary
// {+, -, *, /, ^}. The set is closed under differentiation, so coefficient
// derivatives of any order stay exact. Exponents must fold to a constant.
// Instances share their tree via shared_ptr; evaluation is reentrant.
class Expr {
public:
    Expr();  // constant 0

    static Expr parse(std::string_view text);
    static Expr constant(double value);
    static Expr variable();

    double eval(double z) const;
    Expr derivative() const;

    // Prints the same grammar parse() accepts.
    std::string str() const;

    bool is_constant() const;
    // Value of a constant expression; throws std::logic_error otherwise.
    double constant_value() const;

    friend Expr operator+(const Expr& a, const Expr& b);
    friend Expr operator-(const Expr& a, const Expr& b);
    friend Expr operator*(const Expr& a, const Expr& b);
    friend Expr operator/(const Expr& a, const Expr& b);
    Expr operator-() const;
    static Expr pow(const Expr& base, double exponent);
    static Expr apply(const std::string& fn, const Expr& arg);

    struct Node;

private:
    explicit Expr(std::shared_ptr<const Node> root) : root_(std::move(root)) {}
    std::shared_ptr<const Node> root_;
};

}  // namespace backstep
