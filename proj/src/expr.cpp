#include "backstep/expr.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

namespace backstep {

namespace {

enum class Op {
    Const,
    Var,
    Neg,
    Exp,
    Sin,
    Cos,
    Sqrt,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
};

}  // namespace

struct Expr::Node {
    Op op = Op::Const;
    double value = 0.0;  // Const payload; Pow exponent lives in rhs const node
    std::shared_ptr<const Node> a, b;

    Node(Op o, double v) : op(o), value(v) {}
    Node(Op o, std::shared_ptr<const Node> lhs, std::shared_ptr<const Node> rhs = nullptr)
        : op(o), a(std::move(lhs)), b(std::move(rhs)) {}
};

namespace {

using NodePtr = std::shared_ptr<const Expr::Node>;

NodePtr make_const(double v) { return std::make_shared<Expr::Node>(Op::Const, v); }

bool is_const(const NodePtr& n, double v) { return n->op == Op::Const && n->value == v; }

double eval_node(const Expr::Node& n, double z) {
    switch (n.op) {
        case Op::Const: return n.value;
        case Op::Var: return z;
        case Op::Neg: return -eval_node(*n.a, z);
        case Op::Exp: return std::exp(eval_node(*n.a, z));
        case Op::Sin: return std::sin(eval_node(*n.a, z));
        case Op::Cos: return std::cos(eval_node(*n.a, z));
        case Op::Sqrt: {
            double v = eval_node(*n.a, z);
            if (v < 0.0) throw ExprDomainError("sqrt of negative value");
            return std::sqrt(v);
        }
        case Op::Add: return eval_node(*n.a, z) + eval_node(*n.b, z);
        case Op::Sub: return eval_node(*n.a, z) - eval_node(*n.b, z);
        case Op::Mul: return eval_node(*n.a, z) * eval_node(*n.b, z);
        case Op::Div: {
            double den = eval_node(*n.b, z);
            if (den == 0.0) throw ExprDomainError("division by zero");
            return eval_node(*n.a, z) / den;
        }
        case Op::Pow: {
            double base = eval_node(*n.a, z);
            double e = n.b->value;
            if (base == 0.0 && e < 0.0) throw ExprDomainError("0 raised to negative power");
            if (base < 0.0 && e != std::floor(e)) throw ExprDomainError("negative base with non-integer exponent");
            return std::pow(base, e);
        }
    }
    return 0.0;
}

NodePtr make_unary(Op op, NodePtr a) {
    if (a->op == Op::Const) {
        switch (op) {
            case Op::Neg: return make_const(-a->value);
            case Op::Exp: return make_const(std::exp(a->value));
            case Op::Sin: return make_const(std::sin(a->value));
            case Op::Cos: return make_const(std::cos(a->value));
            case Op::Sqrt:
                if (a->value >= 0.0) return make_const(std::sqrt(a->value));
                break;
            default: break;
        }
    }
    if (op == Op::Neg && a->op == Op::Neg) return a->a;
    return std::make_shared<Expr::Node>(op, std::move(a));
}

NodePtr make_binary(Op op, NodePtr a, NodePtr b) {
    // Fold constants and the most common algebraic identities.
    if (a->op == Op::Const && b->op == Op::Const) {
        switch (op) {
            case Op::Add: return make_const(a->value + b->value);
            case Op::Sub: return make_const(a->value - b->value);
            case Op::Mul: return make_const(a->value * b->value);
            case Op::Div:
                if (b->value != 0.0) return make_const(a->value / b->value);
                break;
            case Op::Pow: {
                double base = a->value, e = b->value;
                if (!(base == 0.0 && e < 0.0) && !(base < 0.0 && e != std::floor(e)))
                    return make_const(std::pow(base, e));
                break;
            }
            default: break;
        }
    }
    switch (op) {
        case Op::Add:
            if (is_const(a, 0.0)) return b;
            if (is_const(b, 0.0)) return a;
            break;
        case Op::Sub:
            if (is_const(b, 0.0)) return a;
            if (is_const(a, 0.0)) return make_unary(Op::Neg, std::move(b));
            break;
        case Op::Mul:
            if (is_const(a, 0.0) || is_const(b, 0.0)) return make_const(0.0);
            if (is_const(a, 1.0)) return b;
            if (is_const(b, 1.0)) return a;
            break;
        case Op::Div:
            if (is_const(a, 0.0)) return make_const(0.0);
            if (is_const(b, 1.0)) return a;
            break;
        case Op::Pow:
            if (is_const(b, 1.0)) return a;
            if (is_const(b, 0.0)) return make_const(1.0);
            break;
        default: break;
    }
    return std::make_shared<Expr::Node>(op, std::move(a), std::move(b));
}

NodePtr diff_node(const NodePtr& n) {
    switch (n->op) {
        case Op::Const: return make_const(0.0);
        case Op::Var: return make_const(1.0);
        case Op::Neg: return make_unary(Op::Neg, diff_node(n->a));
        case Op::Exp: return make_binary(Op::Mul, std::make_shared<Expr::Node>(Op::Exp, n->a), diff_node(n->a));
        case Op::Sin: return make_binary(Op::Mul, std::make_shared<Expr::Node>(Op::Cos, n->a), diff_node(n->a));
        case Op::Cos:
            return make_binary(Op::Mul, make_unary(Op::Neg, std::make_shared<Expr::Node>(Op::Sin, n->a)),
                               diff_node(n->a));
        case Op::Sqrt:
            // d sqrt(f) = f' / (2 sqrt(f))
            return make_binary(Op::Div, diff_node(n->a),
                               make_binary(Op::Mul, make_const(2.0), std::make_shared<Expr::Node>(Op::Sqrt, n->a)));
        case Op::Add: return make_binary(Op::Add, diff_node(n->a), diff_node(n->b));
        case Op::Sub: return make_binary(Op::Sub, diff_node(n->a), diff_node(n->b));
        case Op::Mul:
            return make_binary(Op::Add, make_binary(Op::Mul, diff_node(n->a), n->b),
                               make_binary(Op::Mul, n->a, diff_node(n->b)));
        case Op::Div:
            // (f/g)' = (f'g - f g') / g^2
            return make_binary(
                Op::Div,
                make_binary(Op::Sub, make_binary(Op::Mul, diff_node(n->a), n->b),
                            make_binary(Op::Mul, n->a, diff_node(n->b))),
                make_binary(Op::Pow, n->b, make_const(2.0)));
        case Op::Pow: {
            // exponent is a constant: c f^(c-1) f'
            double c = n->b->value;
            return make_binary(Op::Mul, make_const(c),
                               make_binary(Op::Mul, make_binary(Op::Pow, n->a, make_const(c - 1.0)),
                                           diff_node(n->a)));
        }
    }
    return make_const(0.0);
}

int precedence(Op op) {
    switch (op) {
        case Op::Add:
        case Op::Sub: return 1;
        case Op::Mul:
        case Op::Div: return 2;
        case Op::Pow: return 3;
        case Op::Neg: return 4;
        default: return 5;
    }
}

void print_node(const NodePtr& n, std::ostringstream& out, int parent_prec) {
    int prec = precedence(n->op);
    bool need_paren = prec < parent_prec;
    switch (n->op) {
        case Op::Const: {
            if (n->value < 0.0) {
                out << '(' << n->value << ')';
            } else {
                std::ostringstream v;
                v.precision(17);
                v << n->value;
                out << v.str();
            }
            return;
        }
        case Op::Var: out << 'z'; return;
        case Op::Neg:
            if (need_paren) out << '(';
            out << '-';
            print_node(n->a, out, prec + 1);
            if (need_paren) out << ')';
            return;
        case Op::Exp:
        case Op::Sin:
        case Op::Cos:
        case Op::Sqrt: {
            const char* name = n->op == Op::Exp ? "exp" : n->op == Op::Sin ? "sin" : n->op == Op::Cos ? "cos" : "sqrt";
            out << name << '(';
            print_node(n->a, out, 0);
            out << ')';
            return;
        }
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::Div:
        case Op::Pow: {
            const char sym = n->op == Op::Add ? '+' : n->op == Op::Sub ? '-' : n->op == Op::Mul ? '*' : n->op == Op::Div ? '/' : '^';
            if (need_paren) out << '(';
            // left operand of - and / needs its own level; right one a notch higher
            int lp = prec, rp = prec + 1;
            if (n->op == Op::Pow) { lp = prec + 1; rp = prec; }  // right-associative
            print_node(n->a, out, lp);
            out << sym;
            print_node(n->b, out, rp);
            if (need_paren) out << ')';
            return;
        }
    }
}

// Recursive-descent parser over the byte string. Whitespace-insensitive.
class Parser {
public:
    explicit Parser(std::string_view text) : text_(text) {}

    NodePtr parse() {
        NodePtr e = expression();
        skip_ws();
        if (pos_ != text_.size()) fail("unexpected trailing input");
        return e;
    }

private:
    std::string_view text_;
    std::size_t pos_ = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw ExprParseError(what + " at offset " + std::to_string(pos_), pos_);
    }

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    bool consume(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    char peek() {
        skip_ws();
        return pos_ < text_.size() ? text_[pos_] : '\0';
    }

    NodePtr expression() {
        NodePtr lhs = term();
        for (;;) {
            if (consume('+')) {
                lhs = make_binary(Op::Add, lhs, term());
            } else if (consume('-')) {
                lhs = make_binary(Op::Sub, lhs, term());
            } else {
                return lhs;
            }
        }
    }

    NodePtr term() {
        NodePtr lhs = factor();
        for (;;) {
            if (consume('*')) {
                lhs = make_binary(Op::Mul, lhs, factor());
            } else if (consume('/')) {
                lhs = make_binary(Op::Div, lhs, factor());
            } else {
                return lhs;
            }
        }
    }

    NodePtr factor() {
        NodePtr base = unary();
        if (consume('^')) {
            std::size_t at = pos_;
            NodePtr e = factor();  // right-associative
            if (e->op != Op::Const) {
                pos_ = at;
                fail("exponent must be a constant");
            }
            return make_binary(Op::Pow, base, e);
        }
        return base;
    }

    NodePtr unary() {
        if (consume('-')) return make_unary(Op::Neg, unary());
        if (consume('+')) return unary();
        return primary();
    }

    NodePtr primary() {
        skip_ws();
        if (pos_ >= text_.size()) fail("unexpected end of input");
        char c = text_[pos_];
        if (c == '(') {
            ++pos_;
            NodePtr e = expression();
            if (!consume(')')) fail("expected ')'");
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
        if (std::isalpha(static_cast<unsigned char>(c))) return identifier();
        fail(std::string("unexpected character '") + c + "'");
    }

    NodePtr number() {
        std::size_t start = pos_;
        while (pos_ < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.'))
            ++pos_;
        if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
            std::size_t mark = pos_++;
            if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
            if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
                while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
            } else {
                pos_ = mark;  // 'e' belonged to something else
            }
        }
        std::string tok(text_.substr(start, pos_ - start));
        try {
            std::size_t used = 0;
            double v = std::stod(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            return make_const(v);
        } catch (const std::exception&) {
            pos_ = start;
            fail("malformed number '" + tok + "'");
        }
    }

    NodePtr identifier() {
        std::size_t start = pos_;
        while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
            ++pos_;
        std::string name(text_.substr(start, pos_ - start));
        if (name == "z") return std::make_shared<Expr::Node>(Op::Var, 0.0);
        if (name == "pi") return make_const(std::acos(-1.0));
        if (name == "exp" || name == "sin" || name == "cos" || name == "sqrt") {
            if (!consume('(')) fail("expected '(' after function name");
            NodePtr arg = expression();
            if (!consume(')')) fail("expected ')'");
            Op op = name == "exp" ? Op::Exp : name == "sin" ? Op::Sin : name == "cos" ? Op::Cos : Op::Sqrt;
            return make_unary(op, arg);
        }
        pos_ = start;
        fail("unknown identifier '" + name + "'");
    }
};

}  // namespace

Expr::Expr() : root_(make_const(0.0)) {}

Expr Expr::parse(std::string_view text) { return Expr(Parser(text).parse()); }

Expr Expr::constant(double value) { return Expr(make_const(value)); }

Expr Expr::variable() { return Expr(std::make_shared<Node>(Op::Var, 0.0)); }

double Expr::eval(double z) const { return eval_node(*root_, z); }

Expr Expr::derivative() const { return Expr(diff_node(root_)); }

std::string Expr::str() const {
    std::ostringstream out;
    out.precision(17);
    print_node(root_, out, 0);
    return out.str();
}

bool Expr::is_constant() const { return root_->op == Op::Const; }

double Expr::constant_value() const {
    if (!is_constant()) throw std::logic_error("expression is not constant");
    return root_->value;
}

Expr operator+(const Expr& a, const Expr& b) { return Expr(make_binary(Op::Add, a.root_, b.root_)); }
Expr operator-(const Expr& a, const Expr& b) { return Expr(make_binary(Op::Sub, a.root_, b.root_)); }
Expr operator*(const Expr& a, const Expr& b) { return Expr(make_binary(Op::Mul, a.root_, b.root_)); }
Expr operator/(const Expr& a, const Expr& b) { return Expr(make_binary(Op::Div, a.root_, b.root_)); }
Expr Expr::operator-() const { return Expr(make_unary(Op::Neg, root_)); }
Expr Expr::pow(const Expr& base, double exponent) {
    return Expr(make_binary(Op::Pow, base.root_, make_const(exponent)));
}
Expr Expr::apply(const std::string& fn, const Expr& arg) {
    Op op = fn == "exp" ? Op::Exp : fn == "sin" ? Op::Sin : fn == "cos" ? Op::Cos : Op::Sqrt;
    if (fn != "exp" && fn != "sin" && fn != "cos" && fn != "sqrt")
        throw std::logic_error("unknown function " + fn);
    return Expr(make_unary(op, arg.root_));
}

}  // namespace backstep
