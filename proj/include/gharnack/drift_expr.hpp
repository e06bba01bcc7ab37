#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "gharnack/box.hpp"
#include "gharnack/errors.hpp"

namespace gharnack {

namespace detail {

enum class OpCode : std::uint8_t {
    push_const,
    push_x,
    push_y,
    add,
    sub,
    mul,
    div,
    negate,
    pow_int,
    fn_sin,
    fn_cos,
    fn_tanh,
    fn_exp,
};

struct Instr {
    OpCode op;
    double value = 0.0;
    int iarg = 0;
};

// Recursive-descent parser for the drift grammar:
//   expr   := ['-'] term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := base ('^' integer)?
//   base   := number | 'x' | 'y' | func '(' expr ')' | '(' expr ')'
//   func   := sin | cos | tanh | exp
// The optional leading '-' is the one extension beyond the documented
// grammar; without it "-x - y" has no derivation.
class DriftParser {
public:
    explicit DriftParser(std::string_view src) : src_(src) {}

    std::vector<Instr> parse() {
        parse_expr();
        skip_ws();
        if (pos_ != src_.size()) {
            throw ParseError("unexpected trailing input", pos_);
        }
        if (prog_.empty()) throw ParseError("empty expression", 0);
        return std::move(prog_);
    }

private:
    void skip_ws() {
        while (pos_ < src_.size() &&
               (src_[pos_] == ' ' || src_[pos_] == '\t')) {
            ++pos_;
        }
    }

    char peek() {
        skip_ws();
        return pos_ < src_.size() ? src_[pos_] : '\0';
    }

    void parse_expr() {
        bool lead_neg = false;
        if (peek() == '-') {
            ++pos_;
            lead_neg = true;
        }
        parse_term();
        if (lead_neg) prog_.push_back({OpCode::negate});
        for (;;) {
            const char c = peek();
            if (c == '+' || c == '-') {
                ++pos_;
                parse_term();
                prog_.push_back({c == '+' ? OpCode::add : OpCode::sub});
            } else {
                break;
            }
        }
    }

    void parse_term() {
        parse_factor();
        for (;;) {
            const char c = peek();
            if (c == '*' || c == '/') {
                ++pos_;
                parse_factor();
                prog_.push_back({c == '*' ? OpCode::mul : OpCode::div});
            } else {
                break;
            }
        }
    }

    void parse_factor() {
        parse_base();
        if (peek() == '^') {
            ++pos_;
            skip_ws();
            const std::size_t start = pos_;
            if (pos_ < src_.size() && src_[pos_] == '-') ++pos_;
            int exponent = 0;
            const auto res = std::from_chars(src_.data() + pos_,
                                             src_.data() + src_.size(),
                                             exponent);
            if (res.ec != std::errc{} || res.ptr == src_.data() + pos_) {
                throw ParseError("expected integer exponent after '^'", start);
            }
            if (src_[start] == '-') exponent = -exponent;
            pos_ = static_cast<std::size_t>(res.ptr - src_.data());
            prog_.push_back({OpCode::pow_int, 0.0, exponent});
        }
    }

    void parse_base() {
        const char c = peek();
        if (c == '(') {
            ++pos_;
            parse_expr();
            expect(')');
            return;
        }
        if ((c >= '0' && c <= '9') || c == '.') {
            double v = 0.0;
            const auto res = std::from_chars(src_.data() + pos_,
                                             src_.data() + src_.size(), v);
            if (res.ec != std::errc{}) {
                throw ParseError("bad numeric literal", pos_);
            }
            pos_ = static_cast<std::size_t>(res.ptr - src_.data());
            prog_.push_back({OpCode::push_const, v});
            return;
        }
        if (c >= 'a' && c <= 'z') {
            const std::size_t start = pos_;
            while (pos_ < src_.size() && src_[pos_] >= 'a' &&
                   src_[pos_] <= 'z') {
                ++pos_;
            }
            const std::string_view name = src_.substr(start, pos_ - start);
            if (name == "x") {
                prog_.push_back({OpCode::push_x});
                return;
            }
            if (name == "y") {
                prog_.push_back({OpCode::push_y});
                return;
            }
            OpCode fn;
            if (name == "sin") {
                fn = OpCode::fn_sin;
            } else if (name == "cos") {
                fn = OpCode::fn_cos;
            } else if (name == "tanh") {
                fn = OpCode::fn_tanh;
            } else if (name == "exp") {
                fn = OpCode::fn_exp;
            } else {
                throw ParseError("unknown identifier '" + std::string(name) +
                                     "'",
                                 start);
            }
            expect('(');
            parse_expr();
            expect(')');
            prog_.push_back({fn});
            return;
        }
        throw ParseError("expected number, variable, function, or '('", pos_);
    }

    void expect(char c) {
        if (peek() != c) {
            throw ParseError(std::string("expected '") + c + "'", pos_);
        }
        ++pos_;
    }

    std::string_view src_;
    std::size_t pos_ = 0;
    std::vector<Instr> prog_;
};

inline std::size_t program_max_depth(const std::vector<Instr>& prog) {
    std::size_t depth = 0, max_depth = 0;
    for (const Instr& ins : prog) {
        switch (ins.op) {
            case OpCode::push_const:
            case OpCode::push_x:
            case OpCode::push_y:
                ++depth;
                if (depth > max_depth) max_depth = depth;
                break;
            case OpCode::add:
            case OpCode::sub:
            case OpCode::mul:
            case OpCode::div:
                --depth;
                break;
            default:
                break;
        }
    }
    return max_depth;
}

inline double ipow(double x, int e) {
    const bool inv = e < 0;
    unsigned n = inv ? static_cast<unsigned>(-static_cast<long>(e))
                     : static_cast<unsigned>(e);
    double acc = 1.0, base = x;
    while (n) {
        if (n & 1u) acc *= base;
        base *= base;
        n >>= 1;
    }
    return inv ? 1.0 / acc : acc;
}

}  // namespace detail

// A parsed drift coefficient with a numerically estimated Lipschitz bound
// over its declared box. Evaluation guards division; all other IEEE traps
// are caught by the simulators' finiteness checks.
class DriftFn {
public:
    DriftFn() : source_("0"), prog_{{detail::OpCode::push_const, 0.0}} {}

    double operator()(double x, double y) const {
        double stack[64];
        std::size_t top = 0;
        for (const detail::Instr& ins : prog_) {
            using detail::OpCode;
            switch (ins.op) {
                case OpCode::push_const:
                    stack[top++] = ins.value;
                    break;
                case OpCode::push_x:
                    stack[top++] = x;
                    break;
                case OpCode::push_y:
                    stack[top++] = y;
                    break;
                case OpCode::add:
                    --top;
                    stack[top - 1] += stack[top];
                    break;
                case OpCode::sub:
                    --top;
                    stack[top - 1] -= stack[top];
                    break;
                case OpCode::mul:
                    --top;
                    stack[top - 1] *= stack[top];
                    break;
                case OpCode::div:
                    --top;
                    if (stack[top] == 0.0) {
                        throw EvalError("division by zero in '" + source_ +
                                        "'");
                    }
                    stack[top - 1] /= stack[top];
                    break;
                case OpCode::negate:
                    stack[top - 1] = -stack[top - 1];
                    break;
                case OpCode::pow_int:
                    if (ins.iarg < 0 && stack[top - 1] == 0.0) {
                        throw EvalError("zero to a negative power in '" +
                                        source_ + "'");
                    }
                    stack[top - 1] = detail::ipow(stack[top - 1], ins.iarg);
                    break;
                case OpCode::fn_sin:
                    stack[top - 1] = std::sin(stack[top - 1]);
                    break;
                case OpCode::fn_cos:
                    stack[top - 1] = std::cos(stack[top - 1]);
                    break;
                case OpCode::fn_tanh:
                    stack[top - 1] = std::tanh(stack[top - 1]);
                    break;
                case OpCode::fn_exp:
                    stack[top - 1] = std::exp(stack[top - 1]);
                    break;
            }
        }
        return stack[0];
    }

    double lipschitz() const noexcept { return lipschitz_; }
    const std::string& source() const noexcept { return source_; }
    const Box& box() const noexcept { return box_; }

    bool is_zero() const noexcept {
        return prog_.size() == 1 &&
               prog_[0].op == detail::OpCode::push_const &&
               prog_[0].value == 0.0;
    }

    friend DriftFn parse_drift(const std::string& expr, const Box& box);

private:
    std::string source_;
    std::vector<detail::Instr> prog_;
    Box box_{};
    double lipschitz_ = 0.0;
};

// Parses a drift expression and certifies it on the box: every node of a
// 200x200 grid must evaluate finitely, and the Lipschitz estimate is the
// largest finite-difference gradient norm between neighbouring nodes.
inline DriftFn parse_drift(const std::string& expr, const Box& box) {
    DriftFn fn;
    fn.source_ = expr;
    fn.prog_ = detail::DriftParser(expr).parse();
    fn.box_ = box;
    if (detail::program_max_depth(fn.prog_) > 64) {
        throw ParseError("expression nests too deeply", 0);
    }

    constexpr std::size_t kGrid = 200;
    const double dx = (box.x_max - box.x_min) / static_cast<double>(kGrid - 1);
    const double dy = (box.y_max - box.y_min) / static_cast<double>(kGrid - 1);
    std::vector<double> values(kGrid * kGrid);
    for (std::size_t i = 0; i < kGrid; ++i) {
        const double x = box.x_min + dx * static_cast<double>(i);
        for (std::size_t j = 0; j < kGrid; ++j) {
            const double y = box.y_min + dy * static_cast<double>(j);
            const double v = fn(x, y);
            if (!std::isfinite(v)) {
                throw EvalError("'" + expr + "' is singular at (" +
                                std::to_string(x) + ", " + std::to_string(y) +
                                ")");
            }
            values[i * kGrid + j] = v;
        }
    }
    double max_grad_sq = 0.0;
    for (std::size_t i = 0; i + 1 < kGrid; ++i) {
        for (std::size_t j = 0; j + 1 < kGrid; ++j) {
            const double gx =
                (values[(i + 1) * kGrid + j] - values[i * kGrid + j]) / dx;
            const double gy =
                (values[i * kGrid + j + 1] - values[i * kGrid + j]) / dy;
            const double g = gx * gx + gy * gy;
            if (g > max_grad_sq) max_grad_sq = g;
        }
    }
    fn.lipschitz_ = std::sqrt(max_grad_sq);
    return fn;
}

}  // namespace gharnack
