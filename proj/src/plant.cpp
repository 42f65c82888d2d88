#include "backstep/plant.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "backstep/numerics.hpp"

namespace backstep {

Eigen::MatrixXd PlantSpec::A_at(double z) const {
    Eigen::MatrixXd out(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) out(i, j) = A[i][j].eval(z);
    return out;
}

void PlantSpec::validate() const {
    if (n < 1) throw ConfigError("plant dimension n must be >= 1");
    if (static_cast<int>(lambda.size()) != n) throw ConfigError("need one lambda.i per component");
    for (double z : linspace(0.0, 1.0, 201)) {
        double prev = std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i) {
            double v = lambda[i].eval(z);
            if (!(v > 0.0))
                throw ConfigError("lambda." + std::to_string(i + 1) + " is not positive at z=" + std::to_string(z));
            if (!(v < prev))
                throw ConfigError("diffusion coefficients not strictly descending at z=" + std::to_string(z));
            prev = v;
        }
    }
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Splits "A.2.1" into {"A","2","1"}.
std::vector<std::string> split_key(const std::string& key) {
    std::vector<std::string> parts;
    std::stringstream ss(key);
    std::string part;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    return parts;
}

int index_of(const std::string& tok, const std::string& key) {
    try {
        return std::stoi(tok);
    } catch (const std::exception&) {
        throw ConfigError("bad index '" + tok + "' in key '" + key + "'");
    }
}

}  // namespace

double PlantConfig::get(const std::string& key, double fallback) const {
    auto it = numeric.find(key);
    return it == numeric.end() ? fallback : it->second;
}

PlantConfig parse_config(const std::string& text) {
    PlantConfig cfg;
    cfg.raw = text;
    std::map<std::string, std::string> exprs;
    std::map<std::string, double> numbers;

    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        if (key.empty() || val.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": empty key or value");
        if (val.front() == '"') {
            if (val.size() < 2 || val.back() != '"')
                throw ConfigError("line " + std::to_string(lineno) + ": unterminated quote");
            exprs[key] = val.substr(1, val.size() - 2);
        } else {
            try {
                numbers[key] = std::stod(val);
            } catch (const std::exception&) {
                throw ConfigError("line " + std::to_string(lineno) + ": bad number '" + val + "'");
            }
        }
    }

    auto it = numbers.find("n");
    if (it == numbers.end()) throw ConfigError("missing key 'n'");
    int n = static_cast<int>(it->second);
    numbers.erase(it);

    PlantSpec& p = cfg.plant;
    p.n = n;
    p.lambda.resize(n);
    p.A.assign(n, std::vector<Expr>(n, Expr::constant(0.0)));
    p.ic.assign(n, Expr::constant(0.0));
    p.B0 = Eigen::MatrixXd::Zero(n, n);
    p.B1 = Eigen::MatrixXd::Zero(n, n);

    auto parse_expr = [](const std::string& key, const std::string& body) {
        try {
            return Expr::parse(body);
        } catch (const ExprParseError& e) {
            throw ConfigError("key '" + key + "': " + e.what());
        }
    };

    std::vector<bool> have_lambda(n, false);
    for (const auto& [key, body] : exprs) {
        auto parts = split_key(key);
        if (parts.size() == 2 && parts[0] == "lambda") {
            int i = index_of(parts[1], key);
            if (i < 1 || i > n) throw ConfigError("lambda index out of range in '" + key + "'");
            p.lambda[i - 1] = parse_expr(key, body);
            have_lambda[i - 1] = true;
        } else if (parts.size() == 3 && parts[0] == "A") {
            int i = index_of(parts[1], key), j = index_of(parts[2], key);
            if (i < 1 || i > n || j < 1 || j > n) throw ConfigError("A index out of range in '" + key + "'");
            p.A[i - 1][j - 1] = parse_expr(key, body);
        } else if (parts.size() == 2 && parts[0] == "ic") {
            int i = index_of(parts[1], key);
            if (i < 1 || i > n) throw ConfigError("ic index out of range in '" + key + "'");
            p.ic[i - 1] = parse_expr(key, body);
        } else {
            throw ConfigError("unknown expression key '" + key + "'");
        }
    }
    for (int i = 0; i < n; ++i)
        if (!have_lambda[i]) throw ConfigError("missing lambda." + std::to_string(i + 1));

    for (auto it2 = numbers.begin(); it2 != numbers.end();) {
        auto parts = split_key(it2->first);
        bool consumed = false;
        if (parts.size() == 3 && (parts[0] == "B0" || parts[0] == "B1")) {
            int i = index_of(parts[1], it2->first), j = index_of(parts[2], it2->first);
            if (i < 1 || i > n || j < 1 || j > n)
                throw ConfigError("matrix index out of range in '" + it2->first + "'");
            (parts[0] == "B0" ? p.B0 : p.B1)(i - 1, j - 1) = it2->second;
            consumed = true;
        } else if (parts.size() == 3 && parts[0] == "A") {
            int i = index_of(parts[1], it2->first), j = index_of(parts[2], it2->first);
            if (i < 1 || i > n || j < 1 || j > n)
                throw ConfigError("A index out of range in '" + it2->first + "'");
            p.A[i - 1][j - 1] = Expr::constant(it2->second);
            consumed = true;
        }
        it2 = consumed ? numbers.erase(it2) : std::next(it2);
    }
    cfg.numeric = std::move(numbers);

    p.validate();
    return cfg;
}

PlantConfig load_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

}  // namespace backstep
