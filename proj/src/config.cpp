#include "hivec/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace hivec {

Method parse_method(const std::string& name) {
    if (name == "source") return Method::Source;
    if (name == "mrl-zeroshot") return Method::MrlZeroshot;
    if (name == "tent") return Method::Tent;
    if (name == "hivec-tent") return Method::HivecTent;
    if (name == "sar" || name == "stamp" || name == "deyo") {
        throw ConfigError("adapt.method: '" + name + "' is not implemented; see docs");
    }
    throw ConfigError("adapt.method: unknown method '" + name +
                      "' (expected source, mrl-zeroshot, tent, hivec-tent)");
}

std::string method_name(Method m) {
    switch (m) {
        case Method::Source: return "source";
        case Method::MrlZeroshot: return "mrl-zeroshot";
        case Method::Tent: return "tent";
        case Method::HivecTent: return "hivec-tent";
    }
    throw std::logic_error("unreachable method");
}

namespace {

struct Value {
    enum class Kind { Int, Float, Bool, Str, Array };
    Kind kind = Kind::Str;
    std::int64_t i = 0;
    double f = 0.0;
    bool b = false;
    std::string s;
    std::vector<Value> items;
};

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split_top_level(const std::string& body) {
    std::vector<std::string> parts;
    std::string cur;
    bool in_quote = false;
    for (char c : body) {
        if (c == '"') in_quote = !in_quote;
        if (c == ',' && !in_quote) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!trim(cur).empty() || !parts.empty()) parts.push_back(cur);
    return parts;
}

Value parse_value(const std::string& raw, const std::string& key) {
    const std::string text = trim(raw);
    if (text.empty()) throw ConfigError(key + ": empty value");

    Value v;
    if (text.front() == '[') {
        if (text.back() != ']') throw ConfigError(key + ": unterminated array");
        v.kind = Value::Kind::Array;
        const std::string body = text.substr(1, text.size() - 2);
        if (!trim(body).empty()) {
            for (const std::string& part : split_top_level(body)) {
                v.items.push_back(parse_value(part, key));
            }
        }
        return v;
    }
    if (text == "true" || text == "false") {
        v.kind = Value::Kind::Bool;
        v.b = (text == "true");
        return v;
    }
    if (text.front() == '"') {
        if (text.size() < 2 || text.back() != '"') {
            throw ConfigError(key + ": unterminated string");
        }
        v.kind = Value::Kind::Str;
        v.s = text.substr(1, text.size() - 2);
        return v;
    }
    // Integer?
    {
        std::size_t p = (text[0] == '+' || text[0] == '-') ? 1 : 0;
        if (p < text.size() &&
            std::all_of(text.begin() + static_cast<std::ptrdiff_t>(p), text.end(),
                        [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
            v.kind = Value::Kind::Int;
            v.i = std::strtoll(text.c_str(), nullptr, 10);
            return v;
        }
    }
    // Float (accepts inf / -inf)?
    {
        char* end = nullptr;
        const double f = std::strtod(text.c_str(), &end);
        if (end == text.c_str() + text.size() && !std::isnan(f)) {
            v.kind = Value::Kind::Float;
            v.f = f;
            return v;
        }
    }
    v.kind = Value::Kind::Str;
    v.s = text;
    return v;
}

std::int64_t as_int(const Value& v, const std::string& key) {
    if (v.kind != Value::Kind::Int) throw ConfigError(key + ": expected an integer");
    return v.i;
}

std::size_t as_size(const Value& v, const std::string& key) {
    const std::int64_t i = as_int(v, key);
    if (i < 0) throw ConfigError(key + ": must be non-negative");
    return static_cast<std::size_t>(i);
}

double as_double(const Value& v, const std::string& key) {
    if (v.kind == Value::Kind::Int) return static_cast<double>(v.i);
    if (v.kind != Value::Kind::Float) throw ConfigError(key + ": expected a number");
    return v.f;
}

bool as_bool(const Value& v, const std::string& key) {
    if (v.kind != Value::Kind::Bool) throw ConfigError(key + ": expected true or false");
    return v.b;
}

std::string as_string(const Value& v, const std::string& key) {
    if (v.kind != Value::Kind::Str) throw ConfigError(key + ": expected a string");
    return v.s;
}

ParamScope parse_scope(const std::string& s, const std::string& key) {
    if (s == "norm-affine") return ParamScope::NormAffineOnly;
    if (s == "full-encoder") return ParamScope::FullEncoder;
    throw ConfigError(key + ": expected norm-affine or full-encoder, got '" + s + "'");
}

NormMode parse_norm_mode(const std::string& s, const std::string& key) {
    if (s == "batch-stats") return NormMode::BatchStats;
    if (s == "running-stats") return NormMode::RunningStats;
    throw ConfigError(key + ": expected batch-stats or running-stats, got '" + s + "'");
}

OodScoreKind parse_ood_score(const std::string& s, const std::string& key) {
    if (s == "neg-entropy") return OodScoreKind::NegEntropy;
    if (s == "max-prob") return OodScoreKind::MaxProb;
    throw ConfigError(key + ": expected neg-entropy or max-prob, got '" + s + "'");
}

using Setter = std::function<void(ExperimentConfig&, const Value&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"source.classes", [](auto& c, const auto& v, const auto& k) { c.classes = as_size(v, k); }},
        {"source.dim", [](auto& c, const auto& v, const auto& k) { c.dim = as_size(v, k); }},
        {"source.samples", [](auto& c, const auto& v, const auto& k) { c.samples = as_size(v, k); }},
        {"source.cov_scale", [](auto& c, const auto& v, const auto& k) { c.cov_scale = as_double(v, k); }},
        {"source.separation", [](auto& c, const auto& v, const auto& k) { c.separation = as_double(v, k); }},
        {"source.fine_strength", [](auto& c, const auto& v, const auto& k) { c.fine_strength = as_double(v, k); }},

        {"encoder.hidden", [](auto& c, const auto& v, const auto& k) { c.hidden = as_size(v, k); }},
        {"encoder.feature_dim", [](auto& c, const auto& v, const auto& k) { c.feature_dim = as_size(v, k); }},

        {"heads.dims",
         [](auto& c, const auto& v, const auto& k) {
             if (v.kind != Value::Kind::Array) throw ConfigError(k + ": expected an array");
             c.head_dims.clear();
             for (const auto& item : v.items) c.head_dims.push_back(as_size(item, k));
         }},

        {"adapt.method", [](auto& c, const auto& v, const auto& k) { c.method = parse_method(as_string(v, k)); }},
        {"adapt.alpha", [](auto& c, const auto& v, const auto& k) { c.adapt.alpha = as_double(v, k); }},
        {"adapt.tau", [](auto& c, const auto& v, const auto& k) { c.adapt.tau = as_double(v, k); }},
        {"adapt.tau_ood", [](auto& c, const auto& v, const auto& k) { c.adapt.tau_ood = as_double(v, k); }},
        {"adapt.lr", [](auto& c, const auto& v, const auto& k) { c.adapt.lr = as_double(v, k); }},
        {"adapt.batch_size", [](auto& c, const auto& v, const auto& k) { c.adapt.batch_size = as_size(v, k); }},
        {"adapt.scope", [](auto& c, const auto& v, const auto& k) { c.adapt.scope = parse_scope(as_string(v, k), k); }},
        {"adapt.norm_mode", [](auto& c, const auto& v, const auto& k) { c.adapt.norm_mode = parse_norm_mode(as_string(v, k), k); }},
        {"adapt.enable_merge", [](auto& c, const auto& v, const auto& k) { c.adapt.enable_merge = as_bool(v, k); }},
        {"adapt.enable_gate", [](auto& c, const auto& v, const auto& k) { c.adapt.enable_gate = as_bool(v, k); }},
        {"adapt.ood_score", [](auto& c, const auto& v, const auto& k) { c.adapt.ood_score = parse_ood_score(as_string(v, k), k); }},
        {"adapt.ece_bins", [](auto& c, const auto& v, const auto& k) { c.ece_bins = as_size(v, k); }},

        {"shift.kind",
         [](auto& c, const auto& v, const auto& k) {
             try {
                 c.shift.kind = parse_shift_kind(as_string(v, k));
             } catch (const std::invalid_argument& e) {
                 throw ConfigError(k + ": " + e.what());
             }
         }},
        {"shift.severity", [](auto& c, const auto& v, const auto& k) { c.shift.severity = static_cast<int>(as_int(v, k)); }},
        {"shift.outlier_ratio", [](auto& c, const auto& v, const auto& k) { c.shift.outlier_ratio = as_double(v, k); }},
        {"shift.outlier_components", [](auto& c, const auto& v, const auto& k) { c.shift.outlier_components = as_size(v, k); }},
        {"shift.outlier_separation", [](auto& c, const auto& v, const auto& k) { c.shift.outlier_separation = as_double(v, k); }},
        {"shift.target_samples", [](auto& c, const auto& v, const auto& k) { c.target_samples = as_size(v, k); }},
        {"shift.spurious", [](auto& c, const auto& v, const auto& k) { c.spurious = as_bool(v, k); }},
        {"shift.source_correlation", [](auto& c, const auto& v, const auto& k) { c.source_correlation = as_double(v, k); }},
        {"shift.target_correlation", [](auto& c, const auto& v, const auto& k) { c.target_correlation = as_double(v, k); }},
        {"shift.spurious_block_dim",
         [](auto& c, const auto& v, const auto& k) {
             c.spurious_block_dim = as_size(v, k);
             c.shift.spurious_block_dim = c.spurious_block_dim;
         }},
        {"shift.spurious_block_strength", [](auto& c, const auto& v, const auto& k) { c.spurious_block_strength = as_double(v, k); }},
        {"shift.spurious_block_noise", [](auto& c, const auto& v, const auto& k) { c.spurious_block_noise = as_double(v, k); }},

        {"run.seeds",
         [](auto& c, const auto& v, const auto& k) {
             if (v.kind != Value::Kind::Array) throw ConfigError(k + ": expected an array");
             c.seeds.clear();
             for (const auto& item : v.items) {
                 c.seeds.push_back(static_cast<std::uint64_t>(as_size(item, k)));
             }
         }},
        {"run.out", [](auto& c, const auto& v, const auto& k) { c.out_dir = as_string(v, k); }},
        {"run.train_epochs", [](auto& c, const auto& v, const auto& k) { c.train.epochs = as_size(v, k); }},
        {"run.train_lr", [](auto& c, const auto& v, const auto& k) { c.train.lr = as_double(v, k); }},
        {"run.train_batch_size", [](auto& c, const auto& v, const auto& k) { c.train.batch_size = as_size(v, k); }},
        {"run.methods",
         [](auto& c, const auto& v, const auto& k) {
             if (v.kind != Value::Kind::Array) throw ConfigError(k + ": expected an array");
             c.sweep_methods.clear();
             for (const auto& item : v.items) {
                 c.sweep_methods.push_back(parse_method(as_string(item, k)));
             }
         }},
        {"run.telemetry", [](auto& c, const auto& v, const auto& k) { c.telemetry = as_bool(v, k); }},
    };
    return table;
}

void set_key(ExperimentConfig& cfg, const std::string& key, const Value& value) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(cfg, value, key);
}

std::string strip_comment(const std::string& line) {
    bool in_quote = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_quote = !in_quote;
        if (line[i] == '#' && !in_quote) return line.substr(0, i);
    }
    return line;
}

}  // namespace

std::vector<std::size_t> ExperimentConfig::resolved_head_dims() const {
    return head_dims.empty() ? default_head_dims(feature_dim) : head_dims;
}

SourceSpec ExperimentConfig::source_spec(std::uint64_t seed) const {
    SourceSpec spec;
    spec.class_count = classes;
    spec.input_dim = dim;
    spec.sample_count = samples;
    spec.cov_scale = cov_scale;
    spec.mean_separation = separation;
    spec.fine_strength = fine_strength;
    spec.seed = seed;
    return spec;
}

void ExperimentConfig::validate() const {
    if (classes < 2) throw ConfigError("source.classes: must be >= 2");
    if (dim < 1) throw ConfigError("source.dim: must be >= 1");
    if (samples < classes * 10) throw ConfigError("source.samples: must be >= 10 per class");
    if (cov_scale < 0.0) throw ConfigError("source.cov_scale: must be >= 0");
    if (separation < 4.0) throw ConfigError("source.separation: must be >= 4");
    if (hidden < 1) throw ConfigError("encoder.hidden: must be >= 1");
    if (feature_dim < 1) throw ConfigError("encoder.feature_dim: must be >= 1");

    const std::vector<std::size_t> dims = resolved_head_dims();
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        if (dims[i] >= dims[i + 1]) throw ConfigError("heads.dims: must be strictly increasing");
    }
    if (dims.back() != feature_dim) {
        throw ConfigError("heads.dims: last entry must equal encoder.feature_dim (" +
                          std::to_string(feature_dim) + ")");
    }

    if (adapt.alpha < 0.0) throw ConfigError("adapt.alpha: must be >= 0");
    if (std::isnan(adapt.tau)) throw ConfigError("adapt.tau: must be a number");
    if (adapt.tau_ood < 0.0 || std::isnan(adapt.tau_ood)) {
        throw ConfigError("adapt.tau_ood: must be >= 0");
    }
    if (adapt.lr < 0.0 || !std::isfinite(adapt.lr)) {
        throw ConfigError("adapt.lr: must be a finite non-negative value");
    }
    if (adapt.batch_size < 2) throw ConfigError("adapt.batch_size: must be >= 2");
    if (ece_bins < 1) throw ConfigError("adapt.ece_bins: must be >= 1");

    if (shift.severity < 0 || shift.severity > 5) {
        throw ConfigError("shift.severity: must be in 0..5, got " +
                          std::to_string(shift.severity));
    }
    if (shift.outlier_ratio < 0.0 || shift.outlier_ratio >= 1.0) {
        throw ConfigError("shift.outlier_ratio: must be in [0, 1)");
    }
    if (shift.outlier_components < 1) throw ConfigError("shift.outlier_components: must be >= 1");
    if (shift.outlier_separation < 8.0) {
        throw ConfigError("shift.outlier_separation: must be >= 8 (far-OOD by construction)");
    }
    if (target_samples < classes * 10) {
        throw ConfigError("shift.target_samples: must be >= 10 per class");
    }
    if (spurious) {
        if (classes != 2) throw ConfigError("shift.spurious: requires source.classes = 2");
        if (std::abs(source_correlation) > 1.0) {
            throw ConfigError("shift.source_correlation: must be in [-1, 1]");
        }
        if (std::abs(target_correlation) > 1.0) {
            throw ConfigError("shift.target_correlation: must be in [-1, 1]");
        }
        if (spurious_block_dim < 1) throw ConfigError("shift.spurious_block_dim: must be >= 1");
    }

    if (seeds.empty()) throw ConfigError("run.seeds: must not be empty");
    if (train.epochs < 1) throw ConfigError("run.train_epochs: must be >= 1");
    if (!(train.lr > 0.0)) throw ConfigError("run.train_lr: must be > 0");
    if (train.batch_size < 2) throw ConfigError("run.train_batch_size: must be >= 2");
    if (sweep_methods.empty()) throw ConfigError("run.methods: must not be empty");
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string cleaned = trim(strip_comment(line));
        if (cleaned.empty()) continue;
        if (cleaned.front() == '[') {
            if (cleaned.back() != ']') {
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section");
            }
            section = trim(cleaned.substr(1, cleaned.size() - 2));
            if (section.empty()) {
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty section name");
            }
            continue;
        }
        const std::size_t eq = cleaned.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(cleaned.substr(0, eq));
        if (key.empty()) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        }
        if (section.empty()) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": key '" + key +
                              "' outside any [section]");
        }
        const std::string full_key = section + "." + key;
        set_key(cfg, full_key, parse_value(cleaned.substr(eq + 1), full_key));
    }
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_text(text, path);
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
    }
    const std::string key = trim(assignment.substr(0, eq));
    if (key.find('.') == std::string::npos) {
        throw ConfigError("override key '" + key + "' must be section.key");
    }
    set_key(cfg, key, parse_value(assignment.substr(eq + 1), key));
}

}  // namespace hivec
