#include "card/config.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "card/error.hpp"

namespace card {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

} // namespace

std::string format_double(double v) {
    // Shortest representation that round-trips exactly.
    char buf[40];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    return buf;
}

Config Config::parse(const std::string& text) {
    Config cfg;
    Section* current = nullptr;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": unterminated section header");
            const std::string name = trim(line.substr(1, line.size() - 2));
            if (name.empty())
                throw ConfigError("config line " + std::to_string(line_no) + ": empty section name");
            current = &cfg.find_or_add(name);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected key = value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        if (current == nullptr)
            throw ConfigError("config line " + std::to_string(line_no) + ": key '" + key +
                              "' appears before any [section]");
        for (const auto& kv : current->entries)
            if (kv.first == key)
                throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" +
                                  key + "' in [" + current->name + "]");
        current->entries.emplace_back(key, value);
    }
    return cfg;
}

Config Config::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

const Config::Section* Config::find(const std::string& name) const {
    for (const auto& s : sections_)
        if (s.name == name) return &s;
    return nullptr;
}

Config::Section& Config::find_or_add(const std::string& name) {
    for (auto& s : sections_)
        if (s.name == name) return s;
    sections_.push_back(Section{name, {}});
    return sections_.back();
}

bool Config::has(const std::string& section, const std::string& key) const {
    const Section* s = find(section);
    if (s == nullptr) return false;
    for (const auto& kv : s->entries)
        if (kv.first == key) return true;
    return false;
}

const std::string& Config::get(const std::string& section, const std::string& key) const {
    const Section* s = find(section);
    if (s != nullptr)
        for (const auto& kv : s->entries)
            if (kv.first == key) return kv.second;
    throw ConfigError("missing config key [" + section + "] " + key);
}

std::string Config::get_or(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
    return has(section, key) ? get(section, key) : fallback;
}

double Config::get_double(const std::string& section, const std::string& key,
                          double fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& v = get(section, key);
    errno = 0;
    char* end = nullptr;
    const double out = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0' || errno == ERANGE)
        throw ConfigError("config key [" + section + "] " + key + ": '" + v + "' is not a number");
    return out;
}

std::int64_t Config::get_int(const std::string& section, const std::string& key,
                             std::int64_t fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& v = get(section, key);
    errno = 0;
    char* end = nullptr;
    const long long out = std::strtoll(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0' || errno == ERANGE)
        throw ConfigError("config key [" + section + "] " + key + ": '" + v +
                          "' is not an integer");
    return out;
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = lower(get(section, key));
    if (v == "true" || v == "on" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "off" || v == "no" || v == "0") return false;
    throw ConfigError("config key [" + section + "] " + key + ": '" + v + "' is not a boolean");
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
    Section& s = find_or_add(section);
    for (auto& kv : s.entries)
        if (kv.first == key) {
            kv.second = value;
            return;
        }
    s.entries.emplace_back(key, value);
}

void Config::set_double(const std::string& section, const std::string& key, double value) {
    set(section, key, format_double(value));
}

void Config::set_int(const std::string& section, const std::string& key, std::int64_t value) {
    set(section, key, std::to_string(value));
}

void Config::set_bool(const std::string& section, const std::string& key, bool value) {
    set(section, key, value ? "true" : "false");
}

std::string Config::serialize() const {
    std::ostringstream out;
    bool first = true;
    for (const auto& s : sections_) {
        if (!first) out << "\n";
        first = false;
        out << "[" << s.name << "]\n";
        for (const auto& kv : s.entries) out << kv.first << " = " << kv.second << "\n";
    }
    return out.str();
}

std::uint64_t Config::hash() const {
    // FNV-1a over the canonical (sorted sections, sorted keys) rendering so the
    // hash ignores declaration order.
    std::map<std::string, std::map<std::string, std::string>> canon;
    for (const auto& s : sections_)
        for (const auto& kv : s.entries) canon[s.name][kv.first] = kv.second;
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const std::string& str) {
        for (unsigned char c : str) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        h ^= 0x1f;
        h *= 1099511628211ULL;
    };
    for (const auto& [name, entries] : canon) {
        mix(name);
        for (const auto& [k, v] : entries) {
            mix(k);
            mix(v);
        }
    }
    return h;
}

std::string Config::hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
    return buf;
}

std::vector<std::string> Config::section_names() const {
    std::vector<std::string> out;
    out.reserve(sections_.size());
    for (const auto& s : sections_) out.push_back(s.name);
    return out;
}

std::vector<std::string> Config::keys(const std::string& section) const {
    std::vector<std::string> out;
    const Section* s = find(section);
    if (s != nullptr)
        for (const auto& kv : s->entries) out.push_back(kv.first);
    return out;
}

bool operator==(const Config& a, const Config& b) {
    auto canon = [](const Config& c) {
        std::map<std::string, std::map<std::string, std::string>> m;
        for (const auto& s : c.sections_)
            for (const auto& kv : s.entries) m[s.name][kv.first] = kv.second;
        return m;
    };
    return canon(a) == canon(b);
}

// ----- ExperimentConfig -----

namespace {

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
    std::vector<int> out;
    std::string token;
    std::istringstream in(text);
    while (std::getline(in, token, ',')) {
        token = trim(token);
        if (token.empty()) continue;
        errno = 0;
        char* end = nullptr;
        const long v = std::strtol(token.c_str(), &end, 10);
        if (end == token.c_str() || *end != '\0' || errno == ERANGE)
            throw ConfigError(what + ": '" + token + "' is not an integer");
        out.push_back(static_cast<int>(v));
    }
    return out;
}

std::vector<std::size_t> parse_size_list(const std::string& text, const std::string& what) {
    std::vector<std::size_t> out;
    for (int v : parse_int_list(text, what)) {
        if (v <= 0) throw ConfigError(what + ": entries must be positive");
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

std::string join_size_list(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

} // namespace

ExperimentConfig ExperimentConfig::from_config(const Config& c) {
    ExperimentConfig e;
    e.name = c.get_or("experiment", "name", e.name);
    e.seed = static_cast<std::uint64_t>(c.get_int("experiment", "seed",
                                                  static_cast<std::int64_t>(e.seed)));
    e.output_dir = c.get_or("experiment", "output_dir", e.output_dir);
    e.run_dir = c.get_or("experiment", "run_dir", e.run_dir);

    const std::string src = lower(c.get_or("data", "source", "toy"));
    if (src == "toy") e.source = DataSource::toy;
    else if (src == "csv") e.source = DataSource::csv;
    else if (src == "blobs") e.source = DataSource::blobs;
    else if (src == "moons") e.source = DataSource::moons;
    else throw ConfigError("[data] source must be toy, csv, blobs, or moons; got '" + src + "'");
    e.task = lower(c.get_or("data", "task",
                            e.source == DataSource::toy || e.source == DataSource::csv
                                ? "regression"
                                : "classification"));
    if (e.task != "regression" && e.task != "classification")
        throw ConfigError("[data] task must be regression or classification; got '" + e.task + "'");
    e.toy = lower(c.get_or("data", "toy", e.toy));
    e.circle_literal = c.get_bool("data", "circle_literal", e.circle_literal);
    e.n = static_cast<std::size_t>(c.get_int("data", "n", static_cast<std::int64_t>(e.n)));
    e.n_test = static_cast<std::size_t>(
        c.get_int("data", "n_test", static_cast<std::int64_t>(e.n_test)));
    e.csv_path = c.get_or("data", "csv", e.csv_path);
    e.csv_header = c.get_bool("data", "header", e.csv_header);
    e.response_cols = static_cast<int>(c.get_int("data", "response_cols", e.response_cols));
    e.classes = static_cast<int>(c.get_int("data", "classes", e.classes));
    e.blob_radius = c.get_double("data", "blob_radius", e.blob_radius);
    e.blob_sigma = c.get_double("data", "blob_sigma", e.blob_sigma);
    e.moon_noise = c.get_double("data", "moon_noise", e.moon_noise);
    e.standardize = lower(c.get_or("data", "standardize", e.standardize));
    if (e.standardize != "auto" && e.standardize != "on" && e.standardize != "off" &&
        e.standardize != "response")
        throw ConfigError("[data] standardize must be auto, on, off, or response");

    e.split_ratio = c.get_double("split", "ratio", e.split_ratio);
    e.folds = static_cast<int>(c.get_int("split", "folds", e.folds));

    e.T = static_cast<int>(c.get_int("schedule", "T", e.T));
    e.beta1 = c.get_double("schedule", "beta1", e.beta1);
    e.betaT = c.get_double("schedule", "betaT", e.betaT);

    e.pretrain.epochs = static_cast<int>(c.get_int("pretrain", "epochs", e.pretrain.epochs));
    e.pretrain.patience = static_cast<int>(c.get_int("pretrain", "patience", e.pretrain.patience));
    e.pretrain.lr = c.get_double("pretrain", "lr", e.pretrain.lr);
    e.pretrain.batch_size = static_cast<std::size_t>(
        c.get_int("pretrain", "batch_size", static_cast<std::int64_t>(e.pretrain.batch_size)));
    e.pretrain.valid_fraction = c.get_double("pretrain", "valid_fraction",
                                             e.pretrain.valid_fraction);
    if (c.has("pretrain", "hidden"))
        e.pretrain.hidden = parse_size_list(c.get("pretrain", "hidden"), "[pretrain] hidden");
    e.pretrain.leaky_slope = c.get_double("pretrain", "leaky_slope", e.pretrain.leaky_slope);

    e.diffusion.epochs = static_cast<int>(c.get_int("diffusion", "epochs", e.diffusion.epochs));
    e.diffusion.batch_size = static_cast<std::size_t>(
        c.get_int("diffusion", "batch_size", static_cast<std::int64_t>(e.diffusion.batch_size)));
    e.diffusion.lr = c.get_double("diffusion", "lr", e.diffusion.lr);
    e.diffusion.ema_decay = c.get_double("diffusion", "ema_decay", e.diffusion.ema_decay);
    e.diffusion.antithetic = c.get_bool("diffusion", "antithetic", e.diffusion.antithetic);
    e.diffusion.amsgrad = c.get_bool("diffusion", "amsgrad", e.diffusion.amsgrad);
    const std::string sched = lower(c.get_or(
        "diffusion", "lr_schedule",
        e.diffusion.lr_schedule == LrSchedule::cosine ? "cosine" : "constant"));
    if (sched == "constant") e.diffusion.lr_schedule = LrSchedule::constant;
    else if (sched == "cosine") e.diffusion.lr_schedule = LrSchedule::cosine;
    else throw ConfigError("[diffusion] lr_schedule must be constant or cosine");
    e.diffusion.width = static_cast<std::size_t>(
        c.get_int("diffusion", "width", static_cast<std::int64_t>(e.diffusion.width)));
    e.diffusion.checkpoint_every = static_cast<int>(
        c.get_int("diffusion", "checkpoint_every", e.diffusion.checkpoint_every));
    e.use_ema = c.get_bool("diffusion", "use_ema", e.use_ema);

    e.draws = static_cast<std::size_t>(
        c.get_int("sampling", "draws", static_cast<std::int64_t>(e.draws)));
    e.chunk_size = static_cast<std::size_t>(
        c.get_int("sampling", "chunk_size", static_cast<std::int64_t>(e.chunk_size)));
    e.workers = static_cast<unsigned>(c.get_int("sampling", "workers", e.workers));
    e.tau = c.get_double("sampling", "tau", e.tau);

    e.alpha = c.get_double("metrics", "alpha", e.alpha);
    e.qice_bins = static_cast<int>(c.get_int("metrics", "qice_bins", e.qice_bins));
    e.picp_low = c.get_double("metrics", "picp_low", e.picp_low);
    e.picp_high = c.get_double("metrics", "picp_high", e.picp_high);

    e.plot = c.get_bool("plot", "enabled", e.plot);
    return e;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    return from_config(Config::parse_file(path));
}

Config ExperimentConfig::to_config() const {
    Config c;
    c.set("experiment", "name", name);
    c.set_int("experiment", "seed", static_cast<std::int64_t>(seed));
    c.set("experiment", "output_dir", output_dir);
    if (!run_dir.empty()) c.set("experiment", "run_dir", run_dir);

    switch (source) {
        case DataSource::toy: c.set("data", "source", "toy"); break;
        case DataSource::csv: c.set("data", "source", "csv"); break;
        case DataSource::blobs: c.set("data", "source", "blobs"); break;
        case DataSource::moons: c.set("data", "source", "moons"); break;
    }
    c.set("data", "task", task);
    if (source == DataSource::toy) {
        c.set("data", "toy", toy);
        c.set_bool("data", "circle_literal", circle_literal);
    }
    if (source != DataSource::csv) {
        c.set_int("data", "n", static_cast<std::int64_t>(n));
        c.set_int("data", "n_test", static_cast<std::int64_t>(n_test));
    } else {
        c.set("data", "csv", csv_path);
        c.set_bool("data", "header", csv_header);
        c.set_int("data", "response_cols", response_cols);
    }
    if (source == DataSource::blobs) {
        c.set_int("data", "classes", classes);
        c.set_double("data", "blob_radius", blob_radius);
        c.set_double("data", "blob_sigma", blob_sigma);
    }
    if (source == DataSource::moons) c.set_double("data", "moon_noise", moon_noise);
    c.set("data", "standardize", standardize);

    c.set_double("split", "ratio", split_ratio);
    c.set_int("split", "folds", folds);

    c.set_int("schedule", "T", T);
    c.set_double("schedule", "beta1", beta1);
    c.set_double("schedule", "betaT", betaT);

    c.set_int("pretrain", "epochs", pretrain.epochs);
    c.set_int("pretrain", "patience", pretrain.patience);
    c.set_double("pretrain", "lr", pretrain.lr);
    c.set_int("pretrain", "batch_size", static_cast<std::int64_t>(pretrain.batch_size));
    c.set_double("pretrain", "valid_fraction", pretrain.valid_fraction);
    c.set("pretrain", "hidden", join_size_list(pretrain.hidden));
    c.set_double("pretrain", "leaky_slope", pretrain.leaky_slope);

    c.set_int("diffusion", "epochs", diffusion.epochs);
    c.set_int("diffusion", "batch_size", static_cast<std::int64_t>(diffusion.batch_size));
    c.set_double("diffusion", "lr", diffusion.lr);
    c.set_double("diffusion", "ema_decay", diffusion.ema_decay);
    c.set_bool("diffusion", "antithetic", diffusion.antithetic);
    c.set_bool("diffusion", "amsgrad", diffusion.amsgrad);
    c.set("diffusion", "lr_schedule",
          diffusion.lr_schedule == LrSchedule::cosine ? "cosine" : "constant");
    c.set_int("diffusion", "width", static_cast<std::int64_t>(diffusion.width));
    c.set_int("diffusion", "checkpoint_every", diffusion.checkpoint_every);
    c.set_bool("diffusion", "use_ema", use_ema);

    c.set_int("sampling", "draws", static_cast<std::int64_t>(draws));
    c.set_int("sampling", "chunk_size", static_cast<std::int64_t>(chunk_size));
    c.set_int("sampling", "workers", workers);
    c.set_double("sampling", "tau", tau);

    c.set_double("metrics", "alpha", alpha);
    c.set_int("metrics", "qice_bins", qice_bins);
    c.set_double("metrics", "picp_low", picp_low);
    c.set_double("metrics", "picp_high", picp_high);

    c.set_bool("plot", "enabled", plot);
    return c;
}

std::string ExperimentConfig::config_hash() const {
    // The explicit run directory is artifact plumbing, not experiment identity.
    ExperimentConfig id = *this;
    id.run_dir.clear();
    return id.to_config().hash_hex();
}

void ExperimentConfig::validate() const {
    if (source == DataSource::toy) {
        if (task != "regression")
            throw ConfigError("toy tasks are regression tasks; set [data] task = regression");
        toy_task_from_name(toy); // throws on unknown names
        if (n < 2 || n_test < 1) throw ConfigError("[data] n must be >= 2 and n_test >= 1");
    }
    if (source == DataSource::csv) {
        if (csv_path.empty()) throw ConfigError("[data] csv path is required for source = csv");
        if (!std::filesystem::exists(csv_path))
            throw DataError("dataset file does not exist: " + csv_path);
    }
    if ((source == DataSource::blobs || source == DataSource::moons) &&
        task != "classification")
        throw ConfigError("blobs/moons are classification tasks; set [data] task = classification");
    if (source == DataSource::blobs && classes < 2)
        throw ConfigError("[data] classes must be >= 2");
    if (!(split_ratio > 0.0 && split_ratio < 1.0))
        throw ConfigError("[split] ratio must lie strictly inside (0,1)");
    if (folds < 1) throw ConfigError("[split] folds must be >= 1");
    if (T < 1) throw ConfigError("[schedule] T must be >= 1");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(betaT > 0.0 && betaT < 1.0))
        throw ConfigError("[schedule] beta1 and betaT must lie strictly inside (0,1)");
    if (pretrain.epochs < 1 || diffusion.epochs < 1)
        throw ConfigError("epoch counts must be >= 1");
    if (draws < 1) throw ConfigError("[sampling] draws must be >= 1");
    if (!(tau > 0.0)) throw ConfigError("[sampling] tau must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("[metrics] alpha must lie inside (0,1)");
    if (qice_bins < 2) throw ConfigError("[metrics] qice_bins must be >= 2");
    if (!(picp_low >= 0.0 && picp_low < picp_high && picp_high <= 100.0))
        throw ConfigError("[metrics] picp percentile bounds out of order");
}

} // namespace card
