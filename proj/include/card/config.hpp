#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "card/mean_estimator.hpp"
#include "card/regression.hpp"

namespace card {

// Sectioned key-value text: `[section]` headers, `key = value` lines, full-line
// comments starting with '#' or ';'. Insertion order is preserved for
// serialization; equality and hashing use the canonical (sorted) form.
class Config {
  public:
    static Config parse(const std::string& text);
    static Config parse_file(const std::string& path);

    bool has(const std::string& section, const std::string& key) const;
    const std::string& get(const std::string& section, const std::string& key) const;
    std::string get_or(const std::string& section, const std::string& key,
                       const std::string& fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& section, const std::string& key,
                         std::int64_t fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

    void set(const std::string& section, const std::string& key, const std::string& value);
    void set_double(const std::string& section, const std::string& key, double value);
    void set_int(const std::string& section, const std::string& key, std::int64_t value);
    void set_bool(const std::string& section, const std::string& key, bool value);

    std::string serialize() const;
    std::uint64_t hash() const;
    std::string hash_hex() const; // 16 lowercase hex digits

    std::vector<std::string> section_names() const;
    std::vector<std::string> keys(const std::string& section) const;

    friend bool operator==(const Config& a, const Config& b);

  private:
    struct Section {
        std::string name;
        std::vector<std::pair<std::string, std::string>> entries;
    };
    std::vector<Section> sections_;

    const Section* find(const std::string& name) const;
    Section& find_or_add(const std::string& name);
};

// Deterministic shortest-round-trip formatting for doubles written to configs,
// metric reports, and CSVs.
std::string format_double(double v);

enum class DataSource { toy, csv, blobs, moons };

// One file fully determines a run; every run writes its resolved form next to
// its outputs so results can be audited and re-derived.
struct ExperimentConfig {
    // [experiment]
    std::string name = "card";
    std::uint64_t seed = 7;
    std::string output_dir = "runs";
    std::string run_dir; // explicit run directory (enables resume); empty -> minted

    // [data]
    DataSource source = DataSource::toy;
    std::string task = "regression"; // regression | classification
    std::string toy = "linear";
    bool circle_literal = false;
    std::size_t n = 10240;
    std::size_t n_test = 1024;
    std::string csv_path;
    bool csv_header = false;
    int response_cols = 1; // last k columns are responses
    int classes = 2;
    double blob_radius = 4.0;
    double blob_sigma = 0.5;
    double moon_noise = 0.1;
    std::string standardize = "auto"; // auto | on | off | response

    // [split]
    double split_ratio = 0.9;
    int folds = 1;

    // [schedule]
    int T = 1000;
    double beta1 = 1e-4;
    double betaT = 0.02;

    // [pretrain] / [diffusion]
    MeanEstimatorConfig pretrain;
    DiffusionTrainConfig diffusion;
    bool use_ema = true;

    // [sampling]
    std::size_t draws = 1000;
    std::size_t chunk_size = 1024;
    unsigned workers = 0; // 0 -> hardware concurrency
    double tau = 1.0;

    // [metrics]
    double alpha = 0.05;
    int qice_bins = 10;
    double picp_low = 2.5;
    double picp_high = 97.5;

    // [plot]
    bool plot = true;

    bool is_classification() const { return task == "classification"; }

    static ExperimentConfig from_config(const Config& c);
    static ExperimentConfig load(const std::string& path);
    Config to_config() const;                 // resolved form (every key explicit)
    std::string config_hash() const;          // hash of the resolved form
    void validate() const;                    // referenced files must exist, ranges sane
};

} // namespace card
