#pragma once

// Shared helpers for the test binaries: throwaway directories, random tensor
// construction, and tolerance shorthands.

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "card/rng.hpp"
#include "card/tensor.hpp"

namespace testutil {

// Self-deleting directory under the system temp path.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path();
        for (int i = 0; i < 10000; ++i) {
            auto candidate = base / (tag + "-" + std::to_string(counter_++));
            std::error_code ec;
            if (std::filesystem::create_directory(candidate, ec)) {
                path_ = candidate;
                return;
            }
        }
        throw std::runtime_error("TempDir: could not create a scratch directory");
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    static inline int counter_ = 0;
    std::filesystem::path path_;
};

inline card::Tensor random_tensor(std::vector<std::size_t> shape, card::Rng& rng,
                                  double lo = -1.0, double hi = 1.0) {
    card::Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

inline double max_abs_diff(const card::Tensor& a, const card::Tensor& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (f == nullptr) throw std::runtime_error("write_text_file: cannot open " + path);
    std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
}

} // namespace testutil
