#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

// Flat key=value run configuration: one file drives a whole pipeline run, so
// experiments are reproducible from a single artifact. '#' starts a comment;
// blank lines are ignored; keys outside the documented set are rejected.

namespace incise {

class Config {
  public:
    static const std::set<std::string>& known_keys() {
        static const std::set<std::string> keys = {
            // paths
            "dem", "pga", "landcover", "geology", "points", "glacial_mask", "out",
            // terrain parameters
            "threshold_pixels", "theta", "window_nodes",
            // mesh
            "tri_area",
            // models and cross-validation
            "presets", "grid_size", "n_samples", "map_samples",
            // seeds
            "split_seed", "sample_seed", "sim_seed",
            // concavity sweep
            "thetas", "thresholds",
            // synthetic data generation
            "sim_size", "sim_cell", "sim_rate",
        };
        return keys;
    }

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string str(const std::string& key, const std::string& fallback) const {
        const auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }

    std::string require(const std::string& key) const {
        const auto it = kv_.find(key);
        if (it == kv_.end()) throw ConfigError("missing required config key '" + key + "'");
        return it->second;
    }

    double num(const std::string& key, double fallback) const {
        const auto it = kv_.find(key);
        return it == kv_.end() ? fallback : parse_num(key, it->second);
    }

    long integer(const std::string& key, long fallback) const {
        const auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        const double v = parse_num(key, it->second);
        const long n = static_cast<long>(v);
        if (static_cast<double>(n) != v)
            throw ConfigError("config value '" + key + "' must be an integer: " + it->second);
        return n;
    }

    std::uint64_t seed(const std::string& key, std::uint64_t fallback) const {
        const auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        return static_cast<std::uint64_t>(integer(key, 0));
    }

    std::vector<std::string> list(const std::string& key) const {
        std::vector<std::string> out;
        const auto it = kv_.find(key);
        if (it == kv_.end()) return out;
        std::stringstream ss(it->second);
        std::string item;
        while (std::getline(ss, item, ',')) {
            const std::string t = trim(item);
            if (!t.empty()) out.push_back(t);
        }
        return out;
    }

    std::vector<double> num_list(const std::string& key) const {
        std::vector<double> out;
        for (const std::string& s : list(key)) out.push_back(parse_num(key, s));
        return out;
    }

    // a required path that must already exist
    std::string file(const std::string& key) const {
        const std::string path = require(key);
        if (!std::filesystem::exists(path)) throw ConfigError(key + " file not found: " + path);
        return path;
    }

    // output directory, created on demand
    std::string out_dir() const {
        const std::string dir = str("out", ".");
        std::filesystem::create_directories(dir);
        return dir;
    }

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

  private:
    static double parse_num(const std::string& key, const std::string& value) {
        try {
            std::size_t used = 0;
            const double v = std::stod(value, &used);
            if (used != value.size())
                throw ConfigError("config value '" + key + "' is not a number: " + value);
            return v;
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("config value '" + key + "' is not a number: " + value);
        }
    }

    std::map<std::string, std::string> kv_;
};

inline Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path);
    Config cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string t = Config::trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: " + t);
        const std::string key = Config::trim(t.substr(0, eq));
        const std::string value = Config::trim(t.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + " has an empty key");
        if (!Config::known_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
        if (cfg.has(key)) throw ConfigError("duplicate config key '" + key + "'");
        cfg.set(key, value);
    }
    return cfg;
}

} // namespace incise
