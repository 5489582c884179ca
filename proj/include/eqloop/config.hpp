#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eqloop/benchkit.hpp"
#include "eqloop/errors.hpp"
#include "eqloop/looprun.hpp"
#include "eqloop/remote_proposer.hpp"
#include "eqloop/trajectory.hpp"

namespace eqloop {

/// Fully resolved settings for one CLI invocation.
struct RunConfig {
    LoopConfig loop;
    RemoteConfig remote;
    GradeConfig grade;
    double split = 0.7;
};

namespace detail {

using Setter = std::function<void(RunConfig&, const nlohmann::json&)>;

template <class T>
Setter bind_field(T RunConfig::*section_ptr, auto member) {
    return [section_ptr, member](RunConfig& c, const nlohmann::json& v) {
        auto& field = (c.*section_ptr).*member;
        using F = std::remove_reference_t<decltype(field)>;
        if constexpr (std::is_same_v<F, bool>) {
            if (!v.is_boolean())
                throw ConfigError("expected true or false");
            field = v.get<bool>();
        } else if constexpr (std::is_integral_v<F>) {
            if (!v.is_number_integer() || (std::is_unsigned_v<F> && v.get<long long>() < 0))
                throw ConfigError("expected a nonnegative integer");
            field = v.get<F>();
        } else if constexpr (std::is_floating_point_v<F>) {
            if (!v.is_number())
                throw ConfigError("expected a number");
            field = v.get<F>();
        } else {
            if (!v.is_string())
                throw ConfigError("expected a string");
            field = v.get<F>();
        }
    };
}

inline const std::map<std::string, Setter>& config_keys() {
    static const std::map<std::string, Setter> keys = [] {
        std::map<std::string, Setter> k;
        using R = RunConfig;
        k["loop.tau"] = bind_field(&R::loop, &LoopConfig::tau);
        k["loop.max_iterations"] = bind_field(&R::loop, &LoopConfig::max_iterations);
        k["loop.lambda_c"] = bind_field(&R::loop, &LoopConfig::lambda_c);
        k["loop.lambda_p"] = bind_field(&R::loop, &LoopConfig::lambda_p);
        k["loop.plateau_window"] = bind_field(&R::loop, &LoopConfig::plateau_window);
        k["loop.plateau_epsilon"] = bind_field(&R::loop, &LoopConfig::plateau_epsilon);
        k["loop.base_candidates"] = bind_field(&R::loop, &LoopConfig::base_candidates);
        k["loop.plateau_candidates"] = bind_field(&R::loop, &LoopConfig::plateau_candidates);
        k["loop.base_diversity"] = bind_field(&R::loop, &LoopConfig::base_diversity);
        k["loop.plateau_diversity"] = bind_field(&R::loop, &LoopConfig::plateau_diversity);
        k["loop.max_terms"] = bind_field(&R::loop, &LoopConfig::max_terms);
        k["loop.safeguard_margin"] = bind_field(&R::loop, &LoopConfig::safeguard_margin);
        k["loop.rejection_memory"] = bind_field(&R::loop, &LoopConfig::rejection_memory);
        k["loop.complexity_normalization"] = bind_field(&R::loop, &LoopConfig::complexity_normalization);
        k["loop.trust_r2"] = bind_field(&R::loop, &LoopConfig::trust_r2);
        k["loop.trust_nrmse"] = bind_field(&R::loop, &LoopConfig::trust_nrmse);
        k["regress.threshold"] = bind_field(&R::loop, &LoopConfig::threshold);
        k["regress.max_sweeps"] = bind_field(&R::loop, &LoopConfig::max_sweeps);
        auto sim = [](auto member) {
            return [member](RunConfig& c, const nlohmann::json& v) {
                auto& field = c.loop.sim.*member;
                using F = std::remove_reference_t<decltype(field)>;
                if constexpr (std::is_integral_v<F>) {
                    if (!v.is_number_integer())
                        throw ConfigError("expected an integer");
                } else if (!v.is_number()) {
                    throw ConfigError("expected a number");
                }
                field = v.get<F>();
            };
        };
        k["sim.rtol"] = sim(&SimConfig::rtol);
        k["sim.atol"] = sim(&SimConfig::atol);
        k["sim.blowup_bound"] = sim(&SimConfig::blowup_bound);
        k["sim.timeout_s"] = sim(&SimConfig::timeout_s);
        k["sim.max_steps"] = sim(&SimConfig::max_steps);
        auto dict = [](auto member) {
            return [member](RunConfig& c, const nlohmann::json& v) {
                auto& field = c.loop.dictionary.*member;
                using F = std::remove_reference_t<decltype(field)>;
                if constexpr (std::is_same_v<F, bool>) {
                    if (!v.is_boolean())
                        throw ConfigError("expected true or false");
                } else if (!v.is_number_integer()) {
                    throw ConfigError("expected an integer");
                }
                field = v.get<F>();
            };
        };
        k["dictionary.max_degree"] = dict(&DictionaryOptions::max_degree);
        k["dictionary.constant"] = dict(&DictionaryOptions::constant);
        k["dictionary.trig"] = dict(&DictionaryOptions::trig);
        k["dictionary.exponential"] = dict(&DictionaryOptions::exponential);
        k["dictionary.include_inputs"] = dict(&DictionaryOptions::include_inputs);
        k["proposer.endpoint"] = bind_field(&R::remote, &RemoteConfig::endpoint);
        k["proposer.model"] = bind_field(&R::remote, &RemoteConfig::model);
        k["proposer.api_key_env"] = bind_field(&R::remote, &RemoteConfig::api_key_env);
        k["proposer.max_tokens"] = bind_field(&R::remote, &RemoteConfig::max_tokens);
        k["proposer.timeout_s"] = bind_field(&R::remote, &RemoteConfig::timeout_s);
        k["proposer.retries"] = bind_field(&R::remote, &RemoteConfig::retries);
        k["proposer.backoff_ms"] = bind_field(&R::remote, &RemoteConfig::backoff_ms);
        k["grade.min_match_fraction"] = bind_field(&R::grade, &GradeConfig::min_match_fraction);
        k["grade.spurious_threshold"] = bind_field(&R::grade, &GradeConfig::spurious_threshold);
        k["data.split"] = [](RunConfig& c, const nlohmann::json& v) {
            if (!v.is_number())
                throw ConfigError("expected a number");
            c.split = v.get<double>();
        };
        return k;
    }();
    return keys;
}

inline void set_key(RunConfig& cfg, const std::string& key, const nlohmann::json& value) {
    const auto& keys = config_keys();
    auto it = keys.find(key);
    if (it == keys.end())
        throw ConfigError("unknown configuration key '" + key + "'");
    try {
        it->second(cfg, value);
    } catch (const ConfigError& e) {
        throw ConfigError("configuration key '" + key + "': " + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("configuration key '" + key + "': " + e.what());
    }
}

} // namespace detail

/// Applies a `{section: {key: value}}` document on top of `cfg`.
inline void apply_config(RunConfig& cfg, const nlohmann::json& doc) {
    if (doc.is_null())
        return;
    if (!doc.is_object())
        throw ConfigError("configuration must be an object of sections");
    for (const auto& [section, body] : doc.items()) {
        if (!body.is_object())
            throw ConfigError("configuration section '" + section + "' must be an object");
        for (const auto& [key, value] : body.items())
            detail::set_key(cfg, section + "." + key, value);
    }
}

/// Applies one `section.key=value` override. The value is read as JSON when
/// it parses, otherwise as a plain string.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
    std::string key = assignment.substr(0, eq);
    std::string text = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
        value = text;
    }
    detail::set_key(cfg, key, value);
}

inline nlohmann::json config_to_json(const RunConfig& c) {
    const auto& l = c.loop;
    return {
        {"loop",
         {{"tau", l.tau},
          {"max_iterations", l.max_iterations},
          {"lambda_c", l.lambda_c},
          {"lambda_p", l.lambda_p},
          {"plateau_window", l.plateau_window},
          {"plateau_epsilon", l.plateau_epsilon},
          {"base_candidates", l.base_candidates},
          {"plateau_candidates", l.plateau_candidates},
          {"base_diversity", l.base_diversity},
          {"plateau_diversity", l.plateau_diversity},
          {"max_terms", l.max_terms},
          {"safeguard_margin", l.safeguard_margin},
          {"rejection_memory", l.rejection_memory},
          {"complexity_normalization", l.complexity_normalization},
          {"trust_r2", l.trust_r2},
          {"trust_nrmse", l.trust_nrmse}}},
        {"regress", {{"threshold", l.threshold}, {"max_sweeps", l.max_sweeps}}},
        {"sim",
         {{"rtol", l.sim.rtol},
          {"atol", l.sim.atol},
          {"blowup_bound", l.sim.blowup_bound},
          {"timeout_s", l.sim.timeout_s},
          {"max_steps", l.sim.max_steps}}},
        {"dictionary",
         {{"max_degree", l.dictionary.max_degree},
          {"constant", l.dictionary.constant},
          {"trig", l.dictionary.trig},
          {"exponential", l.dictionary.exponential},
          {"include_inputs", l.dictionary.include_inputs}}},
        {"proposer",
         {{"endpoint", c.remote.endpoint},
          {"model", c.remote.model},
          {"api_key_env", c.remote.api_key_env},
          {"max_tokens", c.remote.max_tokens},
          {"timeout_s", c.remote.timeout_s},
          {"retries", c.remote.retries},
          {"backoff_ms", c.remote.backoff_ms}}},
        {"grade", {{"min_match_fraction", c.grade.min_match_fraction}, {"spurious_threshold", c.grade.spurious_threshold}}},
        {"data", {{"split", c.split}}},
    };
}

inline nlohmann::json load_config_file(const std::filesystem::path& path) {
    try {
        return nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
    }
}

/// Layers, lowest precedence first: built-in defaults, `embedded` (config
/// carried by a trajectory or system spec), the config file, then overrides.
inline RunConfig resolve_config(const nlohmann::json& embedded, const std::optional<std::filesystem::path>& file,
                                const std::vector<std::string>& overrides) {
    RunConfig cfg;
    apply_config(cfg, embedded);
    if (file)
        apply_config(cfg, load_config_file(*file));
    for (const auto& o : overrides)
        apply_override(cfg, o);
    cfg.loop.validate();
    if (!(cfg.split > 0.0 && cfg.split < 1.0))
        throw ConfigError("data.split must lie in (0, 1)");
    return cfg;
}

} // namespace eqloop
