#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "mrigen/core.hpp"
#include "mrigen/optim.hpp"
#include "mrigen/schedule.hpp"

namespace mrigen {

/// Key-value run configuration shared by the CLI commands. File format is
/// one `key = value` per line; '#' starts a comment.
struct RunConfig {
  double learning_rate = 1e-4;
  long max_steps = 1000;
  int batch_size = 1;
  int grad_accum_steps = 1;
  std::string lr_schedule = "constant";
  std::uint64_t seed = 0;
  double cond_dropout_prob = 0.1;
  double lambda_prior = 1.0;
  double guidance_scale = 1.0;
  int schedule_T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::string precision = "single";

  std::set<std::string> provided;  // keys seen in the loaded file

  static RunConfig load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open config '" + path.string() + "'");
    RunConfig c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::string key, eq, value;
      std::istringstream ls(line);
      if (!(ls >> key)) continue;
      if (!(ls >> eq >> value) || eq != "=") {
        throw DataError("config '" + path.string() + "' line " + std::to_string(lineno) +
                        ": expected 'key = value'");
      }
      c.set(key, value, path.string() + " line " + std::to_string(lineno));
    }
    return c;
  }

  void set(const std::string& key, const std::string& value, const std::string& where) {
    try {
      if (key == "learning_rate") learning_rate = std::stod(value);
      else if (key == "max_steps") max_steps = std::stol(value);
      else if (key == "batch_size") batch_size = std::stoi(value);
      else if (key == "grad_accum_steps") grad_accum_steps = std::stoi(value);
      else if (key == "lr_schedule") lr_schedule = value;
      else if (key == "seed") seed = std::stoull(value);
      else if (key == "cond_dropout_prob") cond_dropout_prob = std::stod(value);
      else if (key == "lambda_prior") lambda_prior = std::stod(value);
      else if (key == "guidance_scale") guidance_scale = std::stod(value);
      else if (key == "schedule_T") schedule_T = std::stoi(value);
      else if (key == "beta_start") beta_start = std::stod(value);
      else if (key == "beta_end") beta_end = std::stod(value);
      else if (key == "precision") precision = value;
      else throw DataError("unknown config key '" + key + "' (" + where + ")");
    } catch (const std::invalid_argument&) {
      throw DataError("bad value for config key '" + key + "' (" + where + ")");
    } catch (const std::out_of_range&) {
      throw DataError("out-of-range value for config key '" + key + "' (" + where + ")");
    }
    provided.insert(key);
  }

  std::map<std::string, std::string> as_map() const {
    char buf[64];
    auto fmt = [&buf](double v) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      return std::string(buf);
    };
    return {
        {"learning_rate", fmt(learning_rate)},
        {"max_steps", std::to_string(max_steps)},
        {"batch_size", std::to_string(batch_size)},
        {"grad_accum_steps", std::to_string(grad_accum_steps)},
        {"lr_schedule", lr_schedule},
        {"seed", std::to_string(seed)},
        {"cond_dropout_prob", fmt(cond_dropout_prob)},
        {"lambda_prior", fmt(lambda_prior)},
        {"guidance_scale", fmt(guidance_scale)},
        {"schedule_T", std::to_string(schedule_T)},
        {"beta_start", fmt(beta_start)},
        {"beta_end", fmt(beta_end)},
        {"precision", precision},
    };
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open config '" + path.string() + "' for writing");
    for (const auto& [k, v] : as_map()) os << k << " = " << v << '\n';
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.learning_rate = learning_rate;
    t.max_steps = max_steps;
    t.batch_size = batch_size;
    t.grad_accum_steps = grad_accum_steps;
    t.lr_schedule = lr_schedule_from_string(lr_schedule);
    t.seed = seed;
    t.cond_dropout_prob = cond_dropout_prob;
    t.precision = precision_from_string(precision);
    return t;
  }

  NoiseSchedule schedule() const { return make_schedule(schedule_T, beta_start, beta_end); }
};

}  // namespace mrigen
