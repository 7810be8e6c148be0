#include "fedsplit/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "fedsplit/errors.hpp"

namespace fedsplit {

namespace pt = boost::property_tree;

std::size_t ExperimentConfig::resolved_poc_d() const {
  if (poc_d > 0) {
    return static_cast<std::size_t>(poc_d);
  }
  return static_cast<std::size_t>(std::min(2 * clients_per_round, data.n_clients));
}

std::size_t ExperimentConfig::resolved_poc_m() const {
  return static_cast<std::size_t>(poc_m > 0 ? poc_m : clients_per_round);
}

SplitOptions ExperimentConfig::split_options() const {
  return {quartile_range,
          count_weighted_clusters ? ClusterWeighting::count : ClusterWeighting::size};
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::random: return "random";
    case Strategy::poc: return "poc";
    case Strategy::oort: return "oort";
    case Strategy::terraform: return "terraform";
  }
  return "?";
}

std::string_view to_string(UpdateSignal s) {
  switch (s) {
    case UpdateSignal::gradient: return "gradient";
    case UpdateSignal::loss: return "loss";
    case UpdateSignal::bias: return "bias";
    case UpdateSignal::weight: return "weight";
  }
  return "?";
}

std::string_view to_string(QuartileRange r) {
  switch (r) {
    case QuartileRange::q1_q3: return "q1_q3";
    case QuartileRange::full: return "full";
    case QuartileRange::zero_q3: return "zero_q3";
    case QuartileRange::q1_end: return "q1_end";
  }
  return "?";
}

std::string_view to_string(FlAlgorithm a) {
  return a == FlAlgorithm::fedprox ? "fedprox" : "fedavg";
}

std::string_view to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd"; }

std::vector<std::string> validate(const ExperimentConfig& cfg) {
  std::vector<std::string> v;
  auto require = [&](bool ok, const std::string& msg) {
    if (!ok) {
      v.push_back(msg);
    }
  };
  require(cfg.rounds >= 0, "experiment.rounds: must be >= 0");
  require(cfg.max_iterations >= 1, "experiment.max_iterations: must be >= 1");
  require(cfg.eta >= 1, "experiment.eta: must be >= 1");
  require(cfg.clients_per_round >= 1 && cfg.clients_per_round <= cfg.data.n_clients,
          "experiment.clients_per_round: must lie in [1, data.n_clients]");
  require(!cfg.seeds.empty(), "experiment.seeds: at least one seed is required");
  require(cfg.workers >= 1, "experiment.workers: must be >= 1");
  require(cfg.checkpoint_every >= 0, "experiment.checkpoint_every: must be >= 0");
  require(!cfg.output_dir.empty(), "experiment.output_dir: must not be empty");

  require(std::isfinite(cfg.mu) && cfg.mu >= 0.0, "federation.mu: must be >= 0");
  require(cfg.poc_d >= 0, "federation.poc_d: must be >= 0");
  require(cfg.poc_m >= 0, "federation.poc_m: must be >= 0");
  if (cfg.strategy == Strategy::poc) {
    const auto d = cfg.resolved_poc_d();
    const auto m = cfg.resolved_poc_m();
    require(m >= 1 && m <= d && d <= static_cast<std::size_t>(cfg.data.n_clients),
            "federation.poc_d/poc_m: need 1 <= m <= d <= data.n_clients");
  }
  require(cfg.oort_epsilon >= 0.0 && cfg.oort_epsilon < 1.0,
          "federation.oort_epsilon: must lie in [0, 1)");

  const auto& t = cfg.train;
  require(t.epochs >= 1, "train.epochs: must be >= 1");
  require(t.batch_size >= 1, "train.batch_size: must be >= 1");
  require(std::isfinite(t.learning_rate) && t.learning_rate > 0.0,
          "train.learning_rate: must be > 0");
  require(t.lr_decay > 0.0 && t.lr_decay <= 1.0, "train.lr_decay: must lie in (0, 1]");
  require(t.decay_every >= 1, "train.decay_every: must be >= 1");
  require(cfg.hidden_units >= 0, "train.hidden_units: must be >= 0");

  const auto& d = cfg.data;
  require(d.n_clients >= 1, "data.n_clients: must be >= 1");
  require(!d.alpha_list.empty(), "data.alpha_list: must not be empty");
  require(std::all_of(d.alpha_list.begin(), d.alpha_list.end(),
                      [](double a) { return std::isfinite(a) && a > 0.0; }),
          "data.alpha_list: every alpha must be > 0");
  require(d.n_classes >= 2, "data.n_classes: must be >= 2");
  require(d.dim >= 2, "data.dim: must be >= 2");
  require(d.n_samples >= d.n_classes, "data.n_samples: must be >= data.n_classes");
  require(d.class_separation > 0.0, "data.class_separation: must be > 0");
  require(d.noise_std > 0.0, "data.noise_std: must be > 0");
  require(d.train_fraction > 0.0 && d.train_fraction < 1.0,
          "data.train_fraction: must lie in (0, 1)");
  return v;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) {
    return {};
  }
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) {
      out.push_back(item);
    }
  }
  return out;
}

// Reads typed values out of the tree, collecting (not throwing) problems.
class Reader {
 public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {}

  template <typename Fn>
  void field(const std::string& key, Fn&& assign) {
    known_.insert(key);
    const auto value = tree_.get_optional<std::string>(pt::ptree::path_type(key, '.'));
    if (!value) {
      return;
    }
    const std::string text = trim(*value);
    if (!assign(text)) {
      errors_.push_back(key + ": invalid value '" + text + "'");
    }
  }

  void integer(const std::string& key, int& out) {
    field(key, [&](const std::string& s) { return parse_number(s, out); });
  }
  void real(const std::string& key, double& out) {
    field(key, [&](const std::string& s) { return parse_real(s, out); });
  }
  void boolean(const std::string& key, bool& out) {
    field(key, [&](const std::string& s) {
      if (s == "true" || s == "1" || s == "yes") {
        out = true;
        return true;
      }
      if (s == "false" || s == "0" || s == "no") {
        out = false;
        return true;
      }
      return false;
    });
  }
  void text(const std::string& key, std::string& out) {
    field(key, [&](const std::string& s) {
      out = s;
      return true;
    });
  }
  template <typename Enum>
  void choice(const std::string& key, Enum& out, std::initializer_list<Enum> options) {
    field(key, [&](const std::string& s) {
      for (Enum e : options) {
        if (to_string(e) == s) {
          out = e;
          return true;
        }
      }
      return false;
    });
  }
  void reals(const std::string& key, std::vector<double>& out) {
    field(key, [&](const std::string& s) {
      std::vector<double> values;
      for (const auto& item : split_list(s)) {
        double x = 0.0;
        if (!parse_real(item, x)) {
          return false;
        }
        values.push_back(x);
      }
      out = std::move(values);
      return true;
    });
  }
  void seeds(const std::string& key, std::vector<std::uint64_t>& out) {
    field(key, [&](const std::string& s) {
      std::vector<std::uint64_t> values;
      for (const auto& item : split_list(s)) {
        std::uint64_t x = 0;
        if (!parse_number(item, x)) {
          return false;
        }
        values.push_back(x);
      }
      out = std::move(values);
      return true;
    });
  }

  void reject_unknown() {
    for (const auto& [section, body] : tree_) {
      if (body.empty()) {
        errors_.push_back(section + ": keys must live inside a [section]");
        continue;
      }
      for (const auto& [key, value] : body) {
        const std::string full = section + "." + key;
        if (!known_.contains(full)) {
          errors_.push_back(full + ": unknown key");
        }
      }
    }
  }

  std::vector<std::string>& errors() { return errors_; }

 private:
  template <typename T>
  static bool parse_number(const std::string& s, T& out) {
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
      return false;
    }
    out = v;
    return true;
  }
  static bool parse_real(const std::string& s, double& out) {
    if (s.empty()) {
      return false;
    }
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || !std::isfinite(v)) {
      return false;
    }
    out = v;
    return true;
  }

  const pt::ptree& tree_;
  std::set<std::string> known_;
  std::vector<std::string> errors_;
};

ExperimentConfig from_tree(const pt::ptree& tree) {
  ExperimentConfig cfg;
  Reader r(tree);
  r.integer("experiment.rounds", cfg.rounds);
  r.integer("experiment.max_iterations", cfg.max_iterations);
  r.integer("experiment.clients_per_round", cfg.clients_per_round);
  r.integer("experiment.eta", cfg.eta);
  r.choice("experiment.strategy", cfg.strategy,
           {Strategy::random, Strategy::poc, Strategy::oort, Strategy::terraform});
  r.choice("experiment.update_signal", cfg.update_signal,
           {UpdateSignal::gradient, UpdateSignal::loss, UpdateSignal::bias, UpdateSignal::weight});
  r.choice("experiment.quartile_range", cfg.quartile_range,
           {QuartileRange::q1_q3, QuartileRange::full, QuartileRange::zero_q3,
            QuartileRange::q1_end});
  r.boolean("experiment.count_weighted_clusters", cfg.count_weighted_clusters);
  r.boolean("experiment.eval_participants_only", cfg.eval_participants_only);
  r.seeds("experiment.seeds", cfg.seeds);
  r.integer("experiment.workers", cfg.workers);
  r.integer("experiment.checkpoint_every", cfg.checkpoint_every);
  r.text("experiment.output_dir", cfg.output_dir);

  r.choice("federation.fl_algorithm", cfg.fl_algorithm, {FlAlgorithm::fedavg, FlAlgorithm::fedprox});
  r.real("federation.mu", cfg.mu);
  r.integer("federation.poc_d", cfg.poc_d);
  r.integer("federation.poc_m", cfg.poc_m);
  r.real("federation.oort_epsilon", cfg.oort_epsilon);

  r.integer("train.epochs", cfg.train.epochs);
  r.integer("train.batch_size", cfg.train.batch_size);
  r.real("train.learning_rate", cfg.train.learning_rate);
  r.real("train.lr_decay", cfg.train.lr_decay);
  r.integer("train.decay_every", cfg.train.decay_every);
  r.choice("train.optimizer", cfg.train.optimizer, {Optimizer::sgd, Optimizer::adam});
  r.integer("train.hidden_units", cfg.hidden_units);

  r.integer("data.n_clients", cfg.data.n_clients);
  r.reals("data.alpha_list", cfg.data.alpha_list);
  r.integer("data.n_classes", cfg.data.n_classes);
  r.integer("data.dim", cfg.data.dim);
  r.integer("data.n_samples", cfg.data.n_samples);
  r.real("data.class_separation", cfg.data.class_separation);
  r.real("data.noise_std", cfg.data.noise_std);
  r.real("data.train_fraction", cfg.data.train_fraction);

  r.reject_unknown();
  auto errors = std::move(r.errors());
  if (errors.empty()) {
    errors = validate(cfg);
  }
  if (!errors.empty()) {
    throw ValidationError(std::move(errors));
  }
  return cfg;
}

// "key = value ; note": a ';' or '#' preceded by whitespace ends the value.
void strip_inline_comments(pt::ptree& tree) {
  for (auto& [section, keys] : tree) {
    for (auto& [key, node] : keys) {
      auto value = node.get_value<std::string>();
      for (std::size_t i = 1; i < value.size(); ++i) {
        if ((value[i] == ';' || value[i] == '#') && (value[i - 1] == ' ' || value[i - 1] == '\t')) {
          value.erase(i);
          break;
        }
      }
      node.put_value(value);
    }
  }
}

}  // namespace

ExperimentConfig parse_config(std::string_view text,
                              const std::vector<std::pair<std::string, std::string>>& overrides) {
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(e.message(), e.line());
  }
  strip_inline_comments(tree);
  if (const char* env = std::getenv(kOutputDirEnv); env != nullptr && *env != '\0') {
    tree.put(pt::ptree::path_type("experiment.output_dir", '.'), std::string(env));
  }
  std::vector<std::string> errors;
  for (const auto& [key, value] : overrides) {
    const auto dot = key.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == key.size() ||
        key.find('.', dot + 1) != std::string::npos) {
      errors.push_back(key + ": override keys take the form section.key");
      continue;
    }
    tree.put(pt::ptree::path_type(key, '.'), value);
  }
  if (!errors.empty()) {
    throw ValidationError(std::move(errors));
  }
  return from_tree(tree);
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file " + path.string());
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), overrides);
}

std::string format_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  auto join_reals = [](const std::vector<double>& xs) {
    std::ostringstream s;
    s.precision(17);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      s << (i ? "," : "") << xs[i];
    }
    return s.str();
  };
  out << "[experiment]\n"
      << "rounds = " << cfg.rounds << '\n'
      << "max_iterations = " << cfg.max_iterations << '\n'
      << "clients_per_round = " << cfg.clients_per_round << '\n'
      << "eta = " << cfg.eta << '\n'
      << "strategy = " << to_string(cfg.strategy) << '\n'
      << "update_signal = " << to_string(cfg.update_signal) << '\n'
      << "quartile_range = " << to_string(cfg.quartile_range) << '\n'
      << "count_weighted_clusters = " << (cfg.count_weighted_clusters ? "true" : "false") << '\n'
      << "eval_participants_only = " << (cfg.eval_participants_only ? "true" : "false") << '\n'
      << "seeds = ";
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    out << (i ? "," : "") << cfg.seeds[i];
  }
  out << '\n'
      << "workers = " << cfg.workers << '\n'
      << "checkpoint_every = " << cfg.checkpoint_every << '\n'
      << "output_dir = " << cfg.output_dir << "\n\n"
      << "[federation]\n"
      << "fl_algorithm = " << to_string(cfg.fl_algorithm) << '\n'
      << "mu = " << cfg.mu << '\n'
      << "poc_d = " << cfg.poc_d << '\n'
      << "poc_m = " << cfg.poc_m << '\n'
      << "oort_epsilon = " << cfg.oort_epsilon << "\n\n"
      << "[train]\n"
      << "epochs = " << cfg.train.epochs << '\n'
      << "batch_size = " << cfg.train.batch_size << '\n'
      << "learning_rate = " << cfg.train.learning_rate << '\n'
      << "lr_decay = " << cfg.train.lr_decay << '\n'
      << "decay_every = " << cfg.train.decay_every << '\n'
      << "optimizer = " << to_string(cfg.train.optimizer) << '\n'
      << "hidden_units = " << cfg.hidden_units << "\n\n"
      << "[data]\n"
      << "n_clients = " << cfg.data.n_clients << '\n'
      << "alpha_list = " << join_reals(cfg.data.alpha_list) << '\n'
      << "n_classes = " << cfg.data.n_classes << '\n'
      << "dim = " << cfg.data.dim << '\n'
      << "n_samples = " << cfg.data.n_samples << '\n'
      << "class_separation = " << cfg.data.class_separation << '\n'
      << "noise_std = " << cfg.data.noise_std << '\n'
      << "train_fraction = " << cfg.data.train_fraction << '\n';
  return out.str();
}

}  // namespace fedsplit
