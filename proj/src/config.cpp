#include "idea/config.hpp"

#include <charconv>
#include <sstream>

#include "idea/common.hpp"
#include "idea/csv.hpp"
#include "idea/jsonio.hpp"

namespace idea {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct KeyValue {
  std::string section, key, value;
};

template <typename T>
T parse_num(const KeyValue& kv, const std::string& origin) {
  T out{};
  const std::string& v = kv.value;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(origin + ": value '" + v + "' for key '" + kv.key + "' is not a valid number");
  return out;
}

}  // namespace

void RunConfig::validate() const {
  std::ostringstream bad;
  auto fail = [&](const std::string& msg) { throw ConfigError("config: " + msg); };

  if (gen.n_s < 1 || gen.n_e < 1) fail("latent dims must be positive");
  if (gen.env_count < 2) fail("env_count must be at least 2");
  if (gen.lag < 1) fail("lag must be at least 1");
  if (gen.window < 2) fail("window must be at least 2");
  if (gen.t_split <= gen.lag || gen.t_split >= gen.window)
    fail("t_split must lie strictly between lag and window");
  if (gen.stride < 1) fail("stride must be positive");
  if (gen.t_train < gen.window || gen.t_test < gen.window)
    fail("series length must be at least one window");
  if (gen.sigma_s < 0) fail("sigma_s must be non-negative");
  if (gen.slope <= 0 || gen.slope >= 1) fail("slope must be in (0, 1)");

  if (hmm.restarts < 1) fail("restarts must be at least 1");
  if (hmm.max_iters < 1) fail("max_iters must be at least 1");
  if (hmm.tol <= 0) fail("tol must be positive");

  if (train.alpha < 0 || train.beta < 0 || train.gamma < 0)
    fail("loss weights must be non-negative");
  if (train.lr <= 0) fail("lr must be positive");
  if (train.epochs < 0) fail("epochs must be non-negative");
  if (train.batch < 1) fail("batch must be at least 1");
  if (train.hidden < 1 || train.prior_hidden < 1) fail("hidden widths must be positive");
  if (train.prior_lag < 1 || train.prior_lag >= gen.t_split)
    fail("prior_lag must be in [1, t_split)");
  if (train.env_labels != "viterbi" && train.env_labels != "random")
    fail("env_labels must be 'viterbi' or 'random'");
  if (eval.correlation != "pearson" && eval.correlation != "spearman")
    fail("correlation must be 'pearson' or 'spearman'");
}

RunConfig parse_run_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section != "gen" && section != "hmm" && section != "train" && section != "eval" &&
          section != "paths")
        throw ConfigError(origin + ": unknown section [" + section + "]");
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    KeyValue kv{section, trim(t.substr(0, eq)), trim(t.substr(eq + 1))};
    if (kv.key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");

    auto unknown = [&]() {
      std::string where = kv.section.empty() ? "top level" : "[" + kv.section + "]";
      throw ConfigError(origin + ": unknown key '" + kv.key + "' in " + where);
    };

    if (kv.section.empty()) {
      if (kv.key == "seed") cfg.seed = parse_num<std::uint64_t>(kv, origin);
      else unknown();
    } else if (kv.section == "gen") {
      if (kv.key == "n_s") cfg.gen.n_s = parse_num<int>(kv, origin);
      else if (kv.key == "n_e") cfg.gen.n_e = parse_num<int>(kv, origin);
      else if (kv.key == "env_count") cfg.gen.env_count = parse_num<int>(kv, origin);
      else if (kv.key == "lag") cfg.gen.lag = parse_num<int>(kv, origin);
      else if (kv.key == "t_train") cfg.gen.t_train = parse_num<long>(kv, origin);
      else if (kv.key == "t_test") cfg.gen.t_test = parse_num<long>(kv, origin);
      else if (kv.key == "window") cfg.gen.window = parse_num<int>(kv, origin);
      else if (kv.key == "t_split") cfg.gen.t_split = parse_num<int>(kv, origin);
      else if (kv.key == "stride") cfg.gen.stride = parse_num<int>(kv, origin);
      else if (kv.key == "sigma_s") cfg.gen.sigma_s = parse_num<double>(kv, origin);
      else if (kv.key == "slope") cfg.gen.slope = parse_num<double>(kv, origin);
      else unknown();
    } else if (kv.section == "hmm") {
      if (kv.key == "restarts") cfg.hmm.restarts = parse_num<int>(kv, origin);
      else if (kv.key == "max_iters") cfg.hmm.max_iters = parse_num<int>(kv, origin);
      else if (kv.key == "tol") cfg.hmm.tol = parse_num<double>(kv, origin);
      else unknown();
    } else if (kv.section == "train") {
      if (kv.key == "alpha") cfg.train.alpha = parse_num<double>(kv, origin);
      else if (kv.key == "beta") cfg.train.beta = parse_num<double>(kv, origin);
      else if (kv.key == "gamma") cfg.train.gamma = parse_num<double>(kv, origin);
      else if (kv.key == "lr") cfg.train.lr = parse_num<double>(kv, origin);
      else if (kv.key == "epochs") cfg.train.epochs = parse_num<int>(kv, origin);
      else if (kv.key == "batch") cfg.train.batch = parse_num<int>(kv, origin);
      else if (kv.key == "hidden") cfg.train.hidden = parse_num<int>(kv, origin);
      else if (kv.key == "prior_hidden") cfg.train.prior_hidden = parse_num<int>(kv, origin);
      else if (kv.key == "prior_lag") cfg.train.prior_lag = parse_num<int>(kv, origin);
      else if (kv.key == "env_labels") cfg.train.env_labels = kv.value;
      else unknown();
    } else if (kv.section == "eval") {
      if (kv.key == "correlation") cfg.eval.correlation = kv.value;
      else unknown();
    } else if (kv.section == "paths") {
      if (kv.key == "data_dir") cfg.paths.data_dir = kv.value;
      else if (kv.key == "run_dir") cfg.paths.run_dir = kv.value;
      else unknown();
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config_text(text, path);
}

std::string format_run_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "seed = " << cfg.seed << "\n\n";
  out << "[gen]\n";
  out << "n_s = " << cfg.gen.n_s << "\n";
  out << "n_e = " << cfg.gen.n_e << "\n";
  out << "env_count = " << cfg.gen.env_count << "\n";
  out << "lag = " << cfg.gen.lag << "\n";
  out << "t_train = " << cfg.gen.t_train << "\n";
  out << "t_test = " << cfg.gen.t_test << "\n";
  out << "window = " << cfg.gen.window << "\n";
  out << "t_split = " << cfg.gen.t_split << "\n";
  out << "stride = " << cfg.gen.stride << "\n";
  out << "sigma_s = " << fmt17(cfg.gen.sigma_s) << "\n";
  out << "slope = " << fmt17(cfg.gen.slope) << "\n\n";
  out << "[hmm]\n";
  out << "restarts = " << cfg.hmm.restarts << "\n";
  out << "max_iters = " << cfg.hmm.max_iters << "\n";
  out << "tol = " << fmt17(cfg.hmm.tol) << "\n\n";
  out << "[train]\n";
  out << "alpha = " << fmt17(cfg.train.alpha) << "\n";
  out << "beta = " << fmt17(cfg.train.beta) << "\n";
  out << "gamma = " << fmt17(cfg.train.gamma) << "\n";
  out << "lr = " << fmt17(cfg.train.lr) << "\n";
  out << "epochs = " << cfg.train.epochs << "\n";
  out << "batch = " << cfg.train.batch << "\n";
  out << "hidden = " << cfg.train.hidden << "\n";
  out << "prior_hidden = " << cfg.train.prior_hidden << "\n";
  out << "prior_lag = " << cfg.train.prior_lag << "\n";
  out << "env_labels = " << cfg.train.env_labels << "\n\n";
  out << "[eval]\n";
  out << "correlation = " << cfg.eval.correlation << "\n\n";
  out << "[paths]\n";
  out << "data_dir = " << cfg.paths.data_dir << "\n";
  out << "run_dir = " << cfg.paths.run_dir << "\n";
  return out.str();
}

}  // namespace idea
