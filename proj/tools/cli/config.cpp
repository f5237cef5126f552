#include "cli/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "lcp/error.hpp"

namespace lcp::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw UsageError("config key '" + key + "': cannot parse '" + value + "' as " + want);
}

template <typename T>
T parse_int(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) bad_value(key, v, "an integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) bad_value(key, v, "a number");
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v, "a number");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

std::optional<double> parse_opt_double(const std::string& key, const std::string& v) {
  if (v == "none" || v.empty()) return std::nullopt;
  return parse_double(key, v);
}

std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  if (out.empty()) bad_value(key, v, "a comma-separated list of numbers");
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : "none"; }

std::string fmt_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

struct Field {
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define LCP_INT_FIELD(name, member, type)                                                        \
  {name,                                                                                         \
   {[](RunConfig& c, const std::string& k, const std::string& v) {                               \
      c.member = parse_int<type>(k, v);                                                          \
    },                                                                                           \
    [](const RunConfig& c) { return std::to_string(c.member); }}}

#define LCP_DOUBLE_FIELD(name, member)                                                           \
  {name,                                                                                         \
   {[](RunConfig& c, const std::string& k, const std::string& v) {                               \
      c.member = parse_double(k, v);                                                             \
    },                                                                                           \
    [](const RunConfig& c) { return fmt(c.member); }}}

#define LCP_BOOL_FIELD(name, member)                                                             \
  {name,                                                                                         \
   {[](RunConfig& c, const std::string& k, const std::string& v) {                               \
      c.member = parse_bool(k, v);                                                               \
    },                                                                                           \
    [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }}}

// Ordered so dump_config groups keys by section.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      LCP_INT_FIELD("sim.rx", sim.rx, int),
      LCP_INT_FIELD("sim.tx", sim.tx, int),
      LCP_INT_FIELD("sim.paths", sim.paths, int),
      LCP_DOUBLE_FIELD("sim.frame_period_s", sim.frame_period_s),
      LCP_DOUBLE_FIELD("sim.carrier_hz", sim.carrier_hz),
      {"sim.speeds_kmh",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.speeds_kmh = parse_list(k, v);
        },
        [](const RunConfig& c) { return fmt_list(c.speeds_kmh); }}},
      LCP_INT_FIELD("sim.num_frames", sim.num_frames, int),
      LCP_INT_FIELD("sim.train_frames", train_frames, int),
      LCP_INT_FIELD("sim.draws", draws, int),
      LCP_DOUBLE_FIELD("sim.delay_spread_ns", sim.delay_spread_ns),

      LCP_DOUBLE_FIELD("estimation.snr_db", estimation.snr_db),
      {"estimation.cov_source",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "identity") {
            c.estimation.cov_source = CovSource::identity;
          } else if (v == "sample") {
            c.estimation.cov_source = CovSource::sample;
          } else {
            bad_value(k, v, "identity or sample");
          }
        },
        [](const RunConfig& c) {
          return std::string(c.estimation.cov_source == CovSource::identity ? "identity"
                                                                            : "sample");
        }}},

      LCP_INT_FIELD("model.np", model.np, int),
      LCP_INT_FIELD("model.nl", model.nl, int),
      LCP_INT_FIELD("model.d", model.d, int),
      LCP_INT_FIELD("model.layers", model.layers, int),
      {"model.mixer",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          if (v != "tmlp" && v != "attention") bad_value(k, v, "tmlp or attention");
          c.model.mixer = parse_mixer(v);
        },
        [](const RunConfig& c) { return to_string(c.model.mixer); }}},
      LCP_INT_FIELD("model.heads", model.heads, int),
      LCP_BOOL_FIELD("model.pos_enc", model.pos_enc),

      LCP_DOUBLE_FIELD("train.max_lr", train.max_lr),
      LCP_INT_FIELD("train.batch_size", train.batch_size, int),
      LCP_DOUBLE_FIELD("train.weight_decay", train.weight_decay),
      LCP_INT_FIELD("train.epochs", train.epochs, int),
      {"train.loss",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          if (v != "mse" && v != "wmse") bad_value(k, v, "mse or wmse");
          c.train.loss = parse_loss(v);
        },
        [](const RunConfig& c) { return to_string(c.train.loss); }}},
      LCP_BOOL_FIELD("train.augment", train.augment),
      LCP_DOUBLE_FIELD("train.snr_low_db", train.aug_snr.low_db),
      LCP_DOUBLE_FIELD("train.snr_high_db", train.aug_snr.high_db),
      {"train.test_snr_db",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.train.test_snr_db = parse_opt_double(k, v);
        },
        [](const RunConfig& c) { return fmt_opt(c.train.test_snr_db); }}},
      LCP_INT_FIELD("train.max_samples", max_train_samples, std::size_t),

      {"eval.input_snr_db",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.eval_input_snr_db = parse_opt_double(k, v);
        },
        [](const RunConfig& c) { return fmt_opt(c.eval_input_snr_db); }}},
      LCP_DOUBLE_FIELD("eval.capacity_snr_db", capacity_snr_db),
      LCP_INT_FIELD("eval.bench_repeats", bench_repeats, int),
      LCP_INT_FIELD("eval.max_samples", max_eval_samples, std::size_t),

      LCP_INT_FIELD("run.seed", seed, std::uint64_t),
      {"run.out",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.out = v; },
        [](const RunConfig& c) { return c.out; }}},
  };
  return table;
}

#undef LCP_INT_FIELD
#undef LCP_DOUBLE_FIELD
#undef LCP_BOOL_FIELD

const Field* find_field(const std::string& key) {
  for (const auto& [name, f] : fields()) {
    if (name == key) return &f;
  }
  return nullptr;
}

}  // namespace

void RunConfig::validate() const {
  sim.validate();
  model.validate();
  train.validate();
  if (speeds_kmh.empty()) throw UsageError("config key 'sim.speeds_kmh' must list a speed");
  for (double s : speeds_kmh) {
    if (!(s >= 0.0)) throw UsageError("config key 'sim.speeds_kmh': speeds must be >= 0");
  }
  if (draws < 1) throw UsageError("config key 'sim.draws' must be >= 1");
  if (train_frames < 1 || train_frames > sim.num_frames) {
    throw UsageError("config key 'sim.train_frames' must be in [1, sim.num_frames]");
  }
  if (bench_repeats < 1) throw UsageError("config key 'eval.bench_repeats' must be >= 1");
  if (model.rx != sim.rx || model.tx != sim.tx) {
    throw UsageError("config keys 'model.rx/tx' follow 'sim.rx/tx'; they differ");
  }
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [name, f] : fields()) out.push_back(name);
  return out;
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw UsageError("unknown config key '" + key + "'");
  f->set(cfg, key, value);
  // The model always sees the simulated antenna layout.
  cfg.model.rx = cfg.sim.rx;
  cfg.model.tx = cfg.sim.tx;
}

std::string get_key(const RunConfig& cfg, const std::string& key) {
  const Field* f = find_field(key);
  if (!f) throw UsageError("unknown config key '" + key + "'");
  return f->get(cfg);
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw UsageError(where + "malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(where + "expected 'key = value', got '" + line + "'");
    const std::string name = trim(line.substr(0, eq));
    const std::string key = section.empty() ? name : section + "." + name;
    try {
      set_key(cfg, key, trim(line.substr(eq + 1)));
    } catch (const UsageError& e) {
      throw UsageError(where + e.what());
    }
  }
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw UsageError("override '" + assignment + "' is not of the form section.key=value");
  }
  set_key(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string dump_config(const RunConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& [name, f] : fields()) {
    const auto dot = name.find('.');
    const std::string sec = name.substr(0, dot);
    if (sec != section) {
      os << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
      section = sec;
    }
    os << name.substr(dot + 1) << " = " << f.get(cfg) << '\n';
  }
  return os.str();
}

}  // namespace lcp::cli
