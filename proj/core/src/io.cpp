#include "lcp/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "lcp/error.hpp"

namespace lcp {

namespace {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    out_.append(static_cast<const char*>(p), n);
  }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
    raw(b, 4);
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string what) : in_(std::move(bytes)), what_(std::move(what)) {}

  bool done() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

  std::string str(std::size_t n) {
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw DataError(what_ + ": unexpected end of file");
  }
  std::string in_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open '" + tmp + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("write to '" + tmp + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_lcp1(const std::string& path, std::span<const FrameBlock> samples) {
  if (samples.empty()) throw DataError("refusing to write an empty LCP1 dataset");
  const FrameBlock& ref = samples.front();
  ByteWriter w;
  w.raw("LCP1", 4);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(samples.size()));
  w.u32(static_cast<std::uint32_t>(ref.frames));
  w.u32(static_cast<std::uint32_t>(ref.rx));
  w.u32(static_cast<std::uint32_t>(ref.tx));
  for (const auto& s : samples) {
    if (!s.same_shape(ref)) throw ShapeError("LCP1 samples must share one shape");
    for (const auto& v : s.values) {
      w.f32(static_cast<float>(v.real()));
      w.f32(static_cast<float>(v.imag()));
    }
  }
  write_file_atomic(path, w.take());
}

std::vector<FrameBlock> read_lcp1(const std::string& path) {
  ByteReader r(read_file(path), path);
  if (r.str(4) != "LCP1") throw DataError(path + ": not an LCP1 dataset");
  const auto version = r.u32();
  if (version != kDatasetVersion) {
    throw DataError(path + ": unsupported LCP1 version " + std::to_string(version));
  }
  const auto count = r.u32();
  const auto frames = r.u32();
  const auto rx = r.u32();
  const auto tx = r.u32();
  if (rx == 0 || tx == 0) throw DataError(path + ": zero antenna count");
  const std::uint64_t expected = std::uint64_t{count} * frames * rx * tx * 8;
  if (r.remaining() != expected) {
    throw DataError(path + ": payload is " + std::to_string(r.remaining()) + " bytes, header implies " +
                    std::to_string(expected));
  }
  std::vector<FrameBlock> out;
  out.reserve(count);
  for (std::uint32_t s = 0; s < count; ++s) {
    FrameBlock b(static_cast<int>(frames), static_cast<int>(rx), static_cast<int>(tx));
    for (auto& v : b.values) {
      const float re = r.f32();
      const float im = r.f32();
      v = {re, im};
    }
    out.push_back(std::move(b));
  }
  return out;
}

std::string sidecar_path(const std::string& dataset_path) { return dataset_path + ".json"; }

void write_sidecar(const std::string& dataset_path, const DatasetMeta& meta) {
  const auto& s = meta.sim;
  nlohmann::json j = {
      {"format", "LCP1"},
      {"split", meta.split},
      {"rx", s.rx},
      {"tx", s.tx},
      {"paths", s.paths},
      {"frame_period_s", s.frame_period_s},
      {"carrier_hz", s.carrier_hz},
      {"speed_kmh", s.speed_kmh},
      {"num_frames", s.num_frames},
      {"seed", s.seed},
      {"delay_spread_ns", s.delay_spread_ns},
      {"speeds_kmh", meta.speeds_kmh},
  };
  write_file_atomic(sidecar_path(dataset_path), j.dump(2) + "\n");
}

DatasetMeta read_sidecar(const std::string& dataset_path) {
  try {
    const auto j = nlohmann::json::parse(read_file(sidecar_path(dataset_path)));
    DatasetMeta m;
    m.split = j.value("split", "");
    m.sim.rx = j.at("rx").get<int>();
    m.sim.tx = j.at("tx").get<int>();
    m.sim.paths = j.value("paths", m.sim.paths);
    m.sim.frame_period_s = j.value("frame_period_s", m.sim.frame_period_s);
    m.sim.carrier_hz = j.value("carrier_hz", m.sim.carrier_hz);
    m.sim.speed_kmh = j.value("speed_kmh", m.sim.speed_kmh);
    m.sim.num_frames = j.value("num_frames", m.sim.num_frames);
    m.sim.seed = j.value("seed", m.sim.seed);
    m.sim.delay_spread_ns = j.value("delay_spread_ns", m.sim.delay_spread_ns);
    m.speeds_kmh = j.value("speeds_kmh", std::vector<double>{});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(sidecar_path(dataset_path) + ": " + e.what());
  }
}

std::string model_config_text(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "np = " << cfg.np << '\n'
     << "nl = " << cfg.nl << '\n'
     << "d = " << cfg.d << '\n'
     << "layers = " << cfg.layers << '\n'
     << "rx = " << cfg.rx << '\n'
     << "tx = " << cfg.tx << '\n'
     << "mixer = " << to_string(cfg.mixer) << '\n'
     << "heads = " << cfg.heads << '\n'
     << "pos_enc = " << (cfg.pos_enc ? "true" : "false") << '\n';
  return os.str();
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int x = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw DataError("model config '" + key + "': not an integer: '" + v + "'");
  }
}

}  // namespace

ModelConfig parse_model_config_text(const std::string& text) {
  ModelConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("model config line without '=': " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "np") cfg.np = to_int(key, val);
    else if (key == "nl") cfg.nl = to_int(key, val);
    else if (key == "d") cfg.d = to_int(key, val);
    else if (key == "layers") cfg.layers = to_int(key, val);
    else if (key == "rx") cfg.rx = to_int(key, val);
    else if (key == "tx") cfg.tx = to_int(key, val);
    else if (key == "mixer") cfg.mixer = parse_mixer(val);
    else if (key == "heads") cfg.heads = to_int(key, val);
    else if (key == "pos_enc") cfg.pos_enc = (val == "true" || val == "1");
    else throw DataError("unknown model config key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

namespace {

void put_tensor(ByteWriter& w, const std::string& name, const ad::Shape& shape,
                std::span<const double> data) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.raw(name.data(), name.size());
  w.u32(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
  for (double v : data) w.f32(static_cast<float>(v));
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params) {
  ByteWriter w;
  w.raw("LCKP", 4);
  w.u32(kCheckpointVersion);
  const std::string text = model_config_text(params.config);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.raw(text.data(), text.size());
  for (const auto& t : params.named()) put_tensor(w, t.name, t.tensor.shape(), t.tensor.data());
  if (!params.scaler.empty()) {
    const ad::Shape s{params.scaler.mean.size()};
    put_tensor(w, "scaler.mean", s, params.scaler.mean);
    put_tensor(w, "scaler.std", s, params.scaler.stddev);
  }
  write_file_atomic(path, w.take());
}

ModelParams load_checkpoint(const std::string& path) {
  ByteReader r(read_file(path), path);
  if (r.str(4) != "LCKP") throw DataError(path + ": not an LCKP checkpoint");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError(path + ": checkpoint version " + std::to_string(version) +
                    " does not match supported version " + std::to_string(kCheckpointVersion));
  }
  const ModelConfig cfg = parse_model_config_text(r.str(r.u32()));

  Rng unused(0);
  ModelParams params = init_params(cfg, unused);
  std::map<std::string, ad::Tensor> slots;
  for (auto& t : params.named()) slots.emplace(t.name, t.tensor);
  std::map<std::string, bool> seen;

  while (!r.done()) {
    const std::string name = r.str(r.u32());
    const auto rank = r.u32();
    ad::Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    std::vector<double> data(ad::numel(shape));
    for (auto& v : data) v = r.f32();

    if (name == "scaler.mean") {
      params.scaler.mean = std::move(data);
      continue;
    }
    if (name == "scaler.std") {
      params.scaler.stddev = std::move(data);
      continue;
    }
    auto it = slots.find(name);
    if (it == slots.end()) throw DataError(path + ": unexpected tensor '" + name + "'");
    if (it->second.shape() != shape) {
      throw DataError(path + ": tensor '" + name + "' is " + ad::shape_str(shape) + ", expected " +
                      ad::shape_str(it->second.shape()));
    }
    std::copy(data.begin(), data.end(), it->second.mutable_data().begin());
    seen[name] = true;
  }
  for (const auto& [name, _] : slots) {
    if (!seen.count(name)) throw DataError(path + ": missing tensor '" + name + "'");
  }
  if (params.scaler.mean.size() != params.scaler.stddev.size()) {
    throw DataError(path + ": scaler mean/std sizes differ");
  }
  return params;
}

FrameBlock import_csv(const std::string& path, int rx, int tx) {
  if (rx < 1 || tx < 1) throw UsageError("import needs rx, tx >= 1");
  std::istringstream in(read_file(path));
  const std::size_t width = static_cast<std::size_t>(2 * rx * tx);
  std::vector<cdouble> values;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    std::vector<double> nums;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        const std::string c = trim(cell);
        nums.push_back(std::stod(c, &used));
        if (used != c.size()) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
      }
    }
    if (!numeric) {
      if (line_no == 1) continue;
      throw DataError(path + ":" + std::to_string(line_no) + ": non-numeric cell");
    }
    if (nums.size() != width) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(width) + " values, got " + std::to_string(nums.size()));
    }
    for (std::size_t i = 0; i < width; i += 2) values.emplace_back(nums[i], nums[i + 1]);
  }
  const auto per = static_cast<std::size_t>(rx * tx);
  FrameBlock b(static_cast<int>(values.size() / per), rx, tx);
  if (b.frames == 0) throw DataError(path + ": no frames");
  b.values = std::move(values);
  return b;
}

FrameBlock import_raw(const std::string& path, int rx, int tx) {
  if (rx < 1 || tx < 1) throw UsageError("import needs rx, tx >= 1");
  const std::string bytes = read_file(path);
  const std::size_t frame_bytes = static_cast<std::size_t>(rx * tx) * 8;
  if (bytes.empty() || bytes.size() % frame_bytes != 0) {
    throw DataError(path + ": size " + std::to_string(bytes.size()) +
                    " is not a whole number of " + std::to_string(frame_bytes) + "-byte frames");
  }
  ByteReader r(bytes, path);
  FrameBlock b(static_cast<int>(bytes.size() / frame_bytes), rx, tx);
  for (auto& v : b.values) {
    const float re = r.f32();
    const float im = r.f32();
    v = {re, im};
  }
  return b;
}

}  // namespace lcp
