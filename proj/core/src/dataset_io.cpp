#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "hdrx/hash.hpp"
#include "hdrx/pipeline.hpp"

namespace hdrx::pipeline {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "dataset I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'H', 'D', 'R', 'X', 'D', 'S', 'E', 'T'};

json channel_to_json(const impair::ChannelProfile& c) {
  json j{{"kind", impair::to_string(c.kind)}};
  if (c.kind == impair::ChannelKind::Tdl) {
    j["delay_spread_s"] = c.delay_spread_s;
    j["max_doppler_hz"] = c.max_doppler_hz;
  }
  return j;
}

impair::ChannelProfile channel_from_json(const json& j) {
  const auto kind = impair::channel_kind_from_string(j.at("kind").get<std::string>());
  if (kind == impair::ChannelKind::Awgn) return impair::ChannelProfile::awgn();
  return impair::ChannelProfile::tdl_a(j.value("delay_spread_s", 100e-9), j.value("max_doppler_hz", 40.0));
}

template <typename T>
void put(std::string& buf, T v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_complex(std::string& buf, std::span<const cdouble> xs) {
  buf.append(reinterpret_cast<const char*>(xs.data()), xs.size() * sizeof(cdouble));
}

void put_bits(std::string& buf, const dsp::BitTensor& t) {
  std::string packed((t.values.size() + 7) / 8, '\0');
  for (std::size_t i = 0; i < t.values.size(); ++i)
    if (t.values[i]) packed[i / 8] = static_cast<char>(packed[i / 8] | (1 << (i % 8)));
  buf += packed;
}

class Reader {
 public:
  Reader(std::istream& is, std::string path, Sha256* hash) : is_(is), path_(std::move(path)), hash_(hash) {}

  void read(void* dst, std::size_t len) {
    if (len && !is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(len)))
      throw IoError("truncated dataset file: " + path_);
    if (hash_) hash_->update(dst, len);
  }
  template <typename T>
  T get() {
    T v{};
    read(&v, sizeof(T));
    return v;
  }
  void get_complex(std::span<cdouble> xs) { read(xs.data(), xs.size() * sizeof(cdouble)); }
  void get_bits(dsp::BitTensor& t) {
    std::string packed((t.values.size() + 7) / 8, '\0');
    read(packed.data(), packed.size());
    for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = (packed[i / 8] >> (i % 8)) & 1;
  }
  void set_hash(Sha256* h) { hash_ = h; }

 private:
  std::istream& is_;
  std::string path_;
  Sha256* hash_;
};

}  // namespace

std::string serialize_record(const TtiRecord& r) {
  std::string buf;
  put<std::uint64_t>(buf, r.tti_index);
  put<double>(buf, r.snr_db);
  put<double>(buf, r.backoff_db);
  put<std::uint64_t>(buf, r.pa_seed);
  put_complex(buf, r.rx_frame.samples());
  put_complex(buf, r.raw_ls.data());
  put_complex(buf, r.true_channel.data());
  put_bits(buf, r.label_bits);
  put_bits(buf, r.bit_mask);
  return buf;
}

std::string DatasetSpec::to_json() const {
  json j;
  j["profile"] = profile;
  j["modulation"] = dsp::to_string(modulation);
  j["num_ttis"] = num_ttis;
  j["snr_range_db"] = {snr_lo_db, snr_hi_db};
  j["snr_mode"] = snr_mode == SnrMode::Uniform ? "uniform" : "grid";
  j["snr_step_db"] = snr_step_db;
  j["pa_seeds"] = pa_seeds;
  j["channel"] = channel_to_json(channel);
  j["backoff_db"] = backoff_db;
  j["backoff_grid"] = backoff_grid;
  j["linear_pa"] = linear_pa;
  j["dither_delta"] = dither_delta;
  j["kappa"] = kappa;
  j["pilot_seed"] = pilot_seed;
  j["master_seed"] = master_seed;
  return j.dump();
}

DatasetSpec DatasetSpec::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dataset spec is not valid JSON: ") + e.what());
  }
  DatasetSpec s;
  try {
    s.profile = j.value("profile", s.profile);
    if (j.contains("modulation")) s.modulation = dsp::modulation_from_string(j["modulation"].get<std::string>());
    s.num_ttis = j.value("num_ttis", s.num_ttis);
    if (j.contains("snr_range_db")) {
      const auto r = j["snr_range_db"].get<std::vector<double>>();
      if (r.size() != 2) throw ConfigError("snr_range_db must have two entries");
      s.snr_lo_db = r[0];
      s.snr_hi_db = r[1];
    }
    if (j.contains("snr_mode")) {
      const auto m = j["snr_mode"].get<std::string>();
      if (m == "uniform") s.snr_mode = SnrMode::Uniform;
      else if (m == "grid") s.snr_mode = SnrMode::Grid;
      else throw ConfigError("unknown snr_mode '" + m + "'");
    }
    s.snr_step_db = j.value("snr_step_db", s.snr_step_db);
    s.pa_seeds = j.value("pa_seeds", s.pa_seeds);
    if (j.contains("channel")) s.channel = channel_from_json(j["channel"]);
    s.backoff_db = j.value("backoff_db", s.backoff_db);
    s.backoff_grid = j.value("backoff_grid", s.backoff_grid);
    s.linear_pa = j.value("linear_pa", s.linear_pa);
    s.dither_delta = j.value("dither_delta", s.dither_delta);
    s.kappa = j.value("kappa", s.kappa);
    s.pilot_seed = j.value("pilot_seed", s.pilot_seed);
    s.master_seed = j.value("master_seed", s.master_seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed dataset spec: ") + e.what());
  }
  return s;
}

TrainHyper TrainHyper::from_json(const std::string& text) {
  TrainHyper h;
  try {
    const json j = json::parse(text);
    h.lr = j.value("lr", h.lr);
    h.batch = j.value("batch", h.batch);
    h.epochs = j.value("epochs", h.epochs);
    h.clip_norm = j.value("clip_norm", h.clip_norm);
    h.seed = j.value("seed", h.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed training hyperparameters: ") + e.what());
  }
  return h;
}

Manifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& path) {
  spec.validate();
  const auto cfg = spec.link();
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open dataset for writing: " + path.string());

  const std::string spec_json = spec.to_json();
  std::string header(kMagic, sizeof(kMagic));
  put<std::uint32_t>(header, kDatasetVersion);
  put<std::uint32_t>(header, static_cast<std::uint32_t>(spec_json.size()));
  header += spec_json;
  put<std::uint64_t>(header, static_cast<std::uint64_t>(spec.num_ttis));
  put<std::uint32_t>(header, static_cast<std::uint32_t>(cfg.frame_rows()));
  put<std::uint32_t>(header, static_cast<std::uint32_t>(cfg.num_symbols));
  put<std::uint32_t>(header, static_cast<std::uint32_t>(cfg.num_data_subcarriers));
  put<std::uint32_t>(header, static_cast<std::uint32_t>(cfg.max_bits));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));

  Sha256 hash;
  for (int i = 0; i < spec.num_ttis; ++i) {
    const std::string rec = serialize_record(generate_tti(spec, static_cast<std::uint64_t>(i)));
    hash.update(rec);
    os.write(rec.data(), static_cast<std::streamsize>(rec.size()));
  }
  os.close();
  if (!os) throw IoError("failed writing dataset: " + path.string());

  Manifest m;
  m.format_version = kDatasetVersion;
  m.spec_json = spec_json;
  m.count = static_cast<std::uint64_t>(spec.num_ttis);
  m.content_hash = hash.hex_digest();
  m.data_path = path.string();

  const json mj{{"format_version", m.format_version},
                {"spec", json::parse(spec_json)},
                {"count", m.count},
                {"content_hash", m.content_hash},
                {"data", path.filename().string()}};
  const auto manifest_path = std::filesystem::path(path.string() + ".json");
  std::ofstream ms(manifest_path, std::ios::trunc);
  if (!ms) throw IoError("cannot write manifest: " + manifest_path.string());
  ms << mj.dump(2) << '\n';
  if (!ms) throw IoError("failed writing manifest: " + manifest_path.string());
  return m;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset: " + path.string());
  Reader rd(is, path.string(), nullptr);
  char magic[8];
  rd.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IoError("not a dataset file (bad magic): " + path.string());
  const auto version = rd.get<std::uint32_t>();
  if (version != kDatasetVersion)
    throw IoError("unsupported dataset version " + std::to_string(version) + ": " + path.string());
  std::string spec_json(rd.get<std::uint32_t>(), '\0');
  rd.read(spec_json.data(), spec_json.size());

  Dataset ds;
  ds.spec = DatasetSpec::from_json(spec_json);
  const auto cfg = ds.spec.link();
  const auto count = rd.get<std::uint64_t>();
  const auto rows = rd.get<std::uint32_t>();
  const auto syms = rd.get<std::uint32_t>();
  const auto nd = rd.get<std::uint32_t>();
  const auto depth = rd.get<std::uint32_t>();
  if (static_cast<int>(rows) != cfg.frame_rows() || static_cast<int>(syms) != cfg.num_symbols ||
      static_cast<int>(nd) != cfg.num_data_subcarriers || static_cast<int>(depth) != cfg.max_bits)
    throw IoError("dataset header shape disagrees with its spec: " + path.string());

  Sha256 hash;
  rd.set_hash(&hash);
  ds.records.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    TtiRecord r;
    r.tti_index = rd.get<std::uint64_t>();
    r.snr_db = rd.get<double>();
    r.backoff_db = rd.get<double>();
    r.pa_seed = rd.get<std::uint64_t>();
    r.rx_frame = dsp::TimeFrame(cfg);
    rd.get_complex(r.rx_frame.samples());
    r.raw_ls = dsp::ResourceGrid(cfg.num_data_subcarriers, cfg.num_symbols, dsp::GridKind::ChannelEstimate);
    rd.get_complex(r.raw_ls.data());
    r.true_channel = dsp::ResourceGrid(cfg.num_data_subcarriers, cfg.num_symbols, dsp::GridKind::ChannelEstimate);
    rd.get_complex(r.true_channel.data());
    r.label_bits = dsp::BitTensor(cfg.num_data_subcarriers, cfg.num_symbols, cfg.max_bits);
    r.bit_mask = dsp::BitTensor(cfg.num_data_subcarriers, cfg.num_symbols, cfg.max_bits);
    rd.get_bits(r.label_bits);
    rd.get_bits(r.bit_mask);
    ds.records.push_back(std::move(r));
  }
  ds.content_hash = hash.hex_digest();
  return ds;
}

Dataset make_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  Sha256 hash;
  ds.records.reserve(static_cast<std::size_t>(spec.num_ttis));
  for (int i = 0; i < spec.num_ttis; ++i) {
    ds.records.push_back(generate_tti(spec, static_cast<std::uint64_t>(i)));
    hash.update(serialize_record(ds.records.back()));
  }
  ds.content_hash = hash.hex_digest();
  return ds;
}

}  // namespace hdrx::pipeline
