#include "dhi/nn/checkpoint.hpp"
#include "dhi/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace dhi::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Role role) { return role == Role::Train ? "train" : "test"; }

std::string git_blob_sha1(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) throw NumericalError("sha1: cannot allocate digest context");
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw NumericalError("sha1: digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

std::string git_blob_sha1_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return git_blob_sha1(buf.str());
}

int thread_count() {
  const char* env = std::getenv("DHI_NUM_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1 || v > 1024) {
    throw ConfigError(std::string("DHI_NUM_THREADS must be a positive integer, got '") + env + "'");
  }
  return static_cast<int>(v);
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NotFoundError("cannot write " + path.string());
  out << text;
}

const BearingData& Dataset::find(const std::string& id) const {
  for (const auto& b : bearings) {
    if (b.id == id) return b;
  }
  throw NotFoundError("bearing '" + id + "' is not in the dataset cache");
}

namespace {

json describe_inputs(const BearingSource& source) {
  json j{{"id", source.id}};
  if (source.format == SourceFormat::Synthetic) {
    j["synth"] = source.synth.to_json();
    return j;
  }
  j["path"] = source.path.string();
  std::vector<fs::path> files;
  const bool is_dir = fs::is_directory(source.path);
  if (is_dir) {
    for (const auto& e : fs::recursive_directory_iterator(source.path)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
  } else {
    files.push_back(source.path);
  }
  std::sort(files.begin(), files.end());
  const fs::path base = is_dir ? source.path : source.path.parent_path();
  json listing = json::array();
  for (const auto& f : files) {
    listing.push_back({fs::relative(f, base).generic_string(), fs::file_size(f),
                       static_cast<long long>(fs::last_write_time(f).time_since_epoch().count())});
  }
  j["files"] = listing;
  return j;
}

ingestion::RunRecord load_source(const BearingSource& source) {
  ingestion::RunRecord record;
  switch (source.format) {
    case SourceFormat::Pronostia: record = ingestion::load_pronostia(source.path); break;
    case SourceFormat::Generic: record = ingestion::load_generic(source.path); break;
    case SourceFormat::Synthetic: record = ingestion::synth_generate(source.synth, source.id); break;
  }
  record.bearing_id = source.id;
  return record;
}

struct CachedBearing {
  std::vector<ingestion::SpectrumSample> spectra;
  Vector rms;
  Index end_of_life_index = 0;
};

void write_bearing(const fs::path& dir, const CachedBearing& b) {
  fs::create_directories(dir);
  const Index n = static_cast<Index>(b.spectra.size());
  const Index bins = n > 0 ? b.spectra.front().bins.size() : 0;
  Vector flat(n * bins);
  std::vector<Index> indices;
  for (Index i = 0; i < n; ++i) {
    flat.segment(i * bins, bins) = b.spectra[static_cast<std::size_t>(i)].bins;
    indices.push_back(b.spectra[static_cast<std::size_t>(i)].index);
  }
  nn::write_f64_file(dir / "spectra.f64", flat);
  nn::write_f64_file(dir / "rms.f64", b.rms);
  write_text_file(dir / "meta.json",
                  json{{"windows", n},
                       {"bins", bins},
                       {"indices", indices},
                       {"end_of_life_index", b.end_of_life_index}}
                      .dump(2) + "\n");
}

CachedBearing read_bearing(const fs::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw NotFoundError("dataset cache is missing " + (dir / "meta.json").string() +
                               "; run `prepare` first");
  const json meta = json::parse(in);
  const Index n = meta.at("windows").get<Index>();
  const Index bins = meta.at("bins").get<Index>();
  const auto indices = meta.at("indices").get<std::vector<Index>>();
  const Vector flat = nn::read_f64_file(dir / "spectra.f64");
  if (flat.size() != n * bins || static_cast<Index>(indices.size()) != n) {
    throw DataError(dir.string() + ": cached spectra do not match meta.json");
  }
  CachedBearing b;
  for (Index i = 0; i < n; ++i) {
    b.spectra.push_back({indices[static_cast<std::size_t>(i)], flat.segment(i * bins, bins)});
  }
  b.rms = nn::read_f64_file(dir / "rms.f64");
  b.end_of_life_index = meta.at("end_of_life_index").get<Index>();
  return b;
}

std::string fingerprint(const ExperimentConfig& config) {
  json j{{"train", json::array()}, {"test", json::array()}};
  for (const auto& s : config.train) j["train"].push_back(describe_inputs(s));
  for (const auto& s : config.test) j["test"].push_back(describe_inputs(s));
  return git_blob_sha1(j.dump());
}

}  // namespace

PrepareResult cmd_prepare(const ExperimentConfig& config) {
  const RunPaths paths{config.out};
  const fs::path cache = paths.cache();
  PrepareResult result;
  result.fingerprint = fingerprint(config);

  const fs::path stamp = cache / "fingerprint.txt";
  if (fs::exists(stamp)) {
    std::ifstream in(stamp);
    std::string saved;
    std::getline(in, saved);
    bool complete = saved == result.fingerprint && fs::exists(cache / "stats.json");
    for (const auto* list : {&config.train, &config.test}) {
      for (const auto& s : *list) complete = complete && fs::exists(cache / s.id / "meta.json");
    }
    if (complete) {
      result.cache_hit = true;
      return result;
    }
  }

  fs::remove_all(cache);
  fs::create_directories(cache);
  std::vector<ingestion::SpectrumSample> pooled;
  auto ingest = [&](const BearingSource& source, bool training) {
    const auto record = load_source(source);
    CachedBearing b;
    b.spectra = ingestion::to_spectra(record);
    b.rms = ingestion::rms_series(record);
    b.end_of_life_index = record.end_of_life_index;
    if (training) pooled.insert(pooled.end(), b.spectra.begin(), b.spectra.end());
    write_bearing(cache / source.id, b);
  };
  for (const auto& s : config.train) ingest(s, true);
  for (const auto& s : config.test) ingest(s, false);

  const auto stats = ingestion::fit_standardization(pooled);
  write_text_file(cache / "stats.json", stats.to_json().dump() + "\n");
  write_text_file(stamp, result.fingerprint + "\n");
  return result;
}

Dataset load_dataset(const ExperimentConfig& config) {
  const fs::path cache = RunPaths{config.out}.cache();
  std::ifstream in(cache / "stats.json");
  if (!in) throw NotFoundError("dataset cache " + cache.string() + " not found; run `prepare` first");
  Dataset ds;
  ds.stats = ingestion::StandardizationStats::from_json(json::parse(in));
  auto add = [&](const BearingSource& source, Role role) {
    auto cached = read_bearing(cache / source.id);
    BearingData b;
    b.id = source.id;
    b.role = role;
    b.end_of_life_index = cached.end_of_life_index;
    for (const auto& s : cached.spectra) b.indices.push_back(s.index);
    b.spectra = ds.stats.apply(cached.spectra);
    b.rms = std::move(cached.rms);
    ds.bearings.push_back(std::move(b));
  };
  for (const auto& s : config.train) add(s, Role::Train);
  for (const auto& s : config.test) add(s, Role::Test);
  return ds;
}

}  // namespace dhi::pipeline
