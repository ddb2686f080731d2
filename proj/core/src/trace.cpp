#include "plume/trace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "plume/error.hpp"
#include "plume/rng.hpp"

namespace plume {

using nlohmann::json;

std::string_view to_string(TraceKind kind) {
  switch (kind) {
    case TraceKind::throughput_series: return "throughput_series";
    case TraceKind::job_size_series: return "job_size_series";
    case TraceKind::param_tuple: return "param_tuple";
  }
  return "unknown";
}

TraceKind parse_trace_kind(std::string_view name) {
  if (name == "throughput_series") return TraceKind::throughput_series;
  if (name == "job_size_series") return TraceKind::job_size_series;
  if (name == "param_tuple") return TraceKind::param_tuple;
  throw DatasetError("unknown trace kind '" + std::string(name) + "'");
}

std::vector<double> Trace::values() const {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.v);
  return out;
}

void Trace::validate() const {
  auto fail = [&](const std::string& what) {
    throw DatasetError("trace '" + id + "': " + what);
  };
  if (id.empty()) throw DatasetError("trace with empty id");
  if (kind == TraceKind::param_tuple) {
    if (!samples.empty()) fail("param_tuple trace must not carry samples");
    if (params.empty()) fail("param_tuple trace has no params");
    for (const auto& [k, v] : params) {
      if (!std::isfinite(v)) fail("param '" + k + "' is not finite");
    }
    return;
  }
  if (samples.empty()) fail("series trace has no samples");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (!std::isfinite(s.t) || !std::isfinite(s.v)) {
      fail("non-finite sample at index " + std::to_string(i));
    }
    if (s.v < 0.0) fail("negative value at index " + std::to_string(i));
    if (i > 0 && !(s.t > samples[i - 1].t)) {
      fail("timestamps not strictly increasing at index " + std::to_string(i));
    }
  }
}

const Trace& TraceDataset::at(std::string_view id) const {
  auto idx = index_of(id);
  if (!idx) throw DatasetError("dataset '" + name + "' has no trace '" + std::string(id) + "'");
  return traces[*idx];
}

std::optional<std::size_t> TraceDataset::index_of(std::string_view id) const {
  auto it = std::lower_bound(traces.begin(), traces.end(), id,
                             [](const Trace& t, std::string_view key) { return t.id < key; });
  if (it != traces.end() && it->id == id) return static_cast<std::size_t>(it - traces.begin());
  // Fall back to a linear scan for datasets that are not sorted.
  for (std::size_t i = 0; i < traces.size(); ++i) {
    if (traces[i].id == id) return i;
  }
  return std::nullopt;
}

void TraceDataset::validate() const {
  std::set<std::string> seen;
  for (const auto& t : traces) {
    t.validate();
    if (!seen.insert(t.id).second) throw DatasetError("duplicate trace id '" + t.id + "'");
    if (t.kind != traces.front().kind) {
      throw DatasetError("trace '" + t.id + "' has kind " + std::string(to_string(t.kind)) +
                         " but dataset kind is " + std::string(to_string(traces.front().kind)));
    }
  }
}

void ReturnSpec::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidArgument("gamma must lie in [0, 1]");
  if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
  if (!(clip_low < clip_high)) throw InvalidArgument("empty reward clip range");
}

double normalize_reward(double reward, double epsilon) {
  const double sign = reward > 0.0 ? 1.0 : (reward < 0.0 ? -1.0 : 0.0);
  return sign * (std::sqrt(std::abs(reward) + 1.0) - 1.0) + epsilon * reward;
}

double transform_reward(double reward, const ReturnSpec& spec) {
  if (!std::isfinite(reward)) throw InvalidArgument("reward is not finite");
  if (!spec.normalize) return reward;
  return std::clamp(normalize_reward(reward, spec.epsilon), spec.clip_low, spec.clip_high);
}

double discounted_return(std::span<const double> rewards, const ReturnSpec& spec) {
  spec.validate();
  double total = 0.0;
  double discount = 1.0;
  for (double r : rewards) {
    total += discount * transform_reward(r, spec);
    discount *= spec.gamma;
  }
  return total;
}

// ---- serialization -------------------------------------------------------------------------

std::string serialize_trace(const Trace& trace) {
  json j;
  j["id"] = trace.id;
  j["kind"] = std::string(to_string(trace.kind));
  json samples = json::array();
  for (const auto& s : trace.samples) samples.push_back(json::array({s.t, s.v}));
  j["samples"] = std::move(samples);
  j["params"] = json::object();
  for (const auto& [k, v] : trace.params) j["params"][k] = v;
  j["ground_truth_class"] =
      trace.ground_truth_class ? json(*trace.ground_truth_class) : json(nullptr);
  return j.dump() + "\n";
}

Trace parse_trace(std::string_view text, std::string_view source) {
  auto fail = [&](const std::string& what) {
    throw DatasetError(std::string(source) + ": " + what);
  };
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) fail("trace record is not a JSON object");
  Trace t;
  try {
    t.id = j.at("id").get<std::string>();
    t.kind = parse_trace_kind(j.at("kind").get<std::string>());
    if (j.contains("samples")) {
      for (const auto& s : j.at("samples")) {
        if (!s.is_array() || s.size() != 2) fail("sample is not a [t, v] pair");
        t.samples.push_back({s[0].get<double>(), s[1].get<double>()});
      }
    }
    if (j.contains("params") && !j.at("params").is_null()) {
      for (const auto& [k, v] : j.at("params").items()) t.params[k] = v.get<double>();
    }
    if (j.contains("ground_truth_class") && !j.at("ground_truth_class").is_null()) {
      t.ground_truth_class = j.at("ground_truth_class").get<std::string>();
    }
  } catch (const json::exception& e) {
    fail(std::string("malformed trace record: ") + e.what());
  }
  try {
    t.validate();
  } catch (const DatasetError& e) {
    fail(e.what());
  }
  return t;
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write '" + path.string() + "'");
  out << content;
}

}  // namespace

Trace load_trace(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw DatasetError("trace file '" + path.string() + "' does not exist");
  }
  return parse_trace(read_file(path), path.string());
}

void save_trace(const Trace& trace, const std::filesystem::path& path) {
  write_file(path, serialize_trace(trace));
}

TraceDataset load_dataset(const std::filesystem::path& manifest_path) {
  if (!std::filesystem::exists(manifest_path)) {
    throw DatasetError("manifest '" + manifest_path.string() + "' does not exist");
  }
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw DatasetError("manifest '" + manifest_path.string() + "' is malformed: " + e.what());
  }
  if (!manifest.is_array()) {
    throw DatasetError("manifest '" + manifest_path.string() + "' is not a JSON array");
  }
  TraceDataset ds;
  ds.manifest_path = manifest_path;
  ds.name = manifest_path.parent_path().filename().string();
  if (ds.name.empty()) ds.name = manifest_path.stem().string();
  const auto base = manifest_path.parent_path();
  for (const auto& entry : manifest) {
    if (!entry.is_string()) {
      throw DatasetError("manifest '" + manifest_path.string() + "' has a non-string entry");
    }
    ds.traces.push_back(load_trace(base / entry.get<std::string>()));
  }
  std::sort(ds.traces.begin(), ds.traces.end(),
            [](const Trace& a, const Trace& b) { return a.id < b.id; });
  ds.validate();
  return ds;
}

std::filesystem::path save_dataset(const TraceDataset& dataset, const std::filesystem::path& dir) {
  dataset.validate();
  std::vector<const Trace*> ordered;
  for (const auto& t : dataset.traces) ordered.push_back(&t);
  std::sort(ordered.begin(), ordered.end(),
            [](const Trace* a, const Trace* b) { return a->id < b->id; });
  json manifest = json::array();
  for (const Trace* t : ordered) {
    const std::string rel = "traces/" + t->id + ".json";
    save_trace(*t, dir / rel);
    manifest.push_back(rel);
  }
  const auto path = dir / "manifest.json";
  write_file(path, manifest.dump(1) + "\n");
  return path;
}

void write_summary_csv(const TraceDataset& dataset, std::ostream& out) {
  out << "# schema: plume-trace-summary/1\n";
  out << "id,kind,length,mean,std,min,max,ground_truth_class\n";
  for (const auto& t : dataset.traces) {
    const auto v = t.values();
    double mean = 0.0, sd = 0.0, lo = 0.0, hi = 0.0;
    if (!v.empty()) {
      mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      sd = std::sqrt(ss / static_cast<double>(v.size()));
      auto [mn, mx] = std::minmax_element(v.begin(), v.end());
      lo = *mn;
      hi = *mx;
    }
    out << t.id << ',' << to_string(t.kind) << ',' << v.size() << ',' << mean << ',' << sd << ','
        << lo << ',' << hi << ',' << t.ground_truth_class.value_or("") << '\n';
  }
}

// ---- preprocessing -------------------------------------------------------------------------

TraceDataset filter_min_length(const TraceDataset& dataset, std::size_t min_samples) {
  TraceDataset out{dataset.name, {}, dataset.manifest_path};
  for (const auto& t : dataset.traces) {
    if (!t.is_series() || t.samples.size() >= min_samples) out.traces.push_back(t);
  }
  return out;
}

std::vector<Trace> split_trace(const Trace& trace, std::size_t segment_len, std::uint64_t seed) {
  if (segment_len == 0) throw InvalidArgument("segment length must be positive");
  if (!trace.is_series() || trace.samples.size() <= segment_len) return {trace};
  const std::size_t n = trace.samples.size();
  Rng rng(derive_seed(seed, "split:" + trace.id));
  const std::size_t max_offset = std::min(segment_len - 1, n - segment_len);
  std::uniform_int_distribution<std::size_t> pick(0, max_offset);
  const std::size_t offset = pick(rng);
  std::vector<Trace> out;
  for (std::size_t start = offset, part = 0; start + segment_len <= n; start += segment_len, ++part) {
    Trace seg;
    seg.id = trace.id + "#" + std::to_string(part);
    seg.kind = trace.kind;
    seg.ground_truth_class = trace.ground_truth_class;
    seg.samples.assign(trace.samples.begin() + static_cast<std::ptrdiff_t>(start),
                       trace.samples.begin() + static_cast<std::ptrdiff_t>(start + segment_len));
    out.push_back(std::move(seg));
  }
  return out;
}

TraceDataset split_long_traces(const TraceDataset& dataset, std::size_t segment_len,
                               std::uint64_t seed) {
  TraceDataset out{dataset.name, {}, dataset.manifest_path};
  for (const auto& t : dataset.traces) {
    for (auto& seg : split_trace(t, segment_len, seed)) out.traces.push_back(std::move(seg));
  }
  std::sort(out.traces.begin(), out.traces.end(),
            [](const Trace& a, const Trace& b) { return a.id < b.id; });
  return out;
}

std::vector<double> uniform_values(const Trace& trace) {
  const auto& s = trace.samples;
  if (s.size() < 3) return trace.values();
  std::vector<double> steps;
  steps.reserve(s.size() - 1);
  for (std::size_t i = 1; i < s.size(); ++i) steps.push_back(s[i].t - s[i - 1].t);
  std::vector<double> sorted = steps;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2),
                   sorted.end());
  const double median = sorted[sorted.size() / 2];
  const bool uniform = std::all_of(steps.begin(), steps.end(), [&](double d) {
    return std::abs(d - median) <= 1e-9 * std::max(1.0, median);
  });
  if (uniform) return trace.values();
  std::vector<double> out;
  const double t0 = s.front().t;
  const double t1 = s.back().t;
  std::size_t j = 0;
  for (std::size_t i = 0;; ++i) {
    const double t = t0 + static_cast<double>(i) * median;
    if (t > t1 + 1e-12 * std::max(1.0, std::abs(t1))) break;
    while (j + 1 < s.size() && s[j + 1].t <= t) ++j;
    out.push_back(s[j].v);
  }
  return out;
}

}  // namespace plume
