#include "pwes/tensors_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

namespace pwes {

using nlohmann::json;

namespace {

constexpr char kMagic[6] = {'P', 'W', 'E', 'S', '1', '\0'};

void read_exact(std::ifstream& in, char* buf, std::streamsize n,
                const std::string& what) {
  in.read(buf, n);
  if (in.gcount() != n) throw FormatError("truncated container: " + what);
}

MatF read_float_block(std::ifstream& in, int rows, int cols,
                      const std::string& what) {
  MatF m(rows, cols);
  read_exact(in, reinterpret_cast<char*>(m.data()),
             static_cast<std::streamsize>(sizeof(float)) * rows * cols, what);
  return m;
}

void require_field(const json& j, const char* key) {
  if (!j.contains(key))
    throw FormatError(std::string("container header missing field: ") + key);
}

void check_finite(const MatF& m, const std::string& what) {
  if (!m.allFinite()) throw DataError("NaN/Inf in " + what + " features");
}

}  // namespace

VideoRecord load_video(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open container: " + path);

  char magic[6];
  read_exact(in, magic, 6, "magic");
  if (std::memcmp(magic, kMagic, 6) != 0)
    throw FormatError("bad magic bytes in " + path);

  std::uint32_t header_len = 0;
  read_exact(in, reinterpret_cast<char*>(&header_len), 4, "header length");
  std::string header_text(header_len, '\0');
  read_exact(in, header_text.data(), header_len, "header");

  json h;
  try {
    h = json::parse(header_text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("unparseable container header: ") + e.what());
  }
  for (const char* key : {"video_id", "L", "fps", "g", "T", "D", "annotations"})
    require_field(h, key);

  VideoRecord rec;
  rec.video_id = h["video_id"].get<std::string>();
  rec.frame_count = h["L"].get<int>();
  rec.fps = h["fps"].get<double>();
  rec.snippet_len = h["g"].get<int>();
  const int T = h["T"].get<int>();
  const int D = h["D"].get<int>();
  if (rec.snippet_len <= 0) throw FormatError("field g must be positive");
  if (rec.frame_count <= 0) throw FormatError("field L must be positive");
  if (T != rec.frame_count / rec.snippet_len)
    throw ShapeError("header T=" + std::to_string(T) + " != floor(L/g)=" +
                     std::to_string(rec.frame_count / rec.snippet_len));
  if (T <= 0 || D <= 0) throw ShapeError("T and D must be positive");

  for (const auto& a : h["annotations"]) {
    require_field(a, "psi");
    require_field(a, "label");
    PointAnnotation ann{a["psi"].get<int>(), a["label"].get<int>()};
    if (ann.psi < 0 || ann.psi >= rec.frame_count)
      throw DataError("annotation psi " + std::to_string(ann.psi) +
                      " outside [0, L)");
    if (ann.psi / rec.snippet_len >= T)
      throw DataError("annotation psi " + std::to_string(ann.psi) +
                      " lands in a dropped trailing frame");
    if (ann.label < 0) throw DataError("negative annotation label");
    rec.annotations.push_back(ann);
  }
  if (h.contains("gt_intervals")) {
    std::vector<FrameInterval> gts;
    for (const auto& iv : h["gt_intervals"]) {
      if (!iv.is_array() || iv.size() != 2)
        throw FormatError("gt_intervals entries must be [on, off] pairs");
      FrameInterval f{iv[0].get<int>(), iv[1].get<int>()};
      if (f.onset > f.offset) throw DataError("gt interval with onset > offset");
      gts.push_back(f);
    }
    rec.gt_intervals = std::move(gts);
  }

  rec.features_raw = read_float_block(in, T, D, "raw features");
  rec.features_flow = read_float_block(in, T, D, "flow features");
  check_finite(rec.features_raw, "raw");
  check_finite(rec.features_flow, "flow");
  return rec;
}

void write_video(const std::string& path, const VideoRecord& record) {
  if (record.features_raw.rows() != record.features_flow.rows() ||
      record.features_raw.cols() != record.features_flow.cols())
    throw ShapeError("raw/flow feature shapes differ for " + record.video_id);
  const int T = record.num_snippets();
  const int D = record.feature_dim();
  if (T != record.frame_count / record.snippet_len)
    throw ShapeError("feature rows != floor(L/g) for " + record.video_id);

  json h;
  h["video_id"] = record.video_id;
  h["L"] = record.frame_count;
  h["fps"] = record.fps;
  h["g"] = record.snippet_len;
  h["T"] = T;
  h["D"] = D;
  h["annotations"] = json::array();
  for (const auto& a : record.annotations)
    h["annotations"].push_back({{"psi", a.psi}, {"label", a.label}});
  if (record.gt_intervals) {
    h["gt_intervals"] = json::array();
    for (const auto& iv : *record.gt_intervals)
      h["gt_intervals"].push_back({iv.onset, iv.offset});
  }
  const std::string header_text = h.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write container: " + path);
  out.write(kMagic, 6);
  const std::uint32_t header_len =
      static_cast<std::uint32_t>(header_text.size());
  out.write(reinterpret_cast<const char*>(&header_len), 4);
  out.write(header_text.data(), header_len);
  out.write(reinterpret_cast<const char*>(record.features_raw.data()),
            static_cast<std::streamsize>(sizeof(float)) * T * D);
  out.write(reinterpret_cast<const char*>(record.features_flow.data()),
            static_cast<std::streamsize>(sizeof(float)) * T * D);
  if (!out) throw FormatError("write failed: " + path);
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(std::string("unparseable manifest: ") + e.what());
  }
  for (const char* key : {"dataset", "fps", "g", "classes", "videos"})
    require_field(j, key);
  DatasetManifest m;
  m.dataset = j["dataset"].get<std::string>();
  m.fps = j["fps"].get<double>();
  m.snippet_len = j["g"].get<int>();
  m.class_names = j["classes"].get<std::vector<std::string>>();
  std::set<std::string> seen;
  for (const auto& v : j["videos"]) {
    require_field(v, "video_id");
    require_field(v, "subject_id");
    require_field(v, "path");
    ManifestEntry e{v["video_id"].get<std::string>(),
                    v["subject_id"].get<std::string>(),
                    v["path"].get<std::string>()};
    if (e.subject_id.empty())
      throw DataError("empty subject_id for " + e.video_id);
    if (!seen.insert(e.video_id).second)
      throw DataError("duplicate video_id " + e.video_id);
    m.videos.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
  json j;
  j["dataset"] = manifest.dataset;
  j["fps"] = manifest.fps;
  j["g"] = manifest.snippet_len;
  j["classes"] = manifest.class_names;
  j["videos"] = json::array();
  for (const auto& v : manifest.videos)
    j["videos"].push_back({{"video_id", v.video_id},
                           {"subject_id", v.subject_id},
                           {"path", v.path}});
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

std::vector<double> derive_video_labels(
    const std::vector<PointAnnotation>& annotations, int num_classes) {
  std::vector<double> y(static_cast<size_t>(num_classes) + 1, 0.0);
  for (const auto& a : annotations) {
    if (a.label < 0 || a.label >= num_classes)
      throw DataError("annotation label out of range");
    y[static_cast<size_t>(a.label)] = 1.0;
  }
  y.back() = 1.0;  // background is always present at video level
  return y;
}

std::vector<int> annotation_snippet_indices(const VideoRecord& record) {
  std::set<int> idx;
  for (const auto& a : record.annotations)
    idx.insert(a.psi / record.snippet_len);
  return {idx.begin(), idx.end()};
}

Mat point_label_matrix(const VideoRecord& record, int num_classes) {
  Mat y = Mat::Zero(record.num_snippets(), num_classes);
  for (const auto& a : record.annotations) {
    const int t = a.psi / record.snippet_len;
    y(t, a.label) = 1.0;
  }
  return y;
}

std::vector<PointAnnotation> sample_point_labels(
    const std::vector<FrameInterval>& gt_intervals, PointMode mode, double fps,
    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<PointAnnotation> out;
  for (const auto& iv : gt_intervals) {
    if (iv.onset > iv.offset)
      throw DataError("empty interval in sample_point_labels");
    int psi = 0;
    if (mode == PointMode::kApex) {
      psi = iv.onset + (iv.offset - iv.onset) / 2;
    } else {
      std::uniform_int_distribution<int> dist(iv.onset, iv.offset);
      psi = dist(rng);
    }
    const double seconds = iv.length() / fps;
    out.push_back({psi, seconds < 0.5 ? 0 : 1});
  }
  return out;
}

namespace {

// Places events as disjoint snippet runs separated by >= 1 background snippet.
struct PlantedEvent {
  int start = 0;  // snippet index
  int len = 0;    // snippets
  int cls = 0;
};

std::vector<PlantedEvent> plant_events(int T, const SynthConfig& cfg,
                                       std::mt19937_64& rng) {
  const int fg_budget =
      static_cast<int>(std::floor((1.0 - cfg.bg_density) * T));
  std::uniform_int_distribution<int> cls_dist(0, cfg.num_classes - 1);
  std::vector<std::pair<int, int>> events;  // (len, cls)
  int used = 0;
  for (int e = 0; e < cfg.max_events_per_video; ++e) {
    const int cls = cls_dist(rng);
    const auto [lo, hi] = cfg.duration_range[static_cast<size_t>(cls)];
    std::uniform_int_distribution<int> len_dist(lo, hi);
    const int len = len_dist(rng);
    if (used + len > fg_budget) continue;
    events.emplace_back(len, cls);
    used += len;
  }
  if (events.empty()) {
    // always plant at least the shortest event of class 0
    const int len = cfg.duration_range[0].first;
    if (len > fg_budget && len > T)
      throw DataError("synthesis infeasible: video too short for any event");
    events.emplace_back(len, 0);
    used = len;
  }
  const int n = static_cast<int>(events.size());
  const int slack = T - used - (n - 1);  // spare background snippets
  if (slack < 0)
    throw DataError("synthesis infeasible: intervals cannot fit disjointly");

  // distribute the slack over n+1 gaps
  std::vector<int> gaps(static_cast<size_t>(n) + 1, 0);
  for (int s = 0; s < slack; ++s) {
    std::uniform_int_distribution<int> gap_dist(0, n);
    gaps[static_cast<size_t>(gap_dist(rng))] += 1;
  }
  std::vector<PlantedEvent> placed;
  int pos = gaps[0];
  for (int e = 0; e < n; ++e) {
    placed.push_back({pos, events[static_cast<size_t>(e)].first,
                      events[static_cast<size_t>(e)].second});
    pos += events[static_cast<size_t>(e)].first + 1 +
           gaps[static_cast<size_t>(e) + 1];
  }
  return placed;
}

}  // namespace

SynthDataset synth_dataset(const SynthConfig& config, std::uint64_t seed) {
  if (config.bg_density < 0.6)
    throw ConfigError("background density must be >= 0.6");
  if (static_cast<int>(config.duration_range.size()) != config.num_classes)
    throw ConfigError("one duration range per class required");
  for (int c = 0; c < config.num_classes; ++c) {
    const auto [lo, hi] = config.duration_range[static_cast<size_t>(c)];
    if (lo < 1 || hi < lo) throw ConfigError("bad duration range");
  }

  std::mt19937_64 meta_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // class means drawn once per dataset; background mean is the origin
  std::vector<Vec> means;
  for (int c = 0; c < config.num_classes; ++c) {
    Vec m(config.feature_dim);
    for (int d = 0; d < config.feature_dim; ++d) m[d] = gauss(meta_rng);
    m *= config.mean_scale / m.norm();
    means.push_back(m);
  }

  SynthDataset ds;
  ds.manifest.dataset = config.dataset_name;
  ds.manifest.fps = config.fps;
  ds.manifest.snippet_len = config.snippet_len;
  ds.manifest.class_names = {"ME", "MaE"};
  ds.manifest.class_names.resize(static_cast<size_t>(config.num_classes));
  for (int c = 2; c < config.num_classes; ++c)
    ds.manifest.class_names[static_cast<size_t>(c)] =
        "class" + std::to_string(c);

  const int per_subject =
      (config.num_videos + config.num_subjects - 1) / config.num_subjects;
  for (int v = 0; v < config.num_videos; ++v) {
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + 1315423911ULL +
                        static_cast<std::uint64_t>(v));
    std::uniform_int_distribution<int> t_dist(config.t_min, config.t_max);
    const int T = t_dist(rng);

    VideoRecord rec;
    rec.video_id = "vid" + std::to_string(v);
    rec.snippet_len = config.snippet_len;
    rec.fps = config.fps;
    rec.frame_count = T * config.snippet_len;

    const auto events = plant_events(T, config, rng);

    std::vector<int> snippet_class(static_cast<size_t>(T), -1);
    std::vector<FrameInterval> gts;
    for (const auto& ev : events) {
      for (int s = ev.start; s < ev.start + ev.len; ++s)
        snippet_class[static_cast<size_t>(s)] = ev.cls;
      gts.push_back({ev.start * config.snippet_len,
                     (ev.start + ev.len) * config.snippet_len - 1});
    }
    rec.gt_intervals = gts;

    auto fill = [&](MatF& m) {
      m.resize(T, config.feature_dim);
      for (int t = 0; t < T; ++t) {
        const int cls = snippet_class[static_cast<size_t>(t)];
        for (int d = 0; d < config.feature_dim; ++d) {
          const double mean = cls < 0 ? 0.0 : means[static_cast<size_t>(cls)][d];
          m(t, d) =
              static_cast<float>(mean + config.noise_sigma * gauss(rng));
        }
      }
    };
    fill(rec.features_raw);
    fill(rec.features_flow);

    ds.videos.push_back(std::move(rec));
    ds.manifest.videos.push_back(
        {ds.videos.back().video_id,
         "subj" + std::to_string(v / per_subject), ""});
  }
  return ds;
}

DatasetManifest write_dataset(const SynthDataset& dataset,
                              const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  DatasetManifest m = dataset.manifest;
  for (size_t i = 0; i < dataset.videos.size(); ++i) {
    const auto& rec = dataset.videos[i];
    const std::string path =
        (std::filesystem::path(out_dir) / (rec.video_id + ".pwes")).string();
    write_video(path, rec);
    m.videos[i].path = path;
  }
  write_manifest(
      (std::filesystem::path(out_dir) / "manifest.json").string(), m);
  return m;
}

}  // namespace pwes
