#include "pwes/dfcl.hpp"

#include <fstream>

#include <json.hpp>

namespace pwes {

using nlohmann::json;

std::vector<std::vector<int>> mask_features(const Mat& fused,
                                            const PseudoLabelMatrix& labels) {
  if (fused.rows() != labels.labels.rows())
    throw ShapeError("mask_features: row count mismatch");
  const Eigen::Index CC = labels.labels.cols();
  std::vector<std::vector<int>> out(static_cast<size_t>(CC));
  for (Eigen::Index c = 0; c < CC; ++c)
    for (Eigen::Index t = 0; t < labels.labels.rows(); ++t)
      if (labels.labels(t, c) > 0.0)
        out[static_cast<size_t>(c)].push_back(static_cast<int>(t));
  return out;
}

ClassRegions dfs_region_vectors(const Mat& fused, const std::vector<int>& rows,
                                int num_regions) {
  if (num_regions < 1) throw ConfigError("dfs: K must be >= 1");
  ClassRegions r;
  if (rows.empty()) return r;
  r.present = true;

  auto chunk_mean = [&fused](const std::vector<int>& members) {
    Vec acc = Vec::Zero(fused.cols());
    for (int t : members) acc += fused.row(t).transpose();
    return Vec(acc / static_cast<double>(members.size()));
  };

  // main vector over the whole class feature set
  r.vectors.push_back(chunk_mean(rows));
  r.rows.push_back(rows);

  const int n = static_cast<int>(rows.size());
  const int k = std::min(num_regions, n);
  r.partial = n < num_regions;
  // contiguous chunks, sizes differ by at most one, earlier chunks larger
  const int base = n / k;
  const int extra = n % k;
  int pos = 0;
  for (int i = 0; i < k; ++i) {
    const int len = base + (i < extra ? 1 : 0);
    std::vector<int> members(rows.begin() + pos, rows.begin() + pos + len);
    pos += len;
    r.vectors.push_back(chunk_mean(members));
    r.rows.push_back(std::move(members));
  }
  return r;
}

RegionVectorSet build_region_vectors(
    const Mat& fused, const PseudoLabelMatrix& labels,
    const std::vector<int>& regions_per_class) {
  const auto row_sets = mask_features(fused, labels);
  if (row_sets.size() != regions_per_class.size())
    throw ConfigError("regions_per_class must cover every class plus background");
  RegionVectorSet set;
  for (size_t c = 0; c < row_sets.size(); ++c)
    set.per_class.push_back(
        dfs_region_vectors(fused, row_sets[c], regions_per_class[c]));
  return set;
}

void MemoryBank::update(const RegionVectorSet& set) {
  if (set.per_class.size() != regions_per_class_.size())
    throw ConfigError("memory bank: class count mismatch");
  for (size_t c = 0; c < set.per_class.size(); ++c) {
    const auto& cr = set.per_class[c];
    if (cr.present && !cr.partial &&
        static_cast<int>(cr.vectors.size()) != regions_per_class_[c] + 1)
      throw ConfigError("memory bank: K_c mismatch for class " +
                        std::to_string(c));
  }
  entries_[set.video_id] = set;
}

std::pair<std::vector<Vec>, std::vector<Vec>> MemoryBank::contrastive_sets(
    int anchor_class, const std::string& exclude_video) const {
  const int background = static_cast<int>(regions_per_class_.size()) - 1;
  if (anchor_class < 0 || anchor_class >= background)
    throw ConfigError("contrastive_sets: anchor must be a foreground class");
  std::vector<Vec> pos, neg;
  for (const auto& [vid, set] : entries_) {
    if (vid == exclude_video) continue;
    for (size_t c = 0; c < set.per_class.size(); ++c) {
      const auto& cr = set.per_class[c];
      if (!cr.present) continue;
      auto& dst = static_cast<int>(c) == anchor_class ? pos : neg;
      dst.insert(dst.end(), cr.vectors.begin(), cr.vectors.end());
    }
  }
  return {std::move(pos), std::move(neg)};
}

void MemoryBank::save(const std::string& path) const {
  json index;
  index["regions_per_class"] = regions_per_class_;
  index["videos"] = json::array();
  std::vector<float> blob;
  for (const auto& [vid, set] : entries_) {
    json v;
    v["video_id"] = vid;
    v["classes"] = json::array();
    for (const auto& cr : set.per_class) {
      json c;
      c["present"] = cr.present;
      c["partial"] = cr.partial;
      c["count"] = cr.vectors.size();
      c["dim"] = cr.vectors.empty() ? 0 : cr.vectors.front().size();
      v["classes"].push_back(c);
      for (const auto& q : cr.vectors)
        for (Eigen::Index i = 0; i < q.size(); ++i)
          blob.push_back(static_cast<float>(q[i]));
    }
    index["videos"].push_back(v);
  }
  const std::string text = index.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write bank: " + path);
  const std::uint32_t len = static_cast<std::uint32_t>(text.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(text.data(), len);
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(float)));
}

MemoryBank MemoryBank::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open bank: " + path);
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (!in) throw FormatError("truncated bank index");
  json index = json::parse(text);
  MemoryBank bank(index.at("regions_per_class").get<std::vector<int>>());
  for (const auto& v : index.at("videos")) {
    RegionVectorSet set;
    set.video_id = v.at("video_id").get<std::string>();
    for (const auto& c : v.at("classes")) {
      ClassRegions cr;
      cr.present = c.at("present").get<bool>();
      cr.partial = c.at("partial").get<bool>();
      const size_t count = c.at("count").get<size_t>();
      const Eigen::Index dim = c.at("dim").get<Eigen::Index>();
      for (size_t i = 0; i < count; ++i) {
        Vec q(dim);
        for (Eigen::Index d = 0; d < dim; ++d) {
          float f = 0.0f;
          in.read(reinterpret_cast<char*>(&f), 4);
          q[d] = static_cast<double>(f);
        }
        cr.vectors.push_back(std::move(q));
      }
      set.per_class.push_back(std::move(cr));
    }
    bank.entries_[set.video_id] = std::move(set);
  }
  if (!in) throw FormatError("truncated bank blob");
  return bank;
}

}  // namespace pwes
