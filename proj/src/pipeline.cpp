#include "pwes/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pwes/proposals.hpp"

namespace pwes {

using nlohmann::json;
namespace fs = std::filesystem;

void RunConfig::validate() const {
  if (pretrain_iters >= total_iters)
    throw ConfigError("pretrain_iters must be < total_iters");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  if (tau <= 0.0) throw ConfigError("tau must be > 0");
  if (nms_threshold < 0.0) throw ConfigError("nms_threshold must be >= 0");
  if (mplg_every < 1) throw ConfigError("mplg_every must be >= 1");
  if (static_cast<int>(regions_per_class.size()) != net.num_classes + 1)
    throw ConfigError("regions_per_class must list every class plus background");
  if (supervision != "random" && supervision != "apex")
    throw ConfigError("supervision must be 'random' or 'apex'");
  mplg.validate();
}

namespace {

json config_to_json(const RunConfig& c) {
  json j;
  j["manifest"] = c.manifest_path;
  j["out_dir"] = c.out_dir;
  j["net"] = {{"feature_dim", c.net.feature_dim},
              {"embed_dim", c.net.embed_dim},
              {"num_classes", c.net.num_classes},
              {"k_mil_ratio", c.net.k_mil_ratio}};
  j["loss"] = {{"lambda1", c.loss.lambda1}, {"lambda2", c.loss.lambda2},
               {"lambda3", c.loss.lambda3}, {"lambda4", c.loss.lambda4},
               {"lambda5", c.loss.lambda5}};
  j["mplg"] = {{"k_ratio", c.mplg.k_ratio}, {"theta", c.mplg.theta}};
  j["tau"] = c.tau;
  j["regions_per_class"] = c.regions_per_class;
  j["top_set"] = c.top_set;
  j["nms_threshold"] = c.nms_threshold;
  j["oic_inflation"] = c.oic_inflation;
  j["k_eval"] = c.k_eval;
  j["pretrain_iters"] = c.pretrain_iters;
  j["total_iters"] = c.total_iters;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["mplg_every"] = c.mplg_every;
  j["enable_mplg"] = c.enable_mplg;
  j["seed"] = c.seed;
  j["supervision"] = c.supervision;
  if (c.holdout_subject) j["holdout_subject"] = *c.holdout_subject;
  return j;
}

}  // namespace

std::string RunConfig::config_hash() const {
  const std::string text = config_to_json(*this).dump();
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("unparseable config: ") + e.what());
  }
  RunConfig c;
  auto get = [&j](const char* key, auto& dst) {
    if (j.contains(key)) dst = j[key].get<std::decay_t<decltype(dst)>>();
  };
  get("manifest", c.manifest_path);
  get("out_dir", c.out_dir);
  if (j.contains("net")) {
    const auto& n = j["net"];
    if (n.contains("feature_dim")) c.net.feature_dim = n["feature_dim"];
    if (n.contains("embed_dim")) c.net.embed_dim = n["embed_dim"];
    if (n.contains("num_classes")) c.net.num_classes = n["num_classes"];
    if (n.contains("k_mil_ratio")) c.net.k_mil_ratio = n["k_mil_ratio"];
  }
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    if (l.contains("lambda1")) c.loss.lambda1 = l["lambda1"];
    if (l.contains("lambda2")) c.loss.lambda2 = l["lambda2"];
    if (l.contains("lambda3")) c.loss.lambda3 = l["lambda3"];
    if (l.contains("lambda4")) c.loss.lambda4 = l["lambda4"];
    if (l.contains("lambda5")) c.loss.lambda5 = l["lambda5"];
  }
  if (j.contains("mplg")) {
    const auto& m = j["mplg"];
    if (m.contains("k_ratio")) c.mplg.k_ratio = m["k_ratio"];
    if (m.contains("theta")) c.mplg.theta = m["theta"];
  }
  get("tau", c.tau);
  get("regions_per_class", c.regions_per_class);
  get("top_set", c.top_set);
  get("nms_threshold", c.nms_threshold);
  get("oic_inflation", c.oic_inflation);
  get("k_eval", c.k_eval);
  get("pretrain_iters", c.pretrain_iters);
  get("total_iters", c.total_iters);
  get("batch_size", c.batch_size);
  get("learning_rate", c.learning_rate);
  get("mplg_every", c.mplg_every);
  get("enable_mplg", c.enable_mplg);
  get("seed", c.seed);
  get("supervision", c.supervision);
  if (j.contains("holdout_subject"))
    c.holdout_subject = j["holdout_subject"].get<std::string>();
  c.validate();
  return c;
}

std::vector<LosoFold> loso_splits(const DatasetManifest& manifest) {
  std::map<std::string, std::vector<ManifestEntry>> by_subject;
  for (const auto& v : manifest.videos) by_subject[v.subject_id].push_back(v);
  std::vector<LosoFold> folds;
  for (const auto& [subject, test] : by_subject) {
    LosoFold fold;
    fold.subject = subject;
    fold.test_videos = test;
    for (const auto& v : manifest.videos)
      if (v.subject_id != subject) fold.train_videos.push_back(v);
    folds.push_back(std::move(fold));
  }
  return folds;
}

namespace {

struct AdamState {
  std::vector<double> m, v;
  int step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void apply(ModelParams& params, const ModelParams& grads, double lr) {
    const auto g = grads.flatten();
    if (m.empty()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, step);
    const double bc2 = 1.0 - std::pow(beta2, step);
    std::size_t i = 0;
    params.for_each([&](double& p) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      p -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
      ++i;
    });
  }
};

struct LoadedVideo {
  VideoRecord record;
  Mat point_labels;  // T x C
  std::vector<double> video_label;
};

std::vector<LoadedVideo> load_training_videos(const RunConfig& cfg,
                                              const DatasetManifest& manifest,
                                              bool exclude_holdout) {
  std::vector<LoadedVideo> out;
  for (const auto& entry : manifest.videos) {
    if (exclude_holdout && cfg.holdout_subject &&
        entry.subject_id == *cfg.holdout_subject)
      continue;
    LoadedVideo lv;
    lv.record = load_video(entry.path);
    lv.point_labels = point_label_matrix(lv.record, cfg.net.num_classes);
    lv.video_label =
        derive_video_labels(lv.record.annotations, cfg.net.num_classes);
    out.push_back(std::move(lv));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.record.video_id < b.record.video_id;
  });
  return out;
}

void accumulate(ModelParams& acc, const ModelParams& g, double scale) {
  auto flat = g.flatten();
  std::size_t i = 0;
  acc.for_each([&](double& x) { x += scale * flat[i++]; });
}

}  // namespace

TrainResult train(const RunConfig& cfg) {
  cfg.validate();
  const DatasetManifest manifest = load_manifest(cfg.manifest_path);
  if (manifest.num_classes() != cfg.net.num_classes)
    throw ConfigError("manifest class count does not match config");
  auto videos = load_training_videos(cfg, manifest, true);
  if (videos.empty()) throw ConfigError("no training videos");

  fs::create_directories(cfg.out_dir);
  const std::string log_path =
      (fs::path(cfg.out_dir) / "train_log.jsonl").string();
  std::ofstream log(log_path, std::ios::trunc);

  ModelParams params = ModelParams::init(cfg.net, cfg.seed);
  AdamState adam;
  MemoryBank bank(cfg.regions_per_class);
  std::mt19937_64 batch_rng(cfg.seed ^ 0xb5297a4d3f84d5b5ULL);

  std::vector<int> order;
  auto next_batch = [&]() {
    std::vector<int> batch;
    for (int i = 0; i < cfg.batch_size; ++i) {
      if (order.empty()) {
        order.resize(videos.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), batch_rng);
      }
      batch.push_back(order.back());
      order.pop_back();
    }
    std::sort(batch.begin(), batch.end());  // fixed reduction order
    return batch;
  };

  for (int iter = 1; iter <= cfg.total_iters; ++iter) {
    const bool mining_phase =
        cfg.enable_mplg && iter > cfg.pretrain_iters &&
        (iter - cfg.pretrain_iters - 1) % cfg.mplg_every == 0;
    const bool post_pretrain = cfg.enable_mplg && iter > cfg.pretrain_iters;

    ModelParams grad_acc = ModelParams::zeros_like(cfg.net);
    LossComponents mean_comps;
    double mean_joint = 0.0;
    const auto batch = next_batch();
    std::vector<std::pair<std::string, RegionVectorSet>> bank_updates;

    for (int vi : batch) {
      auto& lv = videos[static_cast<size_t>(vi)];
      const ForwardCache fc = forward(lv.record, params);
      const int T = lv.record.num_snippets();

      CombinedLabels labels;
      ContrastiveContext ctx;
      RegionVectorSet regions;
      bool use_contrastive = false;
      if (post_pretrain && !lv.record.annotations.empty()) {
        const Mat tcam_fg = fc.out.tcam.leftCols(cfg.net.num_classes);
        const PseudoLabelMatrix pseudo =
            mplg(fc.out.fused, lv.point_labels, tcam_fg, fc.out.attn,
                 cfg.mplg);
        (void)mining_phase;  // labels regenerate every mining step
        labels = CombinedLabels::from(lv.point_labels, &pseudo.labels);
        regions = build_region_vectors(fc.out.fused, pseudo,
                                       cfg.regions_per_class);
        regions.video_id = lv.record.video_id;
        ctx.bank = &bank;
        ctx.video_id = lv.record.video_id;
        ctx.regions = &regions;
        ctx.tau = cfg.tau;
        use_contrastive = true;
        bank_updates.emplace_back(lv.record.video_id, regions);
      } else {
        labels = CombinedLabels::from(lv.point_labels, nullptr);
      }

      const LossResult lr = compute_losses(
          fc.out, lv.video_label, labels, cfg.net.k_mil(T), cfg.loss,
          use_contrastive ? &ctx : nullptr);
      if (!std::isfinite(lr.joint)) {
        json diag = {{"iteration", iter},
                     {"video_id", lv.record.video_id},
                     {"joint", lr.joint}};
        std::ofstream snap(
            (fs::path(cfg.out_dir) / "divergence.json").string());
        snap << diag.dump(2) << "\n";
        throw DivergenceError("non-finite loss at iteration " +
                              std::to_string(iter));
      }

      const ModelParams g = backward(fc, params, lr.grads);
      accumulate(grad_acc, g, 1.0 / batch.size());
      mean_comps.mil1 += lr.components.mil1 / batch.size();
      mean_comps.mil2 += lr.components.mil2 / batch.size();
      mean_comps.scl += lr.components.scl / batch.size();
      mean_comps.fcl += lr.components.fcl / batch.size();
      mean_comps.gui += lr.components.gui / batch.size();
      mean_comps.sps += lr.components.sps / batch.size();
      mean_comps.aml += lr.components.aml / batch.size();
      mean_joint += lr.joint / batch.size();
    }

    adam.apply(params, grad_acc, cfg.learning_rate);
    for (auto& [vid, regions] : bank_updates) bank.update(regions);

    json rec = {{"iteration", iter},       {"mil1", mean_comps.mil1},
                {"mil2", mean_comps.mil2}, {"scl", mean_comps.scl},
                {"gui", mean_comps.gui},   {"sps", mean_comps.sps},
                {"aml", mean_comps.aml},   {"joint", mean_joint}};
    if (post_pretrain) rec["fcl"] = mean_comps.fcl;
    log << rec.dump() << "\n";
  }

  TrainResult result;
  result.checkpoint_path =
      (fs::path(cfg.out_dir) / "checkpoint.pwesck").string();
  result.bank_path = (fs::path(cfg.out_dir) / "bank.pwesbank").string();
  result.log_path = log_path;
  save_checkpoint(result.checkpoint_path, params, cfg.seed, cfg.config_hash());
  bank.save(result.bank_path);
  result.params = std::move(params);
  return result;
}

std::string infer(const RunConfig& cfg, const ModelParams& params,
                  const std::optional<std::string>& only_subject) {
  const DatasetManifest manifest = load_manifest(cfg.manifest_path);
  fs::create_directories(cfg.out_dir);
  const std::string proposals_path =
      (fs::path(cfg.out_dir) / "proposals.jsonl").string();
  const std::string attn_path =
      (fs::path(cfg.out_dir) / "attention.jsonl").string();
  std::ofstream props(proposals_path, std::ios::trunc);
  std::ofstream attn_out(attn_path, std::ios::trunc);

  for (const auto& entry : manifest.videos) {
    if (only_subject && entry.subject_id != *only_subject) continue;
    const VideoRecord rec = load_video(entry.path);
    const ForwardCache fc = forward(rec, params);
    const int T = rec.num_snippets();

    const std::vector<int> tops =
        cfg.top_set.empty() ? default_top_set(T) : cfg.top_set;
    auto raw = multi_top_proposals(fc.out.attn, rec.snippet_len, tops);
    for (auto& p : raw) {
      p.confidence =
          oic_score(p, fc.out.tcam_sup, rec.snippet_len, cfg.oic_inflation);
    }
    auto kept = nms(std::move(raw), cfg.nms_threshold);
    for (auto& p : kept) {
      p.label = classify_by_duration(p, rec.fps);
      json line = {{"video_id", rec.video_id}, {"on", p.onset},
                   {"off", p.offset},          {"label", p.label},
                   {"phi", p.confidence},      {"k_src", p.k_src}};
      props << line.dump() << "\n";
    }

    json a = {{"video_id", rec.video_id},
              {"g", rec.snippet_len},
              {"fps", rec.fps}};
    a["attn"] = std::vector<double>(fc.out.attn.data(),
                                    fc.out.attn.data() + T);
    if (rec.gt_intervals) {
      a["gt"] = json::array();
      for (const auto& iv : *rec.gt_intervals)
        a["gt"].push_back({iv.onset, iv.offset});
    }
    attn_out << a.dump() << "\n";
  }
  return proposals_path;
}

std::vector<VideoEval> load_proposals(const std::string& proposals_path,
                                      const DatasetManifest& manifest) {
  std::map<std::string, VideoEval> by_video;
  for (const auto& entry : manifest.videos) {
    VideoEval ve;
    ve.video_id = entry.video_id;
    const VideoRecord rec = load_video(entry.path);
    if (rec.gt_intervals) ve.gts = *rec.gt_intervals;
    by_video[entry.video_id] = std::move(ve);
  }
  std::ifstream in(proposals_path);
  if (!in) throw FormatError("cannot open proposals: " + proposals_path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    auto it = by_video.find(j.at("video_id").get<std::string>());
    if (it == by_video.end()) continue;  // video not in this manifest's split
    Proposal p;
    p.onset = j.at("on").get<int>();
    p.offset = j.at("off").get<int>();
    p.label = j.at("label").get<int>();
    p.confidence = j.at("phi").get<std::vector<double>>();
    p.k_src = j.at("k_src").get<int>();
    it->second.proposals.push_back(std::move(p));
  }
  std::vector<VideoEval> out;
  for (auto& [vid, ve] : by_video)
    if (!ve.proposals.empty() || !ve.gts.empty()) out.push_back(std::move(ve));
  return out;
}

namespace {

void write_timeline_svg(const std::string& path, const json& attn_record,
                        const std::vector<Proposal>& proposals) {
  const auto attn = attn_record.at("attn").get<std::vector<double>>();
  const int g = attn_record.at("g").get<int>();
  const int T = static_cast<int>(attn.size());
  const double w = 900.0, h = 220.0, pad = 30.0;
  const double sx = (w - 2 * pad) / std::max(1, T * g);

  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='"
     << h << "'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  // ground-truth intervals
  if (attn_record.contains("gt")) {
    for (const auto& iv : attn_record["gt"]) {
      const double x0 = pad + iv[0].get<int>() * sx;
      const double x1 = pad + (iv[1].get<int>() + 1) * sx;
      os << "<rect x='" << x0 << "' y='" << pad << "' width='" << x1 - x0
         << "' height='" << h - 2 * pad
         << "' fill='#7fc97f' fill-opacity='0.35'/>\n";
    }
  }
  // attention polyline
  os << "<polyline fill='none' stroke='#386cb0' stroke-width='1.5' points='";
  for (int t = 0; t < T; ++t) {
    const double x = pad + (t + 0.5) * g * sx;
    const double y = h - pad - attn[static_cast<size_t>(t)] * (h - 2 * pad);
    os << x << "," << y << " ";
  }
  os << "'/>\n";
  // proposals as bars near the bottom
  for (const auto& p : proposals) {
    const double x0 = pad + p.onset * sx;
    const double x1 = pad + (p.offset + 1) * sx;
    os << "<rect x='" << x0 << "' y='" << h - pad - 8 << "' width='"
       << x1 - x0 << "' height='6' fill='"
       << (p.label == 0 ? "#d95f02" : "#7570b3") << "'/>\n";
  }
  os << "<text x='" << pad << "' y='" << pad - 10
     << "' font-size='12' font-family='sans-serif'>"
     << attn_record.at("video_id").get<std::string>()
     << " (attention, ground truth, proposals)</text>\n";
  os << "</svg>\n";

  std::ofstream out(path, std::ios::trunc);
  out << os.str();
}

}  // namespace

EvalReport report(const RunConfig& cfg, const std::string& proposals_path,
                  bool write_plots) {
  DatasetManifest manifest = load_manifest(cfg.manifest_path);
  if (cfg.holdout_subject) {
    // the held-out subject is the evaluation split
    std::vector<ManifestEntry> kept;
    for (const auto& v : manifest.videos)
      if (v.subject_id == *cfg.holdout_subject) kept.push_back(v);
    manifest.videos = std::move(kept);
  }
  auto videos = load_proposals(proposals_path, manifest);

  // union of observed top values across videos
  std::set<int> tops;
  for (const auto& v : videos)
    for (const auto& p : v.proposals) tops.insert(p.k_src);
  std::vector<int> top_set(tops.begin(), tops.end());
  if (top_set.empty()) top_set = {1};

  const EvalReport rep =
      f1_variants(videos, top_set, manifest.fps, cfg.k_eval);

  fs::create_directories(cfg.out_dir);
  json j;
  j["overall"] = {{"tp", rep.overall.tp},       {"fp", rep.overall.fp},
                  {"fn", rep.overall.fn},       {"recall", rep.overall.recall()},
                  {"precision", rep.overall.precision()},
                  {"f1", rep.overall.f1()}};
  j["f1_05"] = rep.me_union.f1();
  j["f1_10"] = rep.me_union_1s.f1();
  j["f1_p"] = rep.me_optimal.f1();
  j["optimal_top"] = rep.optimal_top;
  j["recall_defined"] = rep.recall_defined;
  j["per_video"] = json::object();
  for (const auto& [vid, c] : rep.per_video)
    j["per_video"][vid] = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
  std::ofstream rj((fs::path(cfg.out_dir) / "report.json").string(),
                   std::ios::trunc);
  rj << j.dump(2) << "\n";
  std::ofstream rt((fs::path(cfg.out_dir) / "report.txt").string(),
                   std::ios::trunc);
  rt << report_table(rep);

  if (write_plots) {
    const std::string attn_path =
        (fs::path(cfg.out_dir) / "attention.jsonl").string();
    std::ifstream attn_in(attn_path);
    if (attn_in) {
      fs::create_directories(fs::path(cfg.out_dir) / "plots");
      std::map<std::string, std::vector<Proposal>> props;
      for (const auto& v : videos) props[v.video_id] = v.proposals;
      std::string line;
      while (std::getline(attn_in, line)) {
        if (line.empty()) continue;
        const json a = json::parse(line);
        const std::string vid = a.at("video_id").get<std::string>();
        write_timeline_svg(
            (fs::path(cfg.out_dir) / "plots" / (vid + ".svg")).string(), a,
            props.count(vid) ? props[vid] : std::vector<Proposal>{});
      }
    }
  }
  return rep;
}

void mine_pseudo_labels(const RunConfig& cfg, const ModelParams& params,
                        const std::string& out_path) {
  const DatasetManifest manifest = load_manifest(cfg.manifest_path);
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw FormatError("cannot write pseudo labels: " + out_path);
  for (const auto& entry : manifest.videos) {
    const VideoRecord rec = load_video(entry.path);
    if (rec.annotations.empty()) continue;  // mining skips unannotated videos
    const ForwardCache fc = forward(rec, params);
    const Mat point = point_label_matrix(rec, cfg.net.num_classes);
    const Mat tcam_fg = fc.out.tcam.leftCols(cfg.net.num_classes);
    const PseudoLabelMatrix pseudo =
        mplg(fc.out.fused, point, tcam_fg, fc.out.attn, cfg.mplg);
    json rows = json::array();
    for (int t = 0; t < pseudo.num_snippets(); ++t)
      for (int c = 0; c < pseudo.labels.cols(); ++c)
        if (pseudo.labels(t, c) > 0.0)
          rows.push_back({{"t", t}, {"class", c}});
    out << json{{"video_id", rec.video_id}, {"rows", rows}}.dump() << "\n";
  }
}

}  // namespace pwes
