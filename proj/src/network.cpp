#include "pwes/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

namespace pwes {

using nlohmann::json;

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

template <typename Fn>
void visit_mat(Mat& m, Fn&& fn) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) fn(m(r, c));
}
template <typename Fn>
void visit_vec(Vec& v, Fn&& fn) {
  for (Eigen::Index i = 0; i < v.size(); ++i) fn(v[i]);
}

}  // namespace

void ModelParams::for_each(const std::function<void(double&)>& fn) {
  for (ModalityParams* m : {&raw, &flow}) {
    for (auto& w : m->enc_w) visit_mat(w, fn);
    visit_vec(m->enc_b, fn);
    visit_vec(m->att_w, fn);
    fn(m->att_b);
  }
  visit_mat(fuse_w, fn);
  visit_vec(fuse_b, fn);
  visit_mat(cls_w, fn);
  visit_vec(cls_b, fn);
}

void ModelParams::for_each(
    const std::function<void(const double&)>& fn) const {
  const_cast<ModelParams*>(this)->for_each(
      [&fn](double& x) { fn(x); });
}

std::size_t ModelParams::num_params() const {
  std::size_t n = 0;
  for_each([&n](const double&) { ++n; });
  return n;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> out;
  out.reserve(num_params());
  for_each([&out](const double& x) { out.push_back(x); });
  return out;
}

void ModelParams::unflatten(const std::vector<double>& values) {
  std::size_t i = 0;
  for_each([&](double& x) { x = values.at(i++); });
  if (i != values.size()) throw ConfigError("parameter count mismatch");
}

ModelParams ModelParams::zeros_like(const NetConfig& cfg) {
  ModelParams p;
  p.cfg = cfg;
  const int D = cfg.feature_dim, Dp = cfg.embed_dim, C = cfg.num_classes;
  for (ModalityParams* m : {&p.raw, &p.flow}) {
    for (auto& w : m->enc_w) w = Mat::Zero(Dp, D);
    m->enc_b = Vec::Zero(Dp);
    m->att_w = Vec::Zero(Dp);
    m->att_b = 0.0;
  }
  p.fuse_w = Mat::Zero(Dp, 2 * Dp);
  p.fuse_b = Vec::Zero(Dp);
  p.cls_w = Mat::Zero(C + 1, Dp);
  p.cls_b = Vec::Zero(C + 1);
  return p;
}

ModelParams ModelParams::init(const NetConfig& cfg, std::uint64_t seed) {
  ModelParams p = zeros_like(cfg);
  std::mt19937_64 rng(seed);
  auto fill = [&rng](auto& m, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
  };
  const int D = cfg.feature_dim, Dp = cfg.embed_dim;
  for (ModalityParams* m : {&p.raw, &p.flow}) {
    for (auto& w : m->enc_w) fill(w, 3 * D);
    fill(m->enc_b, 3 * D);
    fill(m->att_w, Dp);
    std::uniform_real_distribution<double> dist(-1.0 / std::sqrt(Dp),
                                                1.0 / std::sqrt(Dp));
    m->att_b = dist(rng);
  }
  fill(p.fuse_w, 2 * Dp);
  fill(p.fuse_b, 2 * Dp);
  fill(p.cls_w, Dp);
  fill(p.cls_b, Dp);
  return p;
}

namespace {

// Temporal convolution, kernel 3, zero ("same") padding.
Mat conv3(const Mat& in, const Mat w[3], const Vec& b) {
  const Eigen::Index T = in.rows();
  Mat out(T, b.size());
  for (Eigen::Index t = 0; t < T; ++t) {
    Vec acc = b;
    if (t > 0) acc += w[0] * in.row(t - 1).transpose();
    acc += w[1] * in.row(t).transpose();
    if (t + 1 < T) acc += w[2] * in.row(t + 1).transpose();
    out.row(t) = acc.transpose();
  }
  return out;
}

}  // namespace

ForwardCache forward(const VideoRecord& record, const ModelParams& params) {
  const NetConfig& cfg = params.cfg;
  if (record.feature_dim() != cfg.feature_dim)
    throw ConfigError("feature dim " + std::to_string(record.feature_dim()) +
                      " does not match configured D=" +
                      std::to_string(cfg.feature_dim));
  const int T = record.num_snippets();
  const int C = cfg.num_classes;

  ForwardCache fc;
  fc.in_raw = record.features_raw.cast<double>();
  fc.in_flow = record.features_flow.cast<double>();

  auto branch = [&](const Mat& in, const ModalityParams& mp, Mat& pre,
                    Mat& emb, Vec& attn) {
    pre = conv3(in, mp.enc_w, mp.enc_b);
    emb = pre.cwiseMax(0.0);
    attn.resize(T);
    for (int t = 0; t < T; ++t)
      attn[t] = sigmoid(emb.row(t).dot(mp.att_w) + mp.att_b);
  };
  branch(fc.in_raw, params.raw, fc.pre_raw, fc.emb_raw, fc.out.attn_raw);
  branch(fc.in_flow, params.flow, fc.pre_flow, fc.emb_flow, fc.out.attn_flow);
  fc.out.attn = 0.5 * (fc.out.attn_raw + fc.out.attn_flow);

  fc.pre_fuse.resize(T, cfg.embed_dim);
  for (int t = 0; t < T; ++t) {
    Vec cat(2 * cfg.embed_dim);
    cat << fc.emb_raw.row(t).transpose(), fc.emb_flow.row(t).transpose();
    fc.pre_fuse.row(t) = (params.fuse_w * cat + params.fuse_b).transpose();
  }
  fc.out.fused = fc.pre_fuse.cwiseMax(0.0);

  fc.out.tcam.resize(T, C + 1);
  for (int t = 0; t < T; ++t) {
    Vec z = params.cls_w * fc.out.fused.row(t).transpose() + params.cls_b;
    for (int c = 0; c <= C; ++c) fc.out.tcam(t, c) = sigmoid(z[c]);
  }
  fc.out.tcam_sup = suppress_tcam(fc.out.tcam, fc.out.attn);
  return fc;
}

Mat suppress_tcam(const Mat& tcam, const Vec& attn) {
  if (tcam.rows() != attn.size())
    throw ShapeError("suppress_tcam: length mismatch");
  const Eigen::Index C = tcam.cols() - 1;
  Mat out(tcam.rows(), C);
  for (Eigen::Index t = 0; t < tcam.rows(); ++t)
    for (Eigen::Index c = 0; c < C; ++c) out(t, c) = tcam(t, c) * attn[t];
  return out;
}

std::vector<int> topk_indices(const Vec& values, int k) {
  if (k < 1 || k > values.size())
    throw ConfigError("topk: k out of range");
  std::vector<int> idx(static_cast<size_t>(values.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&values](int a, int b) {
    return values[a] > values[b];
  });
  idx.resize(static_cast<size_t>(k));
  return idx;
}

Vec topk_pool(const Mat& scores, int k) {
  if (k < 1 || k > scores.rows())
    throw ConfigError("topk_pool: k out of range");
  Vec out(scores.cols());
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    const auto idx = topk_indices(scores.col(c), k);
    double sum = 0.0;
    for (int t : idx) sum += scores(t, c);
    out[c] = sum / k;
  }
  return out;
}

ModelParams backward(const ForwardCache& cache, const ModelParams& params,
                     const OutputGrads& grads) {
  const NetConfig& cfg = params.cfg;
  const int T = static_cast<int>(cache.in_raw.rows());
  const int C = cfg.num_classes;
  const int Dp = cfg.embed_dim;
  ModelParams g = ModelParams::zeros_like(cfg);

  Mat d_tcam = grads.d_tcam.size() ? grads.d_tcam : Mat::Zero(T, C + 1);
  Vec d_attn = grads.d_attn.size() ? grads.d_attn : Vec::Zero(T);
  Mat d_fused = grads.d_fused.size() ? grads.d_fused : Mat::Zero(T, Dp);
  Vec d_ar = grads.d_attn_raw.size() ? grads.d_attn_raw : Vec::Zero(T);
  Vec d_af = grads.d_attn_flow.size() ? grads.d_attn_flow : Vec::Zero(T);

  // fold suppressed-TCAM gradient: S_hat[t,c] = S[t,c] * A[t]
  if (grads.d_tcam_sup.size()) {
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < C; ++c) {
        d_tcam(t, c) += grads.d_tcam_sup(t, c) * cache.out.attn[t];
        d_attn[t] += grads.d_tcam_sup(t, c) * cache.out.tcam(t, c);
      }
  }

  // classifier: S = sigmoid(cls_w X^T + cls_b)
  for (int t = 0; t < T; ++t) {
    Vec dz(C + 1);
    for (int c = 0; c <= C; ++c) {
      const double s = cache.out.tcam(t, c);
      dz[c] = d_tcam(t, c) * s * (1.0 - s);
    }
    g.cls_w += dz * cache.out.fused.row(t);
    g.cls_b += dz;
    d_fused.row(t) += (params.cls_w.transpose() * dz).transpose();
  }

  // fusion layer: X = relu(fuse_w [E_r; E_f] + fuse_b)
  Mat d_emb_raw = Mat::Zero(T, Dp);
  Mat d_emb_flow = Mat::Zero(T, Dp);
  for (int t = 0; t < T; ++t) {
    Vec dz(Dp);
    for (int d = 0; d < Dp; ++d)
      dz[d] = cache.pre_fuse(t, d) > 0.0 ? d_fused(t, d) : 0.0;
    Vec cat(2 * Dp);
    cat << cache.emb_raw.row(t).transpose(), cache.emb_flow.row(t).transpose();
    g.fuse_w += dz * cat.transpose();
    g.fuse_b += dz;
    const Vec d_cat = params.fuse_w.transpose() * dz;
    d_emb_raw.row(t) += d_cat.head(Dp).transpose();
    d_emb_flow.row(t) += d_cat.tail(Dp).transpose();
  }

  // mean attention: A = 0.5 (A_r + A_f)
  d_ar += 0.5 * d_attn;
  d_af += 0.5 * d_attn;

  auto branch_backward = [&](const Mat& in, const Mat& pre, const Mat& emb,
                             const Vec& attn, Vec d_a, Mat d_emb,
                             const ModalityParams& mp, ModalityParams& gm) {
    for (int t = 0; t < T; ++t) {
      const double da = d_a[t] * attn[t] * (1.0 - attn[t]);
      gm.att_w += da * emb.row(t).transpose();
      gm.att_b += da;
      d_emb.row(t) += da * mp.att_w.transpose();
    }
    // embedding conv (kernel 3) backward through ReLU
    for (int t = 0; t < T; ++t) {
      Vec dz(Dp);
      for (int d = 0; d < Dp; ++d)
        dz[d] = pre(t, d) > 0.0 ? d_emb(t, d) : 0.0;
      gm.enc_b += dz;
      if (t > 0) gm.enc_w[0] += dz * in.row(t - 1);
      gm.enc_w[1] += dz * in.row(t);
      if (t + 1 < T) gm.enc_w[2] += dz * in.row(t + 1);
    }
  };
  branch_backward(cache.in_raw, cache.pre_raw, cache.emb_raw,
                  cache.out.attn_raw, d_ar, d_emb_raw, params.raw, g.raw);
  branch_backward(cache.in_flow, cache.pre_flow, cache.emb_flow,
                  cache.out.attn_flow, d_af, d_emb_flow, params.flow, g.flow);
  return g;
}

void save_checkpoint(const std::string& path, const ModelParams& params,
                     std::uint64_t seed, const std::string& config_hash) {
  json h;
  h["D"] = params.cfg.feature_dim;
  h["Dp"] = params.cfg.embed_dim;
  h["C"] = params.cfg.num_classes;
  h["k_mil_ratio"] = params.cfg.k_mil_ratio;
  h["seed"] = seed;
  h["config_hash"] = config_hash;
  h["count"] = params.num_params();
  const std::string text = h.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint: " + path);
  const std::uint32_t len = static_cast<std::uint32_t>(text.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(text.data(), len);
  params.for_each([&out](const double& x) {
    const float f = static_cast<float>(x);
    out.write(reinterpret_cast<const char*>(&f), 4);
  });
  if (!out) throw FormatError("checkpoint write failed: " + path);
}

ModelParams load_checkpoint(const std::string& path, std::uint64_t* seed_out,
                            std::string* config_hash_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (!in) throw FormatError("truncated checkpoint header");
  json h;
  try {
    h = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }
  NetConfig cfg;
  cfg.feature_dim = h.at("D").get<int>();
  cfg.embed_dim = h.at("Dp").get<int>();
  cfg.num_classes = h.at("C").get<int>();
  cfg.k_mil_ratio = h.at("k_mil_ratio").get<double>();
  if (seed_out) *seed_out = h.at("seed").get<std::uint64_t>();
  if (config_hash_out) *config_hash_out = h.at("config_hash").get<std::string>();

  ModelParams p = ModelParams::zeros_like(cfg);
  const std::size_t count = h.at("count").get<std::size_t>();
  if (count != p.num_params())
    throw FormatError("checkpoint parameter count mismatch");
  bool truncated = false;
  p.for_each([&in, &truncated](double& x) {
    float f = 0.0f;
    in.read(reinterpret_cast<char*>(&f), 4);
    if (!in) truncated = true;
    x = static_cast<double>(f);
  });
  if (truncated) throw FormatError("truncated checkpoint blob");
  return p;
}

}  // namespace pwes
