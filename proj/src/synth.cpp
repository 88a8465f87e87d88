#include "rmc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "binio.hpp"
#include "rmc/rng.hpp"

namespace rmc {

std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

const std::array<const char*, kPatternCount>& pattern_names() {
  static const std::array<const char*, kPatternCount> names{
      "horizontal_oscillation", "vertical_oscillation", "clockwise_orbit", "expand_contract",
      "diagonal_bounce",        "stationary_jitter",    "anti_diagonal_bounce", "counterclockwise_orbit",
      "horizontal_sweep",       "vertical_sweep"};
  return names;
}

namespace {

constexpr double kScaleSwing = 0.35;

double max_half_extent(const SynthConfig& cfg) { return 0.6 * cfg.sprite_px() * (1 + kScaleSwing); }

}  // namespace

void SynthConfig::validate() const {
  if (size <= 0) throw std::invalid_argument("size must be positive");
  if (clip_len < 2) throw std::invalid_argument("clip_len must be at least 2");
  if (act_num < 1 || act_num > kPatternCount)
    throw std::invalid_argument("act_num must be in [1, " + std::to_string(kPatternCount) + "], got " +
                                std::to_string(act_num));
  if (distractors < 0) throw std::invalid_argument("distractors must be non-negative");
  if (!(noise >= 0 && noise <= 1)) throw std::invalid_argument("noise must be in [0, 1]");
  if (background < -1 || background > 2) throw std::invalid_argument("background must be -1, 0, 1 or 2");
  if (sprite < 0 || amplitude < 0) throw std::invalid_argument("sprite and amplitude must be non-negative");
  if (2 * (max_half_extent(*this) + amplitude_px()) + 2 > size)
    throw std::invalid_argument("sprite of " + std::to_string(sprite_px()) + " px with amplitude " +
                                std::to_string(amplitude_px()) + " px does not fit a " + std::to_string(size) +
                                " px frame");
}

Pose pattern_pose(const Motion& m, int t, int L) {
  const double theta = 2 * std::numbers::pi * t / L + m.phase;
  const double a = m.amplitude;
  const double tri = 2 / std::numbers::pi * std::asin(std::sin(theta));
  const double sweep = L > 1 ? 2.0 * t / (L - 1) - 1.0 : 0.0;
  Pose p{m.cx, m.cy, 1.0};
  switch (m.pattern) {
    case 0: p.cx += a * std::sin(theta); break;
    case 1: p.cy += a * std::sin(theta); break;
    case 2:
      p.cx += a * std::cos(theta);
      p.cy += a * std::sin(theta);
      break;
    case 3: p.scale = 1 + kScaleSwing * std::sin(theta); break;
    case 4:
      p.cx += a * tri;
      p.cy += a * tri;
      break;
    case 5:
      if (static_cast<size_t>(t) < m.jitter.size()) {
        p.cx += m.jitter[static_cast<size_t>(t)][0];
        p.cy += m.jitter[static_cast<size_t>(t)][1];
      }
      break;
    case 6:
      p.cx += a * tri;
      p.cy -= a * tri;
      break;
    case 7:
      p.cx += a * std::cos(theta);
      p.cy -= a * std::sin(theta);
      break;
    case 8: p.cx += a * sweep; break;
    case 9: p.cy += a * sweep; break;
    default: throw std::invalid_argument("unknown pattern " + std::to_string(m.pattern));
  }
  return p;
}

namespace {

Actor draw_actor(Rng& rng, const SynthConfig& cfg, int pattern, bool target) {
  Actor a;
  a.sprite.shape = rng.below(2) == 0 ? Shape2D::Rect : Shape2D::Disc;
  const double half = 0.5 * cfg.sprite_px();
  a.sprite.half_w = static_cast<float>(half * rng.uniform(0.8, 1.2));
  a.sprite.half_h = static_cast<float>(half * rng.uniform(0.8, 1.2));
  const float hi = static_cast<float>(rng.uniform(0.75, 1.0));
  const float lo1 = static_cast<float>(rng.uniform(0.0, 0.25)), lo2 = static_cast<float>(rng.uniform(0.0, 0.25));
  if (target)
    a.sprite.color = {hi, lo1, lo2};
  else if (rng.below(2) == 0)
    a.sprite.color = {lo1, hi, lo2};
  else
    a.sprite.color = {lo1, lo2, hi};
  Motion& m = a.motion;
  m.pattern = pattern;
  m.amplitude = cfg.amplitude_px();
  m.phase = 2 * std::numbers::pi * static_cast<double>(rng.below(static_cast<uint64_t>(cfg.clip_len))) / cfg.clip_len;
  const double margin = max_half_extent(cfg) + m.amplitude + 1;
  m.cx = static_cast<float>(rng.uniform(margin, cfg.size - margin));
  m.cy = static_cast<float>(rng.uniform(margin, cfg.size - margin));
  if (pattern == 5) {
    const double j = cfg.size / 40.0;
    for (int t = 0; t < cfg.clip_len; ++t)
      m.jitter.push_back({static_cast<float>(rng.uniform(-j, j)), static_cast<float>(rng.uniform(-j, j))});
  }
  return a;
}

bool covers(const Sprite& s, const Pose& p, double px, double py) {
  const double dx = (px - p.cx) / (s.half_w * p.scale), dy = (py - p.cy) / (s.half_h * p.scale);
  if (s.shape == Shape2D::Rect) return std::abs(dx) <= 1 && std::abs(dy) <= 1;
  return dx * dx + dy * dy <= 1;
}

// Paints one actor into frame t and returns the tight bounds of its pixels.
Box paint(std::vector<float>& frames, const Actor& a, int t, const SynthConfig& cfg) {
  const int S = cfg.size, L = cfg.clip_len;
  const Pose p = pattern_pose(a.motion, t, L);
  const double rx = a.sprite.half_w * p.scale + 1, ry = a.sprite.half_h * p.scale + 1;
  const int x0 = std::max(0, static_cast<int>(std::floor(p.cx - rx))), x1 = std::min(S - 1, static_cast<int>(std::ceil(p.cx + rx)));
  const int y0 = std::max(0, static_cast<int>(std::floor(p.cy - ry))), y1 = std::min(S - 1, static_cast<int>(std::ceil(p.cy + ry)));
  int bx1 = S, by1 = S, bx2 = -1, by2 = -1;
  const size_t plane = static_cast<size_t>(S) * S, chan = plane * static_cast<size_t>(L);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      if (!covers(a.sprite, p, x + 0.5, y + 0.5)) continue;
      const size_t o = static_cast<size_t>(t) * plane + static_cast<size_t>(y) * S + static_cast<size_t>(x);
      for (size_t c = 0; c < 3; ++c) frames[c * chan + o] = a.sprite.color[c];
      bx1 = std::min(bx1, x);
      by1 = std::min(by1, y);
      bx2 = std::max(bx2, x);
      by2 = std::max(by2, y);
    }
  if (bx2 < 0) return {};
  return {static_cast<float>(bx1), static_cast<float>(by1), static_cast<float>(bx2 + 1), static_cast<float>(by2 + 1)};
}

// Analytic bounds at t=0, used only for placement.
Box nominal_box(const Actor& a, const SynthConfig& cfg) {
  const Pose p = pattern_pose(a.motion, 0, cfg.clip_len);
  const double hw = a.sprite.half_w * p.scale, hh = a.sprite.half_h * p.scale;
  return {static_cast<float>(p.cx - hw), static_cast<float>(p.cy - hh), static_cast<float>(p.cx + hw),
          static_cast<float>(p.cy + hh)};
}

}  // namespace

ClipParams draw_clip(uint64_t seed, const SynthConfig& cfg, int pattern) {
  cfg.validate();
  if (pattern < 0 || pattern >= cfg.act_num)
    throw std::invalid_argument("pattern " + std::to_string(pattern) + " outside [0, " + std::to_string(cfg.act_num) + ")");
  Rng rng(seed);
  ClipParams p;
  p.target = draw_actor(rng, cfg, pattern, true);
  const Box tb = nominal_box(p.target, cfg);
  for (int d = 0; d < cfg.distractors; ++d) {
    const int dp = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.act_num)));
    Actor best;
    double best_iou = 2;
    for (int attempt = 0; attempt < 64; ++attempt) {
      Actor a = draw_actor(rng, cfg, dp, false);
      const double o = iou(nominal_box(a, cfg), tb);
      if (o < best_iou) {
        best = a;
        best_iou = o;
      }
      if (o <= 0.3) break;
    }
    p.distractors.push_back(best);
  }
  p.background = cfg.background >= 0 ? cfg.background : static_cast<int>(rng.below(3));
  p.levels = {static_cast<float>(rng.uniform(0.25, 0.6)), static_cast<float>(rng.uniform(0.25, 0.6))};
  p.noise_seed = rng.next();
  return p;
}

ClipRecord render(const ClipParams& p, const SynthConfig& cfg) {
  cfg.validate();
  const int S = cfg.size, L = cfg.clip_len;
  ClipRecord rec;
  rec.size = S;
  rec.clip_len = L;
  rec.act_num = cfg.act_num;
  rec.label = p.target.motion.pattern;
  const size_t plane = static_cast<size_t>(S) * S, chan = plane * static_cast<size_t>(L);
  rec.frames.assign(3 * chan, 0.0f);
  for (int t = 0; t < L; ++t)
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        float v = p.levels[0];
        if (p.background == 1) v = p.levels[0] + (p.levels[1] - p.levels[0]) * (x + 0.5f) / S;
        if (p.background == 2) v = ((x / 8 + y / 8) % 2 == 0) ? p.levels[0] : p.levels[0] + 0.1f;
        const size_t o = static_cast<size_t>(t) * plane + static_cast<size_t>(y) * S + static_cast<size_t>(x);
        for (size_t c = 0; c < 3; ++c) rec.frames[c * chan + o] = v;
      }
  for (int t = 0; t < L; ++t) {
    for (const auto& d : p.distractors) paint(rec.frames, d, t, cfg);
    const Box b = paint(rec.frames, p.target, t, cfg);
    if (!b.valid()) throw std::logic_error("target sprite left the frame");
    rec.boxes.push_back(b);
  }
  if (cfg.noise > 0) {
    Rng rng(p.noise_seed);
    for (auto& v : rec.frames) v = std::clamp(v + static_cast<float>(rng.uniform(-cfg.noise, cfg.noise)), 0.0f, 1.0f);
  }
  return rec;
}

ClipRecord render_clip(uint64_t seed, const SynthConfig& cfg, int pattern) { return render(draw_clip(seed, cfg, pattern), cfg); }

// ---------------------------------------------------------------------------

namespace {
constexpr char kClipMagic[4] = {'R', 'M', 'C', '1'};
}

void write_clip(const ClipRecord& rec, const std::string& path) {
  const size_t L = static_cast<size_t>(rec.clip_len), S = static_cast<size_t>(rec.size);
  if (rec.boxes.size() != L || rec.frames.size() != 3 * L * S * S)
    throw std::invalid_argument("write_clip: record buffers do not match L=" + std::to_string(L) + " S=" + std::to_string(S));
  detail::ByteWriter w;
  w.bytes(kClipMagic, 4);
  w.u32(kClipVersion);
  w.u32(static_cast<uint32_t>(rec.clip_len));
  w.u32(static_cast<uint32_t>(rec.size));
  w.u32(3);
  w.u32(static_cast<uint32_t>(rec.act_num));
  w.u32(static_cast<uint32_t>(rec.label));
  w.u32(rec.clip_id);
  w.u32(static_cast<uint32_t>(rec.split));
  for (const Box& b : rec.boxes) {
    w.f32(b.x1);
    w.f32(b.y1);
    w.f32(b.x2);
    w.f32(b.y2);
  }
  w.f32s(rec.frames);
  w.commit(path);
}

ClipRecord read_clip(const std::string& path) {
  auto r = detail::ByteReader::from_file(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kClipMagic, 4) != 0) throw FormatError(FormatError::Kind::BadMagic, path + ": not an RMC1 clip file");
  const uint32_t version = r.u32();
  if (version != kClipVersion)
    throw FormatError(FormatError::Kind::BadVersion, path + ": unsupported clip version " + std::to_string(version));
  ClipRecord rec;
  rec.clip_len = static_cast<int>(r.u32());
  rec.size = static_cast<int>(r.u32());
  const uint32_t channels = r.u32();
  rec.act_num = static_cast<int>(r.u32());
  rec.label = static_cast<int>(r.u32());
  rec.clip_id = r.u32();
  const uint32_t split = r.u32();
  if (channels != 3) throw FormatError(FormatError::Kind::Mismatch, path + ": expected 3 channels, found " + std::to_string(channels));
  if (split > 1) throw FormatError(FormatError::Kind::Mismatch, path + ": bad split flag " + std::to_string(split));
  if (rec.label < 0 || rec.label >= rec.act_num)
    throw FormatError(FormatError::Kind::Mismatch, path + ": label " + std::to_string(rec.label) + " outside act_num");
  rec.split = static_cast<Split>(split);
  const size_t L = static_cast<size_t>(rec.clip_len), S = static_cast<size_t>(rec.size);
  const size_t expected = 16 * L + 12 * L * S * S;
  if (r.remaining() < expected)
    throw FormatError(FormatError::Kind::Truncated, path + ": " + std::to_string(r.remaining()) + " payload bytes, expected " + std::to_string(expected));
  if (r.remaining() > expected) throw FormatError(FormatError::Kind::Mismatch, path + ": trailing bytes after frame data");
  std::vector<float> box_data(4 * L);
  r.f32s(box_data);
  for (size_t i = 0; i < L; ++i)
    rec.boxes.push_back({box_data[4 * i], box_data[4 * i + 1], box_data[4 * i + 2], box_data[4 * i + 3]});
  rec.frames.resize(3 * L * S * S);
  r.f32s(rec.frames);
  return rec;
}

std::string make_dataset(const std::string& dir, uint64_t seed, int n_train, int n_test, const SynthConfig& cfg) {
  cfg.validate();
  if (n_train < 1 || n_test < 1) throw std::invalid_argument("n_train and n_test must be at least 1");
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ostringstream manifest;
  uint32_t id = 0;
  for (Split split : {Split::Train, Split::Test}) {
    const int n = split == Split::Train ? n_train : n_test;
    for (int i = 0; i < n; ++i, ++id) {
      const int label = i % cfg.act_num;
      ClipRecord rec = render_clip(mix_seed(seed, (static_cast<uint64_t>(split) << 32) | static_cast<uint64_t>(i)), cfg, label);
      rec.clip_id = id;
      rec.split = split;
      char name[32];
      std::snprintf(name, sizeof name, "%s_%04d.rmc", to_string(split).c_str(), i);
      write_clip(rec, (fs::path(dir) / name).string());
      manifest << name << ' ' << to_string(split) << ' ' << label << '\n';
    }
  }
  const std::string path = (fs::path(dir) / "manifest.txt").string();
  detail::ByteWriter w;
  const std::string text = manifest.str();
  w.bytes(text.data(), text.size());
  w.commit(path);
  return path;
}

std::vector<ManifestEntry> read_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw FormatError(FormatError::Kind::Io, "cannot open manifest " + manifest_path);
  std::vector<ManifestEntry> out;
  std::string line, split;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.path >> split >> e.label))
      throw FormatError(FormatError::Kind::Mismatch, manifest_path + ": malformed line " + std::to_string(n));
    try {
      e.split = parse_split(split);
    } catch (const std::invalid_argument&) {
      throw FormatError(FormatError::Kind::Mismatch, manifest_path + ": bad split on line " + std::to_string(n));
    }
    out.push_back(e);
  }
  return out;
}

std::vector<ClipRecord> load_split(const std::string& manifest_path, Split split) {
  namespace fs = std::filesystem;
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<ClipRecord> out;
  for (const auto& e : read_manifest(manifest_path)) {
    if (e.split != split) continue;
    ClipRecord rec = read_clip((base / e.path).string());
    if (rec.label != e.label)
      throw FormatError(FormatError::Kind::Mismatch, e.path + ": label " + std::to_string(rec.label) +
                                                         " disagrees with manifest label " + std::to_string(e.label));
    out.push_back(std::move(rec));
  }
  return out;
}

ClipBatch make_batch(std::span<const ClipRecord> records, std::span<const size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch needs at least one clip");
  const ClipRecord& first = records[indices[0]];
  const int64_t B = static_cast<int64_t>(indices.size()), L = first.clip_len, S = first.size;
  ClipBatch b;
  std::vector<float> data;
  data.reserve(static_cast<size_t>(B * 3 * L * S * S));
  for (size_t i : indices) {
    const ClipRecord& r = records[i];
    if (r.clip_len != L || r.size != S) throw std::invalid_argument("make_batch: clips of different geometry");
    data.insert(data.end(), r.frames.begin(), r.frames.end());
    b.boxes.insert(b.boxes.end(), r.boxes.begin(), r.boxes.end());
    b.labels.push_back(r.label);
  }
  b.clip = Tensor(Shape{B, 3, L, S, S}, std::move(data));
  return b;
}

}  // namespace rmc
