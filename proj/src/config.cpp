#include "rmc/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace rmc {

namespace {

template <typename V>
V parse_number(const std::string& key, const std::string& s) {
  V v{};
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) throw std::invalid_argument("invalid value '" + s + "' for " + key);
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw std::invalid_argument("invalid boolean '" + s + "' for " + key);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename V>
Field field(V RunConfig::*m) {
  Field f;
  f.set = [m](RunConfig& c, const std::string& k, const std::string& v) {
    if constexpr (std::is_same_v<V, std::string>)
      c.*m = v;
    else if constexpr (std::is_same_v<V, bool>)
      c.*m = parse_bool(k, v);
    else
      c.*m = parse_number<V>(k, v);
  };
  f.get = [m](const RunConfig& c) {
    if constexpr (std::is_same_v<V, std::string>)
      return c.*m;
    else if constexpr (std::is_same_v<V, bool>)
      return std::string(c.*m ? "true" : "false");
    else if constexpr (std::is_floating_point_v<V>)
      return fmt(c.*m);
    else
      return std::to_string(c.*m);
  };
  return f;
}

const std::vector<std::pair<std::string, Field>>& table() {
  static const std::vector<std::pair<std::string, Field>> t{
      {"backbone", field(&RunConfig::backbone)},
      {"depth", field(&RunConfig::depth)},
      {"width", field(&RunConfig::width)},
      {"size", field(&RunConfig::size)},
      {"clip_len", field(&RunConfig::clip_len)},
      {"act_num", field(&RunConfig::act_num)},
      {"tap_channels", field(&RunConfig::tap_channels)},
      {"anchors", field(&RunConfig::anchors)},
      {"crop_size", field(&RunConfig::crop_size)},
      {"improved", field(&RunConfig::improved)},
      {"localize", field(&RunConfig::localize)},
      {"reg_hidden", field(&RunConfig::reg_hidden)},
      {"lambda1", field(&RunConfig::lambda1)},
      {"lambda2", field(&RunConfig::lambda2)},
      {"lr", field(&RunConfig::lr)},
      {"momentum", field(&RunConfig::momentum)},
      {"weight_decay", field(&RunConfig::weight_decay)},
      {"iterations", field(&RunConfig::iterations)},
      {"batch", field(&RunConfig::batch)},
      {"seed", field(&RunConfig::seed)},
      {"lr_decay_at", field(&RunConfig::lr_decay_at)},
      {"lr_decay", field(&RunConfig::lr_decay)},
      {"log_every", field(&RunConfig::log_every)},
      {"eval_iou", field(&RunConfig::eval_iou)},
      {"pos_iou", field(&RunConfig::pos_iou)},
      {"neg_iou", field(&RunConfig::neg_iou)},
      {"max_samples", field(&RunConfig::max_samples)},
      {"train_crop", field(&RunConfig::train_crop)},
      {"data", field(&RunConfig::data)},
      {"train_count", field(&RunConfig::train_count)},
      {"test_count", field(&RunConfig::test_count)},
      {"distractors", field(&RunConfig::distractors)},
      {"noise", field(&RunConfig::noise)},
      {"background", field(&RunConfig::background)},
      {"out", field(&RunConfig::out)},
      {"checkpoint", field(&RunConfig::checkpoint)},
  };
  return t;
}

const Field& lookup(const std::string& key) {
  for (const auto& [k, f] : table())
    if (k == key) return f;
  throw std::invalid_argument("unknown configuration key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) { lookup(key).set(*this, key, value); }

std::string RunConfig::get(const std::string& key) const { return lookup(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> v;
    for (const auto& [name, f] : table()) v.push_back(name);
    return v;
  }();
  return k;
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(n) + ": expected key = value");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& [k, f] : table()) s += k + " = " + f.get(*this) + "\n";
  return s;
}

NetConfig RunConfig::net() const {
  NetConfig c;
  c.backbone.kind = parse_backbone_kind(backbone);
  c.backbone.depth = depth;
  c.backbone.width = WidthMultiplier::parse(width);
  c.backbone.input_size = size;
  c.backbone.clip_len = clip_len;
  c.backbone.num_classes = act_num;
  c.backbone.tap_channels = tap_channels;
  c.backbone.conv5_spatial_stride = 1;
  c.anchors = AnchorConfig::preset(anchors);
  c.crop_size = crop_size;
  c.improved = improved;
  c.localize = localize;
  c.reg_hidden = reg_hidden;
  c.validate();
  return c;
}

TrainConfig RunConfig::train() const {
  TrainConfig c;
  c.lambda1 = lambda1;
  c.lambda2 = lambda2;
  c.sgd = {lr, momentum, weight_decay};
  c.iterations = iterations;
  c.batch_clips = batch;
  c.seed = seed;
  c.lr_decay_at = lr_decay_at;
  c.lr_decay = lr_decay;
  c.log_every = log_every;
  c.eval_iou = eval_iou;
  c.assign = {pos_iou, neg_iou, max_samples};
  if (train_crop == "proposal")
    c.train_crop = CropSource::Proposal;
  else if (train_crop == "gt")
    c.train_crop = CropSource::GroundTruth;
  else
    throw std::invalid_argument("train_crop must be proposal or gt, got '" + train_crop + "'");
  c.validate();
  return c;
}

SynthConfig RunConfig::synth() const {
  SynthConfig c;
  c.size = size;
  c.clip_len = clip_len;
  c.act_num = act_num;
  c.distractors = distractors;
  c.noise = static_cast<float>(noise);
  c.background = background;
  c.validate();
  return c;
}

}  // namespace rmc
