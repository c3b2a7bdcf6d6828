#include "msfr/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>

#include "msfr/io.hpp"

namespace msfr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_real(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw std::invalid_argument("config key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw std::invalid_argument("config key '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

int to_int32(const std::string& key, const std::string& v) {
  const long long x = to_int(key, v);
  if (x < -(1LL << 31) || x >= (1LL << 31)) throw std::invalid_argument("config key '" + key + "': out of range");
  return static_cast<int>(x);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<std::string> to_list(const std::string& key, const std::string& v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = v.find(',', start);
    out.push_back(trim(v.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (out.back().empty()) throw std::invalid_argument("config key '" + key + "': empty list element");
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<double> to_reals(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const std::string& s : to_list(key, v)) out.push_back(to_real(key, s));
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
#define MSFR_REAL(KEY, FIELD) t[KEY] = [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_real(k, v); }
#define MSFR_INT(KEY, FIELD) t[KEY] = [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_int32(k, v); }
#define MSFR_PATH(KEY, FIELD) t[KEY] = [](RunConfig& c, const std::string&, const std::string& v) { c.FIELD = v; }
    MSFR_REAL("learning_rate", train.learning_rate);
    MSFR_REAL("momentum", train.momentum);
    MSFR_REAL("weight_decay", train.weight_decay);
    MSFR_REAL("lambda", train.lambda);
    MSFR_INT("iterations", train.iterations);
    MSFR_INT("image_size", train.image_size);
    MSFR_INT("trace_every", train.trace_every);
    t["seed"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      const long long s = to_int(k, v);
      if (s < 0) throw std::invalid_argument("config key 'seed': must be non-negative");
      c.train.seed = static_cast<std::uint64_t>(s);
    };
    t["lr_drop"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lr_drop = to_bool(k, v); };

    t["backbone_channels"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      std::vector<int> ch;
      for (const std::string& s : to_list(k, v)) ch.push_back(to_int32(k, s));
      c.model.backbone.stage_channels = ch;
      c.model.fusion.shrink_channels = ch.back();
      if (ch.size() < 31) c.model.anchors.base_stride = 1 << (ch.size() - 1);
    };
    MSFR_INT("convs_per_stage", model.backbone.convs_per_stage);
    t["anchor_scales"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.model.anchors.scales = to_reals(k, v);
    };
    t["anchor_ratios"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.model.anchors.ratios = to_reals(k, v);
    };
    t["fusion_taps"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      std::vector<int> taps;
      for (const std::string& s : to_list(k, v)) {
        const int t = to_int32(k, s);
        if (t < 3 || t > 5) throw std::invalid_argument("config key 'fusion_taps': taps are 3, 4 or 5");
        taps.push_back(t - 3);
      }
      c.model.fusion.taps = taps;
    };
    MSFR_REAL("gamma_init", model.fusion.gamma_init);
    MSFR_REAL("epsilon", model.fusion.epsilon);
    MSFR_INT("roi_pool_size", model.fusion.roi_pool_size);
    MSFR_INT("rpn_hidden", model.rpn_hidden);
    MSFR_INT("head_hidden", model.head_hidden);

    MSFR_INT("rpn_batch_size", model.rpn_targets.batch_size);
    MSFR_REAL("rpn_positive_fraction", model.rpn_targets.positive_fraction);
    MSFR_REAL("rpn_positive_iou", model.rpn_targets.positive_iou);
    MSFR_REAL("rpn_negative_iou", model.rpn_targets.negative_iou);
    MSFR_INT("det_batch_size", model.det_targets.batch_size);
    MSFR_REAL("det_foreground_fraction", model.det_targets.foreground_fraction);
    t["det_foreground_iou"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.model.det_targets.foreground_iou = c.model.det_targets.background_iou_hi = to_real(k, v);
    };
    MSFR_REAL("det_background_iou_lo", model.det_targets.background_iou_lo);
    t["proposal_nms_threshold"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.model.train_proposals.nms_threshold = c.model.test_proposals.nms_threshold = to_real(k, v);
    };
    t["proposal_min_size"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.model.train_proposals.min_size = c.model.test_proposals.min_size = to_real(k, v);
    };
    MSFR_INT("train_pre_nms_top_n", model.train_proposals.pre_nms_top_n);
    MSFR_INT("train_post_nms_top_n", model.train_proposals.post_nms_top_n);
    MSFR_INT("test_pre_nms_top_n", model.test_proposals.pre_nms_top_n);
    MSFR_INT("test_post_nms_top_n", model.test_proposals.post_nms_top_n);

    MSFR_REAL("iou_threshold", eval.iou_threshold);
    MSFR_REAL("small_max", eval.small_max);
    MSFR_REAL("medium_max", eval.medium_max);
    MSFR_REAL("score_threshold", score_threshold);
    MSFR_REAL("eval_score_threshold", eval_score_threshold);
    MSFR_REAL("nms_threshold", nms_threshold);

    MSFR_INT("n_images", n_images);
    MSFR_REAL("face_min", faces.min);
    MSFR_REAL("face_max", faces.max);

    MSFR_PATH("data_dir", data_dir);
    MSFR_PATH("train_annotations", train_annotations);
    MSFR_PATH("test_annotations", test_annotations);
    MSFR_PATH("checkpoint", checkpoint);
    MSFR_PATH("trace", trace);
    MSFR_PATH("detections_dir", detections_dir);
    MSFR_PATH("overlay_dir", overlay_dir);
    MSFR_PATH("report", report);
#undef MSFR_REAL
#undef MSFR_INT
#undef MSFR_PATH
    return t;
  }();
  return table;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

bool in_unit(double x) { return x > 0.0 && x < 1.0; }

}  // namespace

void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw std::invalid_argument("unknown config key '" + key + "'");
  it->second(cfg, key, value);
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source) {
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t nl = text.find('\n', start);
    std::string line = text.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
    ++line_no;
    start = nl == std::string::npos ? text.size() + 1 : nl + 1;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(source, line_no, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ParseError(source, line_no, "expected key = value");
    try {
      apply_config_value(cfg, key, value);
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::string& path) { apply_config_text(cfg, read_file(path), path); }

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : setters()) keys.push_back(k);
  return keys;
}

void RunConfig::validate() const {
  train.validate();
  eval.validate();
  const auto& m = model;
  const auto& ch = m.backbone.stage_channels;
  require(ch.size() >= 3 && ch.size() <= 8, "backbone_channels needs 3 to 8 stages");
  for (int c : ch) require(c >= 1 && c <= 4096, "backbone channel counts must be in [1, 4096]");
  require(m.backbone.convs_per_stage >= 1 && m.backbone.convs_per_stage <= 8, "convs_per_stage must be in [1, 8]");
  require(m.anchors.base_stride == (1 << (ch.size() - 1)), "anchor base stride must match the backbone depth");
  require(!m.anchors.scales.empty() && !m.anchors.ratios.empty(), "anchor_scales and anchor_ratios must be non-empty");
  for (double s : m.anchors.scales) require(s > 0.0, "anchor scales must be positive");
  for (double r : m.anchors.ratios) require(r > 0.0, "anchor ratios must be positive");
  require(!m.fusion.taps.empty(), "fusion_taps must be non-empty");
  require(std::set<int>(m.fusion.taps.begin(), m.fusion.taps.end()).size() == m.fusion.taps.size(),
          "fusion_taps must not repeat");
  require(m.fusion.gamma_init > 0.0, "gamma_init must be positive");
  require(m.fusion.epsilon > 0.0, "epsilon must be positive");
  require(m.fusion.roi_pool_size >= 1 && m.fusion.roi_pool_size <= 32, "roi_pool_size must be in [1, 32]");
  require(m.rpn_hidden >= 1 && m.head_hidden >= 1, "hidden widths must be positive");
  require(m.rpn_targets.batch_size >= 2, "rpn_batch_size must be at least 2");
  require(in_unit(m.rpn_targets.positive_fraction), "rpn_positive_fraction must be in (0, 1)");
  require(m.rpn_targets.negative_iou > 0.0 && m.rpn_targets.negative_iou <= m.rpn_targets.positive_iou &&
              m.rpn_targets.positive_iou < 1.0,
          "rpn IoU thresholds must satisfy 0 < negative <= positive < 1");
  require(m.det_targets.batch_size >= 2, "det_batch_size must be at least 2");
  require(in_unit(m.det_targets.foreground_fraction), "det_foreground_fraction must be in (0, 1)");
  require(in_unit(m.det_targets.foreground_iou), "det_foreground_iou must be in (0, 1)");
  require(m.det_targets.background_iou_lo >= 0.0 && m.det_targets.background_iou_lo < m.det_targets.background_iou_hi,
          "det_background_iou_lo must be in [0, det_foreground_iou)");
  for (const ProposalConfig* p : {&m.train_proposals, &m.test_proposals}) {
    require(p->pre_nms_top_n >= 1 && p->post_nms_top_n >= 1, "proposal top-n values must be positive");
    require(in_unit(p->nms_threshold), "proposal_nms_threshold must be in (0, 1)");
    require(p->min_size >= 0.0, "proposal_min_size must be non-negative");
  }
  require(score_threshold >= 0.0 && score_threshold < 1.0, "score_threshold must be in [0, 1)");
  require(eval_score_threshold >= 0.0 && eval_score_threshold < 1.0, "eval_score_threshold must be in [0, 1)");
  require(in_unit(nms_threshold), "nms_threshold must be in (0, 1)");
  require(n_images >= 1, "n_images must be positive");
  require(faces.min > 4.0 && faces.min <= faces.max && faces.max <= train.image_size / 2.0,
          "face_min/face_max must satisfy 4 < face_min <= face_max <= image_size / 2");
}

}  // namespace msfr
