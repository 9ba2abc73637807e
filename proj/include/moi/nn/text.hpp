#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "moi/nn/layers.hpp"

namespace moi::nn {

// Lowercased word tokens. Speaker tags "U:" / "S:" survive as "u:" / "s:";
// other punctuation is stripped from token edges.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    if (cur != "u:" && cur != "s:") {
      while (!cur.empty() && std::ispunct(static_cast<unsigned char>(cur.back()))) cur.pop_back();
      std::size_t i = 0;
      while (i < cur.size() && std::ispunct(static_cast<unsigned char>(cur[i]))) ++i;
      cur.erase(0, i);
    }
    if (!cur.empty()) out.push_back(cur);
    cur.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  return out;
}

inline bool is_speaker_tag(const std::string& tok) { return tok == "u:" || tok == "s:"; }

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary() : tokens_{"<pad>", "<unk>"} { rebuild_index(); }

  static Vocabulary build(const std::vector<std::string>& texts) {
    std::set<std::string> words;
    for (const auto& t : texts) {
      for (auto& w : tokenize(t)) words.insert(std::move(w));
    }
    Vocabulary v;
    for (const auto& w : words) v.tokens_.push_back(w);
    v.rebuild_index();
    return v;
  }

  int size() const { return static_cast<int>(tokens_.size()); }

  int id(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::vector<std::string>& tokens() const { return tokens_; }

  nlohmann::json to_json() const { return tokens_; }

  static Vocabulary from_json(const nlohmann::json& j) {
    Vocabulary v;
    v.tokens_ = j.get<std::vector<std::string>>();
    if (v.tokens_.size() < 2 || v.tokens_[0] != "<pad>" || v.tokens_[1] != "<unk>") {
      throw ParseError("vocabulary", "missing reserved tokens");
    }
    v.rebuild_index();
    return v;
  }

 private:
  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<int>(i);
  }

  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

struct EncodedText {
  std::vector<Eigen::Index> token_ids;
  // Utterance position counted from the end: 0 = final utterance.
  std::vector<Eigen::Index> segment_ids;
};

inline EncodedText encode_text(const Vocabulary& vocab, std::string_view text, int max_len, int max_segments) {
  std::vector<std::string> toks = tokenize(text);
  if (static_cast<int>(toks.size()) > max_len) {
    toks.erase(toks.begin(), toks.end() - max_len);
  }
  std::vector<int> seg_from_start(toks.size(), 0);
  int seg = -1;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (is_speaker_tag(toks[i]) || seg < 0) ++seg;
    seg_from_start[i] = seg;
  }
  EncodedText e;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    e.token_ids.push_back(vocab.id(toks[i]));
    e.segment_ids.push_back(std::min(seg - seg_from_start[i], max_segments - 1));
  }
  if (e.token_ids.empty()) {
    e.token_ids.push_back(Vocabulary::kPad);
    e.segment_ids.push_back(0);
  }
  return e;
}

struct TextEncoderConfig {
  int dim = 64;
  int heads = 4;
  int ffn_dim = 128;
  int layers = 1;
  int max_len = 40;
  int max_segments = 3;

  nlohmann::json to_json() const {
    return {{"dim", dim}, {"heads", heads}, {"ffn_dim", ffn_dim}, {"layers", layers},
            {"max_len", max_len}, {"max_segments", max_segments}};
  }

  static TextEncoderConfig from_json(const nlohmann::json& j) {
    TextEncoderConfig c;
    c.dim = j.value("dim", c.dim);
    c.heads = j.value("heads", c.heads);
    c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
    c.layers = j.value("layers", c.layers);
    c.max_len = j.value("max_len", c.max_len);
    c.max_segments = j.value("max_segments", c.max_segments);
    return c;
  }
};

// Token + position + utterance-segment embeddings, a small transformer
// encoder, and mean pooling over token states.
struct TextEncoder {
  TextEncoderConfig config;
  ParamId token_embedding = 0;
  ParamId position_embedding = 0;
  ParamId segment_embedding = 0;
  std::vector<EncoderLayer> layers;

  static TextEncoder create(ParameterSet& ps, const std::string& name, int vocab_size, const TextEncoderConfig& cfg,
                            Rng& rng) {
    TextEncoder e;
    e.config = cfg;
    e.token_embedding = ps.add(name + ".token_embedding", normal_matrix(vocab_size, cfg.dim, 0.1, rng));
    e.position_embedding = ps.add(name + ".position_embedding", normal_matrix(cfg.max_len, cfg.dim, 0.02, rng));
    e.segment_embedding = ps.add(name + ".segment_embedding", normal_matrix(cfg.max_segments, cfg.dim, 0.1, rng));
    for (int i = 0; i < cfg.layers; ++i) {
      e.layers.push_back(
          EncoderLayer::create(ps, name + ".layer" + std::to_string(i), cfg.dim, cfg.heads, cfg.ffn_dim, rng));
    }
    return e;
  }

  // Per-token hidden states, tokens x dim.
  Var token_states(Tape& t, const EncodedText& text) const {
    std::vector<Eigen::Index> positions(text.token_ids.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<Eigen::Index>(i);
    Var x = select_rows(t.param(token_embedding), text.token_ids);
    x = add(x, select_rows(t.param(position_embedding), positions));
    x = add(x, select_rows(t.param(segment_embedding), text.segment_ids));
    for (const auto& layer : layers) x = layer(t, x);
    return x;
  }

  // Dialogue-level vector, 1 x dim.
  Var operator()(Tape& t, const EncodedText& text) const { return mean_rows(token_states(t, text)); }
};

}  // namespace moi::nn
