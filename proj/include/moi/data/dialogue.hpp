#pragma once

#include <span>
#include <string>

#include "moi/core/error.hpp"
#include "moi/data/types.hpp"

namespace moi {

inline constexpr std::size_t kDialogueWindow = 3;

inline const char* speaker_tag(Speaker s) { return s == Speaker::kUser ? "U:" : "S:"; }

// Encodes the last (up to) three utterances of a history that ends with the
// current user utterance as "U: <u_{i-1}> S: <s_{i-1}> U: <u_i>".
inline std::string encode_dialogue_context(std::span<const Utterance> history) {
  if (history.empty()) throw InvalidInput("dialogue history is empty");
  if (history.back().speaker != Speaker::kUser) {
    throw InvalidInput("dialogue history must end with a user utterance");
  }
  const std::size_t first = history.size() > kDialogueWindow ? history.size() - kDialogueWindow : 0;
  std::string out;
  for (std::size_t i = first; i < history.size(); ++i) {
    if (!out.empty()) out += ' ';
    out += speaker_tag(history[i].speaker);
    out += ' ';
    out += history[i].text;
  }
  return out;
}

// Same encoding for the user turn `user_turn` (1-based) of a full dialogue.
inline std::string encode_dialogue_context(std::span<const Utterance> dialogue, int user_turn) {
  if (dialogue.empty()) throw InvalidInput("dialogue history is empty");
  if (user_turn < 1) throw InvalidInput("user turn index must be >= 1");
  int seen = 0;
  for (std::size_t i = 0; i < dialogue.size(); ++i) {
    if (dialogue[i].speaker == Speaker::kUser && ++seen == user_turn) {
      return encode_dialogue_context(dialogue.first(i + 1));
    }
  }
  throw InvalidInput("dialogue has no user turn " + std::to_string(user_turn));
}

}  // namespace moi
