#pragma once

#include <array>
#include <set>
#include <string>

namespace rems {

// Action labels follow the 60-class NTU RGB+D taxonomy (1-based). Classes
// 41-49 are the medical-condition actions that raise alarms; 50-60 are the
// multi-person interactions excluded from training.
inline constexpr int kMaxLabel = 60;
inline constexpr int kTrainableClassCount = 49;
inline constexpr int kFirstAlarmLabel = 41;
inline constexpr int kLastAlarmLabel = 49;

inline constexpr std::array<const char*, kMaxLabel> kActionNames = {
    "Drink Water",        "Eat Meal",           "Brush Teeth",      "Brush Hair",
    "Drop",               "Pick Up",            "Throw",            "Sit Down",
    "Stand Up",           "Clapping",           "Reading",          "Writing",
    "Tear Up Paper",      "Put On Jacket",      "Take Off Jacket",  "Put On Shoe",
    "Take Off Shoe",      "Put On Glasses",     "Take Off Glasses", "Put On Hat",
    "Take Off Hat",       "Cheer Up",           "Hand Waving",      "Kicking Something",
    "Reach Into Pocket",  "Hopping",            "Jump Up",          "Phone Call",
    "Play With Phone",    "Type On Keyboard",   "Point To Something","Taking Selfie",
    "Check Time",         "Rub Hands",          "Nod Head",         "Shake Head",
    "Wipe Face",          "Salute",             "Put Palms Together","Cross Hands",
    "Sneeze/Cough",       "Staggering",         "Falling Down",     "Headache",
    "Chest Pain",         "Back Pain",          "Neck Pain",        "Nausea/Vomiting",
    "Fan Self",           "Punch/Slap",         "Kicking Person",   "Pushing",
    "Pat On Back",        "Point Finger",       "Hugging",          "Giving Object",
    "Touch Pocket",       "Shaking Hands",      "Walking Towards",  "Walking Apart"};

inline std::string action_name(int label) {
  if (label >= 1 && label <= kMaxLabel) return kActionNames[label - 1];
  return "Class " + std::to_string(label);
}

inline std::set<int> default_alarm_classes() {
  std::set<int> s;
  for (int c = kFirstAlarmLabel; c <= kLastAlarmLabel; ++c) s.insert(c);
  return s;
}

}  // namespace rems
