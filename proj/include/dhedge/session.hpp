#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dhedge/environment.hpp"

namespace dhedge {

inline constexpr int kSchemaVersion = 1;

inline constexpr std::array<const char*, 4> kRatingDimensions = {"knowledgeability", "accuracy", "trustworthiness",
                                                                  "attractiveness"};
inline constexpr int kSliderMin = -100;
inline constexpr int kSliderMax = 100;

// Per-session presentation mapping. Logs always hold canonical values; this
// records how they were shown.
struct Counterbalance {
  std::vector<std::size_t> source_order;  // display position -> canonical source index
  std::string word_negative = "fresh";    // shown for -1
  std::string word_positive = "jam";      // shown for +1
  std::vector<std::string> avatars;       // per canonical source

  static Counterbalance identity(std::size_t sources) {
    Counterbalance c;
    for (std::size_t k = 0; k < sources; ++k) {
      c.source_order.push_back(k);
      c.avatars.push_back("avatar-" + std::to_string(k + 1));
    }
    return c;
  }
  const std::string& word(Label l) const { return l == Label::positive ? word_positive : word_negative; }
  friend bool operator==(const Counterbalance&, const Counterbalance&) = default;
};

// Post-task questionnaire, indexed by canonical source.
struct Ratings {
  std::size_t most_accurate = 0;
  std::size_t most_majority = 0;
  std::map<std::string, std::vector<int>> sliders;  // dimension -> value per source
  friend bool operator==(const Ratings&, const Ratings&) = default;
};

// One participant's (or simulated agent's) session: the unit of fitting and
// persistence.
struct SessionData {
  int schema_version = kSchemaVersion;
  std::string session_id;
  std::string condition;
  Counterbalance counterbalance;
  EnvironmentConfig environment;
  ScheduleSpec schedule;
  nlohmann::json provenance = nlohmann::json::object();  // generator, seeds, tool version
  std::vector<TrialRecord> trials;
  std::optional<Ratings> ratings;
  bool complete = false;
  // Fields not in the schema, kept verbatim and keyed by record ("header",
  // "trial 7", "ratings").
  std::map<std::string, nlohmann::json> unknown_fields;

  std::size_t sources() const { return environment.sources.size(); }
  friend bool operator==(const SessionData&, const SessionData&) = default;
};

}  // namespace dhedge
