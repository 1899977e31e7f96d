#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "entfact/corpus.hpp"
#include "entfact/error.hpp"
#include "entfact/random.hpp"

namespace entfact::synthetic {

// A small closed world: every city owns one lowercase landmark, and that
// pairing is the only world knowledge. Sources name a person and a landmark
// and sometimes the landmark's city; references summarise them and may add a
// city the source never mentions. A missing city that matches the landmark
// is a factual hallucination, any other city is non-factual.

struct City {
  std::string_view name;
  std::string_view landmark;
};

inline constexpr std::string_view kPopularCity = "London";

inline constexpr std::array<City, 13> kCities = {{
    {"London", "palace"},   {"Paris", "louvre"},   {"Rome", "colosseum"}, {"Berlin", "reichstag"},
    {"Madrid", "prado"},    {"Vienna", "hofburg"}, {"Athens", "acropolis"}, {"Cairo", "pyramids"},
    {"Prague", "castle"},   {"Lisbon", "tram"},    {"Dublin", "brewery"}, {"Oslo", "fjord"},
    {"Venice", "gondola"},
}};

// Present only in worlds built with `injected_cities`.
inline constexpr std::array<City, 4> kInjectedCities = {{
    {"Zurich", "lakefront"}, {"Seville", "alcazar"}, {"Kyoto", "shrine"}, {"Quito", "volcano"},
}};

inline constexpr std::array<std::string_view, 24> kPeople = {
    "Alice", "Bruno", "Carla", "Dmitri", "Elena", "Farid", "Greta", "Hugo", "Ines", "Jonas", "Kira", "Luca",
    "Mara",  "Nils",  "Olga",  "Pavel",  "Rosa",  "Sven",  "Tara",  "Umar", "Vera", "Wim",   "Yara", "Zoe",
};

// Verbs scale the noise rate so that some contexts are far noisier than
// others; the multipliers average to one.
struct Verb {
  std::string_view word;
  double noise_multiplier;
};

inline constexpr std::array<Verb, 4> kVerbs = {{
    {"visited", 0.4}, {"toured", 0.7}, {"praised", 1.3}, {"photographed", 1.6},
}};

inline constexpr std::array<std::string_view, 5> kDays = {"Monday", "Tuesday", "Wednesday", "Thursday", "Friday"};

struct WorldConfig {
  std::size_t pairs = 2000;
  // Mean probability that a reference carries a city missing from its source.
  double noise_rate = 0.3;
  // Probability that a source names its landmark's city.
  double city_rate = 0.6;
  // Among noisy references of city-less sources, the share that add the
  // correct city.
  double factual_share = 0.4;
  // Among non-factual references, the share that use the popular city.
  double popular_share = 0.8;
  bool injected_cities = false;
  std::uint64_t seed = 1;
  std::string id_prefix = "syn";
};

struct World {
  Dataset pairs;
  // Correct-knowledge sentences for the prior model.
  std::vector<Tokens> world_corpus;
};

namespace detail {

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[static_cast<std::size_t>(uniform_index(rng, v.size()))];
}

inline bool chance(Rng& rng, double p) { return uniform_real(rng) < p; }

inline Tokens sentence(std::string_view person, std::string_view verb, std::string_view city_or_the,
                       std::string_view landmark) {
  return {std::string(person), std::string(verb), std::string(city_or_the), std::string(landmark), "."};
}

}  // namespace detail

inline std::vector<City> cities(const WorldConfig& cfg) {
  std::vector<City> out(kCities.begin(), kCities.end());
  if (cfg.injected_cities) out.insert(out.end(), kInjectedCities.begin(), kInjectedCities.end());
  return out;
}

inline World generate_world(const WorldConfig& cfg) {
  if (!(cfg.noise_rate >= 0.0 && cfg.noise_rate <= 1.0)) throw InputError("synthetic: noise_rate must lie in [0, 1]");
  Rng rng(cfg.seed);
  const auto city_list = cities(cfg);
  const std::vector<std::string_view> people(kPeople.begin(), kPeople.end());
  const std::vector<Verb> verbs(kVerbs.begin(), kVerbs.end());
  const std::vector<std::string_view> days(kDays.begin(), kDays.end());
  const std::size_t width = std::to_string(cfg.pairs).size();

  World w;
  w.pairs.reserve(cfg.pairs);
  for (std::size_t i = 0; i < cfg.pairs; ++i) {
    const auto person = detail::pick(people, rng);
    const auto& verb = detail::pick(verbs, rng);
    const auto& city = detail::pick(city_list, rng);
    const auto day = detail::pick(days, rng);
    const bool has_city = detail::chance(rng, cfg.city_rate);

    Example ex;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%0*zu", static_cast<int>(width), i);
    ex.document.id = cfg.id_prefix + "-" + buf;
    Tokens& src = ex.document.tokens;
    if (has_city) {
      src = {std::string(person), "travelled", "to", std::string(city.name), "on", std::string(day), "."};
    } else {
      src = {std::string(person), "went", "out", "on", std::string(day), "."};
    }
    for (auto t : {std::string(person), std::string("saw"), std::string("a"), std::string(city.landmark),
                   std::string("there"), std::string(".")})
      src.push_back(t);

    std::string_view slot = has_city ? city.name : std::string_view("the");
    EntityClass city_label = EntityClass::NonHallucinated;
    const double p_noise = std::min(1.0, cfg.noise_rate * verb.noise_multiplier);
    if (detail::chance(rng, p_noise)) {
      if (!has_city && detail::chance(rng, cfg.factual_share)) {
        slot = city.name;
        city_label = EntityClass::FactualHallucination;
      } else {
        std::vector<std::string_view> wrong;
        for (const auto& c : city_list)
          if (c.name != city.name) wrong.push_back(c.name);
        if (city.name != kPopularCity && detail::chance(rng, cfg.popular_share))
          slot = kPopularCity;
        else
          slot = detail::pick(wrong, rng);
        city_label = EntityClass::NonFactualHallucination;
      }
    }

    ex.summary.doc_id = ex.document.id;
    ex.summary.kind = SummaryKind::Reference;
    ex.summary.tokens = detail::sentence(person, verb.word, slot, city.landmark);
    ex.summary.entities.push_back({0, 1, std::string(person), EntityClass::NonHallucinated});
    if (slot != "the") ex.summary.entities.push_back({2, 1, std::string(slot), city_label});
    w.pairs.push_back(std::move(ex));

    w.world_corpus.push_back(detail::sentence(person, verb.word, slot == "the" ? slot : city.name, city.landmark));
  }
  return w;
}

// Labelled entity view used to train the factuality model: same generator,
// independent seed.
inline World generate_labelled(const WorldConfig& cfg, std::uint64_t seed, std::string prefix) {
  WorldConfig c = cfg;
  c.seed = seed;
  c.id_prefix = std::move(prefix);
  return generate_world(c);
}

inline std::vector<std::pair<Tokens, Tokens>> training_pairs(const Dataset& data) {
  std::vector<std::pair<Tokens, Tokens>> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.emplace_back(ex.document.tokens, ex.summary.tokens);
  return out;
}

}  // namespace entfact::synthetic
