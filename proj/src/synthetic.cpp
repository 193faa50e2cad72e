#include "kvret/synthetic.hpp"

#include <array>
#include <random>
#include <string>
#include <vector>

#include "kvret/errors.hpp"

namespace kvret {

namespace {

using nlohmann::json;

constexpr std::array kEvents = {
    "dentist appointment", "tennis activity",  "yoga class",       "doctor appointment", "optometrist appointment",
    "swimming lesson",     "piano recital",    "football match",   "board meeting",      "staff meeting",
    "lab checkup",         "dinner party",     "book club",        "chess tournament",   "guitar lesson",
    "team lunch",          "car service",      "hair cut",         "math tutoring",      "art workshop",
    "vet visit",           "parent conference", "gym session",     "movie night",        "coding bootcamp",
    "wine tasting",        "bank visit",       "pottery class",    "choir practice",     "budget review",
};
constexpr std::array kTimes = {"7am", "8am", "9am", "10am", "11am", "1pm", "2pm", "3pm", "4pm", "5pm", "6pm", "7pm", "8pm"};
constexpr std::array kDates = {"the 2nd", "the 4th", "the 6th", "the 9th", "the 11th", "the 13th", "the 15th",
                               "the 17th", "the 19th", "the 21st", "the 24th", "the 28th"};
constexpr std::array kParties = {"boss", "sister", "brother", "mother", "father", "aunt", "tom", "martha", "jon", "ana"};
constexpr std::array kRooms = {"room 50", "room 100", "conference room 102", "room 215", "room 303"};

constexpr std::array kPlaces = {
    "pizza chicago",  "the westin",   "panda express", "hotel keen",   "cafe venetia",   "p.f. changs",
    "sigona farmers market", "mandarin roots", "teavana", "jacks house", "four seasons", "dish parking",
    "willows market", "civic center garage", "chef chu's", "valero",  "mission diner",   "ocean grill",
    "lucky noodle",   "blue bottle", "taco bell",   "red robin",    "golden wok",     "the cheesecake factory",
    "pasta palace",   "sushi house",  "burger barn", "kettle cafe",  "olive garden",   "bagel stop",
};
constexpr std::array kStreets = {"main street", "arastradero road", "el camino real", "stevens creek road",
                                 "university avenue", "alma street", "ames street", "bryant street",
                                 "cedar lane", "pine avenue", "lake drive", "hillview avenue"};
constexpr std::array kDistances = {"1 miles", "2 miles", "3 miles", "4 miles", "5 miles", "6 miles"};
constexpr std::array kTraffic = {"no traffic", "moderate traffic", "heavy traffic", "road block nearby",
                                 "car collision nearby"};
constexpr std::array kTypes = {"restaurant", "coffee or tea place", "chinese restaurant", "pizza restaurant"};

constexpr std::array kWhenQuestions = {"when is my next appointment ?", "what time is my next event ?",
                                       "when do i have to be there ?", "remind me when my next event is"};
constexpr std::array kWhoQuestions = {"who is going to be there ?", "who will attend ?", "who am i meeting ?"};
constexpr std::array kWhereQuestions = {"where is the nearest place to eat ?", "find me somewhere to eat nearby",
                                        "i am hungry , where can i eat ?"};
constexpr std::array kTrafficQuestions = {"how is the traffic on the way ?", "is there any traffic ?",
                                          "what are the road conditions like ?"};
constexpr std::array kThanks = {"thanks", "thank you", "great , thanks"};
constexpr std::array kWelcome = {"you are welcome .", "happy to help .", "anytime ."};

template <typename Pool>
std::string pick(const Pool& pool, std::mt19937_64& rng) {
  return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
}

json turn(const char* speaker, const std::string& utterance) {
  json data = {{"end_dialogue", false}, {"utterance", utterance}};
  if (std::string_view(speaker) == "assistant") {
    data["requested"] = json::object();
    data["slots"] = json::object();
  }
  return {{"turn", speaker}, {"data", data}};
}

json schedule_dialogue(std::mt19937_64& rng) {
  const std::string event = pick(kEvents, rng), time = pick(kTimes, rng), date = pick(kDates, rng),
                    party = pick(kParties, rng), room = pick(kRooms, rng);
  json kb = {{"column_names", {"event", "time", "date", "room", "party"}},
             {"items", json::array({{{"event", event}, {"time", time}, {"date", date}, {"room", room}, {"party", party}}})},
             {"kb_title", "calendar"}};
  json turns = json::array();
  turns.push_back(turn("driver", pick(kWhenQuestions, rng)));
  turns.push_back(turn("assistant", "your next appointment is at " + time + " on " + date + " ."));
  if (std::bernoulli_distribution(0.5)(rng)) {
    turns.push_back(turn("driver", pick(kWhoQuestions, rng)));
    turns.push_back(turn("assistant", "you are meeting with your " + party + " in " + room + " ."));
  }
  turns.push_back(turn("driver", pick(kThanks, rng)));
  turns.push_back(turn("assistant", pick(kWelcome, rng)));
  return {{"dialogue", turns}, {"scenario", {{"kb", kb}, {"task", {{"intent", "schedule"}}}}}};
}

json navigate_dialogue(std::mt19937_64& rng) {
  const std::string place = pick(kPlaces, rng);
  const std::string address = std::to_string(std::uniform_int_distribution<int>(1, 999)(rng)) + " " + pick(kStreets, rng);
  const std::string distance = pick(kDistances, rng), traffic = pick(kTraffic, rng), type = pick(kTypes, rng);
  json kb = {{"column_names", {"poi", "poi_type", "address", "distance", "traffic_info"}},
             {"items", json::array({{{"poi", place},
                                     {"poi_type", type},
                                     {"address", address},
                                     {"distance", distance},
                                     {"traffic_info", traffic}}})},
             {"kb_title", "location information"}};
  json turns = json::array();
  turns.push_back(turn("driver", pick(kWhereQuestions, rng)));
  turns.push_back(turn("assistant", "the closest one is " + distance + " away at " + address + " ."));
  if (std::bernoulli_distribution(0.5)(rng)) {
    turns.push_back(turn("driver", pick(kTrafficQuestions, rng)));
    turns.push_back(turn("assistant", "there is " + traffic + " on the route ."));
  }
  turns.push_back(turn("driver", pick(kThanks, rng)));
  turns.push_back(turn("assistant", pick(kWelcome, rng)));
  return {{"dialogue", turns}, {"scenario", {{"kb", kb}, {"task", {{"intent", "navigate"}}}}}};
}

}  // namespace

json synthetic_records(const SyntheticOptions& options) {
  if (options.train + options.validation > options.dialogues) {
    throw ContractError("synthetic: train + validation exceeds the dialogue count");
  }
  std::mt19937_64 rng(options.seed);
  json records = json::array();
  for (std::size_t i = 0; i < options.dialogues; ++i) {
    json rec = std::bernoulli_distribution(0.5)(rng) ? schedule_dialogue(rng) : navigate_dialogue(rng);
    rec["scenario"]["uuid"] = "synthetic-" + std::to_string(i);
    records.push_back(std::move(rec));
  }
  return records;
}

LoadResult synthetic_corpus(const SyntheticOptions& options) {
  LoadResult loaded = parse_corpus(synthetic_records(options));
  if (!loaded.errors.empty()) throw DataError("synthetic: generated an invalid record: " + loaded.errors[0].message);
  SplitManifest manifest;
  for (std::size_t i = 0; i < loaded.dialogues.size(); ++i) {
    auto& part = i < options.train ? manifest.train : i < options.train + options.validation ? manifest.dev : manifest.test;
    part.push_back(loaded.dialogues[i].id);
  }
  loaded.manifest = std::move(manifest);
  return loaded;
}

}  // namespace kvret
