#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace kvret {

enum class Domain { schedule, weather, navigate };

inline constexpr Domain kAllDomains[] = {Domain::schedule, Domain::weather, Domain::navigate};

std::string_view to_string(Domain d);
std::optional<Domain> parse_domain(std::string_view s);

enum class Speaker { driver, assistant };

std::string_view to_string(Speaker s);
std::optional<Speaker> parse_speaker(std::string_view s);

/// A per-dialogue knowledge base as columns and string-valued rows.
struct RawKb {
  static constexpr std::string_view kMissing = "-";

  std::vector<std::string> columns;
  std::vector<std::map<std::string, std::string>> rows;

  bool empty() const { return rows.empty(); }
  /// Cell value, or the missing marker when the row lacks the column.
  std::string cell(std::size_t row, const std::string& column) const;
};

/// Raised for malformed KB documents; lists every offending row.
class KbValidationError : public std::runtime_error {
 public:
  KbValidationError(const std::string& what, std::vector<std::string> problems)
      : std::runtime_error(what), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Parses `{"column_names": [...], "items": [...]}` (or a bare items array,
/// or null for no KB). Weather forecast cells of the form
/// "<condition>, low of <t>, high of <t>" are split into three columns
/// `<day>_weather`, `<day>_low`, `<day>_high`.
RawKb parse_kb(const nlohmann::json& j, Domain domain);
nlohmann::json kb_to_json(const RawKb& kb);

struct Turn {
  Speaker speaker = Speaker::driver;
  std::string utterance;
  /// Raw tokens after loading; canonical tokens after preprocessing.
  std::vector<std::string> tokens;
  std::map<std::string, std::string> slots;
};

struct Dialogue {
  std::string id;
  Domain domain = Domain::schedule;
  std::vector<Turn> turns;
  RawKb kb;
};

}  // namespace kvret
