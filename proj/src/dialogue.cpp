#include "kvret/dialogue.hpp"

#include <regex>
#include <set>

namespace kvret {

std::string_view to_string(Domain d) {
  switch (d) {
    case Domain::schedule: return "schedule";
    case Domain::weather: return "weather";
    case Domain::navigate: return "navigate";
  }
  return "?";
}

std::optional<Domain> parse_domain(std::string_view s) {
  for (auto d : kAllDomains)
    if (to_string(d) == s) return d;
  return std::nullopt;
}

std::string_view to_string(Speaker s) { return s == Speaker::driver ? "driver" : "assistant"; }

std::optional<Speaker> parse_speaker(std::string_view s) {
  if (s == "driver") return Speaker::driver;
  if (s == "assistant") return Speaker::assistant;
  return std::nullopt;
}

std::string RawKb::cell(std::size_t row, const std::string& column) const {
  auto it = rows[row].find(column);
  return it == rows[row].end() ? std::string(kMissing) : it->second;
}

namespace {

struct Forecast {
  std::string condition, low, high;
};

std::optional<Forecast> parse_forecast(const std::string& cell) {
  static const std::regex pattern(R"(^\s*(.+?)\s*,\s*low of\s+(\S+)\s*,\s*high of\s+(\S+)\s*$)",
                                  std::regex::icase);
  std::smatch m;
  if (!std::regex_match(cell, m, pattern)) return std::nullopt;
  return Forecast{m[1], m[2], m[3]};
}

RawKb expand_forecasts(const RawKb& kb) {
  RawKb out;
  out.rows.resize(kb.rows.size());
  for (const auto& col : kb.columns) {
    bool forecast = false;
    for (std::size_t r = 0; r < kb.rows.size(); ++r) forecast = forecast || parse_forecast(kb.cell(r, col)).has_value();
    if (!forecast) {
      out.columns.push_back(col);
      for (std::size_t r = 0; r < kb.rows.size(); ++r) out.rows[r][col] = kb.cell(r, col);
      continue;
    }
    const std::string wc = col + "_weather", lc = col + "_low", hc = col + "_high";
    out.columns.insert(out.columns.end(), {wc, lc, hc});
    for (std::size_t r = 0; r < kb.rows.size(); ++r) {
      const std::string cell = kb.cell(r, col);
      if (auto f = parse_forecast(cell)) {
        out.rows[r][wc] = f->condition;
        out.rows[r][lc] = f->low;
        out.rows[r][hc] = f->high;
      } else {
        out.rows[r][wc] = cell;
        out.rows[r][lc] = std::string(RawKb::kMissing);
        out.rows[r][hc] = std::string(RawKb::kMissing);
      }
    }
  }
  return out;
}

}  // namespace

RawKb parse_kb(const nlohmann::json& j, Domain domain) {
  RawKb kb;
  if (j.is_null()) return kb;
  const nlohmann::json* items = &j;
  if (j.is_object()) {
    if (j.contains("column_names") && !j["column_names"].is_null()) {
      if (!j["column_names"].is_array()) throw KbValidationError("kb: column_names must be an array", {});
      for (const auto& c : j["column_names"]) {
        if (!c.is_string()) throw KbValidationError("kb: column names must be strings", {});
        kb.columns.push_back(c.get<std::string>());
      }
    }
    items = j.contains("items") ? &j["items"] : nullptr;
  }
  if (items && !items->is_null()) {
    if (!items->is_array()) throw KbValidationError("kb: items must be an array", {});
    std::vector<std::string> problems;
    for (std::size_t r = 0; r < items->size(); ++r) {
      const auto& row = (*items)[r];
      if (!row.is_object()) {
        problems.push_back("row " + std::to_string(r) + ": not an object");
        continue;
      }
      std::map<std::string, std::string> cells;
      for (auto it = row.begin(); it != row.end(); ++it) {
        if (!it.value().is_string()) {
          problems.push_back("row " + std::to_string(r) + ": column '" + it.key() + "' is not a string");
          continue;
        }
        cells[it.key()] = it.value().get<std::string>();
      }
      kb.rows.push_back(std::move(cells));
    }
    if (!problems.empty()) throw KbValidationError("kb: malformed rows", std::move(problems));
  }
  if (kb.columns.empty()) {
    std::set<std::string> seen;
    for (const auto& row : kb.rows)
      for (const auto& [k, v] : row) seen.insert(k);
    kb.columns.assign(seen.begin(), seen.end());
  }
  return domain == Domain::weather ? expand_forecasts(kb) : kb;
}

nlohmann::json kb_to_json(const RawKb& kb) {
  nlohmann::json items = nlohmann::json::array();
  for (std::size_t r = 0; r < kb.rows.size(); ++r) {
    nlohmann::json row = nlohmann::json::object();
    for (const auto& c : kb.columns) row[c] = kb.cell(r, c);
    items.push_back(std::move(row));
  }
  return {{"column_names", kb.columns}, {"items", std::move(items)}};
}

}  // namespace kvret
