#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <string>

#include "json.hpp"

#include "entfact/corpus.hpp"
#include "entfact/error.hpp"

namespace entfact {

using ordered_json = nlohmann::ordered_json;

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw InputError(std::string("missing field \"") + key + "\"");
  return *it;
}

inline Tokens tokens_from(const nlohmann::json& j, const char* key) {
  const auto& v = require(j, key);
  if (!v.is_array()) throw InputError(std::string("field \"") + key + "\" must be an array");
  Tokens out;
  out.reserve(v.size());
  for (const auto& t : v) {
    if (!t.is_string()) throw InputError(std::string("field \"") + key + "\" must hold strings");
    out.push_back(t.get<std::string>());
  }
  return out;
}

inline std::size_t index_from(const nlohmann::json& j, const char* key) {
  const auto& v = require(j, key);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw InputError(std::string("field \"") + key + "\" must be a non-negative integer");
  return v.get<std::size_t>();
}

template <typename Fn>
void for_each_jsonl(std::istream& in, const std::string& origin, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      if (!j.is_object()) throw InputError("record is not a JSON object");
      fn(j);
    } catch (const nlohmann::json::exception& e) {
      throw InputError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

}  // namespace detail

inline Example example_from_json(const nlohmann::json& j) {
  Example ex;
  const auto& id = detail::require(j, "doc_id");
  if (!id.is_string()) throw InputError("field \"doc_id\" must be a string");
  ex.document.id = id.get<std::string>();
  ex.document.tokens = detail::tokens_from(j, "document_tokens");
  if (ex.document.tokens.empty()) throw InputError("document_tokens must be non-empty");
  ex.summary.doc_id = ex.document.id;
  ex.summary.tokens = detail::tokens_from(j, "summary_tokens");
  const auto& kind = detail::require(j, "kind");
  if (kind == "generated") {
    ex.summary.kind = SummaryKind::Generated;
  } else if (kind == "reference") {
    ex.summary.kind = SummaryKind::Reference;
  } else {
    throw InputError("field \"kind\" must be \"generated\" or \"reference\"");
  }
  const auto& ents = detail::require(j, "entities");
  if (!ents.is_array()) throw InputError("field \"entities\" must be an array");
  for (const auto& e : ents) {
    EntityMention m;
    m.start = detail::index_from(e, "start");
    m.length = detail::index_from(e, "length");
    const auto& surface = detail::require(e, "surface");
    if (!surface.is_string()) throw InputError("entity surface must be a string");
    m.surface = surface.get<std::string>();
    auto lab = e.find("label");
    if (lab != e.end() && !lab->is_null()) {
      if (!lab->is_string()) throw InputError("entity label must be a string or null");
      m.label = entity_class_from_string(lab->get<std::string>());
    }
    ex.summary.entities.push_back(std::move(m));
  }
  validate_entities(ex.summary);
  return ex;
}

inline ordered_json example_to_json(const Example& ex) {
  ordered_json j;
  j["doc_id"] = ex.document.id;
  j["document_tokens"] = ex.document.tokens;
  j["summary_tokens"] = ex.summary.tokens;
  j["kind"] = std::string(to_string(ex.summary.kind));
  auto ents = ordered_json::array();
  for (const auto& m : ex.summary.entities) {
    ordered_json e;
    e["start"] = m.start;
    e["length"] = m.length;
    e["surface"] = m.surface;
    if (m.label)
      e["label"] = std::string(to_string(*m.label));
    else
      e["label"] = nullptr;
    ents.push_back(std::move(e));
  }
  j["entities"] = std::move(ents);
  return j;
}

inline Dataset read_dataset(std::istream& in, const std::string& origin = "<stream>") {
  Dataset out;
  std::set<std::string> seen;
  detail::for_each_jsonl(in, origin, [&](const nlohmann::json& j) {
    auto ex = example_from_json(j);
    if (!seen.insert(ex.document.id).second)
      throw InputError("duplicate doc_id '" + ex.document.id + "'");
    out.push_back(std::move(ex));
  });
  return out;
}

inline void write_dataset(std::ostream& out, const Dataset& data) {
  for (const auto& ex : data) out << example_to_json(ex).dump() << '\n';
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  return read_dataset(in, path);
}

inline void save_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  write_dataset(out, data);
}

inline std::vector<MentSpanAnnotation> read_ment(std::istream& in,
                                                 const std::string& origin = "<stream>") {
  std::vector<MentSpanAnnotation> out;
  detail::for_each_jsonl(in, origin, [&](const nlohmann::json& j) {
    MentSpanAnnotation a;
    const auto& id = detail::require(j, "doc_id");
    if (!id.is_string()) throw InputError("field \"doc_id\" must be a string");
    a.doc_id = id.get<std::string>();
    a.summary_tokens = detail::tokens_from(j, "summary_tokens");
    const auto& spans = detail::require(j, "extrinsic_spans");
    if (!spans.is_array()) throw InputError("field \"extrinsic_spans\" must be an array");
    for (const auto& s : spans) {
      if (!s.is_array() || s.size() != 2 || !s[0].is_number_integer() || !s[1].is_number_integer() ||
          s[0].get<long long>() < 0 || s[1].get<long long>() < 0)
        throw InputError("extrinsic span must be [start, length]");
      a.extrinsic_spans.push_back({s[0].get<std::size_t>(), s[1].get<std::size_t>()});
    }
    const auto& f = detail::require(j, "summary_factual");
    if (!f.is_boolean()) throw InputError("field \"summary_factual\" must be a boolean");
    a.summary_factual = f.get<bool>();
    out.push_back(std::move(a));
  });
  return out;
}

// Source documents for MEnt conversion: {"doc_id", "document_tokens"} per line.
// Full dataset records are accepted too; extra fields are ignored.
inline std::vector<Document> read_documents(std::istream& in, const std::string& origin = "<stream>") {
  std::vector<Document> out;
  std::set<std::string> seen;
  detail::for_each_jsonl(in, origin, [&](const nlohmann::json& j) {
    Document d;
    const auto& id = detail::require(j, "doc_id");
    if (!id.is_string()) throw InputError("field \"doc_id\" must be a string");
    d.id = id.get<std::string>();
    d.tokens = detail::tokens_from(j, "document_tokens");
    if (d.tokens.empty()) throw InputError("document_tokens must be non-empty");
    if (!seen.insert(d.id).second) throw InputError("duplicate doc_id '" + d.id + "'");
    out.push_back(std::move(d));
  });
  return out;
}

inline std::vector<Document> load_documents(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  return read_documents(in, path);
}

inline std::vector<MentSpanAnnotation> load_ment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  return read_ment(in, path);
}

}  // namespace entfact
