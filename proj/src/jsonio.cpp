#include "idea/jsonio.hpp"

#include <fstream>
#include <sstream>

#include "idea/common.hpp"
#include "idea/csv.hpp"

namespace idea {

JsonValue JsonValue::null() { return JsonValue(); }

JsonValue JsonValue::boolean(bool b) {
  JsonValue v;
  v.kind_ = Kind::bool_v;
  v.b_ = b;
  return v;
}

JsonValue JsonValue::number(double x) {
  JsonValue v;
  v.kind_ = Kind::num_v;
  v.num_ = x;
  return v;
}

JsonValue JsonValue::integer(long long x) {
  JsonValue v;
  v.kind_ = Kind::int_v;
  v.int_ = x;
  return v;
}

JsonValue JsonValue::string(std::string s) {
  JsonValue v;
  v.kind_ = Kind::str_v;
  v.str_ = std::move(s);
  return v;
}

JsonValue JsonValue::array() {
  JsonValue v;
  v.kind_ = Kind::arr_v;
  return v;
}

JsonValue JsonValue::object() {
  JsonValue v;
  v.kind_ = Kind::obj_v;
  return v;
}

JsonValue JsonValue::from_vector(const Eigen::VectorXd& x) {
  JsonValue v = array();
  for (Eigen::Index i = 0; i < x.size(); ++i) v.push(number(x[i]));
  return v;
}

JsonValue JsonValue::from_ints(const std::vector<int>& x) {
  JsonValue v = array();
  for (int e : x) v.push(integer(e));
  return v;
}

JsonValue JsonValue::from_matrix(const Eigen::MatrixXd& m) {
  JsonValue v = array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    JsonValue row = array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push(number(m(i, j)));
    v.push(std::move(row));
  }
  return v;
}

JsonValue& JsonValue::push(JsonValue v) {
  if (kind_ != Kind::arr_v) throw ContractViolation("JsonValue::push on non-array");
  arr_.push_back(std::move(v));
  return *this;
}

JsonValue& JsonValue::set(const std::string& key, JsonValue v) {
  if (kind_ != Kind::obj_v) throw ContractViolation("JsonValue::set on non-object");
  obj_.emplace_back(key, std::move(v));
  return *this;
}

namespace {

void write_escaped(std::string& out, const std::string& s) {
  out += '"';
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out += c;
    }
  }
  out += '"';
}

}  // namespace

void JsonValue::write(std::string& out, int indent, int depth) const {
  const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
  const std::string closepad(static_cast<std::size_t>(indent * depth), ' ');
  switch (kind_) {
    case Kind::null_v: out += "null"; return;
    case Kind::bool_v: out += b_ ? "true" : "false"; return;
    case Kind::num_v: out += fmt17(num_); return;
    case Kind::int_v: out += std::to_string(int_); return;
    case Kind::str_v: write_escaped(out, str_); return;
    case Kind::arr_v: {
      bool flat = true;
      for (const auto& e : arr_) flat = flat && e.scalar();
      if (arr_.empty()) {
        out += "[]";
      } else if (flat) {
        out += '[';
        for (std::size_t i = 0; i < arr_.size(); ++i) {
          if (i) out += ", ";
          arr_[i].write(out, indent, depth);
        }
        out += ']';
      } else {
        out += "[\n";
        for (std::size_t i = 0; i < arr_.size(); ++i) {
          out += pad;
          arr_[i].write(out, indent, depth + 1);
          if (i + 1 < arr_.size()) out += ',';
          out += '\n';
        }
        out += closepad + "]";
      }
      return;
    }
    case Kind::obj_v: {
      if (obj_.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      for (std::size_t i = 0; i < obj_.size(); ++i) {
        out += pad;
        write_escaped(out, obj_[i].first);
        out += ": ";
        obj_[i].second.write(out, indent, depth + 1);
        if (i + 1 < obj_.size()) out += ',';
        out += '\n';
      }
      out += closepad + "}";
      return;
    }
  }
}

std::string JsonValue::dump(int indent) const {
  std::string out;
  write(out, indent, 0);
  out += '\n';
  return out;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json load_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("'" + path + "': " + e.what());
  }
}

const nlohmann::json& json_field(const nlohmann::json& j, const std::string& key) {
  auto it = j.find(key);
  if (it == j.end()) throw IoError("missing json field '" + key + "'");
  return *it;
}

Eigen::VectorXd json_vector(const nlohmann::json& j) {
  if (!j.is_array()) throw IoError("expected json array");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

Eigen::MatrixXd json_matrix(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw IoError("expected non-empty json array of arrays");
  const std::size_t cols = j[0].size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j[i].size() != cols) throw IoError("ragged json matrix");
    for (std::size_t k = 0; k < cols; ++k)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = j[i][k].get<double>();
  }
  return m;
}

}  // namespace idea
