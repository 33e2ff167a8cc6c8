#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace idea {

// Minimal ordered JSON document for writing. Insertion order is preserved
// and floats are emitted with %.17g so checkpoints round-trip exactly.
// Parsing goes through nlohmann::json (see load_json below).
class JsonValue {
 public:
  static JsonValue null();
  static JsonValue boolean(bool b);
  static JsonValue number(double v);
  static JsonValue integer(long long v);
  static JsonValue string(std::string s);
  static JsonValue array();
  static JsonValue object();

  static JsonValue from_vector(const Eigen::VectorXd& v);
  static JsonValue from_ints(const std::vector<int>& v);
  // Row-major nested arrays, one inner array per matrix row.
  static JsonValue from_matrix(const Eigen::MatrixXd& m);

  JsonValue& push(JsonValue v);                      // array append
  JsonValue& set(const std::string& key, JsonValue v);  // object insert

  std::string dump(int indent = 2) const;

 private:
  enum class Kind { null_v, bool_v, num_v, int_v, str_v, arr_v, obj_v };
  Kind kind_ = Kind::null_v;
  bool b_ = false;
  double num_ = 0.0;
  long long int_ = 0;
  std::string str_;
  std::vector<JsonValue> arr_;
  std::vector<std::pair<std::string, JsonValue>> obj_;

  bool scalar() const { return kind_ != Kind::arr_v && kind_ != Kind::obj_v; }
  void write(std::string& out, int indent, int depth) const;
};

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// Parses a JSON file, wrapping failures in IoError with the file name.
nlohmann::json load_json(const std::string& path);

// Lookup helpers that name the missing key in the error.
const nlohmann::json& json_field(const nlohmann::json& j, const std::string& key);
Eigen::VectorXd json_vector(const nlohmann::json& j);
Eigen::MatrixXd json_matrix(const nlohmann::json& j);

}  // namespace idea
