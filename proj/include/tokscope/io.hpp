#pragma once

// JSON persistence (v1) for models, teachers, and semantic vector spaces,
// plus small file helpers shared by the CLI.

#include <tokscope/geometry.hpp>
#include <tokscope/language.hpp>

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace tokscope {

using ordered_json = nlohmann::ordered_json;

inline ordered_json matrix_json(const Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (long i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (long j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix parse_matrix(const ordered_json& j, const char* what) {
  require(j.is_array() && !j.empty(), std::string(what) + ": expected rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  require(cols > 0, std::string(what) + ": expected nested arrays");
  Matrix m(static_cast<long>(j.size()), static_cast<long>(cols));
  for (std::size_t i = 0; i < j.size(); ++i) {
    require(j[i].is_array() && j[i].size() == cols,
            std::string(what) + ": ragged rows");
    for (std::size_t c = 0; c < cols; ++c) {
      require(j[i][c].is_number(), std::string(what) + ": non-numeric entry");
      m(static_cast<long>(i), static_cast<long>(c)) = j[i][c].get<double>();
    }
  }
  return m;
}

inline ordered_json vector_json(const Vector& v) {
  ordered_json arr = ordered_json::array();
  for (long i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

inline Vector parse_vector(const ordered_json& j, const char* what) {
  require(j.is_array(), std::string(what) + ": expected array");
  Vector v(static_cast<long>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    require(j[i].is_number(), std::string(what) + ": non-numeric entry");
    v[static_cast<long>(i)] = j[i].get<double>();
  }
  return v;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path,
                            const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::invalid_argument("cannot write file: " + path);
  out << content;
}

// ---------------------------------------------------------------------------
// Model v1
// ---------------------------------------------------------------------------

inline ordered_json model_json(const TransformerParams& p) {
  validate_params(p);
  ordered_json j;
  j["version"] = "v1";
  j["N"] = p.N;
  j["d"] = p.d;
  j["xi"] = p.xi;
  j["stop_token"] = p.stop_token;
  j["embedding"] = matrix_json(p.embedding);
  j["A"] = matrix_json(p.A);
  j["B"] = matrix_json(p.B);
  return j;
}

inline TransformerParams parse_model(const ordered_json& j) {
  require(j.is_object(), "model: expected object");
  require(j.value("version", "") == "v1", "model: unsupported version");
  TransformerParams p;
  p.N = j.at("N").get<int>();
  p.d = j.at("d").get<int>();
  p.xi = j.at("xi").get<double>();
  p.stop_token = j.at("stop_token").get<int>();
  p.embedding = parse_matrix(j.at("embedding"), "model.embedding");
  p.A = parse_matrix(j.at("A"), "model.A");
  p.B = parse_matrix(j.at("B"), "model.B");
  validate_params(p);
  return p;
}

inline void save_model(const std::string& path, const TransformerParams& p) {
  write_text_file(path, model_json(p).dump(2) + "\n");
}

inline TransformerParams load_model(const std::string& path) {
  return parse_model(ordered_json::parse(read_text_file(path)));
}

// ---------------------------------------------------------------------------
// Teacher v1
// ---------------------------------------------------------------------------

inline ordered_json prior_json(const PromptPrior& prior) {
  ordered_json j;
  j["length"] = prior.length;
  ordered_json prompts = ordered_json::array();
  for (const Tokens& p : prior.prompts) prompts.push_back(p);
  j["prompts"] = std::move(prompts);
  j["probs"] = vector_json(prior.probs);
  return j;
}

inline PromptPrior parse_prior(const ordered_json& j, int N) {
  require(j.is_object(), "prompt_prior: expected object");
  const int length = j.at("length").get<int>();
  if (!j.contains("prompts")) return uniform_prior(N, length);
  std::vector<Tokens> prompts;
  for (const auto& row : j.at("prompts")) {
    Tokens p;
    for (const auto& tok : row) p.push_back(tok.get<int>());
    require(static_cast<int>(p.size()) == length,
            "prompt_prior: prompt length mismatch");
    prompts.push_back(std::move(p));
  }
  Vector probs;
  if (j.contains("probs"))
    probs = parse_vector(j.at("probs"), "prompt_prior.probs");
  else
    probs = Vector::Constant(static_cast<long>(prompts.size()),
                             1.0 / static_cast<double>(prompts.size()));
  PromptPrior prior = explicit_prior(prompts, probs);
  validate_prior(prior);
  return prior;
}

inline ordered_json teacher_json(const TeacherProcess& t) {
  validate_teacher(t);
  ordered_json j;
  j["version"] = "v1";
  j["alphabet_size"] = t.alphabet.size;
  j["stop_token"] = t.alphabet.stop_token;
  if (is_markov(t)) {
    const MarkovTable& mk = std::get<MarkovTable>(t.kind);
    j["kind"] = "markov";
    j["order"] = mk.order;
    j["transitions"] = matrix_json(mk.rows);
  } else {
    j["kind"] = "transformer";
    j["model"] = model_json(std::get<TransformerParams>(t.kind));
  }
  j["prompt_prior"] = prior_json(t.prompt_prior);
  return j;
}

inline TeacherProcess parse_teacher(const ordered_json& j) {
  require(j.is_object(), "teacher: expected object");
  require(j.value("version", "") == "v1", "teacher: unsupported version");
  TeacherProcess t;
  t.alphabet.size = j.at("alphabet_size").get<int>();
  t.alphabet.stop_token = j.at("stop_token").get<int>();
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "markov") {
    MarkovTable mk;
    mk.order = j.at("order").get<int>();
    mk.rows = parse_matrix(j.at("transitions"), "teacher.transitions");
    t.kind = std::move(mk);
  } else if (kind == "transformer") {
    t.kind = parse_model(j.at("model"));
  } else {
    throw std::invalid_argument("teacher: unknown kind `" + kind + "`");
  }
  t.prompt_prior = parse_prior(j.at("prompt_prior"), t.alphabet.size);
  validate_teacher(t);
  return t;
}

inline void save_teacher(const std::string& path, const TeacherProcess& t) {
  write_text_file(path, teacher_json(t).dump(2) + "\n");
}

inline TeacherProcess load_teacher(const std::string& path) {
  return parse_teacher(ordered_json::parse(read_text_file(path)));
}

// ---------------------------------------------------------------------------
// Semantic vector space
// ---------------------------------------------------------------------------

inline ordered_json space_json(const SemanticVectorSpace& s) {
  validate_space(s);
  ordered_json j;
  j["vectors"] = matrix_json(s.vectors);
  j["weights"] = vector_json(s.weights);
  j["dim"] = s.vectors.cols();
  j["count"] = s.vectors.rows();
  return j;
}

struct LoadedSpace {
  SemanticVectorSpace space;
  bool normalized = false;  // rows were rescaled on load
};

inline LoadedSpace parse_space(const ordered_json& j) {
  require(j.is_object(), "space: expected object");
  LoadedSpace out;
  out.space.vectors = parse_matrix(j.at("vectors"), "space.vectors");
  out.space.weights = parse_vector(j.at("weights"), "space.weights");
  require(j.at("dim").get<long>() == out.space.vectors.cols(),
          "space: dim field mismatch");
  require(j.at("count").get<long>() == out.space.vectors.rows(),
          "space: count field mismatch");
  for (long i = 0; i < out.space.vectors.rows(); ++i) {
    const double norm = out.space.vectors.row(i).norm();
    require(norm > 0.0, "space: zero row");
    if (std::abs(norm - 1.0) > 1e-6) out.normalized = true;
    if (std::abs(norm - 1.0) > 1e-12) out.space.vectors.row(i) /= norm;
  }
  validate_space(out.space);
  return out;
}

inline void save_space(const std::string& path, const SemanticVectorSpace& s) {
  write_text_file(path, space_json(s).dump(2) + "\n");
}

inline LoadedSpace load_space(const std::string& path) {
  return parse_space(ordered_json::parse(read_text_file(path)));
}

}  // namespace tokscope
