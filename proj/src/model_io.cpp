#include "rnnid/model_io.hpp"

#include "rnnid/errors.hpp"

#include <fstream>
#include <sstream>

namespace rnnid {

Json matrix_to_json(const Mat& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return Json{{"shape", {m.rows(), m.cols()}}, {"rows", std::move(rows)}};
}

Mat matrix_from_json(const Json& j, const char* name) {
  try {
    const auto shape = j.at("shape");
    const auto r = shape.at(0).get<Eigen::Index>();
    const auto c = shape.at(1).get<Eigen::Index>();
    const auto& rows = j.at("rows");
    if (static_cast<Eigen::Index>(rows.size()) != r)
      throw ParseError(std::string("matrix ") + name + ": row count does not match shape");
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
      const auto& row = rows.at(static_cast<std::size_t>(i));
      if (static_cast<Eigen::Index>(row.size()) != c)
        throw ParseError(std::string("matrix ") + name + ": column count does not match shape");
      for (Eigen::Index k = 0; k < c; ++k) m(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
    }
    return m;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("matrix ") + name + ": " + e.what());
  }
}

Json vector_to_json(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vec vector_from_json(const Json& j, const char* name) {
  try {
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j.at(i).get<double>();
    return v;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("vector ") + name + ": " + e.what());
  }
}

void put_gate(Json& mats, const GateBlock& g, const char* w, const char* u, const char* b) {
  mats[w] = matrix_to_json(g.W);
  mats[u] = matrix_to_json(g.U);
  mats[b] = vector_to_json(g.b);
}

GateBlock get_gate(const Json& mats, const char* w, const char* u, const char* b) {
  return {matrix_from_json(mats.at(w), w), matrix_from_json(mats.at(u), u),
          vector_from_json(mats.at(b), b)};
}

Json model_to_json(const ModelParams& m) {
  Json j;
  j["format"] = "rnnid-model";
  j["version"] = 1;
  j["architecture"] = std::string(to_string(m.architecture()));
  j["dims"] = {{"n_u", m.dims.n_u}, {"n_y", m.dims.n_y}, {"n_x", m.dims.n_x},
               {"n_regressors", m.dims.n_regressors}};
  j["seed"] = m.seed;
  Json mats = Json::object();
  std::visit(
      [&](const auto& net) {
        using T = std::decay_t<decltype(net)>;
        if constexpr (std::is_same_v<T, NnarxParams>) {
          j["activation"] = std::string(to_string(net.activation));
          j["lipschitz"] = net.lipschitz;
          mats["U0"] = matrix_to_json(net.U0);
          mats["b0"] = vector_to_json(net.b0);
          mats["W1"] = matrix_to_json(net.W1);
          mats["U1"] = matrix_to_json(net.U1);
          mats["b1"] = vector_to_json(net.b1);
        } else if constexpr (std::is_same_v<T, EsnParams>) {
          j["activation"] = "tanh";
          mats["W_x"] = matrix_to_json(net.W_x);
          mats["W_u"] = matrix_to_json(net.W_u);
          mats["W_y"] = matrix_to_json(net.W_y);
          mats["W_out1"] = matrix_to_json(net.W_out1);
          mats["W_out2"] = matrix_to_json(net.W_out2);
          j["spectral_norm_Wx"] = net.spectral_norm_Wx;
        } else if constexpr (std::is_same_v<T, LstmParams>) {
          put_gate(mats, net.forget, "W_f", "U_f", "b_f");
          put_gate(mats, net.input, "W_i", "U_i", "b_i");
          put_gate(mats, net.cell, "W_c", "U_c", "b_c");
          put_gate(mats, net.output, "W_o", "U_o", "b_o");
          mats["U_y"] = matrix_to_json(net.U_y);
          mats["b_y"] = vector_to_json(net.b_y);
        } else {
          put_gate(mats, net.candidate, "W_r", "U_r", "b_r");
          put_gate(mats, net.update, "W_z", "U_z", "b_z");
          put_gate(mats, net.reset, "W_f", "U_f", "b_f");
          mats["U_o"] = matrix_to_json(net.U_o);
          mats["b_o"] = vector_to_json(net.b_o);
        }
      },
      m.net);
  j["matrices"] = std::move(mats);
  return j;
}

ModelParams model_from_json(const Json& j) {
  ModelParams m;
  try {
    if (!j.is_object()) throw ParseError("model document must be a JSON object");
    if (j.value("format", std::string{}) != "rnnid-model")
      throw ParseError("not an rnnid model file (missing format tag)");
    const Architecture arch = architecture_from_string(j.at("architecture").get<std::string>());
    const auto& d = j.at("dims");
    m.dims = {d.at("n_u").get<int>(), d.at("n_y").get<int>(), d.at("n_x").get<int>(),
              d.value("n_regressors", 1)};
    m.seed = j.value("seed", std::uint64_t{0});
    const auto& mats = j.at("matrices");
    switch (arch) {
      case Architecture::nnarx: {
        NnarxParams p;
        p.activation = activation_from_string(j.value("activation", std::string("tanh")));
        p.lipschitz = j.value("lipschitz", 1.0);
        p.U0 = matrix_from_json(mats.at("U0"), "U0");
        p.b0 = vector_from_json(mats.at("b0"), "b0");
        p.W1 = matrix_from_json(mats.at("W1"), "W1");
        p.U1 = matrix_from_json(mats.at("U1"), "U1");
        p.b1 = vector_from_json(mats.at("b1"), "b1");
        m.net = std::move(p);
        break;
      }
      case Architecture::esn: {
        EsnParams p;
        p.W_x = matrix_from_json(mats.at("W_x"), "W_x");
        p.W_u = matrix_from_json(mats.at("W_u"), "W_u");
        p.W_y = matrix_from_json(mats.at("W_y"), "W_y");
        p.W_out1 = matrix_from_json(mats.at("W_out1"), "W_out1");
        p.W_out2 = matrix_from_json(mats.at("W_out2"), "W_out2");
        p.spectral_norm_Wx = j.value("spectral_norm_Wx", 0.0);
        m.net = std::move(p);
        break;
      }
      case Architecture::lstm: {
        LstmParams p;
        p.forget = get_gate(mats, "W_f", "U_f", "b_f");
        p.input = get_gate(mats, "W_i", "U_i", "b_i");
        p.cell = get_gate(mats, "W_c", "U_c", "b_c");
        p.output = get_gate(mats, "W_o", "U_o", "b_o");
        p.U_y = matrix_from_json(mats.at("U_y"), "U_y");
        p.b_y = vector_from_json(mats.at("b_y"), "b_y");
        m.net = std::move(p);
        break;
      }
      case Architecture::gru: {
        GruParams p;
        p.candidate = get_gate(mats, "W_r", "U_r", "b_r");
        p.update = get_gate(mats, "W_z", "U_z", "b_z");
        p.reset = get_gate(mats, "W_f", "U_f", "b_f");
        p.U_o = matrix_from_json(mats.at("U_o"), "U_o");
        p.b_o = vector_from_json(mats.at("b_o"), "b_o");
        m.net = std::move(p);
        break;
      }
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("model file: ") + e.what());
  }
  validate(m);
  return m;
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    std::ostringstream os;
    os << path.string() << ": parse error at byte " << e.byte << ": " << e.what();
    throw ParseError(os.str());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

void save_model(const std::filesystem::path& path, const ModelParams& m) {
  write_json_file(path, model_to_json(m));
}

ModelParams load_model(const std::filesystem::path& path) { return model_from_json(read_json_file(path)); }

}  // namespace rnnid
