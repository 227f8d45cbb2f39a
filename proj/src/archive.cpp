#include "tml/archive.hpp"

#include <fstream>

#include "tml/error.hpp"

namespace tml {
using nlohmann::json;

namespace {

json vec_to_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Vector vec_from_json(const json& j) {
  const auto values = j.get<std::vector<double>>();
  Vector v(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) v(static_cast<Eigen::Index>(i)) = values[i];
  return v;
}

json matrix_to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw ValidationError("model archive: matrix size mismatch");
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

} // namespace

json spec_to_json(const LearnerSpec& spec) {
  json j;
  j["kind"] = to_string(spec.kind);
  j["hyperparams"] = json::object();
  for (const auto& [k, v] : spec.hyperparams) j["hyperparams"][k] = v;
  if (!spec.lambda_grid.empty()) j["lambda_grid"] = spec.lambda_grid;
  j["seed"] = spec.seed;
  return j;
}

LearnerSpec spec_from_json(const json& j) {
  LearnerSpec spec;
  try {
    spec.kind = parse_learner_kind(j.at("kind").get<std::string>());
    if (j.contains("hyperparams"))
      for (const auto& [k, v] : j.at("hyperparams").items()) spec.hyperparams[k] = v.get<double>();
    if (j.contains("lambda_grid")) spec.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
    spec.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw ValidationError(std::string("learner spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

json model_to_json(const FittedModel& model) {
  json j;
  j["format"] = "tml-model";
  j["version"] = kModelArchiveVersion;
  j["spec"] = spec_to_json(model.spec());
  j["feature_count"] = model.feature_count();
  j["train"] = {{"task_id", model.provenance().task_id},
                {"row_ids", model.provenance().row_ids},
                {"fingerprint", model.provenance().fingerprint}};
  j["standardization"] = {{"mean", vec_to_json(model.standardization().mean)},
                          {"scale", vec_to_json(model.standardization().scale)}};
  json state;
  if (const auto* r = std::get_if<RidgeState>(&model.state())) {
    state = {{"type", "ridge"}, {"intercept", r->intercept}, {"coef", vec_to_json(r->coef)}, {"lambda", r->lambda}};
    if (!r->cv_rmse.empty()) state["cv_rmse"] = r->cv_rmse;
  } else if (const auto* f = std::get_if<ForestState>(&model.state())) {
    state = {{"type", "forest"}, {"y_min", f->y_min}, {"y_max", f->y_max}};
    json trees = json::array();
    for (const auto& tree : f->trees) {
      // columnar node arrays keep archives compact
      std::vector<std::int32_t> feature, left, right;
      std::vector<double> threshold, value;
      for (const auto& n : tree.nodes) {
        feature.push_back(n.feature);
        left.push_back(n.left);
        right.push_back(n.right);
        threshold.push_back(n.threshold);
        value.push_back(n.value);
      }
      trees.push_back({{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right}, {"value", value}});
    }
    state["trees"] = std::move(trees);
  } else {
    const auto& s = std::get<SvrState>(model.state());
    state = {{"type", "svr"},
             {"train", matrix_to_json(s.train)},
             {"alpha", vec_to_json(s.alpha)},
             {"alpha_star", vec_to_json(s.alpha_star)},
             {"bias", s.bias},
             {"sigma", s.sigma},
             {"iterations", s.iterations},
             {"kkt_violation", s.kkt_violation}};
  }
  j["state"] = std::move(state);
  return j;
}

FittedModel model_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "tml-model") throw ValidationError("not a model archive");
    const int version = j.at("version").get<int>();
    if (version != kModelArchiveVersion)
      throw ValidationError("unsupported model archive version " + std::to_string(version));
    LearnerSpec spec = spec_from_json(j.at("spec"));
    const auto p = j.at("feature_count").get<std::size_t>();
    TrainProvenance prov{j.at("train").at("task_id").get<std::string>(),
                         j.at("train").at("row_ids").get<std::vector<std::string>>(),
                         j.at("train").at("fingerprint").get<std::string>()};
    Standardization st{vec_from_json(j.at("standardization").at("mean")),
                       vec_from_json(j.at("standardization").at("scale"))};
    if (static_cast<std::size_t>(st.mean.size()) != p || static_cast<std::size_t>(st.scale.size()) != p)
      throw ValidationError("standardization length does not match feature_count");

    const json& s = j.at("state");
    const auto type = s.at("type").get<std::string>();
    FittedModel::State state;
    if (type == "ridge") {
      RidgeState r;
      r.intercept = s.at("intercept").get<double>();
      r.coef = vec_from_json(s.at("coef"));
      r.lambda = s.at("lambda").get<double>();
      if (s.contains("cv_rmse")) r.cv_rmse = s.at("cv_rmse").get<std::vector<double>>();
      if (static_cast<std::size_t>(r.coef.size()) != p) throw ValidationError("coefficient count mismatch");
      state = std::move(r);
    } else if (type == "forest") {
      ForestState f;
      f.y_min = s.at("y_min").get<double>();
      f.y_max = s.at("y_max").get<double>();
      for (const auto& t : s.at("trees")) {
        const auto feature = t.at("feature").get<std::vector<std::int32_t>>();
        const auto threshold = t.at("threshold").get<std::vector<double>>();
        const auto left = t.at("left").get<std::vector<std::int32_t>>();
        const auto right = t.at("right").get<std::vector<std::int32_t>>();
        const auto value = t.at("value").get<std::vector<double>>();
        const std::size_t count = feature.size();
        if (count == 0 || threshold.size() != count || left.size() != count || right.size() != count ||
            value.size() != count)
          throw ValidationError("malformed tree");
        RegressionTree tree;
        for (std::size_t i = 0; i < count; ++i) {
          const auto in_range = [&](std::int32_t c) { return c > static_cast<std::int32_t>(i) && c < static_cast<std::int32_t>(count); };
          if (feature[i] >= 0 && (feature[i] >= static_cast<std::int32_t>(p) || !in_range(left[i]) || !in_range(right[i])))
            throw ValidationError("malformed tree node");
          tree.nodes.push_back(TreeNode{feature[i], threshold[i], left[i], right[i], value[i]});
        }
        f.trees.push_back(std::move(tree));
      }
      if (f.trees.empty()) throw ValidationError("forest has no trees");
      state = std::move(f);
    } else if (type == "svr") {
      SvrState v;
      v.train = matrix_from_json(s.at("train"));
      v.alpha = vec_from_json(s.at("alpha"));
      v.alpha_star = vec_from_json(s.at("alpha_star"));
      v.bias = s.at("bias").get<double>();
      v.sigma = s.at("sigma").get<double>();
      v.iterations = s.value("iterations", std::size_t{0});
      v.kkt_violation = s.value("kkt_violation", 0.0);
      if (static_cast<std::size_t>(v.train.cols()) != p || v.alpha.size() != v.train.rows() ||
          v.alpha_star.size() != v.train.rows())
        throw ValidationError("svr state shape mismatch");
      state = std::move(v);
    } else {
      throw ValidationError("unknown model state type '" + type + "'");
    }
    return FittedModel(std::move(spec), p, std::move(st), std::move(state), std::move(prov));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model archive: ") + e.what());
  }
}

void save_model(const FittedModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write model archive '" + path.string() + "'");
  out << model_to_json(model).dump() << '\n';
}

FittedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open model archive '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  try {
    return model_from_json(j);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

} // namespace tml
