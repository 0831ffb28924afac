#include "flr/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "flr/errors.hpp"

namespace flr {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'F', 'L', 'R', 'C', 'K', 'P', 'T', '\0'};

void append_tensors(json& header, const ParamSet& params, const char* group) {
  for (const auto& [name, t] : params) {
    header["tensors"].push_back({{"group", group}, {"name", name}, {"shape", t.shape()}});
  }
}

void write_values(std::ofstream& out, const ParamSet& params) {
  for (const auto& [name, t] : params) {
    out.write(reinterpret_cast<const char*>(t.value().data()),
              static_cast<std::streamsize>(t.size() * static_cast<Index>(sizeof(double))));
  }
}

}  // namespace

json model_config_json(const ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model},         {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},       {"d_ff", c.d_ff},               {"max_seq_len", c.max_seq_len},
              {"rope_base", c.rope_base}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<Index>();
  c.d_model = j.at("d_model").get<Index>();
  c.n_layers = j.at("n_layers").get<Index>();
  c.n_heads = j.at("n_heads").get<Index>();
  c.d_ff = j.at("d_ff").get<Index>();
  c.max_seq_len = j.at("max_seq_len").get<Index>();
  c.rope_base = j.at("rope_base").get<double>();
  c.validate();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Recommender& model, const RegWeights* weights,
                     const json& meta) {
  json header;
  header["version"] = kCheckpointVersion;
  header["model"] = model_config_json(model.backbone().config());
  header["n_iters"] = model.n_iters();
  if (model.has_flr()) {
    const auto& fc = model.flr().config();
    header["flr"] = {{"k", fc.n_factors}, {"n_iters", fc.n_iters}, {"gate_hidden", fc.gate_hidden}};
  }
  header["tensors"] = json::array();
  append_tensors(header, model.backbone().params(), "backbone");
  if (model.has_flr()) append_tensors(header, model.flr().params(), "flr");
  if (weights) {
    append_tensors(header, weights->params(), "loss");
    header["loss_trainable"] = weights->s(0).requires_grad();
  }
  header["meta"] = meta;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a sibling then rename so a crash never leaves a torn file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + tmp.string());
    const std::string text = header.dump();
    const std::uint64_t len = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    write_values(out, model.backbone().params());
    if (model.has_flr()) write_values(out, model.flr().params());
    if (weights) write_values(out, weights->params());
    if (!out) throw Error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw Error(path.string() + " is not a checkpoint");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw Error("corrupt checkpoint header: " + std::string(e.what()));
  }
  if (header.value("version", 0) != kCheckpointVersion) {
    throw Error("unsupported checkpoint version " + header.value("version", json(0)).dump());
  }

  ParamSet groups[3];
  const char* names[3] = {"backbone", "flr", "loss"};
  for (const auto& t : header.at("tensors")) {
    auto shape = t.at("shape").get<Shape>();
    const Index rows = shape.size() == 2 ? shape[0] : 1;
    const Index cols = shape.empty() ? 1 : shape.back();
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * static_cast<Index>(sizeof(double))));
    if (!in) throw Error("truncated checkpoint " + path.string());
    const auto group = t.at("group").get<std::string>();
    const auto* it = std::find_if(std::begin(names), std::end(names), [&](const char* g) { return group == g; });
    if (it == std::end(names)) throw Error("unknown tensor group " + group);
    groups[it - std::begin(names)].add(t.at("name").get<std::string>(), Tensor(std::move(m), std::move(shape)));
  }

  const ModelConfig mc = model_config_from_json(header.at("model"));
  groups[0].set_requires_grad(true);
  Backbone backbone(mc, std::move(groups[0]));
  std::optional<FlrModule> flr;
  if (header.contains("flr")) {
    const auto& f = header.at("flr");
    FlrConfig fc{f.at("k").get<Index>(), f.at("n_iters").get<Index>(), f.at("gate_hidden").get<Index>()};
    groups[1].set_requires_grad(true);
    flr.emplace(fc, mc, std::move(groups[1]));
  }
  LoadedCheckpoint out;
  out.model = std::make_unique<Recommender>(std::move(backbone), std::move(flr), header.at("n_iters").get<Index>());
  if (groups[2].size() > 0) {
    groups[2].set_requires_grad(header.value("loss_trainable", true));
    out.weights = std::make_unique<RegWeights>(std::move(groups[2]));
  }
  out.meta = header.value("meta", json::object());
  return out;
}

}  // namespace flr
