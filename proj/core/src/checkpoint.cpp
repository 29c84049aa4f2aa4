#include "hqdm/checkpoint.hpp"

#include <fstream>

#include "hqdm/tensor_io.hpp"
#include "json.hpp"

namespace hqdm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json quant_to_json(const StudentQuantConfig& q) {
  return json{{"scheme", std::string(to_string(q.scheme))},
              {"w_bits", q.w_bits},
              {"a_bits", q.a_bits},
              {"k_preferred", q.k_preferred},
              {"lora_rank", q.lora_rank},
              {"lora_scaling", q.lora_scaling},
              {"weight_scales_per_timestep", q.weight_scales_per_timestep},
              {"seed", q.seed}};
}

StudentQuantConfig quant_from_json(const json& j) {
  StudentQuantConfig q;
  q.scheme = parse_scheme(j.at("scheme").get<std::string>());
  q.w_bits = j.at("w_bits").get<int>();
  q.a_bits = j.at("a_bits").get<int>();
  q.k_preferred = j.at("k_preferred").get<int>();
  q.lora_rank = j.at("lora_rank").get<std::size_t>();
  q.lora_scaling = j.at("lora_scaling").get<double>();
  q.weight_scales_per_timestep = j.at("weight_scales_per_timestep").get<bool>();
  q.seed = j.at("seed").get<std::uint64_t>();
  return q;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const ToyDenoiser& model, const NoiseSchedule& schedule) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  const DenoiserConfig& c = model.config();
  json manifest{{"format", "hqdm-checkpoint"},
                {"version", 1},
                {"model",
                 {{"image_size", c.image_size},
                  {"base_channels", c.base_channels},
                  {"mid_channels", c.mid_channels},
                  {"hidden", c.hidden},
                  {"timesteps", c.timesteps}}},
                {"schedule", {{"T", schedule.T}, {"beta_start", schedule.beta_start}, {"beta_end", schedule.beta_end}}},
                {"quant", model.quantized() ? quant_to_json(model.quant_config()) : json(nullptr)},
                {"parameters", json::array()}};
  for (const auto& [name, tensor] : model.named_tensors()) {
    const std::string file = name + ".hqt";
    write_tensor(dir / file, tensor);
    manifest["parameters"].push_back({{"name", name}, {"file", file}, {"shape", tensor.shape()}});
  }
  std::ofstream os(dir / "manifest.json");
  if (!os) throw IoError("cannot write manifest in " + dir.string());
  os << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("no manifest.json in " + dir.string());
  json m;
  try {
    m = json::parse(is);
    if (m.at("format") != "hqdm-checkpoint") throw IoError("not an hqdm checkpoint: " + dir.string());
    const json& mc = m.at("model");
    DenoiserConfig c;
    c.image_size = mc.at("image_size").get<std::size_t>();
    c.base_channels = mc.at("base_channels").get<std::size_t>();
    c.mid_channels = mc.at("mid_channels").get<std::size_t>();
    c.hidden = mc.at("hidden").get<std::size_t>();
    c.timesteps = mc.at("timesteps").get<std::size_t>();
    const json& sc = m.at("schedule");
    Checkpoint ck{ToyDenoiser(c, 0),
                  make_schedule(sc.at("T").get<std::size_t>(), sc.at("beta_start").get<double>(),
                                sc.at("beta_end").get<double>())};
    if (!m.at("quant").is_null()) ck.model.enable_quantization(quant_from_json(m.at("quant")));
    if (m.at("parameters").size() != ck.model.named_tensors().size()) {
      throw IoError("checkpoint parameter list does not match the model in " + dir.string());
    }
    for (const json& p : m.at("parameters")) {
      const Tensor t = read_tensor(dir / p.at("file").get<std::string>());
      if (t.shape() != p.at("shape").get<Shape>()) {
        throw IoError("parameter file shape disagrees with manifest for " + p.at("name").get<std::string>());
      }
      ck.model.load_named_tensor(p.at("name").get<std::string>(), t);
    }
    return ck;
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  }
}

}  // namespace hqdm
