#include "gdda/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

using json = nlohmann::json;

namespace gdda {

void save_checkpoint(const std::filesystem::path& stem, const ParameterSet& ps,
                     const json& meta) {
  json manifest;
  manifest["schema"] = "gdda-ckpt/1";
  manifest["dtype"] = "float32";
  manifest["meta"] = meta;
  json params = json::array();
  std::vector<float> blob;
  blob.reserve(static_cast<size_t>(ps.total_coeffs()));
  for (const auto& e : ps.entries()) {
    params.push_back({{"name", e.name},
                      {"rows", e.value.rows()},
                      {"cols", e.value.cols()}});
    for (Eigen::Index r = 0; r < e.value.rows(); ++r)
      for (Eigen::Index c = 0; c < e.value.cols(); ++c)
        blob.push_back(static_cast<float>(e.value(r, c)));
  }
  manifest["params"] = params;

  std::filesystem::path json_path = stem;
  json_path += ".json";
  std::filesystem::path bin_path = stem;
  bin_path += ".bin";

  std::ofstream jout(json_path);
  if (!jout) throw IoError("cannot write " + json_path.string());
  jout << manifest.dump(2) << "\n";
  jout.close();

  std::ofstream bout(bin_path, std::ios::binary);
  if (!bout) throw IoError("cannot write " + bin_path.string());
  if (!blob.empty())
    bout.write(reinterpret_cast<const char*>(blob.data()),
               static_cast<std::streamsize>(blob.size() * sizeof(float)));
  if (!bout) throw IoError("short write to " + bin_path.string());
}

ParameterSet load_checkpoint(const std::filesystem::path& stem,
                             json* meta_out) {
  std::filesystem::path json_path = stem;
  json_path += ".json";
  std::filesystem::path bin_path = stem;
  bin_path += ".bin";

  std::ifstream jin(json_path);
  if (!jin)
    throw MissingArtifactError("missing checkpoint manifest: " +
                               json_path.string());
  json manifest;
  try {
    jin >> manifest;
  } catch (const json::parse_error& e) {
    throw IoError("malformed checkpoint manifest " + json_path.string() +
                  ": " + e.what());
  }
  if (manifest.value("schema", "") != "gdda-ckpt/1")
    throw IoError("unexpected checkpoint schema in " + json_path.string());
  if (manifest.value("dtype", "") != "float32")
    throw IoError("unexpected checkpoint dtype in " + json_path.string());

  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin)
    throw MissingArtifactError("missing checkpoint blob: " + bin_path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(bin)),
                        std::istreambuf_iterator<char>());

  ParameterSet ps;
  size_t offset = 0;
  for (const auto& p : manifest.at("params")) {
    std::string name = p.at("name").get<std::string>();
    Eigen::Index rows = p.at("rows").get<Eigen::Index>();
    Eigen::Index cols = p.at("cols").get<Eigen::Index>();
    size_t count = static_cast<size_t>(rows * cols);
    if (offset + count * sizeof(float) > raw.size())
      throw IoError("checkpoint blob truncated at parameter " + name);
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) {
        float f;
        std::memcpy(&f, raw.data() + offset, sizeof(float));
        offset += sizeof(float);
        m(r, c) = static_cast<double>(f);
      }
    ps.add(name, std::move(m));
  }
  if (offset != raw.size())
    throw IoError("checkpoint blob has trailing bytes: " + bin_path.string());
  if (meta_out != nullptr) *meta_out = manifest.value("meta", json::object());
  return ps;
}

}  // namespace gdda
