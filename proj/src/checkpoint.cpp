#include "autoseg/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "autoseg/error.hpp"

namespace autoseg {

namespace {

constexpr char kMagic[8] = {'A', 'S', 'E', 'G', 'C', 'K', 'P', '1'};

}  // namespace

nlohmann::json CheckpointMeta::to_json() const {
  return {{"spec", spec.to_json()}, {"fold", fold},       {"epoch", epoch},
          {"tag", tag},             {"classes", class_names}, {"metrics", metrics}};
}

CheckpointMeta CheckpointMeta::from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  m.spec = NetworkSpec::from_json(j.at("spec"));
  m.fold = j.at("fold").get<int>();
  m.epoch = j.at("epoch").get<int>();
  m.tag = j.at("tag").get<std::string>();
  m.class_names = j.at("classes").get<std::vector<std::string>>();
  m.metrics = j.at("metrics").get<std::map<std::string, double>>();
  return m;
}

std::string checkpoint_filename(const std::string& tag, int fold) {
  return "model_" + tag + "_fold" + std::to_string(fold) + ".ckpt";
}

void save_checkpoint(const std::string& path, SegResNet& net, const CheckpointMeta& meta) {
  const auto params = net.parameters();
  const auto buffers = net.buffers();
  nlohmann::json header = meta.to_json();
  header["tensors"] = nlohmann::json::array();
  for (auto* p : params) header["tensors"].push_back({{"name", p->name}, {"size", p->value.numel()}});
  for (const auto& b : buffers) header["tensors"].push_back({{"name", b.name}, {"size", b.values->size()}});
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path);
    out.write(kMagic, sizeof kMagic);
    const uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (auto* p : params) {
      out.write(reinterpret_cast<const char*>(p->value.data()),
                static_cast<std::streamsize>(p->value.numel() * sizeof(float)));
    }
    for (const auto& b : buffers) {
      out.write(reinterpret_cast<const char*>(b.values->data()),
                static_cast<std::streamsize>(b.values->size() * sizeof(float)));
    }
    if (!out) throw IoError("short write on checkpoint " + path);
  }
  std::rename(tmp.c_str(), path.c_str());
}

namespace {

nlohmann::json read_header(std::ifstream& in, const std::string& path) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw ParseError(path + ": not an autoseg checkpoint");
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (uint64_t{1} << 30)) throw ParseError(path + ": corrupt checkpoint header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ParseError(path + ": truncated checkpoint header");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::ifstream open_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  return in;
}

}  // namespace

CheckpointMeta read_checkpoint_meta(const std::string& path) {
  auto in = open_checkpoint(path);
  return CheckpointMeta::from_json(read_header(in, path));
}

LoadedModel load_checkpoint(const std::string& path) {
  auto in = open_checkpoint(path);
  const nlohmann::json header = read_header(in, path);
  LoadedModel out;
  try {
    out.meta = CheckpointMeta::from_json(header);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  out.net = std::make_unique<SegResNet>(out.meta.spec);
  const auto params = out.net->parameters();
  const auto buffers = out.net->buffers();
  const auto& tensors = header.at("tensors");
  if (tensors.size() != params.size() + buffers.size()) {
    throw ShapeError(path + ": tensor count does not match the network spec");
  }
  auto read_into = [&](size_t k, const std::string& name, float* dst, size_t n) {
    const auto& t = tensors[k];
    if (t.at("name").get<std::string>() != name || t.at("size").get<size_t>() != n) {
      throw ShapeError(path + ": tensor " + std::to_string(k) + " is " + t.dump() + ", expected " + name);
    }
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw ParseError(path + ": truncated data for " + name);
  };
  size_t k = 0;
  for (auto* p : params) read_into(k++, p->name, p->value.data(), static_cast<size_t>(p->value.numel()));
  for (const auto& b : buffers) read_into(k++, b.name, b.values->data(), b.values->size());
  return out;
}

nlohmann::json Registry::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries) {
    arr.push_back({{"fold", e.fold}, {"tag", e.tag}, {"epoch", e.epoch}, {"path", e.path}, {"metrics", e.metrics}});
  }
  return {{"checkpoints", arr}};
}

Registry Registry::from_json(const nlohmann::json& j) {
  Registry r;
  for (const auto& e : j.at("checkpoints")) {
    r.entries.push_back({e.at("fold").get<int>(), e.at("tag").get<std::string>(), e.at("epoch").get<int>(),
                         e.at("path").get<std::string>(), e.at("metrics").get<std::map<std::string, double>>()});
  }
  return r;
}

void Registry::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write registry " + path);
  out << to_json().dump(2) << "\n";
}

Registry Registry::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open registry " + path);
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::vector<RegistryEntry> Registry::with_tag(const std::string& tag) const {
  std::vector<RegistryEntry> out;
  for (const auto& e : entries) {
    if (e.tag == tag) out.push_back(e);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.fold < b.fold; });
  return out;
}

}  // namespace autoseg
