#include "tbps/checkpoint.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "tbps/rtf.hpp"

namespace tbps::checkpoint {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "TBPS-CHECKPOINT";

Tensor<float> scalar_block(double v) { return Tensor<float>(Shape{1}, std::vector<float>{static_cast<float>(v)}); }

template <typename Real, typename Vec>
Tensor<float> block_of(const Shape& shape, const Vec& values) {
  std::vector<float> out(values.begin(), values.end());
  return Tensor<float>(shape, std::move(out));
}

}  // namespace

template <typename Real>
void save(const fs::path& path, Model<Real>& model, const TrainState& state) {
  std::vector<std::pair<std::string, Tensor<float>>> blocks;
  for (auto* p : model.parameters()) {
    const auto& shape = p->tensor.shape();
    blocks.emplace_back(p->name, block_of<Real>(shape, p->tensor.data()));
    blocks.emplace_back(p->name + "#adam_m", block_of<Real>(shape, p->adam_m));
    blocks.emplace_back(p->name + "#adam_v", block_of<Real>(shape, p->adam_v));
    blocks.emplace_back(p->name + "#step", scalar_block(static_cast<double>(p->step)));
  }
  blocks.emplace_back("trainer#epoch", scalar_block(static_cast<double>(state.epoch)));
  blocks.emplace_back("trainer#step", scalar_block(static_cast<double>(state.step)));

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint " + tmp.string());
    os << kMagic << " 1\nblocks " << blocks.size() << '\n';
    for (const auto& [name, t] : blocks) {
      os << name << ' ' << t.dim();
      for (auto d : t.shape()) os << ' ' << d;
      os << '\n';
    }
    for (const auto& [name, t] : blocks) rtf::write(os, t);
    if (!os) throw DataError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

template <typename Real>
TrainState load(const fs::path& path, Model<Real>& model) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  std::string line, magic, word;
  int version = 0;
  std::size_t count = 0;
  if (!std::getline(is, line) || !(std::istringstream(line) >> magic >> version) || magic != kMagic || version != 1)
    throw DataError(path.string() + ": not a checkpoint file");
  if (!std::getline(is, line) || !(std::istringstream(line) >> word >> count) || word != "blocks")
    throw DataError(path.string() + ": malformed checkpoint manifest");
  std::vector<std::string> names;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(is, line)) throw DataError(path.string() + ": truncated checkpoint manifest");
    std::istringstream ls(line);
    std::string name;
    ls >> name;
    names.push_back(name);
  }
  std::map<std::string, Tensor<float>> blocks;
  for (const auto& name : names) blocks.emplace(name, rtf::read(is, path.string() + " block " + name));

  std::set<std::string> used;
  auto take = [&](const std::string& name, const Shape& expect) -> const Tensor<float>& {
    auto it = blocks.find(name);
    if (it == blocks.end()) throw ConfigError("checkpoint " + path.string() + " has no parameter '" + name + "'");
    if (it->second.shape() != expect)
      throw ConfigError("checkpoint parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                        " but the configured model expects " + shape_str(expect));
    used.insert(name);
    return it->second;
  };

  for (auto* p : model.parameters()) {
    const auto& shape = p->tensor.shape();
    const auto& values = take(p->name, shape);
    const auto& m = take(p->name + "#adam_m", shape);
    const auto& v = take(p->name + "#adam_v", shape);
    const auto& step = take(p->name + "#step", Shape{1});
    auto dst = p->tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = static_cast<Real>(values.data()[i]);
      p->adam_m[i] = static_cast<Real>(m.data()[i]);
      p->adam_v[i] = static_cast<Real>(v.data()[i]);
    }
    p->step = static_cast<std::int64_t>(step.item());
  }
  TrainState state;
  state.epoch = static_cast<std::int64_t>(take("trainer#epoch", Shape{1}).item());
  state.step = static_cast<std::int64_t>(take("trainer#step", Shape{1}).item());
  for (const auto& [name, t] : blocks)
    if (!used.count(name))
      throw ConfigError("checkpoint " + path.string() + " holds parameter '" + name +
                        "' that the configured model does not have (K or layer count mismatch?)");
  return state;
}

template void save<float>(const fs::path&, Model<float>&, const TrainState&);
template void save<double>(const fs::path&, Model<double>&, const TrainState&);
template TrainState load<float>(const fs::path&, Model<float>&);
template TrainState load<double>(const fs::path&, Model<double>&);

}  // namespace tbps::checkpoint
