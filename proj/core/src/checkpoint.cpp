// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsvg/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "config_json.hpp"
#include "fsvg/errors.hpp"

namespace fsvg {

namespace {

constexpr char kMagic[4] = {'F', 'S', 'V', 'G'};
const std::string kMomentPrefix[2] = {"adam.m/", "adam.v/"};

template <typename U>
void put_le(std::string& out, U v) {
  unsigned char b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  out.append(reinterpret_cast<const char*>(b), sizeof(U));
}

void put_string(std::string& out, const std::string& s) {
  put_le<std::uint64_t>(out, s.size());
  out += s;
}

template <typename T>
void put_tensor(std::string& out, const std::string& name, const Tensor<T>& t) {
  put_string(out, name);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(precision_of<T>()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
  for (T v : t.data()) put_le<T>(out, v);
}

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string file) : bytes_(std::move(bytes)), file_(std::move(file)) {}

  template <typename U>
  U get(const std::string& what) {
    need(sizeof(U), what);
    unsigned char b[sizeof(U)];
    std::memcpy(b, bytes_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    pos_ += sizeof(U);
    U v;
    std::memcpy(&v, b, sizeof(U));
    return v;
  }

  std::string get_string(const std::string& what) {
    const auto n = get<std::uint64_t>(what + " length");
    need(n, what);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::uint64_t n, const std::string& what) const {
    if (n > bytes_.size() - pos_) fail("truncated " + what);
  }

  bool at_end() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& msg) const { throw FormatError(file_ + ": " + msg); }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
  std::string file_;
};

template <typename T>
Tensor<T> get_tensor(Reader& r, const std::string& name) {
  const auto dtype = r.get<std::uint8_t>("dtype of tensor '" + name + "'");
  if (dtype != static_cast<std::uint8_t>(precision_of<T>())) {
    r.fail("tensor '" + name + "' has dtype " + std::to_string(dtype) + ", expected " +
           std::to_string(static_cast<int>(precision_of<T>())));
  }
  const auto rank = r.get<std::uint32_t>("rank of tensor '" + name + "'");
  Shape shape(rank);
  for (auto& d : shape) d = r.get<std::uint64_t>("dims of tensor '" + name + "'");
  std::uint64_t numel = 1;
  for (auto d : shape) {
    if (d != 0 && numel > UINT64_MAX / d / sizeof(T)) r.fail("tensor '" + name + "' dims overflow");
    numel *= d;
  }
  r.need(numel * sizeof(T), "payload of tensor '" + name + "'");
  std::vector<T> data(numel);
  for (auto& v : data) v = r.get<T>("payload of tensor '" + name + "'");
  return Tensor<T>(std::move(shape), std::move(data));
}

nlohmann::ordered_json options_to_json(const nn::AdamWOptions& o, std::uint64_t step) {
  nlohmann::ordered_json j;
  j["lr"] = o.lr;
  j["beta1"] = o.beta1;
  j["beta2"] = o.beta2;
  j["eps"] = o.eps;
  j["weight_decay"] = o.weight_decay;
  j["step"] = step;
  return j;
}

}  // namespace

void check_compatible(const ModelConfig& stored, const ModelConfig& expected) {
  auto check = [](const char* field, std::size_t a, std::size_t b) {
    if (a != b) {
      throw ConfigError("checkpoint config mismatch: " + std::string(field) + " is " +
                        std::to_string(a) + " in the checkpoint, expected " + std::to_string(b));
    }
  };
  check("image_size", stored.image_size, expected.image_size);
  check("patch_size", stored.patch_size, expected.patch_size);
  check("embed_dim", stored.embed_dim, expected.embed_dim);
  check("depth", stored.depth, expected.depth);
  check("heads", stored.heads, expected.heads);
  check("ffn_mult", stored.ffn_mult, expected.ffn_mult);
  check("vocab_size", stored.vocab_size, expected.vocab_size);
  check("max_text_len", stored.max_text_len, expected.max_text_len);
  check("head_hidden", stored.head_hidden, expected.head_hidden);
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ModelParams<T>& params, const nn::OptimizerState<T>* optimizer,
                     std::uint64_t epoch) {
  const auto names = params.names();
  if (optimizer && !optimizer->first_moment.empty() &&
      (optimizer->first_moment.size() != names.size() || optimizer->second_moment.size() != names.size())) {
    throw ShapeError("save_checkpoint: optimizer state does not match the parameter list");
  }

  nlohmann::ordered_json header;
  header["model"] = config_to_json(config);
  header["epoch"] = epoch;
  header["has_optimizer"] = optimizer != nullptr;
  if (optimizer) header["optimizer"] = options_to_json(optimizer->options, optimizer->step);

  std::string out(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, header.dump());
  const std::size_t count = names.size() * (optimizer ? 3 : 1);
  put_le<std::uint64_t>(out, count);
  params.visit([&](const std::string& name, const Tensor<T>& t) { put_tensor(out, name, t); });
  if (optimizer) {
    for (int which = 0; which < 2; ++which) {
      const auto& moments = which == 0 ? optimizer->first_moment : optimizer->second_moment;
      std::size_t i = 0;
      params.visit([&](const std::string& name, const Tensor<T>& t) {
        put_tensor(out, kMomentPrefix[which] + name, moments.empty() ? Tensor<T>(t.shape()) : moments[i]);
        ++i;
      });
    }
  }

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    f.flush();
    if (!f) {
      f.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move checkpoint into place at " + path.string());
  }
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path.string());

  {
    char magic[4];
    for (char& c : magic) c = static_cast<char>(r.get<std::uint8_t>("magic"));
    if (std::memcmp(magic, kMagic, 4) != 0) r.fail("not a checkpoint");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    r.fail("unsupported checkpoint version " + std::to_string(version) + " (this build reads " +
           std::to_string(kCheckpointVersion) + ")");
  }

  Checkpoint<T> ck;
  bool has_optimizer = false;
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(r.get_string("header"));
    ck.config = config_from_json(header.at("model"));
    ck.epoch = header.at("epoch").get<std::uint64_t>();
    has_optimizer = header.at("has_optimizer").get<bool>();
    if (has_optimizer) {
      const auto& o = header.at("optimizer");
      nn::OptimizerState<T> st;
      st.options.lr = o.at("lr").get<double>();
      st.options.beta1 = o.at("beta1").get<double>();
      st.options.beta2 = o.at("beta2").get<double>();
      st.options.eps = o.at("eps").get<double>();
      st.options.weight_decay = o.at("weight_decay").get<double>();
      st.step = o.at("step").get<std::uint64_t>();
      ck.optimizer = std::move(st);
    }
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad header: ") + e.what());
  } catch (const FormatError& e) {
    r.fail(e.what());
  }
  ck.config.validate();
  if (options.expected) check_compatible(ck.config, *options.expected);
  if (options.require_optimizer && !has_optimizer) {
    r.fail("no optimizer state stored; cannot resume training from it");
  }

  const auto count = r.get<std::uint64_t>("tensor count");
  std::map<std::string, Tensor<T>> table;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.get_string("name of tensor " + std::to_string(i));
    Tensor<T> t = get_tensor<T>(r, name);
    if (!table.emplace(name, std::move(t)).second) r.fail("duplicate tensor '" + name + "'");
  }
  if (!r.at_end()) r.fail("trailing bytes after tensor table");

  ck.params = ModelParams<T>::zeros(ck.config);
  std::set<std::string> used;
  auto take = [&](const std::string& name, const Shape& shape) -> Tensor<T> {
    auto it = table.find(name);
    if (it == table.end()) r.fail("missing tensor '" + name + "'");
    if (it->second.shape() != shape) {
      r.fail("tensor '" + name + "' has shape " + shape_to_string(it->second.shape()) + ", expected " +
             shape_to_string(shape));
    }
    used.insert(name);
    return it->second;
  };
  ck.params.visit([&](const std::string& name, Tensor<T>& t) { t = take(name, t.shape()); });
  if (ck.optimizer) {
    ck.params.visit([&](const std::string& name, const Tensor<T>& t) {
      ck.optimizer->first_moment.push_back(take(kMomentPrefix[0] + name, t.shape()));
      ck.optimizer->second_moment.push_back(take(kMomentPrefix[1] + name, t.shape()));
    });
  }
  for (const auto& [name, t] : table) {
    if (!used.count(name)) r.fail("unexpected tensor '" + name + "'");
  }
  return ck;
}

#define FSVG_INSTANTIATE_CKPT(T)                                                                    \
  template void save_checkpoint(const std::filesystem::path&, const ModelConfig&,                   \
                                const ModelParams<T>&, const nn::OptimizerState<T>*, std::uint64_t); \
  template Checkpoint<T> load_checkpoint(const std::filesystem::path&, const LoadOptions&);

FSVG_INSTANTIATE_CKPT(float)
FSVG_INSTANTIATE_CKPT(double)

#undef FSVG_INSTANTIATE_CKPT

}  // namespace fsvg
