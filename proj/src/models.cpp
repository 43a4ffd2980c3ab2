#include "mixdann/models.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "mixdann/errors.hpp"
#include "mixdann/rng.hpp"

namespace mixdann {

namespace {

constexpr std::uint64_t kUNetStream = 1;
constexpr std::uint64_t kDiscriminatorStream = 2;

class Builder {
 public:
  Builder(std::vector<Parameter>& params, Rng& rng) : params_(params), rng_(rng) {}

  ConvSpec conv(const std::string& name, Role role, std::size_t in, std::size_t out, std::size_t k,
                int stride, int padding) {
    ConvSpec s;
    s.stride = stride;
    s.padding = padding;
    const double a = glorot_bound(in * k * k, out * k * k);
    s.weight = add(name + ".weight", role, uniform(Shape{out, in, k, k}, a));
    s.bias = add(name + ".bias", role, Tensor(Shape{out}, 0.0));
    return s;
  }

  DenseSpec fc(const std::string& name, Role role, std::size_t in, std::size_t out) {
    DenseSpec s;
    s.weight = add(name + ".weight", role, uniform(Shape{out, in}, glorot_bound(in, out)));
    s.bias = add(name + ".bias", role, Tensor(Shape{out}, 0.0));
    return s;
  }

 private:
  Tensor uniform(Shape shape, double a) {
    Tensor t(std::move(shape), 0.0);
    for (double& v : t.data()) v = rng_.uniform(-a, a);
    return t;
  }

  std::size_t add(std::string name, Role role, Tensor value) {
    params_.emplace_back(std::move(name), role, std::move(value));
    return params_.size() - 1;
  }

  std::vector<Parameter>& params_;
  Rng& rng_;
};

void validate(const ModelConfig& c) {
  if (c.in_channels < 1 || c.base_channels < 1) throw ConfigError("model: channels must be positive");
  if (c.height < 4 || c.width < 4 || c.height % 4 != 0 || c.width % 4 != 0) {
    throw ConfigError("model: height and width must be positive multiples of 4");
  }
  if (c.num_domains < 0 || c.num_domains == 1) {
    throw ConfigError("model: discriminator needs at least 2 domains (or 0 for none)");
  }
}

std::size_t strided_out(std::size_t n) { return (n + 2 - 3) / 2 + 1; }

Var bind(Tape& tape, Parameter& p, Binding binding) {
  return binding == Binding::Trainable ? tape.parameter(p) : tape.constant(p.value);
}

Var apply_conv(Tape& tape, ModelBundle& m, const ConvSpec& s, Var x, Binding b) {
  return conv2d(x, bind(tape, m.params[s.weight], b), bind(tape, m.params[s.bias], b), s.stride,
                s.padding);
}

Var apply_dense(Tape& tape, ModelBundle& m, const DenseSpec& s, Var x, Binding b) {
  return dense(x, bind(tape, m.params[s.weight], b), bind(tape, m.params[s.bias], b));
}

}  // namespace

double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Shape ModelBundle::feature_shape() const {
  return {static_cast<std::size_t>(4 * config.base_channels),
          static_cast<std::size_t>(config.height / 4), static_cast<std::size_t>(config.width / 4)};
}

std::vector<Parameter*> ModelBundle::select(std::initializer_list<Role> roles) {
  std::vector<Parameter*> out;
  for (auto& p : params) {
    for (Role r : roles) {
      if (p.role == r) {
        out.push_back(&p);
        break;
      }
    }
  }
  return out;
}

const Parameter& ModelBundle::find(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter named " + name);
}

void ModelBundle::zero_grads() {
  for (auto& p : params) p.zero_grad();
}

std::size_t ModelBundle::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

ModelBundle init_params(const ModelConfig& config, std::uint64_t seed) {
  validate(config);
  ModelBundle m;
  m.config = config;
  const auto c = static_cast<std::size_t>(config.in_channels);
  const auto b = static_cast<std::size_t>(config.base_channels);

  Rng unet_rng(mix_seed(seed, kUNetStream));
  Builder ub(m.params, unet_rng);
  auto& u = m.unet;
  u.enc1a = ub.conv("enc1a", Role::Theta, c, b, 3, 1, 1);
  u.enc1b = ub.conv("enc1b", Role::Theta, b, b, 3, 1, 1);
  u.enc2a = ub.conv("enc2a", Role::Theta, b, 2 * b, 3, 1, 1);
  u.enc2b = ub.conv("enc2b", Role::Theta, 2 * b, 4 * b, 3, 1, 1);
  u.mid = ub.conv("mid", Role::Sigma, 4 * b, 4 * b, 3, 1, 1);
  u.up2 = ub.conv("up2", Role::Sigma, 4 * b, 2 * b, 3, 1, 1);
  u.dec2 = ub.conv("dec2", Role::Sigma, 6 * b, 2 * b, 3, 1, 1);
  u.up1 = ub.conv("up1", Role::Sigma, 2 * b, b, 3, 1, 1);
  u.dec1 = ub.conv("dec1", Role::Sigma, 2 * b, b, 3, 1, 1);
  u.head = ub.conv("head", Role::Sigma, b, 1, 1, 1, 0);

  if (config.num_domains >= 2) {
    Rng disc_rng(mix_seed(seed, kDiscriminatorStream));
    Builder db(m.params, disc_rng);
    const auto dc = static_cast<std::size_t>(config.disc_channels);
    const auto dh = static_cast<std::size_t>(config.disc_hidden);
    DiscriminatorLayout d;
    d.conv1 = db.conv("disc.conv1", Role::Mu, 4 * b, dc, 3, 2, 1);
    d.conv2 = db.conv("disc.conv2", Role::Mu, dc, dc, 3, 2, 1);
    d.conv3 = db.conv("disc.conv3", Role::Mu, dc, dc, 3, 2, 1);
    std::size_t fh = static_cast<std::size_t>(config.height / 4);
    std::size_t fw = static_cast<std::size_t>(config.width / 4);
    for (int i = 0; i < 3; ++i) {
      fh = strided_out(fh);
      fw = strided_out(fw);
    }
    d.flat_features = dc * fh * fw;
    d.fc1 = db.fc("disc.fc1", Role::Mu, d.flat_features, dh);
    d.fc2 = db.fc("disc.fc2", Role::Mu, dh, dh);
    d.fc3 = db.fc("disc.fc3", Role::Mu, dh, static_cast<std::size_t>(config.num_domains));
    m.discriminator = d;
  }
  return m;
}

EncoderOutput extract_features(Tape& tape, ModelBundle& m, Var x, Binding b) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("unet_forward: expected [N,C,H,W], got " + shape_str(s));
  if (s[2] % 4 != 0 || s[3] % 4 != 0) {
    throw ShapeError("unet_forward: spatial dims must be divisible by 4, got " + shape_str(s));
  }
  if (s[1] != static_cast<std::size_t>(m.config.in_channels)) {
    throw ShapeError("unet_forward: model expects " + std::to_string(m.config.in_channels) +
                     " channels, got " + shape_str(s));
  }
  const auto& u = m.unet;
  EncoderOutput e;
  Var h = relu(apply_conv(tape, m, u.enc1a, x, b));
  e.skip1 = relu(apply_conv(tape, m, u.enc1b, h, b));
  h = maxpool2(e.skip1);
  h = relu(apply_conv(tape, m, u.enc2a, h, b));
  e.skip2 = relu(apply_conv(tape, m, u.enc2b, h, b));
  e.features = maxpool2(e.skip2);
  return e;
}

Var task_head(Tape& tape, ModelBundle& m, const EncoderOutput& e, Binding b) {
  const auto& u = m.unet;
  Var h = relu(apply_conv(tape, m, u.mid, e.features, b));
  h = relu(apply_conv(tape, m, u.up2, upsample2_nearest(h), b));
  h = relu(apply_conv(tape, m, u.dec2, concat_channels(h, e.skip2), b));
  h = relu(apply_conv(tape, m, u.up1, upsample2_nearest(h), b));
  h = relu(apply_conv(tape, m, u.dec1, concat_channels(h, e.skip1), b));
  return sigmoid(apply_conv(tape, m, u.head, h, b));
}

UNetOutput unet_forward(Tape& tape, ModelBundle& m, Var x, Binding b) {
  EncoderOutput e = extract_features(tape, m, x, b);
  return {e.features, task_head(tape, m, e, b)};
}

Var discriminate(Tape& tape, ModelBundle& m, Var features, GrlConfig grl_cfg, Binding b) {
  if (!m.discriminator) throw std::logic_error("discriminate: model has no discriminator");
  const Shape& s = features.shape();
  const Shape expected = m.feature_shape();
  if (s.size() != 4 || Shape(s.begin() + 1, s.end()) != expected) {
    throw ShapeError("discriminate: features " + shape_str(s) + " do not match configured [N," +
                     shape_str(expected).substr(1));
  }
  const auto& d = *m.discriminator;
  Var h = grl(features, grl_cfg);
  h = relu(apply_conv(tape, m, d.conv1, h, b));
  h = relu(apply_conv(tape, m, d.conv2, h, b));
  h = relu(apply_conv(tape, m, d.conv3, h, b));
  h = reshape(h, Shape{s[0], d.flat_features});
  h = relu(apply_dense(tape, m, d.fc1, h, b));
  h = relu(apply_dense(tape, m, d.fc2, h, b));
  return apply_dense(tape, m, d.fc3, h, b);
}

void save_checkpoint(const std::filesystem::path& dir, const ModelBundle& m) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = "mixdann-checkpoint-1";
  manifest["config"] = {{"in_channels", m.config.in_channels},
                        {"base_channels", m.config.base_channels},
                        {"height", m.config.height},
                        {"width", m.config.width},
                        {"num_domains", m.config.num_domains},
                        {"disc_channels", m.config.disc_channels},
                        {"disc_hidden", m.config.disc_hidden}};
  manifest["tensors"] = nlohmann::ordered_json::array();
  std::ofstream bin(dir / "model.ckpt", std::ios::binary);
  if (!bin) throw DataError("cannot write checkpoint in " + dir.string());
  for (const auto& p : m.params) {
    write_tensor(bin, p.value);
    manifest["tensors"].push_back({{"name", p.name}, {"role", role_name(p.role)}, {"shape", p.value.shape()}});
  }
  std::ofstream js(dir / "model.manifest.json");
  js << manifest.dump(2) << '\n';
  if (!js) throw DataError("cannot write checkpoint manifest in " + dir.string());
}

ModelBundle load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream js(dir / "model.manifest.json");
  if (!js) throw DataError("missing checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    js >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  ModelConfig c;
  try {
    const auto& jc = manifest.at("config");
    c.in_channels = jc.at("in_channels");
    c.base_channels = jc.at("base_channels");
    c.height = jc.at("height");
    c.width = jc.at("width");
    c.num_domains = jc.at("num_domains");
    c.disc_channels = jc.at("disc_channels");
    c.disc_hidden = jc.at("disc_hidden");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint config: ") + e.what());
  }
  ModelBundle m = init_params(c, 0);
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != m.params.size()) throw DataError("checkpoint tensor count mismatch");
  std::ifstream bin(dir / "model.ckpt", std::ios::binary);
  if (!bin) throw DataError("missing model.ckpt in " + dir.string());
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    auto& p = m.params[i];
    const auto& entry = tensors[i];
    if (entry.at("name").get<std::string>() != p.name ||
        parse_role(entry.at("role").get<std::string>()) != p.role) {
      throw DataError("checkpoint entry " + std::to_string(i) + " does not match layout (" + p.name + ")");
    }
    Tensor t = read_tensor(bin);
    if (t.shape() != p.value.shape()) {
      throw DataError("checkpoint tensor " + p.name + " has shape " + shape_str(t.shape()) +
                      ", expected " + shape_str(p.value.shape()));
    }
    p.value = std::move(t);
    p.zero_grad();
  }
  return m;
}

}  // namespace mixdann
