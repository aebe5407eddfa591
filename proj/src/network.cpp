#include "aled/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "aled/errors.hpp"
#include "aled/rng.hpp"
#include "io_bytes.hpp"

using nlohmann::json;

namespace aled {

void NetworkConfig::validate() const {
  if (base_channels < 1) throw UsageError("NetworkConfig: base_channels must be >= 1");
  if (bins < 1) throw UsageError("NetworkConfig: bins must be >= 1");
}

namespace {

using nn::NodeRef;

struct Conv {
  NodeRef weight, bias;
  int stride = 1, pad = 0;
  NodeRef operator()(const NodeRef& x) const { return nn::conv2d(x, weight, bias, stride, pad); }
};

struct PRelu {
  NodeRef slope;
  NodeRef operator()(const NodeRef& x) const { return nn::prelu(x, slope); }
};

/// Downsampling ResNet basic block: conv5/2 + IN + PReLU + conv5 + IN,
/// 1x1/2 projection skip, PReLU after the sum.
struct BasicBlock {
  Conv conv1, conv2, skip;
  PRelu act1, act2;
  NodeRef operator()(const NodeRef& x) const {
    NodeRef y = act1(nn::instance_norm(conv1(x)));
    y = nn::instance_norm(conv2(y));
    return act2(nn::add(y, skip(x)));
  }
};

struct ConvGru {
  Conv update, reset, cand;
  NodeRef operator()(const NodeRef& x, const NodeRef& h) const {
    const NodeRef xh = nn::concat_channels(x, h);
    const NodeRef z = nn::sigmoid(update(xh));
    const NodeRef r = nn::sigmoid(reset(xh));
    const NodeRef n = nn::tanh(cand(nn::concat_channels(x, nn::mul(r, h))));
    // h' = z*h + (1-z)*n stays inside (-1, 1) whenever h does
    return nn::add(nn::mul(z, h), nn::mul(nn::affine(z, -1.0, 1.0), n));
  }
};

struct ResBlock {
  Conv conv1, conv2;
  PRelu act1, act2;
  NodeRef operator()(const NodeRef& x) const {
    return act2(nn::add(conv2(act1(conv1(x))), x));
  }
};

/// Learned 2x upsampling: channel-halving conv on the coarse features, a
/// stride-2 conv on the fine guide producing 9 softmax weights per output
/// subpixel, then the convex combination over the 3x3 coarse neighborhood.
struct Upsampler {
  Conv feat, mask;
  PRelu act;
  NodeRef operator()(const NodeRef& coarse, const NodeRef& guide) const {
    const NodeRef f = act(feat(coarse));
    const NodeRef m = nn::mask_softmax(mask(guide), 9, 4);
    return nn::convex_combine(f, m);
  }
};

struct Branch {
  Conv head;
  PRelu head_act;
  BasicBlock enc1, enc2, enc3;
  ConvGru gru1, gru2, gru3, gru4;
};

struct Builder {
  std::vector<AledNet::Param>& params;
  Rng rng;

  Tensor rand(std::vector<int> shape, double bound) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
  }

  NodeRef reg(const std::string& name, Tensor t) {
    NodeRef p = nn::parameter(std::move(t));
    params.push_back({name, p});
    return p;
  }

  Conv conv(const std::string& name, int ic, int oc, int k, int stride, bool bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(ic) * k * k);
    Conv c;
    c.stride = stride;
    c.pad = k / 2;
    c.weight = reg(name + ".weight", rand({oc, ic, k, k}, bound));
    if (bias) c.bias = reg(name + ".bias", rand({oc}, bound));
    return c;
  }

  PRelu prelu(const std::string& name) {
    return PRelu{reg(name, Tensor::scalar(0.25))};
  }

  BasicBlock block(const std::string& name, int ic, int oc) {
    BasicBlock b;
    b.conv1 = conv(name + ".conv1", ic, oc, 5, 2, false);
    b.conv2 = conv(name + ".conv2", oc, oc, 5, 1, false);
    b.skip = conv(name + ".skip", ic, oc, 1, 2, true);
    b.act1 = prelu(name + ".prelu1");
    b.act2 = prelu(name + ".prelu2");
    return b;
  }

  ConvGru gru(const std::string& name, int ic, int sc) {
    ConvGru g;
    g.update = conv(name + ".update", ic + sc, sc, 3, 1, true);
    g.reset = conv(name + ".reset", ic + sc, sc, 3, 1, true);
    g.cand = conv(name + ".cand", ic + sc, sc, 3, 1, true);
    return g;
  }

  Branch branch(const std::string& name, int in_ch, const NetworkConfig& cfg) {
    Branch b;
    b.head = conv(name + ".head", in_ch, cfg.head_channels(), 5, 1, true);
    b.head_act = prelu(name + ".head.prelu");
    b.enc1 = block(name + ".enc1", cfg.encoder_channels(0), cfg.encoder_channels(1));
    b.enc2 = block(name + ".enc2", cfg.encoder_channels(1), cfg.encoder_channels(2));
    b.enc3 = block(name + ".enc3", cfg.encoder_channels(2), cfg.encoder_channels(3));
    b.gru1 = gru(name + ".gru1", cfg.encoder_channels(0), cfg.state_channels(0));
    b.gru2 = gru(name + ".gru2", cfg.encoder_channels(1), cfg.state_channels(1));
    b.gru3 = gru(name + ".gru3", cfg.encoder_channels(2), cfg.state_channels(2));
    b.gru4 = gru(name + ".gru4", cfg.encoder_channels(3), cfg.state_channels(3));
    return b;
  }

  ResBlock res(const std::string& name, int ch) {
    ResBlock r;
    r.conv1 = conv(name + ".conv1", ch, ch, 3, 1, true);
    r.conv2 = conv(name + ".conv2", ch, ch, 3, 1, true);
    r.act1 = prelu(name + ".prelu1");
    r.act2 = prelu(name + ".prelu2");
    return r;
  }

  Upsampler upsampler(const std::string& name, int ic, int guide_ch) {
    if (ic % 2 != 0) throw UsageError("convex upsampling requires an even channel count");
    Upsampler u;
    u.feat = conv(name + ".feat", ic, ic / 2, 5, 1, true);
    u.act = prelu(name + ".prelu");
    u.mask = conv(name + ".mask", guide_ch, 36, 5, 2, true);
    return u;
  }
};

}  // namespace

struct AledNet::Layers {
  Branch lidar, events;
  ResBlock res1, res2;
  Upsampler up4, up2, up1;  // producing the 1/4, 1/2 and full-scale maps
  Conv fuse4, fuse2, fuse1;
  PRelu fuse4_act, fuse2_act, fuse1_act;
  Conv head;
};

AledNet::AledNet(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  layers_ = std::make_shared<Layers>();
  Builder b{params_, Rng(Rng::derive(seed, 0x616c6564))};

  layers_->lidar = b.branch("lidar", 1, cfg_);
  layers_->events = b.branch("events", 2 * cfg_.bins, cfg_);

  const int c1 = cfg_.state_channels(0);  // 2b
  const int c2 = cfg_.state_channels(1);  // 4b
  const int c3 = cfg_.state_channels(2);  // 8b
  const int c4 = cfg_.state_channels(3);  // 8b
  layers_->res1 = b.res("decoder.res1", c4);
  layers_->res2 = b.res("decoder.res2", c4);
  layers_->up4 = b.upsampler("decoder.up4", c4, c3 / 2);
  layers_->fuse4 = b.conv("decoder.fuse4", c4 / 2 + c3 / 2, c3 / 2, 1, 1, true);
  layers_->fuse4_act = b.prelu("decoder.fuse4.prelu");
  layers_->up2 = b.upsampler("decoder.up2", c3 / 2, c2 / 2);
  layers_->fuse2 = b.conv("decoder.fuse2", c3 / 4 + c2 / 2, c2 / 2, 1, 1, true);
  layers_->fuse2_act = b.prelu("decoder.fuse2.prelu");
  layers_->up1 = b.upsampler("decoder.up1", c2 / 2, c1 / 2);
  layers_->fuse1 = b.conv("decoder.fuse1", c2 / 4 + c1 / 2, c1 / 2, 1, 1, true);
  layers_->fuse1_act = b.prelu("decoder.fuse1.prelu");
  layers_->head = b.conv("decoder.head", c1 / 2, 2, 1, 1, true);
}

std::int64_t AledNet::param_count() const {
  std::int64_t n = 0;
  for (const Param& p : params_) n += static_cast<std::int64_t>(p.node->value.size());
  return n;
}

NetworkState AledNet::init_state(int height, int width) const {
  if (height <= 0 || width <= 0 || height % 8 != 0 || width % 8 != 0)
    throw UsageError("init_state: height and width must be positive multiples of 8");
  NetworkState s;
  s.s1 = Tensor({cfg_.state_channels(0), height, width});
  s.s2 = Tensor({cfg_.state_channels(1), height / 2, width / 2});
  s.s3 = Tensor({cfg_.state_channels(2), height / 4, width / 4});
  s.s4 = Tensor({cfg_.state_channels(3), height / 8, width / 8});
  return s;
}

void AledNet::check_state(const NetworkState& s) const {
  const auto bad = [&](const Tensor& t, int scale_idx, int div) {
    return t.rank() != 3 || t.c() != cfg_.state_channels(scale_idx) || t.h() % (8 / div) != 0 ||
           t.h() * div != s.s1.h() || t.w() * div != s.s1.w();
  };
  if (s.s1.rank() != 3 || s.s1.c() != cfg_.state_channels(0) || s.s1.h() % 8 != 0 ||
      s.s1.w() % 8 != 0)
    throw UsageError("network state: s1 has the wrong shape");
  if (bad(s.s2, 1, 2) || bad(s.s3, 2, 4) || bad(s.s4, 3, 8))
    throw UsageError("network state: scale pyramid is inconsistent");
}

AledNet::StateNodes AledNet::wrap(const NetworkState& s) const {
  check_state(s);
  return {nn::constant(s.s1), nn::constant(s.s2), nn::constant(s.s3), nn::constant(s.s4)};
}

NetworkState AledNet::unwrap(const StateNodes& s) const {
  return {s.s1->value, s.s2->value, s.s3->value, s.s4->value};
}

AledNet::StateNodes AledNet::detach(const StateNodes& s) const {
  return {nn::detach(s.s1), nn::detach(s.s2), nn::detach(s.s3), nn::detach(s.s4)};
}

namespace {

AledNet::StateNodes encode_branch(const Branch& br, const NodeRef& x,
                                  const AledNet::StateNodes& s) {
  const NodeRef f0 = br.head_act(br.head(x));
  AledNet::StateNodes out;
  out.s1 = br.gru1(f0, s.s1);
  const NodeRef f1 = br.enc1(f0);
  out.s2 = br.gru2(f1, s.s2);
  const NodeRef f2 = br.enc2(f1);
  out.s3 = br.gru3(f2, s.s3);
  const NodeRef f3 = br.enc3(f2);
  out.s4 = br.gru4(f3, s.s4);
  return out;
}

NodeRef as_3d(const NodeRef& x, int channels, const char* what) {
  const Tensor& v = x->value;
  if (v.rank() == 3 && v.c() == channels) return x;
  throw UsageError(std::string(what) + ": unexpected input shape");
}

}  // namespace

AledNet::StateNodes AledNet::encode_lidar_nodes(const NodeRef& input,
                                                const StateNodes& state) const {
  const Tensor& v = input->value;
  if (v.h() != state.s1->value.h() || v.w() != state.s1->value.w())
    throw UsageError("encode_lidar: input resolution does not match state");
  return encode_branch(layers_->lidar, as_3d(input, 1, "encode_lidar"), state);
}

AledNet::StateNodes AledNet::encode_events_nodes(const NodeRef& input,
                                                 const StateNodes& state) const {
  const Tensor& v = input->value;
  if (v.h() != state.s1->value.h() || v.w() != state.s1->value.w())
    throw UsageError("encode_events: input resolution does not match state");
  return encode_branch(layers_->events, as_3d(input, 2 * cfg_.bins, "encode_events"), state);
}

nn::NodeRef AledNet::decode_nodes(const StateNodes& state) const {
  const Layers& L = *layers_;
  const int c1 = cfg_.state_channels(0), c2 = cfg_.state_channels(1),
            c3 = cfg_.state_channels(2);

  NodeRef d = L.res2(L.res1(state.s4));

  const NodeRef guide3 = nn::slice_channels(state.s3, 0, c3 / 2);
  const NodeRef fusion3 = nn::slice_channels(state.s3, c3 / 2, c3);
  d = L.fuse4_act(L.fuse4(nn::concat_channels(L.up4(d, guide3), fusion3)));

  const NodeRef guide2 = nn::slice_channels(state.s2, 0, c2 / 2);
  const NodeRef fusion2 = nn::slice_channels(state.s2, c2 / 2, c2);
  d = L.fuse2_act(L.fuse2(nn::concat_channels(L.up2(d, guide2), fusion2)));

  const NodeRef guide1 = nn::slice_channels(state.s1, 0, c1 / 2);
  const NodeRef fusion1 = nn::slice_channels(state.s1, c1 / 2, c1);
  d = L.fuse1_act(L.fuse1(nn::concat_channels(L.up1(d, guide1), fusion1)));

  return L.head(d);
}

namespace {

Tensor as_plane(const Tensor& img) {
  if (img.rank() == 2) {
    Tensor t({1, img.h(), img.w()});
    std::memcpy(t.data(), img.data(), sizeof(double) * img.size());
    return t;
  }
  return img;
}

}  // namespace

NetworkState AledNet::encode_lidar(const Tensor& lidar_norm, const NetworkState& state) const {
  return unwrap(encode_lidar_nodes(nn::constant(as_plane(lidar_norm)), wrap(state)));
}

NetworkState AledNet::encode_events(const Tensor& volume, const NetworkState& state) const {
  return unwrap(encode_events_nodes(nn::constant(volume), wrap(state)));
}

DepthPair AledNet::decode(const NetworkState& state) const {
  check_state(state);
  const NodeRef out = decode_nodes(wrap(state));
  const Tensor& v = out->value;
  const int h = v.h(), w = v.w();
  DepthPair pair;
  pair.d_bf = Tensor({h, w});
  pair.d_af = Tensor({h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::memcpy(pair.d_bf.data(), v.data(), sizeof(double) * plane);
  std::memcpy(pair.d_af.data(), v.data() + plane, sizeof(double) * plane);
  return pair;
}

std::pair<DepthPair, NetworkState> AledNet::forward_step(const Tensor* lidar_norm,
                                                         const Tensor& volume,
                                                         const NetworkState& state) const {
  StateNodes s = wrap(state);
  if (lidar_norm) s = encode_lidar_nodes(nn::constant(as_plane(*lidar_norm)), s);
  s = encode_events_nodes(nn::constant(volume), s);
  const NodeRef out = decode_nodes(s);
  const Tensor& v = out->value;
  DepthPair pair;
  pair.d_bf = Tensor({v.h(), v.w()});
  pair.d_af = Tensor({v.h(), v.w()});
  const std::size_t plane = pair.d_bf.size();
  std::memcpy(pair.d_bf.data(), v.data(), sizeof(double) * plane);
  std::memcpy(pair.d_af.data(), v.data() + plane, sizeof(double) * plane);
  return {std::move(pair), unwrap(s)};
}

// ---- checkpoint IO ----

namespace {

using detail::get_f64;
using detail::get_u32;
using detail::get_u64;
using detail::put_f64;
using detail::put_u32;
using detail::put_u64;

constexpr char kMagic[8] = {'A', 'L', 'E', 'D', 'C', 'K', 'P', 'T'};

void put_tensor(std::vector<std::uint8_t>& b, const Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) put_f64(b, t[i]);
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json header;
  header["config"] = {{"base_channels", ckpt.config.base_channels}, {"bins", ckpt.config.bins}};
  header["step"] = ckpt.step;
  header["epoch"] = ckpt.epoch;
  header["batch_in_epoch"] = ckpt.batch_in_epoch;
  json jp = json::array();
  for (const auto& [name, t] : ckpt.params) jp.push_back({{"name", name}, {"shape", t.shape()}});
  header["params"] = std::move(jp);
  header["adam"] = {{"present", ckpt.has_adam}, {"t", ckpt.adam_t}};
  const std::string htext = header.dump();

  std::vector<std::uint8_t> bytes;
  bytes.insert(bytes.end(), kMagic, kMagic + 8);
  put_u32(bytes, Checkpoint::kVersion);
  put_u32(bytes, 0);
  put_u64(bytes, htext.size());
  bytes.insert(bytes.end(), htext.begin(), htext.end());
  for (const auto& [name, t] : ckpt.params) put_tensor(bytes, t);
  if (ckpt.has_adam) {
    for (const Tensor& t : ckpt.adam_m) put_tensor(bytes, t);
    for (const Tensor& t : ckpt.adam_v) put_tensor(bytes, t);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 24 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw DataError("not a checkpoint file: " + path.string());
  const std::uint32_t version = get_u32(bytes.data() + 8);
  if (version != Checkpoint::kVersion)
    throw DataError("checkpoint version mismatch in " + path.string() + ": got " +
                    std::to_string(version) + ", want " + std::to_string(Checkpoint::kVersion));
  const std::uint64_t hlen = get_u64(bytes.data() + 16);
  if (24 + hlen > bytes.size()) throw DataError("truncated checkpoint header: " + path.string());
  json header;
  try {
    header = json::parse(bytes.begin() + 24, bytes.begin() + 24 + static_cast<long>(hlen));
  } catch (const json::exception& e) {
    throw DataError("invalid checkpoint header in " + path.string() + ": " + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.config.base_channels = header.at("config").at("base_channels").get<int>();
    ckpt.config.bins = header.at("config").at("bins").get<int>();
    ckpt.step = header.at("step").get<std::int64_t>();
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.batch_in_epoch = header.value("batch_in_epoch", 0);
    ckpt.has_adam = header.at("adam").at("present").get<bool>();
    ckpt.adam_t = header.at("adam").at("t").get<std::int64_t>();

    std::size_t off = 24 + hlen;
    const auto read_tensor = [&](const std::vector<int>& shape) {
      Tensor t(shape);
      if (off + 8 * t.size() > bytes.size())
        throw DataError("truncated checkpoint blob: " + path.string());
      for (std::size_t i = 0; i < t.size(); ++i, off += 8) t[i] = get_f64(bytes.data() + off);
      return t;
    };
    for (const json& jp : header.at("params")) {
      const auto name = jp.at("name").get<std::string>();
      const auto shape = jp.at("shape").get<std::vector<int>>();
      ckpt.params.emplace_back(name, read_tensor(shape));
    }
    if (ckpt.has_adam) {
      for (const auto& [name, t] : ckpt.params) ckpt.adam_m.push_back(read_tensor(t.shape()));
      for (const auto& [name, t] : ckpt.params) ckpt.adam_v.push_back(read_tensor(t.shape()));
    }
    if (off != bytes.size()) throw DataError("trailing bytes in checkpoint: " + path.string());
  } catch (const json::exception& e) {
    throw DataError("invalid checkpoint content in " + path.string() + ": " + e.what());
  }
  return ckpt;
}

Checkpoint AledNet::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.config = cfg_;
  for (const Param& p : params_) ckpt.params.emplace_back(p.name, p.node->value);
  return ckpt;
}

void AledNet::load_params(const Checkpoint& ckpt) {
  if (!(ckpt.config == cfg_))
    throw DataError("checkpoint configuration does not match the model");
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ckpt.params) by_name[name] = &t;
  if (by_name.size() != params_.size())
    throw DataError("checkpoint parameter set does not match the model");
  for (Param& p : params_) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw DataError("checkpoint is missing parameter " + p.name);
    if (!(it->second->shape() == p.node->value.shape()))
      throw DataError("checkpoint parameter " + p.name + " has the wrong shape");
    p.node->value = *it->second;
  }
}

AledNet AledNet::from_checkpoint(const Checkpoint& ckpt) {
  AledNet net(ckpt.config, 0);
  net.load_params(ckpt);
  return net;
}

}  // namespace aled
