#include "nmae/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "nmae/random.hpp"

namespace nmae {

using json = nlohmann::json;

void ModelConfig::validate() const {
  if (input_size < 1 || patch_size < 1 || input_size % patch_size != 0)
    throw std::invalid_argument("ModelConfig: input_size must be a multiple of patch_size");
  if (enc_dim % 4 != 0 || dec_dim % 4 != 0)
    throw std::invalid_argument("ModelConfig: embedding dims must be divisible by 4");
  if (enc_dim % heads != 0 || dec_dim % heads != 0)
    throw std::invalid_argument("ModelConfig: embedding dims must be divisible by heads");
  if (enc_depth < 1 || dec_depth < 1 || channels < 1)
    throw std::invalid_argument("ModelConfig: depths and channels must be positive");
}

std::string ModelConfig::to_json() const {
  json j{{"input_size", input_size}, {"patch_size", patch_size}, {"enc_dim", enc_dim},
         {"dec_dim", dec_dim},       {"enc_depth", enc_depth},   {"dec_depth", dec_depth},
         {"heads", heads},           {"channels", channels},     {"norm_pix", norm_pix},
         {"coord_scale", coord_scale}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig c;
  c.input_size = j.value("input_size", c.input_size);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.enc_dim = j.value("enc_dim", c.enc_dim);
  c.dec_dim = j.value("dec_dim", c.dec_dim);
  c.enc_depth = j.value("enc_depth", c.enc_depth);
  c.dec_depth = j.value("dec_depth", c.dec_depth);
  c.heads = j.value("heads", c.heads);
  c.channels = j.value("channels", c.channels);
  c.norm_pix = j.value("norm_pix", c.norm_pix);
  c.coord_scale = j.value("coord_scale", c.coord_scale);
  c.validate();
  return c;
}

void ParameterStore::add(const std::string& name, Eigen::MatrixXd value, bool decay) {
  if (values_.count(name)) throw std::invalid_argument("duplicate parameter name " + name);
  values_[name] = std::move(value);
  decay_[name] = decay;
}

Eigen::MatrixXd& ParameterStore::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

const Eigen::MatrixXd& ParameterStore::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

bool ParameterStore::decays(const std::string& name) const { return decay_.at(name); }

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(values_.size());
  for (const auto& [k, v] : values_) out.push_back(k);
  return out;
}

Eigen::MatrixXd patchify(const Image& img, int patch_size) {
  if (img.height % patch_size != 0 || img.width % patch_size != 0)
    throw std::invalid_argument("patchify: image size not a multiple of patch size");
  const int gr = img.height / patch_size;
  const int gc = img.width / patch_size;
  const int pd = patch_size * patch_size * img.channels;
  Eigen::MatrixXd out(gr * gc, pd);
  for (int pr = 0; pr < gr; ++pr)
    for (int pc = 0; pc < gc; ++pc) {
      const int q = pr * gc + pc;
      for (int r = 0; r < patch_size; ++r)
        for (int c = 0; c < patch_size; ++c)
          for (int ch = 0; ch < img.channels; ++ch)
            out(q, (r * patch_size + c) * img.channels + ch) =
                img.at(pr * patch_size + r, pc * patch_size + c, ch);
    }
  return out;
}

Image unpatchify(const Eigen::MatrixXd& patches, int patch_size, int height, int width,
                 int channels) {
  const int gr = height / patch_size;
  const int gc = width / patch_size;
  if (patches.rows() != gr * gc || patches.cols() != patch_size * patch_size * channels)
    throw std::invalid_argument("unpatchify: shape mismatch");
  Image out(height, width, channels);
  for (int pr = 0; pr < gr; ++pr)
    for (int pc = 0; pc < gc; ++pc) {
      const int q = pr * gc + pc;
      for (int r = 0; r < patch_size; ++r)
        for (int c = 0; c < patch_size; ++c)
          for (int ch = 0; ch < channels; ++ch)
            out.at(pr * patch_size + r, pc * patch_size + c, ch) =
                patches(q, (r * patch_size + c) * channels + ch);
    }
  return out;
}

namespace {

constexpr double kNormEps = 1e-6;

// MAE-style per-patch target normalization over all patch values.
void normalize_rows(Eigen::MatrixXd& m, Eigen::VectorXd& mean, Eigen::VectorXd& std) {
  mean.resize(m.rows());
  std.resize(m.rows());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    mean[r] = m.row(r).mean();
    const double var = (m.row(r).array() - mean[r]).square().mean();
    std[r] = std::sqrt(var + kNormEps);
    m.row(r) = (m.row(r).array() - mean[r]) / std[r];
  }
}

}  // namespace

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = sub_rng(seed, 0xC0FFEEULL);
  std::normal_distribution<double> dist(0.0, 0.02);
  auto normal = [&](Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
    return m;
  };
  auto zeros = [](Eigen::Index r, Eigen::Index c) { return Eigen::MatrixXd::Zero(r, c); };
  auto ones = [](Eigen::Index r, Eigen::Index c) { return Eigen::MatrixXd::Ones(r, c); };

  auto add_block = [&](const std::string& prefix, int dim) {
    params_.add(prefix + ".ln1.g", ones(1, dim), false);
    params_.add(prefix + ".ln1.b", zeros(1, dim), false);
    params_.add(prefix + ".attn.qkv.w", normal(dim, 3 * dim));
    params_.add(prefix + ".attn.qkv.b", zeros(1, 3 * dim), false);
    params_.add(prefix + ".attn.out.w", normal(dim, dim));
    params_.add(prefix + ".attn.out.b", zeros(1, dim), false);
    params_.add(prefix + ".ln2.g", ones(1, dim), false);
    params_.add(prefix + ".ln2.b", zeros(1, dim), false);
    params_.add(prefix + ".mlp.fc1.w", normal(dim, 4 * dim));
    params_.add(prefix + ".mlp.fc1.b", zeros(1, 4 * dim), false);
    params_.add(prefix + ".mlp.fc2.w", normal(4 * dim, dim));
    params_.add(prefix + ".mlp.fc2.b", zeros(1, dim), false);
  };

  params_.add("patch_proj.w", normal(cfg_.patch_dim(), cfg_.enc_dim));
  params_.add("patch_proj.b", zeros(1, cfg_.enc_dim), false);
  params_.add("enc_slot", normal(2, cfg_.enc_dim), false);
  params_.add("dec_slot", normal(2, cfg_.dec_dim), false);
  for (int l = 0; l < cfg_.enc_depth; ++l) add_block("enc" + std::to_string(l), cfg_.enc_dim);
  params_.add("enc_norm.g", ones(1, cfg_.enc_dim), false);
  params_.add("enc_norm.b", zeros(1, cfg_.enc_dim), false);
  params_.add("dec_embed.w", normal(cfg_.enc_dim, cfg_.dec_dim));
  params_.add("dec_embed.b", zeros(1, cfg_.dec_dim), false);
  params_.add("mask_token", normal(1, cfg_.dec_dim), false);
  for (int l = 0; l < cfg_.dec_depth; ++l) add_block("dec" + std::to_string(l), cfg_.dec_dim);
  params_.add("dec_norm.g", ones(1, cfg_.dec_dim), false);
  params_.add("dec_norm.b", zeros(1, cfg_.dec_dim), false);
  params_.add("pred.w", normal(cfg_.dec_dim, cfg_.patch_dim()));
  params_.add("pred.b", zeros(1, cfg_.patch_dim()), false);
}

ad::Var Model::forward(ad::Graph& g, const std::vector<ImageInput>& inputs,
                       const ForwardOptions& opts, ForwardResult* out,
                       std::map<std::string, ad::Var>* param_vars) const {
  if (inputs.empty() || inputs.size() > 2)
    throw std::invalid_argument("forward: expects one or two images");
  const int G = cfg_.grid();
  const int N = cfg_.n_patches();
  const int pd = cfg_.patch_dim();
  const int hw = cfg_.input_size;

  std::map<std::string, ad::Var> pv;
  for (const auto& name : params_.names()) pv[name] = g.param(params_.at(name));

  auto linear = [&](const ad::Var& x, const std::string& w, const std::string& b) {
    return g.add_rowvec(g.matmul(x, pv.at(w)), pv.at(b));
  };
  auto attention = [&](const ad::Var& x, const std::string& prefix, int dim) {
    const int dh = dim / cfg_.heads;
    ad::Var qkv = linear(x, prefix + ".attn.qkv.w", prefix + ".attn.qkv.b");
    std::vector<ad::Var> head_outs;
    for (int h = 0; h < cfg_.heads; ++h) {
      ad::Var q = g.slice_cols(qkv, h * dh, dh);
      ad::Var k = g.slice_cols(qkv, dim + h * dh, dh);
      ad::Var v = g.slice_cols(qkv, 2 * dim + h * dh, dh);
      ad::Var att = g.softmax_rows(g.scale(g.matmul_bt(q, k), 1.0 / std::sqrt(double(dh))));
      head_outs.push_back(g.matmul(att, v));
    }
    return linear(g.concat_cols(head_outs), prefix + ".attn.out.w", prefix + ".attn.out.b");
  };
  auto block = [&](ad::Var x, const std::string& prefix, int dim) {
    ad::Var h = g.layernorm_rows(x, pv.at(prefix + ".ln1.g"), pv.at(prefix + ".ln1.b"));
    x = g.add(x, attention(h, prefix, dim));
    h = g.layernorm_rows(x, pv.at(prefix + ".ln2.g"), pv.at(prefix + ".ln2.b"));
    h = linear(g.gelu(linear(h, prefix + ".mlp.fc1.w", prefix + ".mlp.fc1.b")),
               prefix + ".mlp.fc2.w", prefix + ".mlp.fc2.b");
    return g.add(x, h);
  };

  struct View {
    Eigen::MatrixXd target;  // N×pd, target space
    Image target_img;
    std::vector<int> visible;
    Eigen::MatrixXd enc_pos;
    Eigen::MatrixXd dec_pos;
  };
  std::vector<View> views(inputs.size());
  for (std::size_t v = 0; v < inputs.size(); ++v) {
    const auto& in = inputs[v];
    if (in.pixels->height != hw || in.pixels->width != hw || in.pixels->channels != cfg_.channels)
      throw std::invalid_argument("forward: image dimensions do not match config");
    if (in.mask->rows != G || in.mask->cols != G)
      throw std::invalid_argument("forward: mask grid does not match config");
    View& vw = views[v];
    vw.target = patchify(*in.pixels, cfg_.patch_size);
    if (cfg_.norm_pix) {
      Eigen::VectorXd mean, std;
      normalize_rows(vw.target, mean, std);
    }
    vw.target_img = unpatchify(vw.target, cfg_.patch_size, hw, hw, cfg_.channels);
    vw.visible = in.mask->visible_indices();
    const auto boxes = patch_bboxes(in.nb, G, G);
    vw.enc_pos = sinusoidal_embed(boxes, cfg_.enc_dim, cfg_.coord_scale);
    vw.dec_pos = sinusoidal_embed(boxes, cfg_.dec_dim, cfg_.coord_scale);
  }

  // Encoder over the concatenated visible tokens of all images.
  std::vector<ad::Var> token_parts;
  std::vector<int> token_slots;
  for (std::size_t v = 0; v < inputs.size(); ++v) {
    const View& vw = views[v];
    Eigen::MatrixXd vis_patches(vw.visible.size(), pd);
    Eigen::MatrixXd vis_pos(vw.visible.size(), cfg_.enc_dim);
    for (std::size_t k = 0; k < vw.visible.size(); ++k) {
      vis_patches.row(Eigen::Index(k)) = vw.target.row(vw.visible[k]);
      vis_pos.row(Eigen::Index(k)) = vw.enc_pos.row(vw.visible[k]);
    }
    ad::Var t = linear(g.constant(std::move(vis_patches)), "patch_proj.w", "patch_proj.b");
    t = g.add(t, g.constant(std::move(vis_pos)));
    token_parts.push_back(t);
    for (std::size_t k = 0; k < vw.visible.size(); ++k) token_slots.push_back(inputs[v].slot);
  }
  ad::Var x = token_parts.size() == 1 ? token_parts[0] : g.concat_rows(token_parts);
  x = g.add(x, g.gather_rows(pv.at("enc_slot"), token_slots));
  for (int l = 0; l < cfg_.enc_depth; ++l) x = block(x, "enc" + std::to_string(l), cfg_.enc_dim);
  x = g.layernorm_rows(x, pv.at("enc_norm.g"), pv.at("enc_norm.b"));

  // Decoder over the full sequence with mask tokens at masked positions.
  ad::Var emb = linear(x, "dec_embed.w", "dec_embed.b");
  const int total = int(inputs.size()) * N;
  std::vector<int> seq_pos(total, -1);
  std::vector<int> seq_slots(total);
  Eigen::MatrixXd seq_dec_pos(total, cfg_.dec_dim);
  int enc_off = 0;
  for (std::size_t v = 0; v < inputs.size(); ++v) {
    const View& vw = views[v];
    for (std::size_t k = 0; k < vw.visible.size(); ++k)
      seq_pos[int(v) * N + vw.visible[k]] = enc_off + int(k);
    enc_off += int(vw.visible.size());
    for (int q = 0; q < N; ++q) {
      seq_slots[int(v) * N + q] = inputs[v].slot;
      seq_dec_pos.row(int(v) * N + q) = vw.dec_pos.row(q);
    }
  }
  ad::Var seq = g.compose_rows(emb, pv.at("mask_token"), seq_pos);
  seq = g.add(seq, g.constant(std::move(seq_dec_pos)));
  seq = g.add(seq, g.gather_rows(pv.at("dec_slot"), seq_slots));
  for (int l = 0; l < cfg_.dec_depth; ++l) seq = block(seq, "dec" + std::to_string(l), cfg_.dec_dim);
  seq = g.layernorm_rows(seq, pv.at("dec_norm.g"), pv.at("dec_norm.b"));
  ad::Var pred = linear(seq, "pred.w", "pred.b");

  // Visibility classification and loss weights per image.
  std::vector<ad::Var> preds(inputs.size());
  std::vector<Image> recon_imgs(inputs.size());
  std::vector<VisibilityMap> vis(inputs.size());
  std::vector<Eigen::VectorXd> weights(inputs.size());
  std::size_t cross_count = 0;
  for (std::size_t v = 0; v < inputs.size(); ++v) {
    std::vector<int> range(N);
    for (int q = 0; q < N; ++q) range[q] = int(v) * N + q;
    preds[v] = g.gather_rows(pred, range);
    recon_imgs[v] = unpatchify(preds[v]->val, cfg_.patch_size, hw, hw, cfg_.channels);

    if (inputs.size() == 2) {
      const std::size_t o = 1 - v;
      const FrameTransform ti = frame_transform(inputs[v].nb, hw, hw);
      const FrameTransform tj = frame_transform(inputs[o].nb, hw, hw);
      vis[v] = classify_pixels(*inputs[v].mask, *inputs[o].mask, ti, tj, cfg_.patch_size);
    } else {
      vis[v].height = hw;
      vis[v].width = hw;
      vis[v].category.assign(std::size_t(hw) * hw, PixelCategory::kNot);
      vis[v].corresp.assign(std::size_t(hw) * hw, {0.0, 0.0});
      for (int r = 0; r < hw; ++r)
        for (int c = 0; c < hw; ++c)
          if (!inputs[v].mask->masked(r / cfg_.patch_size, c / cfg_.patch_size))
            vis[v].category[std::size_t(r) * hw + c] = PixelCategory::kSelf;
    }
    for (auto cat : vis[v].category)
      if (cat == PixelCategory::kCross) ++cross_count;

    if (opts.frozen_weights) {
      weights[v] = opts.frozen_weights->at(v);
    } else {
      const Image& neighbor =
          inputs.size() == 2 ? views[1 - v].target_img : views[v].target_img;
      weights[v] = loss_weights(vis[v], views[v].target_img, neighbor, recon_imgs[v], opts.policy);
    }
  }

  double wsum = 0.0;
  for (const auto& w : weights) wsum += w.sum();
  ad::Var loss;
  if (wsum > 0.0) {
    std::vector<ad::Var> terms;
    for (std::size_t v = 0; v < inputs.size(); ++v) {
      // Per-element weight: the pixel weight spread over its channels.
      Eigen::MatrixXd wmat(N, pd);
      const int gc = G;
      for (int q = 0; q < N; ++q) {
        const int pr = q / gc, pc = q % gc;
        for (int r = 0; r < cfg_.patch_size; ++r)
          for (int c = 0; c < cfg_.patch_size; ++c) {
            const int row = pr * cfg_.patch_size + r;
            const int col = pc * cfg_.patch_size + c;
            const double wp = weights[v][Eigen::Index(std::size_t(row) * hw + col)];
            for (int ch = 0; ch < cfg_.channels; ++ch)
              wmat(q, (r * cfg_.patch_size + c) * cfg_.channels + ch) = wp / cfg_.channels;
          }
      }
      terms.push_back(g.weighted_sqerr_sum(preds[v], views[v].target, wmat));
    }
    ad::Var s = terms.size() == 1 ? terms[0] : g.add(terms[0], terms[1]);
    loss = g.scale(s, 1.0 / wsum);
  } else {
    loss = g.constant(Eigen::MatrixXd::Zero(1, 1));
  }

  if (out) {
    out->loss = loss->val(0, 0);
    out->recon = std::move(recon_imgs);
    out->targets.clear();
    for (auto& vw : views) out->targets.push_back(std::move(vw.target_img));
    out->weights = std::move(weights);
    out->vis = std::move(vis);
    out->cross_fraction = double(cross_count) / (double(inputs.size()) * hw * hw);
  }
  if (param_vars) *param_vars = std::move(pv);
  return loss;
}

double Model::forward_backward(const std::vector<ImageInput>& inputs, const ForwardOptions& opts,
                               std::map<std::string, Eigen::MatrixXd>& grads,
                               ForwardResult* out) const {
  ad::Graph g;
  std::map<std::string, ad::Var> pv;
  ad::Var loss = forward(g, inputs, opts, out, &pv);
  g.backward(loss);
  for (const auto& name : params_.names()) {
    const auto& node = pv.at(name);
    auto it = grads.find(name);
    Eigen::MatrixXd gmat = node->grad.size() != 0
                               ? node->grad
                               : Eigen::MatrixXd::Zero(node->val.rows(), node->val.cols());
    if (it == grads.end())
      grads[name] = std::move(gmat);
    else
      it->second += gmat;
  }
  return loss->val(0, 0);
}

double Model::loss_only(const std::vector<ImageInput>& inputs, const ForwardOptions& opts) const {
  ad::Graph g;
  return forward(g, inputs, opts, nullptr, nullptr)->val(0, 0);
}

Image Model::denormalize(const Image& recon_norm, const Image& target_raw) const {
  if (!cfg_.norm_pix) return recon_norm;
  Eigen::MatrixXd targ = patchify(target_raw, cfg_.patch_size);
  Eigen::MatrixXd rec = patchify(recon_norm, cfg_.patch_size);
  for (Eigen::Index r = 0; r < targ.rows(); ++r) {
    const double mean = targ.row(r).mean();
    const double var = (targ.row(r).array() - mean).square().mean();
    rec.row(r) = rec.row(r).array() * std::sqrt(var + kNormEps) + mean;
  }
  return unpatchify(rec, cfg_.patch_size, recon_norm.height, recon_norm.width,
                    recon_norm.channels);
}

namespace {

constexpr char kCkptMagic[4] = {'N', 'M', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw std::runtime_error("truncated checkpoint file");
  return v;
}

void write_str(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), std::streamsize(s.size()));
}

std::string read_str(std::istream& in) {
  auto n = read_pod<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw std::runtime_error("truncated checkpoint file");
  return s;
}

}  // namespace

void save_nmck(const std::string& path, const Checkpoint& ck) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kCkptMagic, 4);
    write_pod(out, kCkptVersion);
    write_str(out, ck.config_json);
    write_str(out, ck.meta_json);
    write_pod<std::uint64_t>(out, ck.arrays.size());
    for (const auto& [name, m] : ck.arrays) {
      write_str(out, name);
      write_pod<std::uint64_t>(out, std::uint64_t(m.rows()));
      write_pod<std::uint64_t>(out, std::uint64_t(m.cols()));
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) write_pod(out, m(r, c));
    }
    if (!out) throw std::runtime_error("write failure: " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot move checkpoint into place: " + path);
}

Checkpoint load_nmck(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw std::runtime_error("not an NMCK checkpoint: " + path);
  auto version = read_pod<std::uint32_t>(in);
  if (version != kCkptVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.config_json = read_str(in);
  ck.meta_json = read_str(in);
  auto n = read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = read_str(in);
    auto rows = read_pod<std::uint64_t>(in);
    auto cols = read_pod<std::uint64_t>(in);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = read_pod<double>(in);
    ck.arrays[name] = std::move(m);
  }
  return ck;
}

void Model::save_checkpoint(const std::string& path) const {
  Checkpoint ck;
  ck.config_json = cfg_.to_json();
  ck.meta_json = "{}";
  for (const auto& name : params_.names()) ck.arrays[name] = params_.at(name);
  save_nmck(path, ck);
}

Model Model::load_checkpoint(const std::string& path) {
  Checkpoint ck = load_nmck(path);
  Model m(ModelConfig::from_json(ck.config_json));
  for (const auto& name : m.params_.names()) {
    auto it = ck.arrays.find(name);
    if (it == ck.arrays.end())
      throw std::runtime_error("checkpoint missing parameter " + name);
    if (it->second.rows() != m.params_.at(name).rows() ||
        it->second.cols() != m.params_.at(name).cols())
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    m.params_.at(name) = it->second;
  }
  return m;
}

}  // namespace nmae
