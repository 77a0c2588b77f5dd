#include "avatar/net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

namespace avatar::net {

namespace {

constexpr int kJoints = body::kJointCount;
constexpr Eigen::Index kChunk = 128;

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd relu(const MatrixXd& a) { return a.cwiseMax(0.0); }

void relu_backward(MatrixXd& d, const MatrixXd& pre) {
    d = (pre.array() > 0.0).select(d, 0.0);
}

std::string layer_name(const std::string& prefix, std::size_t l, const char* what) {
    return prefix + "." + std::to_string(l) + "." + what;
}

std::vector<LayoutEntry> build_layout(const NetConfig& c) {
    std::vector<LayoutEntry> out;
    Eigen::Index offset = 0;
    auto add = [&](std::string name, Eigen::Index rows, Eigen::Index cols) {
        out.push_back({std::move(name), offset, rows, cols});
        offset += rows * cols;
    };
    add("pixel.0.weight", c.pixel_width, c.feature_channels);
    add("pixel.0.bias", c.pixel_width, 1);
    add("pixel.1.weight", c.pixel_width, c.pixel_width);
    add("pixel.1.bias", c.pixel_width, 1);
    int in = c.pixel_width + c.pe_dim() + 3;
    for (std::size_t l = 0; l < c.embed_widths.size(); ++l) {
        add(layer_name("embed", l, "weight"), c.embed_widths[l], in);
        add(layer_name("embed", l, "bias"), c.embed_widths[l], 1);
        in = c.embed_widths[l];
    }
    const int d = c.embed_dim();
    if (c.fusion == Fusion::kAttention) {
        add("attention.query", c.attention_dim, d);
        add("attention.key", c.attention_dim, d);
        add("attention.value", d, d);
    }
    for (const auto& [prefix, outputs] : {std::pair<std::string, int>{"occupancy", 1}, {"skinning", kJoints}}) {
        int h_in = d;
        for (std::size_t l = 0; l < c.head_widths.size(); ++l) {
            add(layer_name(prefix, l, "weight"), c.head_widths[l], h_in);
            add(layer_name(prefix, l, "bias"), c.head_widths[l], 1);
            h_in = c.head_widths[l];
        }
        add(layer_name(prefix, c.head_widths.size(), "weight"), outputs, h_in);
        add(layer_name(prefix, c.head_widths.size(), "bias"), outputs, 1);
    }
    return out;
}

Eigen::Map<MatrixXd> grad_block(VectorXd& g, const LayoutEntry& e) {
    return Eigen::Map<MatrixXd>(g.data() + e.offset, e.rows, e.cols);
}

struct Mlp {
    std::vector<MatrixXd> pre;  // pre-activations of hidden layers
    std::vector<MatrixXd> post;
    MatrixXd out;
};

// Hidden layers use ReLU; the last layer is linear.
void mlp_forward(const NetParams& params, const std::string& prefix, std::size_t hidden, const MatrixXd& x,
                 Mlp& cache) {
    const MatrixXd* h = &x;
    cache.pre.resize(hidden);
    cache.post.resize(hidden);
    for (std::size_t l = 0; l < hidden; ++l) {
        cache.pre[l] = (params.block(layer_name(prefix, l, "weight")) * *h).colwise() +
                       params.block(layer_name(prefix, l, "bias")).col(0);
        cache.post[l] = relu(cache.pre[l]);
        h = &cache.post[l];
    }
    cache.out = (params.block(layer_name(prefix, hidden, "weight")) * *h).colwise() +
                params.block(layer_name(prefix, hidden, "bias")).col(0);
}

MatrixXd mlp_backward(const NetParams& params, const std::string& prefix, std::size_t hidden, const MatrixXd& x,
                      const Mlp& cache, MatrixXd d, VectorXd& g) {
    for (std::size_t l = hidden + 1; l-- > 0;) {
        const MatrixXd& in = l == 0 ? x : cache.post[l - 1];
        const auto wname = layer_name(prefix, l, "weight");
        grad_block(g, params.entry(wname)).noalias() += d * in.transpose();
        grad_block(g, params.entry(layer_name(prefix, l, "bias"))).col(0) += d.rowwise().sum();
        MatrixXd dn = params.block(wname).transpose() * d;
        if (l > 0) relu_backward(dn, cache.pre[l - 1]);
        d = std::move(dn);
    }
    return d;
}

struct Cache {
    Eigen::Index n = 0;
    int frames = 0;
    MatrixXd features;  // C x (frames n)
    MatrixXd shared_in; // (pe + 3) x n
    MatrixXd pix_pre, pix_hidden, pix_out;
    std::vector<MatrixXd> emb_pre, emb_post;
    MatrixXd g_mean, q_mean, keys, weights, g_weighted;  // attention
    MatrixXd fused;
    Mlp occ, skin;
};

void forward_chunk(const Batch& batch, Eigen::Index begin, Eigen::Index n, const NetParams& params, Cache& c) {
    const NetConfig& cfg = params.config();
    const int nf = batch.frames;
    const Eigen::Index total = static_cast<Eigen::Index>(batch.size());
    c.n = n;
    c.frames = nf;
    c.features.resize(cfg.feature_channels, nf * n);
    for (int f = 0; f < nf; ++f) c.features.middleCols(f * n, n) = batch.features.middleCols(f * total + begin, n);

    c.shared_in.resize(cfg.pe_dim() + 3, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        c.shared_in.col(k).head(cfg.pe_dim()) = positional_encoding(batch.points[begin + k], cfg.pe_frequencies);
        c.shared_in.col(k).tail<3>() = batch.normals[begin + k];
    }

    c.pix_pre = (params.block("pixel.0.weight") * c.features).colwise() + params.block("pixel.0.bias").col(0);
    c.pix_hidden = relu(c.pix_pre);
    c.pix_out = (params.block("pixel.1.weight") * c.pix_hidden).colwise() + params.block("pixel.1.bias").col(0);

    const std::size_t layers = cfg.embed_widths.size();
    c.emb_pre.resize(layers);
    c.emb_post.resize(layers);
    {
        const auto w = params.block("embed.0.weight");
        const MatrixXd shared =
            (w.rightCols(cfg.pe_dim() + 3) * c.shared_in).colwise() + params.block("embed.0.bias").col(0);
        c.emb_pre[0] = w.leftCols(cfg.pixel_width) * c.pix_out;
        for (int f = 0; f < nf; ++f) c.emb_pre[0].middleCols(f * n, n) += shared;
        c.emb_post[0] = relu(c.emb_pre[0]);
    }
    for (std::size_t l = 1; l < layers; ++l) {
        c.emb_pre[l] = (params.block(layer_name("embed", l, "weight")) * c.emb_post[l - 1]).colwise() +
                       params.block(layer_name("embed", l, "bias")).col(0);
        c.emb_post[l] = relu(c.emb_pre[l]);
    }
    const MatrixXd& g = c.emb_post.back();
    const Eigen::Index d = g.rows();

    c.g_mean = MatrixXd::Zero(d, n);
    for (int f = 0; f < nf; ++f) c.g_mean += g.middleCols(f * n, n);
    c.g_mean /= nf;
    if (cfg.fusion == Fusion::kAverage) {
        c.fused = c.g_mean;
    } else {
        const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.attention_dim));
        c.q_mean = params.block("attention.query") * c.g_mean;
        c.keys = params.block("attention.key") * g;
        c.weights.resize(nf, n);
        for (int f = 0; f < nf; ++f)
            c.weights.row(f) = (c.q_mean.cwiseProduct(c.keys.middleCols(f * n, n))).colwise().sum() * scale;
        const Eigen::RowVectorXd mx = c.weights.colwise().maxCoeff();
        c.weights = (c.weights.rowwise() - mx).array().exp();
        const Eigen::RowVectorXd sum = c.weights.colwise().sum();
        c.weights = c.weights.array().rowwise() / sum.array();
        c.g_weighted = MatrixXd::Zero(d, n);
        for (int f = 0; f < nf; ++f)
            c.g_weighted += (g.middleCols(f * n, n).array().rowwise() * c.weights.row(f).array()).matrix();
        c.fused = params.block("attention.value") * c.g_weighted;
    }
    mlp_forward(params, "occupancy", cfg.head_widths.size(), c.fused, c.occ);
    mlp_forward(params, "skinning", cfg.head_widths.size(), c.fused, c.skin);
}

// d_occ: 1 x n, d_skin: J x n, gradients of the loss w.r.t. the logits.
void backward_chunk(const NetParams& params, const Cache& c, const MatrixXd& d_occ, const MatrixXd& d_skin,
                    VectorXd& g) {
    const NetConfig& cfg = params.config();
    const Eigen::Index n = c.n;
    const int nf = c.frames;
    MatrixXd d_fused = mlp_backward(params, "occupancy", cfg.head_widths.size(), c.fused, c.occ, d_occ, g);
    d_fused += mlp_backward(params, "skinning", cfg.head_widths.size(), c.fused, c.skin, d_skin, g);

    const MatrixXd& emb = c.emb_post.back();
    MatrixXd d_emb(emb.rows(), emb.cols());
    if (cfg.fusion == Fusion::kAverage) {
        for (int f = 0; f < nf; ++f) d_emb.middleCols(f * n, n) = d_fused / nf;
    } else {
        const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.attention_dim));
        const auto wv = params.block("attention.value");
        const auto wk = params.block("attention.key");
        const auto wq = params.block("attention.query");
        grad_block(g, params.entry("attention.value")).noalias() += d_fused * c.g_weighted.transpose();
        const MatrixXd d_gw = wv.transpose() * d_fused;
        MatrixXd d_w(nf, n);
        for (int f = 0; f < nf; ++f) {
            d_emb.middleCols(f * n, n) = (d_gw.array().rowwise() * c.weights.row(f).array()).matrix();
            d_w.row(f) = emb.middleCols(f * n, n).cwiseProduct(d_gw).colwise().sum();
        }
        const Eigen::RowVectorXd inner = c.weights.cwiseProduct(d_w).colwise().sum();
        const MatrixXd d_s = c.weights.cwiseProduct(d_w - inner.replicate(nf, 1)) * scale;
        MatrixXd d_keys(c.keys.rows(), c.keys.cols());
        MatrixXd d_q = MatrixXd::Zero(c.q_mean.rows(), n);
        for (int f = 0; f < nf; ++f) {
            d_keys.middleCols(f * n, n) = (c.q_mean.array().rowwise() * d_s.row(f).array()).matrix();
            d_q += (c.keys.middleCols(f * n, n).array().rowwise() * d_s.row(f).array()).matrix();
        }
        grad_block(g, params.entry("attention.key")).noalias() += d_keys * emb.transpose();
        d_emb.noalias() += wk.transpose() * d_keys;
        grad_block(g, params.entry("attention.query")).noalias() += d_q * c.g_mean.transpose();
        const MatrixXd d_mean = wq.transpose() * d_q / nf;
        for (int f = 0; f < nf; ++f) d_emb.middleCols(f * n, n) += d_mean;
    }

    MatrixXd d = std::move(d_emb);
    for (std::size_t l = cfg.embed_widths.size(); l-- > 0;) {
        relu_backward(d, c.emb_pre[l]);
        const auto wname = layer_name("embed", l, "weight");
        grad_block(g, params.entry(layer_name("embed", l, "bias"))).col(0) += d.rowwise().sum();
        if (l > 0) {
            grad_block(g, params.entry(wname)).noalias() += d * c.emb_post[l - 1].transpose();
            d = params.block(wname).transpose() * d;
        } else {
            auto gw = grad_block(g, params.entry(wname));
            gw.leftCols(cfg.pixel_width).noalias() += d * c.pix_out.transpose();
            MatrixXd d_shared = MatrixXd::Zero(d.rows(), n);
            for (int f = 0; f < nf; ++f) d_shared += d.middleCols(f * n, n);
            gw.rightCols(cfg.pe_dim() + 3).noalias() += d_shared * c.shared_in.transpose();
            d = params.block(wname).leftCols(cfg.pixel_width).transpose() * d;
        }
    }
    grad_block(g, params.entry("pixel.1.weight")).noalias() += d * c.pix_hidden.transpose();
    grad_block(g, params.entry("pixel.1.bias")).col(0) += d.rowwise().sum();
    MatrixXd dh = params.block("pixel.1.weight").transpose() * d;
    relu_backward(dh, c.pix_pre);
    grad_block(g, params.entry("pixel.0.weight")).noalias() += dh * c.features.transpose();
    grad_block(g, params.entry("pixel.0.bias")).col(0) += dh.rowwise().sum();
}

struct Chunks {
    std::vector<Eigen::Index> begin, size;
    explicit Chunks(Eigen::Index n) {
        for (Eigen::Index b = 0; b < n; b += kChunk) {
            begin.push_back(b);
            size.push_back(std::min(kChunk, n - b));
        }
    }
    std::size_t count() const { return begin.size(); }
};

std::vector<Cache> forward_all(const Batch& batch, const NetParams& params, Prediction& pred) {
    const Eigen::Index n = static_cast<Eigen::Index>(batch.size());
    const Chunks chunks(n);
    std::vector<Cache> caches(chunks.count());
    parallel_for(chunks.count(), [&](std::size_t i) {
        forward_chunk(batch, chunks.begin[i], chunks.size[i], params, caches[i]);
    });
    pred.occupancy_logit.resize(n);
    pred.skin_logit.resize(kJoints, n);
    for (std::size_t i = 0; i < chunks.count(); ++i) {
        pred.occupancy_logit.segment(chunks.begin[i], chunks.size[i]) = caches[i].occ.out.row(0).transpose();
        pred.skin_logit.middleCols(chunks.begin[i], chunks.size[i]) = caches[i].skin.out;
    }
    pred.occupancy = pred.occupancy_logit.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
    pred.skinning.resize(kJoints, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const VectorXd e = (pred.skin_logit.col(k).array() - pred.skin_logit.col(k).maxCoeff()).exp();
        pred.skinning.col(k) = e / e.sum();
    }
    return caches;
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

}  // namespace

void NetConfig::validate() const {
    if (pe_frequencies < 0) throw ValidationError("pe_frequencies must be >= 0");
    if (feature_channels < 1) throw ValidationError("feature_channels must be >= 1");
    if (pixel_width < 1) throw ValidationError("pixel_width must be >= 1");
    if (embed_widths.empty()) throw ValidationError("embed_widths must not be empty");
    for (int w : embed_widths)
        if (w < 1) throw ValidationError("embed widths must be >= 1");
    if (attention_dim < 1) throw ValidationError("attention_dim must be >= 1");
    for (int w : head_widths)
        if (w < 1) throw ValidationError("head widths must be >= 1");
}

Eigen::VectorXd positional_encoding(const Vec3& p, int frequencies) {
    if (frequencies < 0) throw ValidationError("positional encoding needs L >= 0");
    VectorXd out(3 + 6 * frequencies);
    out.head<3>() = p;
    for (int k = 0; k < frequencies; ++k) {
        const double f = std::ldexp(std::numbers::pi, k);
        for (int c = 0; c < 3; ++c) {
            out[3 + 6 * k + c] = std::sin(f * p[c]);
            out[6 + 6 * k + c] = std::cos(f * p[c]);
        }
    }
    return out;
}

Eigen::VectorXd bilinear_sample(const synth::Image& image, const Vec2& uv, Eigen::MatrixX2d* duv) {
    VectorXd out = VectorXd::Zero(image.channels);
    if (duv) *duv = Eigen::MatrixX2d::Zero(image.channels, 2);
    const double u = uv.x(), v = uv.y();
    if (!(u >= 0.0 && v >= 0.0 && u <= image.width - 1 && v <= image.height - 1)) return out;
    const int x0 = std::min(static_cast<int>(u), std::max(image.width - 2, 0));
    const int y0 = std::min(static_cast<int>(v), std::max(image.height - 2, 0));
    const int x1 = std::min(x0 + 1, image.width - 1), y1 = std::min(y0 + 1, image.height - 1);
    const double fx = u - x0, fy = v - y0;
    for (int c = 0; c < image.channels; ++c) {
        const double a = image.at(x0, y0, c), b = image.at(x1, y0, c);
        const double d = image.at(x0, y1, c), e = image.at(x1, y1, c);
        out[c] = (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * d + fx * e);
        if (duv) {
            (*duv)(c, 0) = (1 - fy) * (b - a) + fy * (e - d);
            (*duv)(c, 1) = ((1 - fx) * d + fx * e) - ((1 - fx) * a + fx * b);
        }
    }
    return out;
}

Eigen::VectorXd fuse_average(const Eigen::MatrixXd& embeddings) {
    if (embeddings.cols() == 0) throw ValidationError("no frames");
    return embeddings.rowwise().sum() / static_cast<double>(embeddings.cols());
}

AttentionOutput fuse_attention(const Eigen::MatrixXd& embeddings, const Eigen::MatrixXd& wq, const Eigen::MatrixXd& wk,
                               const Eigen::MatrixXd& wv) {
    const VectorXd mean = fuse_average(embeddings);
    if (wq.cols() != embeddings.rows() || wk.cols() != embeddings.rows() || wv.cols() != embeddings.rows() ||
        wq.rows() != wk.rows())
        throw ValidationError("attention: projection shapes do not match the embeddings");
    const VectorXd q = wq * mean;
    VectorXd s = (wk * embeddings).transpose() * q / std::sqrt(static_cast<double>(wq.rows()));
    s = (s.array() - s.maxCoeff()).exp();
    AttentionOutput out;
    out.weights = s / s.sum();
    out.value = wv * (embeddings * out.weights);
    return out;
}

NetParams NetParams::zeros(const NetConfig& config) {
    config.validate();
    NetParams p;
    p.config_ = config;
    p.layout_ = build_layout(config);
    const auto& last = p.layout_.back();
    p.values = VectorXd::Zero(last.offset + last.size());
    return p;
}

NetParams NetParams::random(const NetConfig& config, std::uint64_t seed) {
    NetParams p = zeros(config);
    Rng rng(seed);
    for (const auto& e : p.layout_) {
        if (e.cols == 1 && e.name.ends_with(".bias")) continue;
        const double bound = std::sqrt(6.0 / static_cast<double>(e.cols));
        for (Eigen::Index k = 0; k < e.size(); ++k) p.values[e.offset + k] = rng.uniform(-bound, bound);
    }
    return p;
}

const LayoutEntry& NetParams::entry(const std::string& name) const {
    for (const auto& e : layout_)
        if (e.name == name) return e;
    throw ValidationError("no parameter block named '" + name + "'");
}

bool NetParams::has(const std::string& name) const {
    return std::any_of(layout_.begin(), layout_.end(), [&](const LayoutEntry& e) { return e.name == name; });
}

Eigen::Map<const Eigen::MatrixXd> NetParams::block(const std::string& name) const {
    const auto& e = entry(name);
    return Eigen::Map<const MatrixXd>(values.data() + e.offset, e.rows, e.cols);
}

Eigen::Map<Eigen::MatrixXd> NetParams::block(const std::string& name) {
    const auto& e = entry(name);
    return Eigen::Map<MatrixXd>(values.data() + e.offset, e.rows, e.cols);
}

void Batch::validate(const NetConfig& config, bool labelled) const {
    const auto n = static_cast<Eigen::Index>(size());
    if (frames < 1) throw ValidationError("no frames");
    if (normals.size() != points.size()) throw ValidationError("batch: normals and points differ in count");
    if (features.rows() != config.feature_channels)
        throw ValidationError("pixel.0: expected " + std::to_string(config.feature_channels) + " feature channels, got " +
                              std::to_string(features.rows()));
    if (features.cols() != frames * n) throw ValidationError("pixel.0: feature columns must equal frames x points");
    if (!features.allFinite()) throw ValidationError("batch: features must be finite");
    if (labelled) {
        if (occupancy.size() != n) throw ValidationError("occupancy: label count differs from point count");
        if (skin.rows() != kJoints || skin.cols() != n)
            throw ValidationError("skinning: labels must be " + std::to_string(kJoints) + " x points");
    }
}

Batch PointQuery::as_batch() const {
    Batch b;
    b.frames = static_cast<int>(features.cols());
    b.points = {p};
    b.normals = {normal};
    b.features = features;
    return b;
}

Prediction forward(const Batch& batch, const NetParams& params) {
    batch.validate(params.config(), false);
    Prediction pred;
    forward_all(batch, params, pred);
    return pred;
}

void LossConfig::validate() const {
    if (!(ohem_ratio > 0.0 && ohem_ratio <= 1.0)) throw ValidationError("ohem ratio must lie in (0, 1]");
    if (!(skin_weight >= 0.0)) throw ValidationError("skin weight must be >= 0");
}

double bce(double p, double y, double eps) {
    p = std::clamp(p, eps, 1.0 - eps);
    return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

std::vector<std::size_t> ohem_select(const Eigen::VectorXd& per_point, double ratio) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ValidationError("ohem ratio must lie in (0, 1]");
    const auto n = static_cast<std::size_t>(per_point.size());
    const auto keep = std::min(n, static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (keep == n) return order;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return per_point[a] > per_point[b]; });
    order.resize(keep);
    std::sort(order.begin(), order.end());
    return order;
}

LossValue loss(const Prediction& prediction, const Batch& batch, const LossConfig& config) {
    config.validate();
    const Eigen::Index n = prediction.occupancy_logit.size();
    if (batch.occupancy.size() != n || batch.skin.cols() != n) throw ValidationError("loss: label count mismatch");
    LossValue out;
    out.per_point.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double z = prediction.occupancy_logit[k], y = batch.occupancy[k];
        double occ;
        if (config.occupancy == OccupancyLoss::kBce) {
            occ = softplus(z) - y * z;
        } else {
            const double r = prediction.occupancy[k] - y;
            occ = r * r;
        }
        const auto u = prediction.skin_logit.col(k);
        const double mx = u.maxCoeff();
        const double lse = mx + std::log((u.array() - mx).exp().sum());
        double ce = 0.0;
        for (int j = 0; j < kJoints; ++j) ce -= batch.skin(j, k) * (u[j] - lse);
        out.per_point[k] = occ + config.skin_weight * ce;
    }
    out.kept = ohem_select(out.per_point, config.ohem_ratio);
    double sum = 0.0;
    for (std::size_t k : out.kept) sum += out.per_point[static_cast<Eigen::Index>(k)];
    out.total = out.kept.empty() ? 0.0 : sum / static_cast<double>(out.kept.size());
    return out;
}

Gradient backward(const Batch& batch, const NetParams& params, const LossConfig& config) {
    batch.validate(params.config(), true);
    config.validate();
    Prediction pred;
    const std::vector<Cache> caches = forward_all(batch, params, pred);
    Gradient out;
    out.loss = loss(pred, batch, config);

    const Eigen::Index n = static_cast<Eigen::Index>(batch.size());
    VectorXd weight = VectorXd::Zero(n);
    for (std::size_t k : out.loss.kept) weight[static_cast<Eigen::Index>(k)] = 1.0 / static_cast<double>(out.loss.kept.size());
    MatrixXd d_occ(1, n), d_skin(kJoints, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double p = pred.occupancy[k], y = batch.occupancy[k];
        d_occ(0, k) = weight[k] * (config.occupancy == OccupancyLoss::kBce ? p - y : 2.0 * (p - y) * p * (1.0 - p));
        d_skin.col(k) = weight[k] * config.skin_weight *
                        (pred.skinning.col(k) * batch.skin.col(k).sum() - batch.skin.col(k));
    }

    const Chunks chunks(n);
    std::vector<VectorXd> partial(chunks.count());
    parallel_for(chunks.count(), [&](std::size_t i) {
        partial[i] = VectorXd::Zero(params.values.size());
        backward_chunk(params, caches[i], d_occ.middleCols(chunks.begin[i], chunks.size[i]),
                       d_skin.middleCols(chunks.begin[i], chunks.size[i]), partial[i]);
    });
    out.grad = VectorXd::Zero(params.values.size());
    for (const auto& p : partial) out.grad += p;
    return out;
}

std::vector<BlockError> check_gradient(const Batch& batch, const NetParams& params, const LossConfig& config,
                                       double h, int per_block, std::uint64_t seed) {
    const VectorXd g = backward(batch, params, config).grad;
    NetParams probe = params;
    auto energy = [&]() {
        Prediction pred;
        forward_all(batch, probe, pred);
        return loss(pred, batch, config).total;
    };
    Rng rng(seed);
    std::vector<BlockError> out;
    for (const auto& e : params.layout()) {
        std::vector<Eigen::Index> coords(static_cast<std::size_t>(e.size()));
        std::iota(coords.begin(), coords.end(), e.offset);
        if (per_block > 0 && static_cast<Eigen::Index>(coords.size()) > per_block) {
            for (int k = 0; k < per_block; ++k)
                std::swap(coords[k], coords[k + rng.below(coords.size() - k)]);
            coords.resize(per_block);
        }
        BlockError be{e.name, 0.0, 0};
        for (Eigen::Index k : coords) {
            const double x = probe.values[k];
            probe.values[k] = x + h;
            const double ep = energy();
            probe.values[k] = x - h;
            const double em = energy();
            probe.values[k] = x;
            const double fd = (ep - em) / (2.0 * h);
            const double den = std::max({std::abs(fd), std::abs(g[k]), 1e-6});
            be.max_relative = std::max(be.max_relative, std::abs(fd - g[k]) / den);
            ++be.checked;
        }
        out.push_back(be);
    }
    return out;
}

void Adam::step(Eigen::VectorXd& x, const Eigen::VectorXd& g) {
    if (m.size() != x.size()) {
        m = VectorXd::Zero(x.size());
        v = VectorXd::Zero(x.size());
        step_count = 0;
    }
    ++step_count;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    x.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <typename T>
void put(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
    T value;
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw IoError("truncated checkpoint: " + path.string());
    return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NetParams& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path.string());
    out.write("AVP1", 4);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.layout().size()));
    for (const auto& e : params.layout()) {
        put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(e.size()));
    }
    out.write(reinterpret_cast<const char*>(params.values.data()),
              static_cast<std::streamsize>(params.values.size() * sizeof(double)));
    if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

NetParams load_checkpoint(const std::filesystem::path& path, const NetConfig& config) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "AVP1", 4) != 0) throw IoError("not a checkpoint: " + path.string());
    NetParams params = NetParams::zeros(config);
    const auto count = get<std::uint32_t>(in, path);
    if (count != params.layout().size())
        throw ValidationError("checkpoint has " + std::to_string(count) + " blocks, config expects " +
                              std::to_string(params.layout().size()));
    for (const auto& e : params.layout()) {
        const auto len = get<std::uint16_t>(in, path);
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw IoError("truncated checkpoint: " + path.string());
        const auto size = get<std::uint32_t>(in, path);
        if (name != e.name || size != e.size())
            throw ValidationError("checkpoint block '" + name + "' does not match config block '" + e.name + "'");
    }
    if (!in.read(reinterpret_cast<char*>(params.values.data()),
                 static_cast<std::streamsize>(params.values.size() * sizeof(double))))
        throw IoError("truncated checkpoint: " + path.string());
    if (in.peek() != std::ifstream::traits_type::eof()) throw IoError("trailing bytes in checkpoint: " + path.string());
    if (!params.values.allFinite()) throw NumericError("checkpoint holds non-finite values");
    return params;
}

Eigen::MatrixXd gather_features(const body::CapsuleBody& body, const std::vector<FrameInput>& frames,
                                const std::vector<Vec3>& points) {
    if (frames.empty()) throw ValidationError("no frames");
    const int channels = frames.front().image->channels;
    std::vector<body::PoseWarp> warps;
    for (const auto& f : frames) {
        if (!f.image || f.image->channels != channels) throw ValidationError("frames differ in channel count");
        warps.emplace_back(body, f.pose);
    }
    const auto n = static_cast<Eigen::Index>(points.size());
    MatrixXd out(channels, static_cast<Eigen::Index>(frames.size()) * n);
    parallel_for(points.size(), [&](std::size_t k) {
        const auto w = body.skin_weights_at(points[k]);
        for (std::size_t f = 0; f < frames.size(); ++f) {
            const Vec3 posed = warps[f].apply(points[k], w);
            out.col(static_cast<Eigen::Index>(f) * n + static_cast<Eigen::Index>(k)) =
                bilinear_sample(*frames[f].image, frames[f].camera.project(posed));
        }
    });
    return out;
}

std::string to_string(Fusion fusion) { return fusion == Fusion::kAverage ? "average" : "attention"; }

Fusion fusion_from_string(const std::string& text) {
    if (text == "average") return Fusion::kAverage;
    if (text == "attention") return Fusion::kAttention;
    throw ValidationError("unknown fusion mode '" + text + "'");
}

}  // namespace avatar::net
