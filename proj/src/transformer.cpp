#include "beatformer/transformer.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace beatformer {

std::string to_string(HeadKind head) { return head == HeadKind::Generative ? "generative" : "classifier"; }

HeadKind parse_head(const std::string& name) {
    if (name == "generative") return HeadKind::Generative;
    if (name == "classifier") return HeadKind::Classifier;
    throw std::invalid_argument("unknown head '" + name + "'");
}

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void ModelConfig::validate() const {
    if (d_model == 0 || n_encoders == 0 || n_heads == 0 || dff == 0 || max_pos == 0 || d_class == 0) {
        throw std::invalid_argument("model dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        throw std::invalid_argument("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                                    std::to_string(n_heads) + ")");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
}

std::string ModelConfig::trunk_signature() const {
    std::ostringstream os;
    os << "d_model=" << d_model << '\n'
       << "n_encoders=" << n_encoders << '\n'
       << "n_heads=" << n_heads << '\n'
       << "dff=" << dff << '\n'
       << "max_pos=" << max_pos << '\n'
       << "causal=" << (causal ? "true" : "false") << '\n';
    return os.str();
}

std::string ModelConfig::signature() const {
    std::ostringstream os;
    os << trunk_signature() << "head=" << to_string(head) << '\n';
    if (head == HeadKind::Classifier) os << "d_class=" << d_class << '\n';
    return os.str();
}

std::uint64_t ModelConfig::hash() const { return fnv1a64(signature()); }
std::uint64_t ModelConfig::trunk_hash() const { return fnv1a64(trunk_signature()); }

AttentionMask AttentionMask::make(std::size_t seq_len, std::size_t n_real, bool causal) {
    AttentionMask m;
    m.size = seq_len;
    m.blocked.assign(seq_len * seq_len, 0);
    for (std::size_t i = 0; i < seq_len; ++i) {
        for (std::size_t j = 0; j < seq_len; ++j) {
            const bool block = (causal && j > i) || j >= n_real;
            m.blocked[i * seq_len + j] = block ? 1 : 0;
        }
    }
    return m;
}

Tensor positional_encoding(std::size_t max_pos, std::size_t d_model) {
    std::vector<double> pe(max_pos * d_model);
    for (std::size_t pos = 0; pos < max_pos; ++pos) {
        for (std::size_t c = 0; c < d_model; ++c) {
            const double pair = static_cast<double>(c - c % 2);
            const double angle = static_cast<double>(pos) / std::pow(10000.0, pair / static_cast<double>(d_model));
            pe[pos * d_model + c] = c % 2 == 0 ? std::sin(angle) : std::cos(angle);
        }
    }
    return Tensor::from({max_pos, d_model}, std::move(pe));
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                            Tensor* weights) {
    if (q.rank() != 3 || k.shape() != q.shape() || v.shape() != q.shape()) {
        throw ShapeError("attention expects equal [heads, seq, d_k] inputs");
    }
    if (mask.size != q.dim(1)) throw ShapeError("attention mask does not match sequence length");
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.dim(2)));
    auto scores = scale(matmul(q, permute(k, {0, 2, 1})), inv_sqrt_dk);
    auto probs = softmax(masked_fill(scores, mask.blocked, kBlockedScore));
    if (weights) *weights = probs;
    return matmul(probs, v);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

Tensor multi_head_attention(const Tensor& x, const AttentionParams& p, std::size_t n_heads, const AttentionMask& mask,
                            Tensor* weights) {
    const std::size_t seq = x.dim(0);
    const std::size_t d_model = x.dim(1);
    const std::size_t d_k = d_model / n_heads;
    auto split_heads = [&](const Tensor& t) { return permute(reshape(t, {seq, n_heads, d_k}), {1, 0, 2}); };

    const auto q = split_heads(linear(x, p.wq, p.bq));
    const auto k = split_heads(linear(x, p.wk, p.bk));
    const auto v = split_heads(linear(x, p.wv, p.bv));
    const auto heads = scaled_dot_attention(q, k, v, mask, weights);
    const auto merged = reshape(permute(heads, {1, 0, 2}), {seq, d_model});
    return linear(merged, p.wo, p.bo);
}

Tensor encoder_layer(const Tensor& x, const EncoderParams& p, std::size_t n_heads, const AttentionMask& mask,
                     double dropout_rate, ForwardContext& ctx) {
    const auto attn = multi_head_attention(x, p.attn, n_heads, mask);
    const auto a1 = layer_norm(add(x, dropout(attn, dropout_rate, ctx.training(), ctx.next_rng())), p.ln1_gamma,
                               p.ln1_beta);
    const auto ffn = linear(relu(linear(a1, p.w1, p.b1)), p.w2, p.b2);
    return layer_norm(add(a1, dropout(ffn, dropout_rate, ctx.training(), ctx.next_rng())), p.ln2_gamma, p.ln2_beta);
}

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& config) {
    config.validate();
    const auto d = config.d_model;
    std::vector<std::pair<std::string, Shape>> out;
    for (std::size_t i = 0; i < config.n_encoders; ++i) {
        const std::string p = "enc." + std::to_string(i) + ".";
        for (const char* proj : {"q", "k", "v", "o"}) {
            out.emplace_back(p + "attn.w" + proj, Shape{d, d});
            out.emplace_back(p + "attn.b" + proj, Shape{d});
        }
        out.emplace_back(p + "ln1.gamma", Shape{d});
        out.emplace_back(p + "ln1.beta", Shape{d});
        out.emplace_back(p + "ffn.w1", Shape{d, config.dff});
        out.emplace_back(p + "ffn.b1", Shape{config.dff});
        out.emplace_back(p + "ffn.w2", Shape{config.dff, d});
        out.emplace_back(p + "ffn.b2", Shape{d});
        out.emplace_back(p + "ln2.gamma", Shape{d});
        out.emplace_back(p + "ln2.beta", Shape{d});
    }
    const std::size_t head_out = config.head == HeadKind::Generative ? d : config.d_class;
    out.emplace_back("head.w", Shape{d, head_out});
    out.emplace_back("head.b", Shape{head_out});
    return out;
}

std::size_t count_parameters(const ModelConfig& config) {
    std::size_t total = 0;
    for (const auto& [name, shape] : parameter_shapes(config)) total += shape_numel(shape);
    return total;
}

namespace {

Tensor init_parameter(const std::string& name, const Shape& shape, std::uint64_t seed) {
    if (shape.size() == 2) return xavier_uniform(shape[0], shape[1], CounterRng(seed).split(fnv1a64(name)));
    const bool is_gain = name.size() >= 5 && name.compare(name.size() - 5, 5, "gamma") == 0;
    return Tensor::full(shape, is_gain ? 1.0 : 0.0, true);
}

bool is_head(const std::string& name) { return name.rfind("head.", 0) == 0; }

}  // namespace

TransformerModel::TransformerModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    for (const auto& [name, shape] : parameter_shapes(config_)) {
        params_.push_back({name, init_parameter(name, shape, seed), true});
    }
    pos_table_ = positional_encoding(config_.max_pos, config_.d_model);
    bind();
}

Parameter& TransformerModel::parameter(const std::string& name) {
    for (auto& p : params_) {
        if (p.name == name) return p;
    }
    throw std::out_of_range("no parameter named " + name);
}

std::size_t TransformerModel::parameter_count() const {
    std::size_t total = 0;
    for (const auto& p : params_) total += p.tensor.numel();
    return total;
}

void TransformerModel::bind() {
    encoders_.assign(config_.n_encoders, {});
    for (std::size_t i = 0; i < config_.n_encoders; ++i) {
        const std::string p = "enc." + std::to_string(i) + ".";
        auto& e = encoders_[i];
        auto t = [&](const std::string& n) { return parameter(p + n).tensor; };
        e.attn = {t("attn.wq"), t("attn.bq"), t("attn.wk"), t("attn.bk"),
                  t("attn.wv"), t("attn.bv"), t("attn.wo"), t("attn.bo")};
        e.ln1_gamma = t("ln1.gamma");
        e.ln1_beta = t("ln1.beta");
        e.w1 = t("ffn.w1");
        e.b1 = t("ffn.b1");
        e.w2 = t("ffn.w2");
        e.b2 = t("ffn.b2");
        e.ln2_gamma = t("ln2.gamma");
        e.ln2_beta = t("ln2.beta");
    }
    head_w_ = parameter("head.w").tensor;
    head_b_ = parameter("head.b").tensor;
}

Tensor TransformerModel::encode(const Tensor& tokens, std::size_t n_real, ForwardContext& ctx) const {
    if (tokens.rank() != 2 || tokens.dim(1) != config_.d_model) {
        throw ShapeError("tokens must be [seq, " + std::to_string(config_.d_model) + "], got " +
                         shape_str(tokens.shape()));
    }
    const std::size_t seq = tokens.dim(0);
    if (seq > config_.max_pos) {
        throw std::invalid_argument("sequence length " + std::to_string(seq) + " exceeds max_pos " +
                                    std::to_string(config_.max_pos));
    }
    if (n_real == 0 || n_real > seq) throw std::invalid_argument("n_real must lie in [1, seq]");

    const auto& table = pos_table_.data();
    const auto pos = Tensor::from({seq, config_.d_model},
                                  std::vector<double>(table.begin(), table.begin() + static_cast<std::ptrdiff_t>(
                                                                                         seq * config_.d_model)));
    const auto mask = AttentionMask::make(seq, n_real, config_.causal);
    Tensor x = add(tokens, pos);
    for (const auto& enc : encoders_) x = encoder_layer(x, enc, config_.n_heads, mask, config_.dropout_rate, ctx);
    return x;
}

Tensor TransformerModel::forward(const Tensor& tokens, std::size_t n_real, ForwardContext& ctx) const {
    const auto h = encode(tokens, n_real, ctx);
    if (config_.head == HeadKind::Generative) return linear(h, head_w_, head_b_);

    const std::size_t seq = h.dim(0);
    std::vector<double> pool(seq, 0.0);
    for (std::size_t j = 0; j < n_real; ++j) pool[j] = 1.0 / static_cast<double>(n_real);
    const auto pooled = matmul(Tensor::from({1, seq}, std::move(pool)), h);
    return reshape(sigmoid(linear(pooled, head_w_, head_b_)), {config_.d_class});
}

Tensor TransformerModel::forward(const Tensor& tokens, std::size_t n_real) const {
    ForwardContext ctx;
    return forward(tokens, n_real, ctx);
}

void TransformerModel::replace_head(HeadKind head, std::uint64_t seed) {
    std::erase_if(params_, [](const Parameter& p) { return is_head(p.name); });
    config_.head = head;
    for (const auto& [name, shape] : parameter_shapes(config_)) {
        if (is_head(name)) params_.push_back({name, init_parameter(name, shape, seed), true});
    }
    bind();
}

void TransformerModel::set_trunk_trainable(bool trainable) {
    for (auto& p : params_) {
        if (is_head(p.name)) continue;
        p.trainable = trainable;
        p.tensor.set_requires_grad(trainable);
        if (!trainable) p.tensor.clear_grad();
    }
}

Tensor sequence_tensor(const BeatSequence& seq, std::size_t rows) {
    if (rows > seq.tokens.size()) throw std::invalid_argument("more rows requested than tokens available");
    std::vector<double> data;
    data.reserve(rows * kTokenLength);
    for (std::size_t k = 0; k < rows; ++k) data.insert(data.end(), seq.tokens[k].values.begin(), seq.tokens[k].values.end());
    return Tensor::from({rows, kTokenLength}, std::move(data));
}

}  // namespace beatformer
