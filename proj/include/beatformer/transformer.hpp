#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "beatformer/beat_tokenizer.hpp"
#include "beatformer/rng.hpp"
#include "beatformer/tensor.hpp"

namespace beatformer {

enum class HeadKind { Generative, Classifier };

std::string to_string(HeadKind head);
HeadKind parse_head(const std::string& name);

struct ModelConfig {
    std::size_t d_model = 1000;
    std::size_t n_encoders = 5;
    std::size_t n_heads = 8;
    std::size_t dff = 2048;
    std::size_t max_pos = 50;
    std::size_t d_class = 28;
    double dropout_rate = 0.1;
    bool causal = true;
    HeadKind head = HeadKind::Generative;

    std::size_t d_qkv() const { return d_model / n_heads; }

    /// Throws std::invalid_argument on non-positive sizes, a dropout rate
    /// outside [0, 1) or a d_model not divisible by n_heads.
    void validate() const;

    /// Canonical key=value text, one per line. The trunk variant leaves out
    /// everything that only concerns the output head.
    std::string signature() const;
    std::string trunk_signature() const;
    std::uint64_t hash() const;
    std::uint64_t trunk_hash() const;
};

std::uint64_t fnv1a64(const std::string& text);

/// Causal and key-padding restrictions for one sequence, row = query.
struct AttentionMask {
    std::size_t size = 0;
    std::vector<std::uint8_t> blocked;  // size*size, row-major

    static AttentionMask make(std::size_t seq_len, std::size_t n_real, bool causal);
    bool allowed(std::size_t query, std::size_t key) const { return !blocked[query * size + key]; }
};

inline constexpr double kBlockedScore = -1e9;

/// Sinusoidal table [max_pos, d_model]: sin on even, cos on odd columns.
Tensor positional_encoding(std::size_t max_pos, std::size_t d_model);

/// softmax(Q K^T / sqrt(d_k)) V over [heads, seq, d_k] inputs. When weights is
/// non-null it receives the attention probabilities [heads, seq, seq].
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                            Tensor* weights = nullptr);

struct AttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct EncoderParams {
    AttentionParams attn;
    Tensor ln1_gamma, ln1_beta;
    Tensor w1, b1, w2, b2;
    Tensor ln2_gamma, ln2_beta;
};

/// Dropout state for one forward pass; every dropout call draws from its own
/// split of the base generator.
class ForwardContext {
public:
    ForwardContext() : rng_(0) {}
    ForwardContext(bool training, std::uint64_t seed) : training_(training), rng_(seed) {}

    bool training() const { return training_; }
    CounterRng next_rng() { return rng_.split(calls_++); }

private:
    bool training_ = false;
    CounterRng rng_;
    std::uint64_t calls_ = 0;
};

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor multi_head_attention(const Tensor& x, const AttentionParams& p, std::size_t n_heads, const AttentionMask& mask,
                            Tensor* weights = nullptr);

/// Post-norm block: LN(x + Drop(MHA(x))), then LN(a + Drop(FFN(a))).
Tensor encoder_layer(const Tensor& x, const EncoderParams& p, std::size_t n_heads, const AttentionMask& mask,
                     double dropout_rate, ForwardContext& ctx);

/// Names and shapes of every trainable tensor, in registry order.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& config);

/// Sum of the registry's element counts.
std::size_t count_parameters(const ModelConfig& config);

class TransformerModel {
public:
    TransformerModel(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    Parameter& parameter(const std::string& name);
    std::size_t parameter_count() const;

    /// Trunk output [seq, d_model] for tokens [seq, d_model] whose first
    /// n_real rows are real beats.
    Tensor encode(const Tensor& tokens, std::size_t n_real, ForwardContext& ctx) const;

    /// Generative head: [seq, d_model]. Classifier head: [d_class]
    /// probabilities pooled over the real positions.
    Tensor forward(const Tensor& tokens, std::size_t n_real, ForwardContext& ctx) const;
    Tensor forward(const Tensor& tokens, std::size_t n_real) const;

    /// Swaps the output head for a freshly initialised one of the given kind.
    void replace_head(HeadKind head, std::uint64_t seed);

    /// Marks trunk parameters frozen (linear probe) or trainable.
    void set_trunk_trainable(bool trainable);

private:
    void bind();

    ModelConfig config_;
    std::vector<Parameter> params_;
    std::vector<EncoderParams> encoders_;
    Tensor head_w_, head_b_;
    Tensor pos_table_;
};

/// Tokens [rows, kTokenLength] from the first rows beats of a sequence.
Tensor sequence_tensor(const BeatSequence& seq, std::size_t rows);

}  // namespace beatformer
