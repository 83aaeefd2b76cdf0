#pragma once

// The unORANIC+ autoencoder: one ViT encoder E feeding two independent ViT
// decoders, D (reconstructs the distorted input S) and D_A (reconstructs the
// clean anatomy I), plus the frozen-encoder probe classifier.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "unoranic/image.hpp"
#include "unoranic/layers.hpp"

namespace unoranic {

struct ModelConfig {
    std::size_t image_h = 28;
    std::size_t image_w = 28;
    std::size_t channels = 1;
    std::size_t patch_size = 4;
    std::size_t embed_dim = 128;
    std::size_t depth = 12;  // shared by the encoder and both decoders
    std::size_t heads = 16;
    std::size_t probe_depth = 2;

    /// "small": 28x28, p=4, dim 128; "large": 224x224x3, p=16, dim 768.
    /// Both use depth 12 with 16 heads.
    static ModelConfig preset(const std::string& name);

    PatchGrid grid() const { return {image_h, image_w, channels, patch_size}; }
    void validate() const;

    std::map<std::string, std::string> to_kv() const;
    /// Reads the keys written by to_kv; unknown keys are ignored, missing keys keep defaults.
    static ModelConfig from_kv(const std::map<std::string, std::string>& kv);

    bool operator==(const ModelConfig&) const = default;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

class Encoder {
public:
    Encoder(const ModelConfig& config, std::uint64_t seed);

    /// [N,C,H,W] -> latent tokens [N,T,embed_dim].
    Tensor operator()(const Tensor& images) const;

    ParameterStore<float>& parameters() noexcept { return params_; }
    const ParameterStore<float>& parameters() const noexcept { return params_; }
    const ModelConfig& config() const noexcept { return config_; }

private:
    ModelConfig config_;
    ParameterStore<float> params_;
    Linear<float> patch_embed_;
    Tensor pos_;
    std::vector<TransformerBlock<float>> blocks_;
    LayerNorm<float> norm_;
};

class Decoder {
public:
    Decoder(const ModelConfig& config, const std::string& prefix, std::uint64_t seed);

    /// Latent tokens [N,T,embed_dim] -> unclamped image [N,C,H,W].
    Tensor operator()(const Tensor& latent) const;

    ParameterStore<float>& parameters() noexcept { return params_; }
    const ParameterStore<float>& parameters() const noexcept { return params_; }

private:
    ModelConfig config_;
    ParameterStore<float> params_;
    Linear<float> input_proj_;
    Tensor pos_;
    std::vector<TransformerBlock<float>> blocks_;
    LayerNorm<float> norm_;
    Linear<float> head_;
};

struct LossTerms {
    Tensor total;          // L_RS + L_RI
    Tensor synthetic;      // L_RS = MSE(S_hat, S)
    Tensor anatomy;        // L_RI = MSE(I_hat_A, I)
    Tensor s_hat;
    Tensor i_hat_anatomy;
};

class UnoranicPlusModel {
public:
    UnoranicPlusModel(const ModelConfig& config, std::uint64_t seed);

    Tensor encode(const Tensor& images) const;
    Tensor encode(const ImageBatch& images) const { return encode(images.to_tensor()); }
    Tensor decode_synthetic(const Tensor& latent) const { return (*synthetic_)(latent); }
    Tensor decode_anatomy(const Tensor& latent) const { return (*anatomy_)(latent); }

    /// Training objective for clean images I and their distorted versions S = A_S(I).
    LossTerms loss(const Tensor& clean, const Tensor& distorted) const;

    const ModelConfig& config() const noexcept { return config_; }
    const std::shared_ptr<Encoder>& encoder() const noexcept { return encoder_; }
    Decoder& synthetic_decoder() noexcept { return *synthetic_; }
    Decoder& anatomy_decoder() noexcept { return *anatomy_; }

    /// Every parameter in registration order: encoder, D, then D_A.
    NamedTensors named_parameters() const;

private:
    ModelConfig config_;
    std::shared_ptr<Encoder> encoder_;
    std::unique_ptr<Decoder> synthetic_;
    std::unique_ptr<Decoder> anatomy_;
};

/// Frozen encoder + trainable ViT head: probe_depth transformer blocks,
/// layernorm, mean-pool over tokens, linear map to class logits.
class ProbeClassifier {
public:
    ProbeClassifier(std::shared_ptr<const Encoder> encoder, std::size_t classes, std::uint64_t seed);

    /// Logits [N,K]. The encoder runs without gradient recording, so no
    /// gradient ever reaches its parameters.
    Tensor operator()(const Tensor& images) const;
    Tensor operator()(const ImageBatch& images) const { return (*this)(images.to_tensor()); }

    std::size_t classes() const noexcept { return classes_; }
    const Encoder& encoder() const noexcept { return *encoder_; }
    ParameterStore<float>& parameters() noexcept { return params_; }
    const ParameterStore<float>& parameters() const noexcept { return params_; }
    NamedTensors named_parameters() const;

private:
    std::shared_ptr<const Encoder> encoder_;
    std::size_t classes_;
    ParameterStore<float> params_;
    std::vector<TransformerBlock<float>> blocks_;
    LayerNorm<float> norm_;
    Linear<float> head_;
};

}  // namespace unoranic
