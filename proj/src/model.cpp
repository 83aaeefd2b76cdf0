#include "unoranic/model.hpp"

#include "unoranic/error.hpp"

namespace unoranic {

namespace {

std::size_t parse_size(const std::map<std::string, std::string>& kv, const std::string& key, std::size_t fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    try {
        std::size_t used = 0;
        const auto v = std::stoull(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument(key);
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw ConfigError("model config key " + key + " has non-integer value '" + it->second + "'");
    }
}

}  // namespace

ModelConfig ModelConfig::preset(const std::string& name) {
    ModelConfig c;
    if (name == "small") return c;
    if (name == "large") {
        c.image_h = 224;
        c.image_w = 224;
        c.channels = 3;
        c.patch_size = 16;
        c.embed_dim = 768;
        return c;
    }
    throw ConfigError("unknown model preset '" + name + "' (expected small or large)");
}

void ModelConfig::validate() const {
    grid().validate();
    if (embed_dim == 0 || depth == 0) throw ConfigError("embed_dim and depth must be positive");
    if (heads == 0 || embed_dim % heads != 0) {
        throw ConfigError("heads (" + std::to_string(heads) + ") must divide embed_dim (" + std::to_string(embed_dim) + ")");
    }
    if (embed_dim % 2 != 0) throw ConfigError("embed_dim must be even for the sine-cosine table");
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
    return {
        {"model.image_h", std::to_string(image_h)},   {"model.image_w", std::to_string(image_w)},
        {"model.channels", std::to_string(channels)}, {"model.patch_size", std::to_string(patch_size)},
        {"model.embed_dim", std::to_string(embed_dim)}, {"model.depth", std::to_string(depth)},
        {"model.heads", std::to_string(heads)},       {"model.probe_depth", std::to_string(probe_depth)},
    };
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    c.image_h = parse_size(kv, "model.image_h", c.image_h);
    c.image_w = parse_size(kv, "model.image_w", c.image_w);
    c.channels = parse_size(kv, "model.channels", c.channels);
    c.patch_size = parse_size(kv, "model.patch_size", c.patch_size);
    c.embed_dim = parse_size(kv, "model.embed_dim", c.embed_dim);
    c.depth = parse_size(kv, "model.depth", c.depth);
    c.heads = parse_size(kv, "model.heads", c.heads);
    c.probe_depth = parse_size(kv, "model.probe_depth", c.probe_depth);
    return c;
}

Encoder::Encoder(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    const auto grid = config_.grid();
    patch_embed_ = Linear<float>(params_, "encoder.patch_embed", grid.patch_dim(), config_.embed_dim, seed);
    pos_ = positional_embedding<float>(grid.grid_h(), grid.grid_w(), config_.embed_dim);
    for (std::size_t i = 0; i < config_.depth; ++i) {
        blocks_.emplace_back(params_, "encoder.block" + std::to_string(i), config_.embed_dim, config_.heads, seed);
    }
    norm_ = LayerNorm<float>(params_, "encoder.norm", config_.embed_dim);
}

Tensor Encoder::operator()(const Tensor& images) const {
    auto x = add(patch_embed_(patchify(images, config_.grid())), pos_);
    for (const auto& block : blocks_) x = block(x);
    return norm_(x);
}

Decoder::Decoder(const ModelConfig& config, const std::string& prefix, std::uint64_t seed) : config_(config) {
    config_.validate();
    const auto grid = config_.grid();
    input_proj_ = Linear<float>(params_, prefix + ".input_proj", config_.embed_dim, config_.embed_dim, seed);
    pos_ = positional_embedding<float>(grid.grid_h(), grid.grid_w(), config_.embed_dim);
    for (std::size_t i = 0; i < config_.depth; ++i) {
        blocks_.emplace_back(params_, prefix + ".block" + std::to_string(i), config_.embed_dim, config_.heads, seed);
    }
    norm_ = LayerNorm<float>(params_, prefix + ".norm", config_.embed_dim);
    head_ = Linear<float>(params_, prefix + ".head", config_.embed_dim, grid.patch_dim(), seed);
}

Tensor Decoder::operator()(const Tensor& latent) const {
    const auto grid = config_.grid();
    if (latent.rank() != 3 || latent.dim(1) != grid.tokens() || latent.dim(2) != config_.embed_dim) {
        throw DimensionError("decoder expects latent [N," + std::to_string(grid.tokens()) + "," +
                             std::to_string(config_.embed_dim) + "], got " + shape_str(latent.shape()));
    }
    auto x = add(input_proj_(latent), pos_);
    for (const auto& block : blocks_) x = block(x);
    return unpatchify(head_(norm_(x)), grid);
}

UnoranicPlusModel::UnoranicPlusModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config),
      encoder_(std::make_shared<Encoder>(config, seed)),
      synthetic_(std::make_unique<Decoder>(config, "decoder", seed)),
      anatomy_(std::make_unique<Decoder>(config, "decoder_anatomy", seed)) {}

Tensor UnoranicPlusModel::encode(const Tensor& images) const {
    const auto& c = config_;
    if (images.rank() != 4 || images.dim(1) != c.channels || images.dim(2) != c.image_h || images.dim(3) != c.image_w) {
        throw DimensionError("model configured for [N," + std::to_string(c.channels) + "," + std::to_string(c.image_h) +
                             "," + std::to_string(c.image_w) + "] images, got " + shape_str(images.shape()));
    }
    return (*encoder_)(images);
}

LossTerms UnoranicPlusModel::loss(const Tensor& clean, const Tensor& distorted) const {
    if (clean.shape() != distorted.shape()) {
        throw DimensionError("clean " + shape_str(clean.shape()) + " and distorted " + shape_str(distorted.shape()) +
                             " batches differ");
    }
    const auto latent = encode(distorted);
    LossTerms t;
    t.s_hat = decode_synthetic(latent);
    t.i_hat_anatomy = decode_anatomy(latent);
    t.synthetic = mse(t.s_hat, distorted);
    t.anatomy = mse(t.i_hat_anatomy, clean);
    t.total = add(t.synthetic, t.anatomy);
    return t;
}

NamedTensors UnoranicPlusModel::named_parameters() const {
    NamedTensors out;
    for (const auto* store : {&encoder_->parameters(), &synthetic_->parameters(), &anatomy_->parameters()}) {
        for (const auto& e : store->entries()) out.push_back(e);
    }
    return out;
}

ProbeClassifier::ProbeClassifier(std::shared_ptr<const Encoder> encoder, std::size_t classes, std::uint64_t seed)
    : encoder_(std::move(encoder)), classes_(classes) {
    if (!encoder_) throw StateError("probe classifier needs a trained encoder");
    if (classes_ < 2) throw ConfigError("probe needs at least 2 classes");
    const auto& c = encoder_->config();
    for (std::size_t i = 0; i < c.probe_depth; ++i) {
        blocks_.emplace_back(params_, "probe.block" + std::to_string(i), c.embed_dim, c.heads, seed);
    }
    norm_ = LayerNorm<float>(params_, "probe.norm", c.embed_dim);
    head_ = Linear<float>(params_, "probe.head", c.embed_dim, classes_, seed);
}

Tensor ProbeClassifier::operator()(const Tensor& images) const {
    Tensor latent;
    {
        NoGradGuard frozen;
        latent = (*encoder_)(images);
    }
    auto x = latent;
    for (const auto& block : blocks_) x = block(x);
    return head_(mean_dim(norm_(x), 1));
}

NamedTensors ProbeClassifier::named_parameters() const {
    return params_.entries();
}

}  // namespace unoranic
