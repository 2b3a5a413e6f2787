#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "persam/errors.hpp"
#include "persam/training.hpp"

namespace persam {

using nlohmann::json;

namespace {
constexpr int kCheckpointFormatVersion = 1;

json config_json(const ModelConfig& c) {
    return json{{"feature_dim", c.feature_dim},
                {"bag_size", c.bag_size},
                {"num_factors", c.num_factors},
                {"num_classes", c.num_classes},
                {"layers", c.layers},
                {"heads", c.heads},
                {"dropout", c.dropout},
                {"factor_dims", c.factor_dims},
                {"patch_size", c.patch_size},
                {"patch_channels", c.patch_channels},
                {"conv_channels1", c.conv_channels1},
                {"conv_channels2", c.conv_channels2},
                {"clinical_hidden", c.clinical_hidden},
                {"classifier_hidden", c.classifier_hidden},
                {"ffn_multiplier", c.ffn_multiplier},
                {"mil_attention_hidden", c.mil_attention_hidden},
                {"mil_classifier_hidden", c.mil_classifier_hidden},
                {"mil_gated_attention", c.mil_gated_attention},
                {"scale_relevance_logits", c.scale_relevance_logits},
                {"noisy_or_rescale", c.noisy_or_mode == NoisyOrMode::kRescale},
                {"noisy_or_floor", c.noisy_or_floor}};
}

ModelConfig config_from(const json& j) {
    ModelConfig c;
    if (j.contains("preset")) c = ModelConfig::preset(j["preset"].get<std::string>());
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.bag_size = j.value("bag_size", c.bag_size);
    c.num_factors = j.value("num_factors", c.num_factors);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.dropout = j.value("dropout", c.dropout);
    c.factor_dims = j.value("factor_dims", c.factor_dims);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.patch_channels = j.value("patch_channels", c.patch_channels);
    c.conv_channels1 = j.value("conv_channels1", c.conv_channels1);
    c.conv_channels2 = j.value("conv_channels2", c.conv_channels2);
    c.clinical_hidden = j.value("clinical_hidden", c.clinical_hidden);
    c.classifier_hidden = j.value("classifier_hidden", c.classifier_hidden);
    c.ffn_multiplier = j.value("ffn_multiplier", c.ffn_multiplier);
    c.mil_attention_hidden = j.value("mil_attention_hidden", c.mil_attention_hidden);
    c.mil_classifier_hidden = j.value("mil_classifier_hidden", c.mil_classifier_hidden);
    c.mil_gated_attention = j.value("mil_gated_attention", c.mil_gated_attention);
    c.scale_relevance_logits = j.value("scale_relevance_logits", c.scale_relevance_logits);
    c.noisy_or_mode = j.value("noisy_or_rescale", true) ? NoisyOrMode::kRescale
                                                        : NoisyOrMode::kClampMax;
    c.noisy_or_floor = j.value("noisy_or_floor", c.noisy_or_floor);
    c.validate();
    return c;
}
}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return config_json(cfg).dump(2); }

ModelConfig model_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError("model config: " + std::string(e.what()), e.byte);
    }
    return config_from(j);
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::vector<char> blob;
    json entries = json::array();
    for (const auto& e : ckpt.entries) {
        json je;
        je["name"] = e.name;
        je["group"] = param_group_name(e.group);
        je["shape"] = e.shape;
        je["offset"] = blob.size();
        je["count"] = e.data.size();
        const std::size_t at = blob.size();
        blob.resize(at + e.data.size() * sizeof(double));
        std::memcpy(blob.data() + at, e.data.data(), e.data.size() * sizeof(double));
        entries.push_back(std::move(je));
    }
    json manifest;
    manifest["version"] = kCheckpointFormatVersion;
    manifest["model"] = ckpt.model_name;
    manifest["config"] = config_json(ckpt.config);
    manifest["epoch"] = ckpt.epoch;
    manifest["val_loss"] = ckpt.val_loss;
    manifest["rng_state"] = ckpt.rng_state;
    manifest["init_seed"] = ckpt.init_seed;
    manifest["fold"] = ckpt.fold;
    manifest["split_seed"] = ckpt.split_seed;
    manifest["bags_per_case"] = ckpt.bags_per_case;
    manifest["bag_size"] = ckpt.bag_size;
    manifest["dtype"] = "f64-le";
    manifest["blob"] = "params.bin";
    manifest["blob_bytes"] = blob.size();
    manifest["params"] = std::move(entries);

    std::ofstream mf(std::filesystem::path(dir) / "checkpoint.json", std::ios::binary);
    mf << manifest.dump(2) << "\n";
    std::ofstream bf(std::filesystem::path(dir) / "params.bin", std::ios::binary);
    bf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

Checkpoint load_checkpoint(const std::string& dir) {
    const auto mpath = std::filesystem::path(dir) / "checkpoint.json";
    std::ifstream mf(mpath, std::ios::binary);
    if (!mf) throw ParseError("cannot open " + mpath.string(), 0);
    std::string text((std::istreambuf_iterator<char>(mf)), std::istreambuf_iterator<char>());
    json manifest;
    try {
        manifest = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError("checkpoint manifest: " + std::string(e.what()), e.byte);
    }
    const int version = manifest.value("version", -1);
    if (version != kCheckpointFormatVersion)
        throw UnsupportedVersionError("checkpoint format version " +
                                      std::to_string(version) + " unsupported");

    Checkpoint ckpt;
    ckpt.model_name = manifest.at("model").get<std::string>();
    ckpt.config = config_from(manifest.at("config"));
    ckpt.epoch = manifest.value("epoch", 0);
    ckpt.val_loss = manifest.value("val_loss", 0.0);
    ckpt.rng_state = manifest.value("rng_state", std::uint64_t{0});
    ckpt.init_seed = manifest.value("init_seed", std::uint64_t{0});
    ckpt.fold = manifest.value("fold", 0);
    ckpt.split_seed = manifest.value("split_seed", std::uint64_t{0});
    ckpt.bags_per_case = manifest.value("bags_per_case", std::size_t{4});
    ckpt.bag_size = manifest.value("bag_size", std::size_t{12});

    const auto bpath = std::filesystem::path(dir) / manifest.value("blob", "params.bin");
    std::ifstream bf(bpath, std::ios::binary);
    if (!bf) throw ParseError("cannot open " + bpath.string(), 0);
    std::vector<char> blob((std::istreambuf_iterator<char>(bf)),
                           std::istreambuf_iterator<char>());

    for (const auto& je : manifest.at("params")) {
        Checkpoint::Entry e;
        e.name = je.at("name").get<std::string>();
        e.group = param_group_from_name(je.at("group").get<std::string>());
        e.shape = je.at("shape").get<Shape>();
        const std::size_t offset = je.at("offset").get<std::size_t>();
        const std::size_t count = je.at("count").get<std::size_t>();
        if (offset + count * sizeof(double) > blob.size())
            throw ParseError("checkpoint blob truncated reading '" + e.name + "'",
                             blob.size());
        e.data.resize(count);
        std::memcpy(e.data.data(), blob.data() + offset, count * sizeof(double));
        ckpt.entries.push_back(std::move(e));
    }
    return ckpt;
}

}  // namespace persam
