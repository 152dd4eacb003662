#include "subjectdiff/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "subjectdiff/serialize.hpp"

namespace sdiff::pipe {

namespace fs = std::filesystem;

ModelBundle ModelBundle::init(const RunConfig& cfg, uint64_t seed) {
    ModelBundle b;
    b.cfg = cfg;
    b.schedule = cfg.make_schedule();
    Rng root(seed);
    b.image_encoder = std::make_unique<enc::ImageEncoder>(cfg.image_encoder_config(), root.child("image_encoder"));
    b.qformer = std::make_unique<enc::QFormer>(cfg.qformer_config(), root.child("multimodal_encoder"));
    b.projection = std::make_unique<prompt::ProjectionMlp>(cfg.prompt_config(), root.child("projection"));
    b.text_encoder = std::make_unique<prompt::TextCondEncoder>(cfg.prompt_config(), root.child("text_encoder"));
    b.unet = std::make_unique<diff::UNet>(cfg.unet_config(), root.child("unet"));
    b.codec = std::make_unique<diff::LatentCodec>(cfg.codec_config(), root.child("codec"));
    return b;
}

std::vector<ModelBundle::ComponentRef> ModelBundle::components() {
    std::vector<ComponentRef> out;
    if (image_encoder) out.push_back({"image_encoder", &image_encoder->store()});
    if (qformer) out.push_back({"multimodal_encoder", &qformer->store()});
    if (projection) out.push_back({"projection", &projection->store()});
    if (text_encoder) out.push_back({"text_encoder", &text_encoder->store()});
    if (unet) out.push_back({"unet", &unet->store()});
    if (codec) out.push_back({"codec", &codec->store()});
    if (control) out.push_back({"control_branch", &control->store()});
    return out;
}

nn::ParamStore* ModelBundle::find_store(const std::string& name) {
    for (auto& c : components())
        if (c.name == name) return c.store;
    return nullptr;
}

uint64_t component_hash(const nn::ParamStore& store) {
    uint64_t h = 1469598103934665603ULL;
    for (const auto& p : store.items) {
        h = fnv1a(p->name.data(), p->name.size(), h);
        h = hash_tensor(p->var->val, h);
    }
    return h;
}

namespace {

std::string component_blob(const nn::ParamStore& store) {
    std::ostringstream os(std::ios::binary);
    for (const auto& p : store.items) write_tensor(os, p->var->val);
    return os.str();
}

void load_component_blob(nn::ParamStore& store, const std::string& bytes) {
    std::istringstream is(bytes, std::ios::binary);
    for (auto& p : store.items) {
        Tensor t = read_tensor(is);
        SDIFF_CHECK(t.shape == p->var->val.shape, ErrorKind::Corruption,
                    "tensor shape mismatch for " + p->name);
        p->var->val = std::move(t);
    }
    is.peek();
    SDIFF_CHECK(is.eof(), ErrorKind::Corruption, "trailing bytes in component blob");
}

std::string optimizer_blob(const nn::AdamW& opt) {
    std::ostringstream os(std::ios::binary);
    uint64_t n = opt.slots.size();
    os.write(reinterpret_cast<const char*>(&opt.t), sizeof(opt.t));
    os.write(reinterpret_cast<const char*>(&n), sizeof(n));
    std::vector<std::string> keys;
    for (const auto& [k, _] : opt.slots) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    for (const auto& k : keys) {
        uint32_t len = (uint32_t)k.size();
        os.write(reinterpret_cast<const char*>(&len), sizeof(len));
        os.write(k.data(), len);
        write_tensor(os, opt.slots.at(k).m);
        write_tensor(os, opt.slots.at(k).v);
    }
    return os.str();
}

void load_optimizer_blob(nn::AdamW& opt, const std::string& bytes) {
    std::istringstream is(bytes, std::ios::binary);
    uint64_t n = 0;
    is.read(reinterpret_cast<char*>(&opt.t), sizeof(opt.t));
    is.read(reinterpret_cast<char*>(&n), sizeof(n));
    SDIFF_CHECK(is.good(), ErrorKind::Corruption, "bad optimizer blob");
    for (uint64_t i = 0; i < n; ++i) {
        uint32_t len = 0;
        is.read(reinterpret_cast<char*>(&len), sizeof(len));
        SDIFF_CHECK(is.good() && len < (1u << 16), ErrorKind::Corruption, "bad optimizer key");
        std::string k(len, '\0');
        is.read(k.data(), len);
        nn::AdamW::Slot s;
        s.m = read_tensor(is);
        s.v = read_tensor(is);
        opt.slots[k] = std::move(s);
    }
}

}  // namespace

void save_checkpoint(const std::string& dir, ModelBundle& bundle, const CheckpointInfo& info,
                     const nn::AdamW* optimizer) {
    fs::create_directories(dir);
    nlohmann::ordered_json manifest;
    manifest["format"] = 1;
    manifest["stage"] = info.stage;
    manifest["trained_steps"] = info.trained_steps;
    manifest["schedule"] = {{"T", bundle.cfg.schedule_T},
                            {"beta_start", bundle.cfg.beta_start},
                            {"beta_end", bundle.cfg.beta_end}};
    manifest["config"] = bundle.cfg.to_json();

    nlohmann::ordered_json comps = nlohmann::ordered_json::array();
    for (auto& c : bundle.components()) {
        std::string blob = component_blob(*c.store);
        std::string file = c.name + ".bin";
        write_file_bytes(dir + "/" + file, blob);
        nlohmann::ordered_json jc;
        jc["name"] = c.name;
        bool frozen = std::find(info.frozen.begin(), info.frozen.end(), c.name) != info.frozen.end();
        jc["role"] = frozen ? "frozen" : "trainable";
        jc["file"] = file;
        jc["hash"] = hash_hex(fnv1a(blob.data(), blob.size()));
        nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
        for (const auto& p : c.store->items) {
            nlohmann::ordered_json jt;
            jt["name"] = p->name;
            jt["shape"] = p->var->val.shape;
            jt["dtype"] = "f64";
            tensors.push_back(jt);
        }
        jc["tensors"] = tensors;
        comps.push_back(jc);
    }
    manifest["components"] = comps;

    if (optimizer) {
        std::string blob = optimizer_blob(*optimizer);
        write_file_bytes(dir + "/optimizer.bin", blob);
        manifest["optimizer"] = {{"file", "optimizer.bin"},
                                 {"hash", hash_hex(fnv1a(blob.data(), blob.size()))},
                                 {"t", optimizer->t}};
    }

    write_file_bytes(dir + "/manifest.json", manifest.dump(2) + "\n");
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
    std::string mpath = dir + "/manifest.json";
    SDIFF_CHECK(fs::exists(mpath), ErrorKind::State, "no checkpoint manifest at " + mpath);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file_bytes(mpath));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Corruption, "manifest parse failure: " + std::string(e.what()));
    }

    LoadedCheckpoint out;
    out.info.stage = manifest.at("stage").get<std::string>();
    out.info.trained_steps = manifest.at("trained_steps").get<int64_t>();
    out.info.cfg = RunConfig::from_json(manifest.at("config"));
    out.bundle = ModelBundle::init(out.info.cfg, /*seed=*/0);

    bool has_control = false;
    for (const auto& jc : manifest.at("components")) {
        std::string name = jc.at("name").get<std::string>();
        if (name == "control_branch") has_control = true;
    }
    if (has_control)
        out.bundle.control = std::make_unique<ctrl::ControlBranch>(out.info.cfg.unet_config(),
                                                                   out.info.cfg.resolution, Rng(0));

    for (const auto& jc : manifest.at("components")) {
        std::string name = jc.at("name").get<std::string>();
        nn::ParamStore* store = out.bundle.find_store(name);
        SDIFF_CHECK(store != nullptr, ErrorKind::Corruption, "manifest names unknown component " + name);
        std::string blob = read_file_bytes(dir + "/" + jc.at("file").get<std::string>());
        std::string want = jc.at("hash").get<std::string>();
        std::string got = hash_hex(fnv1a(blob.data(), blob.size()));
        SDIFF_CHECK(got == want, ErrorKind::Corruption,
                    "checkpoint hash mismatch for component " + name);
        load_component_blob(*store, blob);
        if (jc.at("role").get<std::string>() == "frozen") {
            out.info.frozen.push_back(name);
            store->set_trainable(false);
        }
    }

    if (manifest.contains("optimizer")) {
        const auto& jo = manifest.at("optimizer");
        std::string blob = read_file_bytes(dir + "/" + jo.at("file").get<std::string>());
        std::string want = jo.at("hash").get<std::string>();
        SDIFF_CHECK(hash_hex(fnv1a(blob.data(), blob.size())) == want, ErrorKind::Corruption,
                    "checkpoint hash mismatch for optimizer state");
        load_optimizer_blob(out.optimizer, blob);
        out.has_optimizer = true;
    }
    return out;
}

std::vector<std::string> load_components_into(ModelBundle& bundle, const std::string& dir,
                                              const std::vector<std::string>& only) {
    std::string mpath = dir + "/manifest.json";
    SDIFF_CHECK(fs::exists(mpath), ErrorKind::State, "no checkpoint manifest at " + mpath);
    nlohmann::json manifest = nlohmann::json::parse(read_file_bytes(mpath));
    std::vector<std::string> loaded;
    for (const auto& jc : manifest.at("components")) {
        std::string name = jc.at("name").get<std::string>();
        if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
        nn::ParamStore* store = bundle.find_store(name);
        if (!store) continue;
        std::string blob = read_file_bytes(dir + "/" + jc.at("file").get<std::string>());
        SDIFF_CHECK(hash_hex(fnv1a(blob.data(), blob.size())) == jc.at("hash").get<std::string>(),
                    ErrorKind::Corruption, "checkpoint hash mismatch for component " + name);
        load_component_blob(*store, blob);
        if (jc.at("role").get<std::string>() == "frozen") store->set_trainable(false);
        loaded.push_back(name);
    }
    return loaded;
}

CheckpointInfo read_checkpoint_info(const std::string& dir) {
    std::string mpath = dir + "/manifest.json";
    SDIFF_CHECK(fs::exists(mpath), ErrorKind::State, "no checkpoint manifest at " + mpath);
    nlohmann::json manifest = nlohmann::json::parse(read_file_bytes(mpath));
    CheckpointInfo info;
    info.stage = manifest.at("stage").get<std::string>();
    info.trained_steps = manifest.at("trained_steps").get<int64_t>();
    info.cfg = RunConfig::from_json(manifest.at("config"));
    for (const auto& jc : manifest.at("components"))
        if (jc.at("role").get<std::string>() == "frozen")
            info.frozen.push_back(jc.at("name").get<std::string>());
    return info;
}

}  // namespace sdiff::pipe
