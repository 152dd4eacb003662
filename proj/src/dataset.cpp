#include "subjectdiff/dataset.hpp"

#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "subjectdiff/error.hpp"

namespace sdiff::synth {

namespace fs = std::filesystem;

SynthesizedPair synthesize_pair(const Image& subject_image, const SoftMask& mask,
                                const std::vector<Image>& background_pool, Rng rng,
                                const SynthesisSettings& settings, const AlphaMatte* precomputed_alpha) {
    SDIFF_CHECK(!background_pool.empty(), ErrorKind::Input, "background pool is empty");
    SynthesizedPair out;
    out.target = subject_image;  // the original, untouched
    AlphaMatte alpha;
    if (precomputed_alpha) {
        alpha = *precomputed_alpha;
    } else {
        Trimap tm = build_trimap(mask, settings.tau_fg, settings.tau_bg);
        alpha = solve_matting(subject_image, tm, settings.matting);
    }
    out.background_id = rng.uniform_int((int)background_pool.size());
    out.input = composite(subject_image, alpha, background_pool[out.background_id]);
    return out;
}

DatasetManifest make_toy_dataset(const ToyDataConfig& cfg, uint64_t seed, const std::string& root,
                                 const SynthesisSettings& settings) {
    SDIFF_CHECK(cfg.images_per_identity >= 1 && cfg.composites_per_image >= 1 && cfg.background_pool >= 1,
                ErrorKind::Config, "dataset counts must be positive");
    DatasetManifest m;
    m.config = cfg;
    m.seed = seed;
    m.root = root;
    m.identities = plan_identities(cfg, seed);

    fs::create_directories(root + "/subjects");
    fs::create_directories(root + "/masks");
    fs::create_directories(root + "/pairs");

    Rng base(seed);
    std::vector<Image> pool;
    for (int b = 0; b < cfg.background_pool; ++b)
        pool.push_back(render_procedural_background(cfg.resolution, base.child("bgpool", b)));

    int pair_index = 0;
    for (const auto& ident : m.identities) {
        for (int j = 0; j < cfg.images_per_identity; ++j) {
            Rng img_rng = base.child("image", (uint64_t)ident.id * 100003 + j);
            int context = img_rng.uniform_int(num_contexts());
            auto si = render_subject_image(ident.attrs, context, cfg.resolution, img_rng.child("render"));

            std::string subj_name = "subjects/sub_" + std::to_string(ident.id) + "_" + std::to_string(j) + ".png";
            std::string mask_name = "masks/sub_" + std::to_string(ident.id) + "_" + std::to_string(j) + ".png";
            write_png(root + "/" + subj_name, si.image);
            write_png(root + "/" + mask_name, si.soft_mask);

            // one matting solve per subject image, reused across composites
            SoftMask mask{si.soft_mask};
            Trimap tm = build_trimap(mask, settings.tau_fg, settings.tau_bg);
            AlphaMatte alpha = solve_matting(si.image, tm, settings.matting);

            for (int k = 0; k < cfg.composites_per_image; ++k) {
                uint64_t pair_seed = hash_combine(seed, (uint64_t)pair_index);
                Rng pair_rng(pair_seed);
                auto pr = synthesize_pair(si.image, mask, pool, pair_rng, settings, &alpha);

                PairRecord rec;
                rec.input_path = "pairs/input_" + std::to_string(pair_index) + ".png";
                rec.target_path = subj_name;
                rec.mask_path = mask_name;
                rec.subject_text = ident.subject_text;
                rec.caption = caption_for(ident.attrs, context);
                rec.subject_id = ident.id;
                rec.image_index = j;
                rec.background_id = pr.background_id;
                rec.context = context;
                rec.seed = pair_seed;
                write_png(root + "/" + rec.input_path, pr.input);
                m.pairs.push_back(rec);
                ++pair_index;
            }
        }
    }
    write_manifest(m);
    return m;
}

void write_manifest(const DatasetManifest& m) {
    nlohmann::ordered_json j;
    j["seed"] = m.seed;
    j["config"] = {{"resolution", m.config.resolution},
                   {"identities", m.config.identities},
                   {"images_per_identity", m.config.images_per_identity},
                   {"composites_per_image", m.config.composites_per_image},
                   {"background_pool", m.config.background_pool},
                   {"heldout_fraction", m.config.heldout_fraction}};
    nlohmann::ordered_json ids = nlohmann::ordered_json::array();
    for (const auto& i : m.identities) {
        ids.push_back({{"id", i.id},
                       {"shape", i.attrs.shape},
                       {"color", i.attrs.color},
                       {"texture", i.attrs.texture},
                       {"heldout", i.heldout},
                       {"subject_text", i.subject_text}});
    }
    j["identities"] = ids;
    std::ofstream os(m.root + "/dataset.json", std::ios::trunc);
    os << j.dump(2) << "\n";

    std::ofstream ps(m.root + "/pairs.jsonl", std::ios::trunc);
    for (const auto& p : m.pairs) {
        nlohmann::ordered_json r;
        r["input_path"] = p.input_path;
        r["target_path"] = p.target_path;
        r["mask_path"] = p.mask_path;
        r["subject_text"] = p.subject_text;
        r["caption"] = p.caption;
        r["provenance"] = {{"subject_id", p.subject_id},
                           {"image_index", p.image_index},
                           {"background_id", p.background_id},
                           {"context", p.context},
                           {"seed", p.seed}};
        ps << r.dump() << "\n";
    }
}

DatasetManifest load_manifest(const std::string& root) {
    SDIFF_CHECK(fs::exists(root + "/dataset.json"), ErrorKind::State, "no dataset manifest under " + root);
    DatasetManifest m;
    m.root = root;
    nlohmann::json j = nlohmann::json::parse(std::ifstream(root + "/dataset.json"));
    m.seed = j.at("seed").get<uint64_t>();
    const auto& c = j.at("config");
    m.config.resolution = c.at("resolution").get<int>();
    m.config.identities = c.at("identities").get<int>();
    m.config.images_per_identity = c.at("images_per_identity").get<int>();
    m.config.composites_per_image = c.at("composites_per_image").get<int>();
    m.config.background_pool = c.at("background_pool").get<int>();
    m.config.heldout_fraction = c.at("heldout_fraction").get<real>();
    for (const auto& ji : j.at("identities")) {
        IdentityInfo i;
        i.id = ji.at("id").get<int>();
        i.attrs.shape = ji.at("shape").get<int>();
        i.attrs.color = ji.at("color").get<int>();
        i.attrs.texture = ji.at("texture").get<int>();
        i.heldout = ji.at("heldout").get<bool>();
        i.subject_text = ji.at("subject_text").get<std::string>();
        m.identities.push_back(i);
    }
    std::ifstream ps(root + "/pairs.jsonl");
    SDIFF_CHECK(ps.good(), ErrorKind::State, "no pair manifest under " + root);
    std::string line;
    while (std::getline(ps, line)) {
        if (line.empty()) continue;
        nlohmann::json r = nlohmann::json::parse(line);
        PairRecord p;
        p.input_path = r.at("input_path").get<std::string>();
        p.target_path = r.at("target_path").get<std::string>();
        p.mask_path = r.at("mask_path").get<std::string>();
        p.subject_text = r.at("subject_text").get<std::string>();
        p.caption = r.at("caption").get<std::string>();
        const auto& pv = r.at("provenance");
        p.subject_id = pv.at("subject_id").get<int>();
        p.image_index = pv.at("image_index").get<int>();
        p.background_id = pv.at("background_id").get<int>();
        p.context = pv.at("context").get<int>();
        p.seed = pv.at("seed").get<uint64_t>();
        m.pairs.push_back(p);
    }
    return m;
}

int context_of_caption(const std::string& caption) {
    for (int c = 0; c < num_contexts(); ++c) {
        const std::string& w = kContextNames[c];
        if (caption.size() >= w.size() && caption.compare(caption.size() - w.size(), w.size(), w) == 0) return c;
    }
    throw Error(ErrorKind::Input, "caption names no known context: " + caption);
}

}  // namespace sdiff::synth
