#include "subjectdiff/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "subjectdiff/oracle.hpp"
#include "subjectdiff/serialize.hpp"
#include "subjectdiff/tokenizer.hpp"

namespace sdiff::evalm {

namespace {
Tensor normalized(Tensor t) {
    real n = std::sqrt(t.vec().squaredNorm());
    if (n > 1e-12) t.vec() /= n;
    return t;
}
}  // namespace

real cosine(const Tensor& a, const Tensor& b) {
    SDIFF_CHECK(a.size() == b.size(), ErrorKind::Input, "cosine dim mismatch");
    real na = std::sqrt(a.vec().squaredNorm()), nb = std::sqrt(b.vec().squaredNorm());
    if (na < 1e-12 || nb < 1e-12) return 0.0;
    return a.vec().dot(b.vec()) / (na * nb);
}

Embedder oracle_embedder() {
    Embedder e;
    e.name = "oracle-sprite";
    const int ns = synth::num_shapes(), nc = synth::num_colors(), nt = synth::num_textures(),
              nx = synth::num_contexts();
    e.dim = ns + nc + nt + nx;
    e.embed_image = [=](const Image& img) {
        Tensor t({ns + nc + nt + nx});
        auto r = classify_sprite(img);
        if (r.subject_found) {
            t.v[r.shape] = 1.0;
            t.v[ns + r.color] = 1.0;
            t.v[ns + nc + r.texture] = 1.0;
        }
        if (r.context >= 0) t.v[ns + nc + nt + r.context] = 1.0;
        return normalized(t);
    };
    e.embed_text = [=](const std::string& text) {
        Tensor t({ns + nc + nt + nx});
        for (const auto& w : split_words(text)) {
            for (int i = 0; i < ns; ++i)
                if (w == synth::kShapeNames[i]) t.v[i] = 1.0;
            for (int i = 0; i < nc; ++i)
                if (w == synth::kColorNames[i]) t.v[ns + i] = 1.0;
            for (int i = 0; i < nt; ++i)
                if (w == synth::kTextureNames[i]) t.v[ns + nc + i] = 1.0;
            for (int i = 0; i < nx; ++i)
                if (w == synth::kContextNames[i]) t.v[ns + nc + nt + i] = 1.0;
        }
        return normalized(t);
    };
    return e;
}

real pairwise_cosine_mean(const std::vector<Image>& set_a, const std::vector<Image>& set_b,
                          const Embedder& embedder) {
    SDIFF_CHECK(!set_a.empty() && !set_b.empty(), ErrorKind::Input, "pairwise cosine over an empty set");
    std::vector<Tensor> ea, eb;
    for (const auto& im : set_a) ea.push_back(normalized(embedder.embed_image(im)));
    for (const auto& im : set_b) eb.push_back(normalized(embedder.embed_image(im)));
    real s = 0;
    for (const auto& a : ea)
        for (const auto& b : eb) s += a.vec().dot(b.vec());
    return s / ((real)ea.size() * (real)eb.size());
}

real clip_t_score(const std::vector<Image>& images, const std::string& prompt, const Embedder& embedder) {
    SDIFF_CHECK(!images.empty(), ErrorKind::Input, "clip_t over an empty image set");
    SDIFF_CHECK((bool)embedder.embed_text, ErrorKind::Config, "embedder has no text tower");
    Tensor pt = normalized(embedder.embed_text(prompt));
    real s = 0;
    for (const auto& im : images) s += pt.vec().dot(normalized(embedder.embed_image(im)).vec());
    return s / (real)images.size();
}

std::vector<uint64_t> ProtocolConfig::default_seeds() {
    std::vector<uint64_t> s;
    for (uint64_t i = 0; i < 10; ++i) s.push_back(1000 + i);
    return s;
}

std::string format_mean_spread(real mean, real spread) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f (\xC2\xB1%.3f)", mean, spread);
    return buf;
}

EvalReport run_protocol(const GenerateFn& generate, const std::vector<ProtocolSubject>& subjects,
                        const Embedder& subject_embedder, const Embedder& clip_embedder,
                        const ProtocolConfig& cfg) {
    SDIFF_CHECK(!subjects.empty(), ErrorKind::Input, "protocol needs at least one subject");
    SDIFF_CHECK(!cfg.seeds.empty(), ErrorKind::Input, "protocol needs at least one seed");
    SDIFF_CHECK(cfg.n_images >= 1, ErrorKind::Input, "protocol needs n_images >= 1");

    EvalReport rep;
    rep.n_images = cfg.n_images;
    rep.n_runs = (int)cfg.seeds.size();

    uint64_t ph = 1469598103934665603ULL;
    for (const auto& s : subjects)
        for (const auto& p : s.prompts) ph = fnv1a(p.data(), p.size(), ph);
    rep.prompt_list_hash = ph;

    const size_t S = subjects.size();
    // per (run, subject) means
    std::vector<std::vector<real>> dino(rep.n_runs, std::vector<real>(S, 0.0)), clip_i = dino, clip_t = dino;
    std::vector<std::vector<char>> valid(rep.n_runs, std::vector<char>(S, 1));

    for (int run = 0; run < rep.n_runs; ++run) {
        uint64_t run_seed = cfg.seeds[run];
        for (size_t si = 0; si < S; ++si) {
            const auto& subj = subjects[si];
            std::vector<Image> generated;
            real clip_t_sum = 0;
            int clip_t_cells = 0;
            for (size_t pi = 0; pi < subj.prompts.size(); ++pi) {
                std::vector<Image> cell;
                for (int k = 0; k < cfg.n_images; ++k) {
                    uint64_t seed = hash_combine(hash_combine(run_seed, (uint64_t)si * 10007 + pi), (uint64_t)k);
                    auto img = generate((int)si, subj.prompts[pi], seed);
                    ++rep.generated;
                    if (!img) {
                        ++rep.failed;
                        std::fprintf(stderr, "warning: generation failed (subject=%s prompt=%zu image=%d)\n",
                                     subj.name.c_str(), pi, k);
                        continue;
                    }
                    cell.push_back(std::move(*img));
                }
                if (!cell.empty()) {
                    clip_t_sum += clip_t_score(cell, subj.prompts[pi], clip_embedder);
                    ++clip_t_cells;
                    for (auto& im : cell) generated.push_back(std::move(im));
                }
            }
            if (generated.empty() || subj.real_images.empty()) {
                valid[run][si] = 0;
                continue;
            }
            dino[run][si] = pairwise_cosine_mean(generated, subj.real_images, subject_embedder);
            clip_i[run][si] = pairwise_cosine_mean(generated, subj.real_images, clip_embedder);
            clip_t[run][si] = clip_t_cells > 0 ? clip_t_sum / clip_t_cells : 0.0;
        }
    }

    // per-subject rows averaged across runs
    for (size_t si = 0; si < S; ++si) {
        SubjectRow row;
        row.subject = subjects[si].name;
        int n = 0;
        for (int run = 0; run < rep.n_runs; ++run) {
            if (!valid[run][si]) continue;
            row.dino += dino[run][si];
            row.clip_i += clip_i[run][si];
            row.clip_t += clip_t[run][si];
            ++n;
        }
        if (n > 0) {
            row.dino /= n;
            row.clip_i /= n;
            row.clip_t /= n;
        }
        rep.rows.push_back(row);
    }

    // aggregate mean and across-run spread (std of run means)
    std::vector<real> run_dino, run_clip_i, run_clip_t;
    for (int run = 0; run < rep.n_runs; ++run) {
        real d = 0, ci = 0, ct = 0;
        int n = 0;
        for (size_t si = 0; si < S; ++si) {
            if (!valid[run][si]) continue;
            d += dino[run][si];
            ci += clip_i[run][si];
            ct += clip_t[run][si];
            ++n;
        }
        if (n == 0) continue;
        run_dino.push_back(d / n);
        run_clip_i.push_back(ci / n);
        run_clip_t.push_back(ct / n);
    }
    auto mean_of = [](const std::vector<real>& v) {
        real s = 0;
        for (auto x : v) s += x;
        return v.empty() ? 0.0 : s / v.size();
    };
    auto std_of = [&](const std::vector<real>& v) {
        if (v.size() < 2) return 0.0;
        real m = mean_of(v), s = 0;
        for (auto x : v) s += (x - m) * (x - m);
        return std::sqrt(s / (v.size() - 1));
    };
    rep.mean_dino = mean_of(run_dino);
    rep.mean_clip_i = mean_of(run_clip_i);
    rep.mean_clip_t = mean_of(run_clip_t);
    rep.spread_dino = std_of(run_dino);
    rep.spread_clip_i = std_of(run_clip_i);
    rep.spread_clip_t = std_of(run_clip_t);
    return rep;
}

std::string EvalReport::to_text() const {
    std::ostringstream os;
    os << "subject                     dino     clip_i   clip_t\n";
    for (const auto& r : rows) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%-26s  %.3f    %.3f    %.3f\n", r.subject.c_str(), r.dino, r.clip_i,
                      r.clip_t);
        os << buf;
    }
    os << "mean   dino " << format_mean_spread(mean_dino, spread_dino) << "  clip_i "
       << format_mean_spread(mean_clip_i, spread_clip_i) << "  clip_t "
       << format_mean_spread(mean_clip_t, spread_clip_t) << "\n";
    os << "spread statistic: " << spread_stat << " across " << n_runs << " runs; " << n_images
       << " images per prompt; " << failed << "/" << generated << " generations failed\n";
    return os.str();
}

std::string EvalReport::to_jsonl() const {
    std::ostringstream os;
    for (const auto& r : rows) {
        nlohmann::ordered_json j;
        j["subject"] = r.subject;
        j["dino"] = r.dino;
        j["clip_i"] = r.clip_i;
        j["clip_t"] = r.clip_t;
        os << j.dump() << "\n";
    }
    nlohmann::ordered_json agg;
    agg["aggregate"] = true;
    agg["dino"] = mean_dino;
    agg["clip_i"] = mean_clip_i;
    agg["clip_t"] = mean_clip_t;
    agg["spread_dino"] = spread_dino;
    agg["spread_clip_i"] = spread_clip_i;
    agg["spread_clip_t"] = spread_clip_t;
    agg["spread_stat"] = spread_stat;
    agg["n_images"] = n_images;
    agg["n_runs"] = n_runs;
    agg["generated"] = generated;
    agg["failed"] = failed;
    agg["prompt_list_hash"] = hash_hex(prompt_list_hash);
    os << agg.dump() << "\n";
    return os.str();
}

}  // namespace sdiff::evalm
