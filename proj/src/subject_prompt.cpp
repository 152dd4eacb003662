#include "subjectdiff/subject_prompt.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "subjectdiff/serialize.hpp"

namespace sdiff::prompt {

// ---------- ProjectionMlp ----------

ProjectionMlp::ProjectionMlp(const PromptConfig& cfg, Rng rng) : d_q_(cfg.d_q), d_text_(cfg.d_text) {
    l1_ = nn::LinearLayer(store_, "l1", cfg.d_q, cfg.d_text, rng);
    l2_ = nn::LinearLayer(store_, "l2", cfg.d_text, cfg.d_text, rng);
}

ag::Var ProjectionMlp::project_var(const ag::Var& features) const {
    SDIFF_CHECK(features->val.cols() == d_q_, ErrorKind::Config,
                "projection expects feature dim " + std::to_string(d_q_));
    return l2_.fwd(ag::gelu(l1_.fwd(features)));
}

SubjectEmbedding ProjectionMlp::project(const enc::SubjectFeatures& features) const {
    ag::NoGradGuard ng;
    SubjectEmbedding e;
    e.emb = project_var(ag::constant(features.features))->val;
    return e;
}

// ---------- TextCondEncoder ----------

TextCondEncoder::TextCondEncoder(const PromptConfig& cfg, Rng rng) : cfg_(cfg) {
    const int V = Vocab::toy().size();
    tok_emb_ = store_.add("tok_emb", nn::init_normal(rng, {V, cfg.d_text}, 0.02));
    pos_ = store_.add("pos", nn::init_normal(rng, {cfg.max_len, cfg.d_text}, 0.02));
    for (int b = 0; b < cfg.blocks; ++b)
        blocks_.emplace_back(store_, "block" + std::to_string(b), cfg.d_text, cfg.heads, rng);
    final_ln_ = nn::LayerNormLayer(store_, "final_ln", cfg.d_text);
}

GuidancePrompt TextCondEncoder::assemble_var(const std::string& text, const std::string& subject_text,
                                             const std::optional<ag::Var>& subject_rows) const {
    const auto& vocab = Vocab::toy();
    auto text_ids = vocab.tokenize(text);
    SDIFF_CHECK(!text_ids.empty(), ErrorKind::Input, "prompt text must be non-empty");

    GuidancePrompt p;
    p.source_text = text;
    p.subject_text = subject_text;
    p.dropped = !subject_rows.has_value();

    std::vector<int> ids = text_ids;
    std::vector<Role> roles(text_ids.size(), Role::TEXT);

    if (subject_rows) {
        auto subj_ids = vocab.tokenize(subject_text);
        SDIFF_CHECK(!subj_ids.empty(), ErrorKind::Input, "subject text must be non-empty");
        std::vector<int> tpl1 = cfg_.template_comma ? vocab.tokenize(", the") : vocab.tokenize("the");
        std::vector<int> tpl2 = vocab.tokenize("is");
        for (int id : tpl1) {
            ids.push_back(id);
            roles.push_back(Role::TEMPLATE);
        }
        for (int id : subj_ids) {
            ids.push_back(id);
            roles.push_back(Role::SUBJECT_TEXT);
        }
        for (int id : tpl2) {
            ids.push_back(id);
            roles.push_back(Role::TEMPLATE);
        }
        int K = (*subject_rows)->val.shape[0];
        SDIFF_CHECK((*subject_rows)->val.cols() == cfg_.d_text, ErrorKind::Config,
                    "subject embedding dim mismatch");
        auto words = ag::gather_rows(tok_emb_, ids);
        p.token_embeddings = ag::concat_axis0({words, *subject_rows});
        for (int k = 0; k < K; ++k) {
            ids.push_back(-1);
            roles.push_back(Role::SOFT_SUBJECT);
        }
    } else {
        p.token_embeddings = ag::gather_rows(tok_emb_, ids);
    }
    p.token_ids = std::move(ids);
    p.roles = std::move(roles);
    return p;
}

GuidancePrompt TextCondEncoder::assemble(const std::string& text, const std::string& subject_text,
                                         const std::optional<SubjectEmbedding>& subject) const {
    if (!subject) return assemble_var(text, subject_text, std::nullopt);
    return assemble_var(text, subject_text, ag::constant(subject->emb));
}

ag::Var TextCondEncoder::encode_var(const GuidancePrompt& prompt) const {
    const int L = prompt.length();
    SDIFF_CHECK(L >= 1, ErrorKind::Input, "empty prompt");
    SDIFF_CHECK(L <= cfg_.max_len, ErrorKind::Input,
                "prompt length " + std::to_string(L) + " exceeds context length " + std::to_string(cfg_.max_len));
    auto x = ag::add(prompt.token_embeddings, ag::slice_axis0(pos_, 0, L));
    Tensor mask({L, L});
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < L; ++j) mask.at({i, j}) = j > i ? -1e9 : 0.0;
    for (const auto& b : blocks_) x = b.fwd(x, &mask);
    return final_ln_.fwd(x);
}

ConditioningSequence TextCondEncoder::encode(const GuidancePrompt& prompt) const {
    ag::NoGradGuard ng;
    ConditioningSequence c;
    c.states = encode_var(prompt)->val;
    return c;
}

// ---------- free functions ----------

bool roles_match_template(const std::vector<Role>& roles, int K) {
    size_t i = 0;
    auto run = [&](Role r) {
        size_t n = 0;
        while (i < roles.size() && roles[i] == r) {
            ++i;
            ++n;
        }
        return n;
    };
    if (run(Role::TEXT) == 0) return false;
    if (run(Role::TEMPLATE) == 0) return false;
    if (run(Role::SUBJECT_TEXT) == 0) return false;
    if (run(Role::TEMPLATE) == 0) return false;
    if (run(Role::SOFT_SUBJECT) != (size_t)K) return false;
    return i == roles.size();
}

SubjectEmbedding mean_subject_embedding(const std::vector<SubjectEmbedding>& embs) {
    SDIFF_CHECK(!embs.empty(), ErrorKind::Input, "mean of empty embedding list");
    SubjectEmbedding out;
    out.emb = Tensor(embs[0].emb.shape);
    for (const auto& e : embs) {
        SDIFF_CHECK(e.emb.same_shape(out.emb), ErrorKind::Input, "embedding shape mismatch");
        out.emb.vec() += e.emb.vec();
    }
    out.emb.vec() /= (real)embs.size();
    return out;
}

SubjectEmbedding interpolate(const SubjectEmbedding& a, const SubjectEmbedding& b, real t) {
    SDIFF_CHECK(a.emb.same_shape(b.emb), ErrorKind::Input, "embedding shape mismatch");
    SDIFF_CHECK(t >= 0.0 && t <= 1.0, ErrorKind::Input, "interpolation parameter outside [0,1]");
    SubjectEmbedding out;
    out.emb = Tensor(a.emb.shape);
    for (int64_t i = 0; i < out.emb.size(); ++i) out.emb.v[i] = (1.0 - t) * a.emb.v[i] + t * b.emb.v[i];
    return out;
}

SubjectEmbedding bilinear(const std::array<SubjectEmbedding, 4>& corners, real u, real v) {
    SDIFF_CHECK(u >= 0.0 && u <= 1.0 && v >= 0.0 && v <= 1.0, ErrorKind::Input,
                "bilinear parameters outside [0,1]");
    auto top = interpolate(corners[0], corners[1], u);
    auto bot = interpolate(corners[2], corners[3], u);
    return interpolate(top, bot, v);
}

bool sample_drop(Rng& rng, real p) {
    SDIFF_CHECK(p >= 0.0 && p <= 1.0, ErrorKind::Input, "drop probability outside [0,1]");
    return rng.bernoulli(p);
}

void save_subject_cache(const std::string& path, const SubjectCache& cache) {
    nlohmann::ordered_json j;
    j["subject_text"] = cache.subject_text;
    j["k"] = cache.embedding.emb.shape[0];
    j["d_text"] = cache.embedding.emb.shape[1];
    j["source_hashes"] = cache.source_hashes;
    std::string header = j.dump();
    std::ostringstream os(std::ios::binary);
    uint32_t hlen = (uint32_t)header.size();
    os.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    os.write(header.data(), (std::streamsize)header.size());
    write_tensor(os, cache.embedding.emb);
    write_file_bytes(path, os.str());
}

SubjectCache load_subject_cache(const std::string& path) {
    std::istringstream is(read_file_bytes(path), std::ios::binary);
    uint32_t hlen = 0;
    is.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    SDIFF_CHECK(is.good() && hlen < (1u << 20), ErrorKind::Corruption, "bad subject cache header");
    std::string header(hlen, '\0');
    is.read(header.data(), hlen);
    auto j = nlohmann::json::parse(header);
    SubjectCache c;
    c.subject_text = j.at("subject_text").get<std::string>();
    c.source_hashes = j.at("source_hashes").get<std::vector<std::string>>();
    c.embedding.emb = read_tensor(is);
    SDIFF_CHECK(c.embedding.emb.shape[0] == j.at("k").get<int>() &&
                    c.embedding.emb.shape[1] == j.at("d_text").get<int>(),
                ErrorKind::Corruption, "subject cache shape mismatch");
    return c;
}

}  // namespace sdiff::prompt
