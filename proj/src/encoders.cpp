#include "planllm/encoders.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace planllm {

using nlohmann::json;

VisualEncoderState::VisualEncoderState(int d_raw, int d_back, int d_model, std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, "visual_backbone"));
    backbone = Parameter("visual_backbone.w",
                         gaussian_matrix(rng, d_raw, d_back, 1.0 / std::sqrt(double(d_raw))));
    std::mt19937_64 rng2(derive_seed(seed, "visual_projection"));
    proj_w = Parameter("visual_projection.w",
                       gaussian_matrix(rng2, d_back, d_model, 1.0 / std::sqrt(double(d_back))));
    proj_b = Parameter("visual_projection.b", Mat::Zero(1, d_model));
}

Var visual_encode(Tape& t, VisualEncoderState& enc, const Vec& raw) {
    if (raw.size() != enc.backbone.value.rows())
        throw ShapeError("visual_encode: expected " + std::to_string(enc.backbone.value.rows()) +
                         " raw features, got " + std::to_string(raw.size()));
    if (!raw.allFinite()) throw NumericError("visual_encode: non-finite input");
    Var row = t.constant(raw.transpose());
    Var hidden = t.tanh(t.matmul(row, t.param(enc.backbone)));
    return t.add_rowwise(t.matmul(hidden, t.param(enc.proj_w)), t.param(enc.proj_b));
}

TextEncoderState::TextEncoderState(int d_embed_, int d_model, std::uint64_t seed_)
    : seed(seed_), d_embed(d_embed_) {
    std::mt19937_64 rng(derive_seed(seed_, "text_fixed_map"));
    fixed_map = Parameter("text_encoder.fixed_map",
                          gaussian_matrix(rng, d_embed_, d_model, 1.0 / std::sqrt(double(d_embed_))));
}

std::vector<std::string> tokenize_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

Vec TextEncoderState::token_embedding(const std::string& token) const {
    std::mt19937_64 rng(derive_seed(seed, "text_token", fnv1a64(token)));
    std::normal_distribution<double> dist(0.0, 1.0);
    Vec v(d_embed);
    for (int i = 0; i < d_embed; ++i) v(i) = dist(rng);
    return v;
}

Vec TextEncoderState::encode(const std::string& text) const {
    auto tokens = tokenize_words(text);
    if (tokens.empty()) throw ValidationError("text_encode: empty text");
    Vec pooled = Vec::Zero(d_embed);
    for (const auto& tok : tokens) pooled += token_embedding(tok);
    pooled /= static_cast<double>(tokens.size());
    return fixed_map.value.transpose() * pooled;
}

std::vector<int> retrieve_nearest(const TextEncoderState& enc,
                                  const std::vector<std::string>& queries,
                                  const std::vector<std::string>& candidates) {
    if (candidates.empty()) throw ValidationError("retrieve_nearest: empty candidate set");
    std::vector<Vec> embeds;
    std::vector<double> norms;
    embeds.reserve(candidates.size());
    for (const auto& c : candidates) {
        embeds.push_back(enc.encode(c));
        norms.push_back(embeds.back().norm());
    }
    std::vector<int> out;
    out.reserve(queries.size());
    for (const auto& q : queries) {
        int best = 0;
        if (!tokenize_words(q).empty()) {
            Vec qe = enc.encode(q);
            double qn = qe.norm();
            double best_sim = -2.0;
            for (std::size_t c = 0; c < embeds.size(); ++c) {
                double sim = qe.dot(embeds[c]) / (qn * norms[c]);
                if (sim > best_sim) {
                    best_sim = sim;
                    best = static_cast<int>(c);
                }
            }
        }
        out.push_back(best);
    }
    return out;
}

DescriptionExpander DescriptionExpander::templated(std::string tmpl) {
    DescriptionExpander e;
    e.template_ = std::move(tmpl);
    return e;
}

DescriptionExpander DescriptionExpander::external(ExpanderClientConfig cfg) {
    DescriptionExpander e;
    e.external_ = std::move(cfg);
    e.load_cache();
    return e;
}

std::string DescriptionExpander::expand(const std::string& label) {
    if (label.empty()) throw ValidationError("expand_description: empty label");
    if (!external_) {
        std::string out = template_;
        const std::string slot = "{label}";
        auto pos = out.find(slot);
        while (pos != std::string::npos) {
            out.replace(pos, slot.size(), label);
            pos = out.find(slot, pos + label.size());
        }
        return out;
    }
    std::uint64_t h = fnv1a64(label);
    {
        std::lock_guard<std::mutex> lock(*cache_mutex_);
        auto it = cache_.find(h);
        if (it != cache_.end()) return it->second;
    }
    std::string desc = fetch(label);
    {
        std::lock_guard<std::mutex> lock(*cache_mutex_);
        cache_[h] = desc;
        append_cache(h, desc);
    }
    return desc;
}

std::string DescriptionExpander::fetch(const std::string& label) {
    const auto& cfg = *external_;
    httplib::Client client(cfg.host, cfg.port);
    client.set_connection_timeout(0, cfg.timeout_ms * 1000);
    client.set_read_timeout(0, cfg.timeout_ms * 1000);
    json body{{"label", label}};
    std::string payload = body.dump();
    for (int attempt = 0; attempt <= cfg.retries; ++attempt) {
        auto res = client.Post(cfg.path, payload, "application/json");
        if (res && res->status == 200) {
            try {
                json parsed = json::parse(res->body);
                std::string desc = parsed.at("description").get<std::string>();
                if (desc.empty()) throw TransportError("expander endpoint returned empty description");
                return desc;
            } catch (const json::exception& e) {
                throw TransportError(std::string("expander endpoint returned malformed body: ") + e.what());
            }
        }
    }
    throw TransportError("expander endpoint unreachable at " + cfg.host + ":" +
                         std::to_string(cfg.port) + cfg.path);
}

void DescriptionExpander::load_cache() {
    const auto& cfg = *external_;
    if (cfg.cache_path.empty()) return;
    std::ifstream in(cfg.cache_path);
    if (!in) return;  // cache starts empty
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            json rec = json::parse(line);
            auto hash = std::stoull(rec.at("label_hash").get<std::string>(), nullptr, 16);
            cache_[hash] = rec.at("description").get<std::string>();
        } catch (const std::exception&) {
            throw ParseError("expander cache: malformed record", line_no);
        }
    }
}

void DescriptionExpander::append_cache(std::uint64_t label_hash, const std::string& description) {
    const auto& cfg = *external_;
    if (cfg.cache_path.empty()) return;
    std::ofstream out(cfg.cache_path, std::ios::app);
    json rec{{"label_hash", to_hex(label_hash)}, {"description", description}};
    out << rec.dump() << "\n";
}

}  // namespace planllm
