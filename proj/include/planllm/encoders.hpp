#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "planllm/tape.hpp"

namespace planllm {

// Frozen backbone stand-in (seeded linear + tanh) plus the trainable
// projection layer. Only the projection appears as trainable in the
// freeze manifest.
struct VisualEncoderState {
    Parameter backbone;  // d_raw x d_back, frozen
    Parameter proj_w;    // d_back x d_model, trainable
    Parameter proj_b;    // 1 x d_model, trainable

    VisualEncoderState() = default;
    VisualEncoderState(int d_raw, int d_back, int d_model, std::uint64_t seed);

    int d_raw() const { return static_cast<int>(backbone.value.rows()); }
    int d_model() const { return static_cast<int>(proj_w.value.cols()); }
};

// x_t = p_v(f_v(raw)); the backbone is bias-free so the zero vector maps to
// the projection bias alone (zero at init).
Var visual_encode(Tape& t, VisualEncoderState& enc, const Vec& raw);

// Deterministic frozen text encoder: per-token embeddings seeded by the
// token hash, mean-pooled, then a fixed linear map to d_model. No
// trainable state, so outputs are plain vectors.
struct TextEncoderState {
    std::uint64_t seed = 0;
    int d_embed = 0;
    Parameter fixed_map;  // d_embed x d_model, frozen

    TextEncoderState() = default;
    TextEncoderState(int d_embed, int d_model, std::uint64_t seed);

    int d_model() const { return static_cast<int>(fixed_map.value.cols()); }
    Vec token_embedding(const std::string& token) const;
    Vec encode(const std::string& text) const;
};

std::vector<std::string> tokenize_words(const std::string& text);  // lowercase, whitespace-split

// Argmax-cosine retrieval of one candidate per query. Ties resolve to the
// lowest candidate index; queries with no tokens map to index 0.
std::vector<int> retrieve_nearest(const TextEncoderState& enc,
                                  const std::vector<std::string>& queries,
                                  const std::vector<std::string>& candidates);

inline constexpr const char* kDefaultDescriptionTemplate =
    "To {label}: perform the action carefully.";

struct ExpanderClientConfig {
    std::string host = "127.0.0.1";
    int port = 0;
    std::string path = "/expand";
    int timeout_ms = 2000;
    int retries = 1;
    std::string cache_path;  // append-only {label_hash, description} records
};

// Label -> expanded description. Template mode is pure; external mode
// caches responses so reruns never re-contact the endpoint.
class DescriptionExpander {
public:
    static DescriptionExpander templated(std::string tmpl = kDefaultDescriptionTemplate);
    static DescriptionExpander external(ExpanderClientConfig cfg);

    // Throws ValidationError on empty labels and TransportError when the
    // external endpoint cannot be reached; callers may fall back to
    // template mode on transport failures.
    std::string expand(const std::string& label);

    bool is_external() const { return external_.has_value(); }

private:
    DescriptionExpander() : cache_mutex_(std::make_unique<std::mutex>()) {}

    std::string template_ = kDefaultDescriptionTemplate;
    std::optional<ExpanderClientConfig> external_;
    std::map<std::uint64_t, std::string> cache_;
    std::unique_ptr<std::mutex> cache_mutex_;

    std::string fetch(const std::string& label);
    void load_cache();
    void append_cache(std::uint64_t label_hash, const std::string& description);
};

}  // namespace planllm
