#pragma once

#include <cmath>
#include <functional>
#include <future>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aerovln/action.hpp"
#include "aerovln/error.hpp"
#include "aerovln/landmark.hpp"
#include "aerovln/text.hpp"
#include "aerovln/vlm.hpp"

namespace aerovln {

struct SubTrajectory {
    std::size_t index = 0;
    std::size_t begin = 0;  // first action, inclusive
    std::size_t end = 0;    // one past the last action
    std::vector<Action> action_run;
    std::size_t terminal_pose_index = 0;
    std::string key_image_ref;
    std::optional<int> landmark_hint;
};

struct Instruction {
    std::string text;
    std::vector<std::string> sub_instructions;

    friend bool operator==(const Instruction&, const Instruction&) = default;

    std::vector<std::string> tokens() const { return alnum_tokens(text); }
};

struct InstructionConfig {
    std::size_t image_refs = 3;        // frames sent with each caption request
    double coref_threshold = 0.6;
};

// Raised when the VLM fails for one sub-trajectory.
class SubInstructionError : public Error {
public:
    SubInstructionError(std::size_t index, const std::string& what)
        : Error("sub-trajectory " + std::to_string(index) + ": " + what), index_(index) {}
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

inline std::string default_image_ref(std::size_t pose_index) { return "frame_" + std::to_string(pose_index); }

// ---------------------------------------------------------------------------
// Splitting

/// Groups actions into maximal same-kind runs. A lone turn directly before a
/// forward run joins it, adjacent forward groups coalesce, and the final Stop
/// joins the last group.
inline std::vector<SubTrajectory> split_subtrajectories(const Trajectory& t) {
    const auto& acts = t.actions;
    if (acts.empty() || acts.back().kind != ActionKind::Stop)
        throw ContractViolation("trajectory must end with Stop");
    const std::size_t body = acts.size() - 1;

    struct Run {
        std::size_t begin, end;
        ActionKind kind;
    };
    std::vector<Run> runs;
    for (std::size_t i = 0; i < body; ++i) {
        if (!runs.empty() && runs.back().kind == acts[i].kind)
            runs.back().end = i + 1;
        else
            runs.push_back({i, i + 1, acts[i].kind});
    }
    for (std::size_t r = 0; r + 1 < runs.size(); ++r) {
        auto& run = runs[r];
        if (run.end - run.begin == 1 && acts[run.begin].is_turn() && runs[r + 1].kind == ActionKind::Forward)
            run.kind = ActionKind::Forward;
    }
    std::vector<Run> groups;
    for (const auto& run : runs) {
        if (!groups.empty() && groups.back().kind == ActionKind::Forward && run.kind == ActionKind::Forward)
            groups.back().end = run.end;
        else
            groups.push_back(run);
    }
    if (groups.empty())
        groups.push_back({body, acts.size(), ActionKind::Stop});
    else
        groups.back().end = acts.size();

    std::vector<SubTrajectory> out;
    out.reserve(groups.size());
    for (const auto& g : groups) {
        SubTrajectory st;
        st.index = out.size();
        st.begin = g.begin;
        st.end = g.end;
        st.action_run.assign(acts.begin() + static_cast<std::ptrdiff_t>(g.begin),
                             acts.begin() + static_cast<std::ptrdiff_t>(g.end));
        st.terminal_pose_index = g.end;
        st.key_image_ref = default_image_ref(g.end);
        if (t.target_landmark_id >= 0) st.landmark_hint = t.target_landmark_id;
        out.push_back(std::move(st));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sub-instructions and fusion

struct VerbPhrase {
    std::string verb;
    std::string connector;
};

inline VerbPhrase verb_phrase(const std::vector<Action>& run) {
    if (run.empty() || run.front().kind == ActionKind::Stop) return {"stop", "near"};
    const auto& first = run.front();
    const bool slight = first.is_turn() && run.size() > 1 && run[1].kind == ActionKind::Forward;
    if (slight)
        return {first.kind == ActionKind::TurnLeft ? "slightly turn left and go straight"
                                                   : "slightly turn right and go straight",
                "to"};
    switch (first.kind) {
        case ActionKind::Forward: return {"go straight", "to"};
        case ActionKind::TurnLeft: return {"turn left", "toward"};
        case ActionKind::TurnRight: return {"turn right", "toward"};
        case ActionKind::MoveUp: return {"ascend", "toward"};
        case ActionKind::MoveDown: return {"descend", "toward"};
        case ActionKind::Stop: break;
    }
    return {"stop", "near"};
}

inline nlohmann::json caption_json(const Caption& c) {
    return {{"color", c.color}, {"feature", c.feature}, {"size", c.size}, {"type", c.type}};
}

inline VlmRequest sub_instruction_request(const SubTrajectory& st, const Caption& caption) {
    std::string actions;
    for (const auto& a : st.action_run) actions += (actions.empty() ? "" : " ") + short_name(a);
    const auto vp = verb_phrase(st.action_run);
    VlmRequest req;
    req.task = VlmTask::sub_instruction;
    req.messages.push_back({"system", prompts::kSubInstructionSystem, {}});
    req.messages.push_back({"user",
                            "Actions: " + actions + "\nLandmark: " + caption_json(caption).dump(),
                            {st.key_image_ref}});
    req.mock_context = {{"verb", vp.verb}, {"connector", vp.connector}, {"caption", caption_json(caption)}};
    return req;
}

inline std::string generate_sub_instruction(const SubTrajectory& st, const Caption& caption, VlmClient& vlm) {
    try {
        return std::string(trim(vlm.complete(sub_instruction_request(st, caption))));
    } catch (const SubInstructionError&) {
        throw;
    } catch (const Error& e) {
        throw SubInstructionError(st.index, e.what());
    }
}

inline VlmRequest fusion_request(const std::vector<std::string>& subs) {
    std::string numbered;
    for (std::size_t i = 0; i < subs.size(); ++i) numbered += std::to_string(i + 1) + ". " + subs[i] + "\n";
    VlmRequest req;
    req.task = VlmTask::fusion;
    req.messages.push_back({"system", prompts::kFusionSystem, {}});
    req.messages.push_back({"user", numbered, {}});
    req.mock_context = {{"clauses", subs}};
    return req;
}

inline Instruction fuse_instruction(const std::vector<std::string>& subs, VlmClient& vlm) {
    if (subs.empty()) throw ContractViolation("fuse_instruction needs at least one sub-instruction");
    Instruction inst;
    inst.text = std::string(trim(vlm.complete(fusion_request(subs))));
    inst.sub_instructions = subs;
    return inst;
}

/// Sub-instruction per sub-trajectory, then fusion. Live requests for one
/// trajectory run concurrently; the client bounds how many are in flight.
inline Instruction generate_instruction(const std::vector<SubTrajectory>& subs,
                                        const std::function<Caption(const SubTrajectory&)>& caption_for,
                                        VlmClient& vlm) {
    std::vector<std::string> clauses(subs.size());
    if (vlm.mode() == VlmMode::live && subs.size() > 1) {
        std::vector<std::future<std::string>> pending;
        for (const auto& st : subs)
            pending.push_back(std::async(std::launch::async,
                                         [&, cap = caption_for(st)] { return generate_sub_instruction(st, cap, vlm); }));
        for (std::size_t i = 0; i < pending.size(); ++i) clauses[i] = pending[i].get();
    } else {
        for (std::size_t i = 0; i < subs.size(); ++i) clauses[i] = generate_sub_instruction(subs[i], caption_for(subs[i]), vlm);
    }
    return fuse_instruction(clauses, vlm);
}

// ---------------------------------------------------------------------------
// Coreference refinement

struct PhraseSpan {
    std::size_t begin = 0;  // byte offsets into the instruction text
    std::size_t end = 0;
    std::string text;
};

/// Determiner, up to six modifiers and a landmark head noun, optionally
/// followed by an attached modifier clause running to the next punctuation,
/// "and" or "then".
inline std::vector<PhraseSpan> landmark_phrases(std::string_view s) {
    const auto words = text::split_words(s);
    std::vector<PhraseSpan> out;
    std::size_t k = 0;
    while (k < words.size()) {
        if (!text::is_determiner(words[k].core) || words[k].ends_clause) {
            ++k;
            continue;
        }
        std::optional<std::size_t> head;
        for (std::size_t j = k + 1; j < words.size() && j <= k + 7; ++j) {
            const auto& w = words[j];
            if (!w.has_alnum || text::function_words().count(w.core) || text::verbs().count(w.core)) break;
            if (text::landmark_heads().count(w.core)) {
                head = j;
                break;
            }
            if (w.ends_clause) break;
        }
        if (!head) {
            ++k;
            continue;
        }
        std::size_t last = *head;
        if (!words[last].ends_clause && last + 1 < words.size() &&
            text::attachment_words().count(words[last + 1].core)) {
            for (std::size_t j = last + 1; j < words.size(); ++j) {
                const auto& w = words[j];
                if (!w.has_alnum || w.core == "and" || w.core == "then") break;
                last = j;
                if (w.ends_clause) break;
            }
        }
        const std::size_t b = words[k].begin, e = words[last].end;
        out.push_back({b, e, std::string(s.substr(b, e - b))});
        k = last + 1;
    }
    return out;
}

using Embedder = std::function<std::vector<std::vector<double>>(const std::vector<std::string>&)>;

/// L2-normalised bag-of-words vectors over a vocabulary shared by the batch.
inline std::vector<std::vector<double>> bow_embed(const std::vector<std::string>& phrases) {
    std::map<std::string, std::size_t> vocab;
    std::vector<std::vector<std::string>> tokens;
    for (const auto& p : phrases) {
        tokens.push_back(alnum_tokens(p));
        for (const auto& t : tokens.back()) vocab.emplace(t, 0);
    }
    std::size_t next = 0;
    for (auto& [word, idx] : vocab) idx = next++;
    std::vector<std::vector<double>> out;
    for (const auto& toks : tokens) {
        std::vector<double> v(vocab.size(), 0.0);
        for (const auto& t : toks) v[vocab.at(t)] += 1.0;
        double norm = 0.0;
        for (double x : v) norm += x * x;
        if (norm > 0.0)
            for (double& x : v) x /= std::sqrt(norm);
        out.push_back(std::move(v));
    }
    return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ContractViolation("embedding dimensions differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

struct CorefResult {
    Instruction instruction;
    std::vector<PhraseSpan> phrases;
    std::vector<std::size_t> replaced;  // indices into phrases
};

inline constexpr double kSimilarityEpsilon = 1e-9;

/// Replaces every landmark phrase whose similarity to some earlier phrase
/// reaches the threshold with "it" ("It" at a sentence start).
inline CorefResult refine_coreference_detailed(const Instruction& inst, const Embedder& embed, double threshold) {
    if (!(threshold > 0.0 && threshold <= 1.0)) throw ContractViolation("threshold must lie in (0, 1]");
    CorefResult res{inst, landmark_phrases(inst.text), {}};
    if (res.phrases.size() < 2) return res;
    std::vector<std::string> texts;
    for (const auto& p : res.phrases) texts.push_back(p.text);
    const auto vecs = embed(texts);
    if (vecs.size() != texts.size()) throw ContractViolation("embedder returned the wrong number of vectors");
    for (std::size_t j = 1; j < vecs.size(); ++j) {
        for (std::size_t i = 0; i < j; ++i) {
            if (dot(vecs[i], vecs[j]) >= threshold - kSimilarityEpsilon) {
                res.replaced.push_back(j);
                break;
            }
        }
    }
    const auto& src = inst.text;
    std::string out;
    std::size_t pos = 0;
    for (std::size_t j : res.replaced) {
        const auto& p = res.phrases[j];
        out.append(src, pos, p.begin - pos);
        std::size_t q = p.begin;
        while (q > 0 && std::isspace(static_cast<unsigned char>(src[q - 1]))) --q;
        const bool sentence_start = q == 0 || src[q - 1] == '.' || src[q - 1] == '!' || src[q - 1] == '?';
        out += sentence_start ? "It" : "it";
        pos = p.end;
    }
    out.append(src, pos, std::string::npos);
    res.instruction.text = std::move(out);
    return res;
}

inline Instruction refine_coreference(const Instruction& inst, const Embedder& embed = bow_embed,
                                      double threshold = InstructionConfig{}.coref_threshold) {
    return refine_coreference_detailed(inst, embed, threshold).instruction;
}

inline nlohmann::json instruction_to_json(const Instruction& inst) {
    return {{"text", inst.text}, {"sub_instructions", inst.sub_instructions}};
}

inline Instruction instruction_from_json(const nlohmann::json& j) {
    return {j.at("text").get<std::string>(), j.at("sub_instructions").get<std::vector<std::string>>()};
}

}  // namespace aerovln
