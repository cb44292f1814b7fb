#include "sitfaith/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>

#include "sitfaith/util.hpp"

namespace sitfaith::prompts {

namespace fs = std::filesystem;

namespace {

struct NameEntry {
    TemplateName name;
    const char* str;
};

constexpr NameEntry kNames[] = {
    {TemplateName::Dia, "dia"},
    {TemplateName::ImplicitScr, "implicit_scr"},
    {TemplateName::ExplicitScr, "explicit_scr"},
    {TemplateName::InternalEval, "internal_eval"},
    {TemplateName::ContextEval, "context_eval"},
    {TemplateName::FilterContext, "filter_context"},
    {TemplateName::CrdpoDocDeceptive, "crdpo_doc_deceptive"},
    {TemplateName::CrdpoDocCorrect, "crdpo_doc_correct"},
    {TemplateName::ContextFaithfulAnswer, "context_faithful_answer"},
    {TemplateName::ClosedBook, "closed_book"},
    {TemplateName::LlmJudge, "llm_judge"},
};

std::string load_text(const fs::path& path) {
    std::string text = util::read_file(path.string());
    if (!text.empty() && text.back() == '\n') text.pop_back();
    return text;
}

}  // namespace

std::string template_name_string(TemplateName name) {
    for (const NameEntry& e : kNames) {
        if (e.name == name) return e.str;
    }
    throw Error("unknown template enum value");
}

TemplateName template_name_from_string(const std::string& name) {
    for (const NameEntry& e : kNames) {
        if (name == e.str) return e.name;
    }
    throw Error("unknown template: " + name);
}

std::vector<TemplateName> all_template_names() {
    std::vector<TemplateName> out;
    for (const NameEntry& e : kNames) out.push_back(e.name);
    return out;
}

PromptLibrary::PromptLibrary(const std::string& dir) {
    for (const NameEntry& e : kNames) {
        PromptTemplate t;
        t.name = e.name;
        const fs::path base = fs::path(dir) / (std::string(e.str) + ".txt");
        if (!fs::exists(base)) {
            throw Error("missing prompt template file: " + base.string());
        }
        t.body = load_text(base);
        const fs::path alt = fs::path(dir) / (std::string(e.str) + ".alt.txt");
        if (fs::exists(alt)) t.alt_body = load_text(alt);
        const fs::path exdir = fs::path(dir) / (std::string(e.str) + ".exemplars");
        for (int k = 0;; ++k) {
            const fs::path exfile = exdir / (std::to_string(k) + ".txt");
            if (!fs::exists(exfile)) break;
            t.exemplars.push_back(load_text(exfile));
        }
        templates_.emplace(e.name, std::move(t));
    }
    // 3-shot contracts.
    for (TemplateName n : {TemplateName::Dia, TemplateName::ImplicitScr}) {
        if (get(n).exemplars.size() != 3) {
            throw Error("template " + template_name_string(n) + " must have exactly 3 exemplars, found " +
                        std::to_string(get(n).exemplars.size()));
        }
    }
}

const PromptTemplate& PromptLibrary::get(TemplateName name) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) {
        throw Error("unknown template: " + template_name_string(name));
    }
    return it->second;
}

std::string PromptLibrary::render(TemplateName name, const Bindings& bindings,
                                  int exemplar_variant, bool include_exemplars) const {
    const PromptTemplate& t = get(name);
    if (exemplar_variant != 0 && exemplar_variant != 1) {
        throw Error("exemplar_variant must be 0 or 1");
    }
    if (exemplar_variant == 1 && t.alt_body.empty()) {
        throw Error("template " + template_name_string(name) + " has no variant 1");
    }
    const std::string& body = exemplar_variant == 1 ? t.alt_body : t.body;

    std::vector<std::string> exemplars = include_exemplars ? t.exemplars
                                                           : std::vector<std::string>{};
    if (exemplar_variant == 1 && exemplars.size() >= 2) {
        std::swap(exemplars[0], exemplars[1]);
    }
    std::string exemplar_text;
    for (std::size_t i = 0; i < exemplars.size(); ++i) {
        if (i > 0) exemplar_text += "\n\n";
        exemplar_text += exemplars[i];
    }

    std::string out;
    out.reserve(body.size() + exemplar_text.size());
    std::size_t pos = 0;
    while (pos < body.size()) {
        std::size_t open = body.find('{', pos);
        if (open == std::string::npos) {
            out.append(body, pos, std::string::npos);
            break;
        }
        std::size_t close = body.find('}', open);
        if (close == std::string::npos) {
            out.append(body, pos, std::string::npos);
            break;
        }
        const std::string token = body.substr(open + 1, close - open - 1);
        const bool is_ident = !token.empty() &&
            std::all_of(token.begin(), token.end(), [](char c) {
                return std::islower(static_cast<unsigned char>(c)) || c == '_';
            });
        if (!is_ident) {
            out.append(body, pos, close + 1 - pos);
            pos = close + 1;
            continue;
        }
        out.append(body, pos, open - pos);
        if (token == "exemplars") {
            out += exemplar_text;
            if (exemplar_text.empty()) {
                // Zero-shot render: swallow the marker's trailing blank line.
                std::size_t skip = close + 1;
                while (skip < body.size() && body[skip] == '\n' && skip - close <= 2) ++skip;
                pos = skip;
                continue;
            }
        } else {
            auto it = bindings.find(token);
            if (it == bindings.end()) {
                throw Error("unbound placeholder {" + token + "} in template " +
                            template_name_string(name));
            }
            out += it->second;
        }
        pos = close + 1;
    }
    return out;
}

std::vector<backend::Message> PromptLibrary::render_messages(TemplateName name,
                                                             const Bindings& bindings,
                                                             int exemplar_variant) const {
    return {backend::Message{backend::Role::User, render(name, bindings, exemplar_variant)}};
}

std::string default_prompt_dir() {
    if (const char* env = std::getenv("SITFAITH_PROMPTS")) return env;
#ifdef SITFAITH_PROMPT_DIR
    return SITFAITH_PROMPT_DIR;
#else
    return "prompts";
#endif
}

}  // namespace sitfaith::prompts
