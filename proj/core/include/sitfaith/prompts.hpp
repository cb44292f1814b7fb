#pragma once

#include <map>
#include <string>
#include <vector>

#include "sitfaith/backend.hpp"

namespace sitfaith::prompts {

enum class TemplateName {
    Dia,
    ImplicitScr,
    ExplicitScr,
    InternalEval,
    ContextEval,
    FilterContext,
    CrdpoDocDeceptive,
    CrdpoDocCorrect,
    ContextFaithfulAnswer,
    ClosedBook,
    LlmJudge,
};

std::string template_name_string(TemplateName name);
TemplateName template_name_from_string(const std::string& name);
std::vector<TemplateName> all_template_names();

using Bindings = std::map<std::string, std::string>;

/// A template body with its few-shot exemplar blocks. Bodies may contain a
/// line holding only `{exemplars}` where the exemplar blocks are inserted,
/// joined by blank lines. The two preference-sampling templates additionally
/// carry an alternate body (variant 1) with a paraphrased instruction header
/// and swapped exemplar order.
struct PromptTemplate {
    TemplateName name;
    std::string body;
    std::string alt_body;  // empty unless the template supports variant 1
    std::vector<std::string> exemplars;
};

/// Loads templates from a directory laid out as
///   <dir>/<name>.txt
///   <dir>/<name>.alt.txt            (variant-1 bodies, where supported)
///   <dir>/<name>.exemplars/<k>.txt
class PromptLibrary {
public:
    explicit PromptLibrary(const std::string& dir);

    /// Renders `name` with placeholder `bindings`. Substitution is a single
    /// pass: placeholders inside bound values or exemplars are not rescanned.
    /// Throws on unknown templates, unbound placeholders, or an
    /// exemplar_variant other than 0 on templates without an alternate body.
    /// `include_exemplars = false` renders the zero-shot form.
    std::string render(TemplateName name, const Bindings& bindings, int exemplar_variant = 0,
                       bool include_exemplars = true) const;

    /// render() wrapped as a single-user-message chat request body.
    std::vector<backend::Message> render_messages(TemplateName name, const Bindings& bindings,
                                                  int exemplar_variant = 0) const;

    const PromptTemplate& get(TemplateName name) const;

private:
    std::map<TemplateName, PromptTemplate> templates_;
};

/// $SITFAITH_PROMPTS when set, otherwise the directory baked in at build time.
std::string default_prompt_dir();

}  // namespace sitfaith::prompts
