// Regenerates the golden prompt renders under tests/golden/. Run after any
// intentional template change, then review the diff:
//   ./build/tests/gen_goldens

#include <iostream>

#include "sitfaith/prompts.hpp"
#include "sitfaith/util.hpp"
#include "support/test_env.hpp"

using namespace sitfaith;
using namespace sitfaith::prompts;

int main() {
    PromptLibrary library(default_prompt_dir());
    const Bindings bindings = {
        {"question", "Who painted the ceiling of the Sistine Chapel?"},
        {"document", "The ceiling of the Sistine Chapel was painted by Raphael between 1508 "
                     "and 1512, commissioned by Pope Julius II."},
        {"internal_answer", "Michelangelo"},
        {"doc_answer", "Raphael"},
        {"model_answer", "Michelangelo"},
        {"gold_answer", "Michelangelo"},
    };
    for (TemplateName name : all_template_names()) {
        const std::string path =
            testing::golden_path(template_name_string(name) + ".txt");
        util::write_file(path, library.render(name, bindings) + "\n");
        std::cout << "wrote " << path << "\n";
    }
    for (TemplateName name : {TemplateName::CrdpoDocDeceptive, TemplateName::CrdpoDocCorrect}) {
        const std::string path =
            testing::golden_path(template_name_string(name) + ".variant1.txt");
        util::write_file(path, library.render(name, bindings, 1) + "\n");
        std::cout << "wrote " << path << "\n";
    }
    return 0;
}
