#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "finchat/harness.hpp"
#include "finchat/politeness.hpp"

namespace finchat {

// Entry point behind the `finchat` binary. Routes to the corpus / knowledge /
// train / lm / politeness / metrics / eval / chat subcommands. Exit codes:
// 0 success, 1 runtime failure, 2 usage error or unknown command, 3 missing
// required flag, 4 config-file parse error. Failures print a single
// machine-parsable "error: <category>: <message>" line on `err`.
int dispatch(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
             std::ostream& err);

struct ChatOptions {
    std::string checkpoint_path;
    std::string classifier_path;
    std::string index_path;  // required when setting == Context
    PromptSetting setting = PromptSetting::WC;
    SamplerConfig sampler;
    bool show_facts = true;
    int retrieval_k = 3;
    std::string transcript_path;
    bool use_color = true;
};

// Interactive loop: reads user lines from `in`, keeps multi-turn history
// within the context budget, shows retrieved facts (Context mode) and a
// politeness verdict per reply. Commands: /reset, /facts on|off, /quit.
// The transcript records only dialogue exchanges, never the /commands, so a
// piped session is byte-identical under a fixed seed.
int chat_repl(const ChatOptions& options, std::istream& in, std::ostream& out);

}  // namespace finchat
